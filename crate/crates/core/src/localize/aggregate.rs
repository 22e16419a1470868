use serde::{Deserialize, Serialize};

use super::LocalizeError;

/// Mean of every head's `[CLS]` payload row.
pub fn agg_head_average(rows: &[Vec<f64>]) -> Vec<f64> {
    let all: Vec<usize> = (0..rows.len()).collect();
    mean_rows(rows, &all)
}

/// Mean over the selected heads' `[CLS]` rows. Duplicate ids count once;
/// the result is not renormalized.
pub fn agg_head_subset(rows: &[Vec<f64>], head_ids: &[usize]) -> Result<Vec<f64>, LocalizeError> {
    let mut ids = head_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.is_empty() {
        return Err(LocalizeError::EmptyHeadSet);
    }
    if let Some(&bad) = ids.iter().find(|&&h| h >= rows.len()) {
        return Err(LocalizeError::HeadOutOfRange { head: bad, heads: rows.len() });
    }
    Ok(mean_rows(rows, &ids))
}

fn mean_rows(rows: &[Vec<f64>], ids: &[usize]) -> Vec<f64> {
    let width = rows.first().map_or(0, Vec::len);
    let mut out = vec![0.0; width];
    for &h in ids {
        for (o, a) in out.iter_mut().zip(&rows[h]) {
            *o += a;
        }
    }
    let n = ids.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// `v_i = sum of alpha[a_i..=b_i]`. The spans must tile `alpha` in order.
pub fn agg_subtoken(alpha: &[f64], spans: &[(usize, usize)]) -> Result<Vec<f64>, LocalizeError> {
    let mut next = 0;
    let mut v = Vec::with_capacity(spans.len());
    for &(a, b) in spans {
        if a != next || b < a || b >= alpha.len() {
            return Err(LocalizeError::Alignment(format!(
                "span ({a}, {b}) does not continue a tiling of {} subtokens",
                alpha.len()
            )));
        }
        v.push(alpha[a..=b].iter().sum());
        next = b + 1;
    }
    if next != alpha.len() {
        return Err(LocalizeError::Alignment(format!("spans cover {next} of {} subtokens", alpha.len())));
    }
    Ok(v)
}

/// A token window `[start, start + len)` and its summed importance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub len: usize,
    pub score: f64,
}

impl Window {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    /// Whether the inclusive token span lies entirely inside the window.
    pub fn contains(&self, span: (usize, usize)) -> bool {
        self.start <= span.0 && span.1 < self.end()
    }

    fn overlaps(&self, other: &Window) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

fn window_sums(v: &[f64], n: usize) -> Result<Vec<f64>, LocalizeError> {
    if n == 0 {
        return Err(LocalizeError::ZeroWindow);
    }
    if n > v.len() {
        return Err(LocalizeError::WindowTooLarge { window: n, len: v.len() });
    }
    Ok(v.windows(n).map(|w| w.iter().sum()).collect())
}

/// Start of the window of `n` tokens with the largest sum, lowest start on ties.
pub fn locate(v: &[f64], n: usize) -> Result<usize, LocalizeError> {
    let sums = window_sums(v, n)?;
    let mut best = 0;
    for (k, &s) in sums.iter().enumerate() {
        if s > sums[best] {
            best = k;
        }
    }
    Ok(best)
}

/// Up to `k` windows by descending score (lower start on ties), greedily
/// skipping any window that overlaps one already chosen.
pub fn top_k_windows(v: &[f64], n: usize, k: usize) -> Result<Vec<Window>, LocalizeError> {
    if k == 0 {
        return Err(LocalizeError::InvalidK);
    }
    let sums = window_sums(v, n)?;
    let mut order: Vec<usize> = (0..sums.len()).collect();
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));
    let mut chosen: Vec<Window> = Vec::new();
    for start in order {
        let w = Window { start, len: n, score: sums[start] };
        if chosen.iter().all(|c| !c.overlaps(&w)) {
            chosen.push(w);
            if chosen.len() == k {
                break;
            }
        }
    }
    Ok(chosen)
}

/// `score(line) = sum of v_i` over tokens on that line; one entry per line
/// up to the largest line index.
pub fn line_scores(v: &[f64], line_map: &[usize]) -> Result<Vec<f64>, LocalizeError> {
    if v.len() != line_map.len() {
        return Err(LocalizeError::Alignment(format!(
            "{} token scores but {} line entries",
            v.len(),
            line_map.len()
        )));
    }
    let lines = line_map.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![0.0; lines];
    for (&s, &l) in v.iter().zip(line_map) {
        out[l] += s;
    }
    Ok(out)
}

/// Line indices by descending score, earlier line on ties.
pub fn rank_lines(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_average_examples() {
        assert_eq!(agg_head_average(&[vec![0.3, 0.7]]), vec![0.3, 0.7]);
        let avg = agg_head_average(&[vec![0.2, 0.8], vec![0.6, 0.4]]);
        assert!((avg[0] - 0.4).abs() < 1e-15 && (avg[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn head_subset_examples() {
        let rows = vec![vec![0.2, 0.8], vec![0.6, 0.4], vec![0.9, 0.1]];
        let s = agg_head_subset(&rows, &[0, 1]).unwrap();
        assert!((s[0] - 0.4).abs() < 1e-15 && (s[1] - 0.6).abs() < 1e-15);
        assert_eq!(agg_head_subset(&rows, &[2]).unwrap(), rows[2]);
        assert_eq!(agg_head_subset(&rows, &[0, 1, 2]).unwrap(), agg_head_average(&rows));
        assert!(matches!(agg_head_subset(&rows, &[]), Err(LocalizeError::EmptyHeadSet)));
        assert!(matches!(agg_head_subset(&rows, &[3]), Err(LocalizeError::HeadOutOfRange { head: 3, heads: 3 })));
    }

    #[test]
    fn subtoken_sums() {
        let v = agg_subtoken(&[0.2, 0.3, 0.5], &[(0, 0), (1, 2)]).unwrap();
        assert!((v[0] - 0.2).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(agg_subtoken(&[0.5, 0.5], &[(0, 0), (1, 1)]).unwrap(), vec![0.5, 0.5]);
        assert!(agg_subtoken(&[0.5, 0.5], &[(0, 0)]).is_err());
        assert!(agg_subtoken(&[0.5, 0.5], &[(1, 1)]).is_err());
    }

    #[test]
    fn locate_examples() {
        let v = [0.1, 0.5, 0.2, 0.2];
        assert_eq!(locate(&v, 1).unwrap(), 1);
        assert_eq!(locate(&v, 2).unwrap(), 1);
        assert_eq!(locate(&[0.25; 4], 2).unwrap(), 0);
        assert!(matches!(locate(&v, 5), Err(LocalizeError::WindowTooLarge { window: 5, len: 4 })));
    }

    #[test]
    fn top_k_examples() {
        let starts = |w: Vec<Window>| w.iter().map(|w| w.start).collect::<Vec<_>>();
        assert_eq!(starts(top_k_windows(&[0.4, 0.1, 0.5], 1, 2).unwrap()), vec![2, 0]);
        let v = [0.1, 0.5, 0.2, 0.2];
        assert_eq!(starts(top_k_windows(&v, 2, 1).unwrap()), vec![locate(&v, 2).unwrap()]);
        // windows at 1 (0.7) then 3 is out of range; 0 and 2 overlap window 1
        assert_eq!(starts(top_k_windows(&v, 2, 3).unwrap()), vec![1]);
    }

    #[test]
    fn line_score_examples() {
        let s = line_scores(&[0.1, 0.2, 0.7], &[0, 0, 1]).unwrap();
        assert!((s[0] - 0.3).abs() < 1e-15 && (s[1] - 0.7).abs() < 1e-15);
        assert_eq!(rank_lines(&s), vec![1, 0]);
        assert_eq!(rank_lines(&[0.5, 0.5]), vec![0, 1]);
    }

    #[test]
    fn containment() {
        let w = Window { start: 2, len: 2, score: 0.0 };
        assert!(w.contains((2, 2)) && w.contains((3, 3)) && w.contains((2, 3)));
        assert!(!w.contains((1, 2)) && !w.contains((4, 4)));
    }
}
