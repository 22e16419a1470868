//! Independent reference implementations used as oracles.
#![allow(dead_code)]

use weakloc::localize::Window;

/// Column means computed head by head, one coordinate at a time.
pub fn head_mean(rows: &[Vec<f64>], heads: &[usize]) -> Vec<f64> {
    let mut ids: Vec<usize> = heads.to_vec();
    ids.sort_unstable();
    ids.dedup();
    (0..rows[0].len())
        .map(|j| {
            let mut s = 0.0;
            for &h in &ids {
                s += rows[h][j];
            }
            s / ids.len() as f64
        })
        .collect()
}

/// Each subtoken looks up its owning token by scanning all spans.
pub fn subtoken_sum(alpha: &[f64], spans: &[(usize, usize)]) -> Vec<f64> {
    let mut v = vec![0.0; spans.len()];
    for (j, &a) in alpha.iter().enumerate() {
        let owner = spans.iter().position(|&(s, e)| s <= j && j <= e).expect("tiling");
        v[owner] += a;
    }
    v
}

fn window_score(v: &[f64], start: usize, n: usize) -> f64 {
    let mut s = 0.0;
    for x in &v[start..start + n] {
        s += x;
    }
    s
}

pub fn brute_locate(v: &[f64], n: usize) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for start in 0..=v.len() - n {
        let s = window_score(v, start, n);
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((start, s)),
        }
    }
    best.unwrap().0
}

/// Repeatedly takes the best window disjoint from every earlier pick.
pub fn brute_top_k(v: &[f64], n: usize, k: usize) -> Vec<Window> {
    let mut out: Vec<Window> = Vec::new();
    while out.len() < k {
        let mut best: Option<Window> = None;
        for start in 0..=v.len() - n {
            if out.iter().any(|w| start < w.start + w.len && w.start < start + n) {
                continue;
            }
            let s = window_score(v, start, n);
            if best.is_none_or(|b| s > b.score) {
                best = Some(Window { start, len: n, score: s });
            }
        }
        match best {
            Some(w) => out.push(w),
            None => break,
        }
    }
    out
}

/// A random partition of `m` subtokens into consecutive non-empty spans.
pub fn random_tiling(m: usize, cuts: &[bool]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for j in 1..m {
        if cuts[j % cuts.len()] {
            spans.push((start, j - 1));
            start = j;
        }
    }
    spans.push((start, m - 1));
    spans
}
