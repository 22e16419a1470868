mod common;

use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weakloc::corpus::{generate_function, inject, BugKind, CorpusError, LabeledExample, SizeConfig};
use weakloc::eval::random_baseline;
use weakloc::localize::{
    agg_head_average, agg_head_subset, agg_subtoken, localize_encoding, locate, top_k_windows, AttentionDetector, Attended,
    LocalizeError, LocalizeOptions,
};
use weakloc::model::{forward, ModelConfig, Parameters};
use weakloc::tokenizer::{train_bpe, BpeVocabulary, SubtokenEncoding};

use common::*;

fn vocab() -> &'static BpeVocabulary {
    static V: OnceLock<BpeVocabulary> = OnceLock::new();
    V.get_or_init(|| {
        let corpus: Vec<Vec<String>> = (0..300).map(|s| generate_function(s, &SizeConfig::default()).unwrap().tokens).collect();
        train_bpe(&corpus, 200).unwrap()
    })
}

fn stochastic_rows(heads: usize, width: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..heads)
        .map(|_| {
            let raw: Vec<f64> = (0..width).map(|_| rng.random::<f64>() + 1e-3).collect();
            let t: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / t).collect()
        })
        .collect()
}

fn scores() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (1usize..40).prop_flat_map(|len| (prop::collection::vec(0.0f64..1.0, len), 1..=len.min(4)))
}

/// Small integers make exact ties common.
fn tied_scores() -> impl Strategy<Value = (Vec<f64>, usize)> {
    (1usize..30).prop_flat_map(|len| (prop::collection::vec((0u8..4).prop_map(f64::from), len), 1..=len.min(3)))
}

proptest! {
    #[test]
    fn locate_matches_exhaustive_search((v, n) in scores()) {
        prop_assert_eq!(locate(&v, n).unwrap(), brute_locate(&v, n));
    }

    #[test]
    fn locate_breaks_ties_like_exhaustive_search((v, n) in tied_scores()) {
        prop_assert_eq!(locate(&v, n).unwrap(), brute_locate(&v, n));
    }

    #[test]
    fn top_k_matches_exhaustive_ranking((v, n) in scores(), k in 1usize..8) {
        let fast = top_k_windows(&v, n, k).unwrap();
        let slow = brute_top_k(&v, n, k);
        prop_assert_eq!(fast.len(), slow.len());
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert_eq!(a.start, b.start);
            prop_assert!((a.score - b.score).abs() < 1e-12);
        }
    }

    #[test]
    fn top_k_with_ties_matches_exhaustive_ranking((v, n) in tied_scores(), k in 1usize..8) {
        let starts = |w: Vec<weakloc::localize::Window>| w.into_iter().map(|w| w.start).collect::<Vec<_>>();
        prop_assert_eq!(starts(top_k_windows(&v, n, k).unwrap()), starts(brute_top_k(&v, n, k)));
    }

    #[test]
    fn positive_scaling_changes_no_window((v, n) in scores(), c in 1e-3f64..1e3, k in 1usize..6) {
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        prop_assert_eq!(locate(&v, n).unwrap(), locate(&scaled, n).unwrap());
        let a: Vec<usize> = top_k_windows(&v, n, k).unwrap().iter().map(|w| w.start).collect();
        let b: Vec<usize> = top_k_windows(&scaled, n, k).unwrap().iter().map(|w| w.start).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn ranked_windows_extend_as_k_grows((v, n) in scores(), span_at in 0usize..40) {
        let all = top_k_windows(&v, n, usize::MAX).unwrap();
        let span = (span_at % v.len(), span_at % v.len());
        let mut hit = false;
        for k in 1..=all.len() {
            let prefix = top_k_windows(&v, n, k).unwrap();
            prop_assert_eq!(&prefix[..], &all[..k]);
            let now = prefix.iter().any(|w| w.contains(span));
            prop_assert!(now || !hit);
            hit = now;
        }
    }

    #[test]
    fn aggregation_conserves_mass(heads in 1usize..6, m in 1usize..30, seed in any::<u64>(), cuts in prop::collection::vec(any::<bool>(), 1..8)) {
        let rows = stochastic_rows(heads, m, seed);
        let spans = random_tiling(m, &cuts);
        let avg = agg_head_average(&rows);
        prop_assert!((avg.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let v = agg_subtoken(&avg, &spans).unwrap();
        prop_assert!((v.iter().sum::<f64>() - avg.iter().sum::<f64>()).abs() < 1e-12);
        for (x, y) in v.iter().zip(subtoken_sum(&avg, &spans)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn subset_of_all_heads_is_the_average(heads in 1usize..6, m in 1usize..20, seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let rows = stochastic_rows(heads, m, seed);
        let all: Vec<usize> = (0..heads).collect();
        prop_assert_eq!(agg_head_subset(&rows, &all).unwrap(), agg_head_average(&rows));
        let i = pick.index(heads);
        prop_assert_eq!(agg_head_subset(&rows, &[i]).unwrap(), rows[i].clone());
        for (x, y) in agg_head_subset(&rows, &[i, 0, i]).unwrap().iter().zip(head_mean(&rows, &[i, 0])) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn clean_verdicts_never_carry_windows(p1 in 0.0f64..1.0, m in 1usize..20, seed in any::<u64>(), n in 1usize..4) {
        let d = Fixed { p1, rows: stochastic_rows(2, m, seed) };
        let enc = SubtokenEncoding { ids: vec![4; m], spans: (0..m).map(|i| (i, i)).collect() };
        let opts = LocalizeOptions { window: n.min(m), ..LocalizeOptions::default() };
        let r = localize_encoding(&d, &enc, None, &opts).unwrap();
        prop_assert_eq!(r.is_buggy(), p1 >= 0.5);
        if !r.is_buggy() {
            prop_assert!(r.window.is_none() && r.topk.is_empty());
        }
    }

    #[test]
    fn tokenizer_round_trips_generated_code(seed in any::<u64>()) {
        let f = generate_function(seed, &SizeConfig::default()).unwrap();
        let v = vocab();
        let enc = v.encode(&f.tokens).unwrap();
        prop_assert_eq!(v.decode(&enc.ids).unwrap(), f.tokens.clone());
        prop_assert_eq!(enc.spans.len(), f.tokens.len());
        let mut next = 0;
        for &(a, b) in &enc.spans {
            prop_assert_eq!(a, next);
            prop_assert!(b >= a);
            next = b + 1;
        }
        prop_assert_eq!(next, enc.ids.len());
        for (j, &id) in enc.ids.iter().enumerate() {
            prop_assert_eq!(v.begins_token(id), enc.spans.iter().any(|s| s.0 == j));
        }
    }

    #[test]
    fn mutations_touch_only_the_span(seed in any::<u64>(), which in 0usize..3) {
        let kind = [BugKind::Bound, BugKind::Biop, BugKind::VarMisuse][which];
        let f = generate_function(seed, &SizeConfig::default()).unwrap();
        match inject(kind, &f, seed.rotate_left(17)) {
            Ok(e) => {
                let (s, t) = e.bug_span.unwrap();
                prop_assert_eq!(s, t);
                prop_assert_eq!(e.label, 1);
                prop_assert_eq!(e.bug_kind, kind);
                prop_assert_eq!(e.tokens.len(), f.tokens.len());
                let diff: Vec<usize> = (0..f.tokens.len()).filter(|&i| e.tokens[i] != f.tokens[i]).collect();
                prop_assert_eq!(diff, vec![s]);
                prop_assert!(e.check().is_ok());
            }
            Err(CorpusError::NoMutationSite(k)) => prop_assert!(kind != BugKind::Bound && k == kind),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn probabilities_are_normalized(seed in any::<u64>(), len in 1usize..12) {
        let cfg = ModelConfig { layers: 2, heads: 2, dim: 8, ff_dim: 8, max_len: 16, vocab_size: 20, dropout: 0.0, cls_id: 1 };
        let params = Parameters::init(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<u32> = (0..len).map(|_| rng.random_range(2..20)).collect();
        let enc = SubtokenEncoding { spans: (0..len).map(|i| (i, i)).collect(), ids };
        let t = forward(&params, &enc).unwrap();
        prop_assert!((t.p[0] + t.p[1] - 1.0).abs() < 1e-12);
        for h in &t.attention.heads {
            for row in h.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-9);
            }
        }
    }
}

struct Fixed {
    p1: f64,
    rows: Vec<Vec<f64>>,
}

impl AttentionDetector for Fixed {
    fn head_count(&self) -> usize {
        self.rows.len()
    }

    fn attend(&self, _: &SubtokenEncoding) -> Result<Attended, LocalizeError> {
        Ok(Attended { p: [1.0 - self.p1, self.p1], rows: self.rows.clone() })
    }
}

#[test]
fn random_baseline_agrees_with_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let examples: Vec<LabeledExample> = (0..40)
        .map(|i| {
            let len = rng.random_range(3..30);
            let at = rng.random_range(0..len);
            LabeledExample {
                id: format!("e{i}"),
                tokens: vec!["x".into(); len],
                label: 1,
                bug_kind: BugKind::Bound,
                bug_span: Some((at, at)),
                origin_id: format!("o{i}"),
                lines: vec![0; len],
            }
        })
        .collect();
    for n in [1, 2, 3] {
        let exact = random_baseline(&examples, n);
        let draws = 100_000;
        let mut hits = 0u32;
        for _ in 0..draws {
            let e = &examples[rng.random_range(0..examples.len())];
            let (a, b) = e.bug_span.unwrap();
            let start = rng.random_range(0..=e.tokens.len() - n);
            hits += u32::from(start <= a && b < start + n);
        }
        let p = f64::from(hits) / f64::from(draws);
        let sigma = (exact * (1.0 - exact) / f64::from(draws)).sqrt();
        assert!((p - exact).abs() <= 3.0 * sigma, "n={n}: simulated {p}, closed form {exact}");
    }
}
