use std::io::{BufRead, Write};

use rand::distr::{Distribution, weighted::WeightedIndex};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_function, inject, BugKind, CorpusError, LabeledExample, SizeConfig};

/// Relative weights of the three bug kinds among buggy examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BugMix {
    pub bound: f64,
    pub biop: f64,
    pub varmisuse: f64,
}

impl BugMix {
    pub fn only(kind: BugKind) -> Self {
        let mut mix = BugMix { bound: 0.0, biop: 0.0, varmisuse: 0.0 };
        match kind {
            BugKind::Bound => mix.bound = 1.0,
            BugKind::Biop => mix.biop = 1.0,
            BugKind::VarMisuse => mix.varmisuse = 1.0,
            BugKind::None => {}
        }
        mix
    }

    pub fn uniform() -> Self {
        BugMix { bound: 1.0, biop: 1.0, varmisuse: 1.0 }
    }

    /// Parses `bound`, `biop`, `varmisuse`, `all`, or `bound=2,biop=1,...`.
    pub fn parse(s: &str) -> Result<Self, CorpusError> {
        let s = s.trim();
        match s {
            "all" => return Ok(Self::uniform()),
            "bound" | "biop" | "varmisuse" => return Ok(Self::only(s.parse()?)),
            _ => {}
        }
        let mut mix = BugMix { bound: 0.0, biop: 0.0, varmisuse: 0.0 };
        for part in s.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| CorpusError::InvalidConfig(format!("bad mix entry `{part}`")))?;
            let w: f64 = v
                .trim()
                .parse()
                .map_err(|_| CorpusError::InvalidConfig(format!("bad mix weight `{v}`")))?;
            match k.trim().parse::<BugKind>()? {
                BugKind::Bound => mix.bound = w,
                BugKind::Biop => mix.biop = w,
                BugKind::VarMisuse => mix.varmisuse = w,
                BugKind::None => return Err(CorpusError::InvalidConfig("`none` has no weight".into())),
            }
        }
        mix.validate()?;
        Ok(mix)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let ws = [self.bound, self.biop, self.varmisuse];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(CorpusError::InvalidConfig("bug mix weights must be non-negative with positive sum".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub mix: BugMix,
    pub seed: u64,
    pub size: SizeConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train: 8000,
            valid: 1000,
            test: 1000,
            mix: BugMix::only(BugKind::Bound),
            seed: 7,
            size: SizeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub buggy: usize,
    pub clean: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<LabeledExample>,
    pub valid: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub seed: u64,
}

impl DatasetSplits {
    pub fn counts(split: &[LabeledExample]) -> SplitCounts {
        let buggy = split.iter().filter(|e| e.label == 1).count();
        SplitCounts { buggy, clean: split.len() - buggy }
    }

    pub fn manifest(&self, config: &DatasetConfig) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "config": config,
            "counts": {
                "train": Self::counts(&self.train),
                "valid": Self::counts(&self.valid),
                "test": Self::counts(&self.test),
            }
        })
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

struct Builder<'c> {
    config: &'c DatasetConfig,
    base: u64,
    next_origin: u64,
    kinds: WeightedIndex<f64>,
}

impl Builder<'_> {
    fn next_function(&mut self) -> Result<super::MiniFunction, CorpusError> {
        let seed = self.base ^ self.next_origin;
        self.next_origin += 1;
        generate_function(seed, &self.config.size)
    }

    fn split(&mut self, name: &str, size: usize, stream: u64) -> Result<Vec<LabeledExample>, CorpusError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stream);
        let n_buggy = size / 2;
        let mut out = Vec::with_capacity(size);
        while out.len() < n_buggy {
            let f = self.next_function()?;
            let kind = [BugKind::Bound, BugKind::Biop, BugKind::VarMisuse][self.kinds.sample(&mut rng)];
            let mutation_seed = splitmix64(self.base.wrapping_add(self.next_origin));
            match inject(kind, &f, mutation_seed) {
                Ok(e) => out.push(e),
                Err(CorpusError::NoMutationSite(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        for _ in n_buggy..size {
            let f = self.next_function()?;
            out.push(LabeledExample::clean(&f));
        }
        out.shuffle(&mut rng);
        for (i, e) in out.iter_mut().enumerate() {
            e.id = format!("{name}-{i:06}");
        }
        Ok(out)
    }
}

/// Builds balanced train/valid/test splits. Every example draws a fresh
/// origin function, so origins never repeat within or across splits.
pub fn build_dataset(config: &DatasetConfig) -> Result<DatasetSplits, CorpusError> {
    for (name, n) in [("train", config.train), ("valid", config.valid), ("test", config.test)] {
        if n < 2 {
            return Err(CorpusError::InvalidConfig(format!("{name} split needs at least 2 examples")));
        }
    }
    config.mix.validate()?;
    config.size.validate()?;
    let kinds = WeightedIndex::new([config.mix.bound, config.mix.biop, config.mix.varmisuse])
        .map_err(|e| CorpusError::InvalidConfig(e.to_string()))?;
    let mut b = Builder { config, base: splitmix64(config.seed), next_origin: 0, kinds };
    Ok(DatasetSplits {
        train: b.split("train", config.train, 1)?,
        valid: b.split("valid", config.valid, 2)?,
        test: b.split("test", config.test, 3)?,
        seed: config.seed,
    })
}

pub fn write_jsonl<W: Write>(mut w: W, examples: &[LabeledExample]) -> Result<(), CorpusError> {
    for e in examples {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<LabeledExample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: LabeledExample = serde_json::from_str(&line)
            .map_err(|err| CorpusError::Parse { line: i + 1, message: err.to_string() })?;
        e.check()?;
        out.push(e);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small() -> DatasetConfig {
        DatasetConfig { train: 200, valid: 41, test: 40, mix: BugMix::uniform(), ..DatasetConfig::default() }
    }

    #[test]
    fn splits_are_balanced() {
        let d = build_dataset(&small()).unwrap();
        for split in [&d.train, &d.valid, &d.test] {
            let c = DatasetSplits::counts(split);
            assert!(c.buggy.abs_diff(c.clean) <= 1, "{c:?}");
        }
        assert_eq!(d.valid.len(), 41);
    }

    #[test]
    fn origins_are_disjoint() {
        let d = build_dataset(&small()).unwrap();
        let sets: Vec<HashSet<&str>> = [&d.train, &d.valid, &d.test]
            .iter()
            .map(|s| s.iter().map(|e| e.origin_id.as_str()).collect())
            .collect();
        assert_eq!(sets[0].len(), d.train.len());
        assert!(sets[0].is_disjoint(&sets[1]));
        assert!(sets[0].is_disjoint(&sets[2]));
        assert!(sets[1].is_disjoint(&sets[2]));
    }

    #[test]
    fn jsonl_is_deterministic() {
        let render = || {
            let d = build_dataset(&small()).unwrap();
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &d.train).unwrap();
            buf
        };
        assert_eq!(render(), render());
    }

    #[test]
    fn jsonl_field_order_and_reload() {
        let d = build_dataset(&small()).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &d.test[..3]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        let keys = ["\"id\"", "\"tokens\"", "\"label\"", "\"bug_kind\"", "\"bug_span\"", "\"origin_id\"", "\"lines\""];
        let offsets: Vec<usize> = keys.iter().map(|k| first.find(k).unwrap()).collect();
        assert!(offsets.windows(2).all(|w| w[0] < w[1]));
        assert!(text.ends_with('\n'));
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, d.test[..3].to_vec());
    }

    #[test]
    fn mix_parsing() {
        assert_eq!(BugMix::parse("bound").unwrap(), BugMix::only(BugKind::Bound));
        let m = BugMix::parse("bound=2, biop=1").unwrap();
        assert_eq!((m.bound, m.biop, m.varmisuse), (2.0, 1.0, 0.0));
        assert!(BugMix::parse("bound=-1").is_err());
        assert!(BugMix::parse("oops").is_err());
    }

    #[test]
    fn tiny_splits_rejected() {
        let cfg = DatasetConfig { valid: 1, ..small() };
        assert!(build_dataset(&cfg).is_err());
    }
}
