//! Byte-pair encoding over whole tokens with a token-begin marker.
//!
//! Every source token is prefixed with [`MARKER`] before it is split, and
//! merges never cross token boundaries, so subtoken `j` starts a new source
//! token exactly when its string starts with the marker. Alignment spans are
//! recovered by scanning for those marker-initial subtokens.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MARKER: char = 'Ġ';
pub const DEFAULT_MERGES: usize = 512;

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot train BPE on an empty corpus")]
    EmptyCorpus,
    #[error("cannot encode an empty token list")]
    EmptyInput,
    #[error("special id {0} found in payload")]
    SpecialIdInPayload(u32),
    #[error("id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("malformed vocabulary: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialIds {
    pub cls: u32,
    pub pad: u32,
    pub mask: u32,
    pub unk: u32,
}

impl SpecialIds {
    pub fn contains(&self, id: u32) -> bool {
        id == self.cls || id == self.pad || id == self.mask || id == self.unk
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    merges: Vec<(String, String)>,
    vocab: BTreeMap<String, u32>,
    specials: SpecialIds,
    marker: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpeVocabulary {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    vocab: BTreeMap<String, u32>,
    id_to_str: Vec<String>,
    specials: SpecialIds,
}

/// Subtoken ids for one input, without `[CLS]`, plus the inclusive subtoken
/// span of every source token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtokenEncoding {
    pub ids: Vec<u32>,
    pub spans: Vec<(usize, usize)>,
}

impl SubtokenEncoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.spans.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Sym {
    Known(String),
    Unk,
}

fn is_special_name(s: &str) -> bool {
    [PAD, CLS, MASK, UNK].contains(&s)
}

fn marked(token: &str) -> String {
    let mut s = String::with_capacity(token.len() + 2);
    s.push(MARKER);
    s.push_str(token);
    s
}

fn merge_word(word: &mut Vec<String>, a: &str, b: &str) {
    let mut i = 0;
    while i + 1 < word.len() {
        if word[i] == a && word[i + 1] == b {
            let right = word.remove(i + 1);
            word[i].push_str(&right);
        }
        i += 1;
    }
}

/// Learns up to `merge_count` merges. Pairs are ranked by frequency with
/// ties going to the lexicographically smallest pair.
pub fn train_bpe<S: AsRef<str>>(corpus: &[Vec<S>], merge_count: usize) -> Result<BpeVocabulary, TokenizerError> {
    let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
    for seq in corpus {
        for tok in seq {
            let tok = tok.as_ref();
            if tok.is_empty() {
                continue;
            }
            *word_freq.entry(marked(&tok.replace(MARKER, ""))).or_default() += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let mut alphabet: Vec<char> = word_freq.keys().flat_map(|w| w.chars()).collect();
    alphabet.push(MARKER);
    alphabet.sort_unstable();
    alphabet.dedup();

    let mut words: Vec<(Vec<String>, usize)> = word_freq
        .into_iter()
        .map(|(w, n)| (w.chars().map(String::from).collect(), n))
        .collect();

    let mut merges = Vec::new();
    for _ in 0..merge_count {
        let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (w, n) in &words {
            for pair in w.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += n;
            }
        }
        // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
        let mut best: Option<((&str, &str), usize)> = None;
        for (pair, n) in counts {
            if is_special_name(&format!("{}{}", pair.0, pair.1)) {
                continue;
            }
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((pair, n));
            }
        }
        let Some(((a, b), _)) = best else { break };
        let (a, b) = (a.to_string(), b.to_string());
        for (w, _) in &mut words {
            merge_word(w, &a, &b);
        }
        merges.push((a, b));
    }

    let mut vocab = BTreeMap::new();
    let mut next = 0u32;
    let mut add = |s: String, vocab: &mut BTreeMap<String, u32>| {
        vocab.entry(s).or_insert_with(|| {
            next += 1;
            next - 1
        });
    };
    for s in [PAD, CLS, MASK, UNK] {
        add(s.to_string(), &mut vocab);
    }
    for c in alphabet {
        add(c.to_string(), &mut vocab);
    }
    for (a, b) in &merges {
        add(format!("{a}{b}"), &mut vocab);
    }
    let specials = SpecialIds { pad: vocab[PAD], cls: vocab[CLS], mask: vocab[MASK], unk: vocab[UNK] };
    BpeVocabulary::from_parts(merges, vocab, specials)
}

impl BpeVocabulary {
    fn from_parts(
        merges: Vec<(String, String)>,
        vocab: BTreeMap<String, u32>,
        specials: SpecialIds,
    ) -> Result<Self, TokenizerError> {
        let mut id_to_str = vec![None; vocab.len()];
        for (s, &id) in &vocab {
            let slot = id_to_str
                .get_mut(id as usize)
                .ok_or_else(|| TokenizerError::Malformed(format!("id {id} is not dense")))?;
            if slot.replace(s.clone()).is_some() {
                return Err(TokenizerError::Malformed(format!("id {id} assigned twice")));
            }
        }
        let id_to_str: Vec<String> = id_to_str
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| TokenizerError::Malformed("vocabulary ids are not dense".into()))?;
        let ids = [specials.cls, specials.pad, specials.mask, specials.unk];
        for (i, id) in ids.iter().enumerate() {
            if *id as usize >= id_to_str.len() || ids[..i].contains(id) {
                return Err(TokenizerError::Malformed("special ids must be distinct and in range".into()));
            }
        }
        let ranks = merges.iter().cloned().enumerate().map(|(r, p)| (p, r)).collect();
        Ok(BpeVocabulary { merges, ranks, vocab, id_to_str, specials })
    }

    pub fn len(&self) -> usize {
        self.id_to_str.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_str.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn specials(&self) -> SpecialIds {
        self.specials
    }

    pub fn id(&self, subtoken: &str) -> Option<u32> {
        self.vocab.get(subtoken).copied()
    }

    pub fn subtoken(&self, id: u32) -> Option<&str> {
        self.id_to_str.get(id as usize).map(String::as_str)
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.specials.contains(id)
    }

    /// True when the subtoken opens a new source token.
    pub fn begins_token(&self, id: u32) -> bool {
        !self.is_special(id) && self.subtoken(id).is_some_and(|s| s.starts_with(MARKER))
    }

    fn split_token(&self, token: &str) -> Vec<Sym> {
        let mut syms: Vec<Sym> = std::iter::once(MARKER)
            .chain(token.chars())
            .enumerate()
            .map(|(i, c)| {
                let s = c.to_string();
                if (i > 0 && c == MARKER) || !self.vocab.contains_key(&s) {
                    Sym::Unk
                } else {
                    Sym::Known(s)
                }
            })
            .collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| match (&w[0], &w[1]) {
                    (Sym::Known(a), Sym::Known(b)) => self.ranks.get(&(a.clone(), b.clone())).copied(),
                    _ => None,
                })
                .min();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank];
            let mut i = 0;
            while i + 1 < syms.len() {
                let hit = matches!((&syms[i], &syms[i + 1]), (Sym::Known(x), Sym::Known(y)) if x == a && y == b);
                if hit {
                    syms.remove(i + 1);
                    syms[i] = Sym::Known(format!("{a}{b}"));
                }
                i += 1;
            }
        }
        syms
    }

    /// Subtoken strings for one token, marker included.
    pub fn token_pieces(&self, token: &str) -> Vec<String> {
        self.split_token(token)
            .into_iter()
            .map(|s| match s {
                Sym::Known(s) => s,
                Sym::Unk => UNK.to_string(),
            })
            .collect()
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<SubtokenEncoding, TokenizerError> {
        if tokens.is_empty() {
            return Err(TokenizerError::EmptyInput);
        }
        let mut ids = Vec::new();
        for tok in tokens {
            for sym in self.split_token(tok.as_ref()) {
                ids.push(match sym {
                    Sym::Known(s) => self.vocab[&s],
                    Sym::Unk => self.specials.unk,
                });
            }
        }
        let spans = self.align(&ids);
        debug_assert_eq!(spans.len(), tokens.len());
        Ok(SubtokenEncoding { ids, spans })
    }

    /// Recovers `(a_i, b_i)` token spans by scanning for marker-initial subtokens.
    pub fn align(&self, ids: &[u32]) -> Vec<(usize, usize)> {
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for (j, &id) in ids.iter().enumerate() {
            match spans.last_mut() {
                Some(last) if !self.begins_token(id) => last.1 = j,
                _ => spans.push((j, j)),
            }
        }
        spans
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>, TokenizerError> {
        let mut out: Vec<String> = Vec::new();
        for &id in ids {
            if self.is_special(id) {
                return Err(TokenizerError::SpecialIdInPayload(id));
            }
            let s = self.subtoken(id).ok_or(TokenizerError::UnknownId(id))?;
            match s.strip_prefix(MARKER) {
                Some(rest) => out.push(rest.to_string()),
                None => match out.last_mut() {
                    Some(last) => last.push_str(s),
                    None => out.push(s.to_string()),
                },
            }
        }
        Ok(out)
    }

    fn to_file(&self) -> VocabFile {
        VocabFile {
            merges: self.merges.clone(),
            vocab: self.vocab.clone(),
            specials: self.specials,
            marker: MARKER.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("vocabulary serializes")
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), TokenizerError> {
        w.write_all(self.to_json().as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self, TokenizerError> {
        let file: VocabFile = serde_json::from_reader(r)?;
        if file.marker != MARKER.to_string() {
            return Err(TokenizerError::Malformed(format!("unsupported marker `{}`", file.marker)));
        }
        Self::from_parts(file.merges, file.vocab, file.specials)
    }

    /// SHA-256 of the canonical JSON form; checkpoints carry it to pin
    /// which vocabulary they were trained against.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
