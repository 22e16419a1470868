//! Single-token bug injectors.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BugKind, CorpusError, LabeledExample, MiniFunction};

fn buggy_example(f: &MiniFunction, kind: BugKind, position: usize, replacement: String) -> LabeledExample {
    let mut tokens = f.tokens.clone();
    tokens[position] = replacement;
    LabeledExample {
        id: format!("{}-{}", f.id, kind.as_str()),
        tokens,
        label: 1,
        bug_kind: kind,
        bug_span: Some((position, position)),
        origin_id: f.id.clone(),
        lines: f.line_map.clone(),
    }
}

/// Toggles the equality part of one ordered comparison (`<` <-> `<=`, `>` <-> `>=`).
pub fn inject_bound_error(f: &MiniFunction, seed: u64) -> Result<LabeledExample, CorpusError> {
    let sites: Vec<usize> = f.ordered_cmp_positions().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let &pos = sites.choose(&mut rng).ok_or(CorpusError::NoMutationSite(BugKind::Bound))?;
    let toggled = match f.tokens[pos].as_str() {
        "<" => "<=",
        "<=" => "<",
        ">" => ">=",
        ">=" => ">",
        other => unreachable!("ordered comparison site holds {other}"),
    };
    Ok(buggy_example(f, BugKind::Bound, pos, toggled.to_string()))
}

/// Swaps one arithmetic operator for its type-compatible partner (`+` <-> `-`, `*` <-> `/`).
pub fn inject_biop_misuse(f: &MiniFunction, seed: u64) -> Result<LabeledExample, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let &pos = f
        .arith_positions
        .choose(&mut rng)
        .ok_or(CorpusError::NoMutationSite(BugKind::Biop))?;
    let swapped = match f.tokens[pos].as_str() {
        "+" => "-",
        "-" => "+",
        "*" => "/",
        "/" => "*",
        other => unreachable!("arithmetic site holds {other}"),
    };
    Ok(buggy_example(f, BugKind::Biop, pos, swapped.to_string()))
}

/// Replaces one variable use with a different variable visible at that point.
pub fn inject_var_misuse(f: &MiniFunction, seed: u64) -> Result<LabeledExample, CorpusError> {
    let sites: Vec<_> = f.var_uses.iter().filter(|u| u.in_scope.len() >= 2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let site = sites
        .choose(&mut rng)
        .ok_or(CorpusError::NoMutationSite(BugKind::VarMisuse))?;
    let current = &f.tokens[site.position];
    let others: Vec<&String> = site.in_scope.iter().filter(|v| *v != current).collect();
    let replacement = others
        .choose(&mut rng)
        .ok_or(CorpusError::NoMutationSite(BugKind::VarMisuse))?;
    Ok(buggy_example(f, BugKind::VarMisuse, site.position, replacement.to_string()))
}

pub fn inject(kind: BugKind, f: &MiniFunction, seed: u64) -> Result<LabeledExample, CorpusError> {
    match kind {
        BugKind::Bound => inject_bound_error(f, seed),
        BugKind::Biop => inject_biop_misuse(f, seed),
        BugKind::VarMisuse => inject_var_misuse(f, seed),
        BugKind::None => Err(CorpusError::InvalidConfig("cannot inject bug kind `none`".into())),
    }
}
