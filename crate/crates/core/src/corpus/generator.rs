//! Deterministic generator for the procedural mini-language.
//!
//! Grammar:
//!
//! ```text
//! fn id ( id , ... ) { stmt* return expr ; }
//! stmt := let id = expr ; | if ( expr cmp expr ) { stmt* }
//! expr := term ( (+|-|*|/) term )*
//! term := id | int-literal
//! ```
//!
//! Identifiers come from a fixed pool of 24 names split into four roles.
//! Ordered comparisons follow role conventions (an index is compared
//! strictly against a bound, a value against a bound with `<=`, and so on),
//! which is what makes an off-by-one toggle detectable from context alone.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;

pub const INDEX_NAMES: [&str; 6] = ["index", "cursor", "offset", "position", "step", "pointer"];
pub const BOUND_NAMES: [&str; 6] = ["length", "limit", "size", "capacity", "count", "bound"];
pub const VALUE_NAMES: [&str; 6] = ["total", "amount", "score", "weight", "balance", "value"];
pub const MISC_NAMES: [&str; 6] = ["result", "buffer", "factor", "delta", "accum", "temp"];

pub const ORDERED_CMP: [&str; 4] = ["<", "<=", ">", ">="];
pub const EQUALITY_CMP: [&str; 2] = ["==", "!="];
pub const ARITH_OPS: [&str; 4] = ["+", "-", "*", "/"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Index,
    Bound,
    Value,
    Misc,
}

impl Role {
    fn names(self) -> &'static [&'static str; 6] {
        match self {
            Role::Index => &INDEX_NAMES,
            Role::Bound => &BOUND_NAMES,
            Role::Value => &VALUE_NAMES,
            Role::Misc => &MISC_NAMES,
        }
    }

    fn of(name: &str) -> Option<Role> {
        [Role::Index, Role::Bound, Role::Value, Role::Misc]
            .into_iter()
            .find(|r| r.names().contains(&name))
    }
}

/// All 24 identifiers, in pool order.
pub fn identifier_pool() -> impl Iterator<Item = &'static str> {
    INDEX_NAMES
        .iter()
        .chain(&BOUND_NAMES)
        .chain(&VALUE_NAMES)
        .chain(&MISC_NAMES)
        .copied()
}

pub fn is_identifier(token: &str) -> bool {
    Role::of(token).is_some()
}

/// Size knobs for [`generate_function`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeConfig {
    pub min_params: usize,
    pub max_params: usize,
    pub min_statements: usize,
    pub max_statements: usize,
    pub max_depth: usize,
    pub max_len: usize,
}

impl Default for SizeConfig {
    fn default() -> Self {
        Self {
            min_params: 2,
            max_params: 4,
            min_statements: 3,
            max_statements: 6,
            max_depth: 2,
            max_len: 128,
        }
    }
}

impl SizeConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: &str| Err(CorpusError::InvalidConfig(msg.to_string()));
        if self.min_params < 2 {
            return bad("min_params must be at least 2");
        }
        if self.min_params > self.max_params {
            return bad("empty parameter range");
        }
        // index, bound and the function name all come from disjoint slots
        if self.max_params > 12 {
            return bad("max_params must be at most 12");
        }
        if self.min_statements < 1 || self.min_statements > self.max_statements {
            return bad("empty statement range");
        }
        if self.max_len < 48 {
            return bad("max_len must be at least 48");
        }
        Ok(())
    }
}

/// A variable use site with the variables visible there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarUse {
    pub position: usize,
    pub in_scope: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiniFunction {
    pub id: String,
    pub tokens: Vec<String>,
    pub var_defs: Vec<usize>,
    pub var_uses: Vec<VarUse>,
    pub cmp_positions: Vec<usize>,
    pub arith_positions: Vec<usize>,
    pub line_map: Vec<usize>,
}

impl MiniFunction {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Comparison positions that are off-by-one mutation targets.
    pub fn ordered_cmp_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.cmp_positions
            .iter()
            .copied()
            .filter(|&p| ORDERED_CMP.contains(&self.tokens[p].as_str()))
    }
}

struct Emitter<'r> {
    rng: &'r mut ChaCha8Rng,
    func: MiniFunction,
    line: usize,
    taken: Vec<&'static str>,
}

impl Emitter<'_> {
    fn push(&mut self, tok: impl Into<String>) -> usize {
        self.func.tokens.push(tok.into());
        self.func.line_map.push(self.line);
        self.func.tokens.len() - 1
    }

    fn newline(&mut self) {
        self.line += 1;
    }

    fn use_var(&mut self, name: &str, scope: &[&'static str]) {
        let position = self.push(name);
        self.func.var_uses.push(VarUse {
            position,
            in_scope: scope.iter().map(|s| s.to_string()).collect(),
        });
    }

    fn literal(&mut self) -> String {
        self.rng.random_range(0..1000u32).to_string()
    }

    fn term(&mut self, scope: &[&'static str]) {
        if self.rng.random_bool(0.3) {
            let lit = self.literal();
            self.push(lit);
        } else {
            let name = *scope.choose(self.rng).expect("scope is never empty");
            self.use_var(name, scope);
        }
    }

    fn expr(&mut self, scope: &[&'static str], min_ops: usize) {
        let ops = self.rng.random_range(min_ops..=2.max(min_ops));
        self.term(scope);
        for _ in 0..ops {
            let op = *ARITH_OPS.choose(self.rng).unwrap();
            let p = self.push(op);
            self.func.arith_positions.push(p);
            self.term(scope);
        }
    }

    fn pick_role(&mut self, scope: &[&'static str], role: Role) -> Option<&'static str> {
        let candidates: Vec<&'static str> = scope
            .iter()
            .copied()
            .filter(|n| Role::of(n) == Some(role))
            .collect();
        candidates.choose(self.rng).copied()
    }


    /// Emits `lhs cmp rhs`. `force_ordered` requests one of the four role
    /// conventions; it always succeeds because an index and a bound are
    /// among the parameters.
    fn condition(&mut self, scope: &[&'static str], force_ordered: bool) {
        let ordered = force_ordered || self.rng.random_bool(0.75);
        if ordered {
            let idx = self.pick_role(scope, Role::Index);
            let bound = self.pick_role(scope, Role::Bound);
            let val = self.pick_role(scope, Role::Value);
            let mut options: Vec<u8> = Vec::new();
            if idx.is_some() && bound.is_some() {
                options.push(0);
            }
            if idx.is_some() {
                options.push(1);
            }
            if val.is_some() {
                options.push(2);
            }
            if val.is_some() && bound.is_some() {
                options.push(3);
            }
            if let Some(&which) = options.choose(self.rng) {
                let (lhs, op, rhs) = match which {
                    0 => (idx.unwrap(), "<", bound.unwrap().to_string()),
                    1 => (idx.unwrap(), ">=", "0".to_string()),
                    2 => (val.unwrap(), ">", self.rng.random_range(1..100u32).to_string()),
                    _ => (val.unwrap(), "<=", bound.unwrap().to_string()),
                };
                self.use_var(lhs, scope);
                let p = self.push(op);
                self.func.cmp_positions.push(p);
                if is_identifier(&rhs) {
                    self.use_var(&rhs, scope);
                } else {
                    self.push(rhs);
                }
                return;
            }
        }
        let lhs = *scope.choose(self.rng).unwrap();
        self.use_var(lhs, scope);
        let op = *EQUALITY_CMP.choose(self.rng).unwrap();
        let p = self.push(op);
        self.func.cmp_positions.push(p);
        if self.rng.random_bool(0.5) {
            let lit = self.literal();
            self.push(lit);
        } else {
            let rhs = *scope.choose(self.rng).unwrap();
            self.use_var(rhs, scope);
        }
    }

    fn fresh_name(&mut self) -> Option<&'static str> {
        let free: Vec<&'static str> = identifier_pool()
            .filter(|n| !self.taken.contains(n))
            .collect();
        let name = free.choose(self.rng).copied()?;
        self.taken.push(name);
        Some(name)
    }

    fn statements(&mut self, scope: &mut Vec<&'static str>, count: usize, depth: usize, cfg: &SizeConfig, force_if: bool) {
        for i in 0..count {
            let want_if = (force_if && i == 0) || (depth < cfg.max_depth && self.rng.random_bool(0.4));
            if want_if {
                self.push("if");
                self.push("(");
                self.condition(scope, force_if && i == 0);
                self.push(")");
                self.push("{");
                self.newline();
                let inner = self.rng.random_range(1..=2);
                let mark = scope.len();
                self.statements(scope, inner, depth + 1, cfg, false);
                scope.truncate(mark);
                self.push("}");
                self.newline();
            } else {
                let Some(name) = self.fresh_name() else {
                    continue;
                };
                self.push("let");
                let p = self.push(name);
                self.func.var_defs.push(p);
                self.push("=");
                self.expr(scope, 0);
                self.push(";");
                self.newline();
                scope.push(name);
            }
        }
    }
}

fn try_generate(rng: &mut ChaCha8Rng, cfg: &SizeConfig, id: &str) -> MiniFunction {
    let mut em = Emitter {
        rng,
        func: MiniFunction {
            id: id.to_string(),
            tokens: Vec::new(),
            var_defs: Vec::new(),
            var_uses: Vec::new(),
            cmp_positions: Vec::new(),
            arith_positions: Vec::new(),
            line_map: Vec::new(),
        },
        line: 0,
        taken: Vec::new(),
    };

    let fn_name = *MISC_NAMES.choose(em.rng).unwrap();
    em.taken.push(fn_name);

    let n_params = em.rng.random_range(cfg.min_params..=cfg.max_params);
    let idx = *INDEX_NAMES.choose(em.rng).unwrap();
    let bound = *BOUND_NAMES.choose(em.rng).unwrap();
    em.taken.extend([idx, bound]);
    let mut params = vec![idx, bound];
    while params.len() < n_params {
        match em.fresh_name() {
            Some(n) => params.push(n),
            None => break,
        }
    }
    params.shuffle(em.rng);

    em.push("fn");
    em.push(fn_name);
    em.push("(");
    for (i, p) in params.iter().enumerate() {
        if i > 0 {
            em.push(",");
        }
        let pos = em.push(*p);
        em.func.var_defs.push(pos);
    }
    em.push(")");
    em.push("{");
    em.newline();

    let mut scope = params.clone();
    let count = em.rng.random_range(cfg.min_statements..=cfg.max_statements);
    em.statements(&mut scope, count, 0, cfg, true);

    em.push("return");
    em.expr(&scope, 1);
    em.push(";");
    em.newline();
    em.push("}");
    em.func
}

/// Generates one function. Pure in `(seed, cfg)`.
pub fn generate_function(seed: u64, cfg: &SizeConfig) -> Result<MiniFunction, CorpusError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = format!("fn-{seed:016x}");
    loop {
        let f = try_generate(&mut rng, cfg, &id);
        if f.len() <= cfg.max_len {
            return Ok(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(seed: u64) -> MiniFunction {
        generate_function(seed, &SizeConfig::default()).unwrap()
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        assert_eq!(gen(7), gen(7));
    }

    #[test]
    fn different_seeds_differ() {
        assert_ne!(gen(7).tokens, gen(8).tokens);
    }

    #[test]
    fn generator_contract_holds() {
        for seed in 0..2000 {
            let f = gen(seed);
            assert!(f.len() <= 128);
            assert!(f.ordered_cmp_positions().count() >= 1);
            assert!(!f.arith_positions.is_empty());
            assert!(f.var_uses.iter().any(|u| u.in_scope.len() >= 2));
            for &p in &f.cmp_positions {
                let t = f.tokens[p].as_str();
                assert!(ORDERED_CMP.contains(&t) || EQUALITY_CMP.contains(&t));
            }
            for &p in &f.arith_positions {
                assert!(ARITH_OPS.contains(&f.tokens[p].as_str()));
            }
            for u in &f.var_uses {
                assert!(u.in_scope.contains(&f.tokens[u.position]));
            }
            for &d in &f.var_defs {
                assert!(is_identifier(&f.tokens[d]));
            }
            assert_eq!(f.line_map.len(), f.len());
            assert!(f.line_map.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn role_conventions_fix_the_operator() {
        for seed in 0..500 {
            let f = gen(seed);
            for p in f.ordered_cmp_positions() {
                let lhs = Role::of(&f.tokens[p - 1]);
                let rhs = &f.tokens[p + 1];
                let expected = match (lhs, Role::of(rhs)) {
                    (Some(Role::Index), Some(Role::Bound)) => "<",
                    (Some(Role::Index), None) => ">=",
                    (Some(Role::Value), None) => ">",
                    (Some(Role::Value), Some(Role::Bound)) => "<=",
                    other => panic!("unexpected ordered comparison {other:?}"),
                };
                assert_eq!(f.tokens[p], expected);
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SizeConfig { min_params: 1, ..SizeConfig::default() };
        assert!(generate_function(0, &cfg).is_err());
        let cfg = SizeConfig { min_statements: 5, max_statements: 2, ..SizeConfig::default() };
        assert!(generate_function(0, &cfg).is_err());
    }
}
