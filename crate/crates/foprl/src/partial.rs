//! Partial models on disk, masking-process simulation, per-example
//! tightest bounds, witnessing, and testability estimation.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read as _;
use std::path::Path;

use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use foprl_core::ground::GroundConstraintSet;
use foprl_core::lang::{Name, PolyConstraint, Rel, Term};
use foprl_core::num::{rat_min, rat_max, to_f64, Rat};
use foprl_core::poly::{BoundsTable, Monomial, PartialModel, Polynomial};
use foprl_core::sos::SOSProgram;

use crate::error::{Error, Result};
use crate::solver::{optimize_variable, Direction};

/// Finite mixture of fully observed worlds.
#[derive(Clone, Debug)]
pub struct WorldMixture {
    /// (probability, full assignment) pairs; probabilities sum to 1.
    pub worlds: Vec<(f64, BTreeMap<Term, Rat>)>,
}

/// Independent per-atom masking with a default probability and
/// per-predicate overrides.
#[derive(Clone, Debug, Default)]
pub struct MaskSpec {
    pub default_prob: f64,
    pub per_pred: BTreeMap<String, f64>,
}

impl MaskSpec {
    pub fn prob_for(&self, atom: &Term) -> f64 {
        *self.per_pred.get(&atom.pred).unwrap_or(&self.default_prob)
    }
}

/// splitmix64-style hash combine, used to key the per-(seed, example,
/// atom) masking RNG so parallel generation stays reproducible.
fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn keyed_rng(seed: u64, example: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed) ^ mix64(example.wrapping_mul(0x517cc1b727220a95)) ^ tag)
}

/// Draws `m` i.i.d. partial models: sample a world by probability, then
/// hide each atom independently. Deterministic given the seed.
pub fn simulate(mix: &WorldMixture, mask: &MaskSpec, m: usize, seed: u64) -> Result<Vec<PartialModel>> {
    let total: f64 = mix.worlds.iter().map(|(p, _)| p).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Usage(format!(
            "mixture probabilities sum to {total}, expected 1"
        )));
    }
    let mut out = Vec::with_capacity(m);
    for i in 0..m as u64 {
        let mut world_rng = keyed_rng(seed, i, 0);
        let u: f64 = world_rng.gen();
        let mut acc = 0.0;
        let mut world = &mix.worlds[mix.worlds.len() - 1].1;
        for (p, w) in &mix.worlds {
            acc += p;
            if u < acc {
                world = w;
                break;
            }
        }
        let mut rho = PartialModel::new();
        for (atom, value) in world {
            let p = mask.prob_for(atom);
            let hide = if p <= 0.0 {
                false
            } else if p >= 1.0 {
                true
            } else {
                let mut rng = keyed_rng(seed, i, fnv1a(&atom.to_string()));
                rng.gen::<f64>() < p
            };
            if !hide {
                rho.set(atom.clone(), value.clone());
            }
        }
        out.push(rho);
    }
    Ok(out)
}

/// Parses an atom string like `treated(m1,DrugA)` or `rain`. Names of the
/// form `g<digits>` are generic, everything else constant.
pub fn parse_atom(s: &str) -> Result<Term> {
    let s = s.trim();
    let bad = || Error::Parse(format!("malformed atom '{s}'"));
    let (pred, args) = match s.split_once('(') {
        None => (s, Vec::new()),
        Some((p, rest)) => {
            let inner = rest.strip_suffix(')').ok_or_else(bad)?;
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner.split(',').map(|a| a.trim().to_string()).collect()
            };
            (p.trim(), args)
        }
    };
    if pred.is_empty() || !pred.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(bad());
    }
    let names = args
        .into_iter()
        .map(|a| {
            if a.is_empty() {
                return Err(bad());
            }
            if let Some(idx) = a.strip_prefix('g').and_then(|r| r.parse::<usize>().ok()) {
                Ok(Name::Generic(idx))
            } else {
                Ok(Name::Constant(a))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Term::atom(pred, names))
}

fn rat_from_json(v: &serde_json::Value) -> Option<Rat> {
    match v {
        serde_json::Value::Number(n) => foprl_core::num::parse_rat(&n.to_string()),
        _ => None,
    }
}

/// Loads a line-delimited mixture file; each record maps atom strings to
/// values plus a `prob` field.
pub fn load_mixture(path: &Path) -> Result<WorldMixture> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    let mut worlds = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("mixture line {}: {e}", lineno + 1)))?;
        let mut prob = None;
        let mut world = BTreeMap::new();
        for (k, v) in &obj {
            if k == "prob" {
                prob = v.as_f64();
                continue;
            }
            let atom = parse_atom(k)
                .map_err(|e| Error::Parse(format!("mixture line {}: {e}", lineno + 1)))?;
            let val = rat_from_json(v).ok_or_else(|| {
                Error::Parse(format!("mixture line {}: non-numeric value for {k}", lineno + 1))
            })?;
            world.insert(atom, val);
        }
        let prob = prob.ok_or_else(|| {
            Error::Parse(format!("mixture line {}: missing 'prob'", lineno + 1))
        })?;
        worlds.push((prob, world));
    }
    if worlds.is_empty() {
        return Err(Error::Parse("empty mixture file".to_string()));
    }
    Ok(WorldMixture { worlds })
}

/// Loads partial models (JSON lines, `null` marks unknowns), validating
/// atom signatures against the KB's predicates and values against the
/// bounds table.
pub fn load_partial_models(
    path: &Path,
    signature: &BTreeMap<String, usize>,
    table: &BoundsTable,
) -> Result<Vec<PartialModel>> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let n = lineno + 1;
        let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("data line {n}: {e}")))?;
        let mut rho = PartialModel::new();
        for (k, v) in &obj {
            let atom = parse_atom(k).map_err(|e| Error::Parse(format!("data line {n}: {e}")))?;
            match signature.get(&atom.pred) {
                Some(arity) if *arity == atom.arity() => {}
                Some(arity) => {
                    return Err(Error::Parse(format!(
                        "data line {n}: atom {k} has arity {}, KB declares {arity}",
                        atom.arity()
                    )))
                }
                None => {
                    return Err(Error::Parse(format!(
                        "data line {n}: predicate '{}' not in the knowledge base",
                        atom.pred
                    )))
                }
            }
            if v.is_null() {
                continue;
            }
            let val = rat_from_json(v).ok_or_else(|| {
                Error::Parse(format!("data line {n}: non-numeric value for {k}"))
            })?;
            if let Ok((lo, hi)) = table.bounds_for(&Monomial::atom(atom.clone())) {
                if val < lo || val > hi {
                    return Err(Error::Parse(format!(
                        "data line {n}: value {} for atom {k} outside declared bounds [{}, {}]",
                        foprl_core::num::fmt_rat(&val),
                        foprl_core::num::fmt_rat(&lo),
                        foprl_core::num::fmt_rat(&hi),
                    )));
                }
            }
            rho.set(atom, val);
        }
        out.push(rho);
    }
    if out.is_empty() {
        return Err(Error::Parse("empty dataset".to_string()));
    }
    Ok(out)
}

/// Per-example bound computation with caching. Fast interval arithmetic
/// covers the common case where every constraint touching the remaining
/// atoms is a marked idempotence; everything else goes through a small
/// SDP restricted to the connected component.
pub struct Bounder<'a> {
    pub ground: &'a GroundConstraintSet,
    pub table: &'a BoundsTable,
    pub degree: u32,
    cache: RefCell<HashMap<(Monomial, Vec<(Term, Rat)>), (f64, f64)>>,
}

/// True when the constraint forces atom idempotence: `x^a = x^b` (a != b)
/// over a single atom.
pub fn is_idempotence(c: &PolyConstraint) -> Option<&Term> {
    if c.rel != Rel::Eq || !c.rhs.is_zero() {
        return None;
    }
    let terms: Vec<_> = c.poly.iter().collect();
    if terms.len() != 2 {
        return None;
    }
    let (m1, c1) = &terms[0];
    let (m2, c2) = &terms[1];
    if *c1 + *c2 != foprl_core::num::rat_zero() {
        return None;
    }
    let a1: Vec<_> = m1.terms().collect();
    let a2: Vec<_> = m2.terms().collect();
    if a1.len() == 1 && a2.len() == 1 && a1[0] == a2[0] {
        Some(a1[0])
    } else {
        None
    }
}

impl<'a> Bounder<'a> {
    pub fn new(ground: &'a GroundConstraintSet, table: &'a BoundsTable, degree: u32) -> Self {
        Bounder {
            ground,
            table,
            degree,
            cache: RefCell::new(HashMap::new()),
        }
    }

    /// Tightest lower and upper bounds on monomial `v` consistent with the
    /// partial model and the ground logical constraints. Fully observed
    /// monomials evaluate to a point.
    pub fn tightest_bounds(&self, v: &Monomial, rho: &PartialModel) -> Result<(f64, f64)> {
        // restrict the logical constraints by the observation; a restriction
        // that is constant and false means the example contradicts the KB
        let mut restricted: Vec<PolyConstraint> = Vec::new();
        for c in self.ground.logical() {
            let q = c.poly.partial_evaluate(rho);
            if q.atoms().is_empty() {
                let lhs = q.constant_term();
                let ok = match c.rel {
                    Rel::Ge => lhs >= c.rhs,
                    Rel::Le => lhs <= c.rhs,
                    Rel::Eq => lhs == c.rhs,
                };
                if !ok {
                    return Err(Error::DataConflict(format!(
                        "observed example violates constraint {c}"
                    )));
                }
                continue;
            }
            restricted.push(PolyConstraint {
                poly: q,
                rel: c.rel,
                rhs: c.rhs.clone(),
            });
        }

        let pv = Polynomial::from_monomial(v.clone(), foprl_core::num::rat_one())
            .partial_evaluate(rho);
        let reduced: Vec<(Monomial, Rat)> =
            pv.iter().map(|(m, c)| (m.clone(), c.clone())).collect();
        // a monomial partial-evaluates to one term (or a constant)
        debug_assert!(reduced.len() <= 1);
        let (mu, coef) = match reduced.into_iter().next() {
            None => return Ok((0.0, 0.0)),
            Some((m, c)) if m.is_one() => {
                let x = to_f64(&c);
                return Ok((x, x));
            }
            Some(mc) => mc,
        };

        // connected component of mu's atoms in the constraint hypergraph
        let mut component: BTreeSet<Term> = mu.terms().cloned().collect();
        loop {
            let before = component.len();
            for c in &restricted {
                let catoms = c.poly.atoms();
                if catoms.iter().any(|a| component.contains(a)) {
                    component.extend(catoms);
                }
            }
            if component.len() == before {
                break;
            }
        }
        let touching: Vec<&PolyConstraint> = restricted
            .iter()
            .filter(|c| c.poly.atoms().iter().any(|a| component.contains(a)))
            .collect();

        // fast path: only idempotence constraints on already-marked atoms
        let fast = touching.iter().all(|c| {
            is_idempotence(c).is_some_and(|a| self.table.is_idempotent(a))
        });
        let global = self
            .table
            .bounds_for(&mu)
            .map_err(|e| Error::Usage(format!("{e:?}")))?;
        let scale_interval = |lo: f64, hi: f64| -> (f64, f64) {
            let c = to_f64(&coef);
            if c >= 0.0 {
                (c * lo, c * hi)
            } else {
                (c * hi, c * lo)
            }
        };
        if fast {
            return Ok(scale_interval(to_f64(&global.0), to_f64(&global.1)));
        }

        // general path: SDP over the component, cached by observation
        let sig: Vec<(Term, Rat)> = rho
            .observed()
            .map(|(t, r)| (t.clone(), r.clone()))
            .collect();
        let key = (mu.clone(), sig);
        if let Some(hit) = self.cache.borrow().get(&key) {
            return Ok(scale_interval(hit.0, hit.1));
        }
        let mut prog = SOSProgram::new(&component, self.degree, false)
            .map_err(|e| Error::Solver(e.to_string()))?;
        for (i, c) in touching.iter().enumerate() {
            prog.add_logical(&component, format!("restricted g{i}"), c)
                .map_err(|e| Error::Solver(e.to_string()))?;
        }
        prog.add_bound_rows(self.table)
            .map_err(|e| Error::Usage(e.to_string()))?;
        let lo = optimize_variable(&prog, &mu, Direction::Min)?;
        let hi = optimize_variable(&prog, &mu, Direction::Max)?;
        // SOS relaxation can only widen; clamp back to the global interval
        let lo = lo.max(to_f64(&global.0));
        let hi = hi.min(to_f64(&global.1)).max(lo);
        self.cache.borrow_mut().insert(key, (lo, hi));
        Ok(scale_interval(lo, hi))
    }

    /// Worst-case interval of a monomial over completions of `rho` limited
    /// only by the declared atom bounds. Unlike `tightest_bounds`, the
    /// logical constraints are deliberately ignored: witnessing asks whether
    /// the data alone pins the constraint down, so conditioning the
    /// completions on the constraint being tested would beg the question.
    fn interval_bounds(&self, v: &Monomial, rho: &PartialModel) -> Result<(f64, f64)> {
        let pv = Polynomial::from_monomial(v.clone(), foprl_core::num::rat_one())
            .partial_evaluate(rho);
        let reduced: Vec<(Monomial, Rat)> =
            pv.iter().map(|(m, c)| (m.clone(), c.clone())).collect();
        let (mu, coef) = match reduced.into_iter().next() {
            None => return Ok((0.0, 0.0)),
            Some((m, c)) if m.is_one() => {
                let x = to_f64(&c);
                return Ok((x, x));
            }
            Some(mc) => mc,
        };
        let (glo, ghi) = self
            .table
            .bounds_for(&mu)
            .map_err(|e| Error::Usage(format!("{e:?}")))?;
        let c = to_f64(&coef);
        let (lo, hi) = (to_f64(&glo), to_f64(&ghi));
        Ok(if c >= 0.0 { (c * lo, c * hi) } else { (c * hi, c * lo) })
    }

    /// Witnessing: replace each monomial by its worst-case bound under the
    /// partial model and test whether the constraint still holds.
    pub fn is_witnessed(&self, c: &PolyConstraint, rho: &PartialModel) -> Result<bool> {
        let witness_ge = |poly: &Polynomial, rhs: &Rat| -> Result<bool> {
            let mut total = -to_f64(rhs);
            for (m, coef) in poly.iter() {
                if m.is_one() {
                    total += to_f64(coef);
                    continue;
                }
                let (lo, hi) = self.interval_bounds(m, rho)?;
                let c = to_f64(coef);
                total += if c >= 0.0 { c * lo } else { c * hi };
            }
            Ok(total >= -1e-9)
        };
        match c.rel {
            Rel::Ge => witness_ge(&c.poly, &c.rhs),
            Rel::Le => witness_ge(&c.poly.scale(&-foprl_core::num::rat_one()), &-c.rhs.clone()),
            Rel::Eq => Ok(witness_ge(&c.poly, &c.rhs)?
                && witness_ge(&c.poly.scale(&-foprl_core::num::rat_one()), &-c.rhs.clone())?),
        }
    }
}

/// Distinct examples with multiplicities, in first-appearance order.
/// Masked datasets usually contain few distinct observation patterns, so
/// per-example computations only need one pass per pattern.
pub fn dedupe_examples(data: &[PartialModel]) -> Vec<(&PartialModel, usize)> {
    let mut index: HashMap<&PartialModel, usize> = HashMap::new();
    let mut out: Vec<(&PartialModel, usize)> = Vec::new();
    for rho in data {
        match index.get(rho) {
            Some(&i) => out[i].1 += 1,
            None => {
                index.insert(rho, out.len());
                out.push((rho, 1));
            }
        }
    }
    out
}

/// Empirical witnessing fractions: per constraint and jointly.
#[derive(Clone, Debug)]
pub struct TestabilityReport {
    pub per_constraint: Vec<(String, f64)>,
    pub joint: f64,
}

pub fn estimate_testability(
    constraints: &[PolyConstraint],
    data: &[PartialModel],
    bounder: &Bounder<'_>,
) -> Result<TestabilityReport> {
    if data.is_empty() {
        return Err(Error::Usage("empty dataset".to_string()));
    }
    let mut per = vec![0usize; constraints.len()];
    let mut joint = 0usize;
    for (rho, weight) in dedupe_examples(data) {
        let mut all = true;
        for (i, c) in constraints.iter().enumerate() {
            if bounder.is_witnessed(c, rho)? {
                per[i] += weight;
            } else {
                all = false;
            }
        }
        if all {
            joint += weight;
        }
    }
    let m = data.len() as f64;
    Ok(TestabilityReport {
        per_constraint: constraints
            .iter()
            .zip(per)
            .map(|(c, k)| (c.to_string(), k as f64 / m))
            .collect(),
        joint: joint as f64 / m,
    })
}

/// Predicate-arity signature of a knowledge base.
pub fn kb_signature(kb: &foprl_core::lang::KnowledgeBase) -> BTreeMap<String, usize> {
    let mut sig = BTreeMap::new();
    let visit_poly = |p: &Polynomial, sig: &mut BTreeMap<String, usize>| {
        for m in p.monomials() {
            for t in m.terms() {
                sig.insert(t.pred.clone(), t.arity());
            }
        }
    };
    for c in &kb.constraints {
        match c {
            foprl_core::lang::Constraint::Logical(l) => visit_poly(&l.body.poly, &mut sig),
            foprl_core::lang::Constraint::Expectation(e) => visit_poly(&e.combo, &mut sig),
            foprl_core::lang::Constraint::Conditional(r) => {
                visit_poly(&r.premise.combo, &mut sig);
                visit_poly(&r.conclusion.body.poly, &mut sig);
            }
        }
    }
    sig
}

/// Clamp helper used by tests and the learner: intersect an interval with
/// the global bounds of a monomial.
pub fn clamp_to_global(table: &BoundsTable, m: &Monomial, lo: f64, hi: f64) -> (f64, f64) {
    match table.bounds_for(m) {
        Ok((gl, gu)) => {
            let gl = to_f64(&gl);
            let gu = to_f64(&gu);
            (lo.max(gl).min(gu), hi.min(gu).max(gl))
        }
        Err(_) => (lo, hi),
    }
}

/// Exact interval intersection on rationals (used by the oracle tests).
pub fn intersect(a: (Rat, Rat), b: (Rat, Rat)) -> (Rat, Rat) {
    (
        rat_max(&a.0, &b.0).clone(),
        rat_min(&a.1, &b.1).clone(),
    )
}
