//! Monomials and polynomials over terms, partial evaluation, and the
//! explicit-compactness bounds table.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use num_traits::{One, Signed, Zero};

use crate::lang::{Name, Term};
use crate::num::{fmt_rat, interval_pow, rat_int, rat_one, rat_zero, Rat};

/// Product of term powers; exponent map carries no zero entries.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Monomial {
    exps: BTreeMap<Term, u32>,
}

impl Monomial {
    pub fn one() -> Self {
        Monomial::default()
    }

    pub fn atom(t: Term) -> Self {
        let mut exps = BTreeMap::new();
        exps.insert(t, 1);
        Monomial { exps }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Term, u32)>) -> Self {
        let mut exps = BTreeMap::new();
        for (t, e) in pairs {
            if e > 0 {
                *exps.entry(t).or_insert(0) += e;
            }
        }
        Monomial { exps }
    }

    pub fn is_one(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.exps.values().sum()
    }

    pub fn factors(&self) -> impl Iterator<Item = (&Term, u32)> {
        self.exps.iter().map(|(t, e)| (t, *e))
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.exps.keys()
    }

    pub fn is_ground(&self) -> bool {
        self.exps.keys().all(Term::is_atom)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut exps = self.exps.clone();
        for (t, e) in &other.exps {
            *exps.entry(t.clone()).or_insert(0) += e;
        }
        Monomial { exps }
    }

    pub fn substitute(&self, theta: &[(String, Name)]) -> Monomial {
        Monomial::from_pairs(self.exps.iter().map(|(t, e)| (t.substitute(theta), *e)))
    }

    /// Generic names occurring, in first-occurrence order.
    pub fn generics(&self) -> Vec<usize> {
        let mut seen = Vec::new();
        for t in self.exps.keys() {
            for a in &t.args {
                if let crate::lang::Arg::Name(Name::Generic(i)) = a {
                    if !seen.contains(i) {
                        seen.push(*i);
                    }
                }
            }
        }
        seen
    }

    /// Relabels generic names by the given map (old index -> new index).
    pub fn relabel_generics(&self, map: &BTreeMap<usize, usize>) -> Monomial {
        Monomial::from_pairs(self.exps.iter().map(|(t, e)| {
            let t2 = Term {
                pred: t.pred.clone(),
                args: t
                    .args
                    .iter()
                    .map(|a| match a {
                        crate::lang::Arg::Name(Name::Generic(i)) => {
                            crate::lang::Arg::Name(Name::Generic(*map.get(i).unwrap_or(i)))
                        }
                        other => other.clone(),
                    })
                    .collect(),
            };
            (t2, *e)
        }))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.exps.iter().cmp(other.exps.iter())
    }
}

/// Graded-lexicographic comparison, used for deterministic basis order.
pub fn grlex(a: &Monomial, b: &Monomial) -> Ordering {
    a.degree().cmp(&b.degree()).then_with(|| a.cmp(b))
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_one() {
            return write!(f, "1");
        }
        for (i, (t, e)) in self.exps.iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            write!(f, "{t}")?;
            if *e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

/// Polynomial with exact rational coefficients; no zero coefficients stored.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, Rat>,
}

impl PartialOrd for Polynomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Polynomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.terms.iter().cmp(other.terms.iter())
    }
}

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial::default()
    }

    pub fn constant(c: Rat) -> Self {
        let mut p = Polynomial::zero();
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn from_monomial(m: Monomial, c: Rat) -> Self {
        let mut p = Polynomial::zero();
        p.add_term(m, c);
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: Rat) {
        if c.is_zero() {
            return;
        }
        use alloc::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Monomial, &Rat)> {
        self.terms.iter()
    }

    pub fn monomials(&self) -> impl Iterator<Item = &Monomial> {
        self.terms.keys()
    }

    pub fn coefficient(&self, m: &Monomial) -> Rat {
        self.terms.get(m).cloned().unwrap_or_else(rat_zero)
    }

    pub fn constant_term(&self) -> Rat {
        self.coefficient(&Monomial::one())
    }

    /// Degree of the highest-degree monomial (0 for constants and zero).
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }

    pub fn scale(&self, c: &Rat) -> Polynomial {
        if c.is_zero() {
            return Polynomial::zero();
        }
        Polynomial {
            terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect(),
        }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                out.add_term(m1.mul(m2), c1 * c2);
            }
        }
        out
    }

    pub fn substitute(&self, theta: &[(String, Name)]) -> Polynomial {
        let mut out = Polynomial::zero();
        for (m, c) in &self.terms {
            out.add_term(m.substitute(theta), c.clone());
        }
        out
    }

    /// Full evaluation; every term must be assigned.
    pub fn evaluate(&self, values: &BTreeMap<Term, Rat>) -> Option<Rat> {
        let mut total = rat_zero();
        for (m, c) in &self.terms {
            let mut v = rat_one();
            for (t, e) in m.factors() {
                let x = values.get(t)?;
                let mut p = rat_one();
                for _ in 0..e {
                    p *= x;
                }
                v *= p;
            }
            total += c * v;
        }
        Some(total)
    }

    /// Substitutes observed atoms by their values and collects like
    /// monomials; the result's terms are exactly the unobserved ones.
    pub fn partial_evaluate(&self, rho: &PartialModel) -> Polynomial {
        let mut out = Polynomial::zero();
        for (m, c) in &self.terms {
            let mut coeff = c.clone();
            let mut residual: Vec<(Term, u32)> = Vec::new();
            for (t, e) in m.factors() {
                match rho.get(t) {
                    Some(v) => {
                        let mut p = rat_one();
                        for _ in 0..e {
                            p *= v;
                        }
                        coeff *= p;
                    }
                    None => residual.push((t.clone(), e)),
                }
            }
            out.add_term(Monomial::from_pairs(residual), coeff);
        }
        out
    }

    pub fn atoms(&self) -> BTreeSet<Term> {
        self.terms
            .keys()
            .flat_map(|m| m.terms().cloned())
            .collect()
    }

    /// Renders moments: each monomial wrapped as `E[...]`.
    pub fn display_as_moments(&self) -> MomentDisplay<'_> {
        MomentDisplay(self)
    }
}

fn fmt_signed_terms(
    f: &mut fmt::Formatter<'_>,
    terms: &BTreeMap<Monomial, Rat>,
    moments: bool,
) -> fmt::Result {
    if terms.is_empty() {
        return write!(f, "0");
    }
    for (i, (m, c)) in terms.iter().enumerate() {
        let neg = c.is_negative();
        let mag = if neg { -c.clone() } else { c.clone() };
        if i == 0 {
            if neg {
                write!(f, "-")?;
            }
        } else if neg {
            write!(f, " - ")?;
        } else {
            write!(f, " + ")?;
        }
        if m.is_one() {
            write!(f, "{}", fmt_rat(&mag))?;
        } else {
            if !mag.is_one() {
                write!(f, "{}*", fmt_rat(&mag))?;
            }
            if moments {
                write!(f, "E[{m}]")?;
            } else {
                write!(f, "{m}")?;
            }
        }
    }
    Ok(())
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_signed_terms(f, &self.terms, false)
    }
}

pub struct MomentDisplay<'a>(&'a Polynomial);

impl fmt::Display for MomentDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_signed_terms(f, &self.0.terms, true)
    }
}

/// Assignment of reals to some atoms; absent atoms are unknown (`*`).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct PartialModel {
    values: BTreeMap<Term, Rat>,
}

impl PartialModel {
    pub fn new() -> Self {
        PartialModel::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Term, Rat)>) -> Self {
        PartialModel {
            values: pairs.into_iter().collect(),
        }
    }

    pub fn set(&mut self, atom: Term, v: Rat) {
        self.values.insert(atom, v);
    }

    pub fn get(&self, atom: &Term) -> Option<&Rat> {
        self.values.get(atom)
    }

    pub fn is_observed(&self, atom: &Term) -> bool {
        self.values.contains_key(atom)
    }

    pub fn observed(&self) -> impl Iterator<Item = (&Term, &Rat)> {
        self.values.iter()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Per-monomial bounds, with interval-arithmetic derivation for products
/// that carry no declaration. Atoms marked idempotent (`x^2 = x`) are
/// tightened to `[0,1]`.
#[derive(Clone, Debug, Default)]
pub struct BoundsTable {
    declared: BTreeMap<Monomial, (Rat, Rat)>,
    atom_default: Option<(Rat, Rat)>,
    idempotent: BTreeSet<Term>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BoundsError {
    Missing(Monomial),
    Inverted(Monomial),
}

impl fmt::Display for BoundsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundsError::Missing(m) => write!(f, "no finite bounds for monomial {m}"),
            BoundsError::Inverted(m) => write!(f, "declared bounds for {m} have L > U"),
        }
    }
}

impl BoundsTable {
    pub fn new() -> Self {
        BoundsTable::default()
    }

    pub fn declare(&mut self, m: Monomial, lo: Rat, hi: Rat) -> Result<(), BoundsError> {
        if lo > hi {
            return Err(BoundsError::Inverted(m));
        }
        // intersect with an existing declaration
        match self.declared.get_mut(&m) {
            Some((l, u)) => {
                if lo > *l {
                    *l = lo;
                }
                if hi < *u {
                    *u = hi;
                }
                if *l > *u {
                    return Err(BoundsError::Inverted(m));
                }
            }
            None => {
                self.declared.insert(m, (lo, hi));
            }
        }
        Ok(())
    }

    pub fn declare_atom_default(&mut self, lo: Rat, hi: Rat) {
        self.atom_default = Some((lo, hi));
    }

    pub fn mark_idempotent(&mut self, atom: Term) {
        self.idempotent.insert(atom);
    }

    pub fn is_idempotent(&self, atom: &Term) -> bool {
        self.idempotent.contains(atom)
    }

    fn atom_range(&self, atom: &Term) -> Option<(Rat, Rat)> {
        let m = Monomial::atom(atom.clone());
        let base = self
            .declared
            .get(&m)
            .cloned()
            .or_else(|| self.atom_default.clone());
        if self.idempotent.contains(atom) {
            // x^2 = x already confines x to {0, 1}
            let base = base.unwrap_or((rat_zero(), rat_one()));
            let lo = if base.0 < rat_zero() { rat_zero() } else { base.0 };
            let hi = if base.1 > rat_one() { rat_one() } else { base.1 };
            Some((lo, hi))
        } else {
            base
        }
    }

    /// Bounds for a monomial: declared exactly, or derived by interval
    /// products over its atom factors.
    pub fn bounds_for(&self, m: &Monomial) -> Result<(Rat, Rat), BoundsError> {
        if m.is_one() {
            return Ok((rat_int(1), rat_int(1)));
        }
        if let Some(b) = self.declared.get(m) {
            return Ok(b.clone());
        }
        let mut lo = rat_one();
        let mut hi = rat_one();
        for (t, e) in m.factors() {
            let (al, au) = self
                .atom_range(t)
                .ok_or_else(|| BoundsError::Missing(m.clone()))?;
            // idempotent atoms satisfy x^k = x
            let (pl, pu) = if self.idempotent.contains(t) {
                (al, au)
            } else {
                interval_pow(&al, &au, e)
            };
            let (nl, nh) = crate::num::interval_mul(&lo, &hi, &pl, &pu);
            lo = nl;
            hi = nh;
        }
        Ok((lo, hi))
    }

    /// Naive bounds of a polynomial per the explicit-compactness table:
    /// `U_p = sum_{c>=0} c*U + sum_{c<0} c*L`, `L_p` symmetric.
    pub fn naive_bounds(&self, p: &Polynomial) -> Result<(Rat, Rat), BoundsError> {
        let mut lo = rat_zero();
        let mut hi = rat_zero();
        for (m, c) in p.iter() {
            let (ml, mu) = self.bounds_for(m)?;
            if c >= &rat_zero() {
                lo += c * &ml;
                hi += c * &mu;
            } else {
                lo += c * &mu;
                hi += c * &ml;
            }
        }
        Ok((lo, hi))
    }

    /// `|p| = U_p - L_p`.
    pub fn naive_norm(&self, p: &Polynomial) -> Result<Rat, BoundsError> {
        let (l, u) = self.naive_bounds(p)?;
        Ok(u - l)
    }
}

/// Reports every monomial lacking finite bounds.
pub fn check_explicit_compactness<'a>(
    monomials: impl Iterator<Item = &'a Monomial>,
    table: &BoundsTable,
) -> Vec<Monomial> {
    let mut missing = Vec::new();
    for m in monomials {
        if table.bounds_for(m).is_err() {
            missing.push(m.clone());
        }
    }
    missing
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::Name;
    use crate::num::rat;
    use alloc::vec;

    fn atom(p: &str) -> Term {
        Term::atom(p, vec![Name::Constant("a".into())])
    }

    fn t_minus_s() -> (Polynomial, Term, Term) {
        let t = atom("t");
        let s = atom("s");
        // 1 - t - s
        let mut p = Polynomial::constant(rat_int(1));
        p.add_term(Monomial::atom(t.clone()), rat_int(-1));
        p.add_term(Monomial::atom(s.clone()), rat_int(-1));
        (p, t, s)
    }

    #[test]
    fn partial_eval_full_observation() {
        let (p, t, s) = t_minus_s();
        let rho = PartialModel::from_pairs([(t, rat_int(0)), (s, rat_int(0))]);
        let r = p.partial_evaluate(&rho);
        assert_eq!(r, Polynomial::constant(rat_int(1)));
    }

    #[test]
    fn partial_eval_residual() {
        let (p, t, s) = t_minus_s();
        let rho = PartialModel::from_pairs([(t, rat_int(1))]);
        let r = p.partial_evaluate(&rho);
        // 1 - 1 - s = -s
        assert_eq!(r, Polynomial::from_monomial(Monomial::atom(s), rat_int(-1)));
    }

    #[test]
    fn partial_eval_monomial_product() {
        let t = atom("t");
        let s = atom("s");
        let p = Polynomial::from_monomial(Monomial::atom(t.clone()).mul(&Monomial::atom(s.clone())), rat_int(1));
        let rho = PartialModel::from_pairs([(t, rat_int(1))]);
        assert_eq!(
            p.partial_evaluate(&rho),
            Polynomial::from_monomial(Monomial::atom(s), rat_int(1))
        );
    }

    #[test]
    fn naive_bounds_formula() {
        let (p, _, _) = t_minus_s();
        let mut table = BoundsTable::new();
        table.declare_atom_default(rat_int(0), rat_int(1));
        let (l, u) = table.naive_bounds(&p).unwrap();
        assert_eq!((l, u), (rat_int(-1), rat_int(1)));
        assert_eq!(table.naive_norm(&p).unwrap(), rat_int(2));

        let c = Polynomial::constant(rat_int(5));
        assert_eq!(table.naive_bounds(&c).unwrap(), (rat_int(5), rat_int(5)));

        let t = atom("t");
        let s = atom("s");
        let ts = Polynomial::from_monomial(Monomial::atom(t).mul(&Monomial::atom(s)), rat_int(1));
        assert_eq!(table.naive_bounds(&ts).unwrap(), (rat_int(0), rat_int(1)));
    }

    #[test]
    fn compactness_report_names_unbounded_atoms() {
        let table = BoundsTable::new();
        let m = Monomial::atom(atom("height"));
        let missing = check_explicit_compactness([m.clone()].iter(), &table);
        assert_eq!(missing, vec![m]);
    }

    #[test]
    fn idempotent_power_bounds() {
        let mut table = BoundsTable::new();
        table.declare_atom_default(rat_int(0), rat_int(1));
        let x = atom("x");
        table.mark_idempotent(x.clone());
        let sq = Monomial::from_pairs([(x, 2)]);
        assert_eq!(table.bounds_for(&sq).unwrap(), (rat_int(0), rat_int(1)));
    }

    #[test]
    fn declared_bounds_intersect() {
        let mut table = BoundsTable::new();
        let m = Monomial::atom(atom("x"));
        table.declare(m.clone(), rat_int(0), rat_int(2)).unwrap();
        table.declare(m.clone(), rat(1, 2), rat_int(3)).unwrap();
        assert_eq!(table.bounds_for(&m).unwrap(), (rat(1, 2), rat_int(2)));
    }
}
