//! Brute-force ground truth for small instances: exact world enumeration,
//! consistency via a linear program over the world-probability simplex,
//! and exact completion bounds for partial models.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus,
    SupportedConeT::{self, NonnegativeConeT, ZeroConeT},
};

use foprl_core::ground::{GroundConstraint, GroundConstraintSet};
use foprl_core::lang::{Rel, Term};
use foprl_core::num::{rat_int, to_f64, Rat};
use foprl_core::poly::{BoundsTable, Monomial, PartialModel};

use crate::error::{Error, Result};

/// Candidate values per atom: {0,1} for idempotent atoms, otherwise a
/// uniform grid over the atom's declared bounds.
#[derive(Clone, Debug)]
pub struct ValueGrid {
    pub atoms: Vec<Term>,
    pub values: Vec<Vec<Rat>>,
}

impl ValueGrid {
    pub fn build(
        atoms: impl IntoIterator<Item = Term>,
        table: &BoundsTable,
        resolution: usize,
    ) -> Result<ValueGrid> {
        let atoms: Vec<Term> = atoms.into_iter().collect();
        let mut values = Vec::with_capacity(atoms.len());
        for a in &atoms {
            let (lo, hi) = table
                .bounds_for(&Monomial::atom(a.clone()))
                .map_err(|e| Error::Usage(format!("no bounds for atom {a}: {e:?}")))?;
            let vals = if table.is_idempotent(a) {
                let mut v = Vec::new();
                if lo <= rat_int(0) && rat_int(0) <= hi {
                    v.push(rat_int(0));
                }
                if lo <= rat_int(1) && rat_int(1) <= hi {
                    v.push(rat_int(1));
                }
                if v.is_empty() {
                    return Err(Error::Usage(format!(
                        "idempotent atom {a} has bounds excluding both 0 and 1"
                    )));
                }
                v
            } else if lo == hi {
                vec![lo]
            } else {
                let r = resolution.max(1);
                let step = (&hi - &lo) / rat_int(r as i64);
                (0..=r).map(|i| &lo + &step * rat_int(i as i64)).collect()
            };
            values.push(vals);
        }
        Ok(ValueGrid { atoms, values })
    }

    /// log2 of the number of worlds, for the size guard.
    fn bits(&self) -> f64 {
        self.values.iter().map(|v| (v.len() as f64).log2()).sum()
    }
}

pub const SIZE_GUARD_BITS: f64 = 20.0;

/// Cartesian product of the per-atom value lists, deterministic order.
pub fn enumerate_worlds(grid: &ValueGrid) -> Result<Vec<BTreeMap<Term, Rat>>> {
    if grid.bits() > SIZE_GUARD_BITS {
        return Err(Error::Usage(format!(
            "world enumeration guard exceeded ({:.1} bits > {})",
            grid.bits(),
            SIZE_GUARD_BITS
        )));
    }
    let mut out: Vec<BTreeMap<Term, Rat>> = vec![BTreeMap::new()];
    for (atom, vals) in grid.atoms.iter().zip(&grid.values) {
        let mut next = Vec::with_capacity(out.len() * vals.len());
        for w in &out {
            for v in vals {
                let mut w2 = w.clone();
                w2.insert(atom.clone(), v.clone());
                next.push(w2);
            }
        }
        out = next;
    }
    Ok(out)
}

fn satisfies_logical(w: &BTreeMap<Term, Rat>, g: &GroundConstraintSet) -> bool {
    g.logical().all(|c| {
        let lhs = match c.poly.evaluate(w) {
            Some(v) => v,
            None => return false,
        };
        match c.rel {
            Rel::Ge => lhs >= c.rhs,
            Rel::Le => lhs <= c.rhs,
            Rel::Eq => lhs == c.rhs,
        }
    })
}

#[derive(Clone, Debug)]
pub enum OracleVerdict {
    /// A distribution over the surviving worlds satisfying every
    /// expectation constraint (world index -> probability).
    Satisfiable(Vec<(usize, f64)>),
    Unsatisfiable,
}

/// Exact consistency on the grid: keep the worlds satisfying every
/// logical constraint, then solve the linear feasibility problem over the
/// probability simplex subject to the expectation constraints.
pub fn brute_force_consistency(
    g: &GroundConstraintSet,
    grid: &ValueGrid,
) -> Result<OracleVerdict> {
    let worlds = enumerate_worlds(grid)?;
    let surviving: Vec<(usize, &BTreeMap<Term, Rat>)> = worlds
        .iter()
        .enumerate()
        .filter(|(_, w)| satisfies_logical(w, g))
        .collect();
    if surviving.is_empty() {
        return Ok(OracleVerdict::Unsatisfiable);
    }
    // expectation rows: sum_w p_w * combo(w) rel rhs
    struct RowF {
        coefs: Vec<f64>,
        rhs: f64,
        rel: Rel,
    }
    let mut rows = Vec::new();
    for c in &g.constraints {
        if let GroundConstraint::Expectation { combo, rel, rhs } = c {
            let coefs = surviving
                .iter()
                .map(|(_, w)| combo.evaluate(w).map(|v| to_f64(&v)))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| {
                    Error::Usage("expectation constraint over atoms outside the grid".into())
                })?;
            rows.push(RowF {
                coefs,
                rhs: to_f64(rhs),
                rel: *rel,
            });
        }
    }
    let n = surviving.len();
    // variables p_w; rows: simplex equality, expectation rows, p_w >= 0
    let mut trips: Vec<(usize, usize, f64)> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut nrows = 0usize;

    let mut n_eq = 1usize;
    for c in 0..n {
        trips.push((c, nrows, 1.0));
    }
    b.push(1.0);
    nrows += 1;
    for row in rows.iter().filter(|r| r.rel == Rel::Eq) {
        for (c, v) in row.coefs.iter().enumerate() {
            trips.push((c, nrows, *v));
        }
        b.push(row.rhs);
        nrows += 1;
        n_eq += 1;
    }
    cones.push(ZeroConeT(n_eq));
    let mut n_in = 0usize;
    for row in rows.iter().filter(|r| r.rel != Rel::Eq) {
        // normalize to a <= constraint: Ax + s = b, s >= 0
        let sign = if row.rel == Rel::Le { 1.0 } else { -1.0 };
        for (c, v) in row.coefs.iter().enumerate() {
            trips.push((c, nrows, sign * v));
        }
        b.push(sign * row.rhs);
        nrows += 1;
        n_in += 1;
    }
    for c in 0..n {
        trips.push((c, nrows, -1.0));
        b.push(0.0);
        nrows += 1;
        n_in += 1;
    }
    cones.push(NonnegativeConeT(n_in));

    trips.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    let mut colptr = vec![0usize];
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    let mut col = 0usize;
    for (c, r, v) in trips {
        while col < c {
            colptr.push(rowval.len());
            col += 1;
        }
        rowval.push(r);
        nzval.push(v);
    }
    while col < n {
        colptr.push(rowval.len());
        col += 1;
    }
    let a = CscMatrix::new(nrows, n, colptr, rowval, nzval);
    let p = CscMatrix::zeros((n, n));
    let q = vec![0.0; n];
    let settings = DefaultSettings {
        verbose: false,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
        .map_err(|e| Error::Solver(format!("oracle LP construction: {e:?}")))?;
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let dist = surviving
                .iter()
                .zip(&solver.solution.x)
                .filter(|(_, p)| **p > 1e-9)
                .map(|((i, _), p)| (*i, *p))
                .collect();
            Ok(OracleVerdict::Satisfiable(dist))
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            Ok(OracleVerdict::Unsatisfiable)
        }
        other => Err(Error::Solver(format!("oracle LP status {other:?}"))),
    }
}

/// Exact min/max of a monomial over grid completions of a partial model
/// that satisfy the logical constraints.
pub fn brute_force_bounds(
    v: &Monomial,
    rho: &PartialModel,
    g: &GroundConstraintSet,
    grid: &ValueGrid,
) -> Result<(Rat, Rat)> {
    let free: Vec<usize> = grid
        .atoms
        .iter()
        .enumerate()
        .filter(|(_, a)| !rho.is_observed(a))
        .map(|(i, _)| i)
        .collect();
    let sub = ValueGrid {
        atoms: free.iter().map(|i| grid.atoms[*i].clone()).collect(),
        values: free.iter().map(|i| grid.values[*i].clone()).collect(),
    };
    let mut best: Option<(Rat, Rat)> = None;
    for completion in enumerate_worlds(&sub)? {
        let mut w: BTreeMap<Term, Rat> = completion;
        for (a, val) in rho.observed() {
            w.insert(a.clone(), val.clone());
        }
        if !satisfies_logical(&w, g) {
            continue;
        }
        let val = match v
            .factors()
            .map(|(t, e)| w.get(t).map(|x| num_traits::pow::pow(x.clone(), e as usize)))
            .collect::<Option<Vec<Rat>>>()
        {
            Some(fs) => fs.into_iter().product::<Rat>(),
            None => continue,
        };
        best = Some(match best {
            None => (val.clone(), val),
            Some((lo, hi)) => (lo.min(val.clone()), hi.max(val)),
        });
    }
    best.ok_or_else(|| {
        Error::DataConflict("no grid completion of the example satisfies the constraints".into())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use foprl_core::ground::ground;
    use foprl_core::parse::parse_kb;

    fn setup(kb_text: &str) -> (GroundConstraintSet, BoundsTable) {
        let kb = parse_kb(kb_text).unwrap();
        let g = ground(&kb, 0);
        let mut table = BoundsTable::new();
        table.declare_atom_default(rat_int(0), rat_int(1));
        for c in g.logical() {
            crate::learner::mark_idempotents(c, &mut table);
        }
        (g, table)
    }

    #[test]
    fn world_counts() {
        let (g, table) = setup("t(a)^2 = t(a)\ns(a)^2 = s(a)\n");
        let grid = ValueGrid::build(g.atoms.iter().cloned(), &table, 2).unwrap();
        assert_eq!(enumerate_worlds(&grid).unwrap().len(), 4);
        let (g1, t1) = setup("u(a) >= 0\n");
        let grid = ValueGrid::build(g1.atoms.iter().cloned(), &t1, 2).unwrap();
        assert_eq!(enumerate_worlds(&grid).unwrap().len(), 3);
    }

    #[test]
    fn empty_moment_interval_is_unsat() {
        let (g, table) = setup("t(a)^2 = t(a)\nE[t(a)] >= 0.9\nE[t(a)] <= 0.5\n");
        let grid = ValueGrid::build(g.atoms.iter().cloned(), &table, 2).unwrap();
        assert!(matches!(
            brute_force_consistency(&g, &grid).unwrap(),
            OracleVerdict::Unsatisfiable
        ));
    }

    #[test]
    fn point_moment_has_the_expected_distribution() {
        let (g, table) = setup("t(a)^2 = t(a)\nE[t(a)] = 0.3\n");
        let grid = ValueGrid::build(g.atoms.iter().cloned(), &table, 2).unwrap();
        match brute_force_consistency(&g, &grid).unwrap() {
            OracleVerdict::Satisfiable(dist) => {
                // worlds: t=0 with 0.7, t=1 with 0.3
                let p: BTreeMap<usize, f64> = dist.into_iter().collect();
                assert!((p.get(&0).copied().unwrap_or(0.0) - 0.7).abs() < 1e-6);
                assert!((p.get(&1).copied().unwrap_or(0.0) - 0.3).abs() < 1e-6);
            }
            OracleVerdict::Unsatisfiable => panic!("expected satisfiable"),
        }
    }

    #[test]
    fn completion_bounds() {
        let (g, table) = setup("t(a)^2 = t(a)\ns(a)^2 = s(a)\n");
        let grid = ValueGrid::build(g.atoms.iter().cloned(), &table, 2).unwrap();
        let t = crate::partial::parse_atom("t(a)").unwrap();
        let s = crate::partial::parse_atom("s(a)").unwrap();
        let ts = Monomial::from_pairs([(t.clone(), 1), (s.clone(), 1)]);
        let mut rho = PartialModel::new();
        rho.set(t.clone(), rat_int(0));
        assert_eq!(
            brute_force_bounds(&ts, &rho, &g, &grid).unwrap(),
            (rat_int(0), rat_int(0))
        );
        let mut rho1 = PartialModel::new();
        rho1.set(t, rat_int(1));
        assert_eq!(
            brute_force_bounds(&ts, &rho1, &g, &grid).unwrap(),
            (rat_int(0), rat_int(1))
        );
        assert_eq!(
            brute_force_bounds(&Monomial::atom(s), &PartialModel::new(), &g, &grid).unwrap(),
            (rat_int(0), rat_int(1))
        );
    }
}
