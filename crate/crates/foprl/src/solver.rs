//! Conic-solver bridge: turns a symbolic [`SOSProgram`] into a Clarabel
//! problem, decides feasibility through a strictly-feasible reformulation,
//! and extracts rational refutation certificates from the dual solution.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus,
    SupportedConeT::{self, NonnegativeConeT, PSDTriangleConeT, ZeroConeT},
};
use num_traits::FromPrimitive;

use foprl_core::cert::{Certificate, LinearTerm, RatMatrix, SosTerm, verify_certificate};
use foprl_core::num::{approx_f64, to_f64, Rat};
use foprl_core::poly::Monomial;
use foprl_core::sos::{LinExpr, SOSProgram};

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Feasibility threshold on the minimized infeasibility t*.
    pub tol: f64,
    /// Tolerance for exact certificate verification.
    pub cert_tol: Rat,
    /// Denominator cap for continued-fraction rounding of multipliers.
    pub max_denom: u64,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-8,
            cert_tol: foprl_core::num::rat(1, 1_000_000),
            max_denom: 1_000_000,
            verbose: false,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Feasibility {
    Feasible {
        /// Values of the lifted moment variables at the returned point.
        moments: BTreeMap<Monomial, f64>,
        /// Minimized infeasibility t* (<= tol).
        max_violation: f64,
    },
    Infeasible {
        certificate: Certificate,
        /// Exact residual of the rounded certificate identity.
        residual: Rat,
        /// Whether the rounded certificate passed exact verification.
        verified: bool,
        /// Raw infeasibility level from the solver.
        tstar: f64,
    },
}

/// Column-sparse matrix accumulator (row-triplet input).
struct MatBuilder {
    nrows: usize,
    ncols: usize,
    trips: Vec<(usize, usize, f64)>,
}

impl MatBuilder {
    fn new(ncols: usize) -> Self {
        MatBuilder {
            nrows: 0,
            ncols,
            trips: Vec::new(),
        }
    }

    fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) -> usize {
        let r = self.nrows;
        for (c, v) in entries {
            if v != 0.0 {
                self.trips.push((c, r, v));
            }
        }
        self.nrows += 1;
        r
    }

    fn build(mut self) -> CscMatrix<f64> {
        self.trips.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut colptr = Vec::with_capacity(self.ncols + 1);
        let mut rowval = Vec::with_capacity(self.trips.len());
        let mut nzval = Vec::with_capacity(self.trips.len());
        let mut col = 0usize;
        colptr.push(0);
        for (c, r, v) in self.trips {
            while col < c {
                colptr.push(rowval.len());
                col += 1;
            }
            rowval.push(r);
            nzval.push(v);
        }
        while col < self.ncols {
            colptr.push(rowval.len());
            col += 1;
        }
        CscMatrix::new(self.nrows, self.ncols, colptr, rowval, nzval)
    }
}

fn settings(verbose: bool) -> DefaultSettings<f64> {
    DefaultSettings {
        verbose,
        ..DefaultSettings::default()
    }
}

/// Emits `s = expr(y) [+ t]` as one solver row: `b = const`,
/// `A[., y_k] = -coef`, `A[., t] = -1` when `with_t`.
fn expr_row(expr: &LinExpr, t_col: Option<usize>, scale: f64) -> (Vec<(usize, f64)>, f64) {
    let mut cols: Vec<(usize, f64)> = expr
        .coeffs
        .iter()
        .map(|(k, c)| (*k, -scale * to_f64(c)))
        .collect();
    if let Some(t) = t_col {
        cols.push((t, -scale));
    }
    (cols, scale * to_f64(&expr.constant))
}

/// Which dual entries belong to which program row.
enum DualMap {
    /// `rows[i]`, inequality: one nonnegative dual.
    Ineq(usize),
    /// `rows[i]`, equality split into (+expr+t, -expr+t): dual difference.
    EqPair(usize),
}

fn status_err(status: SolverStatus) -> Error {
    Error::Solver(format!("solver returned status {status:?}"))
}

/// Decides feasibility by minimizing the largest constraint violation t:
/// every PSD block becomes `M + tI`, every linear row is relaxed by t
/// (equalities via a +/- pair). The program is strictly feasible and
/// bounded, so the solve always terminates with an optimum; Infeasible is
/// declared when t* > tol and the dual furnishes the certificate.
pub fn solve_feasibility(prog: &SOSProgram, opts: &SolveOptions) -> Result<Feasibility> {
    let ny = prog.num_vars();
    let nvars = ny + 1;
    let t_col = ny;
    let mut a = MatBuilder::new(nvars);
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    let mut dual_map: Vec<DualMap> = Vec::new();

    let mut n_lin = 0usize;
    for (i, row) in prog.rows.iter().enumerate() {
        if row.equality {
            let (cols, c) = expr_row(&row.expr, Some(t_col), 1.0);
            a.push_row(cols);
            b.push(c);
            let (cols, c) = expr_row(&row.expr.neg(), Some(t_col), 1.0);
            a.push_row(cols);
            b.push(c);
            dual_map.push(DualMap::EqPair(i));
            n_lin += 2;
        } else {
            let (cols, c) = expr_row(&row.expr, Some(t_col), 1.0);
            a.push_row(cols);
            b.push(c);
            dual_map.push(DualMap::Ineq(i));
            n_lin += 1;
        }
    }
    if n_lin > 0 {
        cones.push(NonnegativeConeT(n_lin));
    }
    for block in &prog.blocks {
        let n = block.n();
        // svec upper triangle, column-major, off-diagonals scaled by sqrt(2)
        for j in 0..n {
            for i in 0..=j {
                let scale = if i == j { 1.0 } else { SQRT2 };
                let t = if i == j { Some(t_col) } else { None };
                let (cols, c) = expr_row(block.entry(i, j), t, scale);
                a.push_row(cols);
                b.push(c);
            }
        }
        cones.push(PSDTriangleConeT(n));
    }

    let mut q = vec![0.0; nvars];
    q[t_col] = 1.0;
    let p = CscMatrix::zeros((nvars, nvars));
    let a = a.build();
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings(opts.verbose))
        .map_err(|e| Error::Solver(format!("problem construction: {e:?}")))?;
    solver.solve();
    let status = solver.solution.status;
    if !matches!(status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
        return Err(status_err(status));
    }
    let x = &solver.solution.x;
    let tstar = x[t_col];
    if tstar <= opts.tol {
        let mut moments = BTreeMap::new();
        for (i, class) in prog.classes.iter().enumerate() {
            moments.insert(class.representative.clone(), x[i]);
        }
        return Ok(Feasibility::Feasible {
            moments,
            max_violation: tstar.max(0.0),
        });
    }

    // dual solution -> Eq. 1 multipliers; scaling by 1/t* turns the
    // stationarity identity (== -t*) into the certified -1 form
    let z = &solver.solution.z;
    let inv = 1.0 / tstar;
    let round = |v: f64| approx_f64(v, opts.max_denom);
    let build_cert = |round: &dyn Fn(f64) -> Rat| -> Certificate {
        let mut linear_terms = Vec::new();
        let mut pos = 0usize;
        for dm in &dual_map {
            match dm {
                DualMap::Ineq(i) => {
                    let v = z[pos] * inv;
                    pos += 1;
                    if v.abs() > 1e-12 {
                        let row = &prog.rows[*i];
                        linear_terms.push(LinearTerm {
                            label: row.label.clone(),
                            form: row.form.clone(),
                            equality: false,
                            value: round(v.max(0.0)),
                        });
                    }
                }
                DualMap::EqPair(i) => {
                    let v = (z[pos] - z[pos + 1]) * inv;
                    pos += 2;
                    if v.abs() > 1e-12 {
                        let row = &prog.rows[*i];
                        linear_terms.push(LinearTerm {
                            label: row.label.clone(),
                            form: row.form.clone(),
                            equality: true,
                            value: round(v),
                        });
                    }
                }
            }
        }
        let mut sos_terms = Vec::new();
        for block in &prog.blocks {
            let n = block.n();
            let mut m = RatMatrix::zero(n);
            let mut nonzero = false;
            for j in 0..n {
                for i in 0..=j {
                    let raw = z[pos];
                    pos += 1;
                    let v = if i == j { raw } else { raw / SQRT2 } * inv;
                    if v.abs() > 1e-12 {
                        nonzero = true;
                    }
                    m.set_sym(i, j, round(v));
                }
            }
            if nonzero {
                sos_terms.push(SosTerm {
                    label: block.label.clone(),
                    basis: block.basis.clone(),
                    matrix: m,
                    g: block.g.clone(),
                });
            }
        }
        Certificate {
            degree: prog.degree,
            sos_terms,
            linear_terms,
            target: Certificate::refutation_target(),
        }
    };

    let cert = build_cert(&round);
    let report = verify_certificate(&cert, &opts.cert_tol)
        .map_err(|e| Error::Solver(format!("certificate extraction: {e}")))?;
    if report.ok {
        return Ok(Feasibility::Infeasible {
            certificate: cert,
            residual: report.residual,
            verified: true,
            tstar,
        });
    }
    // rounding too aggressive: fall back to the exact binary rationals of
    // the floating-point duals and report their residual
    let exact = |v: f64| Rat::from_f64(v).unwrap_or_else(foprl_core::num::rat_zero);
    let cert = build_cert(&exact);
    let report = verify_certificate(&cert, &opts.cert_tol)
        .map_err(|e| Error::Solver(format!("certificate extraction: {e}")))?;
    Ok(Feasibility::Infeasible {
        certificate: cert,
        residual: report.residual,
        verified: report.ok,
        tstar,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Min,
    Max,
}

/// Optimizes a single lifted moment variable over the hard-constrained
/// program (no relaxation variable). Errors if the program is infeasible.
pub fn optimize_variable(prog: &SOSProgram, m: &Monomial, dir: Direction) -> Result<f64> {
    let nvars = prog.num_vars();
    let var = match prog.var_for(m) {
        Some(v) => v,
        None => {
            return Err(Error::Solver(format!(
                "monomial {m} has no moment variable in the program"
            )))
        }
    };
    let mut a = MatBuilder::new(nvars);
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    let mut n_eq = 0usize;
    for row in prog.rows.iter().filter(|r| r.equality) {
        let (cols, c) = expr_row(&row.expr, None, 1.0);
        a.push_row(cols);
        b.push(c);
        n_eq += 1;
    }
    if n_eq > 0 {
        cones.push(ZeroConeT(n_eq));
    }
    let mut n_in = 0usize;
    for row in prog.rows.iter().filter(|r| !r.equality) {
        let (cols, c) = expr_row(&row.expr, None, 1.0);
        a.push_row(cols);
        b.push(c);
        n_in += 1;
    }
    if n_in > 0 {
        cones.push(NonnegativeConeT(n_in));
    }
    for block in &prog.blocks {
        let n = block.n();
        for j in 0..n {
            for i in 0..=j {
                let scale = if i == j { 1.0 } else { SQRT2 };
                let (cols, c) = expr_row(block.entry(i, j), None, scale);
                a.push_row(cols);
                b.push(c);
            }
        }
        cones.push(PSDTriangleConeT(n));
    }

    let mut q = vec![0.0; nvars];
    q[var] = match dir {
        Direction::Min => 1.0,
        Direction::Max => -1.0,
    };
    let p = CscMatrix::zeros((nvars, nvars));
    let a = a.build();
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings(false))
        .map_err(|e| Error::Solver(format!("problem construction: {e:?}")))?;
    solver.solve();
    let status = solver.solution.status;
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(solver.solution.x[var]),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Err(
            Error::DataConflict("restricted system is infeasible".to_string()),
        ),
        other => Err(status_err(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use foprl_core::num::rat_int;
    use foprl_core::parse::parse_kb;
    use foprl_core::poly::BoundsTable;
    use foprl_core::sos::SOSProgram;

    fn boolean_table() -> BoundsTable {
        let mut t = BoundsTable::new();
        t.declare_atom_default(rat_int(0), rat_int(1));
        t
    }

    fn program(kb_text: &str) -> SOSProgram {
        let kb = parse_kb(kb_text).unwrap();
        let g = foprl_core::ground::ground(&kb, 0);
        let mut table = boolean_table();
        for c in g.logical() {
            crate::learner::mark_idempotents(c, &mut table);
        }
        let mut prog = SOSProgram::new(&g.atoms, 2, true).unwrap();
        prog.add_ground_set(&g).unwrap();
        prog.add_bound_rows(&table).unwrap();
        prog
    }

    #[test]
    fn contradictory_moment_rows_are_infeasible() {
        let prog = program("t(a)^2 = t(a)\nE[t(a)] >= 0.9\nE[t(a)] <= 0.5\n");
        match solve_feasibility(&prog, &SolveOptions::default()).unwrap() {
            Feasibility::Infeasible {
                verified, residual, ..
            } => {
                assert!(verified, "residual {residual}");
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn satisfiable_system_is_feasible() {
        let prog = program("t(a)^2 = t(a)\nE[t(a)] = 0.3\n");
        match solve_feasibility(&prog, &SolveOptions::default()).unwrap() {
            Feasibility::Feasible { moments, .. } => {
                let t = moments
                    .iter()
                    .find(|(m, _)| format!("{m}") == "t(a)")
                    .map(|(_, v)| *v)
                    .unwrap();
                assert!((t - 0.3).abs() < 1e-5, "e(t) = {t}");
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn degree_zero_refutation() {
        // x >= 0 and -x - 1 >= 0 clash linearly
        let prog = program("t(a) >= 0\n0 - t(a) >= 1\n");
        match solve_feasibility(&prog, &SolveOptions::default()).unwrap() {
            Feasibility::Infeasible { certificate, .. } => {
                assert!(!certificate.linear_terms.is_empty());
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn optimize_bounds_of_constrained_moment() {
        let prog = program("t(a)^2 = t(a)\nE[t(a)] >= 0.9\n");
        let m = foprl_core::poly::Monomial::atom(foprl_core::lang::Term::atom(
            "t",
            vec![foprl_core::lang::Name::Constant("a".into())],
        ));
        let lo = optimize_variable(&prog, &m, Direction::Min).unwrap();
        let hi = optimize_variable(&prog, &m, Direction::Max).unwrap();
        assert!((lo - 0.9).abs() < 1e-5, "min {lo}");
        assert!((hi - 1.0).abs() < 1e-5, "max {hi}");
    }
}
