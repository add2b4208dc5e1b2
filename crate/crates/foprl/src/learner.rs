//! The implicit-learning pipeline: per-example bound averaging, Hoeffding
//! slack, conditional-rule pre-phase, and the final world-lifted solve.

use std::collections::BTreeMap;

use foprl_core::cert::Certificate;
use foprl_core::ground::{ground, GroundConstraintSet};
use foprl_core::lang::{
    negate_query, BoundsPattern, Constraint, ExpectationConstraint, KnowledgeBase, PolyConstraint,
    Rel,
};
use foprl_core::num::{approx_f64, binom_sum, rat, Rat};
use foprl_core::poly::{BoundsTable, Monomial, PartialModel, Polynomial};
use foprl_core::sos::{RowKind, SOSProgram};

use crate::error::{Error, Result};
use crate::partial::{estimate_testability, is_idempotence, Bounder, TestabilityReport};
use crate::solver::{solve_feasibility, Feasibility, SolveOptions};

/// Which Hoeffding slack formula widens the learned intervals. The
/// algorithm's printed form and the textbook Hoeffding bound disagree;
/// both are computed and the default takes whichever is larger.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlackVariant {
    Printed,
    Textbook,
    Max,
}

impl SlackVariant {
    pub fn name(self) -> &'static str {
        match self {
            SlackVariant::Printed => "printed",
            SlackVariant::Textbook => "textbook",
            SlackVariant::Max => "max",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SlackReport {
    pub printed: f64,
    pub textbook: f64,
    pub used: f64,
    pub variant: SlackVariant,
}

/// Both slack variants with `C = sum_{i<=d} C(2n, i)`:
/// printed `S*sqrt(ln(C/delta))/(2m)`, textbook `S*sqrt(ln(2C/delta)/(2m))`.
pub fn hoeffding_slack(
    s: f64,
    delta: f64,
    m: usize,
    n_atoms: usize,
    d: u32,
    variant: SlackVariant,
) -> SlackReport {
    let c = binom_sum(2 * n_atoms, d as usize);
    let m = m as f64;
    let printed = s * (c / delta).ln().max(0.0).sqrt() / (2.0 * m);
    let textbook = s * ((2.0 * c / delta).ln().max(0.0) / (2.0 * m)).sqrt();
    let used = match variant {
        SlackVariant::Printed => printed,
        SlackVariant::Textbook => textbook,
        SlackVariant::Max => printed.max(textbook),
    };
    SlackReport {
        printed,
        textbook,
        used,
        variant,
    }
}

#[derive(Clone, Debug)]
pub struct LearnerConfig {
    pub degree: u32,
    /// Grounding width; defaults to the quantifier rank (query included).
    pub rank: Option<usize>,
    pub delta: f64,
    /// Naive-norm proof-size bound S.
    pub norm_bound: f64,
    pub eps_query: Rat,
    pub slack_variant: SlackVariant,
    pub solve: SolveOptions,
    /// Compute per-constraint witnessing statistics (costs one bound
    /// computation per constraint monomial per example).
    pub witnessing_stats: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            degree: 2,
            rank: None,
            delta: 0.01,
            norm_bound: 1.0,
            eps_query: rat(1, 1_000_000),
            slack_variant: SlackVariant::Max,
            solve: SolveOptions::default(),
            witnessing_stats: true,
        }
    }
}

/// Marks the atom of an `x^a = x^b` constraint idempotent in the table.
pub fn mark_idempotents(c: &PolyConstraint, table: &mut BoundsTable) {
    if let Some(atom) = is_idempotence(c) {
        table.mark_idempotent(atom.clone());
    }
}

/// Bounds table from the KB's declarations plus idempotence marks found
/// in the ground constraint set.
pub fn build_bounds_table(kb: &KnowledgeBase, g: &GroundConstraintSet) -> Result<BoundsTable> {
    let mut table = BoundsTable::new();
    for decl in &kb.bounds {
        match &decl.pattern {
            BoundsPattern::AllAtoms => table.declare_atom_default(decl.lo.clone(), decl.hi.clone()),
            BoundsPattern::Pattern(m) => {
                // instantiate generically-named patterns across the universe
                table
                    .declare(m.clone(), decl.lo.clone(), decl.hi.clone())
                    .map_err(|e| Error::Usage(format!("bounds declaration: {e:?}")))?;
            }
        }
    }
    for c in g.logical() {
        mark_idempotents(c, &mut table);
    }
    Ok(table)
}

/// Averaged per-example moment bounds for every lift class representative.
#[derive(Clone, Debug)]
pub struct MomentIntervalTable {
    /// (representative, averaged lower, averaged upper), pre-widening.
    pub rows: Vec<(Monomial, f64, f64)>,
    pub slack: SlackReport,
    pub m: usize,
}

/// Algorithm core: one tightest-bounds computation per (class, example),
/// averaged per class and clamped to the global bounds.
pub fn learn_moment_bounds(
    data: &[PartialModel],
    g: &GroundConstraintSet,
    classes: &[foprl_core::ground::LiftClass],
    table: &BoundsTable,
    cfg: &LearnerConfig,
) -> Result<MomentIntervalTable> {
    if data.is_empty() {
        return Err(Error::Usage("learning requires at least one example".into()));
    }
    let bounder = Bounder::new(g, table, cfg.degree);
    let m = data.len();
    let distinct = crate::partial::dedupe_examples(data);
    let mut rows = Vec::with_capacity(classes.len());
    for class in classes {
        let rep = &class.representative;
        let mut lo_sum = 0.0;
        let mut hi_sum = 0.0;
        for (rho, weight) in &distinct {
            let (lo, hi) = bounder.tightest_bounds(rep, rho)?;
            lo_sum += lo * *weight as f64;
            hi_sum += hi * *weight as f64;
        }
        let (lo, hi) =
            crate::partial::clamp_to_global(table, rep, lo_sum / m as f64, hi_sum / m as f64);
        rows.push((rep.clone(), lo, hi));
    }
    let slack = hoeffding_slack(
        cfg.norm_bound,
        cfg.delta,
        m,
        g.atoms.len(),
        cfg.degree,
        cfg.slack_variant,
    );
    Ok(MomentIntervalTable { rows, slack, m })
}

fn add_learned_rows(
    prog: &mut SOSProgram,
    learned: &MomentIntervalTable,
    max_denom: u64,
) -> Result<()> {
    let widen = learned.slack.used;
    for (rep, lo, hi) in &learned.rows {
        let p = Polynomial::from_monomial(rep.clone(), foprl_core::num::rat_one());
        let lo = approx_f64(lo - widen, max_denom);
        let hi = approx_f64(hi + widen, max_denom);
        prog.add_moment_row(
            format!("learned: E[{rep}] >= {}", foprl_core::num::fmt_rat(&lo)),
            RowKind::Learned,
            &p,
            Rel::Ge,
            &lo,
        )
        .map_err(|e| Error::Solver(e.to_string()))?;
        prog.add_moment_row(
            format!("learned: E[{rep}] <= {}", foprl_core::num::fmt_rat(&hi)),
            RowKind::Learned,
            &p,
            Rel::Le,
            &hi,
        )
        .map_err(|e| Error::Solver(e.to_string()))?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Consistent,
    Refuted,
}

#[derive(Clone, Debug)]
pub struct DecideReport {
    pub verdict: Verdict,
    pub certificate: Option<Certificate>,
    pub residual: Option<Rat>,
    pub cert_verified: Option<bool>,
    pub learned: Option<MomentIntervalTable>,
    pub witnessing: Option<TestabilityReport>,
    /// Conclusions added by the conditional-rule pre-phase.
    pub conclusions_applied: Vec<String>,
    /// Premises that could not be established (conclusion left out).
    pub premises_open: Vec<String>,
    pub atoms: usize,
    pub lift_classes: usize,
    pub rows: usize,
    pub max_violation: Option<f64>,
}

fn map_assemble(e: foprl_core::sos::AssembleError) -> Error {
    Error::Usage(e.to_string())
}

/// Tries to establish a ground premise by refuting its negation against
/// the base program; returns true when every negation attempt is refuted
/// with a verified certificate.
fn premise_proven(
    base: &SOSProgram,
    premise: &ExpectationConstraint,
    universe: &[foprl_core::lang::Name],
    cfg: &LearnerConfig,
) -> Result<bool> {
    let attempts = match negate_query(
        &Constraint::Expectation(premise.clone()),
        universe,
        &cfg.eps_query,
    ) {
        Ok(a) => a,
        Err(_) => return Ok(false),
    };
    for attempt in attempts {
        let mut prog = base.clone();
        for c in attempt {
            if let Constraint::Expectation(e) = c {
                prog.add_moment_row(
                    format!("negated premise: {e}"),
                    RowKind::Query,
                    &e.combo,
                    e.rel,
                    &e.rhs,
                )
                .map_err(map_assemble)?;
            }
        }
        match solve_feasibility(&prog, &cfg.solve)? {
            Feasibility::Infeasible { verified: true, .. } => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

/// Decides consistency of `kb` plus the `extra` constraints (typically a
/// query or a negated-query attempt) against the data, per the implicit
/// learning pipeline: ground, lift, learn interval rows, run the
/// conditional pre-phase, then solve one lifted SOS feasibility program.
pub fn decide_consistency(
    kb: &KnowledgeBase,
    extra: &[Constraint],
    data: &[PartialModel],
    cfg: &LearnerConfig,
) -> Result<DecideReport> {
    let mut kb = kb.clone();
    kb.constraints.extend(extra.iter().cloned());
    let k = cfg.rank.unwrap_or_else(|| kb.quantifier_rank());
    let g = ground(&kb, k);
    if g.atoms.is_empty() {
        return Err(Error::Usage("grounded knowledge base has no atoms".into()));
    }
    let table = build_bounds_table(&kb, &g)?;

    let mut prog =
        SOSProgram::new(&g.atoms, cfg.degree, true).map_err(map_assemble)?;
    prog.add_ground_set(&g).map_err(map_assemble)?;
    prog.add_bound_rows(&table).map_err(map_assemble)?;

    let mut learned = None;
    let mut witnessing = None;
    if !data.is_empty() {
        let classes = prog.classes.clone();
        let li = learn_moment_bounds(data, &g, &classes, &table, cfg)?;
        add_learned_rows(&mut prog, &li, cfg.solve.max_denom)?;
        learned = Some(li);
        if cfg.witnessing_stats {
            let bounder = Bounder::new(&g, &table, cfg.degree);
            let logical: Vec<PolyConstraint> = g.logical().cloned().collect();
            witnessing = Some(estimate_testability(&logical, data, &bounder)?);
        }
    }

    // conditional rules: premise provable from the current program
    // (refute its negation) => conclusion joins the ground set
    let mut conclusions_applied = Vec::new();
    let mut premises_open = Vec::new();
    let base = prog.clone();
    for cond in &g.conditionals {
        if premise_proven(&base, &cond.premise, &g.universe, cfg)? {
            prog.add_logical(
                &g.atoms,
                format!("conclusion: {}", cond.conclusion),
                &cond.conclusion,
            )
            .map_err(map_assemble)?;
            conclusions_applied.push(cond.conclusion.to_string());
        } else {
            premises_open.push(cond.premise.to_string());
        }
    }

    let atoms = g.atoms.len();
    let lift_classes = prog.num_vars();
    let rows = prog.rows.len();
    match solve_feasibility(&prog, &cfg.solve)? {
        Feasibility::Feasible { max_violation, .. } => Ok(DecideReport {
            verdict: Verdict::Consistent,
            certificate: None,
            residual: None,
            cert_verified: None,
            learned,
            witnessing,
            conclusions_applied,
            premises_open,
            atoms,
            lift_classes,
            rows,
            max_violation: Some(max_violation),
        }),
        Feasibility::Infeasible {
            certificate,
            residual,
            verified,
            ..
        } => Ok(DecideReport {
            verdict: Verdict::Refuted,
            certificate: Some(certificate),
            residual: Some(residual),
            cert_verified: Some(verified),
            learned,
            witnessing,
            conclusions_applied,
            premises_open,
            atoms,
            lift_classes,
            rows,
            max_violation: None,
        }),
    }
}

/// Prove-mode driver: negates the query and checks that every negation
/// attempt is refuted. Returns (proven, per-attempt reports).
pub fn prove_query(
    kb: &KnowledgeBase,
    query: &Constraint,
    data: &[PartialModel],
    cfg: &LearnerConfig,
) -> Result<(bool, Vec<DecideReport>)> {
    let k = cfg
        .rank
        .unwrap_or_else(|| kb.quantifier_rank().max(query.distinct_variable_count()));
    let probe = {
        let mut kb2 = kb.clone();
        kb2.constraints.push(query.clone());
        ground(&kb2, k)
    };
    let attempts = negate_query(query, &probe.universe, &cfg.eps_query)
        .map_err(|e| Error::Usage(e.to_string()))?;
    let mut reports = Vec::new();
    let mut proven = true;
    for attempt in attempts {
        let report = decide_consistency(kb, &attempt, data, cfg)?;
        if report.verdict != Verdict::Refuted {
            proven = false;
        }
        reports.push(report);
    }
    Ok((proven, reports))
}

/// Mean of a monomial's exact values under a fully observed dataset
/// (diagnostics; learning reduces to this when nothing is masked).
pub fn empirical_mean(v: &Monomial, data: &[PartialModel]) -> Option<f64> {
    let mut sum = 0.0;
    for rho in data {
        let values: BTreeMap<_, _> = rho
            .observed()
            .map(|(t, r)| (t.clone(), r.clone()))
            .collect();
        let p = Polynomial::from_monomial(v.clone(), foprl_core::num::rat_one());
        sum += foprl_core::num::to_f64(&p.evaluate(&values)?);
    }
    Some(sum / data.len() as f64)
}
