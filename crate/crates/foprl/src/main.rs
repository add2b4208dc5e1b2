//! Command-line entry point: parse, ground, lift, simulate, learn, decide,
//! oracle, verify-cert. Every subcommand emits a schema-1 JSON report with
//! sorted keys; all randomness funnels through `--seed`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use foprl::error::{Error, Result};
use foprl::learner::{
    build_bounds_table, decide_consistency, learn_moment_bounds, prove_query, DecideReport,
    LearnerConfig, SlackVariant, Verdict,
};
use foprl::oracle::{brute_force_consistency, OracleVerdict, ValueGrid};
use foprl::partial::{kb_signature, load_mixture, load_partial_models, simulate, MaskSpec};
use foprl_core::poly::PartialModel;
use foprl::report::{cert_from_json, cert_to_json, json_f64, new_report};
use foprl_core::cert::verify_certificate;
use foprl_core::ground::{equivalence_classes, ground, monomials_up_to_degree};
use foprl_core::lang::{Constraint, KnowledgeBase};
use foprl_core::num::{fmt_rat, to_f64, Rat};
use foprl_core::parse::{parse_constraint, parse_kb};

#[derive(Parser)]
#[command(
    name = "foprl",
    about = "Implicit learning to reason over first-order relational probabilistic logic",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and validate a knowledge base; echo its normal form.
    Parse(ParseArgs),
    /// Ground the knowledge base and report the lift-class table.
    Ground(GroundArgs),
    /// Report the moment lift classes up to a degree bound.
    Lift(GroundArgs),
    /// Draw partially observed examples from a world mixture.
    Simulate(SimulateArgs),
    /// Learn averaged moment bounds from partially observed examples.
    Learn(DecideArgs),
    /// Decide consistency of the KB (plus optional query) against data.
    Decide(DecideArgs),
    /// Brute-force ground truth for small instances.
    Oracle(DecideArgs),
    /// Verify a refutation certificate exactly.
    VerifyCert(VerifyCertArgs),
}

#[derive(Args)]
struct ParseArgs {
    /// Knowledge-base file.
    #[arg(long)]
    kb: PathBuf,
    /// Report destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GroundArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Grounding width k (defaults to the quantifier rank).
    #[arg(long)]
    rank: Option<usize>,
    /// Moment degree bound for the lift-class table.
    #[arg(long, default_value_t = 2)]
    degree: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// World-mixture file (JSON lines, each world carries `prob`).
    #[arg(long)]
    mixture: PathBuf,
    /// Default per-atom masking probability.
    #[arg(long, default_value_t = 0.0)]
    mask: f64,
    /// Per-predicate masking override, `pred=prob` (repeatable).
    #[arg(long = "mask-pred")]
    mask_pred: Vec<String>,
    /// Number of examples to draw.
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination for the drawn examples (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Report destination (stdout when omitted).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DecideArgs {
    #[arg(long)]
    kb: PathBuf,
    /// Partially observed examples (JSON lines); omit for pure inference.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Query constraint, e.g. "forall d : second_stage(d) = 1".
    #[arg(long)]
    query: Option<String>,
    /// Prove the query by refuting its negation instead of testing
    /// consistency of KB + query.
    #[arg(long)]
    prove: bool,
    /// SOS degree bound d (even).
    #[arg(long, default_value_t = 2)]
    degree: u32,
    /// Grounding width k (defaults to the quantifier rank).
    #[arg(long)]
    rank: Option<usize>,
    /// Hoeffding confidence parameter.
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Naive-norm proof-size bound S.
    #[arg(long = "norm-bound", default_value_t = 1.0)]
    norm_bound: f64,
    /// Margin used when negating non-strict queries.
    #[arg(long = "eps-query", default_value_t = 1e-6)]
    eps_query: f64,
    /// Feasibility threshold on the minimized infeasibility.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Tolerance for exact certificate verification.
    #[arg(long = "cert-tol", default_value_t = 1e-6)]
    cert_tol: f64,
    /// Slack formula: printed | textbook | max.
    #[arg(long = "slack-variant", default_value = "max")]
    slack_variant: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker cap (also via SOSR_THREADS); solving is sequential today.
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated candidate-name pool: re-run over every size-k
    /// subset and report per-grounding verdicts.
    #[arg(long = "sweep-groundings")]
    sweep_groundings: Option<String>,
    /// Grid points per unit interval for the brute-force oracle.
    #[arg(long = "grid-resolution", default_value_t = 1)]
    grid_resolution: usize,
    /// Include wall-clock timings (breaks byte-identical reproducibility).
    #[arg(long)]
    timings: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyCertArgs {
    /// Certificate JSON emitted by `decide`.
    #[arg(long)]
    cert: PathBuf,
    /// Optional knowledge base, echoed for provenance; certificates are
    /// self-contained and verify without it.
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Verification tolerance (PSD shift and residual).
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap's own exit code for usage errors is 2; the contract
            // reserves 2 for data conflicts, so remap usage errors to 1
            if e.use_stderr() {
                eprint!("{e}");
                std::process::exit(1);
            }
            // --help / --version
            print!("{e}");
            std::process::exit(0);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Parse(a) => cmd_parse(&a),
        Cmd::Ground(a) => cmd_ground(&a, false),
        Cmd::Lift(a) => cmd_ground(&a, true),
        Cmd::Simulate(a) => cmd_simulate(&a),
        Cmd::Learn(a) => cmd_learn(&a),
        Cmd::Decide(a) => cmd_decide(&a),
        Cmd::Oracle(a) => cmd_oracle(&a),
        Cmd::VerifyCert(a) => cmd_verify_cert(&a),
    }
}

fn load_kb(path: &Path) -> Result<KnowledgeBase> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_kb(&text)?)
}

fn emit(report: Map<String, Value>, out: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(&Value::Object(report))
        .map_err(|e| Error::Usage(e.to_string()))?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_parse(a: &ParseArgs) -> Result<()> {
    let kb = load_kb(&a.kb)?;
    let mut r = new_report("parse");
    r.insert("constants".into(), json!(kb.constants));
    r.insert("constraint_count".into(), json!(kb.constraints.len()));
    r.insert("bounds_decl_count".into(), json!(kb.bounds.len()));
    r.insert("quantifier_rank".into(), json!(kb.quantifier_rank()));
    r.insert("normal_form".into(), json!(kb.render()));
    r.insert(
        "signature".into(),
        json!(kb_signature(&kb)
            .into_iter()
            .map(|(p, n)| json!({ "predicate": p, "arity": n }))
            .collect::<Vec<_>>()),
    );
    emit(r, a.out.as_ref())
}

fn cmd_ground(a: &GroundArgs, lift_only: bool) -> Result<()> {
    let kb = load_kb(&a.kb)?;
    let k = a.rank.unwrap_or_else(|| kb.quantifier_rank());
    let g = ground(&kb, k);
    let classes = equivalence_classes(
        monomials_up_to_degree(&g.atoms, a.degree)
            .into_iter()
            .filter(|m| !m.is_one()),
    );
    let class_table: Vec<Value> = classes
        .iter()
        .map(|c| {
            json!({
                "representative": c.representative.to_string(),
                "members": c.members.iter().map(|m| m.to_string()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let mut r = new_report(if lift_only { "lift" } else { "ground" });
    r.insert("rank".into(), json!(k));
    r.insert("degree".into(), json!(a.degree));
    r.insert(
        "universe".into(),
        json!(g.universe.iter().map(|n| n.to_string()).collect::<Vec<_>>()),
    );
    r.insert(
        "atoms".into(),
        json!(g.atoms.iter().map(|t| t.to_string()).collect::<Vec<_>>()),
    );
    r.insert("lift_classes".into(), Value::Array(class_table));
    if !lift_only {
        r.insert(
            "constraints".into(),
            json!(g
                .constraints
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()),
        );
        r.insert(
            "conditionals".into(),
            json!(g
                .conditionals
                .iter()
                .map(|c| format!("if {} then {}", c.premise, c.conclusion))
                .collect::<Vec<_>>()),
        );
    }
    emit(r, a.out.as_ref())
}

fn parse_mask_spec(default_prob: f64, per_pred: &[String]) -> Result<MaskSpec> {
    let mut spec = MaskSpec {
        default_prob,
        ..MaskSpec::default()
    };
    for entry in per_pred {
        let (pred, p) = entry
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--mask-pred expects pred=prob, got '{entry}'")))?;
        let p: f64 = p
            .parse()
            .map_err(|_| Error::Usage(format!("bad masking probability '{p}'")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Usage(format!("masking probability {p} outside [0,1]")));
        }
        spec.per_pred.insert(pred.trim().to_string(), p);
    }
    Ok(spec)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.mask) {
        return Err(Error::Usage(format!("--mask {} outside [0,1]", a.mask)));
    }
    let mix = load_mixture(&a.mixture)?;
    let spec = parse_mask_spec(a.mask, &a.mask_pred)?;
    let data = simulate(&mix, &spec, a.m, a.seed)?;
    // hidden atoms are emitted explicitly as null so readers see the
    // full signature on every line
    let atoms: std::collections::BTreeSet<_> = mix
        .worlds
        .iter()
        .flat_map(|(_, w)| w.keys().cloned())
        .collect();
    let mut lines = String::new();
    let mut hidden = 0usize;
    let mut total = 0usize;
    for rho in &data {
        let mut obj = Map::new();
        for atom in &atoms {
            total += 1;
            match rho.get(atom) {
                Some(v) => {
                    obj.insert(atom.to_string(), rational_value(v));
                }
                None => {
                    hidden += 1;
                    obj.insert(atom.to_string(), Value::Null);
                }
            }
        }
        lines.push_str(&serde_json::to_string(&Value::Object(obj)).unwrap());
        lines.push('\n');
    }
    std::fs::write(&a.out, lines)?;
    let mut r = new_report("simulate");
    r.insert("m".into(), json!(a.m));
    r.insert("seed".into(), json!(a.seed));
    r.insert("mask".into(), json_f64(a.mask));
    r.insert("out".into(), json!(a.out.display().to_string()));
    r.insert(
        "hidden_fraction".into(),
        json_f64(if total == 0 { 0.0 } else { hidden as f64 / total as f64 }),
    );
    emit(r, a.report.as_ref())
}

/// Rationals that are exactly representable print as numbers, the rest as
/// strings, so data files stay exact.
fn rational_value(v: &Rat) -> Value {
    let f = to_f64(v);
    if Rat::from_float(f).as_ref() == Some(v) {
        json_f64(f)
    } else {
        json!(fmt_rat(v))
    }
}

fn learner_config(a: &DecideArgs) -> Result<LearnerConfig> {
    let slack_variant = match a.slack_variant.as_str() {
        "printed" => SlackVariant::Printed,
        "textbook" => SlackVariant::Textbook,
        "max" => SlackVariant::Max,
        other => {
            return Err(Error::Usage(format!(
                "unknown slack variant '{other}' (expected printed | textbook | max)"
            )))
        }
    };
    let eps_query = Rat::from_float(a.eps_query)
        .ok_or_else(|| Error::Usage("bad --eps-query".into()))?;
    let cert_tol = Rat::from_float(a.cert_tol)
        .ok_or_else(|| Error::Usage("bad --cert-tol".into()))?;
    let mut cfg = LearnerConfig {
        degree: a.degree,
        rank: a.rank,
        delta: a.delta,
        norm_bound: a.norm_bound,
        eps_query,
        slack_variant,
        ..LearnerConfig::default()
    };
    cfg.solve.tol = a.tol;
    cfg.solve.cert_tol = cert_tol;
    Ok(cfg)
}

fn effective_threads(a: &DecideArgs) -> usize {
    a.threads
        .or_else(|| {
            std::env::var("SOSR_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(1)
        .max(1)
}

fn load_data(a: &DecideArgs, kb: &KnowledgeBase, k: usize) -> Result<Vec<PartialModel>> {
    match &a.data {
        None => Ok(Vec::new()),
        Some(path) => {
            let g = ground(kb, k);
            let table = build_bounds_table(kb, &g)?;
            load_partial_models(path, &kb_signature(kb), &table)
        }
    }
}

fn parse_query(a: &DecideArgs) -> Result<Option<Constraint>> {
    match &a.query {
        None => Ok(None),
        Some(q) => Ok(Some(parse_constraint(q)?)),
    }
}

fn config_echo(a: &DecideArgs, cfg: &LearnerConfig, k: usize) -> Value {
    json!({
        "cert_tol": json_f64(a.cert_tol),
        "degree": cfg.degree,
        "delta": json_f64(cfg.delta),
        "eps_query": json_f64(a.eps_query),
        "norm_bound": json_f64(cfg.norm_bound),
        "rank": k,
        "seed": a.seed,
        "slack_variant": cfg.slack_variant.name(),
        "threads": effective_threads(a),
        "tol": json_f64(a.tol),
    })
}

fn decide_report_json(rep: &DecideReport) -> Map<String, Value> {
    let mut r = Map::new();
    r.insert(
        "verdict".into(),
        json!(match rep.verdict {
            Verdict::Consistent => "Consistent",
            Verdict::Refuted => "Refuted",
        }),
    );
    if let Some(cert) = &rep.certificate {
        r.insert("certificate".into(), cert_to_json(cert));
    }
    if let Some(res) = &rep.residual {
        r.insert("residual".into(), json!(fmt_rat(res)));
        r.insert("residual_float".into(), json_f64(to_f64(res)));
    }
    if let Some(v) = rep.cert_verified {
        r.insert("cert_verified".into(), json!(v));
    }
    if let Some(learned) = &rep.learned {
        let rows: Vec<Value> = learned
            .rows
            .iter()
            .map(|(m, lo, hi)| {
                json!({
                    "monomial": m.to_string(),
                    "lower": json_f64(*lo),
                    "upper": json_f64(*hi),
                })
            })
            .collect();
        r.insert("learned_bounds".into(), Value::Array(rows));
        r.insert(
            "slack".into(),
            json!({
                "printed": json_f64(learned.slack.printed),
                "textbook": json_f64(learned.slack.textbook),
                "used": json_f64(learned.slack.used),
                "variant": learned.slack.variant.name(),
            }),
        );
        r.insert("m".into(), json!(learned.m));
    }
    if let Some(w) = &rep.witnessing {
        r.insert(
            "witnessing".into(),
            json!({
                "joint": json_f64(w.joint),
                "per_constraint": w
                    .per_constraint
                    .iter()
                    .map(|(c, f)| json!({ "constraint": c, "fraction": json_f64(*f) }))
                    .collect::<Vec<_>>(),
            }),
        );
    }
    r.insert("conclusions_applied".into(), json!(rep.conclusions_applied));
    r.insert("premises_open".into(), json!(rep.premises_open));
    r.insert("atoms".into(), json!(rep.atoms));
    r.insert("lift_classes".into(), json!(rep.lift_classes));
    r.insert("rows".into(), json!(rep.rows));
    if let Some(v) = rep.max_violation {
        r.insert("max_violation".into(), json_f64(v));
    }
    r
}

fn cmd_learn(a: &DecideArgs) -> Result<()> {
    let kb = load_kb(&a.kb)?;
    let cfg = learner_config(a)?;
    let k = a.rank.unwrap_or_else(|| kb.quantifier_rank());
    let data = load_data(a, &kb, k)?;
    if data.is_empty() {
        return Err(Error::Usage("learn requires --data".into()));
    }
    let g = ground(&kb, k);
    let table = build_bounds_table(&kb, &g)?;
    let classes = equivalence_classes(
        monomials_up_to_degree(&g.atoms, cfg.degree)
            .into_iter()
            .filter(|m| !m.is_one()),
    );
    let learned = learn_moment_bounds(&data, &g, &classes, &table, &cfg)?;
    let mut r = new_report("learn");
    r.insert("config".into(), config_echo(a, &cfg, k));
    r.insert("m".into(), json!(learned.m));
    let rows: Vec<Value> = learned
        .rows
        .iter()
        .map(|(m, lo, hi)| {
            json!({
                "monomial": m.to_string(),
                "lower": json_f64(*lo),
                "upper": json_f64(*hi),
            })
        })
        .collect();
    r.insert("learned_bounds".into(), Value::Array(rows));
    r.insert(
        "slack".into(),
        json!({
            "printed": json_f64(learned.slack.printed),
            "textbook": json_f64(learned.slack.textbook),
            "used": json_f64(learned.slack.used),
            "variant": learned.slack.variant.name(),
        }),
    );
    emit(r, a.out.as_ref())
}

fn subsets(pool: &[String], k: usize) -> Vec<Vec<String>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if pool.len() < k {
        return Vec::new();
    }
    let mut out = Vec::new();
    let head = &pool[0];
    for mut rest in subsets(&pool[1..], k - 1) {
        rest.insert(0, head.clone());
        out.push(rest);
    }
    out.extend(subsets(&pool[1..], k));
    out
}

fn cmd_decide(a: &DecideArgs) -> Result<()> {
    let start = Instant::now();
    let kb = load_kb(&a.kb)?;
    let cfg = learner_config(a)?;
    let query = parse_query(a)?;
    let k = a.rank.unwrap_or_else(|| {
        kb.quantifier_rank().max(
            query
                .as_ref()
                .map(|q| q.distinct_variable_count())
                .unwrap_or(0),
        )
    });
    let data = load_data(a, &kb, k)?;

    let mut r = new_report("decide");
    r.insert("config".into(), config_echo(a, &cfg, k));
    if let Some(q) = &a.query {
        r.insert("query".into(), json!(q));
    }

    if let Some(pool) = &a.sweep_groundings {
        let names: Vec<String> = pool
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let mut sweeps = Vec::new();
        for subset in subsets(&names, k) {
            let mut kb2 = kb.clone();
            for n in &subset {
                if !kb2.constants.contains(n) {
                    kb2.constants.push(n.clone());
                }
            }
            let rep = run_decide(&kb2, query.as_ref(), a.prove, &data, &cfg)?;
            sweeps.push(json!({
                "grounding": subset,
                "report": Value::Object(rep),
            }));
        }
        r.insert("sweep".into(), Value::Array(sweeps));
    } else {
        let rep = run_decide(&kb, query.as_ref(), a.prove, &data, &cfg)?;
        r.extend(rep);
    }
    if a.timings {
        r.insert(
            "timings".into(),
            json!({ "total_seconds": json_f64(start.elapsed().as_secs_f64()) }),
        );
    }
    emit(r, a.out.as_ref())
}

fn run_decide(
    kb: &KnowledgeBase,
    query: Option<&Constraint>,
    prove: bool,
    data: &[PartialModel],
    cfg: &LearnerConfig,
) -> Result<Map<String, Value>> {
    if prove {
        let q = query.ok_or_else(|| Error::Usage("--prove requires --query".into()))?;
        let (proven, attempts) = prove_query(kb, q, data, cfg)?;
        let mut r = Map::new();
        r.insert("proven".into(), json!(proven));
        r.insert(
            "verdict".into(),
            json!(if proven { "Proven" } else { "Open" }),
        );
        r.insert(
            "negation_attempts".into(),
            Value::Array(
                attempts
                    .iter()
                    .map(|rep| Value::Object(decide_report_json(rep)))
                    .collect(),
            ),
        );
        Ok(r)
    } else {
        let extra: Vec<Constraint> = query.cloned().into_iter().collect();
        let rep = decide_consistency(kb, &extra, data, cfg)?;
        Ok(decide_report_json(&rep))
    }
}

fn cmd_oracle(a: &DecideArgs) -> Result<()> {
    let kb = load_kb(&a.kb)?;
    let query = parse_query(a)?;
    let mut kb2 = kb.clone();
    if let Some(q) = &query {
        kb2.constraints.push(q.clone());
    }
    let k = a.rank.unwrap_or_else(|| kb2.quantifier_rank());
    let g = ground(&kb2, k);
    let table = build_bounds_table(&kb2, &g)?;
    let grid = ValueGrid::build(g.atoms.iter().cloned(), &table, a.grid_resolution)?;
    let verdict = brute_force_consistency(&g, &grid)?;
    let mut r = new_report("oracle");
    r.insert("rank".into(), json!(k));
    r.insert("grid_resolution".into(), json!(a.grid_resolution));
    if let Some(q) = &a.query {
        r.insert("query".into(), json!(q));
    }
    match verdict {
        OracleVerdict::Satisfiable(dist) => {
            r.insert("verdict".into(), json!("Satisfiable"));
            r.insert(
                "distribution".into(),
                Value::Array(
                    dist.iter()
                        .map(|(w, p)| json!({ "probability": json_f64(*p), "world": w }))
                        .collect(),
                ),
            );
        }
        OracleVerdict::Unsatisfiable => {
            r.insert("verdict".into(), json!("Unsatisfiable"));
        }
    }
    emit(r, a.out.as_ref())
}

fn cmd_verify_cert(a: &VerifyCertArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.cert)?;
    let v: Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("certificate JSON: {e}")))?;
    let cert = cert_from_json(&v)?;
    let tol = Rat::from_float(a.tol).ok_or_else(|| Error::Usage("bad --tol".into()))?;
    let report =
        verify_certificate(&cert, &tol).map_err(|e| Error::Parse(format!("certificate: {e:?}")))?;
    let mut r = new_report("verify-cert");
    if let Some(kb) = &a.kb {
        r.insert("kb".into(), json!(kb.display().to_string()));
    }
    r.insert("verified".into(), json!(report.ok));
    r.insert("psd_ok".into(), json!(report.psd_ok));
    r.insert("signs_ok".into(), json!(report.signs_ok));
    r.insert("residual".into(), json!(fmt_rat(&report.residual)));
    r.insert("residual_float".into(), json_f64(to_f64(&report.residual)));
    r.insert("tol".into(), json_f64(a.tol));
    r.insert("failures".into(), json!(report.failures));
    emit(r, a.out.as_ref())
}
