//! Constraint language: names, terms, equality guards, and the three
//! constraint forms (logical, expectation, conditional).

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::num::{fmt_rat, Rat};
use crate::poly::{Monomial, Polynomial};

/// A domain element: a constant fixed by every renaming substitution, or a
/// generic name (rendered `g1`, `g2`, ...) that renamings permute freely.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Name {
    Constant(String),
    Generic(usize),
}

impl Name {
    pub fn is_generic(&self) -> bool {
        matches!(self, Name::Generic(_))
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Name::Constant(s) => write!(f, "{s}"),
            Name::Generic(i) => write!(f, "g{i}"),
        }
    }
}

/// Argument of a term: a quantified variable or a name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arg {
    Var(String),
    Name(Name),
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Var(v) => write!(f, "{v}"),
            Arg::Name(n) => write!(f, "{n}"),
        }
    }
}

/// A relational symbol applied to arguments. When every argument is a name
/// the term is an atom (a member of ATOMS).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Term {
    pub pred: String,
    pub args: Vec<Arg>,
}

impl Term {
    pub fn new(pred: impl Into<String>, args: Vec<Arg>) -> Self {
        Term { pred: pred.into(), args }
    }

    pub fn atom(pred: impl Into<String>, names: Vec<Name>) -> Self {
        Term {
            pred: pred.into(),
            args: names.into_iter().map(Arg::Name).collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn is_atom(&self) -> bool {
        self.args.iter().all(|a| matches!(a, Arg::Name(_)))
    }

    pub fn variables(&self) -> impl Iterator<Item = &String> {
        self.args.iter().filter_map(|a| match a {
            Arg::Var(v) => Some(v),
            Arg::Name(_) => None,
        })
    }

    /// Applies a variable substitution.
    pub fn substitute(&self, theta: &[(String, Name)]) -> Term {
        Term {
            pred: self.pred.clone(),
            args: self
                .args
                .iter()
                .map(|a| match a {
                    Arg::Var(v) => match theta.iter().find(|(u, _)| u == v) {
                        Some((_, n)) => Arg::Name(n.clone()),
                        None => a.clone(),
                    },
                    Arg::Name(_) => a.clone(),
                })
                .collect(),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.pred)?;
        for (i, a) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Boolean combination of equalities over variables and constants.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EqualityExpr {
    True,
    Eq(Arg, Arg),
    Not(Box<EqualityExpr>),
    And(Vec<EqualityExpr>),
    Or(Vec<EqualityExpr>),
}

impl EqualityExpr {
    pub fn variables<'a>(&'a self, out: &mut Vec<&'a String>) {
        match self {
            EqualityExpr::True => {}
            EqualityExpr::Eq(a, b) => {
                for x in [a, b] {
                    if let Arg::Var(v) = x {
                        out.push(v);
                    }
                }
            }
            EqualityExpr::Not(e) => e.variables(out),
            EqualityExpr::And(es) | EqualityExpr::Or(es) => {
                for e in es {
                    e.variables(out);
                }
            }
        }
    }

    /// Evaluates the guard under a substitution; names are equal iff
    /// identical. All variables must be bound.
    pub fn eval(&self, theta: &[(String, Name)]) -> bool {
        fn resolve(a: &Arg, theta: &[(String, Name)]) -> Name {
            match a {
                Arg::Name(n) => n.clone(),
                Arg::Var(v) => theta
                    .iter()
                    .find(|(u, _)| u == v)
                    .map(|(_, n)| n.clone())
                    .expect("unbound variable in guard"),
            }
        }
        match self {
            EqualityExpr::True => true,
            EqualityExpr::Eq(a, b) => resolve(a, theta) == resolve(b, theta),
            EqualityExpr::Not(e) => !e.eval(theta),
            EqualityExpr::And(es) => es.iter().all(|e| e.eval(theta)),
            EqualityExpr::Or(es) => es.iter().any(|e| e.eval(theta)),
        }
    }
}

impl fmt::Display for EqualityExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EqualityExpr::True => write!(f, "true"),
            EqualityExpr::Eq(a, b) => write!(f, "({a} = {b})"),
            EqualityExpr::Not(e) => write!(f, "!{e}"),
            EqualityExpr::And(es) => {
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        write!(f, " & ")?;
                    }
                    write!(f, "{e}")?;
                }
                Ok(())
            }
            EqualityExpr::Or(es) => {
                write!(f, "(")?;
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rel {
    Ge,
    Le,
    Eq,
}

impl fmt::Display for Rel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rel::Ge => write!(f, ">="),
            Rel::Le => write!(f, "<="),
            Rel::Eq => write!(f, "="),
        }
    }
}

/// `polynomial rel rhs`, the body of a logical constraint.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PolyConstraint {
    pub poly: Polynomial,
    pub rel: Rel,
    pub rhs: Rat,
}

impl PolyConstraint {
    pub fn substitute(&self, theta: &[(String, Name)]) -> PolyConstraint {
        PolyConstraint {
            poly: self.poly.substitute(theta),
            rel: self.rel,
            rhs: self.rhs.clone(),
        }
    }
}

impl fmt::Display for PolyConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.poly, self.rel, fmt_rat(&self.rhs))
    }
}

/// Universally quantified, guarded polynomial constraint.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LogicalConstraint {
    pub vars: Vec<String>,
    pub guard: EqualityExpr,
    pub body: PolyConstraint,
}

/// Linear inequality over moment variables `e(mu)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExpectationConstraint {
    pub vars: Vec<String>,
    pub guard: EqualityExpr,
    /// Coefficient per monomial pattern; linear in the moment symbols.
    pub combo: Polynomial,
    pub rel: Rel,
    pub rhs: Rat,
}

impl ExpectationConstraint {
    pub fn substitute(&self, theta: &[(String, Name)]) -> ExpectationConstraint {
        ExpectationConstraint {
            vars: Vec::new(),
            guard: EqualityExpr::True,
            combo: self.combo.substitute(theta),
            rel: self.rel,
            rhs: self.rhs.clone(),
        }
    }
}

/// Two-phase rule: if the expectation premise is provable, the logical
/// conclusion joins the ground set. Never fed to the SDP directly.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConditionalRule {
    pub vars: Vec<String>,
    pub premise: ExpectationConstraint,
    pub conclusion: LogicalConstraint,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Constraint {
    Logical(LogicalConstraint),
    Expectation(ExpectationConstraint),
    Conditional(ConditionalRule),
}

impl Constraint {
    pub fn distinct_variable_count(&self) -> usize {
        let mut vars: Vec<&String> = Vec::new();
        match self {
            Constraint::Logical(c) => {
                c.guard.variables(&mut vars);
                for m in c.body.poly.monomials() {
                    for t in m.factors() {
                        vars.extend(t.0.variables());
                    }
                }
            }
            Constraint::Expectation(c) => {
                c.guard.variables(&mut vars);
                for m in c.combo.monomials() {
                    for t in m.factors() {
                        vars.extend(t.0.variables());
                    }
                }
            }
            Constraint::Conditional(c) => {
                let mut n = 0;
                n = n.max(Constraint::Expectation(c.premise.clone()).distinct_variable_count());
                n = n.max(Constraint::Logical(c.conclusion.clone()).distinct_variable_count());
                // the rule's own quantifier covers both parts
                let mut all: Vec<&String> = c.vars.iter().collect();
                all.sort();
                all.dedup();
                return n.max(all.len());
            }
        }
        vars.sort();
        vars.dedup();
        vars.len()
    }
}

fn fmt_quantified(
    f: &mut fmt::Formatter<'_>,
    vars: &[String],
    guard: &EqualityExpr,
    body: &dyn fmt::Display,
) -> fmt::Result {
    if !vars.is_empty() {
        write!(f, "forall ")?;
        for (i, v) in vars.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, " : ")?;
    }
    if !matches!(guard, EqualityExpr::True) {
        write!(f, "{guard} => ")?;
    }
    write!(f, "{body}")
}

impl fmt::Display for LogicalConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_quantified(f, &self.vars, &self.guard, &self.body)
    }
}

struct ExpBody<'a>(&'a ExpectationConstraint);

impl fmt::Display for ExpBody<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.combo.display_as_moments())?;
        write!(f, " {} {}", self.0.rel, fmt_rat(&self.0.rhs))
    }
}

impl fmt::Display for ExpectationConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_quantified(f, &self.vars, &self.guard, &ExpBody(self))
    }
}

impl fmt::Display for ConditionalRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.vars.is_empty() {
            write!(f, "forall ")?;
            for (i, v) in self.vars.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{v}")?;
            }
            write!(f, " : ")?;
        }
        write!(f, "if {} then {}", ExpBody(&self.premise), self.conclusion.body)
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::Logical(c) => write!(f, "{c}"),
            Constraint::Expectation(c) => write!(f, "{c}"),
            Constraint::Conditional(c) => write!(f, "{c}"),
        }
    }
}

/// Declared bound, either blanket (every atom) or per monomial pattern.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BoundsPattern {
    AllAtoms,
    Pattern(Monomial),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundsDecl {
    pub pattern: BoundsPattern,
    pub lo: Rat,
    pub hi: Rat,
}

impl fmt::Display for BoundsDecl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.pattern {
            BoundsPattern::AllAtoms => write!(f, "bounds * in [{}, {}]", fmt_rat(&self.lo), fmt_rat(&self.hi)),
            BoundsPattern::Pattern(m) => {
                write!(f, "bounds {m} in [{}, {}]", fmt_rat(&self.lo), fmt_rat(&self.hi))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeBase {
    pub constraints: Vec<Constraint>,
    pub constants: Vec<String>,
    pub bounds: Vec<BoundsDecl>,
}

impl KnowledgeBase {
    /// Max over constraints of distinct-variable counts.
    pub fn quantifier_rank(&self) -> usize {
        self.constraints
            .iter()
            .map(|c| c.distinct_variable_count())
            .max()
            .unwrap_or(0)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.constants.is_empty() {
            out.push_str("const ");
            out.push_str(&self.constants.join(", "));
            out.push_str(".\n");
        }
        for b in &self.bounds {
            out.push_str(&format!("{b}\n"));
        }
        for c in &self.constraints {
            out.push_str(&format!("{c}\n"));
        }
        out
    }
}

/// Errors for query negation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NegateError {
    UnsupportedShape(String),
}

impl fmt::Display for NegateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NegateError::UnsupportedShape(s) => write!(f, "unsupported query shape: {s}"),
        }
    }
}

/// One refutation attempt produced by query negation. The query is proved
/// iff every attempt's system is refuted.
pub type NegationAttempt = Vec<Constraint>;

/// Strict-complement negation with margin `eps`: `p >= c` becomes
/// `p <= c - eps`; equalities split into two attempts. Universally
/// quantified queries are instantiated over `universe` and each instance
/// contributes its own attempts (the negation is an existential, i.e. a
/// disjunction over instances).
pub fn negate_query(
    q: &Constraint,
    universe: &[Name],
    eps: &Rat,
) -> Result<Vec<NegationAttempt>, NegateError> {
    fn negate_body(rel: Rel, rhs: &Rat, eps: &Rat) -> Vec<(Rel, Rat)> {
        match rel {
            Rel::Ge => alloc::vec![(Rel::Le, rhs - eps)],
            Rel::Le => alloc::vec![(Rel::Ge, rhs + eps)],
            Rel::Eq => alloc::vec![(Rel::Le, rhs - eps), (Rel::Ge, rhs + eps)],
        }
    }
    let mut attempts: Vec<NegationAttempt> = Vec::new();
    let (vars, guard): (&[String], &EqualityExpr) = match q {
        Constraint::Logical(c) => (&c.vars, &c.guard),
        Constraint::Expectation(c) => (&c.vars, &c.guard),
        Constraint::Conditional(_) => {
            return Err(NegateError::UnsupportedShape(
                "conditional rules cannot be negated as queries".into(),
            ))
        }
    };
    if !vars.is_empty() && universe.is_empty() {
        return Err(NegateError::UnsupportedShape(
            "quantified query over an empty instantiation universe".into(),
        ));
    }
    let substs = enumerate_substitutions(vars, universe);
    for theta in &substs {
        if !guard.eval(theta) {
            continue;
        }
        match q {
            Constraint::Logical(c) => {
                let body = c.body.substitute(theta);
                for (rel, rhs) in negate_body(body.rel, &body.rhs, eps) {
                    attempts.push(alloc::vec![Constraint::Logical(LogicalConstraint {
                        vars: Vec::new(),
                        guard: EqualityExpr::True,
                        body: PolyConstraint { poly: body.poly.clone(), rel, rhs },
                    })]);
                }
            }
            Constraint::Expectation(c) => {
                let inst = c.substitute(theta);
                for (rel, rhs) in negate_body(inst.rel, &inst.rhs, eps) {
                    attempts.push(alloc::vec![Constraint::Expectation(ExpectationConstraint {
                        vars: Vec::new(),
                        guard: EqualityExpr::True,
                        combo: inst.combo.clone(),
                        rel,
                        rhs,
                    })]);
                }
            }
            Constraint::Conditional(_) => unreachable!(),
        }
    }
    if attempts.is_empty() {
        return Err(NegateError::UnsupportedShape(
            "query guard excludes every instantiation".into(),
        ));
    }
    Ok(attempts)
}

/// All substitutions of `vars` by `universe` names (with repetition),
/// deterministic order.
pub fn enumerate_substitutions(vars: &[String], universe: &[Name]) -> Vec<Vec<(String, Name)>> {
    let mut out = alloc::vec![Vec::new()];
    for v in vars {
        let mut next = Vec::with_capacity(out.len() * universe.len());
        for partial in &out {
            for n in universe {
                let mut p = partial.clone();
                p.push((v.clone(), n.clone()));
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{rat, rat_int};
    use alloc::vec;

    fn atom(p: &str, names: &[&str]) -> Term {
        Term::atom(
            p,
            names.iter().map(|n| Name::Constant((*n).into())).collect(),
        )
    }

    #[test]
    fn rank_counts_distinct_variables() {
        // forall x: P(x, alex) >= 0  -> rank 1
        let t = Term::new(
            "P",
            vec![Arg::Var("x".into()), Arg::Name(Name::Constant("alex".into()))],
        );
        let c = Constraint::Logical(LogicalConstraint {
            vars: vec!["x".into()],
            guard: EqualityExpr::True,
            body: PolyConstraint {
                poly: Polynomial::from_monomial(Monomial::atom(t), rat_int(1)),
                rel: Rel::Ge,
                rhs: rat_int(0),
            },
        });
        let kb = KnowledgeBase {
            constraints: vec![c],
            constants: vec!["alex".into()],
            bounds: vec![],
        };
        assert_eq!(kb.quantifier_rank(), 1);
    }

    #[test]
    fn ground_kb_has_rank_zero() {
        let c = Constraint::Logical(LogicalConstraint {
            vars: vec![],
            guard: EqualityExpr::True,
            body: PolyConstraint {
                poly: Polynomial::from_monomial(Monomial::atom(atom("P", &["alex"])), rat_int(1)),
                rel: Rel::Ge,
                rhs: rat_int(0),
            },
        });
        let kb = KnowledgeBase {
            constraints: vec![c],
            constants: vec!["alex".into()],
            bounds: vec![],
        };
        assert_eq!(kb.quantifier_rank(), 0);
    }

    #[test]
    fn negate_inequality_flips_with_margin() {
        let q = Constraint::Expectation(ExpectationConstraint {
            vars: vec![],
            guard: EqualityExpr::True,
            combo: Polynomial::from_monomial(Monomial::atom(atom("p", &["a"])), rat_int(1)),
            rel: Rel::Le,
            rhs: rat(1, 2),
        });
        let eps = rat(1, 1_000_000);
        let attempts = negate_query(&q, &[], &eps).unwrap();
        assert_eq!(attempts.len(), 1);
        match &attempts[0][0] {
            Constraint::Expectation(e) => {
                assert_eq!(e.rel, Rel::Ge);
                assert_eq!(e.rhs, rat(1, 2) + &eps);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn negate_equality_gives_two_attempts_per_instance() {
        // forall d: second_stage(d) = 1 over {A, B} -> two per-drug attempts
        let t = Term::new("second_stage", vec![Arg::Var("d".into())]);
        let q = Constraint::Logical(LogicalConstraint {
            vars: vec!["d".into()],
            guard: EqualityExpr::True,
            body: PolyConstraint {
                poly: Polynomial::from_monomial(Monomial::atom(t), rat_int(1)),
                rel: Rel::Eq,
                rhs: rat_int(1),
            },
        });
        let names = vec![Name::Constant("A".into()), Name::Constant("B".into())];
        let attempts = negate_query(&q, &names, &rat(1, 1_000_000)).unwrap();
        assert_eq!(attempts.len(), 4); // two sides per drug
    }
}
