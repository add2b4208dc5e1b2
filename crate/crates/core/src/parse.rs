//! Textual knowledge-base grammar: one declaration or constraint per line.
//!
//! ```text
//! const alex, DrugA.
//! bounds * in [0, 1]
//! bounds treated(x,d) in [0, 1]
//! forall x, d : (x = alex) & !(d = x) => P(x,d) >= 0
//! forall x, d : treated(x,d)^2 = treated(x,d)
//! E[treated(m1,DrugA)*shrunk(m1)] - 0.8*E[treated(m1,DrugA)] <= 0
//! forall x, d : if E[treated(x,d)*shrunk(x)] - 0.8*E[treated(x,d)] <= 0 then second_stage(d) = 0
//! ```
//!
//! Identifiers of shape `g<digits>` denote generic names; every other
//! identifier in an argument position is a quantified variable when listed
//! in the enclosing `forall`, and a constant otherwise.

use alloc::borrow::ToOwned;
use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use num_traits::Zero;

use crate::lang::{
    Arg, BoundsDecl, BoundsPattern, ConditionalRule, Constraint, EqualityExpr,
    ExpectationConstraint, KnowledgeBase, LogicalConstraint, Name, PolyConstraint, Rel, Term,
};
use crate::num::{parse_rat, Rat};
use crate::poly::{Monomial, Polynomial};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, col {}: {}", self.line, self.col, self.msg)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(String),
    Sym(&'static str),
}

#[derive(Clone, Debug)]
struct SpannedTok {
    tok: Tok,
    col: usize,
}

fn lex_line(line: &str, lineno: usize) -> Result<Vec<SpannedTok>, ParseError> {
    let mut toks = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break; // comment
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            toks.push(SpannedTok {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                col,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                // a '.' is part of the number only if followed by a digit
                if chars[i] == '.' && !(i + 1 < chars.len() && chars[i + 1].is_ascii_digit()) {
                    break;
                }
                i += 1;
            }
            toks.push(SpannedTok {
                tok: Tok::Num(chars[start..i].iter().collect()),
                col,
            });
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let sym2 = match two.as_str() {
            ">=" => Some(">="),
            "<=" => Some("<="),
            "=>" => Some("=>"),
            _ => None,
        };
        if let Some(s) = sym2 {
            toks.push(SpannedTok { tok: Tok::Sym(s), col });
            i += 2;
            continue;
        }
        let sym1 = match c {
            '(' => "(",
            ')' => ")",
            '[' => "[",
            ']' => "]",
            ',' => ",",
            ':' => ":",
            '.' => ".",
            '^' => "^",
            '*' => "*",
            '+' => "+",
            '-' => "-",
            '/' => "/",
            '=' => "=",
            '&' => "&",
            '|' => "|",
            '!' => "!",
            _ => {
                return Err(ParseError {
                    line: lineno,
                    col,
                    msg: format!("unexpected character '{c}'"),
                })
            }
        };
        toks.push(SpannedTok { tok: Tok::Sym(sym1), col });
        i += 1;
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<SpannedTok>,
    pos: usize,
    line: usize,
    vars: Vec<String>,
}

impl Parser {
    fn err(&self, msg: impl Into<String>) -> ParseError {
        let col = self
            .toks
            .get(self.pos)
            .map(|t| t.col)
            .unwrap_or_else(|| self.toks.last().map(|t| t.col + 1).unwrap_or(1));
        ParseError {
            line: self.line,
            col,
            msg: msg.into(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, off: usize) -> Option<&Tok> {
        self.toks.get(self.pos + off).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(x)) if *x == s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.err(format!("expected '{s}'")))
        }
    }

    fn eat_ident(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(x)) if x == kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_ident(&mut self) -> Result<String, ParseError> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            _ => Err(self.err("expected identifier")),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn parse_number(&mut self) -> Result<Rat, ParseError> {
        let neg = self.eat_sym("-");
        let raw = match self.next() {
            Some(Tok::Num(s)) => s,
            _ => return Err(self.err("expected number")),
        };
        let mut r = parse_rat(&raw).ok_or_else(|| self.err("malformed number"))?;
        if matches!(self.peek(), Some(Tok::Sym("/"))) {
            self.pos += 1;
            let den = match self.next() {
                Some(Tok::Num(s)) => parse_rat(&s).ok_or_else(|| self.err("malformed number"))?,
                _ => return Err(self.err("expected denominator")),
            };
            if den.is_zero() {
                return Err(self.err("zero denominator"));
            }
            r /= den;
        }
        if neg {
            r = -r;
        }
        Ok(r)
    }

    fn classify_arg(&self, ident: &str) -> Arg {
        if self.vars.iter().any(|v| v == ident) {
            return Arg::Var(ident.to_owned());
        }
        if let Some(rest) = ident.strip_prefix('g') {
            if !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()) {
                if let Ok(i) = rest.parse::<usize>() {
                    return Arg::Name(Name::Generic(i));
                }
            }
        }
        Arg::Name(Name::Constant(ident.to_owned()))
    }

    fn parse_term(&mut self) -> Result<Term, ParseError> {
        let pred = self.expect_ident()?;
        self.expect_sym("(")?;
        let mut args = Vec::new();
        if !self.eat_sym(")") {
            loop {
                let id = self.expect_ident()?;
                args.push(self.classify_arg(&id));
                if self.eat_sym(")") {
                    break;
                }
                self.expect_sym(",")?;
            }
        }
        Ok(Term { pred, args })
    }

    /// `term ['^' nat] ('*' term ['^' nat])*`
    fn parse_monomial(&mut self) -> Result<Monomial, ParseError> {
        let mut pairs: Vec<(Term, u32)> = Vec::new();
        loop {
            let t = self.parse_term()?;
            let mut e = 1u32;
            if self.eat_sym("^") {
                match self.next() {
                    Some(Tok::Num(s)) => {
                        e = s
                            .parse::<u32>()
                            .map_err(|_| self.err("exponent must be a natural number"))?;
                    }
                    _ => return Err(self.err("expected exponent")),
                }
            }
            pairs.push((t, e));
            // continue only if '*' is followed by a term (not a number/E)
            if matches!(self.peek(), Some(Tok::Sym("*")))
                && matches!(self.peek_at(1), Some(Tok::Ident(id)) if id != "E")
            {
                self.pos += 1;
                continue;
            }
            break;
        }
        Ok(Monomial::from_pairs(pairs))
    }

    /// One additive term of a polynomial; `moments` selects `E[...]` mode.
    fn parse_poly_term(&mut self, moments: bool) -> Result<(Monomial, Rat), ParseError> {
        let mut coeff = crate::num::rat_one();
        let mut have_coeff = false;
        if matches!(self.peek(), Some(Tok::Num(_))) {
            coeff = self.parse_number()?;
            have_coeff = true;
            if !self.eat_sym("*") {
                return Ok((Monomial::one(), coeff));
            }
        }
        let _ = have_coeff;
        if moments {
            if !self.eat_ident("E") {
                return Err(self.err("expected E[...] moment"));
            }
            self.expect_sym("[")?;
            let m = self.parse_monomial()?;
            self.expect_sym("]")?;
            if matches!(self.peek(), Some(Tok::Sym("*")))
                && matches!(self.peek_at(1), Some(Tok::Ident(id)) if id == "E")
            {
                return Err(self.err("products of moments are not allowed"));
            }
            Ok((m, coeff))
        } else {
            let m = self.parse_monomial()?;
            Ok((m, coeff))
        }
    }

    fn parse_polynomial(&mut self, moments: bool) -> Result<Polynomial, ParseError> {
        let mut p = Polynomial::zero();
        let mut sign = if self.eat_sym("-") {
            -crate::num::rat_one()
        } else {
            crate::num::rat_one()
        };
        loop {
            let (m, c) = self.parse_poly_term(moments)?;
            p.add_term(m, c * &sign);
            if self.eat_sym("+") {
                sign = crate::num::rat_one();
            } else if self.eat_sym("-") {
                sign = -crate::num::rat_one();
            } else {
                break;
            }
        }
        Ok(p)
    }

    fn parse_rel(&mut self) -> Result<Rel, ParseError> {
        if self.eat_sym(">=") {
            Ok(Rel::Ge)
        } else if self.eat_sym("<=") {
            Ok(Rel::Le)
        } else if self.eat_sym("=") {
            Ok(Rel::Eq)
        } else {
            Err(self.err("expected relation (>=, <= or =)"))
        }
    }

    fn contains_moments_ahead(&self) -> bool {
        let mut depth = 0usize;
        for t in &self.toks[self.pos..] {
            match &t.tok {
                Tok::Sym("(") | Tok::Sym("[") => depth += 1,
                Tok::Sym(")") | Tok::Sym("]") => depth = depth.saturating_sub(1),
                Tok::Ident(id) if id == "E" && depth == 0 => return true,
                Tok::Ident(id) if (id == "then" || id == "if") && depth == 0 => return false,
                _ => {}
            }
        }
        false
    }

    /// Scans for a top-level `=>` before any relation; marks a guard.
    fn has_guard_ahead(&self) -> bool {
        let mut depth = 0usize;
        for t in &self.toks[self.pos..] {
            match &t.tok {
                Tok::Sym("(") | Tok::Sym("[") => depth += 1,
                Tok::Sym(")") | Tok::Sym("]") => depth = depth.saturating_sub(1),
                Tok::Sym("=>") if depth == 0 => return true,
                Tok::Ident(id) if id == "then" && depth == 0 => return false,
                _ => {}
            }
        }
        false
    }

    fn parse_eq_primary(&mut self) -> Result<EqualityExpr, ParseError> {
        if self.eat_sym("!") {
            return Ok(EqualityExpr::Not(Box::new(self.parse_eq_primary()?)));
        }
        if self.eat_sym("(") {
            let e = self.parse_eq_expr()?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        if self.eat_ident("true") {
            return Ok(EqualityExpr::True);
        }
        let a = self.expect_ident()?;
        let a = self.classify_arg(&a);
        self.expect_sym("=")?;
        let b = self.expect_ident()?;
        let b = self.classify_arg(&b);
        Ok(EqualityExpr::Eq(a, b))
    }

    fn parse_eq_expr(&mut self) -> Result<EqualityExpr, ParseError> {
        let mut terms = alloc::vec![self.parse_eq_and()?];
        while self.eat_sym("|") {
            terms.push(self.parse_eq_and()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            EqualityExpr::Or(terms)
        })
    }

    fn parse_eq_and(&mut self) -> Result<EqualityExpr, ParseError> {
        let mut terms = alloc::vec![self.parse_eq_primary()?];
        while self.eat_sym("&") {
            terms.push(self.parse_eq_primary()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            EqualityExpr::And(terms)
        })
    }

    /// `poly rel poly`, normalized so the left side carries no constant.
    fn parse_body(&mut self, moments: bool) -> Result<(Polynomial, Rel, Rat), ParseError> {
        let lhs = self.parse_polynomial(moments)?;
        let rel = self.parse_rel()?;
        let rhs = self.parse_polynomial(moments)?;
        let mut p = lhs.sub(&rhs);
        let c = p.constant_term();
        p.add_term(Monomial::one(), -c.clone());
        Ok((p, rel, -c))
    }

    fn parse_constraint_tail(&mut self, vars: Vec<String>) -> Result<Constraint, ParseError> {
        self.vars = vars.clone();
        let guard = if self.has_guard_ahead() {
            let g = self.parse_eq_expr()?;
            self.expect_sym("=>")?;
            g
        } else {
            EqualityExpr::True
        };
        if self.eat_ident("if") {
            if !matches!(guard, EqualityExpr::True) {
                return Err(self.err("conditional rules do not take guards"));
            }
            let (combo, rel, rhs) = self.parse_body(true)?;
            if !matches!(rel, Rel::Ge | Rel::Le) {
                return Err(self.err("conditional premise must be an inequality"));
            }
            if !self.eat_ident("then") {
                return Err(self.err("expected 'then'"));
            }
            let (poly, crel, crhs) = self.parse_body(false)?;
            return Ok(Constraint::Conditional(ConditionalRule {
                vars,
                premise: ExpectationConstraint {
                    vars: Vec::new(),
                    guard: EqualityExpr::True,
                    combo,
                    rel,
                    rhs,
                },
                conclusion: LogicalConstraint {
                    vars: Vec::new(),
                    guard: EqualityExpr::True,
                    body: PolyConstraint {
                        poly,
                        rel: crel,
                        rhs: crhs,
                    },
                },
            }));
        }
        if self.contains_moments_ahead() {
            let (combo, rel, rhs) = self.parse_body(true)?;
            Ok(Constraint::Expectation(ExpectationConstraint {
                vars,
                guard,
                combo,
                rel,
                rhs,
            }))
        } else {
            let (poly, rel, rhs) = self.parse_body(false)?;
            Ok(Constraint::Logical(LogicalConstraint {
                vars,
                guard,
                body: PolyConstraint { poly, rel, rhs },
            }))
        }
    }

    fn parse_constraint(&mut self) -> Result<Constraint, ParseError> {
        let mut vars = Vec::new();
        if self.eat_ident("forall") {
            loop {
                vars.push(self.expect_ident()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(":")?;
            let mut sorted = vars.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != vars.len() {
                return Err(self.err("duplicate quantified variable"));
            }
        }
        self.parse_constraint_tail(vars)
    }
}

fn validate(kb: &KnowledgeBase, line_of: &[(usize, usize)]) -> Result<(), ParseError> {
    // arity consistency across the whole KB
    let mut arities: alloc::collections::BTreeMap<String, usize> = Default::default();
    let mut check_term = |t: &Term, line: usize| -> Result<(), ParseError> {
        match arities.get(&t.pred) {
            Some(a) if *a != t.arity() => Err(ParseError {
                line,
                col: 1,
                msg: format!(
                    "arity mismatch for predicate '{}': {} vs {}",
                    t.pred,
                    a,
                    t.arity()
                ),
            }),
            Some(_) => Ok(()),
            None => {
                arities.insert(t.pred.clone(), t.arity());
                Ok(())
            }
        }
    };
    for (ci, c) in kb.constraints.iter().enumerate() {
        let line = line_of
            .iter()
            .find(|(i, _)| *i == ci)
            .map(|(_, l)| *l)
            .unwrap_or(0);
        let polys: Vec<&Polynomial> = match c {
            Constraint::Logical(l) => alloc::vec![&l.body.poly],
            Constraint::Expectation(e) => alloc::vec![&e.combo],
            Constraint::Conditional(r) => alloc::vec![&r.premise.combo, &r.conclusion.body.poly],
        };
        for p in polys {
            for m in p.monomials() {
                for (t, _) in m.factors() {
                    check_term(t, line)?;
                }
            }
        }
    }
    Ok(())
}

/// Parses a knowledge base; empty input (no constraints) is an error.
pub fn parse_kb(text: &str) -> Result<KnowledgeBase, ParseError> {
    let mut kb = KnowledgeBase {
        constraints: Vec::new(),
        constants: Vec::new(),
        bounds: Vec::new(),
    };
    let mut line_of: Vec<(usize, usize)> = Vec::new();
    for (lineno0, raw) in text.lines().enumerate() {
        let lineno = lineno0 + 1;
        let mut toks = lex_line(raw, lineno)?;
        // optional trailing period
        if matches!(toks.last(), Some(SpannedTok { tok: Tok::Sym("."), .. })) {
            toks.pop();
        }
        if toks.is_empty() {
            continue;
        }
        let mut p = Parser {
            toks,
            pos: 0,
            line: lineno,
            vars: Vec::new(),
        };
        if p.eat_ident("const") {
            loop {
                let id = p.expect_ident()?;
                if !kb.constants.contains(&id) {
                    kb.constants.push(id);
                }
                if !p.eat_sym(",") {
                    break;
                }
            }
        } else if p.eat_ident("bounds") {
            let pattern = if p.eat_sym("*") {
                BoundsPattern::AllAtoms
            } else {
                BoundsPattern::Pattern(p.parse_monomial()?)
            };
            if !p.eat_ident("in") {
                return Err(p.err("expected 'in'"));
            }
            p.expect_sym("[")?;
            let lo = p.parse_number()?;
            p.expect_sym(",")?;
            let hi = p.parse_number()?;
            p.expect_sym("]")?;
            kb.bounds.push(BoundsDecl { pattern, lo, hi });
        } else {
            let c = p.parse_constraint()?;
            line_of.push((kb.constraints.len(), lineno));
            kb.constraints.push(c);
        }
        if !p.at_end() {
            return Err(p.err("trailing input"));
        }
    }
    if kb.constraints.is_empty() {
        return Err(ParseError {
            line: 1,
            col: 1,
            msg: "empty knowledge base: at least one constraint is required".to_string(),
        });
    }
    // infer constants used in ground positions
    let mut inferred: Vec<String> = Vec::new();
    let visit_poly = |p: &Polynomial, out: &mut Vec<String>| {
        for m in p.monomials() {
            for (t, _) in m.factors() {
                for a in &t.args {
                    if let Arg::Name(Name::Constant(s)) = a {
                        if !out.contains(s) {
                            out.push(s.clone());
                        }
                    }
                }
            }
        }
    };
    fn visit_guard(g: &EqualityExpr, out: &mut Vec<String>) {
        match g {
            EqualityExpr::True => {}
            EqualityExpr::Eq(a, b) => {
                for arg in [a, b] {
                    if let Arg::Name(Name::Constant(s)) = arg {
                        if !out.contains(s) {
                            out.push(s.clone());
                        }
                    }
                }
            }
            EqualityExpr::Not(inner) => visit_guard(inner, out),
            EqualityExpr::And(xs) | EqualityExpr::Or(xs) => {
                for x in xs {
                    visit_guard(x, out);
                }
            }
        }
    }
    for c in &kb.constraints {
        match c {
            Constraint::Logical(l) => {
                visit_poly(&l.body.poly, &mut inferred);
                visit_guard(&l.guard, &mut inferred);
            }
            Constraint::Expectation(e) => {
                visit_poly(&e.combo, &mut inferred);
                visit_guard(&e.guard, &mut inferred);
            }
            Constraint::Conditional(r) => {
                visit_poly(&r.premise.combo, &mut inferred);
                visit_poly(&r.conclusion.body.poly, &mut inferred);
                visit_guard(&r.premise.guard, &mut inferred);
                visit_guard(&r.conclusion.guard, &mut inferred);
            }
        }
    }
    for s in inferred {
        if !kb.constants.contains(&s) {
            kb.constants.push(s);
        }
    }
    kb.constants.sort();
    validate(&kb, &line_of)?;
    Ok(kb)
}

/// Parses a single constraint (e.g. a query).
pub fn parse_constraint(text: &str) -> Result<Constraint, ParseError> {
    let mut toks = lex_line(text, 1)?;
    if matches!(toks.last(), Some(SpannedTok { tok: Tok::Sym("."), .. })) {
        toks.pop();
    }
    let mut p = Parser {
        toks,
        pos: 0,
        line: 1,
        vars: Vec::new(),
    };
    let c = p.parse_constraint()?;
    if !p.at_end() {
        return Err(p.err("trailing input"));
    }
    Ok(c)
}
