//! Machine-readable run reports and the certificate JSON format.
//!
//! Reports are deterministic: keys sorted (serde_json's default map is
//! ordered), floats rounded to 12 significant digits before insertion.

use serde_json::{json, Map, Value};

use foprl_core::cert::{Certificate, LinearTerm, RatMatrix, SosTerm};
use foprl_core::num::{fmt_rat, parse_rat, Rat};
use foprl_core::poly::{Monomial, Polynomial};

use crate::error::{Error, Result};

pub const SCHEMA: u64 = 1;

/// Rounds to 12 significant digits so printed reports are byte-stable
/// across platforms.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

pub fn json_f64(x: f64) -> Value {
    json!(round_sig(x))
}

pub fn new_report(subcommand: &str) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("schema".to_string(), json!(SCHEMA));
    m.insert("subcommand".to_string(), json!(subcommand));
    m
}

fn monomial_str(m: &Monomial) -> String {
    m.to_string()
}

/// Parses the textual monomial form `t(a)*s(a)^2` (`1` is the empty
/// monomial).
pub fn parse_monomial(s: &str) -> Result<Monomial> {
    let s = s.trim();
    if s == "1" {
        return Ok(Monomial::one());
    }
    let mut pairs = Vec::new();
    for factor in s.split('*') {
        let (atom, exp) = match factor.rsplit_once('^') {
            Some((a, e)) => (
                a,
                e.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Parse(format!("bad exponent in '{factor}'")))?,
            ),
            None => (factor, 1),
        };
        pairs.push((crate::partial::parse_atom(atom)?, exp));
    }
    Ok(Monomial::from_pairs(pairs))
}

/// Polynomial as a JSON object monomial -> rational coefficient string.
pub fn poly_to_json(p: &Polynomial) -> Value {
    let mut m = Map::new();
    for (mono, c) in p.iter() {
        m.insert(monomial_str(mono), json!(fmt_rat(c)));
    }
    Value::Object(m)
}

pub fn poly_from_json(v: &Value) -> Result<Polynomial> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Parse("polynomial must be an object".into()))?;
    let mut p = Polynomial::zero();
    for (k, cv) in obj {
        let c = cv
            .as_str()
            .and_then(parse_rat)
            .ok_or_else(|| Error::Parse(format!("bad coefficient for '{k}'")))?;
        p.add_term(parse_monomial(k)?, c);
    }
    Ok(p)
}

fn matrix_to_json(m: &RatMatrix) -> Value {
    let rows: Vec<Value> = (0..m.n)
        .map(|i| {
            Value::Array(
                (0..m.n)
                    .map(|j| json!(fmt_rat(m.get(i, j))))
                    .collect(),
            )
        })
        .collect();
    Value::Array(rows)
}

fn matrix_from_json(v: &Value) -> Result<RatMatrix> {
    let rows = v
        .as_array()
        .ok_or_else(|| Error::Parse("matrix must be an array of rows".into()))?;
    let parsed: Vec<Vec<Rat>> = rows
        .iter()
        .map(|row| {
            row.as_array()
                .ok_or_else(|| Error::Parse("matrix row must be an array".into()))?
                .iter()
                .map(|e| {
                    e.as_str()
                        .and_then(parse_rat)
                        .ok_or_else(|| Error::Parse("matrix entries must be rational strings".into()))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    if parsed.iter().any(|r| r.len() != parsed.len()) {
        return Err(Error::Parse("matrix must be square".into()));
    }
    Ok(RatMatrix::from_rows(parsed))
}

/// Self-contained certificate JSON: every multiplier carries the ground
/// constraint it multiplies, so verification needs no other inputs.
pub fn cert_to_json(cert: &Certificate) -> Value {
    let sos: Vec<Value> = cert
        .sos_terms
        .iter()
        .map(|t| {
            json!({
                "label": t.label,
                "basis": t.basis.iter().map(monomial_str).collect::<Vec<_>>(),
                "matrix": matrix_to_json(&t.matrix),
                "g": poly_to_json(&t.g),
            })
        })
        .collect();
    let linear: Vec<Value> = cert
        .linear_terms
        .iter()
        .map(|t| {
            json!({
                "label": t.label,
                "form": poly_to_json(&t.form),
                "equality": t.equality,
                "value": fmt_rat(&t.value),
            })
        })
        .collect();
    json!({
        "schema": SCHEMA,
        "degree": cert.degree,
        "sos_terms": sos,
        "linear_terms": linear,
        "target": poly_to_json(&cert.target),
    })
}

pub fn cert_from_json(v: &Value) -> Result<Certificate> {
    let get = |k: &str| -> Result<&Value> {
        v.get(k)
            .ok_or_else(|| Error::Parse(format!("certificate missing '{k}'")))
    };
    let degree = get("degree")?
        .as_u64()
        .ok_or_else(|| Error::Parse("bad degree".into()))? as u32;
    let mut sos_terms = Vec::new();
    for t in get("sos_terms")?
        .as_array()
        .ok_or_else(|| Error::Parse("sos_terms must be an array".into()))?
    {
        let basis = t
            .get("basis")
            .and_then(|b| b.as_array())
            .ok_or_else(|| Error::Parse("sos term missing basis".into()))?
            .iter()
            .map(|s| {
                s.as_str()
                    .ok_or_else(|| Error::Parse("basis entries must be strings".into()))
                    .and_then(parse_monomial)
            })
            .collect::<Result<Vec<_>>>()?;
        sos_terms.push(SosTerm {
            label: t
                .get("label")
                .and_then(|l| l.as_str())
                .unwrap_or("sos")
                .to_string(),
            basis,
            matrix: matrix_from_json(
                t.get("matrix")
                    .ok_or_else(|| Error::Parse("sos term missing matrix".into()))?,
            )?,
            g: poly_from_json(
                t.get("g")
                    .ok_or_else(|| Error::Parse("sos term missing g".into()))?,
            )?,
        });
    }
    let mut linear_terms = Vec::new();
    for t in get("linear_terms")?
        .as_array()
        .ok_or_else(|| Error::Parse("linear_terms must be an array".into()))?
    {
        linear_terms.push(LinearTerm {
            label: t
                .get("label")
                .and_then(|l| l.as_str())
                .unwrap_or("linear")
                .to_string(),
            form: poly_from_json(
                t.get("form")
                    .ok_or_else(|| Error::Parse("linear term missing form".into()))?,
            )?,
            equality: t.get("equality").and_then(|e| e.as_bool()).unwrap_or(false),
            value: t
                .get("value")
                .and_then(|x| x.as_str())
                .and_then(parse_rat)
                .ok_or_else(|| Error::Parse("linear term missing rational value".into()))?,
        });
    }
    let target = match v.get("target") {
        Some(t) => poly_from_json(t)?,
        None => Certificate::refutation_target(),
    };
    Ok(Certificate {
        degree,
        sos_terms,
        linear_terms,
        target,
    })
}
