//! Refutation certificates and their exact rational verification.
//!
//! A certificate witnesses infeasibility through the identity
//!
//! ```text
//! sigma_0 + sum_i sigma_i * g_i + sum_j r_j * b_j  =  target
//! ```
//!
//! where each `sigma` is a sum of squares (given by a PSD coefficient
//! matrix over a monomial basis), each `g_i >= 0` and `b_j` come from the
//! ground program, and the target is the constant -1 by default. Every
//! multiplied constraint is carried inside the certificate, so
//! verification needs nothing but the certificate itself. Expansion is
//! performed over lifted (canonical) monomials with exact rationals.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_traits::{Signed, Zero};

use crate::ground::canonical_form;
use crate::num::{rat_one, rat_zero, Rat};
use crate::poly::{Monomial, Polynomial};

/// Dense symmetric rational matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatMatrix {
    pub n: usize,
    entries: Vec<Rat>,
}

impl RatMatrix {
    pub fn zero(n: usize) -> Self {
        RatMatrix {
            n,
            entries: alloc::vec![rat_zero(); n * n],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Rat>>) -> Self {
        let n = rows.len();
        let mut m = RatMatrix::zero(n);
        for (i, row) in rows.into_iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            for (j, v) in row.into_iter().enumerate() {
                m.entries[i * n + j] = v;
            }
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> &Rat {
        &self.entries[i * self.n + j]
    }

    pub fn set_sym(&mut self, i: usize, j: usize, v: Rat) {
        self.entries[i * self.n + j] = v.clone();
        self.entries[j * self.n + i] = v;
    }

    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.get(i, j) != self.get(j, i) {
                    return false;
                }
            }
        }
        true
    }

    /// Exact positive-semidefiniteness of `self + shift * I`, by symmetric
    /// Gaussian elimination (an LDL^T sweep with exact pivots).
    pub fn is_psd_shifted(&self, shift: &Rat) -> bool {
        let n = self.n;
        let mut a = self.entries.clone();
        for i in 0..n {
            a[i * n + i] += shift;
        }
        for k in 0..n {
            let pivot = a[k * n + k].clone();
            if pivot.is_negative() {
                return false;
            }
            if pivot.is_zero() {
                // a zero pivot forces the whole row/column to vanish
                for j in k + 1..n {
                    if !a[k * n + j].is_zero() {
                        return false;
                    }
                }
                continue;
            }
            for i in k + 1..n {
                let f = &a[i * n + k] / &pivot;
                if f.is_zero() {
                    continue;
                }
                for j in k..n {
                    let sub = &f * &a[k * n + j];
                    a[i * n + j] -= sub;
                }
            }
        }
        true
    }
}

/// A sum-of-squares multiplier `sigma * g`, with `g >= 0` carried as a
/// ground polynomial (`g = 1` for the unconstrained sigma_0 term).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SosTerm {
    pub label: String,
    pub basis: Vec<Monomial>,
    pub matrix: RatMatrix,
    pub g: Polynomial,
}

/// A scalar multiplier on a linear ground object. The `form` carries the
/// full affine expression (constants folded in) whose expectation the
/// constraint bounds: `E[form] >= 0` for inequalities, `E[form] = 0` for
/// (shifted) equalities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearTerm {
    pub label: String,
    pub form: Polynomial,
    pub equality: bool,
    pub value: Rat,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub degree: u32,
    pub sos_terms: Vec<SosTerm>,
    pub linear_terms: Vec<LinearTerm>,
    /// Identity right-hand side over moments; the empty monomial holds the
    /// constant. Defaults to the constant -1.
    pub target: Polynomial,
}

impl Certificate {
    pub fn refutation_target() -> Polynomial {
        Polynomial::from_monomial(Monomial::one(), -rat_one())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CertError {
    ShapeMismatch(String),
}

impl fmt::Display for CertError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CertError::ShapeMismatch(s) => write!(f, "malformed certificate: {s}"),
        }
    }
}

/// Outcome of checking a certificate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyReport {
    pub ok: bool,
    /// Largest absolute mismatched coefficient of the expanded identity.
    pub residual: Rat,
    /// All SOS matrices are PSD (up to `tol * I`).
    pub psd_ok: bool,
    /// All inequality multipliers are nonnegative (up to `tol`).
    pub signs_ok: bool,
    /// Labels of terms failing the PSD or sign condition.
    pub failures: Vec<String>,
}

/// Canonicalizes every monomial of `p` (the lift identifies
/// renaming-equivalent ground monomials) and accumulates into `acc`.
fn accumulate_lifted(acc: &mut BTreeMap<Monomial, Rat>, p: &Polynomial, weight: &Rat) {
    if weight.is_zero() {
        return;
    }
    for (m, c) in p.iter() {
        let key = canonical_form(m);
        let entry = acc.entry(key).or_insert_with(rat_zero);
        *entry += c * weight;
        if entry.is_zero() {
            // keep the map clean so the residual scan sees only mismatches
            let key2 = canonical_form(m);
            acc.remove(&key2);
        }
    }
}

/// Exact verification: expands the certificate identity over lifted
/// monomials and checks that it matches the target within `tol`
/// per coefficient, that every SOS matrix is PSD up to `tol * I`, and
/// that inequality multipliers are `>= -tol`.
pub fn verify_certificate(cert: &Certificate, tol: &Rat) -> Result<VerifyReport, CertError> {
    let mut acc: BTreeMap<Monomial, Rat> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut psd_ok = true;
    let mut signs_ok = true;

    for term in &cert.sos_terms {
        let n = term.basis.len();
        if term.matrix.n != n {
            return Err(CertError::ShapeMismatch(alloc::format!(
                "block '{}': {}x{} matrix over a basis of {} monomials",
                term.label,
                term.matrix.n,
                term.matrix.n,
                n
            )));
        }
        if !term.matrix.is_symmetric() {
            return Err(CertError::ShapeMismatch(alloc::format!(
                "block '{}' is not symmetric",
                term.label
            )));
        }
        if !term.matrix.is_psd_shifted(tol) {
            psd_ok = false;
            failures.push(term.label.clone());
        }
        for i in 0..n {
            for j in i..n {
                let z = term.matrix.get(i, j);
                if z.is_zero() {
                    continue;
                }
                let weight = if i == j { z.clone() } else { z + z };
                let prod = term.g.mul(&Polynomial::from_monomial(
                    term.basis[i].mul(&term.basis[j]),
                    rat_one(),
                ));
                accumulate_lifted(&mut acc, &prod, &weight);
            }
        }
    }

    for term in &cert.linear_terms {
        if !term.equality && term.value < -tol {
            signs_ok = false;
            failures.push(term.label.clone());
        }
        accumulate_lifted(&mut acc, &term.form, &term.value);
    }

    // subtract the target and take the worst coefficient
    accumulate_lifted(&mut acc, &cert.target, &-rat_one());
    let mut residual = rat_zero();
    for v in acc.values() {
        let a = v.abs();
        if a > residual {
            residual = a;
        }
    }

    let ok = psd_ok && signs_ok && residual <= *tol;
    Ok(VerifyReport {
        ok,
        residual,
        psd_ok,
        signs_ok,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{Name, Term};
    use crate::num::{rat, rat_int};

    fn ground_atom(p: &str) -> Term {
        Term::atom(p, Vec::new())
    }

    fn mono(t: &Term) -> Monomial {
        Monomial::atom(t.clone())
    }

    #[test]
    fn psd_checks() {
        let id = RatMatrix::from_rows(alloc::vec![
            alloc::vec![rat_int(2), rat_int(1)],
            alloc::vec![rat_int(1), rat_int(2)],
        ]);
        assert!(id.is_psd_shifted(&rat_zero()));
        let indef = RatMatrix::from_rows(alloc::vec![
            alloc::vec![rat_int(1), rat_int(2)],
            alloc::vec![rat_int(2), rat_int(1)],
        ]);
        assert!(!indef.is_psd_shifted(&rat_zero()));
        // [[0,1],[1,0]] has a zero pivot with nonzero row
        let hyper = RatMatrix::from_rows(alloc::vec![
            alloc::vec![rat_int(0), rat_int(1)],
            alloc::vec![rat_int(1), rat_int(0)],
        ]);
        assert!(!hyper.is_psd_shifted(&rat_zero()));
        assert!(hyper.is_psd_shifted(&rat_int(1)));
        // singular but PSD
        let sing = RatMatrix::from_rows(alloc::vec![
            alloc::vec![rat_int(1), rat_int(1)],
            alloc::vec![rat_int(1), rat_int(1)],
        ]);
        assert!(sing.is_psd_shifted(&rat_zero()));
    }

    /// 0.8 * (e(t) - 0.9) + 1 * (0.5 - e(ts)) + sos  =  0.8 e(t) - e(ts)
    /// with sos = 0.22 (a 1x1 block over the empty monomial).
    #[test]
    fn hand_built_identity_is_exact() {
        let t = ground_atom("t");
        let ts = ground_atom("ts");
        let mut form1 = Polynomial::from_monomial(mono(&t), rat_one());
        form1.add_term(Monomial::one(), rat(-9, 10));
        let mut form2 = Polynomial::from_monomial(mono(&ts), -rat_one());
        form2.add_term(Monomial::one(), rat(1, 2));

        let mut target = Polynomial::from_monomial(mono(&t), rat(4, 5));
        target.add_term(mono(&ts), -rat_one());

        let cert = Certificate {
            degree: 2,
            sos_terms: alloc::vec![SosTerm {
                label: "sigma0".into(),
                basis: alloc::vec![Monomial::one()],
                matrix: RatMatrix::from_rows(alloc::vec![alloc::vec![rat(11, 50)]]),
                g: Polynomial::from_monomial(Monomial::one(), rat_one()),
            }],
            linear_terms: alloc::vec![
                LinearTerm {
                    label: "E[t] >= 0.9".into(),
                    form: form1,
                    equality: false,
                    value: rat(4, 5),
                },
                LinearTerm {
                    label: "E[ts] <= 0.5".into(),
                    form: form2,
                    equality: false,
                    value: rat_one(),
                },
            ],
            target,
        };
        let report = verify_certificate(&cert, &rat(1, 1_000_000)).unwrap();
        assert!(report.ok, "{report:?}");
        assert_eq!(report.residual, rat_zero(), "identity holds exactly");

        // perturb one multiplier: residual tracks the perturbation
        let mut bad = cert.clone();
        bad.linear_terms[0].value = rat(4, 5) + rat(1, 1000);
        let report = verify_certificate(&bad, &rat(1, 1_000_000)).unwrap();
        assert!(!report.ok);
        assert!(report.residual >= rat(9, 10_000), "{:?}", report.residual);
    }

    #[test]
    fn negative_multiplier_and_bad_block_rejected() {
        let cert = Certificate {
            degree: 2,
            sos_terms: alloc::vec![SosTerm {
                label: "sigma0".into(),
                basis: alloc::vec![Monomial::one()],
                matrix: RatMatrix::from_rows(alloc::vec![alloc::vec![-rat_one()]]),
                g: Polynomial::from_monomial(Monomial::one(), rat_one()),
            }],
            linear_terms: alloc::vec![LinearTerm {
                label: "r".into(),
                form: Polynomial::from_monomial(Monomial::one(), rat_one()),
                equality: false,
                value: -rat_one(),
            }],
            target: Polynomial::from_monomial(Monomial::one(), -rat_int(2)),
        };
        let report = verify_certificate(&cert, &rat(1, 1_000_000)).unwrap();
        assert!(!report.psd_ok);
        assert!(!report.signs_ok);
        assert_eq!(report.failures.len(), 2);
        // the identity itself balances: -1 - 1 = -2
        assert_eq!(report.residual, rat_zero());
        assert!(!report.ok);
    }

    /// Lifted expansion merges renaming-equivalent monomials.
    #[test]
    fn lifted_terms_cancel_across_renamings() {
        let p1 = Term::atom("P", alloc::vec![Name::Generic(1)]);
        let p2 = Term::atom("P", alloc::vec![Name::Generic(2)]);
        let mut form = Polynomial::from_monomial(Monomial::atom(p1), rat_one());
        form.add_term(Monomial::atom(p2), -rat_one());
        form.add_term(Monomial::one(), -rat_one());
        let cert = Certificate {
            degree: 2,
            sos_terms: Vec::new(),
            linear_terms: alloc::vec![LinearTerm {
                label: "renamed difference".into(),
                form,
                equality: true,
                value: rat_one(),
            }],
            target: Certificate::refutation_target(),
        };
        let report = verify_certificate(&cert, &rat_zero()).unwrap();
        assert!(report.ok);
        assert_eq!(report.residual, rat_zero());
    }
}
