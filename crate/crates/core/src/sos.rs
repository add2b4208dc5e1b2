//! Symbolic assembly of the lifted sum-of-squares semidefinite program:
//! moment matrix, localizing matrices, shifted equalities, and linear
//! moment rows. Renaming-equivalent ground monomials share one moment
//! variable when lifting is enabled.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Zero;

use crate::ground::{
    canonical_form, equivalence_classes, monomials_up_to_degree, GroundConstraint,
    GroundConstraintSet, LiftClass,
};
use crate::lang::{Rel, Term};
use crate::num::{fmt_rat, Rat};
use crate::poly::{grlex, BoundsTable, Monomial, Polynomial};

/// Affine form over moment variables.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct LinExpr {
    pub constant: Rat,
    pub coeffs: BTreeMap<usize, Rat>,
}

impl LinExpr {
    pub fn constant(c: Rat) -> Self {
        LinExpr {
            constant: c,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn add_var(&mut self, id: usize, c: Rat) {
        if c.is_zero() {
            return;
        }
        use alloc::collections::btree_map::Entry;
        match self.coeffs.entry(id) {
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

    pub fn add(&mut self, other: &LinExpr) {
        self.constant += &other.constant;
        for (id, c) in &other.coeffs {
            self.add_var(*id, c.clone());
        }
    }

    pub fn scale(&self, c: &Rat) -> LinExpr {
        if c.is_zero() {
            return LinExpr::default();
        }
        LinExpr {
            constant: &self.constant * c,
            coeffs: self.coeffs.iter().map(|(i, v)| (*i, v * c)).collect(),
        }
    }

    pub fn neg(&self) -> LinExpr {
        self.scale(&-crate::num::rat_one())
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AssembleError {
    /// A required monomial exceeds the degree bound.
    DegreeOverflow(Monomial, u32),
    /// Monomials lacking finite declared or derivable bounds.
    CompactnessViolation(Vec<Monomial>),
    /// Enumeration guard tripped.
    TooLarge(usize),
}

impl fmt::Display for AssembleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssembleError::DegreeOverflow(m, d) => {
                write!(f, "monomial {m} exceeds degree bound {d}")
            }
            AssembleError::CompactnessViolation(ms) => {
                write!(f, "explicit compactness violated; unbounded monomials: ")?;
                for (i, m) in ms.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{m}")?;
                }
                Ok(())
            }
            AssembleError::TooLarge(n) => write!(f, "program too large ({n} monomials)"),
        }
    }
}

/// Symmetric PSD block; entries stored for i <= j.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PsdBlock {
    pub label: String,
    pub basis: Vec<Monomial>,
    /// Ground constraint `g >= 0` this block localizes (the constant 1 for
    /// the moment matrix itself); carried into certificates.
    pub g: Polynomial,
    entries: Vec<LinExpr>,
}

impl PsdBlock {
    pub fn n(&self) -> usize {
        self.basis.len()
    }

    fn tri_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.n());
        i * self.n() - i * (i + 1) / 2 + j
    }

    pub fn entry(&self, i: usize, j: usize) -> &LinExpr {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        &self.entries[self.tri_index(i, j)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RowKind {
    /// Ground logical inequality used linearly.
    Inequality,
    /// Shifted equality `mu * h = 0`.
    ShiftedEquality,
    /// Expectation constraint from the knowledge base or query.
    Expectation,
    /// Explicit-compactness bound on a lifted monomial.
    Bound,
    /// Learned, slack-widened moment interval.
    Learned,
    /// Query or negated-query row added by the caller.
    Query,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinRow {
    pub label: String,
    pub kind: RowKind,
    /// `expr >= 0` when `equality` is false, `expr = 0` otherwise.
    pub expr: LinExpr,
    pub equality: bool,
    /// Ground form of the multiplied constraint, for certificate output:
    /// moments of `form` give back `expr`.
    pub form: Polynomial,
}

/// The assembled semidefinite program over lifted moment variables.
#[derive(Clone, Debug)]
pub struct SOSProgram {
    pub degree: u32,
    pub lift: bool,
    pub classes: Vec<LiftClass>,
    index: BTreeMap<Monomial, usize>,
    pub blocks: Vec<PsdBlock>,
    pub rows: Vec<LinRow>,
    row_set: BTreeSet<(LinExpr, bool)>,
}

impl SOSProgram {
    /// Creates the program skeleton: one moment variable per lift class of
    /// the degree-`d` monomials over `atoms`, plus the moment matrix.
    pub fn new(atoms: &BTreeSet<Term>, d: u32, lift: bool) -> Result<Self, AssembleError> {
        let all = monomials_up_to_degree(atoms, d);
        if all.len() > 200_000 {
            return Err(AssembleError::TooLarge(all.len()));
        }
        let classes: Vec<LiftClass> = if lift {
            equivalence_classes(all.iter().filter(|m| !m.is_one()).cloned())
        } else {
            all.iter()
                .filter(|m| !m.is_one())
                .map(|m| LiftClass {
                    representative: m.clone(),
                    members: alloc::vec![m.clone()],
                })
                .collect()
        };
        let mut index = BTreeMap::new();
        for (i, c) in classes.iter().enumerate() {
            index.insert(c.representative.clone(), i);
        }
        let mut prog = SOSProgram {
            degree: d,
            lift,
            classes,
            index,
            blocks: Vec::new(),
            rows: Vec::new(),
            row_set: BTreeSet::new(),
        };
        let mut basis: Vec<Monomial> = monomials_up_to_degree(atoms, d / 2);
        basis.sort_by(grlex);
        let moment = prog.build_moment_matrix(basis)?;
        prog.blocks.push(moment);
        Ok(prog)
    }

    pub fn num_vars(&self) -> usize {
        self.classes.len()
    }

    pub fn var_for(&self, m: &Monomial) -> Option<usize> {
        let key = if self.lift { canonical_form(m) } else { m.clone() };
        self.index.get(&key).copied()
    }

    /// `e(m)` as an affine form (the empty monomial is the constant 1).
    pub fn moment_expr(&self, m: &Monomial) -> Result<LinExpr, AssembleError> {
        if m.is_one() {
            return Ok(LinExpr::constant(crate::num::rat_one()));
        }
        let id = self
            .var_for(m)
            .ok_or_else(|| AssembleError::DegreeOverflow(m.clone(), self.degree))?;
        let mut e = LinExpr::default();
        e.add_var(id, crate::num::rat_one());
        Ok(e)
    }

    /// Moments of a polynomial: each monomial replaced by its lifted
    /// moment variable.
    pub fn poly_moment_expr(&self, p: &Polynomial) -> Result<LinExpr, AssembleError> {
        let mut out = LinExpr::default();
        for (m, c) in p.iter() {
            out.add(&self.moment_expr(m)?.scale(c));
        }
        Ok(out)
    }

    /// Moment matrix over `basis`: entry (i,j) is `e(b_i * b_j)`.
    pub fn build_moment_matrix(&self, basis: Vec<Monomial>) -> Result<PsdBlock, AssembleError> {
        let n = basis.len();
        let mut entries = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                let prod = basis[i].mul(&basis[j]);
                if prod.degree() > self.degree {
                    return Err(AssembleError::DegreeOverflow(prod, self.degree));
                }
                entries.push(self.moment_expr(&prod)?);
            }
        }
        Ok(PsdBlock {
            label: String::from("moment"),
            basis,
            g: Polynomial::from_monomial(Monomial::one(), crate::num::rat_one()),
            entries,
        })
    }

    /// Localizing matrix for `g >= 0`: entry (i,j) is
    /// `sum_nu c_nu e(nu * b_i * b_j)`.
    pub fn build_localizing_matrix(
        &self,
        label: String,
        g: &Polynomial,
        basis: Vec<Monomial>,
    ) -> Result<PsdBlock, AssembleError> {
        let n = basis.len();
        let mut entries = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                let shifted = g.mul(&Polynomial::from_monomial(
                    basis[i].mul(&basis[j]),
                    crate::num::rat_one(),
                ));
                if shifted.degree() > self.degree {
                    return Err(AssembleError::DegreeOverflow(basis[i].mul(&basis[j]), self.degree));
                }
                entries.push(self.poly_moment_expr(&shifted)?);
            }
        }
        Ok(PsdBlock {
            label,
            basis,
            g: g.clone(),
            entries,
        })
    }

    fn push_row(&mut self, row: LinRow) {
        let key = (row.expr.clone(), row.equality);
        if self.row_set.insert(key) {
            self.rows.push(row);
        }
    }

    /// Adds a linear moment row `form rel rhs` (each monomial of `form`
    /// replaced by its moment variable).
    pub fn add_moment_row(
        &mut self,
        label: String,
        kind: RowKind,
        form: &Polynomial,
        rel: Rel,
        rhs: &Rat,
    ) -> Result<(), AssembleError> {
        let mut shifted = form.clone();
        shifted.add_term(Monomial::one(), -rhs.clone());
        match rel {
            Rel::Ge => {
                let expr = self.poly_moment_expr(&shifted)?;
                self.push_row(LinRow {
                    label,
                    kind,
                    expr,
                    equality: false,
                    form: shifted,
                });
            }
            Rel::Le => {
                let neg = shifted.scale(&-crate::num::rat_one());
                let expr = self.poly_moment_expr(&neg)?;
                self.push_row(LinRow {
                    label,
                    kind,
                    expr,
                    equality: false,
                    form: neg,
                });
            }
            Rel::Eq => {
                let expr = self.poly_moment_expr(&shifted)?;
                self.push_row(LinRow {
                    label,
                    kind,
                    expr,
                    equality: true,
                    form: shifted,
                });
            }
        }
        Ok(())
    }

    /// Adds one ground logical constraint. Inequalities of slack degree
    /// below 2 become linear rows; otherwise they get a localizing matrix.
    /// Equalities contribute all shifted rows `mu * h = 0` up to degree d.
    pub fn add_logical(
        &mut self,
        atoms: &BTreeSet<Term>,
        label: String,
        c: &crate::lang::PolyConstraint,
    ) -> Result<(), AssembleError> {
        // normalize to g >= 0 or h = 0 with the rhs folded in
        let mut g = c.poly.clone();
        g.add_term(Monomial::one(), -c.rhs.clone());
        match c.rel {
            Rel::Le => {
                let g = g.scale(&-crate::num::rat_one());
                self.add_inequality(atoms, label, &g)
            }
            Rel::Ge => self.add_inequality(atoms, label, &g),
            Rel::Eq => {
                let dh = g.degree();
                if dh > self.degree {
                    return Err(AssembleError::DegreeOverflow(
                        g.monomials().last().cloned().unwrap_or_default(),
                        self.degree,
                    ));
                }
                for shift in monomials_up_to_degree(atoms, self.degree - dh) {
                    let shifted = g.mul(&Polynomial::from_monomial(shift.clone(), crate::num::rat_one()));
                    let expr = self.poly_moment_expr(&shifted)?;
                    self.push_row(LinRow {
                        label: if shift.is_one() {
                            label.clone()
                        } else {
                            format!("{label} shifted by {shift}")
                        },
                        kind: RowKind::ShiftedEquality,
                        expr,
                        equality: true,
                        form: shifted,
                    });
                }
                Ok(())
            }
        }
    }

    fn add_inequality(
        &mut self,
        atoms: &BTreeSet<Term>,
        label: String,
        g: &Polynomial,
    ) -> Result<(), AssembleError> {
        let dg = g.degree();
        if dg > self.degree {
            return Err(AssembleError::DegreeOverflow(
                g.monomials().last().cloned().unwrap_or_default(),
                self.degree,
            ));
        }
        let basis_deg = (self.degree - dg) / 2;
        if basis_deg == 0 {
            let expr = self.poly_moment_expr(g)?;
            self.push_row(LinRow {
                label,
                kind: RowKind::Inequality,
                expr,
                equality: false,
                form: g.clone(),
            });
            return Ok(());
        }
        let mut basis = monomials_up_to_degree(atoms, basis_deg);
        basis.sort_by(grlex);
        let block = self.build_localizing_matrix(label, g, basis)?;
        self.blocks.push(block);
        Ok(())
    }

    /// Adds every constraint of a ground set.
    pub fn add_ground_set(&mut self, ground: &GroundConstraintSet) -> Result<(), AssembleError> {
        for (i, c) in ground.constraints.iter().enumerate() {
            match c {
                GroundConstraint::Logical(p) => {
                    self.add_logical(&ground.atoms, format!("g{i}: {p}"), p)?;
                }
                GroundConstraint::Expectation { combo, rel, rhs } => {
                    self.add_moment_row(
                        format!("b{i}: {} {} {}", combo.display_as_moments(), rel, fmt_rat(rhs)),
                        RowKind::Expectation,
                        combo,
                        *rel,
                        rhs,
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Explicit-compactness rows: `L <= e(v) <= U` for every lifted
    /// moment variable.
    pub fn add_bound_rows(&mut self, table: &BoundsTable) -> Result<(), AssembleError> {
        let mut missing = Vec::new();
        let reps: Vec<Monomial> = self.classes.iter().map(|c| c.representative.clone()).collect();
        for rep in reps {
            match table.bounds_for(&rep) {
                Ok((lo, hi)) => {
                    let p = Polynomial::from_monomial(rep.clone(), crate::num::rat_one());
                    self.add_moment_row(
                        format!("bound: E[{rep}] >= {}", fmt_rat(&lo)),
                        RowKind::Bound,
                        &p,
                        Rel::Ge,
                        &lo,
                    )?;
                    self.add_moment_row(
                        format!("bound: E[{rep}] <= {}", fmt_rat(&hi)),
                        RowKind::Bound,
                        &p,
                        Rel::Le,
                        &hi,
                    )?;
                }
                Err(_) => missing.push(rep),
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(AssembleError::CompactnessViolation(missing))
        }
    }
}
