//! Grounding over constants plus `k` fresh generic names, and the
//! renaming-orbit canonicalization behind the grounding-lift.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use crate::lang::{
    Constraint, ExpectationConstraint, KnowledgeBase, Name, PolyConstraint,
    Rel, Term,
};
use crate::num::Rat;
use crate::poly::{Monomial, Polynomial};

/// Fully instantiated constraint.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum GroundConstraint {
    Logical(PolyConstraint),
    Expectation {
        combo: Polynomial,
        rel: Rel,
        rhs: Rat,
    },
}

impl fmt::Display for GroundConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroundConstraint::Logical(c) => write!(f, "{c}"),
            GroundConstraint::Expectation { combo, rel, rhs } => {
                write!(f, "{} {} {}", combo.display_as_moments(), rel, crate::num::fmt_rat(rhs))
            }
        }
    }
}

/// Ground instance of a conditional rule.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroundConditional {
    pub premise: ExpectationConstraint,
    pub conclusion: PolyConstraint,
}

#[derive(Clone, Debug, Default)]
pub struct GroundConstraintSet {
    pub constraints: Vec<GroundConstraint>,
    pub conditionals: Vec<GroundConditional>,
    /// Constants then `k` generics, deterministic order.
    pub universe: Vec<Name>,
    /// Ground atoms appearing in constraints (conditionals included).
    pub atoms: BTreeSet<Term>,
}

impl GroundConstraintSet {
    pub fn logical(&self) -> impl Iterator<Item = &PolyConstraint> {
        self.constraints.iter().filter_map(|c| match c {
            GroundConstraint::Logical(p) => Some(p),
            _ => None,
        })
    }
}

/// `GND(kb, k)`: every guard-satisfying substitution of each constraint's
/// variables by the constants plus `k` generic names.
pub fn ground(kb: &KnowledgeBase, k: usize) -> GroundConstraintSet {
    let mut universe: Vec<Name> = kb
        .constants
        .iter()
        .map(|c| Name::Constant(c.clone()))
        .collect();
    for i in 1..=k {
        universe.push(Name::Generic(i));
    }
    let mut constraints: BTreeSet<GroundConstraint> = BTreeSet::new();
    let mut conditionals: BTreeSet<GroundConditional> = BTreeSet::new();
    for c in &kb.constraints {
        match c {
            Constraint::Logical(l) => {
                for theta in crate::lang::enumerate_substitutions(&l.vars, &universe) {
                    if !l.guard.eval(&theta) {
                        continue;
                    }
                    constraints.insert(GroundConstraint::Logical(l.body.substitute(&theta)));
                }
            }
            Constraint::Expectation(e) => {
                for theta in crate::lang::enumerate_substitutions(&e.vars, &universe) {
                    if !e.guard.eval(&theta) {
                        continue;
                    }
                    let inst = e.substitute(&theta);
                    constraints.insert(GroundConstraint::Expectation {
                        combo: inst.combo,
                        rel: inst.rel,
                        rhs: inst.rhs,
                    });
                }
            }
            Constraint::Conditional(r) => {
                for theta in crate::lang::enumerate_substitutions(&r.vars, &universe) {
                    conditionals.insert(GroundConditional {
                        premise: r.premise.substitute(&theta),
                        conclusion: r.conclusion.body.substitute(&theta),
                    });
                }
            }
        }
    }
    let mut atoms: BTreeSet<Term> = BTreeSet::new();
    let mut collect = |p: &Polynomial| {
        for t in p.atoms() {
            atoms.insert(t);
        }
    };
    for c in &constraints {
        match c {
            GroundConstraint::Logical(p) => collect(&p.poly),
            GroundConstraint::Expectation { combo, .. } => collect(combo),
        }
    }
    for r in &conditionals {
        collect(&r.premise.combo);
        collect(&r.conclusion.poly);
    }
    GroundConstraintSet {
        constraints: constraints.into_iter().collect(),
        conditionals: conditionals.into_iter().collect(),
        universe,
        atoms,
    }
}

/// Renaming orbit of a ground monomial: the lexicographically least member
/// over all relabelings of its generic names. Constants are fixed by every
/// renaming. Idempotent, and invariant under renaming substitutions.
pub fn canonical_form(m: &Monomial) -> Monomial {
    let gens = m.generics();
    if gens.is_empty() {
        return m.clone();
    }
    assert!(
        gens.len() <= 8,
        "canonicalization guard: more than 8 distinct generics in one monomial"
    );
    let mut best: Option<Monomial> = None;
    let mut labels: Vec<usize> = (1..=gens.len()).collect();
    permute(&mut labels, 0, &mut |perm| {
        let map: BTreeMap<usize, usize> = gens.iter().cloned().zip(perm.iter().cloned()).collect();
        let cand = m.relabel_generics(&map);
        if best.as_ref().map_or(true, |b| cand < *b) {
            best = Some(cand);
        }
    });
    best.unwrap()
}

fn permute(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, f);
        items.swap(k, i);
    }
}

/// One lifted moment variable per renaming orbit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LiftClass {
    pub representative: Monomial,
    pub members: Vec<Monomial>,
}

/// Partitions ground monomials into renaming orbits (fibers of
/// `canonical_form`), sorted by representative.
pub fn equivalence_classes(monomials: impl IntoIterator<Item = Monomial>) -> Vec<LiftClass> {
    let mut by_canon: BTreeMap<Monomial, BTreeSet<Monomial>> = BTreeMap::new();
    for m in monomials {
        let c = canonical_form(&m);
        by_canon.entry(c).or_default().insert(m);
    }
    by_canon
        .into_iter()
        .map(|(representative, members)| LiftClass {
            representative,
            members: members.into_iter().collect(),
        })
        .collect()
}

/// All ground monomials of degree at most `d` over the given atoms,
/// graded-lexicographic order.
pub fn monomials_up_to_degree(atoms: &BTreeSet<Term>, d: u32) -> Vec<Monomial> {
    let atom_list: Vec<&Term> = atoms.iter().collect();
    let mut out: Vec<Monomial> = Vec::new();
    let mut stack: Vec<(usize, Monomial)> = alloc::vec![(0, Monomial::one())];
    while let Some((start, m)) = stack.pop() {
        out.push(m.clone());
        if m.degree() >= d {
            continue;
        }
        for (i, t) in atom_list.iter().enumerate().skip(start) {
            stack.push((i, m.mul(&Monomial::atom((*t).clone()))));
        }
    }
    out.sort_by(crate::poly::grlex);
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_kb;

    fn gen(i: usize) -> Name {
        Name::Generic(i)
    }

    fn atom2(p: &str, a: Name, b: Name) -> Term {
        Term::atom(p, alloc::vec![a, b])
    }

    fn atom1(p: &str, a: Name) -> Term {
        Term::atom(p, alloc::vec![a])
    }

    fn cst(s: &str) -> Name {
        Name::Constant(s.into())
    }

    #[test]
    fn grounding_example_three_constraints() {
        let kb = parse_kb("forall x: P(x, alex) >= 0\n").unwrap();
        let g = ground(&kb, 2);
        assert_eq!(g.constraints.len(), 3);
        assert_eq!(g.atoms.len(), 3);
        assert!(g.atoms.contains(&atom2("P", cst("alex"), cst("alex"))));
        assert!(g.atoms.contains(&atom2("P", gen(1), cst("alex"))));
        assert!(g.atoms.contains(&atom2("P", gen(2), cst("alex"))));
    }

    #[test]
    fn guard_selects_single_substitution() {
        let kb = parse_kb("forall x: (x = alex) => Q(x) >= 0\n").unwrap();
        let g = ground(&kb, 2);
        assert_eq!(g.constraints.len(), 1);
        assert!(g.atoms.contains(&atom1("Q", cst("alex"))));
    }

    #[test]
    fn disequality_guard_drops_diagonal() {
        let kb = parse_kb("forall x, y: !(x = y) => R(x,y) >= 0\nQ(alex) >= 0\n").unwrap();
        let g = ground(&kb, 1);
        // universe {alex, g1}: R(alex,g1), R(g1,alex) plus the ground Q
        let r_count = g
            .constraints
            .iter()
            .filter(|c| match c {
                GroundConstraint::Logical(p) => {
                    p.poly.monomials().any(|m| m.terms().any(|t| t.pred == "R"))
                }
                _ => false,
            })
            .count();
        assert_eq!(r_count, 2);
        assert!(g.atoms.contains(&atom2("R", cst("alex"), gen(1))));
        assert!(g.atoms.contains(&atom2("R", gen(1), cst("alex"))));
    }

    #[test]
    fn grounding_monotone_in_k() {
        let kb = parse_kb("forall x: P(x, alex) >= 0\n").unwrap();
        let g2 = ground(&kb, 2);
        let g3 = ground(&kb, 3);
        for c in &g2.constraints {
            assert!(g3.constraints.contains(c));
        }
    }

    #[test]
    fn canonical_relabels_single_generic() {
        // P(g7,alex)^2 -> P(g1,alex)^2
        let m = Monomial::from_pairs([(atom2("P", gen(7), cst("alex")), 2)]);
        let c = canonical_form(&m);
        assert_eq!(c, Monomial::from_pairs([(atom2("P", gen(1), cst("alex")), 2)]));
        assert_eq!(canonical_form(&c), c, "idempotent");
    }

    #[test]
    fn canonical_merges_renaming_orbit() {
        // P(g3,alex)*Q(g5) and P(g9,alex)*Q(g2) share a canonical form
        let m1 = Monomial::from_pairs([
            (atom2("P", gen(3), cst("alex")), 1),
            (atom1("Q", gen(5)), 1),
        ]);
        let m2 = Monomial::from_pairs([
            (atom2("P", gen(9), cst("alex")), 1),
            (atom1("Q", gen(2)), 1),
        ]);
        assert_eq!(canonical_form(&m1), canonical_form(&m2));
    }

    #[test]
    fn constants_fixed_by_every_renaming() {
        let m = Monomial::atom(atom2("P", cst("alex"), cst("alex")));
        assert_eq!(canonical_form(&m), m);
    }

    #[test]
    fn cyclic_orbit_handled() {
        // R(g1,g2)*R(g2,g3) and R(g1,g2)*R(g3,g1) are renaming-equivalent;
        // first-occurrence relabeling alone would split them.
        let a = Monomial::from_pairs([
            (atom2("R", gen(1), gen(2)), 1),
            (atom2("R", gen(2), gen(3)), 1),
        ]);
        let b = Monomial::from_pairs([
            (atom2("R", gen(1), gen(2)), 1),
            (atom2("R", gen(3), gen(1)), 1),
        ]);
        assert_eq!(canonical_form(&a), canonical_form(&b));
    }

    #[test]
    fn classes_partition_grounding_example() {
        let atoms = [
            atom2("P", cst("alex"), cst("alex")),
            atom2("P", gen(1), cst("alex")),
            atom2("P", gen(2), cst("alex")),
        ];
        let classes = equivalence_classes(atoms.iter().cloned().map(Monomial::atom));
        assert_eq!(classes.len(), 2);
        let sizes: Vec<usize> = classes.iter().map(|c| c.members.len()).collect();
        assert_eq!(sizes, alloc::vec![1, 2]);
    }

    #[test]
    fn empty_classes() {
        assert!(equivalence_classes(core::iter::empty()).is_empty());
    }

    #[test]
    fn degree_enumeration_counts() {
        let mut atoms = BTreeSet::new();
        atoms.insert(atom1("Q", cst("a")));
        atoms.insert(atom1("Q", cst("b")));
        // degree <= 2 over 2 atoms: 1 + 2 + 3 = 6
        assert_eq!(monomials_up_to_degree(&atoms, 2).len(), 6);
    }
}
