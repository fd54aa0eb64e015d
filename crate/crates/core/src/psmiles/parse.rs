//! Minimal SMILES graph parser.
//!
//! Grammar (single component, no stereo/valence semantics):
//!
//! ```text
//! smiles  := unit+
//! unit    := atom | bond | branch | ring
//! atom    := organic | aromatic | two-letter | '*' | '[' ... ']'
//! bond    := '-' | '=' | '#' | ':' | '/' | '\'
//! branch  := '(' unit+ ')'
//! ring    := DIGIT | '%' DIGIT DIGIT        (after an atom)
//! ```
//!
//! Atoms are numbered in left-to-right occurrence order. `.` disconnects are
//! rejected; every `*` must end up with degree exactly 1.

use std::collections::HashMap;

use super::tokenize::scan;
use super::{PSmiles, PsmilesError, Result};

/// Elements recognized inside bracket atoms (and the bare organic subset).
const ELEMENTS: [&str; 40] = [
    "H", "B", "C", "N", "O", "F", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "K", "Ca", "Ti", "Cr",
    "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ge", "As", "Se", "Br", "Zr", "Mo", "Pd", "Ag", "Cd",
    "Sn", "Sb", "Te", "I", "Pt", "Au", "Hg", "Pb",
];

const BARE_UPPER: [&str; 8] = ["B", "C", "N", "O", "P", "S", "F", "I"];
const AROMATIC_LOWER: [&str; 6] = ["b", "c", "n", "o", "p", "s"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub index: usize,
    /// Canonical element symbol (`"C"`, `"Si"`, ...); `"*"` for wildcards.
    pub element: String,
    pub aromatic: bool,
    pub is_star: bool,
    /// Original token text, kept for re-serialization.
    pub token: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    fn symbol(self) -> &'static str {
        match self {
            BondOrder::Single => "",
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
            BondOrder::Aromatic => ":",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: BondOrder,
}

/// Molecular graph: atoms in occurrence order plus an undirected bond list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

impl MolGraph {
    pub fn neighbors(&self, idx: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for b in &self.bonds {
            if b.i == idx {
                out.push(b.j);
            } else if b.j == idx {
                out.push(b.i);
            }
        }
        out
    }

    pub fn degree(&self, idx: usize) -> usize {
        self.neighbors(idx).len()
    }

    pub fn star_indices(&self) -> Vec<usize> {
        self.atoms
            .iter()
            .filter(|a| a.is_star)
            .map(|a| a.index)
            .collect()
    }

    /// Non-star, non-hydrogen atom count.
    pub fn heavy_atom_count(&self) -> usize {
        self.atoms
            .iter()
            .filter(|a| !a.is_star && a.element != "H")
            .count()
    }

    pub fn is_connected(&self) -> bool {
        if self.atoms.is_empty() {
            return false;
        }
        let mut seen = vec![false; self.atoms.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Writes the graph back to SMILES via a deterministic DFS from atom 0.
    ///
    /// Atom tokens are re-emitted verbatim, so the output preserves the atom
    /// multiset and bond count rather than the exact input text.
    pub fn to_smiles(&self) -> String {
        if self.atoms.is_empty() {
            return String::new();
        }
        // Pass 1: spanning tree + ring-closure edges, in deterministic order.
        let mut adj: Vec<Vec<(usize, BondOrder, usize)>> = vec![Vec::new(); self.atoms.len()];
        for (bidx, b) in self.bonds.iter().enumerate() {
            adj[b.i].push((b.j, b.order, bidx));
            adj[b.j].push((b.i, b.order, bidx));
        }
        for list in adj.iter_mut() {
            list.sort_by_key(|&(n, _, _)| n);
        }

        let mut visited = vec![false; self.atoms.len()];
        let mut edge_used = vec![false; self.bonds.len()];
        let mut children: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); self.atoms.len()];
        let mut ring_marks: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); self.atoms.len()];
        let mut next_digit = 1usize;

        let mut stack = vec![0usize];
        visited[0] = true;
        let mut order = Vec::new();
        while let Some(u) = stack.pop() {
            order.push(u);
            for &(v, bond, bidx) in &adj[u] {
                if edge_used[bidx] {
                    continue;
                }
                edge_used[bidx] = true;
                if visited[v] {
                    // Ring closure: mark both endpoints with the same digit.
                    ring_marks[u].push((next_digit, bond));
                    ring_marks[v].push((next_digit, bond));
                    next_digit += 1;
                } else {
                    visited[v] = true;
                    children[u].push((v, bond));
                    stack.push(v);
                }
            }
        }

        // Pass 2: recursive emission.
        fn digit_token(d: usize) -> String {
            if d < 10 {
                d.to_string()
            } else {
                format!("%{d:02}")
            }
        }
        fn emit(
            g: &MolGraph,
            u: usize,
            children: &[Vec<(usize, BondOrder)>],
            ring_marks: &[Vec<(usize, BondOrder)>],
            out: &mut String,
        ) {
            out.push_str(&g.atoms[u].token);
            for &(digit, bond) in &ring_marks[u] {
                out.push_str(bond.symbol());
                out.push_str(&digit_token(digit));
            }
            let kids = &children[u];
            for (pos, &(v, bond)) in kids.iter().enumerate() {
                let last = pos + 1 == kids.len();
                if !last {
                    out.push('(');
                }
                out.push_str(bond.symbol());
                emit(g, v, children, ring_marks, out);
                if !last {
                    out.push(')');
                }
            }
        }

        let mut out = String::new();
        emit(self, 0, &children, &ring_marks, &mut out);
        out
    }
}

pub(super) fn is_atom_token(token: &str) -> bool {
    classify_atom(token).is_some()
}

fn classify_atom(token: &str) -> Option<Result<(String, bool, bool)>> {
    if token == "*" {
        return Some(Ok(("*".to_string(), false, true)));
    }
    if token.starts_with('[') {
        return Some(parse_bracket(token));
    }
    if token.len() == 2 && ELEMENTS.contains(&token) {
        return Some(Ok((token.to_string(), false, false)));
    }
    if BARE_UPPER.contains(&token) {
        return Some(Ok((token.to_string(), false, false)));
    }
    if AROMATIC_LOWER.contains(&token) {
        return Some(Ok((token.to_uppercase(), true, false)));
    }
    None
}

/// Extracts the element symbol and aromatic flag from a bracket-atom token.
fn parse_bracket(token: &str) -> Result<(String, bool, bool)> {
    let inner = &token[1..token.len() - 1];
    let rest = inner.trim_start_matches(|c: char| c.is_ascii_digit()); // isotope
    let mut chars = rest.chars();
    let first = chars
        .next()
        .ok_or_else(|| PsmilesError::UnknownElement(token.to_string()))?;
    if !first.is_ascii_alphabetic() {
        return Err(PsmilesError::UnknownElement(token.to_string()));
    }
    let second = chars.next().filter(|c| c.is_ascii_lowercase());
    // Prefer the two-letter reading when it names a real element ([Se], [Cl]);
    // otherwise fall back to one letter ([CH3] reads as carbon).
    let aromatic = first.is_ascii_lowercase();
    let mut sym_two = None;
    if let Some(s) = second {
        let cand: String = first.to_ascii_uppercase().to_string() + &s.to_string();
        if ELEMENTS.contains(&cand.as_str()) {
            sym_two = Some(cand);
        }
    }
    let symbol = match sym_two {
        Some(s) => s,
        None => {
            let cand = first.to_ascii_uppercase().to_string();
            if !ELEMENTS.contains(&cand.as_str()) {
                return Err(PsmilesError::UnknownElement(token.to_string()));
            }
            cand
        }
    };
    Ok((symbol, aromatic, false))
}

fn bond_from_token(token: &str) -> Option<BondOrder> {
    match token {
        "-" | "/" | "\\" => Some(BondOrder::Single),
        "=" => Some(BondOrder::Double),
        "#" => Some(BondOrder::Triple),
        ":" => Some(BondOrder::Aromatic),
        _ => None,
    }
}

/// Parses a validated P-SMILES string into a [`MolGraph`].
pub fn parse(p: &PSmiles) -> Result<MolGraph> {
    let tokens = scan(p.text())?;
    parse_tokens(&tokens.iter().map(|(t, _)| t.clone()).collect::<Vec<_>>())
}

/// Parses a body-token stream (no `[CLS]`/`[SEP]`).
pub(super) fn parse_tokens(tokens: &[String]) -> Result<MolGraph> {
    let mut atoms: Vec<Atom> = Vec::new();
    let mut bonds: Vec<Bond> = Vec::new();
    let mut prev: Option<usize> = None;
    let mut stack: Vec<usize> = Vec::new();
    let mut pending: Option<BondOrder> = None;
    let mut rings: HashMap<String, (usize, Option<BondOrder>)> = HashMap::new();

    for (pos, token) in tokens.iter().enumerate() {
        if token == "." {
            return Err(PsmilesError::DotDisconnect);
        }
        if let Some(class) = classify_atom(token) {
            let (element, aromatic, is_star) = class?;
            let index = atoms.len();
            atoms.push(Atom {
                index,
                element,
                aromatic,
                is_star,
                token: token.clone(),
            });
            if let Some(p) = prev {
                bonds.push(Bond {
                    i: p,
                    j: index,
                    order: pending.take().unwrap_or(BondOrder::Single),
                });
            } else if pending.take().is_some() {
                return Err(PsmilesError::Syntax {
                    what: "bond before first atom".into(),
                    pos,
                });
            }
            prev = Some(index);
        } else if let Some(order) = bond_from_token(token) {
            if pending.is_some() {
                return Err(PsmilesError::Syntax {
                    what: "consecutive bond symbols".into(),
                    pos,
                });
            }
            pending = Some(order);
        } else if token == "(" {
            let Some(p) = prev else {
                return Err(PsmilesError::Syntax {
                    what: "branch before any atom".into(),
                    pos,
                });
            };
            if pending.is_some() {
                return Err(PsmilesError::Syntax {
                    what: "bond before branch open".into(),
                    pos,
                });
            }
            stack.push(p);
        } else if token == ")" {
            if pending.is_some() {
                return Err(PsmilesError::Syntax {
                    what: "dangling bond before ')'".into(),
                    pos,
                });
            }
            prev = Some(
                stack
                    .pop()
                    .ok_or(PsmilesError::UnbalancedParentheses(pos))?,
            );
        } else if (token.len() == 1 && token.chars().all(|c| c.is_ascii_digit()))
            || token.starts_with('%')
        {
            let Some(p) = prev else {
                return Err(PsmilesError::Syntax {
                    what: "ring closure before any atom".into(),
                    pos,
                });
            };
            match rings.remove(token) {
                Some((other, opened_bond)) => {
                    if other == p {
                        return Err(PsmilesError::Syntax {
                            what: "ring closure to the same atom".into(),
                            pos,
                        });
                    }
                    let order = pending
                        .take()
                        .or(opened_bond)
                        .unwrap_or(BondOrder::Single);
                    bonds.push(Bond { i: other, j: p, order });
                }
                None => {
                    rings.insert(token.clone(), (p, pending.take()));
                }
            }
        } else {
            return Err(PsmilesError::UnknownElement(token.clone()));
        }
    }

    if !stack.is_empty() {
        return Err(PsmilesError::UnbalancedParentheses(tokens.len()));
    }
    if pending.is_some() {
        return Err(PsmilesError::Syntax {
            what: "trailing bond symbol".into(),
            pos: tokens.len(),
        });
    }
    if let Some(key) = rings.keys().next() {
        return Err(PsmilesError::DanglingRingBond(key.clone()));
    }
    if atoms.is_empty() {
        return Err(PsmilesError::EmptyInput);
    }

    let graph = MolGraph { atoms, bonds };
    for star in graph.star_indices() {
        let degree = graph.degree(star);
        if degree != 1 {
            return Err(PsmilesError::StarDegree { degree });
        }
    }
    debug_assert!(graph.is_connected(), "dotless SMILES must be connected");
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(s: &str) -> MolGraph {
        parse(&PSmiles::new(s).unwrap()).unwrap()
    }

    fn err(s: &str) -> PsmilesError {
        parse(&PSmiles::new(s).unwrap()).unwrap_err()
    }

    #[test]
    fn single_atom() {
        let g = graph("C");
        assert_eq!(g.atoms.len(), 1);
        assert_eq!(g.bonds.len(), 0);
    }

    #[test]
    fn linear_polymer_unit() {
        let g = graph("*CC*");
        assert_eq!(g.atoms.len(), 4);
        assert_eq!(g.bonds.len(), 3);
        assert_eq!(g.star_indices(), vec![0, 3]);
    }

    #[test]
    fn branch_star_neighbors() {
        let g = graph("*CC(*)F");
        let stars = g.star_indices();
        assert_eq!(stars, vec![0, 3]);
        assert_eq!(g.neighbors(stars[0]), vec![1]);
        assert_eq!(g.neighbors(stars[1]), vec![2]);
    }

    #[test]
    fn ring_closure_pairs() {
        let g = graph("C1CCCCC1");
        assert_eq!(g.atoms.len(), 6);
        assert_eq!(g.bonds.len(), 6);
        assert_eq!(g.degree(0), 2);
    }

    #[test]
    fn aromatic_ring_with_percent_digits() {
        let g = graph("c%25ccccc%25");
        assert_eq!(g.atoms.len(), 6);
        assert_eq!(g.bonds.len(), 6);
        assert!(g.atoms[0].aromatic);
        assert_eq!(g.atoms[0].element, "C");
    }

    #[test]
    fn bond_orders() {
        let g = graph("C=C#N");
        assert_eq!(g.bonds[0].order, BondOrder::Double);
        assert_eq!(g.bonds[1].order, BondOrder::Triple);
    }

    #[test]
    fn bracket_atom_element() {
        let g = graph("C[Si](C)(C)C");
        assert_eq!(g.atoms[1].element, "Si");
        assert_eq!(g.degree(1), 4);
    }

    #[test]
    fn unbalanced_parentheses() {
        assert!(matches!(err("C(CC"), PsmilesError::UnbalancedParentheses(_)));
        assert!(matches!(err("CC)C"), PsmilesError::UnbalancedParentheses(_)));
    }

    #[test]
    fn dangling_ring_bond() {
        assert!(matches!(err("C1CC"), PsmilesError::DanglingRingBond(_)));
    }

    #[test]
    fn unknown_element() {
        assert!(matches!(err("CqC"), PsmilesError::UnknownElement(_)));
        assert!(matches!(err("C[Xx]C"), PsmilesError::UnknownElement(_)));
    }

    #[test]
    fn star_degree_violations() {
        // Degree 2 via chain on both sides.
        assert!(matches!(
            parse(&PSmiles::new("C*C*").unwrap()),
            Err(PsmilesError::StarDegree { degree: 2 })
        ));
        // Degree 2 via ring closure.
        assert!(matches!(
            parse(&PSmiles::new("*1CCC1C*").unwrap()),
            Err(PsmilesError::StarDegree { degree: 2 })
        ));
    }

    #[test]
    fn dot_rejected() {
        assert_eq!(err("C.C"), PsmilesError::DotDisconnect);
    }

    #[test]
    fn reserialization_preserves_atoms_and_bond_count() {
        for s in [
            "*CC(*)F",
            "C1CCCCC1",
            "c1ccc(CC(O)=O)cc1",
            "C[Si](C)(C)OC",
            "CC(C)(C)C#N",
        ] {
            let g = graph(s);
            let written = g.to_smiles();
            let g2 = parse(&PSmiles::new(written.clone()).unwrap())
                .unwrap_or_else(|e| panic!("re-parse of {written:?} failed: {e}"));
            let mut a1: Vec<&str> = g.atoms.iter().map(|a| a.element.as_str()).collect();
            let mut a2: Vec<&str> = g2.atoms.iter().map(|a| a.element.as_str()).collect();
            a1.sort_unstable();
            a2.sort_unstable();
            assert_eq!(a1, a2, "atom multiset for {s}");
            assert_eq!(g.bonds.len(), g2.bonds.len(), "bond count for {s}");
        }
    }
}
