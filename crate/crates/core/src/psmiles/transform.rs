//! Star-handling strategies for conformer-side processing.
//!
//! * `Keep` — use the P-SMILES string as-is (stars stay as pseudo-atoms);
//! * `Remove` — strip both `*` wildcards, yielding the bare monomer;
//! * `Substitute` — replace each `*` with the element symbol of the heavy
//!   atom bonded to the *other* star, so each chain end mimics the bonding
//!   context of the neighboring repeating unit.

use super::parse::parse_tokens;
use super::tokenize::scan;
use super::{PSmiles, PsmilesError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarStrategy {
    Keep,
    Remove,
    Substitute,
}

impl StarStrategy {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "keep" => Some(Self::Keep),
            "remove" => Some(Self::Remove),
            "substitute" => Some(Self::Substitute),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Keep => "keep",
            Self::Remove => "remove",
            Self::Substitute => "substitute",
        }
    }
}

impl std::fmt::Display for StarStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const BARE_EMITTABLE: [&str; 10] = ["B", "C", "N", "O", "P", "S", "F", "I", "Cl", "Br"];
const BARE_TWO_LETTER: [&str; 2] = ["Si", "Se"];

/// Token that re-parses as the given element outside brackets.
fn replacement_token(element: &str) -> String {
    if BARE_EMITTABLE.contains(&element) || BARE_TWO_LETTER.contains(&element) {
        element.to_string()
    } else {
        format!("[{element}]")
    }
}

fn is_bond_token(t: &str) -> bool {
    matches!(t, "-" | "=" | "#" | ":" | "/" | "\\")
}

/// Applies a star strategy to a polymer-form P-SMILES string.
///
/// `Keep` is the identity on any form. `Remove` and `Substitute` require
/// exactly two stars that are not bonded to each other; both return a string
/// that re-parses under [`super::parse`].
pub fn transform_stars(p: &PSmiles, strategy: StarStrategy) -> Result<PSmiles> {
    if strategy == StarStrategy::Keep {
        return Ok(p.clone());
    }
    let found = p.star_count();
    if found != 2 {
        return Err(PsmilesError::StarCount { found });
    }

    let tokens: Vec<String> = scan(p.text())?.into_iter().map(|(t, _)| t).collect();
    let graph = parse_tokens(&tokens)?;

    // Atom index -> token index, in occurrence order.
    let atom_token_idx: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| is_atom_token(t))
        .map(|(i, _)| i)
        .collect();
    debug_assert_eq!(atom_token_idx.len(), graph.atoms.len());

    let stars = graph.star_indices();
    let (s1, s2) = (stars[0], stars[1]);
    let n1 = graph.neighbors(s1)[0];
    let n2 = graph.neighbors(s2)[0];
    if n1 == s2 {
        return Err(PsmilesError::AdjacentStars);
    }

    let mut out: Vec<Option<String>> = tokens.iter().cloned().map(Some).collect();
    match strategy {
        StarStrategy::Keep => unreachable!(),
        StarStrategy::Substitute => {
            // Each star takes the symbol of the *other* star's neighbor,
            // uppercased even when that neighbor is written aromatic.
            out[atom_token_idx[s1]] = Some(replacement_token(&graph.atoms[n2].element));
            out[atom_token_idx[s2]] = Some(replacement_token(&graph.atoms[n1].element));
        }
        StarStrategy::Remove => {
            out[atom_token_idx[s1]] = None;
            out[atom_token_idx[s2]] = None;
            cleanup_removed(&mut out);
        }
    }

    let text: String = out.into_iter().flatten().collect();
    let rewritten = PSmiles::new(text)?;
    // Post-condition: the rewritten string must re-parse.
    parse_tokens(
        &scan(rewritten.text())?
            .into_iter()
            .map(|(t, _)| t)
            .collect::<Vec<_>>(),
    )?;
    Ok(rewritten)
}

use super::parse::is_atom_token;

/// Deletes bond symbols and branch parentheses left dangling by star removal:
/// `(*)` collapses to nothing, `C=*` drops the trailing `=`, `*=C` the
/// leading one.
fn cleanup_removed(tokens: &mut Vec<Option<String>>) {
    loop {
        let live: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i].is_some()).collect();
        let tok = |k: Option<&usize>| -> Option<&str> {
            k.and_then(|&i| tokens[i].as_deref())
        };
        let mut removed = false;
        for (pos, &i) in live.iter().enumerate() {
            let t = tokens[i].as_deref().unwrap();
            let prev = tok(pos.checked_sub(1).and_then(|p| live.get(p)));
            let next = tok(live.get(pos + 1));
            if is_bond_token(t) && (next.is_none() || next == Some(")") || prev.is_none()) {
                tokens[i] = None;
                removed = true;
                break;
            }
            if t == "(" && next == Some(")") {
                tokens[i] = None;
                tokens[live[pos + 1]] = None;
                removed = true;
                break;
            }
        }
        if !removed {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(s: &str) -> String {
        transform_stars(&PSmiles::new(s).unwrap(), StarStrategy::Substitute)
            .unwrap()
            .text()
            .to_string()
    }

    fn remove(s: &str) -> String {
        transform_stars(&PSmiles::new(s).unwrap(), StarStrategy::Remove)
            .unwrap()
            .text()
            .to_string()
    }

    #[test]
    fn substitution_golden_nylon_like() {
        assert_eq!(sub("*NCCCCCC(*)=O"), "CNCCCCCC(N)=O");
    }

    #[test]
    fn substitution_golden_aromatic_ester() {
        assert_eq!(sub("*Oc1ccc(CC(*)=O)cc1"), "COc1ccc(CC(O)=O)cc1");
    }

    #[test]
    fn substitution_symmetric_carbons() {
        assert_eq!(sub("*CC(*)F"), "CCC(C)F");
    }

    #[test]
    fn keep_is_identity() {
        let p = PSmiles::new("*CC*").unwrap();
        assert_eq!(transform_stars(&p, StarStrategy::Keep).unwrap(), p);
    }

    #[test]
    fn remove_strips_stars_and_empty_branches() {
        assert_eq!(remove("*CC*"), "CC");
        assert_eq!(remove("*NCCCCCC(*)=O"), "NCCCCCC=O");
        assert_eq!(remove("*Oc1ccc(CC(*)=O)cc1"), "Oc1ccc(CC=O)cc1");
    }

    #[test]
    fn remove_drops_dangling_bonds() {
        assert_eq!(remove("*CC=*"), "CC");
        assert_eq!(remove("*CC(=*)F"), "CCF");
    }

    #[test]
    fn adjacent_stars_rejected() {
        for strategy in [StarStrategy::Remove, StarStrategy::Substitute] {
            assert_eq!(
                transform_stars(&PSmiles::new("**").unwrap(), strategy),
                Err(PsmilesError::AdjacentStars)
            );
        }
    }

    #[test]
    fn star_count_enforced() {
        let plain = PSmiles::new("CCO").unwrap();
        assert_eq!(
            transform_stars(&plain, StarStrategy::Substitute),
            Err(PsmilesError::StarCount { found: 0 })
        );
        assert!(transform_stars(&plain, StarStrategy::Keep).is_ok());
    }

    #[test]
    fn substitute_heavy_atom_count_grows_by_two() {
        for s in ["*CC*", "*NCCCCCC(*)=O", "*Oc1ccc(CC(*)=O)cc1", "*CC(*)F"] {
            let p = PSmiles::new(s).unwrap();
            let before = p.heavy_atom_count().unwrap();
            let after = transform_stars(&p, StarStrategy::Substitute)
                .unwrap()
                .heavy_atom_count()
                .unwrap();
            assert_eq!(after, before + 2, "for {s}");
        }
    }

    #[test]
    fn remove_preserves_heavy_atom_count() {
        for s in ["*CC*", "*NCCCCCC(*)=O", "*Oc1ccc(CC(*)=O)cc1"] {
            let p = PSmiles::new(s).unwrap();
            let before = p.heavy_atom_count().unwrap();
            let after = transform_stars(&p, StarStrategy::Remove)
                .unwrap()
                .heavy_atom_count()
                .unwrap();
            assert_eq!(after, before, "for {s}");
        }
    }

    #[test]
    fn aromatic_neighbor_substitutes_uppercase() {
        // Both stars neighbor aromatic carbons; replacements are bare uppercase C.
        assert_eq!(sub("*c1ccc(*)cc1"), "Cc1ccc(C)cc1");
    }
}
