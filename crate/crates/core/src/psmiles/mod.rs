//! P-SMILES parsing, tokenization, star rewriting, and MLM masking.
//!
//! A P-SMILES string is the monomer SMILES with two `*` wildcard atoms
//! marking the polymerization sites, e.g. `*CC*` for polyethylene. This
//! module implements a minimal single-component SMILES grammar (organic
//! subset, bracket atoms, branches, ring closures; no stereo/valence
//! semantics), the three star-handling strategies used for conformer
//! generation, chemical-aware tokenization, and BERT-style masking.

mod mask;
mod parse;
mod synth;
mod tokenize;
mod transform;

pub use mask::{
    apply_masking, build_vocabulary, MaskedSequence, Vocabulary, CLS_ID, MASK_ID, NUM_RESERVED,
    PAD_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID,
};
pub use parse::{parse, Atom, Bond, BondOrder, MolGraph};
pub use synth::{synthesize_corpus, SynthOptions};
pub use tokenize::{detokenize, tokenize, TokenSequence, CLS_TOKEN, SEP_TOKEN};
pub use transform::{transform_stars, StarStrategy};

use thiserror::Error;

/// Errors for P-SMILES validation, parsing, tokenization, and rewriting.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PsmilesError {
    #[error("empty input")]
    EmptyInput,
    #[error("character {ch:?} at byte {pos} is outside the SMILES alphabet")]
    InvalidCharacter { ch: char, pos: usize },
    #[error("expected 0 or 2 '*' wildcards, found {found}")]
    StarCount { found: usize },
    #[error("unbalanced parentheses (token {0})")]
    UnbalancedParentheses(usize),
    #[error("ring-closure bond {0:?} opened but never closed")]
    DanglingRingBond(String),
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("'*' atom bonded to {degree} atoms; polymerization sites must have degree 1")]
    StarDegree { degree: usize },
    #[error("dot-disconnected SMILES are not supported (polymers are single components)")]
    DotDisconnect,
    #[error("unterminated bracket atom starting at byte {0}")]
    UnterminatedBracketAtom(usize),
    #[error("'%' ring closure at byte {0} needs two digits")]
    MalformedPercentClosure(usize),
    #[error("unexpected {what} (token {pos})")]
    Syntax { what: String, pos: usize },
    #[error("the two '*' wildcards are bonded to each other")]
    AdjacentStars,
    #[error("token sequence has no body tokens")]
    EmptyBody,
    #[error("invalid token sequence: {0}")]
    InvalidTokenSequence(String),
}

pub type Result<T> = std::result::Result<T, PsmilesError>;

/// A validated P-SMILES (or plain SMILES) string.
///
/// Construction enforces the character alphabet and the star-count rule:
/// exactly two `*` wildcards (polymer form) or none (converted/plain form).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PSmiles {
    text: String,
}

const PUNCTUATION: &str = "()[]=#-+/\\.:%*@";

impl PSmiles {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(PsmilesError::EmptyInput);
        }
        for (pos, ch) in text.char_indices() {
            if !(ch.is_ascii_alphanumeric() || PUNCTUATION.contains(ch)) {
                return Err(PsmilesError::InvalidCharacter { ch, pos });
            }
        }
        let stars = text.matches('*').count();
        if stars != 0 && stars != 2 {
            return Err(PsmilesError::StarCount { found: stars });
        }
        Ok(Self { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn star_count(&self) -> usize {
        self.text.matches('*').count()
    }

    /// True when the string carries the two polymerization-site wildcards.
    pub fn is_polymer_form(&self) -> bool {
        self.star_count() == 2
    }

    /// Heavy (non-star, non-hydrogen) atom count; parses the string.
    pub fn heavy_atom_count(&self) -> Result<usize> {
        Ok(parse(self)?.heavy_atom_count())
    }
}

impl std::fmt::Display for PSmiles {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

impl std::str::FromStr for PSmiles {
    type Err = PsmilesError;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}
