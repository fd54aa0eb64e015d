//! Chemical-aware tokenization.
//!
//! Longest-match token classes: bracket atoms `[...]` are a single token,
//! two-letter elements (Cl, Br, Si, Se) beat their one-letter prefixes,
//! `%nn` ring closures are a single token, everything else is one character.
//! A tokenized sequence is wrapped in `[CLS]` ... `[SEP]`.

use super::{PSmiles, PsmilesError, Result};

pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

const TWO_LETTER_ELEMENTS: [&str; 4] = ["Cl", "Br", "Si", "Se"];

/// Token list with leading `[CLS]` and trailing `[SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    /// Validates the special-token frame: `[CLS]` first, `[SEP]` last, no
    /// special tokens in the body.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(PsmilesError::InvalidTokenSequence(
                "needs at least [CLS] and [SEP]".into(),
            ));
        }
        if tokens.first().map(String::as_str) != Some(CLS_TOKEN) {
            return Err(PsmilesError::InvalidTokenSequence(
                "first token must be [CLS]".into(),
            ));
        }
        if tokens.last().map(String::as_str) != Some(SEP_TOKEN) {
            return Err(PsmilesError::InvalidTokenSequence(
                "last token must be [SEP]".into(),
            ));
        }
        if tokens[1..tokens.len() - 1]
            .iter()
            .any(|t| super::SPECIAL_TOKENS.contains(&t.as_str()))
        {
            return Err(PsmilesError::InvalidTokenSequence(
                "special token inside body".into(),
            ));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Body tokens, i.e. everything between `[CLS]` and `[SEP]`.
    pub fn body(&self) -> &[String] {
        &self.tokens[1..self.tokens.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Splits raw text into body tokens with their byte offsets.
pub(super) fn scan(text: &str) -> Result<Vec<(String, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == '[' {
            let close = text[i..]
                .find(']')
                .ok_or(PsmilesError::UnterminatedBracketAtom(i))?;
            out.push((text[i..i + close + 1].to_string(), i));
            i += close + 1;
        } else if c == '%' {
            if bytes.get(i + 1).is_some_and(u8::is_ascii_digit)
                && bytes.get(i + 2).is_some_and(u8::is_ascii_digit)
            {
                out.push((text[i..i + 3].to_string(), i));
                i += 3;
            } else {
                return Err(PsmilesError::MalformedPercentClosure(i));
            }
        } else if let Some(two) = TWO_LETTER_ELEMENTS
            .iter()
            .find(|e| text[i..].starts_with(**e))
        {
            out.push(((*two).to_string(), i));
            i += 2;
        } else {
            out.push((c.to_string(), i));
            i += 1;
        }
    }
    Ok(out)
}

/// Tokenizes a validated P-SMILES string, wrapping it in `[CLS]`/`[SEP]`.
pub fn tokenize(p: &PSmiles) -> Result<TokenSequence> {
    let mut tokens = vec![CLS_TOKEN.to_string()];
    tokens.extend(scan(p.text())?.into_iter().map(|(t, _)| t));
    tokens.push(SEP_TOKEN.to_string());
    TokenSequence::new(tokens)
}

/// Concatenates the body tokens back into the original string.
pub fn detokenize(t: &TokenSequence) -> Result<PSmiles> {
    if t.body().is_empty() {
        return Err(PsmilesError::EmptyBody);
    }
    PSmiles::new(t.body().concat())
}
