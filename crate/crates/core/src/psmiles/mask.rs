//! Vocabulary construction and BERT-style masking.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use super::tokenize::tokenize;
use super::{PSmiles, PsmilesError, Result, TokenSequence};

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const MASK_ID: usize = 3;
pub const UNK_ID: usize = 4;
pub const NUM_RESERVED: usize = 5;

/// Reserved tokens at the fixed ids 0–4.
pub const SPECIAL_TOKENS: [&str; NUM_RESERVED] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"];

/// Bijective token ↔ id map with the reserved block at ids 0–4 followed by
/// the sorted unique corpus tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_sorted_body_tokens(body: impl IntoIterator<Item = String>) -> Self {
        let mut id_to_token: Vec<String> =
            SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(body);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            id_to_token,
            token_to_id,
        }
    }

    /// Rebuilds a vocabulary from a checkpointed token list.
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_RESERVED
            || tokens[..NUM_RESERVED]
                .iter()
                .zip(SPECIAL_TOKENS)
                .any(|(t, s)| t != s)
        {
            return Err(PsmilesError::InvalidTokenSequence(
                "vocabulary must start with the reserved token block".into(),
            ));
        }
        Ok(Self::from_sorted_body_tokens(
            tokens[NUM_RESERVED..].iter().cloned(),
        ))
    }

    pub fn token_list(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Token id, falling back to `[UNK]` for out-of-vocabulary tokens.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Encodes a token sequence into ids (`encode_ids`).
    pub fn encode(&self, t: &TokenSequence) -> Vec<usize> {
        t.tokens().iter().map(|tok| self.id(tok)).collect()
    }

    /// Ids of ordinary (non-reserved) tokens.
    pub fn non_special_ids(&self) -> std::ops::Range<usize> {
        NUM_RESERVED..self.len()
    }
}

/// Builds the vocabulary of a corpus: reserved block + sorted unique tokens.
pub fn build_vocabulary(corpus: &[PSmiles]) -> Result<Vocabulary> {
    let mut unique = BTreeSet::new();
    for p in corpus {
        for tok in tokenize(p)?.body() {
            unique.insert(tok.clone());
        }
    }
    Ok(Vocabulary::from_sorted_body_tokens(unique))
}

/// A masking outcome: corrupted ids plus the label at every masked position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    /// Ids after corruption.
    pub input_ids: Vec<usize>,
    /// Positions in `input_ids` selected for masking (sorted).
    pub mask_positions: Vec<usize>,
    /// Original ids at `mask_positions` (aligned).
    pub labels: Vec<usize>,
}

impl MaskedSequence {
    pub fn mask_count(&self) -> usize {
        self.mask_positions.len()
    }
}

/// BERT-style corruption: every non-special position is independently
/// selected with probability `rate`; a selected position becomes `[MASK]`
/// with probability 0.8, a random non-special token with 0.1, and stays
/// unchanged with 0.1. Labels record the original ids on the selected set.
pub fn apply_masking(
    t: &TokenSequence,
    vocab: &Vocabulary,
    rate: f64,
    rng: &mut impl Rng,
) -> MaskedSequence {
    assert!((0.0..=1.0).contains(&rate), "mask rate must be in [0,1]");
    let original = vocab.encode(t);
    let mut input_ids = original.clone();
    let mut mask_positions = Vec::new();
    let mut labels = Vec::new();
    let pool = vocab.non_special_ids();

    for (pos, &id) in original.iter().enumerate() {
        if id < NUM_RESERVED {
            continue;
        }
        if rng.random::<f64>() >= rate {
            continue;
        }
        mask_positions.push(pos);
        labels.push(id);
        let branch = rng.random::<f64>();
        if branch < 0.8 || pool.is_empty() {
            input_ids[pos] = MASK_ID;
        } else if branch < 0.9 {
            input_ids[pos] = rng.random_range(pool.clone());
        }
        // else: left unchanged
    }

    MaskedSequence {
        input_ids,
        mask_positions,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab_of(strings: &[&str]) -> (Vec<TokenSequence>, Vocabulary) {
        let corpus: Vec<PSmiles> = strings.iter().map(|s| PSmiles::new(*s).unwrap()).collect();
        let seqs = corpus.iter().map(|p| tokenize(p).unwrap()).collect();
        let vocab = build_vocabulary(&corpus).unwrap();
        (seqs, vocab)
    }

    #[test]
    fn vocabulary_reserved_block_then_sorted_tokens() {
        let (_, v) = vocab_of(&["*CC*"]);
        assert_eq!(v.len(), NUM_RESERVED + 2);
        assert_eq!(v.token(5), Some("*"));
        assert_eq!(v.token(6), Some("C"));
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.token(i), Some(*s));
        }
    }

    #[test]
    fn reserved_ids_stable_across_corpora() {
        let (_, a) = vocab_of(&["*CC*"]);
        let (_, b) = vocab_of(&["*Oc1ccc(CC(*)=O)cc1", "CCl"]);
        for s in SPECIAL_TOKENS {
            assert_eq!(a.id(s), b.id(s));
        }
    }

    #[test]
    fn unknown_token_maps_to_unk() {
        let (_, v) = vocab_of(&["*CC*"]);
        assert_eq!(v.id("Br"), UNK_ID);
    }

    #[test]
    fn encode_known_sequence() {
        let (seqs, v) = vocab_of(&["*CC*"]);
        let ids = v.encode(&seqs[0]);
        assert_eq!(ids, vec![CLS_ID, v.id("*"), v.id("C"), v.id("C"), v.id("*"), SEP_ID]);
    }

    #[test]
    fn zero_rate_masks_nothing() {
        let (seqs, v) = vocab_of(&["*NCCCCCC(*)=O"]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = apply_masking(&seqs[0], &v, 0.0, &mut rng);
        assert!(m.mask_positions.is_empty());
        assert_eq!(m.input_ids, v.encode(&seqs[0]));
    }

    #[test]
    fn full_rate_masks_every_body_position() {
        let (seqs, v) = vocab_of(&["*NCCCCCC(*)=O"]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = apply_masking(&seqs[0], &v, 1.0, &mut rng);
        let body_len = seqs[0].len() - 2;
        assert_eq!(m.mask_count(), body_len);
        assert_eq!(m.mask_positions, (1..=body_len).collect::<Vec<_>>());
        let original = v.encode(&seqs[0]);
        assert_eq!(
            m.labels,
            m.mask_positions.iter().map(|&p| original[p]).collect::<Vec<_>>()
        );
    }

    #[test]
    fn masking_never_touches_special_positions() {
        let (seqs, v) = vocab_of(&["*Oc1ccc(CC(*)=O)cc1"]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = apply_masking(&seqs[0], &v, 0.5, &mut rng);
            assert!(!m.mask_positions.contains(&0));
            assert!(!m.mask_positions.contains(&(seqs[0].len() - 1)));
            // Corruption can never write a special id other than [MASK].
            for (&pos, _) in m.mask_positions.iter().zip(&m.labels) {
                let id = m.input_ids[pos];
                assert!(id == MASK_ID || id >= NUM_RESERVED);
            }
        }
    }

    #[test]
    fn masking_statistics_match_bert_split() {
        // ~10k maskable tokens at rate 0.15: fraction in [0.14, 0.16] and the
        // 80/10/10 branch split within ±2 percentage points.
        let (seqs, v) = vocab_of(&["*NCCCCCC(*)=O", "*CC(*)F", "*Oc1ccc(CC(*)=O)cc1"]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut maskable = 0usize;
        let mut selected = 0usize;
        let (mut to_mask, mut to_random, mut to_same) = (0usize, 0usize, 0usize);
        while maskable < 10_000 {
            for seq in &seqs {
                let original = v.encode(seq);
                maskable += original.iter().filter(|&&id| id >= NUM_RESERVED).count();
                let m = apply_masking(seq, &v, 0.15, &mut rng);
                selected += m.mask_count();
                for (&pos, &label) in m.mask_positions.iter().zip(&m.labels) {
                    let now = m.input_ids[pos];
                    if now == MASK_ID {
                        to_mask += 1;
                    } else if now == label {
                        to_same += 1;
                    } else {
                        to_random += 1;
                    }
                }
            }
        }
        let frac = selected as f64 / maskable as f64;
        assert!((0.14..=0.16).contains(&frac), "masked fraction {frac}");
        let n = selected as f64;
        let p_mask = to_mask as f64 / n;
        let p_rand = to_random as f64 / n;
        let p_same = to_same as f64 / n;
        assert!((p_mask - 0.8).abs() <= 0.02, "mask branch {p_mask}");
        // The "random token" draw can reproduce the original id by chance, in
        // which case it is indistinguishable from "unchanged"; allow for that
        // within the same ±2pp window.
        assert!((p_rand - 0.1).abs() <= 0.02, "random branch {p_rand}");
        assert!((p_same - 0.1).abs() <= 0.02, "unchanged branch {p_same}");
    }

    #[test]
    fn vocabulary_token_list_roundtrip() {
        let (_, v) = vocab_of(&["*NCCCCCC(*)=O"]);
        let rebuilt = Vocabulary::from_token_list(v.token_list().to_vec()).unwrap();
        assert_eq!(rebuilt, v);
    }
}
