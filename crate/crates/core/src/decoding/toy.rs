//! Hand-set decoders with exactly known distributions, used as search
//! oracles.

use super::{DecodeError, Decoder};
use crate::nn::log_probs;

/// First-order model: the next-token distribution depends only on the
/// previous token. Row `v` of `log_table` is the start distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct TableDecoder {
    pub vocab: usize,
    pub eos: usize,
    pub log_table: Vec<Vec<f64>>,
}

impl TableDecoder {
    /// Builds from unnormalised logits rows, `vocab + 1` of them.
    pub fn from_logits(eos: usize, logits: Vec<Vec<f64>>) -> Self {
        let vocab = logits[0].len();
        assert_eq!(logits.len(), vocab + 1, "one row per token plus a start row");
        TableDecoder {
            vocab,
            eos,
            log_table: logits.iter().map(|r| log_probs(r)).collect(),
        }
    }
}

impl Decoder for TableDecoder {
    type State = usize;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn start(&self, _z: Option<&[f64]>) -> Result<usize, DecodeError> {
        Ok(self.vocab)
    }

    fn log_probs(&self, state: &usize) -> Vec<f64> {
        self.log_table[*state].clone()
    }

    fn advance(&self, _state: &usize, token: usize) -> usize {
        token
    }

    fn eos(&self) -> usize {
        self.eos
    }

    fn can_emit(&self, _token: usize) -> bool {
        true
    }
}

/// Full-history model: the distribution after each prefix is a pseudo-random
/// function of the whole prefix and a seed. Every token may be emitted.
#[derive(Clone, Debug, PartialEq)]
pub struct HashedDecoder {
    pub vocab: usize,
    pub eos: usize,
    pub seed: u64,
    /// Logit spread; larger values make the distributions peakier.
    pub spread: f64,
}

impl HashedDecoder {
    fn mix(mut h: u64, x: u64) -> u64 {
        h ^= x.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 33)).wrapping_mul(0xff51_afd7_ed55_8ccd);
        h ^ (h >> 33)
    }
}

impl Decoder for HashedDecoder {
    /// Hash of the prefix.
    type State = u64;

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn start(&self, z: Option<&[f64]>) -> Result<u64, DecodeError> {
        let mut h = Self::mix(self.seed, 0xA5A5);
        for v in z.unwrap_or(&[]) {
            h = Self::mix(h, v.to_bits());
        }
        Ok(h)
    }

    fn log_probs(&self, state: &u64) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.vocab)
            .map(|t| {
                let h = Self::mix(*state, t as u64 + 1);
                self.spread * ((h >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
            })
            .collect();
        log_probs(&logits)
    }

    fn advance(&self, state: &u64, token: usize) -> u64 {
        Self::mix(*state, 1000 + token as u64)
    }

    fn eos(&self) -> usize {
        self.eos
    }

    fn can_emit(&self, _token: usize) -> bool {
        true
    }
}

/// Every sequence the decoder can emit within `max_len` tokens, with its
/// score: sequences ending in EOS, plus unfinished ones of length `max_len`.
pub fn enumerate_sequences<D: Decoder>(d: &D, z: Option<&[f64]>, max_len: usize) -> Result<Vec<(Vec<usize>, f64)>, DecodeError> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), 0.0, d.start(z)?)];
    while let Some((prefix, score, state)) = stack.pop() {
        let lp = d.log_probs(&state);
        for (t, &l) in lp.iter().enumerate() {
            if !d.can_emit(t) {
                continue;
            }
            let mut seq = prefix.clone();
            seq.push(t);
            let s = score + l;
            if t == d.eos() || seq.len() == max_len {
                out.push((seq, s));
            } else {
                let next = d.advance(&state, t);
                stack.push((seq, s, next));
            }
        }
    }
    Ok(out)
}

/// Best sequence by exhaustive search, ties toward the lexicographically
/// smaller sequence.
pub fn exhaustive_best<D: Decoder>(d: &D, z: Option<&[f64]>, max_len: usize) -> Result<(Vec<usize>, f64), DecodeError> {
    let all = enumerate_sequences(d, z, max_len)?;
    Ok(all
        .into_iter()
        .min_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)))
        .expect("at least one sequence"))
}
