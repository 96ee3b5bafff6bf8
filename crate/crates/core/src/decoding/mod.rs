//! Greedy, beam and constrained beam search.
//!
//! Search runs in model order over any [`Decoder`]; callers reverse
//! right-to-left sequences at the corpus boundary. Scores are summed log
//! probabilities with no length normalisation. Ties break toward the lower
//! token id, so every search is deterministic.

pub mod toy;

use std::cmp::Ordering;

use crate::corpus::{Direction, ImputationInstance, EOS, PAD, SOS};
use crate::model::{DecoderState, Model, ModelError, RnnlmParams, VaeParams};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("token id {id} invalid for vocabulary of size {vocab}")]
    InvalidToken { id: usize, vocab: usize },
    #[error("constraint length {len} exceeds max length {max}")]
    ConstraintTooLong { len: usize, max: usize },
    #[error("invalid beam config: {0}")]
    InvalidConfig(String),
}

/// Autoregressive next-token model.
pub trait Decoder: Sync {
    type State: Clone + Send + Sync;

    fn vocab_size(&self) -> usize;

    /// State ready to predict the first token.
    fn start(&self, z: Option<&[f64]>) -> Result<Self::State, DecodeError>;

    /// Log-probabilities over the vocabulary for the next token.
    fn log_probs(&self, state: &Self::State) -> Vec<f64>;

    /// State after emitting `token`.
    fn advance(&self, state: &Self::State, token: usize) -> Self::State;

    fn eos(&self) -> usize {
        EOS
    }

    /// Tokens that free (unconstrained) search may emit. PAD and SOS are
    /// never targets.
    fn can_emit(&self, token: usize) -> bool {
        token != PAD && token != SOS
    }
}

macro_rules! model_decoder {
    ($t:ty, $start:expr) => {
        impl Decoder for $t {
            type State = DecoderState;

            fn vocab_size(&self) -> usize {
                self.config.vocab_size
            }

            fn start(&self, z: Option<&[f64]>) -> Result<DecoderState, DecodeError> {
                let f: fn(&$t, Option<&[f64]>) -> Result<DecoderState, ModelError> = $start;
                Ok(f(self, z)?)
            }

            fn log_probs(&self, state: &DecoderState) -> Vec<f64> {
                self.next_log_probs(state)
            }

            fn advance(&self, state: &DecoderState, token: usize) -> DecoderState {
                <$t>::advance(self, state, token).expect("search tokens are in range")
            }
        }
    };
}

model_decoder!(VaeParams, |m, z| m.start_state(z));
model_decoder!(RnnlmParams, |m, _| m.start_state());

impl Decoder for Model {
    type State = DecoderState;

    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn start(&self, z: Option<&[f64]>) -> Result<DecoderState, DecodeError> {
        Ok(self.start_state(z)?)
    }

    fn log_probs(&self, state: &DecoderState) -> Vec<f64> {
        self.next_log_probs(state)
    }

    fn advance(&self, state: &DecoderState, token: usize) -> DecoderState {
        Model::advance(self, state, token).expect("search tokens are in range")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    pub max_len: usize,
    pub direction: Direction,
}

impl BeamConfig {
    pub fn new(width: usize, max_len: usize) -> Self {
        BeamConfig {
            width,
            max_len,
            direction: Direction::LeftToRight,
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.width == 0 || self.max_len == 0 {
            return Err(DecodeError::InvalidConfig("width and max length must be at least 1".into()));
        }
        Ok(())
    }
}

/// A partial or finished sequence in model order.
#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: S,
    pub finished: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Known(usize),
    Unknown,
}

/// Per-position known/unknown entries in model order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Constraint(pub Vec<Slot>);

impl Constraint {
    pub fn unknown(len: usize) -> Self {
        Constraint(vec![Slot::Unknown; len])
    }

    pub fn known(tokens: &[usize]) -> Self {
        Constraint(tokens.iter().map(|&t| Slot::Known(t)).collect())
    }

    /// Model-order constraint for an imputation instance.
    pub fn from_instance(inst: &ImputationInstance, direction: Direction) -> Self {
        let ids = direction.apply_ids(inst.sequence.ids());
        let known = direction.apply_ids_mask(&inst.known, inst.sequence.ends_with_eos());
        Constraint(
            ids.iter()
                .zip(known)
                .map(|(&t, k)| if k { Slot::Known(t) } else { Slot::Unknown })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn unknown_count(&self) -> usize {
        self.0.iter().filter(|s| **s == Slot::Unknown).count()
    }

    fn validate(&self, vocab: usize) -> Result<(), DecodeError> {
        for s in &self.0 {
            if let Slot::Known(id) = *s {
                if id >= vocab {
                    return Err(DecodeError::InvalidToken { id, vocab });
                }
            }
        }
        Ok(())
    }
}

/// Constrained-search switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    /// Unknown slots must be filled with a non-EOS token, so the output has
    /// exactly the constraint's length.
    pub fill_only: bool,
    /// Add the model log-probability of forced tokens to the score.
    pub score_known: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            fill_only: false,
            score_known: true,
        }
    }
}

/// Argmax with ties to the lower id, over tokens the decoder may emit.
fn argmax<D: Decoder>(d: &D, lp: &[f64], exclude_eos: bool) -> usize {
    let mut best = usize::MAX;
    for (t, &v) in lp.iter().enumerate() {
        if !d.can_emit(t) || (exclude_eos && t == d.eos()) {
            continue;
        }
        if best == usize::MAX || v > lp[best] {
            best = t;
        }
    }
    best
}

/// Argmax decoding until EOS or `max_len` tokens.
pub fn greedy_decode<D: Decoder>(d: &D, z: Option<&[f64]>, max_len: usize) -> Result<Vec<usize>, DecodeError> {
    let mut state = d.start(z)?;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let lp = d.log_probs(&state);
        let t = argmax(d, &lp, false);
        out.push(t);
        if t == d.eos() {
            break;
        }
        state = d.advance(&state, t);
    }
    Ok(out)
}

pub fn beam_search<D: Decoder>(
    d: &D,
    z: Option<&[f64]>,
    cfg: &BeamConfig,
) -> Result<Vec<Hypothesis<D::State>>, DecodeError> {
    constrained_beam_search(d, z, &Constraint(Vec::new()), cfg, SearchOptions::default())
}

struct Candidate {
    score: f64,
    parent: usize,
    token: Option<usize>,
}

fn by_score(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.parent.cmp(&b.parent))
        .then(a.token.cmp(&b.token))
}

/// Beam search with forced tokens at known slots. Positions past the end
/// of the constraint are unconstrained. The result is ranked best first.
pub fn constrained_beam_search<D: Decoder>(
    d: &D,
    z: Option<&[f64]>,
    constraint: &Constraint,
    cfg: &BeamConfig,
    opts: SearchOptions,
) -> Result<Vec<Hypothesis<D::State>>, DecodeError> {
    cfg.validate()?;
    if constraint.len() > cfg.max_len {
        return Err(DecodeError::ConstraintTooLong {
            len: constraint.len(),
            max: cfg.max_len,
        });
    }
    constraint.validate(d.vocab_size())?;
    let eos = d.eos();
    let mut pool = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: d.start(z)?,
        finished: false,
    }];
    let mut cands = Vec::new();
    for pos in 0..cfg.max_len {
        if pool.iter().all(|h| h.finished) {
            break;
        }
        let slot = constraint.0.get(pos).copied();
        cands.clear();
        for (pi, h) in pool.iter().enumerate() {
            if h.finished {
                cands.push(Candidate {
                    score: h.log_prob,
                    parent: pi,
                    token: None,
                });
                continue;
            }
            let lp = d.log_probs(&h.state);
            match slot {
                Some(Slot::Known(t)) => cands.push(Candidate {
                    score: h.log_prob + if opts.score_known { lp[t] } else { 0.0 },
                    parent: pi,
                    token: Some(t),
                }),
                _ => {
                    let no_eos = opts.fill_only && slot == Some(Slot::Unknown);
                    for (t, &l) in lp.iter().enumerate() {
                        if d.can_emit(t) && !(no_eos && t == eos) {
                            cands.push(Candidate {
                                score: h.log_prob + l,
                                parent: pi,
                                token: Some(t),
                            });
                        }
                    }
                }
            }
        }
        if cands.len() > cfg.width {
            cands.select_nth_unstable_by(cfg.width - 1, by_score);
            cands.truncate(cfg.width);
        }
        cands.sort_by(by_score);
        pool = cands
            .iter()
            .map(|c| {
                let parent = &pool[c.parent];
                match c.token {
                    None => parent.clone(),
                    Some(t) => {
                        let mut tokens = parent.tokens.clone();
                        tokens.push(t);
                        let finished = t == eos;
                        let state = if finished { parent.state.clone() } else { d.advance(&parent.state, t) };
                        Hypothesis {
                            tokens,
                            log_prob: c.score,
                            state,
                            finished,
                        }
                    }
                }
            })
            .collect();
    }
    pool.sort_by(|a, b| {
        b.log_prob
            .partial_cmp(&a.log_prob)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    Ok(pool)
}

/// Teacher-forced `log p(tokens | z)` under the decoder.
pub fn sequence_log_prob<D: Decoder>(d: &D, z: Option<&[f64]>, tokens: &[usize]) -> Result<f64, DecodeError> {
    let vocab = d.vocab_size();
    let mut state = d.start(z)?;
    let mut total = 0.0;
    for (i, &t) in tokens.iter().enumerate() {
        if t >= vocab {
            return Err(DecodeError::InvalidToken { id: t, vocab });
        }
        total += d.log_probs(&state)[t];
        if i + 1 < tokens.len() {
            state = d.advance(&state, t);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
