//! The sentence VAE and the RNNLM baseline.
//!
//! Both families share the decoder: an embedding lookup feeding a
//! single-layer LSTM whose hidden state is projected to vocabulary logits.
//! The VAE adds an LSTM encoder over the surface-order sentence, Gaussian
//! posterior heads and an affine map from z to the decoder's initial
//! `(h, c)`. The RNNLM starts from a zero state.

mod checkpoint;
mod config;
mod decoder;
mod eval;
mod rnnlm;
mod vae;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CKPT_HEADER};
pub use config::ModelConfig;
pub use decoder::DecoderState;
pub use eval::{corpus_nll_and_perplexity, perplexity, EvalLatent, EvalOptions, NllReport};
pub use rnnlm::{RnnlmLayout, RnnlmParams};
pub use vae::{VaeLayout, VaeParams};

use rand::Rng;

use crate::autodiff::{AutodiffError, ParamSet, Tape, Var};
use crate::corpus::{CorpusError, TokenSequence};
use crate::nn::LayerError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("latent dimension mismatch: expected {expected}, found {found}")]
    LatentDim { expected: usize, found: usize },
    #[error("non-finite posterior parameters")]
    NonFinitePosterior,
    #[error("kl weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Diagonal Gaussian `q(z|x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussianPosterior {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mode(&self) -> LatentVector {
        LatentVector(self.mu.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.mu.iter().chain(&self.logvar).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn zeros(dim: usize) -> Self {
        LatentVector(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// `0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)`, in nats.
pub fn kl_to_standard_normal(post: &GaussianPosterior) -> Result<f64, ModelError> {
    if !post.is_finite() || post.mu.len() != post.logvar.len() {
        return Err(ModelError::NonFinitePosterior);
    }
    Ok(0.5
        * post
            .mu
            .iter()
            .zip(&post.logvar)
            .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
            .sum::<f64>())
}

/// Reparameterised draw `z = mu + exp(0.5 logvar) * eps`.
pub fn sample_latent(post: &GaussianPosterior, eps: &[f64]) -> Result<LatentVector, ModelError> {
    if eps.len() != post.dim() {
        return Err(ModelError::LatentDim {
            expected: post.dim(),
            found: eps.len(),
        });
    }
    Ok(LatentVector(
        post.mu
            .iter()
            .zip(&post.logvar)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect(),
    ))
}

/// Per-sentence loss terms, in nats. `total = reconstruction + w * kl`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboRecord {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

/// Loss nodes on a training tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub reconstruction: Var,
    pub kl: Option<Var>,
}

fn check_weight(w: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(ModelError::InvalidWeight(w))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Vae,
    Rnnlm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Vae => "vae",
            ModelKind::Rnnlm => "rnnlm",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vae" => Ok(ModelKind::Vae),
            "rnnlm" => Ok(ModelKind::Rnnlm),
            _ => Err(format!("unknown model kind {s:?} (expected vae or rnnlm)")),
        }
    }
}

/// Either model family.
#[derive(Clone, Debug)]
pub enum Model {
    Vae(VaeParams),
    Rnnlm(RnnlmParams),
}

impl Model {
    pub fn new(kind: ModelKind, config: ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        Ok(match kind {
            ModelKind::Vae => Model::Vae(VaeParams::new(config, rng)?),
            ModelKind::Rnnlm => Model::Rnnlm(RnnlmParams::new(config, rng)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Vae(_) => ModelKind::Vae,
            Model::Rnnlm(_) => ModelKind::Rnnlm,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Vae(m) => &m.config,
            Model::Rnnlm(m) => &m.config,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Model::Vae(m) => &m.params,
            Model::Rnnlm(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::Vae(m) => &mut m.params,
            Model::Rnnlm(m) => &mut m.params,
        }
    }

    pub fn as_vae(&self) -> Option<&VaeParams> {
        match self {
            Model::Vae(m) => Some(m),
            Model::Rnnlm(_) => None,
        }
    }

    pub fn as_rnnlm(&self) -> Option<&RnnlmParams> {
        match self {
            Model::Rnnlm(m) => Some(m),
            Model::Vae(_) => None,
        }
    }

    /// Single-sample loss at KL weight `w` and keep rate `k`. For the RNNLM
    /// the KL is zero and the total is the exact NLL.
    pub fn sentence_loss(&self, x: &TokenSequence, w: f64, k: f64, rng: &mut impl Rng) -> Result<ElboRecord, ModelError> {
        match self {
            Model::Vae(m) => m.elbo(x, w, k, rng),
            Model::Rnnlm(m) => {
                let nll = m.rnnlm_loss(x, k, rng)?;
                Ok(ElboRecord {
                    reconstruction: nll,
                    kl: 0.0,
                    total: nll,
                })
            }
        }
    }

    /// Records the training loss for one sentence on `tape`.
    pub fn loss_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        ps: &'p ParamSet,
        x: &TokenSequence,
        w: f64,
        k: f64,
        rng: &mut impl Rng,
    ) -> Result<LossVars, ModelError> {
        match self {
            Model::Vae(m) => m.layout().loss_tape_sampled(tape, ps, x, w, k, rng),
            Model::Rnnlm(m) => m.layout().loss_tape_sampled(tape, ps, x, k, rng),
        }
    }

    pub fn start_state(&self, z: Option<&[f64]>) -> Result<DecoderState, ModelError> {
        match self {
            Model::Vae(m) => m.start_state(z),
            Model::Rnnlm(m) => m.start_state(),
        }
    }

    pub fn next_log_probs(&self, state: &DecoderState) -> Vec<f64> {
        match self {
            Model::Vae(m) => m.next_log_probs(state),
            Model::Rnnlm(m) => m.next_log_probs(state),
        }
    }

    pub fn advance(&self, state: &DecoderState, token: usize) -> Result<DecoderState, ModelError> {
        match self {
            Model::Vae(m) => m.advance(state, token),
            Model::Rnnlm(m) => m.advance(state, token),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// `∫ q log(q / p)` for one dimension by the midpoint rule on mu ± 12 sd.
    fn kl_1d_quadrature(mu: f64, logvar: f64) -> f64 {
        let sd = (0.5 * logvar).exp();
        let n = 200_000;
        let (lo, hi) = (mu - 12.0 * sd, mu + 12.0 * sd);
        let h = (hi - lo) / n as f64;
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        (0..n)
            .map(|i| {
                let z = lo + (i as f64 + 0.5) * h;
                let u = (z - mu) / sd;
                let log_q = -0.5 * (ln2pi + logvar + u * u);
                let log_p = -0.5 * (ln2pi + z * z);
                log_q.exp() * (log_q - log_p) * h
            })
            .sum()
    }

    #[test]
    fn kl_matches_quadrature() {
        let post = GaussianPosterior {
            mu: vec![0.3, -1.7, 2.5],
            logvar: vec![0.0, -2.0, 1.1],
        };
        let oracle: f64 = post.mu.iter().zip(&post.logvar).map(|(&m, &l)| kl_1d_quadrature(m, l)).sum();
        assert!((kl_to_standard_normal(&post).unwrap() - oracle).abs() < 1e-8);
    }

    #[test]
    fn kl_of_prior_is_zero_and_bad_input_rejected() {
        let post = GaussianPosterior { mu: vec![0.0; 4], logvar: vec![0.0; 4] };
        assert_eq!(kl_to_standard_normal(&post).unwrap(), 0.0);
        let nan = GaussianPosterior { mu: vec![f64::NAN], logvar: vec![0.0] };
        assert!(kl_to_standard_normal(&nan).is_err());
        let ragged = GaussianPosterior { mu: vec![0.0, 1.0], logvar: vec![0.0] };
        assert!(kl_to_standard_normal(&ragged).is_err());
    }

    #[test]
    fn zero_noise_draw_is_the_mean() {
        let post = GaussianPosterior { mu: vec![0.5, -2.0], logvar: vec![3.0, -1.0] };
        assert_eq!(sample_latent(&post, &[0.0, 0.0]).unwrap(), post.mode());
        let z = sample_latent(&post, &[1.0, -1.0]).unwrap();
        assert!((z.0[0] - (0.5 + 1.5f64.exp())).abs() < 1e-12);
        assert!(sample_latent(&post, &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_additive(
            dims in prop::collection::vec((-5.0f64..5.0, -6.0f64..4.0), 1..10),
        ) {
            let post = GaussianPosterior {
                mu: dims.iter().map(|d| d.0).collect(),
                logvar: dims.iter().map(|d| d.1).collect(),
            };
            let kl = kl_to_standard_normal(&post).unwrap();
            prop_assert!(kl >= 0.0);
            let parts: f64 = dims
                .iter()
                .map(|&(m, l)| kl_to_standard_normal(&GaussianPosterior { mu: vec![m], logvar: vec![l] }).unwrap())
                .sum();
            prop_assert!((kl - parts).abs() <= 1e-12 * (1.0 + kl));
        }
    }
}
