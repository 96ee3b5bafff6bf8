use crate::corpus::TokenSequence;
use crate::exec;
use crate::rng;

use super::{kl_to_standard_normal, ElboRecord, Model, ModelError};

/// How the evaluation reconstruction term picks z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EvalLatent {
    /// One posterior sample per sentence from a fixed-seed stream.
    #[default]
    Sample,
    /// The posterior mean.
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub keep_rate: f64,
    pub seed: u64,
    pub latent: EvalLatent,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            keep_rate: 1.0,
            seed: 0,
            latent: EvalLatent::Sample,
        }
    }
}

/// Corpus totals. For the VAE `total_nll` is the `w = 1` bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllReport {
    pub total_nll: f64,
    pub total_reconstruction: f64,
    pub total_kl: f64,
    pub tokens: usize,
    pub sentences: usize,
    pub perplexity: f64,
}

impl NllReport {
    pub fn nll_per_sentence(&self) -> f64 {
        self.total_nll / self.sentences as f64
    }

    pub fn nll_per_token(&self) -> f64 {
        self.total_nll / self.tokens as f64
    }

    pub fn kl_per_sentence(&self) -> f64 {
        self.total_kl / self.sentences as f64
    }

    pub fn reconstruction_per_sentence(&self) -> f64 {
        self.total_reconstruction / self.sentences as f64
    }
}

/// `exp(total_nll / tokens)`.
///
/// Several adjacent floats share the same rounded logarithm, and a plain
/// `exp` can land a few ulps away from the one a reader expects (for
/// `ln 116` it gives `115.99999999999999`). Among the floats within a few
/// ulps of `exp(mean)` whose `ln` reproduces the mean bitwise, the one with
/// the shortest decimal form is returned, so NLL and perplexity convert
/// into each other exactly.
pub fn perplexity(total_nll: f64, tokens: usize) -> f64 {
    let mean = total_nll / tokens as f64;
    let p = mean.exp();
    if !p.is_finite() || p <= 0.0 {
        return p;
    }
    let mut best = p;
    let mut best_len = usize::MAX;
    for d in -8i64..=8 {
        let c = f64::from_bits((p.to_bits() as i64 + d) as u64);
        if c.ln() != mean {
            continue;
        }
        let len = format!("{c}").len();
        if len < best_len || (len == best_len && (c - p).abs() < (best - p).abs()) {
            best = c;
            best_len = len;
        }
    }
    best
}

/// NLL and perplexity over `data`, tokens counted including EOS.
pub fn corpus_nll_and_perplexity(model: &Model, data: &[TokenSequence], opts: EvalOptions) -> Result<NllReport, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let records = exec::try_map(data, |i, x| -> Result<ElboRecord, ModelError> {
        let mut r = rng::indexed(opts.seed, "eval", i as u64);
        match (model, opts.latent) {
            (Model::Vae(m), EvalLatent::Mean) => {
                let post = m.encode_posterior(x)?;
                let reconstruction = m.reconstruction_loss(x, &post.mode(), opts.keep_rate, &mut r)?;
                let kl = kl_to_standard_normal(&post)?;
                Ok(ElboRecord {
                    reconstruction,
                    kl,
                    total: reconstruction + kl,
                })
            }
            _ => model.sentence_loss(x, 1.0, opts.keep_rate, &mut r),
        }
    })?;
    let mut report = NllReport {
        total_nll: 0.0,
        total_reconstruction: 0.0,
        total_kl: 0.0,
        tokens: data.iter().map(TokenSequence::len).sum(),
        sentences: data.len(),
        perplexity: 0.0,
    };
    for r in &records {
        report.total_nll += r.total;
        report.total_reconstruction += r.reconstruction;
        report.total_kl += r.kl;
    }
    report.perplexity = perplexity(report.total_nll, report.tokens);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perplexity_inverts_mean_nll() {
        for n in [1, 7, 1234, 82_430] {
            assert_eq!(perplexity(n as f64 * 116f64.ln(), n), 116.0);
        }
        for v in [2.0, 100.0, 141.0, 1e4] {
            assert_eq!(perplexity(f64::ln(v), 1), v);
        }
    }

    #[test]
    fn uniform_model_has_vocab_perplexity() {
        for kind in [ModelKind::Rnnlm, ModelKind::Vae] {
            let mut cfg = ModelConfig::new(100);
            cfg.embedding_dim = 4;
            cfg.hidden_dim = 4;
            cfg.z_dim = 2;
            let mut m = Model::new(kind, cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            for id in m.params().ids().collect::<Vec<_>>() {
                m.params_mut().get_mut(id).data_mut().fill(0.0);
            }
            let data = vec![TokenSequence::from_content(&[5, 9, 77]).unwrap()];
            let r = corpus_nll_and_perplexity(&m, &data, EvalOptions::default()).unwrap();
            assert_eq!(r.tokens, 4);
            assert!((r.perplexity - 100.0).abs() < 1e-9, "{kind:?} {}", r.perplexity);
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let m = Model::new(ModelKind::Rnnlm, ModelConfig::new(10), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(matches!(
            corpus_nll_and_perplexity(&m, &[], EvalOptions::default()),
            Err(ModelError::EmptyDataset)
        ));
    }
}
