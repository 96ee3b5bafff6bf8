use rand::Rng;

use crate::autodiff::{ParamSet, Tape};
use crate::corpus::{apply_word_dropout, decoder_inputs, TokenSequence, SOS};
use crate::nn::{EmbeddingTable, LstmState, TapeLstmState};

use super::decoder::{DecoderLayers, DecoderState};
use super::{LossVars, ModelConfig, ModelError};

#[derive(Clone, Debug, PartialEq)]
pub struct RnnlmLayout {
    pub config: ModelConfig,
    pub(crate) decoder: DecoderLayers,
}

/// Recurrent language model with a zero initial state.
#[derive(Clone, Debug)]
pub struct RnnlmParams {
    pub config: ModelConfig,
    pub params: ParamSet,
    layout: RnnlmLayout,
}

impl RnnlmLayout {
    pub fn loss_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        ps: &'p ParamSet,
        x: &TokenSequence,
        inputs: &[usize],
    ) -> Result<LossVars, ModelError> {
        let targets = self.config.direction.apply_ids(x.ids());
        let init = TapeLstmState::zeros(tape, self.config.hidden_dim);
        let nll = self.decoder.nll_tape(tape, ps, init, None, &targets, inputs)?;
        Ok(LossVars {
            total: nll,
            reconstruction: nll,
            kl: None,
        })
    }

    pub fn loss_tape_sampled<'p>(
        &self,
        tape: &mut Tape<'p>,
        ps: &'p ParamSet,
        x: &TokenSequence,
        k: f64,
        rng: &mut impl Rng,
    ) -> Result<LossVars, ModelError> {
        let targets = self.config.direction.apply_ids(x.ids());
        let inputs = apply_word_dropout(&decoder_inputs(&targets), k, rng)?;
        self.loss_tape(tape, ps, x, &inputs)
    }
}

impl RnnlmParams {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamSet::new();
        let embedding = EmbeddingTable::new(&mut params, "embedding", config.vocab_size, config.embedding_dim, rng);
        let decoder = DecoderLayers::new(&mut params, embedding, config.hidden_dim, 0, config.tie_embeddings, rng);
        let layout = RnnlmLayout {
            config: config.clone(),
            decoder,
        };
        Ok(RnnlmParams { config, params, layout })
    }

    pub fn layout(&self) -> &RnnlmLayout {
        &self.layout
    }

    pub fn start_state(&self) -> Result<DecoderState, ModelError> {
        let s = DecoderState {
            lstm: LstmState::zeros(self.config.hidden_dim),
            z: None,
        };
        self.advance(&s, SOS)
    }

    pub fn advance(&self, state: &DecoderState, token: usize) -> Result<DecoderState, ModelError> {
        self.layout.decoder.step_eager(&self.params, state, token)
    }

    pub fn next_log_probs(&self, state: &DecoderState) -> Vec<f64> {
        self.layout.decoder.log_probs(&self.params, state)
    }

    /// Exact NLL of `x` (model order, EOS included) with word dropout at `k`.
    pub fn rnnlm_loss(&self, x: &TokenSequence, k: f64, rng: &mut impl Rng) -> Result<f64, ModelError> {
        x.validate(self.config.vocab_size)?;
        let targets = self.config.direction.apply_ids(x.ids());
        let inputs = apply_word_dropout(&decoder_inputs(&targets), k, rng)?;
        let init = DecoderState {
            lstm: LstmState::zeros(self.config.hidden_dim),
            z: None,
        };
        self.layout.decoder.nll_eager(&self.params, init, &targets, &inputs)
    }

    /// Teacher-forced NLL, no dropout.
    pub fn sentence_nll(&self, x: &TokenSequence) -> Result<f64, ModelError> {
        let mut rng = crate::rng::stream(0, "unused");
        self.rnnlm_loss(x, 1.0, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> RnnlmParams {
        let mut cfg = ModelConfig::new(7);
        cfg.embedding_dim = 3;
        cfg.hidden_dim = 4;
        RnnlmParams::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn uniform_model_costs_n_log_v() {
        let mut m = tiny(1);
        for id in m.params.ids().collect::<Vec<_>>() {
            m.params.get_mut(id).data_mut().fill(0.0);
        }
        let x = TokenSequence::from_content(&[4, 5, 6, 4]).unwrap();
        assert!((m.sentence_nll(&x).unwrap() - 5.0 * 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_is_normalised_over_the_vocabulary() {
        // Exact likelihood: probabilities of all length-2 sentences
        // (one content token + EOS) plus everything else sum to at most 1,
        // and the per-step distributions sum to 1.
        let m = tiny(2);
        let s = m.start_state().unwrap();
        let p: f64 = m.next_log_probs(&s).iter().map(|l| l.exp()).sum();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tape_matches_eager_and_gradients_check() {
        let mut m = tiny(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for id in m.params.ids().collect::<Vec<_>>() {
            for v in m.params.get_mut(id).data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let x = TokenSequence::from_content(&[4, 6]).unwrap();
        let inputs = decoder_inputs(x.ids());
        let mut tape = Tape::new();
        let v = m.layout.loss_tape(&mut tape, &m.params, &x, &inputs).unwrap();
        assert!((tape.scalar_value(v.total) - m.sentence_nll(&x).unwrap()).abs() < 1e-12);
        let layout = m.layout.clone();
        let err = finite_difference_check(&m.params, |t, p| layout.loss_tape(t, p, &x, &inputs).unwrap().total, 1e-5)
            .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
