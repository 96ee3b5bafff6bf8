use rand::Rng;

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::corpus::{apply_word_dropout, decoder_inputs, TokenSequence, SOS};
use crate::nn::{EmbeddingTable, HighwayParams, Linear, LstmCellParams, LstmState, TapeLstmState};
use crate::rng::normal_vec;

use super::decoder::{DecoderLayers, DecoderState};
use super::{
    check_weight, kl_to_standard_normal, sample_latent, ElboRecord, GaussianPosterior, LatentVector, LossVars,
    ModelConfig, ModelError,
};

/// Parameter ids of a VAE, independent of the values.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeLayout {
    pub config: ModelConfig,
    pub(crate) embedding: EmbeddingTable,
    pub(crate) encoder: LstmCellParams,
    pub(crate) highway: HighwayParams,
    pub(crate) mu_head: Linear,
    pub(crate) logvar_head: Linear,
    pub(crate) init_h: Linear,
    pub(crate) init_c: Linear,
    pub(crate) decoder: DecoderLayers,
}

#[derive(Clone, Debug)]
pub struct VaeParams {
    pub config: ModelConfig,
    pub params: ParamSet,
    layout: VaeLayout,
}

impl VaeLayout {
    fn new(config: &ModelConfig, ps: &mut ParamSet, rng: &mut impl Rng) -> Self {
        let (v, e, h, z) = (config.vocab_size, config.embedding_dim, config.hidden_dim, config.z_dim);
        let embedding = EmbeddingTable::new(ps, "embedding", v, e, rng);
        let encoder = LstmCellParams::new(ps, "encoder.lstm", e, h, rng);
        let highway = HighwayParams::new(ps, "encoder.highway", h, config.highway_layers, rng);
        let mu_head = Linear::new(ps, "posterior.mu", h, z, rng);
        let logvar_head = Linear::new(ps, "posterior.logvar", h, z, rng);
        let init_h = Linear::new(ps, "latent.h0", z, h, rng);
        let init_c = Linear::new(ps, "latent.c0", z, h, rng);
        let z_input = if config.concat_z { z } else { 0 };
        let decoder = DecoderLayers::new(ps, embedding, h, z_input, config.tie_embeddings, rng);
        VaeLayout {
            config: config.clone(),
            embedding,
            encoder,
            highway,
            mu_head,
            logvar_head,
            init_h,
            init_c,
            decoder,
        }
    }

    /// Encoder over the surface-order sentence to `(mu, logvar)`.
    pub fn encode_tape<'p>(&self, tape: &mut Tape<'p>, ps: &'p ParamSet, ids: &[usize]) -> Result<(Var, Var), ModelError> {
        let mut state = TapeLstmState::zeros(tape, self.config.hidden_dim);
        for &t in ids {
            let x = self.embedding.lookup(tape, ps, t)?;
            state = self.encoder.step(tape, ps, state, x);
        }
        let feat = self.highway.forward(tape, ps, state.h);
        let mu = self.mu_head.forward(tape, ps, feat);
        let lv = self.logvar_head.forward(tape, ps, feat);
        Ok((mu, lv))
    }

    /// Loss with the posterior noise and conditioning inputs supplied.
    pub fn loss_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        ps: &'p ParamSet,
        x: &TokenSequence,
        eps: &[f64],
        w: f64,
        inputs: &[usize],
    ) -> Result<LossVars, ModelError> {
        check_weight(w)?;
        let d = self.config.z_dim;
        if eps.len() != d {
            return Err(ModelError::LatentDim {
                expected: d,
                found: eps.len(),
            });
        }
        let (mu, lv) = self.encode_tape(tape, ps, x.ids())?;

        let noise = tape.constant(Tensor::vector(eps.to_vec()));
        let half = tape.scale(lv, 0.5);
        let sd = tape.exp(half);
        let scaled = tape.mul(sd, noise);
        let z = tape.add(mu, scaled);

        let mu2 = tape.square(mu);
        let var = tape.exp(lv);
        let a = tape.add(mu2, var);
        let b = tape.sub(a, lv);
        let s = tape.sum(b);
        let s = tape.add_scalar(s, -(d as f64));
        let kl = tape.scale(s, 0.5);

        let h0 = self.init_h.forward(tape, ps, z);
        let c0 = self.init_c.forward(tape, ps, z);
        let targets = self.config.direction.apply_ids(x.ids());
        let rec = self
            .decoder
            .nll_tape(tape, ps, TapeLstmState { h: h0, c: c0 }, Some(z), &targets, inputs)?;
        let wkl = tape.scale(kl, w);
        let total = tape.add(rec, wkl);
        Ok(LossVars {
            total,
            reconstruction: rec,
            kl: Some(kl),
        })
    }

    /// Loss with fresh posterior noise and word dropout drawn from `rng`.
    pub fn loss_tape_sampled<'p>(
        &self,
        tape: &mut Tape<'p>,
        ps: &'p ParamSet,
        x: &TokenSequence,
        w: f64,
        k: f64,
        rng: &mut impl Rng,
    ) -> Result<LossVars, ModelError> {
        let eps = normal_vec(rng, self.config.z_dim);
        let targets = self.config.direction.apply_ids(x.ids());
        let inputs = apply_word_dropout(&decoder_inputs(&targets), k, rng)?;
        self.loss_tape(tape, ps, x, &eps, w, &inputs)
    }
}

impl VaeParams {
    pub fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamSet::new();
        let layout = VaeLayout::new(&config, &mut params, rng);
        Ok(VaeParams { config, params, layout })
    }

    pub fn layout(&self) -> &VaeLayout {
        &self.layout
    }

    pub fn encode_posterior(&self, x: &TokenSequence) -> Result<GaussianPosterior, ModelError> {
        let ps = &self.params;
        let l = &self.layout;
        let mut state = LstmState::zeros(self.config.hidden_dim);
        for &t in x.ids() {
            state = l.encoder.step_eager(ps, &state, l.embedding.row(ps, t)?)?;
        }
        let feat = l.highway.apply(ps, &state.h)?;
        let post = GaussianPosterior {
            mu: l.mu_head.apply(ps, &feat)?,
            logvar: l.logvar_head.apply(ps, &feat)?,
        };
        if !post.is_finite() {
            return Err(ModelError::NonFinitePosterior);
        }
        Ok(post)
    }

    fn check_z(&self, z: &[f64]) -> Result<(), ModelError> {
        if z.len() == self.config.z_dim {
            Ok(())
        } else {
            Err(ModelError::LatentDim {
                expected: self.config.z_dim,
                found: z.len(),
            })
        }
    }

    /// Decoder state conditioned on `z` (zero if absent), before any input.
    pub fn initial_state(&self, z: Option<&[f64]>) -> Result<DecoderState, ModelError> {
        let zeros;
        let z = match z {
            Some(z) => z,
            None => {
                zeros = vec![0.0; self.config.z_dim];
                &zeros
            }
        };
        self.check_z(z)?;
        let l = &self.layout;
        Ok(DecoderState {
            lstm: LstmState {
                h: l.init_h.apply(&self.params, z)?,
                c: l.init_c.apply(&self.params, z)?,
            },
            z: self.config.concat_z.then(|| z.to_vec()),
        })
    }

    /// State ready to predict the first token.
    pub fn start_state(&self, z: Option<&[f64]>) -> Result<DecoderState, ModelError> {
        let s = self.initial_state(z)?;
        self.advance(&s, SOS)
    }

    pub fn advance(&self, state: &DecoderState, token: usize) -> Result<DecoderState, ModelError> {
        self.layout.decoder.step_eager(&self.params, state, token)
    }

    pub fn next_log_probs(&self, state: &DecoderState) -> Vec<f64> {
        self.layout.decoder.log_probs(&self.params, state)
    }

    /// `-log p(x | z)` summed over content tokens and EOS, in model order,
    /// with word dropout at keep rate `k`.
    pub fn reconstruction_loss(
        &self,
        x: &TokenSequence,
        z: &LatentVector,
        k: f64,
        rng: &mut impl Rng,
    ) -> Result<f64, ModelError> {
        x.validate(self.config.vocab_size)?;
        let targets = self.config.direction.apply_ids(x.ids());
        let inputs = apply_word_dropout(&decoder_inputs(&targets), k, rng)?;
        let init = self.initial_state(Some(z.as_slice()))?;
        self.layout.decoder.nll_eager(&self.params, init, &targets, &inputs)
    }

    pub fn elbo(&self, x: &TokenSequence, w: f64, k: f64, rng: &mut impl Rng) -> Result<ElboRecord, ModelError> {
        let eps = normal_vec(rng, self.config.z_dim);
        self.elbo_with_noise(x, &eps, w, k, rng)
    }

    /// ELBO terms with explicit posterior noise `eps`.
    pub fn elbo_with_noise(
        &self,
        x: &TokenSequence,
        eps: &[f64],
        w: f64,
        k: f64,
        rng: &mut impl Rng,
    ) -> Result<ElboRecord, ModelError> {
        check_weight(w)?;
        let post = self.encode_posterior(x)?;
        let z = sample_latent(&post, eps)?;
        let reconstruction = self.reconstruction_loss(x, &z, k, rng)?;
        let kl = kl_to_standard_normal(&post)?;
        Ok(ElboRecord {
            reconstruction,
            kl,
            total: reconstruction + w * kl,
        })
    }

    /// Teacher-forced `log p(x | z)`.
    pub fn log_likelihood(&self, x: &TokenSequence, z: &[f64]) -> Result<f64, ModelError> {
        x.validate(self.config.vocab_size)?;
        let targets = self.config.direction.apply_ids(x.ids());
        let init = self.initial_state(Some(z))?;
        Ok(-self.layout.decoder.nll_eager(&self.params, init, &targets, &decoder_inputs(&targets))?)
    }
}
