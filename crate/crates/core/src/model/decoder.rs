use rand::Rng;

use crate::autodiff::{ParamSet, Tape, Var};
use crate::nn::{log_prob_tape, log_probs, softmax_cross_entropy, EmbeddingTable, Linear, LstmCellParams, LstmState, TapeLstmState};

use super::ModelError;

/// Decoder LSTM state after consuming some prefix, ready to predict the
/// next token.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState {
    pub lstm: LstmState,
    /// Latent code fed to every step when the config concatenates it.
    pub z: Option<Vec<f64>>,
}

/// Embedding, LSTM and output projection shared by both families.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct DecoderLayers {
    pub embedding: EmbeddingTable,
    pub lstm: LstmCellParams,
    pub output: Linear,
    pub z_input: usize,
}

impl DecoderLayers {
    pub fn new(
        ps: &mut ParamSet,
        embedding: EmbeddingTable,
        hidden: usize,
        z_input: usize,
        tie: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let lstm = LstmCellParams::new(ps, "decoder.lstm", embedding.dim + z_input, hidden, rng);
        let output = if tie {
            Linear::with_shared_weight(ps, "decoder.output", embedding.table, rng)
        } else {
            Linear::new(ps, "decoder.output", hidden, embedding.vocab_size, rng)
        };
        DecoderLayers {
            embedding,
            lstm,
            output,
            z_input,
        }
    }

    pub fn step_eager(&self, ps: &ParamSet, state: &DecoderState, token: usize) -> Result<DecoderState, ModelError> {
        let emb = self.embedding.row(ps, token)?;
        let next = match (&state.z, self.z_input) {
            (Some(z), n) if n > 0 => {
                let mut input = Vec::with_capacity(emb.len() + z.len());
                input.extend_from_slice(emb);
                input.extend_from_slice(z);
                self.lstm.step_eager(ps, &state.lstm, &input)?
            }
            _ => self.lstm.step_eager(ps, &state.lstm, emb)?,
        };
        Ok(DecoderState {
            lstm: next,
            z: state.z.clone(),
        })
    }

    pub fn logits(&self, ps: &ParamSet, state: &DecoderState) -> Vec<f64> {
        let mut out = vec![0.0; self.output.out_dim];
        self.output.apply_into(ps, &state.lstm.h, &mut out);
        out
    }

    pub fn log_probs(&self, ps: &ParamSet, state: &DecoderState) -> Vec<f64> {
        log_probs(&self.logits(ps, state))
    }

    /// Teacher-forced NLL of `targets` given conditioning `inputs`.
    pub fn nll_eager(
        &self,
        ps: &ParamSet,
        mut state: DecoderState,
        targets: &[usize],
        inputs: &[usize],
    ) -> Result<f64, ModelError> {
        let mut nll = 0.0;
        for (&inp, &tgt) in inputs.iter().zip(targets) {
            state = self.step_eager(ps, &state, inp)?;
            nll += softmax_cross_entropy(&self.logits(ps, &state), tgt)?;
        }
        Ok(nll)
    }

    pub fn nll_tape<'p>(
        &self,
        tape: &mut Tape<'p>,
        ps: &'p ParamSet,
        mut state: TapeLstmState,
        z: Option<Var>,
        targets: &[usize],
        inputs: &[usize],
    ) -> Result<Var, ModelError> {
        let mut lps = Vec::with_capacity(targets.len());
        for (&inp, &tgt) in inputs.iter().zip(targets) {
            let emb = self.embedding.lookup(tape, ps, inp)?;
            let x = match z {
                Some(z) if self.z_input > 0 => tape.concat(&[emb, z]),
                _ => emb,
            };
            state = self.lstm.step(tape, ps, state, x);
            let logits = self.output.forward(tape, ps, state.h);
            if tgt >= self.output.out_dim {
                return Err(crate::nn::LayerError::TargetOutOfRange {
                    target: tgt,
                    classes: self.output.out_dim,
                }
                .into());
            }
            lps.push(log_prob_tape(tape, logits, tgt));
        }
        let all = tape.concat(&lps);
        let total = tape.sum(all);
        Ok(tape.neg(total))
    }
}
