//! Parameterized layers: embeddings, affine maps, the LSTM cell, highway
//! stacks and the softmax cross-entropy loss.
//!
//! Each layer has a tape path (for training) and an eager path over plain
//! slices (for decoding and evaluation). Both compute the same function;
//! the tests pin them together.

use rand::Rng;

use crate::autodiff::{log_softmax, matvec, sigmoid, ParamId, ParamSet, Tape, Tensor, Var};

/// Half-width of the uniform initialisation range.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LayerError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
}

fn check_dim(expected: usize, found: usize) -> Result<(), LayerError> {
    if expected == found {
        Ok(())
    } else {
        Err(LayerError::DimensionMismatch { expected, found })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let weight = ps.add_uniform(format!("{name}.weight"), &[out_dim, in_dim], INIT_SCALE, rng);
        let bias = ps.add_uniform(format!("{name}.bias"), &[out_dim], INIT_SCALE, rng);
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// Affine map that reuses an existing `[out, in]` matrix, e.g. a tied
    /// embedding table.
    pub fn with_shared_weight(
        ps: &mut ParamSet,
        name: &str,
        weight: ParamId,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = ps.get(weight).shape().to_vec();
        let bias = ps.add_uniform(format!("{name}.bias"), &[shape[0]], INIT_SCALE, rng);
        Linear {
            weight,
            bias,
            in_dim: shape[1],
            out_dim: shape[0],
        }
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, ps: &'p ParamSet, x: Var) -> Var {
        let w = tape.param(ps, self.weight);
        let b = tape.param(ps, self.bias);
        let wx = tape.matmul(w, x);
        tape.add(wx, b)
    }

    pub fn apply(&self, ps: &ParamSet, x: &[f64]) -> Result<Vec<f64>, LayerError> {
        check_dim(self.in_dim, x.len())?;
        let mut out = vec![0.0; self.out_dim];
        self.apply_into(ps, x, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_into(&self, ps: &ParamSet, x: &[f64], out: &mut [f64]) {
        matvec(ps.get(self.weight).data(), self.out_dim, self.in_dim, x, out);
        for (o, b) in out.iter_mut().zip(ps.get(self.bias).data()) {
            *o += b;
        }
    }
}

/// Learned dictionary of embedding vectors, one row per token id.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new(ps: &mut ParamSet, name: &str, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let table = ps.add_uniform(format!("{name}.table"), &[vocab_size, dim], INIT_SCALE, rng);
        EmbeddingTable {
            table,
            vocab_size,
            dim,
        }
    }

    pub fn lookup<'p>(&self, tape: &mut Tape<'p>, ps: &'p ParamSet, token: usize) -> Result<Var, LayerError> {
        self.check(token)?;
        let t = tape.param(ps, self.table);
        Ok(tape.slice(t, token * self.dim, self.dim))
    }

    pub fn row<'a>(&self, ps: &'a ParamSet, token: usize) -> Result<&'a [f64], LayerError> {
        self.check(token)?;
        Ok(ps.get(self.table).row(token))
    }

    fn check(&self, token: usize) -> Result<(), LayerError> {
        if token < self.vocab_size {
            Ok(())
        } else {
            Err(LayerError::TokenOutOfRange {
                id: token,
                vocab: self.vocab_size,
            })
        }
    }
}

/// Hidden and cell vectors of an LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// LSTM state recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeLstmState {
    pub h: Var,
    pub c: Var,
}

impl TapeLstmState {
    pub fn zeros(tape: &mut Tape<'_>, hidden: usize) -> Self {
        let h = tape.constant(Tensor::zeros(&[hidden]));
        let c = tape.constant(Tensor::zeros(&[hidden]));
        TapeLstmState { h, c }
    }
}

/// Single-layer LSTM cell. Gates are stacked `[input, forget, output,
/// candidate]` in one `[4h, in + h]` matrix acting on `[x; h]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LstmCellParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCellParams {
    pub fn new(ps: &mut ParamSet, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let weight = ps.add_uniform(
            format!("{name}.weight"),
            &[4 * hidden_dim, input_dim + hidden_dim],
            INIT_SCALE,
            rng,
        );
        let bias = ps.add_uniform(format!("{name}.bias"), &[4 * hidden_dim], INIT_SCALE, rng);
        for v in &mut ps.get_mut(bias).data_mut()[hidden_dim..2 * hidden_dim] {
            *v = 1.0;
        }
        LstmCellParams {
            weight,
            bias,
            input_dim,
            hidden_dim,
        }
    }

    pub fn step<'p>(&self, tape: &mut Tape<'p>, ps: &'p ParamSet, state: TapeLstmState, x: Var) -> TapeLstmState {
        let h = self.hidden_dim;
        let w = tape.param(ps, self.weight);
        let b = tape.param(ps, self.bias);
        let xh = tape.concat(&[x, state.h]);
        let wx = tape.matmul(w, xh);
        let pre = tape.add(wx, b);
        let i_pre = tape.slice(pre, 0, h);
        let f_pre = tape.slice(pre, h, h);
        let o_pre = tape.slice(pre, 2 * h, h);
        let g_pre = tape.slice(pre, 3 * h, h);
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let fc = tape.mul(f, state.c);
        let ig = tape.mul(i, g);
        let c = tape.add(fc, ig);
        let tc = tape.tanh(c);
        let h_new = tape.mul(o, tc);
        TapeLstmState { h: h_new, c }
    }

    /// One gated update on plain vectors.
    pub fn step_eager(&self, ps: &ParamSet, state: &LstmState, x: &[f64]) -> Result<LstmState, LayerError> {
        check_dim(self.input_dim, x.len())?;
        check_dim(self.hidden_dim, state.h.len())?;
        check_dim(self.hidden_dim, state.c.len())?;
        let h = self.hidden_dim;
        let mut xh = Vec::with_capacity(self.input_dim + h);
        xh.extend_from_slice(x);
        xh.extend_from_slice(&state.h);
        let mut pre = vec![0.0; 4 * h];
        matvec(ps.get(self.weight).data(), 4 * h, self.input_dim + h, &xh, &mut pre);
        for (p, b) in pre.iter_mut().zip(ps.get(self.bias).data()) {
            *p += b;
        }
        let mut next = LstmState::zeros(h);
        for j in 0..h {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[h + j]);
            let o = sigmoid(pre[2 * h + j]);
            let g = pre[3 * h + j].tanh();
            let c = f * state.c[j] + i * g;
            next.c[j] = c;
            next.h[j] = o * c.tanh();
        }
        Ok(next)
    }
}

/// Stack of highway layers `y = g * relu(W x + b) + (1 - g) * x`,
/// `g = sigmoid(W_g x + b_g)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HighwayParams {
    pub layers: Vec<(Linear, Linear)>,
    pub dim: usize,
}

impl HighwayParams {
    pub fn new(ps: &mut ParamSet, name: &str, dim: usize, count: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..count)
            .map(|l| {
                let transform = Linear::new(ps, &format!("{name}.{l}.transform"), dim, dim, rng);
                let gate = Linear::new(ps, &format!("{name}.{l}.gate"), dim, dim, rng);
                (transform, gate)
            })
            .collect();
        HighwayParams { layers, dim }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, ps: &'p ParamSet, x: Var) -> Var {
        let mut x = x;
        for (transform, gate) in &self.layers {
            let t_pre = transform.forward(tape, ps, x);
            let t = tape.relu(t_pre);
            let g_pre = gate.forward(tape, ps, x);
            let g = tape.sigmoid(g_pre);
            let gt = tape.mul(g, t);
            // (1 - g) * x = x - g * x
            let gx = tape.mul(g, x);
            let carry = tape.sub(x, gx);
            x = tape.add(gt, carry);
        }
        x
    }

    pub fn apply(&self, ps: &ParamSet, x: &[f64]) -> Result<Vec<f64>, LayerError> {
        check_dim(self.dim, x.len())?;
        let mut x = x.to_vec();
        let mut t = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        for (transform, gate) in &self.layers {
            transform.apply_into(ps, &x, &mut t);
            gate.apply_into(ps, &x, &mut g);
            for j in 0..self.dim {
                let gj = sigmoid(g[j]);
                x[j] = gj * t[j].max(0.0) + (1.0 - gj) * x[j];
            }
        }
        Ok(x)
    }

    /// Gate activations of the first layer, for inspection.
    pub fn first_gate(&self, ps: &ParamSet, x: &[f64]) -> Option<Vec<f64>> {
        let (_, gate) = self.layers.first()?;
        let mut g = gate.apply(ps, x).ok()?;
        for v in &mut g {
            *v = sigmoid(*v);
        }
        Some(g)
    }
}

/// `-log softmax(logits)[target]`, stable under large logits.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<f64, LayerError> {
    if target >= logits.len() {
        return Err(LayerError::TargetOutOfRange {
            target,
            classes: logits.len(),
        });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[target])
}

/// Log-probability of `target` on the tape: `log(slice(softmax(logits)))`.
pub fn log_prob_tape(tape: &mut Tape<'_>, logits: Var, target: usize) -> Var {
    let p = tape.softmax(logits);
    let pt = tape.slice(p, target, 1);
    tape.log(pt)
}

/// Eager log-probabilities over all classes.
pub fn log_probs(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits)
}

/// Inverted feature dropout. Disabled (identity) at rate 0, the default.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FeatureDropout {
    pub rate: f64,
}

impl FeatureDropout {
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, rng: &mut impl Rng) -> Var {
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let n = tape.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = tape.constant(Tensor::vector(mask));
        tape.mul(x, m)
    }
}
