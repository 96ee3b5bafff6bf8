use rand::Rng;

use super::{AutodiffError, Tensor};

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub value: Tensor,
}

/// Ordered parameter registry. Declaration order is the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<NamedParam>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(NamedParam {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Adds a parameter initialised uniformly in `[-scale, scale]`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let mut t = Tensor::zeros(shape);
        if scale > 0.0 {
            for v in t.data_mut() {
                *v = rng.random_range(-scale..=scale);
            }
        }
        self.add(name, t)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &NamedParam)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces all values, keeping names. Shapes must agree.
    pub fn load_values(&mut self, values: Vec<Tensor>) -> Result<(), AutodiffError> {
        if values.len() != self.params.len() {
            return Err(AutodiffError::ShapeMismatch {
                expected: vec![self.params.len()],
                found: vec![values.len()],
            });
        }
        for (p, v) in self.params.iter().zip(&values) {
            if !p.value.same_shape(v) {
                return Err(AutodiffError::ShapeMismatch {
                    expected: p.value.shape().to_vec(),
                    found: v.shape().to_vec(),
                });
            }
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    /// Rounds every parameter to `f32` precision (the checkpoint precision).
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.value.round_to_f32();
        }
    }
}

/// Gradient per parameter of a [`ParamSet`], zero where a parameter is unused.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients {
            grads: params
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    pub(crate) fn from_vec(grads: Vec<Tensor>) -> Self {
        Gradients { grads }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: &Gradients) {
        assert_eq!(self.grads.len(), other.grads.len(), "gradient sets differ");
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_scaled(b, 1.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
    }

    /// Rescales so that the global L2 norm is at most `max_norm`. Returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }
}
