use super::{AutodiffError, Gradients, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer hyperparameters plus per-parameter moment estimates.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        assert!(lr >= 0.0 && lr.is_finite(), "learning rate must be finite and non-negative");
        Optimizer {
            kind,
            lr,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::adam(), lr)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First-moment estimates, one per parameter (empty before the first Adam step).
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    /// Applies one update. Nothing is modified if validation fails.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<(), AutodiffError> {
        if grads.len() != params.len() {
            return Err(AutodiffError::ShapeMismatch {
                expected: vec![params.len()],
                found: vec![grads.len()],
            });
        }
        for (id, g) in grads.iter() {
            let p = params.get(id);
            if !p.same_shape(g) {
                return Err(AutodiffError::ShapeMismatch {
                    expected: p.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(AutodiffError::NonFiniteGradient {
                    param: params.name(id).to_string(),
                });
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (id, g) in grads.iter() {
                    params.get_mut(id).add_scaled(g, -self.lr);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
                    self.second = self.first.clone();
                }
                let t = self.step as i32;
                let bias1 = 1.0 - beta1.powi(t);
                let bias2 = 1.0 - beta2.powi(t);
                for (id, g) in grads.iter() {
                    let m = self.first[id.0].data_mut();
                    let v = self.second[id.0].data_mut();
                    let p = params.get_mut(id).data_mut();
                    for (((pv, &gv), mv), vv) in p.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        let m_hat = *mv / bias1;
                        let v_hat = *vv / bias2;
                        *pv -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamId;

    fn setup(p: f64, g: f64) -> (ParamSet, Gradients) {
        let mut ps = ParamSet::new();
        ps.add("p", Tensor::scalar(p));
        let mut gr = Gradients::zeros_like(&ps);
        gr.get_mut(ParamId(0)).data_mut()[0] = g;
        (ps, gr)
    }

    #[test]
    fn sgd_step() {
        let (mut ps, g) = setup(1.0, 2.0);
        let mut opt = Optimizer::sgd(0.1);
        opt.step(&mut ps, &g).unwrap();
        assert!((ps.get(ParamId(0)).item() - 0.8).abs() < 1e-15);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn zero_lr_leaves_params_but_counts_step() {
        for mut opt in [Optimizer::sgd(0.0), Optimizer::adam(0.0)] {
            let (mut ps, g) = setup(1.0, 2.0);
            opt.step(&mut ps, &g).unwrap();
            opt.step(&mut ps, &g).unwrap();
            assert_eq!(ps.get(ParamId(0)).item(), 1.0);
            assert_eq!(opt.steps_taken(), 2);
        }
    }

    #[test]
    fn adam_first_step_is_normalised() {
        let (mut ps, g) = setup(1.0, 0.5);
        let lr = 0.01;
        let mut opt = Optimizer::adam(lr);
        opt.step(&mut ps, &g).unwrap();
        // Bias-corrected at t=1: m_hat = g, v_hat = g^2.
        let expected = 1.0 - lr * 0.5 / (0.5 + 1e-8);
        assert!((ps.get(ParamId(0)).item() - expected).abs() < 1e-15);
        let (m, v) = opt.moments();
        assert_eq!(m[0].shape(), ps.get(ParamId(0)).shape());
        assert_eq!(v[0].shape(), ps.get(ParamId(0)).shape());
    }

    #[test]
    fn rejects_non_finite_and_mismatched() {
        let (mut ps, g) = setup(1.0, f64::NAN);
        let mut opt = Optimizer::sgd(0.1);
        assert!(matches!(
            opt.step(&mut ps, &g),
            Err(AutodiffError::NonFiniteGradient { .. })
        ));
        assert_eq!(opt.steps_taken(), 0);
        let mut other = ParamSet::new();
        other.add("q", Tensor::vector(vec![0.0, 0.0]));
        let g2 = Gradients::zeros_like(&other);
        assert!(matches!(
            opt.step(&mut ps, &g2),
            Err(AutodiffError::ShapeMismatch { .. })
        ));
    }
}
