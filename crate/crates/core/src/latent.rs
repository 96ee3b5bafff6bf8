//! Latent-space tools: prior samples, posterior round trips, homotopies,
//! stretched low-probability samples and sentence-pair features.
//!
//! All decoding here is greedy and returns surface-order ids, EOS included
//! when the decoder emitted it within `max_len` tokens.

use std::io::Write;

use rand::Rng;

use crate::corpus::{TokenSequence, Vocabulary};
use crate::decoding::{greedy_decode, DecodeError};
use crate::model::{sample_latent, LatentVector, ModelError, VaeParams};
use crate::{exec, rng};

#[derive(Debug, thiserror::Error)]
pub enum LatentError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("homotopy needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("stretch bound must be finite and non-negative, got {0}")]
    StretchBound(f64),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Greedy decode from `z`, in surface order.
pub fn decode_surface(params: &VaeParams, z: &[f64], max_len: usize) -> Result<Vec<usize>, LatentError> {
    let tokens = greedy_decode(params, Some(z), max_len)?;
    Ok(params.config.direction.apply_ids(&tokens))
}

/// `z ~ N(0, I)` for `index` of the "prior" stream.
pub fn prior_draw(seed: u64, index: u64, dim: usize) -> LatentVector {
    LatentVector(rng::normal_vec(&mut rng::indexed(seed, "prior", index), dim))
}

/// Greedy decodes of `count` prior draws, with the draws.
pub fn sample_prior_decode(params: &VaeParams, count: usize, seed: u64, max_len: usize) -> Result<Vec<(LatentVector, Vec<usize>)>, LatentError> {
    let idx: Vec<u64> = (0..count as u64).collect();
    exec::try_map(&idx, |_, &i| {
        let z = prior_draw(seed, i, params.config.z_dim);
        let s = decode_surface(params, &z.0, max_len)?;
        Ok((z, s))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StretchConfig {
    /// Entries of the stretch matrix are uniform on `[-c, c]`.
    pub c: f64,
    pub seed: u64,
}

impl Default for StretchConfig {
    fn default() -> Self {
        StretchConfig { c: 0.1, seed: 0 }
    }
}

/// Row-major `dim x dim` matrix with i.i.d. entries uniform on `[-c, c]`,
/// from the "stretch" stream.
pub fn stretch_matrix(dim: usize, cfg: &StretchConfig) -> Result<Vec<f64>, LatentError> {
    if !(cfg.c >= 0.0 && cfg.c.is_finite()) {
        return Err(LatentError::StretchBound(cfg.c));
    }
    let mut r = rng::stream(cfg.seed, "stretch");
    Ok((0..dim * dim)
        .map(|_| if cfg.c == 0.0 { 0.0 } else { r.random_range(-cfg.c..=cfg.c) })
        .collect())
}

/// `M z` for the configured stretch matrix. The result replaces `z`; it is
/// not rescaled toward the prior's typical radius.
pub fn stretch_transform(z: &LatentVector, cfg: &StretchConfig) -> Result<LatentVector, LatentError> {
    let n = z.dim();
    let m = stretch_matrix(n, cfg)?;
    let mut out = vec![0.0; n];
    crate::autodiff::matvec(&m, n, n, z.as_slice(), &mut out);
    Ok(LatentVector(out))
}

/// Prior draws passed through one shared stretch matrix, then decoded.
pub fn sample_stretched_decode(params: &VaeParams, count: usize, seed: u64, cfg: &StretchConfig, max_len: usize) -> Result<Vec<(LatentVector, Vec<usize>)>, LatentError> {
    let n = params.config.z_dim;
    let m = stretch_matrix(n, cfg)?;
    let idx: Vec<u64> = (0..count as u64).collect();
    exec::try_map(&idx, |_, &i| {
        let z = prior_draw(seed, i, n);
        let mut out = vec![0.0; n];
        crate::autodiff::matvec(&m, n, n, z.as_slice(), &mut out);
        let s = decode_surface(params, &out, max_len)?;
        Ok((LatentVector(out), s))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundTrip {
    pub mean: Vec<usize>,
    pub samples: Vec<Vec<usize>>,
}

/// Decodes from the posterior mean of `x` and from `n` posterior samples.
pub fn posterior_roundtrip(params: &VaeParams, x: &TokenSequence, n: usize, seed: u64, max_len: usize) -> Result<RoundTrip, LatentError> {
    let post = params.encode_posterior(x)?;
    let mean = decode_surface(params, &post.mu, max_len)?;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let eps = rng::normal_vec(&mut rng::indexed(seed, "roundtrip", i as u64), post.dim());
        let z = sample_latent(&post, &eps)?;
        samples.push(decode_surface(params, &z.0, max_len)?);
    }
    Ok(RoundTrip { mean, samples })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomotopyRequest {
    pub z1: LatentVector,
    pub z2: LatentVector,
    pub steps: usize,
    /// Collapse runs of identical sentences, keeping the first `t`.
    pub dedupe: bool,
}

/// Point `i` of `steps` on the segment. The weights are computed from
/// integers, so `i = 0` gives `z1` exactly and swapping the endpoints with
/// `i -> steps - 1 - i` gives the same vector bitwise.
pub fn homotopy_point(z1: &[f64], z2: &[f64], i: usize, steps: usize) -> (f64, Vec<f64>) {
    let d = (steps - 1) as f64;
    let a = (steps - 1 - i) as f64 / d;
    let b = i as f64 / d;
    (b, z1.iter().zip(z2).map(|(x, y)| x * a + y * b).collect())
}

pub fn homotopy(params: &VaeParams, req: &HomotopyRequest) -> Result<Vec<(f64, Vec<usize>)>, LatentError> {
    if req.steps < 2 {
        return Err(LatentError::TooFewSteps(req.steps));
    }
    if req.z1.dim() != req.z2.dim() {
        return Err(LatentError::Dimension(req.z1.dim(), req.z2.dim()));
    }
    let max_len = 64;
    let idx: Vec<usize> = (0..req.steps).collect();
    let all = exec::try_map(&idx, |_, &i| -> Result<(f64, Vec<usize>), LatentError> {
        let (t, z) = homotopy_point(req.z1.as_slice(), req.z2.as_slice(), i, req.steps);
        Ok((t, decode_surface(params, &z, max_len)?))
    })?;
    if !req.dedupe {
        return Ok(all);
    }
    let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
    for (t, s) in all {
        if out.last().is_none_or(|(_, prev)| *prev != s) {
            out.push((t, s));
        }
    }
    Ok(out)
}

/// One `t<TAB>sentence` line per step.
pub fn write_homotopy_report(mut w: impl Write, vocab: &Vocabulary, path: &[(f64, Vec<usize>)]) -> Result<(), LatentError> {
    for (t, s) in path {
        writeln!(w, "{t}\t{}", vocab.decode(s)?)?;
    }
    Ok(())
}

/// `concat(u * v, |u - v|)`.
pub fn pair_features(u: &[f64], v: &[f64]) -> Result<Vec<f64>, LatentError> {
    if u.len() != v.len() {
        return Err(LatentError::Dimension(u.len(), v.len()));
    }
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| a * b)
        .chain(u.iter().zip(v).map(|(a, b)| (a - b).abs()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Direction, TokenSequence, EOS};
    use crate::model::ModelConfig;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vae(seed: u64) -> VaeParams {
        let mut cfg = ModelConfig::new(12);
        cfg.embedding_dim = 4;
        cfg.hidden_dim = 6;
        cfg.z_dim = 3;
        cfg.direction = Direction::RightToLeft;
        let mut m = VaeParams::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        // Stronger z weights so different codes decode differently.
        for id in m.params.ids().collect::<Vec<_>>() {
            if m.params.name(id).starts_with("latent.") {
                for v in m.params.get_mut(id).data_mut() {
                    *v *= 40.0;
                }
            }
        }
        m
    }

    fn lv(v: &[f64]) -> LatentVector {
        LatentVector(v.to_vec())
    }

    #[test]
    fn prior_samples_are_reproducible() {
        let m = vae(1);
        let a = sample_prior_decode(&m, 20, 5, 12).unwrap();
        assert_eq!(a, sample_prior_decode(&m, 20, 5, 12).unwrap());
        let mut zs: Vec<&[f64]> = a.iter().map(|(z, _)| z.as_slice()).collect();
        zs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        zs.dedup();
        assert_eq!(zs.len(), 20);
        let zero = decode_surface(&m, &[0.0; 3], 12).unwrap();
        assert_eq!(zero, decode_surface(&m, &[0.0; 3], 12).unwrap());
    }

    #[test]
    fn roundtrip_with_degenerate_posterior() {
        let mut m = vae(2);
        let x = TokenSequence::from_content(&[4, 5, 6]).unwrap();
        assert!(posterior_roundtrip(&m, &x, 0, 1, 10).unwrap().samples.is_empty());
        let lv_head = m.layout().logvar_head;
        m.params.get_mut(lv_head.weight).data_mut().fill(0.0);
        m.params.get_mut(lv_head.bias).data_mut().fill(-20.0);
        let r = posterior_roundtrip(&m, &x, 8, 1, 10).unwrap();
        assert!(r.samples.iter().all(|s| *s == r.mean));
    }

    #[test]
    fn homotopy_endpoints_midpoint_and_errors() {
        let m = vae(3);
        let (z1, z2) = (lv(&[1.3, -0.4, 2.0]), lv(&[-1.0, 0.7, -2.2]));
        let req = HomotopyRequest {
            z1: z1.clone(),
            z2: z2.clone(),
            steps: 3,
            dedupe: false,
        };
        let path = homotopy(&m, &req).unwrap();
        assert_eq!(path.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
        assert_eq!(path[0].1, decode_surface(&m, &z1.0, 64).unwrap());
        assert_eq!(path[2].1, decode_surface(&m, &z2.0, 64).unwrap());
        let mid: Vec<f64> = z1.0.iter().zip(&z2.0).map(|(a, b)| (a + b) / 2.0).collect();
        assert_eq!(path[1].1, decode_surface(&m, &mid, 64).unwrap());
        assert!(matches!(
            homotopy(&m, &HomotopyRequest { steps: 1, ..req.clone() }),
            Err(LatentError::TooFewSteps(1))
        ));
        assert!(homotopy(&m, &HomotopyRequest { z2: lv(&[1.0]), ..req }).is_err());
    }

    #[test]
    fn equal_endpoints_give_one_sentence() {
        let m = vae(4);
        let z = lv(&[0.3, 0.1, -0.9]);
        let req = HomotopyRequest {
            z1: z.clone(),
            z2: z,
            steps: 6,
            dedupe: false,
        };
        let path = homotopy(&m, &req).unwrap();
        assert!(path.iter().all(|p| p.1 == path[0].1));
        assert_eq!(homotopy(&m, &HomotopyRequest { dedupe: true, ..req }).unwrap().len(), 1);
    }

    #[test]
    fn stretch_support_and_zero_bound() {
        let z = lv(&[1.0, -2.0, 0.5, 3.0]);
        let zero = stretch_transform(&z, &StretchConfig { c: 0.0, seed: 1 }).unwrap();
        assert!(zero.0.iter().all(|&v| v == 0.0));
        let m = stretch_matrix(16, &StretchConfig { c: 0.1, seed: 2 }).unwrap();
        assert!(m.iter().all(|v| v.abs() <= 0.1));
        assert!(stretch_matrix(4, &StretchConfig { c: -1.0, seed: 0 }).is_err());
    }

    /// The rms singular value is `||M||_F / sqrt(n)`, whose mean square is
    /// `c^2 n / 3`. The max/min ratio, by contrast, is a condition number
    /// of a square random matrix and is heavy-tailed.
    #[test]
    fn stretch_spectrum() {
        let (n, c) = (16, 0.1);
        let mut rms = 0.0;
        let mut ratios = Vec::new();
        for seed in 0..1000 {
            let m = stretch_matrix(n, &StretchConfig { c, seed }).unwrap();
            let sv = nalgebra::DMatrix::from_row_slice(n, n, &m).singular_values();
            rms += (sv.iter().map(|s| s * s).sum::<f64>() / n as f64).sqrt();
            ratios.push(sv.max() / sv.min());
        }
        rms /= 1000.0;
        let expected = c * (n as f64 / 3.0).sqrt();
        assert!((rms - expected).abs() / expected < 0.02, "{rms} vs {expected}");
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(ratios[500] > 4.0, "median condition number {}", ratios[500]);
    }

    #[test]
    fn pair_feature_values() {
        assert_eq!(pair_features(&[1.0, 2.0], &[3.0, -1.0]).unwrap(), vec![3.0, -2.0, 2.0, 3.0]);
        let u = [0.5, -1.5, 2.0];
        assert!(pair_features(&u, &u).unwrap()[3..].iter().all(|&v| v == 0.0));
        assert!(pair_features(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn report_lines() {
        let vocab = Vocabulary::from_tokens(vec!["a".into(), "b".into()]).unwrap();
        let mut buf = Vec::new();
        write_homotopy_report(&mut buf, &vocab, &[(0.0, vec![4, 5, EOS]), (0.5, vec![5, EOS])]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0\ta b\n0.5\tb\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn homotopy_reverses_under_swap(a in prop::collection::vec(-3.0f64..3.0, 3), b in prop::collection::vec(-3.0f64..3.0, 3), steps in 2usize..7, dedupe in any::<bool>()) {
            let m = vae(6);
            let fwd = homotopy(&m, &HomotopyRequest { z1: lv(&a), z2: lv(&b), steps, dedupe }).unwrap();
            let bwd = homotopy(&m, &HomotopyRequest { z1: lv(&b), z2: lv(&a), steps, dedupe }).unwrap();
            let mut rev: Vec<_> = bwd.iter().map(|p| p.1.clone()).collect();
            rev.reverse();
            prop_assert_eq!(fwd.iter().map(|p| p.1.clone()).collect::<Vec<_>>(), rev);
            if !dedupe {
                for (f, g) in fwd.iter().zip(bwd.iter().rev()) {
                    prop_assert!((f.0 - (1.0 - g.0)).abs() < 1e-15);
                }
            }
        }

        #[test]
        fn pair_features_are_symmetric(u in prop::collection::vec(-5.0f64..5.0, 1..8), seed in any::<u64>()) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = u.iter().map(|_| rand::Rng::random_range(&mut r, -5.0..5.0)).collect();
            let f = pair_features(&u, &v).unwrap();
            prop_assert_eq!(f.len(), 2 * u.len());
            prop_assert_eq!(f, pair_features(&v, &u).unwrap());
        }
    }
}
