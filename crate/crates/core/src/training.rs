//! Mini-batch training with KL annealing, word dropout and early stopping.
//!
//! A step splits its batch into fixed-size chunks, records each chunk on its
//! own tape, and sums the chunk gradients in chunk order. The chunking does
//! not depend on the thread count, so a run is reproducible from its seed
//! under any execution mode. Dev evaluation always uses `w = 1` on an
//! f32-rounded snapshot, which is also what gets checkpointed.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::autodiff::{AutodiffError, Gradients, Optimizer, OptimizerKind, Tape};
use crate::corpus::{check_keep_rate, TokenSequence};
use crate::model::{corpus_nll_and_perplexity, EvalOptions, Model, ModelConfig, ModelError, ModelKind};
use crate::{exec, rng};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training or dev data")]
    EmptyData,
    #[error("non-finite {what} at step {step}")]
    NonFinite { step: usize, what: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// KL weight as a function of the step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnnealingSchedule {
    /// `1 / (1 + exp(-(step - midpoint) / steepness))`.
    Sigmoid { midpoint: f64, steepness: f64 },
    /// `clamp(step / ramp, 0, 1)`.
    Linear { ramp: f64 },
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnnealKind {
    Sigmoid,
    Linear,
    Constant,
}

impl std::str::FromStr for AnnealKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sigmoid" => Ok(AnnealKind::Sigmoid),
            "linear" => Ok(AnnealKind::Linear),
            "constant" => Ok(AnnealKind::Constant),
            _ => Err(format!("unknown schedule '{s}' (expected sigmoid, linear or constant)")),
        }
    }
}

impl AnnealingSchedule {
    /// Default shape for a run of `max_steps`: the sigmoid is centred at a
    /// quarter of the run with steepness `max_steps / 40`; the linear ramp
    /// reaches 1 at half the run; the constant is 1.
    pub fn default_for(kind: AnnealKind, max_steps: usize) -> Self {
        let m = max_steps.max(1) as f64;
        match kind {
            AnnealKind::Sigmoid => AnnealingSchedule::Sigmoid {
                midpoint: 0.25 * m,
                steepness: m / 40.0,
            },
            AnnealKind::Linear => AnnealingSchedule::Linear { ramp: 0.5 * m },
            AnnealKind::Constant => AnnealingSchedule::Constant(1.0),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = match *self {
            AnnealingSchedule::Sigmoid { midpoint, steepness } => midpoint.is_finite() && steepness > 0.0 && steepness.is_finite(),
            AnnealingSchedule::Linear { ramp } => ramp > 0.0 && ramp.is_finite(),
            AnnealingSchedule::Constant(v) => (0.0..=1.0).contains(&v),
        };
        if ok {
            Ok(())
        } else {
            Err(TrainError::Config(format!("invalid annealing schedule {self:?}")))
        }
    }

    pub fn weight(&self, step: usize) -> Result<f64, TrainError> {
        self.validate()?;
        let s = step as f64;
        Ok(match *self {
            AnnealingSchedule::Sigmoid { midpoint, steepness } => 1.0 / (1.0 + (-(s - midpoint) / steepness).exp()),
            AnnealingSchedule::Linear { ramp } => (s / ramp).clamp(0.0, 1.0),
            AnnealingSchedule::Constant(v) => v,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_interval: usize,
    /// Evaluations without dev improvement before stopping.
    pub patience: usize,
    pub keep_rate: f64,
    pub schedule: AnnealingSchedule,
    pub seed: u64,
    pub clip_norm: f64,
    /// Sentences per tape.
    pub chunk_size: usize,
    /// Stop at the first evaluation whose dev bound is at or below this.
    pub stop_at_dev: Option<f64>,
}

impl TrainConfig {
    pub fn new(max_steps: usize) -> Self {
        TrainConfig {
            optimizer: OptimizerKind::adam(),
            lr: 2e-3,
            batch_size: 32,
            max_steps,
            eval_interval: (max_steps / 20).max(1),
            patience: 10,
            keep_rate: 1.0,
            schedule: AnnealingSchedule::default_for(AnnealKind::Sigmoid, max_steps),
            seed: 0,
            clip_norm: 5.0,
            chunk_size: 8,
            stop_at_dev: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.max_steps == 0 || self.eval_interval == 0 || self.patience == 0 || self.chunk_size == 0 {
            return Err(TrainError::Config(
                "batch size, max steps, eval interval, patience and chunk size must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.clip_norm > 0.0) {
            return Err(TrainError::Config("learning rate and clip norm must be finite and non-negative".into()));
        }
        check_keep_rate(self.keep_rate).map_err(|e| TrainError::Config(e.to_string()))?;
        self.schedule.validate()
    }
}

/// One evaluation row. Train values are per-sentence means over the steps
/// since the previous evaluation; dev values are per-sentence means at
/// `w = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub train_rec: f64,
    pub train_kl: f64,
    pub dev_rec: f64,
    pub dev_kl: f64,
    pub dev_bound: f64,
    pub w: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

pub const LOG_HEADER: &str = "step,train_rec,train_kl,dev_rec,dev_kl,dev_bound,w";

impl TrainingLog {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.step, r.train_rec, r.train_kl, r.dev_rec, r.dev_kl, r.dev_bound, r.w
            )?;
        }
        Ok(())
    }

    pub fn best(&self) -> Option<&LogRecord> {
        self.records
            .iter()
            .min_by(|a, b| a.dev_bound.partial_cmp(&b.dev_bound).unwrap_or(std::cmp::Ordering::Equal))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot with the lowest dev bound.
    pub best: Model,
    pub best_step: usize,
    /// Parameters when training stopped.
    pub last: Model,
    pub log: TrainingLog,
    pub stopped_early: bool,
}

/// Dev metrics for a model at `w = 1`, per sentence: (rec, kl, bound).
pub fn dev_metrics(model: &Model, dev: &[TokenSequence], seed: u64) -> Result<(f64, f64, f64), TrainError> {
    let r = corpus_nll_and_perplexity(
        model,
        dev,
        EvalOptions {
            seed: rng::derive_seed(seed, "dev-eval"),
            ..EvalOptions::default()
        },
    )?;
    Ok((r.reconstruction_per_sentence(), r.kl_per_sentence(), r.nll_per_sentence()))
}

struct ChunkResult {
    grads: Gradients,
    rec: f64,
    kl: f64,
}

fn chunk_gradients(
    model: &Model,
    chunk: &[(u64, &TokenSequence)],
    w: f64,
    cfg: &TrainConfig,
    scale: f64,
) -> Result<ChunkResult, TrainError> {
    let ps = model.params();
    let mut tape = Tape::new();
    let mut totals = Vec::with_capacity(chunk.len());
    let (mut rec, mut kl) = (0.0, 0.0);
    for &(draw, x) in chunk {
        let mut r = rng::indexed(cfg.seed, "train", draw);
        let loss = model.loss_tape(&mut tape, ps, x, w, cfg.keep_rate, &mut r)?;
        rec += tape.scalar_value(loss.reconstruction);
        if let Some(k) = loss.kl {
            kl += tape.scalar_value(k);
        }
        totals.push(loss.total);
    }
    let sum = tape.concat(&totals);
    let sum = tape.sum(sum);
    let loss = tape.scale(sum, scale);
    Ok(ChunkResult {
        grads: tape.backward(loss, ps)?,
        rec,
        kl,
    })
}

/// Trains a fresh model of `kind`. Initial parameters come from the
/// "init" stream of `cfg.seed` and are rounded to f32.
pub fn train_new(
    kind: ModelKind,
    model_cfg: ModelConfig,
    train_data: &[TokenSequence],
    dev: &[TokenSequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let mut model = Model::new(kind, model_cfg, &mut rng::stream(cfg.seed, "init"))?;
    model.params_mut().round_to_f32();
    train(model, train_data, dev, cfg)
}

pub fn train(mut model: Model, train_data: &[TokenSequence], dev: &[TokenSequence], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_data.is_empty() || dev.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let vocab = model.config().vocab_size;
    for x in train_data.iter().chain(dev) {
        x.validate(vocab).map_err(ModelError::from)?;
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut order_rng = rng::stream(cfg.seed, "batches");
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    order.shuffle(&mut order_rng);
    let mut cursor = 0;

    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0;
    let (mut acc_rec, mut acc_kl, mut acc_n) = (0.0, 0.0, 0usize);
    let mut stopped_early = false;
    let mut draw = 0u64;

    for step in 1..=cfg.max_steps {
        let w = cfg.schedule.weight(step - 1)?;
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push((draw, &train_data[order[cursor]]));
            cursor += 1;
            draw += 1;
        }
        let chunks: Vec<_> = batch.chunks(cfg.chunk_size).collect();
        let scale = 1.0 / batch.len() as f64;
        let results = exec::try_map(&chunks, |_, c| chunk_gradients(&model, c, w, cfg, scale))?;
        let mut grads = Gradients::zeros_like(model.params());
        for r in &results {
            grads.accumulate(&r.grads);
            acc_rec += r.rec;
            acc_kl += r.kl;
        }
        acc_n += batch.len();
        if !(acc_rec.is_finite() && acc_kl.is_finite()) {
            return Err(TrainError::NonFinite {
                step,
                what: "training loss".into(),
            });
        }
        if !grads.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                what: "gradient".into(),
            });
        }
        grads.clip_global_norm(cfg.clip_norm);
        opt.step(model.params_mut(), &grads)?;

        if step % cfg.eval_interval == 0 || step == cfg.max_steps {
            let mut snapshot = model.clone();
            snapshot.params_mut().round_to_f32();
            let (dev_rec, dev_kl, dev_bound) = dev_metrics(&snapshot, dev, cfg.seed)?;
            if !dev_bound.is_finite() {
                return Err(TrainError::NonFinite {
                    step,
                    what: "dev bound".into(),
                });
            }
            log.records.push(LogRecord {
                step,
                train_rec: acc_rec / acc_n as f64,
                train_kl: acc_kl / acc_n as f64,
                dev_rec,
                dev_kl,
                dev_bound,
                w,
            });
            (acc_rec, acc_kl, acc_n) = (0.0, 0.0, 0);
            if best.as_ref().is_none_or(|b| dev_bound < b.0) {
                best = Some((dev_bound, step, snapshot));
                since_best = 0;
                if cfg.stop_at_dev.is_some_and(|t| dev_bound <= t) {
                    stopped_early = step < cfg.max_steps;
                    break;
                }
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = step < cfg.max_steps;
                    break;
                }
            }
        }
    }
    let (_, best_step, best) = best.expect("the final step always evaluates");
    Ok(TrainOutcome {
        best,
        best_step,
        last: model,
        log,
        stopped_early,
    })
}

/// Aligned weight and unweighted-KL series from a log.
#[derive(Clone, Debug, PartialEq)]
pub struct KlTrajectory {
    pub steps: Vec<usize>,
    pub weights: Vec<f64>,
    pub kl: Vec<f64>,
    /// Whether the KL spiked early, dropped once the weight reached 1, then
    /// recovered.
    pub spike_drop_rise: bool,
}

/// Below this final KL (nats) the run counts as collapsed and the pattern
/// is not reported.
pub const MIN_FINAL_KL: f64 = 0.1;

pub fn kl_trajectory_report(log: &TrainingLog) -> KlTrajectory {
    let steps: Vec<usize> = log.records.iter().map(|r| r.step).collect();
    let weights: Vec<f64> = log.records.iter().map(|r| r.w).collect();
    let kl: Vec<f64> = log.records.iter().map(|r| r.dev_kl).collect();
    KlTrajectory {
        spike_drop_rise: pattern(&weights, &kl),
        steps,
        weights,
        kl,
    }
}

fn pattern(w: &[f64], kl: &[f64]) -> bool {
    let Some(&last) = kl.last() else {
        return false;
    };
    let early: Vec<f64> = w.iter().zip(kl).filter(|(w, _)| **w < 0.5).map(|(_, k)| *k).collect();
    let Some(full) = w.iter().position(|&w| w >= 0.99) else {
        return false;
    };
    let Some(half) = w.iter().position(|&w| w >= 0.5) else {
        return false;
    };
    if early.is_empty() {
        return false;
    }
    let spike = early.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let trough = kl[half..].iter().cloned().fold(f64::INFINITY, f64::min);
    spike > 2.0 * kl[full] && last >= 1.2 * trough && last >= MIN_FINAL_KL
}

impl KlTrajectory {
    pub fn write_tsv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "step\tw\tkl")?;
        for i in 0..self.steps.len() {
            writeln!(w, "{}\t{}\t{}", self.steps[i], self.weights[i], self.kl[i])?;
        }
        Ok(())
    }
}
