//! How distinguishable are imputed sentences from real ones?
//!
//! Every sampled sentence yields a real item and a twin whose final 20% is
//! replaced by an imputer's completion. Twins always share a split. Two
//! discriminators are trained on the result: bag-of-unigrams logistic
//! regression and an LSTM that reads to EOS. Adversarial error is test
//! accuracy above chance, in percentage points.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::autodiff::{sigmoid, AutodiffError, Gradients, Optimizer, ParamSet, Tape};
use crate::corpus::{mask_for_imputation, CorpusError, ImputationInstance, TokenSequence};
use crate::imputation::ImputeError;
use crate::model::{ModelError, RnnlmParams};
use crate::nn::{EmbeddingTable, LayerError, Linear, LstmCellParams, LstmState, TapeLstmState};
use crate::{exec, rng};

#[derive(Debug, thiserror::Error)]
pub enum AdvError {
    #[error(transparent)]
    Impute(#[from] ImputeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("split '{0}' needs both labels")]
    SingleClass(&'static str),
    #[error("accuracy {0} outside [0, 1]")]
    AccuracyRange(f64),
    #[error("imputer changed the sentence length from {expected} to {found}")]
    LengthChanged { expected: usize, found: usize },
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSentence {
    pub sequence: TokenSequence,
    /// True for corpus sentences, false for imputed ones.
    pub real: bool,
    pub origin: String,
    /// Index of the source sentence, shared by the twins.
    pub pair: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AdvDatasetSplit {
    pub train: Vec<LabeledSentence>,
    pub dev: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
}

/// Builds the twin dataset. `imputer` fills one masked instance.
pub fn build_adversarial_dataset<F>(sentences: &[TokenSequence], imputer: F, origin: &str, seed: u64) -> Result<AdvDatasetSplit, AdvError>
where
    F: Fn(&ImputationInstance) -> Result<TokenSequence, ImputeError> + Sync,
{
    let generated = exec::try_map(sentences, |_, s| -> Result<TokenSequence, AdvError> {
        let out = imputer(&mask_for_imputation(s))?;
        if out.len() != s.len() {
            return Err(AdvError::LengthChanged {
                expected: s.len(),
                found: out.len(),
            });
        }
        Ok(out)
    })?;
    let mut r = rng::stream(seed, "adv-split");
    let mut pairs: Vec<usize> = (0..sentences.len()).collect();
    pairs.shuffle(&mut r);
    let n = pairs.len();
    let n_train = (n * 8 + 5) / 10;
    let n_dev = (n - n_train) / 2;
    let make = |ids: &[usize], r: &mut rand_chacha::ChaCha8Rng| {
        let mut items: Vec<LabeledSentence> = ids
            .iter()
            .flat_map(|&i| {
                [
                    LabeledSentence {
                        sequence: sentences[i].clone(),
                        real: true,
                        origin: "corpus".into(),
                        pair: i,
                    },
                    LabeledSentence {
                        sequence: generated[i].clone(),
                        real: false,
                        origin: origin.into(),
                        pair: i,
                    },
                ]
            })
            .collect();
        items.shuffle(r);
        items
    };
    Ok(AdvDatasetSplit {
        train: make(&pairs[..n_train], &mut r),
        dev: make(&pairs[n_train..n_train + n_dev], &mut r),
        test: make(&pairs[n_train + n_dev..], &mut r),
    })
}

fn check_split(split: &AdvDatasetSplit) -> Result<(), AdvError> {
    for (name, items) in [("train", &split.train), ("dev", &split.dev), ("test", &split.test)] {
        if !(items.iter().any(|s| s.real) && items.iter().any(|s| !s.real)) {
            return Err(AdvError::SingleClass(name));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierMetrics {
    pub accuracy: f64,
    pub adversarial_error: f64,
    pub dev_accuracy: f64,
}

impl ClassifierMetrics {
    fn new(accuracy: f64, dev_accuracy: f64) -> Result<Self, AdvError> {
        Ok(ClassifierMetrics {
            accuracy,
            adversarial_error: adversarial_error(accuracy)?,
            dev_accuracy,
        })
    }
}

/// `(accuracy - 0.5) * 100`, signed.
pub fn adversarial_error(accuracy: f64) -> Result<f64, AdvError> {
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(AdvError::AccuracyRange(accuracy));
    }
    Ok((accuracy - 0.5) * 100.0)
}

fn accuracy(items: &[LabeledSentence], predict: impl Fn(&TokenSequence) -> bool + Sync) -> f64 {
    let hits = exec::map(items, |_, s| (predict(&s.sequence) == s.real) as usize);
    hits.iter().sum::<usize>() as f64 / items.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnigramConfig {
    pub l2_grid: Vec<f64>,
    /// Presence features instead of counts.
    pub binary: bool,
    pub max_iters: usize,
    pub eval_every: usize,
    /// Evaluations without dev improvement before stopping.
    pub patience: usize,
}

impl Default for UnigramConfig {
    fn default() -> Self {
        UnigramConfig {
            l2_grid: vec![0.0, 1e-4, 1e-3, 1e-2, 1e-1],
            binary: false,
            max_iters: 1000,
            eval_every: 10,
            patience: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnigramClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub binary: bool,
}

fn unigram_features(x: &TokenSequence, binary: bool) -> Vec<(usize, f64)> {
    let mut ids = x.ids().to_vec();
    ids.sort_unstable();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for t in ids {
        match out.last_mut() {
            Some((last, c)) if *last == t => {
                if !binary {
                    *c += 1.0;
                }
            }
            _ => out.push((t, 1.0)),
        }
    }
    out
}

impl UnigramClassifier {
    pub fn score(&self, x: &TokenSequence) -> f64 {
        self.bias
            + unigram_features(x, self.binary)
                .iter()
                .map(|&(t, c)| self.weights.get(t).copied().unwrap_or(0.0) * c)
                .sum::<f64>()
    }

    /// True means "real".
    pub fn predict(&self, x: &TokenSequence) -> bool {
        self.score(x) > 0.0
    }
}

/// Logistic regression by full-batch gradient descent, step `1/L` for the
/// smoothness bound `L = E|x|^2 / 4 + l2`, early-stopped on dev accuracy.
/// The L2 strength is picked from the grid by dev accuracy.
pub fn train_unigram_classifier(split: &AdvDatasetSplit, vocab: usize, cfg: &UnigramConfig) -> Result<(UnigramClassifier, ClassifierMetrics), AdvError> {
    check_split(split)?;
    if cfg.l2_grid.is_empty() || cfg.max_iters == 0 || cfg.eval_every == 0 || cfg.patience == 0 {
        return Err(AdvError::Config("grid, iterations, eval interval and patience must be non-empty".into()));
    }
    for s in split.train.iter().chain(&split.dev).chain(&split.test) {
        s.sequence.validate(vocab)?;
    }
    let feats: Vec<Vec<(usize, f64)>> = split.train.iter().map(|s| unigram_features(&s.sequence, cfg.binary)).collect();
    let labels: Vec<f64> = split.train.iter().map(|s| s.real as u8 as f64).collect();
    let n = feats.len() as f64;
    let mean_sq = feats.iter().map(|f| f.iter().map(|(_, c)| c * c).sum::<f64>() + 1.0).sum::<f64>() / n;

    let mut best: Option<(f64, UnigramClassifier)> = None;
    for &l2 in &cfg.l2_grid {
        let lr = 1.0 / (0.25 * mean_sq + l2);
        let mut clf = UnigramClassifier {
            weights: vec![0.0; vocab],
            bias: 0.0,
            l2,
            binary: cfg.binary,
        };
        let mut local = (accuracy(&split.dev, |x| clf.predict(x)), clf.clone());
        let mut since = 0;
        for it in 1..=cfg.max_iters {
            let mut gw = vec![0.0; vocab];
            let mut gb = 0.0;
            for (f, &y) in feats.iter().zip(&labels) {
                let s = clf.bias + f.iter().map(|&(t, c)| clf.weights[t] * c).sum::<f64>();
                let d = sigmoid(s) - y;
                gb += d;
                for &(t, c) in f {
                    gw[t] += d * c;
                }
            }
            for (w, g) in clf.weights.iter_mut().zip(gw) {
                *w -= lr * (g / n + l2 * *w);
            }
            clf.bias -= lr * gb / n;
            if it % cfg.eval_every == 0 {
                let acc = accuracy(&split.dev, |x| clf.predict(x));
                if acc > local.0 {
                    local = (acc, clf.clone());
                    since = 0;
                } else {
                    since += 1;
                    if since >= cfg.patience {
                        break;
                    }
                }
            }
        }
        if best.as_ref().is_none_or(|b| local.0 > b.0) {
            best = Some(local);
        }
    }
    let (dev_acc, clf) = best.expect("grid is non-empty");
    let test_acc = accuracy(&split.test, |x| clf.predict(x));
    Ok((clf, ClassifierMetrics::new(test_acc, dev_acc)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmClassifierConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for LstmClassifierConfig {
    fn default() -> Self {
        LstmClassifierConfig {
            embedding_dim: 32,
            hidden_dim: 64,
            lr: 5e-3,
            batch_size: 32,
            max_epochs: 6,
            patience: 2,
            seed: 0,
        }
    }
}

/// Recurrent reader: embeddings into an LSTM, affine + sigmoid on the state
/// after EOS.
#[derive(Clone, Debug)]
pub struct LstmClassifier {
    params: ParamSet,
    embedding: EmbeddingTable,
    lstm: LstmCellParams,
    out: Linear,
}

impl LstmClassifier {
    pub fn new(vocab: usize, cfg: &LstmClassifierConfig) -> Self {
        let mut r = rng::stream(cfg.seed, "adv-lstm-init");
        let mut params = ParamSet::new();
        let embedding = EmbeddingTable::new(&mut params, "cls.embedding", vocab, cfg.embedding_dim, &mut r);
        let lstm = LstmCellParams::new(&mut params, "cls.lstm", cfg.embedding_dim, cfg.hidden_dim, &mut r);
        let out = Linear::new(&mut params, "cls.out", cfg.hidden_dim, 1, &mut r);
        LstmClassifier {
            params,
            embedding,
            lstm,
            out,
        }
    }

    pub fn score(&self, x: &TokenSequence) -> Result<f64, AdvError> {
        let ps = &self.params;
        let mut state = LstmState::zeros(self.lstm.hidden_dim);
        for &t in x.ids() {
            state = self.lstm.step_eager(ps, &state, self.embedding.row(ps, t)?)?;
        }
        Ok(self.out.apply(ps, &state.h)?[0])
    }

    pub fn predict(&self, x: &TokenSequence) -> bool {
        self.score(x).is_ok_and(|s| s > 0.0)
    }

    fn batch_gradients(&self, batch: &[&LabeledSentence]) -> Result<Gradients, AdvError> {
        let ps = &self.params;
        let mut tape = Tape::new();
        let mut losses = Vec::with_capacity(batch.len());
        for s in batch {
            let mut state = TapeLstmState::zeros(&mut tape, self.lstm.hidden_dim);
            for &t in s.sequence.ids() {
                let x = self.embedding.lookup(&mut tape, ps, t)?;
                state = self.lstm.step(&mut tape, ps, state, x);
            }
            let logit = self.out.forward(&mut tape, ps, state.h);
            // -log sigmoid(+-logit)
            let signed = if s.real { logit } else { tape.neg(logit) };
            let p = tape.sigmoid(signed);
            let lp = tape.log(p);
            losses.push(lp);
        }
        let all = tape.concat(&losses);
        let total = tape.sum(all);
        let loss = tape.scale(total, -1.0 / batch.len() as f64);
        Ok(tape.backward(loss, ps)?)
    }
}

/// Trains with Adam on log loss, one pass per epoch over shuffled training
/// items, keeping the parameters with the best dev accuracy.
pub fn train_lstm_classifier(
    split: &AdvDatasetSplit,
    vocab: usize,
    cfg: &LstmClassifierConfig,
) -> Result<(LstmClassifier, ClassifierMetrics), AdvError> {
    check_split(split)?;
    if cfg.batch_size == 0 || cfg.max_epochs == 0 || cfg.patience == 0 || cfg.embedding_dim == 0 || cfg.hidden_dim == 0 {
        return Err(AdvError::Config("sizes, epochs and patience must be positive".into()));
    }
    for s in split.train.iter().chain(&split.dev).chain(&split.test) {
        s.sequence.validate(vocab)?;
    }
    let mut clf = LstmClassifier::new(vocab, cfg);
    let mut opt = Optimizer::adam(cfg.lr);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut r = rng::stream(cfg.seed, "adv-lstm-batches");
    let mut best = (accuracy(&split.dev, |x| clf.predict(x)), clf.clone());
    let mut since = 0;
    const CHUNK: usize = 8;
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut r);
        for batch_ids in order.chunks(cfg.batch_size) {
            let items: Vec<&LabeledSentence> = batch_ids.iter().map(|&i| &split.train[i]).collect();
            let chunks: Vec<&[&LabeledSentence]> = items.chunks(CHUNK).collect();
            let parts = exec::try_map(&chunks, |_, c| clf.batch_gradients(c))?;
            let mut grads = Gradients::zeros_like(&clf.params);
            for (p, c) in parts.iter().zip(&chunks) {
                let mut p = p.clone();
                p.scale(c.len() as f64 / items.len() as f64);
                grads.accumulate(&p);
            }
            grads.clip_global_norm(5.0);
            opt.step(&mut clf.params, &grads)?;
        }
        let acc = accuracy(&split.dev, |x| clf.predict(x));
        if acc > best.0 {
            best = (acc, clf.clone());
            since = 0;
        } else {
            since += 1;
            if since >= cfg.patience {
                break;
            }
        }
    }
    let (dev_acc, clf) = best;
    let test_acc = accuracy(&split.test, |x| clf.predict(x));
    Ok((clf, ClassifierMetrics::new(test_acc, dev_acc)?))
}

/// Mean teacher-forced NLL per sentence under an independently trained
/// RNNLM.
pub fn rnnlm_typicality_score(scorer: &RnnlmParams, sentences: &[TokenSequence]) -> Result<f64, AdvError> {
    if sentences.is_empty() {
        return Err(ModelError::EmptyDataset.into());
    }
    let nll = exec::try_map(sentences, |_, s| scorer.sentence_nll(s))?;
    Ok(nll.iter().sum::<f64>() / sentences.len() as f64)
}

/// One row of the metrics report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub model: String,
    pub classifier: String,
    pub metrics: ClassifierMetrics,
    pub mean_rnnlm_nll: f64,
}

pub fn write_metrics_csv(mut w: impl Write, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(w, "model,classifier,accuracy,adv_err_pp,mean_rnnlm_nll")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.4},{:.2},{:.4}",
            r.model, r.classifier, r.metrics.accuracy, r.metrics.adversarial_error, r.mean_rnnlm_nll
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EOS, UNK};
    use crate::model::ModelConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    const V: usize = 20;

    fn random_sentences(n: usize, seed: u64) -> Vec<TokenSequence> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = r.random_range(3..9);
                let content: Vec<usize> = (0..len).map(|_| r.random_range(4..V - 1)).collect();
                TokenSequence::from_content(&content).unwrap()
            })
            .collect()
    }

    fn truth(inst: &ImputationInstance) -> Result<TokenSequence, ImputeError> {
        Ok(inst.sequence.clone())
    }

    /// Fills every unknown with the last id, which real sentences never use.
    fn sentinel(inst: &ImputationInstance) -> Result<TokenSequence, ImputeError> {
        let ids = inst
            .sequence
            .ids()
            .iter()
            .zip(&inst.known)
            .map(|(&t, &k)| if k { t } else { V - 1 })
            .collect();
        Ok(TokenSequence::new(ids)?)
    }

    #[test]
    fn adversarial_error_values() {
        assert_eq!(adversarial_error(0.5).unwrap(), 0.0);
        assert!((adversarial_error(0.7832).unwrap() - 28.32).abs() < 1e-9);
        assert_eq!(adversarial_error(1.0).unwrap(), 50.0);
        assert!(adversarial_error(1.1).is_err());
        assert!(adversarial_error(f64::NAN).is_err());
    }

    #[test]
    fn split_sizes_balance_and_twins() {
        let s = random_sentences(1000, 1);
        let d = build_adversarial_dataset(&s, truth, "truth", 3).unwrap();
        assert_eq!((d.train.len(), d.dev.len(), d.test.len()), (1600, 200, 200));
        let mut home: HashMap<usize, &str> = HashMap::new();
        for (name, items) in [("train", &d.train), ("dev", &d.dev), ("test", &d.test)] {
            assert_eq!(items.iter().filter(|x| x.real).count() * 2, items.len());
            for it in items.iter() {
                if let Some(prev) = home.insert(it.pair, name) {
                    assert_eq!(prev, name, "pair {} straddles splits", it.pair);
                }
            }
        }
        assert_eq!(home.len(), 1000);
        let again = build_adversarial_dataset(&s, truth, "truth", 3).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn imputer_errors_and_length_changes_propagate() {
        let s = random_sentences(10, 2);
        let fail = |_: &ImputationInstance| -> Result<TokenSequence, ImputeError> { Err(ImputeError::NoHypothesis) };
        assert!(matches!(build_adversarial_dataset(&s, fail, "x", 0), Err(AdvError::Impute(_))));
        let grow = |inst: &ImputationInstance| -> Result<TokenSequence, ImputeError> {
            let mut ids = inst.sequence.ids().to_vec();
            ids.insert(0, UNK);
            Ok(TokenSequence::new(ids)?)
        };
        assert!(matches!(build_adversarial_dataset(&s, grow, "x", 0), Err(AdvError::LengthChanged { .. })));
    }

    #[test]
    fn classifiers_cannot_beat_chance_on_identical_twins() {
        let s = random_sentences(1000, 4);
        let d = build_adversarial_dataset(&s, truth, "truth", 5).unwrap();
        let (_, m) = train_unigram_classifier(&d, V, &UnigramConfig::default()).unwrap();
        assert!((0.46..=0.54).contains(&m.accuracy), "{}", m.accuracy);
        let cfg = LstmClassifierConfig {
            embedding_dim: 8,
            hidden_dim: 8,
            max_epochs: 1,
            ..LstmClassifierConfig::default()
        };
        let (_, m) = train_lstm_classifier(&d, V, &cfg).unwrap();
        assert!((0.46..=0.54).contains(&m.accuracy), "{}", m.accuracy);
    }

    #[test]
    fn sentinel_is_caught() {
        let s = random_sentences(600, 6);
        let d = build_adversarial_dataset(&s, sentinel, "sentinel", 7).unwrap();
        let (_, m) = train_unigram_classifier(&d, V, &UnigramConfig::default()).unwrap();
        assert!(m.accuracy > 0.99, "{}", m.accuracy);
    }

    #[test]
    fn shared_token_gets_no_weight() {
        // Every item holds token 4 once; class is signalled by 5 vs 6.
        let mk = |t: usize| TokenSequence::from_content(&[4, t]).unwrap();
        let items = |n: usize| -> Vec<LabeledSentence> {
            (0..n)
                .flat_map(|i| {
                    [
                        LabeledSentence { sequence: mk(5), real: true, origin: "a".into(), pair: i },
                        LabeledSentence { sequence: mk(6), real: false, origin: "b".into(), pair: i },
                    ]
                })
                .collect()
        };
        let d = AdvDatasetSplit {
            train: items(50),
            dev: items(5),
            test: items(5),
        };
        let cfg = UnigramConfig {
            l2_grid: vec![1e-2],
            ..UnigramConfig::default()
        };
        let (clf, m) = train_unigram_classifier(&d, 8, &cfg).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(clf.weights[4].abs() < 0.05);
        assert!(clf.weights[EOS].abs() < 0.05);
    }

    #[test]
    fn lstm_reads_the_last_token() {
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let mut mk = |last: usize| {
            let len = r.random_range(1..5);
            let mut c: Vec<usize> = (0..len).map(|_| r.random_range(4..10)).collect();
            c.push(last);
            TokenSequence::from_content(&c).unwrap()
        };
        let mut items = |n: usize| -> Vec<LabeledSentence> {
            (0..n)
                .flat_map(|i| {
                    [
                        LabeledSentence { sequence: mk(10), real: true, origin: "a".into(), pair: i },
                        LabeledSentence { sequence: mk(11), real: false, origin: "b".into(), pair: i },
                    ]
                })
                .collect()
        };
        let d = AdvDatasetSplit {
            train: items(300),
            dev: items(50),
            test: items(100),
        };
        let cfg = LstmClassifierConfig {
            embedding_dim: 8,
            hidden_dim: 12,
            lr: 1e-2,
            max_epochs: 8,
            seed: 1,
            ..LstmClassifierConfig::default()
        };
        let (_, m) = train_lstm_classifier(&d, 12, &cfg).unwrap();
        assert!(m.accuracy > 0.95, "{}", m.accuracy);
        let (_, again) = train_lstm_classifier(&d, 12, &cfg).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn single_class_split_is_rejected() {
        let s = random_sentences(20, 9);
        let mut d = build_adversarial_dataset(&s, truth, "t", 0).unwrap();
        d.dev.retain(|x| x.real);
        assert!(matches!(
            train_unigram_classifier(&d, V, &UnigramConfig::default()),
            Err(AdvError::SingleClass("dev"))
        ));
    }

    #[test]
    fn typicality_of_uniform_scorer() {
        let mut cfg = ModelConfig::new(100);
        cfg.embedding_dim = 3;
        cfg.hidden_dim = 4;
        let mut m = RnnlmParams::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for id in m.params.ids().collect::<Vec<_>>() {
            m.params.get_mut(id).data_mut().fill(0.0);
        }
        let s: Vec<TokenSequence> = (0..5).map(|i| TokenSequence::from_content(&[4 + i, 5, 6, 7]).unwrap()).collect();
        let mean = rnnlm_typicality_score(&m, &s).unwrap();
        assert!((mean - 5.0 * 100f64.ln()).abs() < 1e-9);
        assert_eq!(mean, rnnlm_typicality_score(&m, &s).unwrap());
    }

    #[test]
    fn metrics_csv_layout() {
        let rows = [MetricsRow {
            model: "vae".into(),
            classifier: "unigram".into(),
            metrics: ClassifierMetrics::new(0.7832, 0.8).unwrap(),
            mean_rnnlm_nll: 46.14,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "model,classifier,accuracy,adv_err_pp,mean_rnnlm_nll\nvae,unigram,0.7832,28.32,46.1400\n"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn unigram_decision_ignores_order(weights in prop::collection::vec(-2.0f64..2.0, V), bias in -1.0f64..1.0, content in prop::collection::vec(4usize..V, 1..10), seed in any::<u64>()) {
            let clf = UnigramClassifier { weights, bias, l2: 0.0, binary: false };
            let a = TokenSequence::from_content(&content).unwrap();
            let mut shuffled = content.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = TokenSequence::from_content(&shuffled).unwrap();
            prop_assert!((clf.score(&a) - clf.score(&b)).abs() < 1e-12);
            prop_assert_eq!(clf.predict(&a), clf.predict(&b));
        }

        #[test]
        fn adversarial_error_is_affine_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (ea, eb) = (adversarial_error(a).unwrap(), adversarial_error(b).unwrap());
            prop_assert!((ea / 100.0 + 0.5 - a).abs() < 1e-12);
            prop_assert_eq!(a <= b, ea <= eb);
        }

        #[test]
        fn splits_are_balanced_for_any_size(n in 1usize..200, seed in any::<u64>()) {
            let s = random_sentences(n, seed);
            let d = build_adversarial_dataset(&s, truth, "t", seed).unwrap();
            let total = 2 * n;
            prop_assert_eq!(d.train.len() + d.dev.len() + d.test.len(), total);
            prop_assert!((d.train.len() as f64 - 0.8 * total as f64).abs() <= 2.0);
            for items in [&d.train, &d.dev, &d.test] {
                prop_assert_eq!(items.iter().filter(|x| x.real).count() * 2, items.len());
            }
        }
    }
}
