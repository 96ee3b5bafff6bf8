//! Command-line front end.
//!
//! Settings come from an optional flat `key=value` file (`--config`) and are
//! overridden by flags. Every key is the long name of a flag of the chosen
//! subcommand; anything else is rejected. All randomness derives from
//! `--seed` through named streams.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{ArgAction, ArgGroup, Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::adversarial::{
    build_adversarial_dataset, rnnlm_typicality_score, train_lstm_classifier, train_unigram_classifier, write_metrics_csv,
    AdvError, LstmClassifierConfig, MetricsRow, UnigramConfig,
};
use crate::corpus::{encode_all, mask_for_imputation, read_lines, CorpusError, Direction, TokenSequence, Vocabulary};
use crate::exec;
use crate::imputation::{write_imputation_report, IcmConfig, ImputeError, Imputer};
use crate::latent::{
    homotopy, prior_draw, sample_prior_decode, sample_stretched_decode, write_homotopy_report, HomotopyRequest, LatentError,
    StretchConfig,
};
use crate::model::{
    corpus_nll_and_perplexity, load_checkpoint, save_checkpoint, EvalLatent, EvalOptions, LatentVector, Model, ModelConfig,
    ModelError, ModelKind,
};
use crate::rng::derive_seed;
use crate::synthetic::{default_grammar, Grammar, GrammarError};
use crate::training::{kl_trajectory_report, train_new, AnnealKind, AnnealingSchedule, TrainConfig, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Impute(#[from] ImputeError),
    #[error(transparent)]
    Adv(#[from] AdvError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Parser, Debug)]
#[command(name = "sentvae", version, about = "Sentence VAE and RNN language model toolkit", args_override_self = true)]
struct Cli {
    /// Flat key=value settings file; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Global seed for every random stream
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (SENTVAE_THREADS, then machine parallelism, when unset)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build a vocabulary from a whitespace-tokenized corpus
    BuildVocab(BuildVocabArgs),
    /// Train a VAE or RNNLM; writes a checkpoint and CSV log
    Train(TrainArgs),
    /// NLL and perplexity table for one or more corpora
    Eval(EvalArgs),
    /// Decode sentences from prior samples
    Sample(SampleArgs),
    /// Decode along a straight line between two latent codes
    Homotopy(HomotopyArgs),
    /// Fill in the second half of each sentence
    Impute(ImputeArgs),
    /// Train classifiers to separate real from imputed sentences
    AdvEval(AdvEvalArgs),
    /// Generate a corpus from a template grammar
    GenSynthetic(GenSyntheticArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Vae,
    Rnnlm,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Vae => ModelKind::Vae,
            ModelArg::Rnnlm => ModelKind::Rnnlm,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AnnealArg {
    Sigmoid,
    Linear,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    L2r,
    R2l,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LatentArg {
    Sample,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ClassifierArg {
    Unigram,
    Lstm,
    Both,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct BuildVocabArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Keep at most this many non-reserved words (0 keeps all)
    #[arg(long, default_value_t = 0)]
    max_size: usize,
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Vae)]
    model: ModelArg,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Directory for model.ckpt, train_log.csv and kl_trajectory.tsv
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
    /// Word-dropout keep rate
    #[arg(long, default_value_t = 1.0)]
    keep_rate: f64,
    #[arg(long, value_enum, default_value_t = AnnealArg::Sigmoid)]
    anneal: AnnealArg,
    /// Order in which the decoder emits words
    #[arg(long, value_enum, default_value_t = DirectionArg::L2r)]
    direction: DirectionArg,
    #[arg(long, default_value_t = 4000)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    /// Steps between dev evaluations (0 means steps/20)
    #[arg(long, default_value_t = 0)]
    eval_interval: usize,
    /// Evaluations without improvement before stopping
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 5.0)]
    clip_norm: f64,
    #[arg(long, default_value_t = 64)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 128)]
    hidden_dim: usize,
    #[arg(long, default_value_t = 16)]
    z_dim: usize,
    #[arg(long, default_value_t = 0)]
    highway_layers: usize,
    /// Feed z to every decoder step
    #[arg(long, action = ArgAction::SetTrue)]
    concat_z: bool,
    #[arg(long, action = ArgAction::SetTrue)]
    tie_embeddings: bool,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Corpus file; repeat for several rows
    #[arg(long, required = true, action = ArgAction::Append)]
    data: Vec<PathBuf>,
    /// Latent used for the reconstruction term
    #[arg(long, value_enum, default_value_t = LatentArg::Sample)]
    latent: LatentArg,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct SampleArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Apply a random linear stretch with entries in [-c, c] before decoding
    #[arg(long)]
    stretch_c: Option<f64>,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    /// Write here instead of standard output
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
#[command(group(ArgGroup::new("endpoints").required(true).args(["from_sentence", "random_pair"])))]
struct HomotopyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Start at the posterior mean of this sentence
    #[arg(long, requires = "to_sentence")]
    from_sentence: Option<String>,
    #[arg(long, requires = "from_sentence")]
    to_sentence: Option<String>,
    /// Use two prior draws as endpoints
    #[arg(long, action = ArgAction::SetTrue, conflicts_with = "from_sentence")]
    random_pair: bool,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    /// Print every point, including repeated sentences
    #[arg(long, action = ArgAction::SetTrue)]
    no_dedupe: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct ImputeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Sentences to complete; the final fifth of each is hidden
    #[arg(long)]
    data: PathBuf,
    /// Expected checkpoint family
    #[arg(long, value_enum, default_value_t = ModelArg::Vae)]
    model: ModelArg,
    /// RNNLM beam width
    #[arg(long, default_value_t = 15)]
    beam: usize,
    #[arg(long, default_value_t = 3)]
    icm_rounds: usize,
    #[arg(long, default_value_t = 5)]
    icm_beam: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct AdvEvalArgs {
    /// Imputing model; repeat to compare several
    #[arg(long, required = true, action = ArgAction::Append)]
    generator_ckpt: Vec<PathBuf>,
    /// RNNLM used for the typicality column
    #[arg(long)]
    scorer_ckpt: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Real sentences; each is paired with its imputed twin
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = ClassifierArg::Unigram)]
    classifier: ClassifierArg,
    #[arg(long, default_value_t = 15)]
    beam: usize,
    #[arg(long, default_value_t = 3)]
    icm_rounds: usize,
    #[arg(long, default_value_t = 5)]
    icm_beam: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct GenSyntheticArgs {
    /// Grammar file (the built-in two-topic grammar when unset)
    #[arg(long)]
    grammar: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Runs the command line with the process's standard streams.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch_to(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the command line, writing reports and diagnostics to the given
/// streams. Returns the process exit code.
pub fn dispatch_to<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}\n\n{}", Cli::command().render_usage());
            return EXIT_USAGE;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    exec::init_threads(cli.threads);
    match run(cli, out) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_USAGE
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// Splices settings from `--config` into `argv` right after the subcommand
/// name, so later command-line flags override them.
fn merge_config(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let mut cmd = Cli::command();
    cmd.build();
    let names: BTreeSet<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let Some(pos) = argv.iter().skip(1).position(|a| names.contains(a)).map(|p| p + 1) else {
        return Ok(argv);
    };
    let sub = cmd.find_subcommand(&argv[pos]).expect("known subcommand");
    let text = std::fs::read_to_string(&path).map_err(|source| CliError::File { path: path.clone(), source })?;
    let mut injected = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key=value", path.display(), lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key) && !matches!(key, "config" | "help" | "version"))
            .ok_or_else(|| CliError::Usage(format!("{}:{}: unknown key '{key}' for {}", path.display(), lineno + 1, sub.get_name())))?;
        if arg.get_action().takes_values() {
            injected.push(format!("--{key}"));
            injected.push(value.to_string());
        } else {
            match value {
                "true" => injected.push(format!("--{key}")),
                "false" => {}
                _ => return Err(CliError::Usage(format!("{}:{}: '{key}' takes true or false", path.display(), lineno + 1))),
            }
        }
    }
    let mut merged = argv[..=pos].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&argv[pos + 1..]);
    Ok(merged)
}

fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Cmd::BuildVocab(a) => build_vocab(a),
        Cmd::Train(a) => train_cmd(a, seed, out),
        Cmd::Eval(a) => eval_cmd(a, seed, out),
        Cmd::Sample(a) => sample_cmd(a, seed, out),
        Cmd::Homotopy(a) => homotopy_cmd(a, seed, out),
        Cmd::Impute(a) => impute_cmd(a, out),
        Cmd::AdvEval(a) => adv_eval_cmd(a, seed, out),
        Cmd::GenSynthetic(a) => gen_synthetic_cmd(a, seed, out),
    }
}

/// Runs `f` against the named file, or against `out` when there is none.
fn with_output(path: Option<&Path>, out: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|source| CliError::File { path: p.to_path_buf(), source })?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(out),
    }
}

fn load_corpus(vocab: &Vocabulary, path: &Path) -> Result<Vec<TokenSequence>, CliError> {
    Ok(encode_all(vocab, &read_lines(path)?)?)
}

fn load_model(path: &Path, vocab: &Vocabulary) -> Result<Model, CliError> {
    let model = load_checkpoint(path)?;
    if model.config().vocab_size != vocab.len() {
        return Err(CliError::Usage(format!(
            "{} expects a vocabulary of {} entries, got {}",
            path.display(),
            model.config().vocab_size,
            vocab.len()
        )));
    }
    Ok(model)
}

fn build_vocab(a: BuildVocabArgs) -> Result<(), CliError> {
    let lines = read_lines(&a.input)?;
    let max = (a.max_size > 0).then_some(a.max_size);
    Vocabulary::build(lines.iter(), max, a.min_freq)?.save(&a.output)?;
    Ok(())
}

fn train_cmd(a: TrainArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let train = load_corpus(&vocab, &a.train)?;
    let dev = load_corpus(&vocab, &a.dev)?;
    let model_cfg = ModelConfig {
        embedding_dim: a.embedding_dim,
        hidden_dim: a.hidden_dim,
        z_dim: a.z_dim,
        direction: match a.direction {
            DirectionArg::L2r => Direction::LeftToRight,
            DirectionArg::R2l => Direction::RightToLeft,
        },
        concat_z: a.concat_z,
        highway_layers: a.highway_layers,
        keep_rate: a.keep_rate,
        tie_embeddings: a.tie_embeddings,
        ..ModelConfig::new(vocab.len())
    };
    let anneal = match a.anneal {
        AnnealArg::Sigmoid => AnnealKind::Sigmoid,
        AnnealArg::Linear => AnnealKind::Linear,
        AnnealArg::Constant => AnnealKind::Constant,
    };
    let mut cfg = TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        patience: a.patience,
        keep_rate: a.keep_rate,
        schedule: AnnealingSchedule::default_for(anneal, a.steps),
        seed,
        clip_norm: a.clip_norm,
        ..TrainConfig::new(a.steps)
    };
    if a.eval_interval > 0 {
        cfg.eval_interval = a.eval_interval;
    }
    let outcome = train_new(a.model.into(), model_cfg, &train, &dev, &cfg)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|source| CliError::File { path: a.out_dir.clone(), source })?;
    save_checkpoint(&outcome.best, &a.out_dir.join("model.ckpt"))?;
    let log_path = a.out_dir.join("train_log.csv");
    with_output(Some(&log_path), out, |w| Ok(outcome.log.write_csv(w)?))?;
    if outcome.best.kind() == ModelKind::Vae {
        let traj = kl_trajectory_report(&outcome.log);
        with_output(Some(&a.out_dir.join("kl_trajectory.tsv")), out, |w| Ok(traj.write_tsv(w)?))?;
    }
    let best = outcome.log.best().map(|r| r.dev_bound).unwrap_or(f64::NAN);
    writeln!(out, "best_step\t{}\ndev_bound_per_sentence\t{best:.4}\nstopped_early\t{}", outcome.best_step, outcome.stopped_early)?;
    Ok(())
}

fn eval_cmd(a: EvalArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let model = load_model(&a.ckpt, &vocab)?;
    let opts = EvalOptions {
        keep_rate: 1.0,
        seed: derive_seed(seed, "eval"),
        latent: match a.latent {
            LatentArg::Sample => EvalLatent::Sample,
            LatentArg::Mean => EvalLatent::Mean,
        },
    };
    writeln!(out, "data\tmodel\tsentences\ttokens\tnll_per_sentence\tkl_per_sentence\tnll_per_token\tperplexity")?;
    for path in &a.data {
        let data = load_corpus(&vocab, path)?;
        let r = corpus_nll_and_perplexity(&model, &data, opts)?;
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.3}",
            path.display(),
            model.kind().as_str(),
            r.sentences,
            r.tokens,
            r.nll_per_sentence(),
            r.kl_per_sentence(),
            r.nll_per_token(),
            r.perplexity
        )?;
    }
    Ok(())
}

fn vae_model(model: &Model, what: &str) -> Result<(), CliError> {
    match model.as_vae() {
        Some(_) => Ok(()),
        None => Err(CliError::Usage(format!("{what} needs a vae checkpoint"))),
    }
}

fn sample_cmd(a: SampleArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let model = load_model(&a.ckpt, &vocab)?;
    vae_model(&model, "sample")?;
    let params = model.as_vae().expect("checked");
    let draws = match a.stretch_c {
        Some(c) => {
            let cfg = StretchConfig { c, seed: derive_seed(seed, "stretch") };
            sample_stretched_decode(params, a.count, derive_seed(seed, "prior"), &cfg, a.max_len)?
        }
        None => sample_prior_decode(params, a.count, derive_seed(seed, "prior"), a.max_len)?,
    };
    with_output(a.output.as_deref(), out, |w| {
        for (_, ids) in &draws {
            writeln!(w, "{}", vocab.decode(ids)?)?;
        }
        Ok(())
    })
}

fn homotopy_cmd(a: HomotopyArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let model = load_model(&a.ckpt, &vocab)?;
    vae_model(&model, "homotopy")?;
    let params = model.as_vae().expect("checked");
    let dim = model.config().z_dim;
    let (z1, z2) = match (&a.from_sentence, &a.to_sentence) {
        (Some(s1), Some(s2)) => {
            let mean = |s: &str| -> Result<LatentVector, CliError> { Ok(params.encode_posterior(&vocab.encode(s)?)?.mode()) };
            (mean(s1)?, mean(s2)?)
        }
        _ => {
            let s = derive_seed(seed, "homotopy");
            (prior_draw(s, 0, dim), prior_draw(s, 1, dim))
        }
    };
    let path = homotopy(params, &HomotopyRequest { z1, z2, steps: a.steps, dedupe: !a.no_dedupe })?;
    with_output(a.output.as_deref(), out, |w| Ok(write_homotopy_report(w, &vocab, &path)?))
}

fn imputer_for(kind: ModelKind, beam: usize, rounds: usize, icm_beam: usize) -> Imputer {
    match kind {
        ModelKind::Rnnlm => Imputer::RnnlmBeam(beam),
        ModelKind::Vae => Imputer::VaeIcm(IcmConfig { rounds, width: icm_beam, ..IcmConfig::default() }),
    }
}

fn impute_cmd(a: ImputeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let model = load_model(&a.ckpt, &vocab)?;
    let kind: ModelKind = a.model.into();
    if model.kind() != kind {
        return Err(CliError::Usage(format!("--model {} but {} holds a {} model", kind.as_str(), a.ckpt.display(), model.kind().as_str())));
    }
    let data = load_corpus(&vocab, &a.data)?;
    let instances: Vec<_> = data.iter().map(mask_for_imputation).collect();
    let imputer = imputer_for(kind, a.beam, a.icm_rounds, a.icm_beam);
    let outputs = imputer.impute_all(&model, &instances)?;
    with_output(a.output.as_deref(), out, |w| Ok(write_imputation_report(w, &vocab, kind, &instances, &outputs)?))
}

fn adv_eval_cmd(a: AdvEvalArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let scorer = load_model(&a.scorer_ckpt, &vocab)?;
    let scorer = scorer
        .as_rnnlm()
        .ok_or_else(|| CliError::Usage("--scorer-ckpt needs an rnnlm checkpoint".into()))?
        .clone();
    let data = load_corpus(&vocab, &a.data)?;
    let mut rows = Vec::new();
    for path in &a.generator_ckpt {
        let model = load_model(path, &vocab)?;
        let imputer = imputer_for(model.kind(), a.beam, a.icm_rounds, a.icm_beam);
        let label = imputer.label();
        let split = build_adversarial_dataset(&data, |inst| imputer.impute(&model, inst), &label, derive_seed(seed, "adv-split"))?;
        let generated: Vec<TokenSequence> = split.test.iter().filter(|x| !x.real).map(|x| x.sequence.clone()).collect();
        let typicality = rnnlm_typicality_score(&scorer, &generated)?;
        if matches!(a.classifier, ClassifierArg::Unigram | ClassifierArg::Both) {
            let (_, metrics) = train_unigram_classifier(&split, vocab.len(), &UnigramConfig::default())?;
            rows.push(MetricsRow { model: label.clone(), classifier: "unigram".into(), metrics, mean_rnnlm_nll: typicality });
        }
        if matches!(a.classifier, ClassifierArg::Lstm | ClassifierArg::Both) {
            let cfg = LstmClassifierConfig { seed: derive_seed(seed, "adv-lstm"), ..LstmClassifierConfig::default() };
            let (_, metrics) = train_lstm_classifier(&split, vocab.len(), &cfg)?;
            rows.push(MetricsRow { model: label.clone(), classifier: "lstm".into(), metrics, mean_rnnlm_nll: typicality });
        }
    }
    with_output(a.output.as_deref(), out, |w| Ok(write_metrics_csv(w, &rows)?))
}

fn gen_synthetic_cmd(a: GenSyntheticArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let grammar = match &a.grammar {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::File { path: p.clone(), source })?;
            Grammar::parse(&text)?
        }
        None => default_grammar(),
    };
    let sentences = grammar.generate(a.count, seed);
    with_output(a.output.as_deref(), out, |w| {
        for s in &sentences {
            writeln!(w, "{}", s.text)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("sentvae").chain(args.iter().copied());
        let code = dispatch_to(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_subcommand_and_flag_are_usage_errors() {
        let (code, _, err) = run_cli(&["frobnicate"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("Usage"), "{err}");
        let (code, _, _) = run_cli(&["gen-synthetic", "--bogus"]);
        assert_eq!(code, EXIT_USAGE);
        let (code, _, _) = run_cli(&[]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn missing_file_is_runtime_error() {
        let (code, _, err) = run_cli(&["build-vocab", "--input", "/nonexistent/x.txt", "--output", "/tmp/never"]);
        assert_eq!(code, EXIT_RUNTIME, "{err}");
    }

    #[test]
    fn help_lists_defaults() {
        let (code, out, _) = run_cli(&["train", "--help"]);
        assert_eq!(code, EXIT_OK);
        for flag in ["--keep-rate", "--anneal", "--direction", "--seed", "--config"] {
            assert!(out.contains(flag), "{flag} missing from help");
        }
        assert!(out.contains("[default: 1]"), "{out}");
        assert!(out.contains("[default: sigmoid]"));
    }

    #[test]
    fn gen_synthetic_goes_to_stdout_and_follows_seed() {
        let (code, a, _) = run_cli(&["gen-synthetic", "--count", "20", "--seed", "4"]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(a.lines().count(), 20);
        let (_, b, _) = run_cli(&["--seed", "4", "gen-synthetic", "--count", "20"]);
        assert_eq!(a, b);
        let (_, c, _) = run_cli(&["gen-synthetic", "--count", "20", "--seed", "5"]);
        assert_ne!(a, c);
    }

    #[test]
    fn config_file_is_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# settings\ncount = 7\nseed=4\n").unwrap();
        let cfg = cfg.to_str().unwrap();
        let (code, out, err) = run_cli(&["gen-synthetic", "--config", cfg]);
        assert_eq!(code, EXIT_OK, "{err}");
        assert_eq!(out.lines().count(), 7);
        let (_, direct, _) = run_cli(&["gen-synthetic", "--count", "7", "--seed", "4"]);
        assert_eq!(out, direct);
        let (_, out, _) = run_cli(&["gen-synthetic", "--config", cfg, "--count", "3"]);
        assert_eq!(out.lines().count(), 3);
    }

    #[test]
    fn config_file_rejects_unknown_and_malformed_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        std::fs::write(&cfg, "count=7\nkeep-rate=0.5\n").unwrap();
        let (code, _, err) = run_cli(&["gen-synthetic", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("keep-rate"), "{err}");
        std::fs::write(&cfg, "count 7\n").unwrap();
        let (code, _, _) = run_cli(&["gen-synthetic", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code, EXIT_USAGE);
    }

    #[test]
    fn homotopy_endpoints_are_required_and_exclusive() {
        let (code, _, _) = run_cli(&["homotopy", "--ckpt", "m", "--vocab", "v"]);
        assert_eq!(code, EXIT_USAGE);
        let (code, _, _) = run_cli(&["homotopy", "--ckpt", "m", "--vocab", "v", "--random-pair", "--from-sentence", "a", "--to-sentence", "b"]);
        assert_eq!(code, EXIT_USAGE);
        let (code, _, _) = run_cli(&["homotopy", "--ckpt", "m", "--vocab", "v", "--from-sentence", "a"]);
        assert_eq!(code, EXIT_USAGE);
    }
}
