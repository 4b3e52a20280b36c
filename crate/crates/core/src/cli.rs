//! The `bfpgen` command line.
//!
//! Every command writes into a run directory given by `--out` and records a
//! `manifest.json` there with the resolved settings, the master seed and a
//! SHA-256 of every input file. Settings come from built-in defaults, then
//! the command's section of an optional TOML `--config` file, then flags.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::classifier::{label_corpus, train_classifier, unk_rate, CnnConfig, CnnModel};
use crate::error::{Error, Result};
use crate::generator::{generate, train_generator, BfpCondition, LstmConfig, LstmModel, StopReason, CONDITION_DIM};
use crate::harness::{evaluate_generation, synth_corpus, EvalOptions, SynthSpec};
use crate::lexicon::{assign_levels, score_tokens, tertile_thresholds, LevelThresholds, Lexicon, TraitScores};
use crate::rng;
use crate::text::{read_corpus, write_corpus, TokenizeMode};
use crate::traits::{Level, TraitMap};

/// Above this share of unknown tokens, labeling warns.
pub const UNK_WARN_RATE: f64 = 0.10;
/// Above this share of unknown tokens, labeling refuses to run.
pub const UNK_ERROR_RATE: f64 = 0.50;

#[derive(Debug, Parser)]
#[command(name = "bfpgen", version, about = "Personality-conditioned text generation pipeline")]
pub struct Cli {
    /// TOML file with one section per command, e.g. [train-generator].
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages. Does not change any output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus with planted trait signals and its lexicon.
    Synth(SynthArgs),
    /// Train the CNN trait classifier on a labeled corpus.
    TrainClassifier(TrainClassifierArgs),
    /// Fill in corpus labels with a trained classifier.
    Label(LabelArgs),
    /// Train a conditional (or, with --unconditional, baseline) generator.
    TrainGenerator(TrainGeneratorArgs),
    /// Sample texts from a trained generator.
    Generate(GenerateArgs),
    /// Score texts with a lexicon, optionally assigning levels.
    Score(ScoreArgs),
    /// Derive tertile level thresholds from a reference corpus.
    Calibrate(CalibrateArgs),
    /// Measure how well generation follows the requested trait levels.
    Evaluate(EvaluateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::TrainClassifier(_) => "train-classifier",
            Command::Label(_) => "label",
            Command::TrainGenerator(_) => "train-generator",
            Command::Generate(_) => "generate",
            Command::Score(_) => "score",
            Command::Calibrate(_) => "calibrate",
            Command::Evaluate(_) => "evaluate",
        }
    }
}

const COMMANDS: [&str; 8] = [
    "synth",
    "train-classifier",
    "label",
    "train-generator",
    "generate",
    "score",
    "calibrate",
    "evaluate",
];

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Synthetic spec JSON; the built-in default when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct SynthSettings {
    spec: Option<PathBuf>,
    n: usize,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            spec: None,
            n: 4000,
            seed: 42,
            out: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainClassifierArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub num_filters: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
    /// `whitespace` or `cjk_char`.
    #[arg(long)]
    pub tokenize: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainClassifierSettings {
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: u64,
    #[serde(flatten)]
    model: CnnConfig,
}

impl Default for TrainClassifierSettings {
    fn default() -> Self {
        TrainClassifierSettings {
            corpus: None,
            out: None,
            seed: 42,
            model: CnnConfig::default(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct LabelArgs {
    /// Classifier checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct LabelSettings {
    model: Option<PathBuf>,
    input: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainGeneratorArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Train the baseline without condition inputs.
    #[arg(long)]
    pub unconditional: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub tokenize: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct TrainGeneratorSettings {
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
    unconditional: bool,
    seed: u64,
    #[serde(flatten)]
    model: LstmConfig,
}

impl Default for TrainGeneratorSettings {
    fn default() -> Self {
        TrainGeneratorSettings {
            corpus: None,
            out: None,
            unconditional: false,
            seed: 42,
            model: LstmConfig::default(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenerateArgs {
    /// Generator checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Trait polarities such as "E=1,A=0,C=1,N=0,O=1"; omit for
    /// unconditional models.
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// UTF-8 file with one seed word per line.
    #[arg(long)]
    pub seed_pool: Option<PathBuf>,
    /// Sampling temperature; below 1e-6 decoding is greedy.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct GenerateSettings {
    model: Option<PathBuf>,
    condition: Option<String>,
    n: usize,
    seed_pool: Option<PathBuf>,
    temperature: Option<f64>,
    max_len: Option<usize>,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        GenerateSettings {
            model: None,
            condition: None,
            n: 1,
            seed_pool: None,
            temperature: None,
            max_len: None,
            seed: 0,
            out: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Thresholds file; when given, levels are written too.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Require levels in the output.
    #[arg(long)]
    pub levels: bool,
    #[arg(long)]
    pub tokenize: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct ScoreSettings {
    lexicon: Option<PathBuf>,
    input: Option<PathBuf>,
    thresholds: Option<PathBuf>,
    levels: bool,
    tokenize: TokenizeMode,
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Reference corpus.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub tokenize: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct CalibrateSettings {
    lexicon: Option<PathBuf>,
    input: Option<PathBuf>,
    tokenize: TokenizeMode,
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Conditional generator checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Unconditional generator checkpoint.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub seed_pool: Option<PathBuf>,
    #[arg(long)]
    pub n_per_condition: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct EvaluateSettings {
    model: Option<PathBuf>,
    baseline: Option<PathBuf>,
    lexicon: Option<PathBuf>,
    thresholds: Option<PathBuf>,
    seed_pool: Option<PathBuf>,
    n_per_condition: usize,
    temperature: f64,
    max_len: Option<usize>,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        let opts = EvalOptions::default();
        EvaluateSettings {
            model: None,
            baseline: None,
            lexicon: None,
            thresholds: None,
            seed_pool: None,
            n_per_condition: opts.n_per_condition,
            temperature: opts.temperature,
            max_len: opts.max_len,
            seed: opts.seed,
            out: None,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 2 for bad input, 1 for internal faults.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let text = text.trim().strip_prefix("error: ").unwrap_or(text.trim());
            eprintln!("error[user]: {}", text.replace('\n', " "));
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) if e.is_user_error() => {
            eprintln!("error[user]: {e}");
            2
        }
        Err(e) => {
            eprintln!("error[internal]: {e}");
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => Some(load_config(path)?),
        None => None,
    };
    let name = cli.command.name();
    let section = file.as_ref().and_then(|t| t.get(name)).map(|v| {
        v.as_table()
            .cloned()
            .ok_or_else(|| Error::Configuration(format!("[{name}] in the config file must be a table")))
    });
    let section = section.transpose()?;
    let work = || match &cli.command {
        Command::Synth(a) => cmd_synth(resolve(a, section.as_ref(), name)?),
        Command::TrainClassifier(a) => cmd_train_classifier(resolve(a, section.as_ref(), name)?),
        Command::Label(a) => cmd_label(resolve(a, section.as_ref(), name)?),
        Command::TrainGenerator(a) => cmd_train_generator(resolve(a, section.as_ref(), name)?),
        Command::Generate(a) => cmd_generate(resolve(a, section.as_ref(), name)?),
        Command::Score(a) => cmd_score(resolve(a, section.as_ref(), name)?),
        Command::Calibrate(a) => cmd_calibrate(resolve(a, section.as_ref(), name)?),
        Command::Evaluate(a) => cmd_evaluate(resolve(a, section.as_ref(), name)?),
    };
    match cli.threads {
        Some(0) => Err(Error::Configuration("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Configuration(format!("cannot start {n} threads: {e}")))?
            .install(work),
        None => work(),
    }
}

fn load_config(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Configuration(format!("{}: {}", path.display(), e.message())))?;
    if let Some(bad) = table.keys().find(|k| !COMMANDS.contains(&k.as_str())) {
        return Err(Error::Configuration(format!(
            "{}: unknown section [{bad}]; sections are named after commands",
            path.display()
        )));
    }
    Ok(table)
}

/// Layers defaults, the config section and explicitly given flags, in that
/// order. Config keys may use `-` or `_`.
fn resolve<S, F>(flags: &F, section: Option<&toml::Table>, cmd: &str) -> Result<S>
where
    S: Default + Serialize + DeserializeOwned,
    F: Serialize,
{
    let mut base = serde_json::to_value(S::default())?;
    let obj = base.as_object_mut().expect("settings serialize to an object");
    if let Some(tab) = section {
        for (k, v) in tab {
            let key = k.replace('-', "_");
            if !obj.contains_key(&key) {
                return Err(Error::Configuration(format!("unknown key {k:?} in [{cmd}]")));
            }
            obj.insert(key, serde_json::to_value(v)?);
        }
    }
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !(v.is_null() || v == Value::Bool(false)) {
                obj.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).map_err(|e| Error::Configuration(format!("[{cmd}]: {e}")))
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Configuration(format!("missing --{} (or `{key}` in the config file)", key.replace('_', "-"))))
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: &'a C,
    inputs: Vec<InputRecord>,
    outputs: Vec<&'a str>,
}

struct RunDir {
    dir: PathBuf,
    outputs: Vec<&'static str>,
}

impl RunDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn path(&mut self, name: &'static str) -> PathBuf {
        self.outputs.push(name);
        self.dir.join(name)
    }

    fn write(&mut self, name: &'static str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn finish<C: Serialize>(mut self, command: &str, seed: Option<u64>, config: &C, inputs: &[&Path]) -> Result<()> {
        let inputs = inputs
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| Error::io(*p, e))?;
                Ok(InputRecord {
                    path: p.display().to_string(),
                    sha256: format!("{:x}", Sha256::digest(&bytes)),
                })
            })
            .collect::<Result<_>>()?;
        let outputs = std::mem::take(&mut self.outputs);
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            inputs,
            outputs,
        };
        self.write("manifest.json", &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
        Ok(())
    }
}

fn cmd_synth(s: SynthSettings) -> Result<()> {
    let spec = match &s.spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::default(),
    };
    let mut run = RunDir::create(required(&s.out, "out")?)?;
    let (docs, lexicon) = synth_corpus(&spec, s.n, s.seed)?;
    let corpus = run.path("corpus.jsonl");
    write_corpus(&corpus, &docs)?;
    let lex_path = run.path("lexicon.json");
    lexicon.save(&lex_path)?;
    run.write("spec.json", &(spec.to_json_string()? + "\n"))?;
    run.write("seed_pool.txt", &(spec.seed_pool().join("\n") + "\n"))?;
    let inputs: Vec<&Path> = s.spec.as_deref().into_iter().collect();
    run.finish("synth", Some(s.seed), &s, &inputs)?;
    println!("wrote {} documents to {}", docs.len(), corpus.display());
    Ok(())
}

fn cmd_train_classifier(mut s: TrainClassifierSettings) -> Result<()> {
    let corpus_path = required(&s.corpus, "corpus")?;
    let docs = read_corpus(corpus_path, s.model.tokenize)?;
    let mut run = RunDir::create(required(&s.out, "out")?)?;
    let (model, report) = train_classifier(&docs, &s.model, s.seed)?;
    for e in &report.epochs {
        let accs: Vec<String> = e.val_accuracy.iter().map(|(t, a)| format!("{t}={a:.4}")).collect();
        println!("epoch {:>3}  loss {:.5}  val {}", e.epoch, e.train_loss, accs.join(" "));
    }
    model.save(run.path("classifier.json"))?;
    run.write("metrics.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    s.model = model.config.clone();
    run.finish("train-classifier", Some(s.seed), &s, &[corpus_path])?;
    println!("kept epoch {} of {}", report.best_epoch, report.epochs.len());
    Ok(())
}

fn cmd_label(s: LabelSettings) -> Result<()> {
    let model_path = required(&s.model, "model")?;
    let input = required(&s.input, "input")?;
    let model = CnnModel::load(model_path)?;
    let docs = read_corpus(input, model.config.tokenize)?;
    let rate = unk_rate(&docs, &model.vocab);
    if rate > UNK_ERROR_RATE {
        return Err(Error::Validation(format!(
            "vocabulary mismatch: {:.1}% of tokens are unknown to the classifier",
            100.0 * rate
        )));
    }
    if rate > UNK_WARN_RATE {
        eprintln!("warning: {:.1}% of tokens are unknown to the classifier", 100.0 * rate);
    }
    let mut run = RunDir::create(required(&s.out, "out")?)?;
    let labeled = label_corpus(&docs, &model)?;
    let out = run.path("labeled.jsonl");
    write_corpus(&out, &labeled)?;
    run.finish("label", None, &s, &[model_path, input])?;
    println!("labeled {} documents into {}", labeled.len(), out.display());
    Ok(())
}

fn cmd_train_generator(mut s: TrainGeneratorSettings) -> Result<()> {
    s.model.cond_dim = if s.unconditional { 0 } else { CONDITION_DIM };
    let corpus_path = required(&s.corpus, "corpus")?;
    let docs = read_corpus(corpus_path, s.model.tokenize)?;
    let mut run = RunDir::create(required(&s.out, "out")?)?;
    let (model, report) = train_generator(&docs, &s.model, s.seed)?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {:>3}  loss {l:.5}", i + 1);
    }
    model.save(run.path("generator.json"))?;
    run.write("loss.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
    s.model = model.config.clone();
    run.finish("train-generator", Some(s.seed), &s, &[corpus_path])?;
    Ok(())
}

/// One seed word per line; blank lines are skipped.
pub fn read_seed_pool(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Encoding { line: None })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

#[derive(Serialize)]
struct GeneratedRecord {
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    condition: Option<String>,
    seed_word: String,
    stop: StopReason,
}

fn cmd_generate(mut s: GenerateSettings) -> Result<()> {
    let model_path = required(&s.model, "model")?;
    let pool_path = required(&s.seed_pool, "seed_pool")?;
    let model = LstmModel::load(model_path)?;
    let condition = match &s.condition {
        Some(c) => Some(c.parse::<BfpCondition>()?),
        None => None,
    };
    if model.is_conditional() && condition.is_none() {
        return Err(Error::Validation(
            "this generator is conditional; pass --condition E=<0|1>,A=<0|1>,C=<0|1>,N=<0|1>,O=<0|1>".into(),
        ));
    }
    let pool = read_seed_pool(pool_path)?;
    let temperature = s.temperature.unwrap_or(model.config.temperature);
    let max_len = s.max_len.unwrap_or(model.config.max_len.saturating_sub(2).max(1));
    let mut run = RunDir::create(required(&s.out, "out")?)?;
    let records: Vec<GeneratedRecord> = (0..s.n)
        .into_par_iter()
        .map(|i| {
            let g = generate(&model, condition.as_ref(), &pool, temperature, max_len, &mut rng::stream(s.seed, i as u64))?;
            Ok(GeneratedRecord {
                text: g.tokens.join(" "),
                condition: condition.map(|c| c.to_string()),
                seed_word: g.seed_word,
                stop: g.stop,
            })
        })
        .collect::<Result<_>>()?;
    let out = run.path("texts.jsonl");
    write_jsonl(&out, &records)?;
    s.temperature = Some(temperature);
    s.max_len = Some(max_len);
    run.finish("generate", Some(s.seed), &s, &[model_path, pool_path])?;
    println!("wrote {} texts to {}", records.len(), out.display());
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ScoreRecord<'a> {
    text: &'a str,
    scores: TraitScores,
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<TraitMap<Level>>,
}

fn cmd_score(s: ScoreSettings) -> Result<()> {
    let lex_path = required(&s.lexicon, "lexicon")?;
    let input = required(&s.input, "input")?;
    if s.levels && s.thresholds.is_none() {
        return Err(Error::Configuration("levels were requested but no --thresholds file was given".into()));
    }
    let lexicon = Lexicon::load(lex_path)?;
    let thresholds = s.thresholds.as_deref().map(LevelThresholds::load).transpose()?;
    let docs = read_corpus(input, s.tokenize)?;
    let mut run = RunDir::create(required(&s.out, "out")?)?;
    let records: Vec<ScoreRecord<'_>> = docs
        .par_iter()
        .map(|d| {
            let scores = score_tokens(&d.tokens, &lexicon);
            ScoreRecord {
                text: &d.text,
                levels: thresholds.as_ref().map(|th| assign_levels(&scores, th)),
                scores,
            }
        })
        .collect();
    write_jsonl(&run.path("scores.jsonl"), &records)?;
    let mut inputs = vec![lex_path, input];
    inputs.extend(s.thresholds.as_deref());
    run.finish("score", None, &s, &inputs)?;
    println!("scored {} texts", records.len());
    Ok(())
}

fn cmd_calibrate(s: CalibrateSettings) -> Result<()> {
    let lex_path = required(&s.lexicon, "lexicon")?;
    let input = required(&s.input, "input")?;
    let lexicon = Lexicon::load(lex_path)?;
    let docs = read_corpus(input, s.tokenize)?;
    let scores: Vec<TraitScores> = docs.par_iter().map(|d| score_tokens(&d.tokens, &lexicon)).collect();
    let thresholds = tertile_thresholds(&scores)?;
    let mut run = RunDir::create(required(&s.out, "out")?)?;
    thresholds.save(run.path("thresholds.json"))?;
    run.finish("calibrate", None, &s, &[lex_path, input])?;
    println!("calibrated on {} texts", docs.len());
    Ok(())
}

/// Errors when no lexicon category matches any token the generator can
/// produce; warns when only some do.
fn check_lexicon_coverage(lexicon: &Lexicon, model: &LstmModel) -> Result<()> {
    let tokens: Vec<&str> = (crate::text::NUM_SPECIALS..model.vocab.len())
        .map(|id| model.vocab.token(id))
        .collect::<Result<_>>()?;
    let covered = lexicon
        .categories()
        .iter()
        .filter(|c| tokens.iter().any(|t| c.matches(t)))
        .count();
    if covered == 0 {
        return Err(Error::Validation(
            "vocabulary mismatch: no lexicon category matches any generator vocabulary token".into(),
        ));
    }
    if covered < lexicon.num_categories() {
        eprintln!(
            "warning: only {covered} of {} lexicon categories match generator vocabulary tokens",
            lexicon.num_categories()
        );
    }
    Ok(())
}

fn cmd_evaluate(s: EvaluateSettings) -> Result<()> {
    let model_path = required(&s.model, "model")?;
    let lex_path = required(&s.lexicon, "lexicon")?;
    let th_path = required(&s.thresholds, "thresholds")?;
    let pool_path = required(&s.seed_pool, "seed_pool")?;
    let model = LstmModel::load(model_path)?;
    let baseline = s.baseline.as_deref().map(LstmModel::load).transpose()?;
    let lexicon = Lexicon::load(lex_path)?;
    let thresholds = LevelThresholds::load(th_path)?;
    let pool = read_seed_pool(pool_path)?;
    check_lexicon_coverage(&lexicon, &model)?;
    if let Some(b) = &baseline {
        check_lexicon_coverage(&lexicon, b)?;
    }
    let opts = EvalOptions {
        n_per_condition: s.n_per_condition,
        temperature: s.temperature,
        max_len: s.max_len,
        seed: s.seed,
        include_unconditional: true,
    };
    let outcome = evaluate_generation(&model, baseline.as_ref(), &lexicon, &thresholds, &pool, &opts)?;
    let mut run = RunDir::create(required(&s.out, "out")?)?;
    run.write("report.json", &(outcome.report.to_json_string()? + "\n"))?;
    let table = outcome.report.render_table();
    run.write("table.txt", &table)?;
    write_jsonl(&run.path("samples.jsonl"), &outcome.samples)?;
    let mut inputs = vec![model_path];
    inputs.extend(s.baseline.as_deref());
    inputs.extend([lex_path, th_path, pool_path]);
    run.finish("evaluate", Some(s.seed), &s, &inputs)?;
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(s: &str) -> toml::Table {
        s.parse().unwrap()
    }

    #[test]
    fn flags_override_config_which_overrides_defaults() {
        let flags = TrainGeneratorArgs {
            corpus: Some("c.jsonl".into()),
            out: None,
            unconditional: false,
            seed: None,
            epochs: Some(3),
            batch_size: None,
            learning_rate: None,
            embed_dim: None,
            hidden_dim: None,
            max_len: None,
            min_count: None,
            tokenize: None,
        };
        let section = table("epochs = 7\nhidden-dim = 16\nseed = 5");
        let s: TrainGeneratorSettings = resolve(&flags, Some(&section), "train-generator").unwrap();
        assert_eq!(s.model.epochs, 3);
        assert_eq!(s.model.hidden_dim, 16);
        assert_eq!(s.seed, 5);
        assert_eq!(s.model.embed_dim, LstmConfig::default().embed_dim);
        assert_eq!(s.corpus.as_deref(), Some(Path::new("c.jsonl")));
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let flags = LabelArgs {
            model: None,
            input: None,
            out: None,
        };
        let r: Result<LabelSettings> = resolve(&flags, Some(&table("modle = \"x\"")), "label");
        assert!(matches!(r, Err(Error::Configuration(_))));
    }

    #[test]
    fn bad_tokenize_value_rejected() {
        let flags = CalibrateArgs {
            lexicon: None,
            input: None,
            tokenize: Some("bytes".into()),
            out: None,
        };
        let r: Result<CalibrateSettings> = resolve(&flags, None, "calibrate");
        assert!(matches!(r, Err(Error::Configuration(_))));
    }

    #[test]
    fn parse_errors_exit_two() {
        assert_eq!(run(["bfpgen", "no-such-command"]), 2);
        assert_eq!(run(["bfpgen", "--help"]), 0);
    }
}
