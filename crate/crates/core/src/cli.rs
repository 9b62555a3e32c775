//! Command-line surface: `preprocess`, `train`, `predict`, `evaluate`,
//! `ablate`, plus `fixture` for writing a small demo corpus.
//!
//! Settings come from one TOML file (`--config`); flags override it.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::align::{
    preprocess_split, read_records, write_records, DatasetMeta, PreprocessedRecord, Subtask,
    Tokenizer, WordPieceVocab,
};
use crate::annotate::{annotate_all, build_vocabs, AnnotateError, AnnotationCache, AnnotatorBackend};
use crate::corpus::{load_schema, read_duee_file, read_duee_file_checked, write_duee_file, DatasetSplit, RawSentence};
use crate::eval::{evaluate, MetricsReport, Section};
use crate::fixture;
use crate::model::{
    preset_pretrained, run_ablation, train_subtask, AblationEntry, ChannelConfig, Checkpoint,
    CheckpointMeta, EncoderConfig, EventPipeline, ModelConfig, ModelVariant, ParamStore,
    SubtaskResult, TaggerModel, TrainConfig, CHECKPOINT_FORMAT, STAND_IN_ENCODER,
};

#[derive(Debug, Parser)]
#[command(name = "synee", version, about = "Chinese event extraction with POS and dependency channels")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `tiny` for the stand-in encoder, or a pretrained model directory.
    #[arg(long, global = true)]
    pub encoder: Option<String>,
    #[arg(long, global = true, value_parser = parse_variant)]
    pub variant: Option<ModelVariant>,
    #[arg(long, global = true, value_parser = parse_subtask)]
    pub subtask: Option<Subtask>,
    /// Output location; its meaning depends on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

fn parse_variant(s: &str) -> std::result::Result<ModelVariant, String> {
    s.parse()
}

fn parse_subtask(s: &str) -> std::result::Result<Subtask, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resplit, annotate, align and label the corpus.
    Preprocess,
    /// Train one subtask tagger for one variant.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the trigger and role taggers of a variant over a DuEE-format file.
    Predict {
        /// Defaults to the preprocessed test split.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score a prediction file against gold.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        /// Defaults to the preprocessed test split.
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Train and score all five variants on both subtasks.
    Ablate {
        /// Reuse existing checkpoints instead of training.
        #[arg(long)]
        reuse: bool,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write a synthetic demo corpus with annotations and a config file.
    Fixture {
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        train: usize,
        #[arg(long, default_value_t = 30)]
        dev: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub schema: PathBuf,
    pub cache: PathBuf,
    pub preprocessed: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train: "train.json".into(),
            dev: "dev.json".into(),
            schema: "schema.json".into(),
            cache: "cache/annotations.jsonl".into(),
            preprocessed: "preprocessed".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub encoder: String,
    pub variant: ModelVariant,
    pub subtask: Subtask,
    /// Token limit including both delimiters.
    pub max_len: usize,
    pub paths: Paths,
    pub annotator: Option<AnnotatorBackend>,
    pub channels: ChannelConfig,
    /// Defaults depend on the encoder: stand-in or pretrained.
    pub train: Option<TrainConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            encoder: STAND_IN_ENCODER.into(),
            variant: ModelVariant::PosDpGcn,
            subtask: Subtask::Trigger,
            max_len: 128,
            paths: Paths::default(),
            annotator: None,
            channels: ChannelConfig::default(),
            train: None,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads a config file; relative paths in it are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for field in [
            &mut p.train,
            &mut p.dev,
            &mut p.schema,
            &mut p.cache,
            &mut p.preprocessed,
            &mut p.checkpoints,
            &mut p.reports,
        ] {
            resolve(base, field);
        }
        if let Some(AnnotatorBackend::Fixture { path }) = &mut cfg.annotator {
            resolve(base, path);
        }
        if cfg.encoder != STAND_IN_ENCODER {
            let mut enc = PathBuf::from(&cfg.encoder);
            resolve(base, &mut enc);
            cfg.encoder = enc.display().to_string();
        }
        Ok(cfg)
    }

    /// Config file (if any) with flag overrides applied.
    pub fn from_args(args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(e) = &args.encoder {
            cfg.encoder = e.clone();
        }
        if let Some(v) = args.variant {
            cfg.variant = v;
        }
        if let Some(s) = args.subtask {
            cfg.subtask = s;
        }
        Ok(cfg)
    }

    fn is_stand_in(&self) -> bool {
        self.encoder == STAND_IN_ENCODER
    }

    /// Short encoder name used in paths and reports.
    pub fn encoder_label(&self) -> String {
        if self.is_stand_in() {
            return STAND_IN_ENCODER.to_string();
        }
        Path::new(&self.encoder)
            .file_name()
            .map_or_else(|| self.encoder.clone(), |n| n.to_string_lossy().into_owned())
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut tc = self.train.clone().unwrap_or_else(|| {
            if self.is_stand_in() {
                TrainConfig::stand_in()
            } else {
                TrainConfig::default()
            }
        });
        tc.seed = self.seed;
        tc
    }

    pub fn checkpoint_dir(&self, variant: ModelVariant, subtask: Subtask) -> PathBuf {
        self.paths
            .checkpoints
            .join(self.encoder_label())
            .join(variant.slug())
            .join(subtask.name())
    }

    fn annotator(&self) -> Result<&AnnotatorBackend> {
        self.annotator
            .as_ref()
            .context("no annotator configured; add an [annotator] table (backend = \"fixture\" | \"command\" | \"corenlp\")")
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Command::Fixture { dir, train, dev } = &cli.command {
        return cmd_fixture(dir, *train, *dev, cli.common.seed.unwrap_or(42));
    }
    let cfg = RunConfig::from_args(&cli.common)?;
    log::info!("seed {}", cfg.seed);
    let out = cli.common.out.clone();
    match cli.command {
        Command::Preprocess => cmd_preprocess(&cfg, out),
        Command::Train { epochs } => cmd_train(&cfg, epochs, out),
        Command::Predict { input } => cmd_predict(&cfg, input, out),
        Command::Evaluate { pred, gold } => cmd_evaluate(&cfg, &pred, gold, out),
        Command::Ablate { reuse, epochs } => cmd_ablate(&cfg, reuse, epochs, out),
        Command::Fixture { .. } => unreachable!("handled above"),
    }
}

const SPLITS: [&str; 3] = ["train", "validation", "test"];

fn split_records_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.jsonl"))
}

fn split_raw_path(dir: &Path, split: &str) -> PathBuf {
    dir.join(format!("{split}.json"))
}

fn tokenizer_for(cfg: &RunConfig, texts: &[&str]) -> Result<Tokenizer> {
    let vocab = if cfg.is_stand_in() {
        WordPieceVocab::build(texts.iter().copied())
    } else {
        WordPieceVocab::from_file(&Path::new(&cfg.encoder).join("vocab.txt"))?
    };
    Ok(Tokenizer::new(vocab, cfg.max_len)?)
}

pub fn cmd_preprocess(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let dir = out.unwrap_or_else(|| cfg.paths.preprocessed.clone());
    let schema = load_schema(&cfg.paths.schema).context("loading the event schema")?;
    let train = read_duee_file_checked(&cfg.paths.train, &schema)?;
    let dev = read_duee_file_checked(&cfg.paths.dev, &schema)?;
    let split = DatasetSplit::new(train, dev)?;
    let all: Vec<RawSentence> = [&split.train, &split.validation, &split.test]
        .into_iter()
        .flatten()
        .cloned()
        .collect();
    let annotator = cfg.annotator()?.connect()?;
    if let Some(parent) = cfg.paths.cache.parent() {
        fs::create_dir_all(parent)?;
    }
    let cache = AnnotationCache::open(&cfg.paths.cache)?;
    let (annotations, stats) = annotate_all(&all, annotator.as_ref(), &cache).map_err(|e| match e {
        AnnotateError::Transport(what) => anyhow::anyhow!(
            "annotator backend unreachable: {what}; check the [annotator] settings and that the service is running"
        ),
        other => other.into(),
    })?;
    cache.flush()?;
    println!(
        "annotations: {} from cache, {} new, {} skipped",
        stats.cache_hits, stats.annotated, stats.skipped
    );
    let texts: Vec<&str> = all.iter().map(|s| s.text.as_str()).collect();
    let tokenizer = tokenizer_for(cfg, &texts)?;
    let vocabs = build_vocabs(split.train.iter().filter_map(|s| annotations.get(&s.id)));
    let meta = DatasetMeta::new(cfg.encoder_label(), annotator.version(), tokenizer, vocabs, schema);
    fs::create_dir_all(&dir)?;
    meta.write(&dir)?;
    for (name, sentences) in SPLITS.iter().zip([&split.train, &split.validation, &split.test]) {
        let (records, summary) = preprocess_split(sentences, &annotations, &meta)?;
        write_records(&split_records_path(&dir, name), &records)?;
        write_duee_file(&split_raw_path(&dir, name), sentences)?;
        println!(
            "{name}: {} records ({} unannotated, {} spans dropped for overlap, {} for truncation)",
            summary.records, summary.unannotated, summary.dropped_overlap, summary.dropped_truncated
        );
    }
    Ok(())
}

fn load_split(dir: &Path, split: &str) -> Result<Vec<PreprocessedRecord>> {
    read_records(&split_records_path(dir, split))
        .with_context(|| format!("reading the {split} split; run `preprocess` first"))
}

fn build_model(cfg: &RunConfig, meta: &DatasetMeta, variant: ModelVariant, subtask: Subtask) -> Result<TaggerModel> {
    if meta.encoder != cfg.encoder_label() {
        bail!(
            "data was preprocessed for encoder {:?} but {:?} is configured",
            meta.encoder,
            cfg.encoder_label()
        );
    }
    let mut store = ParamStore::new(cfg.seed);
    let encoder = if cfg.is_stand_in() {
        EncoderConfig::stand_in(meta.tokenizer.vocab.len(), meta.tokenizer.max_len)
    } else {
        preset_pretrained(Path::new(&cfg.encoder), &mut store)?
    };
    let mut channels = cfg.channels.clone();
    channels.encoder_name = cfg.encoder_label();
    let config = ModelConfig::for_dataset(variant, channels, encoder, meta, subtask);
    Ok(TaggerModel::build(config, store)?)
}

/// Trains one tagger and writes its checkpoint and epoch log.
fn train_one(
    cfg: &RunConfig,
    meta: &DatasetMeta,
    train: &[PreprocessedRecord],
    validation: &[PreprocessedRecord],
    variant: ModelVariant,
    subtask: Subtask,
    epochs: Option<usize>,
) -> Result<CheckpointMeta> {
    let model = build_model(cfg, meta, variant, subtask)?;
    let mut tc = cfg.train_config();
    if let Some(e) = epochs {
        tc.epochs = e;
    }
    let dir = cfg.checkpoint_dir(variant, subtask);
    fs::create_dir_all(&dir)?;
    let mut log = fs::File::create(dir.join("train_log.jsonl"))?;
    let mut log_err = None;
    let outcome = train_subtask(model, train, validation, meta.scheme(subtask), &tc, |r| {
        let line = serde_json::to_string(r).expect("epoch records serialize");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).context("writing the training log");
    }
    let ckpt = CheckpointMeta {
        format: CHECKPOINT_FORMAT,
        subtask,
        model: outcome.model.config.clone(),
        dataset: meta.clone(),
        history: outcome.history.clone(),
        best_epoch: outcome.best_epoch,
        seed: cfg.seed,
    };
    Checkpoint::save(&dir, &ckpt, &outcome.model)?;
    let best = outcome.best();
    println!(
        "{} {subtask}: best epoch {} of {}, validation F1 {:.4}, loss/epoch {:.4} -> {}",
        variant.display_name(),
        outcome.best_epoch,
        outcome.history.len(),
        best.validation.f1,
        outcome.loss_per_epoch(),
        dir.display()
    );
    Ok(ckpt)
}

pub fn cmd_train(cfg: &RunConfig, epochs: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = cfg.clone();
    if let Some(dir) = out {
        cfg.paths.checkpoints = dir;
    }
    let dir = &cfg.paths.preprocessed;
    let meta = DatasetMeta::read(dir)?;
    let train = load_split(dir, "train")?;
    let validation = load_split(dir, "validation")?;
    train_one(&cfg, &meta, &train, &validation, cfg.variant, cfg.subtask, epochs)?;
    Ok(())
}

fn load_pipeline(cfg: &RunConfig, variant: ModelVariant) -> Result<EventPipeline> {
    let load = |subtask| {
        let dir = cfg.checkpoint_dir(variant, subtask);
        Checkpoint::load(&dir).with_context(|| format!("loading the {subtask} checkpoint; run `train --subtask {subtask}` first"))
    };
    Ok(EventPipeline::new(load(Subtask::Trigger)?, load(Subtask::Role)?)?)
}

pub fn cmd_predict(cfg: &RunConfig, input: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let pipeline = load_pipeline(cfg, cfg.variant)?;
    let input = input.unwrap_or_else(|| split_raw_path(&cfg.paths.preprocessed, "test"));
    let sentences = read_duee_file(&input)?;
    let annotator = cfg.annotator()?.connect()?;
    if let Some(parent) = cfg.paths.cache.parent() {
        fs::create_dir_all(parent)?;
    }
    let cache = AnnotationCache::open(&cfg.paths.cache)?;
    let (annotations, _) = annotate_all(&sentences, annotator.as_ref(), &cache)?;
    cache.flush()?;
    let predictions = pipeline.predict(&sentences, &annotations)?;
    let out = out.unwrap_or_else(|| cfg.paths.reports.join(format!("predictions-{}.json", cfg.variant.slug())));
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    write_duee_file(&out, &predictions)?;
    let events: usize = predictions.iter().map(|s| s.events.len()).sum();
    println!("{} sentences, {events} events -> {}", predictions.len(), out.display());
    Ok(())
}

fn section_line(name: &str, s: &Section) -> String {
    format!(
        "{name}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}\t{}",
        s.precision, s.recall, s.f1, s.counts.tp, s.counts.fp, s.counts.fn_
    )
}

pub fn metrics_table(r: &MetricsReport) -> String {
    [
        "section\tprecision\trecall\tf1\ttp\tfp\tfn".to_string(),
        section_line("trigger", &r.trigger),
        section_line("role", &r.role),
        section_line("overall", &r.overall),
    ]
    .join("\n")
        + "\n"
}

pub fn cmd_evaluate(cfg: &RunConfig, pred: &Path, gold: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let gold = gold.unwrap_or_else(|| split_raw_path(&cfg.paths.preprocessed, "test"));
    let predictions = read_duee_file(pred)?;
    let golds = read_duee_file(&gold)?;
    let report = evaluate(&predictions, &golds)?;
    print!("{}", metrics_table(&report));
    if let Some(out) = out {
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

pub fn cmd_ablate(cfg: &RunConfig, reuse: bool, epochs: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let reports = out.unwrap_or_else(|| cfg.paths.reports.clone());
    let dir = &cfg.paths.preprocessed;
    let meta = DatasetMeta::read(dir)?;
    let train = load_split(dir, "train")?;
    let validation = load_split(dir, "validation")?;
    let test = load_split(dir, "test")?;
    let gold = read_duee_file(&split_raw_path(dir, "test"))?;
    let encoder = cfg.encoder_label();
    let mut entries = Vec::new();
    for variant in ModelVariant::ALL {
        let mut metas: HashMap<Subtask, CheckpointMeta> = HashMap::new();
        for subtask in Subtask::ALL {
            let ckpt_dir = cfg.checkpoint_dir(variant, subtask);
            if reuse {
                if Checkpoint::exists(&ckpt_dir) {
                    metas.insert(subtask, Checkpoint::load(&ckpt_dir)?.meta);
                } else {
                    log::warn!("no checkpoint at {}; row marked absent", ckpt_dir.display());
                }
            } else {
                metas.insert(subtask, train_one(cfg, &meta, &train, &validation, variant, subtask, epochs)?);
            }
        }
        if metas.len() < 2 {
            entries.push(AblationEntry {
                encoder: encoder.clone(),
                variant,
                trigger: None,
                role: None,
            });
            continue;
        }
        let pipeline = load_pipeline(cfg, variant)?;
        let predicted = pipeline.predict_records(&test)?;
        let mut by_id: HashMap<String, RawSentence> = predicted.into_iter().map(|s| (s.id.clone(), s)).collect();
        let predictions: Vec<RawSentence> = gold
            .iter()
            .map(|g| {
                by_id.remove(&g.id).unwrap_or_else(|| RawSentence {
                    id: g.id.clone(),
                    text: g.text.clone(),
                    events: Vec::new(),
                })
            })
            .collect();
        let report = evaluate(&predictions, &gold)?;
        let result = |s: &Section, subtask| SubtaskResult {
            counts: s.counts,
            loss_per_epoch: metas[&subtask].loss_per_epoch(),
        };
        entries.push(AblationEntry {
            encoder: encoder.clone(),
            variant,
            trigger: Some(result(&report.trigger, Subtask::Trigger)),
            role: Some(result(&report.role, Subtask::Role)),
        });
    }
    let grid: Vec<(String, ModelVariant)> = ModelVariant::ALL.iter().map(|v| (encoder.clone(), *v)).collect();
    let report = run_ablation(&grid, &entries);
    fs::create_dir_all(&reports)?;
    fs::write(reports.join("ablation.tsv"), report.to_tsv())?;
    fs::write(reports.join("ablation.jsonl"), report.to_jsonl())?;
    print!("{}", report.to_tsv());
    Ok(())
}

pub fn cmd_fixture(dir: &Path, train: usize, dev: usize, seed: u64) -> Result<()> {
    let train_corpus = fixture::corpus(train, seed);
    let dev_corpus = fixture::corpus_with_prefix(dev, seed.wrapping_add(1), "fx-dev");
    train_corpus.write_dir(dir, &dev_corpus)?;
    let cfg = RunConfig {
        seed,
        annotator: Some(AnnotatorBackend::Fixture {
            path: "annotations.jsonl".into(),
        }),
        ..RunConfig::default()
    };
    fs::write(dir.join("config.toml"), toml::to_string(&cfg)?)?;
    println!("wrote {train} training and {dev} development sentences to {}", dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 7\nvariant = \"dp-gcn\"\n[paths]\ntrain = \"data/t.json\"\n").unwrap();
        let args = Cli::parse_from(["synee", "--config", path.to_str().unwrap(), "--seed", "9", "train"]);
        let cfg = RunConfig::from_args(&args.common).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.variant, ModelVariant::DpGcn);
        assert_eq!(cfg.paths.train, dir.path().join("data/t.json"));
    }

    #[test]
    fn invalid_names_are_usage_errors() {
        let err = Cli::try_parse_from(["synee", "--variant", "lstm", "train"]).unwrap_err();
        assert!(err.to_string().contains("pos-dp-gcn"));
        let err = Cli::try_parse_from(["synee", "--subtask", "argument", "train"]).unwrap_err();
        assert!(err.to_string().contains("trigger, role"));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 1").is_err());
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }
}
