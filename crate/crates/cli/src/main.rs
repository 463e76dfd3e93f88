use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptqa::adapters::{load_adapter_for, AdapterKind};
use adaptqa::data::{read_squad_file, synth_corpus, SynthSpec, Vocab};
use adaptqa::encoder::EncoderModel;
use adaptqa::experiment::{
    mlm_train_language_adapter, prepare, render_report, run, transfer, vocab_path, ExperimentConfig, RunManifest, Setup,
};
use adaptqa::qa::write_predictions;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adaptqa", version, about = "Adapter-based extractive QA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multilingual corpus to disk.
    Synth(SynthArgs),
    /// Train a language adapter (or pre-train the backbone) with masked language modelling.
    TrainMlm(TrainMlmArgs),
    /// Run one experimental setup end to end.
    Run(RunArgs),
    /// Evaluate a trained stack on a target language after swapping its language adapter.
    Transfer(TransferArgs),
    /// Render result tables from run manifests.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Comma-separated language tags; the first uses Latin letters.
    #[arg(long, value_delimiter = ',', default_value = "en,hi,de")]
    languages: Vec<String>,
    #[arg(long, default_value_t = 60)]
    vocab_size: usize,
    #[arg(long, default_value_t = 200)]
    n_train: usize,
    #[arg(long, default_value_t = 40)]
    n_test: usize,
    #[arg(long, default_value_t = 200)]
    n_unlabeled: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(&self.config).with_context(|| format!("reading {}", self.config.display()))?;
        let mut cfg = ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainMlmArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Language whose unlabeled text trains the adapter.
    #[arg(long, required_unless_present = "backbone")]
    language: Option<String>,
    /// Pre-train the whole backbone on all unlabeled text instead.
    #[arg(long, conflicts_with = "language")]
    backbone: bool,
    /// Backbone optimizer steps (overrides the config).
    #[arg(long)]
    steps: Option<u64>,
    /// Output file for the adapter or backbone.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// A, B, C-lang, C-stack or D (overrides the config).
    #[arg(long)]
    setup: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TransferArgs {
    /// Trained stack written by a Setup D run (`stack.aqpc`).
    #[arg(long)]
    stack: PathBuf,
    /// Target-language adapter to swap in.
    #[arg(long)]
    adapter: PathBuf,
    /// SQuAD-format test file of the target language.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    language: String,
    #[arg(long, default_value_t = adaptqa::qa::DEFAULT_MAX_ANSWER_LEN)]
    max_answer_len: usize,
    /// Directory for report.json and predictions.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// `run_manifest.json` files or directories containing one.
    #[arg(required = true)]
    manifests: Vec<PathBuf>,
}

fn synth(a: SynthArgs) -> Result<()> {
    let tags: Vec<&str> = a.languages.iter().map(String::as_str).collect();
    let mut spec = SynthSpec::new(&tags, a.vocab_size, a.n_train, a.n_test, a.seed);
    spec.n_unlabeled = a.n_unlabeled;
    let corpus = synth_corpus(&spec)?;
    corpus.write_to_dir(&a.out)?;
    println!("wrote {} languages to {}", corpus.languages.len(), a.out.display());
    Ok(())
}

fn train_mlm(a: TrainMlmArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if a.backbone {
        if let Some(s) = a.steps {
            cfg.mlm.backbone_steps = s;
        }
        if cfg.mlm.backbone_steps == 0 {
            bail!("backbone pre-training needs --steps or mlm.backbone_steps > 0");
        }
        cfg.backbone_path = None;
        let wb = prepare(&cfg)?;
        wb.backbone.save(&a.out)?;
        wb.vocab.save(&vocab_path(&a.out))?;
        if let Some(log) = wb.mlm_logs.get("backbone") {
            println!("{}", serde_json::to_string_pretty(log)?);
        }
        println!("backbone written to {}", a.out.display());
        return Ok(());
    }
    let tag = a.language.expect("clap enforces --language");
    cfg.mlm.backbone_steps = a.steps.unwrap_or(cfg.mlm.backbone_steps);
    let wb = prepare(&cfg)?;
    let texts = &wb.corpus.get(&tag)?.unlabeled;
    let (set, log) = mlm_train_language_adapter(&wb.backbone, &wb.vocab, texts, &tag, &cfg, cfg.seed)?;
    set.save(&a.out)?;
    if cfg.backbone_path.is_none() {
        let bb = backbone_sibling(&a.out);
        wb.backbone.save(&bb)?;
        wb.vocab.save(&vocab_path(&bb))?;
        println!("backbone used for training written to {}", bb.display());
    }
    println!("{}", serde_json::to_string_pretty(&log)?);
    println!("adapter written to {}", a.out.display());
    Ok(())
}

fn backbone_sibling(adapter: &Path) -> PathBuf {
    let mut s = adapter.as_os_str().to_owned();
    s.push(".backbone.aqpc");
    s.into()
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(s) = &a.setup {
        cfg.setup = s.parse::<Setup>()?;
    }
    if a.target.is_some() {
        cfg.target_language = a.target;
    }
    if a.output_dir.is_some() {
        cfg.output_dir = a.output_dir;
    }
    let manifest = run(&cfg)?;
    print!("{}", render_report(std::slice::from_ref(&manifest)));
    if let Some(dir) = &cfg.output_dir {
        println!("outputs written to {}", dir.display());
    }
    Ok(())
}

fn transfer_cmd(a: TransferArgs) -> Result<()> {
    let vocab = Vocab::load(&vocab_path(&a.stack))?;
    let mut model = EncoderModel::load(&a.stack)?;
    let adapter = load_adapter_for(&model, &a.adapter, AdapterKind::Language)?;
    let test = read_squad_file(&a.test, &a.language)?;
    let out = transfer(&mut model, adapter, &test, &vocab, a.max_answer_len, &a.language, 0)?;
    println!("{}", serde_json::to_string_pretty(&out.swap)?);
    println!("F1 {:.2}  EM {:.2}  Jaccard {:.2}  WER {:.2}", out.report.f1, out.report.em, out.report.jaccard, out.report.wer);
    if let Some(dir) = a.out {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("report.json"), out.report.to_json()?)?;
        write_predictions(&dir.join("predictions.json"), &out.predictions)?;
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    let manifests = a
        .manifests
        .iter()
        .map(|p| {
            let p = if p.is_dir() { p.join("run_manifest.json") } else { p.clone() };
            RunManifest::load(&p).with_context(|| format!("loading {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", render_report(&manifests));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::TrainMlm(a) => train_mlm(a),
        Command::Run(a) => run_cmd(a),
        Command::Transfer(a) => transfer_cmd(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
