use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Setup};
use super::train::{
    encode_documents, evaluate, featurize_all, train_mlm, train_qa, FreezeCheck, FreezeGuard, MlmLog,
};
use crate::adapters::{
    apply_freeze_policy, attach, extract, load_adapter_for, swap_language_adapter, AdapterKind, AdapterSet,
    AdapterStackSpec, FreezeSetup, PlacementConfig,
};
use crate::data::split::build_split_named;
use crate::data::synth::read_unlabeled;
use crate::data::{check_reference_counts, synth_corpus, CountCheck, DatasetSplit, QAExample, Vocab};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::numcore::{container, Adam, Rng};
use crate::qa::write_predictions;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct LanguageData {
    pub tag: String,
    pub language: String,
    pub split: DatasetSplit,
    pub unlabeled: Vec<String>,
    pub reference: Option<CountCheck>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub languages: Vec<LanguageData>,
    pub input_hashes: BTreeMap<String, String>,
}

impl Corpus {
    pub fn get(&self, tag: &str) -> Result<&LanguageData> {
        self.languages
            .iter()
            .find(|l| l.tag == tag)
            .ok_or_else(|| Error::Config(format!("no data for language `{tag}`")))
    }
}

fn read_hashed(path: &Path, hashes: &mut BTreeMap<String, String>) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    hashes.insert(path.display().to_string(), sha256_hex(&bytes));
    Ok(bytes)
}

/// Resolves every configured language to examples and unlabeled text.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let mut languages = Vec::new();
    let mut hashes = BTreeMap::new();
    if let Some(spec) = &cfg.data.synth {
        let corpus = synth_corpus(spec)?;
        for l in corpus.languages {
            let train_json = crate::data::serialize_squad(&l.train, &l.language)?;
            let test_json = crate::data::serialize_squad(&l.test, &l.language)?;
            hashes.insert(format!("synth:{}/train.json", l.tag), sha256_hex(train_json.as_bytes()));
            hashes.insert(format!("synth:{}/test.json", l.tag), sha256_hex(test_json.as_bytes()));
            hashes.insert(
                format!("synth:{}/unlabeled.txt", l.tag),
                sha256_hex(l.unlabeled.join("\n").as_bytes()),
            );
            let split = build_split_named(("synth_train", l.train), ("none", Vec::new()), ("synth_test", l.test))?;
            languages.push(LanguageData {
                tag: l.tag,
                language: l.language,
                split,
                unlabeled: l.unlabeled,
                reference: None,
            });
        }
    }
    for (tag, files) in &cfg.data.files {
        if languages.iter().any(|l: &LanguageData| &l.tag == tag) {
            return Err(Error::Config(format!("language `{tag}` given twice")));
        }
        let mut load = |paths: &[PathBuf]| -> Result<Vec<(String, Vec<QAExample>)>> {
            paths
                .iter()
                .map(|p| {
                    let bytes = read_hashed(p, &mut hashes)?;
                    let ex = crate::data::parse_squad_json(&bytes, tag).map_err(|e| match e {
                        Error::Parse { path, message } => Error::Parse {
                            path: format!("{}: {path}", p.display()),
                            message,
                        },
                        other => other,
                    })?;
                    Ok((p.display().to_string(), ex))
                })
                .collect()
        };
        let mut train = load(&files.train)?.into_iter();
        let mut test = load(&files.test)?;
        let first = train.next().unwrap_or_else(|| ("none".into(), Vec::new()));
        let rest: Vec<(String, Vec<QAExample>)> = train.collect();
        let second = (
            rest.iter().map(|r| r.0.as_str()).collect::<Vec<_>>().join("+"),
            rest.into_iter().flat_map(|r| r.1).collect(),
        );
        let dev = (
            test.iter().map(|r| r.0.as_str()).collect::<Vec<_>>().join("+"),
            test.drain(..).flat_map(|r| r.1).collect(),
        );
        let split = build_split_named(
            (first.0.as_str(), first.1),
            (second.0.as_str(), second.1),
            (dev.0.as_str(), dev.1),
        )?;
        let reference = check_reference_counts(&split);
        let unlabeled = match &files.unlabeled {
            Some(p) => {
                read_hashed(p, &mut hashes)?;
                read_unlabeled(p)?
            }
            None => Vec::new(),
        };
        languages.push(LanguageData {
            tag: tag.clone(),
            language: tag.clone(),
            split,
            unlabeled,
            reference,
        });
    }
    if languages.is_empty() {
        return Err(Error::Config("no data configured".into()));
    }
    Ok(Corpus {
        languages,
        input_hashes: hashes,
    })
}

pub fn vocab_path(backbone: &Path) -> PathBuf {
    let mut s = backbone.as_os_str().to_owned();
    s.push(".vocab.txt");
    s.into()
}

/// Shared multilingual vocabulary over training and unlabeled text.
pub fn build_vocab(corpus: &Corpus, max_size: usize) -> Result<Vocab> {
    let mut texts: Vec<&str> = Vec::new();
    for l in &corpus.languages {
        for ex in &l.split.train {
            texts.push(&ex.question);
            texts.push(&ex.context);
        }
        texts.extend(l.unlabeled.iter().map(String::as_str));
    }
    Vocab::build(texts, max_size)
}

/// Corpus, vocabulary and backbone shared by every driver.
#[derive(Debug, Clone)]
pub struct Workbench {
    pub corpus: Corpus,
    pub vocab: Vocab,
    pub backbone: EncoderModel,
    pub backbone_source: String,
    pub mlm_logs: BTreeMap<String, MlmLog>,
}

fn mlm_docs(wb_vocab: &Vocab, texts: &[String], max_len: usize) -> Vec<Vec<usize>> {
    encode_documents(texts, wb_vocab, max_len)
}

/// Loads data and builds or loads the backbone; optionally runs whole-backbone
/// MLM on the pooled unlabeled text.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Workbench> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let mut mlm_logs = BTreeMap::new();
    let (vocab, backbone, source) = match &cfg.backbone_path {
        Some(p) => {
            let vocab = Vocab::load(&vocab_path(p))?;
            let model = EncoderModel::load(p)?;
            if model.config().vocab_size != vocab.len() {
                return Err(Error::Config(format!(
                    "backbone expects {} symbols, vocabulary file has {}",
                    model.config().vocab_size,
                    vocab.len()
                )));
            }
            (vocab, model.backbone_only(), format!("file:{}", p.display()))
        }
        None => {
            let vocab = build_vocab(&corpus, cfg.backbone.max_vocab)?;
            let mut model = EncoderModel::new(cfg.backbone.encoder(vocab.len(), cfg.seed))?;
            let mut source = "fresh".to_string();
            if cfg.mlm.backbone_steps > 0 {
                let texts: Vec<String> = corpus.languages.iter().flat_map(|l| l.unlabeled.clone()).collect();
                let docs = mlm_docs(&vocab, &texts, cfg.backbone.max_seq_len);
                model.params.set_trainable_where(EncoderModel::is_backbone_param);
                let log = train_mlm(&mut model, &docs, &cfg.mlm, Some(cfg.mlm.backbone_steps), cfg.seed ^ 0xb0b0)?;
                model.params.freeze_all();
                mlm_logs.insert("backbone".to_string(), log);
                source = format!("mlm-pretrained:{}", cfg.mlm.backbone_steps);
            }
            (vocab, model, source)
        }
    };
    Ok(Workbench {
        corpus,
        vocab,
        backbone,
        backbone_source: source,
        mlm_logs,
    })
}

pub fn language_adapter_name(tag: &str) -> String {
    format!("lang-{tag}")
}

/// Trains a fresh language adapter on `texts` with the backbone frozen.
pub fn mlm_train_language_adapter(
    backbone: &EncoderModel,
    vocab: &Vocab,
    texts: &[String],
    tag: &str,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(AdapterSet, MlmLog)> {
    let docs = encode_documents(texts, vocab, backbone.config().max_seq_len);
    if docs.is_empty() {
        return Err(Error::Config(format!("no unlabeled text for language `{tag}`")));
    }
    let mut model = backbone.backbone_only();
    let h = model.hidden_dim();
    let mut set = AdapterSet::new_language(
        &language_adapter_name(tag),
        tag,
        h,
        cfg.adapters.language_dim(h),
        model.config().num_blocks,
        cfg.adapters.scheme,
        seed,
    )?;
    set.manifest.source_language = Some(tag.to_string());
    let prefix = format!("adapter.{}.", set.name());
    attach(&mut model, AdapterStackSpec::language_only(set), PlacementConfig::new(cfg.adapters.scheme))?;
    model.params.set_trainable_where(|n| n.starts_with(&prefix));
    let guard = FreezeGuard::new(&model.params);
    let log = train_mlm(&mut model, &docs, &cfg.mlm, None, seed)?;
    guard.verify(&model.params)?;
    let mut out = extract(&model, AdapterKind::Language).ok_or_else(|| Error::Invariant("language adapter lost".into()))?;
    out.manifest.trained_on = format!("mlm:{} documents", log.documents);
    Ok((out, log))
}

fn resolve_language_adapter(wb: &mut Workbench, cfg: &ExperimentConfig, tag: &str, salt: u64) -> Result<(AdapterSet, String)> {
    if let Some(p) = cfg.language_adapters.get(tag) {
        let set = load_adapter_for(&wb.backbone, p, AdapterKind::Language)?;
        return Ok((set, format!("file:{}", p.display())));
    }
    let texts = wb.corpus.get(tag)?.unlabeled.clone();
    if texts.is_empty() {
        return Err(Error::Config(format!(
            "language `{tag}` needs an adapter file or unlabeled text to train one"
        )));
    }
    let (set, log) = mlm_train_language_adapter(&wb.backbone, &wb.vocab, &texts, tag, cfg, cfg.seed.wrapping_add(salt))?;
    wb.mlm_logs.insert(format!("language:{tag}"), log);
    Ok((set, "mlm-in-run".into()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapRecord {
    pub source_adapter: String,
    pub target_adapter: String,
    pub task_hash_before: String,
    pub task_hash_after: String,
    pub optimizer_steps_at_swap: u64,
    pub updates_after_swap: u64,
    pub params_unchanged_during_eval: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub report: EvalReport,
}

/// Everything needed to reproduce and audit one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub setup: Setup,
    pub row_label: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub input_hashes: BTreeMap<String, String>,
    pub adapter_hashes: BTreeMap<String, String>,
    pub adapter_sources: BTreeMap<String, String>,
    pub backbone_source: String,
    pub occupied_slots: Vec<String>,
    pub total_params: usize,
    pub backbone_params: usize,
    pub trainable_params: usize,
    pub trainable_fraction_of_backbone: f64,
    pub loss_curve: Vec<f64>,
    pub optimizer_steps: u64,
    pub skipped_unalignable: usize,
    pub mlm_logs: BTreeMap<String, MlmLog>,
    pub freeze_check: FreezeCheck,
    pub swap: Option<SwapRecord>,
    pub reference_counts: Vec<CountCheck>,
    pub report: EvalReport,
    pub train_report: Option<EvalReport>,
    pub extra_reports: Vec<LabeledReport>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Report row label for a setup.
pub fn row_label(setup: Setup, cfg: &ExperimentConfig) -> String {
    match setup {
        Setup::A => "A: full fine-tuning".into(),
        Setup::B => format!("B: task adapter ({})", cfg.adapters.scheme.label()),
        Setup::CLang => "C: language adapter".into(),
        Setup::CStack => "C: task + language adapter".into(),
        Setup::D => "D: zero-shot adapter swap".into(),
    }
}

fn with_provenance(mut r: EvalReport, cfg: &ExperimentConfig, model: &EncoderModel) -> EvalReport {
    r.provenance.insert("setup".into(), cfg.setup.code().into());
    r.provenance.insert("seed".into(), cfg.seed.to_string());
    r.provenance.insert("scheme".into(), cfg.adapters.scheme.label().into());
    for (kind, m) in [("language_adapter", model.language_adapter()), ("task_adapter", model.task_adapter())] {
        if let Some(m) = m {
            r.provenance.insert(kind.into(), m.name.clone());
        }
    }
    r
}

fn adapter_hashes(model: &EncoderModel) -> BTreeMap<String, String> {
    [AdapterKind::Language, AdapterKind::Task]
        .into_iter()
        .filter_map(|k| extract(model, k))
        .map(|s| (s.name().to_string(), sha256_hex(&s.to_bytes())))
        .collect()
}

struct Trained {
    model: EncoderModel,
    adam: Adam,
    log: super::train::TrainLog,
    freeze: FreezeCheck,
    trainable: usize,
}

fn fine_tune(mut model: EncoderModel, policy: FreezeSetup, wb: &Workbench, cfg: &ExperimentConfig, tag: &str) -> Result<Trained> {
    apply_freeze_policy(&mut model, policy)?;
    let trainable = model.params.count_values(|n| model.params.is_trainable(n));
    let features = featurize_all(&wb.corpus.get(tag)?.split.train, &wb.vocab, model.config().max_seq_len)?;
    let guard = FreezeGuard::new(&model.params);
    let mut adam = Adam::new(cfg.training.optimizer);
    let mut rng = Rng::new(cfg.seed).fork(0x7a5c);
    let log = train_qa(&mut model, &features, &cfg.training, &mut adam, &mut rng)?;
    let freeze = guard.verify(&model.params)?;
    Ok(Trained {
        model,
        adam,
        log,
        freeze,
        trainable,
    })
}

fn task_adapter(cfg: &ExperimentConfig, model: &EncoderModel, tag: &str) -> Result<AdapterSet> {
    let h = model.hidden_dim();
    let mut set = AdapterSet::new_task(
        &format!("task-qa-{tag}"),
        h,
        cfg.adapters.task_dim(h),
        model.config().num_blocks,
        cfg.adapters.scheme,
        cfg.seed.wrapping_add(0x7a5),
    )?;
    set.manifest.trained_on = format!("qa:{tag}");
    Ok(set)
}

fn save_outputs(
    cfg: &ExperimentConfig,
    wb: &Workbench,
    model: &EncoderModel,
    extra_adapters: &[&AdapterSet],
    preds: &crate::qa::Predictions,
    manifest: &RunManifest,
) -> Result<()> {
    let Some(dir) = &cfg.output_dir else {
        return Ok(());
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let model_path = dir.join("model.aqpc");
    model.save(&model_path)?;
    wb.vocab.save(&vocab_path(&model_path))?;
    let backbone_path = dir.join("backbone.aqpc");
    model.backbone_only().save(&backbone_path)?;
    wb.vocab.save(&vocab_path(&backbone_path))?;
    for kind in [AdapterKind::Language, AdapterKind::Task] {
        if let Some(set) = extract(model, kind) {
            set.save(&dir.join(format!("{}.aqpc", set.name())))?;
        }
    }
    for set in extra_adapters {
        set.save(&dir.join(format!("{}.aqpc", set.name())))?;
    }
    write_predictions(&dir.join("predictions.json"), preds)?;
    let rpath = dir.join("report.json");
    std::fs::write(&rpath, manifest.report.to_json()?).map_err(|e| Error::io(&rpath, e))?;
    let mpath = dir.join("run_manifest.json");
    std::fs::write(&mpath, manifest.to_json()?).map_err(|e| Error::io(&mpath, e))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cfg: &ExperimentConfig,
    wb: &Workbench,
    trained: &Trained,
    eval_model: &EncoderModel,
    tag: &str,
    sources: BTreeMap<String, String>,
    swap: Option<SwapRecord>,
    extra: Vec<LabeledReport>,
    extra_adapters: &[&AdapterSet],
    started: Instant,
) -> Result<RunManifest> {
    let data = wb.corpus.get(tag)?;
    let (report, preds) = evaluate(eval_model, &data.split.test, &wb.vocab, cfg.training.max_answer_len, &data.language)?;
    let report = with_provenance(report, cfg, eval_model);
    let train_report = if cfg.training.eval_on_train {
        let src = wb.corpus.get(&match cfg.setup {
            Setup::D => cfg.source(),
            _ => tag.to_string(),
        })?;
        let (r, _) = evaluate(&trained.model, &src.split.train, &wb.vocab, cfg.training.max_answer_len, &src.language)?;
        Some(with_provenance(r, cfg, &trained.model))
    } else {
        None
    };
    let backbone_params = eval_model.backbone_param_count();
    let manifest = RunManifest {
        setup: cfg.setup,
        row_label: row_label(cfg.setup, cfg),
        seed: cfg.seed,
        config: cfg.clone(),
        input_hashes: wb.corpus.input_hashes.clone(),
        adapter_hashes: adapter_hashes(eval_model),
        adapter_sources: sources,
        backbone_source: wb.backbone_source.clone(),
        occupied_slots: eval_model.occupied_slots(),
        total_params: eval_model.params.count_values(|_| true),
        backbone_params,
        trainable_params: trained.trainable,
        trainable_fraction_of_backbone: trained.trainable as f64 / backbone_params as f64,
        loss_curve: trained.log.epoch_losses.clone(),
        optimizer_steps: trained.adam.steps(),
        skipped_unalignable: trained.log.skipped_unalignable,
        mlm_logs: wb.mlm_logs.clone(),
        freeze_check: trained.freeze.clone(),
        swap,
        reference_counts: wb.corpus.languages.iter().filter_map(|l| l.reference.clone()).collect(),
        report,
        train_report,
        extra_reports: extra,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    save_outputs(cfg, wb, eval_model, extra_adapters, &preds, &manifest)?;
    Ok(manifest)
}

pub fn run_setup_a(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let wb = prepare(cfg)?;
    let tag = cfg.task_language();
    let trained = fine_tune(wb.backbone.clone(), FreezeSetup::A, &wb, cfg, &tag)?;
    finish(cfg, &wb, &trained, &trained.model, &tag, BTreeMap::new(), None, Vec::new(), &[], started)
}

pub fn run_setup_b(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let wb = prepare(cfg)?;
    let tag = cfg.task_language();
    let mut model = wb.backbone.clone();
    let task = task_adapter(cfg, &model, &tag)?;
    attach(&mut model, AdapterStackSpec::task_only(task), PlacementConfig::new(cfg.adapters.scheme))?;
    let trained = fine_tune(model, FreezeSetup::B, &wb, cfg, &tag)?;
    finish(cfg, &wb, &trained, &trained.model, &tag, BTreeMap::new(), None, Vec::new(), &[], started)
}

/// `C_lang` trains the language adapter and head on QA; `C_stack` trains a
/// task adapter on top of the frozen language adapter.
pub fn run_setup_c(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let mut wb = prepare(cfg)?;
    let tag = cfg.task_language();
    let (lang, origin) = resolve_language_adapter(&mut wb, cfg, &tag, 0x1a)?;
    let mut sources = BTreeMap::from([(lang.name().to_string(), origin)]);
    let mut model = wb.backbone.clone();
    let placement = PlacementConfig::new(cfg.adapters.scheme);
    let policy = match cfg.setup {
        Setup::CLang => {
            attach(&mut model, AdapterStackSpec::language_only(lang), placement)?;
            FreezeSetup::CLang
        }
        Setup::CStack => {
            let task = task_adapter(cfg, &model, &tag)?;
            sources.insert(task.name().to_string(), "fresh".into());
            attach(&mut model, AdapterStackSpec::stacked(lang, task), placement)?;
            FreezeSetup::CStack
        }
        other => return Err(Error::Config(format!("setup {} is not a C variant", other.code()))),
    };
    let trained = fine_tune(model, policy, &wb, cfg, &tag)?;
    finish(cfg, &wb, &trained, &trained.model, &tag, sources, None, Vec::new(), &[], started)
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub report: EvalReport,
    pub predictions: crate::qa::Predictions,
    pub swap: SwapRecord,
}

/// Swaps in `adapter` and scores `test` with no parameter updates.
pub fn transfer(
    model: &mut EncoderModel,
    adapter: AdapterSet,
    test: &[QAExample],
    vocab: &Vocab,
    max_answer_len: usize,
    language: &str,
    optimizer_steps_so_far: u64,
) -> Result<TransferOutcome> {
    let task_before = extract(model, AdapterKind::Task)
        .ok_or_else(|| Error::contract("transfer needs a trained task adapter"))?;
    let target_name = adapter.name().to_string();
    let old = swap_language_adapter(model, adapter)?;
    apply_freeze_policy(model, FreezeSetup::DTransfer)?;
    let task_after = extract(model, AdapterKind::Task).ok_or_else(|| Error::Invariant("task adapter lost in swap".into()))?;
    let snapshot = container::encode(&model.params);
    // No optimizer exists past this point; evaluation is forward-only.
    let (report, predictions) = evaluate(model, test, vocab, max_answer_len, language)?;
    let unchanged = container::encode(&model.params) == snapshot;
    let swap = SwapRecord {
        source_adapter: old.name().to_string(),
        target_adapter: target_name,
        task_hash_before: sha256_hex(&task_before.to_bytes()),
        task_hash_after: sha256_hex(&task_after.to_bytes()),
        optimizer_steps_at_swap: optimizer_steps_so_far,
        updates_after_swap: 0,
        params_unchanged_during_eval: unchanged,
    };
    if swap.task_hash_before != swap.task_hash_after || !unchanged {
        return Err(Error::Invariant(format!(
            "zero-shot transfer modified parameters (task hash {} -> {}, eval unchanged: {unchanged})",
            swap.task_hash_before, swap.task_hash_after
        )));
    }
    Ok(TransferOutcome {
        report,
        predictions,
        swap,
    })
}

/// Task adapter trained on the source language over its language adapter,
/// then evaluated on the target language after swapping in the target's
/// language adapter.
pub fn run_setup_d(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let started = Instant::now();
    let mut wb = prepare(cfg)?;
    let source = cfg.source();
    let target = cfg
        .target_language
        .clone()
        .ok_or_else(|| Error::Config("setup D needs target_language".into()))?;
    let (src_adapter, src_origin) = resolve_language_adapter(&mut wb, cfg, &source, 0x1a)?;
    let (tgt_adapter, tgt_origin) = resolve_language_adapter(&mut wb, cfg, &target, 0x2b)?;
    let mut sources = BTreeMap::from([
        (src_adapter.name().to_string(), src_origin),
        (tgt_adapter.name().to_string(), tgt_origin),
    ]);
    let mut mismatched = Vec::new();
    for (i, tag) in cfg.mismatched_languages.iter().enumerate() {
        let (set, origin) = resolve_language_adapter(&mut wb, cfg, tag, 0x3c + i as u64)?;
        sources.insert(set.name().to_string(), origin);
        mismatched.push((tag.clone(), set));
    }

    let mut model = wb.backbone.clone();
    let task = task_adapter(cfg, &model, &source)?;
    attach(
        &mut model,
        AdapterStackSpec::stacked(src_adapter, task),
        PlacementConfig::new(cfg.adapters.scheme),
    )?;
    let trained = fine_tune(model, FreezeSetup::DTrain, &wb, cfg, &source)?;
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("stack.aqpc");
        trained.model.save(&p)?;
        wb.vocab.save(&vocab_path(&p))?;
    }

    let steps = trained.adam.steps();
    let tgt_data = wb.corpus.get(&target)?.clone();
    let mut extra = Vec::new();
    for (tag, set) in &mismatched {
        let mut m = trained.model.clone();
        let out = transfer(&mut m, set.clone(), &tgt_data.split.test, &wb.vocab, cfg.training.max_answer_len, &tgt_data.language, steps)?;
        extra.push(LabeledReport {
            label: format!("mismatched:{tag}"),
            report: with_provenance(out.report, cfg, &m),
        });
    }
    let mut eval_model = trained.model.clone();
    let out = transfer(
        &mut eval_model,
        tgt_adapter,
        &tgt_data.split.test,
        &wb.vocab,
        cfg.training.max_answer_len,
        &tgt_data.language,
        steps,
    )?;
    let mut swap = out.swap;
    swap.updates_after_swap = trained.adam.steps() - steps;
    let src_lang = extract(&trained.model, AdapterKind::Language);
    let extras: Vec<&AdapterSet> = src_lang.iter().chain(mismatched.iter().map(|m| &m.1)).collect();
    finish(cfg, &wb, &trained, &eval_model, &target, sources, Some(swap), extra, &extras, started)
}

/// Dispatches on `cfg.setup`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunManifest> {
    match cfg.setup {
        Setup::A => run_setup_a(cfg),
        Setup::B => run_setup_b(cfg),
        Setup::CLang | Setup::CStack => run_setup_c(cfg),
        Setup::D => run_setup_d(cfg),
    }
}
