use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::adapters::{default_bottleneck, Scheme};
use crate::data::SynthSpec;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::numcore::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setup {
    A,
    B,
    #[serde(rename = "C_lang")]
    CLang,
    #[serde(rename = "C_stack")]
    CStack,
    D,
}

impl Setup {
    pub fn code(self) -> &'static str {
        match self {
            Setup::A => "A",
            Setup::B => "B",
            Setup::CLang => "C_lang",
            Setup::CStack => "C_stack",
            Setup::D => "D",
        }
    }
}

impl std::str::FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "a" => Ok(Setup::A),
            "b" => Ok(Setup::B),
            "c_lang" => Ok(Setup::CLang),
            "c_stack" => Ok(Setup::CStack),
            "d" => Ok(Setup::D),
            other => Err(Error::Config(format!("unknown setup `{other}`"))),
        }
    }
}

/// Encoder shape; the vocabulary size comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub max_seq_len: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
    /// Upper bound on vocabulary entries, reserved ids included.
    pub max_vocab: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            max_seq_len: 256,
            hidden_dim: 64,
            num_blocks: 4,
            num_heads: 4,
            ffn_dim: 128,
            dropout_rate: 0.1,
            max_vocab: 2000,
        }
    }
}

impl BackboneConfig {
    pub fn encoder(&self, vocab_size: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            max_seq_len: self.max_seq_len,
            hidden_dim: self.hidden_dim,
            num_blocks: self.num_blocks,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
            dropout_rate: self.dropout_rate,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub scheme: Scheme,
    pub task_bottleneck: Option<usize>,
    pub language_bottleneck: Option<usize>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            scheme: Scheme::Houlsby,
            task_bottleneck: None,
            language_bottleneck: None,
        }
    }
}

impl AdapterConfig {
    pub fn task_dim(&self, hidden: usize) -> usize {
        self.task_bottleneck.unwrap_or_else(|| default_bottleneck(hidden))
    }

    pub fn language_dim(&self, hidden: usize) -> usize {
        self.language_bottleneck.unwrap_or_else(|| default_bottleneck(hidden))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
    pub optimizer: AdamConfig,
    pub max_answer_len: usize,
    /// Also score the training split after training.
    pub eval_on_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 8,
            max_steps: None,
            optimizer: AdamConfig::default(),
            max_answer_len: crate::qa::DEFAULT_MAX_ANSWER_LEN,
            eval_on_train: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub max_steps: Option<u64>,
    pub mask_rate: f64,
    pub optimizer: AdamConfig,
    /// Fraction of documents held out to measure MLM loss before and after.
    pub heldout_fraction: f64,
    /// Optimizer steps of whole-backbone MLM on the pooled unlabeled text of
    /// every language before any adapter work. Zero keeps the random init.
    pub backbone_steps: u64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        MlmConfig {
            epochs: 3,
            batch_size: 8,
            max_steps: None,
            mask_rate: 0.15,
            optimizer: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            heldout_fraction: 0.1,
            backbone_steps: 0,
        }
    }
}

/// SQuAD-format files for one language. With two training files the first
/// plays the XQuAD-test role and the second the MLQA-test role.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanguageFiles {
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    pub unlabeled: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synth: Option<SynthSpec>,
    /// Language tag to files.
    pub files: BTreeMap<String, LanguageFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setup: Setup,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    /// Training and evaluation language for Setups A, B and C; defaults to
    /// the first configured language.
    #[serde(default)]
    pub language: Option<String>,
    /// Setup D: language of the task-training data; defaults to the first
    /// configured language.
    #[serde(default)]
    pub source_language: Option<String>,
    #[serde(default)]
    pub target_language: Option<String>,
    /// Setup D: extra language adapters swapped in on the same trained stack
    /// and scored on the target test set.
    #[serde(default)]
    pub mismatched_languages: Vec<String>,
    /// Pre-trained language adapter files by language tag. Languages without
    /// a file get an adapter trained in-run on their unlabeled text.
    #[serde(default)]
    pub language_adapters: BTreeMap<String, PathBuf>,
    /// Saved backbone; its vocabulary is read from `<path>.vocab.txt`.
    #[serde(default)]
    pub backbone_path: Option<PathBuf>,
    #[serde(default)]
    pub backbone: BackboneConfig,
    #[serde(default)]
    pub adapters: AdapterConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub mlm: MlmConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Minimal config over a synthetic corpus.
    pub fn synthetic(setup: Setup, spec: SynthSpec, seed: u64) -> Self {
        ExperimentConfig {
            setup,
            seed,
            data: DataConfig {
                synth: Some(spec),
                files: BTreeMap::new(),
            },
            language: None,
            source_language: None,
            target_language: None,
            mismatched_languages: Vec::new(),
            language_adapters: BTreeMap::new(),
            backbone_path: None,
            backbone: BackboneConfig::default(),
            adapters: AdapterConfig::default(),
            training: TrainConfig::default(),
            mlm: MlmConfig::default(),
            output_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Language tags in configuration order: synthetic first, then files.
    pub fn language_tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = self.data.synth.iter().flat_map(|s| s.languages.clone()).collect();
        for t in self.data.files.keys() {
            if !tags.contains(t) {
                tags.push(t.clone());
            }
        }
        tags
    }

    pub fn validate(&self) -> Result<()> {
        let tags = self.language_tags();
        if tags.is_empty() {
            return Err(Error::Config("no data: give a synthetic spec or language files".into()));
        }
        let known = |t: &Option<String>, what: &str| -> Result<()> {
            match t {
                Some(t) if !tags.contains(t) => Err(Error::Config(format!("{what} `{t}` has no data"))),
                _ => Ok(()),
            }
        };
        known(&self.language, "language")?;
        known(&self.source_language, "source_language")?;
        known(&self.target_language, "target_language")?;
        for t in &self.mismatched_languages {
            known(&Some(t.clone()), "mismatched language")?;
        }
        if self.setup == Setup::D && self.target_language.is_none() {
            return Err(Error::Config("setup D needs target_language".into()));
        }
        if self.training.batch_size == 0 || self.mlm.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.mlm.heldout_fraction) {
            return Err(Error::Config("heldout_fraction must lie in [0, 1)".into()));
        }
        if let Some(d) = self.adapters.task_bottleneck.or(self.adapters.language_bottleneck) {
            if d == 0 || d >= self.backbone.hidden_dim {
                return Err(Error::Config(format!(
                    "bottleneck {d} must lie in 1..{}",
                    self.backbone.hidden_dim
                )));
            }
        }
        self.backbone.encoder(8, 0).validate()
    }

    pub fn task_language(&self) -> String {
        self.language.clone().unwrap_or_else(|| self.language_tags()[0].clone())
    }

    pub fn source(&self) -> String {
        self.source_language.clone().unwrap_or_else(|| self.language_tags()[0].clone())
    }
}
