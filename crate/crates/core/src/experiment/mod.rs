//! End-to-end runs for the four experimental setups.

pub mod config;
pub mod drivers;
pub mod report;
pub mod train;

pub use config::{AdapterConfig, BackboneConfig, DataConfig, ExperimentConfig, LanguageFiles, MlmConfig, Setup, TrainConfig};
pub use drivers::{
    load_corpus, mlm_train_language_adapter, prepare, run, run_setup_a, run_setup_b, run_setup_c, run_setup_d,
    sha256_hex, transfer, vocab_path, Corpus, LabeledReport, RunManifest, SwapRecord, TransferOutcome, Workbench,
};
pub use report::{render_report, report_rows};
pub use train::{evaluate, featurize_all, train_mlm, train_qa, FreezeCheck, FreezeGuard, MlmLog, TrainLog};
