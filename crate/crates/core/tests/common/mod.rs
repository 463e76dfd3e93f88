#![allow(dead_code)]

use adaptqa::adapters::Scheme;
use adaptqa::data::SynthSpec;
use adaptqa::experiment::{ExperimentConfig, Setup};

/// Two-block, 32-wide encoder over a synthetic corpus.
pub fn desk_config(setup: Setup, languages: &[&str], n_train: usize, n_test: usize, seed: u64) -> ExperimentConfig {
    let spec = SynthSpec::new(languages, 60, n_train, n_test, seed);
    let mut c = ExperimentConfig::synthetic(setup, spec, seed);
    c.backbone.hidden_dim = 32;
    c.backbone.ffn_dim = 64;
    c.backbone.num_blocks = 2;
    c.backbone.num_heads = 2;
    c.backbone.max_seq_len = 64;
    c.backbone.dropout_rate = 0.0;
    c.adapters.scheme = Scheme::Pfeiffer;
    c.training.batch_size = 4;
    c.mlm.epochs = 1;
    c
}

/// Source `en`, target `hi`, with `de` as the mismatched third language.
pub fn transfer_config(seed: u64) -> ExperimentConfig {
    let mut c = desk_config(Setup::D, &["en", "hi", "de"], 200, 40, seed);
    c.data.synth.as_mut().unwrap().n_unlabeled = 200;
    c.target_language = Some("hi".into());
    c.mismatched_languages = vec!["de".into()];
    c.training.optimizer.lr = 3e-3;
    c.training.batch_size = 8;
    c.training.epochs = 30;
    c.mlm.epochs = 5;
    c.mlm.backbone_steps = 1000;
    c
}
