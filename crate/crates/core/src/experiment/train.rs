use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{MlmConfig, TrainConfig};
use crate::data::{featurize, mlm_mask, tokenize, QAExample, TokenizedFeature, Vocab};
use crate::encoder::{EncoderModel, ForwardCtx};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, score_example, EvalReport};
use crate::numcore::{Adam, Graph, ParamStore, Rng};
use crate::qa::{head_logits_graph, predict, span_loss_graph, Predictions};

/// Hashes of every frozen entry, taken before training.
#[derive(Debug, Clone)]
pub struct FreezeGuard {
    before: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeCheck {
    pub checked_entries: usize,
    pub violations: Vec<String>,
}

impl FreezeCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl FreezeGuard {
    pub fn new(store: &ParamStore) -> Self {
        FreezeGuard {
            before: store.frozen_hashes(),
        }
    }

    pub fn check(&self, store: &ParamStore) -> FreezeCheck {
        let after = store.hashes_where(|n| self.before.contains_key(n));
        let violations = self
            .before
            .iter()
            .filter(|(n, h)| after.get(n.as_str()) != Some(h))
            .map(|(n, _)| n.clone())
            .collect();
        FreezeCheck {
            checked_entries: self.before.len(),
            violations,
        }
    }

    /// As [`check`](Self::check), turning violations into an error.
    pub fn verify(&self, store: &ParamStore) -> Result<FreezeCheck> {
        let c = self.check(store);
        if c.passed() {
            Ok(c)
        } else {
            Err(Error::Invariant(format!("frozen entries changed: {}", c.violations.join(", "))))
        }
    }
}

/// Trainable entries the loss never reached get a zero gradient so that the
/// optimizer sees a complete set.
fn fill_missing_grads(store: &mut ParamStore) {
    let missing: Vec<String> = store
        .trainable()
        .iter()
        .filter(|n| store.get(n).is_some_and(|t| t.grad().is_none()))
        .cloned()
        .collect();
    for n in missing {
        if let Some(t) = store.get_mut(&n) {
            let z = vec![0.0; t.numel()];
            t.accumulate_grad(&z);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean loss of each epoch (over examples seen in that epoch).
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    pub examples_used: usize,
    pub skipped_unalignable: usize,
}

/// Mini-batch loop shared by QA and MLM training. `loss_of` returns `None`
/// for items that contribute nothing (e.g. no masked positions).
#[allow(clippy::too_many_arguments)]
fn run_loop<T>(
    model: &mut EncoderModel,
    items: &[T],
    epochs: usize,
    batch_size: usize,
    max_steps: Option<u64>,
    adam: &mut Adam,
    rng: &mut Rng,
    mut loss_of: impl FnMut(&EncoderModel, &mut Graph<'_>, &T, &mut Rng) -> Result<Option<crate::numcore::Var>>,
) -> Result<Vec<f64>> {
    let mut curve = Vec::new();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let start = adam.steps();
    'outer: for _ in 0..epochs {
        rng.shuffle(&mut order);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(batch_size) {
            if max_steps.is_some_and(|m| adam.steps() - start >= m) {
                if seen > 0 {
                    curve.push(total / seen as f64);
                }
                break 'outer;
            }
            model.params.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let grads = {
                    let mut g = Graph::new(&model.params);
                    let Some(loss) = loss_of(model, &mut g, &items[i], rng)? else {
                        continue;
                    };
                    total += g.value(loss).data()[0];
                    seen += 1;
                    let scaled = g.scale(loss, scale);
                    g.backward(scaled)?
                };
                model.params.accumulate(&grads)?;
            }
            fill_missing_grads(&mut model.params);
            adam.step(&mut model.params)?;
        }
        if seen > 0 {
            curve.push(total / seen as f64);
        }
    }
    Ok(curve)
}

pub fn featurize_all(examples: &[QAExample], vocab: &Vocab, max_seq_len: usize) -> Result<Vec<TokenizedFeature>> {
    examples.iter().map(|e| featurize(e, vocab, max_seq_len)).collect()
}

/// Trains the model's current trainable mask on span loss. Examples whose
/// answer does not align to token boundaries are skipped and counted.
pub fn train_qa(
    model: &mut EncoderModel,
    features: &[TokenizedFeature],
    cfg: &TrainConfig,
    adam: &mut Adam,
    rng: &mut Rng,
) -> Result<TrainLog> {
    let usable: Vec<&TokenizedFeature> = features.iter().filter(|f| f.gold_span.is_some()).collect();
    let skipped = features.len() - usable.len();
    if skipped > 0 {
        log::info!("skipping {skipped} training examples whose answers do not align to tokens");
    }
    if usable.is_empty() {
        return Err(Error::Config("no alignable training examples".into()));
    }
    let dropout = model.config().dropout_rate > 0.0;
    let start = adam.steps();
    let curve = run_loop(
        model,
        &usable,
        cfg.epochs,
        cfg.batch_size,
        cfg.max_steps,
        adam,
        rng,
        |m, g, f, rng| {
            let (s, e) = f.gold_span.expect("filtered");
            let mut ctx = if dropout { ForwardCtx::train(rng) } else { ForwardCtx::eval() };
            let h = m.encode_graph(g, &f.token_ids, None, &mut ctx)?;
            let logits = head_logits_graph(g, h)?;
            span_loss_graph(g, logits, s, e, &f.context_mask).map(Some)
        },
    )?;
    Ok(TrainLog {
        epoch_losses: curve,
        steps: adam.steps() - start,
        examples_used: usable.len(),
        skipped_unalignable: skipped,
    })
}

/// Eval-mode predictions and scores for `examples`.
pub fn evaluate(
    model: &EncoderModel,
    examples: &[QAExample],
    vocab: &Vocab,
    max_answer_len: usize,
    language: &str,
) -> Result<(EvalReport, Predictions)> {
    let mut scores = Vec::with_capacity(examples.len());
    let mut preds = Predictions::new();
    for ex in examples {
        let f = featurize(ex, vocab, model.config().max_seq_len)?;
        let p = predict(model, &f, max_answer_len)?;
        scores.push(score_example(&ex.id, &p.answer_text, &ex.gold_texts())?);
        preds.insert(ex.id.clone(), p.answer_text);
    }
    Ok((aggregate(scores, language)?, preds))
}

/// Token ids of each non-empty document, truncated to `max_len`.
pub fn encode_documents(docs: &[String], vocab: &Vocab, max_len: usize) -> Vec<Vec<usize>> {
    docs.iter()
        .map(|d| {
            let (mut ids, _) = tokenize(d, vocab);
            ids.truncate(max_len);
            ids
        })
        .filter(|ids| !ids.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlmLog {
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    pub documents: usize,
    pub heldout_documents: usize,
    pub heldout_loss_before: Option<f64>,
    pub heldout_loss_after: Option<f64>,
}

fn mlm_item_loss(
    m: &EncoderModel,
    g: &mut Graph<'_>,
    ids: &[usize],
    mask_rate: f64,
    rng: &mut Rng,
    train: bool,
) -> Result<Option<crate::numcore::Var>> {
    let masked = mlm_mask(ids, rng, mask_rate, m.config().vocab_size)?;
    if masked.labels.is_empty() {
        return Ok(None);
    }
    let mut ctx = if train && m.config().dropout_rate > 0.0 {
        ForwardCtx::train(rng)
    } else {
        ForwardCtx::eval()
    };
    let h = m.encode_graph(g, &masked.ids, None, &mut ctx)?;
    let positions: Vec<usize> = masked.labels.iter().map(|l| l.0).collect();
    let targets: Vec<usize> = masked.labels.iter().map(|l| l.1).collect();
    let logits = m.mlm_logits_graph(g, h, &positions)?;
    g.cross_entropy(logits, &targets, None).map(Some)
}

/// Mean masked-token loss with masks drawn from a fixed seed.
pub fn mlm_eval_loss(model: &EncoderModel, docs: &[Vec<usize>], mask_rate: f64, seed: u64) -> Result<Option<f64>> {
    let mut rng = Rng::new(seed);
    let (mut total, mut n) = (0.0, 0usize);
    for ids in docs {
        let mut g = Graph::inference(&model.params);
        if let Some(l) = mlm_item_loss(model, &mut g, ids, mask_rate, &mut rng, false)? {
            total += g.value(l).data()[0];
            n += 1;
        }
    }
    Ok((n > 0).then(|| total / n as f64))
}

/// Masked-token training of the model's current trainable mask. The last
/// `heldout_fraction` of documents is kept aside and scored before and after.
pub fn train_mlm(model: &mut EncoderModel, docs: &[Vec<usize>], cfg: &MlmConfig, max_steps: Option<u64>, seed: u64) -> Result<MlmLog> {
    if docs.is_empty() {
        return Err(Error::Config("MLM corpus is empty".into()));
    }
    let n_held = ((docs.len() as f64) * cfg.heldout_fraction).floor() as usize;
    let n_held = n_held.min(docs.len() - 1);
    let (train, held) = docs.split_at(docs.len() - n_held);
    let eval_seed = seed ^ 0x5eed_f00d;
    let before = mlm_eval_loss(model, held, cfg.mask_rate, eval_seed)?;
    let mut adam = Adam::new(cfg.optimizer);
    let mut rng = Rng::new(seed);
    let rate = cfg.mask_rate;
    let curve = run_loop(
        model,
        train,
        if max_steps.is_some() { usize::MAX } else { cfg.epochs },
        cfg.batch_size,
        max_steps.or(cfg.max_steps),
        &mut adam,
        &mut rng,
        |m, g, ids, rng| mlm_item_loss(m, g, ids, rate, rng, true),
    )?;
    let after = mlm_eval_loss(model, held, cfg.mask_rate, eval_seed)?;
    Ok(MlmLog {
        epoch_losses: curve,
        steps: adam.steps(),
        documents: train.len(),
        heldout_documents: held.len(),
        heldout_loss_before: before,
        heldout_loss_after: after,
    })
}
