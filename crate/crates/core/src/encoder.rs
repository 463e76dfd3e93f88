//! Miniature post-norm transformer encoder with adapter slots.
//!
//! Parameter names:
//!
//! | name                                  | shape      |
//! |---------------------------------------|------------|
//! | `embed.token`                         | `[V×H]`    |
//! | `embed.position`                      | `[S×H]`    |
//! | `block.{b}.attn.{q,k,v,o}.weight`     | `[H×H]`    |
//! | `block.{b}.attn.{q,k,v,o}.bias`       | `[H]`      |
//! | `block.{b}.attn.norm.{gain,bias}`     | `[H]`      |
//! | `block.{b}.ffn.in.weight` / `.bias`   | `[H×F]`, `[F]` |
//! | `block.{b}.ffn.out.weight` / `.bias`  | `[F×H]`, `[H]` |
//! | `block.{b}.ffn.norm.{gain,bias}`      | `[H]`      |
//! | `mlm.bias`                            | `[V]`      |
//! | `qa.weight` / `qa.bias`               | `[H×2]`, `[2]` |
//!
//! Attached adapters live under `adapter.{name}.`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapters::{self, AdapterKind, AdapterManifest, AdapterSet, Scheme};
use crate::data::TokenizedFeature;
use crate::error::{Error, Result};
use crate::numcore::{container, Graph, ParamStore, Rng, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Default desk-scale shape: H=64, L=4, A=4, F=128, S=256.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            max_seq_len: 256,
            hidden_dim: 64,
            num_blocks: 4,
            num_heads: 4,
            ffn_dim: 128,
            dropout_rate: 0.1,
            seed: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

/// Where a bottleneck adapter sits inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotPosition {
    /// After the attention sublayer output, before its residual add.
    Attn,
    /// After the feed-forward sublayer output, before its residual add.
    Ffn,
}

impl SlotPosition {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotPosition::Attn => "attn",
            SlotPosition::Ffn => "ffn",
        }
    }
}

/// One adapter application recorded by a traced forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub slot: String,
    pub adapter: String,
    pub kind: AdapterKind,
}

/// Per-pass options: dropout source and an optional adapter trace.
#[derive(Default)]
pub struct ForwardCtx<'a> {
    dropout_rng: Option<&'a mut Rng>,
    trace: Option<&'a mut Vec<TraceEvent>>,
}

impl<'a> ForwardCtx<'a> {
    /// Deterministic pass, dropout off.
    pub fn eval() -> Self {
        ForwardCtx::default()
    }

    /// Training pass; dropout masks are drawn from `rng`.
    pub fn train(rng: &'a mut Rng) -> Self {
        ForwardCtx {
            dropout_rng: Some(rng),
            trace: None,
        }
    }

    pub fn traced(mut self, trace: &'a mut Vec<TraceEvent>) -> Self {
        self.trace = Some(trace);
        self
    }

    fn record(&mut self, slot: String, adapter: &str, kind: AdapterKind) {
        if let Some(t) = self.trace.as_deref_mut() {
            t.push(TraceEvent {
                slot,
                adapter: adapter.to_string(),
                kind,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Attached {
    pub manifest: AdapterManifest,
}

impl Attached {
    pub fn prefix(&self) -> String {
        adapters::store_prefix(&self.manifest.name)
    }
}

/// Structured-text sidecar describing a saved model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub config: EncoderConfig,
    pub language_adapter: Option<AdapterManifest>,
    pub task_adapter: Option<AdapterManifest>,
    pub occupied_slots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: EncoderConfig,
    pub params: ParamStore,
    pub(crate) language: Option<Attached>,
    pub(crate) task: Option<Attached>,
}

fn xavier(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.normal(0.0, std)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive extents")
}

fn normal(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, std)).collect()).expect("positive extents")
}

pub(crate) fn init_xavier(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    xavier(rng, rows, cols)
}

impl EncoderModel {
    /// Randomly initialised backbone, QA head and MLM output bias.
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let (v, s, h, f) = (config.vocab_size, config.max_seq_len, config.hidden_dim, config.ffn_dim);
        let mut p = ParamStore::new();
        p.insert("embed.token", normal(&mut rng, &[v, h], 0.1))?;
        p.insert("embed.position", normal(&mut rng, &[s, h], 0.1))?;
        for b in 0..config.num_blocks {
            for m in ["q", "k", "v", "o"] {
                p.insert(format!("block.{b}.attn.{m}.weight"), xavier(&mut rng, h, h))?;
                p.insert(format!("block.{b}.attn.{m}.bias"), Tensor::zeros(&[h]))?;
            }
            p.insert(format!("block.{b}.ffn.in.weight"), xavier(&mut rng, h, f))?;
            p.insert(format!("block.{b}.ffn.in.bias"), Tensor::zeros(&[f]))?;
            p.insert(format!("block.{b}.ffn.out.weight"), xavier(&mut rng, f, h))?;
            p.insert(format!("block.{b}.ffn.out.bias"), Tensor::zeros(&[h]))?;
            for sub in ["attn", "ffn"] {
                p.insert(format!("block.{b}.{sub}.norm.gain"), Tensor::full(&[h], 1.0))?;
                p.insert(format!("block.{b}.{sub}.norm.bias"), Tensor::zeros(&[h]))?;
            }
        }
        p.insert("mlm.bias", Tensor::zeros(&[v]))?;
        p.insert("qa.weight", xavier(&mut rng, h, 2))?;
        p.insert("qa.bias", Tensor::zeros(&[2]))?;
        Ok(EncoderModel {
            config,
            params: p,
            language: None,
            task: None,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn is_backbone_param(name: &str) -> bool {
        name.starts_with("embed.") || name.starts_with("block.") || name.starts_with("mlm.")
    }

    pub fn is_head_param(name: &str) -> bool {
        name.starts_with("qa.")
    }

    pub fn backbone_param_count(&self) -> usize {
        self.params.count_values(Self::is_backbone_param)
    }

    pub fn language_adapter(&self) -> Option<&AdapterManifest> {
        self.language.as_ref().map(|a| &a.manifest)
    }

    pub fn task_adapter(&self) -> Option<&AdapterManifest> {
        self.task.as_ref().map(|a| &a.manifest)
    }

    /// Adapters occupying the bottleneck slot, in application order.
    pub fn slot_occupants(&self, block: usize, pos: SlotPosition) -> Vec<&AdapterManifest> {
        [&self.language, &self.task]
            .into_iter()
            .flatten()
            .map(|a| &a.manifest)
            .filter(|m| block < self.config.num_blocks && m.scheme.positions().contains(&pos))
            .collect()
    }

    /// Labels of every occupied bottleneck slot, e.g. `block.0.ffn`.
    pub fn occupied_slots(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.language.as_ref().is_some_and(|a| a.manifest.invertible) {
            out.push("embed".to_string());
        }
        for b in 0..self.config.num_blocks {
            for pos in [SlotPosition::Attn, SlotPosition::Ffn] {
                if !self.slot_occupants(b, pos).is_empty() {
                    out.push(format!("block.{b}.{}", pos.as_str()));
                }
            }
        }
        out
    }

    pub fn manifest(&self) -> ModelManifest {
        ModelManifest {
            config: self.config.clone(),
            language_adapter: self.language_adapter().cloned(),
            task_adapter: self.task_adapter().cloned(),
            occupied_slots: self.occupied_slots(),
        }
    }

    /// Token plus position embedding, followed by the invertible adapter when
    /// one occupies the post-embedding slot.
    pub fn embed_graph(&self, g: &mut Graph<'_>, ids: &[usize], ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::contract("empty token sequence"));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::contract(format!(
                "sequence length {} exceeds max_seq_len {}",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::contract(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let tok_table = g.param("embed.token")?;
        let pos_table = g.param("embed.position")?;
        let tok = g.gather_rows(tok_table, ids)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = g.gather_rows(pos_table, &positions)?;
        let mut x = g.add(tok, pos)?;
        if let Some(lang) = self.language.as_ref().filter(|a| a.manifest.invertible) {
            ctx.record("embed".into(), &lang.manifest.name, AdapterKind::Language);
            x = adapters::invertible_forward_graph(g, &lang.prefix(), x)?;
        }
        Ok(x)
    }

    fn dropout(&self, g: &mut Graph<'_>, x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let p = self.config.dropout_rate;
        let Some(rng) = ctx.dropout_rng.as_deref_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..g.value(x).numel())
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
            .collect();
        g.mul_const(x, mask)
    }

    fn apply_slot(
        &self,
        g: &mut Graph<'_>,
        block: usize,
        pos: SlotPosition,
        mut h: Var,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        for att in [&self.language, &self.task].into_iter().flatten() {
            if !att.manifest.scheme.positions().contains(&pos) {
                continue;
            }
            let slot = format!("block.{block}.{}", pos.as_str());
            ctx.record(slot.clone(), &att.manifest.name, att.manifest.kind);
            h = adapters::bottleneck_graph(g, &format!("{}{slot}.", att.prefix()), h)?;
        }
        Ok(h)
    }

    /// Multi-head attention output projection, before slot adapters and the
    /// residual. `pad_mask[j] == true` removes key `j` from every softmax.
    fn attention_raw(&self, g: &mut Graph<'_>, block: usize, x: Var, pad_mask: Option<&[bool]>) -> Result<Var> {
        let p = |m: &str, t: &str| format!("block.{block}.attn.{m}.{t}");
        let n = g.value(x).rows();
        let allowed: Option<Vec<bool>> = match pad_mask {
            Some(m) if m.len() != n => {
                return Err(Error::contract(format!("mask length {} for {n} positions", m.len())))
            }
            Some(m) => Some(m.iter().map(|pad| !pad).collect()),
            None => None,
        };
        let proj = |g: &mut Graph<'_>, m: &str| -> Result<Var> {
            let w = g.param(&p(m, "weight"))?;
            let b = g.param(&p(m, "bias"))?;
            g.affine(x, w, b)
        };
        let q = proj(g, "q")?;
        let k = proj(g, "k")?;
        let v = proj(g, "v")?;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.num_heads);
        for head in 0..self.config.num_heads {
            let qh = g.slice_cols(q, head * dh, dh)?;
            let kh = g.slice_cols(k, head * dh, dh)?;
            let vh = g.slice_cols(v, head * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax_rows(scores, allowed.as_deref())?;
            heads.push(g.matmul(weights, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        let wo = g.param(&p("o", "weight"))?;
        let bo = g.param(&p("o", "bias"))?;
        g.affine(cat, wo, bo)
    }

    fn residual_norm(&self, g: &mut Graph<'_>, block: usize, sub: &str, x: Var, h: Var) -> Result<Var> {
        let sum = g.add(x, h)?;
        let gain = g.param(&format!("block.{block}.{sub}.norm.gain"))?;
        let bias = g.param(&format!("block.{block}.{sub}.norm.bias"))?;
        g.layer_norm(sum, gain, bias, LAYER_NORM_EPS)
    }

    /// Attention sublayer of `block` including its slot adapters, residual
    /// and norm.
    pub fn attention_sublayer(
        &self,
        g: &mut Graph<'_>,
        block: usize,
        x: Var,
        pad_mask: Option<&[bool]>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        let a = self.attention_raw(g, block, x, pad_mask)?;
        let a = self.dropout(g, a, ctx)?;
        let a = self.apply_slot(g, block, SlotPosition::Attn, a, ctx)?;
        self.residual_norm(g, block, "attn", x, a)
    }

    fn ffn_sublayer(&self, g: &mut Graph<'_>, block: usize, x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let w1 = g.param(&format!("block.{block}.ffn.in.weight"))?;
        let b1 = g.param(&format!("block.{block}.ffn.in.bias"))?;
        let w2 = g.param(&format!("block.{block}.ffn.out.weight"))?;
        let b2 = g.param(&format!("block.{block}.ffn.out.bias"))?;
        let h = g.affine(x, w1, b1)?;
        let h = g.gelu(h);
        let h = g.affine(h, w2, b2)?;
        let h = self.dropout(g, h, ctx)?;
        let h = self.apply_slot(g, block, SlotPosition::Ffn, h, ctx)?;
        self.residual_norm(g, block, "ffn", x, h)
    }

    /// Full forward pass to hidden states `[seq×H]`.
    pub fn encode_graph(
        &self,
        g: &mut Graph<'_>,
        ids: &[usize],
        pad_mask: Option<&[bool]>,
        ctx: &mut ForwardCtx<'_>,
    ) -> Result<Var> {
        let mut x = self.embed_graph(g, ids, ctx)?;
        x = self.dropout(g, x, ctx)?;
        for b in 0..self.config.num_blocks {
            x = self.attention_sublayer(g, b, x, pad_mask, ctx)?;
            x = self.ffn_sublayer(g, b, x, ctx)?;
        }
        Ok(x)
    }

    /// Vocabulary logits for selected hidden rows, with the output projection
    /// tied to `embed.token`. When a language adapter with an invertible unit
    /// is attached, its inverse is applied first.
    pub fn mlm_logits_graph(&self, g: &mut Graph<'_>, hidden: Var, positions: &[usize]) -> Result<Var> {
        let mut h = g.gather_rows(hidden, positions)?;
        if let Some(lang) = self.language.as_ref().filter(|a| a.manifest.invertible) {
            h = adapters::invertible_inverse_graph(g, &lang.prefix(), h)?;
        }
        let table = g.param("embed.token")?;
        let out = g.transpose(table)?;
        let logits = g.matmul(h, out)?;
        let bias = g.param("mlm.bias")?;
        g.add_row(logits, bias)
    }

    pub fn embed(&self, ids: &[usize]) -> Result<Tensor> {
        let mut g = Graph::inference(&self.params);
        let v = self.embed_graph(&mut g, ids, &mut ForwardCtx::eval())?;
        Ok(g.value(v).clone())
    }

    /// Eval-mode attention sublayer of `block` applied to `x`.
    pub fn self_attention(&self, block: usize, x: &Tensor, pad_mask: Option<&[bool]>) -> Result<Tensor> {
        if block >= self.config.num_blocks {
            return Err(Error::contract(format!("no block {block}")));
        }
        let mut g = Graph::inference(&self.params);
        let xv = g.constant(x.clone());
        let v = self.attention_sublayer(&mut g, block, xv, pad_mask, &mut ForwardCtx::eval())?;
        Ok(g.value(v).clone())
    }

    pub fn encode_ids(&self, ids: &[usize], pad_mask: Option<&[bool]>) -> Result<Tensor> {
        let mut g = Graph::inference(&self.params);
        let v = self.encode_graph(&mut g, ids, pad_mask, &mut ForwardCtx::eval())?;
        Ok(g.value(v).clone())
    }

    /// Eval-mode hidden states for a featurised example.
    pub fn encode(&self, feature: &TokenizedFeature) -> Result<Tensor> {
        self.encode_ids(&feature.token_ids, None)
    }

    /// Writes the parameter container to `path` and the manifest next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        container::save(&self.params, path)?;
        let text = serde_json::to_string_pretty(&self.manifest())?;
        let mpath = manifest_path(path);
        std::fs::write(&mpath, text).map_err(|e| Error::io(mpath, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mpath = manifest_path(path);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: ModelManifest = serde_json::from_str(&text)?;
        let params = container::load(path)?;
        Self::from_parts(manifest, params)
    }

    pub fn from_parts(manifest: ModelManifest, params: ParamStore) -> Result<Self> {
        manifest.config.validate()?;
        let fresh = EncoderModel::new(manifest.config.clone())?;
        for (name, t) in fresh.params.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Format(format!("model file lacks `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "`{name}` has shape {:?}, config implies {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        let model = EncoderModel {
            config: manifest.config.clone(),
            params,
            language: manifest.language_adapter.clone().map(|manifest| Attached { manifest }),
            task: manifest.task_adapter.clone().map(|manifest| Attached { manifest }),
        };
        for att in [&model.language, &model.task].into_iter().flatten() {
            let expected = AdapterSet::expected_names(&att.manifest);
            let prefix = att.prefix();
            for n in expected {
                if !model.params.contains(&format!("{prefix}{n}")) {
                    return Err(Error::Format(format!("model file lacks adapter entry `{prefix}{n}`")));
                }
            }
        }
        if model.occupied_slots() != manifest.occupied_slots {
            return Err(Error::Format("slot occupancy in manifest disagrees with adapters".into()));
        }
        Ok(model)
    }

    /// Copy of the model with every adapter removed.
    pub fn backbone_only(&self) -> EncoderModel {
        let mut out = self.clone();
        for att in [out.language.take(), out.task.take()].into_iter().flatten() {
            let prefix = att.prefix();
            let names: Vec<String> = out.params.names_with_prefix(&prefix).map(String::from).collect();
            for n in names {
                out.params.remove(&n);
            }
        }
        out
    }

    pub(crate) fn scheme_in_use(&self) -> Option<Scheme> {
        self.task
            .as_ref()
            .or(self.language.as_ref())
            .map(|a| a.manifest.scheme)
    }
}

/// Sidecar path for a container at `path`: `<path>.manifest.json`.
pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(blocks: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 20,
            max_seq_len: 16,
            hidden_dim: 16,
            num_blocks: blocks,
            num_heads: 2,
            ffn_dim: 24,
            dropout_rate: 0.0,
            seed: 5,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(2);
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny(2);
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        assert!(EncoderConfig::desk(100).validate().is_ok());
    }

    #[test]
    fn embed_zero_tables_and_shape() {
        let mut m = EncoderModel::new(tiny(1)).unwrap();
        assert_eq!(m.embed(&[1, 2, 3, 4, 5, 6, 7]).unwrap().shape(), &[7, 16]);
        m.params.assign("embed.token", Tensor::zeros(&[20, 16])).unwrap();
        m.params.assign("embed.position", Tensor::zeros(&[16, 16])).unwrap();
        let e = m.embed(&[3, 4]).unwrap();
        assert!(e.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_rejects_out_of_vocab_and_long_input() {
        let m = EncoderModel::new(tiny(1)).unwrap();
        assert!(m.embed(&[20]).is_err());
        assert!(m.embed(&[1; 17]).is_err());
    }

    #[test]
    fn zero_depth_encode_equals_embed() {
        let m = EncoderModel::new(tiny(0)).unwrap();
        let ids = [1, 5, 9, 2];
        assert_eq!(m.encode_ids(&ids, None).unwrap(), m.embed(&ids).unwrap());
    }

    #[test]
    fn eval_mode_is_bit_deterministic() {
        let a = EncoderModel::new(tiny(2)).unwrap();
        let b = EncoderModel::new(tiny(2)).unwrap();
        let ids = [3, 1, 4, 1, 5, 9];
        let x = a.encode_ids(&ids, None).unwrap();
        let y = b.encode_ids(&ids, None).unwrap();
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(x, a.encode_ids(&ids, None).unwrap());
    }

    #[test]
    fn single_position_attends_to_itself() {
        let m = EncoderModel::new(tiny(1)).unwrap();
        let mut g = Graph::inference(&m.params);
        let x = g.constant(Tensor::from_rows(&[vec![0.3; 16]]).unwrap());
        let q = g.param("block.0.attn.q.weight").unwrap();
        let k = g.param("block.0.attn.k.weight").unwrap();
        let qx = g.matmul(x, q).unwrap();
        let kx = g.matmul(x, k).unwrap();
        let kt = g.transpose(kx).unwrap();
        let s = g.matmul(qx, kt).unwrap();
        let w = g.softmax_rows(s, Some(&[true])).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);
    }

    #[test]
    fn uniform_values_pass_through_attention() {
        // identical rows => every query sees the same value vector, so the
        // attention output equals one row's projection through v and o
        let m = EncoderModel::new(tiny(1)).unwrap();
        let row: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = Tensor::from_rows(&vec![row.clone(); 4]).unwrap();
        let mut g = Graph::inference(&m.params);
        let xv = g.constant(x);
        let out = m.attention_raw(&mut g, 0, xv, None).unwrap();
        let single = Tensor::from_rows(&[row]).unwrap();
        let v = crate::numcore::ops::matmul(&single, m.params.get("block.0.attn.v.weight").unwrap()).unwrap();
        let o = crate::numcore::ops::matmul(&v, m.params.get("block.0.attn.o.weight").unwrap()).unwrap();
        for r in 0..4 {
            for j in 0..16 {
                assert!((g.value(out).at(r, j) - o.at(0, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dropout_only_in_training() {
        let mut c = tiny(1);
        c.dropout_rate = 0.5;
        let m = EncoderModel::new(c).unwrap();
        let ids = [1, 2, 3];
        let eval = m.encode_ids(&ids, None).unwrap();
        let mut rng = Rng::new(1);
        let mut g = Graph::inference(&m.params);
        let v = m.encode_graph(&mut g, &ids, None, &mut ForwardCtx::train(&mut rng)).unwrap();
        assert!(g.value(v).max_abs_diff(&eval) > 1e-6);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.aqpc");
        let m = EncoderModel::new(tiny(2)).unwrap();
        m.save(&path).unwrap();
        let back = EncoderModel::load(&path).unwrap();
        assert_eq!(back, m);
    }
}
