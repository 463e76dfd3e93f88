//! Bottleneck and invertible adapters, their placement in the encoder,
//! stacking, freezing and hot-swapping.
//!
//! An [`AdapterSet`] is a detached bundle of adapter weights with a manifest.
//! Relative entry names inside a set:
//!
//! - `block.{b}.{attn|ffn}.{down,up}.{weight,bias}` for each bottleneck unit
//! - `inv.{f,g}.{w1,b1,w2,b2}` for the invertible adapter (language sets only)
//!
//! Once attached, entries move into the model's store under
//! `adapter.{name}.`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{self, Attached, EncoderModel, SlotPosition};
use crate::error::{Error, Result};
use crate::numcore::{container, ops, Graph, ParamStore, Rng, Tensor, Var};

pub const ADAPTER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Task,
    Language,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Adapters after both the attention and the feed-forward sublayer.
    Houlsby,
    /// A single adapter after the feed-forward sublayer.
    Pfeiffer,
}

impl Scheme {
    pub fn positions(self) -> &'static [SlotPosition] {
        match self {
            Scheme::Houlsby => &[SlotPosition::Attn, SlotPosition::Ffn],
            Scheme::Pfeiffer => &[SlotPosition::Ffn],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Houlsby => "houlsby",
            Scheme::Pfeiffer => "pfeiffer",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "houlsby" => Ok(Scheme::Houlsby),
            "pfeiffer" => Ok(Scheme::Pfeiffer),
            other => Err(Error::Config(format!("unknown placement scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementConfig {
    pub scheme: Scheme,
}

impl PlacementConfig {
    pub fn new(scheme: Scheme) -> Self {
        PlacementConfig { scheme }
    }

    pub fn occupied(&self, num_blocks: usize) -> Vec<(usize, SlotPosition)> {
        (0..num_blocks)
            .flat_map(|b| self.scheme.positions().iter().map(move |&p| (b, p)))
            .collect()
    }
}

/// Bottleneck width used when none is given: one eighth of the hidden size.
pub fn default_bottleneck(hidden: usize) -> usize {
    (hidden / 8).max(1)
}

/// Hidden width of each coupling network: half of the split half.
pub fn coupling_dim(hidden: usize) -> usize {
    (hidden / 4).max(1)
}

pub(crate) fn store_prefix(name: &str) -> String {
    format!("adapter.{name}.")
}

/// Residual bottleneck `h + up(gelu(down(h)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckAdapter {
    pub name: String,
    pub kind: AdapterKind,
    pub down: Tensor,
    pub down_bias: Tensor,
    pub up: Tensor,
    pub up_bias: Tensor,
}

impl BottleneckAdapter {
    /// Fresh unit; the up-projection starts at zero so the unit is an exact
    /// identity.
    pub fn new(name: impl Into<String>, kind: AdapterKind, hidden: usize, bottleneck: usize, rng: &mut Rng) -> Result<Self> {
        if bottleneck == 0 || bottleneck >= hidden {
            return Err(Error::Config(format!(
                "bottleneck dim {bottleneck} must be in 1..{hidden}"
            )));
        }
        Ok(BottleneckAdapter {
            name: name.into(),
            kind,
            down: encoder::init_xavier(rng, hidden, bottleneck),
            down_bias: Tensor::zeros(&[bottleneck]),
            up: Tensor::zeros(&[bottleneck, hidden]),
            up_bias: Tensor::zeros(&[hidden]),
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.down.rows()
    }

    pub fn bottleneck_dim(&self) -> usize {
        self.down.cols()
    }

    pub fn param_count(&self) -> usize {
        self.down.numel() + self.down_bias.numel() + self.up.numel() + self.up_bias.numel()
    }

    pub fn forward(&self, h: &Tensor) -> Result<Tensor> {
        let (rows, cols) = h.dims2()?;
        if cols != self.hidden_dim() {
            return Err(Error::Dimension {
                op: "bottleneck_forward",
                lhs: h.shape().to_vec(),
                rhs: self.down.shape().to_vec(),
            });
        }
        let mut z = ops::matmul(&h.clone().reshape(vec![rows, cols])?, &self.down)?;
        let d = self.bottleneck_dim();
        for r in 0..rows {
            for j in 0..d {
                z.data_mut()[r * d + j] += self.down_bias.data()[j];
            }
        }
        let a = ops::gelu_tensor(&z);
        let mut u = ops::matmul(&a, &self.up)?;
        for (i, v) in u.data_mut().iter_mut().enumerate() {
            *v += self.up_bias.data()[i % cols] + h.data()[i];
        }
        u.reshape(h.shape().to_vec())
    }

    fn entries(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("down.weight", &self.down),
            ("down.bias", &self.down_bias),
            ("up.weight", &self.up),
            ("up.bias", &self.up_bias),
        ]
    }
}

/// Free-function form of [`BottleneckAdapter::forward`].
pub fn bottleneck_forward(h: &Tensor, adapter: &BottleneckAdapter) -> Result<Tensor> {
    adapter.forward(h)
}

/// Two-layer map `gelu(x·w1 + b1)·w2 + b2` used inside the coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingNet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl CouplingNet {
    fn new(half: usize, inner: usize, rng: &mut Rng) -> Self {
        CouplingNet {
            w1: encoder::init_xavier(rng, half, inner),
            b1: Tensor::zeros(&[inner]),
            w2: Tensor::zeros(&[inner, half]),
            b2: Tensor::zeros(&[half]),
        }
    }

    fn apply(&self, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        let half = self.w1.rows();
        let inner = self.w1.cols();
        let xt = Tensor::new(vec![rows, half], x.to_vec())?;
        let mut z = ops::matmul(&xt, &self.w1)?;
        for (i, v) in z.data_mut().iter_mut().enumerate() {
            *v = ops::gelu(*v + self.b1.data()[i % inner]);
        }
        let mut o = ops::matmul(&z, &self.w2)?;
        for (i, v) in o.data_mut().iter_mut().enumerate() {
            *v += self.b2.data()[i % half];
        }
        Ok(o.into_data())
    }

    fn param_count(&self) -> usize {
        self.w1.numel() + self.b1.numel() + self.w2.numel() + self.b2.numel()
    }

    fn entries(&self) -> [(&'static str, &Tensor); 4] {
        [("w1", &self.w1), ("b1", &self.b1), ("w2", &self.w2), ("b2", &self.b2)]
    }
}

/// Additive coupling over the two halves of the hidden vector:
/// `y1 = e1 + F(e2)`, `y2 = e2 + G(y1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertibleAdapter {
    pub name: String,
    pub f: CouplingNet,
    pub g: CouplingNet,
}

fn split_halves(x: &Tensor) -> Result<(usize, usize, Vec<f64>, Vec<f64>)> {
    let (rows, cols) = x.dims2()?;
    let half = cols / 2;
    let mut a = Vec::with_capacity(rows * half);
    let mut b = Vec::with_capacity(rows * half);
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        a.extend_from_slice(&row[..half]);
        b.extend_from_slice(&row[half..]);
    }
    Ok((rows, half, a, b))
}

fn join_halves(rows: usize, half: usize, a: &[f64], b: &[f64], shape: &[usize]) -> Result<Tensor> {
    let mut out = Vec::with_capacity(rows * half * 2);
    for r in 0..rows {
        out.extend_from_slice(&a[r * half..(r + 1) * half]);
        out.extend_from_slice(&b[r * half..(r + 1) * half]);
    }
    Tensor::new(shape.to_vec(), out)
}

impl InvertibleAdapter {
    pub fn new(name: impl Into<String>, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if !hidden.is_multiple_of(2) || hidden < 2 {
            return Err(Error::Config(format!(
                "invertible adapter needs an even hidden size, got {hidden}"
            )));
        }
        let half = hidden / 2;
        let inner = coupling_dim(hidden);
        Ok(InvertibleAdapter {
            name: name.into(),
            f: CouplingNet::new(half, inner, rng),
            g: CouplingNet::new(half, inner, rng),
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.f.w1.rows() * 2
    }

    pub fn param_count(&self) -> usize {
        self.f.param_count() + self.g.param_count()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.hidden_dim() {
            return Err(Error::Dimension {
                op: "invertible_adapter",
                lhs: x.shape().to_vec(),
                rhs: vec![self.hidden_dim()],
            });
        }
        Ok(())
    }

    pub fn forward(&self, e: &Tensor) -> Result<Tensor> {
        self.check(e)?;
        let (rows, half, e1, e2) = split_halves(e)?;
        let f = self.f.apply(&e2, rows)?;
        let y1: Vec<f64> = e1.iter().zip(&f).map(|(a, b)| a + b).collect();
        let g = self.g.apply(&y1, rows)?;
        let y2: Vec<f64> = e2.iter().zip(&g).map(|(a, b)| a + b).collect();
        join_halves(rows, half, &y1, &y2, e.shape())
    }

    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.check(y)?;
        let (rows, half, y1, y2) = split_halves(y)?;
        let g = self.g.apply(&y1, rows)?;
        let e2: Vec<f64> = y2.iter().zip(&g).map(|(a, b)| a - b).collect();
        let f = self.f.apply(&e2, rows)?;
        let e1: Vec<f64> = y1.iter().zip(&f).map(|(a, b)| a - b).collect();
        join_halves(rows, half, &e1, &e2, y.shape())
    }
}

pub fn invertible_forward(e: &Tensor, adapter: &InvertibleAdapter) -> Result<Tensor> {
    adapter.forward(e)
}

pub fn invertible_inverse(y: &Tensor, adapter: &InvertibleAdapter) -> Result<Tensor> {
    adapter.inverse(y)
}

/// Records a bottleneck unit whose entries sit under `prefix`.
pub fn bottleneck_graph(g: &mut Graph<'_>, prefix: &str, h: Var) -> Result<Var> {
    let dw = g.param(&format!("{prefix}down.weight"))?;
    let db = g.param(&format!("{prefix}down.bias"))?;
    let uw = g.param(&format!("{prefix}up.weight"))?;
    let ub = g.param(&format!("{prefix}up.bias"))?;
    let z = g.affine(h, dw, db)?;
    let z = g.gelu(z);
    let u = g.affine(z, uw, ub)?;
    g.add(h, u)
}

fn coupling_graph(g: &mut Graph<'_>, prefix: &str, x: Var) -> Result<Var> {
    let w1 = g.param(&format!("{prefix}w1"))?;
    let b1 = g.param(&format!("{prefix}b1"))?;
    let w2 = g.param(&format!("{prefix}w2"))?;
    let b2 = g.param(&format!("{prefix}b2"))?;
    let z = g.affine(x, w1, b1)?;
    let z = g.gelu(z);
    g.affine(z, w2, b2)
}

fn halves(g: &mut Graph<'_>, x: Var) -> Result<(Var, Var, usize)> {
    let cols = g.value(x).cols();
    if !cols.is_multiple_of(2) {
        return Err(Error::contract(format!("invertible adapter on odd width {cols}")));
    }
    let half = cols / 2;
    Ok((g.slice_cols(x, 0, half)?, g.slice_cols(x, half, half)?, half))
}

/// Records the invertible adapter's forward transform; entries under
/// `{prefix}inv.`.
pub fn invertible_forward_graph(g: &mut Graph<'_>, prefix: &str, e: Var) -> Result<Var> {
    let (e1, e2, _) = halves(g, e)?;
    let f = coupling_graph(g, &format!("{prefix}inv.f."), e2)?;
    let y1 = g.add(e1, f)?;
    let gg = coupling_graph(g, &format!("{prefix}inv.g."), y1)?;
    let y2 = g.add(e2, gg)?;
    g.concat_cols(&[y1, y2])
}

/// Records the inverse transform.
pub fn invertible_inverse_graph(g: &mut Graph<'_>, prefix: &str, y: Var) -> Result<Var> {
    let (y1, y2, _) = halves(g, y)?;
    let gg = coupling_graph(g, &format!("{prefix}inv.g."), y1)?;
    let e2 = g.sub(y2, gg)?;
    let f = coupling_graph(g, &format!("{prefix}inv.f."), e2)?;
    let e1 = g.sub(y1, f)?;
    g.concat_cols(&[e1, e2])
}

/// Sidecar metadata saved with every adapter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterManifest {
    pub format_version: u32,
    pub name: String,
    pub kind: AdapterKind,
    pub scheme: Scheme,
    pub hidden_dim: usize,
    pub bottleneck_dim: usize,
    pub num_blocks: usize,
    pub invertible: bool,
    pub source_language: Option<String>,
    pub trained_on: String,
    pub seed: u64,
}

impl AdapterManifest {
    fn summary(&self) -> String {
        serde_json::to_string(self).unwrap_or_else(|_| format!("{self:?}"))
    }
}

/// Detached adapter weights plus manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet {
    pub manifest: AdapterManifest,
    pub params: ParamStore,
}

impl AdapterSet {
    pub fn new_task(name: &str, hidden: usize, bottleneck: usize, num_blocks: usize, scheme: Scheme, seed: u64) -> Result<Self> {
        Self::build(name, AdapterKind::Task, None, hidden, bottleneck, num_blocks, scheme, seed)
    }

    /// Language set: invertible adapter plus one bottleneck per occupied slot.
    pub fn new_language(
        name: &str,
        language: &str,
        hidden: usize,
        bottleneck: usize,
        num_blocks: usize,
        scheme: Scheme,
        seed: u64,
    ) -> Result<Self> {
        Self::build(
            name,
            AdapterKind::Language,
            Some(language.to_string()),
            hidden,
            bottleneck,
            num_blocks,
            scheme,
            seed,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        name: &str,
        kind: AdapterKind,
        language: Option<String>,
        hidden: usize,
        bottleneck: usize,
        num_blocks: usize,
        scheme: Scheme,
        seed: u64,
    ) -> Result<Self> {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Config(format!("invalid adapter name `{name}`")));
        }
        let mut rng = Rng::new(seed);
        let mut params = ParamStore::new();
        let invertible = kind == AdapterKind::Language;
        if invertible {
            let inv = InvertibleAdapter::new(name, hidden, &mut rng)?;
            for (net, tag) in [(&inv.f, "f"), (&inv.g, "g")] {
                for (k, t) in net.entries() {
                    params.insert(format!("inv.{tag}.{k}"), t.clone())?;
                }
            }
        }
        for (b, pos) in PlacementConfig::new(scheme).occupied(num_blocks) {
            let unit = BottleneckAdapter::new(name, kind, hidden, bottleneck, &mut rng)?;
            for (k, t) in unit.entries() {
                params.insert(format!("block.{b}.{}.{k}", pos.as_str()), t.clone())?;
            }
        }
        Ok(AdapterSet {
            manifest: AdapterManifest {
                format_version: ADAPTER_FORMAT_VERSION,
                name: name.to_string(),
                kind,
                scheme,
                hidden_dim: hidden,
                bottleneck_dim: bottleneck,
                num_blocks,
                invertible,
                source_language: language,
                trained_on: "untrained".into(),
                seed,
            },
            params,
        })
    }

    pub fn name(&self) -> &str {
        &self.manifest.name
    }

    pub fn kind(&self) -> AdapterKind {
        self.manifest.kind
    }

    /// Relative entry names implied by a manifest.
    pub fn expected_names(m: &AdapterManifest) -> Vec<String> {
        let mut out = Vec::new();
        if m.invertible {
            for tag in ["f", "g"] {
                for k in ["w1", "b1", "w2", "b2"] {
                    out.push(format!("inv.{tag}.{k}"));
                }
            }
        }
        for (b, pos) in PlacementConfig::new(m.scheme).occupied(m.num_blocks) {
            for k in ["down.weight", "down.bias", "up.weight", "up.bias"] {
                out.push(format!("block.{b}.{}.{k}", pos.as_str()));
            }
        }
        out
    }

    pub fn unit(&self, block: usize, pos: SlotPosition) -> Option<BottleneckAdapter> {
        let p = format!("block.{block}.{}.", pos.as_str());
        let get = |k: &str| self.params.get(&format!("{p}{k}")).cloned();
        Some(BottleneckAdapter {
            name: self.manifest.name.clone(),
            kind: self.manifest.kind,
            down: get("down.weight")?,
            down_bias: get("down.bias")?,
            up: get("up.weight")?,
            up_bias: get("up.bias")?,
        })
    }

    pub fn invertible(&self) -> Option<InvertibleAdapter> {
        let net = |tag: &str| -> Option<CouplingNet> {
            let get = |k: &str| self.params.get(&format!("inv.{tag}.{k}")).cloned();
            Some(CouplingNet {
                w1: get("w1")?,
                b1: get("b1")?,
                w2: get("w2")?,
                b2: get("b2")?,
            })
        };
        Some(InvertibleAdapter {
            name: self.manifest.name.clone(),
            f: net("f")?,
            g: net("g")?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count_values(|_| true)
    }

    /// Rejects sets whose entries disagree with their manifest.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        let expected = Self::expected_names(m);
        let have: Vec<&str> = self.params.names().collect();
        let mut want: Vec<&str> = expected.iter().map(String::as_str).collect();
        want.sort_unstable();
        if have != want {
            return Err(Error::Format(format!(
                "adapter `{}` entries do not match its manifest",
                m.name
            )));
        }
        let (h, d) = (m.hidden_dim, m.bottleneck_dim);
        for (name, t) in self.params.iter() {
            let expect: Vec<usize> = if name.starts_with("inv.") {
                let (half, inner) = (h / 2, coupling_dim(h));
                match name.rsplit('.').next().unwrap() {
                    "w1" => vec![half, inner],
                    "b1" => vec![inner],
                    "w2" => vec![inner, half],
                    _ => vec![half],
                }
            } else if name.ends_with("down.weight") {
                vec![h, d]
            } else if name.ends_with("down.bias") {
                vec![d]
            } else if name.ends_with("up.weight") {
                vec![d, h]
            } else {
                vec![h]
            };
            if t.shape() != expect.as_slice() {
                return Err(Error::Format(format!(
                    "adapter entry `{name}` has shape {:?}, manifest implies {expect:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Writes the container to `path` and the manifest to
    /// `<path>.manifest.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        container::save(&self.params, path)?;
        let mpath = encoder::manifest_path(path);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&mpath, text).map_err(|e| Error::io(mpath, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mpath = encoder::manifest_path(path);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: AdapterManifest = serde_json::from_str(&text)?;
        if manifest.format_version != ADAPTER_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported adapter format_version {}",
                manifest.format_version
            )));
        }
        let set = AdapterSet {
            manifest,
            params: container::load(path)?,
        };
        set.validate()?;
        Ok(set)
    }

    /// Container bytes, used for isolation hashing.
    pub fn to_bytes(&self) -> Vec<u8> {
        container::encode(&self.params)
    }
}

pub fn save_adapter(set: &AdapterSet, path: &Path) -> Result<()> {
    set.save(path)
}

pub fn load_adapter(path: &Path) -> Result<AdapterSet> {
    AdapterSet::load(path)
}

/// Loads an adapter file destined for a `kind` slot of `model`, refusing on
/// any manifest disagreement.
pub fn load_adapter_for(model: &EncoderModel, path: &Path, kind: AdapterKind) -> Result<AdapterSet> {
    let set = AdapterSet::load(path)?;
    check_compatible(model, &set, kind, set.manifest.scheme)?;
    Ok(set)
}

fn refuse(model: &EncoderModel, set: &AdapterSet, message: String) -> Error {
    Error::AdapterMismatch {
        message,
        adapter: set.manifest.summary(),
        target: serde_json::to_string(&model.manifest()).unwrap_or_default(),
    }
}

fn check_compatible(model: &EncoderModel, set: &AdapterSet, kind: AdapterKind, scheme: Scheme) -> Result<()> {
    let m = &set.manifest;
    if m.kind != kind {
        return Err(refuse(
            model,
            set,
            format!("adapter `{}` is a {:?} adapter, slot expects {kind:?}", m.name, m.kind),
        ));
    }
    if m.hidden_dim != model.hidden_dim() {
        return Err(refuse(
            model,
            set,
            format!("adapter hidden size {} differs from model hidden size {}", m.hidden_dim, model.hidden_dim()),
        ));
    }
    if m.bottleneck_dim >= m.hidden_dim {
        return Err(refuse(model, set, format!("bottleneck dim {} not below hidden size", m.bottleneck_dim)));
    }
    if m.num_blocks != model.config().num_blocks {
        return Err(refuse(
            model,
            set,
            format!("adapter covers {} blocks, model has {}", m.num_blocks, model.config().num_blocks),
        ));
    }
    if m.scheme != scheme {
        return Err(refuse(
            model,
            set,
            format!("adapter placement {} differs from requested {}", m.scheme.label(), scheme.label()),
        ));
    }
    set.validate()
}

/// Language adapter (optional) feeding a task adapter (optional).
#[derive(Debug, Clone, Default)]
pub struct AdapterStackSpec {
    pub language: Option<AdapterSet>,
    pub task: Option<AdapterSet>,
}

impl AdapterStackSpec {
    pub fn task_only(task: AdapterSet) -> Self {
        AdapterStackSpec {
            language: None,
            task: Some(task),
        }
    }

    pub fn language_only(language: AdapterSet) -> Self {
        AdapterStackSpec {
            language: Some(language),
            task: None,
        }
    }

    pub fn stacked(language: AdapterSet, task: AdapterSet) -> Self {
        AdapterStackSpec {
            language: Some(language),
            task: Some(task),
        }
    }

    pub fn param_count(&self) -> usize {
        [&self.language, &self.task]
            .into_iter()
            .flatten()
            .map(AdapterSet::param_count)
            .sum()
    }
}

/// Anything whose trainable scalar count can be reported.
pub trait ParamCount {
    fn param_count(&self) -> usize;
}

impl ParamCount for BottleneckAdapter {
    fn param_count(&self) -> usize {
        BottleneckAdapter::param_count(self)
    }
}

impl ParamCount for InvertibleAdapter {
    fn param_count(&self) -> usize {
        InvertibleAdapter::param_count(self)
    }
}

impl ParamCount for AdapterSet {
    fn param_count(&self) -> usize {
        AdapterSet::param_count(self)
    }
}

impl ParamCount for AdapterStackSpec {
    fn param_count(&self) -> usize {
        AdapterStackSpec::param_count(self)
    }
}

pub fn count_params(item: &impl ParamCount) -> usize {
    item.param_count()
}

fn install(model: &mut EncoderModel, set: AdapterSet) -> Result<Attached> {
    let prefix = store_prefix(&set.manifest.name);
    for (name, t) in set.params.iter() {
        let mut t = t.clone();
        t.zero_grad();
        model.params.insert(format!("{prefix}{name}"), t)?;
    }
    Ok(Attached { manifest: set.manifest })
}

fn uninstall(model: &mut EncoderModel, att: &Attached) -> AdapterSet {
    let prefix = att.prefix();
    let params = model.params.extract_prefix(&prefix);
    let names: Vec<String> = model.params.names_with_prefix(&prefix).map(String::from).collect();
    for n in names {
        model.params.remove(&n);
    }
    AdapterSet {
        manifest: att.manifest.clone(),
        params,
    }
}

/// Populates the model's slots from `stack` using `placement`.
pub fn attach(model: &mut EncoderModel, stack: AdapterStackSpec, placement: PlacementConfig) -> Result<()> {
    let existing = model.scheme_in_use();
    if let Some(s) = existing.filter(|s| *s != placement.scheme) {
        return Err(Error::contract(format!(
            "model slots already follow {} placement, cannot attach {}",
            s.label(),
            placement.scheme.label()
        )));
    }
    let occupied_by = |att: &Option<Attached>| -> Option<String> {
        att.as_ref().map(|a| {
            let slots: Vec<String> = PlacementConfig::new(a.manifest.scheme)
                .occupied(a.manifest.num_blocks)
                .iter()
                .map(|(b, p)| format!("block.{b}.{}", p.as_str()))
                .collect();
            format!("{} already holds adapter `{}`", slots.join(", "), a.manifest.name)
        })
    };
    if let (Some(set), Some(msg)) = (&stack.language, occupied_by(&model.language)) {
        return Err(Error::contract(format!("cannot attach language adapter `{}`: {msg}", set.name())));
    }
    if let (Some(set), Some(msg)) = (&stack.task, occupied_by(&model.task)) {
        return Err(Error::contract(format!("cannot attach task adapter `{}`: {msg}", set.name())));
    }
    if let Some(set) = &stack.language {
        check_compatible(model, set, AdapterKind::Language, placement.scheme)?;
    }
    if let Some(set) = &stack.task {
        check_compatible(model, set, AdapterKind::Task, placement.scheme)?;
    }
    let names: Vec<&str> = [&stack.language, &stack.task]
        .into_iter()
        .flatten()
        .map(AdapterSet::name)
        .chain([&model.language, &model.task].into_iter().flatten().map(|a| a.manifest.name.as_str()))
        .collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::contract(format!("adapter name `{n}` used twice in one model")));
        }
    }
    if let Some(set) = stack.language {
        model.language = Some(install(model, set)?);
    }
    if let Some(set) = stack.task {
        model.task = Some(install(model, set)?);
    }
    Ok(())
}

/// Replaces every language-kind unit (including the invertible adapter) and
/// returns the set that was removed. Task adapter and backbone entries are
/// untouched.
pub fn swap_language_adapter(model: &mut EncoderModel, new_language: AdapterSet) -> Result<AdapterSet> {
    let current = model
        .language
        .clone()
        .ok_or_else(|| Error::contract("swap requested but the model has no language adapter"))?;
    check_compatible(model, &new_language, AdapterKind::Language, current.manifest.scheme)?;
    if model
        .task
        .as_ref()
        .is_some_and(|t| t.manifest.name == new_language.manifest.name)
    {
        return Err(Error::contract("language adapter name collides with the task adapter"));
    }
    let old = uninstall(model, &current);
    model.language = None;
    model.language = Some(install(model, new_language)?);
    Ok(old)
}

/// Removes the adapter of `kind` and returns its current weights.
pub fn detach(model: &mut EncoderModel, kind: AdapterKind) -> Result<AdapterSet> {
    let slot = match kind {
        AdapterKind::Language => &mut model.language,
        AdapterKind::Task => &mut model.task,
    };
    let att = slot
        .take()
        .ok_or_else(|| Error::contract(format!("no {kind:?} adapter attached")))?;
    Ok(uninstall(model, &att))
}

/// Copy of the currently attached adapter of `kind`, with live weights.
pub fn extract(model: &EncoderModel, kind: AdapterKind) -> Option<AdapterSet> {
    let att = match kind {
        AdapterKind::Language => model.language.as_ref(),
        AdapterKind::Task => model.task.as_ref(),
    }?;
    Some(AdapterSet {
        manifest: att.manifest.clone(),
        params: model.params.extract_prefix(&att.prefix()),
    })
}

/// Which experimental setup's freezing rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FreezeSetup {
    /// Full fine-tuning: backbone and QA head train.
    A,
    /// Task adapter and QA head train.
    B,
    /// Language adapter and QA head train.
    CLang,
    /// Task adapter (stacked on a frozen language adapter) and QA head train.
    CStack,
    /// As `CStack`, on the source-language adapter.
    DTrain,
    /// Nothing trains.
    DTransfer,
}

/// Sets the model's trainable mask for `setup`, checking that the adapters
/// it needs are attached.
pub fn apply_freeze_policy(model: &mut EncoderModel, setup: FreezeSetup) -> Result<()> {
    let need = |att: &Option<Attached>, what: &str| -> Result<String> {
        att.as_ref()
            .map(Attached::prefix)
            .ok_or_else(|| Error::contract(format!("{setup:?} requires a {what} adapter")))
    };
    match setup {
        FreezeSetup::A => {
            model
                .params
                .set_trainable_where(|n| EncoderModel::is_backbone_param(n) || EncoderModel::is_head_param(n));
        }
        FreezeSetup::B => {
            let task = need(&model.task, "task")?;
            model
                .params
                .set_trainable_where(|n| n.starts_with(&task) || EncoderModel::is_head_param(n));
        }
        FreezeSetup::CLang => {
            let lang = need(&model.language, "language")?;
            model
                .params
                .set_trainable_where(|n| n.starts_with(&lang) || EncoderModel::is_head_param(n));
        }
        FreezeSetup::CStack | FreezeSetup::DTrain => {
            need(&model.language, "language")?;
            let task = need(&model.task, "task")?;
            model
                .params
                .set_trainable_where(|n| n.starts_with(&task) || EncoderModel::is_head_param(n));
        }
        FreezeSetup::DTransfer => model.params.freeze_all(),
    }
    Ok(())
}
