//! The global workspace: one encoder and one decoder per domain around a
//! shared 12-dimensional space, the four training objectives and the
//! ablation variants.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{Activation, DiffError, Graph, Init, Mlp, NodeId, ParamStore, Tensor};
use crate::seeds::derive_seed;
use crate::specialists::{domain_loss, Domain, LossKind, SpecialistError};

pub const GW_DIM: usize = 12;
/// Cosine clamp used by the literal contrastive objective.
pub const CONTRASTIVE_EPS: f64 = 1e-6;
pub const INFONCE_TEMPERATURE: f64 = 0.07;

const CHECKPOINT_MAGIC: &[u8; 8] = b"GWCKPT01";

#[derive(Debug, Error)]
pub enum GwError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("batch: {0}")]
    Batch(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Specialist(#[from] SpecialistError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// The two modalities a model connects: vision is always side 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Vision,
    Language,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Vision, Side::Language];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Side {
        match self {
            Side::Vision => Side::Language,
            Side::Language => Side::Vision,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    TranslationOnly,
    TransCont,
    TransFullCycles,
    TransDemiCycles,
    AllSupAllCycles,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::TranslationOnly,
        Variant::TransCont,
        Variant::TransFullCycles,
        Variant::TransDemiCycles,
        Variant::AllSupAllCycles,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::TranslationOnly => "translation_only",
            Variant::TransCont => "trans_cont",
            Variant::TransFullCycles => "trans_full_cycles",
            Variant::TransDemiCycles => "trans_demi_cycles",
            Variant::AllSupAllCycles => "all_sup_all_cycles",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    /// Which of (translation, contrastive, cycle, demi-cycle) the variant trains.
    pub fn active_terms(self) -> [bool; 4] {
        match self {
            Variant::TranslationOnly => [true, false, false, false],
            Variant::TransCont => [true, true, false, false],
            Variant::TransFullCycles => [true, false, true, false],
            Variant::TransDemiCycles => [true, false, false, true],
            Variant::AllSupAllCycles => [true, true, true, true],
        }
    }

    /// Encoders are pushed into one shared space, directly or through the
    /// demi-cycle.
    pub fn has_gw(self) -> bool {
        matches!(self, Variant::TransCont | Variant::TransDemiCycles | Variant::AllSupAllCycles)
    }

    pub fn uses_unpaired(self) -> bool {
        let [_, _, cy, dcy] = self.active_terms();
        cy || dcy
    }

    pub fn default_weights(self) -> LossWeights {
        let [tr, cont, cy, dcy] = self.active_terms().map(|a| if a { 1.0 } else { 0.0 });
        LossWeights { tr, cont, cy, dcy }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub tr: f64,
    pub cont: f64,
    pub cy: f64,
    pub dcy: f64,
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.tr, self.cont, self.cy, self.dcy]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let [tr, cont, cy, dcy] = self.as_array().map(|w| w * s);
        Self { tr, cont, cy, dcy }
    }

    /// Non-negative, finite, and zero exactly on the terms `variant` leaves out.
    pub fn validate_for(&self, variant: Variant) -> Result<(), GwError> {
        const NAMES: [&str; 4] = ["tr", "cont", "cy", "dcy"];
        for ((w, active), name) in self.as_array().into_iter().zip(variant.active_terms()).zip(NAMES) {
            if !w.is_finite() || w < 0.0 {
                return Err(GwError::Config(format!("weight alpha_{name} = {w} must be finite and non-negative")));
            }
            if active != (w > 0.0) {
                let want = if active { "positive" } else { "zero" };
                return Err(GwError::Config(format!("{variant} needs alpha_{name} {want}, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    #[default]
    Literal,
    Infonce,
}

impl ContrastiveMode {
    pub const ALL: [ContrastiveMode; 2] = [ContrastiveMode::Literal, ContrastiveMode::Infonce];

    pub fn name(self) -> &'static str {
        match self {
            ContrastiveMode::Literal => "literal",
            ContrastiveMode::Infonce => "infonce",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { hidden_width: 256, hidden_layers: 3 }
    }
}

impl Architecture {
    fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        d.push(output);
        d
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GwModel {
    pub domains: [Domain; 2],
    pub arch: Architecture,
    pub seed: u64,
    pub store: ParamStore,
    pub encoders: [Mlp; 2],
    pub decoders: [Mlp; 2],
}

impl GwModel {
    /// Fresh model with uniform `±1/sqrt(fan_in)` weights.
    pub fn new(vision: Domain, language: Domain, arch: Architecture, seed: u64) -> Result<Self, GwError> {
        if vision != Domain::Vision || language == Domain::Vision {
            return Err(GwError::Config(format!("cannot pair {} with {}", vision.name(), language.name())));
        }
        if arch.hidden_width == 0 || arch.hidden_layers == 0 {
            return Err(GwError::Config("hidden layers must be non-empty".into()));
        }
        let domains = [vision, language];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "gw-init", 0));
        let mut store = ParamStore::new();
        let mut net = |store: &mut ParamStore, name: String, dims: Vec<usize>| {
            Mlp::new(store, &name, &dims, Activation::Relu, Activation::Identity, Init::Uniform, &mut rng)
        };
        let mut encoders = Vec::new();
        let mut decoders = Vec::new();
        for d in domains {
            encoders.push(net(&mut store, format!("enc_{}", d.name()), arch.dims(d.latent_dim(), GW_DIM)));
            decoders.push(net(&mut store, format!("dec_{}", d.name()), arch.dims(GW_DIM, d.latent_dim())));
        }
        let pair = |v: Vec<Mlp>| -> [Mlp; 2] { v.try_into().expect("two domains") };
        Ok(Self { domains, arch, seed, store, encoders: pair(encoders), decoders: pair(decoders) })
    }

    /// Model whose encoders zero-pad into the workspace and whose decoders
    /// read back the leading coordinates, so every composition is an exact
    /// identity on the shared leading coordinates.
    pub fn identity_fixture(vision: Domain, language: Domain, arch: Architecture) -> Result<Self, GwError> {
        let mut m = Self::new(vision, language, arch, 0)?;
        if arch.hidden_width < 2 * GW_DIM {
            return Err(GwError::Config(format!("identity fixture needs hidden width >= {}", 2 * GW_DIM)));
        }
        let nets: Vec<Mlp> = m.encoders.iter().chain(m.decoders.iter()).cloned().collect();
        for net in nets {
            // split x into relu(x) and relu(-x), carry both, recombine
            let w = net.in_dim();
            let last = net.layers.len() - 1;
            for (i, layer) in net.layers.iter().enumerate() {
                let mut wt = Tensor::zeros(layer.out_dim, layer.in_dim);
                if i == 0 {
                    for k in 0..w {
                        wt.set(k, k, 1.0);
                        wt.set(k + w, k, -1.0);
                    }
                } else if i == last {
                    for k in 0..w.min(layer.out_dim) {
                        wt.set(k, k, 1.0);
                        wt.set(k, k + w, -1.0);
                    }
                } else {
                    for k in 0..2 * w {
                        wt.set(k, k, 1.0);
                    }
                }
                *m.store.get_mut(layer.weight) = wt;
                *m.store.get_mut(layer.bias) = Tensor::zeros(1, layer.out_dim);
            }
        }
        Ok(m)
    }

    pub fn domain(&self, side: Side) -> Domain {
        self.domains[side.index()]
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn encode_node(&self, g: &mut Graph, side: Side, x: NodeId) -> NodeId {
        self.encoders[side.index()].forward(g, &self.store, x)
    }

    pub fn decode_node(&self, g: &mut Graph, side: Side, h: NodeId) -> NodeId {
        self.decoders[side.index()].forward(g, &self.store, h)
    }

    /// `d_to(e_from(x))`; with `from == to` this is the demi-cycle.
    pub fn translate_node(&self, g: &mut Graph, from: Side, to: Side, x: NodeId) -> NodeId {
        let h = self.encode_node(g, from, x);
        self.decode_node(g, to, h)
    }

    pub fn encode(&self, side: Side, x: &Tensor) -> Tensor {
        self.encoders[side.index()].eval(&self.store, x)
    }

    pub fn decode(&self, side: Side, h: &Tensor) -> Tensor {
        self.decoders[side.index()].eval(&self.store, h)
    }

    pub fn translate(&self, from: Side, to: Side, x: &Tensor) -> Tensor {
        self.decode(to, &self.encode(from, x))
    }

    /// Translation to the other side and back.
    pub fn cycle(&self, side: Side, x: &Tensor) -> Tensor {
        self.translate(side.other(), side, &self.translate(side, side.other(), x))
    }

    fn check_width(&self, side: Side, t: &Tensor, what: &str) -> Result<(), GwError> {
        let want = self.domain(side).latent_dim();
        if t.cols() != want {
            return Err(GwError::Batch(format!(
                "{what}: {} batch has width {}, expected {want}",
                self.domain(side).name(),
                t.cols()
            )));
        }
        Ok(())
    }
}

/// Matched rows: row `i` of `v` and row `i` of `t` describe the same object.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    pub v: Tensor,
    pub t: Tensor,
}

impl PairedBatch {
    pub fn get(&self, side: Side) -> &Tensor {
        match side {
            Side::Vision => &self.v,
            Side::Language => &self.t,
        }
    }

    pub fn len(&self) -> usize {
        self.v.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Independent single-domain samples; either side may be empty.
#[derive(Clone, Debug, PartialEq)]
pub struct UnpairedBatch {
    pub v: Tensor,
    pub t: Tensor,
}

impl UnpairedBatch {
    pub fn get(&self, side: Side) -> &Tensor {
        match side {
            Side::Vision => &self.v,
            Side::Language => &self.t,
        }
    }
}

/// Directional translation losses `(v→t, t→v)` and their 0.5-average.
pub fn loss_translation(g: &mut Graph, m: &GwModel, batch: &PairedBatch) -> Result<(NodeId, [NodeId; 2]), GwError> {
    if batch.is_empty() || batch.t.rows() != batch.v.rows() {
        return Err(GwError::Batch(format!(
            "translation needs matched non-empty rows, got {} and {}",
            batch.v.rows(),
            batch.t.rows()
        )));
    }
    let mut dirs = Vec::with_capacity(2);
    for from in Side::BOTH {
        let to = from.other();
        m.check_width(from, batch.get(from), "translation")?;
        m.check_width(to, batch.get(to), "translation")?;
        let x = g.constant(batch.get(from).clone());
        let pred = m.translate_node(g, from, to, x);
        dirs.push(domain_loss(g, m.domain(to).loss_kind(), pred, batch.get(to))?);
    }
    let sum = g.add(dirs[0], dirs[1]);
    Ok((g.scale(sum, 0.5), [dirs[0], dirs[1]]))
}

/// Contrastive alignment of the two encoders over a paired batch.
pub fn loss_contrastive(
    g: &mut Graph,
    m: &GwModel,
    batch: &PairedBatch,
    mode: ContrastiveMode,
) -> Result<NodeId, GwError> {
    let b = batch.len();
    if b < 2 || batch.t.rows() != b {
        return Err(GwError::Batch(format!("contrastive loss needs at least 2 matched rows, got {b}")));
    }
    let xv = g.constant(batch.v.clone());
    let xt = g.constant(batch.t.clone());
    let hv = m.encode_node(g, Side::Vision, xv);
    let ht = m.encode_node(g, Side::Language, xt);
    Ok(contrastive_from_encodings(g, hv, ht, mode))
}

/// Contrastive loss between two already-encoded row-aligned batches.
pub fn contrastive_from_encodings(g: &mut Graph, hv: NodeId, ht: NodeId, mode: ContrastiveMode) -> NodeId {
    let b = g.value(hv).rows();
    let cos = g.cosine_matrix(hv, ht);
    match mode {
        ContrastiveMode::Literal => {
            let p = g.clamp(cos, CONTRASTIVE_EPS, 1.0 - CONTRASTIVE_EPS);
            let log_p = g.log(p);
            let neg = g.scale(p, -1.0);
            let one_minus = g.add_scalar(neg, 1.0);
            let log_q = g.log(one_minus);
            let eye = g.constant(Tensor::identity(b));
            let off = g.constant(Tensor::identity(b).map(|v| 1.0 - v));
            let diag = g.mul(log_p, eye);
            let rest = g.mul(log_q, off);
            let both = g.add(diag, rest);
            let total = g.sum(both);
            g.scale(total, -1.0 / (b * b) as f64)
        }
        ContrastiveMode::Infonce => {
            let logits = g.scale(cos, 1.0 / INFONCE_TEMPERATURE);
            let targets: Vec<usize> = (0..b).collect();
            let rows = g.softmax_ce(logits, &targets);
            let lt = g.transpose(logits);
            let cols = g.softmax_ce(lt, &targets);
            let sum = g.add(rows, cols);
            g.scale(sum, 0.5)
        }
    }
}

/// `0.5 * (L_v + L_t)` of the per-side domain loss between `x` and `f(x)`;
/// an empty side contributes 0.
fn per_side(
    g: &mut Graph,
    m: &GwModel,
    batch: &UnpairedBatch,
    what: &str,
    mut f: impl FnMut(&mut Graph, Side, NodeId) -> NodeId,
) -> Result<NodeId, GwError> {
    let mut terms = Vec::new();
    for side in Side::BOTH {
        let x = batch.get(side);
        if x.rows() == 0 {
            continue;
        }
        m.check_width(side, x, what)?;
        let xn = g.constant(x.clone());
        let out = f(g, side, xn);
        terms.push(domain_loss(g, m.domain(side).loss_kind(), out, x)?);
    }
    let sum = match terms.as_slice() {
        [] => return Err(GwError::Batch(format!("{what}: both unpaired batches are empty"))),
        [one] => *one,
        [a, b] => g.add(*a, *b),
        _ => unreachable!("two sides"),
    };
    Ok(g.scale(sum, 0.5))
}

pub fn loss_cycle(g: &mut Graph, m: &GwModel, batch: &UnpairedBatch) -> Result<NodeId, GwError> {
    per_side(g, m, batch, "cycle", |g, side, x| {
        let there = m.translate_node(g, side, side.other(), x);
        m.translate_node(g, side.other(), side, there)
    })
}

pub fn loss_demicycle(g: &mut Graph, m: &GwModel, batch: &UnpairedBatch) -> Result<NodeId, GwError> {
    per_side(g, m, batch, "demi-cycle", |g, side, x| m.translate_node(g, side, side, x))
}

/// Raw objective values; `None` for terms that were not evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub tr: Option<f64>,
    pub tr_dirs: Option<[f64; 2]>,
    pub cont: Option<f64>,
    pub cy: Option<f64>,
    pub dcy: Option<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [Option<f64>; 4] {
        [self.tr, self.cont, self.cy, self.dcy]
    }
}

/// Weighted objective. Zero-weight terms are skipped unless `report_all`,
/// in which case they are computed without gradient tracking.
pub fn total_loss(
    g: &mut Graph,
    m: &GwModel,
    weights: &LossWeights,
    mode: ContrastiveMode,
    paired: &PairedBatch,
    unpaired: &UnpairedBatch,
    report_all: bool,
) -> Result<(NodeId, LossBreakdown), GwError> {
    for (w, name) in weights.as_array().into_iter().zip(["tr", "cont", "cy", "dcy"]) {
        if !w.is_finite() || w < 0.0 {
            return Err(GwError::Config(format!("weight alpha_{name} = {w} must be finite and non-negative")));
        }
    }
    let ws = weights.as_array();
    let mut out = LossBreakdown::default();
    let mut weighted: Vec<NodeId> = Vec::new();
    let mut nodes: [Option<NodeId>; 4] = [None; 4];
    for (k, &w) in ws.iter().enumerate() {
        if w == 0.0 && !report_all {
            continue;
        }
        let build = |g: &mut Graph| -> Result<(NodeId, Option<[NodeId; 2]>), GwError> {
            Ok(match k {
                0 => {
                    let (n, d) = loss_translation(g, m, paired)?;
                    (n, Some(d))
                }
                1 => (loss_contrastive(g, m, paired, mode)?, None),
                2 => (loss_cycle(g, m, unpaired)?, None),
                _ => (loss_demicycle(g, m, unpaired)?, None),
            })
        };
        let (node, dirs) = if w == 0.0 { g.no_grad(build)? } else { build(g)? };
        if let Some([a, b]) = dirs {
            out.tr_dirs = Some([g.value(a).item(), g.value(b).item()]);
        }
        nodes[k] = Some(node);
        if w != 0.0 {
            weighted.push(g.scale(node, w));
        }
    }
    let vals = nodes.map(|n| n.map(|n| g.value(n).item()));
    [out.tr, out.cont, out.cy, out.dcy] = vals;
    let total = match weighted.split_first() {
        None => g.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => rest.iter().fold(first, |acc, &n| g.add(acc, n)),
    };
    out.total = g.value(total).item();
    Ok((total, out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub variant: Variant,
    pub domains: [Domain; 2],
    pub dims: [usize; 2],
    pub gw_dim: usize,
    pub arch: Architecture,
    pub init_seed: u64,
    pub seeds: Vec<(String, u64)>,
    pub weights: LossWeights,
    pub contrastive: ContrastiveMode,
    pub params: Vec<(String, usize, usize)>,
}

/// Magic, little-endian header length, JSON header, then every parameter as
/// little-endian f64 in store order.
pub fn checkpoint_bytes(
    m: &GwModel,
    variant: Variant,
    weights: LossWeights,
    contrastive: ContrastiveMode,
    seeds: &[(&str, u64)],
) -> Vec<u8> {
    let header = CheckpointHeader {
        variant,
        domains: m.domains,
        dims: m.domains.map(Domain::latent_dim),
        gw_dim: GW_DIM,
        arch: m.arch,
        init_seed: m.seed,
        seeds: seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        weights,
        contrastive,
        params: m
            .store
            .ids()
            .map(|id| (m.store.name(id).into(), m.store.get(id).rows(), m.store.get(id).cols()))
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * m.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in m.store.flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_checkpoint<W: Write>(bytes: &[u8], mut w: W) -> Result<(), GwError> {
    w.write_all(bytes)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, GwModel), GwError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(GwError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 24 {
        return Err(GwError::Checkpoint(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| GwError::Checkpoint(format!("header: {e}")))?;
    let mut model = GwModel::new(header.domains[0], header.domains[1], header.arch, header.init_seed)?;
    let layout: Vec<(String, usize, usize)> = model
        .store
        .ids()
        .map(|id| (model.store.name(id).into(), model.store.get(id).rows(), model.store.get(id).cols()))
        .collect();
    if layout != header.params {
        return Err(GwError::Checkpoint("parameter layout does not match the architecture".into()));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() != 8 * model.param_count() {
        return Err(GwError::Checkpoint(format!(
            "expected {} values, found {} bytes",
            model.param_count(),
            rest.len()
        )));
    }
    let flat: Vec<f64> = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    model.store.load_flat(&flat)?;
    Ok((header, model))
}

/// Loss kind of each side, for callers that evaluate without a graph.
pub fn loss_kinds(m: &GwModel) -> [LossKind; 2] {
    m.domains.map(Domain::loss_kind)
}
