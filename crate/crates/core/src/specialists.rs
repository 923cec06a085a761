//! Frozen unimodal modules whose latent spaces the workspace connects.
//!
//! The vision specialist is a seeded tanh network over the proto vector, the
//! proto specialist is the identity, and the text specialist embeds the parsed
//! caption (quantized bins plus grammar choices). None of them is ever trained.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{Activation, Graph, Init, Linear, Mlp, NodeId, ParamStore, Tensor};
use crate::manifest::sha256_hex;
use crate::seeds::{derive_seed, rng_for};
use crate::shapes::{
    encode_proto, sample_attributes, AttributeBins, Attributes, CaptionParser, Captioner, GrammarTrace, Record,
    RotationBin, ShapeConfig, ShapesError, CATEGORY_SLOTS, GRID, PROTO_DIM,
};

pub const VISION_DIM: usize = 12;
pub const TEXT_DIM: usize = 12;
/// Samples used to measure output spread when calibrating.
pub const CALIBRATION_SAMPLES: usize = 10_000;
/// Target per-coordinate standard deviation after calibration.
pub const TARGET_STD: f64 = 0.5;
/// Relative weight of grammar-choice features against attribute features.
const TRACE_WEIGHT: f64 = 0.2;

const SNAPSHOT_MAGIC: &[u8; 8] = b"GWSPEC01";

#[derive(Debug, Error)]
pub enum SpecialistError {
    #[error(transparent)]
    Shapes(#[from] ShapesError),
    #[error("{context}: expected width {expected}, found {found}")]
    DimMismatch { context: String, expected: usize, found: usize },
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Vision,
    Proto,
    Text,
}

impl Domain {
    pub fn latent_dim(self) -> usize {
        match self {
            Domain::Vision => VISION_DIM,
            Domain::Proto => PROTO_DIM,
            Domain::Text => TEXT_DIM,
        }
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            Domain::Proto => LossKind::MsePlusCategoryCe,
            _ => LossKind::Mse,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Vision => "vision",
            Domain::Proto => "proto",
            Domain::Text => "text",
        }
    }

    pub fn short(self) -> char {
        match self {
            Domain::Vision => 'v',
            Domain::Proto => 'p',
            Domain::Text => 't',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    /// MSE over the continuous components plus softmax cross-entropy over
    /// the category slots, with the raw slot values used as logits.
    MsePlusCategoryCe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain: Domain,
    pub latent_dim: usize,
    pub loss_kind: LossKind,
    pub seed: u64,
    /// sha256 of the frozen-parameter snapshot; empty for the identity.
    pub params_hash: String,
}

/// Batch-mean reconstruction loss of `pred` against constant `target`.
pub fn domain_loss(g: &mut Graph, kind: LossKind, pred: NodeId, target: &Tensor) -> Result<NodeId, SpecialistError> {
    let (rows, cols) = g.value(pred).shape();
    if target.shape() != (rows, cols) {
        return Err(SpecialistError::DimMismatch {
            context: "domain loss".into(),
            expected: target.cols(),
            found: cols,
        });
    }
    match kind {
        LossKind::Mse => {
            let t = g.constant(target.clone());
            Ok(g.mse(pred, t))
        }
        LossKind::MsePlusCategoryCe => {
            if cols != PROTO_DIM {
                return Err(SpecialistError::DimMismatch {
                    context: "proto loss".into(),
                    expected: PROTO_DIM,
                    found: cols,
                });
            }
            let labels = category_labels(target);
            let cont_target = g.constant(slice_cols(target, CATEGORY_SLOTS, cols));
            let cont = g.slice_cols(pred, CATEGORY_SLOTS, cols);
            let mse = g.mse(cont, cont_target);
            let logits = g.slice_cols(pred, 0, CATEGORY_SLOTS);
            let ce = g.softmax_ce(logits, &labels);
            Ok(g.add(mse, ce))
        }
    }
}

/// Same value as [`domain_loss`] without a tape, per term: `(mse, ce)`.
pub fn domain_loss_terms(kind: LossKind, pred: &Tensor, target: &Tensor) -> (f64, f64) {
    let mut g = Graph::new();
    g.no_grad(|g| {
        let p = g.constant(pred.clone());
        match kind {
            LossKind::Mse => {
                let t = g.constant(target.clone());
                let m = g.mse(p, t);
                (g.value(m).item(), 0.0)
            }
            LossKind::MsePlusCategoryCe => {
                let cols = pred.cols();
                let cont = g.slice_cols(p, CATEGORY_SLOTS, cols);
                let t = g.constant(slice_cols(target, CATEGORY_SLOTS, cols));
                let m = g.mse(cont, t);
                let logits = g.slice_cols(p, 0, CATEGORY_SLOTS);
                let ce = g.softmax_ce(logits, &category_labels(target));
                (g.value(m).item(), g.value(ce).item())
            }
        }
    })
}

/// Cross-entropy of a perfect proto prediction: `ln(1 + 2e^-2)`.
pub fn proto_ce_floor() -> f64 {
    (1.0 + 2.0 * (-2.0f64).exp()).ln()
}

fn category_labels(target: &Tensor) -> Vec<usize> {
    (0..target.rows()).map(|r| crate::shapes::argmax(&target.row_slice(r)[..CATEGORY_SLOTS])).collect()
}

fn slice_cols(t: &Tensor, start: usize, end: usize) -> Tensor {
    let mut data = Vec::with_capacity(t.rows() * (end - start));
    for r in 0..t.rows() {
        data.extend_from_slice(&t.row_slice(r)[start..end]);
    }
    Tensor::from_vec(t.rows(), end - start, data)
}

fn column_scales(out: &Tensor) -> Vec<f64> {
    let n = out.rows() as f64;
    (0..out.cols())
        .map(|c| {
            let mean = (0..out.rows()).map(|r| out.get(r, c)).sum::<f64>() / n;
            let var = (0..out.rows()).map(|r| (out.get(r, c) - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                TARGET_STD / var.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

fn apply_scales(mut t: Tensor, scales: &[f64]) -> Tensor {
    for r in 0..t.rows() {
        for (v, s) in t.row_slice_mut(r).iter_mut().zip(scales) {
            *v *= s;
        }
    }
    t
}

fn probe_attributes(seed: u64, cfg: &ShapeConfig) -> Vec<Attributes> {
    (0..CALIBRATION_SAMPLES as u64)
        .map(|i| sample_attributes(&mut rng_for(seed, "calibration-probe", i), cfg).expect("validated config"))
        .collect()
}

/// Frozen tanh network from proto vectors to a 12-dimensional latent.
#[derive(Clone, Debug)]
pub struct VisionEmbedder {
    pub seed: u64,
    store: ParamStore,
    mlp: Mlp,
    scales: Vec<f64>,
    shape: ShapeConfig,
}

impl VisionEmbedder {
    pub fn new(seed: u64, shape: ShapeConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "vision-weights", 0));
        let mut store = ParamStore::new();
        let mlp = Mlp::new(
            &mut store,
            "vision",
            &[PROTO_DIM, 32, 32, VISION_DIM],
            Activation::Tanh,
            Activation::Identity,
            Init::Normal,
            &mut rng,
        );
        store.freeze_all();
        let mut me = Self { seed, store, mlp, scales: vec![1.0; VISION_DIM], shape };
        let probe: Vec<Attributes> = probe_attributes(seed, &shape);
        me.scales = column_scales(&me.raw(&probe));
        me
    }

    fn raw(&self, attrs: &[Attributes]) -> Tensor {
        let rows: Vec<[f64; PROTO_DIM]> = attrs.iter().map(|a| encode_proto(a, &self.shape).0).collect();
        self.mlp.eval(&self.store, &Tensor::from_rows(&rows))
    }

    pub fn embed_batch(&self, attrs: &[Attributes]) -> Tensor {
        apply_scales(self.raw(attrs), &self.scales)
    }

    pub fn embed(&self, a: &Attributes) -> Vec<f64> {
        self.embed_batch(std::slice::from_ref(a)).into_vec()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn snapshot(&self) -> Vec<u8> {
        snapshot_bytes(Domain::Vision, self.seed, &self.store, &self.scales)
    }
}

/// Frozen linear map plus tanh over caption features.
#[derive(Clone, Debug)]
pub struct TextEmbedder {
    pub seed: u64,
    store: ParamStore,
    layer: Linear,
    scales: Vec<f64>,
    arities: Vec<usize>,
}

const BIN_FEATURES: usize = 9 + 2 * GRID + 4 + 16 + 16 + 72;

impl TextEmbedder {
    pub fn new(seed: u64, captioner: &Captioner) -> Self {
        let arities = captioner.grammar.arities().to_vec();
        let n_features = BIN_FEATURES + captioner.colors.len() + arities.iter().sum::<usize>();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "text-weights", 0));
        let mut store = ParamStore::new();
        let layer = Linear::new(&mut store, "text", n_features, TEXT_DIM, Init::Normal, &mut rng);
        store.freeze_all();
        let mut me = Self { seed, store, layer, scales: vec![1.0; TEXT_DIM], arities };
        let probe = probe_attributes(seed, &captioner.config);
        let feats: Vec<Vec<f64>> = probe
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let c = captioner.generate(a, &mut rng_for(seed, "calibration-caption", i as u64));
                me.features(&c.bins, &c.trace.canonical(&c.bins, &captioner.grammar), captioner.colors.len())
            })
            .collect();
        me.scales = column_scales(&me.raw(&feats));
        me
    }

    pub fn n_features(&self) -> usize {
        self.layer.in_dim
    }

    /// Concatenated one-hots: shape word, grid row and column, size class,
    /// rotation descriptor, color name, then every grammar slot.
    pub fn features(&self, bins: &AttributeBins, trace: &GrammarTrace, n_colors: usize) -> Vec<f64> {
        let mut f = vec![0.0; self.n_features()];
        let mut hot = |offset: usize, i: usize, v: f64| f[offset + i] = v;
        hot(0, bins.category.index() * 3 + bins.shape_word as usize, 1.0);
        hot(9, bins.location.0 as usize, 1.0);
        hot(9 + GRID, bins.location.1 as usize, 1.0);
        hot(9 + 2 * GRID, bins.size_class as usize, 1.0);
        let rot = 9 + 2 * GRID + 4;
        match bins.rotation {
            RotationBin::Cardinal(k) => hot(rot, k as usize, 1.0),
            RotationBin::Corner(k) => hot(rot + 16, k as usize, 1.0),
            RotationBin::Degrees(d) => hot(rot + 32, d as usize / 5, 1.0),
        }
        hot(BIN_FEATURES, bins.color as usize, 1.0);
        let mut off = BIN_FEATURES + n_colors;
        for (s, &a) in self.arities.iter().enumerate() {
            hot(off, trace.0[s] as usize, TRACE_WEIGHT);
            off += a;
        }
        f
    }

    fn raw(&self, feats: &[Vec<f64>]) -> Tensor {
        self.layer.eval(&self.store, &Tensor::from_rows(feats)).map(f64::tanh)
    }

    pub fn embed_features(&self, feats: &[Vec<f64>]) -> Tensor {
        apply_scales(self.raw(feats), &self.scales)
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn snapshot(&self) -> Vec<u8> {
        snapshot_bytes(Domain::Text, self.seed, &self.store, &self.scales)
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    domain: Domain,
    seed: u64,
    params: Vec<(String, usize, usize)>,
    scales: Vec<f64>,
}

/// Magic, little-endian header length, JSON header, then every parameter as
/// little-endian f64 in store order.
fn snapshot_bytes(domain: Domain, seed: u64, store: &ParamStore, scales: &[f64]) -> Vec<u8> {
    let header = SnapshotHeader {
        domain,
        seed,
        params: store
            .ids()
            .map(|id| (store.name(id).to_string(), store.get(id).rows(), store.get(id).cols()))
            .collect(),
        scales: scales.to_vec(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in store.flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parsed snapshot contents: domain, seed, parameter shapes and values.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub domain: Domain,
    pub seed: u64,
    pub shapes: Vec<(String, usize, usize)>,
    pub scales: Vec<f64>,
    pub values: Vec<f64>,
}

pub fn write_snapshot<W: Write>(bytes: &[u8], mut w: W) -> Result<(), SpecialistError> {
    w.write_all(bytes)?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<Snapshot, SpecialistError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(SpecialistError::Snapshot("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: SnapshotHeader =
        serde_json::from_slice(&json).map_err(|e| SpecialistError::Snapshot(format!("header: {e}")))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    let expected: usize = header.params.iter().map(|(_, a, b)| a * b).sum();
    if rest.len() != expected * 8 {
        return Err(SpecialistError::Snapshot(format!("expected {expected} values, found {} bytes", rest.len())));
    }
    let values = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(Snapshot { domain: header.domain, seed: header.seed, shapes: header.params, scales: header.scales, values })
}

/// All three specialists plus what the text one needs to read captions.
#[derive(Clone, Debug)]
pub struct Specialists {
    pub vision: VisionEmbedder,
    pub text: TextEmbedder,
    pub captioner: Captioner,
    pub parser: CaptionParser,
}

impl Specialists {
    pub fn new(seed: u64, shape: ShapeConfig) -> Result<Self, SpecialistError> {
        let captioner = Captioner::builtin(shape);
        let parser = CaptionParser::new(&captioner)?;
        Ok(Self {
            vision: VisionEmbedder::new(seed, shape),
            text: TextEmbedder::new(seed, &captioner),
            captioner,
            parser,
        })
    }

    pub fn spec(&self, domain: Domain) -> DomainSpec {
        let (seed, params_hash) = match domain {
            Domain::Vision => (self.vision.seed, sha256_hex(&self.vision.snapshot())),
            Domain::Text => (self.text.seed, sha256_hex(&self.text.snapshot())),
            Domain::Proto => (0, String::new()),
        };
        DomainSpec { domain, latent_dim: domain.latent_dim(), loss_kind: domain.loss_kind(), seed, params_hash }
    }

    /// Text latent of a caption string, through the parser.
    pub fn text_embed(&self, text: &str) -> Result<Vec<f64>, SpecialistError> {
        let (bins, trace) = self.parser.parse(text)?;
        let f = self.text.features(&bins, &trace, self.captioner.colors.len());
        Ok(self.text.embed_features(&[f]).into_vec())
    }

    /// Latents of `records` in `domain`, one row per record.
    pub fn latents(&self, domain: Domain, records: &[Record]) -> Result<Tensor, SpecialistError> {
        Ok(match domain {
            Domain::Vision => {
                let attrs: Vec<Attributes> = records.iter().map(|r| r.attrs).collect();
                self.vision.embed_batch(&attrs)
            }
            Domain::Proto => {
                let rows: Vec<[f64; PROTO_DIM]> = records.iter().map(|r| r.proto.0).collect();
                Tensor::from_rows(&rows)
            }
            Domain::Text => {
                let feats: Vec<Vec<f64>> = records
                    .iter()
                    .map(|r| {
                        let c = &r.caption;
                        let trace = c.trace.canonical(&c.bins, &self.captioner.grammar);
                        self.text.features(&c.bins, &trace, self.captioner.colors.len())
                    })
                    .collect();
                self.text.embed_features(&feats)
            }
        })
    }
}

/// Identity proto specialist.
pub fn proto_embed(p: &crate::shapes::ProtoVector) -> Vec<f64> {
    p.0.to_vec()
}
