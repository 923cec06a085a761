//! Odd-one-out triplets, the probe classifier and its baselines.

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::diffmath::{Activation, AdamConfig, AdamState, Graph, Init, Mlp, ParamStore, Tensor};
use crate::gw::{Architecture, GwModel, Side, GW_DIM};
use crate::seeds::{derive_seed, rng_for};
use crate::shapes::{argmax, ProtoVector, CATEGORY_SLOTS};
use crate::trainer::{f17, TrainData};

/// Distance between two different categories in the ±1 one-hot encoding.
pub const CATEGORY_DISTANCE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommonAttribute {
    Shape,
    Location,
    Size,
    Orientation,
    Color,
}

impl CommonAttribute {
    pub const ALL: [CommonAttribute; 5] = [
        CommonAttribute::Shape,
        CommonAttribute::Location,
        CommonAttribute::Size,
        CommonAttribute::Orientation,
        CommonAttribute::Color,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CommonAttribute::Shape => "shape",
            CommonAttribute::Location => "location",
            CommonAttribute::Size => "size",
            CommonAttribute::Orientation => "orientation",
            CommonAttribute::Color => "color",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }
}

fn category(p: &ProtoVector) -> usize {
    argmax(&p.0[..CATEGORY_SLOTS])
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Distance on one attribute in normalized proto coordinates. Multi-component
/// attributes (location, orientation, color) use the Euclidean distance over
/// their components.
pub fn attribute_distance(a: &ProtoVector, b: &ProtoVector, attr: CommonAttribute) -> f64 {
    let (a, b) = (&a.0, &b.0);
    match attr {
        CommonAttribute::Shape => {
            if argmax(&a[..CATEGORY_SLOTS]) == argmax(&b[..CATEGORY_SLOTS]) {
                0.0
            } else {
                CATEGORY_DISTANCE
            }
        }
        CommonAttribute::Location => euclid(&a[3..5], &b[3..5]),
        CommonAttribute::Size => (a[5] - b[5]).abs(),
        CommonAttribute::Color => euclid(&a[6..9], &b[6..9]),
        CommonAttribute::Orientation => euclid(&a[9..11], &b[9..11]),
    }
}

/// Smallest per-coordinate gap: the category counts as one coordinate
/// (0 or [`CATEGORY_DISTANCE`]), then each continuous component separately.
pub fn min_coordinate_distance(a: &ProtoVector, b: &ProtoVector) -> f64 {
    let cat = if category(a) == category(b) { 0.0 } else { CATEGORY_DISTANCE };
    a.0[CATEGORY_SLOTS..].iter().zip(&b.0[CATEGORY_SLOTS..]).map(|(x, y)| (x - y).abs()).fold(cat, f64::min)
}

/// Default far-pool size for a pool of `n` items.
pub fn far_pool_size(n: usize) -> usize {
    50.max(n / 1000)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OooTriplet {
    pub reference: usize,
    pub positive: usize,
    pub negative: usize,
    pub common: CommonAttribute,
    /// Slot (0..3) where the negative is shown; the reference and positive
    /// fill the remaining slots in that order.
    pub odd_position: u8,
}

impl OooTriplet {
    /// Item indices in presentation order.
    pub fn ordered(&self) -> [usize; 3] {
        let mut out = [self.reference, self.positive, self.positive];
        let mut rest = [self.reference, self.positive].into_iter();
        for (slot, o) in out.iter_mut().enumerate() {
            *o = if slot == self.odd_position as usize { self.negative } else { rest.next().expect("two items") };
        }
        out
    }
}

/// Candidates scored by `min(d(x, ref), d(x, pos))`, sorted descending with
/// ties broken by smaller index; returns the first `far`.
pub fn far_candidates(protos: &[ProtoVector], reference: usize, positive: usize, far: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..protos.len())
        .filter(|&j| j != reference && j != positive)
        .map(|j| {
            let d = min_coordinate_distance(&protos[j], &protos[reference])
                .min(min_coordinate_distance(&protos[j], &protos[positive]));
            (d, j)
        })
        .collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    let far = far.min(scored.len());
    if far < scored.len() {
        scored.select_nth_unstable_by(far, order);
        scored.truncate(far);
    }
    scored.sort_unstable_by(order);
    scored.into_iter().map(|(_, j)| j).collect()
}

/// One triplet drawn with `rng`.
pub fn draw_triplet<R: Rng + ?Sized>(protos: &[ProtoVector], far: usize, rng: &mut R) -> OooTriplet {
    let n = protos.len();
    let reference = rng.random_range(0..n);
    let common = *CommonAttribute::ALL.choose(rng).expect("non-empty");
    let mut best = f64::INFINITY;
    let mut ties = Vec::new();
    for (j, p) in protos.iter().enumerate() {
        if j == reference {
            continue;
        }
        let d = attribute_distance(&protos[reference], p, common);
        if d < best {
            best = d;
            ties.clear();
        }
        if d == best {
            ties.push(j);
        }
    }
    let positive = *ties.choose(rng).expect("pool has another item");
    let pool = far_candidates(protos, reference, positive, far);
    let negative = *pool.choose(rng).expect("far pool non-empty");
    let odd_position = rng.random_range(0..3u8);
    OooTriplet { reference, positive, negative, common, odd_position }
}

/// `count` triplets over `protos`; triplet `i` depends only on `(seed, stream, i)`.
pub fn build_triplets(
    protos: &[ProtoVector],
    count: usize,
    far: usize,
    seed: u64,
    stream: &str,
) -> Result<Vec<OooTriplet>, EvalError> {
    if far == 0 || protos.len() <= far + 2 {
        return Err(EvalError::Config(format!(
            "odd-one-out pool of {} items needs more than far-pool size {far} + 2",
            protos.len()
        )));
    }
    Ok((0..count as u64).into_par_iter().map(|i| draw_triplet(protos, far, &mut rng_for(seed, stream, i))).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OooDataset {
    pub far: usize,
    /// Indices into the training records.
    pub train: Vec<OooTriplet>,
    /// Indices into the test records.
    pub test: Vec<OooTriplet>,
}

/// Training triplets come from `train_protos` and test triplets from
/// `test_protos`, both with far-pool size `far`.
pub fn build_ooo_dataset(
    train_protos: &[ProtoVector],
    test_protos: &[ProtoVector],
    n_train: usize,
    n_test: usize,
    far: usize,
    seed: u64,
) -> Result<OooDataset, EvalError> {
    Ok(OooDataset {
        far,
        train: build_triplets(train_protos, n_train, far, seed, "ooo-train")?,
        test: build_triplets(test_protos, n_test, far, seed, "ooo-test")?,
    })
}

pub const TRIPLETS_HEADER: &str = "split,reference,positive,negative,common_attribute,odd_position";

pub fn triplets_csv(ds: &OooDataset) -> Vec<u8> {
    let mut out = format!("{TRIPLETS_HEADER}\n");
    for (split, list) in [("train", &ds.train), ("test", &ds.test)] {
        for t in list {
            out.push_str(&format!(
                "{split},{},{},{},{},{}\n",
                t.reference,
                t.positive,
                t.negative,
                t.common.name(),
                t.odd_position
            ));
        }
    }
    out.into_bytes()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden: 16, steps: 5000, batch_size: 64, learning_rate: 1e-3, seed: 0 }
    }
}

/// Which representation feeds each triplet slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OooMode {
    Vvv,
    Ttt,
    Ttv,
}

impl OooMode {
    pub const ALL: [OooMode; 3] = [OooMode::Vvv, OooMode::Ttt, OooMode::Ttv];

    pub fn name(self) -> &'static str {
        match self {
            OooMode::Vvv => "vvv",
            OooMode::Ttt => "ttt",
            OooMode::Ttv => "ttv",
        }
    }
}

/// Odd-one-out classifier: an optional per-item encoder shared across the
/// three slots, then a probe over the concatenated slot features.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub store: ParamStore,
    pub encoder: Option<Mlp>,
    pub probe: Mlp,
}

impl Classifier {
    /// Probe over `item_dim`-wide items, optionally behind a trainable
    /// encoder of shape `item_dim -> arch -> GW_DIM`.
    pub fn new(item_dim: usize, encoder: Option<Architecture>, cfg: &ProbeConfig) -> Self {
        let mut rng = rng_for(cfg.seed, "ooo-classifier-init", 0);
        let mut store = ParamStore::new();
        let encoder = encoder.map(|arch| {
            let mut dims = vec![item_dim];
            dims.extend(std::iter::repeat_n(arch.hidden_width, arch.hidden_layers));
            dims.push(GW_DIM);
            Mlp::new(&mut store, "ooo_enc", &dims, Activation::Relu, Activation::Identity, Init::Uniform, &mut rng)
        });
        let feat = encoder.as_ref().map_or(item_dim, Mlp::out_dim);
        let probe = Mlp::new(
            &mut store,
            "ooo_probe",
            &[3 * feat, cfg.hidden, 3],
            Activation::Relu,
            Activation::Identity,
            Init::Uniform,
            &mut rng,
        );
        Self { store, encoder, probe }
    }

    pub fn trainable_count(&self) -> usize {
        self.store.trainable_scalar_count()
    }

    fn logits(&self, g: &mut Graph, slots: [Tensor; 3]) -> crate::diffmath::NodeId {
        let parts: Vec<_> = slots
            .into_iter()
            .map(|t| {
                let x = g.constant(t);
                match &self.encoder {
                    Some(enc) => enc.forward(g, &self.store, x),
                    None => x,
                }
            })
            .collect();
        let x = g.concat_cols(&parts);
        self.probe.forward(g, &self.store, x)
    }

    /// Predicted odd slot for each row of the slot tables.
    pub fn predict(&self, slots: [Tensor; 3]) -> Vec<usize> {
        let mut g = Graph::new();
        let out = g.no_grad(|g| self.logits(g, slots));
        let v = g.value(out);
        (0..v.rows()).map(|r| argmax(v.row_slice(r))).collect()
    }
}

/// Slot tables for `triplets`: row `i` of slot `s` is the feature of the item
/// shown in slot `s`, taken from `sources[s]`.
pub fn slot_tables(triplets: &[OooTriplet], sources: [&Tensor; 3]) -> [Tensor; 3] {
    std::array::from_fn(|s| {
        let idx: Vec<usize> = triplets.iter().map(|t| t.ordered()[s]).collect();
        sources[s].select_rows(&idx)
    })
}

fn labels(triplets: &[OooTriplet]) -> Vec<usize> {
    triplets.iter().map(|t| t.odd_position as usize).collect()
}

/// Trains `clf` with Adam on softmax cross-entropy over the odd slot,
/// drawing batches with replacement. `items` holds one feature row per item.
pub fn train_classifier(
    clf: &mut Classifier,
    items: &Tensor,
    triplets: &[OooTriplet],
    cfg: &ProbeConfig,
) -> Result<(), EvalError> {
    if triplets.is_empty() || cfg.batch_size == 0 {
        return Err(EvalError::Config("probe training needs triplets and a positive batch size".into()));
    }
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut rng = rng_for(cfg.seed, "ooo-batches", 0);
    for _ in 0..cfg.steps {
        let batch: Vec<OooTriplet> =
            (0..cfg.batch_size).map(|_| triplets[rng.random_range(0..triplets.len())]).collect();
        let mut g = Graph::new();
        let logits = clf.logits(&mut g, slot_tables(&batch, [items; 3]));
        let loss = g.softmax_ce(logits, &labels(&batch));
        let grads = g.backward(loss)?;
        adam.step(&mut clf.store, &grads)?;
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], triplets: &[OooTriplet]) -> f64 {
    if triplets.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(triplets).filter(|(p, t)| **p == t.odd_position as usize).count();
    hits as f64 / triplets.len() as f64
}

/// Which slot is vision-encoded in `ttv` mode for triplet `i`.
pub fn ttv_vision_slot(seed: u64, i: usize) -> usize {
    rng_for(seed, "ttv-slot", i as u64).random_range(0..3)
}

/// Accuracy of a probe (no encoder) given per-item vision and language
/// features.
pub fn eval_ooo(
    clf: &Classifier,
    vision: &Tensor,
    language: &Tensor,
    triplets: &[OooTriplet],
    mode: OooMode,
    seed: u64,
) -> f64 {
    let pred = match mode {
        OooMode::Vvv => clf.predict(slot_tables(triplets, [vision; 3])),
        OooMode::Ttt => clf.predict(slot_tables(triplets, [language; 3])),
        OooMode::Ttv => {
            let v = slot_tables(triplets, [vision; 3]);
            let t = slot_tables(triplets, [language; 3]);
            let chosen: Vec<usize> = (0..triplets.len()).map(|i| ttv_vision_slot(seed, i)).collect();
            let mixed = std::array::from_fn(|s| {
                let mut out = t[s].clone();
                for (i, &c) in chosen.iter().enumerate() {
                    if c == s {
                        out.row_slice_mut(i).copy_from_slice(v[s].row_slice(i));
                    }
                }
                out
            });
            clf.predict(mixed)
        }
    };
    accuracy(&pred, triplets)
}

/// Per-item latents for the odd-one-out pools, per side.
#[derive(Clone, Debug)]
pub struct OooInputs {
    pub train: [Tensor; 2],
    pub test: [Tensor; 2],
}

impl OooInputs {
    pub fn from_data(data: &TrainData) -> Self {
        Self { train: data.train.clone(), test: data.test.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OooScores {
    pub vvv_train: f64,
    pub vvv: f64,
    pub ttt: f64,
    pub ttv: f64,
}

impl OooScores {
    pub fn get(&self, mode: OooMode) -> f64 {
        match mode {
            OooMode::Vvv => self.vvv,
            OooMode::Ttt => self.ttt,
            OooMode::Ttv => self.ttv,
        }
    }
}

/// Trains a `vvv` probe on the frozen encoders of `model` and scores it in
/// every mode on the test triplets.
pub fn ooo_for_model(
    model: &GwModel,
    inputs: &OooInputs,
    ds: &OooDataset,
    cfg: &ProbeConfig,
) -> Result<OooScores, EvalError> {
    let enc = |side: Side, pool: &[Tensor; 2]| model.encode(side, &pool[side.index()]);
    let (train_v, test_v, test_t) =
        (enc(Side::Vision, &inputs.train), enc(Side::Vision, &inputs.test), enc(Side::Language, &inputs.test));
    let mut clf = Classifier::new(GW_DIM, None, cfg);
    train_classifier(&mut clf, &train_v, &ds.train, cfg)?;
    let ttv_seed = derive_seed(cfg.seed, "ttv", 0);
    Ok(OooScores {
        vvv_train: accuracy(&clf.predict(slot_tables(&ds.train, [&train_v; 3])), &ds.train),
        vvv: eval_ooo(&clf, &test_v, &test_t, &ds.test, OooMode::Vvv, ttv_seed),
        ttt: eval_ooo(&clf, &test_v, &test_t, &ds.test, OooMode::Ttt, ttv_seed),
        ttv: eval_ooo(&clf, &test_v, &test_t, &ds.test, OooMode::Ttv, ttv_seed),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Encoder trained jointly with the probe on the task.
    TaskOptimizedEncoder,
    /// Probe directly on the vision latents.
    NoEncoder,
    /// Probe behind a frozen, randomly initialized encoder.
    RandomEncoder,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::TaskOptimizedEncoder, Baseline::NoEncoder, Baseline::RandomEncoder];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::TaskOptimizedEncoder => "task_optimized_encoder",
            Baseline::NoEncoder => "no_encoder",
            Baseline::RandomEncoder => "random_encoder",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub baseline: Baseline,
    pub trainable_params: usize,
    pub vvv_train: f64,
    pub vvv: f64,
}

/// The three vision-only baselines, each scored in `vvv` on the test
/// triplets. `arch` is the workspace encoder shape.
pub fn run_ooo_baselines(
    inputs: &OooInputs,
    ds: &OooDataset,
    arch: Architecture,
    cfg: &ProbeConfig,
) -> Result<Vec<BaselineRow>, EvalError> {
    let (train_v, test_v) = (&inputs.train[0], &inputs.test[0]);
    let dim = train_v.cols();
    Baseline::ALL
        .into_iter()
        .map(|b| {
            let (mut clf, train_x, test_x) = match b {
                Baseline::TaskOptimizedEncoder => {
                    (Classifier::new(dim, Some(arch), cfg), train_v.clone(), test_v.clone())
                }
                Baseline::NoEncoder => (Classifier::new(dim, None, cfg), train_v.clone(), test_v.clone()),
                Baseline::RandomEncoder => {
                    let mut rng = rng_for(cfg.seed, "ooo-random-encoder", 0);
                    let mut store = ParamStore::new();
                    let mut dims = vec![dim];
                    dims.extend(std::iter::repeat_n(arch.hidden_width, arch.hidden_layers));
                    dims.push(GW_DIM);
                    let enc = Mlp::new(
                        &mut store,
                        "random_enc",
                        &dims,
                        Activation::Relu,
                        Activation::Identity,
                        Init::Uniform,
                        &mut rng,
                    );
                    (Classifier::new(GW_DIM, None, cfg), enc.eval(&store, train_v), enc.eval(&store, test_v))
                }
            };
            train_classifier(&mut clf, &train_x, &ds.train, cfg)?;
            Ok(BaselineRow {
                baseline: b,
                trainable_params: clf.trainable_count(),
                vvv_train: accuracy(&clf.predict(slot_tables(&ds.train, [&train_x; 3])), &ds.train),
                vvv: accuracy(&clf.predict(slot_tables(&ds.test, [&test_x; 3])), &ds.test),
            })
        })
        .collect()
}

pub const BASELINES_HEADER: &str = "baseline,trainable_params,ooo_vvv_train,ooo_vvv";

pub fn baselines_csv(rows: &[BaselineRow]) -> Vec<u8> {
    let mut out = format!("{BASELINES_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.baseline.name(), r.trainable_params, f17(r.vvv_train), f17(r.vvv)));
    }
    out.into_bytes()
}
