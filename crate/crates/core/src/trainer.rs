//! Paired/unpaired splits, batch sampling, the Adam training loop and the
//! coefficient-selection procedure.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{AdamConfig, AdamState, Graph, Tensor};
use crate::gw::{
    checkpoint_bytes, contrastive_from_encodings, loss_cycle, loss_demicycle, loss_translation, total_loss,
    Architecture, ContrastiveMode, GwError, GwModel, LossBreakdown, LossWeights, PairedBatch, Side, UnpairedBatch,
    Variant,
};
use crate::seeds::rng_for;
use crate::shapes::Dataset;
use crate::specialists::{Domain, Specialists};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Gw(#[from] GwError),
    #[error("non-finite loss at step {step}: {breakdown:?}")]
    NonFinite { step: u64, breakdown: LossBreakdown },
}

/// Count of strictly unpaired items, or every remaining item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Unpaired {
    Count(usize),
    All(AllMarker),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllMarker {
    All,
}

impl Unpaired {
    pub const ALL: Unpaired = Unpaired::All(AllMarker::All);

    pub fn resolve(self, k: usize, n: usize) -> usize {
        match self {
            Unpaired::Count(m) => m,
            Unpaired::All(_) => k.saturating_sub(n),
        }
    }
}

/// `S` is the first `n` entries of a seeded permutation of `0..k`; both
/// unpaired pools are its first `n + m` entries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    prefix: Vec<usize>,
}

impl DatasetSplit {
    pub fn paired(&self) -> &[usize] {
        &self.prefix[..self.n]
    }

    /// `U_v = U_t`.
    pub fn unpaired(&self, _side: Side) -> &[usize] {
        &self.prefix
    }

    /// One index per line, paired ones first.
    pub fn to_text(&self) -> String {
        let mut s = format!("# k={} n={} m={} seed={}\n", self.k, self.n, self.m, self.seed);
        for i in &self.prefix {
            s.push_str(&format!("{i}\n"));
        }
        s
    }
}

pub fn split_dataset(k: usize, n: usize, m: Unpaired, seed: u64) -> Result<DatasetSplit, TrainError> {
    let m = m.resolve(k, n);
    if n + m > k {
        return Err(TrainError::Config(format!("N + M = {} exceeds K = {k}", n + m)));
    }
    let mut perm: Vec<usize> = (0..k).collect();
    perm.shuffle(&mut rng_for(seed, "split", 0));
    perm.truncate(n + m);
    Ok(DatasetSplit { k, n, m, seed, prefix: perm })
}

/// Dataset indices of one training batch.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BatchIndices {
    pub paired: Vec<usize>,
    pub unpaired_v: Vec<usize>,
    pub unpaired_t: Vec<usize>,
}

/// Each slot comes from the paired pool with probability 0.5, otherwise
/// from one modality's unpaired pool chosen uniformly.
pub fn make_batch<R: Rng + ?Sized>(split: &DatasetSplit, b: usize, rng: &mut R) -> Result<BatchIndices, TrainError> {
    if b < 4 {
        return Err(TrainError::Config(format!("batch size {b} is below 4")));
    }
    if split.paired().is_empty() {
        return Err(TrainError::Config("the paired pool is empty".into()));
    }
    let mut out = BatchIndices::default();
    for _ in 0..b {
        if rng.random_bool(0.5) {
            let s = split.paired();
            out.paired.push(s[rng.random_range(0..s.len())]);
        } else {
            let side = if rng.random_bool(0.5) { Side::Vision } else { Side::Language };
            let u = split.unpaired(side);
            let idx = u[rng.random_range(0..u.len())];
            match side {
                Side::Vision => out.unpaired_v.push(idx),
                Side::Language => out.unpaired_t.push(idx),
            }
        }
    }
    Ok(out)
}

/// Specialist latents for every train and test item, per side.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainData {
    pub language: Domain,
    pub train: [Tensor; 2],
    pub test: [Tensor; 2],
}

impl TrainData {
    pub fn from_dataset(ds: &Dataset, specialists: &Specialists, language: Domain) -> Result<Self, TrainError> {
        if language == Domain::Vision {
            return Err(TrainError::Config("the language side cannot be vision".into()));
        }
        let lat = |d: Domain, recs| specialists.latents(d, recs).map_err(GwError::from);
        Ok(Self {
            language,
            train: [lat(Domain::Vision, &ds.train)?, lat(language, &ds.train)?],
            test: [lat(Domain::Vision, &ds.test)?, lat(language, &ds.test)?],
        })
    }

    pub fn k(&self) -> usize {
        self.train[0].rows()
    }

    pub fn paired(&self, idx: &[usize]) -> PairedBatch {
        PairedBatch { v: self.train[0].select_rows(idx), t: self.train[1].select_rows(idx) }
    }

    pub fn unpaired(&self, v: &[usize], t: &[usize]) -> UnpairedBatch {
        UnpairedBatch { v: self.train[0].select_rows(v), t: self.train[1].select_rows(t) }
    }

    pub fn test_paired(&self) -> PairedBatch {
        PairedBatch { v: self.test[0].clone(), t: self.test[1].clone() }
    }

    pub fn test_unpaired(&self) -> UnpairedBatch {
        UnpairedBatch { v: self.test[0].clone(), t: self.test[1].clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSeeds {
    pub split: u64,
    pub init: u64,
    pub batch: u64,
}

impl RunSeeds {
    pub fn uniform(seed: u64) -> Self {
        Self { split: seed, init: seed, batch: seed }
    }

    pub fn as_pairs(&self) -> [(&'static str, u64); 3] {
        [("split", self.split), ("init", self.init), ("batch", self.batch)]
    }
}

fn default_batch() -> usize {
    64
}
fn default_steps() -> u64 {
    30_000
}
fn default_lr() -> f64 {
    1e-3
}
fn default_eval_every() -> u64 {
    1000
}
fn default_eval_rows() -> usize {
    1000
}
fn default_language() -> Domain {
    Domain::Proto
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Defaults to 1 on every active term.
    #[serde(default)]
    pub weights: Option<LossWeights>,
    pub n: usize,
    #[serde(default = "Unpaired::all")]
    pub m: Unpaired,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    pub seeds: RunSeeds,
    #[serde(default)]
    pub contrastive: ContrastiveMode,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// Cap on the train items used for the logged train-split losses.
    #[serde(default = "default_eval_rows")]
    pub eval_rows: usize,
    #[serde(default = "default_language")]
    pub language: Domain,
    #[serde(default)]
    pub arch: Architecture,
}

impl Unpaired {
    fn all() -> Self {
        Unpaired::ALL
    }
}

impl TrainConfig {
    pub fn new(variant: Variant, n: usize, seeds: RunSeeds) -> Self {
        Self {
            variant,
            weights: None,
            n,
            m: Unpaired::ALL,
            batch_size: default_batch(),
            steps: default_steps(),
            learning_rate: default_lr(),
            seeds,
            contrastive: ContrastiveMode::default(),
            eval_every: default_eval_every(),
            eval_rows: default_eval_rows(),
            language: default_language(),
            arch: Architecture::default(),
        }
    }

    pub fn effective_weights(&self) -> LossWeights {
        self.weights.unwrap_or_else(|| self.variant.default_weights())
    }

    pub fn validate(&self, k: usize) -> Result<(), TrainError> {
        self.effective_weights().validate_for(self.variant)?;
        let m = self.m.resolve(k, self.n);
        if self.n == 0 || self.n + m > k {
            return Err(TrainError::Config(format!("need 0 < N <= N + M <= K, got N={} M={m} K={k}", self.n)));
        }
        if self.batch_size < 4 {
            return Err(TrainError::Config("batch_size must be at least 4".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.eval_every == 0 || self.eval_rows < 2 {
            return Err(TrainError::Config("eval_every must be positive and eval_rows at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Train,
    Test,
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Train => "train",
            EvalSplit::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub split: EvalSplit,
    pub loss_tr: f64,
    pub loss_cont: f64,
    pub loss_cy: f64,
    pub loss_dcy: f64,
    pub loss_total: f64,
}

impl MetricsRow {
    fn from_breakdown(step: u64, split: EvalSplit, b: &LossBreakdown) -> Self {
        let get = |t: Option<f64>| t.expect("evaluation computes every term");
        Self {
            step,
            split,
            loss_tr: get(b.tr),
            loss_cont: get(b.cont),
            loss_cy: get(b.cy),
            loss_dcy: get(b.dcy),
            loss_total: b.total,
        }
    }
}

/// Shortest round-trip-exact representation with 17 significant digits.
pub fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

pub const METRICS_HEADER: &str = "step,split,loss_tr,loss_cont,loss_cy,loss_dcy,loss_total";

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.step,
            r.split.name(),
            f17(r.loss_tr),
            f17(r.loss_cont),
            f17(r.loss_cy),
            f17(r.loss_dcy),
            f17(r.loss_total)
        )?;
    }
    Ok(())
}

/// Every objective on the given data, without building gradients. The
/// contrastive term is averaged over consecutive row chunks of `chunk`
/// (the training batch size, remainder dropped) so its scale matches what
/// training optimizes; the other terms use every row.
pub fn evaluate(
    model: &GwModel,
    weights: &LossWeights,
    mode: ContrastiveMode,
    paired: &PairedBatch,
    unpaired: &UnpairedBatch,
    chunk: usize,
) -> Result<LossBreakdown, GwError> {
    let mut g = Graph::new();
    g.no_grad(|g| {
        let (tr, dirs) = loss_translation(g, model, paired)?;
        let cy = loss_cycle(g, model, unpaired)?;
        let dcy = loss_demicycle(g, model, unpaired)?;
        let cont = contrastive_chunked(model, paired, mode, chunk)?;
        let terms = [g.value(tr).item(), cont, g.value(cy).item(), g.value(dcy).item()];
        let total = weights.as_array().iter().zip(terms).filter(|(w, _)| **w != 0.0).map(|(w, t)| w * t).sum();
        Ok(LossBreakdown {
            tr: Some(terms[0]),
            tr_dirs: Some(dirs.map(|d| g.value(d).item())),
            cont: Some(cont),
            cy: Some(terms[2]),
            dcy: Some(terms[3]),
            total,
        })
    })
}

/// Mean contrastive loss over consecutive full chunks of `chunk` rows.
pub fn contrastive_chunked(
    model: &GwModel,
    paired: &PairedBatch,
    mode: ContrastiveMode,
    chunk: usize,
) -> Result<f64, GwError> {
    let n = paired.len();
    let chunk = chunk.min(n);
    if chunk < 2 {
        return Err(GwError::Batch(format!("contrastive evaluation needs at least 2 rows, got {n}")));
    }
    let hv = model.encode(Side::Vision, &paired.v);
    let ht = model.encode(Side::Language, &paired.t);
    let chunks = n / chunk;
    let mut total = 0.0;
    for c in 0..chunks {
        let idx: Vec<usize> = (c * chunk..(c + 1) * chunk).collect();
        let mut g = Graph::new();
        let a = g.constant(hv.select_rows(&idx));
        let b = g.constant(ht.select_rows(&idx));
        let l = contrastive_from_encodings(&mut g, a, b, mode);
        total += g.value(l).item();
    }
    Ok(total / chunks as f64)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: GwModel,
    pub history: Vec<MetricsRow>,
    pub final_test: LossBreakdown,
}

impl TrainOutcome {
    pub fn checkpoint(&self, config: &TrainConfig) -> Vec<u8> {
        checkpoint_bytes(
            &self.model,
            config.variant,
            config.effective_weights(),
            config.contrastive,
            &config.seeds.as_pairs(),
        )
    }

    pub fn metrics_csv(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_metrics_csv(&self.history, &mut out).expect("writing to memory");
        out
    }
}

/// Evenly spaced subset of at most `cap` indices.
fn thin(idx: &[usize], cap: usize) -> Vec<usize> {
    if idx.len() <= cap {
        return idx.to_vec();
    }
    (0..cap).map(|i| idx[i * idx.len() / cap]).collect()
}

pub fn train(config: &TrainConfig, split: &DatasetSplit, data: &TrainData) -> Result<TrainOutcome, TrainError> {
    config.validate(data.k())?;
    if split.k != data.k() || split.n != config.n {
        return Err(TrainError::Config(format!(
            "split (K={}, N={}) does not match the data (K={}) and config (N={})",
            split.k,
            split.n,
            data.k(),
            config.n
        )));
    }
    if data.language != config.language {
        return Err(TrainError::Config("data and config disagree on the language domain".into()));
    }
    let weights = config.effective_weights();
    let mut model = GwModel::new(Domain::Vision, config.language, config.arch, config.seeds.init)?;
    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate));
    let mut rng = rng_for(config.seeds.batch, "batches", 0);

    let eval_s = thin(split.paired(), config.eval_rows);
    let eval_u = thin(split.unpaired(Side::Vision), config.eval_rows);
    let train_paired = data.paired(&eval_s);
    let train_unpaired = data.unpaired(&eval_u, &eval_u);
    let (test_paired, test_unpaired) = (data.test_paired(), data.test_unpaired());

    let mut history = Vec::new();
    let log = |model: &GwModel, step: u64, history: &mut Vec<MetricsRow>| -> Result<LossBreakdown, TrainError> {
        let mut last = LossBreakdown::default();
        for (split, p, u) in
            [(EvalSplit::Train, &train_paired, &train_unpaired), (EvalSplit::Test, &test_paired, &test_unpaired)]
        {
            last = evaluate(model, &weights, config.contrastive, p, u, config.batch_size)?;
            if last.terms().iter().any(|t| !t.is_some_and(f64::is_finite)) {
                return Err(TrainError::NonFinite { step, breakdown: last });
            }
            history.push(MetricsRow::from_breakdown(step, split, &last));
        }
        Ok(last)
    };

    log(&model, 0, &mut history)?;
    let mut final_test = None;
    for step in 1..=config.steps {
        let idx = make_batch(split, config.batch_size, &mut rng)?;
        let paired = data.paired(&idx.paired);
        let unpaired = data.unpaired(&idx.unpaired_v, &idx.unpaired_t);
        let mut g = Graph::new();
        let (loss, breakdown) = total_loss(&mut g, &model, &weights, config.contrastive, &paired, &unpaired, false)?;
        let grads = g.backward(loss).map_err(|_| TrainError::NonFinite { step, breakdown })?;
        if !breakdown.total.is_finite() {
            return Err(TrainError::NonFinite { step, breakdown });
        }
        adam.step(&mut model.store, &grads).map_err(GwError::from)?;
        if step % config.eval_every == 0 || step == config.steps {
            final_test = Some(log(&model, step, &mut history)?);
        }
    }
    let final_test = match final_test {
        Some(b) => b,
        None => evaluate(&model, &weights, config.contrastive, &test_paired, &test_unpaired, config.batch_size)?,
    };
    Ok(TrainOutcome { model, history, final_test })
}

/// Weights `(w_tr, w_cont)` with `w_tr * tr = w_cont * cont` and unit sum.
/// Returns `None` in the second slot when the fallback `(0.5, 0.5)` was used.
pub fn calibrate_score_weights(final_tr: f64, final_cont: f64) -> ((f64, f64), Option<String>) {
    let ok = |x: f64| x.is_finite() && x > 0.0;
    if !ok(final_tr) || !ok(final_cont) {
        let why = format!("final losses ({final_tr}, {final_cont}) cannot be equalized; using equal weights");
        return ((0.5, 0.5), Some(why));
    }
    let s = final_tr + final_cont;
    ((final_cont / s, final_tr / s), None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub weights: LossWeights,
    pub score: f64,
    pub test: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: LossWeights,
    pub best_score: f64,
    pub grid: Vec<GridResult>,
}

/// Every weight vector with `tr = 1` and each other active term drawn from
/// `values`, in lexicographic order.
pub fn coefficient_grid(variant: Variant, values: &[f64]) -> Vec<LossWeights> {
    let active = variant.active_terms();
    let mut out = vec![[1.0, 0.0, 0.0, 0.0]];
    for k in 1..4 {
        if !active[k] {
            continue;
        }
        out = out
            .into_iter()
            .flat_map(|w| {
                values.iter().map(move |&v| {
                    let mut w2 = w;
                    w2[k] = v;
                    w2
                })
            })
            .collect();
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    out.into_iter().map(|[tr, cont, cy, dcy]| LossWeights { tr, cont, cy, dcy }).collect()
}

/// Trains one model per grid point and keeps the lowest
/// `w_tr * L_tr + w_cont * L_cont` on the test set; ties go to the
/// lexicographically smaller weight vector.
pub fn select_coefficients(
    config: &TrainConfig,
    split: &DatasetSplit,
    data: &TrainData,
    values: &[f64],
    score_weights: (f64, f64),
) -> Result<Selection, TrainError> {
    let grid = coefficient_grid(config.variant, values);
    if grid.is_empty() || values.is_empty() {
        return Err(TrainError::Config("empty coefficient grid".into()));
    }
    let mut results = Vec::with_capacity(grid.len());
    for w in grid {
        let cfg = TrainConfig { weights: Some(w), ..config.clone() };
        let out = train(&cfg, split, data)?;
        let t = out.final_test;
        let score = score_weights.0 * t.tr.expect("evaluated") + score_weights.1 * t.cont.expect("evaluated");
        results.push(GridResult { weights: w, score, test: t });
    }
    let best = results
        .iter()
        .min_by(|a, b| {
            a.score.total_cmp(&b.score).then(a.weights.as_array().partial_cmp(&b.weights.as_array()).expect("finite"))
        })
        .expect("non-empty");
    Ok(Selection { best: best.weights, best_score: best.score, grid: results })
}
