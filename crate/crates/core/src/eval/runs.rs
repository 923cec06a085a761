//! Grid runners: the variant × N × seed ablation and the unpaired-data sweep.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ooo::{ooo_for_model, OooDataset, OooInputs, OooScores, ProbeConfig};
use super::{eval_properties, EvalError, PropertyReport, RunMeta};
use crate::gw::{Architecture, ContrastiveMode, LossWeights, Variant};
use crate::specialists::Domain;
use crate::trainer::{f17, split_dataset, train, RunSeeds, TrainConfig, TrainData, Unpaired};

/// Training settings shared by every cell of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    pub batch_size: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub eval_every: u64,
    pub eval_rows: usize,
    pub contrastive: ContrastiveMode,
    pub language: Domain,
    pub arch: Architecture,
    /// Per-variant coefficients; variants not listed use their defaults.
    pub weights: BTreeMap<Variant, LossWeights>,
}

impl Default for Protocol {
    fn default() -> Self {
        let t = TrainConfig::new(Variant::TranslationOnly, 1, RunSeeds::uniform(0));
        Self {
            batch_size: t.batch_size,
            steps: t.steps,
            learning_rate: t.learning_rate,
            eval_every: t.eval_every,
            eval_rows: t.eval_rows,
            contrastive: t.contrastive,
            language: t.language,
            arch: t.arch,
            weights: BTreeMap::new(),
        }
    }
}

impl Protocol {
    pub fn weights_for(&self, variant: Variant) -> LossWeights {
        self.weights.get(&variant).copied().unwrap_or_else(|| variant.default_weights())
    }

    pub fn train_config(&self, cell: &Cell) -> TrainConfig {
        TrainConfig {
            variant: cell.variant,
            weights: Some(self.weights_for(cell.variant)),
            n: cell.n,
            m: cell.m,
            batch_size: self.batch_size,
            steps: self.steps,
            learning_rate: self.learning_rate,
            seeds: RunSeeds::uniform(cell.seed),
            contrastive: self.contrastive,
            eval_every: self.eval_every,
            eval_rows: self.eval_rows,
            language: self.language,
            arch: self.arch,
        }
    }
}

/// One training run of a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: Variant,
    pub n: usize,
    pub m: Unpaired,
    pub seed: u64,
}

impl Cell {
    /// `ckpt/<variant>/<N>/<seed>.bin` style relative stem, without extension.
    pub fn stem(&self) -> String {
        format!("{}/{}/{}", self.variant.name(), self.n, self.seed)
    }
}

/// Everything the cells of a grid share.
#[derive(Clone, Copy)]
pub struct GridContext<'a> {
    pub data: &'a TrainData,
    pub protocol: &'a Protocol,
    pub ooo: Option<(&'a OooInputs, &'a OooDataset, &'a ProbeConfig)>,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub report: PropertyReport,
    pub ooo: Option<OooScores>,
    pub checkpoint: Vec<u8>,
    pub metrics: Vec<u8>,
    pub split: String,
}

pub fn run_cell(ctx: GridContext<'_>, cell: Cell) -> Result<CellResult, EvalError> {
    let config = ctx.protocol.train_config(&cell);
    let k = ctx.data.k();
    let split = split_dataset(k, cell.n, cell.m, cell.seed)?;
    let out = train(&config, &split, ctx.data)?;
    let meta = RunMeta {
        variant: cell.variant,
        n: cell.n,
        m: split.m,
        seeds: config.seeds,
        weights: config.effective_weights(),
        contrastive: config.contrastive,
    };
    let report =
        eval_properties(&out.model, &ctx.data.test_paired(), &ctx.data.test_unpaired(), meta, config.batch_size)?;
    let ooo = match ctx.ooo {
        Some((inputs, ds, probe)) => Some(ooo_for_model(&out.model, inputs, ds, probe)?),
        None => None,
    };
    Ok(CellResult {
        cell,
        report,
        ooo,
        checkpoint: out.checkpoint(&config),
        metrics: out.metrics_csv(),
        split: split.to_text(),
    })
}

/// Runs every cell on a pool of `jobs` threads; results keep the input order.
pub fn run_cells(ctx: GridContext<'_>, cells: &[Cell], jobs: usize) -> Result<Vec<CellResult>, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| EvalError::Config(format!("thread pool: {e}")))?;
    pool.install(|| cells.par_iter().map(|&c| run_cell(ctx, c)).collect())
}

/// Cells ordered by N, then seed, then variant.
pub fn ablation_cells(variants: &[Variant], ns: &[usize], seeds: &[u64], m: Unpaired) -> Vec<Cell> {
    let mut out = Vec::new();
    for &n in ns {
        for &seed in seeds {
            for &variant in variants {
                out.push(Cell { variant, n, m, seed });
            }
        }
    }
    out
}

/// Cells ordered by M, then seed, then variant.
pub fn sweep_cells(variants: &[Variant], n: usize, ms: &[usize], seeds: &[u64]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &m in ms {
        for &seed in seeds {
            for &variant in variants {
                out.push(Cell { variant, n, m: Unpaired::Count(m), seed });
            }
        }
    }
    out
}

/// One line of `ablation.csv` or `sweep.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: Variant,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub contrastive: ContrastiveMode,
    pub weights: LossWeights,
    pub tr: f64,
    pub tr_vt: f64,
    pub tr_tv: f64,
    pub cont_literal: f64,
    pub cont_infonce: f64,
    pub cy: f64,
    pub dcy: f64,
    pub ooo: Option<OooScores>,
}

impl ResultRow {
    pub fn from_result(r: &CellResult) -> Self {
        let p = &r.report;
        Self {
            variant: p.meta.variant,
            n: p.meta.n,
            m: p.meta.m,
            seed: r.cell.seed,
            contrastive: p.meta.contrastive,
            weights: p.meta.weights,
            tr: p.tr,
            tr_vt: p.tr_vt,
            tr_tv: p.tr_tv,
            cont_literal: p.cont_literal,
            cont_infonce: p.cont_infonce,
            cy: p.cy,
            dcy: p.dcy,
            ooo: r.ooo,
        }
    }

    pub fn cont(&self, mode: ContrastiveMode) -> f64 {
        match mode {
            ContrastiveMode::Literal => self.cont_literal,
            ContrastiveMode::Infonce => self.cont_infonce,
        }
    }
}

pub const RESULTS_HEADER: &str = "variant,n,m,seed,contrastive,alpha_tr,alpha_cont,alpha_cy,alpha_dcy,\
loss_tr,loss_tr_vt,loss_tr_tv,loss_cont_literal,loss_cont_infonce,loss_cy,loss_dcy,\
ooo_vvv_train,ooo_vvv,ooo_ttt,ooo_ttv";

pub fn results_csv(rows: &[ResultRow]) -> Vec<u8> {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let w = r.weights;
        let ooo = match r.ooo {
            Some(o) => [o.vvv_train, o.vvv, o.ttt, o.ttv].map(f17).join(","),
            None => ",,,".to_string(),
        };
        let losses = [r.tr, r.tr_vt, r.tr_tv, r.cont_literal, r.cont_infonce, r.cy, r.dcy].map(f17).join(",");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{losses},{ooo}\n",
            r.variant.name(),
            r.n,
            r.m,
            r.seed,
            r.contrastive.name(),
            f17(w.tr),
            f17(w.cont),
            f17(w.cy),
            f17(w.dcy)
        ));
    }
    out.into_bytes()
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>, EvalError> {
    let bad = |line: usize, what: &str| EvalError::Config(format!("results line {line}: {what}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RESULTS_HEADER => {}
        _ => return Err(bad(1, "unexpected header")),
    }
    lines
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 20 {
                return Err(bad(i + 1, &format!("expected 20 fields, got {}", f.len())));
            }
            let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(i + 1, &format!("field {j} is not a number")));
            let int = |j: usize| f[j].parse::<u64>().map_err(|_| bad(i + 1, &format!("field {j} is not an integer")));
            let ooo = if f[16..].iter().all(|s| s.is_empty()) {
                None
            } else {
                Some(OooScores { vvv_train: num(16)?, vvv: num(17)?, ttt: num(18)?, ttv: num(19)? })
            };
            Ok(ResultRow {
                variant: Variant::from_name(f[0]).ok_or_else(|| bad(i + 1, "unknown variant"))?,
                n: int(1)? as usize,
                m: int(2)? as usize,
                seed: int(3)?,
                contrastive: ContrastiveMode::from_name(f[4]).ok_or_else(|| bad(i + 1, "unknown contrastive mode"))?,
                weights: LossWeights { tr: num(5)?, cont: num(6)?, cy: num(7)?, dcy: num(8)? },
                tr: num(9)?,
                tr_vt: num(10)?,
                tr_tv: num(11)?,
                cont_literal: num(12)?,
                cont_infonce: num(13)?,
                cy: num(14)?,
                dcy: num(15)?,
                ooo,
            })
        })
        .collect()
}

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    assert!(n > 0, "median of an empty sample");
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

type Columns = Box<dyn Fn(&ResultRow) -> Option<Vec<f64>>>;

/// Plot-data files derived from result rows: one row per grid cell, `x` is
/// N for the ablation and M for the sweep, one series per variant.
pub fn figure_files(rows: &[ResultRow], x_is_m: bool) -> Vec<(String, Vec<u8>)> {
    let prefix = if x_is_m { "unpaired" } else { "ablation" };
    let x = |r: &ResultRow| if x_is_m { r.m } else { r.n };
    let mut figs: Vec<(String, &str, Columns)> = vec![
        (
            format!("{prefix}_translation.csv"),
            "loss_tr,loss_tr_vt,loss_tr_tv",
            Box::new(|r| Some(vec![r.tr, r.tr_vt, r.tr_tv])),
        ),
        (
            format!("{prefix}_contrastive.csv"),
            "loss_cont_literal,loss_cont_infonce",
            Box::new(|r| Some(vec![r.cont_literal, r.cont_infonce])),
        ),
        (format!("{prefix}_cycles.csv"), "loss_cy,loss_dcy", Box::new(|r| Some(vec![r.cy, r.dcy]))),
    ];
    if !x_is_m && rows.iter().any(|r| r.ooo.is_some()) {
        figs.push((
            format!("{prefix}_ooo.csv"),
            "ooo_vvv,ooo_ttt,ooo_ttv",
            Box::new(|r| r.ooo.map(|o| vec![o.vvv, o.ttt, o.ttv])),
        ));
    }
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.variant, x(r), r.seed, r.contrastive.name()));
    figs.into_iter()
        .map(|(name, cols, f)| {
            let mut out = format!("x,series,seed,contrastive,{cols}\n");
            for r in &sorted {
                if let Some(vals) = f(r) {
                    let vals: Vec<String> = vals.into_iter().map(f17).collect();
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        x(r),
                        r.variant.name(),
                        r.seed,
                        r.contrastive.name(),
                        vals.join(",")
                    ));
                }
            }
            (name, out.into_bytes())
        })
        .collect()
}
