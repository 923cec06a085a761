//! Held-out property evaluation, the odd-one-out benchmark, and the
//! ablation and unpaired-data runners.

pub mod ooo;
pub mod runs;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::DiffError;
use crate::gw::{ContrastiveMode, GwError, GwModel, LossWeights, PairedBatch, UnpairedBatch, Variant};
use crate::trainer::{contrastive_chunked, evaluate, RunSeeds, TrainError};

pub use ooo::*;
pub use runs::*;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Gw(#[from] GwError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("non-finite {what} for {variant} N={n} seed={seed}")]
    NonFinite { what: &'static str, variant: Variant, n: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub variant: Variant,
    pub n: usize,
    pub m: usize,
    pub seeds: RunSeeds,
    pub weights: LossWeights,
    /// Contrastive form used during training.
    pub contrastive: ContrastiveMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub meta: RunMeta,
    pub tr: f64,
    pub tr_vt: f64,
    pub tr_tv: f64,
    pub cont_literal: f64,
    pub cont_infonce: f64,
    pub cy: f64,
    pub dcy: f64,
}

impl PropertyReport {
    /// Contrastive loss in the given form.
    pub fn cont(&self, mode: ContrastiveMode) -> f64 {
        match mode {
            ContrastiveMode::Literal => self.cont_literal,
            ContrastiveMode::Infonce => self.cont_infonce,
        }
    }

    pub fn values(&self) -> [f64; 7] {
        [self.tr, self.tr_vt, self.tr_tv, self.cont_literal, self.cont_infonce, self.cy, self.dcy]
    }
}

/// Every objective on held-out data with gradients disabled. The contrastive
/// forms are averaged over consecutive `chunk`-row blocks.
pub fn eval_properties(
    model: &GwModel,
    paired: &PairedBatch,
    unpaired: &UnpairedBatch,
    meta: RunMeta,
    chunk: usize,
) -> Result<PropertyReport, EvalError> {
    let b = evaluate(model, &meta.weights, ContrastiveMode::Literal, paired, unpaired, chunk)?;
    let [vt, tv] = b.tr_dirs.expect("evaluate fills every term");
    let report = PropertyReport {
        meta,
        tr: b.tr.expect("evaluate fills every term"),
        tr_vt: vt,
        tr_tv: tv,
        cont_literal: b.cont.expect("evaluate fills every term"),
        cont_infonce: contrastive_chunked(model, paired, ContrastiveMode::Infonce, chunk)?,
        cy: b.cy.expect("evaluate fills every term"),
        dcy: b.dcy.expect("evaluate fills every term"),
    };
    if report.values().iter().all(|v| v.is_finite()) {
        Ok(report)
    } else {
        Err(EvalError::NonFinite { what: "property", variant: meta.variant, n: meta.n, seed: meta.seeds.init })
    }
}
