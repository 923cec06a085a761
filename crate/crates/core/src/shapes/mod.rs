//! Procedural shapes dataset: attributes, proto vectors, rasters, captions.

mod attributes;
mod caption;
mod colors;
mod dataset;
mod grammar;
mod parse;
mod proto;
mod render;

pub use attributes::{hsl_to_rgb, rgb_to_hsl, sample_attributes, Attributes, Category};
pub use caption::{
    degrees5, location_cell, relevant_slots, sector16, size_class, AttributeBins, Caption, Captioner, GrammarTrace,
    RotationBin, GRID, SIZE_CLASSES,
};
pub use colors::{ColorTable, NamedColor, COLORS_TSV};
pub use dataset::{build_dataset, load_dataset, Dataset, DatasetConfig, Record};
pub use grammar::{slot, Aspect, Grammar, GRAMMAR_TOML, N_SLOTS, SLOT_NAMES};
pub use parse::{CaptionParser, Part};
pub use proto::{
    angle_distance, argmax, decode_proto, encode_proto, Affine, ProtoScaling, ProtoVector, CATEGORY_SLOTS, PROTO_DIM,
};
pub use render::{polygon, render_image, Image};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShapesError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed asset: {0}")]
    Asset(String),
    #[error("proto vector: {0}")]
    Proto(String),
    #[error("caption parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("dataset {path}: {message}")]
    Format { path: String, message: String },
}

impl ShapesError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        ShapesError::Io { path: path.display().to_string(), source }
    }
}

/// Geometry and color bounds for sampled objects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeConfig {
    pub s_min: f64,
    pub s_max: f64,
    pub l_min: f64,
    pub image_size: usize,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self { s_min: 7.0, s_max: 14.0, l_min: 0.4, image_size: 32 }
    }
}

impl ShapeConfig {
    pub fn validate(&self) -> Result<(), ShapesError> {
        let side = self.image_size as f64;
        if !(self.s_min > 0.0 && self.s_min < self.s_max && self.s_max < side) {
            return Err(ShapesError::Config(format!(
                "need 0 < s_min < s_max < {side}, got s_min={} s_max={}",
                self.s_min, self.s_max
            )));
        }
        if !(self.l_min > 0.0 && self.l_min < 1.0) {
            return Err(ShapesError::Config(format!("l_min must lie in (0, 1), got {}", self.l_min)));
        }
        Ok(())
    }

    /// Half-open range of object centers along either axis.
    pub fn position_range(&self) -> (f64, f64) {
        let margin = self.s_max / 2.0;
        (margin, self.image_size as f64 - margin)
    }
}
