use serde::{Deserialize, Serialize};

use super::attributes::{rgb_to_hsl, Attributes, Category};
use super::{ShapeConfig, ShapesError};

pub const PROTO_DIM: usize = 11;
/// Components 0..3 are the category slots; the rest are continuous.
pub const CATEGORY_SLOTS: usize = 3;

const CLAMP_SLACK: f64 = 1e-6;

/// Normalized attribute vector: category one-hot mapped to ±1, then
/// `x, y, size, r, g, b, cos, sin`, every component in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtoVector(pub [f64; PROTO_DIM]);

impl ProtoVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn from_slice(v: &[f64]) -> Result<Self, ShapesError> {
        let arr: [f64; PROTO_DIM] = v
            .try_into()
            .map_err(|_| ShapesError::Proto(format!("expected {PROTO_DIM} components, got {}", v.len())))?;
        Ok(Self(arr))
    }
}

/// Affine map `[lo, hi] -> [-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub lo: f64,
    pub hi: f64,
}

impl Affine {
    pub fn forward(self, v: f64) -> f64 {
        2.0 * (v - self.lo) / (self.hi - self.lo) - 1.0
    }

    pub fn inverse(self, u: f64) -> f64 {
        (u + 1.0) / 2.0 * (self.hi - self.lo) + self.lo
    }
}

/// Per-component source ranges for the continuous proto coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtoScaling {
    pub position: Affine,
    pub size: Affine,
    pub color: Affine,
}

impl ProtoScaling {
    pub fn new(cfg: &ShapeConfig) -> Self {
        let (lo, hi) = cfg.position_range();
        Self {
            position: Affine { lo, hi },
            size: Affine { lo: cfg.s_min, hi: cfg.s_max },
            color: Affine { lo: 0.0, hi: 1.0 },
        }
    }
}

pub fn encode_proto(a: &Attributes, cfg: &ShapeConfig) -> ProtoVector {
    let sc = ProtoScaling::new(cfg);
    let mut v = [-1.0; PROTO_DIM];
    v[a.category.index()] = 1.0;
    v[3] = sc.position.forward(a.x);
    v[4] = sc.position.forward(a.y);
    v[5] = sc.size.forward(a.size);
    let rgb = a.rgb();
    for k in 0..3 {
        v[6 + k] = sc.color.forward(rgb[k]);
    }
    v[9] = a.rotation.cos();
    v[10] = a.rotation.sin();
    ProtoVector(v)
}

pub fn decode_proto(p: &ProtoVector, cfg: &ShapeConfig) -> Result<Attributes, ShapesError> {
    let mut v = p.0;
    for (i, c) in v.iter_mut().enumerate() {
        if !c.is_finite() || c.abs() > 1.0 + CLAMP_SLACK {
            return Err(ShapesError::Proto(format!("component {i} = {c} outside [-1, 1]")));
        }
        *c = c.clamp(-1.0, 1.0);
    }
    let sc = ProtoScaling::new(cfg);
    let category = Category::from_index(argmax(&v[..CATEGORY_SLOTS])).expect("three slots");
    let rgb = [sc.color.inverse(v[6]), sc.color.inverse(v[7]), sc.color.inverse(v[8])];
    Ok(Attributes {
        category,
        x: sc.position.inverse(v[3]),
        y: sc.position.inverse(v[4]),
        size: sc.size.inverse(v[5]),
        rotation: v[10].atan2(v[9]).rem_euclid(std::f64::consts::TAU),
        hsl: rgb_to_hsl(rgb),
    })
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Smallest absolute difference between two angles, in `[0, π]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes::hsl_to_rgb;

    #[test]
    fn hsl_survives_rgb_round_trip() {
        let hsl = [0.7, 0.3, 0.6];
        let back = rgb_to_hsl(hsl_to_rgb(hsl));
        assert!(hsl.iter().zip(back).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
