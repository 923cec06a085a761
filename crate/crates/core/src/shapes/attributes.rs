use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ShapeConfig, ShapesError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Egg,
    Triangle,
    Diamond,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Egg, Category::Triangle, Category::Diamond];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Egg => "egg",
            Category::Triangle => "triangle",
            Category::Diamond => "diamond",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

/// Ground-truth description of the single object in an image.
///
/// Coordinates are in pixels with the origin at the top-left corner and `y`
/// growing downwards. Rotation 0 points up; positive angles turn
/// counterclockwise as seen on screen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attributes {
    pub category: Category,
    pub x: f64,
    pub y: f64,
    pub size: f64,
    pub rotation: f64,
    /// Hue, saturation, lightness, each in `[0, 1]`.
    pub hsl: [f64; 3],
}

impl Attributes {
    /// Continuous RGB in `[0, 1]`.
    pub fn rgb(&self) -> [f64; 3] {
        hsl_to_rgb(self.hsl)
    }

    pub fn rgb_bytes(&self) -> [u8; 3] {
        self.rgb().map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8)
    }
}

pub fn sample_attributes<R: Rng + ?Sized>(rng: &mut R, cfg: &ShapeConfig) -> Result<Attributes, ShapesError> {
    cfg.validate()?;
    let (lo, hi) = cfg.position_range();
    let category = Category::ALL[rng.random_range(0..3)];
    let x = rng.random_range(lo..hi);
    let y = rng.random_range(lo..hi);
    let size = rng.random_range(cfg.s_min..=cfg.s_max);
    let rotation = rng.random_range(0.0..TAU);
    let h = rng.random_range(0.0..1.0);
    let s = rng.random_range(0.0..=1.0);
    let l = rng.random_range(cfg.l_min..1.0);
    Ok(Attributes { category, x, y, size, rotation, hsl: [h, s, l] })
}

pub fn hsl_to_rgb([h, s, l]: [f64; 3]) -> [f64; 3] {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = (h * 6.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    [r + m, g + m, b + m]
}

/// Inverse of [`hsl_to_rgb`]. Hue is 0 for greys; saturation is 0 for black
/// and white.
pub fn rgb_to_hsl([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let l = (max + min) / 2.0;
    let c = max - min;
    if c <= 0.0 {
        return [0.0, 0.0, l];
    }
    let s = c / (1.0 - (2.0 * l - 1.0).abs());
    let hp = if max == r {
        ((g - b) / c).rem_euclid(6.0)
    } else if max == g {
        (b - r) / c + 2.0
    } else {
        (r - g) / c + 4.0
    };
    [(hp / 6.0).rem_euclid(1.0), s.min(1.0), l]
}
