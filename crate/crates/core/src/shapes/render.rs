use std::io::Write;

use super::attributes::{Attributes, Category};

/// Square RGB raster, row-major, three bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub side: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn black(side: usize) -> Self {
        Self { side, pixels: vec![0; side * side * 3] }
    }

    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let o = (row * self.side + col) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    fn put(&mut self, col: usize, row: usize, rgb: [u8; 3]) {
        let o = (row * self.side + col) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Number of pixels that are not pure black.
    pub fn lit_pixels(&self) -> usize {
        self.pixels.chunks_exact(3).filter(|p| p.iter().any(|&c| c != 0)).count()
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.side, self.side)?;
        w.write_all(&self.pixels)
    }
}

/// Forward (heading) and right unit vectors in screen coordinates.
fn frame(rotation: f64) -> ([f64; 2], [f64; 2]) {
    let (s, c) = rotation.rem_euclid(std::f64::consts::TAU).sin_cos();
    ([-s, -c], [c, -s])
}

/// Outline vertices for the polygonal categories, in screen coordinates.
pub fn polygon(a: &Attributes) -> Option<Vec<[f64; 2]>> {
    let (f, r) = frame(a.rotation);
    let s = a.size;
    let at = |fw: f64, side: f64| [a.x + s * (fw * f[0] + side * r[0]), a.y + s * (fw * f[1] + side * r[1])];
    match a.category {
        Category::Triangle => Some(vec![at(0.5, 0.0), at(-0.3, 0.4), at(-0.3, -0.4)]),
        Category::Diamond => Some(vec![at(0.5, 0.0), at(0.1, 0.3), at(-0.3, 0.0), at(0.1, -0.3)]),
        Category::Egg => None,
    }
}

/// Egg membership: front half-ellipse with semi-axes (0.5s, 0.3s), back
/// half-ellipse with semi-axes (0.35s, 0.3s).
fn inside_egg(a: &Attributes, px: f64, py: f64) -> bool {
    let (f, r) = frame(a.rotation);
    let (dx, dy) = (px - a.x, py - a.y);
    let u = dx * f[0] + dy * f[1];
    let v = dx * r[0] + dy * r[1];
    let along = if u >= 0.0 { 0.5 } else { 0.35 } * a.size;
    let across = 0.3 * a.size;
    (u / along).powi(2) + (v / across).powi(2) <= 1.0
}

/// Scanline fill of a convex polygon sampled at pixel centers.
fn fill_convex(img: &mut Image, pts: &[[f64; 2]], rgb: [u8; 3]) {
    let side = img.side;
    for row in 0..side {
        let yc = row as f64 + 0.5;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..pts.len() {
            let [x0, y0] = pts[k];
            let [x1, y1] = pts[(k + 1) % pts.len()];
            if (y0 <= yc && yc <= y1) || (y1 <= yc && yc <= y0) {
                if y0 == y1 {
                    lo = lo.min(x0.min(x1));
                    hi = hi.max(x0.max(x1));
                } else {
                    let x = x0 + (yc - y0) / (y1 - y0) * (x1 - x0);
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
        }
        if lo > hi {
            continue;
        }
        let first = (lo - 0.5).ceil().max(0.0) as usize;
        let last = (hi - 0.5).floor();
        if last < 0.0 {
            continue;
        }
        for col in first..=(last as usize).min(side - 1) {
            img.put(col, row, rgb);
        }
    }
}

pub fn render_image(a: &Attributes, side: usize) -> Image {
    let mut img = Image::black(side);
    let rgb = a.rgb_bytes();
    match polygon(a) {
        Some(pts) => fill_convex(&mut img, &pts, rgb),
        None => {
            for row in 0..side {
                for col in 0..side {
                    if inside_egg(a, col as f64 + 0.5, row as f64 + 0.5) {
                        img.put(col, row, rgb);
                    }
                }
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_triangle_apex_is_above_center() {
        let a = Attributes {
            category: Category::Triangle,
            x: 16.0,
            y: 16.0,
            size: 10.0,
            rotation: 0.0,
            hsl: [0.0, 1.0, 0.5],
        };
        let pts = polygon(&a).unwrap();
        assert!((pts[0][0] - 16.0).abs() < 1e-12 && (pts[0][1] - 11.0).abs() < 1e-12);
        let img = render_image(&a, 32);
        assert_eq!(img.pixel(16, 12), [255, 0, 0]);
        assert_eq!(img.pixel(16, 9), [0, 0, 0]);
    }

    #[test]
    fn quarter_turn_points_left() {
        let a = Attributes {
            category: Category::Triangle,
            x: 16.0,
            y: 16.0,
            size: 10.0,
            rotation: std::f64::consts::FRAC_PI_2,
            hsl: [0.0, 1.0, 0.5],
        };
        let apex = polygon(&a).unwrap()[0];
        assert!((apex[0] - 11.0).abs() < 1e-12 && (apex[1] - 16.0).abs() < 1e-12);
    }
}
