//! Seeded piecewise-smooth test images: a smooth background with sharp-edged
//! discs, half-planes and sinusoidal stripes. Used where real photographs
//! are unavailable (toy training runs, tests).

use rand::Rng as _;

use super::ImageY;
use crate::rng::{stream, Rng, Stream};

enum Shape {
    Disc { cy: f64, cx: f64, r: f64 },
    HalfPlane { ny: f64, nx: f64, offset: f64 },
    Stripes { ny: f64, nx: f64, freq: f64 },
}

struct Layer {
    shape: Shape,
    value: f64,
}

fn random_layer(rng: &mut Rng, h: f64, w: f64) -> Layer {
    let value = rng.random_range(0.1..0.9);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ny, nx) = angle.sin_cos();
    let shape = match rng.random_range(0..3) {
        0 => Shape::Disc {
            cy: rng.random_range(0.0..h),
            cx: rng.random_range(0.0..w),
            r: rng.random_range(0.03..0.15) * h.min(w),
        },
        1 => Shape::HalfPlane {
            ny,
            nx,
            offset: rng.random_range(0.3..0.7) * (h * ny.abs() + w * nx.abs()),
        },
        _ => Shape::Stripes {
            ny,
            nx,
            freq: rng.random_range(0.3..1.0),
        },
    };
    Layer { shape, value }
}

impl Layer {
    /// Coverage in `[0, 1]` at pixel centre `(y, x)`; edges are hard.
    fn covers(&self, y: f64, x: f64) -> bool {
        match self.shape {
            Shape::Disc { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::HalfPlane { ny, nx, offset } => y * ny.abs() + x * nx.abs() >= offset,
            Shape::Stripes { ny, nx, freq } => ((y * ny + x * nx) * freq).sin() > 0.0,
        }
    }
}

/// One `h × w` image from `seed`; samples lie in `[0.05, 0.95]`.
pub fn edge_image(h: usize, w: usize, seed: u64) -> ImageY {
    let mut rng = stream(seed, Stream::Synthetic);
    let (hf, wf) = (h as f64, w as f64);
    let g0 = rng.random_range(0.2..0.8);
    let gy = rng.random_range(-0.3..0.3);
    let gx = rng.random_range(-0.3..0.3);
    let n_layers = rng.random_range(15..30);
    let layers: Vec<Layer> = (0..n_layers)
        .map(|_| random_layer(&mut rng, hf, wf))
        .collect();
    ImageY::from_fn(h, w, |r, c| {
        let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
        let mut v = g0 + gy * (y / hf - 0.5) + gx * (x / wf - 0.5);
        for l in &layers {
            if l.covers(y, x) {
                v = l.value;
            }
        }
        v.clamp(0.05, 0.95)
    })
}

/// `count` images with consecutive sub-seeds.
pub fn edge_images(count: usize, h: usize, w: usize, seed: u64) -> Vec<ImageY> {
    (0..count as u64)
        .map(|i| edge_image(h, w, seed.wrapping_mul(1_000_003).wrapping_add(i)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = edge_image(40, 50, 3);
        assert_eq!(a, edge_image(40, 50, 3));
        assert_ne!(a, edge_image(40, 50, 4));
        assert!(a.samples().iter().all(|v| (0.05..=0.95).contains(v)));
    }

    #[test]
    fn has_edges() {
        let img = edge_image(64, 64, 1);
        let max_jump = (0..64)
            .flat_map(|r| (1..64).map(move |c| (r, c)))
            .map(|(r, c)| (img.get(r, c) - img.get(r, c - 1)).abs())
            .fold(0.0, f64::max);
        assert!(max_jump > 0.05);
    }
}
