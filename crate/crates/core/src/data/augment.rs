use super::{bicubic_resize, ImageY};
use crate::error::Result;

/// Counter-clockwise rotation by a multiple of 90 degrees.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rotation {
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 3] = [Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }
}

/// Which transforms to apply to every source image.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub rotations: Vec<Rotation>,
    /// Extra bicubic downscaled copies; the original scale is always kept.
    pub downscales: Vec<f64>,
    /// Super-resolution factors combined into one training set.
    pub sr_scales: Vec<usize>,
}

impl AugmentSpec {
    /// Identity only.
    pub fn none(sr_scales: Vec<usize>) -> Self {
        AugmentSpec {
            flip_horizontal: false,
            flip_vertical: false,
            rotations: Vec::new(),
            downscales: Vec::new(),
            sr_scales,
        }
    }

    /// Both flips, all three rotations and downscales 0.7, 0.5, 0.4.
    pub fn full(sr_scales: Vec<usize>) -> Self {
        AugmentSpec {
            flip_horizontal: true,
            flip_vertical: true,
            rotations: Rotation::ALL.to_vec(),
            downscales: vec![0.7, 0.5, 0.4],
            sr_scales,
        }
    }

    /// Number of images [`augment`] yields per source image.
    pub fn variants(&self) -> usize {
        let geometric =
            1 + self.flip_horizontal as usize + self.flip_vertical as usize + self.rotations.len();
        geometric * (1 + self.downscales.len())
    }
}

pub fn flip_horizontal(img: &ImageY) -> ImageY {
    let w = img.width();
    ImageY::from_fn(img.height(), w, |r, c| img.get(r, w - 1 - c))
}

pub fn flip_vertical(img: &ImageY) -> ImageY {
    let h = img.height();
    ImageY::from_fn(h, img.width(), |r, c| img.get(h - 1 - r, c))
}

pub fn rotate(img: &ImageY, rotation: Rotation) -> ImageY {
    let (h, w) = img.dims();
    match rotation {
        Rotation::R90 => ImageY::from_fn(w, h, |r, c| img.get(c, w - 1 - r)),
        Rotation::R180 => ImageY::from_fn(h, w, |r, c| img.get(h - 1 - r, w - 1 - c)),
        Rotation::R270 => ImageY::from_fn(w, h, |r, c| img.get(h - 1 - c, r)),
    }
}

/// Enumerates augmented copies in a fixed order: identity, horizontal flip,
/// vertical flip, rotations; then, for each downscale factor, the same
/// geometric sequence resized by that factor.
pub fn augment(img: &ImageY, spec: &AugmentSpec) -> Result<Vec<ImageY>> {
    let mut geometric = vec![img.clone()];
    if spec.flip_horizontal {
        geometric.push(flip_horizontal(img));
    }
    if spec.flip_vertical {
        geometric.push(flip_vertical(img));
    }
    for &r in &spec.rotations {
        geometric.push(rotate(img, r));
    }
    let mut out = Vec::with_capacity(spec.variants());
    out.extend(geometric.iter().cloned());
    for &s in &spec.downscales {
        for g in &geometric {
            out.push(bicubic_resize(g, s)?);
        }
    }
    Ok(out)
}
