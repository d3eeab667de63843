//! Image ingestion, resampling, augmentation and training-patch extraction.

mod augment;
mod bicubic;
mod image_io;
mod manifest;
mod patches;
pub mod synthetic;

pub use augment::{augment, flip_horizontal, flip_vertical, rotate, AugmentSpec, Rotation};
pub use bicubic::{bicubic_resize, bicubic_resize_to};
pub use image_io::{load_y, load_ycbcr, rgb_to_ycbcr, save_rgb, save_y, ycbcr_to_rgb, YCbCrImage};
pub use manifest::read_manifest;
pub use patches::{build_patchset, PatchOptions, PatchSet};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// A single-channel (luminance) image with samples nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageY {
    height: usize,
    width: usize,
    samples: Vec<f64>,
}

impl ImageY {
    pub fn new(height: usize, width: usize, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != height * width {
            return Err(Error::DimensionMismatch {
                op: "ImageY::new",
                expected: height * width,
                found: samples.len(),
            });
        }
        Ok(ImageY {
            height,
            width,
            samples,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ImageY {
            height,
            width,
            samples: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut samples = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                samples.push(f(r, c));
            }
        }
        ImageY {
            height,
            width,
            samples,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.samples[row * self.width + col]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ImageY {
            height: self.height,
            width: self.width,
            samples: self.samples.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Rounds to the nearest 8-bit level (half away from zero) after
    /// clamping to `[0, 1]`.
    pub fn quantize8(&self) -> Self {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
    }

    /// Copies the `height × width` window whose top-left corner is
    /// `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width}+{top}+{left} outside {}x{} image",
                self.height, self.width
            )));
        }
        Ok(ImageY::from_fn(height, width, |r, c| {
            self.get(top + r, left + c)
        }))
    }

    /// Crops from the bottom and right so both sides are multiples of
    /// `factor`.
    pub fn modcrop(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument(
                "modcrop factor must be positive".into(),
            ));
        }
        let h = self.height - self.height % factor;
        let w = self.width - self.width % factor;
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "{}x{} image is smaller than scale {factor}",
                self.height, self.width
            )));
        }
        self.crop(0, 0, h, w)
    }

    /// `(1, 1, h, w)` tensor view of the image.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            Shape::new(1, 1, self.height, self.width),
            self.samples.iter().map(|&v| T::from_f64(v)).collect(),
        )
        .expect("length matches by construction")
    }

    /// Reads the first channel of batch item 0.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        let s = t.shape();
        let plane = s.plane();
        ImageY {
            height: s.h,
            width: s.w,
            samples: t.data()[..plane].iter().map(|v| v.as_f64()).collect(),
        }
    }
}

/// Builds the network input for super-resolving `image` by `scale`.
///
/// Returns `(I_y, I_x)`: `I_x` is `image` modulo-cropped to a multiple of
/// `scale`, and `I_y` is `I_x` bicubic-downscaled by `1/scale` then
/// upscaled back to the same grid.
pub fn make_ilr(image: &ImageY, scale: usize) -> Result<(ImageY, ImageY)> {
    if scale == 0 || image.height() < scale || image.width() < scale {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is smaller than scale {scale}",
            image.height(),
            image.width()
        )));
    }
    let hr = image.modcrop(scale)?;
    let lr = bicubic_resize(&hr, 1.0 / scale as f64)?;
    let ilr = bicubic_resize_to(&lr, hr.height(), hr.width())?;
    Ok((ilr, hr))
}
