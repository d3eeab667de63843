//! Separable bicubic resampling compatible with the MATLAB `imresize`
//! default used throughout the super-resolution literature: Keys cubic
//! kernel with `a = -0.5`, kernel widened by `1/scale` when shrinking, and
//! symmetric (mirror) extension at the borders.

use super::ImageY;
use crate::error::{Error, Result};

fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Taps contributing to one output sample: 0-based input indices and
/// normalised weights.
struct Taps {
    indices: Vec<usize>,
    weights: Vec<f64>,
}

fn mirror(index: i64, len: usize) -> usize {
    // 1-based index into [1..len, len..1], periodic with period 2·len.
    let period = 2 * len as i64;
    let k = (index - 1).rem_euclid(period) as usize;
    if k < len {
        k
    } else {
        period as usize - 1 - k
    }
}

fn contributions(in_len: usize, out_len: usize, scale: f64) -> Vec<Taps> {
    let antialias = scale < 1.0;
    let width = if antialias { 4.0 / scale } else { 4.0 };
    let taps = width.ceil() as i64 + 2;
    (1..=out_len)
        .map(|x| {
            let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - width / 2.0).floor() as i64;
            let mut indices = Vec::with_capacity(taps as usize);
            let mut weights = Vec::with_capacity(taps as usize);
            for j in 0..taps {
                let idx = left + j;
                let d = u - idx as f64;
                let w = if antialias {
                    scale * cubic(scale * d)
                } else {
                    cubic(d)
                };
                indices.push(mirror(idx, in_len));
                weights.push(w);
            }
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
            Taps { indices, weights }
        })
        .collect()
}

fn resize_rows(img: &ImageY, out_h: usize, scale: f64) -> ImageY {
    let (h, w) = img.dims();
    let taps = contributions(h, out_h, scale);
    let mut out = vec![0.0; out_h * w];
    for (r, t) in taps.iter().enumerate() {
        let dst = &mut out[r * w..(r + 1) * w];
        for (&i, &wt) in t.indices.iter().zip(&t.weights) {
            if wt == 0.0 {
                continue;
            }
            let src = &img.samples()[i * w..(i + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wt * s;
            }
        }
    }
    ImageY::new(out_h, w, out).expect("sized above")
}

fn resize_cols(img: &ImageY, out_w: usize, scale: f64) -> ImageY {
    let (h, w) = img.dims();
    let taps = contributions(w, out_w, scale);
    let mut out = vec![0.0; h * out_w];
    for r in 0..h {
        let src = &img.samples()[r * w..(r + 1) * w];
        for (c, t) in taps.iter().enumerate() {
            out[r * out_w + c] = t
                .indices
                .iter()
                .zip(&t.weights)
                .filter(|(_, &wt)| wt != 0.0)
                .map(|(&i, &wt)| wt * src[i])
                .sum();
        }
    }
    ImageY::new(h, out_w, out).expect("sized above")
}

fn resize(img: &ImageY, out_h: usize, out_w: usize, sh: f64, sw: f64) -> ImageY {
    // The dimension with the smaller scale goes first; rows on ties.
    if sh <= sw {
        let tmp = resize_rows(img, out_h, sh);
        resize_cols(&tmp, out_w, sw)
    } else {
        let tmp = resize_cols(img, out_w, sw);
        resize_rows(&tmp, out_h, sh)
    }
}

/// Resizes by a uniform factor; output sides are `round(side · scale)`.
pub fn bicubic_resize(img: &ImageY, scale: f64) -> Result<ImageY> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "resize scale must be positive, got {scale}"
        )));
    }
    let (h, w) = img.dims();
    let out_h = (h as f64 * scale).round() as usize;
    let out_w = (w as f64 * scale).round() as usize;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resizing {h}x{w} by {scale} gives a degenerate {out_h}x{out_w} image"
        )));
    }
    Ok(resize(img, out_h, out_w, scale, scale))
}

/// Resizes to an explicit output size, with per-axis scale `out / in`.
pub fn bicubic_resize_to(img: &ImageY, out_h: usize, out_w: usize) -> Result<ImageY> {
    let (h, w) = img.dims();
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot resize {h}x{w} to {out_h}x{out_w}"
        )));
    }
    Ok(resize(
        img,
        out_h,
        out_w,
        out_h as f64 / h as f64,
        out_w as f64 / w as f64,
    ))
}
