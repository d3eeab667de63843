//! Luminance PSNR / SSIM with border cropping, and dataset evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{bicubic_resize, bicubic_resize_to, load_y, ImageY};
use crate::error::{Error, Result};
use crate::model::RlcscParams;

/// Removes `px` pixels from every side.
pub fn crop_border(img: &ImageY, px: usize) -> Result<ImageY> {
    let (h, w) = img.dims();
    if 2 * px >= h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "cannot crop {px} pixels from each side of a {h}x{w} image"
        )));
    }
    img.crop(px, px, h - 2 * px, w - 2 * px)
}

fn check_same(a: &ImageY, b: &ImageY, op: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::InvalidArgument(format!(
            "{op}: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// `10·log10(1 / mse)` for unit peak; identical images give `+∞`.
pub fn psnr(a: &ImageY, b: &ImageY) -> Result<f64> {
    check_same(a, b, "psnr")?;
    if a.samples().is_empty() {
        return Err(Error::Empty("psnr of empty images"));
    }
    let mse = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.samples().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = g.iter().sum();
    g.map(|v| v / sum)
}

/// Separable 'valid' filtering with the SSIM window.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|k| g[k] * src[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW)
                .map(|k| g[k] * rows[(r + k) * ow + c])
                .sum();
        }
    }
    out
}

/// Single-scale SSIM: 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`,
/// `K2 = 0.03`, dynamic range 1, averaged over window positions that lie
/// fully inside the image.
pub fn ssim(a: &ImageY, b: &ImageY) -> Result<f64> {
    check_same(a, b, "ssim")?;
    let (h, w) = a.dims();
    if h.min(w) < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let g = gaussian_window();
    let (x, y) = (a.samples(), b.samples());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mu_x = filter_valid(x, h, w, &g);
    let mu_y = filter_valid(y, h, w, &g);
    let e_xx = filter_valid(&xx, h, w, &g);
    let e_yy = filter_valid(&yy, h, w, &g);
    let e_xy = filter_valid(&xy, h, w, &g);
    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let num = (2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2);
        let den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2);
        total += num / den;
    }
    Ok(total / n as f64)
}

/// What produces the super-resolved image.
#[derive(Clone, Copy, Debug)]
pub enum Predictor<'a> {
    /// The interpolated input itself.
    Bicubic,
    /// `I_y` plus the network residual.
    Model(&'a RlcscParams<f32>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub scale: usize,
    /// Border pixels removed per side before scoring.
    pub crop: usize,
    /// Round the ground truth, the low-resolution image and the prediction
    /// to 8-bit levels, as in integer-image pipelines.
    pub quantize: bool,
}

impl EvalOptions {
    pub fn new(scale: usize) -> Self {
        EvalOptions {
            scale,
            crop: scale,
            quantize: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub scale: usize,
    pub crop: usize,
    pub images: Vec<ImageScore>,
    /// Files that could not be evaluated, with the reason.
    pub missing: Vec<(PathBuf, String)>,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.images.iter().map(|s| s.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.images.iter().map(|s| s.ssim))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,psnr,ssim\n");
        for i in &self.images {
            let _ = writeln!(s, "{},{:.6},{:.6}", i.name, i.psnr, i.ssim);
        }
        let _ = writeln!(s, "mean,{:.6},{:.6}", self.mean_psnr(), self.mean_ssim());
        s
    }

    /// Aligned plain-text table ending in a `PSNR/SSIM` mean row.
    pub fn to_table(&self, label: &str) -> String {
        let width = self
            .images
            .iter()
            .map(|i| i.name.len())
            .chain([label.len(), 7])
            .max()
            .unwrap_or(7);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>8}  {:>7}", "image", "PSNR", "SSIM");
        for i in &self.images {
            let _ = writeln!(s, "{:<width$}  {:>8.2}  {:>7.4}", i.name, i.psnr, i.ssim);
        }
        let _ = writeln!(
            s,
            "{:<width$}  x{}  {:.2}/{:.4}",
            label,
            self.scale,
            self.mean_psnr(),
            self.mean_ssim()
        );
        for (p, why) in &self.missing {
            let _ = writeln!(s, "missing: {} ({why})", p.display());
        }
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Super-resolves the ground truth `hr` (already the full image) and
/// scores it. Returns `(prediction, ground truth)` before cropping.
pub fn predict(
    hr: &ImageY,
    predictor: Predictor<'_>,
    opts: &EvalOptions,
) -> Result<(ImageY, ImageY)> {
    let s = opts.scale;
    if s == 0 || hr.height() < s || hr.width() < s {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is smaller than scale {s}",
            hr.height(),
            hr.width()
        )));
    }
    let q = |img: ImageY| if opts.quantize { img.quantize8() } else { img };
    let hr = q(hr.modcrop(s)?);
    let lr = q(bicubic_resize(&hr, 1.0 / s as f64)?);
    let ilr = q(bicubic_resize_to(&lr, hr.height(), hr.width())?);
    let out = match predictor {
        Predictor::Bicubic => ilr,
        Predictor::Model(params) => {
            let r = params.residual(&ilr.to_tensor::<f32>())?;
            let r = ImageY::from_tensor(&r);
            let sum = ilr
                .samples()
                .iter()
                .zip(r.samples())
                .map(|(a, b)| a + b)
                .collect();
            q(ImageY::new(hr.height(), hr.width(), sum)?)
        }
    };
    Ok((out.clamp01(), hr))
}

pub fn score(hr_path: &Path, predictor: Predictor<'_>, opts: &EvalOptions) -> Result<ImageScore> {
    let img = load_y(hr_path)?;
    let (pred, hr) = predict(&img, predictor, opts)?;
    let pred = crop_border(&pred, opts.crop)?;
    let hr = crop_border(&hr, opts.crop)?;
    Ok(ImageScore {
        name: hr_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        psnr: psnr(&pred, &hr)?,
        ssim: ssim(&pred, &hr)?,
    })
}

/// Scores every image; failures are collected in `missing` rather than
/// aborting the run.
pub fn evaluate(predictor: Predictor<'_>, images: &[PathBuf], opts: &EvalOptions) -> EvalReport {
    let mut report = EvalReport {
        scale: opts.scale,
        crop: opts.crop,
        images: Vec::new(),
        missing: Vec::new(),
    };
    for path in images {
        match score(path, predictor, opts) {
            Ok(s) => report.images.push(s),
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                report.missing.push((path.clone(), e.to_string()));
            }
        }
    }
    report
}
