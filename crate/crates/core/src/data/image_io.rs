//! PNG / PGM reading and writing with BT.601 studio-swing YCbCr.
//!
//! With `R, G, B ∈ [0, 1]`:
//!
//! ```text
//! Y  =  16/255 + ( 65.481 R + 128.553 G +  24.966 B) / 255
//! Cb = 128/255 + (-37.797 R -  74.203 G + 112.000 B) / 255
//! Cr = 128/255 + (112.000 R -  93.786 G -  18.214 B) / 255
//! ```
//!
//! Y therefore spans `[16/255, 235/255]` and is used as-is as the `[0, 1]`
//! working range. Grayscale files are taken as Y directly.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use super::ImageY;
use crate::error::{Error, Result};

const RGB_TO_YCBCR: [[f64; 3]; 3] = [
    [65.481, 128.553, 24.966],
    [-37.797, -74.203, 112.0],
    [112.0, -93.786, -18.214],
];
const YCBCR_OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

pub fn rgb_to_ycbcr(rgb: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, (row, off)) in out.iter_mut().zip(RGB_TO_YCBCR.iter().zip(YCBCR_OFFSET)) {
        *o = (off + row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2]) / 255.0;
    }
    out
}

fn inverse3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    inv
}

pub fn ycbcr_to_rgb(ycc: [f64; 3]) -> [f64; 3] {
    let inv = inverse3(RGB_TO_YCBCR);
    let centred = [
        ycc[0] * 255.0 - YCBCR_OFFSET[0],
        ycc[1] * 255.0 - YCBCR_OFFSET[1],
        ycc[2] * 255.0 - YCBCR_OFFSET[2],
    ];
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(inv) {
        *o = row[0] * centred[0] + row[1] * centred[1] + row[2] * centred[2];
    }
    out
}

/// Luminance plus optional chroma planes.
#[derive(Clone, Debug)]
pub struct YCbCrImage {
    pub y: ImageY,
    /// `(Cb, Cr)` when the source had colour.
    pub chroma: Option<(ImageY, ImageY)>,
}

enum Decoded {
    Gray(GrayImage),
    Rgb(RgbImage),
}

fn decode(path: &Path) -> Result<Decoded> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    match img {
        DynamicImage::ImageLuma8(g) => Ok(Decoded::Gray(g)),
        DynamicImage::ImageLumaA8(_) => Ok(Decoded::Gray(img.to_luma8())),
        DynamicImage::ImageRgb8(rgb) => Ok(Decoded::Rgb(rgb)),
        DynamicImage::ImageRgba8(_) => Ok(Decoded::Rgb(img.to_rgb8())),
        other => Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            detail: format!("{:?}; only 8-bit gray or RGB is accepted", other.color()),
        }),
    }
}

fn gray_plane(g: &GrayImage) -> ImageY {
    let (w, h) = g.dimensions();
    ImageY::new(
        h as usize,
        w as usize,
        g.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
    )
    .expect("dimensions from decoder")
}

/// Loads the luminance plane of an 8-bit grayscale or RGB image.
pub fn load_y(path: impl AsRef<Path>) -> Result<ImageY> {
    Ok(load_ycbcr(path)?.y)
}

pub fn load_ycbcr(path: impl AsRef<Path>) -> Result<YCbCrImage> {
    let path = path.as_ref();
    match decode(path)? {
        Decoded::Gray(g) => Ok(YCbCrImage {
            y: gray_plane(&g),
            chroma: None,
        }),
        Decoded::Rgb(rgb) => {
            let (w, h) = rgb.dimensions();
            let n = (w * h) as usize;
            let mut planes = [
                Vec::with_capacity(n),
                Vec::with_capacity(n),
                Vec::with_capacity(n),
            ];
            for px in rgb.pixels() {
                let ycc = rgb_to_ycbcr([
                    px[0] as f64 / 255.0,
                    px[1] as f64 / 255.0,
                    px[2] as f64 / 255.0,
                ]);
                for (p, v) in planes.iter_mut().zip(ycc) {
                    p.push(v);
                }
            }
            let [y, cb, cr] = planes;
            let (h, w) = (h as usize, w as usize);
            Ok(YCbCrImage {
                y: ImageY::new(h, w, y)?,
                chroma: Some((ImageY::new(h, w, cb)?, ImageY::new(h, w, cr)?)),
            })
        }
    }
}

#[inline]
fn to_u8(v: f64) -> u8 {
    // f64::round is half-away-from-zero.
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit grayscale PNG (or PGM, by extension).
pub fn save_y(img: &ImageY, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: Vec<u8> = img.samples().iter().map(|&v| to_u8(v)).collect();
    let g = GrayImage::from_raw(img.width() as u32, img.height() as u32, buf)
        .expect("buffer sized from image");
    g.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Converts Y/Cb/Cr planes back to RGB and writes an 8-bit PNG.
pub fn save_rgb(y: &ImageY, cb: &ImageY, cr: &ImageY, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if y.dims() != cb.dims() || y.dims() != cr.dims() {
        return Err(Error::InvalidArgument(
            "Y, Cb and Cr planes differ in size".into(),
        ));
    }
    let mut buf = Vec::with_capacity(y.samples().len() * 3);
    for ((&a, &b), &c) in y.samples().iter().zip(cb.samples()).zip(cr.samples()) {
        let rgb = ycbcr_to_rgb([a, b, c]);
        buf.extend(rgb.iter().map(|&v| to_u8(v)));
    }
    let img = RgbImage::from_raw(y.width() as u32, y.height() as u32, buf)
        .expect("buffer sized from image");
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_maps_to_studio_peak() {
        let [y, cb, cr] = rgb_to_ycbcr([1.0, 1.0, 1.0]);
        assert!((y - 235.0 / 255.0).abs() < 1e-12);
        assert!((cb - 128.0 / 255.0).abs() < 1e-12);
        assert!((cr - 128.0 / 255.0).abs() < 1e-12);
        let [y, _, _] = rgb_to_ycbcr([0.0, 0.0, 0.0]);
        assert!((y - 16.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn colour_round_trip() {
        for rgb in [[0.2, 0.5, 0.9], [1.0, 0.0, 0.3], [0.0, 0.0, 0.0]] {
            let back = ycbcr_to_rgb(rgb_to_ycbcr(rgb));
            for (a, b) in back.iter().zip(rgb) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gray_and_rgb_files() {
        let dir = tempfile::tempdir().unwrap();
        let gray_path = dir.path().join("g.png");
        GrayImage::from_raw(3, 2, vec![0, 51, 102, 153, 204, 255])
            .unwrap()
            .save(&gray_path)
            .unwrap();
        let g = load_y(&gray_path).unwrap();
        assert_eq!(g.dims(), (2, 3));
        assert_eq!(g.get(0, 1), 0.2);
        assert!(load_ycbcr(&gray_path).unwrap().chroma.is_none());

        let rgb_path = dir.path().join("c.png");
        RgbImage::from_raw(1, 1, vec![255, 255, 255])
            .unwrap()
            .save(&rgb_path)
            .unwrap();
        let c = load_y(&rgb_path).unwrap();
        assert!((c.get(0, 0) - 235.0 / 255.0).abs() < 1e-12);

        let pgm_path = dir.path().join("g.pgm");
        std::fs::write(&pgm_path, b"P5\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(load_y(&pgm_path).unwrap().samples(), &[0.0, 1.0]);
    }

    #[test]
    fn save_load_round_trip_within_quantum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.png");
        let img = ImageY::from_fn(5, 4, |r, c| (r as f64 * 0.173 + c as f64 * 0.0911) % 1.0);
        save_y(&img, &path).unwrap();
        let back = load_y(&path).unwrap();
        for (a, b) in back.samples().iter().zip(img.samples()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn sixteen_bit_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.png");
        image::ImageBuffer::<image::Luma<u16>, _>::from_raw(1, 1, vec![1000u16])
            .unwrap()
            .save(&path)
            .unwrap();
        assert!(matches!(load_y(&path), Err(Error::UnsupportedImage { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_y("/nonexistent/x.png"),
            Err(Error::Io { .. })
        ));
    }
}
