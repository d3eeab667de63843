use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index;

use super::{augment, make_ilr, AugmentSpec, ImageY};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 8] = b"RLCSCPAT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchOptions {
    pub patch: usize,
    pub stride: usize,
    /// Keep a seeded random subset of at most this many pairs, in
    /// enumeration order.
    pub max_pairs: Option<usize>,
    pub seed: u64,
}

impl Default for PatchOptions {
    fn default() -> Self {
        PatchOptions {
            patch: 33,
            stride: 33,
            max_pairs: None,
            seed: 0,
        }
    }
}

/// Aligned `(I_y, I_x)` training pairs, stored as `f32` with each pair's
/// ILR patch followed by its HR patch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    patch: usize,
    stride: usize,
    scales: Vec<usize>,
    data: Vec<f32>,
}

impl PatchSet {
    pub fn new(patch: usize, stride: usize, scales: Vec<usize>) -> Self {
        PatchSet {
            patch,
            stride,
            scales,
            data: Vec::new(),
        }
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn scales(&self) -> &[usize] {
        &self.scales
    }

    fn plane(&self) -> usize {
        self.patch * self.patch
    }

    pub fn len(&self) -> usize {
        if self.patch == 0 {
            0
        } else {
            self.data.len() / (2 * self.plane())
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends one pair; both slices must hold `patch²` samples.
    pub fn push(&mut self, ilr: &[f32], hr: &[f32]) -> Result<()> {
        let p = self.plane();
        if ilr.len() != p || hr.len() != p {
            return Err(Error::DimensionMismatch {
                op: "PatchSet::push",
                expected: p,
                found: if ilr.len() != p { ilr.len() } else { hr.len() },
            });
        }
        self.data.extend_from_slice(ilr);
        self.data.extend_from_slice(hr);
        Ok(())
    }

    /// `(ILR, HR)` slices of pair `i`.
    pub fn pair(&self, i: usize) -> (&[f32], &[f32]) {
        let p = self.plane();
        let start = 2 * p * i;
        (
            &self.data[start..start + p],
            &self.data[start + p..start + 2 * p],
        )
    }

    /// Stacks the selected pairs into `(b, 1, patch, patch)` input and
    /// target tensors.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        if indices.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let n = self.len();
        let p = self.plane();
        let mut input = Vec::with_capacity(indices.len() * p);
        let mut target = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "patch index {i} out of range for {n} pairs"
                )));
            }
            let (a, b) = self.pair(i);
            input.extend_from_slice(a);
            target.extend_from_slice(b);
        }
        let shape = Shape::new(indices.len(), 1, self.patch, self.patch);
        Ok((Tensor::new(shape, input)?, Tensor::new(shape, target)?))
    }

    /// Keeps only the listed pairs, in the given order.
    pub fn select(&self, indices: &[usize]) -> PatchSet {
        let mut out = PatchSet::new(self.patch, self.stride, self.scales.clone());
        for &i in indices {
            let (a, b) = self.pair(i);
            out.data.extend_from_slice(a);
            out.data.extend_from_slice(b);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.patch as u16).to_le_bytes());
        out.extend_from_slice(&(self.stride as u16).to_le_bytes());
        out.push(self.scales.len() as u8);
        out.extend(self.scales.iter().map(|&s| s as u8));
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("patch file", m.to_string());
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8).ok_or_else(|| bad("truncated header"))? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header"))?);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header"))?);
        let patch =
            u16::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header"))?) as usize;
        let stride =
            u16::from_le_bytes(cur.array().ok_or_else(|| bad("truncated header"))?) as usize;
        let n_scales = cur.take(1).ok_or_else(|| bad("truncated header"))?[0] as usize;
        let scales = cur
            .take(n_scales)
            .ok_or_else(|| bad("truncated header"))?
            .iter()
            .map(|&s| s as usize)
            .collect();
        if patch == 0 {
            return Err(bad("zero patch size"));
        }
        let floats = (count as usize)
            .checked_mul(2 * patch * patch)
            .ok_or_else(|| bad("count overflow"))?;
        let payload = &bytes[cur.pos..];
        if payload.len() != floats * 4 {
            return Err(bad(&format!(
                "payload holds {} bytes, header implies {}",
                payload.len(),
                floats * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(PatchSet {
            patch,
            stride,
            scales,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().expect("length checked"))
    }
}

fn extract(set: &mut PatchSet, ilr: &ImageY, hr: &ImageY) {
    let (p, stride) = (set.patch, set.stride);
    let (h, w) = hr.dims();
    for top in (0..=h - p).step_by(stride) {
        for left in (0..=w - p).step_by(stride) {
            for img in [ilr, hr] {
                for r in top..top + p {
                    let row = &img.samples()[r * w + left..r * w + left + p];
                    set.data.extend(row.iter().map(|&v| v as f32));
                }
            }
        }
    }
}

/// Augments every image, builds `(I_y, I_x)` for each SR scale and scans
/// patches top-left to bottom-right. Images smaller than one patch after
/// augmentation are skipped with a warning.
pub fn build_patchset(
    images: &[ImageY],
    spec: &AugmentSpec,
    opts: &PatchOptions,
) -> Result<PatchSet> {
    if opts.patch == 0 || opts.stride == 0 || opts.patch > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "invalid patch {} / stride {}",
            opts.patch, opts.stride
        )));
    }
    if opts.stride > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!(
            "stride {} too large",
            opts.stride
        )));
    }
    if spec.sr_scales.is_empty() {
        return Err(Error::InvalidArgument("no SR scales selected".into()));
    }
    let mut set = PatchSet::new(opts.patch, opts.stride, spec.sr_scales.clone());
    for (i, img) in images.iter().enumerate() {
        for (v, variant) in augment(img, spec)?.iter().enumerate() {
            for &scale in &spec.sr_scales {
                let (h, w) = variant.dims();
                if h < opts.patch.max(scale) || w < opts.patch.max(scale) {
                    log::warn!("image {i} variant {v}: {h}x{w} is smaller than the patch, skipped");
                    continue;
                }
                let (ilr, hr) = make_ilr(variant, scale)?;
                if hr.height() < opts.patch || hr.width() < opts.patch {
                    log::warn!(
                        "image {i} variant {v}: cropped size below patch at x{scale}, skipped"
                    );
                    continue;
                }
                extract(&mut set, &ilr, &hr);
            }
        }
    }
    if set.is_empty() {
        return Err(Error::Empty("patch set"));
    }
    if let Some(max) = opts.max_pairs {
        if max < set.len() {
            let mut rng = stream(opts.seed, Stream::Subsample);
            let mut keep = index::sample(&mut rng, set.len(), max).into_vec();
            keep.sort_unstable();
            set = set.select(&keep);
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(h: usize, w: usize) -> ImageY {
        ImageY::from_fn(h, w, |r, c| ((r * 13 + c * 7) % 17) as f64 / 16.0)
    }

    fn none(scales: Vec<usize>) -> AugmentSpec {
        AugmentSpec::none(scales)
    }

    #[test]
    fn position_counts() {
        let opts = PatchOptions::default();
        for ((h, w), n) in [((99, 99), 9), ((66, 99), 6), ((33, 33), 1)] {
            let set = build_patchset(&[texture(h, w)], &none(vec![3]), &opts).unwrap();
            assert_eq!(set.len(), n, "{h}x{w}");
        }
    }

    #[test]
    fn hr_patches_are_exact_regions() {
        let img = texture(70, 80);
        let opts = PatchOptions {
            patch: 20,
            stride: 15,
            ..Default::default()
        };
        let set = build_patchset(std::slice::from_ref(&img), &none(vec![2]), &opts).unwrap();
        let (ilr, hr) = make_ilr(&img, 2).unwrap();
        // Second patch of the first row starts at column 15.
        let (a, b) = set.pair(1);
        for r in 0..20 {
            for c in 0..20 {
                assert_eq!(b[r * 20 + c], hr.get(r, 15 + c) as f32);
                assert_eq!(a[r * 20 + c], ilr.get(r, 15 + c) as f32);
            }
        }
    }

    #[test]
    fn small_images_skipped_and_empty_is_error() {
        let opts = PatchOptions::default();
        assert!(matches!(
            build_patchset(&[texture(20, 50)], &none(vec![2]), &opts),
            Err(Error::Empty(_))
        ));
        let set =
            build_patchset(&[texture(20, 50), texture(40, 40)], &none(vec![2]), &opts).unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn serialization_round_trip() {
        let set = build_patchset(
            &[texture(40, 70)],
            &none(vec![2, 3]),
            &PatchOptions::default(),
        )
        .unwrap();
        let bytes = set.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = PatchSet::from_bytes(&bytes).unwrap();
        assert_eq!(back, set);
        assert!(PatchSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(PatchSet::from_bytes(&wrong).is_err());
    }

    #[test]
    fn subsampling_is_seeded_and_ordered() {
        let imgs = [texture(99, 99), texture(66, 132)];
        let opts = PatchOptions {
            max_pairs: Some(7),
            seed: 5,
            ..Default::default()
        };
        let a = build_patchset(&imgs, &none(vec![3]), &opts).unwrap();
        let b = build_patchset(&imgs, &none(vec![3]), &opts).unwrap();
        assert_eq!(a.len(), 7);
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn batch_shapes() {
        let set =
            build_patchset(&[texture(66, 66)], &none(vec![2]), &PatchOptions::default()).unwrap();
        let (x, y) = set.batch(&[3, 0]).unwrap();
        assert_eq!(x.shape(), Shape::new(2, 1, 33, 33));
        assert_eq!(&y.data()[..33 * 33], set.pair(3).1);
        assert!(set.batch(&[4]).is_err());
        assert!(set.batch(&[]).is_err());
    }
}
