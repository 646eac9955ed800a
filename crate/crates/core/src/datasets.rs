//! MNIST (IDX) and CIFAR-10 (binary) loaders, augmentation and seeded
//! per-class subsets.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, NbqError, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SetMeta {
    pub source: String,
    /// Per-channel `(mean, std)` subtracted and divided out, if any.
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
    /// Zero border added on each side of the original image.
    pub pad: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    /// `N × C × H × W`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub meta: SetMeta,
}

impl LabeledSet {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, meta: SetMeta) -> Result<Self> {
        let (n, ..) = images.dims4()?;
        if n != labels.len() {
            return arg_err(format!("{n} images but {} labels", labels.len()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return arg_err(format!("label {l} outside 0..{classes}"));
        }
        Ok(Self { images, labels, classes, meta })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one sample.
    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let images = self.images.select_rows(idx)?;
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Ok(Self { images, labels, classes: self.classes, meta: self.meta.clone() })
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

fn format_err<T>(offset: u64, reason: impl Into<String>) -> Result<T> {
    Err(NbqError::Format { offset, reason: reason.into() })
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    match bytes.get(at..at + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => format_err(bytes.len() as u64, "file ends inside the IDX header"),
    }
}

/// Parses an IDX3 image file into a `count × rows × cols` byte buffer.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return format_err(0, format!("bad IDX image magic {magic:#010x}"));
    }
    let (n, rows, cols) = (be_u32(bytes, 4)? as usize, be_u32(bytes, 8)? as usize, be_u32(bytes, 12)? as usize);
    let need = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| NbqError::Format { offset: 4, reason: "image dimensions overflow".into() })?;
    let body = &bytes[16..];
    if body.len() < need {
        return format_err(bytes.len() as u64, format!("truncated: {need} pixel bytes expected, {} present", body.len()));
    }
    if body.len() > need {
        return format_err((16 + need) as u64, "trailing bytes after the last image");
    }
    Ok((n, rows, cols, body.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return format_err(0, format!("bad IDX label magic {magic:#010x}"));
    }
    let n = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return format_err(bytes.len() as u64, format!("truncated: {n} labels expected, {} present", body.len()));
    }
    if body.len() > n {
        return format_err((8 + n) as u64, "trailing bytes after the last label");
    }
    Ok(body.to_vec())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| NbqError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Builds an MNIST set from raw IDX contents, scaling pixels to `[0, 1]`
/// and adding a zero border of `pad` pixels.
pub fn mnist_from_idx(images: &[u8], labels: &[u8], pad: usize) -> Result<LabeledSet> {
    let (n, rows, cols, px) = parse_idx_images(images)?;
    let lab = parse_idx_labels(labels)?;
    if lab.len() != n {
        return format_err(4, format!("{n} images but {} labels", lab.len()));
    }
    if let Some(i) = lab.iter().position(|&l| l > 9) {
        return format_err((8 + i) as u64, format!("label {} is not a digit", lab[i]));
    }
    let (h, w) = (rows + 2 * pad, cols + 2 * pad);
    let mut data = vec![0.0; n * h * w];
    for s in 0..n {
        for y in 0..rows {
            for x in 0..cols {
                data[s * h * w + (y + pad) * w + x + pad] = px[(s * rows + y) * cols + x] as f64 / 255.0;
            }
        }
    }
    let meta = SetMeta { source: "mnist".into(), pad, ..Default::default() };
    LabeledSet::new(Tensor::new(vec![n, 1, h, w], data)?, lab.into_iter().map(usize::from).collect(), 10, meta)
}

pub fn mnist_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let stem = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    (dir.join(format!("{stem}-images-idx3-ubyte")), dir.join(format!("{stem}-labels-idx1-ubyte")))
}

/// Loads one MNIST split from the standard IDX file names in `dir`, padded
/// by `pad` pixels per side (2 turns 28×28 into 32×32).
pub fn load_mnist(dir: &Path, split: Split, pad: usize) -> Result<LabeledSet> {
    let (ip, lp) = mnist_paths(dir, split);
    mnist_from_idx(&read(&ip)?, &read(&lp)?, pad)
}

/// Splits CIFAR-10 records into labels and raw CHW pixel bytes.
pub fn parse_cifar_records(bytes: &[u8]) -> Result<(Vec<u8>, Vec<u8>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let whole = bytes.len() / CIFAR_RECORD * CIFAR_RECORD;
        return format_err(whole as u64, format!("record length is {CIFAR_RECORD} bytes; {} left over", bytes.len() - whole));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    for (i, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return format_err((i * CIFAR_RECORD) as u64, format!("label {} outside 0..10", rec[0]));
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

fn cifar_files(dir: &Path, split: Split) -> Vec<PathBuf> {
    match split {
        Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    }
}

fn cifar_raw(dir: &Path, split: Split) -> Result<(Vec<u8>, Vec<u8>)> {
    let (mut labels, mut pixels) = (Vec::new(), Vec::new());
    for p in cifar_files(dir, split) {
        let (l, px) = parse_cifar_records(&read(&p)?)?;
        labels.extend(l);
        pixels.extend(px);
    }
    Ok((labels, pixels))
}

/// Per-channel mean and population standard deviation of `[0,1]`-scaled
/// CHW pixel bytes.
pub fn channel_stats(pixels: &[u8], channels: usize) -> (Vec<f64>, Vec<f64>) {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut sum = vec![0.0; channels];
    let mut sq = vec![0.0; channels];
    let mut count = vec![0usize; channels];
    for (i, &p) in pixels.iter().enumerate() {
        let c = (i / plane) % channels;
        let v = p as f64 / 255.0;
        sum[c] += v;
        sq[c] += v * v;
        count[c] += 1;
    }
    let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n.max(1) as f64).collect();
    let std = sq
        .iter()
        .zip(&count)
        .zip(&mean)
        .map(|((q, &n), m)| (q / n.max(1) as f64 - m * m).max(0.0).sqrt())
        .collect();
    (mean, std)
}

pub fn cifar_from_raw(labels: Vec<u8>, pixels: &[u8], mean: &[f64], std: &[f64]) -> Result<LabeledSet> {
    let n = labels.len();
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    if std.iter().any(|&s| !(s > 0.0)) {
        return Err(NbqError::Degenerate("a channel has zero standard deviation".into()));
    }
    let data = pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let c = (i / plane) % 3;
            (p as f64 / 255.0 - mean[c]) / std[c]
        })
        .collect();
    let meta = SetMeta { source: "cifar10".into(), channel_mean: mean.to_vec(), channel_std: std.to_vec(), pad: 0 };
    LabeledSet::new(
        Tensor::new(vec![n, 3, CIFAR_SIDE, CIFAR_SIDE], data)?,
        labels.into_iter().map(usize::from).collect(),
        10,
        meta,
    )
}

/// Loads CIFAR-10 `(train, test)`, both normalized with the training split's
/// per-channel statistics.
pub fn load_cifar10(dir: &Path) -> Result<(LabeledSet, LabeledSet)> {
    let (tl, tp) = cifar_raw(dir, Split::Train)?;
    let (mean, std) = channel_stats(&tp, 3);
    let train = cifar_from_raw(tl, &tp, &mean, &std)?;
    let (el, ep) = cifar_raw(dir, Split::Test)?;
    let test = cifar_from_raw(el, &ep, &mean, &std)?;
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Zero padding before a random crop back to the original size; 0 disables.
    pub crop_pad: usize,
    pub flip: bool,
}

impl AugmentPolicy {
    pub const OFF: Self = Self { crop_pad: 0, flip: false };
    pub const CIFAR: Self = Self { crop_pad: 4, flip: true };

    pub fn is_off(&self) -> bool {
        self.crop_pad == 0 && !self.flip
    }
}

pub fn flip_horizontal(sample: &mut [f64], w: usize) {
    for row in sample.chunks_mut(w) {
        row.reverse();
    }
}

/// Random crop from a zero-padded copy plus a coin-flip mirror, per sample.
pub fn augment(batch: &mut Tensor, policy: AugmentPolicy, rng: &mut impl Rng) -> Result<()> {
    if policy.is_off() {
        return Ok(());
    }
    let (n, c, h, w) = batch.dims4()?;
    let p = policy.crop_pad;
    let mut scratch = vec![0.0; c * h * w];
    for s in 0..n {
        let sample = &mut batch.data_mut()[s * c * h * w..(s + 1) * c * h * w];
        if p > 0 {
            let dy = rng.random_range(0..=2 * p) as isize - p as isize;
            let dx = rng.random_range(0..=2 * p) as isize - p as isize;
            scratch.iter_mut().for_each(|v| *v = 0.0);
            for ch in 0..c {
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx >= 0 && sx < w as isize {
                            scratch[(ch * h + y) * w + x] = sample[(ch * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
            }
            sample.copy_from_slice(&scratch);
        }
        if policy.flip && rng.random_bool(0.5) {
            flip_horizontal(sample, w);
        }
    }
    Ok(())
}

/// Up to `n_per_class` samples of every class, drawn by a seeded shuffle and
/// returned in original order.
pub fn subset(set: &LabeledSet, n_per_class: usize, seed: u64) -> Result<LabeledSet> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut taken = vec![0usize; set.classes];
    let mut keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| {
            let l = set.labels[i];
            let ok = taken[l] < n_per_class;
            taken[l] += ok as usize;
            ok
        })
        .collect();
    keep.sort_unstable();
    set.select(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        img.extend([0, 255, 51, 102, 0, 0, 255, 255, 255, 0, 0, 1]);
        let lab = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (img, lab)
    }

    #[test]
    fn idx_fixture_decodes() {
        let (img, lab) = idx_fixture();
        let set = mnist_from_idx(&img, &lab, 0).unwrap();
        assert_eq!(set.images.shape(), &[2, 1, 2, 3]);
        assert_eq!(set.labels, vec![7, 3]);
        assert_eq!(&set.images.data()[..3], &[0.0, 1.0, 0.2]);
        assert_eq!(set.images.data()[11], 1.0 / 255.0);
        let padded = mnist_from_idx(&img, &lab, 1).unwrap();
        assert_eq!(padded.images.shape(), &[2, 1, 4, 5]);
        assert_eq!(padded.images.data()[7], 1.0);
        assert_eq!(padded.images.data()[..5].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let (mut img, lab) = idx_fixture();
        let mut bad = img.clone();
        bad[3] = 1;
        assert!(matches!(mnist_from_idx(&bad, &lab, 0), Err(NbqError::Format { offset: 0, .. })));
        img.pop();
        assert!(matches!(mnist_from_idx(&img, &lab, 0), Err(NbqError::Format { offset: 27, .. })));
        assert!(matches!(parse_idx_labels(&lab[..5]), Err(NbqError::Format { .. })));
    }

    #[test]
    fn cifar_records() {
        let mut bytes = Vec::new();
        for r in 0..2u8 {
            bytes.push(r + 4);
            bytes.extend((0..3072).map(|i| ((i * 7 + r as usize) % 256) as u8));
        }
        let (labels, pixels) = parse_cifar_records(&bytes).unwrap();
        assert_eq!(labels, vec![4, 5]);
        assert_eq!(&pixels[..3072], &bytes[1..3073]);
        assert!(matches!(parse_cifar_records(&bytes[..3000]), Err(NbqError::Format { offset: 0, .. })));
        let (mean, std) = channel_stats(&pixels, 3);
        let set = cifar_from_raw(labels, &pixels, &mean, &std).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|s| set.images.data()[(s * 3 + c) * 1024..(s * 3 + c + 1) * 1024].to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-9);
        }
    }

    #[test]
    fn augmentation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let orig = Tensor::from_fn(&[3, 2, 8, 8], |i| i as f64);
        let mut t = orig.clone();
        augment(&mut t, AugmentPolicy::OFF, &mut rng).unwrap();
        assert_eq!(t, orig);
        augment(&mut t, AugmentPolicy::CIFAR, &mut rng).unwrap();
        assert_eq!(t.shape(), orig.shape());
        let mut s = orig.data()[..64].to_vec();
        flip_horizontal(&mut s, 8);
        flip_horizontal(&mut s, 8);
        assert_eq!(&s[..], &orig.data()[..64]);
        let (mut a, mut b) = (orig.clone(), orig.clone());
        augment(&mut a, AugmentPolicy::CIFAR, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        augment(&mut b, AugmentPolicy::CIFAR, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subsets() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let set = LabeledSet::new(Tensor::from_fn(&[50, 1, 1, 1], |i| i as f64), labels, 5, SetMeta::default()).unwrap();
        assert!(subset(&set, 0, 1).unwrap().is_empty());
        assert_eq!(subset(&set, 100, 1).unwrap(), set);
        let s = subset(&set, 3, 9).unwrap();
        assert_eq!(s.class_histogram(), vec![3; 5]);
        assert_eq!(s, subset(&set, 3, 9).unwrap());
    }
}
