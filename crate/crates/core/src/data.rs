//! Desk-scale RGB classification data.
//!
//! # RAWD format
//!
//! All integers little-endian.
//!
//! | bytes          | field                                        |
//! |----------------|----------------------------------------------|
//! | 4              | magic `RAWD`                                 |
//! | 4              | `u32` image count `M`                        |
//! | 4              | `u32` channels (always 3)                    |
//! | 4              | `u32` height `H`                             |
//! | 4              | `u32` width `W`                              |
//! | 4              | `u32` class count                            |
//! | `4*M*3*H*W`    | `f32` pixels, `[M,3,H,W]` row-major, in [0,1] |
//! | `4*M`          | `i32` labels                                 |
//! | `M`            | `u8` split flag per image (0 train, 1 eval)  |

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Fnv64;
use crate::rng;
use crate::tensor::{Real, Tensor};

pub const RAWD_MAGIC: &[u8; 4] = b"RAWD";
const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("not a RAWD file (magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("truncated RAWD file: {section} needs {missing} more bytes")]
    Truncated { section: &'static str, missing: usize },
    #[error("RAWD file has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("image {index} has label {label} outside 0..{classes}")]
    LabelOutOfRange { index: usize, label: i64, classes: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic { seed: u64 },
    File { path: String },
}

/// Images in `[0,1]`, shape `[M,3,H,W]`, with a disjoint train/eval split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// `true` for eval images.
    pub is_eval: Vec<bool>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<usize>,
        classes: usize,
        is_eval: Vec<bool>,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        let s = images.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(DataError::Invalid(format!("images must be [M,3,H,W], got {s:?}")));
        }
        if labels.len() != s[0] || is_eval.len() != s[0] {
            return Err(DataError::Invalid(format!(
                "{} images, {} labels, {} split flags",
                s[0],
                labels.len(),
                is_eval.len()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(DataError::LabelOutOfRange {
                index,
                label: label as i64,
                classes,
            });
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            is_eval,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[3]
    }

    pub fn image_len(&self) -> usize {
        3 * self.height() * self.width()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.images.data()[i * len..(i + 1) * len]
    }

    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_eval[i]).collect()
    }

    pub fn eval_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_eval[i]).collect()
    }

    /// FNV-1a 64 over the RAWD encoding.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv64::new();
        h.update(&encode_raw(self));
        h.finish()
    }

    /// Keeps the listed images, in the given order.
    pub fn subset(&self, keep: &[usize]) -> Dataset {
        let len = self.image_len();
        let mut data = Vec::with_capacity(keep.len() * len);
        for &i in keep {
            data.extend_from_slice(self.image(i));
        }
        let shape = [keep.len(), 3, self.height(), self.width()];
        Dataset {
            images: Tensor::from_vec(&shape, data).expect("subset of a valid dataset"),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            is_eval: keep.iter().map(|&i| self.is_eval[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    /// Randomly shift each motif's edge by up to 1.5 pixels.
    pub jitter: bool,
    pub eval_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            classes: 4,
            per_class: 320,
            size: 11,
            noise: 0.15,
            jitter: true,
            eval_fraction: 0.2,
        }
    }
}

/// Oriented color-edge images.
///
/// Class `k` of `n` is a soft edge across the direction at angle `2*pi*k/n`,
/// with channel `c` modulated by `cos(phase_k + 2*pi*c/3)` so the classes
/// differ both in orientation and in color balance.
pub fn synth_oriented_patches(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    if cfg.classes < 2 {
        return Err(DataError::Invalid("need at least 2 classes".into()));
    }
    if cfg.per_class == 0 || cfg.size == 0 {
        return Err(DataError::Invalid("per_class and size must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.eval_fraction) || cfg.noise.is_nan() || cfg.noise < 0.0 {
        return Err(DataError::Invalid("eval_fraction must be in [0,1), noise >= 0".into()));
    }
    let mut rng = rng::stream(cfg.seed, rng::DATA_STREAM);
    let s = cfg.size;
    let center = (s as f64 - 1.0) / 2.0;
    let n_eval = (cfg.eval_fraction * cfg.per_class as f64).round() as usize;
    let total = cfg.classes * cfg.per_class;
    let mut data = Vec::with_capacity(total * 3 * s * s);
    let mut labels = Vec::with_capacity(total);
    let mut is_eval = Vec::with_capacity(total);

    for k in 0..cfg.classes {
        let angle = 2.0 * PI * k as f64 / cfg.classes as f64;
        let phase = PI * k as f64 / cfg.classes as f64 + 2.0 * PI * (k % 3) as f64 / 3.0;
        let gains: Vec<f64> = (0..3).map(|c| (phase + 2.0 * PI * c as f64 / 3.0).cos()).collect();
        for j in 0..cfg.per_class {
            let offset = if cfg.jitter { rng.random_range(-1.5..1.5) } else { 0.0 };
            for gain in &gains {
                for y in 0..s {
                    for x in 0..s {
                        let proj = (x as f64 - center) * angle.cos() + (y as f64 - center) * angle.sin();
                        let edge = (1.5 * (proj - offset)).tanh();
                        let noise = if cfg.noise > 0.0 {
                            cfg.noise * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                        } else {
                            0.0
                        };
                        let v: f64 = 0.5 + 0.35 * edge * gain + noise;
                        data.push(v.clamp(0.0, 1.0) as f32);
                    }
                }
            }
            labels.push(k);
            is_eval.push(j >= cfg.per_class - n_eval);
        }
    }
    let images = Tensor::from_vec(&[total, 3, s, s], data).map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new(
        images,
        labels,
        cfg.classes,
        is_eval,
        Provenance::Synthetic { seed: cfg.seed },
    )
}

fn is_gray(image: &[f32], tolerance: f32) -> bool {
    let plane = image.len() / 3;
    let (r, rest) = image.split_at(plane);
    let (g, b) = rest.split_at(plane);
    r.iter()
        .zip(g)
        .zip(b)
        .all(|((&r, &g), &b)| (r - g).abs() <= tolerance && (g - b).abs() <= tolerance && (r - b).abs() <= tolerance)
}

/// Drops every image whose R, G and B planes are exactly equal.
pub fn clean_grayscale(dataset: &Dataset) -> (Dataset, usize) {
    clean_grayscale_with_tolerance(dataset, 0.0)
}

/// As [`clean_grayscale`], treating channels within `tolerance` as equal.
pub fn clean_grayscale_with_tolerance(dataset: &Dataset, tolerance: f32) -> (Dataset, usize) {
    let keep: Vec<usize> = (0..dataset.len())
        .filter(|&i| !is_gray(dataset.image(i), tolerance))
        .collect();
    let dropped = dataset.len() - keep.len();
    (dataset.subset(&keep), dropped)
}

pub fn encode_raw(dataset: &Dataset) -> Vec<u8> {
    let m = dataset.len();
    let mut out = Vec::with_capacity(HEADER_LEN + dataset.images.len() * 4 + m * 5);
    out.extend_from_slice(RAWD_MAGIC);
    for v in [m, 3, dataset.height(), dataset.width(), dataset.classes] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &v in dataset.images.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &dataset.labels {
        out.extend_from_slice(&(l as i32).to_le_bytes());
    }
    out.extend(dataset.is_eval.iter().map(|&e| u8::from(e)));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], DataError> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(DataError::Truncated {
                section,
                missing: n - left,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }
}

pub fn decode_raw(bytes: &[u8], provenance: Provenance) -> Result<Dataset, DataError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if &magic != RAWD_MAGIC {
        return Err(DataError::BadMagic(magic));
    }
    let m = r.u32("header")? as usize;
    let c = r.u32("header")? as usize;
    let h = r.u32("header")? as usize;
    let w = r.u32("header")? as usize;
    let classes = r.u32("header")? as usize;
    if c != 3 {
        return Err(DataError::Invalid(format!("expected 3 channels, found {c}")));
    }
    let n = m * c * h * w;
    let pixels: Vec<f32> = r
        .take(n * 4, "pixels")?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(DataError::Invalid(format!("pixel value {bad} outside [0,1]")));
    }
    let raw_labels: Vec<i32> = r
        .take(m * 4, "labels")?
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let mut labels = Vec::with_capacity(m);
    for (index, &l) in raw_labels.iter().enumerate() {
        if l < 0 || l as usize >= classes {
            return Err(DataError::LabelOutOfRange {
                index,
                label: l.into(),
                classes,
            });
        }
        labels.push(l as usize);
    }
    let split = r.take(m, "split flags")?;
    let mut is_eval = Vec::with_capacity(m);
    for &f in split {
        match f {
            0 => is_eval.push(false),
            1 => is_eval.push(true),
            other => return Err(DataError::Invalid(format!("bad split flag {other}"))),
        }
    }
    if r.pos != bytes.len() {
        return Err(DataError::TrailingBytes(bytes.len() - r.pos));
    }
    let images = Tensor::from_vec(&[m, c, h, w], pixels).map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new(images, labels, classes, is_eval, provenance)
}

pub fn write_raw(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    fs::write(path, encode_raw(dataset)).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_raw(path: &Path) -> Result<Dataset, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_raw(
        &bytes,
        Provenance::File {
            path: path.display().to_string(),
        },
    )
}

/// Per-channel mean and standard deviation of the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Standardization {
    pub fn fit(dataset: &Dataset) -> Self {
        let plane = dataset.height() * dataset.width();
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let train = dataset.train_indices();
        for &i in &train {
            for (c, ch) in dataset.image(i).chunks_exact(plane).enumerate() {
                for &v in ch {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
        }
        let count = (train.len() * plane).max(1) as f64;
        let mut mean = [0.0; 3];
        let mut std = [1.0; 3];
        for c in 0..3 {
            mean[c] = sum[c] / count;
            let var = (sq[c] / count - mean[c] * mean[c]).max(0.0);
            if var > 1e-12 {
                std[c] = var.sqrt();
            }
        }
        Standardization { mean, std }
    }

    /// Standardized copy of the listed images as a `[len,3,H,W]` tensor.
    pub fn apply<T: Real>(&self, dataset: &Dataset, indices: &[usize]) -> Tensor<T> {
        let plane = dataset.height() * dataset.width();
        let mut data = Vec::with_capacity(indices.len() * 3 * plane);
        for &i in indices {
            for (c, ch) in dataset.image(i).chunks_exact(plane).enumerate() {
                data.extend(ch.iter().map(|&v| T::lit((v as f64 - self.mean[c]) / self.std[c])));
            }
        }
        Tensor::from_fn(&[indices.len(), 3, dataset.height(), dataset.width()], |j| data[j])
    }
}
