//! Datasets: IDX image/label files and seeded synthetic samples.
//!
//! IDX headers are big-endian: a magic number (`0x00000803` for rank-3 image
//! tensors, `0x00000801` for label vectors) followed by one `u32` per
//! dimension, then the raw `u8` payload.

use std::path::Path;

use ntklab_core::dynamics::Sample;
use ntklab_core::ntk::FactorCache;
use ntklab_core::spectral::NystromBasis;
use ntklab_core::{Network, ParamVector, Rng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IdxError {
    #[error("{file}: cannot read file: {message}")]
    Io { file: String, message: String },
    #[error("{file}: magic number mismatch at byte 0: expected {expected:#010x}, found {found:#010x}")]
    Magic { file: String, expected: u32, found: u32 },
    #[error("{file}: truncated at byte {offset}: {needed} bytes needed, {available} available")]
    Truncated {
        file: String,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{file}: {extra} unexpected trailing bytes starting at byte {offset}")]
    Trailing { file: String, offset: usize, extra: usize },
    #[error("{file}: zero-sized dimension at byte {offset}")]
    ZeroDimension { file: String, offset: usize },
    #[error("{file}: {requested} rows requested but the file holds {available}")]
    TooFewRows {
        file: String,
        requested: usize,
        available: usize,
    },
    #[error("image count {images} (byte 4 of {image_file}) differs from label count {labels} (byte 4 of {label_file})")]
    CountMismatch {
        image_file: String,
        images: usize,
        label_file: String,
        labels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` bytes, image-major then row-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    file: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], IdxError> {
        let available = self.bytes.len() - self.offset;
        if available < len {
            return Err(IdxError::Truncated {
                file: self.file.to_string(),
                offset: self.offset,
                needed: len,
                available,
            });
        }
        let out = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IdxError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn dimension(&mut self) -> Result<usize, IdxError> {
        let offset = self.offset;
        let d = self.u32()? as usize;
        if d == 0 {
            return Err(IdxError::ZeroDimension {
                file: self.file.to_string(),
                offset,
            });
        }
        Ok(d)
    }

    fn magic(&mut self, expected: u32) -> Result<(), IdxError> {
        let found = self.u32()?;
        if found != expected {
            return Err(IdxError::Magic {
                file: self.file.to_string(),
                expected,
                found,
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), IdxError> {
        let extra = self.bytes.len() - self.offset;
        if extra > 0 {
            return Err(IdxError::Trailing {
                file: self.file.to_string(),
                offset: self.offset,
                extra,
            });
        }
        Ok(())
    }
}

/// Parses an image file; `file` only labels error messages.
pub fn parse_idx_images(bytes: &[u8], file: &str) -> Result<IdxImages, IdxError> {
    let mut c = Cursor { bytes, offset: 0, file };
    c.magic(IMAGE_MAGIC)?;
    let count = c.u32()? as usize;
    let rows = c.dimension()?;
    let cols = c.dimension()?;
    let pixels = c.take(count * rows * cols)?.to_vec();
    c.finish()?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8], file: &str) -> Result<Vec<u8>, IdxError> {
    let mut c = Cursor { bytes, offset: 0, file };
    c.magic(LABEL_MAGIC)?;
    let count = c.u32()? as usize;
    let labels = c.take(count)?.to_vec();
    c.finish()?;
    Ok(labels)
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// How class labels become real targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LabelMap {
    /// `+1` for the given class, `-1` otherwise.
    OneVsRest { class: u8 },
    /// The class index itself as a real number.
    Identity,
}

impl Default for LabelMap {
    fn default() -> Self {
        LabelMap::OneVsRest { class: 0 }
    }
}

impl LabelMap {
    pub fn apply(&self, label: u8) -> f64 {
        match *self {
            LabelMap::OneVsRest { class } => {
                if label == class {
                    1.0
                } else {
                    -1.0
                }
            }
            LabelMap::Identity => label as f64,
        }
    }
}

/// Where a dataset came from, detailed enough to rebuild it bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    IdxFile {
        images_path: String,
        labels_path: String,
        images_sha256: String,
        labels_sha256: String,
        label_map: LabelMap,
        /// Seed of the permutation used to pick the training and held-out rows.
        selection_seed: u64,
    },
    Synthetic {
        generator: Generator,
        target: Target,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub holdout_inputs: Vec<Vec<f64>>,
    pub holdout_labels: Vec<f64>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    /// Largest absolute target over both splits.
    pub fn f_star_sup(&self) -> f64 {
        self.labels
            .iter()
            .chain(&self.holdout_labels)
            .fold(0.0, |a, y| a.max(y.abs()))
    }

    pub fn train_sample(&self) -> ntklab_core::Result<Sample> {
        Sample::new(self.inputs.clone(), self.labels.clone())
    }

    pub fn holdout_sample(&self) -> ntklab_core::Result<Sample> {
        Sample::new(self.holdout_inputs.clone(), self.holdout_labels.clone())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    std::fs::read(path).map_err(|e| IdxError::Io {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Loads an IDX image/label pair with pixels scaled to `[0, 1]`.
///
/// Rows are taken in the order of a permutation seeded by `selection_seed`:
/// the first `n` form the training split and the next `holdout` the held-out one.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    label_map: LabelMap,
    n: usize,
    holdout: usize,
    selection_seed: u64,
) -> Result<Dataset, IdxError> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    let image_name = images_path.display().to_string();
    let label_name = labels_path.display().to_string();
    let images = parse_idx_images(&image_bytes, &image_name)?;
    let labels = parse_idx_labels(&label_bytes, &label_name)?;
    if images.count != labels.len() {
        return Err(IdxError::CountMismatch {
            image_file: image_name,
            images: images.count,
            label_file: label_name,
            labels: labels.len(),
        });
    }
    if n + holdout > images.count {
        return Err(IdxError::TooFewRows {
            file: image_name,
            requested: n + holdout,
            available: images.count,
        });
    }
    let order = Rng::new(selection_seed).permutation(images.count);
    let row = |i: usize| -> (Vec<f64>, f64) {
        let x = images.image(i).iter().map(|&p| p as f64 / 255.0).collect();
        (x, label_map.apply(labels[i]))
    };
    let (inputs, targets): (Vec<_>, Vec<_>) = order[..n].iter().map(|&i| row(i)).unzip();
    let (holdout_inputs, holdout_labels): (Vec<_>, Vec<_>) =
        order[n..n + holdout].iter().map(|&i| row(i)).unzip();
    Ok(Dataset {
        inputs,
        labels: targets,
        holdout_inputs,
        holdout_labels,
        provenance: Provenance::IdxFile {
            images_path: image_name,
            labels_path: label_name,
            images_sha256: sha256_hex(&image_bytes),
            labels_sha256: sha256_hex(&label_bytes),
            label_map,
            selection_seed,
        },
    })
}

/// Input distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// Uniform on the unit sphere in `R^d`.
    SphereUniform { d: usize },
    /// Standard normal in `R^d`.
    Gaussian { d: usize },
    /// Channel-major `channels x side x side` images in `[0, 1]`: a few random
    /// low-frequency cosine modes per channel plus faint pixel noise.
    SmoothImage { channels: usize, side: usize },
}

impl Generator {
    pub fn dim(&self) -> usize {
        match *self {
            Generator::SphereUniform { d } | Generator::Gaussian { d } => d,
            Generator::SmoothImage { channels, side } => channels * side * side,
        }
    }

    pub fn draw(&self, rng: &mut Rng) -> Vec<f64> {
        match *self {
            Generator::SphereUniform { d } => rng.unit_vector(d),
            Generator::Gaussian { d } => rng.normal_vec(d),
            Generator::SmoothImage { channels, side } => smooth_image(channels, side, rng),
        }
    }
}

const IMAGE_MODES: usize = 6;

fn smooth_image(channels: usize, side: usize, rng: &mut Rng) -> Vec<f64> {
    let mut out = vec![0.5; channels * side * side];
    // shared structure across channels, as in natural colour images
    let modes: Vec<(f64, f64, f64, f64)> = (0..IMAGE_MODES)
        .map(|_| {
            let u = rng.below(4) as f64;
            let v = rng.below(4) as f64;
            let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
            let amp = 0.25 * rng.normal() / (1.0 + u + v);
            (u, v, phase, amp)
        })
        .collect();
    for c in 0..channels {
        let tint = 1.0 + 0.2 * rng.normal();
        for r in 0..side {
            for s in 0..side {
                let (y, x) = ((r as f64 + 0.5) / side as f64, (s as f64 + 0.5) / side as f64);
                let mut v = 0.5;
                for &(u, w, phase, amp) in &modes {
                    v += tint * amp * (std::f64::consts::PI * (u * x + w * y) + phase).cos();
                }
                v += 0.02 * rng.normal();
                out[c * side * side + r * side + s] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Target functions `f*`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    #[default]
    Zero,
    /// `sum_i c_i phi_i` over Nystrom eigenfunctions of a reference kernel built
    /// on the training inputs. The reference is the experiment's own network at
    /// initialization.
    EigenfunctionMix { coefficients: Vec<f64> },
    /// `scale * sum_j a_j cos(<w_j, x> + b_j) / sqrt(features)` with Gaussian
    /// `a_j`, `w_j` and uniform phases.
    RandomSmooth {
        #[serde(default = "default_features")]
        features: usize,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `<weights, x> + bias`.
    CustomCoeffs {
        weights: Vec<f64>,
        #[serde(default)]
        bias: f64,
    },
}

fn default_features() -> usize {
    8
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("custom target has {got} weights for inputs of dimension {expected}")]
    WeightCount { expected: usize, got: usize },
    #[error("eigenfunction_mix needs a reference network")]
    MissingReference,
    #[error("reference kernel: {0}")]
    Kernel(#[from] ntklab_core::Error),
}

/// A reproducible synthetic dataset. Inputs come from stream 0 of `seed` and
/// target randomness from stream 1; `reference` supplies the kernel for
/// `eigenfunction_mix` targets.
pub fn synth_dataset(
    generator: &Generator,
    target: &Target,
    n: usize,
    holdout: usize,
    seed: u64,
    reference: Option<(&Network, &ParamVector)>,
) -> Result<Dataset, SynthError> {
    if n == 0 {
        return Err(SynthError::EmptySample);
    }
    let root = Rng::new(seed);
    let mut input_rng = root.child(0);
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| generator.draw(&mut input_rng)).collect();
    let holdout_inputs: Vec<Vec<f64>> = (0..holdout).map(|_| generator.draw(&mut input_rng)).collect();
    let (labels, holdout_labels) = match target {
        Target::Zero => (vec![0.0; n], vec![0.0; holdout]),
        Target::CustomCoeffs { weights, bias } => {
            if weights.len() != generator.dim() {
                return Err(SynthError::WeightCount {
                    expected: generator.dim(),
                    got: weights.len(),
                });
            }
            let f = |x: &Vec<f64>| ntklab_core::linalg::dot(weights, x) + bias;
            (inputs.iter().map(f).collect(), holdout_inputs.iter().map(f).collect())
        }
        Target::RandomSmooth { features, scale } => {
            let mut rng = root.child(1);
            let d = generator.dim();
            let terms: Vec<(f64, Vec<f64>, f64)> = (0..*features)
                .map(|_| {
                    let a = rng.normal();
                    let w = rng.normal_vec(d);
                    let b = rng.uniform_range(0.0, std::f64::consts::TAU);
                    (a, w, b)
                })
                .collect();
            let norm = scale / (*features.max(&1) as f64).sqrt();
            let f = |x: &Vec<f64>| {
                norm * terms
                    .iter()
                    .map(|(a, w, b)| a * (ntklab_core::linalg::dot(w, x) + b).cos())
                    .sum::<f64>()
            };
            (inputs.iter().map(f).collect(), holdout_inputs.iter().map(f).collect())
        }
        Target::EigenfunctionMix { coefficients } => {
            let (net, params) = reference.ok_or(SynthError::MissingReference)?;
            let cache = FactorCache::new(net, params, &inputs)?;
            let basis = NystromBasis::from_gram(&cache.gram(), coefficients.len())?;
            let scale = (n as f64).sqrt();
            // on the training points the extension equals sqrt(n) u exactly
            let train: Vec<f64> = (0..n)
                .map(|j| {
                    basis
                        .functions
                        .iter()
                        .zip(coefficients)
                        .map(|(f, c)| c * scale * f.coefficients[j])
                        .sum()
                })
                .collect();
            let held = if holdout == 0 {
                Vec::new()
            } else {
                let values = basis.eval_matrix(&cache.cross(&holdout_inputs)?)?;
                (0..holdout)
                    .map(|j| coefficients.iter().enumerate().map(|(i, c)| c * values[(j, i)]).sum())
                    .collect()
            };
            (train, held)
        }
    };
    Ok(Dataset {
        inputs,
        labels,
        holdout_inputs,
        holdout_labels,
        provenance: Provenance::Synthetic {
            generator: generator.clone(),
            target: target.clone(),
            seed,
        },
    })
}
