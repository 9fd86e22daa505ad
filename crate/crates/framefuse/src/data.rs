//! Embedding file I/O, dataset manifests, frame padding and the
//! synthetic paired-dataset generator.
//!
//! FEAT files are the wire format for embedding matrices: magic bytes
//! `FEAT`, little-endian u32 version (= 1), u32 rows, u32 cols, then
//! rows*cols little-endian f32 values in row-major order. A dataset is
//! a JSON manifest `{"items":[{"id","caption_feat","frame_feat"}]}`
//! whose paths are resolved relative to the manifest location.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gates::FrameFeatures;
use crate::tensor::{Matrix, Vector};

pub const FEAT_MAGIC: [u8; 4] = *b"FEAT";
pub const FEAT_VERSION: u32 = 1;

/// Serializes a matrix into FEAT bytes (values truncated to f32).
pub fn encode_feat(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * m.data().len());
    out.extend_from_slice(&FEAT_MAGIC);
    out.extend_from_slice(&FEAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Parses FEAT bytes; `label` names the source in error messages.
pub fn decode_feat(bytes: &[u8], label: &str) -> Result<Matrix> {
    let fail = |reason: &str| Error::Format {
        path: label.to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 16 {
        return Err(fail("shorter than the 16-byte header"));
    }
    if bytes[0..4] != FEAT_MAGIC {
        return Err(fail("bad magic, expected FEAT"));
    }
    let read_u32 = |offset: usize| u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap());
    let version = read_u32(4);
    if version != FEAT_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let rows = read_u32(8) as usize;
    let cols = read_u32(12) as usize;
    let expected = 16 + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(fail(&format!(
            "expected {expected} bytes for {rows}x{cols}, got {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in bytes[16..].chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(fail("non-finite entry"));
        }
        data.push(v as f64);
    }
    Ok(Matrix::from_raw(rows, cols, data))
}

pub fn write_feat(path: &Path, m: &Matrix) -> Result<()> {
    std::fs::write(path, encode_feat(m)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_feat(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_feat(&bytes, &path.display().to_string())
}

/// Manifest entry pointing at one caption/frames FEAT pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub id: String,
    pub caption_feat: String,
    pub frame_feat: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub items: Vec<ManifestItem>,
}

/// One caption-video pair: a C-dim caption embedding and an n x C
/// frame embedding matrix (n varies per video).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub caption: Vector,
    pub frames: Matrix,
}

/// Paired caption/video embeddings; item index is the pairing index
/// (one caption per video).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Channel width, validated uniform across items.
    pub fn dim(&self) -> Result<usize> {
        let first = self
            .items
            .first()
            .ok_or_else(|| Error::InvalidValue {
                op: "Dataset::dim",
                reason: "empty dataset".into(),
            })?
            .caption
            .len();
        for item in &self.items {
            if item.caption.len() != first || item.frames.cols() != first {
                return Err(Error::shape(
                    "Dataset::dim",
                    format!("uniform width {first}"),
                    format!(
                        "item {} caption {} frames {}x{}",
                        item.id,
                        item.caption.len(),
                        item.frames.rows(),
                        item.frames.cols()
                    ),
                ));
            }
        }
        Ok(first)
    }

    /// Loads FEAT payloads referenced by a manifest; relative paths are
    /// resolved against the manifest's directory.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path)
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &str| -> PathBuf {
            let path = Path::new(p);
            if path.is_absolute() {
                path.to_path_buf()
            } else {
                base.join(path)
            }
        };
        let mut items = Vec::with_capacity(manifest.items.len());
        for entry in &manifest.items {
            let caption = read_feat(&resolve(&entry.caption_feat))?;
            if caption.rows() != 1 {
                return Err(Error::Format {
                    path: entry.caption_feat.clone(),
                    reason: format!("caption must be 1xC, got {}", caption.shape_string()),
                });
            }
            let frames = read_feat(&resolve(&entry.frame_feat))?;
            if frames.rows() == 0 {
                return Err(Error::Format {
                    path: entry.frame_feat.clone(),
                    reason: "video needs at least one frame".into(),
                });
            }
            items.push(DatasetItem {
                id: entry.id.clone(),
                caption: caption.to_vector()?,
                frames,
            });
        }
        Ok(Self { items })
    }

    /// Writes FEAT files plus `manifest.json` into `dir`; returns the
    /// manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let mut manifest = Manifest { items: Vec::new() };
        for item in &self.items {
            let caption_feat = format!("caption_{}.feat", item.id);
            let frame_feat = format!("frames_{}.feat", item.id);
            write_feat(&dir.join(&caption_feat), &Matrix::row(&item.caption))?;
            write_feat(&dir.join(&frame_feat), &item.frames)?;
            manifest.items.push(ManifestItem {
                id: item.id.clone(),
                caption_feat,
                frame_feat,
            });
        }
        let manifest_path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&manifest_path, json)
            .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
        Ok(manifest_path)
    }

    /// Caption embeddings stacked into a QxC matrix.
    pub fn caption_matrix(&self) -> Result<Matrix> {
        let dim = self.dim()?;
        let mut data = Vec::with_capacity(self.len() * dim);
        for item in &self.items {
            data.extend_from_slice(item.caption.data());
        }
        Ok(Matrix::from_raw(self.len(), dim, data))
    }

    /// All items padded/subsampled to a fixed frame count.
    pub fn padded_frames(&self, target: usize) -> Result<Vec<FrameFeatures>> {
        self.items
            .iter()
            .map(|item| pad_and_mask(&item.frames, target))
            .collect()
    }
}

/// Fits an n x C frame matrix to exactly `target` rows: uniform
/// temporal subsampling (indices floor(i*n/target)) when n >= target,
/// zero-padding with a false mask otherwise.
pub fn pad_and_mask(frames: &Matrix, target: usize) -> Result<FrameFeatures> {
    let n = frames.rows();
    let c = frames.cols();
    if n == 0 {
        return Err(Error::InvalidValue {
            op: "pad_and_mask",
            reason: "empty frame matrix".into(),
        });
    }
    if target == 0 {
        return Err(Error::InvalidValue {
            op: "pad_and_mask",
            reason: "target frame count must be positive".into(),
        });
    }
    if n >= target {
        let mut data = Vec::with_capacity(target * c);
        for i in 0..target {
            let src = i * n / target;
            data.extend_from_slice(frames.row_slice(src));
        }
        FrameFeatures::new(Matrix::from_raw(target, c, data), vec![true; target])
    } else {
        let mut data = Vec::with_capacity(target * c);
        data.extend_from_slice(frames.data());
        data.resize(target * c, 0.0);
        let mut mask = vec![true; n];
        mask.resize(target, false);
        FrameFeatures::new(Matrix::from_raw(target, c, data), mask)
    }
}

/// Synthetic paired-dataset settings. Each pair gets an anchor
/// direction on the unit sphere; the caption is `separation * anchor`
/// plus noise, and each frame is either the same (relevant) or pure
/// noise (irrelevant). Irrelevant frames sit at the tail of the clip,
/// covering roughly `irrelevant_frac` of it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub pairs: usize,
    pub dim: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub separation: f64,
    pub noise: f64,
    pub irrelevant_frac: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            pairs: 64,
            dim: 32,
            frames_min: 8,
            frames_max: 16,
            separation: 4.0,
            noise: 0.3,
            irrelevant_frac: 0.25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.pairs < 2 {
            return Err(Error::Config(format!(
                "synthetic dataset needs at least 2 pairs, got {}",
                self.pairs
            )));
        }
        if self.dim == 0 || self.frames_min == 0 || self.frames_min > self.frames_max {
            return Err(Error::Config(format!(
                "invalid sizes: dim={} frames={}..{}",
                self.dim, self.frames_min, self.frames_max
            )));
        }
        if self.noise < 0.0 || !self.noise.is_finite() || !self.separation.is_finite() {
            return Err(Error::Config(format!(
                "invalid separation/noise: {} / {}",
                self.separation, self.noise
            )));
        }
        if !(0.0..1.0).contains(&self.irrelevant_frac) {
            return Err(Error::Config(format!(
                "irrelevant_frac must be in [0, 1), got {}",
                self.irrelevant_frac
            )));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn unit_anchor(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates a synthetic paired dataset; identical seeds produce
/// bit-identical datasets.
pub fn synth_dataset(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut items = Vec::with_capacity(config.pairs);
    for b in 0..config.pairs {
        let anchor = unit_anchor(config.dim, &mut rng);
        let noise_vec = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..config.dim)
                .map(|_| config.noise * rng.random_range(-1.0..1.0))
                .collect()
        };

        let caption: Vec<f64> = {
            let eta = noise_vec(&mut rng);
            anchor
                .iter()
                .zip(&eta)
                .map(|(a, e)| config.separation * a + e)
                .collect()
        };

        let n = if config.frames_min == config.frames_max {
            config.frames_min
        } else {
            rng.random_range(config.frames_min..=config.frames_max)
        };
        let irrelevant = ((n as f64 * config.irrelevant_frac) as usize).min(n - 1);
        let relevant = n - irrelevant;

        let mut frames = Vec::with_capacity(n * config.dim);
        for t in 0..n {
            let eta = noise_vec(&mut rng);
            let relevance = if t < relevant { 1.0 } else { 0.0 };
            frames.extend(
                anchor
                    .iter()
                    .zip(&eta)
                    .map(|(a, e)| relevance * config.separation * a + e),
            );
        }

        items.push(DatasetItem {
            id: format!("video{b}"),
            caption: Vector::from_raw(caption),
            frames: Matrix::from_raw(n, config.dim, frames),
        });
    }
    Ok(Dataset { items })
}
