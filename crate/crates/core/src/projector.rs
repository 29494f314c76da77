//! The asymmetric projection model pair.
//!
//! Two architecturally identical networks with independent parameters
//! map boundary patches to d-dimensional embeddings: `left` handles
//! patches from left boundaries (of right-hand shreds), `right` handles
//! patches from right boundaries. Inference over a full h x s boundary
//! strip is one fully-convolutional pass that yields one embedding row
//! per 4-pixel step, and each row is bit-identical to feeding the
//! corresponding s x s window through the network on its own: every
//! layer runs valid vertically, so no padding cell ever differs between
//! the strip pass and the window pass.
//!
//! Geometry: conv1 (3x3, stride 2) and maxpool (3x3, stride 2) reduce
//! h rows to h/4 - 1; the two fire blocks trim two rows each; the head
//! kernel spans the remaining (s/4 - 5) rows so an s x s patch maps to
//! exactly 1 x 1 x d. A strip of height h therefore produces
//! h' = h/4 - s/4 + 1 embedding rows.

use crate::docproc::BinaryImage;
use crate::rng::{derive_seed, fnv1a64, rng_from_seed};
use crate::tensornet::{Conv2d, Fire, Layer, MaxPool2d, Network, PadMode, Tensor, TensorError};
use std::io::Read;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

const WEIGHTS_MAGIC: &[u8; 5] = b"SHRW1";
/// Rows consumed by valid vertical 3x3 kernels across the base network:
/// one by conv1+pool alignment, two by each fire block.
const BASE_ROW_TRIM: usize = 5;
/// Base stride product; one embedding row per this many input rows.
pub const ROW_STRIDE: usize = 4;
/// Smallest supported sample height: the head kernel needs >= 1 row.
pub const MIN_SAMPLE_HEIGHT: usize = (BASE_ROW_TRIM + 1) * ROW_STRIDE;

#[derive(Debug, Error)]
pub enum ProjectorError {
    #[error("sample side must be a multiple of 4 and height >= {MIN_SAMPLE_HEIGHT}, got {0}x{1}")]
    BadSampleSize(usize, usize),
    #[error("embedding dimension must be >= 1")]
    BadDimension,
    #[error("input is {got_h}x{got_w}, expected {want_h}x{want_w}")]
    InputSize { got_h: usize, got_w: usize, want_h: usize, want_w: usize },
    #[error("boundary height {0} must be a multiple of 4 and >= sample height {1}")]
    BadBoundaryHeight(usize, usize),
    #[error("tensor error: {0}")]
    Tensor(#[from] TensorError),
    #[error("weight io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("architecture fingerprint mismatch: file {file:#018x}, expected {expected:#018x}")]
    FingerprintMismatch { file: u64, expected: u64 },
    #[error("weight file truncated or oversized")]
    BadLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn tag(self) -> &'static str {
        match self {
            Side::Left => "l",
            Side::Right => "r",
        }
    }
}

/// Monotone counters of boundary forward passes, one per side.
#[derive(Debug, Default)]
pub struct InferenceCounter {
    left: AtomicU64,
    right: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferenceSnapshot {
    pub left: u64,
    pub right: u64,
}

impl InferenceSnapshot {
    pub fn total(&self) -> u64 {
        self.left + self.right
    }
}

/// Local embeddings of one boundary strip: `rows` x 1 x `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTensor {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub side: Side,
    pub shred_ref: String,
}

impl EmbeddingTensor {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// The two projection networks plus the sample geometry they were built
/// for. Architecture is identical on both sides; parameters are not.
#[derive(Debug)]
pub struct ProjectorPair {
    pub left: Network,
    pub right: Network,
    pub d: usize,
    pub s_y: usize,
    pub s_x: usize,
    counter: InferenceCounter,
}

impl Clone for ProjectorPair {
    fn clone(&self) -> Self {
        ProjectorPair {
            left: self.left.clone(),
            right: self.right.clone(),
            d: self.d,
            s_y: self.s_y,
            s_x: self.s_x,
            counter: InferenceCounter::default(),
        }
    }
}

fn build_network(d: usize, s_y: usize, s_x: usize) -> Network {
    let head_kh = s_y / ROW_STRIDE - BASE_ROW_TRIM;
    let head_kw = s_x / ROW_STRIDE;
    Network {
        layers: vec![
            Layer::Conv(Conv2d::new(3, 3, 2, 2, PadMode::Valid, PadMode::Same, 1, 64)),
            Layer::Relu,
            Layer::MaxPool(MaxPool2d {
                kh: 3,
                kw: 3,
                sh: 2,
                sw: 2,
                pad_v: PadMode::Valid,
                pad_h: PadMode::Same,
            }),
            Layer::Fire(Fire::new(64, 16, 64)),
            Layer::Fire(Fire::new(128, 16, 64)),
            Layer::Conv(Conv2d::new(head_kh, head_kw, 1, 1, PadMode::Valid, PadMode::Valid, 128, d)),
            Layer::Sigmoid,
        ],
    }
}

/// Builds the pair with He-uniform init; the two sides draw from
/// independent sub-streams of `seed`.
pub fn build_projector(d: usize, s_y: usize, s_x: usize, seed: u64) -> Result<ProjectorPair, ProjectorError> {
    if d == 0 {
        return Err(ProjectorError::BadDimension);
    }
    if s_y % ROW_STRIDE != 0 || s_x % ROW_STRIDE != 0 || s_y < MIN_SAMPLE_HEIGHT || s_x < ROW_STRIDE {
        return Err(ProjectorError::BadSampleSize(s_y, s_x));
    }
    let mut left = build_network(d, s_y, s_x);
    let mut right = build_network(d, s_y, s_x);
    let mut layer_idx = 0u64;
    for net in [&mut left, &mut right] {
        for layer in &mut net.layers {
            match layer {
                Layer::Conv(c) => {
                    c.init_he(&mut rng_from_seed(derive_seed(seed, layer_idx)));
                    layer_idx += 1;
                }
                Layer::Fire(f) => {
                    f.init_he(&mut rng_from_seed(derive_seed(seed, layer_idx)));
                    layer_idx += 1;
                }
                _ => {}
            }
        }
    }
    Ok(ProjectorPair { left, right, d, s_y, s_x, counter: InferenceCounter::default() })
}

impl ProjectorPair {
    pub fn square(d: usize, s: usize, seed: u64) -> Result<Self, ProjectorError> {
        build_projector(d, s, s, seed)
    }

    pub fn net(&self, side: Side) -> &Network {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn arch_fingerprint(&self) -> u64 {
        fnv1a64(
            format!("d={};sy={};sx={};{}", self.d, self.s_y, self.s_x, self.left.spec_string())
                .as_bytes(),
        )
    }

    /// Embedding rows produced by a boundary of height `h`.
    pub fn boundary_rows(&self, h: usize) -> usize {
        h / ROW_STRIDE - self.s_y / ROW_STRIDE + 1
    }

    fn to_input(img: &BinaryImage) -> Tensor {
        let mut t = Tensor::zeros(1, img.height, img.width, 1);
        for (v, &ink) in t.data_mut().iter_mut().zip(&img.bits) {
            *v = if ink { 1.0 } else { 0.0 };
        }
        t
    }

    fn bump(&self, side: Side) {
        match side {
            Side::Left => self.counter.left.fetch_add(1, Ordering::Relaxed),
            Side::Right => self.counter.right.fetch_add(1, Ordering::Relaxed),
        };
    }

    /// One s x s patch to a d-vector. Counts one inference.
    pub fn embed_sample(&self, side: Side, patch: &BinaryImage) -> Result<Vec<f32>, ProjectorError> {
        if patch.height != self.s_y || patch.width != self.s_x {
            return Err(ProjectorError::InputSize {
                got_h: patch.height,
                got_w: patch.width,
                want_h: self.s_y,
                want_w: self.s_x,
            });
        }
        let out = self.net(side).infer(&Self::to_input(patch))?;
        debug_assert_eq!(out.shape(), [1, 1, 1, self.d]);
        self.bump(side);
        Ok(out.into_data())
    }

    /// One fully-convolutional pass over an h x s boundary strip.
    /// Counts one inference regardless of h.
    pub fn embed_boundary(
        &self,
        side: Side,
        strip: &BinaryImage,
        shred_ref: &str,
    ) -> Result<EmbeddingTensor, ProjectorError> {
        if strip.width != self.s_x {
            return Err(ProjectorError::InputSize {
                got_h: strip.height,
                got_w: strip.width,
                want_h: self.s_y,
                want_w: self.s_x,
            });
        }
        if strip.height % ROW_STRIDE != 0 || strip.height < self.s_y {
            return Err(ProjectorError::BadBoundaryHeight(strip.height, self.s_y));
        }
        let out = self.net(side).infer(&Self::to_input(strip))?;
        let rows = self.boundary_rows(strip.height);
        debug_assert_eq!(out.shape(), [1, rows, 1, self.d]);
        self.bump(side);
        Ok(EmbeddingTensor {
            rows,
            dim: self.d,
            data: out.into_data(),
            side,
            shred_ref: shred_ref.to_string(),
        })
    }

    pub fn count_inferences(&self) -> InferenceSnapshot {
        InferenceSnapshot {
            left: self.counter.left.load(Ordering::Relaxed),
            right: self.counter.right.load(Ordering::Relaxed),
        }
    }

    pub fn reset_inference_count(&self) {
        self.counter.left.store(0, Ordering::Relaxed);
        self.counter.right.store(0, Ordering::Relaxed);
    }

    /// Writes magic, header (d, s_y, s_x as u32 LE, fingerprint as u64
    /// LE), then per-layer f32 LE parameter blobs in declaration order
    /// (weight then bias per convolution), left network first.
    pub fn save_weights(&self, path: &Path) -> Result<(), ProjectorError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&(self.d as u32).to_le_bytes());
        buf.extend_from_slice(&(self.s_y as u32).to_le_bytes());
        buf.extend_from_slice(&(self.s_x as u32).to_le_bytes());
        buf.extend_from_slice(&self.arch_fingerprint().to_le_bytes());
        for net in [&self.left, &self.right] {
            for slice in net.param_slices() {
                for v in slice {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, &buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_weights(path: &Path) -> Result<ProjectorPair, ProjectorError> {
        let mut file = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ProjectorPair, ProjectorError> {
        if bytes.len() < 5 + 12 + 8 || &bytes[..5] != WEIGHTS_MAGIC {
            return Err(ProjectorError::BadMagic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let d = u32_at(5);
        let s_y = u32_at(9);
        let s_x = u32_at(13);
        let file_fp = u64::from_le_bytes(bytes[17..25].try_into().unwrap());
        let mut pair = build_projector(d, s_y, s_x, 0)?;
        let expected = pair.arch_fingerprint();
        if file_fp != expected {
            return Err(ProjectorError::FingerprintMismatch { file: file_fp, expected });
        }
        let mut offset = 25;
        for net in [&mut pair.left, &mut pair.right] {
            for slice in net.param_slices_mut() {
                let need = slice.len() * 4;
                if offset + need > bytes.len() {
                    return Err(ProjectorError::BadLength);
                }
                for (i, v) in slice.iter_mut().enumerate() {
                    let o = offset + i * 4;
                    *v = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
                }
                offset += need;
            }
        }
        if offset != bytes.len() {
            return Err(ProjectorError::BadLength);
        }
        Ok(pair)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.extend_from_slice(&(self.d as u32).to_le_bytes());
        buf.extend_from_slice(&(self.s_y as u32).to_le_bytes());
        buf.extend_from_slice(&(self.s_x as u32).to_le_bytes());
        buf.extend_from_slice(&self.arch_fingerprint().to_le_bytes());
        for net in [&self.left, &self.right] {
            for slice in net.param_slices() {
                for v in slice {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        buf
    }
}

/// Euclidean distance between two embedding vectors, f64 accumulation.
pub fn embedding_distance(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut sq = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = f64::from(*x) - f64::from(*y);
        sq += d * d;
    }
    sq.sqrt()
}
