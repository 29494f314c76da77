//! Self-supervised extraction of labeled boundary sample pairs.
//!
//! Virtual shredding hands out adjacency labels for free: windows that
//! straddle a ground-truth seam give positive pairs, windows across
//! non-adjacent shred orderings give negatives. Pairs that are mostly
//! blank carry no signal and are filtered out before counting.

use crate::docproc::{BinaryImage, Shred};
use crate::rng::{derive_seed, rng_from_seed, sample_indices, uniform_index, uniform_unit};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

const DATASET_MAGIC: &[u8; 5] = b"SHRD1";

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("need at least 2 shreds from one page, got {0}")]
    TooFewShreds(usize),
    #[error("shred width {0} below sample width {1}")]
    ShredTooNarrow(usize, usize),
    #[error("stride must be >= 1")]
    BadStride,
    #[error("validation docs {requested} must be fewer than distinct docs {available}")]
    TooFewDocs { requested: usize, available: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a sample dataset (bad magic)")]
    BadMagic,
    #[error("dataset file corrupt: {0}")]
    Corrupt(String),
}

/// One training tuple: the r-sample (rightmost columns of the left
/// shred), the l-sample (leftmost columns of the right shred) and the
/// adjacency label (1 = positive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplePair {
    pub x_r: BinaryImage,
    pub x_l: BinaryImage,
    pub y: u8,
    pub source_doc: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleDataset {
    pub pairs: Vec<SamplePair>,
    pub s_y: usize,
    pub s_x: usize,
}

impl SampleDataset {
    pub fn new(s_y: usize, s_x: usize) -> Self {
        SampleDataset { pairs: Vec::new(), s_y, s_x }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// (positives, negatives) per source document.
    pub fn stats(&self) -> BTreeMap<String, (usize, usize)> {
        let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        for p in &self.pairs {
            let e = out.entry(p.source_doc.clone()).or_default();
            if p.y == 1 {
                e.0 += 1;
            } else {
                e.1 += 1;
            }
        }
        out
    }

    pub fn doc_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.stats().into_keys().collect();
        ids.sort();
        ids
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExtractConfig {
    pub s_y: usize,
    pub s_x: usize,
    pub stride: usize,
    pub max_pos: usize,
    pub blank_ratio: f64,
    pub noise_cols: usize,
    pub noise_p: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            s_y: 32,
            s_x: 32,
            stride: 2,
            max_pos: 1000,
            blank_ratio: 0.8,
            noise_cols: 2,
            noise_p: 0.2,
        }
    }
}

fn blank_fraction(a: &BinaryImage, b: &BinaryImage) -> f64 {
    let ink = a.bits.iter().filter(|&&v| v).count() + b.bits.iter().filter(|&&v| v).count();
    1.0 - ink as f64 / (a.bits.len() + b.bits.len()) as f64
}

fn window_pair(left: &Shred, right: &Shred, y: usize, s_y: usize, s_x: usize) -> (BinaryImage, BinaryImage) {
    let x_r = left.image.crop(left.image.width - s_x, y, s_x, s_y);
    let x_l = right.image.crop(0, y, s_x, s_y);
    (x_r, x_l)
}

/// Extracts labeled pairs from the shreds of one page.
///
/// Positives scan top to bottom at `stride`, visiting every adjacent
/// seam at each height so no seam is starved; blank-filtered candidates
/// beyond `max_pos` are thinned by a seeded uniform subsample.
/// Negatives are then drawn (same seed stream) from uniformly random
/// non-adjacent ordered shred pairs at uniformly random heights, pass
/// the same blank filter, and are capped at the number of accepted
/// positives. Shredding damage is simulated last, as salt-and-pepper
/// noise on the seam-facing columns of every sample.
pub fn extract_pairs(shreds: &[Shred], cfg: &ExtractConfig, seed: u64) -> Result<Vec<SamplePair>, SamplingError> {
    if shreds.len() < 2 {
        return Err(SamplingError::TooFewShreds(shreds.len()));
    }
    if cfg.stride == 0 {
        return Err(SamplingError::BadStride);
    }
    for s in shreds {
        if s.image.width < cfg.s_x {
            return Err(SamplingError::ShredTooNarrow(s.image.width, cfg.s_x));
        }
    }
    let doc = shreds[0].page_id.clone();
    let mut by_gt: Vec<&Shred> = shreds.iter().collect();
    by_gt.sort_by_key(|s| s.gt_index);
    let height = by_gt.iter().map(|s| s.image.height).min().unwrap();
    if height < cfg.s_y {
        return Err(SamplingError::ShredTooNarrow(height, cfg.s_y));
    }

    let mut positives: Vec<SamplePair> = Vec::new();
    let mut y = 0;
    while y + cfg.s_y <= height {
        for pair in by_gt.windows(2) {
            let (x_r, x_l) = window_pair(pair[0], pair[1], y, cfg.s_y, cfg.s_x);
            if blank_fraction(&x_r, &x_l) <= cfg.blank_ratio {
                positives.push(SamplePair { x_r, x_l, y: 1, source_doc: doc.clone() });
            }
        }
        y += cfg.stride;
    }

    let mut rng = rng_from_seed(derive_seed(seed, 0));
    if positives.len() > cfg.max_pos {
        let keep = sample_indices(&mut rng, positives.len(), cfg.max_pos);
        positives = keep.into_iter().map(|i| positives[i].clone()).collect();
    }

    let n = by_gt.len();
    let target = positives.len();
    let mut negatives: Vec<SamplePair> = Vec::new();
    let mut rng_neg = rng_from_seed(derive_seed(seed, 1));
    let mut attempts = 0usize;
    let max_attempts = target.saturating_mul(100).max(1000);
    while negatives.len() < target && attempts < max_attempts {
        attempts += 1;
        let a = uniform_index(&mut rng_neg, n);
        let b = uniform_index(&mut rng_neg, n);
        if a == b || b == a + 1 {
            continue; // self-pairing or a positive ordering
        }
        let y_off = uniform_index(&mut rng_neg, height - cfg.s_y + 1);
        let (x_r, x_l) = window_pair(by_gt[a], by_gt[b], y_off, cfg.s_y, cfg.s_x);
        if blank_fraction(&x_r, &x_l) <= cfg.blank_ratio {
            negatives.push(SamplePair { x_r, x_l, y: 0, source_doc: doc.clone() });
        }
    }

    let mut pairs = positives;
    pairs.append(&mut negatives);
    if cfg.noise_p > 0.0 && cfg.noise_cols > 0 {
        let noise_seed = derive_seed(seed, 2);
        for (i, pair) in pairs.iter_mut().enumerate() {
            *pair = apply_shredding_noise(pair, cfg.noise_cols, cfg.noise_p, derive_seed(noise_seed, i as u64));
        }
    }
    Ok(pairs)
}

/// Salt-and-pepper damage on the seam-facing columns: the `cols`
/// rightmost columns of the r-sample and `cols` leftmost of the l-sample.
/// Each affected pixel is re-drawn uniformly with probability `p`.
/// Scan order is rows outer, columns inner, r-sample first.
pub fn apply_shredding_noise(pair: &SamplePair, cols: usize, p: f64, seed: u64) -> SamplePair {
    assert!((0.0..=1.0).contains(&p), "noise probability out of range");
    assert!(cols <= pair.x_r.width, "noise columns exceed sample width");
    let mut out = pair.clone();
    let mut rng = rng_from_seed(seed);
    let w = out.x_r.width;
    for yy in 0..out.x_r.height {
        for c in 0..cols {
            if uniform_unit(&mut rng) < p {
                out.x_r.set(w - cols + c, yy, uniform_unit(&mut rng) < 0.5);
            }
        }
    }
    for yy in 0..out.x_l.height {
        for c in 0..cols {
            if uniform_unit(&mut rng) < p {
                out.x_l.set(c, yy, uniform_unit(&mut rng) < 0.5);
            }
        }
    }
    out
}

/// Document-level split: `val_docs` whole documents (seeded pick) go to
/// validation, the rest to training. No document straddles the split.
pub fn split_train_val(
    dataset: &SampleDataset,
    val_docs: usize,
    seed: u64,
) -> Result<(SampleDataset, SampleDataset), SamplingError> {
    let docs = dataset.doc_ids();
    if val_docs >= docs.len() && !(val_docs == 0 && docs.is_empty()) {
        return Err(SamplingError::TooFewDocs { requested: val_docs, available: docs.len() });
    }
    let picks = sample_indices(&mut rng_from_seed(seed), docs.len(), val_docs);
    let val_set: std::collections::HashSet<&String> = picks.iter().map(|&i| &docs[i]).collect();
    let mut train = SampleDataset::new(dataset.s_y, dataset.s_x);
    let mut val = SampleDataset::new(dataset.s_y, dataset.s_x);
    for pair in &dataset.pairs {
        if val_set.contains(&pair.source_doc) {
            val.pairs.push(pair.clone());
        } else {
            train.pairs.push(pair.clone());
        }
    }
    Ok((train, val))
}

fn pack_bits(img: &BinaryImage, buf: &mut Vec<u8>) {
    // row-major, MSB first, each row padded to a whole byte
    for y in 0..img.height {
        let mut byte = 0u8;
        let mut nbits = 0;
        for x in 0..img.width {
            byte = (byte << 1) | u8::from(img.at(x, y));
            nbits += 1;
            if nbits == 8 {
                buf.push(byte);
                byte = 0;
                nbits = 0;
            }
        }
        if nbits > 0 {
            buf.push(byte << (8 - nbits));
        }
    }
}

fn unpack_bits(bytes: &[u8], width: usize, height: usize) -> BinaryImage {
    let row_bytes = width.div_ceil(8);
    let mut img = BinaryImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let b = bytes[y * row_bytes + x / 8];
            img.set(x, y, (b >> (7 - x % 8)) & 1 == 1);
        }
    }
    img
}

/// Binary dataset file: magic "SHRD1"; u32 LE header fields s_y, s_x,
/// pair count; then per pair a u16 LE doc-id length, the doc-id bytes,
/// one label byte, and the two bit-packed rasters (r-sample first; rows
/// padded to whole bytes, MSB first).
pub fn save_dataset(dataset: &SampleDataset, path: &Path) -> Result<(), SamplingError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&(dataset.s_y as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.s_x as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.pairs.len() as u32).to_le_bytes());
    for pair in &dataset.pairs {
        let doc = pair.source_doc.as_bytes();
        buf.extend_from_slice(&(doc.len() as u16).to_le_bytes());
        buf.extend_from_slice(doc);
        buf.push(pair.y);
        pack_bits(&pair.x_r, &mut buf);
        pack_bits(&pair.x_l, &mut buf);
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<SampleDataset, SamplingError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 17 || &bytes[..5] != DATASET_MAGIC {
        return Err(SamplingError::BadMagic);
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let s_y = u32_at(5);
    let s_x = u32_at(9);
    let count = u32_at(13);
    if s_y == 0 || s_x == 0 {
        return Err(SamplingError::Corrupt("zero sample dimensions".into()));
    }
    let raster = s_x.div_ceil(8) * s_y;
    let mut pairs = Vec::with_capacity(count);
    let mut o = 17usize;
    for i in 0..count {
        if o + 2 > bytes.len() {
            return Err(SamplingError::Corrupt(format!("truncated at pair {i}")));
        }
        let doc_len = u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap()) as usize;
        o += 2;
        if o + doc_len + 1 + 2 * raster > bytes.len() {
            return Err(SamplingError::Corrupt(format!("truncated at pair {i}")));
        }
        let source_doc = String::from_utf8(bytes[o..o + doc_len].to_vec())
            .map_err(|_| SamplingError::Corrupt(format!("bad doc id at pair {i}")))?;
        o += doc_len;
        let y = bytes[o];
        if y > 1 {
            return Err(SamplingError::Corrupt(format!("bad label {y} at pair {i}")));
        }
        o += 1;
        let x_r = unpack_bits(&bytes[o..o + raster], s_x, s_y);
        o += raster;
        let x_l = unpack_bits(&bytes[o..o + raster], s_x, s_y);
        o += raster;
        pairs.push(SamplePair { x_r, x_l, y, source_doc });
    }
    if o != bytes.len() {
        return Err(SamplingError::Corrupt("trailing bytes".into()));
    }
    Ok(SampleDataset { pairs, s_y, s_x })
}
