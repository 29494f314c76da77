//! Image ingestion, adaptive binarization and virtual shredding.

use crate::rng::{rng_from_seed, shuffle};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DocError {
    #[error("unreadable file {path}: {source}")]
    Unreadable { path: String, source: image::ImageError },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("sauvola window must be odd and >= 3, got {0}")]
    BadWindow(usize),
    #[error("sauvola k must be in (0, 1), got {0}")]
    BadK(f64),
    #[error("sauvola r must be > 0, got {0}")]
    BadR(f64),
    #[error("strip count must be >= 2, got {0}")]
    BadStripCount(usize),
    #[error("image width {width} below strip count {strips}")]
    TooNarrow { width: usize, strips: usize },
    #[error("shred {0}x{1} too small for a {2}x{3} crop")]
    CropTooLarge(usize, usize, usize, usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad manifest: {0}")]
    BadManifest(String),
}

/// 8-bit grayscale raster, 0 = black, 255 = white.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        assert!(width >= 1 && height >= 1);
        GrayImage { width, height, pixels: vec![fill; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Column range [x0, x0+w) as a new image.
    pub fn crop_columns(&self, x0: usize, w: usize) -> GrayImage {
        assert!(x0 + w <= self.width);
        let mut pixels = Vec::with_capacity(w * self.height);
        for y in 0..self.height {
            let row = y * self.width + x0;
            pixels.extend_from_slice(&self.pixels[row..row + w]);
        }
        GrayImage { width: w, height: self.height, pixels }
    }
}

/// Binarized raster; true = ink.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryImage { width, height, bits: vec![false; width * height] }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, ink: bool) {
        self.bits[y * self.width + x] = ink;
    }

    pub fn ink_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.bits.iter().filter(|&&b| b).count() as f64 / self.bits.len() as f64
    }

    /// Rectangle starting at (x0, y0) of size w x h.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> BinaryImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut bits = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width + x0;
            bits.extend_from_slice(&self.bits[row..row + w]);
        }
        BinaryImage { width: w, height: h, bits }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.bits.iter().map(|&ink| if ink { 0 } else { 255 }).collect(),
        }
    }
}

/// Decodes a PNG or PGM (P2/P5) file to grayscale. Color inputs are
/// converted with integer BT.601 weights.
pub fn load_image(path: &Path) -> Result<GrayImage, DocError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    if !matches!(ext.as_str(), "png" | "pgm" | "pnm") {
        return Err(DocError::UnsupportedFormat(ext));
    }
    let img = image::open(path)
        .map_err(|source| DocError::Unreadable { path: path.display().to_string(), source })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw(),
        image::DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0]).collect(),
        other => {
            let rgb = other.into_rgb8();
            rgb.pixels()
                .map(|p| {
                    let [r, g, b] = p.0;
                    ((299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b) + 500) / 1000)
                        as u8
                })
                .collect()
        }
    };
    Ok(GrayImage { width: w, height: h, pixels })
}

pub fn save_png(img: &GrayImage, path: &Path) -> Result<(), DocError> {
    use image::ImageEncoder;
    let tmp = path.with_extension("png.partial");
    let file = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
    image::codecs::png::PngEncoder::new(file)
        .write_image(
            &img.pixels,
            img.width as u32,
            img.height as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| DocError::Io(std::io::Error::other(e)))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Sauvola adaptive threshold over a clipped `window` x `window`
/// neighborhood: T = mean * (1 + k * (stddev / r - 1)), ink iff
/// intensity < T. Integral images make the cost independent of the
/// window size; stddev is sqrt(max(0, E[x^2] - mean^2)) in f64, which is
/// also the contract for oracle comparisons.
pub fn sauvola_binarize(
    img: &GrayImage,
    window: usize,
    k: f64,
    r: f64,
) -> Result<BinaryImage, DocError> {
    if window < 3 || window % 2 == 0 || window > 2 * img.width.min(img.height) - 1 {
        return Err(DocError::BadWindow(window));
    }
    if !(k > 0.0 && k < 1.0) {
        return Err(DocError::BadK(k));
    }
    if r <= 0.0 {
        return Err(DocError::BadR(r));
    }
    let (w, h) = (img.width, img.height);
    // (w+1) x (h+1) integral tables of sum and sum of squares.
    let stride = w + 1;
    let mut sum = vec![0u64; stride * (h + 1)];
    let mut sq = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0u64;
        let mut row_sq = 0u64;
        for x in 0..w {
            let v = u64::from(img.at(x, y));
            row_sum += v;
            row_sq += v * v;
            sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row_sum;
            sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
        }
    }
    let half = window / 2;
    let mut out = BinaryImage::new(w, h);
    for y in 0..h {
        let y0 = y.saturating_sub(half);
        let y1 = (y + half + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(half);
            let x1 = (x + half + 1).min(w);
            let count = ((y1 - y0) * (x1 - x0)) as f64;
            let s = (sum[y1 * stride + x1] + sum[y0 * stride + x0]
                - sum[y0 * stride + x1]
                - sum[y1 * stride + x0]) as f64;
            let s2 = (sq[y1 * stride + x1] + sq[y0 * stride + x0]
                - sq[y0 * stride + x1]
                - sq[y1 * stride + x0]) as f64;
            let mean = s / count;
            let stddev = (s2 / count - mean * mean).max(0.0).sqrt();
            let threshold = mean * (1.0 + k * (stddev / r - 1.0));
            out.set(x, y, f64::from(img.at(x, y)) < threshold);
        }
    }
    Ok(out)
}

pub const SAUVOLA_WINDOW: usize = 33;
pub const SAUVOLA_K: f64 = 0.2;
pub const SAUVOLA_R: f64 = 128.0;

/// One vertical strip of a page. Ground-truth position metadata is kept
/// for evaluation only; the solver never sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shred {
    pub image: BinaryImage,
    pub page_id: String,
    pub gt_index: usize,
    pub is_page_first: bool,
    pub is_page_last: bool,
}

impl Shred {
    pub fn key(&self) -> String {
        format!("{}#{}", self.page_id, self.gt_index)
    }
}

/// Cuts a binarized page into `strips` equal-width shreds, left to
/// right. Surplus columns at the right edge are discarded.
pub fn virtual_shred(
    img: &BinaryImage,
    strips: usize,
    page_id: &str,
) -> Result<Vec<Shred>, DocError> {
    if strips < 2 {
        return Err(DocError::BadStripCount(strips));
    }
    if img.width < strips {
        return Err(DocError::TooNarrow { width: img.width, strips });
    }
    let strip_w = img.width / strips;
    Ok((0..strips)
        .map(|i| Shred {
            image: img.crop(i * strip_w, 0, strip_w, img.height),
            page_id: page_id.to_string(),
            gt_index: i,
            is_page_first: i == 0,
            is_page_last: i == strips - 1,
        })
        .collect())
}

/// Cuts a grayscale page and binarizes each strip individually.
pub fn shred_page(
    page: &GrayImage,
    strips: usize,
    page_id: &str,
    window: usize,
    k: f64,
    r: f64,
) -> Result<Vec<Shred>, DocError> {
    if strips < 2 {
        return Err(DocError::BadStripCount(strips));
    }
    if page.width < strips {
        return Err(DocError::TooNarrow { width: page.width, strips });
    }
    let strip_w = page.width / strips;
    (0..strips)
        .map(|i| {
            let gray = page.crop_columns(i * strip_w, strip_w);
            Ok(Shred {
                image: sauvola_binarize(&gray, window, k, r)?,
                page_id: page_id.to_string(),
                gt_index: i,
                is_page_first: i == 0,
                is_page_last: i == strips - 1,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySide {
    Left,
    Right,
}

/// Vertically centered h x s region at the left or right edge of a
/// shred. Odd leftover rows go to the bottom.
pub fn boundary_crop(
    shred: &Shred,
    side: BoundarySide,
    s: usize,
    h: usize,
) -> Result<BinaryImage, DocError> {
    let img = &shred.image;
    if img.width < s || img.height < h {
        return Err(DocError::CropTooLarge(img.width, img.height, s, h));
    }
    let y0 = (img.height - h) / 2;
    let x0 = match side {
        BoundarySide::Left => 0,
        BoundarySide::Right => img.width - s,
    };
    Ok(img.crop(x0, y0, s, h))
}

/// A reconstruction puzzle: shreds in presentation order.
#[derive(Debug, Clone)]
pub struct ReconstructionInstance {
    pub shreds: Vec<Shred>,
    pub multi_page: bool,
}

impl ReconstructionInstance {
    pub fn new(shreds: Vec<Shred>) -> Self {
        assert!(shreds.len() >= 2, "an instance needs at least 2 shreds");
        let first_page = shreds[0].page_id.clone();
        let multi_page = shreds.iter().any(|s| s.page_id != first_page);
        ReconstructionInstance { shreds, multi_page }
    }

    pub fn len(&self) -> usize {
        self.shreds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shreds.is_empty()
    }

    /// Largest boundary height (a multiple of 4) that every shred can
    /// supply; mixed-height pages are center-cropped to this.
    pub fn common_boundary_height(&self) -> usize {
        let min_h = self.shreds.iter().map(|s| s.image.height).min().unwrap_or(0);
        min_h - min_h % 4
    }
}

/// Deterministic seeded shuffle of presentation order (Fisher-Yates over
/// a ChaCha8 stream); all metadata rides along.
pub fn permute_instance(inst: &ReconstructionInstance, seed: u64) -> ReconstructionInstance {
    let mut shreds = inst.shreds.clone();
    shuffle(&mut rng_from_seed(seed), &mut shreds);
    ReconstructionInstance { shreds, multi_page: inst.multi_page }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    page_id: String,
    gt_index: usize,
    is_page_first: bool,
    is_page_last: bool,
    width: usize,
    height: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    shreds: Vec<ManifestEntry>,
}

/// Writes shreds as PNG files plus a manifest.json into `dir`.
pub fn save_shreds(shreds: &[Shred], dir: &Path) -> Result<(), DocError> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(shreds.len());
    for shred in shreds {
        let file = format!("{}_{:03}.png", shred.page_id, shred.gt_index);
        save_png(&shred.image.to_gray(), &dir.join(&file))?;
        entries.push(ManifestEntry {
            file,
            page_id: shred.page_id.clone(),
            gt_index: shred.gt_index,
            is_page_first: shred.is_page_first,
            is_page_last: shred.is_page_last,
            width: shred.image.width,
            height: shred.image.height,
        });
    }
    let manifest = Manifest { version: 1, shreds: entries };
    let tmp = dir.join("manifest.json.partial");
    std::fs::write(&tmp, serde_json::to_vec_pretty(&manifest).expect("manifest json"))?;
    std::fs::rename(tmp, dir.join("manifest.json"))?;
    Ok(())
}

/// Loads a shred directory written by [`save_shreds`]. PNGs are
/// re-binarized by the simple midpoint rule (they were stored binary).
pub fn load_shreds(dir: &Path) -> Result<Vec<Shred>, DocError> {
    let manifest_path = dir.join("manifest.json");
    let data = std::fs::read(&manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&data)
        .map_err(|e| DocError::BadManifest(format!("{}: {e}", manifest_path.display())))?;
    if manifest.version != 1 {
        return Err(DocError::BadManifest(format!("unsupported version {}", manifest.version)));
    }
    let mut seen = std::collections::HashSet::new();
    let mut shreds = Vec::with_capacity(manifest.shreds.len());
    for entry in manifest.shreds {
        if !seen.insert((entry.page_id.clone(), entry.gt_index)) {
            return Err(DocError::BadManifest(format!(
                "duplicate shred {}#{}",
                entry.page_id, entry.gt_index
            )));
        }
        let gray = load_image(&dir.join(&entry.file))?;
        if gray.width != entry.width || gray.height != entry.height {
            return Err(DocError::BadManifest(format!("size mismatch for {}", entry.file)));
        }
        let bits = gray.pixels.iter().map(|&p| p < 128).collect();
        shreds.push(Shred {
            image: BinaryImage { width: gray.width, height: gray.height, bits },
            page_id: entry.page_id,
            gt_index: entry.gt_index,
            is_page_first: entry.is_page_first,
            is_page_last: entry.is_page_last,
        });
    }
    Ok(shreds)
}
