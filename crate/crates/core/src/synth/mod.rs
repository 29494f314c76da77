//! Synthetic binary text pages for training and evaluation corpora.
//!
//! Pages are rendered from the built-in bitmap glyph set at 300-dpi-ish
//! geometry: pseudo-text lines of frequency-weighted word shapes,
//! occasional larger headings, paragraph breaks and per-page font
//! scale. Rendering is pure black on white and deterministic per
//! (seed, page index), so corpora are byte-reproducible.

mod font;

use crate::docproc::{save_png, GrayImage};
use crate::rng::{derive_seed, rng_from_seed, uniform_index, uniform_unit};
use font::{glyph, GLYPH_H, GLYPH_W};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Doc(#[from] crate::docproc::DocError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Outer margin in pixels. Kept below one strip width of the usual
    /// 30-strip cut so every seam crosses text rather than blank paper.
    pub margin: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { width: 2480, height: 3508, margin: 64 }
    }
}

// letter pool weighted roughly by English frequency
const LETTERS: &str = "eeeeeeeeeeeetttttttttaaaaaaaaooooooooiiiiiiinnnnnnnsssssshhhhhhrrrrrrddddllllcccuuummmwwfffggyyppbbvkxqjz";
const WORD_LEN_WEIGHTS: [usize; 10] = [2, 7, 10, 10, 8, 6, 4, 3, 2, 1];

fn sample_word_len(rng: &mut ChaCha8Rng) -> usize {
    let total: usize = WORD_LEN_WEIGHTS.iter().sum();
    let mut pick = uniform_index(rng, total);
    for (len, &w) in WORD_LEN_WEIGHTS.iter().enumerate() {
        if pick < w {
            return len + 1;
        }
        pick -= w;
    }
    3
}

fn sample_word(rng: &mut ChaCha8Rng, capitalize: bool) -> String {
    let letters: Vec<char> = LETTERS.chars().collect();
    let len = sample_word_len(rng);
    let mut word = String::with_capacity(len);
    for i in 0..len {
        let c = letters[uniform_index(rng, letters.len())];
        if i == 0 && capitalize {
            word.push(c.to_ascii_uppercase());
        } else {
            word.push(c);
        }
    }
    // about one word in twelve is a number
    if uniform_unit(rng) < 0.08 {
        word = (0..len.clamp(1, 5)).map(|_| char::from(b'0' + uniform_index(rng, 10) as u8)).collect();
    }
    word
}

fn draw_glyph(img: &mut GrayImage, c: char, x0: usize, y0: usize, scale: usize) {
    let Some(rows) = glyph(c) else { return };
    for (gy, &row) in rows.iter().enumerate() {
        for gx in 0..GLYPH_W {
            if row & (1 << (GLYPH_W - 1 - gx)) != 0 {
                for dy in 0..scale {
                    for dx in 0..scale {
                        let x = x0 + gx * scale + dx;
                        let y = y0 + gy * scale + dy;
                        if x < img.width && y < img.height {
                            img.set(x, y, 0);
                        }
                    }
                }
            }
        }
    }
}

fn draw_text(img: &mut GrayImage, text: &str, x0: usize, y0: usize, scale: usize) -> usize {
    let advance = (GLYPH_W + 1) * scale;
    let mut x = x0;
    for c in text.chars() {
        if c != ' ' {
            draw_glyph(img, c, x, y0, scale);
        }
        x += advance;
        if x + GLYPH_W * scale > img.width {
            break;
        }
    }
    x
}

/// Renders one page of pseudo-text. Deterministic in `seed`.
pub fn render_page(cfg: &SynthConfig, seed: u64) -> GrayImage {
    let mut rng = rng_from_seed(seed);
    let mut img = GrayImage::new(cfg.width, cfg.height, 255);
    let base_scale = 5 + uniform_index(&mut rng, 3); // 35..49 px line height
    let margin = cfg.margin;
    let mut y = margin;
    let mut lines_until_heading = 8 + uniform_index(&mut rng, 14);
    let mut sentence_left = 0usize;
    while y + GLYPH_H * base_scale + margin <= cfg.height {
        let heading = lines_until_heading == 0;
        let scale = if heading { base_scale + 2 } else { base_scale };
        if y + GLYPH_H * scale + margin > cfg.height {
            break;
        }
        let advance = (GLYPH_W + 1) * scale;
        // short indent on paragraph starts
        let mut x = margin + if uniform_unit(&mut rng) < 0.15 { 2 * advance } else { 0 };
        // fill the line word by word
        let line_end = cfg.width - margin;
        let fill_target = if heading || uniform_unit(&mut rng) < 0.12 {
            // headings and paragraph-final lines stop early
            margin + (line_end - margin) * (30 + uniform_index(&mut rng, 50)) / 100
        } else {
            line_end
        };
        loop {
            let capitalize = sentence_left == 0 || heading;
            if sentence_left == 0 {
                sentence_left = 4 + uniform_index(&mut rng, 8);
            }
            let mut word = sample_word(&mut rng, capitalize);
            sentence_left -= 1;
            if sentence_left == 0 && !heading {
                word.push(if uniform_unit(&mut rng) < 0.12 { '?' } else { '.' });
            } else if uniform_unit(&mut rng) < 0.06 {
                word.push(',');
            }
            let width = word.chars().count() * advance;
            if x + width > fill_target {
                break;
            }
            x = draw_text(&mut img, &word, x, y, scale) + advance;
            if x >= fill_target {
                break;
            }
        }
        y += GLYPH_H * scale + 3 * scale;
        if heading {
            lines_until_heading = 8 + uniform_index(&mut rng, 14);
            y += scale; // extra gap after a heading
        } else {
            lines_until_heading -= 1;
        }
        // occasional blank gap between paragraphs
        if uniform_unit(&mut rng) < 0.08 {
            y += (GLYPH_H + 3) * base_scale / 2;
        }
    }
    img
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub seed: u64,
    pub pages: Vec<CorpusPage>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CorpusPage {
    pub id: String,
    pub file: String,
    pub width: usize,
    pub height: usize,
}

/// Renders `count` pages into `out_dir` (PNG + pages.json manifest).
/// Page i draws from the sub-seed derive_seed(seed, i).
pub fn generate_corpus(
    cfg: &SynthConfig,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, SynthError> {
    std::fs::create_dir_all(out_dir)?;
    let mut pages = Vec::with_capacity(count);
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("page{i:04}");
        let file = format!("{id}.png");
        let img = render_page(cfg, derive_seed(seed, i as u64));
        let path = out_dir.join(&file);
        save_png(&img, &path)?;
        pages.push(CorpusPage { id, file, width: img.width, height: img.height });
        paths.push(path);
    }
    let manifest = CorpusManifest { version: 1, seed, pages };
    let tmp = out_dir.join("pages.json.partial");
    std::fs::write(&tmp, serde_json::to_vec_pretty(&manifest).expect("manifest json"))?;
    std::fs::rename(tmp, out_dir.join("pages.json"))?;
    Ok(paths)
}

pub fn load_corpus_manifest(dir: &Path) -> Result<CorpusManifest, SynthError> {
    let data = std::fs::read(dir.join("pages.json"))?;
    Ok(serde_json::from_slice(&data).map_err(|e| std::io::Error::other(e.to_string()))?)
}
