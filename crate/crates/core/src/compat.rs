//! Pairwise compatibility from cached boundary embeddings.
//!
//! Embedding and distance computation are decoupled: every shred is
//! projected once per side, then the n x n cost matrix is pure distance
//! arithmetic over the stored tensors. Vertical misalignment is
//! absorbed by sliding one tensor up or down by whole rows (at most
//! `delta_max`), never by re-running the networks.

use crate::projector::EmbeddingTensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CompatError {
    #[error("embedding shape mismatch: {0} rows x {1} dims vs {2} rows x {3} dims")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("delta_max {0} must be below the {1} embedding rows")]
    DeltaTooLarge(usize, usize),
    #[error("cost matrix needs >= 2 shreds, got {0}")]
    TooSmall(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad cost matrix file: {0}")]
    BadFile(String),
}

/// Distance form used for every tensor comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceForm {
    /// Squared Euclidean distance; the default (the shift argmin is the
    /// same as for the plain norm, and it skips the square root).
    #[default]
    Squared,
    /// Plain Euclidean norm.
    Plain,
}

impl DistanceForm {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "squared" => Some(DistanceForm::Squared),
            "plain" => Some(DistanceForm::Plain),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CompatConfig {
    pub delta_max: usize,
    pub distance: DistanceForm,
}

impl Default for CompatConfig {
    fn default() -> Self {
        CompatConfig { delta_max: 3, distance: DistanceForm::default() }
    }
}

fn check_pair(r: &EmbeddingTensor, l: &EmbeddingTensor, delta_max: usize) -> Result<(), CompatError> {
    if r.rows != l.rows || r.dim != l.dim {
        return Err(CompatError::ShapeMismatch(r.rows, r.dim, l.rows, l.dim));
    }
    if delta_max >= r.rows {
        return Err(CompatError::DeltaTooLarge(delta_max, r.rows));
    }
    Ok(())
}

/// Squared distance between `n_rows`-row slices starting at `r_off` of
/// `r` and `l_off` of `l`; f64 accumulation.
fn slice_sq_dist(r: &EmbeddingTensor, l: &EmbeddingTensor, r_off: usize, l_off: usize, n_rows: usize) -> f64 {
    let d = r.dim;
    let ra = &r.data[r_off * d..(r_off + n_rows) * d];
    let la = &l.data[l_off * d..(l_off + n_rows) * d];
    let mut acc = 0.0f64;
    for (a, b) in ra.iter().zip(la) {
        let diff = f64::from(*a) - f64::from(*b);
        acc += diff * diff;
    }
    acc
}

fn finish(sq: f64, form: DistanceForm) -> f64 {
    match form {
        DistanceForm::Squared => sq,
        DistanceForm::Plain => sq.sqrt(),
    }
}

/// Upward shift search: min over delta in [0, delta_max] of the distance
/// between the top n_rows of R and the l-embeddings shifted up by delta,
/// with n_rows = rows - delta_max.
pub fn cost_up(
    r: &EmbeddingTensor,
    l: &EmbeddingTensor,
    cfg: &CompatConfig,
) -> Result<f64, CompatError> {
    check_pair(r, l, cfg.delta_max)?;
    let n_rows = r.rows - cfg.delta_max;
    let best = (0..=cfg.delta_max)
        .map(|delta| slice_sq_dist(r, l, 0, delta, n_rows))
        .fold(f64::INFINITY, f64::min);
    Ok(finish(best, cfg.distance))
}

/// Downward direction: the shift offsets the r-embeddings instead.
pub fn cost_down(
    r: &EmbeddingTensor,
    l: &EmbeddingTensor,
    cfg: &CompatConfig,
) -> Result<f64, CompatError> {
    check_pair(r, l, cfg.delta_max)?;
    let n_rows = r.rows - cfg.delta_max;
    let best = (0..=cfg.delta_max)
        .map(|delta| slice_sq_dist(r, l, delta, 0, n_rows))
        .fold(f64::INFINITY, f64::min);
    Ok(finish(best, cfg.distance))
}

/// Pair cost: the better of the two shift directions.
pub fn cost(
    r: &EmbeddingTensor,
    l: &EmbeddingTensor,
    cfg: &CompatConfig,
) -> Result<f64, CompatError> {
    Ok(cost_up(r, l, cfg)?.min(cost_down(r, l, cfg)?))
}

/// Asymmetric n x n cost table; `values[i][j]` prices placing shred j
/// immediately right of shred i. The diagonal is +inf.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub n: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn from_values(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n * n);
        CostMatrix { n, values }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// CSV export: first line the shred count, then one row per line,
    /// "inf" on the diagonal.
    pub fn save_csv(&self, path: &Path) -> Result<(), CompatError> {
        let tmp = path.with_extension("partial");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            writeln!(f, "{}", self.n)?;
            for i in 0..self.n {
                let row: Vec<String> = (0..self.n)
                    .map(|j| {
                        let v = self.at(i, j);
                        if v.is_infinite() { "inf".to_string() } else { format!("{v:.17e}") }
                    })
                    .collect();
                writeln!(f, "{}", row.join(","))?;
            }
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_csv(path: &Path) -> Result<CostMatrix, CompatError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let n: usize = lines
            .next()
            .ok_or_else(|| CompatError::BadFile("empty file".into()))?
            .trim()
            .parse()
            .map_err(|_| CompatError::BadFile("bad shred count".into()))?;
        let mut values = Vec::with_capacity(n * n);
        for (i, line) in lines.enumerate() {
            if i >= n {
                return Err(CompatError::BadFile("too many rows".into()));
            }
            for tok in line.split(',') {
                let tok = tok.trim();
                if tok == "inf" {
                    values.push(f64::INFINITY);
                } else {
                    values.push(
                        tok.parse::<f64>()
                            .map_err(|_| CompatError::BadFile(format!("bad value '{tok}'")))?,
                    );
                }
            }
        }
        if values.len() != n * n {
            return Err(CompatError::BadFile("wrong cell count".into()));
        }
        Ok(CostMatrix { n, values })
    }
}

/// Per-shred embeddings of both boundaries.
#[derive(Debug, Clone)]
pub struct ShredEmbeddings {
    pub right: EmbeddingTensor,
    pub left: EmbeddingTensor,
}

/// Builds the full cost matrix from cached embeddings. No network runs
/// here; rows are filled in parallel and the result is independent of
/// the thread count.
pub fn build_cost_matrix(
    embeddings: &[ShredEmbeddings],
    cfg: &CompatConfig,
) -> Result<CostMatrix, CompatError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(CompatError::TooSmall(n));
    }
    let rows = embeddings[0].right.rows;
    let dim = embeddings[0].right.dim;
    for e in embeddings {
        for t in [&e.right, &e.left] {
            if t.rows != rows || t.dim != dim {
                return Err(CompatError::ShapeMismatch(rows, dim, t.rows, t.dim));
            }
        }
    }
    if cfg.delta_max >= rows {
        return Err(CompatError::DeltaTooLarge(cfg.delta_max, rows));
    }
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let cfg = *cfg;
            (0..n).map(move |j| {
                if i == j {
                    f64::INFINITY
                } else {
                    cost(&embeddings[i].right, &embeddings[j].left, &cfg)
                        .expect("shapes pre-checked")
                }
            })
        })
        .collect();
    Ok(CostMatrix { n, values })
}
