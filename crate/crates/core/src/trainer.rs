//! Joint self-supervised training of the two projection networks.
//!
//! Every epoch shuffles the training pairs (per-epoch seed stream),
//! runs mini-batch SGD on the contrastive loss updating both networks
//! together, checkpoints the weights, and scores the epoch by the
//! standardized mean difference between negative- and positive-pair
//! validation distances. The checkpoint with the highest SMD wins
//! (ties go to the earliest epoch, and the untrained epoch-0 state
//! competes too).
//!
//! Batches are processed in fixed 32-sample chunks: chunks run in
//! parallel, their gradients are reduced in chunk order, so results do
//! not depend on the thread count.

use crate::projector::{build_projector, ProjectorError, ProjectorPair};
#[cfg(test)]
use crate::projector::Side;
use crate::rng::{derive_seed, rng_from_seed, shuffle};
use crate::sampling::{SampleDataset, SamplePair};
use crate::tensornet::{contrastive_batch, LabelConvention, LossSpec, Network, Tensor, TensorError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

const GRAD_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("validation set must contain both labels")]
    ValidationMissingLabel,
    #[error("sample geometry {0}x{1} does not match configured {2}x{3}")]
    SampleGeometry(usize, usize, usize, usize),
    #[error("SMD needs >= 2 distances per label")]
    SmdTooFew,
    #[error("degenerate SMD: zero pooled deviation without separation")]
    SmdDegenerate,
    #[error("training diverged at epoch {epoch}; last finite checkpoint: {last:?}")]
    Diverged { epoch: usize, last: Option<PathBuf> },
    #[error("projector error: {0}")]
    Projector(#[from] ProjectorError),
    #[error("tensor error: {0}")]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch: usize,
    pub margin: f32,
    pub seed: u64,
    pub d: usize,
    pub s_y: usize,
    pub s_x: usize,
    pub label_convention: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 0.1,
            batch: 256,
            margin: 1.0,
            seed: 0,
            d: 128,
            s_y: 32,
            s_x: 32,
            label_convention: "intent".into(),
        }
    }
}

impl TrainConfig {
    fn loss_spec(&self) -> LossSpec {
        LossSpec {
            margin: self.margin,
            convention: LabelConvention::parse(&self.label_convention)
                .unwrap_or(LabelConvention::PositivePulls),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's samples; absent for the untrained
    /// epoch-0 record.
    pub train_loss: Option<f64>,
    pub smd: f64,
    /// Checkpoint file name, relative to the run directory.
    pub checkpoint: PathBuf,
}

/// Standardized mean difference (pooled-deviation form) between
/// negative- and positive-pair distances; higher separates better.
/// Zero pooled deviation with the means in the right direction is a
/// +inf sentinel; otherwise it is an error.
pub fn smd(dist_pos: &[f64], dist_neg: &[f64]) -> Result<f64, TrainError> {
    if dist_pos.len() < 2 || dist_neg.len() < 2 {
        return Err(TrainError::SmdTooFew);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    let (mp, mn) = (mean(dist_pos), mean(dist_neg));
    let (vp, vn) = (var(dist_pos, mp), var(dist_neg, mn));
    let np = dist_pos.len() as f64;
    let nn = dist_neg.len() as f64;
    let pooled = (((np - 1.0) * vp + (nn - 1.0) * vn) / (np + nn - 2.0)).sqrt();
    if pooled == 0.0 {
        return if mn > mp { Ok(f64::INFINITY) } else { Err(TrainError::SmdDegenerate) };
    }
    Ok((mn - mp) / pooled)
}

fn pair_to_tensors(pairs: &[&SamplePair]) -> (Tensor, Tensor, Vec<u8>) {
    let (s_y, s_x) = (pairs[0].x_r.height, pairs[0].x_r.width);
    let mut x_l = Tensor::zeros(pairs.len(), s_y, s_x, 1);
    let mut x_r = Tensor::zeros(pairs.len(), s_y, s_x, 1);
    let stride = s_y * s_x;
    for (i, p) in pairs.iter().enumerate() {
        for (dst, &ink) in x_l.data_mut()[i * stride..(i + 1) * stride].iter_mut().zip(&p.x_l.bits) {
            *dst = if ink { 1.0 } else { 0.0 };
        }
        for (dst, &ink) in x_r.data_mut()[i * stride..(i + 1) * stride].iter_mut().zip(&p.x_r.bits) {
            *dst = if ink { 1.0 } else { 0.0 };
        }
    }
    let labels = pairs.iter().map(|p| p.y).collect();
    (x_l, x_r, labels)
}

/// Per-pair validation distances ||f_left(x_l) - f_right(x_r)||_2,
/// routed by label: (positive distances, negative distances).
pub fn validate_distances(
    pair: &ProjectorPair,
    val: &SampleDataset,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let refs: Vec<&SamplePair> = val.pairs.iter().collect();
    let chunks: Vec<&[&SamplePair]> = refs.chunks(GRAD_CHUNK).collect();
    let results: Vec<Result<Vec<(u8, f64)>, TrainError>> = chunks
        .par_iter()
        .map(|chunk| {
            let (x_l, x_r, labels) = pair_to_tensors(chunk);
            let e_l = pair.left.infer(&x_l)?;
            let e_r = pair.right.infer(&x_r)?;
            let d = e_l.channels();
            Ok(labels
                .iter()
                .enumerate()
                .map(|(i, &y)| {
                    let dist = crate::projector::embedding_distance(
                        &e_l.data()[i * d..(i + 1) * d],
                        &e_r.data()[i * d..(i + 1) * d],
                    );
                    (y, dist)
                })
                .collect())
        })
        .collect();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for r in results {
        for (y, dist) in r? {
            if y == 1 {
                pos.push(dist);
            } else {
                neg.push(dist);
            }
        }
    }
    Ok((pos, neg))
}

struct BatchOutcome {
    grads_left: crate::tensornet::NetworkGrads,
    grads_right: crate::tensornet::NetworkGrads,
    loss_sum: f64,
}

fn batch_gradients(
    left: &Network,
    right: &Network,
    batch: &[&SamplePair],
    spec: &LossSpec,
) -> Result<BatchOutcome, TrainError> {
    let total = batch.len();
    let chunks: Vec<&[&SamplePair]> = batch.chunks(GRAD_CHUNK).collect();
    let parts: Vec<Result<BatchOutcome, TrainError>> = chunks
        .par_iter()
        .map(|chunk| {
            let (x_l, x_r, labels) = pair_to_tensors(chunk);
            let (e_l, cache_l) = left.forward_train(&x_l)?;
            let (e_r, cache_r) = right.forward_train(&x_r)?;
            let (mean_loss, g_l, g_r) = contrastive_batch(&e_l, &e_r, &labels, spec)?;
            let (mut grads_left, _) = left.backward(&cache_l, &g_l)?;
            let (mut grads_right, _) = right.backward(&cache_r, &g_r)?;
            // contrastive_batch scales by 1/chunk; rescale to 1/total
            let factor = chunk.len() as f32 / total as f32;
            Network::scale_grads(&mut grads_left, factor);
            Network::scale_grads(&mut grads_right, factor);
            Ok(BatchOutcome {
                grads_left,
                grads_right,
                loss_sum: mean_loss * chunk.len() as f64,
            })
        })
        .collect();
    let mut iter = parts.into_iter();
    let mut acc = iter.next().expect("non-empty batch")?;
    for part in iter {
        let part = part?;
        Network::add_grads(&mut acc.grads_left, &part.grads_left);
        Network::add_grads(&mut acc.grads_right, &part.grads_right);
        acc.loss_sum += part.loss_sum;
    }
    Ok(acc)
}

fn checkpoint_name(epoch: usize) -> PathBuf {
    PathBuf::from(format!("epoch_{epoch:03}.shrw"))
}

fn validate_and_record(
    pair: &ProjectorPair,
    val: &SampleDataset,
    epoch: usize,
    train_loss: Option<f64>,
    dir: &Path,
) -> Result<EpochRecord, TrainError> {
    let name = checkpoint_name(epoch);
    pair.save_weights(&dir.join(&name))?;
    let (pos, neg) = validate_distances(pair, val)?;
    let smd = smd(&pos, &neg)?;
    Ok(EpochRecord { epoch, train_loss, smd, checkpoint: name })
}

/// Trains a freshly initialized pair for `cfg.epochs` epochs; see
/// [`train_resume`] for the loop itself.
pub fn train(
    train_set: &SampleDataset,
    val_set: &SampleDataset,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(ProjectorPair, Vec<EpochRecord>), TrainError> {
    let pair = build_projector(cfg.d, cfg.s_y, cfg.s_x, cfg.seed)?;
    train_resume(pair, 0, train_set, val_set, cfg, out_dir)
}

/// Continues training `pair` from `start_epoch` (0 = untrained) through
/// `cfg.epochs`. Epoch shuffles draw from per-epoch seed streams, so a
/// checkpoint reloaded at epoch e replays the exact remaining
/// trajectory.
pub fn train_resume(
    mut pair: ProjectorPair,
    start_epoch: usize,
    train_set: &SampleDataset,
    val_set: &SampleDataset,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(ProjectorPair, Vec<EpochRecord>), TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let has = |label: u8| val_set.pairs.iter().any(|p| p.y == label);
    if !has(0) || !has(1) {
        return Err(TrainError::ValidationMissingLabel);
    }
    for p in train_set.pairs.iter().chain(&val_set.pairs) {
        if p.x_r.height != cfg.s_y || p.x_r.width != cfg.s_x {
            return Err(TrainError::SampleGeometry(p.x_r.height, p.x_r.width, cfg.s_y, cfg.s_x));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let spec = cfg.loss_spec();
    let mut records: Vec<EpochRecord> = Vec::new();
    if start_epoch == 0 {
        records.push(validate_and_record(&pair, val_set, 0, None, out_dir)?);
    }

    let n = train_set.len();
    for epoch in (start_epoch + 1)..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut rng_from_seed(derive_seed(cfg.seed, 0x5A5A_0000 + epoch as u64)), &mut order);
        let mut loss_sum = 0.0f64;
        for batch_idx in order.chunks(cfg.batch.max(1)) {
            let batch: Vec<&SamplePair> = batch_idx.iter().map(|&i| &train_set.pairs[i]).collect();
            let outcome = batch_gradients(&pair.left, &pair.right, &batch, &spec)?;
            if !outcome.loss_sum.is_finite() {
                let last = records.last().map(|r| out_dir.join(&r.checkpoint));
                return Err(TrainError::Diverged { epoch, last });
            }
            pair.left.sgd_step(&outcome.grads_left, cfg.lr);
            pair.right.sgd_step(&outcome.grads_right, cfg.lr);
            loss_sum += outcome.loss_sum;
        }
        let record = validate_and_record(&pair, val_set, epoch, Some(loss_sum / n as f64), out_dir)?;
        records.push(record);
    }

    let best = records
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| {
            a.smd.partial_cmp(&b.smd).unwrap().then(ib.cmp(ia)) // ties -> earliest
        })
        .map(|(i, _)| i)
        .expect("at least one record");
    let best_pair = ProjectorPair::load_weights(&out_dir.join(&records[best].checkpoint))?;
    write_log(&records, &out_dir.join("log.csv"))?;
    Ok((best_pair, records))
}

/// Training log CSV: epoch, train_loss, smd, checkpoint.
pub fn write_log(records: &[EpochRecord], path: &Path) -> Result<(), TrainError> {
    let tmp = path.with_extension("partial");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        writeln!(f, "epoch,train_loss,smd,checkpoint")?;
        for r in records {
            let loss = r.train_loss.map(|l| format!("{l:.9}")).unwrap_or_default();
            writeln!(f, "{},{},{:.9},{}", r.epoch, loss, r.smd, r.checkpoint.display())?;
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// The record with the highest SMD, earliest epoch on ties.
pub fn best_record(records: &[EpochRecord]) -> Option<&EpochRecord> {
    records.iter().enumerate().max_by(|(ia, a), (ib, b)| {
        a.smd.partial_cmp(&b.smd).unwrap().then(ib.cmp(ia))
    }).map(|(_, r)| r)
}
