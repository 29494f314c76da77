//! Margin-based contrastive loss over embedding pairs.

use super::{Tensor, TensorError};

/// Which branch of the loss a positive label (y = 1) selects.
///
/// The published formula places the pull-together term on (1 - y), which
/// read literally would push positive pairs apart. `PositivePulls`
/// applies the evident intent (positive pairs attract, negative pairs
/// are pushed past the margin) and is the default; `Literal` keeps the
/// printed form for side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelConvention {
    #[default]
    PositivePulls,
    Literal,
}

impl LabelConvention {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "intent" | "positive-pulls" => Some(LabelConvention::PositivePulls),
            "literal" => Some(LabelConvention::Literal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossSpec {
    pub margin: f32,
    pub convention: LabelConvention,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec { margin: 1.0, convention: LabelConvention::default() }
    }
}

impl LossSpec {
    /// True when label `y` lands on the distance-squared (attract) branch.
    fn attracts(&self, y: u8) -> bool {
        match self.convention {
            LabelConvention::PositivePulls => y == 1,
            LabelConvention::Literal => y == 0,
        }
    }
}

/// Loss and embedding gradients for one pair.
///
/// loss = 1/2 * dist^2 on the attract branch,
/// loss = 1/2 * max(0, m - dist)^2 on the repel branch,
/// with dist the Euclidean distance accumulated in f64. At dist = 0 the
/// repel branch takes the zero subgradient.
pub fn contrastive_single(
    e_l: &[f32],
    e_r: &[f32],
    y: u8,
    spec: &LossSpec,
) -> Result<(f64, Vec<f32>, Vec<f32>), TensorError> {
    if e_l.len() != e_r.len() {
        return Err(TensorError::ShapeMismatch {
            expected: format!("embedding dim {}", e_l.len()),
            got: format!("{}", e_r.len()),
        });
    }
    let mut sq = 0.0f64;
    for (a, b) in e_l.iter().zip(e_r) {
        let d = f64::from(*a) - f64::from(*b);
        sq += d * d;
    }
    let dist = sq.sqrt();
    let m = f64::from(spec.margin);

    let mut g_l = vec![0.0f32; e_l.len()];
    let mut g_r = vec![0.0f32; e_r.len()];
    let loss;
    if spec.attracts(y) {
        loss = 0.5 * sq;
        for i in 0..e_l.len() {
            let d = (f64::from(e_l[i]) - f64::from(e_r[i])) as f32;
            g_l[i] = d;
            g_r[i] = -d;
        }
    } else {
        let slack = m - dist;
        if slack > 0.0 {
            loss = 0.5 * slack * slack;
            if dist > 0.0 {
                let scale = -slack / dist;
                for i in 0..e_l.len() {
                    let d = f64::from(e_l[i]) - f64::from(e_r[i]);
                    g_l[i] = (scale * d) as f32;
                    g_r[i] = (-scale * d) as f32;
                }
            }
        } else {
            loss = 0.0;
        }
    }
    if !loss.is_finite() {
        return Err(TensorError::NonFinite { op: "contrastive_loss" });
    }
    Ok((loss, g_l, g_r))
}

/// Batched loss over `(n, 1, 1, d)` embedding tensors. Returns the mean
/// loss and per-embedding gradients already scaled by 1/n.
pub fn contrastive_batch(
    e_l: &Tensor,
    e_r: &Tensor,
    labels: &[u8],
    spec: &LossSpec,
) -> Result<(f64, Tensor, Tensor), TensorError> {
    if e_l.shape() != e_r.shape() {
        return Err(TensorError::ShapeMismatch {
            expected: format!("{:?}", e_l.shape()),
            got: format!("{:?}", e_r.shape()),
        });
    }
    let [n, h, w, d] = e_l.shape();
    assert_eq!(h * w, 1, "loss expects (n, 1, 1, d) embeddings");
    assert_eq!(labels.len(), n);
    let mut g_l = Tensor::zeros(n, 1, 1, d);
    let mut g_r = Tensor::zeros(n, 1, 1, d);
    let inv = 1.0 / n as f32;
    let mut total = 0.0f64;
    for (i, &y) in labels.iter().enumerate() {
        let (loss, gl, gr) =
            contrastive_single(&e_l.data()[i * d..(i + 1) * d], &e_r.data()[i * d..(i + 1) * d], y, spec)?;
        total += loss;
        for j in 0..d {
            g_l.data_mut()[i * d + j] = gl[j] * inv;
            g_r.data_mut()[i * d + j] = gr[j] * inv;
        }
    }
    Ok((total / n as f64, g_l, g_r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_embeddings_on_attract_branch_cost_zero() {
        let spec = LossSpec::default();
        let e = vec![0.3f32, 0.7, 0.1];
        let (loss, gl, gr) = contrastive_single(&e, &e, 1, &spec).unwrap();
        assert_eq!(loss, 0.0);
        assert!(gl.iter().all(|&g| g == 0.0));
        assert!(gr.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn margin_saturates_repel_branch() {
        let spec = LossSpec { margin: 1.0, convention: LabelConvention::PositivePulls };
        // dist = 2 >= margin, so a negative pair costs nothing.
        let (loss, gl, _) = contrastive_single(&[0.0, 0.0], &[2.0, 0.0], 0, &spec).unwrap();
        assert_eq!(loss, 0.0);
        assert!(gl.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn repel_branch_value() {
        let spec = LossSpec { margin: 1.0, convention: LabelConvention::PositivePulls };
        // dist = 0.5, loss = 0.5 * (1 - 0.5)^2 = 0.125
        let (loss, _, _) = contrastive_single(&[0.5], &[0.0], 0, &spec).unwrap();
        assert!((loss - 0.125).abs() < 1e-12);
    }

    #[test]
    fn literal_convention_swaps_branches() {
        let intent = LossSpec { margin: 1.0, convention: LabelConvention::PositivePulls };
        let literal = LossSpec { margin: 1.0, convention: LabelConvention::Literal };
        let (a, _, _) = contrastive_single(&[0.5], &[0.0], 1, &intent).unwrap();
        let (b, _, _) = contrastive_single(&[0.5], &[0.0], 0, &literal).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = LossSpec { margin: 1.5, convention: LabelConvention::PositivePulls };
        for y in [0u8, 1u8] {
            let e_l = vec![0.4f32, 0.9, 0.2, 0.6];
            let e_r = vec![0.1f32, 0.5, 0.3, 0.8];
            let (_, gl, gr) = contrastive_single(&e_l, &e_r, y, &spec).unwrap();
            let h = 1e-4f32;
            for i in 0..e_l.len() {
                let mut plus = e_l.clone();
                plus[i] += h;
                let mut minus = e_l.clone();
                minus[i] -= h;
                let (lp, _, _) = contrastive_single(&plus, &e_r, y, &spec).unwrap();
                let (lm, _, _) = contrastive_single(&minus, &e_r, y, &spec).unwrap();
                let fd = ((lp - lm) / (2.0 * f64::from(h))) as f32;
                assert!((fd - gl[i]).abs() < 1e-3, "gl[{i}] fd {fd} vs {}", gl[i]);
            }
            for i in 0..e_r.len() {
                let mut plus = e_r.clone();
                plus[i] += h;
                let mut minus = e_r.clone();
                minus[i] -= h;
                let (lp, _, _) = contrastive_single(&e_l, &plus, y, &spec).unwrap();
                let (lm, _, _) = contrastive_single(&e_l, &minus, y, &spec).unwrap();
                let fd = ((lp - lm) / (2.0 * f64::from(h))) as f32;
                assert!((fd - gr[i]).abs() < 1e-3, "gr[{i}] fd {fd} vs {}", gr[i]);
            }
        }
    }

    #[test]
    fn batch_mean_matches_singles() {
        let spec = LossSpec::default();
        let e_l = Tensor::from_vec(2, 1, 1, 2, vec![0.1, 0.9, 0.4, 0.4]);
        let e_r = Tensor::from_vec(2, 1, 1, 2, vec![0.2, 0.8, 0.9, 0.1]);
        let (mean, _, _) = contrastive_batch(&e_l, &e_r, &[1, 0], &spec).unwrap();
        let (a, _, _) = contrastive_single(&[0.1, 0.9], &[0.2, 0.8], 1, &spec).unwrap();
        let (b, _, _) = contrastive_single(&[0.4, 0.4], &[0.9, 0.1], 0, &spec).unwrap();
        assert!((mean - (a + b) / 2.0).abs() < 1e-12);
    }
}
