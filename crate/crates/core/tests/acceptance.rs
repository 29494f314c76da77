//! Acceptance suite: one pass/fail line per criterion, run sequentially
//! (the timing-sensitive criteria must not share the CPU with each
//! other, so this target uses its own main instead of libtest).
//!
//! Run all:        cargo test -p shredrec --test acceptance
//! Run a subset:   cargo test -p shredrec --test acceptance -- 1,3,9

use rand_chacha::ChaCha8Rng;
use shredrec::compat::{build_cost_matrix, cost, CompatConfig, DistanceForm, ShredEmbeddings};
use shredrec::docproc::{
    boundary_crop, permute_instance, shred_page, BinaryImage, BoundarySide,
    ReconstructionInstance, SAUVOLA_K, SAUVOLA_R, SAUVOLA_WINDOW,
};
use shredrec::metrics::{accuracy, log_log_slope, paired_t_test, Stage, StageTimer};
use shredrec::projector::{build_projector, EmbeddingTensor, ProjectorPair, Side};
use shredrec::rng::{derive_seed, rng_from_seed, uniform_unit};
use shredrec::sampling::{extract_pairs, ExtractConfig, SampleDataset, SamplePair};
use shredrec::solver::{objective, solve_exact, solve_heuristic};
use shredrec::synth::{render_page, SynthConfig};
use shredrec::tensornet::{
    contrastive_single, Conv2d, Fire, LabelConvention, Layer, LossSpec, MaxPool2d, Network,
    PadMode, Tensor,
};
use shredrec::trainer::{best_record, smd, train, validate_distances, TrainConfig};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn main() {
    let filter: Option<Vec<usize>> = std::env::args()
        .nth(1)
        .map(|arg| arg.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wants = |n: usize| filter.as_ref().is_none_or(|f| f.contains(&n));

    let mut failures = 0usize;
    let mut shared_model: Option<TrainedModel> = None;

    let criteria: Vec<(usize, &str, CriterionFn)> = vec![
        (1, "gradient correctness", c1_gradients),
        (2, "fully-convolutional equivalence", c2_fullyconv),
        (3, "shift-search oracle", c3_shift_oracle),
        (4, "solver optimality", c4_solver),
        (5, "linear inference scaling", c5_scaling),
        (6, "end-to-end reconstruction", c6_end_to_end),
        (7, "multi-page relaxed accuracy", c7_multi_page),
        (8, "SMD model selection", c8_smd_selection),
        (9, "paired t-test vs quadrature", c9_t_test),
        (10, "byte-level determinism", c10_determinism),
    ];
    for (num, name, f) in criteria {
        if !wants(num) {
            continue;
        }
        let t0 = Instant::now();
        match f(&mut shared_model) {
            Ok(detail) => println!(
                "criterion {num}: PASS — {name} ({detail}) [{:.1}s]",
                t0.elapsed().as_secs_f64()
            ),
            Err(detail) => {
                failures += 1;
                println!(
                    "criterion {num}: FAIL — {name}: {detail} [{:.1}s]",
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}

type CriterionFn = fn(&mut Option<TrainedModel>) -> Result<String, String>;

struct TrainedModel {
    pair: ProjectorPair,
    held_out: Vec<Vec<shredrec::docproc::Shred>>,
}

// ---------------------------------------------------------------- helpers

fn rand_tensor(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> Tensor {
    let mut t = Tensor::zeros(n, h, w, c);
    for v in t.data_mut() {
        // biased away from zero so ReLU kinks stay clear of the probes
        let mag = 0.1 + 0.8 * uniform_unit(rng);
        *v = if uniform_unit(rng) < 0.5 { -mag as f32 } else { mag as f32 };
    }
    t
}

/// Plain-f64 reference forward pass: naive six-loop convolution,
/// direct window scans, exact activation math. The finite-difference
/// probe runs through this, so checker precision is limited only by the
/// O(step^2) truncation term, never by f32 rounding in the
/// implementation under test.
#[derive(Clone)]
struct F64Tensor {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl F64Tensor {
    fn from_impl(t: &Tensor) -> Self {
        let [n, h, w, c] = t.shape();
        F64Tensor { n, h, w, c, data: t.data().iter().map(|&v| f64::from(v)).collect() }
    }

    fn at(&self, b: usize, y: usize, x: usize, ch: usize) -> f64 {
        self.data[((b * self.h + y) * self.w + x) * self.c + ch]
    }
}

/// (output extent, leading pad) for one axis; same-padding follows the
/// ceil(in/stride) rule with the surplus cell after the data.
fn ref_geometry(valid: bool, input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    if valid {
        ((input - kernel) / stride + 1, 0)
    } else {
        let out = input.div_ceil(stride);
        let total = ((out - 1) * stride + kernel).saturating_sub(input);
        (out, total / 2)
    }
}

#[allow(clippy::too_many_arguments)]
fn ref_conv(
    x: &F64Tensor,
    weight: &[f64],
    bias: &[f64],
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pv_valid: bool,
    ph_valid: bool,
    out_ch: usize,
) -> F64Tensor {
    let (oh, pad_top) = ref_geometry(pv_valid, x.h, kh, sh);
    let (ow, pad_left) = ref_geometry(ph_valid, x.w, kw, sw);
    let mut out = F64Tensor { n: x.n, h: oh, w: ow, c: out_ch, data: vec![0.0; x.n * oh * ow * out_ch] };
    for b in 0..x.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..out_ch {
                    let mut acc = bias[co];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * sh + ky) as isize - pad_top as isize;
                            let ix = (ox * sw + kx) as isize - pad_left as isize;
                            if iy < 0 || iy >= x.h as isize || ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            for ci in 0..x.c {
                                acc += weight[((ky * kw + kx) * x.c + ci) * out_ch + co]
                                    * x.at(b, iy as usize, ix as usize, ci);
                            }
                        }
                    }
                    out.data[((b * oh + oy) * ow + ox) * out_ch + co] = acc;
                }
            }
        }
    }
    out
}

fn ref_maxpool(x: &F64Tensor, kh: usize, kw: usize, sh: usize, sw: usize, pv_valid: bool, ph_valid: bool) -> F64Tensor {
    let (oh, pad_top) = ref_geometry(pv_valid, x.h, kh, sh);
    let (ow, pad_left) = ref_geometry(ph_valid, x.w, kw, sw);
    let mut out = F64Tensor { n: x.n, h: oh, w: ow, c: x.c, data: vec![0.0; x.n * oh * ow * x.c] };
    for b in 0..x.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..x.c {
                    let mut best = f64::NEG_INFINITY;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * sh + ky) as isize - pad_top as isize;
                            let ix = (ox * sw + kx) as isize - pad_left as isize;
                            if iy >= 0 && iy < x.h as isize && ix >= 0 && ix < x.w as isize {
                                best = best.max(x.at(b, iy as usize, ix as usize, ch));
                            }
                        }
                    }
                    out.data[((b * oh + oy) * ow + ox) * x.c + ch] = best;
                }
            }
        }
    }
    out
}

fn ref_crop_rows(x: &F64Tensor, top: usize, bottom: usize) -> F64Tensor {
    let nh = x.h - top - bottom;
    let mut out = F64Tensor { n: x.n, h: nh, w: x.w, c: x.c, data: Vec::with_capacity(x.n * nh * x.w * x.c) };
    for b in 0..x.n {
        for y in top..top + nh {
            for xx in 0..x.w {
                for ch in 0..x.c {
                    out.data.push(x.at(b, y, xx, ch));
                }
            }
        }
    }
    out
}

fn ref_concat(a: &F64Tensor, b: &F64Tensor) -> F64Tensor {
    let c = a.c + b.c;
    let mut out = F64Tensor { n: a.n, h: a.h, w: a.w, c, data: Vec::with_capacity(a.n * a.h * a.w * c) };
    for bb in 0..a.n {
        for y in 0..a.h {
            for x in 0..a.w {
                for ch in 0..a.c {
                    out.data.push(a.at(bb, y, x, ch));
                }
                for ch in 0..b.c {
                    out.data.push(b.at(bb, y, x, ch));
                }
            }
        }
    }
    out
}

fn ref_relu(x: &F64Tensor) -> F64Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

fn ref_sigmoid(x: &F64Tensor) -> F64Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    out
}

/// Mirrors the layer stack in f64, reading only geometry from the
/// implementation and parameters from the flat f64 list.
fn ref_forward(layers: &[Layer], params: &[Vec<f64>], x: &F64Tensor) -> F64Tensor {
    let mut cur = x.clone();
    let mut p = 0usize;
    for layer in layers {
        cur = match layer {
            Layer::Conv(c) => {
                let out = ref_conv(
                    &cur,
                    &params[p],
                    &params[p + 1],
                    c.kh,
                    c.kw,
                    c.sh,
                    c.sw,
                    c.pad_v == PadMode::Valid,
                    c.pad_h == PadMode::Valid,
                    c.out_ch,
                );
                p += 2;
                out
            }
            Layer::MaxPool(m) => ref_maxpool(
                &cur,
                m.kh,
                m.kw,
                m.sh,
                m.sw,
                m.pad_v == PadMode::Valid,
                m.pad_h == PadMode::Valid,
            ),
            Layer::Relu => ref_relu(&cur),
            Layer::Sigmoid => ref_sigmoid(&cur),
            Layer::Fire(f) => {
                let squeezed = ref_relu(&ref_conv(
                    &cur, &params[p], &params[p + 1], 1, 1, 1, 1, true, true, f.squeeze.out_ch,
                ));
                let cropped = ref_crop_rows(&squeezed, 1, 1);
                let e1 = ref_relu(&ref_conv(
                    &cropped, &params[p + 2], &params[p + 3], 1, 1, 1, 1, true, true,
                    f.expand1.out_ch,
                ));
                let e3 = ref_relu(&ref_conv(
                    &squeezed, &params[p + 4], &params[p + 5], 3, 3, 1, 1, true, false,
                    f.expand3.out_ch,
                ));
                p += 6;
                ref_concat(&e1, &e3)
            }
        };
    }
    cur
}

/// Smallest |pre-activation| feeding any ReLU in the stack; cases are
/// redrawn until this clears the finite-difference step, so no probe
/// can flip a branch.
fn min_relu_margin(layers: &[Layer], params: &[Vec<f64>], x: &F64Tensor) -> f64 {
    let mut cur = x.clone();
    let mut p = 0usize;
    let mut margin = f64::INFINITY;
    let mut scan = |t: &F64Tensor, margin: &mut f64| {
        for v in &t.data {
            *margin = margin.min(v.abs());
        }
    };
    for layer in layers {
        cur = match layer {
            Layer::Conv(c) => {
                let out = ref_conv(
                    &cur, &params[p], &params[p + 1], c.kh, c.kw, c.sh, c.sw,
                    c.pad_v == PadMode::Valid, c.pad_h == PadMode::Valid, c.out_ch,
                );
                p += 2;
                out
            }
            Layer::MaxPool(m) => ref_maxpool(
                &cur, m.kh, m.kw, m.sh, m.sw,
                m.pad_v == PadMode::Valid, m.pad_h == PadMode::Valid,
            ),
            Layer::Relu => {
                scan(&cur, &mut margin);
                ref_relu(&cur)
            }
            Layer::Sigmoid => ref_sigmoid(&cur),
            Layer::Fire(f) => {
                let pre_s = ref_conv(&cur, &params[p], &params[p + 1], 1, 1, 1, 1, true, true, f.squeeze.out_ch);
                scan(&pre_s, &mut margin);
                let squeezed = ref_relu(&pre_s);
                let cropped = ref_crop_rows(&squeezed, 1, 1);
                let pre_1 = ref_conv(&cropped, &params[p + 2], &params[p + 3], 1, 1, 1, 1, true, true, f.expand1.out_ch);
                scan(&pre_1, &mut margin);
                let pre_3 = ref_conv(&squeezed, &params[p + 4], &params[p + 5], 3, 3, 1, 1, true, false, f.expand3.out_ch);
                scan(&pre_3, &mut margin);
                p += 6;
                ref_concat(&ref_relu(&pre_1), &ref_relu(&pre_3))
            }
        };
    }
    margin
}

fn probe_loss_f64(out: &F64Tensor, probe: &[f64]) -> f64 {
    out.data.iter().zip(probe).map(|(v, w)| v * w).sum()
}

/// Central-difference check of every parameter and input component
/// against the analytic gradients. Finite differences run through the
/// f64 reference forward; denominators are floored at 1e-2 so
/// near-zero components are held to an absolute 1e-6.
fn gradcheck_network(
    net: &Network,
    input: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<f64, String> {
    const STEP: f64 = 1e-3;
    let (out, caches) = net.forward_train(input).map_err(|e| e.to_string())?;
    let probe: Vec<f64> = (0..out.len()).map(|_| uniform_unit(rng) * 2.0 - 1.0).collect();
    let mut gout = Tensor::zeros(out.batch(), out.height(), out.width(), out.channels());
    for (g, p) in gout.data_mut().iter_mut().zip(&probe) {
        *g = *p as f32;
    }
    let (grads, gin) = net.backward(&caches, &gout).map_err(|e| e.to_string())?;
    let analytic_params: Vec<Vec<f32>> =
        Network::grad_slices(&grads).iter().map(|s| s.to_vec()).collect();

    // cross-check: the implementation forward agrees with the reference
    let mut params: Vec<Vec<f64>> = net
        .param_slices()
        .iter()
        .map(|s| s.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let mut x64 = F64Tensor::from_impl(input);
    let ref_out = ref_forward(&net.layers, &params, &x64);
    for (a, b) in out.data().iter().zip(&ref_out.data) {
        if (f64::from(*a) - b).abs() > 1e-4 {
            return Err(format!("forward mismatch vs f64 reference: {a} vs {b}"));
        }
    }

    let mut worst = 0.0f64;
    let mut skipped = 0usize;
    let mut total = 0usize;
    // Central differences at two step sizes. When the two estimates
    // disagree the probe straddles a ReLU/max kink, where the gradient
    // is a subgradient choice rather than a checkable derivative; such
    // components are skipped (and counted, so a broken backward that
    // "skips everything" still fails).
    let mut check = |analytic: f32,
                     fd_h: f64,
                     fd_h2: f64,
                     worst: &mut f64,
                     skipped: &mut usize,
                     total: &mut usize| {
        *total += 1;
        if (fd_h - fd_h2).abs() > 1e-3 * fd_h.abs().max(1.0) {
            *skipped += 1;
            return;
        }
        let denom = f64::from(analytic.abs()).max(fd_h2.abs()).max(1e-2);
        let err = (f64::from(analytic) - fd_h2).abs() / denom;
        if err > *worst {
            *worst = err;
        }
    };

    for slice_idx in 0..params.len() {
        for i in 0..params[slice_idx].len() {
            let orig = params[slice_idx][i];
            let mut eval = |delta: f64, params: &mut Vec<Vec<f64>>| {
                params[slice_idx][i] = orig + delta;
                probe_loss_f64(&ref_forward(&net.layers, params, &x64), &probe)
            };
            let fd_h = (eval(STEP, &mut params) - eval(-STEP, &mut params)) / (2.0 * STEP);
            let fd_h2 = (eval(STEP / 2.0, &mut params) - eval(-STEP / 2.0, &mut params)) / STEP;
            params[slice_idx][i] = orig;
            check(analytic_params[slice_idx][i], fd_h, fd_h2, &mut worst, &mut skipped, &mut total);
        }
    }
    for i in 0..x64.data.len() {
        let orig = x64.data[i];
        let mut eval = |delta: f64, x64: &mut F64Tensor| {
            x64.data[i] = orig + delta;
            probe_loss_f64(&ref_forward(&net.layers, &params, x64), &probe)
        };
        let fd_h = (eval(STEP, &mut x64) - eval(-STEP, &mut x64)) / (2.0 * STEP);
        let fd_h2 = (eval(STEP / 2.0, &mut x64) - eval(-STEP / 2.0, &mut x64)) / STEP;
        x64.data[i] = orig;
        check(gin.data()[i], fd_h, fd_h2, &mut worst, &mut skipped, &mut total);
    }
    // ReLU nets legitimately put a few percent of probes on kinks;
    // anything beyond a fifth means the probe itself is degenerate
    if skipped * 5 > total {
        return Err(format!("{skipped}/{total} components sat on kinks; probe is degenerate"));
    }
    Ok(worst)
}

/// Every value distinct by at least `gap`, in shuffled order; keeps
/// max-pooling argmaxes stable under finite-difference perturbation.
fn rand_separated_tensor(
    rng: &mut ChaCha8Rng,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    gap: f32,
) -> Tensor {
    let len = n * h * w * c;
    let mut values: Vec<f32> = (0..len).map(|i| (i as f32 - len as f32 / 2.0) * gap).collect();
    shredrec::rng::shuffle(rng, &mut values);
    Tensor::from_vec(n, h, w, c, values)
}

fn he_init_conv(conv: &mut Conv2d, rng: &mut ChaCha8Rng) {
    conv.init_he(rng);
    for b in &mut conv.bias {
        *b = (uniform_unit(rng) * 0.4 - 0.2) as f32;
    }
}

// ---------------------------------------------------------- criterion 1

fn c1_gradients(_: &mut Option<TrainedModel>) -> Result<String, String> {
    const TOL: f64 = 1e-4;
    let mut rng = rng_from_seed(0xC1);
    let mut worst_overall = 0.0f64;
    let mut configs = 0usize;

    for case in 0..50usize {
        let (pv, ph) = match case % 4 {
            0 => (PadMode::Valid, PadMode::Valid),
            1 => (PadMode::Same, PadMode::Same),
            2 => (PadMode::Valid, PadMode::Same),
            _ => (PadMode::Same, PadMode::Valid),
        };
        let stride = 1 + case % 2;
        let mut conv = Conv2d::new(3, 3, stride, stride, pv, ph, 2, 3);
        he_init_conv(&mut conv, &mut rng);
        let x = rand_tensor(&mut rng, 1 + case % 2, 7, 6, 2);
        let cases: Vec<(&str, Network, Tensor)> = vec![
            ("conv", Network { layers: vec![Layer::Conv(conv)] }, x),
            (
                "maxpool",
                Network {
                    layers: vec![Layer::MaxPool(MaxPool2d {
                        kh: 3,
                        kw: 3,
                        sh: 2,
                        sw: 2,
                        pad_v: PadMode::Valid,
                        pad_h: PadMode::Same,
                    })],
                },
                rand_separated_tensor(&mut rng, 1, 9, 7, 2, 0.02),
            ),
            ("relu", Network { layers: vec![Layer::Relu] }, rand_tensor(&mut rng, 2, 4, 5, 3)),
            (
                "sigmoid",
                Network { layers: vec![Layer::Sigmoid] },
                rand_tensor(&mut rng, 2, 3, 4, 2),
            ),
            {
                // redraw until every pre-activation clears the ReLU kink
                // by more than any probe perturbation can move it
                let (net, input) = loop {
                    let mut fire = Fire::new(3, 2, 3);
                    fire.init_he(&mut rng);
                    for conv in [&mut fire.squeeze, &mut fire.expand1, &mut fire.expand3] {
                        for b in &mut conv.bias {
                            *b = (uniform_unit(&mut rng) * 0.4 - 0.2) as f32;
                        }
                    }
                    let net = Network { layers: vec![Layer::Fire(fire)] };
                    let input = rand_tensor(&mut rng, 1, 8, 5, 3);
                    let params: Vec<Vec<f64>> = net
                        .param_slices()
                        .iter()
                        .map(|s| s.iter().map(|&v| f64::from(v)).collect())
                        .collect();
                    if min_relu_margin(&net.layers, &params, &F64Tensor::from_impl(&input)) > 6e-3 {
                        break (net, input);
                    }
                };
                ("fire", net, input)
            },
        ];
        for (label, net, input) in cases {
            let worst = gradcheck_network(&net, &input, &mut rng)?;
            if worst > TOL {
                return Err(format!(
                    "{label} case {case}: relative error {worst:.2e} exceeds {TOL:.0e}"
                ));
            }
            worst_overall = worst_overall.max(worst);
            configs += 1;
        }
    }

    // sigmoid'(0) = 1/4 pin
    {
        let net = Network { layers: vec![Layer::Sigmoid] };
        let x = Tensor::zeros(1, 1, 1, 1);
        let (_, caches) = net.forward_train(&x).map_err(|e| e.to_string())?;
        let gout = Tensor::from_vec(1, 1, 1, 1, vec![1.0]);
        let (_, gin) = net.backward(&caches, &gout).map_err(|e| e.to_string())?;
        if (gin.data()[0] - 0.25).abs() > 1e-6 {
            return Err(format!("sigmoid'(0) = {} instead of 0.25", gin.data()[0]));
        }
    }

    // contrastive loss, both branches (its arithmetic is f64 inside, so
    // finite differences run on the implementation directly)
    for case in 0..50usize {
        let d = 3 + case % 6;
        let spec = LossSpec {
            margin: [0.5, 1.0, 2.0][case % 3],
            convention: LabelConvention::PositivePulls,
        };
        let draw = |rng: &mut ChaCha8Rng| {
            (0..d).map(|_| (0.05 + 0.9 * uniform_unit(rng)) as f32).collect::<Vec<f32>>()
        };
        let (e_l, e_r) = loop {
            let (a, b) = (draw(&mut rng), draw(&mut rng));
            let dist = shredrec::projector::embedding_distance(&a, &b);
            if dist > 5e-3 && (f64::from(spec.margin) - dist).abs() > 5e-3 {
                break (a, b);
            }
        };
        for y in [0u8, 1] {
            let (_, gl, gr) =
                contrastive_single(&e_l, &e_r, y, &spec).map_err(|e| e.to_string())?;
            let h = 1e-3f64;
            for i in 0..d {
                for left_side in [true, false] {
                    let (vec, grad, other) =
                        if left_side { (&e_l, &gl, &e_r) } else { (&e_r, &gr, &e_l) };
                    let mut plus = vec.clone();
                    plus[i] += h as f32;
                    let mut minus = vec.clone();
                    minus[i] -= h as f32;
                    let loss_of = |v: &[f32]| -> Result<f64, String> {
                        let (l, _, _) = if left_side {
                            contrastive_single(v, other, y, &spec)
                        } else {
                            contrastive_single(other, v, y, &spec)
                        }
                        .map_err(|e| e.to_string())?;
                        Ok(l)
                    };
                    let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * h);
                    let denom = f64::from(grad[i].abs()).max(fd.abs()).max(1e-2);
                    let err = (f64::from(grad[i]) - fd).abs() / denom;
                    if err > TOL {
                        return Err(format!("loss gradient error {err:.2e} (case {case}, y={y})"));
                    }
                    worst_overall = worst_overall.max(err);
                }
            }
            configs += 1;
        }
    }
    Ok(format!("{configs} configurations, worst rel. err {worst_overall:.1e}"))
}

// ---------------------------------------------------------- criterion 2

fn c2_fullyconv(_: &mut Option<TrainedModel>) -> Result<String, String> {
    const TOL: f32 = 1e-4;
    let mut rng = rng_from_seed(0xC2);
    let mut worst = 0.0f32;
    for set in 0..20u64 {
        let pair = build_projector(4 + (set as usize % 3) * 2, 32, 32, derive_seed(0xC2C2, set))
            .map_err(|e| e.to_string())?;
        let h = 64 + 4 * (set as usize % 5);
        let mut strip = BinaryImage::new(32, h);
        for b in strip.bits.iter_mut() {
            *b = uniform_unit(&mut rng) < 0.5;
        }
        for (side, tag) in [(Side::Left, "left"), (Side::Right, "right")] {
            let emb = pair.embed_boundary(side, &strip, "t").map_err(|e| e.to_string())?;
            let expected_rows = h / 4 - 32 / 4 + 1;
            if emb.rows != expected_rows {
                return Err(format!("h' = {} but h/4 - s/4 + 1 = {expected_rows}", emb.rows));
            }
            for row in 0..emb.rows {
                let window = strip.crop(0, 4 * row, 32, 32);
                let sample = pair.embed_sample(side, &window).map_err(|e| e.to_string())?;
                for (a, b) in emb.row(row).iter().zip(&sample) {
                    let diff = (a - b).abs();
                    if diff >= TOL {
                        return Err(format!(
                            "weight set {set}, {tag} side, row {row}: abs diff {diff:.2e}"
                        ));
                    }
                    worst = worst.max(diff);
                }
            }
        }
    }
    Ok(format!("20 weight sets, worst abs diff {worst:.1e}"))
}

// ---------------------------------------------------------- criterion 3

fn c3_shift_oracle(_: &mut Option<TrainedModel>) -> Result<String, String> {
    let mut rng = rng_from_seed(0xC3);
    let mut make = |rows: usize, dim: usize, side| EmbeddingTensor {
        rows,
        dim,
        data: (0..rows * dim).map(|_| uniform_unit(&mut rng) as f32).collect(),
        side,
        shred_ref: "t".into(),
    };
    for case in 0..1000usize {
        let rows = 6 + case % 7;
        let dim = 2 + case % 5;
        let delta_max = case % 4;
        let distance = if case % 2 == 0 { DistanceForm::Squared } else { DistanceForm::Plain };
        let r = make(rows, dim, Side::Right);
        let l = make(rows, dim, Side::Left);
        let cfg = CompatConfig { delta_max, distance };
        let got = cost(&r, &l, &cfg).map_err(|e| e.to_string())?;

        // exhaustive scan over all 2 * delta_max + 1 alignments
        let n_rows = rows - delta_max;
        let mut best = f64::INFINITY;
        for delta in 0..=delta_max {
            for (r_off, l_off) in [(0usize, delta), (delta, 0usize)] {
                let mut acc = 0.0f64;
                for row in 0..n_rows {
                    for k in 0..dim {
                        let a = f64::from(r.data[(r_off + row) * dim + k]);
                        let b = f64::from(l.data[(l_off + row) * dim + k]);
                        acc += (a - b) * (a - b);
                    }
                }
                best = best.min(acc);
            }
        }
        let want = match distance {
            DistanceForm::Squared => best,
            DistanceForm::Plain => best.sqrt(),
        };
        if got != want {
            return Err(format!("case {case}: cost {got} != oracle {want}"));
        }

        // delta_max = 0 reduction: all three costs equal the plain
        // whole-tensor distance, bit for bit
        let cfg0 = CompatConfig { delta_max: 0, distance: DistanceForm::Plain };
        let c = cost(&r, &l, &cfg0).map_err(|e| e.to_string())?;
        let up = shredrec::compat::cost_up(&r, &l, &cfg0).map_err(|e| e.to_string())?;
        let down = shredrec::compat::cost_down(&r, &l, &cfg0).map_err(|e| e.to_string())?;
        let mut acc = 0.0f64;
        for (a, b) in r.data.iter().zip(&l.data) {
            let d = f64::from(*a) - f64::from(*b);
            acc += d * d;
        }
        let direct = acc.sqrt();
        if c != direct || up != direct || down != direct {
            return Err(format!("case {case}: delta=0 identity broken ({c} vs {direct})"));
        }
    }
    Ok("1000 random tensor pairs, exact equality".into())
}

// ---------------------------------------------------------- criterion 4

fn c4_solver(_: &mut Option<TrainedModel>) -> Result<String, String> {
    let mut rng = rng_from_seed(0xC4);
    let n = 9usize;
    for trial in 0..100usize {
        let values: Vec<f64> = (0..n * n)
            .map(|idx| if idx % (n + 1) == 0 { f64::INFINITY } else { uniform_unit(&mut rng) })
            .collect();
        let matrix = shredrec::compat::CostMatrix::from_values(n, values);
        let sol = solve_exact(&matrix, 20).map_err(|e| e.to_string())?;

        let mut best = f64::INFINITY;
        let mut perm: Vec<usize> = (0..n).collect();
        permute_all(&mut perm, 0, &mut |p| {
            let obj: f64 = p.windows(2).map(|w| matrix.at(w[0], w[1])).sum();
            if obj < best {
                best = obj;
            }
        });
        if sol.objective != best {
            return Err(format!("trial {trial}: exact {} != enumeration {best}", sol.objective));
        }
        let recomputed = objective(&matrix, &sol.order).map_err(|e| e.to_string())?;
        if recomputed != sol.objective {
            return Err(format!("trial {trial}: stored objective mismatch"));
        }
    }
    Ok("100 random 9-shred matrices, objective equality".into())
}

fn permute_all(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute_all(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

// ---------------------------------------------------------- criterion 5

fn c5_scaling(_: &mut Option<TrainedModel>) -> Result<String, String> {
    use rayon::prelude::*;
    let sizes = [60usize, 120, 240, 480];
    let strips = 30usize;
    let pair = build_projector(8, 32, 32, 0xC5).map_err(|e| e.to_string())?;
    let synth_cfg = SynthConfig::default();

    // the page pool is shredded up front; stages time embedding,
    // distance arithmetic and search only
    let pages_needed = sizes.iter().max().unwrap() / strips;
    let mut pool = Vec::new();
    for i in 0..pages_needed as u64 {
        let page = render_page(&synth_cfg, derive_seed(0xC5C5, i));
        pool.push(
            shred_page(&page, strips, &format!("p{i:02}"), SAUVOLA_WINDOW, SAUVOLA_K, SAUVOLA_R)
                .map_err(|e| e.to_string())?,
        );
    }

    let mut pro = Vec::new();
    let mut pw = Vec::new();
    for &n in &sizes {
        let mut shreds = Vec::with_capacity(n);
        for page in pool.iter().take(n / strips) {
            shreds.extend(page.iter().cloned());
        }
        let instance = permute_instance(&ReconstructionInstance::new(shreds), n as u64);
        let mut timer = StageTimer::new();
        pair.reset_inference_count();

        let h = instance.common_boundary_height();
        let embeddings: Vec<ShredEmbeddings> = timer
            .scope(Stage::Projection, || -> Result<_, String> {
                instance
                    .shreds
                    .par_iter()
                    .map(|s| {
                        let right = boundary_crop(s, BoundarySide::Right, 32, h)
                            .map_err(|e| e.to_string())?;
                        let left = boundary_crop(s, BoundarySide::Left, 32, h)
                            .map_err(|e| e.to_string())?;
                        Ok(ShredEmbeddings {
                            right: pair
                                .embed_boundary(Side::Right, &right, &s.key())
                                .map_err(|e| e.to_string())?,
                            left: pair
                                .embed_boundary(Side::Left, &left, &s.key())
                                .map_err(|e| e.to_string())?,
                        })
                    })
                    .collect()
            })
            .map_err(|e| e.to_string())??;

        let counted = pair.count_inferences().total();
        if counted != 2 * n as u64 {
            return Err(format!("n={n}: inference counter {counted} != 2n = {}", 2 * n));
        }

        let matrix = timer
            .scope(Stage::Pairwise, || build_cost_matrix(&embeddings, &CompatConfig::default()))
            .map_err(|e| e.to_string())?
            .map_err(|e| e.to_string())?;
        if pair.count_inferences().total() != counted {
            return Err(format!("n={n}: pairwise stage ran network inference"));
        }
        timer
            .scope(Stage::Optimization, || solve_heuristic(&matrix, 5, 4))
            .map_err(|e| e.to_string())?
            .map_err(|e| e.to_string())?;

        let t = timer.timings();
        println!(
            "  [c5] n={n}: pro={:.2}s pw={:.3}s opt={:.2}s inferences={counted}",
            t.pro_s, t.pw_s, t.opt_s
        );
        pro.push(t.pro_s);
        pw.push(t.pw_s);
    }
    let pro_exp = log_log_slope(&sizes, &pro);
    let pw_exp = log_log_slope(&sizes, &pw);
    if (pro_exp - 1.0).abs() > 0.4 {
        return Err(format!("projection exponent {pro_exp:.2} outside 1.0 +/- 0.4"));
    }
    if (pw_exp - 2.0).abs() > 0.4 {
        return Err(format!("pairwise exponent {pw_exp:.2} outside 2.0 +/- 0.4"));
    }
    Ok(format!(
        "counter = 2n at every size; exponents: projection {pro_exp:.2}, pairwise {pw_exp:.2}"
    ))
}

// ------------------------------------------------- criteria 6 and 7

const E2E_SEED: u64 = 424242;

/// Trains the small-dimension model on 30 synthetic pages and keeps 5
/// held-out pages for evaluation (criteria 6 and 7 share it).
fn train_desk_scale() -> Result<TrainedModel, String> {
    let synth_cfg = SynthConfig::default();
    let extract_cfg = ExtractConfig { max_pos: 700, noise_p: 0.0, ..Default::default() };
    let mut dataset = SampleDataset::new(32, 32);
    for i in 0..30u64 {
        let page = render_page(&synth_cfg, derive_seed(E2E_SEED, i));
        let shreds =
            shred_page(&page, 30, &format!("train{i:02}"), SAUVOLA_WINDOW, SAUVOLA_K, SAUVOLA_R)
                .map_err(|e| e.to_string())?;
        dataset.pairs.extend(
            extract_pairs(&shreds, &extract_cfg, derive_seed(E2E_SEED + 1, i))
                .map_err(|e| e.to_string())?,
        );
    }
    let (train_set, val_set) =
        shredrec::sampling::split_train_val(&dataset, 4, E2E_SEED).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 20,
        lr: 0.1,
        batch: 64,
        margin: 2.0,
        seed: E2E_SEED,
        d: 8,
        s_y: 32,
        s_x: 32,
        label_convention: "intent".into(),
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (pair, records) = train(&train_set, &val_set, &cfg, dir.path()).map_err(|e| e.to_string())?;
    let best = best_record(&records).ok_or("no epoch records")?;
    println!(
        "  [c6] trained on {} pairs; best epoch {} (SMD {:.3})",
        train_set.len(),
        best.epoch,
        best.smd
    );

    let mut held_out = Vec::new();
    for i in 100..105u64 {
        let page = render_page(&synth_cfg, derive_seed(E2E_SEED, i));
        held_out.push(
            shred_page(&page, 30, &format!("held{i}"), SAUVOLA_WINDOW, SAUVOLA_K, SAUVOLA_R)
                .map_err(|e| e.to_string())?,
        );
    }
    Ok(TrainedModel { pair, held_out })
}

fn reconstruct(
    pair: &ProjectorPair,
    instance: &ReconstructionInstance,
) -> Result<shredrec::solver::Solution, String> {
    use rayon::prelude::*;
    let h = instance.common_boundary_height();
    let embeddings: Result<Vec<ShredEmbeddings>, String> = instance
        .shreds
        .par_iter()
        .map(|s| {
            let right = boundary_crop(s, BoundarySide::Right, 32, h).map_err(|e| e.to_string())?;
            let left = boundary_crop(s, BoundarySide::Left, 32, h).map_err(|e| e.to_string())?;
            Ok(ShredEmbeddings {
                right: pair
                    .embed_boundary(Side::Right, &right, &s.key())
                    .map_err(|e| e.to_string())?,
                left: pair
                    .embed_boundary(Side::Left, &left, &s.key())
                    .map_err(|e| e.to_string())?,
            })
        })
        .collect();
    let matrix =
        build_cost_matrix(&embeddings?, &CompatConfig::default()).map_err(|e| e.to_string())?;
    solve_heuristic(&matrix, E2E_SEED, 32).map_err(|e| e.to_string())
}

fn c6_end_to_end(shared: &mut Option<TrainedModel>) -> Result<String, String> {
    let model = train_desk_scale()?;
    let mut accs = Vec::new();
    for (i, shreds) in model.held_out.iter().enumerate() {
        let instance = permute_instance(
            &ReconstructionInstance::new(shreds.clone()),
            E2E_SEED + 100 + i as u64,
        );
        let sol = reconstruct(&model.pair, &instance)?;
        let acc = accuracy(&sol, &instance, false).map_err(|e| e.to_string())?;
        println!("  [c6] held-out page {i}: strict accuracy {acc:.4}");
        accs.push(acc);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    *shared = Some(model);
    if mean < 0.90 {
        return Err(format!("mean strict accuracy {mean:.4} below 0.90"));
    }
    Ok(format!("mean strict accuracy {mean:.4} over 5 held-out pages"))
}

fn c7_multi_page(shared: &mut Option<TrainedModel>) -> Result<String, String> {
    if shared.is_none() {
        *shared = Some(train_desk_scale()?);
    }
    let model = shared.as_ref().unwrap();
    let mut shreds = Vec::new();
    for page in &model.held_out {
        shreds.extend(page.iter().cloned());
    }
    let instance = permute_instance(&ReconstructionInstance::new(shreds), E2E_SEED + 1000);
    let sol = reconstruct(&model.pair, &instance)?;
    let strict = accuracy(&sol, &instance, false).map_err(|e| e.to_string())?;
    let relaxed = accuracy(&sol, &instance, true).map_err(|e| e.to_string())?;
    if relaxed < strict {
        return Err(format!("relaxed {relaxed:.4} below strict {strict:.4}"));
    }
    if relaxed < 0.90 {
        return Err(format!("relaxed accuracy {relaxed:.4} below 0.90"));
    }
    Ok(format!("150 mixed shreds: relaxed {relaxed:.4} >= strict {strict:.4}"))
}

// ---------------------------------------------------------- criterion 8

fn c8_smd_selection(_: &mut Option<TrainedModel>) -> Result<String, String> {
    // two separable pattern families: stripes that continue across the
    // seam (positive) vs stripes that jump phase (negative)
    let mut dataset = SampleDataset::new(32, 32);
    for doc in 0..4usize {
        for i in 0..6usize {
            let phase = (doc * 6 + i) % 8;
            let stripe = |offset: usize| {
                let mut img = BinaryImage::new(32, 32);
                for y in 0..32 {
                    if (y + offset) % 8 < 3 {
                        for x in 0..32 {
                            img.set(x, y, true);
                        }
                    }
                }
                img
            };
            dataset.pairs.push(SamplePair {
                x_r: stripe(phase),
                x_l: stripe(phase),
                y: 1,
                source_doc: format!("doc{doc}"),
            });
            dataset.pairs.push(SamplePair {
                x_r: stripe(phase),
                x_l: stripe(phase + 4),
                y: 0,
                source_doc: format!("doc{doc}"),
            });
        }
    }
    let cfg = TrainConfig {
        epochs: 8,
        lr: 0.1,
        batch: 16,
        margin: 1.0,
        seed: 3,
        d: 8,
        s_y: 32,
        s_x: 32,
        label_convention: "intent".into(),
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (best_pair, records) =
        train(&dataset, &dataset, &cfg, dir.path()).map_err(|e| e.to_string())?;
    let best = best_record(&records).ok_or("no records")?;
    let epoch0 = &records[0];
    if epoch0.epoch != 0 {
        return Err("missing untrained epoch-0 record".into());
    }
    if best.smd <= epoch0.smd {
        return Err(format!(
            "best SMD {:.4} does not exceed epoch-0 SMD {:.4}",
            best.smd, epoch0.smd
        ));
    }
    let max = records.iter().map(|r| r.smd).fold(f64::NEG_INFINITY, f64::max);
    if best.smd != max {
        return Err(format!("selected SMD {:.4} is not the maximum {:.4}", best.smd, max));
    }
    // the returned weights really are that epoch's checkpoint
    let (pos, neg) = validate_distances(&best_pair, &dataset).map_err(|e| e.to_string())?;
    let recomputed = smd(&pos, &neg).map_err(|e| e.to_string())?;
    if (recomputed - best.smd).abs() > 1e-9 {
        return Err(format!(
            "returned checkpoint SMD {recomputed:.6} != recorded {:.6}",
            best.smd
        ));
    }
    Ok(format!("best epoch {} SMD {:.3} > init {:.3}", best.epoch, best.smd, epoch0.smd))
}

// ---------------------------------------------------------- criterion 9

/// ln Gamma via the Lanczos approximation, independent of the beta
/// function the implementation uses.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Two-sided p-value by Simpson quadrature of the t density over
/// [0, |t|]: p = 1 - 2 * integral.
fn t_test_quadrature(t: f64, dof: f64) -> f64 {
    let norm = (ln_gamma((dof + 1.0) / 2.0)
        - ln_gamma(dof / 2.0)
        - 0.5 * (dof * std::f64::consts::PI).ln())
    .exp();
    let pdf = |x: f64| norm * (1.0 + x * x / dof).powf(-(dof + 1.0) / 2.0);
    let b = t.abs();
    let n = 40_000usize;
    let h = b / n as f64;
    let mut acc = pdf(0.0) + pdf(b);
    for i in 1..n {
        acc += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 * (acc * h / 3.0)
}

fn c9_t_test(_: &mut Option<TrainedModel>) -> Result<String, String> {
    let mut rng = rng_from_seed(0xC9);
    let mut worst = 0.0f64;
    for case in 0..50usize {
        let n = 4 + case % 20;
        let a: Vec<f64> = (0..n).map(|_| uniform_unit(&mut rng)).collect();
        let b: Vec<f64> =
            a.iter().map(|v| v + 0.2 * (uniform_unit(&mut rng) - 0.4)).collect();
        let p = paired_t_test(&a, &b).map_err(|e| e.to_string())?;

        // recompute the statistic independently for the oracle
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var =
            diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
        let t = mean / (var / n as f64).sqrt();
        let want = t_test_quadrature(t, n as f64 - 1.0);
        let err = (p - want).abs();
        if err >= 1e-6 {
            return Err(format!(
                "case {case}: p {p:.9} vs quadrature {want:.9} (|diff| {err:.2e})"
            ));
        }
        worst = worst.max(err);
    }
    Ok(format!("50 random paired vectors, worst |dp| {worst:.1e}"))
}

// --------------------------------------------------------- criterion 10

fn c10_determinism(_: &mut Option<TrainedModel>) -> Result<String, String> {
    let bin = env!("CARGO_BIN_EXE_shredrec");
    let run_pipeline = |root: &Path| -> Result<(), String> {
        let sh = |args: &[&str]| -> Result<(), String> {
            let out = Command::new(bin)
                .args(args)
                .current_dir(root)
                .output()
                .map_err(|e| e.to_string())?;
            if !out.status.success() {
                return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
            }
            Ok(())
        };
        sh(&[
            "synth", "--count", "3", "--seed", "7", "--width", "620", "--height", "500",
            "--margin", "16", "--out-dir", "corpus",
        ])?;
        sh(&[
            "extract", "corpus/page0000.png", "corpus/page0001.png", "corpus/page0002.png",
            "--out", "pairs.shrd", "--strips", "4", "--max-pos", "60", "--seed", "11",
        ])?;
        sh(&[
            "train", "--dataset", "pairs.shrd", "--out-dir", "run", "--epochs", "2", "--d", "8",
            "--batch", "32", "--val-docs", "1", "--seed", "2",
        ])?;
        sh(&[
            "reconstruct", "corpus/page0000.png", "--model", "run/best.shrw", "--strips", "4",
            "--permute-seed", "3", "--no-timings", "--out", "report.json", "--export-costs",
            "costs.csv", "--seed", "5",
        ])?;
        Ok(())
    };

    let dir_a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir_b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(dir_a.path())?;
    run_pipeline(dir_b.path())?;

    let files = [
        "corpus/page0000.png",
        "corpus/page0001.png",
        "corpus/page0002.png",
        "pairs.shrd",
        "run/epoch_000.shrw",
        "run/epoch_001.shrw",
        "run/epoch_002.shrw",
        "run/best.shrw",
        "run/log.csv",
        "costs.csv",
        "report.json",
    ];
    for rel in files {
        let a = std::fs::read(dir_a.path().join(rel)).map_err(|e| format!("{rel}: {e}"))?;
        let b = std::fs::read(dir_b.path().join(rel)).map_err(|e| format!("{rel}: {e}"))?;
        if a != b {
            return Err(format!("{rel} differs between runs"));
        }
    }
    Ok(format!(
        "{} artifacts byte-identical across two pipeline runs (pages, dataset, checkpoints, log, cost matrix, report)",
        files.len()
    ))
}
