//! Layer kernels and the sequential network container.
//!
//! Convolutions run as im2col + single-threaded sgemm. Padding is
//! selectable per axis: the projection networks use valid padding
//! vertically and same padding horizontally, which is what makes one
//! fully-convolutional pass over a tall boundary strip equal, row for
//! row, to independent inference on stride-4 windows.

use super::{Tensor, TensorError};
use crate::rng::uniform_unit;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Valid,
    Same,
}

impl PadMode {
    /// (output extent, padding before the origin) for one axis.
    /// Same-padding follows the ceil(in/stride) rule with the surplus
    /// pad cell placed after the data.
    fn geometry(self, input: usize, kernel: usize, stride: usize) -> (usize, usize) {
        match self {
            PadMode::Valid => {
                assert!(input >= kernel, "valid padding needs input >= kernel");
                ((input - kernel) / stride + 1, 0)
            }
            PadMode::Same => {
                let out = input.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(input);
                (out, total / 2)
            }
        }
    }

    fn tag(self) -> char {
        match self {
            PadMode::Valid => 'V',
            PadMode::Same => 'S',
        }
    }
}

/// 2-D cross-correlation with bias. Weight layout `[kh][kw][in][out]`,
/// flattened so the gemm reads it as a (kh*kw*in) x out matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_v: PadMode,
    pub pad_h: PadMode,
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(
        kh: usize,
        kw: usize,
        sh: usize,
        sw: usize,
        pad_v: PadMode,
        pad_h: PadMode,
        in_ch: usize,
        out_ch: usize,
    ) -> Self {
        assert!(kh > 0 && kw > 0 && sh > 0 && sw > 0);
        Conv2d {
            kh,
            kw,
            sh,
            sw,
            pad_v,
            pad_h,
            in_ch,
            out_ch,
            weight: vec![0.0; kh * kw * in_ch * out_ch],
            bias: vec![0.0; out_ch],
        }
    }

    /// He-uniform fan-in init: U(-sqrt(6/fan_in), sqrt(6/fan_in)),
    /// drawn in weight memory order; biases zero.
    pub fn init_he(&mut self, rng: &mut ChaCha8Rng) {
        let fan_in = (self.kh * self.kw * self.in_ch) as f64;
        let limit = (6.0 / fan_in).sqrt();
        for w in &mut self.weight {
            *w = ((uniform_unit(rng) * 2.0 - 1.0) * limit) as f32;
        }
        self.bias.fill(0.0);
    }

    pub fn out_shape(&self, input: [usize; 4]) -> Result<[usize; 4], TensorError> {
        let [n, h, w, c] = input;
        if c != self.in_ch {
            return Err(TensorError::ShapeMismatch {
                expected: format!("{} input channels", self.in_ch),
                got: format!("{c}"),
            });
        }
        if self.pad_v == PadMode::Valid && h < self.kh {
            return Err(TensorError::BadGeometry(format!(
                "input height {h} below kernel height {}",
                self.kh
            )));
        }
        if self.pad_h == PadMode::Valid && w < self.kw {
            return Err(TensorError::BadGeometry(format!(
                "input width {w} below kernel width {}",
                self.kw
            )));
        }
        let (oh, _) = self.pad_v.geometry(h, self.kh, self.sh);
        let (ow, _) = self.pad_h.geometry(w, self.kw, self.sw);
        Ok([n, oh, ow, self.out_ch])
    }

    fn im2col(&self, x: &Tensor, oh: usize, ow: usize) -> Vec<f32> {
        let [n, h, w, c] = x.shape();
        let (_, pad_top) = self.pad_v.geometry(h, self.kh, self.sh);
        let (_, pad_left) = self.pad_h.geometry(w, self.kw, self.sw);
        let k = self.kh * self.kw * c;
        let cols = n * oh * ow;
        let mut col = vec![0.0f32; k * cols];
        let xd = x.data();
        for ky in 0..self.kh {
            for kx in 0..self.kw {
                for ci in 0..c {
                    let row = (ky * self.kw + kx) * c + ci;
                    let out_row = &mut col[row * cols..(row + 1) * cols];
                    let mut j = 0;
                    for b in 0..n {
                        for oy in 0..oh {
                            let iy = (oy * self.sh + ky) as isize - pad_top as isize;
                            if iy < 0 || iy >= h as isize {
                                j += ow;
                                continue;
                            }
                            let base = ((b * h + iy as usize) * w) * c + ci;
                            for ox in 0..ow {
                                let ix = (ox * self.sw + kx) as isize - pad_left as isize;
                                if ix >= 0 && ix < w as isize {
                                    out_row[j] = xd[base + ix as usize * c];
                                }
                                j += 1;
                            }
                        }
                    }
                }
            }
        }
        col
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let [n, oh, ow, _] = self.out_shape(x.shape())?;
        let col = self.im2col(x, oh, ow);
        let out = self.gemm_forward(&col, n, oh, ow);
        out.check_finite("conv2d")?;
        Ok(out)
    }

    fn gemm_forward(&self, col: &[f32], n: usize, oh: usize, ow: usize) -> Tensor {
        let k = self.kh * self.kw * self.in_ch;
        let cols = n * oh * ow;
        let mut out = Tensor::zeros(n, oh, ow, self.out_ch);
        // out[pos][oc] = sum_k weight[k][oc] * col[k][pos]
        unsafe {
            matrixmultiply::sgemm(
                self.out_ch,
                k,
                cols,
                1.0,
                self.weight.as_ptr(),
                1,
                self.out_ch as isize,
                col.as_ptr(),
                cols as isize,
                1,
                0.0,
                out.data_mut().as_mut_ptr(),
                1,
                self.out_ch as isize,
            );
        }
        let od = out.data_mut();
        for pos in 0..cols {
            let row = &mut od[pos * self.out_ch..(pos + 1) * self.out_ch];
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        out
    }

    /// Gradients w.r.t. input, weight and bias given the stored input.
    pub fn backward(
        &self,
        input: &Tensor,
        gout: &Tensor,
    ) -> Result<(Tensor, Vec<f32>, Vec<f32>), TensorError> {
        let [n, oh, ow, oc] = self.out_shape(input.shape())?;
        debug_assert_eq!(gout.shape(), [n, oh, ow, oc]);
        let [_, h, w, c] = input.shape();
        let k = self.kh * self.kw * c;
        let cols = n * oh * ow;
        let col = self.im2col(input, oh, ow);
        let gd = gout.data();

        let mut gbias = vec![0.0f32; oc];
        for ch in 0..oc {
            let mut acc = 0.0f64;
            for pos in 0..cols {
                acc += f64::from(gd[pos * oc + ch]);
            }
            gbias[ch] = acc as f32;
        }

        let mut gweight = vec![0.0f32; k * oc];
        // gweight[k][oc] = sum_pos col[k][pos] * gout[pos][oc]
        unsafe {
            matrixmultiply::sgemm(
                k,
                cols,
                oc,
                1.0,
                col.as_ptr(),
                cols as isize,
                1,
                gd.as_ptr(),
                oc as isize,
                1,
                0.0,
                gweight.as_mut_ptr(),
                oc as isize,
                1,
            );
        }

        // gcol[k][pos] = sum_oc weight[k][oc] * gout[pos][oc]
        let mut gcol = vec![0.0f32; k * cols];
        unsafe {
            matrixmultiply::sgemm(
                k,
                oc,
                cols,
                1.0,
                self.weight.as_ptr(),
                self.out_ch as isize,
                1,
                gd.as_ptr(),
                1,
                oc as isize,
                0.0,
                gcol.as_mut_ptr(),
                cols as isize,
                1,
            );
        }

        let (_, pad_top) = self.pad_v.geometry(h, self.kh, self.sh);
        let (_, pad_left) = self.pad_h.geometry(w, self.kw, self.sw);
        let mut gin = Tensor::zeros(n, h, w, c);
        let gid = gin.data_mut();
        for ky in 0..self.kh {
            for kx in 0..self.kw {
                for ci in 0..c {
                    let row = (ky * self.kw + kx) * c + ci;
                    let grow = &gcol[row * cols..(row + 1) * cols];
                    let mut j = 0;
                    for b in 0..n {
                        for oy in 0..oh {
                            let iy = (oy * self.sh + ky) as isize - pad_top as isize;
                            if iy < 0 || iy >= h as isize {
                                j += ow;
                                continue;
                            }
                            let base = ((b * h + iy as usize) * w) * c + ci;
                            for ox in 0..ow {
                                let ix = (ox * self.sw + kx) as isize - pad_left as isize;
                                if ix >= 0 && ix < w as isize {
                                    gid[base + ix as usize * c] += grow[j];
                                }
                                j += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok((gin, gweight, gbias))
    }

    fn spec_string(&self) -> String {
        format!(
            "conv{}x{}s{}x{}p{}{}c{}>{}",
            self.kh,
            self.kw,
            self.sh,
            self.sw,
            self.pad_v.tag(),
            self.pad_h.tag(),
            self.in_ch,
            self.out_ch
        )
    }
}

/// Window max with -inf semantics for padded cells. Arg-max ties break
/// toward the first cell in (ky, kx) scan order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool2d {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_v: PadMode,
    pub pad_h: PadMode,
}

impl MaxPool2d {
    pub fn out_shape(&self, input: [usize; 4]) -> Result<[usize; 4], TensorError> {
        let [n, h, w, c] = input;
        if self.pad_v == PadMode::Valid && h < self.kh {
            return Err(TensorError::BadGeometry(format!(
                "input height {h} below pool height {}",
                self.kh
            )));
        }
        if self.pad_h == PadMode::Valid && w < self.kw {
            return Err(TensorError::BadGeometry(format!(
                "input width {w} below pool width {}",
                self.kw
            )));
        }
        let (oh, _) = self.pad_v.geometry(h, self.kh, self.sh);
        let (ow, _) = self.pad_h.geometry(w, self.kw, self.sw);
        Ok([n, oh, ow, c])
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>), TensorError> {
        let [n, oh, ow, c] = self.out_shape(x.shape())?;
        let [_, h, w, _] = x.shape();
        let (_, pad_top) = self.pad_v.geometry(h, self.kh, self.sh);
        let (_, pad_left) = self.pad_h.geometry(w, self.kw, self.sw);
        let mut out = Tensor::zeros(n, oh, ow, c);
        let mut argmax = vec![usize::MAX; out.len()];
        let xd = x.data();
        let od = out.data_mut();
        for b in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..c {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for ky in 0..self.kh {
                            let iy = (oy * self.sh + ky) as isize - pad_top as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kw {
                                let ix = (ox * self.sw + kx) as isize - pad_left as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let idx = ((b * h + iy as usize) * w + ix as usize) * c + ch;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = ((b * oh + oy) * ow + ox) * c + ch;
                        od[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn backward(&self, in_shape: [usize; 4], argmax: &[usize], gout: &Tensor) -> Tensor {
        let [n, h, w, c] = in_shape;
        let mut gin = Tensor::zeros(n, h, w, c);
        let gid = gin.data_mut();
        for (g, &idx) in gout.data().iter().zip(argmax) {
            if idx != usize::MAX {
                gid[idx] += g;
            }
        }
        gin
    }

    fn spec_string(&self) -> String {
        format!(
            "maxpool{}x{}s{}x{}p{}{}",
            self.kh,
            self.kw,
            self.sh,
            self.sw,
            self.pad_v.tag(),
            self.pad_h.tag()
        )
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

fn relu_backward(output: &Tensor, gout: &Tensor) -> Tensor {
    let mut gin = gout.clone();
    for (g, &y) in gin.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    gin
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    out
}

fn sigmoid_backward(output: &Tensor, gout: &Tensor) -> Tensor {
    let mut gin = gout.clone();
    for (g, &y) in gin.data_mut().iter_mut().zip(output.data()) {
        *g *= y * (1.0 - y);
    }
    gin
}

/// Drops `top` rows from the start and `bottom` from the end.
pub fn crop_rows(x: &Tensor, top: usize, bottom: usize) -> Tensor {
    let [n, h, w, c] = x.shape();
    assert!(top + bottom < h, "crop larger than tensor");
    let nh = h - top - bottom;
    let mut out = Tensor::zeros(n, nh, w, c);
    let row = w * c;
    for b in 0..n {
        let src = &x.data()[(b * h + top) * row..(b * h + top + nh) * row];
        out.data_mut()[b * nh * row..(b + 1) * nh * row].copy_from_slice(src);
    }
    out
}

fn crop_rows_backward(in_shape: [usize; 4], top: usize, gout: &Tensor) -> Tensor {
    let [n, h, w, c] = in_shape;
    let [_, gh, _, _] = gout.shape();
    let mut gin = Tensor::zeros(n, h, w, c);
    let row = w * c;
    for b in 0..n {
        let dst = &mut gin.data_mut()[(b * h + top) * row..(b * h + top + gh) * row];
        dst.copy_from_slice(&gout.data()[b * gh * row..(b + 1) * gh * row]);
    }
    gin
}

/// Channel-wise concatenation of two tensors with equal spatial shape.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let [n, h, w, ca] = a.shape();
    let [nb, hb, wb, cb] = b.shape();
    assert_eq!([n, h, w], [nb, hb, wb], "concat spatial mismatch");
    let mut out = Tensor::zeros(n, h, w, ca + cb);
    let positions = n * h * w;
    let (ad, bd, od) = (a.data(), b.data(), out.data_mut());
    for p in 0..positions {
        od[p * (ca + cb)..p * (ca + cb) + ca].copy_from_slice(&ad[p * ca..(p + 1) * ca]);
        od[p * (ca + cb) + ca..(p + 1) * (ca + cb)].copy_from_slice(&bd[p * cb..(p + 1) * cb]);
    }
    out
}

fn split_channels(g: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let [n, h, w, c] = g.shape();
    let cb = c - ca;
    let mut ga = Tensor::zeros(n, h, w, ca);
    let mut gb = Tensor::zeros(n, h, w, cb);
    let positions = n * h * w;
    for p in 0..positions {
        ga.data_mut()[p * ca..(p + 1) * ca].copy_from_slice(&g.data()[p * c..p * c + ca]);
        gb.data_mut()[p * cb..(p + 1) * cb].copy_from_slice(&g.data()[p * c + ca..(p + 1) * c]);
    }
    (ga, gb)
}

/// SqueezeNet-style fire block: 1x1 squeeze, then parallel 1x1 and 3x3
/// expands concatenated on channels. The 3x3 expand runs valid
/// vertically, so the 1x1 branch is row-cropped by one on each side to
/// keep the branches aligned before concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct Fire {
    pub squeeze: Conv2d,
    pub expand1: Conv2d,
    pub expand3: Conv2d,
}

#[derive(Debug, Clone)]
pub struct FireCache {
    input: Tensor,
    squeezed: Tensor,
    cropped: Tensor,
    out1: Tensor,
    out3: Tensor,
}

impl Fire {
    pub fn new(in_ch: usize, squeeze_ch: usize, expand_ch: usize) -> Self {
        Fire {
            squeeze: Conv2d::new(1, 1, 1, 1, PadMode::Valid, PadMode::Valid, in_ch, squeeze_ch),
            expand1: Conv2d::new(1, 1, 1, 1, PadMode::Valid, PadMode::Valid, squeeze_ch, expand_ch),
            expand3: Conv2d::new(3, 3, 1, 1, PadMode::Valid, PadMode::Same, squeeze_ch, expand_ch),
        }
    }

    pub fn init_he(&mut self, rng: &mut ChaCha8Rng) {
        self.squeeze.init_he(rng);
        self.expand1.init_he(rng);
        self.expand3.init_he(rng);
    }

    pub fn out_shape(&self, input: [usize; 4]) -> Result<[usize; 4], TensorError> {
        let s = self.squeeze.out_shape(input)?;
        let e3 = self.expand3.out_shape(s)?;
        Ok([e3[0], e3[1], e3[2], self.expand1.out_ch + self.expand3.out_ch])
    }

    fn run(&self, x: &Tensor) -> Result<(Tensor, FireCache), TensorError> {
        let squeezed = relu(&self.squeeze.forward(x)?);
        let cropped = crop_rows(&squeezed, 1, 1);
        let out1 = relu(&self.expand1.forward(&cropped)?);
        let out3 = relu(&self.expand3.forward(&squeezed)?);
        let out = concat_channels(&out1, &out3);
        let cache = FireCache {
            input: x.clone(),
            squeezed,
            cropped,
            out1,
            out3,
        };
        Ok((out, cache))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        Ok(self.run(x)?.0)
    }

    fn backward(
        &self,
        cache: &FireCache,
        gout: &Tensor,
    ) -> Result<(Tensor, FireGrads), TensorError> {
        let (g1, g3) = split_channels(gout, self.expand1.out_ch);
        let g1 = relu_backward(&cache.out1, &g1);
        let g3 = relu_backward(&cache.out3, &g3);
        let (g_cropped, gw1, gb1) = self.expand1.backward(&cache.cropped, &g1)?;
        let (g_sq3, gw3, gb3) = self.expand3.backward(&cache.squeezed, &g3)?;
        let mut g_squeezed = crop_rows_backward(cache.squeezed.shape(), 1, &g_cropped);
        for (a, b) in g_squeezed.data_mut().iter_mut().zip(g_sq3.data()) {
            *a += b;
        }
        let g_squeezed = relu_backward(&cache.squeezed, &g_squeezed);
        let (gin, gws, gbs) = self.squeeze.backward(&cache.input, &g_squeezed)?;
        Ok((
            gin,
            FireGrads {
                squeeze: (gws, gbs),
                expand1: (gw1, gb1),
                expand3: (gw3, gb3),
            },
        ))
    }

    fn spec_string(&self) -> String {
        format!(
            "fire[{};{};{}]",
            self.squeeze.spec_string(),
            self.expand1.spec_string(),
            self.expand3.spec_string()
        )
    }
}

#[derive(Debug, Clone)]
pub struct FireGrads {
    pub squeeze: (Vec<f32>, Vec<f32>),
    pub expand1: (Vec<f32>, Vec<f32>),
    pub expand3: (Vec<f32>, Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    MaxPool(MaxPool2d),
    Relu,
    Sigmoid,
    Fire(Fire),
}

#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv { input: Tensor },
    MaxPool { in_shape: [usize; 4], argmax: Vec<usize> },
    Relu { output: Tensor },
    Sigmoid { output: Tensor },
    Fire(FireCache),
}

/// Per-layer parameter gradients, shape-congruent with the layer's
/// parameters. Parameter-free layers carry `None`.
#[derive(Debug, Clone)]
pub enum LayerGrads {
    Conv { weight: Vec<f32>, bias: Vec<f32> },
    Fire(FireGrads),
    None,
}

pub type NetworkGrads = Vec<LayerGrads>;

/// A straight-line stack of layers; the only network shape the
/// projection models need.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn out_shape(&self, mut shape: [usize; 4]) -> Result<[usize; 4], TensorError> {
        for layer in &self.layers {
            shape = match layer {
                Layer::Conv(c) => c.out_shape(shape)?,
                Layer::MaxPool(p) => p.out_shape(shape)?,
                Layer::Relu | Layer::Sigmoid => shape,
                Layer::Fire(f) => f.out_shape(shape)?,
            };
        }
        Ok(shape)
    }

    /// Forward pass without caches, for frozen-weight inference.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = match layer {
                Layer::Conv(c) => c.forward(&cur)?,
                Layer::MaxPool(p) => p.forward(&cur)?.0,
                Layer::Relu => relu(&cur),
                Layer::Sigmoid => sigmoid(&cur),
                Layer::Fire(f) => f.forward(&cur)?,
            };
        }
        Ok(cur)
    }

    /// Forward pass recording what each layer needs for backward.
    pub fn forward_train(&self, x: &Tensor) -> Result<(Tensor, Vec<LayerCache>), TensorError> {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    let out = c.forward(&cur)?;
                    caches.push(LayerCache::Conv { input: cur });
                    cur = out;
                }
                Layer::MaxPool(p) => {
                    let (out, argmax) = p.forward(&cur)?;
                    caches.push(LayerCache::MaxPool { in_shape: cur.shape(), argmax });
                    cur = out;
                }
                Layer::Relu => {
                    cur = relu(&cur);
                    caches.push(LayerCache::Relu { output: cur.clone() });
                }
                Layer::Sigmoid => {
                    cur = sigmoid(&cur);
                    caches.push(LayerCache::Sigmoid { output: cur.clone() });
                }
                Layer::Fire(f) => {
                    let (out, cache) = f.run(&cur)?;
                    caches.push(LayerCache::Fire(cache));
                    cur = out;
                }
            }
        }
        Ok((cur, caches))
    }

    /// Reverse-mode sweep; returns parameter gradients per layer and the
    /// gradient w.r.t. the network input.
    pub fn backward(
        &self,
        caches: &[LayerCache],
        gout: &Tensor,
    ) -> Result<(NetworkGrads, Tensor), TensorError> {
        assert_eq!(caches.len(), self.layers.len(), "backward before forward");
        let mut grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        let mut g = gout.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            match (layer, cache) {
                (Layer::Conv(c), LayerCache::Conv { input }) => {
                    let (gin, gw, gb) = c.backward(input, &g)?;
                    grads.push(LayerGrads::Conv { weight: gw, bias: gb });
                    g = gin;
                }
                (Layer::MaxPool(p), LayerCache::MaxPool { in_shape, argmax }) => {
                    g = p.backward(*in_shape, argmax, &g);
                    grads.push(LayerGrads::None);
                }
                (Layer::Relu, LayerCache::Relu { output }) => {
                    g = relu_backward(output, &g);
                    grads.push(LayerGrads::None);
                }
                (Layer::Sigmoid, LayerCache::Sigmoid { output }) => {
                    g = sigmoid_backward(output, &g);
                    grads.push(LayerGrads::None);
                }
                (Layer::Fire(f), LayerCache::Fire(cache)) => {
                    let (gin, fg) = f.backward(cache, &g)?;
                    grads.push(LayerGrads::Fire(fg));
                    g = gin;
                }
                _ => unreachable!("cache kind mismatch"),
            }
        }
        grads.reverse();
        Ok((grads, g))
    }

    /// Parameter slices in declaration order (weights then bias per conv).
    pub fn param_slices(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(c.weight.as_slice());
                    out.push(c.bias.as_slice());
                }
                Layer::Fire(f) => {
                    for c in [&f.squeeze, &f.expand1, &f.expand3] {
                        out.push(c.weight.as_slice());
                        out.push(c.bias.as_slice());
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    out.push(c.weight.as_mut_slice());
                    out.push(c.bias.as_mut_slice());
                }
                Layer::Fire(f) => {
                    for c in [&mut f.squeeze, &mut f.expand1, &mut f.expand3] {
                        out.push(c.weight.as_mut_slice());
                        out.push(c.bias.as_mut_slice());
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Gradient slices in the same order as [`Network::param_slices`].
    pub fn grad_slices(grads: &NetworkGrads) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for g in grads {
            match g {
                LayerGrads::Conv { weight, bias } => {
                    out.push(weight.as_slice());
                    out.push(bias.as_slice());
                }
                LayerGrads::Fire(f) => {
                    for (w, b) in [&f.squeeze, &f.expand1, &f.expand3] {
                        out.push(w.as_slice());
                        out.push(b.as_slice());
                    }
                }
                LayerGrads::None => {}
            }
        }
        out
    }

    pub fn add_grads(acc: &mut NetworkGrads, other: &NetworkGrads) {
        fn add(a: &mut [f32], b: &[f32]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        assert_eq!(acc.len(), other.len());
        for (a, b) in acc.iter_mut().zip(other) {
            match (a, b) {
                (
                    LayerGrads::Conv { weight, bias },
                    LayerGrads::Conv { weight: w2, bias: b2 },
                ) => {
                    add(weight, w2);
                    add(bias, b2);
                }
                (LayerGrads::Fire(fa), LayerGrads::Fire(fb)) => {
                    add(&mut fa.squeeze.0, &fb.squeeze.0);
                    add(&mut fa.squeeze.1, &fb.squeeze.1);
                    add(&mut fa.expand1.0, &fb.expand1.0);
                    add(&mut fa.expand1.1, &fb.expand1.1);
                    add(&mut fa.expand3.0, &fb.expand3.0);
                    add(&mut fa.expand3.1, &fb.expand3.1);
                }
                (LayerGrads::None, LayerGrads::None) => {}
                _ => unreachable!("gradient kind mismatch"),
            }
        }
    }

    pub fn scale_grads(grads: &mut NetworkGrads, factor: f32) {
        fn scale(a: &mut [f32], f: f32) {
            for x in a {
                *x *= f;
            }
        }
        for g in grads {
            match g {
                LayerGrads::Conv { weight, bias } => {
                    scale(weight, factor);
                    scale(bias, factor);
                }
                LayerGrads::Fire(f) => {
                    scale(&mut f.squeeze.0, factor);
                    scale(&mut f.squeeze.1, factor);
                    scale(&mut f.expand1.0, factor);
                    scale(&mut f.expand1.1, factor);
                    scale(&mut f.expand3.0, factor);
                    scale(&mut f.expand3.1, factor);
                }
                LayerGrads::None => {}
            }
        }
    }

    pub fn sgd_step(&mut self, grads: &NetworkGrads, lr: f32) {
        let gs = Self::grad_slices(grads);
        let ps = self.param_slices_mut();
        assert_eq!(gs.len(), ps.len());
        for (p, g) in ps.into_iter().zip(gs) {
            super::sgd_step(p, g, lr);
        }
    }

    /// Canonical architecture description, the input to the weight-file
    /// fingerprint.
    pub fn spec_string(&self) -> String {
        let parts: Vec<String> = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.spec_string(),
                Layer::MaxPool(p) => p.spec_string(),
                Layer::Relu => "relu".to_string(),
                Layer::Sigmoid => "sigmoid".to_string(),
                Layer::Fire(f) => f.spec_string(),
            })
            .collect();
        parts.join(";")
    }
}
