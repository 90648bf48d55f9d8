use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::{Real, Tensor};
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Declarative description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        size: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Dropout {
        rate: f64,
    },
    FullyConnected {
        units: usize,
    },
    /// Parallel branches over the same input, stacked along the channel axis.
    Concat {
        branches: Vec<Vec<LayerSpec>>,
    },
    /// Per-unit maximum over the views of each object.
    ViewMaxPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl LayerSpec {
    pub fn conv(filters: usize, size: usize, padding: usize) -> Self {
        LayerSpec::Conv2d { filters, size, stride: 1, padding }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Concat { .. } => "concat",
            LayerSpec::ViewMaxPool => "view_maxpool",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            LayerSpec::Conv2d { filters, size, stride, .. } => {
                if *filters == 0 || *size == 0 || *stride == 0 {
                    return bad(format!("conv2d needs filters, size, stride >= 1: {self:?}"));
                }
            }
            LayerSpec::MaxPool2d { size, stride } => {
                if *size == 0 || *stride == 0 {
                    return bad(format!("maxpool2d needs size, stride >= 1: {self:?}"));
                }
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return bad(format!("dropout rate {rate} outside [0, 1)"));
                }
            }
            LayerSpec::FullyConnected { units } => {
                if *units == 0 {
                    return bad("fully_connected needs at least one unit".into());
                }
            }
            LayerSpec::Concat { branches } => {
                if branches.is_empty() || branches.iter().any(|b| b.is_empty()) {
                    return bad("concat needs non-empty branches".into());
                }
                for l in branches.iter().flatten() {
                    l.validate()?;
                }
            }
            LayerSpec::Relu | LayerSpec::ViewMaxPool => {}
        }
        Ok(())
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        match self {
            LayerSpec::Conv2d { filters, size, stride, padding } => {
                let [c, h, w] = chw(input, "conv2d")?;
                let _ = c;
                let oh = conv_out(h, *size, *stride, *padding)?;
                let ow = conv_out(w, *size, *stride, *padding)?;
                Ok(vec![*filters, oh, ow])
            }
            LayerSpec::MaxPool2d { size, stride } => {
                let [c, h, w] = chw(input, "maxpool2d")?;
                if h < *size || w < *size {
                    return Err(Error::Shape(format!("maxpool2d window {size} larger than {h}x{w}")));
                }
                Ok(vec![c, (h - size) / stride + 1, (w - size) / stride + 1])
            }
            LayerSpec::FullyConnected { units } => Ok(vec![*units]),
            LayerSpec::Concat { branches } => {
                let mut channels = 0;
                let mut spatial: Option<Vec<usize>> = None;
                for (bi, branch) in branches.iter().enumerate() {
                    let mut s = input.to_vec();
                    for l in branch {
                        s = l.output_shape(&s)?;
                    }
                    if s.len() != 3 {
                        return Err(Error::Shape(format!("concat branch {bi} yields {s:?}, need CxHxW")));
                    }
                    match &spatial {
                        Some(sp) if sp[..] != s[1..] => {
                            return Err(Error::Shape(format!(
                                "concat branch {bi} spatial size {:?} differs from {:?}",
                                &s[1..],
                                sp
                            )))
                        }
                        _ => spatial = Some(s[1..].to_vec()),
                    }
                    channels += s[0];
                }
                let sp = spatial.expect("non-empty branches");
                Ok(vec![channels, sp[0], sp[1]])
            }
            LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::ViewMaxPool => Ok(input.to_vec()),
        }
    }

    /// Learned parameter count: `F * (C * k * k + 1)` for convolutions,
    /// `in * out + out` for fully connected layers.
    pub fn param_count(&self, input: &[usize]) -> Result<usize> {
        Ok(match self {
            LayerSpec::Conv2d { filters, size, .. } => {
                let [c, _, _] = chw(input, "conv2d")?;
                filters * (c * size * size + 1)
            }
            LayerSpec::FullyConnected { units } => {
                let fan_in: usize = input.iter().product();
                fan_in * units + units
            }
            LayerSpec::Concat { branches } => {
                let mut total = 0;
                for branch in branches {
                    let mut s = input.to_vec();
                    for l in branch {
                        total += l.param_count(&s)?;
                        s = l.output_shape(&s)?;
                    }
                }
                total
            }
            _ => 0,
        })
    }

    /// Hyperparameters as `key=value` text.
    pub fn describe(&self) -> String {
        match self {
            LayerSpec::Conv2d { filters, size, stride, padding } => {
                format!("conv2d filters={filters} size={size} stride={stride} padding={padding}")
            }
            LayerSpec::Relu => "relu".into(),
            LayerSpec::MaxPool2d { size, stride } => format!("maxpool2d size={size} stride={stride}"),
            LayerSpec::Dropout { rate } => format!("dropout rate={rate}"),
            LayerSpec::FullyConnected { units } => format!("fully_connected units={units}"),
            LayerSpec::Concat { branches } => format!("concat branches={}", branches.len()),
            LayerSpec::ViewMaxPool => "view_maxpool".into(),
        }
    }
}

fn chw(shape: &[usize], what: &str) -> Result<[usize; 3]> {
    match shape {
        &[c, h, w] => Ok([c, h, w]),
        _ => Err(Error::Shape(format!("{what} expects CxHxW input, got {shape:?}"))),
    }
}

fn conv_out(n: usize, k: usize, s: usize, p: usize) -> Result<usize> {
    let span = (n + 2 * p)
        .checked_sub(k)
        .ok_or_else(|| Error::Shape(format!("kernel {k} larger than padded input {}", n + 2 * p)))?;
    if span % s != 0 {
        return Err(Error::Shape(format!("non-integral output size: ({n} + 2*{p} - {k}) / {s} is not an integer")));
    }
    Ok(span / s + 1)
}

/// Per-forward settings shared by all layers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Ctx {
    pub mode: Mode,
    pub dropout_seed: u64,
    pub views: usize,
}

pub(crate) struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

impl<T: Real> Param<T> {
    fn init(name: String, shape: &[usize], fan_in: usize, seed: u64, gaussian: bool) -> Self {
        let mut tensor = Tensor::zeros(shape);
        if gaussian {
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &name));
            for v in &mut tensor.data {
                *v = T::from_f64_lossy(normal.sample(&mut rng));
            }
        }
        tensor.zero_grad();
        Param { name, tensor }
    }
}

pub(crate) enum Layer<T> {
    Conv(Conv<T>),
    Relu { positive: Vec<bool> },
    MaxPool(MaxPool),
    Dropout { rate: f64, salt: u64, mask: Option<Vec<T>> },
    Fc(Linear<T>),
    Concat(Concat<T>),
    ViewMaxPool { argmax: Vec<u32>, views: usize },
}

pub(crate) struct Conv<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_shape: [usize; 3],
    out_shape: [usize; 3],
    size: usize,
    stride: usize,
    padding: usize,
    input: Option<Tensor<T>>,
}

pub(crate) struct MaxPool {
    in_shape: [usize; 3],
    out_shape: [usize; 3],
    size: usize,
    stride: usize,
    argmax: Vec<u32>,
}

pub(crate) struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    fan_in: usize,
    units: usize,
    input: Option<Tensor<T>>,
}

pub(crate) struct Concat<T> {
    pub branches: Vec<Vec<Layer<T>>>,
    branch_channels: Vec<usize>,
    out_hw: [usize; 2],
}

/// Walks a layer list, building runtime layers. `path` prefixes parameter names.
pub(crate) fn build_layers<T: Real>(
    specs: &[LayerSpec],
    input: &[usize],
    path: &str,
    seed: u64,
    salt: &mut u64,
) -> Result<(Vec<Layer<T>>, Vec<usize>)> {
    let mut shape = input.to_vec();
    let mut layers = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let out = spec.output_shape(&shape)?;
        let name = if path.is_empty() { format!("{i}") } else { format!("{path}.{i}") };
        let layer = match spec {
            LayerSpec::Conv2d { filters, size, stride, padding } => {
                let [c, h, w] = chw(&shape, "conv2d")?;
                let fan_in = c * size * size;
                Layer::Conv(Conv {
                    weight: Param::init(
                        format!("{name}.conv.weight"),
                        &[*filters, c, *size, *size],
                        fan_in,
                        seed,
                        true,
                    ),
                    bias: Param::init(format!("{name}.conv.bias"), &[*filters], fan_in, seed, false),
                    in_shape: [c, h, w],
                    out_shape: [out[0], out[1], out[2]],
                    size: *size,
                    stride: *stride,
                    padding: *padding,
                    input: None,
                })
            }
            LayerSpec::Relu => Layer::Relu { positive: Vec::new() },
            LayerSpec::MaxPool2d { size, stride } => Layer::MaxPool(MaxPool {
                in_shape: chw(&shape, "maxpool2d")?,
                out_shape: [out[0], out[1], out[2]],
                size: *size,
                stride: *stride,
                argmax: Vec::new(),
            }),
            LayerSpec::Dropout { rate } => {
                *salt += 1;
                Layer::Dropout { rate: *rate, salt: *salt, mask: None }
            }
            LayerSpec::FullyConnected { units } => {
                let fan_in: usize = shape.iter().product();
                Layer::Fc(Linear {
                    weight: Param::init(format!("{name}.fc.weight"), &[*units, fan_in], fan_in, seed, true),
                    bias: Param::init(format!("{name}.fc.bias"), &[*units], fan_in, seed, false),
                    fan_in,
                    units: *units,
                    input: None,
                })
            }
            LayerSpec::Concat { branches } => {
                let mut built = Vec::with_capacity(branches.len());
                let mut branch_channels = Vec::with_capacity(branches.len());
                for (b, branch) in branches.iter().enumerate() {
                    let (layers, s) = build_layers(branch, &shape, &format!("{name}.{b}"), seed, salt)?;
                    branch_channels.push(s[0]);
                    built.push(layers);
                }
                Layer::Concat(Concat { branches: built, branch_channels, out_hw: [out[1], out[2]] })
            }
            LayerSpec::ViewMaxPool => Layer::ViewMaxPool { argmax: Vec::new(), views: 1 },
        };
        layers.push(layer);
        shape = out;
    }
    Ok((layers, shape))
}

/// Unfolds one `[c, h, w]` sample into `[c * k * k, oh * ow]` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Real>(x: &[T], [c, h, w]: [usize; 3], k: usize, s: usize, p: usize, oh: usize, ow: usize, cols: &mut [T]) {
    let plane = oh * ow;
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - p as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - p as isize;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating overlaps.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Real>(
    cols: &[T],
    [c, h, w]: [usize; 3],
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
    dx: &mut [T],
) {
    let plane = oh * ow;
    for ci in 0..c {
        let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[iy as usize * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Output rows per parallel GEMM task; fixed so results never depend on the
/// thread count.
const GEMM_ROW_BLOCK: usize = 64;

/// `C[m,n] = op(A) * op(B) + beta * C`, split into fixed row blocks of C.
#[allow(clippy::too_many_arguments)]
fn par_gemm<T: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    c[..m * n].par_chunks_mut(GEMM_ROW_BLOCK * n).enumerate().for_each(|(blk, c_blk)| {
        let r0 = blk * GEMM_ROW_BLOCK;
        let rows = c_blk.len() / n;
        let (a_off, rsa, csa) = if trans_a { (r0, 1, m as isize) } else { (r0 * k, k as isize, 1) };
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        // SAFETY: the A block starts inside `a` and stays within its m x k extent.
        unsafe {
            T::raw_gemm(
                rows,
                k,
                n,
                T::one(),
                a.as_ptr().add(a_off),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c_blk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
}

fn transpose<T: Real>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

impl<T: Real> Conv<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        let [c, h, w] = self.in_shape;
        let [f, oh, ow] = self.out_shape;
        let (k, s, p) = (self.size, self.stride, self.padding);
        let ckk = c * k * k;
        let plane = oh * ow;
        let direct = k == 1 && s == 1 && p == 0;
        let weight = &self.weight.tensor.data;
        let bias = &self.bias.tensor.data;
        let mut out = Tensor::zeros(&[n, f, oh, ow]);
        out.data.par_chunks_mut(f * plane).zip(x.data.par_chunks(c * h * w)).for_each_init(
            || if direct { Vec::new() } else { vec![T::zero(); ckk * plane] },
            |cols, (y, xs)| {
                let cols: &[T] = if direct {
                    xs
                } else {
                    im2col(xs, self.in_shape, k, s, p, oh, ow, cols);
                    &cols[..]
                };
                gemm(false, false, f, plane, ckk, T::one(), weight, cols, T::zero(), y);
                for (fi, row) in y.chunks_mut(plane).enumerate() {
                    row.iter_mut().for_each(|v| *v += bias[fi]);
                }
            },
        );
        self.input = Some(x.clone());
        out
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool, frozen: bool) -> Result<Option<Tensor<T>>> {
        let x = self.input.as_ref().ok_or_else(|| Error::Invariant("backward before forward".into()))?;
        let n = x.batch();
        let [c, h, w] = self.in_shape;
        let [f, oh, ow] = self.out_shape;
        let (k, s, p) = (self.size, self.stride, self.padding);
        let ckk = c * k * k;
        let plane = oh * ow;
        let weight = &self.weight.tensor.data;
        let in_shape = self.in_shape;

        let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>, Vec<T>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xs = &x.data[i * c * h * w..(i + 1) * c * h * w];
                let gy = &grad.data[i * f * plane..(i + 1) * f * plane];
                let mut cols = vec![T::zero(); ckk * plane];
                im2col(xs, in_shape, k, s, p, oh, ow, &mut cols);
                let (dw, db) = if frozen {
                    (None, None)
                } else {
                    let mut dw = vec![T::zero(); f * ckk];
                    gemm(false, true, f, ckk, plane, T::one(), gy, &cols, T::zero(), &mut dw);
                    let db: Vec<T> = gy.chunks(plane).map(|r| r.iter().copied().sum()).collect();
                    (Some(dw), Some(db))
                };
                let dx = if need_input_grad {
                    gemm(true, false, ckk, plane, f, T::one(), weight, gy, T::zero(), &mut cols);
                    let mut dx = vec![T::zero(); c * h * w];
                    col2im(&cols, in_shape, k, s, p, oh, ow, &mut dx);
                    dx
                } else {
                    Vec::new()
                };
                (dw, db, dx)
            })
            .collect();

        if !frozen {
            let gw = self.weight.tensor.grad_mut();
            for (dw, _, _) in &per_sample {
                for (g, d) in gw.iter_mut().zip(dw.as_ref().expect("computed")) {
                    *g += *d;
                }
            }
            let gb = self.bias.tensor.grad_mut();
            for (_, db, _) in &per_sample {
                for (g, d) in gb.iter_mut().zip(db.as_ref().expect("computed")) {
                    *g += *d;
                }
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        let data: Vec<T> = per_sample.into_iter().flat_map(|(_, _, dx)| dx).collect();
        Ok(Some(Tensor::from_vec(&[n, c, h, w], data)?))
    }
}

impl MaxPool {
    fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let n = x.batch();
        let [c, h, w] = self.in_shape;
        let [_, oh, ow] = self.out_shape;
        let (k, s) = (self.size, self.stride);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        self.argmax = vec![0; n * c * oh * ow];
        for (plane_idx, (src, (dst, arg))) in
            x.data.chunks(h * w).zip(out.data.chunks_mut(oh * ow).zip(self.argmax.chunks_mut(oh * ow))).enumerate()
        {
            let base = (plane_idx * h * w) as u32;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = oy * s * w + ox * s;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = (oy * s + ky) * w + ox * s + kx;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    dst[oy * ow + ox] = src[best];
                    arg[oy * ow + ox] = base + best as u32;
                }
            }
        }
        out
    }

    fn backward<T: Real>(&self, grad: &Tensor<T>) -> Tensor<T> {
        let n = grad.batch();
        let [c, h, w] = self.in_shape;
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        for (g, &a) in grad.data.iter().zip(&self.argmax) {
            dx.data[a as usize] += *g;
        }
        dx
    }
}

impl<T: Real> Linear<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = x.batch();
        if x.item_len() != self.fan_in {
            return Err(Error::Shape(format!("fully_connected expects {} inputs, got {}", self.fan_in, x.item_len())));
        }
        // yT[units, n] = W[units, in] * xT
        let mut yt = vec![T::zero(); self.units * n];
        par_gemm(false, true, self.units, n, self.fan_in, &self.weight.tensor.data, &x.data, T::zero(), &mut yt);
        let mut y = transpose(&yt, self.units, n);
        for row in y.chunks_mut(self.units) {
            for (v, b) in row.iter_mut().zip(&self.bias.tensor.data) {
                *v += *b;
            }
        }
        self.input = Some(x.clone());
        Tensor::from_vec(&[n, self.units], y)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool, frozen: bool) -> Result<Option<Tensor<T>>> {
        let x = self.input.as_ref().ok_or_else(|| Error::Invariant("backward before forward".into()))?;
        let n = x.batch();
        if !frozen {
            // dW[units, in] += dY^T * X
            let gw = self.weight.tensor.grad_mut();
            par_gemm(true, false, self.units, self.fan_in, n, &grad.data, &x.data, T::one(), gw);
            let gb = self.bias.tensor.grad_mut();
            for row in grad.data.chunks(self.units) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += *d;
                }
            }
        }
        if !need_input_grad {
            return Ok(None);
        }
        // dX^T[in, n] = W^T * dY^T
        let mut dxt = vec![T::zero(); self.fan_in * n];
        par_gemm(true, true, self.fan_in, n, self.units, &self.weight.tensor.data, &grad.data, T::zero(), &mut dxt);
        let mut shape = x.shape().to_vec();
        shape[0] = n;
        Ok(Some(Tensor::from_vec(&shape, transpose(&dxt, self.fan_in, n))?))
    }
}

fn dropout_mask<T: Real>(len: usize, rate: f64, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = T::from_f64_lossy(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.random::<f64>() < rate { T::zero() } else { scale }).collect()
}

impl<T: Real> Layer<T> {
    pub(crate) fn forward(&mut self, x: &Tensor<T>, ctx: &Ctx) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(conv) => {
                if x.shape()[1..] != conv.in_shape {
                    return Err(Error::Shape(format!("conv2d expects {:?}, got {:?}", conv.in_shape, &x.shape()[1..])));
                }
                Ok(conv.forward(x))
            }
            Layer::Relu { positive } => {
                let mut y = x.clone();
                *positive = y.data.iter().map(|&v| v > T::zero()).collect();
                for (v, &p) in y.data.iter_mut().zip(positive.iter()) {
                    if !p {
                        *v = T::zero();
                    }
                }
                Ok(y)
            }
            Layer::MaxPool(pool) => {
                if x.shape()[1..] != pool.in_shape {
                    return Err(Error::Shape(format!(
                        "maxpool2d expects {:?}, got {:?}",
                        pool.in_shape,
                        &x.shape()[1..]
                    )));
                }
                Ok(pool.forward(x))
            }
            Layer::Dropout { rate, salt, mask } => {
                if ctx.mode == Mode::Eval || *rate == 0.0 {
                    *mask = None;
                    return Ok(x.clone());
                }
                let m: Vec<T> = dropout_mask(x.len(), *rate, derive_seed(ctx.dropout_seed, &format!("dropout{salt}")));
                let mut y = x.clone();
                for (v, s) in y.data.iter_mut().zip(&m) {
                    *v *= *s;
                }
                *mask = Some(m);
                Ok(y)
            }
            Layer::Fc(fc) => fc.forward(x),
            Layer::Concat(cat) => {
                let n = x.batch();
                let outs: Vec<Tensor<T>> = cat
                    .branches
                    .iter_mut()
                    .map(|branch| {
                        let mut h = x.clone();
                        for l in branch.iter_mut() {
                            h = l.forward(&h, ctx)?;
                        }
                        Ok(h)
                    })
                    .collect::<Result<_>>()?;
                let total: usize = cat.branch_channels.iter().sum();
                let [oh, ow] = cat.out_hw;
                let sp = oh * ow;
                let mut data = Vec::with_capacity(n * total * sp);
                for i in 0..n {
                    for (o, &ch) in outs.iter().zip(&cat.branch_channels) {
                        data.extend_from_slice(&o.data[i * ch * sp..(i + 1) * ch * sp]);
                    }
                }
                Tensor::from_vec(&[n, total, oh, ow], data)
            }
            Layer::ViewMaxPool { argmax, views } => {
                let v = ctx.views.max(1);
                let n = x.batch();
                if !n.is_multiple_of(v) {
                    return Err(Error::Shape(format!("batch of {n} is not a multiple of {v} views")));
                }
                *views = v;
                if v == 1 {
                    argmax.clear();
                    return Ok(x.clone());
                }
                let d = x.item_len();
                let groups = n / v;
                let mut shape = x.shape().to_vec();
                shape[0] = groups;
                let mut out = Tensor::zeros(&shape);
                *argmax = vec![0; groups * d];
                for g in 0..groups {
                    for j in 0..d {
                        let mut best = 0;
                        let mut best_val = x.data[(g * v) * d + j];
                        for view in 1..v {
                            let val = x.data[(g * v + view) * d + j];
                            if val > best_val {
                                best = view;
                                best_val = val;
                            }
                        }
                        out.data[g * d + j] = best_val;
                        argmax[g * d + j] = best as u32;
                    }
                }
                Ok(out)
            }
        }
    }

    pub(crate) fn backward(
        &mut self,
        grad: Tensor<T>,
        need_input_grad: bool,
        frozen: bool,
    ) -> Result<Option<Tensor<T>>> {
        match self {
            Layer::Conv(conv) => conv.backward(&grad, need_input_grad, frozen),
            Layer::Fc(fc) => fc.backward(&grad, need_input_grad, frozen),
            Layer::Relu { positive } => {
                if positive.len() != grad.len() {
                    return Err(Error::Invariant("relu backward before forward".into()));
                }
                let mut g = grad;
                for (v, &p) in g.data.iter_mut().zip(positive.iter()) {
                    if !p {
                        *v = T::zero();
                    }
                }
                Ok(Some(g))
            }
            Layer::MaxPool(pool) => {
                if pool.argmax.len() != grad.len() {
                    return Err(Error::Invariant("maxpool2d backward before forward".into()));
                }
                Ok(Some(pool.backward(&grad)))
            }
            Layer::Dropout { mask, .. } => {
                let mut g = grad;
                if let Some(m) = mask {
                    for (v, s) in g.data.iter_mut().zip(m.iter()) {
                        *v *= *s;
                    }
                }
                Ok(Some(g))
            }
            Layer::Concat(cat) => {
                let n = grad.batch();
                let total: usize = cat.branch_channels.iter().sum();
                let [oh, ow] = cat.out_hw;
                let sp = oh * ow;
                let mut dx: Option<Tensor<T>> = None;
                let mut offset = 0;
                for (branch, &ch) in cat.branches.iter_mut().zip(&cat.branch_channels) {
                    let mut part = Vec::with_capacity(n * ch * sp);
                    for i in 0..n {
                        let start = (i * total + offset) * sp;
                        part.extend_from_slice(&grad.data[start..start + ch * sp]);
                    }
                    offset += ch;
                    let oshape = [n, ch, oh, ow];
                    let mut g = Some(Tensor::from_vec(&oshape, part)?);
                    for (li, l) in branch.iter_mut().enumerate().rev() {
                        let need = need_input_grad || li > 0;
                        g = l.backward(g.expect("propagated"), need, frozen)?;
                        if g.is_none() {
                            break;
                        }
                    }
                    if let Some(g) = g {
                        match &mut dx {
                            None => dx = Some(g),
                            Some(acc) => acc.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += *b),
                        }
                    }
                }
                Ok(if need_input_grad { dx } else { None })
            }
            Layer::ViewMaxPool { argmax, views } => {
                let v = *views;
                if v == 1 {
                    return Ok(Some(grad));
                }
                let groups = grad.batch();
                let d = grad.item_len();
                if argmax.len() != groups * d {
                    return Err(Error::Invariant("view_maxpool backward before forward".into()));
                }
                let mut shape = grad.shape().to_vec();
                shape[0] = groups * v;
                let mut dx = Tensor::zeros(&shape);
                for g in 0..groups {
                    for j in 0..d {
                        let view = argmax[g * d + j] as usize;
                        dx.data[(g * v + view) * d + j] = grad.data[g * d + j];
                    }
                }
                Ok(Some(dx))
            }
        }
    }

    pub(crate) fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            Layer::Conv(c) => {
                f(&mut c.weight);
                f(&mut c.bias);
            }
            Layer::Fc(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            Layer::Concat(cat) => {
                for l in cat.branches.iter_mut().flatten() {
                    l.visit_params_mut(f);
                }
            }
            _ => {}
        }
    }

    pub(crate) fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv(c) => vec![&c.weight, &c.bias],
            Layer::Fc(f) => vec![&f.weight, &f.bias],
            Layer::Concat(cat) => cat.branches.iter().flatten().flat_map(|l| l.params()).collect(),
            _ => Vec::new(),
        }
    }
}
