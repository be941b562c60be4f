use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{gemm, MatRef, Module, Param, Tensor};
use crate::exec::Exec;

/// Unfolds `x` into a `(c*k*k) x (oh*ow)` patch matrix; row index is
/// `(channel, ky, kx)`, column index `(oy, ox)`. Out-of-image taps are zero.
pub fn im2col(
    exec: Exec,
    x: &Tensor,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
) -> Vec<f32> {
    let ncols = oh * ow;
    let (h, w) = (x.h as isize, x.w as isize);
    let mut out = vec![0.0f32; x.c * k * k * ncols];
    exec.for_each_chunk_mut(&mut out, k * k * ncols, |c, chunk| {
        let plane = &x.data[c * x.h * x.w..(c + 1) * x.h * x.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut chunk[(ky * k + kx) * ncols..(ky * k + kx + 1) * ncols];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Adjoint of [`im2col`]: scatters a patch matrix back onto a `c x h x w` image.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    exec: Exec,
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
) -> Tensor {
    let ncols = oh * ow;
    assert_eq!(cols.len(), c * k * k * ncols);
    let mut out = Tensor::zeros(c, h, w);
    exec.for_each_chunk_mut(&mut out.data, h * w, |ch, plane| {
        let block = &cols[ch * k * k * ncols..(ch + 1) * k * k * ncols];
        for ky in 0..k {
            for kx in 0..k {
                let row = &block[(ky * k + kx) * ncols..(ky * k + kx + 1) * ncols];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    });
    out
}

fn add_bias(y: &mut [f32], bias: &[f32], plane: usize) {
    for (chunk, b) in y.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad(grad: &mut [f32], dy: &[f32], plane: usize) {
    for (g, chunk) in grad.iter_mut().zip(dy.chunks(plane)) {
        *g += chunk.iter().map(|&v| v as f64).sum::<f64>() as f32;
    }
}

/// 2-D convolution, zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[out_c, in_c, k, k]`
    pub weight: Param,
    pub bias: Option<Param>,
    cols: Vec<f32>,
    in_hw: (usize, usize),
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight: Param::new(format!("{name}.weight"), &[out_c, in_c, k, k], 0.0),
            bias: bias.then(|| Param::new(format!("{name}.bias"), &[out_c], 0.0)),
            cols: Vec::new(),
            in_hw: (0, 0),
        }
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Inference-mode forward pass; caches nothing.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        self.compute(x).0
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let (y, cols) = self.compute(x);
        if train {
            self.cols = cols;
            self.in_hw = (x.h, x.w);
        }
        y
    }

    fn compute(&self, x: &Tensor) -> (Tensor, Vec<f32>) {
        assert_eq!(x.c, self.in_c, "{}: input channels", self.weight.name);
        let exec = Exec::default();
        let (oh, ow) = (self.out_size(x.h), self.out_size(x.w));
        let ckk = self.in_c * self.k * self.k;
        let cols = im2col(exec, x, self.k, self.stride, self.pad, oh, ow);
        let mut y = Tensor::zeros(self.out_c, oh, ow);
        gemm(
            exec,
            self.out_c,
            ckk,
            oh * ow,
            MatRef::new(&self.weight.value, self.out_c, ckk),
            MatRef::new(&cols, ckk, oh * ow),
            0.0,
            &mut y.data,
        );
        if let Some(b) = &self.bias {
            add_bias(&mut y.data, &b.value, oh * ow);
        }
        (y, cols)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        assert!(
            !self.cols.is_empty(),
            "backward without a training forward pass"
        );
        let exec = Exec::default();
        let ckk = self.in_c * self.k * self.k;
        let n = dy.plane_len();
        gemm(
            exec,
            self.out_c,
            n,
            ckk,
            MatRef::new(&dy.data, self.out_c, n),
            MatRef::t(&self.cols, ckk, n),
            1.0,
            &mut self.weight.grad,
        );
        if let Some(b) = &mut self.bias {
            accumulate_bias_grad(&mut b.grad, &dy.data, n);
        }
        let mut dcols = vec![0.0f32; ckk * n];
        gemm(
            exec,
            ckk,
            self.out_c,
            n,
            MatRef::t(&self.weight.value, self.out_c, ckk),
            MatRef::new(&dy.data, self.out_c, n),
            0.0,
            &mut dcols,
        );
        let (h, w) = self.in_hw;
        col2im(
            exec,
            &dcols,
            self.in_c,
            h,
            w,
            self.k,
            self.stride,
            self.pad,
            dy.h,
            dy.w,
        )
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight)
            .chain(self.bias.as_ref())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.as_mut())
            .collect()
    }
}

/// Transposed ("fractionally strided") convolution, the adjoint of [`Conv2d`].
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
    /// `[in_c, out_c, k, k]`
    pub weight: Param,
    pub bias: Option<Param>,
    input: Vec<f32>,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
        bias: bool,
    ) -> Self {
        Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            out_pad,
            weight: Param::new(format!("{name}.weight"), &[in_c, out_c, k, k], 0.0),
            bias: bias.then(|| Param::new(format!("{name}.bias"), &[out_c], 0.0)),
            input: Vec::new(),
        }
    }

    pub fn out_size(&self, n: usize) -> usize {
        (n - 1) * self.stride + self.k + self.out_pad - 2 * self.pad
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.infer(x);
        if train {
            self.input = x.data.clone();
        }
        y
    }

    /// Inference-mode forward pass; caches nothing.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.in_c, "{}: input channels", self.weight.name);
        let exec = Exec::default();
        let okk = self.out_c * self.k * self.k;
        let n = x.plane_len();
        let mut cols = vec![0.0f32; okk * n];
        gemm(
            exec,
            okk,
            self.in_c,
            n,
            MatRef::t(&self.weight.value, self.in_c, okk),
            MatRef::new(&x.data, self.in_c, n),
            0.0,
            &mut cols,
        );
        let (oh, ow) = (self.out_size(x.h), self.out_size(x.w));
        let mut y = col2im(
            exec,
            &cols,
            self.out_c,
            oh,
            ow,
            self.k,
            self.stride,
            self.pad,
            x.h,
            x.w,
        );
        if let Some(b) = &self.bias {
            add_bias(&mut y.data, &b.value, oh * ow);
        }
        y
    }

    /// `in_hw` is the spatial size of the forward input.
    pub fn backward(&mut self, dy: &Tensor, in_hw: (usize, usize)) -> Tensor {
        assert!(
            !self.input.is_empty(),
            "backward without a training forward pass"
        );
        let exec = Exec::default();
        let (h, w) = in_hw;
        let n = h * w;
        let okk = self.out_c * self.k * self.k;
        let dcols = im2col(exec, dy, self.k, self.stride, self.pad, h, w);
        gemm(
            exec,
            self.in_c,
            n,
            okk,
            MatRef::new(&self.input, self.in_c, n),
            MatRef::t(&dcols, okk, n),
            1.0,
            &mut self.weight.grad,
        );
        if let Some(b) = &mut self.bias {
            accumulate_bias_grad(&mut b.grad, &dy.data, dy.plane_len());
        }
        let mut dx = Tensor::zeros(self.in_c, h, w);
        gemm(
            exec,
            self.in_c,
            okk,
            n,
            MatRef::new(&self.weight.value, self.in_c, okk),
            MatRef::new(&dcols, okk, n),
            0.0,
            &mut dx.data,
        );
        dx
    }
}

impl Module for ConvTranspose2d {
    fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight)
            .chain(self.bias.as_ref())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight)
            .chain(self.bias.as_mut())
            .collect()
    }
}

/// Batch normalization at batch size one: each channel is normalized over
/// its spatial extent, in training and in inference alike.
#[derive(Debug, Clone)]
pub struct Norm2d {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

impl Norm2d {
    pub fn new(name: &str, c: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), &[c], 1.0),
            beta: Param::new(format!("{name}.beta"), &[c], 0.0),
            eps: 1e-5,
            xhat: Vec::new(),
            inv_std: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let (y, xhat, inv_std) = self.compute(x);
        if train {
            self.xhat = xhat;
            self.inv_std = inv_std;
        }
        y
    }

    /// Inference-mode forward pass; caches nothing.
    pub fn infer(&self, x: &Tensor) -> Tensor {
        self.compute(x).0
    }

    fn compute(&self, x: &Tensor) -> (Tensor, Vec<f32>, Vec<f32>) {
        assert_eq!(x.c, self.gamma.len());
        let n = x.plane_len();
        let eps = self.eps;
        let mut xhat = x.data.clone();
        let stats: Vec<f32> = Exec::default().map(x.c, |c| {
            let plane = &x.data[c * n..(c + 1) * n];
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = plane
                .iter()
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            (1.0 / (var + eps).sqrt()) as f32
        });
        for (c, plane) in xhat.chunks_mut(n).enumerate() {
            let mean = (x.data[c * n..(c + 1) * n]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>()
                / n as f64) as f32;
            plane.iter_mut().for_each(|v| *v = (*v - mean) * stats[c]);
        }
        let mut y = xhat.clone();
        for (c, plane) in y.chunks_mut(n).enumerate() {
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            plane.iter_mut().for_each(|v| *v = g * *v + b);
        }
        (Tensor::from_vec(x.c, x.h, x.w, y), xhat, stats)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        assert!(
            !self.xhat.is_empty(),
            "backward without a training forward pass"
        );
        let n = dy.plane_len();
        let nf = n as f64;
        let mut dx = vec![0.0f32; dy.len()];
        for c in 0..dy.c {
            let dyc = &dy.data[c * n..(c + 1) * n];
            let xh = &self.xhat[c * n..(c + 1) * n];
            let sum_dy: f64 = dyc.iter().map(|&v| v as f64).sum();
            let sum_dy_xh: f64 = dyc.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum();
            self.gamma.grad[c] += sum_dy_xh as f32;
            self.beta.grad[c] += sum_dy as f32;
            let g = self.gamma.value[c] as f64;
            let k = g * self.inv_std[c] as f64 / nf;
            for ((d, &dyv), &x) in dx[c * n..(c + 1) * n].iter_mut().zip(dyc).zip(xh) {
                *d = (k * (nf * dyv as f64 - sum_dy - x as f64 * sum_dy_xh)) as f32;
            }
        }
        Tensor::from_vec(dy.c, dy.h, dy.w, dx)
    }
}

impl Module for Norm2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f32),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(&self) -> String {
        match self {
            Activation::Identity => "none".into(),
            Activation::Relu => "relu".into(),
            Activation::LeakyRelu(s) => format!("lrelu{s}"),
            Activation::Tanh => "tanh".into(),
            Activation::Sigmoid => "sigmoid".into(),
        }
    }
}

/// Elementwise activation; caches its output for the backward pass.
#[derive(Debug, Clone)]
pub struct Act {
    pub kind: Activation,
    out: Vec<f32>,
}

impl Act {
    pub fn new(kind: Activation) -> Self {
        Self {
            kind,
            out: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.infer(x);
        if train {
            self.out = y.data.clone();
        }
        y
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        let f: fn(f32, f32) -> f32 = match self.kind {
            Activation::Identity => |v, _| v,
            Activation::Relu => |v, _| v.max(0.0),
            Activation::LeakyRelu(_) => |v, s| if v > 0.0 { v } else { s * v },
            Activation::Tanh => |v, _| v.tanh(),
            Activation::Sigmoid => |v, _| 1.0 / (1.0 + (-v).exp()),
        };
        let slope = match self.kind {
            Activation::LeakyRelu(s) => s,
            _ => 0.0,
        };
        Tensor::from_vec(x.c, x.h, x.w, x.data.iter().map(|&v| f(v, slope)).collect())
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        assert_eq!(
            self.out.len(),
            dy.len(),
            "backward without a training forward pass"
        );
        let data = dy
            .data
            .iter()
            .zip(&self.out)
            .map(|(&g, &y)| match self.kind {
                Activation::Identity => g,
                Activation::Relu => {
                    if y > 0.0 {
                        g
                    } else {
                        0.0
                    }
                }
                Activation::LeakyRelu(s) => {
                    if y > 0.0 {
                        g
                    } else {
                        s * g
                    }
                }
                Activation::Tanh => g * (1.0 - y * y),
                Activation::Sigmoid => g * y * (1.0 - y),
            })
            .collect();
        Tensor::from_vec(dy.c, dy.h, dy.w, data)
    }
}

/// Inverted dropout: active only in training mode.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f32,
    rng: ChaCha8Rng,
    mask: Vec<f32>,
}

impl Dropout {
    pub fn new(p: f32, seed: u64) -> Self {
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: Vec::new(),
        }
    }

    pub fn infer(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        if !train || self.p <= 0.0 {
            self.mask.clear();
            return x.clone();
        }
        let keep = 1.0 - self.p;
        let scale = 1.0 / keep;
        self.mask = (0..x.len())
            .map(|_| {
                if self.rng.random::<f32>() < keep {
                    scale
                } else {
                    0.0
                }
            })
            .collect();
        let data = x.data.iter().zip(&self.mask).map(|(a, m)| a * m).collect();
        Tensor::from_vec(x.c, x.h, x.w, data)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        if self.mask.is_empty() {
            return dy.clone();
        }
        let data = dy.data.iter().zip(&self.mask).map(|(a, m)| a * m).collect();
        Tensor::from_vec(dy.c, dy.h, dy.w, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(
            c,
            h,
            w,
            (0..c * h * w)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    }

    /// Direct-sum convolution reference in f64.
    fn conv_ref(x: &Tensor, wt: &[f32], out_c: usize, k: usize, s: usize, p: usize) -> Vec<f64> {
        let oh = (x.h + 2 * p - k) / s + 1;
        let ow = (x.w + 2 * p - k) / s + 1;
        let mut y = vec![0.0; out_c * oh * ow];
        for o in 0..out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..x.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w
                                {
                                    acc += wt[((o * x.c + c) * k + ky) * k + kx] as f64
                                        * x.data[(c * x.h + iy as usize) * x.w + ix as usize]
                                            as f64;
                                }
                            }
                        }
                    }
                    y[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, 3, 9, 7);
        let mut conv = Conv2d::new("c", 3, 5, 4, 2, 1, false);
        conv.weight.init_normal(0.3, &mut rng);
        let y = conv.forward(&x, false);
        let want = conv_ref(&x, &conv.weight.value, 5, 4, 2, 1);
        assert_eq!((y.h, y.w), (4, 3));
        for (a, b) in y.data.iter().zip(&want) {
            assert!((*a as f64 - b).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), z> == <x, convT(z)> with shared weights laid out [out,in,k,k] vs [in,out,k,k]
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, 3, 8, 8);
        let mut conv = Conv2d::new("c", 3, 4, 4, 2, 1, false);
        conv.weight.init_normal(0.3, &mut rng);
        let y = conv.forward(&x, false);
        let z = rand_tensor(&mut rng, 4, y.h, y.w);
        let mut tconv = ConvTranspose2d::new("t", 4, 3, 4, 2, 1, 0, false);
        tconv.weight.value = conv.weight.value.clone();
        let xt = tconv.forward(&z, false);
        assert_eq!(xt.shape(), x.shape());
        let lhs: f64 = y
            .data
            .iter()
            .zip(&z.data)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        let rhs: f64 = x
            .data
            .iter()
            .zip(&xt.data)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        assert!((lhs - rhs).abs() < 1e-4 * lhs.abs().max(1.0));
    }

    #[test]
    fn output_sizes() {
        let c = Conv2d::new("c", 1, 1, 4, 2, 1, false);
        assert_eq!(c.out_size(256), 128);
        assert_eq!(c.out_size(2), 1);
        let d = Conv2d::new("d", 1, 1, 4, 1, 1, false);
        assert_eq!(d.out_size(32), 31);
        let t = ConvTranspose2d::new("t", 1, 1, 4, 2, 1, 0, false);
        assert_eq!(t.out_size(1), 2);
        let t3 = ConvTranspose2d::new("t", 1, 1, 3, 2, 1, 1, false);
        assert_eq!(t3.out_size(64), 128);
    }

    /// Scalar objective `sum(w_i * y_i)` for fixed random `w`, so dL/dy = w.
    fn probe(y: &Tensor, w: &[f32]) -> f64 {
        y.data
            .iter()
            .zip(w)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    }

    fn check_grad(analytic: f32, numeric: f64) {
        let err = (analytic as f64 - numeric).abs()
            / (numeric.abs().max(analytic.abs() as f64)).max(1e-2);
        assert!(err < 2e-2, "analytic {analytic} numeric {numeric}");
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, 2, 6, 6);
        let mut conv = Conv2d::new("c", 2, 3, 3, 2, 1, true);
        conv.weight.init_normal(0.5, &mut rng);
        conv.bias.as_mut().unwrap().init_normal(0.5, &mut rng);
        let y = conv.forward(&x, true);
        let w: Vec<f32> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dx = conv.backward(&Tensor::from_vec(y.c, y.h, y.w, w.clone()));
        let eps = 1e-2f32;
        for idx in [0, 7, 19, 40, 71] {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let num = (probe(&conv.forward(&xp, false), &w) - probe(&conv.forward(&xm, false), &w))
                / (2.0 * eps as f64);
            check_grad(dx.data[idx], num);
        }
        for idx in [0, 5, 17, 53] {
            let mut c2 = conv.clone();
            c2.weight.value[idx] += eps;
            let fp = probe(&c2.forward(&x, false), &w);
            c2.weight.value[idx] -= 2.0 * eps;
            let fm = probe(&c2.forward(&x, false), &w);
            check_grad(conv.weight.grad[idx], (fp - fm) / (2.0 * eps as f64));
        }
        let bias_grad: f32 = w[..9].iter().sum();
        assert!((conv.bias.as_ref().unwrap().grad[0] - bias_grad).abs() < 1e-5);
    }

    #[test]
    fn conv_transpose_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&mut rng, 3, 4, 4);
        let mut t = ConvTranspose2d::new("t", 3, 2, 3, 2, 1, 1, true);
        t.weight.init_normal(0.5, &mut rng);
        let y = t.forward(&x, true);
        assert_eq!((y.h, y.w), (8, 8));
        let w: Vec<f32> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dx = t.backward(&Tensor::from_vec(y.c, y.h, y.w, w.clone()), (4, 4));
        let eps = 1e-2f32;
        for idx in [0, 9, 22, 47] {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let num = (probe(&t.forward(&xp, false), &w) - probe(&t.forward(&xm, false), &w))
                / (2.0 * eps as f64);
            check_grad(dx.data[idx], num);
        }
        for idx in [0, 11, 30, 53] {
            let mut t2 = t.clone();
            t2.weight.value[idx] += eps;
            let fp = probe(&t2.forward(&x, false), &w);
            t2.weight.value[idx] -= 2.0 * eps;
            let fm = probe(&t2.forward(&x, false), &w);
            check_grad(t.weight.grad[idx], (fp - fm) / (2.0 * eps as f64));
        }
    }

    #[test]
    fn norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&mut rng, 2, 3, 3);
        let mut n = Norm2d::new("n", 2);
        n.gamma.value = vec![1.3, -0.7];
        n.beta.value = vec![0.2, 0.1];
        let y = n.forward(&x, true);
        let w: Vec<f32> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dx = n.backward(&Tensor::from_vec(y.c, y.h, y.w, w.clone()));
        let eps = 1e-3f32;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.data[idx] += eps;
            let mut xm = x.clone();
            xm.data[idx] -= eps;
            let num = (probe(&n.forward(&xp, false), &w) - probe(&n.forward(&xm, false), &w))
                / (2.0 * eps as f64);
            check_grad(dx.data[idx], num);
        }
        // normalized output has zero mean and unit variance per channel
        let y = Norm2d::new("m", 2).forward(&x, false);
        for plane in y.data.chunks(9) {
            let mean: f32 = plane.iter().sum::<f32>() / 9.0;
            let var: f32 = plane.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 9.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn activation_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&mut rng, 1, 4, 4);
        for kind in [
            Activation::Relu,
            Activation::LeakyRelu(0.2),
            Activation::Tanh,
            Activation::Sigmoid,
        ] {
            let mut a = Act::new(kind);
            let y = a.forward(&x, true);
            let w: Vec<f32> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let dx = a.backward(&Tensor::from_vec(1, 4, 4, w.clone()));
            let eps = 1e-3f32;
            for idx in 0..x.len() {
                if x.data[idx].abs() < 1e-2 {
                    continue;
                }
                let mut xp = x.clone();
                xp.data[idx] += eps;
                let mut xm = x.clone();
                xm.data[idx] -= eps;
                let num = (probe(&a.forward(&xp, false), &w) - probe(&a.forward(&xm, false), &w))
                    / (2.0 * eps as f64);
                check_grad(dx.data[idx], num);
            }
        }
    }

    #[test]
    fn dropout_train_only() {
        let x = Tensor::filled(1, 16, 16, 1.0);
        let mut d = Dropout::new(0.5, 9);
        assert_eq!(d.forward(&x, false), x);
        let y = d.forward(&x, true);
        let kept = y.data.iter().filter(|&&v| v == 2.0).count();
        let dropped = y.data.iter().filter(|&&v| v == 0.0).count();
        assert_eq!(kept + dropped, 256);
        assert!(kept > 80 && dropped > 80);
        let g = d.backward(&Tensor::filled(1, 16, 16, 1.0));
        assert_eq!(g, y);
    }
}
