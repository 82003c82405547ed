//! CHW feature maps and the few layers the toy model needs, each with a manual backward pass.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A single image's feature map, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        &self.data[k * self.plane()..(k + 1) * self.plane()]
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices, `op` = transpose when flagged.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, beta: f32, c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assertion above bounds every index reached with these strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn out_size(size: usize, k: usize, stride: usize) -> usize {
    let pad = k / 2;
    (size + 2 * pad - k) / stride + 1
}

/// Convolution with square kernel `k` (1 or 3), padding `k / 2`, and the given stride.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub inp: usize,
    pub out: usize,
    pub k: usize,
    pub stride: usize,
    /// `out x (inp * k * k)`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Saved input columns for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Option<Vec<f32>>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv {
    /// He-normal weights, zero bias.
    pub fn new(inp: usize, out: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = inp * k * k;
        let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("positive std");
        Conv {
            inp,
            out,
            k,
            stride,
            weight: (0..out * fan_in).map(|_| normal.sample(rng)).collect(),
            bias: vec![0.0; out],
        }
    }

    fn direct(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn im2col(&self, x: &Tensor, oh: usize, ow: usize) -> Vec<f32> {
        let (k, s, pad) = (self.k, self.stride, (self.k / 2) as isize);
        let n = oh * ow;
        let mut cols = vec![0.0; x.c * k * k * n];
        for c in 0..x.c {
            let chan = x.channel(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ky as isize - pad;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * s) as isize + kx as isize - pad;
                            if ix >= 0 && ix < x.w as isize {
                                row[oy * ow + ox] = chan[iy as usize * x.w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], shape: (usize, usize, usize), oh: usize, ow: usize) -> Tensor {
        let (c_in, h, w) = shape;
        let (k, s, pad) = (self.k, self.stride, (self.k / 2) as isize);
        let n = oh * ow;
        let mut dx = Tensor::zeros(c_in, h, w);
        for c in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * s) as isize + kx as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dx.data[(c * h + iy as usize) * w + ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Tensor, keep_cache: bool) -> (Tensor, Option<ConvCache>) {
        assert_eq!(x.c, self.inp, "conv input channels");
        let (oh, ow) = (out_size(x.h, self.k, self.stride), out_size(x.w, self.k, self.stride));
        let n = oh * ow;
        let mut y = Tensor::zeros(self.out, oh, ow);
        for (o, b) in self.bias.iter().enumerate() {
            y.data[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = *b);
        }
        let cols = if self.direct() { None } else { Some(self.im2col(x, oh, ow)) };
        let cols_ref: &[f32] = cols.as_deref().unwrap_or(&x.data);
        gemm(self.out, self.inp * self.k * self.k, n, &self.weight, false, cols_ref, false, 1.0, &mut y.data);
        let cache = keep_cache.then(|| ConvCache {
            cols,
            in_shape: (x.c, x.h, x.w),
            out_hw: (oh, ow),
        });
        (y, cache)
    }

    /// Accumulates weight and bias gradients into `grad` and returns the input gradient.
    pub fn backward(&self, x: &Tensor, cache: &ConvCache, dy: &Tensor, grad: &mut ConvGrad) -> Tensor {
        let (oh, ow) = cache.out_hw;
        let n = oh * ow;
        let q = self.inp * self.k * self.k;
        let cols_ref: &[f32] = cache.cols.as_deref().unwrap_or(&x.data);
        gemm(self.out, n, q, &dy.data, false, cols_ref, true, 1.0, &mut grad.weight);
        for o in 0..self.out {
            grad.bias[o] += dy.data[o * n..(o + 1) * n].iter().sum::<f32>();
        }
        let mut dcols = vec![0.0; q * n];
        gemm(q, self.out, n, &self.weight, true, &dy.data, false, 0.0, &mut dcols);
        if self.direct() {
            let (c, h, w) = cache.in_shape;
            Tensor { c, h, w, data: dcols }
        } else {
            self.col2im(&dcols, cache.in_shape, oh, ow)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvGrad {
    pub fn zeros(conv: &Conv) -> Self {
        ConvGrad {
            weight: vec![0.0; conv.weight.len()],
            bias: vec![0.0; conv.bias.len()],
        }
    }
}

pub fn relu(mut x: Tensor) -> Tensor {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

/// Zeroes `dy` where the ReLU output was not positive.
pub fn relu_backward(y: &Tensor, mut dy: Tensor) -> Tensor {
    for (g, v) in dy.data.iter_mut().zip(&y.data) {
        if *v <= 0.0 {
            *g = 0.0;
        }
    }
    dy
}

/// Nearest-neighbour upsampling by two, cropped to `h x w`; the source must be `ceil(h/2) x ceil(w/2)`.
pub fn upsample(x: &Tensor, h: usize, w: usize) -> Tensor {
    assert_eq!((x.h, x.w), (h.div_ceil(2), w.div_ceil(2)), "upsample size");
    let mut y = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = &mut y.data[c * h * w..(c + 1) * h * w];
        for yy in 0..h {
            for xx in 0..w {
                dst[yy * w + xx] = src[(yy / 2) * x.w + xx / 2];
            }
        }
    }
    y
}

pub fn upsample_backward(dy: &Tensor, src_h: usize, src_w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dy.c, src_h, src_w);
    for c in 0..dy.c {
        for yy in 0..dy.h {
            for xx in 0..dy.w {
                dx.data[(c * src_h + yy / 2) * src_w + xx / 2] += dy.data[(c * dy.h + yy) * dy.w + xx];
            }
        }
    }
    dx
}

pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!((a.h, a.w), (b.h, b.w), "concat size");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

/// Splits a concatenated gradient back into its `a` and `b` channel parts.
pub fn split(d: Tensor, a_channels: usize) -> (Tensor, Tensor) {
    let cut = a_channels * d.plane();
    let (h, w, c) = (d.h, d.w, d.c);
    let mut data = d.data;
    let tail = data.split_off(cut);
    (
        Tensor { c: a_channels, h, w, data },
        Tensor {
            c: c - a_channels,
            h,
            w,
            data: tail,
        },
    )
}

pub fn add_into(acc: &mut Tensor, other: &Tensor) {
    for (a, b) in acc.data.iter_mut().zip(&other.data) {
        *a += b;
    }
}
