//! 2D convolution (cross-correlation) applied independently to each of
//! the N*T frames, via im2col plus a small row-major GEMM.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Param;
use crate::error::{Error, Result};
use crate::parallel::for_each_chunk_mut;
use crate::scalar::{sc, Scalar};
use crate::tensor::{Shape, VideoTensor};

pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if kernel > input + 2 * pad {
        return Err(Error::InvalidDimension(format!(
            "kernel {kernel} larger than padded input {}",
            input + 2 * pad
        )));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

/// col[(ic*kh*kw + ki*kw + kj) * P + p] = frame[ic, oy*s+ki-pad, ox*s+kj-pad]
fn im2col_frame<S: Scalar>(
    frame: &[S],
    in_c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    col: &mut [S],
) {
    let p_total = oh * ow;
    for ic in 0..in_c {
        let plane = &frame[ic * h * w..(ic + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut col[(ic * kh * kw + ki * kw + kj) * p_total..][..p_total];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let out_row = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, out) in out_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *out = if ix < 0 || ix >= w as isize {
                            S::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatters a column matrix back onto a frame, accumulating.
fn col2im_frame<S: Scalar>(
    col: &[S],
    in_c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    frame: &mut [S],
) {
    let p_total = oh * ow;
    for ic in 0..in_c {
        let plane = &mut frame[ic * h * w..(ic + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &col[(ic * kh * kw + ki * kw + kj) * p_total..][..p_total];
                for oy in 0..oh {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// c (m x n) = a (m x k) * b (k x n), all row-major. `c` must be zeroed
/// by the caller if a fresh product is wanted.
fn gemm_acc<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

struct ConvCache<S: Scalar> {
    cols: Vec<S>,
    frames: usize,
    oh: usize,
    ow: usize,
    in_shape: Shape,
}

/// Per-frame 2D convolution layer with explicit forward/backward.
pub struct Conv2d<S: Scalar> {
    pub in_c: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param<S>,
    pub bias: Option<Param<S>>,
    cache: Option<ConvCache<S>>,
}

impl<S: Scalar> Conv2d<S> {
    /// Fan-out scaled Gaussian init: std = sqrt(2 / (out * kh * kw)).
    pub fn new<R: Rng>(
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (out_c * kernel * kernel) as f64).sqrt();
        let data: Vec<S> = (0..out_c * in_c * kernel * kernel)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                sc(g * std)
            })
            .collect();
        let weight = Param::new(
            format!("{name}.weight"),
            vec![out_c, in_c, kernel, kernel],
            data,
            true,
        );
        let bias = bias.then(|| {
            Param::new(
                format!("{name}.bias"),
                vec![out_c],
                vec![S::zero(); out_c],
                false,
            )
        });
        Conv2d {
            in_c,
            out_c,
            kh: kernel,
            kw: kernel,
            stride,
            pad,
            weight,
            bias,
            cache: None,
        }
    }

    /// Builds a layer around explicit weights; used by tests.
    pub fn from_weights(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        weights: Vec<S>,
        bias: Option<Vec<S>>,
    ) -> Self {
        let weight = Param::new(
            "conv.weight",
            vec![out_c, in_c, kernel, kernel],
            weights,
            true,
        );
        let bias = bias.map(|b| Param::new("conv.bias", vec![out_c], b, false));
        Conv2d {
            in_c,
            out_c,
            kh: kernel,
            kw: kernel,
            stride,
            pad,
            weight,
            bias,
            cache: None,
        }
    }

    pub fn out_shape(&self, s: Shape) -> Result<Shape> {
        Ok(Shape::new(
            s.n,
            s.t,
            self.out_c,
            conv_out_size(s.h, self.kh, self.stride, self.pad)?,
            conv_out_size(s.w, self.kw, self.stride, self.pad)?,
        ))
    }

    pub fn forward(&mut self, x: &VideoTensor<S>, keep_cache: bool) -> Result<VideoTensor<S>> {
        let s = x.shape();
        if s.c != self.in_c {
            return Err(Error::InvalidDimension(format!(
                "conv expects {} input channels, got {}",
                self.in_c, s.c
            )));
        }
        let out_shape = self.out_shape(s)?;
        let (oh, ow) = (out_shape.h, out_shape.w);
        let p_total = oh * ow;
        let k_total = self.in_c * self.kh * self.kw;
        let frames = s.n * s.t;
        let frame_len = s.frame_len();

        let mut cols = vec![S::zero(); frames * k_total * p_total];
        let x_data = x.data();
        for_each_chunk_mut(&mut cols, k_total * p_total, |f, col| {
            im2col_frame(
                &x_data[f * frame_len..(f + 1) * frame_len],
                self.in_c,
                s.h,
                s.w,
                self.kh,
                self.kw,
                self.stride,
                self.pad,
                oh,
                ow,
                col,
            );
        });

        let mut out = VideoTensor::zeros(out_shape)?;
        let w_data = &self.weight.data;
        let bias = self.bias.as_ref().map(|b| b.data.as_slice());
        for_each_chunk_mut(out.data_mut(), self.out_c * p_total, |f, o| {
            let col = &cols[f * k_total * p_total..(f + 1) * k_total * p_total];
            gemm_acc(self.out_c, k_total, p_total, w_data, col, o);
            if let Some(b) = bias {
                for oc in 0..self.out_c {
                    let bv = b[oc];
                    o[oc * p_total..(oc + 1) * p_total]
                        .iter_mut()
                        .for_each(|v| *v = *v + bv);
                }
            }
        });

        self.cache = keep_cache.then_some(ConvCache {
            cols,
            frames,
            oh,
            ow,
            in_shape: s,
        });
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &VideoTensor<S>) -> Result<VideoTensor<S>> {
        let cache = self
            .cache
            .take()
            .expect("conv backward without cached forward");
        let (oh, ow) = (cache.oh, cache.ow);
        let p_total = oh * ow;
        let k_total = self.in_c * self.kh * self.kw;
        let frames = cache.frames;
        let go = grad_out.data();
        debug_assert_eq!(go.len(), frames * self.out_c * p_total);

        // Weight gradient, parallel over output channels (disjoint rows).
        let cols = &cache.cols;
        for_each_chunk_mut(&mut self.weight.grad, k_total, |oc, gw| {
            for f in 0..frames {
                let go_row = &go[(f * self.out_c + oc) * p_total..][..p_total];
                let col = &cols[f * k_total * p_total..];
                for (kk, g) in gw.iter_mut().enumerate() {
                    let col_row = &col[kk * p_total..(kk + 1) * p_total];
                    let mut acc = S::zero();
                    for (a, b) in go_row.iter().zip(col_row) {
                        acc = acc + *a * *b;
                    }
                    *g = *g + acc;
                }
            }
        });

        if let Some(bias) = self.bias.as_mut() {
            for_each_chunk_mut(&mut bias.grad, 1, |oc, gb| {
                let mut acc = S::zero();
                for f in 0..frames {
                    let go_row = &go[(f * self.out_c + oc) * p_total..][..p_total];
                    for &v in go_row {
                        acc = acc + v;
                    }
                }
                gb[0] = gb[0] + acc;
            });
        }

        // Input gradient, parallel over frames (disjoint output chunks).
        let s = cache.in_shape;
        let frame_len = s.frame_len();
        let mut grad_x = VideoTensor::zeros(s)?;
        let w_data = &self.weight.data;
        let (in_c, kh, kw, stride, pad, out_c) =
            (self.in_c, self.kh, self.kw, self.stride, self.pad, self.out_c);
        for_each_chunk_mut(grad_x.data_mut(), frame_len, |f, gx| {
            let mut dcol = vec![S::zero(); k_total * p_total];
            let go_frame = &go[f * out_c * p_total..(f + 1) * out_c * p_total];
            // dcol = W^T (K x out_c) * grad_out (out_c x P)
            for oc in 0..out_c {
                let go_row = &go_frame[oc * p_total..(oc + 1) * p_total];
                for kk in 0..k_total {
                    let wv = w_data[oc * k_total + kk];
                    if wv == S::zero() {
                        continue;
                    }
                    let d_row = &mut dcol[kk * p_total..(kk + 1) * p_total];
                    for (d, &g) in d_row.iter_mut().zip(go_row) {
                        *d = *d + wv * g;
                    }
                }
            }
            col2im_frame(&dcol, in_c, s.h, s.w, kh, kw, stride, pad, oh, ow, gx);
        });
        Ok(grad_x)
    }

    pub fn param_count(&self) -> u64 {
        self.weight.len() as u64 + self.bias.as_ref().map_or(0, |b| b.len() as u64)
    }
}
