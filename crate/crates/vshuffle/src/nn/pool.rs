//! Max pooling and the joint (T, H, W) global average pool.

use super::conv::conv_out_size;
use crate::error::Result;
use crate::parallel::for_each_chunk_mut;
use crate::scalar::{sc, Scalar};
use crate::tensor::{Shape, VideoTensor};

pub struct MaxPool<S: Scalar> {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Per output element: winning input offset within its (H, W) plane.
    cache: Option<(Shape, Shape, Vec<usize>)>,
    _marker: std::marker::PhantomData<S>,
}

impl<S: Scalar> MaxPool<S> {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        MaxPool {
            kernel,
            stride,
            pad,
            cache: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn out_shape(&self, s: Shape) -> Result<Shape> {
        Ok(Shape::new(
            s.n,
            s.t,
            s.c,
            conv_out_size(s.h, self.kernel, self.stride, self.pad)?,
            conv_out_size(s.w, self.kernel, self.stride, self.pad)?,
        ))
    }

    pub fn forward(&mut self, x: &VideoTensor<S>, keep_cache: bool) -> Result<VideoTensor<S>> {
        let s = x.shape();
        let out_shape = self.out_shape(s)?;
        let (oh, ow) = (out_shape.h, out_shape.w);
        let out_plane = oh * ow;
        let in_plane = s.plane_len();
        let mut out = VideoTensor::zeros(out_shape)?;
        let mut argmax = vec![0usize; out_shape.len()];
        let x_data = x.data();
        let (k, stride, pad) = (self.kernel, self.stride, self.pad);

        // Pool each (n, t, c) plane independently into a combined
        // (value, argmax) buffer so a single chunked pass stays disjoint.
        let mut combined: Vec<(S, usize)> = vec![(S::zero(), 0); out_shape.len()];
        for_each_chunk_mut(&mut combined, out_plane, |p, dst| {
            let plane = &x_data[p * in_plane..(p + 1) * in_plane];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = S::neg_infinity();
                    let mut best_idx = 0usize;
                    for ki in 0..k {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let idx = iy as usize * s.w + ix as usize;
                            let v = plane[idx];
                            if v > best {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                    dst[oy * ow + ox] = (best, best_idx);
                }
            }
        });
        for (i, (v, idx)) in combined.into_iter().enumerate() {
            out.data_mut()[i] = v;
            argmax[i] = idx;
        }

        self.cache = keep_cache.then_some((s, out_shape, argmax));
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &VideoTensor<S>) -> Result<VideoTensor<S>> {
        let (in_shape, out_shape, argmax) = self
            .cache
            .take()
            .expect("maxpool backward without cached forward");
        let in_plane = in_shape.plane_len();
        let out_plane = out_shape.plane_len();
        let go = grad_out.data();
        let mut grad_x = VideoTensor::zeros(in_shape)?;
        let argmax_ref = &argmax;
        for_each_chunk_mut(grad_x.data_mut(), in_plane, |p, gx| {
            let go_plane = &go[p * out_plane..(p + 1) * out_plane];
            let am = &argmax_ref[p * out_plane..(p + 1) * out_plane];
            for (g, &idx) in go_plane.iter().zip(am) {
                gx[idx] = gx[idx] + *g;
            }
        });
        Ok(grad_x)
    }
}

/// Averages over T, H and W jointly: (N, T, C, H, W) -> (N, 1, C, 1, 1),
/// one feature vector per clip.
pub struct GlobalAvgPool {
    cache: Option<Shape>,
}

impl Default for GlobalAvgPool {
    fn default() -> Self {
        GlobalAvgPool { cache: None }
    }
}

impl GlobalAvgPool {
    pub fn forward<S: Scalar>(
        &mut self,
        x: &VideoTensor<S>,
        keep_cache: bool,
    ) -> Result<VideoTensor<S>> {
        let s = x.shape();
        let plane = s.plane_len();
        let scale: S = sc(1.0 / (s.t * plane) as f64);
        let mut out = VideoTensor::zeros(Shape::new(s.n, 1, s.c, 1, 1))?;
        let x_data = x.data();
        for_each_chunk_mut(out.data_mut(), 1, |k, dst| {
            let (n, c) = (k / s.c, k % s.c);
            let mut acc = S::zero();
            for t in 0..s.t {
                let base = ((n * s.t + t) * s.c + c) * plane;
                for i in 0..plane {
                    acc = acc + x_data[base + i];
                }
            }
            dst[0] = acc * scale;
        });
        self.cache = keep_cache.then_some(s);
        Ok(out)
    }

    pub fn backward<S: Scalar>(&mut self, grad_out: &VideoTensor<S>) -> Result<VideoTensor<S>> {
        let s = self.cache.take().expect("gap backward without forward");
        let plane = s.plane_len();
        let scale: S = sc(1.0 / (s.t * plane) as f64);
        let go = grad_out.data();
        let mut grad_x = VideoTensor::zeros(s)?;
        for_each_chunk_mut(grad_x.data_mut(), plane, |k, gx| {
            let c = k % s.c;
            let n = k / (s.t * s.c);
            let g = go[n * s.c + c] * scale;
            gx.iter_mut().for_each(|v| *v = g);
        });
        Ok(grad_x)
    }
}
