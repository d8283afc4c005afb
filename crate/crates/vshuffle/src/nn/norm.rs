//! Batch normalization over the (N, T, H, W) axes of each channel.
//!
//! Frozen mode normalizes with running statistics in both training and
//! evaluation; the affine scale/offset still receive gradients.

use super::{Mode, Param};
use crate::error::{Error, Result};
use crate::parallel::for_each_chunk_mut;
use crate::scalar::{sc, Scalar};
use crate::tensor::VideoTensor;

struct BnCache<S: Scalar> {
    xhat: Vec<S>,
    invstd: Vec<S>,
    /// Elements per channel in the normalized batch.
    m: usize,
    batch_stats: bool,
}

pub struct BatchNorm<S: Scalar> {
    pub c: usize,
    pub eps: f64,
    pub momentum: f64,
    pub frozen: bool,
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    cache: Option<BnCache<S>>,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(name: &str, c: usize) -> Self {
        BatchNorm {
            c,
            eps: 1e-5,
            momentum: 0.1,
            frozen: false,
            gamma: Param::new(format!("{name}.gamma"), vec![c], vec![S::one(); c], false),
            beta: Param::new(format!("{name}.beta"), vec![c], vec![S::zero(); c], false),
            running_mean: vec![S::zero(); c],
            running_var: vec![S::one(); c],
            cache: None,
        }
    }

    /// Zero-init of the residual branch's final scale.
    pub fn zero_gamma(mut self) -> Self {
        self.gamma.data.iter_mut().for_each(|g| *g = S::zero());
        self
    }

    pub fn forward(
        &mut self,
        x: &VideoTensor<S>,
        mode: Mode,
        keep_cache: bool,
    ) -> Result<VideoTensor<S>> {
        let s = x.shape();
        if s.c != self.c {
            return Err(Error::InvalidDimension(format!(
                "batchnorm expects {} channels, got {}",
                self.c, s.c
            )));
        }
        let plane = s.plane_len();
        let frames = s.n * s.t;
        let m = frames * plane;
        let batch_stats = mode == Mode::Train && !self.frozen;

        let (mean, var) = if batch_stats {
            let mut mean = vec![S::zero(); self.c];
            let x_data = x.data();
            let c_total = self.c;
            for_each_chunk_mut(&mut mean, 1, |c, out| {
                let mut acc = S::zero();
                for f in 0..frames {
                    let p = &x_data[(f * c_total + c) * plane..][..plane];
                    for &v in p {
                        acc = acc + v;
                    }
                }
                out[0] = acc / sc(m as f64);
            });
            let mut var = vec![S::zero(); self.c];
            let mean_ref = &mean;
            for_each_chunk_mut(&mut var, 1, |c, out| {
                let mu = mean_ref[c];
                let mut acc = S::zero();
                for f in 0..frames {
                    let p = &x_data[(f * c_total + c) * plane..][..plane];
                    for &v in p {
                        let d = v - mu;
                        acc = acc + d * d;
                    }
                }
                out[0] = acc / sc(m as f64);
            });
            // Running statistics update.
            let mom: S = sc(self.momentum);
            let keep = S::one() - mom;
            for c in 0..self.c {
                self.running_mean[c] = keep * self.running_mean[c] + mom * mean[c];
                self.running_var[c] = keep * self.running_var[c] + mom * var[c];
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };

        let eps: S = sc(self.eps);
        let invstd: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();

        let mut out = VideoTensor::zeros(s)?;
        let mut xhat = vec![S::zero(); x.data().len()];
        {
            let x_data = x.data();
            let c_total = self.c;
            for_each_chunk_mut(&mut xhat, plane, |k, xh| {
                let c = k % c_total;
                let mu = mean[c];
                let istd = invstd[c];
                let src = &x_data[k * plane..(k + 1) * plane];
                for (o, &v) in xh.iter_mut().zip(src) {
                    *o = (v - mu) * istd;
                }
            });
            let gamma = &self.gamma.data;
            let beta = &self.beta.data;
            let xhat_ref = &xhat;
            for_each_chunk_mut(out.data_mut(), plane, |k, o| {
                let c = k % c_total;
                let g = gamma[c];
                let b = beta[c];
                let src = &xhat_ref[k * plane..(k + 1) * plane];
                for (ov, &v) in o.iter_mut().zip(src) {
                    *ov = g * v + b;
                }
            });
        }

        self.cache = keep_cache.then_some(BnCache {
            xhat,
            invstd,
            m,
            batch_stats,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &VideoTensor<S>) -> Result<VideoTensor<S>> {
        let cache = self
            .cache
            .take()
            .expect("batchnorm backward without cached forward");
        let s = grad_out.shape();
        let plane = s.plane_len();
        let frames = s.n * s.t;
        let c_total = self.c;
        let go = grad_out.data();
        let xhat = &cache.xhat;

        let mut sum_dy = vec![S::zero(); c_total];
        let mut sum_dy_xhat = vec![S::zero(); c_total];
        for_each_chunk_mut(&mut sum_dy, 1, |c, out| {
            let mut acc = S::zero();
            for f in 0..frames {
                let p = &go[(f * c_total + c) * plane..][..plane];
                for &v in p {
                    acc = acc + v;
                }
            }
            out[0] = acc;
        });
        for_each_chunk_mut(&mut sum_dy_xhat, 1, |c, out| {
            let mut acc = S::zero();
            for f in 0..frames {
                let base = (f * c_total + c) * plane;
                for i in 0..plane {
                    acc = acc + go[base + i] * xhat[base + i];
                }
            }
            out[0] = acc;
        });

        for c in 0..c_total {
            self.gamma.grad[c] = self.gamma.grad[c] + sum_dy_xhat[c];
            self.beta.grad[c] = self.beta.grad[c] + sum_dy[c];
        }

        let mut grad_x = VideoTensor::zeros(s)?;
        let gamma = &self.gamma.data;
        let invstd = &cache.invstd;
        if cache.batch_stats {
            let m: S = sc(cache.m as f64);
            for_each_chunk_mut(grad_x.data_mut(), plane, |k, gx| {
                let c = k % c_total;
                let scale = gamma[c] * invstd[c] / m;
                let sdy = sum_dy[c];
                let sdyx = sum_dy_xhat[c];
                let base = k * plane;
                for i in 0..plane {
                    gx[i] = scale * (m * go[base + i] - sdy - xhat[base + i] * sdyx);
                }
            });
        } else {
            for_each_chunk_mut(grad_x.data_mut(), plane, |k, gx| {
                let c = k % c_total;
                let scale = gamma[c] * invstd[c];
                let base = k * plane;
                for i in 0..plane {
                    gx[i] = scale * go[base + i];
                }
            });
        }
        Ok(grad_x)
    }
}
