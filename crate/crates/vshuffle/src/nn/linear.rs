//! Fully connected classification head with dropout on its input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Mode, Param};
use crate::error::{Error, Result};
use crate::scalar::{sc, Scalar};
use crate::tensor::{Shape, VideoTensor};

/// Dense layer over (N, 1, C, 1, 1) feature vectors.
pub struct Linear<S: Scalar> {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Param<S>, // (out, in)
    pub bias: Param<S>,
    cache: Option<Vec<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng>(name: &str, in_f: usize, out_f: usize, rng: &mut R) -> Self {
        let data: Vec<S> = (0..out_f * in_f)
            .map(|_| {
                let g: f64 = StandardNormal.sample(rng);
                sc(g * 0.01)
            })
            .collect();
        Linear {
            in_f,
            out_f,
            weight: Param::new(format!("{name}.weight"), vec![out_f, in_f], data, true),
            bias: Param::new(
                format!("{name}.bias"),
                vec![out_f],
                vec![S::zero(); out_f],
                false,
            ),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &VideoTensor<S>, keep_cache: bool) -> Result<VideoTensor<S>> {
        let s = x.shape();
        if s.c != self.in_f || s.t != 1 || s.h != 1 || s.w != 1 {
            return Err(Error::InvalidDimension(format!(
                "linear expects (N, 1, {}, 1, 1), got {}",
                self.in_f, s
            )));
        }
        let mut out = VideoTensor::zeros(Shape::new(s.n, 1, self.out_f, 1, 1))?;
        for n in 0..s.n {
            let xin = &x.data()[n * self.in_f..(n + 1) * self.in_f];
            let o = &mut out.data_mut()[n * self.out_f..(n + 1) * self.out_f];
            for k in 0..self.out_f {
                let wrow = &self.weight.data[k * self.in_f..(k + 1) * self.in_f];
                let mut acc = self.bias.data[k];
                for (w, v) in wrow.iter().zip(xin) {
                    acc = acc + *w * *v;
                }
                o[k] = acc;
            }
        }
        self.cache = keep_cache.then(|| x.data().to_vec());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &VideoTensor<S>) -> Result<VideoTensor<S>> {
        let x = self.cache.take().expect("linear backward without forward");
        let n_batch = grad_out.shape().n;
        let go = grad_out.data();
        let mut grad_x =
            VideoTensor::zeros(Shape::new(n_batch, 1, self.in_f, 1, 1))?;
        for n in 0..n_batch {
            let g = &go[n * self.out_f..(n + 1) * self.out_f];
            let xin = &x[n * self.in_f..(n + 1) * self.in_f];
            for k in 0..self.out_f {
                let gk = g[k];
                self.bias.grad[k] = self.bias.grad[k] + gk;
                let wgrad = &mut self.weight.grad[k * self.in_f..(k + 1) * self.in_f];
                for (wg, v) in wgrad.iter_mut().zip(xin) {
                    *wg = *wg + gk * *v;
                }
            }
            let gx = &mut grad_x.data_mut()[n * self.in_f..(n + 1) * self.in_f];
            for k in 0..self.out_f {
                let gk = g[k];
                let wrow = &self.weight.data[k * self.in_f..(k + 1) * self.in_f];
                for (o, w) in gx.iter_mut().zip(wrow) {
                    *o = *o + gk * *w;
                }
            }
        }
        Ok(grad_x)
    }
}

/// Inverted dropout: training scales kept values by 1/(1-p).
pub struct Dropout<S: Scalar> {
    pub p: f64,
    rng: ChaCha8Rng,
    cache: Option<Vec<S>>,
}

impl<S: Scalar> Dropout<S> {
    pub fn new(p: f64, seed: u64) -> Self {
        Dropout {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: None,
        }
    }

    pub fn forward(
        &mut self,
        x: &VideoTensor<S>,
        mode: Mode,
        keep_cache: bool,
    ) -> VideoTensor<S> {
        if mode == Mode::Eval || self.p == 0.0 {
            self.cache = keep_cache.then(|| vec![S::one(); x.data().len()]);
            return x.clone();
        }
        let scale = sc::<S>(1.0 / (1.0 - self.p));
        let mask: Vec<S> = (0..x.data().len())
            .map(|_| {
                if self.rng.gen::<f64>() < self.p {
                    S::zero()
                } else {
                    scale
                }
            })
            .collect();
        let mut out = x.clone();
        for (v, m) in out.data_mut().iter_mut().zip(&mask) {
            *v = *v * *m;
        }
        self.cache = keep_cache.then_some(mask);
        out
    }

    pub fn backward(&mut self, grad_out: &VideoTensor<S>) -> VideoTensor<S> {
        let mask = self.cache.take().expect("dropout backward without forward");
        let mut grad = grad_out.clone();
        for (v, m) in grad.data_mut().iter_mut().zip(&mask) {
            *v = *v * *m;
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn randn(shape: Shape, seed: u64) -> VideoTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        VideoTensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let (n, cin, cout) = (3, 5, 4);
        let shape = Shape::new(n, 1, cin, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lin = Linear::<f64>::new("head", cin, cout, &mut rng);
        let x = randn(shape, 2);
        let y = lin.forward(&x, true).unwrap();
        let readout = randn(y.shape(), 3);
        let gx = lin.backward(&readout).unwrap();
        let wgrad = lin.weight.grad.clone();

        let loss = |lin: &mut Linear<f64>, x: &VideoTensor<f64>| -> f64 {
            lin.forward(x, false)
                .unwrap()
                .data()
                .iter()
                .zip(readout.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-5;
        for i in 0..shape.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            let fd = (loss(&mut lin, &plus) - loss(&mut lin, &minus)) / (2.0 * h);
            assert!((gx.data()[i] - fd).abs() <= 1e-8);
        }
        for i in 0..lin.weight.len() {
            let orig = lin.weight.data[i];
            lin.weight.data[i] = orig + h;
            let up = loss(&mut lin, &x);
            lin.weight.data[i] = orig - h;
            let down = loss(&mut lin, &x);
            lin.weight.data[i] = orig;
            assert!((wgrad[i] - (up - down) / (2.0 * h)).abs() <= 1e-7);
        }
    }

    #[test]
    fn dropout_eval_is_identity() {
        let x = randn(Shape::new(2, 1, 8, 1, 1), 4);
        let mut d = Dropout::new(0.8, 0);
        assert_eq!(d.forward(&x, Mode::Eval, false), x);
    }

    #[test]
    fn dropout_train_preserves_mean_roughly() {
        let x = VideoTensor::<f64>::filled(Shape::new(1, 1, 20000, 1, 1), 1.0).unwrap();
        let mut d = Dropout::new(0.5, 7);
        let y = d.forward(&x, Mode::Train, false);
        let mean: f64 = y.data().iter().sum::<f64>() / y.data().len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }
}
