//! Rectified linear activation.

use crate::parallel::for_each_chunk_mut;
use crate::scalar::Scalar;
use crate::tensor::VideoTensor;

const CHUNK: usize = 4096;

pub struct Relu<S: Scalar> {
    cache: Option<Vec<S>>,
}

impl<S: Scalar> Default for Relu<S> {
    fn default() -> Self {
        Relu { cache: None }
    }
}

impl<S: Scalar> Relu<S> {
    pub fn forward(&mut self, x: &VideoTensor<S>, keep_cache: bool) -> VideoTensor<S> {
        let mut out = x.clone();
        for_each_chunk_mut(out.data_mut(), CHUNK, |_, c| {
            for v in c.iter_mut() {
                if *v < S::zero() {
                    *v = S::zero();
                }
            }
        });
        self.cache = keep_cache.then(|| x.data().to_vec());
        out
    }

    pub fn backward(&mut self, grad_out: &VideoTensor<S>) -> VideoTensor<S> {
        let x = self.cache.take().expect("relu backward without forward");
        let mut grad = grad_out.clone();
        let x_ref = &x;
        for_each_chunk_mut(grad.data_mut(), CHUNK, |k, c| {
            let base = k * CHUNK;
            for (i, v) in c.iter_mut().enumerate() {
                if x_ref[base + i] <= S::zero() {
                    *v = S::zero();
                }
            }
        });
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn relu_clamps_negatives() {
        let x =
            VideoTensor::<f32>::from_vec(Shape::new(1, 1, 3, 1, 1), vec![-1.0, 0.0, 2.0]).unwrap();
        let y = Relu::default().forward(&x, false);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn backward_masks_gradient() {
        let x = VideoTensor::<f64>::from_vec(
            Shape::new(1, 1, 4, 1, 1),
            vec![-0.5, 0.5, -2.0, 3.0],
        )
        .unwrap();
        let mut relu = Relu::default();
        relu.forward(&x, true);
        let go =
            VideoTensor::<f64>::from_vec(Shape::new(1, 1, 4, 1, 1), vec![1.0, 1.0, 1.0, 1.0])
                .unwrap();
        let gx = relu.backward(&go);
        assert_eq!(gx.data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_matches_finite_differences_away_from_kink() {
        // Inputs kept away from zero so the step never crosses the kink.
        let vals = vec![-1.3, 0.8, 2.1, -0.4, 0.6, -2.2];
        let shape = Shape::new(1, 1, 6, 1, 1);
        let x = VideoTensor::<f64>::from_vec(shape, vals.clone()).unwrap();
        let readout = vec![0.7, -1.1, 0.3, 0.9, -0.2, 1.4];
        let mut relu = Relu::default();
        relu.forward(&x, true);
        let go = VideoTensor::from_vec(shape, readout.clone()).unwrap();
        let gx = relu.backward(&go);
        let loss = |data: &[f64]| -> f64 {
            let t = VideoTensor::from_vec(shape, data.to_vec()).unwrap();
            Relu::default()
                .forward(&t, false)
                .data()
                .iter()
                .zip(&readout)
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-4;
        for i in 0..vals.len() {
            let mut plus = vals.clone();
            plus[i] += h;
            let mut minus = vals.clone();
            minus[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = gx.data()[i];
            assert!((a - fd).abs() <= 1e-8, "element {i}: {a} vs {fd}");
        }
    }
}
