//! Temporal modeling by pure data movement: video shuffle and its inverse,
//! the temporal shift module, and sparse segment sampling.
//!
//! Video shuffle splits each frame's channels into `groups` equal slices of
//! width eta and rebuilds frame `i` by gathering slice `i` from every frame.
//! With `groups == T` (the default) this is a transpose of the
//! (frame, group) index pair and therefore an involution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::parallel::for_each_chunk_mut;
use crate::scalar::Scalar;
use crate::tensor::VideoTensor;

/// Index arithmetic for video shuffle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShuffleSpec {
    pub t_frames: usize,
    pub channels: usize,
    pub groups: usize,
    /// Channel width of each group: C / groups.
    pub eta: usize,
}

impl ShuffleSpec {
    /// Default configuration: one group per frame.
    pub fn new(t_frames: usize, channels: usize) -> Result<Self> {
        Self::with_groups(t_frames, channels, t_frames)
    }

    pub fn with_groups(t_frames: usize, channels: usize, groups: usize) -> Result<Self> {
        if t_frames == 0 || channels == 0 || groups == 0 {
            return Err(Error::InvalidDimension(
                "shuffle spec dims must be >= 1".into(),
            ));
        }
        if channels % groups != 0 {
            return Err(Error::Divisibility { channels, groups });
        }
        Ok(ShuffleSpec {
            t_frames,
            channels,
            groups,
            eta: channels / groups,
        })
    }
}

fn check_spec<S: Scalar>(x: &VideoTensor<S>, spec: &ShuffleSpec) -> Result<()> {
    let s = x.shape();
    if s.t != spec.t_frames {
        return Err(Error::InvalidDimension(format!(
            "tensor has T={} but spec expects T={}",
            s.t, spec.t_frames
        )));
    }
    if s.c != spec.channels {
        return Err(Error::InvalidDimension(format!(
            "tensor has C={} but spec expects C={}",
            s.c, spec.channels
        )));
    }
    Ok(())
}

/// The (frame, group) blocks of one sample form a T x G grid in layout
/// order. Forward shuffle reads that grid transposed; the inverse reads
/// the transpose back. Both are pure block copies.
fn permute_blocks<S: Scalar>(
    x: &VideoTensor<S>,
    spec: &ShuffleSpec,
    forward: bool,
) -> Result<VideoTensor<S>> {
    check_spec(x, spec)?;
    let s = x.shape();
    let block = spec.eta * s.plane_len();
    let t = spec.t_frames;
    let g = spec.groups;
    let blocks_per_sample = t * g;
    let src_data = x.data();
    let mut out = VideoTensor::zeros(s)?;
    for_each_chunk_mut(out.data_mut(), block, |bid, dst| {
        let n = bid / blocks_per_sample;
        let k = bid % blocks_per_sample;
        let src_k = if forward {
            (k % t) * g + k / t
        } else {
            (k % g) * t + k / g
        };
        let src = (n * blocks_per_sample + src_k) * block;
        dst.copy_from_slice(&src_data[src..src + block]);
    });
    Ok(out)
}

/// Reassembles frame `i` from the `i`-th channel group of every frame.
/// No arithmetic is performed on values: zero parameters, zero FLOPs.
pub fn video_shuffle<S: Scalar>(x: &VideoTensor<S>, spec: &ShuffleSpec) -> Result<VideoTensor<S>> {
    permute_blocks(x, spec, true)
}

/// Restores the original per-frame channel layout. Coincides with
/// `video_shuffle` itself when `groups == t_frames`.
pub fn inverse_video_shuffle<S: Scalar>(
    x: &VideoTensor<S>,
    spec: &ShuffleSpec,
) -> Result<VideoTensor<S>> {
    permute_blocks(x, spec, false)
}

/// Jacobian of a permutation is the inverse permutation.
pub fn shuffle_backward<S: Scalar>(
    grad_out: &VideoTensor<S>,
    spec: &ShuffleSpec,
) -> Result<VideoTensor<S>> {
    inverse_video_shuffle(grad_out, spec)
}

/// Channel fractions moved one frame forward / backward, zero-padded at
/// the clip boundaries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftSpec {
    pub fraction_fwd: f64,
    pub fraction_bwd: f64,
}

impl ShiftSpec {
    pub fn new(fraction_fwd: f64, fraction_bwd: f64) -> Result<Self> {
        for f in [fraction_fwd, fraction_bwd] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidFraction(format!("{f} outside [0, 1]")));
            }
        }
        if fraction_fwd + fraction_bwd > 1.0 {
            return Err(Error::InvalidFraction(format!(
                "{fraction_fwd} + {fraction_bwd} > 1"
            )));
        }
        Ok(ShiftSpec {
            fraction_fwd,
            fraction_bwd,
        })
    }

    /// 1/8 of channels each way, the cited module's convention.
    pub fn default_eighth() -> Self {
        ShiftSpec {
            fraction_fwd: 1.0 / 8.0,
            fraction_bwd: 1.0 / 8.0,
        }
    }

    pub fn channel_split(&self, c: usize) -> (usize, usize) {
        (
            (self.fraction_fwd * c as f64).floor() as usize,
            (self.fraction_bwd * c as f64).floor() as usize,
        )
    }
}

/// Temporal shift with zero padding: the first `floor(fraction_fwd*C)`
/// channels of frame t take frame t-1's values, the next
/// `floor(fraction_bwd*C)` take frame t+1's, the rest copy through.
pub fn temporal_shift<S: Scalar>(x: &VideoTensor<S>, spec: &ShiftSpec) -> Result<VideoTensor<S>> {
    let s = x.shape();
    let (c_fwd, c_bwd) = spec.channel_split(s.c);
    let plane = s.plane_len();
    let frame = s.frame_len();
    let src_data = x.data();
    let mut out = VideoTensor::zeros(s)?;
    for_each_chunk_mut(out.data_mut(), frame, |fid, dst| {
        let n = fid / s.t;
        let t = fid % s.t;
        let base = n * s.t;
        // Forward-shifted channels come from frame t-1.
        if t > 0 {
            let src = (base + t - 1) * frame;
            dst[..c_fwd * plane].copy_from_slice(&src_data[src..src + c_fwd * plane]);
        }
        // Backward-shifted channels come from frame t+1.
        if t + 1 < s.t {
            let src = (base + t + 1) * frame + c_fwd * plane;
            dst[c_fwd * plane..(c_fwd + c_bwd) * plane]
                .copy_from_slice(&src_data[src..src + c_bwd * plane]);
        }
        // Remaining channels copy through.
        let rest = (c_fwd + c_bwd) * plane;
        let src = fid * frame + rest;
        dst[rest..].copy_from_slice(&src_data[src..src + frame - rest]);
    });
    Ok(out)
}

/// Gradient of `temporal_shift`: each shifted range routes back the
/// opposite way, boundaries zero-filled.
pub fn temporal_shift_backward<S: Scalar>(
    grad_out: &VideoTensor<S>,
    spec: &ShiftSpec,
) -> Result<VideoTensor<S>> {
    let s = grad_out.shape();
    let (c_fwd, c_bwd) = spec.channel_split(s.c);
    let plane = s.plane_len();
    let frame = s.frame_len();
    let src_data = grad_out.data();
    let mut out = VideoTensor::zeros(s)?;
    for_each_chunk_mut(out.data_mut(), frame, |fid, dst| {
        let n = fid / s.t;
        let t = fid % s.t;
        let base = n * s.t;
        if t + 1 < s.t {
            let src = (base + t + 1) * frame;
            dst[..c_fwd * plane].copy_from_slice(&src_data[src..src + c_fwd * plane]);
        }
        if t > 0 {
            let src = (base + t - 1) * frame + c_fwd * plane;
            dst[c_fwd * plane..(c_fwd + c_bwd) * plane]
                .copy_from_slice(&src_data[src..src + c_bwd * plane]);
        }
        let rest = (c_fwd + c_bwd) * plane;
        let src = fid * frame + rest;
        dst[rest..].copy_from_slice(&src_data[src..src + frame - rest]);
    });
    Ok(out)
}

/// Frame selection mode for sparse segment sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    TrainRandom,
    EvalCenter,
}

#[derive(Clone, Copy, Debug)]
pub struct SamplerSpec {
    pub total_frames: usize,
    pub num_segments: usize,
    pub mode: SampleMode,
    pub seed: u64,
}

/// Sparse segment-based sampling: the video is split into
/// `num_segments` equal spans (remainder to the leading spans) and one
/// frame is drawn per span: the span center in eval mode, a seeded
/// uniform draw in train mode. Videos shorter than `num_segments` map
/// each segment to the end of its fractional span, repeating frames.
pub fn segment_sample(spec: &SamplerSpec) -> Result<Vec<usize>> {
    if spec.num_segments == 0 {
        return Err(Error::InvalidDimension("num_segments must be >= 1".into()));
    }
    if spec.total_frames == 0 {
        return Err(Error::InvalidDimension("total_frames must be >= 1".into()));
    }
    let total = spec.total_frames;
    let segs = spec.num_segments;
    if total < segs {
        return Ok((0..segs)
            .map(|s| ((s + 1) * total / segs).min(total - 1))
            .collect());
    }
    let base = total / segs;
    let rem = total % segs;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut lo = 0usize;
    let mut out = Vec::with_capacity(segs);
    for s in 0..segs {
        let hi = lo + base + usize::from(s < rem);
        let idx = match spec.mode {
            SampleMode::EvalCenter => (lo + hi) / 2,
            SampleMode::TrainRandom => rng.gen_range(lo..hi),
        };
        out.push(idx);
        lo = hi;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_tensor(shape: Shape, seed: u64) -> VideoTensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        VideoTensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn shuffle_t2_c2_manual() {
        // Frames f1=(1,2), f2=(3,4) with eta=1 become (1,3) and (2,4).
        let x = VideoTensor::from_vec(Shape::new(1, 2, 2, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = ShuffleSpec::new(2, 2).unwrap();
        let y = video_shuffle(&x, &spec).unwrap();
        assert_eq!(y.data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn shuffle_t1_identity() {
        let x = random_tensor(Shape::new(2, 1, 6, 3, 3), 1);
        let spec = ShuffleSpec::new(1, 6).unwrap();
        assert_eq!(video_shuffle(&x, &spec).unwrap(), x);
    }

    #[test]
    fn shuffle_rejects_indivisible() {
        assert!(matches!(
            ShuffleSpec::new(3, 4),
            Err(Error::Divisibility { .. })
        ));
    }

    #[test]
    fn shuffle_preserves_value_multiset() {
        // Sort-and-compare oracle; shuffle is a permutation.
        let x = random_tensor(Shape::new(2, 4, 8, 3, 3), 7);
        let spec = ShuffleSpec::new(4, 8).unwrap();
        let y = video_shuffle(&x, &spec).unwrap();
        let (xs, ys) = (x.sorted_values(), y.sorted_values());
        assert_eq!(xs, ys);
        // Identical sorted data summed in identical order gives the
        // bitwise-same norm.
        let norm = |v: &[f32]| v.iter().map(|&a| a as f64 * a as f64).sum::<f64>().sqrt();
        assert_eq!(norm(&xs), norm(&ys));
    }

    #[test]
    fn inverse_round_trip() {
        let x = random_tensor(Shape::new(1, 8, 16, 4, 4), 3);
        let spec = ShuffleSpec::new(8, 16).unwrap();
        let y = inverse_video_shuffle(&video_shuffle(&x, &spec).unwrap(), &spec).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn involution_when_groups_equal_frames() {
        // Enumerate the index map for T=4, C=8 and verify pi . pi = id,
        // then check the tensor-level consequence.
        let t = 4usize;
        let g = 4usize;
        let map = |k: usize| (k % t) * g + k / t;
        for k in 0..t * g {
            assert_eq!(map(map(k)), k);
        }
        let x = random_tensor(Shape::new(2, 4, 8, 2, 2), 11);
        let spec = ShuffleSpec::new(4, 8).unwrap();
        let fwd = video_shuffle(&x, &spec).unwrap();
        let inv = inverse_video_shuffle(&x, &spec).unwrap();
        assert_eq!(fwd, inv);
        assert_eq!(video_shuffle(&fwd, &spec).unwrap(), x);
    }

    #[test]
    fn non_default_groups_round_trip() {
        let x = random_tensor(Shape::new(1, 3, 8, 2, 2), 5);
        let spec = ShuffleSpec::with_groups(3, 8, 2).unwrap();
        let y = video_shuffle(&x, &spec).unwrap();
        assert_eq!(x.sorted_values(), y.sorted_values());
        assert_eq!(inverse_video_shuffle(&y, &spec).unwrap(), x);
    }

    #[test]
    fn batch_independence() {
        let spec = ShuffleSpec::new(4, 8).unwrap();
        let a = random_tensor(Shape::new(1, 4, 8, 3, 3), 21);
        let b = random_tensor(Shape::new(1, 4, 8, 3, 3), 22);
        let mut stacked = Vec::new();
        stacked.extend_from_slice(a.data());
        stacked.extend_from_slice(b.data());
        let batch = VideoTensor::from_vec(Shape::new(2, 4, 8, 3, 3), stacked).unwrap();
        let shuffled = video_shuffle(&batch, &spec).unwrap();
        let sa = video_shuffle(&a, &spec).unwrap();
        let sb = video_shuffle(&b, &spec).unwrap();
        let half = sa.data().len();
        assert_eq!(&shuffled.data()[..half], sa.data());
        assert_eq!(&shuffled.data()[half..], sb.data());
    }

    #[test]
    fn backward_undoes_forward() {
        let x = random_tensor(Shape::new(2, 4, 8, 2, 2), 31);
        let spec = ShuffleSpec::new(4, 8).unwrap();
        let y = video_shuffle(&x, &spec).unwrap();
        assert_eq!(shuffle_backward(&y, &spec).unwrap(), x);
    }

    #[test]
    fn backward_routes_one_hot() {
        // One-hot grad at a shuffled position lands at the original position.
        let shape = Shape::new(1, 2, 4, 1, 1);
        let spec = ShuffleSpec::new(2, 4).unwrap();
        // Trace element at input (t=1, c=0) through the forward map.
        let mut x = VideoTensor::<f32>::zeros(shape).unwrap();
        *x.at_mut(0, 1, 0, 0, 0) = 1.0;
        let fwd = video_shuffle(&x, &spec).unwrap();
        let grad_in = shuffle_backward(&fwd, &spec).unwrap();
        assert_eq!(grad_in, x);
    }

    #[test]
    fn shuffle_finite_difference_check() {
        // Central differences through a fixed linear readout; the shuffle
        // Jacobian is an exact permutation so this holds at 1e-10 in f64.
        let shape = Shape::new(1, 4, 8, 2, 2);
        let spec = ShuffleSpec::new(4, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..shape.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let readout: Vec<f64> = (0..shape.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let loss = |data: &[f64]| -> f64 {
            let t = VideoTensor::from_vec(shape, data.to_vec()).unwrap();
            let y = video_shuffle(&t, &spec).unwrap();
            y.data().iter().zip(&readout).map(|(a, b)| a * b).sum()
        };
        // Analytic gradient: backward of the readout vector.
        let grad_out = VideoTensor::from_vec(shape, readout.clone()).unwrap();
        let analytic = shuffle_backward(&grad_out, &spec).unwrap();
        // The readout is linear in x, so central differences are exact
        // for any h; a unit step avoids cancellation rounding entirely.
        let h = 1.0;
        for i in 0..shape.len() {
            let mut plus = x.clone();
            plus[i] += h;
            let mut minus = x.clone();
            minus[i] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let denom = a.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((a - fd) / denom).abs() <= 1e-10,
                "element {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn shift_forward_single_channel() {
        let x = VideoTensor::from_vec(Shape::new(1, 4, 1, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = ShiftSpec::new(1.0, 0.0).unwrap();
        let y = temporal_shift(&x, &spec).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn shift_backward_single_channel() {
        let x = VideoTensor::from_vec(Shape::new(1, 4, 1, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = ShiftSpec::new(0.0, 1.0).unwrap();
        let y = temporal_shift(&x, &spec).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 4.0, 0.0]);
    }

    #[test]
    fn shift_zero_fractions_identity() {
        let x = random_tensor(Shape::new(2, 4, 8, 3, 3), 41);
        let spec = ShiftSpec::new(0.0, 0.0).unwrap();
        assert_eq!(temporal_shift(&x, &spec).unwrap(), x);
    }

    #[test]
    fn shift_rejects_oversized_fractions() {
        assert!(ShiftSpec::new(0.7, 0.7).is_err());
        assert!(ShiftSpec::new(-0.1, 0.0).is_err());
        assert!(ShiftSpec::new(1.2, 0.0).is_err());
    }

    #[test]
    fn shift_gradient_matches_transpose() {
        // <shift(x), y> == <x, shift_backward(y)> for the linear map.
        let spec = ShiftSpec::default_eighth();
        let x = random_tensor(Shape::new(1, 4, 16, 2, 2), 51);
        let y = random_tensor(Shape::new(1, 4, 16, 2, 2), 52);
        let lhs: f64 = temporal_shift(&x, &spec)
            .unwrap()
            .data()
            .iter()
            .zip(y.data())
            .map(|(&a, &b)| (a * b) as f64)
            .sum();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(temporal_shift_backward(&y, &spec).unwrap().data())
            .map(|(&a, &b)| (a * b) as f64)
            .sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn sample_eval_center_16_over_8() {
        let spec = SamplerSpec {
            total_frames: 16,
            num_segments: 8,
            mode: SampleMode::EvalCenter,
            seed: 0,
        };
        assert_eq!(
            segment_sample(&spec).unwrap(),
            vec![1, 3, 5, 7, 9, 11, 13, 15]
        );
    }

    #[test]
    fn sample_eval_center_one_per_span() {
        let spec = SamplerSpec {
            total_frames: 8,
            num_segments: 8,
            mode: SampleMode::EvalCenter,
            seed: 0,
        };
        assert_eq!(segment_sample(&spec).unwrap(), (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn sample_short_video_repeats_frames() {
        let spec = SamplerSpec {
            total_frames: 3,
            num_segments: 8,
            mode: SampleMode::EvalCenter,
            seed: 0,
        };
        assert_eq!(segment_sample(&spec).unwrap(), vec![0, 0, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn sample_rejects_zero_segments() {
        let spec = SamplerSpec {
            total_frames: 10,
            num_segments: 0,
            mode: SampleMode::EvalCenter,
            seed: 0,
        };
        assert!(segment_sample(&spec).is_err());
    }

    proptest! {
        #[test]
        fn sample_invariants(total in 1usize..200, segs in 1usize..32, seed in 0u64..100,
                             train in proptest::bool::ANY) {
            let spec = SamplerSpec {
                total_frames: total,
                num_segments: segs,
                mode: if train { SampleMode::TrainRandom } else { SampleMode::EvalCenter },
                seed,
            };
            let idx = segment_sample(&spec).unwrap();
            prop_assert_eq!(idx.len(), segs);
            prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
            prop_assert!(idx.iter().all(|&i| i < total));
            // Seeded determinism.
            prop_assert_eq!(segment_sample(&spec).unwrap(), idx);
        }

        #[test]
        fn shuffle_round_trip_random_shapes(n in 1usize..3, t in 1usize..6, eta in 1usize..4,
                                            h in 1usize..4, w in 1usize..4, seed in 0u64..50) {
            let shape = Shape::new(n, t, t * eta, h, w);
            let spec = ShuffleSpec::new(t, t * eta).unwrap();
            let x = random_tensor(shape, seed);
            let y = video_shuffle(&x, &spec).unwrap();
            prop_assert_eq!(x.sorted_values(), y.sorted_values());
            prop_assert_eq!(inverse_video_shuffle(&y, &spec).unwrap(), x);
        }
    }
}
