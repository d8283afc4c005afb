//! Bottleneck residual blocks: standard, headtail (shuffle at block input,
//! inverse at block output), compact (shuffle/inverse tight around the 3x3
//! conv) and standard-with-temporal-shift. The skip connection always takes
//! the unshifted, unshuffled input.

use rand::Rng;

use super::act::Relu;
use super::conv::Conv2d;
use super::norm::BatchNorm;
use super::{Mode, Param};
use crate::config::{BlockVariant, NetworkConfig};
use crate::error::Result;
use crate::parallel::for_each_chunk_mut;
use crate::scalar::Scalar;
use crate::temporal::{
    inverse_video_shuffle, shuffle_backward, temporal_shift, temporal_shift_backward,
    video_shuffle, ShiftSpec, ShuffleSpec,
};
use crate::tensor::VideoTensor;

fn add_assign<S: Scalar>(a: &mut VideoTensor<S>, b: &VideoTensor<S>) {
    let b_data = b.data();
    for_each_chunk_mut(a.data_mut(), 4096, |k, chunk| {
        let base = k * 4096;
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = *v + b_data[base + i];
        }
    });
}

pub struct Bottleneck<S: Scalar> {
    pub variant: BlockVariant,
    pub in_c: usize,
    pub width: usize,
    pub out_c: usize,
    pub stride: usize,
    conv1: Conv2d<S>,
    bn1: BatchNorm<S>,
    relu1: Relu<S>,
    conv2: Conv2d<S>,
    bn2: BatchNorm<S>,
    relu2: Relu<S>,
    conv3: Conv2d<S>,
    bn3: BatchNorm<S>,
    proj: Option<(Conv2d<S>, BatchNorm<S>)>,
    relu_out: Relu<S>,
    shuffle_io: Option<(ShuffleSpec, ShuffleSpec)>,
    shuffle_mid: Option<ShuffleSpec>,
    shift: Option<ShiftSpec>,
}

impl<S: Scalar> Bottleneck<S> {
    pub fn new<R: Rng>(
        name: &str,
        cfg: &NetworkConfig,
        stage: usize,
        index: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = cfg.stages[stage];
        let variant = cfg.block_variant(stage, index);
        let in_c = cfg.block_in_channels(stage, index);
        let width = spec.width;
        let out_c = width * cfg.expansion;
        let stride = if index == 0 { spec.stride } else { 1 };
        let t = cfg.frames;

        let conv1 = Conv2d::new(&format!("{name}.conv1"), in_c, width, 1, 1, 0, false, rng);
        let mut bn1 = BatchNorm::new(&format!("{name}.bn1"), width);
        let conv2 = Conv2d::new(
            &format!("{name}.conv2"),
            width,
            width,
            3,
            stride,
            1,
            false,
            rng,
        );
        let mut bn2 = BatchNorm::new(&format!("{name}.bn2"), width);
        let conv3 = Conv2d::new(&format!("{name}.conv3"), width, out_c, 1, 1, 0, false, rng);
        let mut bn3 = BatchNorm::new(&format!("{name}.bn3"), out_c).zero_gamma();
        let proj = (in_c != out_c || stride != 1).then(|| {
            let c = Conv2d::new(&format!("{name}.proj"), in_c, out_c, 1, stride, 0, false, rng);
            let mut b = BatchNorm::new(&format!("{name}.proj_bn"), out_c);
            b.frozen = cfg.freeze_bn;
            (c, b)
        });
        bn1.frozen = cfg.freeze_bn;
        bn2.frozen = cfg.freeze_bn;
        bn3.frozen = cfg.freeze_bn;

        let shuffle_io = (variant == BlockVariant::Headtail)
            .then(|| Ok::<_, crate::error::Error>((ShuffleSpec::new(t, in_c)?, ShuffleSpec::new(t, out_c)?)))
            .transpose()?;
        let shuffle_mid = (variant == BlockVariant::Compact)
            .then(|| ShuffleSpec::new(t, width))
            .transpose()?;
        let shift = (variant == BlockVariant::StandardWithShift)
            .then(|| ShiftSpec::new(cfg.shift_fwd, cfg.shift_bwd))
            .transpose()?;

        Ok(Bottleneck {
            variant,
            in_c,
            width,
            out_c,
            stride,
            conv1,
            bn1,
            relu1: Relu::default(),
            conv2,
            bn2,
            relu2: Relu::default(),
            conv3,
            bn3,
            proj,
            relu_out: Relu::default(),
            shuffle_io,
            shuffle_mid,
            shift,
        })
    }

    pub fn forward(
        &mut self,
        x: &VideoTensor<S>,
        mode: Mode,
        keep_cache: bool,
    ) -> Result<VideoTensor<S>> {
        let transformed = match self.variant {
            BlockVariant::StandardWithShift => {
                Some(temporal_shift(x, self.shift.as_ref().unwrap())?)
            }
            BlockVariant::Headtail => {
                Some(video_shuffle(x, &self.shuffle_io.as_ref().unwrap().0)?)
            }
            _ => None,
        };
        let branch_in = transformed.as_ref().unwrap_or(x);

        let mut y = self.conv1.forward(branch_in, keep_cache)?;
        y = self.bn1.forward(&y, mode, keep_cache)?;
        y = self.relu1.forward(&y, keep_cache);
        if let Some(spec) = &self.shuffle_mid {
            y = video_shuffle(&y, spec)?;
        }
        y = self.conv2.forward(&y, keep_cache)?;
        if let Some(spec) = &self.shuffle_mid {
            y = inverse_video_shuffle(&y, spec)?;
        }
        y = self.bn2.forward(&y, mode, keep_cache)?;
        y = self.relu2.forward(&y, keep_cache);
        y = self.conv3.forward(&y, keep_cache)?;
        y = self.bn3.forward(&y, mode, keep_cache)?;
        if let Some((_, tail)) = &self.shuffle_io {
            y = inverse_video_shuffle(&y, tail)?;
        }

        let skip = match &mut self.proj {
            Some((conv, bn)) => {
                let p = conv.forward(x, keep_cache)?;
                bn.forward(&p, mode, keep_cache)?
            }
            None => x.clone(),
        };
        add_assign(&mut y, &skip);
        Ok(self.relu_out.forward(&y, keep_cache))
    }

    pub fn backward(&mut self, grad_out: &VideoTensor<S>) -> Result<VideoTensor<S>> {
        let g = self.relu_out.backward(grad_out);

        // Skip path.
        let mut grad_x = match &mut self.proj {
            Some((conv, bn)) => {
                let gp = bn.backward(&g)?;
                conv.backward(&gp)?
            }
            None => g.clone(),
        };

        // Residual branch, reverse order.
        let mut gb = g;
        if let Some((_, tail)) = &self.shuffle_io {
            // Backward through the tail inverse shuffle is the forward map.
            gb = video_shuffle(&gb, tail)?;
        }
        gb = self.bn3.backward(&gb)?;
        gb = self.conv3.backward(&gb)?;
        gb = self.relu2.backward(&gb);
        gb = self.bn2.backward(&gb)?;
        if let Some(spec) = &self.shuffle_mid {
            gb = video_shuffle(&gb, spec)?;
        }
        gb = self.conv2.backward(&gb)?;
        if let Some(spec) = &self.shuffle_mid {
            gb = shuffle_backward(&gb, spec)?;
        }
        gb = self.relu1.backward(&gb);
        gb = self.bn1.backward(&gb)?;
        gb = self.conv1.backward(&gb)?;
        gb = match self.variant {
            BlockVariant::StandardWithShift => {
                temporal_shift_backward(&gb, self.shift.as_ref().unwrap())?
            }
            BlockVariant::Headtail => shuffle_backward(&gb, &self.shuffle_io.as_ref().unwrap().0)?,
            _ => gb,
        };

        add_assign(&mut grad_x, &gb);
        Ok(grad_x)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        f(&mut self.conv1.weight);
        f(&mut self.bn1.gamma);
        f(&mut self.bn1.beta);
        f(&mut self.conv2.weight);
        f(&mut self.bn2.gamma);
        f(&mut self.bn2.beta);
        f(&mut self.conv3.weight);
        f(&mut self.bn3.gamma);
        f(&mut self.bn3.beta);
        if let Some((conv, bn)) = &mut self.proj {
            f(&mut conv.weight);
            f(&mut bn.gamma);
            f(&mut bn.beta);
        }
    }

    /// Running statistics, named, for checkpointing.
    pub fn visit_stats(&mut self, f: &mut dyn FnMut(&str, &mut Vec<S>)) {
        let mut visit = |bn: &mut BatchNorm<S>| {
            let name = bn.gamma.name.trim_end_matches(".gamma").to_string();
            f(&format!("{name}.running_mean"), &mut bn.running_mean);
            f(&format!("{name}.running_var"), &mut bn.running_var);
        };
        visit(&mut self.bn1);
        visit(&mut self.bn2);
        visit(&mut self.bn3);
        if let Some((_, bn)) = &mut self.proj {
            visit(bn);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BlockOverride, NetworkConfig};
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn toy_cfg() -> NetworkConfig {
        NetworkConfig::preset("toy-baseline", 4, 2, 32).unwrap()
    }

    fn cfg_with_variant(variant: BlockVariant) -> NetworkConfig {
        let mut cfg = toy_cfg();
        cfg.overrides.push(BlockOverride {
            stage: 0,
            index: 1,
            variant,
        });
        cfg
    }

    fn block(variant: BlockVariant, seed: u64) -> Bottleneck<f64> {
        let cfg = cfg_with_variant(variant);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Bottleneck::new("b", &cfg, 0, 1, &mut rng).unwrap()
    }

    fn randn(shape: Shape, seed: u64) -> VideoTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        VideoTensor::from_vec(shape, data).unwrap()
    }

    fn param_shapes(b: &mut Bottleneck<f64>) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        b.visit_params(&mut |p| out.push((p.name.clone(), p.dims.clone())));
        out
    }

    #[test]
    fn variants_have_identical_parameter_shapes() {
        // No additional parameters from shuffle or shift.
        let mut standard = block(BlockVariant::Standard, 1);
        let reference = param_shapes(&mut standard);
        for variant in [
            BlockVariant::Headtail,
            BlockVariant::Compact,
            BlockVariant::StandardWithShift,
        ] {
            let mut b = block(variant, 1);
            assert_eq!(param_shapes(&mut b), reference);
        }
    }

    #[test]
    fn compact_equals_standard_under_identity_core() {
        // With conv2 a per-pixel-diagonal delta kernel, shuffle cancels
        // against its inverse and compact must equal standard bitwise.
        let mut standard = block(BlockVariant::Standard, 5);
        let mut compact = block(BlockVariant::Compact, 99);
        // Copy all params from standard into compact (same visit order).
        let mut src = Vec::new();
        standard.visit_params(&mut |p| src.push(p.data.clone()));
        let mut i = 0;
        compact.visit_params(&mut |p| {
            p.data.copy_from_slice(&src[i]);
            i += 1;
        });
        // Identity 3x3 conv2: delta at center, diagonal over channels.
        let width = standard.width;
        let mut delta = vec![0.0f64; width * width * 9];
        for c in 0..width {
            delta[(c * width + c) * 9 + 4] = 1.0;
        }
        standard.conv2.weight.data.copy_from_slice(&delta);
        compact.conv2.weight.data.copy_from_slice(&delta);

        let x = randn(Shape::new(2, 4, standard.in_c, 6, 6), 3);
        let ys = standard.forward(&x, Mode::Train, false).unwrap();
        let yc = compact.forward(&x, Mode::Train, false).unwrap();
        assert_eq!(ys, yc);
    }

    #[test]
    fn headtail_matches_straight_line_composition() {
        // Compose the already-tested layer ops in sequence as the oracle.
        let mut b = block(BlockVariant::Headtail, 7);
        let x = randn(Shape::new(1, 4, b.in_c, 6, 6), 11);
        let got = b.forward(&x, Mode::Eval, false).unwrap();

        let (head, tail) = b.shuffle_io.unwrap();
        let mut y = video_shuffle(&x, &head).unwrap();
        y = b.conv1.forward(&y, false).unwrap();
        y = b.bn1.forward(&y, Mode::Eval, false).unwrap();
        y = Relu::default().forward(&y, false);
        y = b.conv2.forward(&y, false).unwrap();
        y = b.bn2.forward(&y, Mode::Eval, false).unwrap();
        y = Relu::default().forward(&y, false);
        y = b.conv3.forward(&y, false).unwrap();
        y = b.bn3.forward(&y, Mode::Eval, false).unwrap();
        y = inverse_video_shuffle(&y, &tail).unwrap();
        add_assign(&mut y, &x);
        let want = Relu::default().forward(&y, false);
        assert!(got.approx_equal(&want, 1e-12).unwrap());
    }

    #[test]
    fn shift_variant_keeps_unshifted_skip() {
        // With all conv weights zeroed and bn3 gamma zero, the branch
        // contributes nothing and the block must return relu(x).
        let mut b = block(BlockVariant::StandardWithShift, 13);
        b.visit_params(&mut |p| {
            if p.name.contains("conv") {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        });
        let x = randn(Shape::new(1, 4, b.in_c, 5, 5), 17);
        let y = b.forward(&x, Mode::Eval, false).unwrap();
        let want = Relu::default().forward(&x, false);
        assert!(y.approx_equal(&want, 1e-12).unwrap());
    }
}
