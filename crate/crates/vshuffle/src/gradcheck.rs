//! Central finite-difference verification of analytic gradients on
//! micro networks, in 64-bit mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::{BlockVariant, NetworkConfig, ShuffleKind, StageSpec};
use crate::error::Result;
use crate::nn::network::Network;
use crate::nn::Mode;
use crate::tensor::{Shape, VideoTensor};
use crate::temporal::{shuffle_backward, video_shuffle, ShuffleSpec};
use crate::train::cross_entropy;

#[derive(Clone, Debug, Serialize)]
pub struct LayerCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub config: String,
    pub tolerance: f64,
    pub layers: Vec<LayerCheck>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.layers.iter().all(|l| l.pass)
    }

    pub fn table(&self) -> String {
        let mut out = format!("# grad check: {} (tol {:e})\n", self.config, self.tolerance);
        let w = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(5);
        for l in &self.layers {
            out.push_str(&format!(
                "{:<w$}  {:>10.3e}  {:>4} coords  {}\n",
                l.name,
                l.max_rel_err,
                l.coords_checked,
                if l.pass { "pass" } else { "FAIL" }
            ));
        }
        out.push_str(if self.pass() { "PASS\n" } else { "FAIL\n" });
        out
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// A micro layout (~500 params) exercising one block variant.
pub fn micro_config(variant: BlockVariant) -> NetworkConfig {
    let mut cfg = NetworkConfig {
        name: format!("micro-{variant:?}").to_lowercase(),
        stages: vec![StageSpec {
            blocks: 1,
            width: 4,
            stride: 1,
        }],
        stem_width: 4,
        in_channels: 1,
        frames: 2,
        num_classes: 2,
        input_size: 8,
        dropout: 0.0,
        expansion: 2,
        shuffle_last: None,
        shift_others: false,
        shift_fwd: 0.25,
        shift_bwd: 0.25,
        freeze_bn: false,
        overrides: Vec::new(),
    };
    match variant {
        BlockVariant::Standard => {}
        BlockVariant::Headtail => cfg.shuffle_last = Some(ShuffleKind::Headtail),
        BlockVariant::Compact => cfg.shuffle_last = Some(ShuffleKind::Compact),
        BlockVariant::StandardWithShift => cfg.shift_others = true,
    }
    cfg
}

/// Compares analytic gradients of the cross-entropy loss against
/// central differences (step 1e-4), layer by layer. Coordinates are
/// subsampled evenly within large tensors.
pub fn grad_check(cfg: &NetworkConfig, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    let mut cfg = cfg.clone();
    cfg.dropout = 0.0; // the check needs a deterministic loss surface
    let mut net = Network::<f64>::new(&cfg, seed)?;

    let batch = 2;
    let shape = net.expected_input(batch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let data: Vec<f64> = (0..shape.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let x = VideoTensor::from_vec(shape, data)?;
    let labels: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..cfg.num_classes)).collect();

    net.zero_grads();
    let logits = net.forward(&x, Mode::Train, true)?;
    let (_, grad_logits) = cross_entropy(&logits, &labels)?;
    let grad_x = net.backward(&grad_logits)?;
    let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
    net.visit_params(&mut |p| grads.push((p.name.clone(), p.grad.clone())));

    let loss_of = |net: &mut Network<f64>| -> f64 {
        let logits = net.forward(&x, Mode::Train, false).unwrap();
        cross_entropy(&logits, &labels).unwrap().0
    };
    let h = 1e-4;
    let per_tensor = 12;
    let mut layers: Vec<LayerCheck> = Vec::new();
    let mut record = |name: &str, err: f64, n: usize| {
        // Group parameter rows by layer (strip the trailing component).
        let layer = name.rsplit_once('.').map(|(l, _)| l).unwrap_or(name);
        if let Some(existing) = layers.iter_mut().find(|l| l.name == layer) {
            existing.max_rel_err = existing.max_rel_err.max(err);
            existing.coords_checked += n;
            existing.pass = existing.max_rel_err <= tolerance;
        } else {
            layers.push(LayerCheck {
                name: layer.to_string(),
                max_rel_err: err,
                coords_checked: n,
                pass: err <= tolerance,
            });
        }
    };

    for (pi, (name, analytic)) in grads.iter().enumerate() {
        let len = analytic.len();
        let ncheck = len.min(per_tensor);
        let mut max_err = 0.0f64;
        for j in 0..ncheck {
            let i = j * len / ncheck;
            let mut probe = |delta: f64| -> f64 {
                let mut k = 0;
                net.visit_params(&mut |p| {
                    if k == pi {
                        p.data[i] = p.data[i] + delta;
                    }
                    k += 1;
                });
                let l = loss_of(&mut net);
                let mut k = 0;
                net.visit_params(&mut |p| {
                    if k == pi {
                        p.data[i] = p.data[i] - delta;
                    }
                    k += 1;
                });
                l
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            max_err = max_err.max(rel_err(analytic[i], fd));
        }
        record(name, max_err, ncheck);
    }

    // Input gradient, reported as its own row.
    let len = x.data().len();
    let ncheck = len.min(4 * per_tensor);
    let mut max_err = 0.0f64;
    for j in 0..ncheck {
        let i = j * len / ncheck;
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let lp = {
            let logits = net.forward(&plus, Mode::Train, false)?;
            cross_entropy(&logits, &labels)?.0
        };
        let lm = {
            let logits = net.forward(&minus, Mode::Train, false)?;
            cross_entropy(&logits, &labels)?.0
        };
        max_err = max_err.max(rel_err(grad_x.data()[i], (lp - lm) / (2.0 * h)));
    }
    record("input.grad", max_err, ncheck);

    Ok(GradCheckReport {
        config: cfg.name.clone(),
        tolerance,
        layers,
    })
}

/// Shuffle followed by a fixed linear readout: the shuffle Jacobian is
/// an exact permutation, so analytic and finite-difference gradients
/// agree to rounding (~1e-12), well inside 1e-10.
pub fn grad_check_shuffle_only(tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    let shape = Shape::new(2, 4, 8, 3, 3);
    let spec = ShuffleSpec::new(shape.t, shape.c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut randn = |n: usize| -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    };
    let x = VideoTensor::from_vec(shape, randn(shape.len()))?;
    let w = VideoTensor::from_vec(shape, randn(shape.len()))?;

    let loss = |t: &VideoTensor<f64>| -> Result<f64> {
        let y = video_shuffle(t, &spec)?;
        Ok(y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
    };
    let analytic = shuffle_backward(&w, &spec)?;
    // The readout is linear in the input, so central differences are
    // exact for any step; a unit step sidesteps cancellation rounding.
    let h = 1.0;
    let mut max_err = 0.0f64;
    for i in 0..shape.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
        max_err = max_err.max(rel_err(analytic.data()[i], fd));
    }
    Ok(GradCheckReport {
        config: "shuffle-linear".into(),
        tolerance,
        layers: vec![LayerCheck {
            name: "shuffle".into(),
            max_rel_err: max_err,
            coords_checked: shape.len(),
            pass: max_err <= tolerance,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_block_network_passes_at_1e4() {
        let r = grad_check(&micro_config(BlockVariant::Standard), 1e-4, 1).unwrap();
        assert!(r.pass(), "{}", r.table());
    }

    #[test]
    fn compact_block_network_passes_at_1e4() {
        let r = grad_check(&micro_config(BlockVariant::Compact), 1e-4, 2).unwrap();
        assert!(r.pass(), "{}", r.table());
    }

    #[test]
    fn headtail_block_network_passes_at_1e4() {
        let r = grad_check(&micro_config(BlockVariant::Headtail), 1e-4, 3).unwrap();
        assert!(r.pass(), "{}", r.table());
    }

    #[test]
    fn shifted_block_network_passes_at_1e4() {
        let r = grad_check(&micro_config(BlockVariant::StandardWithShift), 1e-4, 4).unwrap();
        assert!(r.pass(), "{}", r.table());
    }

    #[test]
    fn shuffle_only_passes_at_1e10() {
        let r = grad_check_shuffle_only(1e-10, 5).unwrap();
        assert!(r.pass(), "{}", r.table());
    }
}
