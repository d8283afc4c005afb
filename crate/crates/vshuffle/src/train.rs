//! Loss, SGD with momentum, LR schedules, and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{gen_dataset, Dataset, SyntheticTask};
use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::nn::{Mode, Param};
use crate::scalar::{sc, Scalar};
use crate::tensor::{Shape, VideoTensor};
use crate::temporal::{segment_sample, SampleMode, SamplerSpec};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Multistep { milestones: Vec<u64>, gamma: f64 },
    Cosine { warmup_steps: u64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 16,
            epochs: 10,
            schedule: Schedule::Cosine { warmup_steps: 50 },
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate at `step` of `total_steps` under `schedule`.
pub fn lr_at(schedule: &Schedule, lr: f64, step: u64, total_steps: u64) -> f64 {
    match schedule {
        Schedule::Multistep { milestones, gamma } => {
            let passed = milestones.iter().filter(|&&m| m <= step).count();
            lr * gamma.powi(passed as i32)
        }
        Schedule::Cosine { warmup_steps } => {
            let w = *warmup_steps;
            if step < w {
                lr * step as f64 / w as f64
            } else if total_steps <= w {
                lr
            } else {
                let progress = (step - w) as f64 / (total_steps - w) as f64;
                lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// Mean softmax cross-entropy over (N, 1, K, 1, 1) logits; gradient is
/// (softmax - onehot) / N.
pub fn cross_entropy<S: Scalar>(
    logits: &VideoTensor<S>,
    labels: &[usize],
) -> Result<(f64, VideoTensor<S>)> {
    let s = logits.shape();
    let k = s.c;
    if s.n != labels.len() {
        return Err(Error::InvalidDimension(format!(
            "{} logit rows but {} labels",
            s.n,
            labels.len()
        )));
    }
    let mut grad = VideoTensor::zeros(s)?;
    let mut loss = 0.0f64;
    let inv_n = 1.0 / s.n as f64;
    for n in 0..s.n {
        let label = labels[n];
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let row = &logits.data()[n * k..(n + 1) * k];
        let max = row
            .iter()
            .fold(f64::NEG_INFINITY, |a, &v| a.max(v.to_f64().unwrap()));
        let mut denom = 0.0f64;
        for &v in row {
            denom += (v.to_f64().unwrap() - max).exp();
        }
        let log_denom = denom.ln() + max;
        loss += (log_denom - row[label].to_f64().unwrap()) * inv_n;
        let g = &mut grad.data_mut()[n * k..(n + 1) * k];
        for (j, &v) in row.iter().enumerate() {
            let p = (v.to_f64().unwrap() - log_denom).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            g[j] = sc((p - target) * inv_n);
        }
    }
    Ok((loss, grad))
}

/// SGD with momentum: v <- m*v + g + wd*p; p <- p - lr*v. Weight decay
/// skips parameters flagged decay-exempt (BN scale/offset, biases).
pub struct Sgd<S: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Vec<S>>,
    pub step: u64,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            buffers: Vec::new(),
            step: 0,
        }
    }

    pub fn step(&mut self, net: &mut Network<S>, lr: f64) {
        let m = sc::<S>(self.momentum);
        let wd = sc::<S>(self.weight_decay);
        let lr = sc::<S>(lr);
        let buffers = &mut self.buffers;
        let mut idx = 0;
        net.visit_params(&mut |p: &mut Param<S>| {
            if buffers.len() == idx {
                buffers.push(vec![S::zero(); p.len()]);
            }
            let buf = &mut buffers[idx];
            assert_eq!(buf.len(), p.len(), "buffer shape drift for {}", p.name);
            for i in 0..p.len() {
                let mut g = p.grad[i];
                if p.decay {
                    g = g + wd * p.data[i];
                }
                buf[i] = m * buf[i] + g;
                p.data[i] = p.data[i] - lr * buf[i];
            }
            idx += 1;
        });
        self.step += 1;
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub lr: f64,
}

/// Assembles a (B, T, C, H, W) batch by segment-sampling each clip.
fn make_batch<S: Scalar>(
    data: &Dataset<S>,
    idxs: &[usize],
    frames: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<(VideoTensor<S>, Vec<usize>)> {
    let cs = data.clips[idxs[0]].shape();
    let shape = Shape::new(idxs.len(), frames, cs.c, cs.h, cs.w);
    let mut batch = VideoTensor::zeros(shape)?;
    let frame_len = cs.frame_len();
    let mut labels = Vec::with_capacity(idxs.len());
    for (b, &i) in idxs.iter().enumerate() {
        let clip = &data.clips[i];
        let picks = segment_sample(&SamplerSpec {
            total_frames: cs.t,
            num_segments: frames,
            mode,
            seed: seed ^ (i as u64).wrapping_mul(0x94d049bb133111eb),
        })?;
        for (f, &src) in picks.iter().enumerate() {
            let dst = &mut batch.data_mut()
                [(b * frames + f) * frame_len..(b * frames + f + 1) * frame_len];
            dst.copy_from_slice(&clip.data()[src * frame_len..(src + 1) * frame_len]);
        }
        labels.push(data.labels[i]);
    }
    Ok((batch, labels))
}

fn count_correct<S: Scalar>(logits: &VideoTensor<S>, labels: &[usize]) -> usize {
    let k = logits.shape().c;
    labels
        .iter()
        .enumerate()
        .filter(|&(n, &label)| {
            let row = &logits.data()[n * k..(n + 1) * k];
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .count()
}

/// Center-sampled accuracy of `net` on `data` in inference mode.
pub fn evaluate<S: Scalar>(net: &mut Network<S>, data: &Dataset<S>, batch: usize) -> Result<f64> {
    let mut correct = 0;
    let idxs: Vec<usize> = (0..data.len()).collect();
    for chunk in idxs.chunks(batch) {
        let (x, labels) = make_batch(data, chunk, net.cfg.frames, SampleMode::EvalCenter, 0)?;
        let logits = net.forward(&x, Mode::Eval, false)?;
        correct += count_correct(&logits, &labels);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Full training run; deterministic given seeds in `task` and `cfg`.
pub fn train<S: Scalar>(
    net: &mut Network<S>,
    task: &SyntheticTask,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let (train_set, val_set) = gen_dataset::<S>(task)?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let frames = net.cfg.frames;
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let mut opt = Sgd::<S>::new(cfg.momentum, cfg.weight_decay);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((epoch as u64 + 1) << 32));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut last_lr = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let sample_seed = cfg.seed
                ^ (epoch as u64).wrapping_mul(0xbf58476d1ce4e5b9)
                ^ (bi as u64).wrapping_mul(0x9e3779b97f4a7c15);
            let (x, labels) =
                make_batch(&train_set, chunk, frames, SampleMode::TrainRandom, sample_seed)?;
            net.zero_grads();
            let logits = net.forward(&x, Mode::Train, true)?;
            let (loss, grad) = cross_entropy(&logits, &labels)?;
            correct += count_correct(&logits, &labels);
            net.backward(&grad)?;
            let lr = lr_at(&cfg.schedule, cfg.lr, opt.step, total_steps);
            opt.step(net, lr);
            loss_sum += loss * labels.len() as f64;
            last_lr = lr;
        }
        let val_acc = evaluate(net, &val_set, cfg.batch_size)?;
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
            lr: last_lr,
        });
    }
    Ok(history)
}

/// One JSON object per line, one line per epoch.
pub fn history_to_jsonl(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for rec in history {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    out
}
