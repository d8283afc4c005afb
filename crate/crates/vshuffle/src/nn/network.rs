//! Full network: 7x7 stem, max pool, four bottleneck stages, joint
//! global average pooling, dropout and the linear classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::act::Relu;
use super::block::Bottleneck;
use super::conv::Conv2d;
use super::linear::{Dropout, Linear};
use super::norm::BatchNorm;
use super::pool::{GlobalAvgPool, MaxPool};
use super::{Mode, Param};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::io::AnyTensor;
use crate::scalar::Scalar;
use crate::tensor::{Shape, VideoTensor};

pub struct Network<S: Scalar> {
    pub cfg: NetworkConfig,
    conv1: Conv2d<S>,
    bn1: BatchNorm<S>,
    relu1: Relu<S>,
    pool1: MaxPool<S>,
    stages: Vec<Vec<Bottleneck<S>>>,
    gap: GlobalAvgPool,
    dropout: Dropout<S>,
    head: Linear<S>,
}

impl<S: Scalar> Network<S> {
    pub fn new(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv2d::new(
            "conv1",
            cfg.in_channels,
            cfg.stem_width,
            7,
            2,
            3,
            false,
            &mut rng,
        );
        // The stem BN is never frozen; freezing applies to the block BNs.
        let bn1 = BatchNorm::new("bn1", cfg.stem_width);
        let mut stages = Vec::new();
        for (si, stage) in cfg.stages.iter().enumerate() {
            let mut blocks = Vec::new();
            for bi in 0..stage.blocks {
                blocks.push(Bottleneck::new(
                    &format!("s{si}.b{bi}"),
                    cfg,
                    si,
                    bi,
                    &mut rng,
                )?);
            }
            stages.push(blocks);
        }
        let feat = cfg.stages.last().unwrap().width * cfg.expansion;
        let head = Linear::new("head", feat, cfg.num_classes, &mut rng);
        Ok(Network {
            cfg: cfg.clone(),
            conv1,
            bn1,
            relu1: Relu::default(),
            pool1: MaxPool::new(3, 2, 1),
            stages,
            gap: GlobalAvgPool::default(),
            dropout: Dropout::new(cfg.dropout, seed ^ 0x9e3779b97f4a7c15),
            head,
        })
    }

    pub fn expected_input(&self, batch: usize) -> Shape {
        Shape::new(
            batch,
            self.cfg.frames,
            self.cfg.in_channels,
            self.cfg.input_size,
            self.cfg.input_size,
        )
    }

    /// Forward pass to logits of shape (N, 1, classes, 1, 1).
    pub fn forward(
        &mut self,
        x: &VideoTensor<S>,
        mode: Mode,
        keep_cache: bool,
    ) -> Result<VideoTensor<S>> {
        let s = x.shape();
        if s.t != self.cfg.frames || s.c != self.cfg.in_channels {
            return Err(Error::InvalidDimension(format!(
                "network expects (N, {}, {}, H, W), got {}",
                self.cfg.frames, self.cfg.in_channels, s
            )));
        }
        let mut y = self.conv1.forward(x, keep_cache)?;
        y = self.bn1.forward(&y, mode, keep_cache)?;
        y = self.relu1.forward(&y, keep_cache);
        y = self.pool1.forward(&y, keep_cache)?;
        for stage in &mut self.stages {
            for b in stage {
                y = b.forward(&y, mode, keep_cache)?;
            }
        }
        y = self.gap.forward(&y, keep_cache)?;
        y = self.dropout.forward(&y, mode, keep_cache);
        self.head.forward(&y, keep_cache)
    }

    /// Backward from logit gradients; accumulates parameter gradients
    /// and returns the input gradient.
    pub fn backward(&mut self, grad_logits: &VideoTensor<S>) -> Result<VideoTensor<S>> {
        let mut g = self.head.backward(grad_logits)?;
        g = self.dropout.backward(&g);
        g = self.gap.backward(&g)?;
        for stage in self.stages.iter_mut().rev() {
            for b in stage.iter_mut().rev() {
                g = b.backward(&g)?;
            }
        }
        g = self.pool1.backward(&g)?;
        g = self.relu1.backward(&g);
        g = self.bn1.backward(&g)?;
        self.conv1.backward(&g)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<S>)) {
        f(&mut self.conv1.weight);
        f(&mut self.bn1.gamma);
        f(&mut self.bn1.beta);
        for stage in &mut self.stages {
            for b in stage {
                b.visit_params(f);
            }
        }
        f(&mut self.head.weight);
        f(&mut self.head.bias);
    }

    pub fn zero_grads(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    pub fn num_params(&mut self) -> u64 {
        let mut total = 0u64;
        self.visit_params(&mut |p| total += p.len() as u64);
        total
    }

    /// All state needed to restore the network: parameters plus BN
    /// running statistics, in visitation order.
    pub fn state_tensors(&mut self) -> Vec<(String, VideoTensor<S>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.push((p.name.clone(), p.to_tensor())));
        let mut push_stats = |name: &str, v: &mut Vec<S>| {
            let t = VideoTensor::from_vec(Shape::new(1, 1, v.len(), 1, 1), v.clone()).unwrap();
            out.push((name.to_string(), t));
        };
        push_stats("bn1.running_mean", &mut self.bn1.running_mean);
        push_stats("bn1.running_var", &mut self.bn1.running_var);
        for stage in &mut self.stages {
            for b in stage {
                b.visit_stats(&mut |name, v| {
                    let t =
                        VideoTensor::from_vec(Shape::new(1, 1, v.len(), 1, 1), v.clone()).unwrap();
                    out.push((name.to_string(), t));
                });
            }
        }
        out
    }

    pub fn save_checkpoint(&mut self, path: &std::path::Path) -> Result<()> {
        let entries = self.state_tensors();
        let bytes = crate::io::write_checkpoint(&entries)?;
        crate::io::write_atomic(path, &bytes)
    }

    pub fn load_checkpoint(&mut self, entries: &[(String, AnyTensor)]) -> Result<()> {
        let mut map: std::collections::HashMap<&str, &AnyTensor> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut err = None;
        self.visit_params(&mut |p| {
            if err.is_some() {
                return;
            }
            match map.remove(p.name.as_str()) {
                Some(t) => {
                    let r = match t {
                        AnyTensor::F32(t) => {
                            let data: Vec<S> =
                                t.data().iter().map(|&v| S::from_f32(v).unwrap()).collect();
                            VideoTensor::from_vec(t.shape(), data)
                                .and_then(|t| p.load_from(&t))
                        }
                        AnyTensor::F64(t) => {
                            let data: Vec<S> =
                                t.data().iter().map(|&v| S::from_f64(v).unwrap()).collect();
                            VideoTensor::from_vec(t.shape(), data)
                                .and_then(|t| p.load_from(&t))
                        }
                    };
                    if let Err(e) = r {
                        err = Some(e);
                    }
                }
                None => err = Some(Error::Config(format!("checkpoint missing {}", p.name))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let mut load_stats = |name: String, v: &mut Vec<S>| -> Result<()> {
            match map.remove(name.as_str()) {
                Some(AnyTensor::F32(t)) => {
                    if t.data().len() != v.len() {
                        return Err(Error::Config(format!("bad length for {name}")));
                    }
                    for (d, &s) in v.iter_mut().zip(t.data()) {
                        *d = S::from_f32(s).unwrap();
                    }
                    Ok(())
                }
                Some(AnyTensor::F64(t)) => {
                    if t.data().len() != v.len() {
                        return Err(Error::Config(format!("bad length for {name}")));
                    }
                    for (d, &s) in v.iter_mut().zip(t.data()) {
                        *d = S::from_f64(s).unwrap();
                    }
                    Ok(())
                }
                None => Err(Error::Config(format!("checkpoint missing {name}"))),
            }
        };
        load_stats("bn1.running_mean".into(), &mut self.bn1.running_mean)?;
        load_stats("bn1.running_var".into(), &mut self.bn1.running_var)?;
        let mut err = None;
        for stage in &mut self.stages {
            for b in stage {
                b.visit_stats(&mut |name, v| {
                    if err.is_some() {
                        return;
                    }
                    if let Err(e) = load_stats(name.to_string(), v) {
                        err = Some(e);
                    }
                });
            }
        }
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn load_checkpoint_file(&mut self, path: &std::path::Path) -> Result<()> {
        let entries = crate::io::read_checkpoint_file(path)?;
        self.load_checkpoint(&entries)
    }
}
