//! Wall-clock latency measurement of forward passes and the raw
//! data-movement kernels.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::nn::network::Network;
use crate::nn::Mode;
use crate::parallel::current_threads;
use crate::tensor::{Shape, VideoTensor};
use crate::temporal::{
    inverse_video_shuffle, temporal_shift, video_shuffle, ShiftSpec, ShuffleSpec,
};

pub const CSV_HEADER: &str = "name,batch,iters,mean_ms,std_ms,vps";

#[derive(Clone, Debug, Serialize)]
pub struct BenchRecord {
    pub name: String,
    pub batch: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Videos per second: batch / mean latency.
    pub vps: f64,
    pub threads: usize,
    /// Bytes read + written per iteration, for kernel benches.
    pub bytes_per_iter: Option<u64>,
}

impl BenchRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.3}",
            self.name, self.batch, self.iterations, self.mean_ms, self.std_ms, self.vps
        )
    }
}

fn summarize(
    name: &str,
    batch: usize,
    warmup: usize,
    times_ms: &[f64],
    bytes_per_iter: Option<u64>,
) -> BenchRecord {
    let n = times_ms.len() as f64;
    let mean = times_ms.iter().sum::<f64>() / n;
    let var = times_ms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    BenchRecord {
        name: name.to_string(),
        batch,
        iterations: times_ms.len(),
        warmup,
        mean_ms: mean,
        std_ms: var.sqrt(),
        vps: batch as f64 / (mean / 1000.0),
        threads: current_threads(),
        bytes_per_iter,
    }
}

fn time_loop<F: FnMut()>(iterations: usize, warmup: usize, mut f: F) -> Vec<f64> {
    for _ in 0..warmup {
        f();
    }
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t0 = Instant::now();
        f();
        times.push(t0.elapsed().as_secs_f64() * 1000.0);
    }
    times
}

/// Forward latency of `cfg` in inference mode over a fixed random
/// input; input generation is excluded from the measured region.
pub fn bench_forward(
    cfg: &NetworkConfig,
    batch: usize,
    iterations: usize,
    warmup: usize,
) -> Result<BenchRecord> {
    if iterations == 0 {
        return Err(Error::Config("iterations must be >= 1".into()));
    }
    let mut net = Network::<f32>::new(cfg, 0)?;
    let shape = net.expected_input(batch);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut x = VideoTensor::<f32>::zeros(shape)?;
    for v in x.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let mut sink = 0.0f32;
    let times = time_loop(iterations, warmup, || {
        let y = net.forward(&x, Mode::Eval, false).expect("forward");
        sink += y.data()[0];
    });
    // Keep the accumulated output observable so the loop is not elided.
    if !sink.is_finite() {
        eprintln!("bench sink overflowed: {sink}");
    }
    Ok(summarize(&cfg.name, batch, warmup, &times, None))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelOp {
    Shuffle,
    Inverse,
    Shift,
    /// Straight memcpy of the tensor, as the movement-cost oracle.
    Copy,
}

impl KernelOp {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shuffle" => Ok(KernelOp::Shuffle),
            "inverse" => Ok(KernelOp::Inverse),
            "shift" => Ok(KernelOp::Shift),
            "copy" => Ok(KernelOp::Copy),
            other => Err(Error::Config(format!("unknown op {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelOp::Shuffle => "shuffle",
            KernelOp::Inverse => "inverse",
            KernelOp::Shift => "shift",
            KernelOp::Copy => "copy",
        }
    }
}

/// Isolated kernel timing; every listed op reads the whole tensor and
/// writes a fresh one, so bytes moved = 2x the tensor size.
pub fn bench_op(op: KernelOp, shape: Shape, iterations: usize, warmup: usize) -> Result<BenchRecord> {
    if iterations == 0 {
        return Err(Error::Config("iterations must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut x = VideoTensor::<f32>::zeros(shape)?;
    for v in x.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let bytes = 2 * (shape.len() * std::mem::size_of::<f32>()) as u64;
    let shuffle_spec = match op {
        KernelOp::Shuffle | KernelOp::Inverse => Some(ShuffleSpec::new(shape.t, shape.c)?),
        _ => None,
    };
    let shift_spec = ShiftSpec::default_eighth();
    let mut sink = 0.0f32;
    let times = time_loop(iterations, warmup, || {
        let y = match op {
            KernelOp::Shuffle => video_shuffle(&x, shuffle_spec.as_ref().unwrap()).unwrap(),
            KernelOp::Inverse => {
                inverse_video_shuffle(&x, shuffle_spec.as_ref().unwrap()).unwrap()
            }
            KernelOp::Shift => temporal_shift(&x, &shift_spec).unwrap(),
            KernelOp::Copy => x.clone(),
        };
        sink += y.data()[0];
    });
    if !sink.is_finite() {
        eprintln!("bench sink overflowed: {sink}");
    }
    Ok(summarize(op.name(), shape.n, warmup, &times, Some(bytes)))
}
