use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Deserialize;

use vshuffle::bench::{bench_forward, bench_op, KernelOp, CSV_HEADER};
use vshuffle::config::{BlockOverride, NetworkConfig};
use vshuffle::data::{SyntheticTask, TaskKind};
use vshuffle::error::{Error, Result};
use vshuffle::gradcheck::{grad_check, grad_check_shuffle_only, micro_config};
use vshuffle::io::{read_vst1_file, write_atomic, write_vst1_file, AnyTensor};
use vshuffle::nn::cost::count;
use vshuffle::nn::network::Network;
use vshuffle::parallel::configure_threads;
use vshuffle::temporal::{inverse_video_shuffle, video_shuffle, ShuffleSpec};
use vshuffle::tensor::Shape;
use vshuffle::train::{history_to_jsonl, train, TrainConfig};
use vshuffle::BlockVariant;

#[derive(Parser)]
#[command(name = "vshuffle", version, about = "Temporal channel shuffle toolkit")]
struct Cli {
    /// Compute threads (fallback: VSHUFFLE_THREADS, then host cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Apply the (inverse) temporal channel shuffle to a VST1 tensor.
    Shuffle {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        inverse: bool,
        /// Shuffle group count; defaults to the frame count T.
        #[arg(long)]
        groups: Option<usize>,
    },
    /// Print the exact parameter / multiply-add report for a layout.
    Count {
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        /// TOML file with a [network] section instead of a preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 174)]
        classes: usize,
        #[arg(long, default_value_t = 224)]
        input: usize,
        #[arg(long)]
        json: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a synthetic temporal task and emit per-epoch metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the task kind from the config file.
        #[arg(long)]
        task: Option<String>,
        /// Override both the data and training seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// JSON-lines metrics output, one record per epoch.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Measure forward latency of a preset, or an isolated kernel.
    Bench {
        #[arg(long, required_unless_present = "op")]
        preset: Option<String>,
        /// Kernel to time instead of a network: shuffle|inverse|shift|copy.
        #[arg(long)]
        op: Option<String>,
        /// Kernel tensor shape as NxTxCxHxW.
        #[arg(long, default_value = "16x8x64x56x56")]
        shape: String,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 50)]
        warmup: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        input: usize,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient verification on micro networks.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// On-disk TOML layout: [network], optional [training], optional [task].
#[derive(Deserialize)]
struct FileConfig {
    network: NetworkSection,
    #[serde(default)]
    training: TrainConfig,
    task: Option<TaskSection>,
}

#[derive(Deserialize)]
struct NetworkSection {
    preset: String,
    frames: usize,
    classes: usize,
    input_size: usize,
    dropout: Option<f64>,
    shift_fwd: Option<f64>,
    shift_bwd: Option<f64>,
    freeze_bn: Option<bool>,
    #[serde(default)]
    overrides: Vec<BlockOverride>,
}

#[derive(Deserialize, Clone, Copy)]
struct TaskSection {
    kind: TaskKind,
    clip_length: usize,
    frame_size: usize,
    num_train: usize,
    num_val: usize,
    #[serde(default)]
    noise_std: f64,
    #[serde(default)]
    seed: u64,
}

impl NetworkSection {
    fn build(&self) -> Result<NetworkConfig> {
        let mut cfg =
            NetworkConfig::preset(&self.preset, self.frames, self.classes, self.input_size)?;
        if let Some(d) = self.dropout {
            cfg.dropout = d;
        }
        if let Some(f) = self.shift_fwd {
            cfg.shift_fwd = f;
        }
        if let Some(b) = self.shift_bwd {
            cfg.shift_bwd = b;
        }
        if let Some(f) = self.freeze_bn {
            cfg.freeze_bn = f;
        }
        cfg.overrides.extend(self.overrides.iter().copied());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_file_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_shape(s: &str) -> Result<Shape> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|p| p.parse().map_err(|_| Error::Parse(format!("bad shape {s:?}"))))
        .collect::<Result<_>>()?;
    if dims.len() != 5 {
        return Err(Error::Parse(format!("shape {s:?} needs 5 dims NxTxCxHxW")));
    }
    Ok(Shape::new(dims[0], dims[1], dims[2], dims[3], dims[4]))
}

fn parse_task_kind(s: &str) -> Result<TaskKind> {
    match s {
        "frame_order" => Ok(TaskKind::FrameOrder),
        "motion_direction" => Ok(TaskKind::MotionDirection),
        other => Err(Error::Config(format!("unknown task {other:?}"))),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.or_else(|| {
        std::env::var("VSHUFFLE_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        configure_threads(n);
    }

    match cli.cmd {
        Cmd::Shuffle {
            input,
            out,
            inverse,
            groups,
        } => {
            let tensor = read_vst1_file(&input)?;
            match tensor {
                AnyTensor::F32(t) => {
                    let s = t.shape();
                    let spec = match groups {
                        Some(g) => ShuffleSpec::with_groups(s.t, s.c, g)?,
                        None => ShuffleSpec::new(s.t, s.c)?,
                    };
                    let y = if inverse {
                        inverse_video_shuffle(&t, &spec)?
                    } else {
                        video_shuffle(&t, &spec)?
                    };
                    write_vst1_file(&out, &y)?;
                }
                AnyTensor::F64(t) => {
                    let s = t.shape();
                    let spec = match groups {
                        Some(g) => ShuffleSpec::with_groups(s.t, s.c, g)?,
                        None => ShuffleSpec::new(s.t, s.c)?,
                    };
                    let y = if inverse {
                        inverse_video_shuffle(&t, &spec)?
                    } else {
                        video_shuffle(&t, &spec)?
                    };
                    write_vst1_file(&out, &y)?;
                }
            }
            Ok(())
        }
        Cmd::Count {
            preset,
            config,
            frames,
            classes,
            input,
            json,
            out,
        } => {
            let cfg = match (&preset, &config) {
                (_, Some(path)) => load_file_config(path)?.network.build()?,
                (Some(name), None) => NetworkConfig::preset(name, frames, classes, input)?,
                (None, None) => {
                    return Err(Error::Config("count needs --preset or --config".into()));
                }
            };
            let report = count(&cfg)?;
            let text = if json {
                report.to_json() + "\n"
            } else {
                report.table()
            };
            emit(out.as_deref(), &text)
        }
        Cmd::Train {
            config,
            task,
            seed,
            out,
            checkpoint,
        } => {
            let file = load_file_config(&config)?;
            let net_cfg = file.network.build()?;
            let mut train_cfg = file.training;
            let mut section = file.task.ok_or_else(|| {
                Error::Config(format!("{}: missing [task] section", config.display()))
            })?;
            if let Some(kind) = task {
                section.kind = parse_task_kind(&kind)?;
            }
            if let Some(s) = seed {
                section.seed = s;
                train_cfg.seed = s;
            }
            let task = SyntheticTask {
                kind: section.kind,
                clip_length: section.clip_length,
                frame_size: section.frame_size,
                num_train: section.num_train,
                num_val: section.num_val,
                noise_std: section.noise_std,
                seed: section.seed,
            };
            if net_cfg.num_classes != task.kind.num_classes() {
                return Err(Error::Config(format!(
                    "network has {} classes but task {:?} has {}",
                    net_cfg.num_classes,
                    task.kind,
                    task.kind.num_classes()
                )));
            }
            let mut net = Network::<f32>::new(&net_cfg, train_cfg.seed)?;
            let history = train(&mut net, &task, &train_cfg)?;
            write_atomic(&out, history_to_jsonl(&history).as_bytes())?;
            if let Some(ck) = checkpoint {
                net.save_checkpoint(&ck)?;
            }
            if let Some(last) = history.last() {
                println!(
                    "epoch {}: loss {:.4}, train acc {:.3}, val acc {:.3}",
                    last.epoch, last.loss, last.train_acc, last.val_acc
                );
            }
            Ok(())
        }
        Cmd::Bench {
            preset,
            op,
            shape,
            batch,
            iters,
            warmup,
            frames,
            classes,
            input,
            out,
        } => {
            let record = match op {
                Some(opname) => {
                    let op = KernelOp::parse(&opname)?;
                    bench_op(op, parse_shape(&shape)?, iters, warmup)?
                }
                None => {
                    let name = preset.expect("clap enforces preset xor op");
                    let cfg = NetworkConfig::preset(&name, frames, classes, input)?;
                    bench_forward(&cfg, batch, iters, warmup)?
                }
            };
            let text = format!("{CSV_HEADER}\n{}\n", record.csv_row());
            emit(out.as_deref(), &text)
        }
        Cmd::Gradcheck { tol, seed } => {
            let variants = [
                BlockVariant::Standard,
                BlockVariant::Compact,
                BlockVariant::Headtail,
                BlockVariant::StandardWithShift,
            ];
            let mut all_pass = true;
            for (i, v) in variants.iter().enumerate() {
                let report = grad_check(&micro_config(*v), tol, seed + i as u64)?;
                print!("{}", report.table());
                all_pass &= report.pass();
            }
            let shuffle_report = grad_check_shuffle_only(1e-10, seed)?;
            print!("{}", shuffle_report.table());
            all_pass &= shuffle_report.pass();
            if all_pass {
                Ok(())
            } else {
                Err(Error::Config("gradient check failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
