//! Black-box tests of the installed binary: exit codes, file formats,
//! and output determinism.

use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use vshuffle::io::write_vst1_file;
use vshuffle::tensor::{Shape, VideoTensor};

const BIN: &str = env!("CARGO_BIN_EXE_vshuffle");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn shuffle_inverse_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.vst");
    let b = dir.path().join("b.vst");
    let c = dir.path().join("c.vst");

    let shape = Shape::new(2, 4, 8, 5, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<f32> = (0..shape.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    write_vst1_file(&a, &VideoTensor::from_vec(shape, data).unwrap()).unwrap();

    let out = run(&["shuffle", "--in", a.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{out:?}");
    let out = run(&[
        "shuffle",
        "--in",
        b.to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--inverse",
    ]);
    assert_eq!(code(&out), 0, "{out:?}");

    let (fa, fb, fc) = (
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        std::fs::read(&c).unwrap(),
    );
    assert_ne!(fa, fb, "shuffle must actually permute");
    assert_eq!(fa, fc, "inverse must undo the shuffle bitwise");
}

#[test]
fn count_prints_the_published_totals() {
    let out = run(&[
        "count", "--preset", "vsn-r50", "--frames", "8", "--classes", "174", "--input", "224",
    ]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let totals = stdout
        .lines()
        .find(|l| l.starts_with("totals:"))
        .expect("totals line");
    assert!(totals.contains("M params"), "{totals}");
    assert!(totals.contains("GFLOPs"), "{totals}");
    // 10% bands around 24.3M / 33G.
    let params: f64 = totals
        .split_whitespace()
        .nth(1)
        .unwrap()
        .trim_end_matches('M')
        .parse()
        .unwrap();
    assert!((params - 24.3).abs() / 24.3 < 0.10, "{params}");
}

#[test]
fn count_json_is_machine_readable() {
    let out = run(&["count", "--preset", "toy-vsn", "--frames", "8", "--classes", "2", "--input", "16", "--json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["total_params"].as_u64().unwrap() > 0);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["count", "--no-such-flag"])), 1);
    assert_eq!(code(&run(&[])), 1);
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["count", "--help"])), 0);
}

#[test]
fn runtime_failures_exit_2() {
    assert_eq!(code(&run(&["count", "--preset", "resnet-9000"])), 2);
    assert_eq!(code(&run(&["shuffle", "--in", "/nonexistent.vst", "--out", "/tmp/x.vst"])), 2);
}

fn write_train_config(path: &Path) {
    std::fs::write(
        path,
        r#"
[network]
preset = "toy-vsn"
frames = 8
classes = 2
input_size = 16

[training]
lr = 0.02
batch_size = 16
epochs = 1
seed = 3

[training.schedule]
kind = "cosine"
warmup_steps = 4

[task]
kind = "frame_order"
clip_length = 8
frame_size = 16
num_train = 64
num_val = 32
noise_std = 0.05
seed = 3
"#,
    )
    .unwrap();
}

#[test]
fn train_is_bitwise_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    write_train_config(&cfg);
    let m1 = dir.path().join("m1.jsonl");
    let m2 = dir.path().join("m2.jsonl");
    for m in [&m1, &m2] {
        let out = run(&["train", "--config", cfg.to_str().unwrap(), "--out", m.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (a, b) = (std::fs::read(&m1).unwrap(), std::fs::read(&m2).unwrap());
    assert!(!a.is_empty());
    assert_eq!(a, b);
    // Every line parses as an epoch record.
    for line in String::from_utf8(a).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["val_acc"].is_number());
    }
}

#[test]
fn train_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    write_train_config(&cfg);
    let metrics = dir.path().join("m.jsonl");
    let ckpt = dir.path().join("net.ckpt");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        metrics.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let entries = vshuffle::io::read_checkpoint_file(&ckpt).unwrap();
    let netcfg = vshuffle::config::NetworkConfig::preset("toy-vsn", 8, 2, 16).unwrap();
    let mut net = vshuffle::nn::network::Network::<f32>::new(&netcfg, 99).unwrap();
    net.load_checkpoint(&entries).unwrap();
}

#[test]
fn bench_emits_one_csv_record() {
    let out = run(&[
        "bench", "--op", "shuffle", "--shape", "2x4x8x8x8", "--iters", "5", "--warmup", "1",
    ]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("name,batch,iters,mean_ms,std_ms,vps"));
    let row = lines.next().expect("one record");
    assert_eq!(row.split(',').count(), 6);
    assert!(row.starts_with("shuffle,"));
    assert_eq!(lines.next(), None);
}

#[test]
fn threads_env_var_is_accepted() {
    let out = Command::new(BIN)
        .env("VSHUFFLE_THREADS", "1")
        .args(["count", "--preset", "toy-vsn", "--frames", "8", "--classes", "2", "--input", "16"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
}
