//! End-to-end CLI smoke tests on a miniature configuration: artifact
//! determinism, the staged-training contract, and the error category codes.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dll-lab")
}

fn tiny_config() -> String {
    // Miniature stochastic Burgers setup that runs the whole pipeline in
    // seconds: fewer substeps, small nets, few epochs.
    r#"
system = "sburgers"
seed = 5

[grid]
n = 32
length = 6.283185307179586

[solver]
substep = 0.001
substeps_per_macro = 50
nu = 0.1
alpha = 0.0
forcing_mode = 0
forcing_amp = 0.0
noise_sigma = 1.0
noise_weights = [1.0, 0.5, 0.1]
ic_decay = 2.0
ic_amplitude = 1.0
source_lambda = 0.1
sigma_ln = 10.0
ell_ln = 0.2
sigma_gp = 10.0
ell_gp = 0.5
grf_jitter = 0.00001
perm_decay = 2.0
cg_tolerance = 0.000001
cg_max_iterations = 5000

[data]
n_train = 24
n_eval_inputs = 3
eval_realizations = 6
horizon_train = 1
horizon_eval = 1
warmup = 0

[model]
width = 12
fno_layers = 2
modes_cap = 6
rank = 6
velocity_hidden = 48
velocity_layers = 2
time_embed_dim = 8
cond_dim = 12

[train]
encoder_epochs = 6
dll_epochs = 10
dll_joint_epochs = 2
fno_epochs = 4
batch_size = 8
lr = 0.002
weight_decay = 0.0001
ema_decay = 0.999
grad_clip = 1.0
sampler_steps = 10
sample_count = 4
"#
    .to_string()
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).output().expect("spawn dll-lab")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dll-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn gen_into(dir: &Path, cfg_path: &Path) {
    let out = run(&[
        "gen",
        "--system",
        "sburgers",
        "--out",
        dir.to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "gen failed: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pipeline_runs_and_artifacts_are_deterministic() {
    let base = tmp_dir("pipe");
    let cfg_path = base.join("tiny.toml");
    std::fs::write(&cfg_path, tiny_config()).unwrap();

    let run_a = base.join("a");
    let run_b = base.join("b");
    gen_into(&run_a, &cfg_path);
    gen_into(&run_b, &cfg_path);
    // Same flags, byte-identical datasets.
    assert_eq!(
        std::fs::read(run_a.join("train.dlld")).unwrap(),
        std::fs::read(run_b.join("train.dlld")).unwrap()
    );
    assert_eq!(
        std::fs::read(run_a.join("eval.dlld")).unwrap(),
        std::fs::read(run_b.join("eval.dlld")).unwrap()
    );

    // train-dll refuses to run before train-encoder (config category = 2).
    let out = run(&["train-dll", "--run", run_a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    for cmd in ["train-encoder", "train-dll", "train-fno"] {
        let out = run(&[cmd, "--run", run_a.to_str().unwrap()]);
        assert!(out.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(&["eval", "--run", run_a.to_str().unwrap(), "--self-check-truth", "--dump-ensembles"]);
    assert!(out.status.success(), "eval failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("DLL") && stdout.contains("FNO"), "missing report lines: {stdout}");
    // Truth scored against itself has zero distances.
    assert!(stdout.contains("ED 0.000e0") || stdout.contains("ED 0"), "{stdout}");
    for artifact in [
        "encoder.dllm",
        "dll.dllm",
        "fno.dllm",
        "eval_dll.csv",
        "eval_fno.csv",
        "eval_truth_self.csv",
        "eval_ensembles.dlld",
        "eval_ensembles.meta.toml",
        "encoder_train.csv",
    ] {
        assert!(run_a.join(artifact).exists(), "missing {artifact}");
    }

    // Identical seeds and configs give identical checkpoints.
    for cmd in ["train-encoder", "train-dll", "train-fno"] {
        let out = run(&[cmd, "--run", run_b.to_str().unwrap()]);
        assert!(out.status.success());
    }
    for ckpt in ["encoder.dllm", "dll.dllm", "fno.dllm"] {
        assert_eq!(
            std::fs::read(run_a.join(ckpt)).unwrap(),
            std::fs::read(run_b.join(ckpt)).unwrap(),
            "checkpoint {ckpt} not reproducible"
        );
    }

    // Tampering with the config yields the digest-mismatch category (3).
    let tampered = tiny_config().replace("seed = 5", "seed = 6");
    std::fs::write(run_a.join("config.toml"), tampered).unwrap();
    let out = run(&["eval", "--run", run_a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::remove_dir_all(&base).ok();
}

#[test]
fn unknown_system_is_a_config_error() {
    let dir = tmp_dir("badsys");
    let out = run(&["gen", "--system", "mystery", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}
