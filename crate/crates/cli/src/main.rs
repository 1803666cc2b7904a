//! Operator-facing command line: dataset generation, staged training,
//! evaluation, rollouts, and the numeric self-check suites.
//!
//! Every run lives in one directory: `gen` writes the canonical config and
//! the train/eval datasets; the training commands add checkpoints and loss
//! curves; `eval` and `rollout` add metric CSVs. Digests chain the artifacts
//! together and any mismatch is a hard error.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dll_core::checkpoint::Checkpoint;
use dll_core::config::RunConfig;
use dll_core::dataset::{generate, TrajectorySet};
use dll_core::error::CoreError;
use dll_core::metrics::SampleCloud;
use dll_core::pipeline;
use dll_core::rollout::summary_csv;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "dll-lab", about = "Generative neural-operator laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/eval datasets for one system into a run directory.
    Gen(GenArgs),
    /// Stage 1: train the operator encoder (basis + coefficient networks).
    TrainEncoder(RunArgs),
    /// Stage 2: train the diffusion last layer in coefficient space.
    TrainDll(RunArgs),
    /// Train the deterministic FNO baseline.
    TrainFno(RunArgs),
    /// Score conditional ensembles on the evaluation split.
    Eval(EvalArgs),
    /// Closed-loop autoregressive evaluation on trajectory datasets.
    Rollout(RunArgs),
    /// Run the numeric oracle suites and print one line per check.
    Selfcheck,
}

#[derive(Args)]
struct GenArgs {
    /// sburgers | sdarcy | ks | kolmogorov
    #[arg(long)]
    system: String,
    /// desk | paper
    #[arg(long, default_value = "desk")]
    scale: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Optional config file overriding the preset entirely.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Run directory produced by `gen`.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    /// Also score the truth ensemble against itself (all distances zero).
    #[arg(long)]
    self_check_truth: bool,
    /// Dump sampled ensembles in the dataset format with a provenance sidecar.
    #[arg(long)]
    dump_ensembles: bool,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::TrainEncoder(args) => cmd_train_encoder(args),
        Command::TrainDll(args) => cmd_train_dll(args),
        Command::TrainFno(args) => cmd_train_fno(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Rollout(args) => cmd_rollout(args),
        Command::Selfcheck => cmd_selfcheck(),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}

/// Category exit codes: 2 config/usage, 3 digest, 4 numerics, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Config(_)) | Some(CoreError::Usage(_)) => 2,
        Some(CoreError::DigestMismatch(_)) => 3,
        Some(CoreError::Numerics(_)) => 4,
        _ => 1,
    }
}

fn load_config(run: &Path) -> anyhow::Result<RunConfig> {
    let path = run.join("config.toml");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(RunConfig::from_toml(&text)?)
}

fn load_dataset(run: &Path, name: &str, cfg: &RunConfig) -> anyhow::Result<TrajectorySet> {
    let set = TrajectorySet::read(&run.join(name))?;
    if set.config_digest != cfg.digest() {
        bail!(CoreError::DigestMismatch(format!(
            "{name}: dataset digest {:#x} does not match config digest {:#x}",
            set.config_digest,
            cfg.digest()
        )));
    }
    Ok(set)
}

fn cmd_gen(args: GenArgs) -> anyhow::Result<()> {
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::preset(&args.system, &args.scale, args.seed)?,
    };
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.toml"), cfg.canonical_toml())?;
    let (train, eval) = generate(&cfg)?;
    train.write(&args.out.join("train.dlld"))?;
    eval.write(&args.out.join("eval.dlld"))?;
    println!(
        "generated {}: {} train inputs, {} eval inputs x {} realizations, horizon {}, N={}, digest {:#016x}",
        cfg.system,
        train.n_inputs,
        eval.n_inputs,
        eval.realizations,
        eval.horizon,
        cfg.grid.n,
        cfg.digest()
    );
    // Per-point spread over the eval realizations, as a quick health signal.
    if eval.realizations > 1 {
        let cloud = SampleCloud::new(
            (0..eval.realizations).map(|r| eval.output(0, r, 0).to_vec()).collect(),
        )?;
        let std = cloud.std();
        let mean_std = std.iter().sum::<f64>() / std.len() as f64;
        println!("eval condition 0: mean per-point output std {mean_std:.4}");
    }
    Ok(())
}

fn cmd_train_encoder(args: RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.run)?;
    let train = load_dataset(&args.run, "train.dlld", &cfg)?;
    let eval = load_dataset(&args.run, "eval.dlld", &cfg)?;
    let stage = pipeline::train_encoder_stage(&cfg, &train, Some(&eval))?;
    pipeline::encoder_checkpoint(&stage, &cfg, train.config_digest)
        .write(&args.run.join("encoder.dllm"))?;
    std::fs::write(args.run.join("encoder_train.csv"), stage.log.to_csv())?;
    println!(
        "encoder trained: loss {:.6} -> {:.6} (held-out {:.6} -> {:.6})",
        stage.log.train_losses.first().unwrap_or(&f64::NAN),
        stage.log.train_losses.last().unwrap_or(&f64::NAN),
        stage.log.val_losses.first().unwrap_or(&f64::NAN),
        stage.log.val_losses.last().unwrap_or(&f64::NAN)
    );
    Ok(())
}

fn cmd_train_dll(args: RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.run)?;
    let train = load_dataset(&args.run, "train.dlld", &cfg)?;
    let enc_path = args.run.join("encoder.dllm");
    if !enc_path.exists() {
        bail!(CoreError::config(
            "train-dll requires an encoder checkpoint; run train-encoder first"
        ));
    }
    let ckpt = Checkpoint::read(&enc_path)?;
    pipeline::require_digest_match(train.config_digest, ckpt.dataset_digest, "encoder checkpoint")?;
    let (enc_store, enc) = pipeline::load_encoder_stage(&cfg, &ckpt)?;
    let stage = pipeline::train_dll_stage(&cfg, &enc_store, &enc, &train)?;
    pipeline::dll_checkpoint(&stage, &cfg, train.config_digest)
        .write(&args.run.join("dll.dllm"))?;
    std::fs::write(args.run.join("dll_train.csv"), stage.log.to_csv())?;
    println!(
        "dll trained: velocity loss {:.6} -> {:.6}",
        stage.log.train_losses.first().unwrap_or(&f64::NAN),
        stage.log.train_losses.last().unwrap_or(&f64::NAN)
    );
    Ok(())
}

fn cmd_train_fno(args: RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.run)?;
    let train = load_dataset(&args.run, "train.dlld", &cfg)?;
    let stage = pipeline::train_fno_stage(&cfg, &train)?;
    pipeline::fno_checkpoint(&stage, &cfg, train.config_digest)
        .write(&args.run.join("fno.dllm"))?;
    std::fs::write(args.run.join("fno_train.csv"), stage.log.to_csv())?;
    println!(
        "fno trained: loss {:.6} -> {:.6}",
        stage.log.train_losses.first().unwrap_or(&f64::NAN),
        stage.log.train_losses.last().unwrap_or(&f64::NAN)
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.run)?;
    let eval = load_dataset(&args.run, "eval.dlld", &cfg)?;
    if args.self_check_truth {
        let report = pipeline::evaluate_truth_self(&eval, cfg.seed)?;
        std::fs::write(args.run.join("eval_truth_self.csv"), report.to_csv())?;
        let m = report.means();
        println!("truth vs itself: ED {:.3e}, SWD {:.3e}", m.ed, m.swd);
    }
    let dll_path = args.run.join("dll.dllm");
    if dll_path.exists() {
        let dll_ckpt = Checkpoint::read(&dll_path)?;
        pipeline::require_digest_match(eval.config_digest, dll_ckpt.dataset_digest, "dll checkpoint")?;
        let enc_ckpt = Checkpoint::read(&args.run.join("encoder.dllm"))?;
        pipeline::require_digest_match(eval.config_digest, enc_ckpt.dataset_digest, "encoder checkpoint")?;
        let (enc_store, enc) = pipeline::load_encoder_stage(&cfg, &enc_ckpt)?;
        let (dll_store, dll) = pipeline::load_dll_stage(&cfg, &dll_ckpt)?;
        let report = pipeline::evaluate_dll(&cfg, &eval, &enc_store, &enc, &dll_store, &dll)?;
        std::fs::write(args.run.join("eval_dll.csv"), report.to_csv())?;
        let m = report.means();
        println!(
            "DLL : ED {:.4}, SWD {:.4}, NRMSE_m {:.4}, NRMSE_s {:.4}, CRPS {:.4}, SSR {:.4}",
            m.ed, m.swd, m.nrmse_m, m.nrmse_s, m.crps, m.ssr
        );
        if args.dump_ensembles {
            dump_ensembles(&args.run, &cfg, &eval, &enc_store, &enc, &dll_store, &dll)?;
        }
    }
    let fno_path = args.run.join("fno.dllm");
    if fno_path.exists() {
        let ckpt = Checkpoint::read(&fno_path)?;
        pipeline::require_digest_match(eval.config_digest, ckpt.dataset_digest, "fno checkpoint")?;
        let (store, model) = pipeline::load_fno_stage(&cfg, &ckpt)?;
        let report = pipeline::evaluate_fno(&cfg, &eval, &store, &model)?;
        std::fs::write(args.run.join("eval_fno.csv"), report.to_csv())?;
        let m = report.means();
        println!(
            "FNO : ED {:.4}, SWD {:.4}, NRMSE_m {:.4}, NRMSE_s {:.4}, CRPS {:.4}, SSR {:.4}",
            m.ed, m.swd, m.nrmse_m, m.nrmse_s, m.crps, m.ssr
        );
    }
    if !dll_path.exists() && !fno_path.exists() && !args.self_check_truth {
        bail!(CoreError::config("eval: no checkpoints found in the run directory"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn dump_ensembles(
    run: &Path,
    cfg: &RunConfig,
    eval: &TrajectorySet,
    enc_store: &dll_core::autodiff::ParamStore,
    enc: &dll_core::encoder::OperatorEncoder,
    dll_store: &dll_core::autodiff::ParamStore,
    dll: &dll_core::dll::DllHead,
) -> anyhow::Result<()> {
    let k = cfg.train.sample_count;
    let mut dump = TrajectorySet::new(
        eval.system,
        eval.ndim,
        eval.n,
        eval.length,
        eval.config_digest,
        eval.n_inputs,
        k,
        1,
        0,
    );
    dump.norm = eval.norm;
    for i in 0..eval.n_inputs {
        dump.set_input(i, eval.input(i));
        let ensemble = dll_core::dll::sample_ensemble(
            enc_store,
            enc,
            dll_store,
            dll,
            eval.input(i),
            &eval.norm,
            k,
            cfg.train.sampler_steps,
            cfg.seed,
            i as u64,
        )?;
        for (r, member) in ensemble.iter().enumerate() {
            dump.set_output(i, r, 0, member);
        }
    }
    dump.write(&run.join("eval_ensembles.dlld"))?;
    let dll_ckpt = Checkpoint::read(&run.join("dll.dllm"))?;
    std::fs::write(
        run.join("eval_ensembles.meta.toml"),
        format!(
            "model_arch_digest = {:#018x}\ndataset_digest = {:#018x}\nseed = {}\nsampler_steps = {}\nensemble = {}\n",
            dll_ckpt.arch_digest,
            dll_ckpt.dataset_digest,
            cfg.seed,
            cfg.train.sampler_steps,
            k
        ),
    )?;
    Ok(())
}

fn cmd_rollout(args: RunArgs) -> anyhow::Result<()> {
    let cfg = load_config(&args.run)?;
    let eval = load_dataset(&args.run, "eval.dlld", &cfg)?;
    if eval.horizon < 2 {
        bail!(CoreError::config("rollout requires a trajectory dataset (horizon > 1)"));
    }
    let mut any = false;
    let dll_path = args.run.join("dll.dllm");
    if dll_path.exists() {
        let dll_ckpt = Checkpoint::read(&dll_path)?;
        pipeline::require_digest_match(eval.config_digest, dll_ckpt.dataset_digest, "dll checkpoint")?;
        let enc_ckpt = Checkpoint::read(&args.run.join("encoder.dllm"))?;
        let (enc_store, enc) = pipeline::load_encoder_stage(&cfg, &enc_ckpt)?;
        let (dll_store, dll) = pipeline::load_dll_stage(&cfg, &dll_ckpt)?;
        let (summary, _) = pipeline::rollout_dll(&cfg, &eval, &enc_store, &enc, &dll_store, &dll)?;
        std::fs::write(args.run.join("rollout_dll.csv"), summary_csv(&summary))?;
        println!(
            "DLL rollout: NRMSE {:.4}, CRPS {:.4}, SSR {:.4} over {} trajectories ({} truncated)",
            summary.overall.nrmse, summary.overall.crps, summary.overall.ssr, summary.records, summary.truncated
        );
        any = true;
    }
    let fno_path = args.run.join("fno.dllm");
    if fno_path.exists() {
        let ckpt = Checkpoint::read(&fno_path)?;
        pipeline::require_digest_match(eval.config_digest, ckpt.dataset_digest, "fno checkpoint")?;
        let (store, model) = pipeline::load_fno_stage(&cfg, &ckpt)?;
        let (summary, _) = pipeline::rollout_fno(&cfg, &eval, &store, &model)?;
        std::fs::write(args.run.join("rollout_fno.csv"), summary_csv(&summary))?;
        println!(
            "FNO rollout: NRMSE {:.4}, CRPS {:.4}, SSR {:.4} over {} trajectories",
            summary.overall.nrmse, summary.overall.crps, summary.overall.ssr, summary.records
        );
        any = true;
    }
    if !any {
        bail!(CoreError::config("rollout: no checkpoints found in the run directory"));
    }
    Ok(())
}

fn cmd_selfcheck() -> anyhow::Result<()> {
    let results = dll_core::selfcheck::all_suites();
    let mut failed = 0;
    for r in &results {
        println!("[{}] {:<28} {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
        if !r.pass {
            failed += 1;
        }
    }
    println!("{} checks, {} failed", results.len(), failed);
    if failed > 0 {
        bail!(CoreError::numerics(format!("{failed} self-checks failed")));
    }
    Ok(())
}
