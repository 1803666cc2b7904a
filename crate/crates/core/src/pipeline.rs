//! Staged pipelines tying datasets, training, checkpoints, evaluation, and
//! rollouts together. The CLI subcommands and the acceptance suite both run
//! through these functions.

use crate::autodiff::ParamStore;
use crate::baseline::{train_fno, FnoBaseline};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::TrajectorySet;
use crate::dll::{build_latent_dataset, sample_ensemble, train_dll, DllHead};
use crate::encoder::{train_operator_encoder, OperatorEncoder};
use crate::error::{CoreError, Result};
use crate::metrics::{MetricReport, SampleCloud};
use crate::optim::EmaState;
use crate::rng::named_stream;
use crate::rollout::{
    aggregate, closed_loop, DeterministicSurrogate, GenerativeSurrogate, RolloutConfig,
    RolloutRecord, RolloutSummary,
};
use crate::tensor::Tensor;
use crate::train_util::TrainLog;

pub struct EncoderStage {
    pub store: ParamStore,
    pub enc: OperatorEncoder,
    pub log: TrainLog,
}

pub fn train_encoder_stage(
    cfg: &RunConfig,
    train: &TrajectorySet,
    val: Option<&TrajectorySet>,
) -> Result<EncoderStage> {
    let mut store = ParamStore::new();
    let mut rng = named_stream(cfg.seed, "init:encoder", 0);
    let enc = OperatorEncoder::new(&mut store, cfg, &mut rng)?;
    let log = train_operator_encoder(&mut store, &enc, train, val, cfg)?;
    Ok(EncoderStage { store, enc, log })
}

pub fn encoder_checkpoint(stage: &EncoderStage, cfg: &RunConfig, dataset_digest: u64) -> Checkpoint {
    Checkpoint::from_store(&stage.store, None, OperatorEncoder::arch_digest(cfg), dataset_digest)
}

pub fn load_encoder_stage(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<(ParamStore, OperatorEncoder)> {
    if ckpt.arch_digest != OperatorEncoder::arch_digest(cfg) {
        return Err(CoreError::DigestMismatch(format!(
            "encoder checkpoint architecture {:#x} does not match config {:#x}",
            ckpt.arch_digest,
            OperatorEncoder::arch_digest(cfg)
        )));
    }
    let mut store = ParamStore::new();
    let mut rng = named_stream(cfg.seed, "init:encoder", 0);
    let enc = OperatorEncoder::new(&mut store, cfg, &mut rng)?;
    ckpt.load_into(&mut store)?;
    Ok((store, enc))
}

pub struct DllStage {
    /// Raw trained weights.
    pub store: ParamStore,
    /// Weights with the EMA shadow applied (inference selection).
    pub ema_store: ParamStore,
    pub dll: DllHead,
    pub ema: EmaState,
    pub log: TrainLog,
}

pub fn train_dll_stage(
    cfg: &RunConfig,
    enc_store: &ParamStore,
    enc: &OperatorEncoder,
    train: &TrajectorySet,
) -> Result<DllStage> {
    let mut store = ParamStore::new();
    let mut rng = named_stream(cfg.seed, "init:dll", 0);
    let mut dll = DllHead::new(&mut store, cfg, &mut rng)?;
    let latents = build_latent_dataset(enc_store, enc, &mut dll, train, cfg.train.batch_size.max(8))?;
    let (log, ema) = train_dll(&mut store, &dll, &latents, cfg)?;
    let mut ema_store = store.clone();
    ema.apply_to(&mut ema_store);
    Ok(DllStage { store, ema_store, dll, ema, log })
}

pub fn dll_checkpoint(stage: &DllStage, cfg: &RunConfig, dataset_digest: u64) -> Checkpoint {
    let mut ckpt = Checkpoint::from_store(
        &stage.store,
        Some(&stage.ema),
        DllHead::arch_digest(cfg),
        dataset_digest,
    );
    ckpt.blobs.push(("latent.mean".into(), Tensor::from_vec(stage.dll.latent_mean.clone())));
    ckpt.blobs.push(("latent.std".into(), Tensor::from_vec(stage.dll.latent_std.clone())));
    ckpt
}

/// Rebuilds the DLL with EMA weights applied, ready for sampling.
pub fn load_dll_stage(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<(ParamStore, DllHead)> {
    if ckpt.arch_digest != DllHead::arch_digest(cfg) {
        return Err(CoreError::DigestMismatch(format!(
            "DLL checkpoint architecture {:#x} does not match config {:#x}",
            ckpt.arch_digest,
            DllHead::arch_digest(cfg)
        )));
    }
    let mut store = ParamStore::new();
    let mut rng = named_stream(cfg.seed, "init:dll", 0);
    let mut dll = DllHead::new(&mut store, cfg, &mut rng)?;
    ckpt.load_ema_into(&mut store)?;
    let find = |name: &str| -> Result<Vec<f64>> {
        ckpt.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.data().to_vec())
            .ok_or_else(|| CoreError::config(format!("checkpoint missing blob '{name}'")))
    };
    dll.latent_mean = find("latent.mean")?;
    dll.latent_std = find("latent.std")?;
    Ok((store, dll))
}

pub struct FnoStage {
    pub store: ParamStore,
    pub model: FnoBaseline,
    pub log: TrainLog,
}

pub fn train_fno_stage(cfg: &RunConfig, train: &TrajectorySet) -> Result<FnoStage> {
    let mut store = ParamStore::new();
    let mut rng = named_stream(cfg.seed, "init:fno", 0);
    let model = FnoBaseline::new(&mut store, cfg, &mut rng)?;
    let log = train_fno(&mut store, &model, train, cfg)?;
    Ok(FnoStage { store, model, log })
}

pub fn fno_checkpoint(stage: &FnoStage, cfg: &RunConfig, dataset_digest: u64) -> Checkpoint {
    Checkpoint::from_store(&stage.store, None, FnoBaseline::arch_digest(cfg), dataset_digest)
}

pub fn load_fno_stage(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<(ParamStore, FnoBaseline)> {
    if ckpt.arch_digest != FnoBaseline::arch_digest(cfg) {
        return Err(CoreError::DigestMismatch(format!(
            "FNO checkpoint architecture {:#x} does not match config {:#x}",
            ckpt.arch_digest,
            FnoBaseline::arch_digest(cfg)
        )));
    }
    let mut store = ParamStore::new();
    let mut rng = named_stream(cfg.seed, "init:fno", 0);
    let model = FnoBaseline::new(&mut store, cfg, &mut rng)?;
    ckpt.load_into(&mut store)?;
    Ok((store, model))
}

/// Hard digest check between an artifact and the dataset it is used with.
pub fn require_digest_match(expected: u64, found: u64, what: &str) -> Result<()> {
    if expected != found {
        return Err(CoreError::DigestMismatch(format!(
            "{what}: artifact digest {found:#x} does not match dataset digest {expected:#x}"
        )));
    }
    Ok(())
}

/// Truth ensemble for one evaluation condition.
fn truth_cloud(eval: &TrajectorySet, i: usize) -> Result<SampleCloud> {
    SampleCloud::new((0..eval.realizations).map(|r| eval.output(i, r, 0).to_vec()).collect())
}

/// Per-condition DLL ensembles scored against the truth realizations.
pub fn evaluate_dll(
    cfg: &RunConfig,
    eval: &TrajectorySet,
    enc_store: &ParamStore,
    enc: &OperatorEncoder,
    dll_store: &ParamStore,
    dll: &DllHead,
) -> Result<MetricReport> {
    let mut report = MetricReport::new(128, cfg.seed);
    for i in 0..eval.n_inputs {
        let ensemble = sample_ensemble(
            enc_store,
            enc,
            dll_store,
            dll,
            eval.input(i),
            &eval.norm,
            cfg.train.sample_count,
            cfg.train.sampler_steps,
            cfg.seed,
            i as u64,
        )?;
        let pred = SampleCloud::new(ensemble)?;
        report.push_condition(&pred, &truth_cloud(eval, i)?)?;
    }
    Ok(report)
}

/// Deterministic-FNO point predictions scored as zero-spread ensembles.
pub fn evaluate_fno(
    cfg: &RunConfig,
    eval: &TrajectorySet,
    fno_store: &ParamStore,
    fno: &FnoBaseline,
) -> Result<MetricReport> {
    let _ = cfg;
    let mut report = MetricReport::new(128, cfg.seed);
    let pts = eval.points();
    for i in 0..eval.n_inputs {
        let a = Tensor::new(vec![1, pts], eval.norm.normalize_in(eval.input(i)))?;
        let pred_norm = fno.predict(fno_store, &a)?;
        let pred_phys = eval.norm.denormalize_out(pred_norm.data());
        let pred = SampleCloud::new(vec![pred_phys])?;
        report.push_condition(&pred, &truth_cloud(eval, i)?)?;
    }
    Ok(report)
}

/// Truth against itself: the self-evaluation mode used to sanity-check that
/// distributional metrics vanish.
pub fn evaluate_truth_self(eval: &TrajectorySet, seed: u64) -> Result<MetricReport> {
    let mut report = MetricReport::new(128, seed);
    for i in 0..eval.n_inputs {
        let t = truth_cloud(eval, i)?;
        report.push_condition(&t, &t)?;
    }
    Ok(report)
}

/// Closed-loop rollouts of the DLL over every evaluation trajectory.
pub fn rollout_dll(
    cfg: &RunConfig,
    eval: &TrajectorySet,
    enc_store: &ParamStore,
    enc: &OperatorEncoder,
    dll_store: &ParamStore,
    dll: &DllHead,
) -> Result<(RolloutSummary, Vec<RolloutRecord>)> {
    let rollout_cfg = RolloutConfig {
        horizon: eval.horizon,
        ensemble: cfg.train.sample_count,
        sampler_steps: cfg.train.sampler_steps,
        seed: cfg.seed,
    };
    let mut records = Vec::new();
    for i in 0..eval.n_inputs {
        let truth: Vec<Vec<f64>> = (0..eval.horizon).map(|t| eval.output(i, 0, t).to_vec()).collect();
        let mut model = GenerativeSurrogate {
            enc_store,
            enc,
            dll_store,
            dll,
            norm: eval.norm,
            sampler_steps: rollout_cfg.sampler_steps,
            seed: cfg.seed,
            trajectory_tag: i as u64,
        };
        records.push(closed_loop(&mut model, eval.input(i), &truth, &rollout_cfg)?);
    }
    Ok((aggregate(&records), records))
}

/// Closed-loop rollouts of the deterministic baseline (a single member).
pub fn rollout_fno(
    cfg: &RunConfig,
    eval: &TrajectorySet,
    fno_store: &ParamStore,
    fno: &FnoBaseline,
) -> Result<(RolloutSummary, Vec<RolloutRecord>)> {
    let rollout_cfg = RolloutConfig {
        horizon: eval.horizon,
        ensemble: 1,
        sampler_steps: cfg.train.sampler_steps,
        seed: cfg.seed,
    };
    let mut records = Vec::new();
    for i in 0..eval.n_inputs {
        let truth: Vec<Vec<f64>> = (0..eval.horizon).map(|t| eval.output(i, 0, t).to_vec()).collect();
        let mut model = DeterministicSurrogate { store: fno_store, model: fno, norm: eval.norm };
        records.push(closed_loop(&mut model, eval.input(i), &truth, &rollout_cfg)?);
    }
    Ok((aggregate(&records), records))
}
