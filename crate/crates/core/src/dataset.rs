//! Condition-target datasets and their on-disk format.
//!
//! File layout (little-endian throughout):
//!
//! ```text
//! magic        4 bytes  "DLLD"
//! version      u32      1
//! system id    u32      1=sburgers 2=sdarcy 3=ks 4=kolmogorov 5=synthetic
//! dtype code   u32      8 (f64)
//! ndim         u32      1 or 2
//! axis sizes   ndim x u32
//! lengths      ndim x f64
//! digest       u64      config digest of the producing run
//! n_inputs     u32
//! realizations u32
//! horizon      u32
//! warmup       u32
//! norm         4 x f64  input mean/std, output mean/std (train split stats)
//! body         f64 x (inputs then outputs), row-major
//! ```
//!
//! Pair datasets (stochastic systems) use horizon 1: `outputs[i][r][0]` is
//! one realization of the conditional law for `inputs[i]`. Trajectory
//! datasets (KS, Kolmogorov) use realizations 1: `outputs[i][0][t]` is the
//! state `t + 1` macro steps after the stored initial state `inputs[i]`.

use crate::config::RunConfig;
use crate::darcy::{sample_permeability, sample_source, CgConfig, GrfSpec, RbfSampler};
use crate::error::{CoreError, Result};
use crate::grid::{Grid1d, Grid2d};
use crate::rng::{named_stream, stream};
use crate::solvers::burgers::{BurgersSde, SdeNoiseSpec};
use crate::solvers::init::{sample_ic_1d, sample_ic_2d};
use crate::solvers::kolmogorov::KolmogorovFlow;
use crate::solvers::ks::KsSolver;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"DLLD";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    SBurgers,
    SDarcy,
    Ks,
    Kolmogorov,
    Synthetic,
}

impl SystemKind {
    pub fn code(self) -> u32 {
        match self {
            SystemKind::SBurgers => 1,
            SystemKind::SDarcy => 2,
            SystemKind::Ks => 3,
            SystemKind::Kolmogorov => 4,
            SystemKind::Synthetic => 5,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            1 => SystemKind::SBurgers,
            2 => SystemKind::SDarcy,
            3 => SystemKind::Ks,
            4 => SystemKind::Kolmogorov,
            5 => SystemKind::Synthetic,
            other => return Err(CoreError::config(format!("unknown system id {other}"))),
        })
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "sburgers" => SystemKind::SBurgers,
            "sdarcy" => SystemKind::SDarcy,
            "ks" => SystemKind::Ks,
            "kolmogorov" => SystemKind::Kolmogorov,
            "synthetic" => SystemKind::Synthetic,
            other => return Err(CoreError::config(format!("unknown system '{other}'"))),
        })
    }
}

/// Scalar Gaussian normalization statistics, computed from the train split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub in_mean: f64,
    pub in_std: f64,
    pub out_mean: f64,
    pub out_std: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Normalization { in_mean: 0.0, in_std: 1.0, out_mean: 0.0, out_std: 1.0 }
    }

    fn stats(values: &[f64]) -> (f64, f64) {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt().max(1e-12))
    }

    pub fn from_train(inputs: &[f64], outputs: &[f64]) -> Self {
        let (in_mean, in_std) = Self::stats(inputs);
        let (out_mean, out_std) = Self::stats(outputs);
        Normalization { in_mean, in_std, out_mean, out_std }
    }

    pub fn normalize_in(&self, field: &[f64]) -> Vec<f64> {
        field.iter().map(|v| (v - self.in_mean) / self.in_std).collect()
    }

    pub fn normalize_out(&self, field: &[f64]) -> Vec<f64> {
        field.iter().map(|v| (v - self.out_mean) / self.out_std).collect()
    }

    pub fn denormalize_out(&self, field: &[f64]) -> Vec<f64> {
        field.iter().map(|v| v * self.out_std + self.out_mean).collect()
    }
}

/// Condition-target dataset: inputs plus one or more output realizations
/// (or a rollout horizon) per input.
#[derive(Debug, Clone)]
pub struct TrajectorySet {
    pub system: SystemKind,
    pub ndim: usize,
    /// Points per axis.
    pub n: usize,
    pub length: f64,
    pub config_digest: u64,
    pub n_inputs: usize,
    pub realizations: usize,
    pub horizon: usize,
    pub warmup: usize,
    pub norm: Normalization,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
}

impl TrajectorySet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system: SystemKind,
        ndim: usize,
        n: usize,
        length: f64,
        config_digest: u64,
        n_inputs: usize,
        realizations: usize,
        horizon: usize,
        warmup: usize,
    ) -> Self {
        let pts = if ndim == 2 { n * n } else { n };
        TrajectorySet {
            system,
            ndim,
            n,
            length,
            config_digest,
            n_inputs,
            realizations,
            horizon,
            warmup,
            norm: Normalization::identity(),
            inputs: vec![0.0; n_inputs * pts],
            outputs: vec![0.0; n_inputs * realizations * horizon * pts],
        }
    }

    pub fn points(&self) -> usize {
        if self.ndim == 2 {
            self.n * self.n
        } else {
            self.n
        }
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let p = self.points();
        &self.inputs[i * p..(i + 1) * p]
    }

    pub fn output(&self, i: usize, r: usize, t: usize) -> &[f64] {
        let p = self.points();
        let idx = ((i * self.realizations + r) * self.horizon + t) * p;
        &self.outputs[idx..idx + p]
    }

    pub fn set_input(&mut self, i: usize, field: &[f64]) {
        let p = self.points();
        self.inputs[i * p..(i + 1) * p].copy_from_slice(field);
    }

    pub fn set_output(&mut self, i: usize, r: usize, t: usize, field: &[f64]) {
        let p = self.points();
        let idx = ((i * self.realizations + r) * self.horizon + t) * p;
        self.outputs[idx..idx + p].copy_from_slice(field);
    }

    /// Recomputes normalization statistics from this set's own data.
    pub fn compute_norm(&mut self) {
        self.norm = Normalization::from_train(&self.inputs, &self.outputs);
    }

    /// One-step training pairs `(input index, realization, step)` mapped to
    /// `(condition, target)` field slices. For pair datasets this is every
    /// (input, realization); for trajectory datasets consecutive states.
    pub fn one_step_pairs(&self) -> Vec<(&[f64], &[f64])> {
        let mut pairs = Vec::new();
        for i in 0..self.n_inputs {
            for r in 0..self.realizations {
                let mut prev = self.input(i);
                for t in 0..self.horizon {
                    let next = self.output(i, r, t);
                    pairs.push((prev, next));
                    prev = next;
                }
            }
        }
        pairs
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.system.code().to_le_bytes());
        buf.extend_from_slice(&8u32.to_le_bytes());
        buf.extend_from_slice(&(self.ndim as u32).to_le_bytes());
        for _ in 0..self.ndim {
            buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        }
        for _ in 0..self.ndim {
            buf.extend_from_slice(&self.length.to_le_bytes());
        }
        buf.extend_from_slice(&self.config_digest.to_le_bytes());
        buf.extend_from_slice(&(self.n_inputs as u32).to_le_bytes());
        buf.extend_from_slice(&(self.realizations as u32).to_le_bytes());
        buf.extend_from_slice(&(self.horizon as u32).to_le_bytes());
        buf.extend_from_slice(&(self.warmup as u32).to_le_bytes());
        for v in [self.norm.in_mean, self.norm.in_std, self.norm.out_mean, self.norm.out_std] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.inputs.iter().chain(self.outputs.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, len: usize| -> Result<&[u8]> {
            if *cursor + len > bytes.len() {
                return Err(CoreError::config("truncated dataset file"));
            }
            let s = &bytes[*cursor..*cursor + len];
            *cursor += len;
            Ok(s)
        };
        let magic = take(&mut cursor, 4)?;
        if magic != MAGIC {
            return Err(CoreError::config("not a DLLD dataset file"));
        }
        let read_u32 = |cursor: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(cursor, 4)?.try_into().unwrap()))
        };
        let read_u64 = |cursor: &mut usize| -> Result<u64> {
            Ok(u64::from_le_bytes(take(cursor, 8)?.try_into().unwrap()))
        };
        let read_f64 = |cursor: &mut usize| -> Result<f64> {
            Ok(f64::from_le_bytes(take(cursor, 8)?.try_into().unwrap()))
        };
        let version = read_u32(&mut cursor)?;
        if version != FORMAT_VERSION {
            return Err(CoreError::config(format!("unsupported dataset version {version}")));
        }
        let system = SystemKind::from_code(read_u32(&mut cursor)?)?;
        let dtype = read_u32(&mut cursor)?;
        if dtype != 8 {
            return Err(CoreError::config(format!("unsupported dtype code {dtype}")));
        }
        let ndim = read_u32(&mut cursor)? as usize;
        if ndim != 1 && ndim != 2 {
            return Err(CoreError::config(format!("bad ndim {ndim}")));
        }
        let mut n = 0usize;
        for _ in 0..ndim {
            n = read_u32(&mut cursor)? as usize;
        }
        let mut length = 0.0;
        for _ in 0..ndim {
            length = read_f64(&mut cursor)?;
        }
        let config_digest = read_u64(&mut cursor)?;
        let n_inputs = read_u32(&mut cursor)? as usize;
        let realizations = read_u32(&mut cursor)? as usize;
        let horizon = read_u32(&mut cursor)? as usize;
        let warmup = read_u32(&mut cursor)? as usize;
        let norm = Normalization {
            in_mean: read_f64(&mut cursor)?,
            in_std: read_f64(&mut cursor)?,
            out_mean: read_f64(&mut cursor)?,
            out_std: read_f64(&mut cursor)?,
        };
        let mut set =
            TrajectorySet::new(system, ndim, n, length, config_digest, n_inputs, realizations, horizon, warmup);
        set.norm = norm;
        let pts = set.points();
        let want = n_inputs * pts + n_inputs * realizations * horizon * pts;
        let body = take(&mut cursor, want * 8)?;
        let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        for v in set.inputs.iter_mut() {
            *v = values.next().unwrap();
        }
        for v in set.outputs.iter_mut() {
            *v = values.next().unwrap();
        }
        Ok(set)
    }
}

/// Generates the train and eval splits for the configured system. Eval
/// carries the train split's normalization statistics.
pub fn generate(cfg: &RunConfig) -> Result<(TrajectorySet, TrajectorySet)> {
    let digest = cfg.digest();
    let (mut train, mut eval) = match cfg.system.as_str() {
        "sburgers" => generate_burgers(cfg, digest)?,
        "sdarcy" => generate_darcy(cfg, digest)?,
        "ks" => generate_ks(cfg, digest)?,
        "kolmogorov" => generate_kolmogorov(cfg, digest)?,
        other => return Err(CoreError::config(format!("unknown system '{other}'"))),
    };
    train.compute_norm();
    eval.norm = train.norm;
    Ok((train, eval))
}

fn generate_burgers(cfg: &RunConfig, digest: u64) -> Result<(TrajectorySet, TrajectorySet)> {
    let grid = Grid1d::new(cfg.grid.n, cfg.grid.length)?;
    let noise = SdeNoiseSpec { sigma: cfg.solver.noise_sigma, weights: cfg.solver.noise_weights };
    let mut solver = BurgersSde::new(
        grid.clone(),
        cfg.solver.nu,
        noise,
        cfg.solver.substep,
        cfg.solver.substeps_per_macro,
    )?;
    let d = &cfg.data;
    let mut train =
        TrajectorySet::new(SystemKind::SBurgers, 1, cfg.grid.n, cfg.grid.length, digest, d.n_train, 1, 1, 0);
    for i in 0..d.n_train {
        let mut ic_rng = named_stream(cfg.seed, stream::DATA, i as u64);
        let u0 = sample_ic_1d(&grid, cfg.solver.ic_decay, cfg.solver.ic_amplitude, &mut ic_rng);
        let mut noise_rng = named_stream(cfg.seed, stream::NOISE, i as u64);
        let u1 = solver.terminal(&u0, &mut noise_rng)?;
        train.set_input(i, &u0);
        train.set_output(i, 0, 0, &u1);
    }
    let mut eval = TrajectorySet::new(
        SystemKind::SBurgers,
        1,
        cfg.grid.n,
        cfg.grid.length,
        digest,
        d.n_eval_inputs,
        d.eval_realizations,
        1,
        0,
    );
    for i in 0..d.n_eval_inputs {
        let idx = (d.n_train + i) as u64;
        let mut ic_rng = named_stream(cfg.seed, stream::DATA, idx);
        let u0 = sample_ic_1d(&grid, cfg.solver.ic_decay, cfg.solver.ic_amplitude, &mut ic_rng);
        eval.set_input(i, &u0);
        for r in 0..d.eval_realizations {
            let mut noise_rng = named_stream(cfg.seed, stream::NOISE, (idx << 32) | r as u64);
            let u1 = solver.terminal(&u0, &mut noise_rng)?;
            eval.set_output(i, r, 0, &u1);
        }
    }
    Ok((train, eval))
}

fn generate_darcy(cfg: &RunConfig, digest: u64) -> Result<(TrajectorySet, TrajectorySet)> {
    let n = cfg.grid.n;
    let ln_spec = GrfSpec { sigma: cfg.solver.sigma_ln, ell: cfg.solver.ell_ln, jitter: cfg.solver.grf_jitter };
    let gp_spec = GrfSpec { sigma: cfg.solver.sigma_gp, ell: cfg.solver.ell_gp, jitter: cfg.solver.grf_jitter };
    let ln_sampler = RbfSampler::new(n, &ln_spec)?;
    let gp_sampler = RbfSampler::new(n, &gp_spec)?;
    let cg = CgConfig { tolerance: cfg.solver.cg_tolerance, max_iterations: cfg.solver.cg_max_iterations };
    let d = &cfg.data;
    let solve = |a: &[f64], rng: &mut rand_chacha::ChaCha12Rng| -> Result<Vec<f64>> {
        let f = sample_source(
            &ln_sampler,
            &gp_sampler,
            cfg.solver.source_lambda,
            cfg.solver.sigma_ln,
            cfg.solver.sigma_gp,
            rng,
        )?;
        let (u, outcome) = crate::darcy::solve_darcy(a, &f, &cg)?;
        if !outcome.converged {
            // Best iterate is still usable; surface the flag in logs.
            eprintln!(
                "warning: CG stopped at {} iterations with residual {:.3e}",
                outcome.iterations, outcome.relative_residual
            );
        }
        Ok(u)
    };
    let mut train = TrajectorySet::new(SystemKind::SDarcy, 2, n, cfg.grid.length, digest, d.n_train, 1, 1, 0);
    for i in 0..d.n_train {
        let mut perm_rng = named_stream(cfg.seed, stream::DATA, i as u64);
        let a = sample_permeability(n, &mut perm_rng)?;
        let mut src_rng = named_stream(cfg.seed, stream::NOISE, i as u64);
        let u = solve(&a, &mut src_rng)?;
        train.set_input(i, &a);
        train.set_output(i, 0, 0, &u);
    }
    let mut eval = TrajectorySet::new(
        SystemKind::SDarcy,
        2,
        n,
        cfg.grid.length,
        digest,
        d.n_eval_inputs,
        d.eval_realizations,
        1,
        0,
    );
    for i in 0..d.n_eval_inputs {
        let idx = (d.n_train + i) as u64;
        let mut perm_rng = named_stream(cfg.seed, stream::DATA, idx);
        let a = sample_permeability(n, &mut perm_rng)?;
        eval.set_input(i, &a);
        for r in 0..d.eval_realizations {
            let mut src_rng = named_stream(cfg.seed, stream::NOISE, (idx << 32) | r as u64);
            let u = solve(&a, &mut src_rng)?;
            eval.set_output(i, r, 0, &u);
        }
    }
    Ok((train, eval))
}

fn generate_ks(cfg: &RunConfig, digest: u64) -> Result<(TrajectorySet, TrajectorySet)> {
    let grid = Grid1d::new(cfg.grid.n, cfg.grid.length)?;
    let mut solver = KsSolver::new(grid.clone(), cfg.solver.substep, cfg.solver.substeps_per_macro)?;
    let d = &cfg.data;
    let mut run_trajectory = |traj_idx: u64, horizon: usize| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut rng = named_stream(cfg.seed, stream::DATA, traj_idx);
        let u0 = sample_ic_1d(&grid, cfg.solver.ic_decay, cfg.solver.ic_amplitude, &mut rng);
        let mut u_hat = solver.to_spectral(&u0);
        for _ in 0..cfg.data.warmup {
            solver.macro_step(&mut u_hat)?;
        }
        let start = solver.to_physical(&u_hat);
        let mut states = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            solver.macro_step(&mut u_hat)?;
            states.push(solver.to_physical(&u_hat));
        }
        Ok((start, states))
    };
    let mut train = TrajectorySet::new(
        SystemKind::Ks,
        1,
        cfg.grid.n,
        cfg.grid.length,
        digest,
        d.n_train,
        1,
        d.horizon_train,
        d.warmup,
    );
    for i in 0..d.n_train {
        let (start, states) = run_trajectory(i as u64, d.horizon_train)?;
        train.set_input(i, &start);
        for (t, s) in states.iter().enumerate() {
            train.set_output(i, 0, t, s);
        }
    }
    let mut eval = TrajectorySet::new(
        SystemKind::Ks,
        1,
        cfg.grid.n,
        cfg.grid.length,
        digest,
        d.n_eval_inputs,
        1,
        d.horizon_eval,
        d.warmup,
    );
    for i in 0..d.n_eval_inputs {
        let (start, states) = run_trajectory((d.n_train + i) as u64, d.horizon_eval)?;
        eval.set_input(i, &start);
        for (t, s) in states.iter().enumerate() {
            eval.set_output(i, 0, t, s);
        }
    }
    Ok((train, eval))
}

fn generate_kolmogorov(cfg: &RunConfig, digest: u64) -> Result<(TrajectorySet, TrajectorySet)> {
    let grid = Grid2d::new(cfg.grid.n, cfg.grid.length)?;
    let mut solver = KolmogorovFlow::new(
        grid.clone(),
        cfg.solver.nu,
        cfg.solver.alpha,
        cfg.solver.forcing_mode,
        cfg.solver.forcing_amp,
        cfg.solver.substep,
        cfg.solver.substeps_per_macro,
    )?;
    let d = &cfg.data;
    let mut run_trajectory = |traj_idx: u64, horizon: usize| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut rng = named_stream(cfg.seed, stream::DATA, traj_idx);
        let w0 = sample_ic_2d(&grid, cfg.solver.ic_decay, cfg.solver.ic_amplitude, &mut rng);
        let mut w_hat = solver.to_spectral(&w0);
        for _ in 0..cfg.data.warmup {
            solver.macro_step(&mut w_hat)?;
        }
        let start = solver.to_physical(&w_hat);
        let mut states = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            solver.macro_step(&mut w_hat)?;
            states.push(solver.to_physical(&w_hat));
        }
        Ok((start, states))
    };
    let mut train = TrajectorySet::new(
        SystemKind::Kolmogorov,
        2,
        cfg.grid.n,
        cfg.grid.length,
        digest,
        d.n_train,
        1,
        d.horizon_train,
        d.warmup,
    );
    for i in 0..d.n_train {
        let (start, states) = run_trajectory(i as u64, d.horizon_train)?;
        train.set_input(i, &start);
        for (t, s) in states.iter().enumerate() {
            train.set_output(i, 0, t, s);
        }
    }
    let mut eval = TrajectorySet::new(
        SystemKind::Kolmogorov,
        2,
        cfg.grid.n,
        cfg.grid.length,
        digest,
        d.n_eval_inputs,
        1,
        d.horizon_eval,
        d.warmup,
    );
    for i in 0..d.n_eval_inputs {
        let (start, states) = run_trajectory((d.n_train + i) as u64, d.horizon_eval)?;
        eval.set_input(i, &start);
        for (t, s) in states.iter().enumerate() {
            eval.set_output(i, 0, t, s);
        }
    }
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_burgers_cfg() -> RunConfig {
        let mut cfg = RunConfig::preset("sburgers", "desk", 3).unwrap();
        cfg.data.n_train = 3;
        cfg.data.n_eval_inputs = 2;
        cfg.data.eval_realizations = 4;
        cfg.solver.substeps_per_macro = 20;
        cfg.solver.substep = 1e-3;
        cfg
    }

    #[test]
    fn file_roundtrip_is_bit_exact() {
        let cfg = tiny_burgers_cfg();
        let (train, _) = generate(&cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("dlld-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("train.dlld");
        train.write(&path).unwrap();
        let back = TrajectorySet::read(&path).unwrap();
        assert_eq!(train.inputs, back.inputs);
        assert_eq!(train.outputs, back.outputs);
        assert_eq!(train.norm, back.norm);
        assert_eq!(train.config_digest, back.config_digest);
        // Byte-identical on rewrite.
        let path2 = dir.join("train2.dlld");
        back.write(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn regeneration_is_bitwise_identical() {
        let cfg = tiny_burgers_cfg();
        let (t1, e1) = generate(&cfg).unwrap();
        let (t2, e2) = generate(&cfg).unwrap();
        assert_eq!(t1.inputs, t2.inputs);
        assert_eq!(t1.outputs, t2.outputs);
        assert_eq!(e1.outputs, e2.outputs);
    }

    #[test]
    fn zero_noise_realizations_are_bitwise_identical() {
        let mut cfg = tiny_burgers_cfg();
        cfg.solver.noise_sigma = 0.0;
        let (_, eval) = generate(&cfg).unwrap();
        for r in 1..eval.realizations {
            assert_eq!(eval.output(0, 0, 0), eval.output(0, r, 0));
        }
    }

    #[test]
    fn stochastic_eval_spread_is_positive_everywhere() {
        let cfg = tiny_burgers_cfg();
        let (_, eval) = generate(&cfg).unwrap();
        for i in 0..eval.n_inputs {
            for p in 0..eval.points() {
                let vals: Vec<f64> = (0..eval.realizations).map(|r| eval.output(i, r, 0)[p]).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
                assert!(var > 0.0, "degenerate spread at input {i} point {p}");
            }
        }
    }

    #[test]
    fn trajectory_pairs_chain_states() {
        let mut cfg = RunConfig::preset("ks", "desk", 1).unwrap();
        cfg.data.n_train = 2;
        cfg.data.n_eval_inputs = 1;
        cfg.data.horizon_train = 3;
        cfg.data.horizon_eval = 4;
        cfg.data.warmup = 2;
        let (train, _) = generate(&cfg).unwrap();
        let pairs = train.one_step_pairs();
        assert_eq!(pairs.len(), 2 * 3);
        // Consecutive pairs of one trajectory share the intermediate state.
        assert_eq!(pairs[0].1, pairs[1].0);
        assert_eq!(pairs[1].1, pairs[2].0);
        // Normalization comes from the train split.
        assert!(train.norm.out_std > 0.0);
    }

    #[test]
    fn normalization_stats_come_from_train_split() {
        let cfg = tiny_burgers_cfg();
        let (train, eval) = generate(&cfg).unwrap();
        assert_eq!(train.norm, eval.norm);
        let z = train.norm.normalize_out(train.output(0, 0, 0));
        let back = train.norm.denormalize_out(&z);
        for (a, b) in back.iter().zip(train.output(0, 0, 0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
