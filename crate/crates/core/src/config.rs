//! Run configuration: flat key = value sections, canonicalized for digesting.
//!
//! Every artifact (dataset, checkpoint, report) records the digest of the
//! configuration that produced it; downstream commands refuse mismatched
//! digests. Two built-in scale presets exist per system: `desk` runs in
//! minutes on a laptop and is what the acceptance suite exercises; `paper`
//! mirrors the full-scale experimental setup.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    pub seed: u64,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub substep: f64,
    pub substeps_per_macro: usize,
    pub nu: f64,
    pub alpha: f64,
    pub forcing_mode: usize,
    pub forcing_amp: f64,
    pub noise_sigma: f64,
    pub noise_weights: [f64; 3],
    pub ic_decay: f64,
    pub ic_amplitude: f64,
    pub source_lambda: f64,
    pub sigma_ln: f64,
    pub ell_ln: f64,
    pub sigma_gp: f64,
    pub ell_gp: f64,
    pub grf_jitter: f64,
    pub perm_decay: f64,
    pub cg_tolerance: f64,
    pub cg_max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Training inputs (stochastic systems) or training trajectories
    /// (rollout systems).
    pub n_train: usize,
    pub n_eval_inputs: usize,
    pub eval_realizations: usize,
    pub horizon_train: usize,
    pub horizon_eval: usize,
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub width: usize,
    pub fno_layers: usize,
    /// Retained spectral modes per axis: min(modes_cap, n/3).
    pub modes_cap: usize,
    pub rank: usize,
    pub velocity_hidden: usize,
    pub velocity_layers: usize,
    pub time_embed_dim: usize,
    pub cond_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub encoder_epochs: usize,
    pub dll_epochs: usize,
    /// Leading DLL epochs that train the condition embedding jointly with
    /// the velocity MLP; afterwards the embedding is frozen and cached.
    pub dll_joint_epochs: usize,
    pub fno_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub grad_clip: f64,
    pub sampler_steps: usize,
    pub sample_count: usize,
}

impl RunConfig {
    /// Built-in preset for `(system, scale)`; scale is `desk` or `paper`.
    pub fn preset(system: &str, scale: &str, seed: u64) -> Result<RunConfig> {
        let desk = match scale {
            "desk" => true,
            "paper" => false,
            other => return Err(CoreError::config(format!("unknown scale '{other}'"))),
        };
        let mut cfg = RunConfig {
            system: system.to_string(),
            seed,
            grid: GridSection { n: 64, length: 2.0 * std::f64::consts::PI },
            solver: SolverSection {
                substep: 1e-4,
                substeps_per_macro: 10_000,
                nu: 0.1,
                alpha: 0.0,
                forcing_mode: 0,
                forcing_amp: 0.0,
                noise_sigma: 1.0,
                noise_weights: [1.0, 0.5, 0.1],
                ic_decay: 2.0,
                ic_amplitude: 1.0,
                source_lambda: 0.1,
                sigma_ln: 10.0,
                ell_ln: 0.2,
                sigma_gp: 10.0,
                ell_gp: 0.5,
                grf_jitter: 1e-5,
                perm_decay: 2.0,
                cg_tolerance: 1e-6,
                cg_max_iterations: 5000,
            },
            data: DataSection {
                n_train: if desk { 2000 } else { 10_000 },
                n_eval_inputs: 32,
                eval_realizations: 64,
                horizon_train: 1,
                horizon_eval: 1,
                warmup: 0,
            },
            model: ModelSection {
                width: 64,
                fno_layers: 4,
                modes_cap: 32,
                rank: 64,
                velocity_hidden: 512,
                velocity_layers: 3,
                time_embed_dim: 32,
                cond_dim: 64,
            },
            train: TrainSection {
                encoder_epochs: if desk { 12 } else { 100 },
                dll_epochs: if desk { 100 } else { 100 },
                dll_joint_epochs: if desk { 15 } else { 100 },
                fno_epochs: if desk { 12 } else { 100 },
                batch_size: 32,
                lr: 1e-3,
                weight_decay: 1e-4,
                ema_decay: 0.999,
                grad_clip: 1.0,
                sampler_steps: 10,
                sample_count: 32,
            },
        };
        match system {
            "sburgers" => {
                if !desk {
                    cfg.grid.n = 256;
                }
            }
            "sdarcy" => {
                cfg.grid = GridSection { n: if desk { 32 } else { 128 }, length: 1.0 };
                // 2D steps are ~15x the 1D cost; fewer epochs keep the desk
                // run in the minutes range while the ED margins stay wide.
                cfg.train.encoder_epochs = if desk { 5 } else { 100 };
                cfg.train.fno_epochs = if desk { 5 } else { 100 };
                cfg.train.dll_epochs = if desk { 60 } else { 100 };
                cfg.train.dll_joint_epochs = if desk { 3 } else { 100 };
            }
            "ks" => {
                cfg.grid = GridSection { n: if desk { 64 } else { 256 }, length: 60.0 };
                cfg.solver.substep = 0.01;
                cfg.solver.substeps_per_macro = 100;
                cfg.data = DataSection {
                    n_train: if desk { 48 } else { 1024 },
                    n_eval_inputs: if desk { 8 } else { 128 },
                    eval_realizations: 1,
                    horizon_train: 50,
                    horizon_eval: 100,
                    warmup: 100,
                };
                cfg.train.encoder_epochs = if desk { 12 } else { 500 };
                cfg.train.fno_epochs = if desk { 12 } else { 500 };
                cfg.train.dll_epochs = if desk { 100 } else { 500 };
            }
            "kolmogorov" => {
                cfg.grid = GridSection { n: if desk { 32 } else { 128 }, length: 2.0 * std::f64::consts::PI };
                cfg.solver.substep = 0.01;
                cfg.solver.substeps_per_macro = 25;
                cfg.solver.nu = 1e-2;
                cfg.solver.alpha = 0.1;
                cfg.solver.forcing_mode = 4;
                cfg.solver.forcing_amp = 1.0;
                cfg.data = DataSection {
                    n_train: if desk { 16 } else { 256 },
                    n_eval_inputs: if desk { 4 } else { 32 },
                    eval_realizations: 1,
                    horizon_train: 50,
                    horizon_eval: 100,
                    warmup: 400,
                };
                cfg.train.encoder_epochs = if desk { 10 } else { 500 };
                cfg.train.fno_epochs = if desk { 10 } else { 500 };
                cfg.train.dll_epochs = if desk { 80 } else { 500 };
            }
            other => return Err(CoreError::config(format!("unknown system '{other}'"))),
        }
        Ok(cfg)
    }

    /// Retained spectral modes for the FNO at this grid size.
    pub fn retained_modes(&self) -> usize {
        self.model.modes_cap.min(self.grid.n / 3)
    }

    pub fn is_trajectory_system(&self) -> bool {
        matches!(self.system.as_str(), "ks" | "kolmogorov")
    }

    pub fn ndim(&self) -> usize {
        match self.system.as_str() {
            "sdarcy" | "kolmogorov" => 2,
            _ => 1,
        }
    }

    /// Grid points per field.
    pub fn points(&self) -> usize {
        if self.ndim() == 2 {
            self.grid.n * self.grid.n
        } else {
            self.grid.n
        }
    }

    /// Quadrature weight of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        let d = self.grid.length / self.grid.n as f64;
        if self.ndim() == 2 {
            d * d
        } else {
            d
        }
    }

    pub fn canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| CoreError::config(format!("bad config: {e}")))
    }

    /// 64-bit digest of the canonicalized configuration.
    pub fn digest(&self) -> u64 {
        digest64(self.canonical_toml().as_bytes())
    }
}

/// First eight little-endian bytes of sha256.
pub fn digest64(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("sha256 is long enough"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_roundtrip_through_toml() {
        for system in ["sburgers", "sdarcy", "ks", "kolmogorov"] {
            for scale in ["desk", "paper"] {
                let cfg = RunConfig::preset(system, scale, 7).unwrap();
                let text = cfg.canonical_toml();
                let back = RunConfig::from_toml(&text).unwrap();
                assert_eq!(cfg, back);
                assert_eq!(cfg.digest(), back.digest());
            }
        }
    }

    #[test]
    fn digest_is_sensitive_to_any_field() {
        let a = RunConfig::preset("sburgers", "desk", 7).unwrap();
        let mut b = a.clone();
        b.seed = 8;
        assert_ne!(a.digest(), b.digest());
        let mut c = a.clone();
        c.train.lr = 2e-3;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = RunConfig::preset("sburgers", "desk", 7).unwrap().canonical_toml();
        text.push_str("\nmystery_knob = 3\n");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn paper_scale_matches_reported_counts() {
        let cfg = RunConfig::preset("sburgers", "paper", 0).unwrap();
        assert_eq!(cfg.grid.n, 256);
        assert_eq!(cfg.data.n_train, 10_000);
        assert_eq!(cfg.data.n_eval_inputs, 32);
        assert_eq!(cfg.data.eval_realizations, 64);
        let cfg = RunConfig::preset("sdarcy", "paper", 0).unwrap();
        assert_eq!(cfg.grid.n, 128);
        let cfg = RunConfig::preset("ks", "paper", 0).unwrap();
        assert_eq!(cfg.grid.n, 256);
        assert_eq!(cfg.data.n_train, 1024);
        assert_eq!(cfg.data.horizon_train, 50);
        assert_eq!(cfg.data.horizon_eval, 100);
        assert_eq!(cfg.data.warmup, 100);
        let cfg = RunConfig::preset("kolmogorov", "paper", 0).unwrap();
        assert_eq!(cfg.data.warmup, 400);
        assert_eq!(cfg.solver.nu, 1e-2);
        assert_eq!(cfg.solver.alpha, 0.1);
    }

    #[test]
    fn desk_mode_cap_respects_dealiasing_margin() {
        let cfg = RunConfig::preset("sburgers", "desk", 0).unwrap();
        assert_eq!(cfg.retained_modes(), 21);
        let cfg = RunConfig::preset("sburgers", "paper", 0).unwrap();
        assert_eq!(cfg.retained_modes(), 32);
        let cfg = RunConfig::preset("sdarcy", "desk", 0).unwrap();
        assert_eq!(cfg.retained_modes(), 10);
    }
}
