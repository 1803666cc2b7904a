//! Closed-loop autoregressive evaluation: predictions are fed back as
//! inputs, member-wise for generative surrogates, and scored per step with
//! NRMSE / CRPS / SSR against the reference trajectory.

use crate::autodiff::ParamStore;
use crate::baseline::FnoBaseline;
use crate::dataset::Normalization;
use crate::dll::{sample_ensemble, DllHead};
use crate::encoder::OperatorEncoder;
use crate::error::Result;
use crate::metrics::{crps, spearman, ssr, SampleCloud};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub ensemble: usize,
    pub sampler_steps: usize,
    pub seed: u64,
}

/// One surrogate family under closed-loop evaluation. Members advance
/// independently; deterministic models map every member through the same
/// point prediction.
pub trait StepModel {
    fn step_members(&mut self, members: &mut [Vec<f64>], step: usize) -> Result<()>;
}

/// Wraps the deterministic FNO baseline (normalized in/out).
pub struct DeterministicSurrogate<'a> {
    pub store: &'a ParamStore,
    pub model: &'a FnoBaseline,
    pub norm: Normalization,
}

impl StepModel for DeterministicSurrogate<'_> {
    fn step_members(&mut self, members: &mut [Vec<f64>], _step: usize) -> Result<()> {
        let pts = members[0].len();
        let mut data = Vec::with_capacity(members.len() * pts);
        for m in members.iter() {
            data.extend(self.norm.normalize_in(m));
        }
        let a = Tensor::new(vec![members.len(), pts], data)?;
        let pred = self.model.predict(self.store, &a)?;
        for (i, m) in members.iter_mut().enumerate() {
            *m = self.norm.denormalize_out(&pred.data()[i * pts..(i + 1) * pts]);
        }
        Ok(())
    }
}

/// Wraps the DLL: each member draws one conditional sample per step from its
/// own state, keyed by (seed, member, step) so member propagation commutes
/// with evaluation order.
pub struct GenerativeSurrogate<'a> {
    pub enc_store: &'a ParamStore,
    pub enc: &'a OperatorEncoder,
    pub dll_store: &'a ParamStore,
    pub dll: &'a DllHead,
    pub norm: Normalization,
    pub sampler_steps: usize,
    pub seed: u64,
    /// Distinguishes trajectories sharing one seed.
    pub trajectory_tag: u64,
}

impl StepModel for GenerativeSurrogate<'_> {
    fn step_members(&mut self, members: &mut [Vec<f64>], step: usize) -> Result<()> {
        for (k, m) in members.iter_mut().enumerate() {
            let tag = self.trajectory_tag << 32 | (step as u64) << 16 | k as u64;
            let draw = sample_ensemble(
                self.enc_store,
                self.enc,
                self.dll_store,
                self.dll,
                m,
                &self.norm,
                1,
                self.sampler_steps,
                self.seed,
                tag,
            )?;
            *m = draw.into_iter().next().expect("one sample requested");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepMetrics {
    pub nrmse: f64,
    pub crps: f64,
    pub ssr: f64,
}

/// Per-step metrics of one closed-loop run. The initial condition is not
/// scored; time averages run over all recorded prediction steps of the
/// surviving prefix.
#[derive(Debug, Clone)]
pub struct RolloutRecord {
    pub per_step: Vec<StepMetrics>,
    pub truncated_at: Option<usize>,
}

impl RolloutRecord {
    pub fn time_mean(&self) -> StepMetrics {
        let n = self.per_step.len().max(1) as f64;
        let mut m = StepMetrics::default();
        for s in &self.per_step {
            m.nrmse += s.nrmse / n;
            m.crps += s.crps / n;
            m.ssr += s.ssr / n;
        }
        m
    }

    /// Spearman rank correlation of NRMSE against the step index.
    pub fn nrmse_trend(&self) -> f64 {
        let steps: Vec<f64> = (0..self.per_step.len()).map(|i| i as f64).collect();
        let vals: Vec<f64> = self.per_step.iter().map(|s| s.nrmse).collect();
        spearman(&steps, &vals)
    }
}

/// Runs one closed-loop rollout from `u0` against the reference states
/// `truth[t]` (the state after t + 1 macro steps).
pub fn closed_loop(
    model: &mut dyn StepModel,
    u0: &[f64],
    truth: &[Vec<f64>],
    cfg: &RolloutConfig,
) -> Result<RolloutRecord> {
    let mut members = vec![u0.to_vec(); cfg.ensemble];
    let mut per_step = Vec::with_capacity(cfg.horizon.min(truth.len()));
    let mut truncated_at = None;
    for (t, reference) in truth.iter().take(cfg.horizon).enumerate() {
        model.step_members(&mut members, t)?;
        if members.iter().flatten().any(|v| !v.is_finite()) {
            truncated_at = Some(t);
            break;
        }
        let cloud = SampleCloud::new(members.clone())?;
        let mean = cloud.mean();
        let num =
            (mean.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                / mean.len() as f64)
                .sqrt();
        let den = (reference.iter().map(|v| v * v).sum::<f64>() / reference.len() as f64)
            .sqrt()
            .max(1e-12);
        per_step.push(StepMetrics {
            nrmse: num / den,
            crps: crps(&cloud, reference)?,
            ssr: ssr(&cloud, reference)?,
        });
    }
    Ok(RolloutRecord { per_step, truncated_at })
}

/// Trajectory-mean then set-mean aggregation with per-step curves.
#[derive(Debug, Clone)]
pub struct RolloutSummary {
    pub per_step_mean: Vec<StepMetrics>,
    pub overall: StepMetrics,
    pub records: usize,
    pub truncated: usize,
}

pub fn aggregate(records: &[RolloutRecord]) -> RolloutSummary {
    let max_len = records.iter().map(|r| r.per_step.len()).max().unwrap_or(0);
    let mut per_step_mean = vec![StepMetrics::default(); max_len];
    for (t, slot) in per_step_mean.iter_mut().enumerate() {
        let live: Vec<&StepMetrics> =
            records.iter().filter_map(|r| r.per_step.get(t)).collect();
        let n = live.len().max(1) as f64;
        for s in live {
            slot.nrmse += s.nrmse / n;
            slot.crps += s.crps / n;
            slot.ssr += s.ssr / n;
        }
    }
    let n = records.len().max(1) as f64;
    let mut overall = StepMetrics::default();
    for r in records {
        let m = r.time_mean();
        overall.nrmse += m.nrmse / n;
        overall.crps += m.crps / n;
        overall.ssr += m.ssr / n;
    }
    RolloutSummary {
        per_step_mean,
        overall,
        records: records.len(),
        truncated: records.iter().filter(|r| r.truncated_at.is_some()).count(),
    }
}

pub fn summary_csv(summary: &RolloutSummary) -> String {
    let mut s = String::from("step,nrmse,crps,ssr\n");
    for (t, m) in summary.per_step_mean.iter().enumerate() {
        s.push_str(&format!("{},{},{},{}\n", t + 1, m.nrmse, m.crps, m.ssr));
    }
    s.push_str(&format!(
        "mean,{},{},{}\n",
        summary.overall.nrmse, summary.overall.crps, summary.overall.ssr
    ));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1d;
    use crate::rng::named_stream;
    use crate::solvers::init::sample_ic_1d;
    use crate::solvers::ks::KsSolver;

    /// The reference solver itself as a (perfect) model.
    struct PerfectModel {
        solver: KsSolver,
    }

    impl StepModel for PerfectModel {
        fn step_members(&mut self, members: &mut [Vec<f64>], _step: usize) -> Result<()> {
            for m in members.iter_mut() {
                let mut u_hat = self.solver.to_spectral(m);
                self.solver.macro_step(&mut u_hat)?;
                *m = self.solver.to_physical(&u_hat);
            }
            Ok(())
        }
    }

    /// Identity surrogate: prediction = previous state.
    struct IdentityModel;

    impl StepModel for IdentityModel {
        fn step_members(&mut self, _members: &mut [Vec<f64>], _step: usize) -> Result<()> {
            Ok(())
        }
    }

    fn ks_truth(u0: &[f64], horizon: usize) -> Vec<Vec<f64>> {
        let mut solver = KsSolver::new(Grid1d::new(64, 60.0).unwrap(), 0.01, 100).unwrap();
        let mut u_hat = solver.to_spectral(u0);
        let mut out = Vec::new();
        for _ in 0..horizon {
            solver.macro_step(&mut u_hat).unwrap();
            out.push(solver.to_physical(&u_hat));
        }
        out
    }

    fn warm_start(seed: u64) -> Vec<f64> {
        let grid = Grid1d::new(64, 60.0).unwrap();
        let mut rng = named_stream(seed, "rollout-test", 0);
        let u0 = sample_ic_1d(&grid, 2.0, 1.0, &mut rng);
        let mut solver = KsSolver::new(grid, 0.01, 100).unwrap();
        let mut u_hat = solver.to_spectral(&u0);
        for _ in 0..20 {
            solver.macro_step(&mut u_hat).unwrap();
        }
        solver.to_physical(&u_hat)
    }

    #[test]
    fn perfect_model_has_zero_error_and_zero_spread() {
        let u0 = warm_start(1);
        let truth = ks_truth(&u0, 5);
        let cfg = RolloutConfig { horizon: 5, ensemble: 2, sampler_steps: 10, seed: 0 };
        let mut model =
            PerfectModel { solver: KsSolver::new(Grid1d::new(64, 60.0).unwrap(), 0.01, 100).unwrap() };
        let rec = closed_loop(&mut model, &u0, &truth, &cfg).unwrap();
        assert!(rec.truncated_at.is_none());
        for s in &rec.per_step {
            assert!(s.nrmse < 1e-12, "perfect model NRMSE {}", s.nrmse);
            assert!(s.crps < 1e-12, "perfect model CRPS {}", s.crps);
            assert!(s.ssr.abs() < 1e-6, "zero-spread SSR {}", s.ssr);
        }
    }

    #[test]
    fn identity_model_matches_truth_drift() {
        let u0 = warm_start(2);
        let truth = ks_truth(&u0, 4);
        let cfg = RolloutConfig { horizon: 4, ensemble: 1, sampler_steps: 10, seed: 0 };
        let rec = closed_loop(&mut IdentityModel, &u0, &truth, &cfg).unwrap();
        for (t, s) in rec.per_step.iter().enumerate() {
            let num = (u0
                .iter()
                .zip(&truth[t])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / u0.len() as f64)
                .sqrt();
            let den =
                (truth[t].iter().map(|v| v * v).sum::<f64>() / truth[t].len() as f64).sqrt();
            assert!((s.nrmse - num / den).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn no_lookahead_and_member_permutation_invariance() {
        let u0 = warm_start(3);
        let truth = ks_truth(&u0, 6);
        let cfg = RolloutConfig { horizon: 6, ensemble: 1, sampler_steps: 10, seed: 0 };
        let full = closed_loop(&mut IdentityModel, &u0, &truth, &cfg).unwrap();
        // Truncating the truth after step 3 leaves steps <= 3 unchanged.
        let cfg3 = RolloutConfig { horizon: 3, ..cfg.clone() };
        let short = closed_loop(&mut IdentityModel, &u0, &truth[..3].to_vec(), &cfg3).unwrap();
        for t in 0..3 {
            assert!((full.per_step[t].nrmse - short.per_step[t].nrmse).abs() < 1e-15);
            assert!((full.per_step[t].crps - short.per_step[t].crps).abs() < 1e-15);
        }
    }

    #[test]
    fn aggregate_means_and_truncation_counting() {
        let r1 = RolloutRecord {
            per_step: vec![
                StepMetrics { nrmse: 1.0, crps: 0.5, ssr: 0.9 },
                StepMetrics { nrmse: 2.0, crps: 1.0, ssr: 1.1 },
            ],
            truncated_at: None,
        };
        let r2 = RolloutRecord {
            per_step: vec![
                StepMetrics { nrmse: 3.0, crps: 1.5, ssr: 0.7 },
                StepMetrics { nrmse: 6.0, crps: 3.0, ssr: 1.3 },
            ],
            truncated_at: Some(2),
        };
        // Single record aggregates to itself.
        let solo = aggregate(std::slice::from_ref(&r1));
        assert!((solo.overall.nrmse - 1.5).abs() < 1e-15);
        // Two records: curve = mean of curves (c and 3c -> 2c).
        let both = aggregate(&[r1, r2]);
        assert!((both.per_step_mean[0].nrmse - 2.0).abs() < 1e-15);
        assert!((both.per_step_mean[1].nrmse - 4.0).abs() < 1e-15);
        assert_eq!(both.truncated, 1);
        let csv = summary_csv(&both);
        assert!(csv.starts_with("step,nrmse,crps,ssr"));
    }
}
