//! Diffusion last layer: conditional velocity matching in the rank-r
//! coefficient space of a frozen operator encoder, probability-flow ODE
//! sampling by explicit Euler, and decoding through the input-dependent
//! basis.
//!
//! The noising path is the rectified schedule `x_tau = (1 - tau) x + tau e`
//! with standard Gaussian noise, so the oracle velocity along a coupling is
//! `e - x` and sampling integrates `dx/dtau = v(x, tau, c)` from tau = 1
//! down to 0.

use crate::autodiff::{ParamId, ParamStore, Tape, VarId};
use crate::config::{digest64, RunConfig};
use crate::dataset::{Normalization, TrajectorySet};
use crate::encoder::{normalized_pairs, reconstruct, OperatorEncoder};
use crate::error::{CoreError, Result};
use crate::nn::{time_embedding, Mlp, PooledHead};
use crate::optim::{adamw_step_filtered, EmaState, OptimizerState};
use crate::rng::named_stream;
use crate::tensor::Tensor;
use crate::train_util::{collect_clipped_grads, shuffled_indices, TrainLog};
use rand::Rng;
use rand_distr::StandardNormal;

/// Forward noising sample `(1 - tau) x + tau e`.
pub fn noise_sample(x: &[f64], eps: &[f64], tau: f64) -> Vec<f64> {
    x.iter().zip(eps).map(|(&xv, &ev)| (1.0 - tau) * xv + tau * ev).collect()
}

/// Oracle velocity of the rectified path along a coupling: `e - x`.
pub fn oracle_velocity(x: &[f64], eps: &[f64]) -> Vec<f64> {
    x.iter().zip(eps).map(|(&xv, &ev)| ev - xv).collect()
}

/// Conditional generative head: a pooled-FNO condition embedding and an MLP
/// velocity field over (coefficients, time embedding, condition).
pub struct DllHead {
    pub cond: PooledHead,
    pub velocity: Mlp,
    pub rank: usize,
    pub time_dim: usize,
    pub cond_dim: usize,
    /// Per-dimension standardization of the latent coefficients, fitted on
    /// the training split.
    pub latent_mean: Vec<f64>,
    pub latent_std: Vec<f64>,
}

impl DllHead {
    pub fn new(store: &mut ParamStore, cfg: &RunConfig, rng: &mut impl Rng) -> Result<Self> {
        let dim = cfg.ndim();
        let cond = PooledHead::new(
            store,
            "cond",
            dim,
            cfg.grid.n,
            cfg.model.width,
            cfg.model.fno_layers,
            cfg.retained_modes(),
            cfg.model.cond_dim,
            rng,
        )?;
        let rank = cfg.model.rank;
        let in_dim = rank + cfg.model.time_embed_dim + cfg.model.cond_dim;
        let mut dims = vec![in_dim];
        dims.extend(std::iter::repeat_n(cfg.model.velocity_hidden, cfg.model.velocity_layers));
        dims.push(rank);
        let velocity = Mlp::new(store, "vel", &dims, rng);
        Ok(DllHead {
            cond,
            velocity,
            rank,
            time_dim: cfg.model.time_embed_dim,
            cond_dim: cfg.model.cond_dim,
            latent_mean: vec![0.0; rank],
            latent_std: vec![1.0; rank],
        })
    }

    pub fn arch_digest(cfg: &RunConfig) -> u64 {
        let desc = format!(
            "dll:{}:dim{}:n{}:r{}:h{}x{}:t{}:c{}",
            cfg.system,
            cfg.ndim(),
            cfg.grid.n,
            cfg.model.rank,
            cfg.model.velocity_hidden,
            cfg.model.velocity_layers,
            cfg.model.time_embed_dim,
            cfg.model.cond_dim
        );
        digest64(desc.as_bytes())
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.latent_mean.iter().zip(&self.latent_std))
            .map(|(&v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn destandardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.latent_mean.iter().zip(&self.latent_std))
            .map(|(&v, (m, s))| v * s + m)
            .collect()
    }

    /// Velocity net over a batch: `x_tau` [B, r], per-element times, and a
    /// condition variable [B, cond_dim] already on the tape.
    pub fn velocity_forward(
        &self,
        tape: &mut Tape,
        x_tau: &Tensor,
        taus: &[f64],
        cond: VarId,
    ) -> Result<VarId> {
        let batch = taus.len();
        let mut temb = Vec::with_capacity(batch * self.time_dim);
        for &t in taus {
            temb.extend(time_embedding(t, self.time_dim));
        }
        let x = tape.data(x_tau.clone());
        let tv = tape.data(Tensor::new(vec![batch, self.time_dim], temb)?);
        let joined = tape.concat_last(&[x, tv, cond])?;
        self.velocity.forward(tape, joined)
    }

    /// Condition embeddings [B, cond_dim] for a normalized input batch,
    /// outside any training graph.
    pub fn cond_vectors(&self, store: &ParamStore, a: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(store);
        let v = self.cond.forward(&mut tape, a)?;
        Ok(tape.value(v).clone())
    }

    fn velocity_param_ids(&self, store: &ParamStore) -> Vec<bool> {
        store
            .param_ids()
            .map(|id| store.name(id).starts_with("vel."))
            .collect()
    }
}

/// Latent training set: standardized coefficients and normalized conditions.
pub struct LatentDataset {
    pub conditions: Vec<Vec<f64>>,
    pub latents: Vec<Vec<f64>>,
}

/// Encodes every training pair through the frozen operator encoder and fits
/// the latent standardization.
pub fn build_latent_dataset(
    enc_store: &ParamStore,
    enc: &OperatorEncoder,
    dll: &mut DllHead,
    train: &TrajectorySet,
    batch: usize,
) -> Result<LatentDataset> {
    let (conditions, targets) = normalized_pairs(train);
    let pts = conditions[0].len();
    let mut latents: Vec<Vec<f64>> = Vec::with_capacity(targets.len());
    for chunk in targets.chunks(batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * pts);
        for t in chunk {
            data.extend_from_slice(t);
        }
        let u = Tensor::new(vec![chunk.len(), pts], data)?;
        let x = enc.encode(enc_store, &u)?;
        for i in 0..chunk.len() {
            latents.push(x.data()[i * enc.rank..(i + 1) * enc.rank].to_vec());
        }
    }
    // Fit the per-dimension standardization on the raw latents.
    let r = enc.rank;
    let m = latents.len() as f64;
    let mut mean = vec![0.0; r];
    for x in &latents {
        for (acc, &v) in mean.iter_mut().zip(x) {
            *acc += v / m;
        }
    }
    let mut std = vec![0.0; r];
    for x in &latents {
        for ((acc, &v), mu) in std.iter_mut().zip(x).zip(&mean) {
            *acc += (v - mu) * (v - mu) / m;
        }
    }
    for s in std.iter_mut() {
        *s = s.sqrt().max(1e-8);
    }
    dll.latent_mean = mean;
    dll.latent_std = std;
    for x in latents.iter_mut() {
        *x = dll.standardize(x);
    }
    Ok(LatentDataset { conditions, latents })
}

/// Monte-Carlo velocity loss of the current nets on held-out latents.
pub fn evaluate_velocity_loss(
    store: &ParamStore,
    dll: &DllHead,
    data: &LatentDataset,
    seed: u64,
) -> Result<f64> {
    let mut rng = named_stream(seed, "noise:dll-eval", 0);
    let r = dll.rank;
    let pts = data.conditions[0].len();
    let mut total = 0.0;
    for chunk in (0..data.conditions.len()).collect::<Vec<_>>().chunks(64) {
        let mut a = Vec::with_capacity(chunk.len() * pts);
        let mut x_tau = Vec::with_capacity(chunk.len() * r);
        let mut target = Vec::with_capacity(chunk.len() * r);
        let mut taus = Vec::with_capacity(chunk.len());
        for &i in chunk {
            a.extend_from_slice(&data.conditions[i]);
            let tau: f64 = rng.gen();
            let eps: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
            x_tau.extend(noise_sample(&data.latents[i], &eps, tau));
            target.extend(oracle_velocity(&data.latents[i], &eps));
            taus.push(tau);
        }
        let a = Tensor::new(vec![chunk.len(), pts], a)?;
        let x_tau = Tensor::new(vec![chunk.len(), r], x_tau)?;
        let mut tape = Tape::new(store);
        let cond = dll.cond.forward(&mut tape, &a)?;
        let v = dll.velocity_forward(&mut tape, &x_tau, &taus, cond)?;
        let tv = tape.data(Tensor::new(vec![chunk.len(), r], target)?);
        let loss = tape.quad_loss(v, tv, 1.0)?;
        total += tape.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / data.conditions.len() as f64)
}

/// Trains the conditional velocity field. The first `joint_epochs` epochs
/// update the condition embedding network jointly with the MLP; afterwards
/// the embedding is frozen and its vectors cached, leaving MLP-sized steps.
/// EMA shadows of all stage-2 parameters are maintained throughout.
pub fn train_dll(
    store: &mut ParamStore,
    dll: &DllHead,
    data: &LatentDataset,
    cfg: &RunConfig,
) -> Result<(TrainLog, EmaState)> {
    let epochs = cfg.train.dll_epochs;
    let joint_epochs = cfg.train.dll_joint_epochs.min(epochs);
    let batch = cfg.train.batch_size.max(1);
    let n = data.conditions.len();
    let r = dll.rank;
    let pts = data.conditions[0].len();
    let steps_per_epoch = n.div_ceil(batch);
    let mut opt = OptimizerState::new(
        store,
        cfg.train.lr,
        cfg.train.weight_decay,
        (epochs * steps_per_epoch) as u64,
    );
    let mut ema = EmaState::new(store, cfg.train.ema_decay);
    let vel_mask = dll.velocity_param_ids(store);
    let mut log = TrainLog::default();
    let mut shuffle_rng = named_stream(cfg.seed, "noise:dll-shuffle", 0);
    let mut noise_rng = named_stream(cfg.seed, "noise:dll-train", 0);
    // Cached condition vectors for the frozen phase.
    let mut cond_cache: Option<Vec<Vec<f64>>> = None;
    for epoch in 0..epochs {
        let joint = epoch < joint_epochs;
        if !joint && cond_cache.is_none() {
            let mut cache = Vec::with_capacity(n);
            for chunk in (0..n).collect::<Vec<_>>().chunks(64) {
                let mut a = Vec::with_capacity(chunk.len() * pts);
                for &i in chunk {
                    a.extend_from_slice(&data.conditions[i]);
                }
                let a = Tensor::new(vec![chunk.len(), pts], a)?;
                let c = dll.cond_vectors(store, &a)?;
                for i in 0..chunk.len() {
                    cache.push(c.data()[i * dll.cond_dim..(i + 1) * dll.cond_dim].to_vec());
                }
            }
            cond_cache = Some(cache);
        }
        let order = shuffled_indices(n, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut x_tau = Vec::with_capacity(chunk.len() * r);
            let mut target = Vec::with_capacity(chunk.len() * r);
            let mut taus = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let tau: f64 = noise_rng.gen();
                let eps: Vec<f64> = (0..r).map(|_| noise_rng.sample(StandardNormal)).collect();
                x_tau.extend(noise_sample(&data.latents[i], &eps, tau));
                target.extend(oracle_velocity(&data.latents[i], &eps));
                taus.push(tau);
            }
            let x_tau = Tensor::new(vec![chunk.len(), r], x_tau)?;
            let target = Tensor::new(vec![chunk.len(), r], target)?;
            let lr = opt.lr_now();
            let mut tape = Tape::new(store);
            let cond = if joint {
                let mut a = Vec::with_capacity(chunk.len() * pts);
                for &i in chunk {
                    a.extend_from_slice(&data.conditions[i]);
                }
                let a = Tensor::new(vec![chunk.len(), pts], a)?;
                dll.cond.forward(&mut tape, &a)?
            } else {
                let cache = cond_cache.as_ref().unwrap();
                let mut c = Vec::with_capacity(chunk.len() * dll.cond_dim);
                for &i in chunk {
                    c.extend_from_slice(&cache[i]);
                }
                tape.data(Tensor::new(vec![chunk.len(), dll.cond_dim], c)?)
            };
            let v = dll.velocity_forward(&mut tape, &x_tau, &taus, cond)?;
            let tv = tape.data(target);
            let loss = tape.quad_loss(v, tv, 1.0)?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() || loss_val > 1e6 {
                return Err(CoreError::numerics(format!("DLL training diverged (loss {loss_val})")));
            }
            epoch_loss += loss_val * chunk.len() as f64;
            let mut grads = tape.backward(loss)?;
            let gvec = collect_clipped_grads(store, &mut grads, cfg.train.grad_clip);
            drop(tape);
            adamw_step_filtered(store, &gvec, &mut opt, lr, |id: ParamId| {
                joint || vel_mask[id.0]
            })?;
            ema.update(store)?;
        }
        log.train_losses.push(epoch_loss / n as f64);
    }
    Ok((log, ema))
}

/// Draws `k` coefficient samples for one normalized condition by Euler
/// integration of the probability-flow ODE from tau = 1 to 0. Returns raw
/// (de-standardized) coefficients.
#[allow(clippy::too_many_arguments)]
pub fn sample_latents(
    store: &ParamStore,
    dll: &DllHead,
    a_norm: &[f64],
    k: usize,
    steps: usize,
    seed: u64,
    stream_tag: u64,
) -> Result<Vec<Vec<f64>>> {
    let r = dll.rank;
    let a = Tensor::new(vec![1, a_norm.len()], a_norm.to_vec())?;
    let cond_one = dll.cond_vectors(store, &a)?;
    let mut cond_all = Vec::with_capacity(k * dll.cond_dim);
    for _ in 0..k {
        cond_all.extend_from_slice(cond_one.data());
    }
    let cond_tensor = Tensor::new(vec![k, dll.cond_dim], cond_all)?;
    let mut rng = named_stream(seed, "noise:sample", stream_tag);
    let mut x: Vec<f64> = (0..k * r).map(|_| rng.sample(StandardNormal)).collect();
    let dt = 1.0 / steps as f64;
    for s in 0..steps {
        let tau = 1.0 - s as f64 * dt;
        let x_t = Tensor::new(vec![k, r], x.clone())?;
        let taus = vec![tau; k];
        let mut tape = Tape::new(store);
        let cond = tape.data(cond_tensor.clone());
        let v = dll.velocity_forward(&mut tape, &x_t, &taus, cond)?;
        let vd = tape.value(v).data();
        for (xv, &dv) in x.iter_mut().zip(vd) {
            *xv -= dt * dv;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::numerics(format!(
                "non-finite state during flow integration at step {s}"
            )));
        }
    }
    Ok((0..k).map(|i| dll.destandardize(&x[i * r..(i + 1) * r])).collect())
}

/// Full conditional ensemble in physical space: sample coefficients, decode
/// through the frozen basis, undo the output normalization.
#[allow(clippy::too_many_arguments)]
pub fn sample_ensemble(
    enc_store: &ParamStore,
    enc: &OperatorEncoder,
    dll_store: &ParamStore,
    dll: &DllHead,
    a_physical: &[f64],
    norm: &Normalization,
    k: usize,
    steps: usize,
    seed: u64,
    stream_tag: u64,
) -> Result<Vec<Vec<f64>>> {
    let a_norm = norm.normalize_in(a_physical);
    let latents = sample_latents(dll_store, dll, &a_norm, k, steps, seed, stream_tag)?;
    let a = Tensor::new(vec![1, a_norm.len()], a_norm.clone())?;
    let basis_all = enc.basis_fields(enc_store, &a)?;
    let pts = a_physical.len();
    let basis = Tensor::new(vec![pts, enc.rank], basis_all.data().to_vec())?;
    latents
        .iter()
        .map(|x| {
            let u_norm = reconstruct(x, &basis)?;
            Ok(norm.denormalize_out(&u_norm))
        })
        .collect()
}

// --- closed-form probes ------------------------------------------------------

/// Exact marginal velocity of the rectified path for a 1D Gaussian target
/// N(mean, std^2): v(x, tau) = E[e - x0 | x_tau = x].
pub fn gaussian_marginal_velocity(mean: f64, std: f64, x: f64, tau: f64) -> f64 {
    let a = 1.0 - tau;
    let b = tau;
    let var = a * a * std * std + b * b;
    -mean + (b - a * std * std) / var * (x - a * mean)
}

/// Euler integration of `dx/dtau = v(x, tau)` from tau = 1 to 0 for a batch
/// of scalar samples.
pub fn euler_flow_scalar(samples: &mut [f64], steps: usize, v: impl Fn(f64, f64) -> f64) {
    let dt = 1.0 / steps as f64;
    for s in 0..steps {
        let tau = 1.0 - s as f64 * dt;
        for x in samples.iter_mut() {
            *x -= dt * v(*x, tau);
        }
    }
}

/// Empirical 2-Wasserstein distance of two equal-size scalar samples via the
/// sorted coupling.
pub fn sorted_w2(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "sorted_w2 needs equal sample counts");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    (a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Monte-Carlo velocity loss of an arbitrary velocity field against the
/// rectified-path oracle for samples `x` with standard Gaussian noise. The
/// drawn noise is passed through to the predictor so tests can wire the
/// exact oracle.
pub fn velocity_loss_mc(
    v: impl Fn(&[f64], f64, &[f64]) -> Vec<f64>,
    latents: &[Vec<f64>],
    draws: usize,
    seed: u64,
) -> f64 {
    let mut rng = named_stream(seed, "noise:loss-mc", 0);
    let r = latents[0].len();
    let mut total = 0.0;
    for d in 0..draws {
        let x = &latents[d % latents.len()];
        let tau: f64 = rng.gen();
        let eps: Vec<f64> = (0..r).map(|_| rng.sample(StandardNormal)).collect();
        let x_tau = noise_sample(x, &eps, tau);
        let target = oracle_velocity(x, &eps);
        let pred = v(&x_tau, tau, &eps);
        total += pred.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
    }
    total / draws as f64
}

/// Stability probe for the 1D Gaussian target: perturb the exact velocity
/// by `delta * w(x)` with the fixed smooth field `w(x) = 1 + 0.5 sin x`,
/// then report the sorted-sample W2 to the target and the mean squared
/// velocity mismatch along the true noising path.
pub fn wasserstein_stability_probe(
    mean: f64,
    std: f64,
    delta: f64,
    n_samples: usize,
    steps: usize,
    seed: u64,
) -> (f64, f64) {
    let w = |x: f64| 1.0 + 0.5 * x.sin();
    let mut rng = named_stream(seed, "noise:w2-probe", 0);
    let mut gen: Vec<f64> = (0..n_samples).map(|_| rng.sample(StandardNormal)).collect();
    euler_flow_scalar(&mut gen, steps, |x, tau| {
        gaussian_marginal_velocity(mean, std, x, tau) + delta * w(x)
    });
    let mut target_rng = named_stream(seed, "noise:w2-target", 0);
    let target: Vec<f64> =
        (0..n_samples).map(|_| mean + std * target_rng.sample::<f64, _>(StandardNormal)).collect();
    let w2 = sorted_w2(&gen, &target);
    // L_V = E_{tau, x_tau} [ delta^2 w(x_tau)^2 ] along the exact path.
    let mut mc_rng = named_stream(seed, "noise:w2-lv", 0);
    let draws = 100_000;
    let mut l_v = 0.0;
    for _ in 0..draws {
        let tau: f64 = mc_rng.gen();
        let x0 = mean + std * mc_rng.sample::<f64, _>(StandardNormal);
        let eps: f64 = mc_rng.sample(StandardNormal);
        let x_tau = (1.0 - tau) * x0 + tau * eps;
        let dv = delta * w(x_tau);
        l_v += dv * dv;
    }
    (w2, l_v / draws as f64)
}
