//! Operator encoder: an input-conditioned basis network `NO(a)` paired with
//! a coefficient encoder `NF(u)` so that `u ~ NF(u)^T NO(a)`, trained on the
//! mean grid-quadrature squared reconstruction residual. The rank-r
//! coefficient space it learns is where the diffusion head lives.

use crate::autodiff::{ParamStore, Tape, VarId};
use crate::config::{digest64, RunConfig};
use crate::dataset::TrajectorySet;
use crate::error::{CoreError, Result};
use crate::nn::{FnoHead, FnoNet, PooledHead};
use crate::optim::{adamw_step, OptimizerState};
use crate::rng::named_stream;
use crate::tensor::Tensor;
use crate::train_util::{collect_clipped_grads, shuffled_indices, TrainLog};

pub struct OperatorEncoder {
    pub nf: PooledHead,
    pub no: FnoNet,
    pub rank: usize,
    pub cell_volume: f64,
}

impl OperatorEncoder {
    pub fn new(store: &mut ParamStore, cfg: &RunConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        let dim = cfg.ndim();
        let modes = cfg.retained_modes();
        let nf = PooledHead::new(
            store,
            "nf",
            dim,
            cfg.grid.n,
            cfg.model.width,
            cfg.model.fno_layers,
            modes,
            cfg.model.rank,
            rng,
        )?;
        let no = FnoNet::new(
            store,
            "no",
            dim,
            cfg.grid.n,
            cfg.model.width,
            cfg.model.fno_layers,
            modes,
            FnoHead::Project { out_channels: cfg.model.rank },
            rng,
        )?;
        Ok(OperatorEncoder { nf, no, rank: cfg.model.rank, cell_volume: cfg.cell_volume() })
    }

    /// Architecture digest used by checkpoint compatibility checks.
    pub fn arch_digest(cfg: &RunConfig) -> u64 {
        let desc = format!(
            "oe:{}:dim{}:n{}:w{}:l{}:m{}:r{}",
            cfg.system,
            cfg.ndim(),
            cfg.grid.n,
            cfg.model.width,
            cfg.model.fno_layers,
            cfg.retained_modes(),
            cfg.model.rank
        );
        digest64(desc.as_bytes())
    }

    /// Reconstruction loss graph over a normalized batch; returns the loss
    /// along with the coefficient and basis variables.
    pub fn loss_graph(
        &self,
        tape: &mut Tape,
        a: &Tensor,
        u: &Tensor,
    ) -> Result<(VarId, VarId, VarId)> {
        let coeffs = self.nf.forward(tape, u)?;
        let basis = self.no.forward(tape, a)?;
        let recon = tape.coeff_decode(coeffs, basis)?;
        let target = tape.data(u.clone());
        let loss = tape.quad_loss(recon, target, self.cell_volume)?;
        Ok((loss, coeffs, basis))
    }

    /// Coefficients for a normalized batch, outside any training graph.
    pub fn encode(&self, store: &ParamStore, u: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(store);
        let v = self.nf.forward(&mut tape, u)?;
        Ok(tape.value(v).clone())
    }

    /// Basis fields [batch, points, rank] for a normalized input batch.
    pub fn basis_fields(&self, store: &ParamStore, a: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(store);
        let v = self.no.forward(&mut tape, a)?;
        Ok(tape.value(v).clone())
    }

    /// Gram-optimal coefficients for `u` under the current basis (both
    /// normalized), per the orthogonal-projection characterization.
    pub fn gram_coeffs(&self, basis: &Tensor, u: &[f64]) -> Result<Vec<f64>> {
        let pts = basis.shape()[0];
        let rank = basis.shape()[1];
        let fields: Vec<Vec<f64>> = (0..rank)
            .map(|k| (0..pts).map(|p| basis.data()[p * rank + k]).collect())
            .collect();
        crate::kl::project_coeffs(u, &fields, self.cell_volume)
    }
}

/// Pointwise linear combination `sum_k coeffs[k] * basis[:, k]` with basis
/// stored channels-last ([points, rank]).
pub fn reconstruct(coeffs: &[f64], basis: &Tensor) -> Result<Vec<f64>> {
    let pts = basis.shape()[0];
    let rank = *basis.shape().last().unwrap();
    if coeffs.len() != rank || basis.shape().len() != 2 {
        return Err(CoreError::usage(format!(
            "reconstruct: {} coefficients for basis {:?}",
            coeffs.len(),
            basis.shape()
        )));
    }
    let mut out = vec![0.0; pts];
    for (p, o) in out.iter_mut().enumerate() {
        let row = &basis.data()[p * rank..(p + 1) * rank];
        *o = coeffs.iter().zip(row).map(|(c, b)| c * b).sum();
    }
    Ok(out)
}

/// Mean grid-quadrature squared residual over a batch of (reconstruction,
/// target) pairs; the plain-function mirror of the training loss.
pub fn encoder_loss_fields(recons: &[Vec<f64>], targets: &[&[f64]], cell_volume: f64) -> f64 {
    let mut acc = 0.0;
    for (r, t) in recons.iter().zip(targets) {
        acc += cell_volume * r.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    acc / recons.len().max(1) as f64
}

/// Normalized (condition, target) pairs of a dataset, flattened.
pub fn normalized_pairs(set: &TrajectorySet) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut conditions = Vec::new();
    let mut targets = Vec::new();
    for (a, u) in set.one_step_pairs() {
        conditions.push(set.norm.normalize_in(a));
        targets.push(set.norm.normalize_out(u));
    }
    (conditions, targets)
}

fn batch_tensor(fields: &[Vec<f64>], idx: &[usize]) -> Tensor {
    let pts = fields[0].len();
    let mut data = Vec::with_capacity(idx.len() * pts);
    for &i in idx {
        data.extend_from_slice(&fields[i]);
    }
    Tensor::new(vec![idx.len(), pts], data).expect("batch assembly")
}

/// Mean loss over a pair list without gradient bookkeeping.
pub fn evaluate_encoder_loss(
    store: &ParamStore,
    enc: &OperatorEncoder,
    conditions: &[Vec<f64>],
    targets: &[Vec<f64>],
    batch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let idx: Vec<usize> = (0..conditions.len()).collect();
    for chunk in idx.chunks(batch) {
        let a = batch_tensor(conditions, chunk);
        let u = batch_tensor(targets, chunk);
        let mut tape = Tape::new(store);
        let (loss, _, _) = enc.loss_graph(&mut tape, &a, &u)?;
        total += tape.value(loss).item() * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Trains NF and NO jointly with AdamW, cosine annealing, and global
/// gradient clipping. The held-out loss must end below its initial value.
pub fn train_operator_encoder(
    store: &mut ParamStore,
    enc: &OperatorEncoder,
    train: &TrajectorySet,
    val: Option<&TrajectorySet>,
    cfg: &RunConfig,
) -> Result<TrainLog> {
    let (conditions, targets) = normalized_pairs(train);
    let val_pairs = val.map(|v| {
        // First realization per held-out input keeps validation cheap.
        let mut conds = Vec::new();
        let mut tgts = Vec::new();
        for i in 0..v.n_inputs {
            conds.push(v.norm.normalize_in(v.input(i)));
            tgts.push(v.norm.normalize_out(v.output(i, 0, 0)));
        }
        (conds, tgts)
    });
    let epochs = cfg.train.encoder_epochs;
    let batch = cfg.train.batch_size.max(1);
    let steps_per_epoch = conditions.len().div_ceil(batch);
    let mut opt = OptimizerState::new(
        store,
        cfg.train.lr,
        cfg.train.weight_decay,
        (epochs * steps_per_epoch) as u64,
    );
    let mut log = TrainLog::default();
    if let Some((vc, vt)) = &val_pairs {
        log.val_losses.push(evaluate_encoder_loss(store, enc, vc, vt, batch)?);
    }
    let mut shuffle_rng = named_stream(cfg.seed, "noise:encoder-shuffle", 0);
    for _epoch in 0..epochs {
        let order = shuffled_indices(conditions.len(), &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let a = batch_tensor(&conditions, chunk);
            let u = batch_tensor(&targets, chunk);
            let lr = opt.lr_now();
            let mut tape = Tape::new(store);
            let (loss, _, _) = enc.loss_graph(&mut tape, &a, &u)?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() || loss_val > 1e6 {
                return Err(CoreError::numerics(format!(
                    "encoder training diverged (loss {loss_val})"
                )));
            }
            epoch_loss += loss_val * chunk.len() as f64;
            let mut grads = tape.backward(loss)?;
            let gvec = collect_clipped_grads(store, &mut grads, cfg.train.grad_clip);
            drop(tape);
            adamw_step(store, &gvec, &mut opt, lr)?;
        }
        log.train_losses.push(epoch_loss / conditions.len() as f64);
        if let Some((vc, vt)) = &val_pairs {
            log.val_losses.push(evaluate_encoder_loss(store, enc, vc, vt, batch)?);
        }
    }
    if let Some(vl) = (log.val_losses.len() > 1).then(|| &log.val_losses) {
        let (first, last) = (vl[0], *vl.last().unwrap());
        if !last.is_finite() || last >= first {
            return Err(CoreError::numerics(format!(
                "encoder held-out loss did not improve: {first} -> {last}"
            )));
        }
    }
    Ok(log)
}
