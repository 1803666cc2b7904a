//! Deterministic FNO surrogate: the point-prediction baseline that the
//! generative head is compared against.

use crate::autodiff::{ParamStore, Tape};
use crate::config::{digest64, RunConfig};
use crate::dataset::TrajectorySet;
use crate::encoder::normalized_pairs;
use crate::error::{CoreError, Result};
use crate::nn::{FnoHead, FnoNet};
use crate::optim::{adamw_step, OptimizerState};
use crate::rng::named_stream;
use crate::tensor::Tensor;
use crate::train_util::{collect_clipped_grads, shuffled_indices, TrainLog};

pub struct FnoBaseline {
    pub net: FnoNet,
    pub cell_volume: f64,
}

impl FnoBaseline {
    pub fn new(store: &mut ParamStore, cfg: &RunConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        let net = FnoNet::new(
            store,
            "fno",
            cfg.ndim(),
            cfg.grid.n,
            cfg.model.width,
            cfg.model.fno_layers,
            cfg.retained_modes(),
            FnoHead::Project { out_channels: 1 },
            rng,
        )?;
        Ok(FnoBaseline { net, cell_volume: cfg.cell_volume() })
    }

    pub fn arch_digest(cfg: &RunConfig) -> u64 {
        let desc = format!(
            "fno:{}:dim{}:n{}:w{}:l{}:m{}",
            cfg.system,
            cfg.ndim(),
            cfg.grid.n,
            cfg.model.width,
            cfg.model.fno_layers,
            cfg.retained_modes()
        );
        digest64(desc.as_bytes())
    }

    /// Normalized predictions [batch, points] for a normalized input batch.
    pub fn predict(&self, store: &ParamStore, a: &Tensor) -> Result<Tensor> {
        let batch = a.shape()[0];
        let pts = self.net.points();
        let mut tape = Tape::new(store);
        let out = self.net.forward(&mut tape, a)?;
        Ok(tape.value(out).clone().reshaped(vec![batch, pts])?)
    }
}

/// Supervised one-step training with the grid-quadrature MSE.
pub fn train_fno(
    store: &mut ParamStore,
    model: &FnoBaseline,
    train: &TrajectorySet,
    cfg: &RunConfig,
) -> Result<TrainLog> {
    let (conditions, targets) = normalized_pairs(train);
    let pts = conditions[0].len();
    let epochs = cfg.train.fno_epochs;
    let batch = cfg.train.batch_size.max(1);
    let steps_per_epoch = conditions.len().div_ceil(batch);
    let mut opt = OptimizerState::new(
        store,
        cfg.train.lr,
        cfg.train.weight_decay,
        (epochs * steps_per_epoch) as u64,
    );
    let mut log = TrainLog::default();
    let mut shuffle_rng = named_stream(cfg.seed, "noise:fno-shuffle", 0);
    for _ in 0..epochs {
        let order = shuffled_indices(conditions.len(), &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut a = Vec::with_capacity(chunk.len() * pts);
            let mut u = Vec::with_capacity(chunk.len() * pts);
            for &i in chunk {
                a.extend_from_slice(&conditions[i]);
                u.extend_from_slice(&targets[i]);
            }
            let a = Tensor::new(vec![chunk.len(), pts], a)?;
            let u = Tensor::new(vec![chunk.len(), pts], u)?;
            let lr = opt.lr_now();
            let mut tape = Tape::new(store);
            let pred = model.net.forward(&mut tape, &a)?;
            let pred = tape.reshape(pred, vec![chunk.len(), pts])?;
            let tv = tape.data(u);
            let loss = tape.quad_loss(pred, tv, model.cell_volume)?;
            let loss_val = tape.value(loss).item();
            if !loss_val.is_finite() || loss_val > 1e6 {
                return Err(CoreError::numerics(format!("FNO training diverged (loss {loss_val})")));
            }
            epoch_loss += loss_val * chunk.len() as f64;
            let mut grads = tape.backward(loss)?;
            let gvec = collect_clipped_grads(store, &mut grads, cfg.train.grad_clip);
            drop(tape);
            adamw_step(store, &gvec, &mut opt, lr)?;
        }
        log.train_losses.push(epoch_loss / conditions.len() as f64);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SystemKind;

    #[test]
    fn learns_identity_map_quickly() {
        let mut cfg = RunConfig::preset("sburgers", "desk", 0).unwrap();
        cfg.grid.n = 32;
        cfg.model.width = 16;
        cfg.model.fno_layers = 2;
        cfg.model.modes_cap = 8;
        cfg.train.fno_epochs = 40;
        cfg.train.batch_size = 8;
        cfg.train.lr = 2e-3;
        let mut set = TrajectorySet::new(SystemKind::Synthetic, 1, 32, 1.0, 0, 64, 1, 1, 0);
        let mut rng = named_stream(0, "fno-test", 0);
        for i in 0..64 {
            let grid = crate::grid::Grid1d::new(32, 1.0).unwrap();
            let a = crate::solvers::init::sample_ic_1d(&grid, 2.0, 1.0, &mut rng);
            set.set_input(i, &a);
            set.set_output(i, 0, 0, &a);
        }
        set.compute_norm();
        let mut store = ParamStore::new();
        let mut init_rng = named_stream(1, "fno-test", 1);
        let model = FnoBaseline::new(&mut store, &cfg, &mut init_rng).unwrap();
        let log = train_fno(&mut store, &model, &set, &cfg).unwrap();
        let first = log.train_losses[0];
        let last = *log.train_losses.last().unwrap();
        assert!(last < 0.05 * first, "identity task loss {first} -> {last}");
    }
}
