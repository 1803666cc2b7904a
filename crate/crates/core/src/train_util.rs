//! Small shared pieces of the training loops.

use crate::autodiff::{Gradients, ParamStore};
use crate::optim::clip_global_norm;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

/// Per-epoch mean losses; validation entry 0 is the pre-training loss.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (e, t) in self.train_losses.iter().enumerate() {
            let v = self
                .val_losses
                .get(e + 1)
                .map(|v| v.to_string())
                .unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", e, t, v));
        }
        s
    }
}

pub fn shuffled_indices(count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(rng);
    idx
}

/// Extracts gradients in parameter order (zeros where a parameter did not
/// participate) and clips the global norm.
pub fn collect_clipped_grads(store: &ParamStore, grads: &mut Gradients, clip: f64) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = store
        .param_ids()
        .map(|id| {
            grads
                .take_for_param(id)
                .unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec()))
        })
        .collect();
    clip_global_norm(&mut out, clip);
    out
}
