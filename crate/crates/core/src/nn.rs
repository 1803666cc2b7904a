//! Network building blocks: FNO backbones (1D and 2D), pooled feature
//! heads, and plain MLPs, all parameterized through a shared [`ParamStore`].
//!
//! Architecture defaults follow the benchmark setup: 4 spectral layers of
//! hidden width 64 with GELU, biases in the channel MLPs only, spectral
//! weights bias-free, and a coordinate channel appended to every input
//! field so the networks can express position-locked structure.

use crate::autodiff::{ParamId, ParamStore, Tape, VarId};
use crate::error::Result;
use crate::fft::{Fft2Plan, FftPlan};
use crate::tensor::Tensor;
use rand::Rng;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LinearLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let w = store.add(format!("{name}.w"), Tensor::randn(vec![fan_in, fan_out], std, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(vec![fan_out])));
        LinearLayer { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, x: VarId) -> Result<VarId> {
        let w = tape.param(self.w);
        let b = self.b.map(|b| tape.param(b));
        tape.affine(x, w, b)
    }
}

#[derive(Debug, Clone)]
struct SpectralBlock {
    w_re: ParamId,
    w_im: ParamId,
    skip: LinearLayer,
}

/// Which head sits on top of the spectral stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FnoHead {
    /// Two-layer channel MLP down to `out_channels` per grid point.
    Project { out_channels: usize },
    /// Raw width-channel feature map (used by pooled heads).
    Features,
}

/// Fourier neural operator backbone over a fixed grid.
pub struct FnoNet {
    pub dim: usize,
    pub n: usize,
    pub width: usize,
    pub modes: usize,
    pub head: FnoHead,
    lift: LinearLayer,
    blocks: Vec<SpectralBlock>,
    proj_hidden: Option<LinearLayer>,
    proj_out: Option<LinearLayer>,
    plan1: Option<Arc<FftPlan>>,
    plan2: Option<Arc<Fft2Plan>>,
    coords: Tensor,
}

impl FnoNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        n: usize,
        width: usize,
        n_layers: usize,
        modes: usize,
        head: FnoHead,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (plan1, plan2, pts, mode_count) = if dim == 1 {
            (Some(FftPlan::new(n)?), None, n, modes)
        } else {
            (None, Some(Fft2Plan::new(n, n)?), n * n, 2 * modes * modes)
        };
        let in_channels = 1 + dim;
        let lift = LinearLayer::new(store, &format!("{prefix}.lift"), in_channels, width, true, rng);
        // Variance-preserving spectral init: synthesis rescales by 1/points,
        // analysis scales magnitudes by sqrt(points).
        let spec_std = (pts as f64 / (2.0 * mode_count as f64 * width as f64)).sqrt();
        let mut blocks = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let shape = if dim == 1 {
                vec![modes, width, width]
            } else {
                vec![2 * modes, modes, width, width]
            };
            let w_re =
                store.add(format!("{prefix}.layer{l}.wre"), Tensor::randn(shape.clone(), spec_std, rng));
            let w_im = store.add(format!("{prefix}.layer{l}.wim"), Tensor::randn(shape, spec_std, rng));
            let skip =
                LinearLayer::new(store, &format!("{prefix}.layer{l}.skip"), width, width, true, rng);
            blocks.push(SpectralBlock { w_re, w_im, skip });
        }
        let (proj_hidden, proj_out) = match head {
            FnoHead::Project { out_channels } => (
                Some(LinearLayer::new(store, &format!("{prefix}.proj1"), width, width, true, rng)),
                Some(LinearLayer::new(store, &format!("{prefix}.proj2"), width, out_channels, true, rng)),
            ),
            FnoHead::Features => (None, None),
        };
        let coords = coordinate_channels(dim, n);
        Ok(FnoNet { dim, n, width, modes, head, lift, blocks, proj_hidden, proj_out, plan1, plan2, coords })
    }

    /// Rebinds the same parameters to a different grid resolution. The
    /// spectral weights act on Fourier coefficients and the channel MLPs are
    /// pointwise, so evaluation is resolution-consistent as long as the new
    /// grid retains the trained mode count.
    pub fn with_grid(&self, n: usize) -> Result<Self> {
        let (plan1, plan2) = if self.dim == 1 {
            (Some(FftPlan::new(n)?), None)
        } else {
            (None, Some(Fft2Plan::new(n, n)?))
        };
        if (self.dim == 1 && self.modes > n / 2) || (self.dim == 2 && 2 * self.modes > n) {
            return Err(crate::error::CoreError::config(format!(
                "grid {n} cannot carry {} retained modes",
                self.modes
            )));
        }
        Ok(FnoNet {
            dim: self.dim,
            n,
            width: self.width,
            modes: self.modes,
            head: self.head,
            lift: self.lift.clone(),
            blocks: self.blocks.clone(),
            proj_hidden: self.proj_hidden.clone(),
            proj_out: self.proj_out.clone(),
            plan1,
            plan2,
            coords: coordinate_channels(self.dim, n),
        })
    }

    pub fn points(&self) -> usize {
        if self.dim == 2 {
            self.n * self.n
        } else {
            self.n
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.head {
            FnoHead::Project { out_channels } => out_channels,
            FnoHead::Features => self.width,
        }
    }

    /// Runs the backbone on a flat batch of fields [batch, points]; returns
    /// [batch, points, out_channels].
    pub fn forward(&self, tape: &mut Tape, fields: &Tensor) -> Result<VarId> {
        let pts = self.points();
        let batch = fields.len() / pts;
        let cin = 1 + self.dim;
        let mut input = vec![0.0; batch * pts * cin];
        for b in 0..batch {
            for p in 0..pts {
                let base = (b * pts + p) * cin;
                input[base] = fields.data()[b * pts + p];
                for d in 0..self.dim {
                    input[base + 1 + d] = self.coords.data()[p * self.dim + d];
                }
            }
        }
        let x = tape.data(Tensor::new(vec![batch, pts, cin], input)?);
        let mut h = self.lift.forward(tape, x)?;
        for block in &self.blocks {
            let w_re = tape.param(block.w_re);
            let w_im = tape.param(block.w_im);
            let spectral = if self.dim == 1 {
                tape.spectral_mix_1d(h, w_re, w_im, self.plan1.clone().unwrap(), self.modes)?
            } else {
                let h4 = tape.reshape(h, vec![batch, self.n, self.n, self.width])?;
                let s = tape.spectral_mix_2d(h4, w_re, w_im, self.plan2.clone().unwrap(), self.modes)?;
                tape.reshape(s, vec![batch, pts, self.width])?
            };
            let skip = block.skip.forward(tape, h)?;
            let sum = tape.add(spectral, skip)?;
            h = tape.gelu(sum);
        }
        if let (Some(p1), Some(p2)) = (&self.proj_hidden, &self.proj_out) {
            let hidden = p1.forward(tape, h)?;
            let hidden = tape.gelu(hidden);
            h = p2.forward(tape, hidden)?;
        }
        Ok(h)
    }
}

/// Normalized grid coordinates as extra input channels: [points, dim].
fn coordinate_channels(dim: usize, n: usize) -> Tensor {
    if dim == 1 {
        Tensor::new(vec![n, 1], (0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    } else {
        let mut data = Vec::with_capacity(n * n * 2);
        for iy in 0..n {
            for ix in 0..n {
                data.push(ix as f64 / n as f64);
                data.push(iy as f64 / n as f64);
            }
        }
        Tensor::new(vec![n * n, 2], data).unwrap()
    }
}

/// Global average pooling over the feature map followed by one affine map.
pub struct PooledHead {
    pub backbone: FnoNet,
    pub out: LinearLayer,
}

impl PooledHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        n: usize,
        width: usize,
        n_layers: usize,
        modes: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let backbone =
            FnoNet::new(store, prefix, dim, n, width, n_layers, modes, FnoHead::Features, rng)?;
        let out = LinearLayer::new(store, &format!("{prefix}.head"), width, out_dim, true, rng);
        Ok(PooledHead { backbone, out })
    }

    /// [batch, points] fields -> [batch, out_dim] pooled vectors.
    pub fn forward(&self, tape: &mut Tape, fields: &Tensor) -> Result<VarId> {
        let features = self.backbone.forward(tape, fields)?;
        let pooled = tape.mean_pool(features)?;
        self.out.forward(tape, pooled)
    }
}

/// Plain MLP with GELU between affine layers.
pub struct Mlp {
    layers: Vec<LinearLayer>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, prefix: &str, dims: &[usize], rng: &mut impl Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| LinearLayer::new(store, &format!("{prefix}.fc{i}"), w[0], w[1], true, rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, tape: &mut Tape, x: VarId) -> Result<VarId> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.gelu(h);
            }
        }
        Ok(h)
    }
}

/// Fixed sinusoidal embedding of a scalar time into `dim` features, with
/// geometrically spaced frequencies from 1 to 1000.
pub fn time_embedding(tau: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (1000.0f64).powf(i as f64 / (half.max(2) - 1) as f64);
        out.push((tau * freq).sin());
        out.push((tau * freq).cos());
    }
    out.truncate(dim);
    while out.len() < dim {
        out.push(0.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::named_stream;

    #[test]
    fn fno1d_shapes_and_finiteness() {
        let mut store = ParamStore::new();
        let mut rng = named_stream(0, "nn-test", 0);
        let net = FnoNet::new(
            &mut store,
            "f",
            1,
            32,
            16,
            2,
            8,
            FnoHead::Project { out_channels: 3 },
            &mut rng,
        )
        .unwrap();
        let fields = Tensor::randn(vec![4, 32], 1.0, &mut rng);
        let mut tape = Tape::new(&store);
        let out = net.forward(&mut tape, &fields).unwrap();
        assert_eq!(tape.value(out).shape(), &[4, 32, 3]);
        assert!(tape.value(out).all_finite());
    }

    #[test]
    fn fno2d_shapes_and_finiteness() {
        let mut store = ParamStore::new();
        let mut rng = named_stream(1, "nn-test", 1);
        let net = FnoNet::new(&mut store, "f", 2, 8, 12, 2, 2, FnoHead::Features, &mut rng).unwrap();
        let fields = Tensor::randn(vec![2, 64], 1.0, &mut rng);
        let mut tape = Tape::new(&store);
        let out = net.forward(&mut tape, &fields).unwrap();
        assert_eq!(tape.value(out).shape(), &[2, 64, 12]);
        assert!(tape.value(out).all_finite());
    }

    #[test]
    fn pooled_head_output_dimension() {
        let mut store = ParamStore::new();
        let mut rng = named_stream(2, "nn-test", 2);
        let head = PooledHead::new(&mut store, "nf", 1, 32, 16, 2, 8, 5, &mut rng).unwrap();
        let fields = Tensor::randn(vec![3, 32], 1.0, &mut rng);
        let mut tape = Tape::new(&store);
        let out = head.forward(&mut tape, &fields).unwrap();
        assert_eq!(tape.value(out).shape(), &[3, 5]);
    }

    #[test]
    fn mlp_trains_on_toy_regression() {
        use crate::optim::{adamw_step, clip_global_norm, OptimizerState};
        let mut store = ParamStore::new();
        let mut rng = named_stream(3, "nn-test", 3);
        let mlp = Mlp::new(&mut store, "m", &[2, 16, 1], &mut rng);
        let x = Tensor::randn(vec![32, 2], 1.0, &mut rng);
        let t = Tensor::new(
            vec![32, 1],
            x.data().chunks(2).map(|c| c[0] - 0.5 * c[1]).collect(),
        )
        .unwrap();
        let mut state = OptimizerState::new(&store, 1e-2, 0.0, 400);
        let loss_at = |store: &ParamStore, mlp: &Mlp| {
            let mut tape = Tape::new(store);
            let xv = tape.data(x.clone());
            let tv = tape.data(t.clone());
            let y = mlp.forward(&mut tape, xv).unwrap();
            let l = tape.quad_loss(y, tv, 1.0).unwrap();
            tape.value(l).item()
        };
        let initial = loss_at(&store, &mlp);
        for _ in 0..400 {
            let lr = state.lr_now();
            let mut tape = Tape::new(&store);
            let xv = tape.data(x.clone());
            let tv = tape.data(t.clone());
            let y = mlp.forward(&mut tape, xv).unwrap();
            let l = tape.quad_loss(y, tv, 1.0).unwrap();
            let mut grads = tape.backward(l).unwrap();
            let mut gvec: Vec<Tensor> = store
                .param_ids()
                .map(|id| grads.take_for_param(id).unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec())))
                .collect();
            clip_global_norm(&mut gvec, 1.0);
            adamw_step(&mut store, &gvec, &mut state, lr).unwrap();
        }
        let final_loss = loss_at(&store, &mlp);
        assert!(final_loss < 0.05 * initial, "loss {initial} -> {final_loss}");
    }

    #[test]
    fn time_embedding_is_fixed_and_bounded() {
        let a = time_embedding(0.37, 32);
        let b = time_embedding(0.37, 32);
        assert_eq!(a, b);
        assert_eq!(a.len(), 32);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(time_embedding(0.1, 32), time_embedding(0.9, 32));
    }
}
