//! Reverse-mode differentiation over a closed operator set.
//!
//! The networks in this crate compose from a fixed vocabulary: dense affine
//! maps, pointwise GELU, FFT-space complex channel mixing, mean pooling,
//! concatenation, and squared-error reductions. The tape records exactly
//! these coarse-grained operations, which keeps the hot paths at matmul
//! granularity instead of scalar granularity.
//!
//! Parameters live in a [`ParamStore`]; a [`Tape`] borrows the store for one
//! forward/backward pass, so parameter data is never copied per step.

use crate::error::{CoreError, Result};
use crate::fft::{Fft2Plan, FftPlan};
use crate::tensor::Tensor;
use std::sync::Arc;

/// Handle to a named parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Named parameter tensors shared by the model structs.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

/// Index of a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    /// y[.., j] = sum_k x[.., k] w[k, j] (+ b[j])
    Affine { x: VarId, w: VarId, b: Option<VarId> },
    Gelu { x: VarId, saved_t: Vec<f64> },
    Add { a: VarId, b: VarId },
    Scale { x: VarId, c: f64 },
    ConcatLast { parts: Vec<VarId> },
    /// [batch, space, chan] -> [batch, chan], mean over space.
    MeanPool { x: VarId },
    /// FNO layer core: FFT over the spatial axis, complex mixing of the
    /// lowest `modes` frequencies, inverse FFT of the mixed spectrum.
    SpectralMix1d {
        x: VarId,
        w_re: VarId,
        w_im: VarId,
        plan: Arc<FftPlan>,
        modes: usize,
        /// Kept input spectrum planes [batch, modes, c_in], saved for the
        /// weight gradient.
        saved_re: Vec<f64>,
        saved_im: Vec<f64>,
    },
    /// 2D variant: kept rows are the `modes` lowest positive and negative
    /// ky frequencies, kept columns the `modes` lowest kx frequencies.
    SpectralMix2d {
        x: VarId,
        w_re: VarId,
        w_im: VarId,
        plan: Arc<Fft2Plan>,
        modes: usize,
        saved_re: Vec<f64>,
        saved_im: Vec<f64>,
    },
    /// u[b, p] = sum_k coeffs[b, k] basis[b, k, p]
    CoeffDecode { coeffs: VarId, basis: VarId },
    /// (1/batch) * sum_b sum_p weight * (pred - target)^2
    QuadLoss { pred: VarId, target: VarId, weight: f64 },
    /// sum of squares over all entries.
    SumSquares { x: VarId },
}

struct Node {
    op: Op,
    value: Value,
    requires_grad: bool,
}

/// Recording tape for one forward/backward pass.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    bound: Vec<Option<VarId>>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape { store, nodes: Vec::new(), bound: vec![None; store.len()] }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> VarId {
        self.nodes.push(Node { op, value: Value::Owned(value), requires_grad });
        VarId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        match &self.nodes[id.0].value {
            Value::Owned(t) => t,
            Value::Param(p) => self.store.get(*p),
        }
    }

    fn requires(&self, id: VarId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Records a constant input (no gradient flows into it).
    pub fn data(&mut self, tensor: Tensor) -> VarId {
        self.push(Op::Leaf, tensor, false)
    }

    /// Binds a parameter as a differentiable leaf; repeated binds of the same
    /// parameter return the same variable.
    pub fn param(&mut self, id: ParamId) -> VarId {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        self.nodes.push(Node { op: Op::Leaf, value: Value::Param(id), requires_grad: true });
        let v = VarId(self.nodes.len() - 1);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn affine(&mut self, x: VarId, w: VarId, b: Option<VarId>) -> Result<VarId> {
        let (xs, ws) = (self.value(x).shape().to_vec(), self.value(w).shape().to_vec());
        if ws.len() != 2 || xs.last() != Some(&ws[0]) {
            return Err(CoreError::usage(format!("affine: x {xs:?} incompatible with w {ws:?}")));
        }
        let (m, n) = (ws[0], ws[1]);
        let rows = self.value(x).len() / m;
        let mut out = vec![0.0; rows * n];
        if let Some(bid) = b {
            let bt = self.value(bid);
            if bt.shape() != [n] {
                return Err(CoreError::usage(format!("affine: bias shape {:?} != [{n}]", bt.shape())));
            }
            let bd = bt.data();
            for row in out.chunks_exact_mut(n) {
                row.copy_from_slice(bd);
            }
        }
        matmul_acc(&mut out, self.value(x).data(), self.value(w).data(), rows, m, n);
        let mut shape = xs;
        *shape.last_mut().unwrap() = n;
        let req = self.requires(x) || self.requires(w) || b.map_or(false, |b| self.requires(b));
        Ok(self.push(Op::Affine { x, w, b }, Tensor::new(shape, out)?, req))
    }

    pub fn gelu(&mut self, x: VarId) -> VarId {
        let xt = self.value(x);
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        let mut saved_t = Vec::with_capacity(xt.len());
        let out: Vec<f64> = xt
            .data()
            .iter()
            .map(|&v| {
                let t = fast_tanh(C * (v + 0.044_715 * v * v * v));
                saved_t.push(t);
                0.5 * v * (1.0 + t)
            })
            .collect();
        let value = Tensor::new(xt.shape().to_vec(), out).unwrap();
        let req = self.requires(x);
        self.push(Op::Gelu { x, saved_t }, value, req)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(CoreError::usage(format!(
                "add: shape mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let out: Vec<f64> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), out)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Add { a, b }, value, req))
    }

    pub fn scale(&mut self, x: VarId, c: f64) -> VarId {
        let xt = self.value(x);
        let value =
            Tensor::new(xt.shape().to_vec(), xt.data().iter().map(|&v| c * v).collect()).unwrap();
        let req = self.requires(x);
        self.push(Op::Scale { x, c }, value, req)
    }

    /// Concatenate along the last axis; all leading axes must agree.
    pub fn concat_last(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(CoreError::usage("concat_last: no inputs"));
        }
        let lead: Vec<usize> = {
            let s = self.value(parts[0]).shape();
            s[..s.len() - 1].to_vec()
        };
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(CoreError::usage("concat_last: leading shape mismatch"));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let d = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let mut shape = lead;
        shape.push(total);
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(Op::ConcatLast { parts: parts.to_vec() }, Tensor::new(shape, out)?, req))
    }

    pub fn mean_pool(&mut self, x: VarId) -> Result<VarId> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 3 {
            return Err(CoreError::usage(format!("mean_pool expects [batch, space, chan], got {s:?}")));
        }
        let (b, sp, c) = (s[0], s[1], s[2]);
        let d = self.value(x).data();
        let mut out = vec![0.0; b * c];
        for bi in 0..b {
            for si in 0..sp {
                let row = &d[(bi * sp + si) * c..(bi * sp + si + 1) * c];
                let acc = &mut out[bi * c..(bi + 1) * c];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        let inv = 1.0 / sp as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let req = self.requires(x);
        Ok(self.push(Op::MeanPool { x }, Tensor::new(vec![b, c], out)?, req))
    }

    pub fn spectral_mix_1d(
        &mut self,
        x: VarId,
        w_re: VarId,
        w_im: VarId,
        plan: Arc<FftPlan>,
        modes: usize,
    ) -> Result<VarId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w_re).shape().to_vec();
        if xs.len() != 3 || ws.len() != 3 || self.value(w_im).shape() != &ws[..] {
            return Err(CoreError::usage("spectral_mix_1d: expects x [b,n,c], w [k,ci,co]"));
        }
        let (batch, n, c_in) = (xs[0], xs[1], xs[2]);
        let (k, wci, c_out) = (ws[0], ws[1], ws[2]);
        if n != plan.len() || k != modes || wci != c_in || modes > n / 2 {
            return Err(CoreError::usage(format!(
                "spectral_mix_1d: n={n}, modes={modes}, w {ws:?} inconsistent (modes must be <= n/2)"
            )));
        }
        let (out, saved_re, saved_im) = spectral_forward_1d(
            self.value(x).data(),
            self.value(w_re).data(),
            self.value(w_im).data(),
            &plan,
            batch,
            n,
            c_in,
            c_out,
            modes,
        );
        let req = self.requires(x) || self.requires(w_re) || self.requires(w_im);
        Ok(self.push(
            Op::SpectralMix1d { x, w_re, w_im, plan, modes, saved_re, saved_im },
            Tensor::new(vec![batch, n, c_out], out)?,
            req,
        ))
    }

    pub fn spectral_mix_2d(
        &mut self,
        x: VarId,
        w_re: VarId,
        w_im: VarId,
        plan: Arc<Fft2Plan>,
        modes: usize,
    ) -> Result<VarId> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w_re).shape().to_vec();
        let (ny, nx) = plan.shape();
        if xs.len() != 4 || xs[1] != ny || xs[2] != nx {
            return Err(CoreError::usage("spectral_mix_2d: expects x [b,ny,nx,c]"));
        }
        if ws.len() != 4 || ws[0] != 2 * modes || ws[1] != modes || self.value(w_im).shape() != &ws[..] {
            return Err(CoreError::usage("spectral_mix_2d: w must be [2*modes, modes, ci, co]"));
        }
        if 2 * modes > ny || modes > nx / 2 {
            return Err(CoreError::usage(format!(
                "spectral_mix_2d: modes={modes} too large for grid {ny}x{nx}"
            )));
        }
        let (batch, c_in, c_out) = (xs[0], xs[3], ws[3]);
        if ws[2] != c_in {
            return Err(CoreError::usage("spectral_mix_2d: c_in mismatch"));
        }
        let (out, saved_re, saved_im) = spectral_forward_2d(
            self.value(x).data(),
            self.value(w_re).data(),
            self.value(w_im).data(),
            &plan,
            batch,
            c_in,
            c_out,
            modes,
        );
        let req = self.requires(x) || self.requires(w_re) || self.requires(w_im);
        Ok(self.push(
            Op::SpectralMix2d { x, w_re, w_im, plan, modes, saved_re, saved_im },
            Tensor::new(vec![batch, ny, nx, c_out], out)?,
            req,
        ))
    }

    /// u[b, p] = sum_k coeffs[b, k] basis[b, p, k] (basis channels-last, as
    /// produced by the FNO head).
    pub fn coeff_decode(&mut self, coeffs: VarId, basis: VarId) -> Result<VarId> {
        let cs = self.value(coeffs).shape().to_vec();
        let bs = self.value(basis).shape().to_vec();
        if cs.len() != 2 || bs.len() != 3 || cs[0] != bs[0] || cs[1] != bs[2] {
            return Err(CoreError::usage(format!(
                "coeff_decode: coeffs {cs:?} incompatible with basis {bs:?}"
            )));
        }
        let (batch, pts, rank) = (bs[0], bs[1], bs[2]);
        let c = self.value(coeffs).data();
        let bd = self.value(basis).data();
        let mut out = vec![0.0; batch * pts];
        for bi in 0..batch {
            let crow = &c[bi * rank..(bi + 1) * rank];
            for p in 0..pts {
                let row = &bd[(bi * pts + p) * rank..(bi * pts + p + 1) * rank];
                out[bi * pts + p] = dot(crow, row);
            }
        }
        let req = self.requires(coeffs) || self.requires(basis);
        Ok(self.push(Op::CoeffDecode { coeffs, basis }, Tensor::new(vec![batch, pts], out)?, req))
    }

    /// Batch-mean quadrature loss; `weight` is the per-point quadrature
    /// weight (cell volume for fields, 1 for plain vectors).
    pub fn quad_loss(&mut self, pred: VarId, target: VarId, weight: f64) -> Result<VarId> {
        let ps = self.value(pred).shape().to_vec();
        if self.value(target).shape() != &ps[..] {
            return Err(CoreError::usage(format!(
                "quad_loss: pred {ps:?} vs target {:?}",
                self.value(target).shape()
            )));
        }
        let batch = if ps.is_empty() { 1 } else { ps[0] };
        let sum: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let loss = weight * sum / batch as f64;
        let req = self.requires(pred) || self.requires(target);
        Ok(self.push(Op::QuadLoss { pred, target, weight }, Tensor::scalar(loss), req))
    }

    /// Shape change without data movement; gradients flow through unchanged.
    pub fn reshape(&mut self, x: VarId, shape: Vec<usize>) -> Result<VarId> {
        let expect: usize = shape.iter().product();
        if expect != self.value(x).len() {
            return Err(CoreError::usage(format!(
                "reshape: {} elements to {:?}",
                self.value(x).len(),
                shape
            )));
        }
        let value = Tensor::new(shape, self.value(x).data().to_vec())?;
        let req = self.requires(x);
        Ok(self.push(Op::Scale { x, c: 1.0 }, value, req))
    }

    pub fn sum_squares(&mut self, x: VarId) -> VarId {
        let sum: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        let req = self.requires(x);
        self.push(Op::SumSquares { x }, Tensor::scalar(sum), req)
    }

    /// Reverse pass from a scalar loss. Returns per-parameter gradients for
    /// every parameter bound on this tape.
    pub fn backward(&mut self, loss: VarId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(CoreError::usage("backward: loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_node(idx, &g, &mut grads)?;
            // Leaf gradients are still needed after the sweep.
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        let mut by_param = vec![None; self.store.len()];
        for (pidx, bound) in self.bound.iter().enumerate() {
            if let Some(v) = bound {
                by_param[pidx] = grads[v.0].take();
            }
        }
        Ok(Gradients { by_node: grads, by_param })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: VarId, delta: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn backward_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        // Split borrows: the op is read-only here.
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (m, n) = {
                    let ws = self.value(*w).shape();
                    (ws[0], ws[1])
                };
                let rows = self.value(*x).len() / m;
                if self.requires(*x) {
                    // dx = g . w^T, computed against the transposed weight so the
                    // inner loop stays unit-stride.
                    let wd = self.value(*w).data();
                    let mut wt = vec![0.0; m * n];
                    for k in 0..m {
                        for j in 0..n {
                            wt[j * m + k] = wd[k * n + j];
                        }
                    }
                    let mut dx = vec![0.0; rows * m];
                    matmul_acc(&mut dx, g.data(), &wt, rows, n, m);
                    self.accumulate(grads, *x, Tensor::new(self.value(*x).shape().to_vec(), dx)?);
                }
                if self.requires(*w) {
                    // dw[k, j] = sum_r x[r, k] g[r, j], blocked over four rows
                    // so each dw row streams once per block.
                    let xd = self.value(*x).data();
                    let gd = g.data();
                    let mut dw = vec![0.0; m * n];
                    let mut r = 0;
                    while r + 4 <= rows {
                        let g0 = &gd[r * n..(r + 1) * n];
                        let g1 = &gd[(r + 1) * n..(r + 2) * n];
                        let g2 = &gd[(r + 2) * n..(r + 3) * n];
                        let g3 = &gd[(r + 3) * n..(r + 4) * n];
                        for k in 0..m {
                            let a0 = xd[r * m + k];
                            let a1 = xd[(r + 1) * m + k];
                            let a2 = xd[(r + 2) * m + k];
                            let a3 = xd[(r + 3) * m + k];
                            let row = &mut dw[k * n..(k + 1) * n];
                            for j in 0..n {
                                let acc = a0.mul_add(g0[j], row[j]);
                                let acc = a1.mul_add(g1[j], acc);
                                let acc = a2.mul_add(g2[j], acc);
                                row[j] = a3.mul_add(g3[j], acc);
                            }
                        }
                        r += 4;
                    }
                    while r < rows {
                        let gr = &gd[r * n..(r + 1) * n];
                        for k in 0..m {
                            let a = xd[r * m + k];
                            let row = &mut dw[k * n..(k + 1) * n];
                            for (dv, &gv) in row.iter_mut().zip(gr) {
                                *dv = a.mul_add(gv, *dv);
                            }
                        }
                        r += 1;
                    }
                    self.accumulate(grads, *w, Tensor::new(vec![m, n], dw)?);
                }
                if let Some(bid) = b {
                    if self.requires(*bid) {
                        let mut db = vec![0.0; n];
                        for r in 0..rows {
                            for j in 0..n {
                                db[j] += g.data()[r * n + j];
                            }
                        }
                        self.accumulate(grads, *bid, Tensor::new(vec![n], db)?);
                    }
                }
            }
            Op::Gelu { x, saved_t } => {
                const C: f64 = 0.797_884_560_802_865_4;
                let xd = self.value(*x).data();
                let dx: Vec<f64> = xd
                    .iter()
                    .zip(saved_t)
                    .zip(g.data())
                    .map(|((&v, &t), &gv)| {
                        let du = C * (1.0 + 3.0 * 0.044_715 * v * v);
                        gv * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                    })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(self.value(*x).shape().to_vec(), dx)?);
            }
            Op::Add { a, b } => {
                if self.requires(*a) && self.requires(*b) {
                    self.accumulate(grads, *a, g.clone());
                    self.accumulate(grads, *b, g.clone());
                } else if self.requires(*a) {
                    self.accumulate(grads, *a, g.clone());
                } else {
                    self.accumulate(grads, *b, g.clone());
                }
            }
            Op::Scale { x, c } => {
                // Also serves reshape (c = 1): the gradient takes the input's shape.
                let dx: Vec<f64> = if *c == 1.0 {
                    g.data().to_vec()
                } else {
                    g.data().iter().map(|&v| c * v).collect()
                };
                self.accumulate(grads, *x, Tensor::new(self.value(*x).shape().to_vec(), dx)?);
            }
            Op::ConcatLast { parts } => {
                let gs = g.shape();
                let total = *gs.last().unwrap();
                let rows = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = *self.value(p).shape().last().unwrap();
                    if self.requires(p) {
                        let mut dp = vec![0.0; rows * w];
                        for r in 0..rows {
                            dp[r * w..(r + 1) * w].copy_from_slice(
                                &g.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        self.accumulate(grads, p, Tensor::new(self.value(p).shape().to_vec(), dp)?);
                    }
                    offset += w;
                }
            }
            Op::MeanPool { x } => {
                let s = self.value(*x).shape();
                let (b, sp, c) = (s[0], s[1], s[2]);
                let inv = 1.0 / sp as f64;
                let mut dx = vec![0.0; b * sp * c];
                for bi in 0..b {
                    let gr = &g.data()[bi * c..(bi + 1) * c];
                    for si in 0..sp {
                        let row = &mut dx[(bi * sp + si) * c..(bi * sp + si + 1) * c];
                        for (dv, &gv) in row.iter_mut().zip(gr) {
                            *dv = gv * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(s.to_vec(), dx)?);
            }
            Op::SpectralMix1d { x, w_re, w_im, plan, modes, saved_re, saved_im } => {
                let xs = self.value(*x).shape();
                let (batch, n, c_in) = (xs[0], xs[1], xs[2]);
                let c_out = *self.value(*w_re).shape().last().unwrap();
                let (dx, dwre, dwim) = spectral_backward_1d(
                    g.data(),
                    saved_re,
                    saved_im,
                    self.value(*w_re).data(),
                    self.value(*w_im).data(),
                    plan,
                    batch,
                    n,
                    c_in,
                    c_out,
                    *modes,
                    self.requires(*x),
                );
                if self.requires(*x) {
                    self.accumulate(grads, *x, Tensor::new(xs.to_vec(), dx)?);
                }
                if self.requires(*w_re) {
                    let ws = self.value(*w_re).shape().to_vec();
                    self.accumulate(grads, *w_re, Tensor::new(ws.clone(), dwre)?);
                    self.accumulate(grads, *w_im, Tensor::new(ws, dwim)?);
                }
            }
            Op::SpectralMix2d { x, w_re, w_im, plan, modes, saved_re, saved_im } => {
                let xs = self.value(*x).shape();
                let (batch, c_in) = (xs[0], xs[3]);
                let c_out = *self.value(*w_re).shape().last().unwrap();
                let (dx, dwre, dwim) = spectral_backward_2d(
                    g.data(),
                    saved_re,
                    saved_im,
                    self.value(*w_re).data(),
                    self.value(*w_im).data(),
                    plan,
                    batch,
                    c_in,
                    c_out,
                    *modes,
                    self.requires(*x),
                );
                if self.requires(*x) {
                    self.accumulate(grads, *x, Tensor::new(xs.to_vec(), dx)?);
                }
                if self.requires(*w_re) {
                    let ws = self.value(*w_re).shape().to_vec();
                    self.accumulate(grads, *w_re, Tensor::new(ws.clone(), dwre)?);
                    self.accumulate(grads, *w_im, Tensor::new(ws, dwim)?);
                }
            }
            Op::CoeffDecode { coeffs, basis } => {
                let bs = self.value(*basis).shape();
                let (batch, pts, rank) = (bs[0], bs[1], bs[2]);
                let cd = self.value(*coeffs).data();
                let bd = self.value(*basis).data();
                if self.requires(*coeffs) {
                    let mut dc = vec![0.0; batch * rank];
                    for bi in 0..batch {
                        let acc = &mut dc[bi * rank..(bi + 1) * rank];
                        for p in 0..pts {
                            let gv = g.data()[bi * pts + p];
                            let row = &bd[(bi * pts + p) * rank..(bi * pts + p + 1) * rank];
                            for (a, &bv) in acc.iter_mut().zip(row) {
                                *a = gv.mul_add(bv, *a);
                            }
                        }
                    }
                    self.accumulate(grads, *coeffs, Tensor::new(vec![batch, rank], dc)?);
                }
                if self.requires(*basis) {
                    let mut db = vec![0.0; batch * pts * rank];
                    for bi in 0..batch {
                        let crow = &cd[bi * rank..(bi + 1) * rank];
                        for p in 0..pts {
                            let gv = g.data()[bi * pts + p];
                            let row = &mut db[(bi * pts + p) * rank..(bi * pts + p + 1) * rank];
                            for (dv, &cv) in row.iter_mut().zip(crow) {
                                *dv = gv * cv;
                            }
                        }
                    }
                    self.accumulate(grads, *basis, Tensor::new(bs.to_vec(), db)?);
                }
            }
            Op::QuadLoss { pred, target, weight } => {
                let ps = self.value(*pred).shape();
                let batch = if ps.is_empty() { 1 } else { ps[0] };
                let c = 2.0 * weight / batch as f64 * g.item();
                let pd = self.value(*pred).data();
                let td = self.value(*target).data();
                if self.requires(*pred) {
                    let dp: Vec<f64> = pd.iter().zip(td).map(|(p, t)| c * (p - t)).collect();
                    self.accumulate(grads, *pred, Tensor::new(ps.to_vec(), dp)?);
                }
                if self.requires(*target) {
                    let dt: Vec<f64> = pd.iter().zip(td).map(|(p, t)| -c * (p - t)).collect();
                    self.accumulate(grads, *target, Tensor::new(ps.to_vec(), dt)?);
                }
            }
            Op::SumSquares { x } => {
                let c = 2.0 * g.item();
                let dx: Vec<f64> = self.value(*x).data().iter().map(|&v| c * v).collect();
                self.accumulate(grads, *x, Tensor::new(self.value(*x).shape().to_vec(), dx)?);
            }
        }
        Ok(())
    }
}

/// Gradients from one backward pass.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    by_param: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a tape variable (leaf inputs only survive the sweep).
    pub fn for_var(&self, id: VarId) -> Option<&Tensor> {
        self.by_node[id.0].as_ref()
    }

    /// Gradient for a store parameter; `None` if the parameter was not bound
    /// or did not influence the loss.
    pub fn for_param(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param[id.0].as_ref()
    }

    pub fn take_for_param(&mut self, id: ParamId) -> Option<Tensor> {
        self.by_param[id.0].take()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] = a[i * 4 + l].mul_add(b[i * 4 + l], acc[l]);
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// y[r, j] += sum_k x[r, k] w[k, j]; `y` is rows x n, `x` rows x m, `w` m x n.
/// The k loop is blocked by four so each y row is streamed once per block.
fn matmul_acc(y: &mut [f64], x: &[f64], w: &[f64], rows: usize, m: usize, n: usize) {
    for r in 0..rows {
        let yr = &mut y[r * n..(r + 1) * n];
        let xr = &x[r * m..(r + 1) * m];
        let mut k = 0;
        while k + 4 <= m {
            let (a0, a1, a2, a3) = (xr[k], xr[k + 1], xr[k + 2], xr[k + 3]);
            let w0 = &w[k * n..(k + 1) * n];
            let w1 = &w[(k + 1) * n..(k + 2) * n];
            let w2 = &w[(k + 2) * n..(k + 3) * n];
            let w3 = &w[(k + 3) * n..(k + 4) * n];
            for j in 0..n {
                let acc = a0.mul_add(w0[j], yr[j]);
                let acc = a1.mul_add(w1[j], acc);
                let acc = a2.mul_add(w2[j], acc);
                yr[j] = a3.mul_add(w3[j], acc);
            }
            k += 4;
        }
        while k < m {
            let a = xr[k];
            let wk = &w[k * n..(k + 1) * n];
            for (yv, &wv) in yr.iter_mut().zip(wk) {
                *yv = a.mul_add(wv, *yv);
            }
            k += 1;
        }
    }
}

/// Branchless exp for the activation hot loop: 2^k * e^r with |r| <= ln2/2
/// and a degree-10 Horner tail (absolute error ~1e-13 over the used range).
#[inline]
fn fast_exp(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_805_599_452_8e-1;
    let k = (x * LOG2E).round();
    let r = x - k * LN2_HI;
    let mut p: f64 = 1.0 / 3_628_800.0;
    for divisor in [362_880.0f64, 40_320.0, 5_040.0, 720.0, 120.0, 24.0, 6.0, 2.0, 1.0, 1.0] {
        p = p.mul_add(r, 1.0 / divisor);
    }
    let scale = f64::from_bits(((k as i64 + 1023) as u64) << 52);
    p * scale
}

/// tanh through the branchless exp; arguments are clamped where tanh is 1.0
/// to machine precision anyway.
#[inline]
pub(crate) fn fast_tanh(x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    let ax = x.abs().min(20.0);
    let e = fast_exp(2.0 * ax);
    let t = 1.0 - 2.0 / (e + 1.0);
    t.copysign(x)
}



// --- spectral mixing kernels -------------------------------------------------

/// Forward 1D spectral mixing. Returns the output field and the kept input
/// spectrum planes [batch, modes, c_in] needed by the weight gradient.
///
/// The channels-last layout makes each batch element's [n, c] block
/// contiguous, so the lane-parallel FFT runs without gathers; the mixing
/// phase iterates modes outermost so each mode's weight block stays
/// cache-resident across the batch.
#[allow(clippy::too_many_arguments)]
fn spectral_forward_1d(
    x: &[f64],
    w_re: &[f64],
    w_im: &[f64],
    plan: &FftPlan,
    batch: usize,
    n: usize,
    c_in: usize,
    c_out: usize,
    modes: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; batch * n * c_out];
    let mut xh_re = vec![0.0; batch * modes * c_in];
    let mut xh_im = vec![0.0; batch * modes * c_in];
    let mut yh_re = vec![0.0; batch * modes * c_out];
    let mut yh_im = vec![0.0; batch * modes * c_out];
    let mut re = vec![0.0; n * c_in.max(c_out)];
    let mut im = vec![0.0; n * c_in.max(c_out)];
    for b in 0..batch {
        re[..n * c_in].copy_from_slice(&x[b * n * c_in..(b + 1) * n * c_in]);
        im[..n * c_in].iter_mut().for_each(|v| *v = 0.0);
        plan.fft_lanes(&mut re[..n * c_in], &mut im[..n * c_in], c_in, false);
        xh_re[b * modes * c_in..(b + 1) * modes * c_in].copy_from_slice(&re[..modes * c_in]);
        xh_im[b * modes * c_in..(b + 1) * modes * c_in].copy_from_slice(&im[..modes * c_in]);
    }
    mix_batched(&xh_re, &xh_im, w_re, w_im, batch, modes, c_in, c_out, &mut yh_re, &mut yh_im);
    for b in 0..batch {
        // Hermitian synthesis: row 0 keeps only its real part.
        re[..n * c_out].iter_mut().for_each(|v| *v = 0.0);
        im[..n * c_out].iter_mut().for_each(|v| *v = 0.0);
        let y_re = &yh_re[b * modes * c_out..(b + 1) * modes * c_out];
        let y_im = &yh_im[b * modes * c_out..(b + 1) * modes * c_out];
        re[..c_out].copy_from_slice(&y_re[..c_out]);
        for k in 1..modes {
            for co in 0..c_out {
                re[k * c_out + co] = y_re[k * c_out + co];
                im[k * c_out + co] = y_im[k * c_out + co];
                re[(n - k) * c_out + co] = y_re[k * c_out + co];
                im[(n - k) * c_out + co] = -y_im[k * c_out + co];
            }
        }
        plan.fft_lanes(&mut re[..n * c_out], &mut im[..n * c_out], c_out, true);
        out[b * n * c_out..(b + 1) * n * c_out].copy_from_slice(&re[..n * c_out]);
    }
    (out, xh_re, xh_im)
}

/// y[b, k, co] = sum_ci x[b, k, ci] w[k, ci, co]. Per mode, the strided
/// batch rows are gathered into contiguous blocks and the complex product
/// runs as four small real matmuls against the cache-resident weight block.
#[allow(clippy::too_many_arguments)]
fn mix_batched(
    x_re: &[f64],
    x_im: &[f64],
    w_re: &[f64],
    w_im: &[f64],
    batch: usize,
    modes: usize,
    c_in: usize,
    c_out: usize,
    y_re: &mut [f64],
    y_im: &mut [f64],
) {
    y_re.iter_mut().for_each(|v| *v = 0.0);
    y_im.iter_mut().for_each(|v| *v = 0.0);
    let mut xr = vec![0.0; batch * c_in];
    let mut xi_neg = vec![0.0; batch * c_in];
    let mut xi = vec![0.0; batch * c_in];
    let mut yr = vec![0.0; batch * c_out];
    let mut yi = vec![0.0; batch * c_out];
    for k in 0..modes {
        for b in 0..batch {
            let src = (b * modes + k) * c_in;
            xr[b * c_in..(b + 1) * c_in].copy_from_slice(&x_re[src..src + c_in]);
            for (dst, &v) in xi[b * c_in..(b + 1) * c_in].iter_mut().zip(&x_im[src..src + c_in]) {
                *dst = v;
            }
        }
        for (n, &v) in xi_neg.iter_mut().zip(&xi) {
            *n = -v;
        }
        let wk = k * c_in * c_out;
        let wk_re = &w_re[wk..wk + c_in * c_out];
        let wk_im = &w_im[wk..wk + c_in * c_out];
        yr.iter_mut().for_each(|v| *v = 0.0);
        yi.iter_mut().for_each(|v| *v = 0.0);
        matmul_acc(&mut yr, &xr, wk_re, batch, c_in, c_out);
        matmul_acc(&mut yr, &xi_neg, wk_im, batch, c_in, c_out);
        matmul_acc(&mut yi, &xr, wk_im, batch, c_in, c_out);
        matmul_acc(&mut yi, &xi, wk_re, batch, c_in, c_out);
        for b in 0..batch {
            let dst = (b * modes + k) * c_out;
            y_re[dst..dst + c_out].copy_from_slice(&yr[b * c_out..(b + 1) * c_out]);
            y_im[dst..dst + c_out].copy_from_slice(&yi[b * c_out..(b + 1) * c_out]);
        }
    }
}

/// dw[ci, co] += sum_b x[b, ci] g[b, co], with the batch loop blocked by
/// four so each dw row streams once per block.
fn outer_acc(dw: &mut [f64], x: &[f64], g: &[f64], batch: usize, c_in: usize, c_out: usize) {
    let mut b = 0;
    while b + 4 <= batch {
        let g0 = &g[b * c_out..(b + 1) * c_out];
        let g1 = &g[(b + 1) * c_out..(b + 2) * c_out];
        let g2 = &g[(b + 2) * c_out..(b + 3) * c_out];
        let g3 = &g[(b + 3) * c_out..(b + 4) * c_out];
        for ci in 0..c_in {
            let a0 = x[b * c_in + ci];
            let a1 = x[(b + 1) * c_in + ci];
            let a2 = x[(b + 2) * c_in + ci];
            let a3 = x[(b + 3) * c_in + ci];
            let row = &mut dw[ci * c_out..(ci + 1) * c_out];
            for j in 0..c_out {
                let acc = a0.mul_add(g0[j], row[j]);
                let acc = a1.mul_add(g1[j], acc);
                let acc = a2.mul_add(g2[j], acc);
                row[j] = a3.mul_add(g3[j], acc);
            }
        }
        b += 4;
    }
    while b < batch {
        let gb = &g[b * c_out..(b + 1) * c_out];
        for ci in 0..c_in {
            let a = x[b * c_in + ci];
            let row = &mut dw[ci * c_out..(ci + 1) * c_out];
            for (rv, &gv) in row.iter_mut().zip(gb) {
                *rv = a.mul_add(gv, *rv);
            }
        }
        b += 1;
    }
}

/// Adjoint of `mix_batched`: g_x = g_y conj(w) (four matmuls against the
/// transposed weight block) and dw += g_y conj(x) (four outer products),
/// per mode with gathered batch blocks.
#[allow(clippy::too_many_arguments)]
fn mix_batched_adjoint(
    g_re: &[f64],
    g_im: &[f64],
    x_re: &[f64],
    x_im: &[f64],
    w_re: &[f64],
    w_im: &[f64],
    batch: usize,
    modes: usize,
    c_in: usize,
    c_out: usize,
    gx_re: &mut [f64],
    gx_im: &mut [f64],
    dw_re: &mut [f64],
    dw_im: &mut [f64],
) {
    let mut gr = vec![0.0; batch * c_out];
    let mut gi = vec![0.0; batch * c_out];
    let mut gi_neg = vec![0.0; batch * c_out];
    let mut xr = vec![0.0; batch * c_in];
    let mut xi = vec![0.0; batch * c_in];
    let mut xi_neg = vec![0.0; batch * c_in];
    let mut out_re = vec![0.0; batch * c_in];
    let mut out_im = vec![0.0; batch * c_in];
    let mut wt_re = vec![0.0; c_in * c_out];
    let mut wt_im = vec![0.0; c_in * c_out];
    let mut wt_im_neg = vec![0.0; c_in * c_out];
    for k in 0..modes {
        for b in 0..batch {
            let gsrc = (b * modes + k) * c_out;
            gr[b * c_out..(b + 1) * c_out].copy_from_slice(&g_re[gsrc..gsrc + c_out]);
            gi[b * c_out..(b + 1) * c_out].copy_from_slice(&g_im[gsrc..gsrc + c_out]);
            let xsrc = (b * modes + k) * c_in;
            xr[b * c_in..(b + 1) * c_in].copy_from_slice(&x_re[xsrc..xsrc + c_in]);
            xi[b * c_in..(b + 1) * c_in].copy_from_slice(&x_im[xsrc..xsrc + c_in]);
        }
        for (n, &v) in gi_neg.iter_mut().zip(&gi) {
            *n = -v;
        }
        for (n, &v) in xi_neg.iter_mut().zip(&xi) {
            *n = -v;
        }
        let wk = k * c_in * c_out;
        for ci in 0..c_in {
            for co in 0..c_out {
                wt_re[co * c_in + ci] = w_re[wk + ci * c_out + co];
                wt_im[co * c_in + ci] = w_im[wk + ci * c_out + co];
                wt_im_neg[co * c_in + ci] = -w_im[wk + ci * c_out + co];
            }
        }
        // g_x = g_y conj(W): re = gr W_re^T + gi W_im^T, im = gi W_re^T - gr W_im^T.
        out_re.iter_mut().for_each(|v| *v = 0.0);
        out_im.iter_mut().for_each(|v| *v = 0.0);
        matmul_acc(&mut out_re, &gr, &wt_re, batch, c_out, c_in);
        matmul_acc(&mut out_re, &gi, &wt_im, batch, c_out, c_in);
        matmul_acc(&mut out_im, &gi, &wt_re, batch, c_out, c_in);
        matmul_acc(&mut out_im, &gr, &wt_im_neg, batch, c_out, c_in);
        for b in 0..batch {
            let dst = (b * modes + k) * c_in;
            gx_re[dst..dst + c_in].copy_from_slice(&out_re[b * c_in..(b + 1) * c_in]);
            gx_im[dst..dst + c_in].copy_from_slice(&out_im[b * c_in..(b + 1) * c_in]);
        }
        // dw += conj(x)^T g_y: re += xr^T gr + xi^T gi, im += xr^T gi - xi^T gr.
        let dk_re = &mut dw_re[wk..wk + c_in * c_out];
        let dk_im = &mut dw_im[wk..wk + c_in * c_out];
        outer_acc(dk_re, &xr, &gr, batch, c_in, c_out);
        outer_acc(dk_re, &xi, &gi, batch, c_in, c_out);
        outer_acc(dk_im, &xr, &gi, batch, c_in, c_out);
        outer_acc(dk_im, &xi_neg, &gr, batch, c_in, c_out);
    }
}

#[allow(clippy::too_many_arguments)]
fn spectral_backward_1d(
    g: &[f64],
    xh_re: &[f64],
    xh_im: &[f64],
    w_re: &[f64],
    w_im: &[f64],
    plan: &FftPlan,
    batch: usize,
    n: usize,
    c_in: usize,
    c_out: usize,
    modes: usize,
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; if need_dx { batch * n * c_in } else { 0 }];
    let mut dw_re = vec![0.0; modes * c_in * c_out];
    let mut dw_im = vec![0.0; modes * c_in * c_out];
    let mut gy_re = vec![0.0; batch * modes * c_out];
    let mut gy_im = vec![0.0; batch * modes * c_out];
    let mut gx_re = vec![0.0; batch * modes * c_in];
    let mut gx_im = vec![0.0; batch * modes * c_in];
    let mut re = vec![0.0; n * c_in.max(c_out)];
    let mut im = vec![0.0; n * c_in.max(c_out)];
    // Adjoint of synthesis: G_Y[k] = c_k FFT(g)[k], c_0 = 1/n, c_k = 2/n
    // (row 0 keeps only its real part).
    for b in 0..batch {
        re[..n * c_out].copy_from_slice(&g[b * n * c_out..(b + 1) * n * c_out]);
        im[..n * c_out].iter_mut().for_each(|v| *v = 0.0);
        plan.fft_lanes(&mut re[..n * c_out], &mut im[..n * c_out], c_out, false);
        let base = b * modes * c_out;
        let inv = 1.0 / n as f64;
        let two_inv = 2.0 / n as f64;
        for co in 0..c_out {
            gy_re[base + co] = re[co] * inv;
            gy_im[base + co] = 0.0;
        }
        for k in 1..modes {
            for co in 0..c_out {
                gy_re[base + k * c_out + co] = re[k * c_out + co] * two_inv;
                gy_im[base + k * c_out + co] = im[k * c_out + co] * two_inv;
            }
        }
    }
    mix_batched_adjoint(
        &gy_re, &gy_im, xh_re, xh_im, w_re, w_im, batch, modes, c_in, c_out, &mut gx_re,
        &mut gx_im, &mut dw_re, &mut dw_im,
    );
    // Adjoint of analysis: dx = n * Re(IFFT(G_X padded)).
    if need_dx {
        for b in 0..batch {
            re[..n * c_in].iter_mut().for_each(|v| *v = 0.0);
            im[..n * c_in].iter_mut().for_each(|v| *v = 0.0);
            let base = b * modes * c_in;
            re[..modes * c_in].copy_from_slice(&gx_re[base..base + modes * c_in]);
            im[..modes * c_in].copy_from_slice(&gx_im[base..base + modes * c_in]);
            plan.fft_lanes(&mut re[..n * c_in], &mut im[..n * c_in], c_in, true);
            let dst = &mut dx[b * n * c_in..(b + 1) * n * c_in];
            for (d, &r) in dst.iter_mut().zip(&re[..n * c_in]) {
                *d = r * n as f64;
            }
        }
    }
    (dx, dw_re, dw_im)
}

/// Kept ky rows for the 2D mixing: lowest `modes` nonnegative and negative
/// frequencies.
fn kept_rows(ny: usize, modes: usize) -> Vec<usize> {
    (0..modes).chain(ny - modes..ny).collect()
}

#[allow(clippy::too_many_arguments)]
fn spectral_forward_2d(
    x: &[f64],
    w_re: &[f64],
    w_im: &[f64],
    plan: &Fft2Plan,
    batch: usize,
    c_in: usize,
    c_out: usize,
    modes: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ny, nx) = plan.shape();
    let rows = kept_rows(ny, modes);
    let kr = rows.len();
    let mut out = vec![0.0; batch * ny * nx * c_out];
    let mut xh_re = vec![0.0; batch * kr * modes * c_in];
    let mut xh_im = vec![0.0; batch * kr * modes * c_in];
    let mut yh_re = vec![0.0; batch * kr * modes * c_out];
    let mut yh_im = vec![0.0; batch * kr * modes * c_out];
    let mut row_re = vec![0.0; nx * c_in.max(c_out)];
    let mut row_im = vec![0.0; nx * c_in.max(c_out)];
    let mut part_re = vec![0.0; ny * modes * c_in.max(c_out)];
    let mut part_im = vec![0.0; ny * modes * c_in.max(c_out)];
    for b in 0..batch {
        // Analysis: x-rows then one lane-parallel y transform.
        let kc = modes * c_in;
        for y in 0..ny {
            let src = &x[((b * ny + y) * nx) * c_in..((b * ny + y + 1) * nx) * c_in];
            row_re[..nx * c_in].copy_from_slice(src);
            row_im[..nx * c_in].iter_mut().for_each(|v| *v = 0.0);
            plan.px.fft_lanes(&mut row_re[..nx * c_in], &mut row_im[..nx * c_in], c_in, false);
            part_re[y * kc..(y + 1) * kc].copy_from_slice(&row_re[..kc]);
            part_im[y * kc..(y + 1) * kc].copy_from_slice(&row_im[..kc]);
        }
        plan.py.fft_lanes(&mut part_re[..ny * kc], &mut part_im[..ny * kc], kc, false);
        let base = b * kr * modes * c_in;
        for (ri, &ky) in rows.iter().enumerate() {
            xh_re[base + ri * kc..base + (ri + 1) * kc]
                .copy_from_slice(&part_re[ky * kc..(ky + 1) * kc]);
            xh_im[base + ri * kc..base + (ri + 1) * kc]
                .copy_from_slice(&part_im[ky * kc..(ky + 1) * kc]);
        }
    }
    mix_batched(&xh_re, &xh_im, w_re, w_im, batch, kr * modes, c_in, c_out, &mut yh_re, &mut yh_im);
    for b in 0..batch {
        // Synthesis: scatter kept rows, inverse y transform, then x rows.
        let kc_out = modes * c_out;
        let base = b * kr * modes * c_out;
        part_re[..ny * kc_out].iter_mut().for_each(|v| *v = 0.0);
        part_im[..ny * kc_out].iter_mut().for_each(|v| *v = 0.0);
        for (ri, &ky) in rows.iter().enumerate() {
            part_re[ky * kc_out..(ky + 1) * kc_out]
                .copy_from_slice(&yh_re[base + ri * kc_out..base + (ri + 1) * kc_out]);
            part_im[ky * kc_out..(ky + 1) * kc_out]
                .copy_from_slice(&yh_im[base + ri * kc_out..base + (ri + 1) * kc_out]);
        }
        plan.py.fft_lanes(&mut part_re[..ny * kc_out], &mut part_im[..ny * kc_out], kc_out, true);
        for y in 0..ny {
            row_re[..nx * c_out].iter_mut().for_each(|v| *v = 0.0);
            row_im[..nx * c_out].iter_mut().for_each(|v| *v = 0.0);
            // kx = 0 keeps only its real part.
            for co in 0..c_out {
                row_re[co] = part_re[(y * modes) * c_out + co];
            }
            for kx in 1..modes {
                for co in 0..c_out {
                    let r = part_re[(y * modes + kx) * c_out + co];
                    let i = part_im[(y * modes + kx) * c_out + co];
                    row_re[kx * c_out + co] = r;
                    row_im[kx * c_out + co] = i;
                    row_re[(nx - kx) * c_out + co] = r;
                    row_im[(nx - kx) * c_out + co] = -i;
                }
            }
            plan.px.fft_lanes(&mut row_re[..nx * c_out], &mut row_im[..nx * c_out], c_out, true);
            out[((b * ny + y) * nx) * c_out..((b * ny + y + 1) * nx) * c_out]
                .copy_from_slice(&row_re[..nx * c_out]);
        }
    }
    (out, xh_re, xh_im)
}

#[allow(clippy::too_many_arguments)]
fn spectral_backward_2d(
    g: &[f64],
    xh_re: &[f64],
    xh_im: &[f64],
    w_re: &[f64],
    w_im: &[f64],
    plan: &Fft2Plan,
    batch: usize,
    c_in: usize,
    c_out: usize,
    modes: usize,
    need_dx: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ny, nx) = plan.shape();
    let rows = kept_rows(ny, modes);
    let kr = rows.len();
    let mut dx = vec![0.0; if need_dx { batch * ny * nx * c_in } else { 0 }];
    let mut dw_re = vec![0.0; kr * modes * c_in * c_out];
    let mut dw_im = vec![0.0; kr * modes * c_in * c_out];
    let mut gy_re = vec![0.0; batch * kr * modes * c_out];
    let mut gy_im = vec![0.0; batch * kr * modes * c_out];
    let mut gx_re = vec![0.0; batch * kr * modes * c_in];
    let mut gx_im = vec![0.0; batch * kr * modes * c_in];
    let mut row_re = vec![0.0; nx * c_in.max(c_out)];
    let mut row_im = vec![0.0; nx * c_in.max(c_out)];
    let mut part_re = vec![0.0; ny * modes * c_in.max(c_out)];
    let mut part_im = vec![0.0; ny * modes * c_in.max(c_out)];
    // Adjoint of synthesis: x-row forward transforms with half-spectrum
    // scaling, then a y forward transform scaled by 1/ny.
    for b in 0..batch {
        let kc_out = modes * c_out;
        for y in 0..ny {
            let src = &g[((b * ny + y) * nx) * c_out..((b * ny + y + 1) * nx) * c_out];
            row_re[..nx * c_out].copy_from_slice(src);
            row_im[..nx * c_out].iter_mut().for_each(|v| *v = 0.0);
            plan.px.fft_lanes(&mut row_re[..nx * c_out], &mut row_im[..nx * c_out], c_out, false);
            let inv = 1.0 / nx as f64;
            let two_inv = 2.0 / nx as f64;
            for co in 0..c_out {
                part_re[(y * modes) * c_out + co] = row_re[co] * inv;
                part_im[(y * modes) * c_out + co] = 0.0;
            }
            for kx in 1..modes {
                for co in 0..c_out {
                    part_re[(y * modes + kx) * c_out + co] = row_re[kx * c_out + co] * two_inv;
                    part_im[(y * modes + kx) * c_out + co] = row_im[kx * c_out + co] * two_inv;
                }
            }
        }
        plan.py.fft_lanes(&mut part_re[..ny * kc_out], &mut part_im[..ny * kc_out], kc_out, false);
        let inv_ny = 1.0 / ny as f64;
        let base = b * kr * modes * c_out;
        for (ri, &ky) in rows.iter().enumerate() {
            for i in 0..kc_out {
                gy_re[base + ri * kc_out + i] = part_re[ky * kc_out + i] * inv_ny;
                gy_im[base + ri * kc_out + i] = part_im[ky * kc_out + i] * inv_ny;
            }
        }
    }
    mix_batched_adjoint(
        &gy_re,
        &gy_im,
        xh_re,
        xh_im,
        w_re,
        w_im,
        batch,
        kr * modes,
        c_in,
        c_out,
        &mut gx_re,
        &mut gx_im,
        &mut dw_re,
        &mut dw_im,
    );
    // Adjoint of analysis: dx = ny*nx * Re(IFFT2(G_X padded)).
    if need_dx {
        let kc_in = modes * c_in;
        for b in 0..batch {
            part_re[..ny * kc_in].iter_mut().for_each(|v| *v = 0.0);
            part_im[..ny * kc_in].iter_mut().for_each(|v| *v = 0.0);
            let base = b * kr * modes * c_in;
            for (ri, &ky) in rows.iter().enumerate() {
                part_re[ky * kc_in..(ky + 1) * kc_in]
                    .copy_from_slice(&gx_re[base + ri * kc_in..base + (ri + 1) * kc_in]);
                part_im[ky * kc_in..(ky + 1) * kc_in]
                    .copy_from_slice(&gx_im[base + ri * kc_in..base + (ri + 1) * kc_in]);
            }
            plan.py.fft_lanes(&mut part_re[..ny * kc_in], &mut part_im[..ny * kc_in], kc_in, true);
            let scale = (ny * nx) as f64;
            for y in 0..ny {
                row_re[..nx * c_in].iter_mut().for_each(|v| *v = 0.0);
                row_im[..nx * c_in].iter_mut().for_each(|v| *v = 0.0);
                row_re[..kc_in].copy_from_slice(&part_re[y * kc_in..(y + 1) * kc_in]);
                row_im[..kc_in].copy_from_slice(&part_im[y * kc_in..(y + 1) * kc_in]);
                plan.px.fft_lanes(&mut row_re[..nx * c_in], &mut row_im[..nx * c_in], c_in, true);
                let dst = &mut dx[((b * ny + y) * nx) * c_in..((b * ny + y + 1) * nx) * c_in];
                for (d, &r) in dst.iter_mut().zip(&row_re[..nx * c_in]) {
                    *d = r * scale;
                }
            }
        }
    }
    (dx, dw_re, dw_im)
}
