//! Stochastic Darcy flow pieces: binary permeability fields from a
//! thresholded DCT-II Gaussian random field, mixture source terms from RBF
//! Gaussian random fields, and a finite-volume conjugate-gradient solver for
//! `-div(a grad u) = f` with homogeneous Dirichlet boundaries.

use crate::error::{CoreError, Result};
use crate::fft::Fft2Plan;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub const PERM_HIGH: f64 = 12.0;
pub const PERM_LOW: f64 = 3.0;

/// RBF Gaussian random field family: covariance exp(-|x-y|^2 / (2 ell^2))
/// with unit marginal variance; `sigma` scales the field's contribution in
/// the source mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GrfSpec {
    pub sigma: f64,
    pub ell: f64,
    pub jitter: f64,
}

impl GrfSpec {
    pub fn new(sigma: f64, ell: f64) -> Result<Self> {
        if sigma <= 0.0 || ell <= 0.0 {
            return Err(CoreError::config("GRF sigma and ell must be positive"));
        }
        Ok(GrfSpec { sigma, ell, jitter: 1e-5 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig { tolerance: 1e-6, max_iterations: 5000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub converged: bool,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Mean-zero GRF with power-spectrum decay (1 + |k|^2)^-2 in the DCT-II
/// basis, evaluated on an n x n grid.
pub fn dct2_grf(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    // Separable synthesis: g = Phi C Phi^T with Phi[i,k] = cos(pi k (i+1/2)/n).
    let mut coeff = vec![0.0; n * n];
    for ky in 0..n {
        for kx in 0..n {
            let k2 = (kx * kx + ky * ky) as f64;
            let std = 1.0 / (1.0 + k2);
            coeff[ky * n + kx] = std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let phi: Vec<f64> = (0..n * n)
        .map(|idx| {
            let (i, k) = (idx / n, idx % n);
            (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos()
        })
        .collect();
    // tmp = C Phi^T  (tmp[ky, i] = sum_kx coeff[ky,kx] * phi[i,kx])
    let mut tmp = vec![0.0; n * n];
    for ky in 0..n {
        for i in 0..n {
            let mut s = 0.0;
            for kx in 0..n {
                s += coeff[ky * n + kx] * phi[i * n + kx];
            }
            tmp[ky * n + i] = s;
        }
    }
    let mut g = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let mut s = 0.0;
            for ky in 0..n {
                s += phi[j * n + ky] * tmp[ky * n + i];
            }
            g[j * n + i] = s;
        }
    }
    g
}

/// Thresholds a latent field at zero: positive -> 12, nonpositive -> 3.
pub fn threshold_permeability(latent: &[f64]) -> Vec<f64> {
    latent.iter().map(|&v| if v > 0.0 { PERM_HIGH } else { PERM_LOW }).collect()
}

/// Binary permeability sample on an n x n grid.
pub fn sample_permeability(n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if n < 8 {
        return Err(CoreError::config("permeability grid must have n >= 8"));
    }
    Ok(threshold_permeability(&dct2_grf(n, rng)))
}

/// Stationary unit-variance RBF sampler on the unit square, realized by
/// circulant embedding on a 4x padded torus.
pub struct RbfSampler {
    n: usize,
    m: usize,
    sqrt_eig: Vec<f64>,
    plan: std::sync::Arc<Fft2Plan>,
}

impl RbfSampler {
    pub fn new(n: usize, spec: &GrfSpec) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(CoreError::config("RBF sampler grid must be a power of two"));
        }
        let m = 4 * n;
        let plan = Fft2Plan::new(m, m)?;
        let h = 1.0 / n as f64;
        let len = m as f64 * h;
        // First covariance row of the wrapped (periodized) kernel, which is
        // positive definite on the torus; the plain kernel at torus distance
        // has a kink at the antipode and small negative eigenvalues.
        let wrapped = |d: f64| -> f64 {
            let mut c = 0.0;
            for img in -2..=2 {
                let dd = d + img as f64 * len;
                c += (-dd * dd / (2.0 * spec.ell * spec.ell)).exp();
            }
            c
        };
        let mut row = vec![Complex64::default(); m * m];
        for iy in 0..m {
            for ix in 0..m {
                let cy = wrapped(iy as f64 * h);
                let cx = wrapped(ix as f64 * h);
                row[iy * m + ix] = Complex64::new(cx * cy, 0.0);
            }
        }
        row[0] += spec.jitter;
        plan.fft2(&mut row);
        let mut sqrt_eig = Vec::with_capacity(m * m);
        for v in &row {
            let lam = v.re;
            if lam < -1e-8 * (m * m) as f64 {
                return Err(CoreError::numerics(format!(
                    "circulant embedding not positive semidefinite for ell={} (eigenvalue {lam})",
                    spec.ell
                )));
            }
            sqrt_eig.push(lam.max(0.0).sqrt());
        }
        Ok(RbfSampler { n, m, sqrt_eig, plan })
    }

    /// One unit-variance field on the n x n grid.
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let m = self.m;
        let mut z: Vec<Complex64> =
            (0..m * m).map(|_| Complex64::new(rng.sample::<f64, _>(StandardNormal), 0.0)).collect();
        self.plan.fft2(&mut z);
        for (v, &s) in z.iter_mut().zip(&self.sqrt_eig) {
            *v *= s;
        }
        self.plan.ifft2(&mut z);
        let mut out = vec![0.0; self.n * self.n];
        for iy in 0..self.n {
            for ix in 0..self.n {
                out[iy * self.n + ix] = z[iy * m + ix].re;
            }
        }
        out
    }
}


/// Source mixture f = lambda sigma_ln exp(G_ln) + (1 - lambda) sigma_gp G_gp.
pub fn mix_source(g_ln: &[f64], g_gp: &[f64], lambda: f64, sigma_ln: f64, sigma_gp: f64) -> Vec<f64> {
    g_ln.iter()
        .zip(g_gp)
        .map(|(&a, &b)| lambda * sigma_ln * a.exp() + (1.0 - lambda) * sigma_gp * b)
        .collect()
}

/// Draws one source field; the two GRFs are drawn independently from `rng`
/// in a fixed order.
pub fn sample_source(
    ln_sampler: &RbfSampler,
    gp_sampler: &RbfSampler,
    lambda: f64,
    sigma_ln: f64,
    sigma_gp: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CoreError::config("source mixture lambda must lie in [0, 1]"));
    }
    let g_ln = ln_sampler.sample(rng);
    let g_gp = gp_sampler.sample(rng);
    Ok(mix_source(&g_ln, &g_gp, lambda, sigma_ln, sigma_gp))
}

/// Applies the 5-point finite-volume operator with harmonic-mean face
/// coefficients on the nodal n x n grid (boundary ring fixed at zero).
/// `v` and `out` are full n x n arrays; boundary entries of `out` are zero.
pub fn apply_darcy_operator(n: usize, a: &[f64], v: &[f64], out: &mut [f64]) {
    let h = 1.0 / (n - 1) as f64;
    let inv_h2 = 1.0 / (h * h);
    out.iter_mut().for_each(|o| *o = 0.0);
    let harm = |x: f64, y: f64| 2.0 * x * y / (x + y);
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            let idx = i * n + j;
            let ae = harm(a[idx], a[idx + 1]);
            let aw = harm(a[idx], a[idx - 1]);
            let an = harm(a[idx], a[idx + n]);
            let as_ = harm(a[idx], a[idx - n]);
            let east = if j + 1 < n - 1 { v[idx + 1] } else { 0.0 };
            let west = if j > 1 { v[idx - 1] } else { 0.0 };
            let north = if i + 1 < n - 1 { v[idx + n] } else { 0.0 };
            let south = if i > 1 { v[idx - n] } else { 0.0 };
            out[idx] = inv_h2
                * (ae * (v[idx] - east)
                    + aw * (v[idx] - west)
                    + an * (v[idx] - north)
                    + as_ * (v[idx] - south));
        }
    }
}

fn interior_dot(n: usize, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            s += a[i * n + j] * b[i * n + j];
        }
    }
    s
}

/// Conjugate gradients from a zero start until the relative residual meets
/// `cfg.tolerance` or iterations run out; returns the best iterate either
/// way with the convergence flag in the outcome. `observer` sees each CG
/// iterate (including the start).
pub fn solve_darcy_observed(
    a: &[f64],
    f: &[f64],
    cfg: &CgConfig,
    mut observer: impl FnMut(&[f64]),
) -> Result<(Vec<f64>, CgOutcome)> {
    let n = (a.len() as f64).sqrt().round() as usize;
    if n * n != a.len() || f.len() != a.len() {
        return Err(CoreError::usage("solve_darcy: a and f must be square fields of equal size"));
    }
    if a.iter().any(|&v| v != PERM_HIGH && v != PERM_LOW) {
        return Err(CoreError::usage("solve_darcy: permeability must be two-level {12, 3}"));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::numerics("solve_darcy: source contains non-finite entries"));
    }
    let mut x = vec![0.0; n * n];
    // b = f on the interior, zero boundary.
    let mut b = vec![0.0; n * n];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            b[i * n + j] = f[i * n + j];
        }
    }
    let b_norm = interior_dot(n, &b, &b).sqrt();
    observer(&x);
    if b_norm == 0.0 {
        return Ok((x, CgOutcome { converged: true, iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; n * n];
    let mut rr = interior_dot(n, &r, &r);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        apply_darcy_operator(n, a, &p, &mut ap);
        let pap = interior_dot(n, &p, &ap);
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        observer(&x);
        let rr_new = interior_dot(n, &r, &r);
        if rr_new.sqrt() / b_norm <= cfg.tolerance {
            rr = rr_new;
            converged = true;
            break;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok((x, CgOutcome { converged, iterations, relative_residual: rr.sqrt() / b_norm }))
}

pub fn solve_darcy(a: &[f64], f: &[f64], cfg: &CgConfig) -> Result<(Vec<f64>, CgOutcome)> {
    solve_darcy_observed(a, f, cfg, |_| {})
}
