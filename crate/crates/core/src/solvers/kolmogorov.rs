//! 2D incompressible Navier-Stokes in vorticity form on the periodic square
//! `(0, 2*pi)^2` with single-mode Kolmogorov forcing and linear drag:
//! `w_t + u . grad w = nu Lap w - alpha w + F`, `Lap psi = w`,
//! `u = grad^perp psi = (-psi_y, psi_x)`.

use crate::error::Result;
use crate::fft::Fft2Plan;
use crate::grid::Grid2d;
use crate::solvers::ensure_finite;
use crate::solvers::etdrk::{EtdrkScratch, EtdrkTable};
use num_complex::Complex64;
use std::sync::Arc;

pub struct KolmogorovFlow {
    pub grid: Grid2d,
    pub nu: f64,
    pub alpha: f64,
    pub forcing_mode: usize,
    pub forcing_amp: f64,
    pub substep: f64,
    pub substeps_per_macro: usize,
    plan: Arc<Fft2Plan>,
    table: EtdrkTable,
    /// First-derivative wavenumbers per flat mode index (Nyquist zeroed).
    kx: Vec<f64>,
    ky: Vec<f64>,
    /// 1/|k|^2 with the zero mode set to 0.
    inv_k2: Vec<f64>,
    dealias: Vec<f64>,
    forcing_hat: Vec<Complex64>,
    scratch: EtdrkScratch,
    work: Vec<Vec<Complex64>>,
}

impl KolmogorovFlow {
    pub fn new(
        grid: Grid2d,
        nu: f64,
        alpha: f64,
        forcing_mode: usize,
        forcing_amp: f64,
        substep: f64,
        substeps_per_macro: usize,
    ) -> Result<Self> {
        let n = grid.n;
        let plan = Fft2Plan::new(n, n)?;
        let axis = grid.axis();
        let k1_odd = axis.wavenumbers_odd();
        let k1 = axis.wavenumbers();
        let mask1 = crate::solvers::dealias_mask_1d(n);
        let mut kx = vec![0.0; n * n];
        let mut ky = vec![0.0; n * n];
        let mut inv_k2 = vec![0.0; n * n];
        let mut dealias = vec![0.0; n * n];
        let mut linear = vec![Complex64::default(); n * n];
        for iy in 0..n {
            for ix in 0..n {
                let idx = iy * n + ix;
                kx[idx] = k1_odd[ix];
                ky[idx] = k1_odd[iy];
                let k2 = k1[ix] * k1[ix] + k1[iy] * k1[iy];
                inv_k2[idx] = if k2 > 0.0 { 1.0 / k2 } else { 0.0 };
                dealias[idx] = mask1[ix] * mask1[iy];
                linear[idx] = Complex64::new(-nu * k2 - alpha, 0.0);
            }
        }
        let table = EtdrkTable::build(&linear, substep, 2)?;
        // F = amp * sin(m y): spectral weight -+ i amp n^2/2 at ky = +-m, kx = 0.
        let mut forcing_hat = vec![Complex64::default(); n * n];
        if forcing_amp != 0.0 && forcing_mode > 0 && forcing_mode < n / 2 {
            let w = forcing_amp * (n * n) as f64 / 2.0;
            forcing_hat[forcing_mode * n] = Complex64::new(0.0, -w);
            forcing_hat[(n - forcing_mode) * n] = Complex64::new(0.0, w);
        }
        let work = (0..5).map(|_| vec![Complex64::default(); n * n]).collect();
        Ok(KolmogorovFlow {
            grid,
            nu,
            alpha,
            forcing_mode,
            forcing_amp,
            substep,
            substeps_per_macro,
            plan,
            table,
            kx,
            ky,
            inv_k2,
            dealias,
            forcing_hat,
            scratch: EtdrkScratch::new(),
            work,
        })
    }

    pub fn to_spectral(&self, w: &[f64]) -> Vec<Complex64> {
        self.plan.forward_real(w)
    }

    pub fn to_physical(&self, w_hat: &[Complex64]) -> Vec<f64> {
        self.plan.inverse_real(w_hat)
    }

    /// Stream function of a vorticity field: `Lap psi = w` with zero-mean psi.
    pub fn streamfunction_hat(&self, w_hat: &[Complex64]) -> Vec<Complex64> {
        w_hat.iter().zip(&self.inv_k2).map(|(&w, &inv)| -w * inv).collect()
    }

    /// Velocity (u, v) = (-psi_y, psi_x) in physical space.
    pub fn velocity(&self, w_hat: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let psi = self.streamfunction_hat(w_hat);
        let m = psi.len();
        let mut u_hat = vec![Complex64::default(); m];
        let mut v_hat = vec![Complex64::default(); m];
        for i in 0..m {
            u_hat[i] = Complex64::new(0.0, -self.ky[i]) * psi[i];
            v_hat[i] = Complex64::new(0.0, self.kx[i]) * psi[i];
        }
        (self.plan.inverse_real(&u_hat), self.plan.inverse_real(&v_hat))
    }

    /// One output step (`substeps_per_macro` ETDRK2 substeps).
    pub fn macro_step(&mut self, w_hat: &mut [Complex64]) -> Result<()> {
        let Self {
            plan, table, kx, ky, inv_k2, dealias, forcing_hat, scratch, work, substeps_per_macro, ..
        } = self;
        for s in 0..*substeps_per_macro {
            table.step(w_hat, 0.0, scratch, &mut |state, _t, out| {
                advection_forcing(plan, kx, ky, inv_k2, dealias, forcing_hat, work, state, out);
            });
            ensure_finite(w_hat, s)?;
        }
        Ok(())
    }
}

/// Advection + forcing term `-(u . grad w) + F` with dealiased products.
#[allow(clippy::too_many_arguments)]
fn advection_forcing(
    plan: &Fft2Plan,
    kx: &[f64],
    ky: &[f64],
    inv_k2: &[f64],
    dealias: &[f64],
    forcing_hat: &[Complex64],
    work: &mut [Vec<Complex64>],
    w_hat: &[Complex64],
    out: &mut [Complex64],
) {
    let m = w_hat.len();
    let [u_buf, v_buf, wx_buf, wy_buf, adv] = match work {
        [a, b, c, d, e] => [a, b, c, d, e],
        _ => unreachable!(),
    };
    for i in 0..m {
        let psi = -w_hat[i] * inv_k2[i];
        u_buf[i] = Complex64::new(0.0, -ky[i]) * psi;
        v_buf[i] = Complex64::new(0.0, kx[i]) * psi;
        wx_buf[i] = Complex64::new(0.0, kx[i]) * w_hat[i];
        wy_buf[i] = Complex64::new(0.0, ky[i]) * w_hat[i];
    }
    plan.ifft2(u_buf);
    plan.ifft2(v_buf);
    plan.ifft2(wx_buf);
    plan.ifft2(wy_buf);
    for i in 0..m {
        adv[i] = Complex64::new(u_buf[i].re * wx_buf[i].re + v_buf[i].re * wy_buf[i].re, 0.0);
    }
    plan.fft2(adv);
    for i in 0..m {
        out[i] = -adv[i] * dealias[i] + forcing_hat[i];
    }
}
