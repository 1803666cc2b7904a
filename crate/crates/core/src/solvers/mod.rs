//! Pseudo-spectral exponential-integrator solvers for the benchmark systems.

pub mod burgers;
pub mod etdrk;
pub mod init;
pub mod kolmogorov;
pub mod ks;

use crate::error::{CoreError, Result};
use crate::fft::FftPlan;
use crate::grid::Grid1d;
use num_complex::Complex64;
use std::sync::Arc;

/// 2/3-rule dealias mask over mode indices: 1 for |k| <= n/3, else 0.
pub fn dealias_mask_1d(n: usize) -> Vec<f64> {
    let cut = n / 3;
    (0..n)
        .map(|i| {
            let k = if i <= n / 2 { i } else { n - i };
            if k <= cut {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Shared quadratic term for Burgers and KS: `-1/2 d/dx (u^2)`, evaluated
/// pseudo-spectrally with 2/3 dealiasing of the product.
pub(crate) struct Quadratic1d {
    plan: Arc<FftPlan>,
    k_odd: Vec<f64>,
    mask: Vec<f64>,
    phys: Vec<Complex64>,
}

impl Quadratic1d {
    pub fn new(grid: &Grid1d) -> Result<Self> {
        Ok(Quadratic1d {
            plan: FftPlan::new(grid.n)?,
            k_odd: grid.wavenumbers_odd(),
            mask: dealias_mask_1d(grid.n),
            phys: vec![Complex64::default(); grid.n],
        })
    }

    pub fn plan(&self) -> &Arc<FftPlan> {
        &self.plan
    }

    /// out = -1/2 i k * dealias(FFT(IFFT(u_hat)^2))
    pub fn eval(&mut self, u_hat: &[Complex64], out: &mut [Complex64]) {
        let n = u_hat.len();
        self.phys.copy_from_slice(u_hat);
        self.plan.ifft(&mut self.phys);
        for v in self.phys.iter_mut() {
            let u = v.re;
            *v = Complex64::new(u * u, 0.0);
        }
        self.plan.fft(&mut self.phys);
        for k in 0..n {
            let w = self.phys[k] * self.mask[k];
            out[k] = Complex64::new(0.0, -0.5 * self.k_odd[k]) * w;
        }
    }
}

/// Aborts with the offending substep index when the spectral state leaves
/// the finite range.
pub(crate) fn ensure_finite(state: &[Complex64], substep: usize) -> Result<()> {
    if state.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(CoreError::numerics(format!(
            "non-finite solver state at substep {substep}"
        )));
    }
    Ok(())
}
