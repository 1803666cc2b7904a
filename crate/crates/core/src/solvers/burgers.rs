//! Stochastic viscous Burgers equation on the periodic domain [0, 2*pi):
//! `du = (-1/2 (u^2)_x + nu u_xx) dt + sum_j sigma_j cos(j x) dW_j`.
//!
//! The drift advances with ETDRK4 substeps; the additive low-mode noise is a
//! post-drift Euler-Maruyama increment per substep.

use crate::error::{CoreError, Result};
use crate::grid::Grid1d;
use crate::solvers::etdrk::{EtdrkScratch, EtdrkTable};
use crate::solvers::{ensure_finite, Quadratic1d};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

/// Additive noise supported on the cosine modes j = 1, 2, 3 with amplitudes
/// `sigma * weights[j-1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeNoiseSpec {
    pub sigma: f64,
    pub weights: [f64; 3],
}

impl Default for SdeNoiseSpec {
    fn default() -> Self {
        SdeNoiseSpec { sigma: 1.0, weights: [1.0, 0.5, 0.1] }
    }
}

impl SdeNoiseSpec {
    pub fn amplitudes(&self) -> [f64; 3] {
        [self.sigma * self.weights[0], self.sigma * self.weights[1], self.sigma * self.weights[2]]
    }
}

pub struct BurgersSde {
    pub grid: Grid1d,
    pub nu: f64,
    pub noise: SdeNoiseSpec,
    pub substep: f64,
    pub substeps_per_macro: usize,
    table: EtdrkTable,
    quad: Quadratic1d,
    scratch: EtdrkScratch,
}

impl BurgersSde {
    pub fn new(
        grid: Grid1d,
        nu: f64,
        noise: SdeNoiseSpec,
        substep: f64,
        substeps_per_macro: usize,
    ) -> Result<Self> {
        if nu <= 0.0 {
            return Err(CoreError::config("Burgers viscosity must be positive"));
        }
        if noise.amplitudes().iter().any(|a| *a < 0.0) {
            return Err(CoreError::config("noise amplitudes must be nonnegative"));
        }
        let linear: Vec<Complex64> =
            grid.wavenumbers().iter().map(|&k| Complex64::new(-nu * k * k, 0.0)).collect();
        let table = EtdrkTable::build(&linear, substep, 4)?;
        let quad = Quadratic1d::new(&grid)?;
        Ok(BurgersSde { grid, nu, noise, substep, substeps_per_macro, table, quad, scratch: EtdrkScratch::new() })
    }

    pub fn to_spectral(&self, u: &[f64]) -> Vec<Complex64> {
        self.quad.plan().forward_real(u)
    }

    pub fn to_physical(&self, u_hat: &[Complex64]) -> Vec<f64> {
        self.quad.plan().inverse_real(u_hat)
    }

    /// One macro step (`substeps_per_macro` drift substeps, each followed by
    /// the Euler-Maruyama noise increment drawn from `rng`).
    pub fn macro_step(&mut self, u_hat: &mut [Complex64], rng: &mut impl Rng) -> Result<()> {
        let n = self.grid.n;
        let sqrt_h = self.substep.sqrt();
        let amps = self.noise.amplitudes();
        let quad = &mut self.quad;
        for s in 0..self.substeps_per_macro {
            self.table.step(u_hat, 0.0, &mut self.scratch, &mut |state, _t, out| {
                quad.eval(state, out);
            });
            // cos(j x) has spectral weight n/2 at modes +-j.
            for (j, &amp) in amps.iter().enumerate() {
                let mode = j + 1;
                let dw: f64 = rng.sample::<f64, _>(StandardNormal) * sqrt_h;
                let inc = amp * dw * n as f64 / 2.0;
                u_hat[mode] += inc;
                u_hat[n - mode] += inc;
            }
            ensure_finite(u_hat, s)?;
        }
        Ok(())
    }

    /// Integrates one macro step from a physical-space initial condition.
    pub fn terminal(&mut self, u0: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let mut u_hat = self.to_spectral(u0);
        self.macro_step(&mut u_hat, rng)?;
        Ok(self.to_physical(&u_hat))
    }

    /// Discrete energy integral dx * sum u^2.
    pub fn energy(&self, u: &[f64]) -> f64 {
        self.grid.dx() * u.iter().map(|v| v * v).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::named_stream;
    use std::f64::consts::PI;

    fn desk_solver(sigma: f64, substeps: usize) -> BurgersSde {
        let grid = Grid1d::new(64, 2.0 * PI).unwrap();
        let noise = SdeNoiseSpec { sigma, ..Default::default() };
        BurgersSde::new(grid, 0.1, noise, 1e-3, substeps).unwrap()
    }

    #[test]
    fn zero_state_is_fixed_point_without_noise() {
        let mut solver = desk_solver(0.0, 50);
        let mut rng = named_stream(0, "burgers-test", 0);
        let out = solver.terminal(&vec![0.0; 64], &mut rng).unwrap();
        assert!(out.iter().all(|&v| v == 0.0), "zero field must stay exactly zero");
    }

    #[test]
    fn drift_preserves_odd_symmetry_of_sin() {
        // u0 = sin(x) is odd about x = pi; the deterministic drift keeps it so.
        let mut solver = desk_solver(0.0, 200);
        let mut rng = named_stream(0, "burgers-test", 1);
        let n = 64;
        let u0: Vec<f64> = (0..n).map(|i| (2.0 * PI * i as f64 / n as f64).sin()).collect();
        let mut u_hat = solver.to_spectral(&u0);
        for _ in 0..3 {
            solver.macro_step(&mut u_hat, &mut rng).unwrap();
            let u = solver.to_physical(&u_hat);
            for i in 1..n {
                let sym = u[i] + u[n - i];
                assert!(sym.abs() < 1e-9, "odd symmetry broken: u[{i}]+u[{}] = {sym}", n - i);
            }
            assert!(u[0].abs() < 1e-9);
        }
    }

    #[test]
    fn viscous_drift_dissipates_energy() {
        let mut solver = desk_solver(0.0, 100);
        for seed in 0..10u64 {
            let mut rng = named_stream(seed, "burgers-test", 2);
            let u0 = crate::solvers::init::sample_ic_1d(&solver.grid, 2.0, 1.0, &mut rng);
            let e0 = solver.energy(&u0);
            let u1 = solver.terminal(&u0, &mut rng).unwrap();
            let e1 = solver.energy(&u1);
            assert!(e1 < e0, "seed {seed}: energy rose {e0} -> {e1}");
        }
    }

    #[test]
    fn noise_free_realizations_are_bitwise_identical() {
        let mut outs = Vec::new();
        for _ in 0..4 {
            let mut solver = desk_solver(0.0, 50);
            let mut rng = named_stream(9, "burgers-test", 3);
            let grid = solver.grid.clone();
            let mut rng_ic = named_stream(9, "burgers-test", 4);
            let u0 = crate::solvers::init::sample_ic_1d(&grid, 2.0, 1.0, &mut rng_ic);
            outs.push(solver.terminal(&u0, &mut rng).unwrap());
        }
        for o in &outs[1..] {
            assert_eq!(&outs[0], o);
        }
    }

    #[test]
    fn noise_injects_spread() {
        let mut solver = desk_solver(1.0, 100);
        let mut ic_rng = named_stream(3, "burgers-test", 5);
        let u0 = crate::solvers::init::sample_ic_1d(&solver.grid, 2.0, 1.0, &mut ic_rng);
        let mut outs = Vec::new();
        for r in 0..8u64 {
            let mut rng = named_stream(3, "burgers-noise", r);
            outs.push(solver.terminal(&u0, &mut rng).unwrap());
        }
        // Per-point std across realizations must be strictly positive.
        for i in 0..64 {
            let mean: f64 = outs.iter().map(|o| o[i]).sum::<f64>() / outs.len() as f64;
            let var: f64 =
                outs.iter().map(|o| (o[i] - mean) * (o[i] - mean)).sum::<f64>() / outs.len() as f64;
            assert!(var > 0.0, "zero variance at grid point {i}");
        }
    }
}
