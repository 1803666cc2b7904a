//! Random smooth initial conditions: random-phase Fourier series with
//! power-law spectral decay, rescaled to a target max-abs amplitude.

use crate::fft::{Fft2Plan, FftPlan};
use crate::grid::{Grid1d, Grid2d};
use num_complex::Complex64;
use rand::Rng;

/// Zero-mean field with |mode k| proportional to k^-decay and uniform random
/// phases, rescaled so max|u| = amplitude.
pub fn sample_ic_1d(grid: &Grid1d, decay: f64, amplitude: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = grid.n;
    let plan = FftPlan::new(n).expect("grid guarantees power of two");
    let mut u_hat = vec![Complex64::default(); n];
    for k in 1..n / 2 {
        let theta: f64 = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
        let mag = (k as f64).powf(-decay) * n as f64 / 2.0;
        u_hat[k] = Complex64::from_polar(mag, theta);
        u_hat[n - k] = u_hat[k].conj();
    }
    let mut u = plan.inverse_real(&u_hat);
    rescale_max_abs(&mut u, amplitude);
    u
}

/// 2D analogue with radial decay |k|^-decay; Nyquist lines are zeroed so the
/// Hermitian pairing stays simple.
pub fn sample_ic_2d(grid: &Grid2d, decay: f64, amplitude: f64, rng: &mut impl Rng) -> Vec<f64> {
    let n = grid.n;
    let plan = Fft2Plan::new(n, n).expect("grid guarantees power of two");
    let mut u_hat = vec![Complex64::default(); n * n];
    for iy in 0..n {
        for ix in 0..n {
            if (iy == 0 && ix == 0) || iy == n / 2 || ix == n / 2 {
                continue;
            }
            let cy = (n - iy) % n;
            let cx = (n - ix) % n;
            // Fill each Hermitian pair once.
            if (iy, ix) > (cy, cx) {
                continue;
            }
            let sy = if iy <= n / 2 { iy as f64 } else { iy as f64 - n as f64 };
            let sx = if ix <= n / 2 { ix as f64 } else { ix as f64 - n as f64 };
            let kmag = (sy * sy + sx * sx).sqrt();
            let theta: f64 = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
            let mag = kmag.powf(-decay) * (n * n) as f64 / 2.0;
            let v = Complex64::from_polar(mag, theta);
            u_hat[iy * n + ix] = v;
            u_hat[cy * n + cx] = v.conj();
        }
    }
    let mut u = plan.inverse_real(&u_hat);
    rescale_max_abs(&mut u, amplitude);
    u
}

fn rescale_max_abs(u: &mut [f64], amplitude: f64) {
    let max = u.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if amplitude == 0.0 || max == 0.0 {
        u.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let s = amplitude / max;
    u.iter_mut().for_each(|v| *v *= s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::named_stream;

    #[test]
    fn zero_amplitude_gives_zero_field() {
        let grid = Grid1d::new(64, 2.0 * std::f64::consts::PI).unwrap();
        let mut rng = named_stream(0, "ic-test", 0);
        let u = sample_ic_1d(&grid, 2.0, 0.0, &mut rng);
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn field_is_zero_mean_and_hits_target_amplitude() {
        let grid = Grid1d::new(128, 60.0).unwrap();
        let mut rng = named_stream(1, "ic-test", 0);
        let u = sample_ic_1d(&grid, 2.0, 1.0, &mut rng);
        let mean: f64 = u.iter().sum::<f64>() / u.len() as f64;
        assert!(mean.abs() < 1e-12, "mean {mean}");
        let max = u.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_spectrum_slope_is_minus_two() {
        let grid = Grid1d::new(256, 2.0 * std::f64::consts::PI).unwrap();
        let plan = FftPlan::new(256).unwrap();
        let mut avg = vec![0.0f64; 33];
        let draws = 100;
        for d in 0..draws {
            let mut rng = named_stream(2, "ic-test", d);
            let u = sample_ic_1d(&grid, 2.0, 1.0, &mut rng);
            let spec = plan.forward_real(&u);
            for k in 2..=32 {
                avg[k] += spec[k].norm() / draws as f64;
            }
        }
        let xs: Vec<f64> = (2..=32).map(|k| (k as f64).ln()).collect();
        let ys: Vec<f64> = (2..=32).map(|k| avg[k].ln()).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let slope: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        assert!((slope + 2.0).abs() < 0.2, "spectrum slope {slope}");
    }

    #[test]
    fn two_dimensional_sample_is_real_and_reproducible() {
        let grid = Grid2d::new(32, 2.0 * std::f64::consts::PI).unwrap();
        let mut rng = named_stream(3, "ic-test", 0);
        let a = sample_ic_2d(&grid, 2.0, 1.0, &mut rng);
        let mut rng = named_stream(3, "ic-test", 0);
        let b = sample_ic_2d(&grid, 2.0, 1.0, &mut rng);
        assert_eq!(a, b);
        let max = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        let mean: f64 = a.iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 1e-12);
    }
}
