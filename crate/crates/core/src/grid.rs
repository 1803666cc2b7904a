//! Uniform periodic grids and their spectral wavenumbers.

use crate::error::{CoreError, Result};

/// 1D periodic grid with power-of-two point count.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1d {
    pub n: usize,
    pub length: f64,
}

impl Grid1d {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if !n.is_power_of_two() || n < 4 {
            return Err(CoreError::config(format!("grid size must be a power of two >= 4, got {n}")));
        }
        if length <= 0.0 {
            return Err(CoreError::config("grid length must be positive"));
        }
        Ok(Grid1d { n, length })
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| i as f64 * self.dx()).collect()
    }

    /// Signed wavenumbers 2*pi/L * [0, 1, ..., n/2, -(n/2-1), ..., -1].
    /// Suitable for even derivative powers; zero the Nyquist entry for odd
    /// derivatives via [`Grid1d::wavenumbers_odd`].
    pub fn wavenumbers(&self) -> Vec<f64> {
        let base = 2.0 * std::f64::consts::PI / self.length;
        (0..self.n)
            .map(|i| {
                let k = if i <= self.n / 2 { i as f64 } else { i as f64 - self.n as f64 };
                base * k
            })
            .collect()
    }

    /// Wavenumbers for first (odd) derivatives: the Nyquist mode is zeroed so
    /// the derivative of a real field stays real.
    pub fn wavenumbers_odd(&self) -> Vec<f64> {
        let mut k = self.wavenumbers();
        k[self.n / 2] = 0.0;
        k
    }
}

/// Square 2D periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2d {
    pub n: usize,
    pub length: f64,
}

impl Grid2d {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if !n.is_power_of_two() || n < 4 {
            return Err(CoreError::config(format!("grid size must be a power of two >= 4, got {n}")));
        }
        if length <= 0.0 {
            return Err(CoreError::config("grid length must be positive"));
        }
        Ok(Grid2d { n, length })
    }

    pub fn points(&self) -> usize {
        self.n * self.n
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn axis(&self) -> Grid1d {
        Grid1d { n: self.n, length: self.length }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wavenumber_layout() {
        let g = Grid1d::new(8, 2.0 * std::f64::consts::PI).unwrap();
        let k = g.wavenumbers();
        assert_eq!(k.len(), 8);
        assert_eq!(k[0], 0.0);
        assert!((k[1] - 1.0).abs() < 1e-15);
        assert!((k[4] - 4.0).abs() < 1e-15);
        assert!((k[7] + 1.0).abs() < 1e-15);
        let kodd = g.wavenumbers_odd();
        assert_eq!(kodd[4], 0.0);
    }

    #[test]
    fn wavenumbers_scale_with_length() {
        let g = Grid1d::new(8, 60.0).unwrap();
        let k = g.wavenumbers();
        assert!((k[1] - 2.0 * std::f64::consts::PI / 60.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid1d::new(48, 1.0).is_err());
        assert!(Grid1d::new(64, -1.0).is_err());
    }
}
