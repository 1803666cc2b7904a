//! Exact finite-dimensional Karhunen-Loeve machinery on conditional
//! ensembles: empirical covariance eigenpairs, orthogonal projection onto a
//! span, and optimal rank-r residuals. These are the oracles that certify
//! the operator encoder.
//!
//! Inner products are grid quadrature: `<a, b> = sum_p w_p a_p b_p` with a
//! uniform cell-volume weight. The empirical covariance uses the `1/M`
//! convention.

use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, SymmetricEigen};

/// M samples drawn for one fixed conditioning input, plus the quadrature
/// weight that defines the inner product.
#[derive(Debug, Clone)]
pub struct ConditionalEnsemble {
    samples: Vec<Vec<f64>>,
    weight: f64,
}

impl ConditionalEnsemble {
    pub fn new(samples: Vec<Vec<f64>>, weight: f64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(CoreError::usage("ensemble needs at least two samples"));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(CoreError::usage("ensemble samples must share a grid"));
        }
        if weight <= 0.0 {
            return Err(CoreError::usage("quadrature weight must be positive"));
        }
        Ok(ConditionalEnsemble { samples, weight })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weight * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn mean_field(&self) -> Vec<f64> {
        let d = self.dim();
        let mut mu = vec![0.0; d];
        for s in &self.samples {
            for (m, &v) in mu.iter_mut().zip(s) {
                *m += v;
            }
        }
        let inv = 1.0 / self.len() as f64;
        mu.iter_mut().for_each(|m| *m *= inv);
        mu
    }

    /// Mean centered squared norm, i.e. the covariance trace.
    pub fn variance_trace(&self) -> f64 {
        let mu = self.mean_field();
        let mut acc = 0.0;
        for s in &self.samples {
            let c: Vec<f64> = s.iter().zip(&mu).map(|(v, m)| v - m).collect();
            acc += self.inner(&c, &c);
        }
        acc / self.len() as f64
    }
}

/// Eigenpairs of the empirical conditional covariance: eigenvalues sorted
/// nonincreasing (padded with zeros up to M entries), orthonormal
/// eigenfields for the numerically nonzero part of the spectrum, and the
/// ensemble mean.
#[derive(Debug, Clone)]
pub struct KlBasis {
    pub eigenvalues: Vec<f64>,
    pub eigenfields: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub weight: f64,
}

impl KlBasis {
    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// Residual of the best rank-r subspace: the eigenvalue tail `sum_{k>r}`.
pub fn optimal_rank_r_error(basis: &KlBasis, r: usize) -> f64 {
    basis.eigenvalues.iter().skip(r).sum()
}

/// Empirical KL decomposition. The snapshot route eigendecomposes the
/// M x M Gram matrix of centered samples; when the grid dimension is
/// smaller than the ensemble, the equivalent d x d covariance
/// eigendecomposition is used (identical spectrum and eigenfields).
pub fn empirical_kl(ens: &ConditionalEnsemble) -> Result<KlBasis> {
    let m = ens.len();
    let d = ens.dim();
    let mu = ens.mean_field();
    let centered: Vec<Vec<f64>> = ens
        .samples
        .iter()
        .map(|s| s.iter().zip(&mu).map(|(v, mm)| v - mm).collect())
        .collect();
    let (mut eigenvalues, mut eigenfields) = if d <= m {
        covariance_route(&centered, ens.weight, d)
    } else {
        snapshot_route(&centered, ens.weight, m)
    };
    // Pad the spectrum with structural zeros up to M entries.
    eigenvalues.resize(m.max(eigenvalues.len()), 0.0);
    eigenvalues.truncate(m.max(d).min(eigenvalues.len()).max(m));
    // Drop eigenfields belonging to numerically zero eigenvalues.
    let floor = eigenvalues.first().copied().unwrap_or(0.0) * 1e-12;
    let keep = eigenvalues.iter().take(eigenfields.len()).take_while(|&&l| l > floor).count();
    eigenfields.truncate(keep);
    for l in eigenvalues.iter_mut() {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    Ok(KlBasis { eigenvalues, eigenfields, mean: mu, weight: ens.weight })
}

fn snapshot_route(centered: &[Vec<f64>], weight: f64, m: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut gram = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let g = weight
                * centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>()
                / m as f64;
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let d = centered[0].len();
    let mut eigenvalues = Vec::with_capacity(m);
    let mut eigenfields = Vec::new();
    for &idx in &order {
        let lam = eig.eigenvalues[idx];
        eigenvalues.push(lam.max(0.0));
        if lam > 0.0 {
            // e = sum_i beta_i u_i / sqrt(M lambda)
            let beta = eig.eigenvectors.column(idx);
            let scale = 1.0 / (m as f64 * lam).sqrt();
            let mut field = vec![0.0; d];
            for (i, c) in centered.iter().enumerate() {
                let b = beta[i] * scale;
                for (f, &v) in field.iter_mut().zip(c) {
                    *f += b * v;
                }
            }
            eigenfields.push(field);
        }
    }
    (eigenvalues, eigenfields)
}

fn covariance_route(centered: &[Vec<f64>], weight: f64, d: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = centered.len();
    // Symmetrized covariance in the weighted inner product:
    // B = w/M sum_i u_i u_i^T (uniform weights make W^(1/2) a scalar).
    let mut cov: DMatrix<f64> = DMatrix::zeros(d, d);
    for c in centered {
        for i in 0..d {
            let ci = c[i];
            for j in i..d {
                cov[(i, j)] += ci * c[j];
            }
        }
    }
    let scale = weight / m as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] * scale;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let mut eigenvalues = Vec::with_capacity(d);
    let mut eigenfields = Vec::new();
    let wsqrt = weight.sqrt();
    for &idx in &order {
        let lam = eig.eigenvalues[idx];
        eigenvalues.push(lam.max(0.0));
        if lam > 0.0 {
            // Unit vectors in the weighted inner product: e = v / sqrt(w).
            let v = eig.eigenvectors.column(idx);
            eigenfields.push(v.iter().map(|x| x / wsqrt).collect());
        }
    }
    (eigenvalues, eigenfields)
}

/// Gram-projection coefficients `xi* = G^-1 b(u)` for an arbitrary
/// (linearly independent) basis under the weighted inner product.
pub fn project_coeffs(u: &[f64], basis: &[Vec<f64>], weight: f64) -> Result<Vec<f64>> {
    let r = basis.len();
    if r == 0 {
        return Err(CoreError::usage("projection needs at least one basis field"));
    }
    let inner =
        |a: &[f64], b: &[f64]| weight * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut gram = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in i..r {
            let g = inner(&basis[i], &basis[j]);
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }
    let eig = SymmetricEigen::new(gram.clone());
    let lam_max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let lam_min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if lam_min <= 0.0 || lam_max / lam_min >= 1e8 {
        return Err(CoreError::usage(format!(
            "ill-conditioned basis: Gram condition number {:.3e}",
            lam_max / lam_min.max(f64::MIN_POSITIVE)
        )));
    }
    let rhs: Vec<f64> = basis.iter().map(|phi| inner(u, phi)).collect();
    // Solve G xi = rhs through the eigendecomposition.
    let mut xi = vec![0.0; r];
    for k in 0..r {
        let v = eig.eigenvectors.column(k);
        let proj: f64 = v.iter().zip(&rhs).map(|(a, b)| a * b).sum();
        let c = proj / eig.eigenvalues[k];
        for i in 0..r {
            xi[i] += c * v[i];
        }
    }
    Ok(xi)
}

/// Orthogonal projection of `u` onto the span of `basis`.
pub fn project(u: &[f64], basis: &[Vec<f64>], weight: f64) -> Result<Vec<f64>> {
    let xi = project_coeffs(u, basis, weight)?;
    let mut out = vec![0.0; u.len()];
    for (c, phi) in xi.iter().zip(basis) {
        for (o, &p) in out.iter_mut().zip(phi) {
            *o += c * p;
        }
    }
    Ok(out)
}
