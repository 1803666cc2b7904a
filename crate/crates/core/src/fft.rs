//! Power-of-two FFTs used by the spectral layers and the pseudo-spectral
//! solvers.
//!
//! Convention: unnormalized forward transform, `1/N` on the inverse, so
//! `inverse(forward(x)) == x`. Only power-of-two lengths are accepted; other
//! lengths are a configuration error.

use crate::error::{CoreError, Result};
use num_complex::Complex64;
use std::sync::Arc;

/// Spectral representation of a (possibly multi-axis) field.
///
/// For spectra of real fields, Hermitian symmetry `X[N-k] == conj(X[k])`
/// holds along every transformed axis.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub shape: Vec<usize>,
    pub data: Vec<Complex64>,
}

/// Precomputed bit-reversal and twiddle tables for one transform length.
#[derive(Debug)]
pub struct FftPlan {
    n: usize,
    bitrev: Vec<u32>,
    /// twiddle[k] = exp(-2*pi*i*k/n) for k < n/2
    twiddle: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(n: usize) -> Result<Arc<Self>> {
        if n < 2 || !n.is_power_of_two() {
            return Err(CoreError::config(format!(
                "FFT length must be a power of two >= 2, got {n}"
            )));
        }
        let bits = n.trailing_zeros();
        let mut bitrev = vec![0u32; n];
        for (i, slot) in bitrev.iter_mut().enumerate() {
            *slot = (i as u32).reverse_bits() >> (32 - bits);
        }
        let twiddle = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / n as f64))
            .collect();
        Ok(Arc::new(FftPlan { n, bitrev, twiddle }))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(buf.len(), self.n);
        for (i, &r) in self.bitrev.iter().enumerate() {
            let r = r as usize;
            if i < r {
                buf.swap(i, r);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let half = len / 2;
            let stride = self.n / len;
            let mut start = 0;
            while start < self.n {
                for j in 0..half {
                    let mut w = self.twiddle[j * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + j];
                    let b = buf[start + j + half] * w;
                    buf[start + j] = a + b;
                    buf[start + j + half] = a - b;
                }
                start += len;
            }
            len *= 2;
        }
        if inverse {
            let scale = 1.0 / self.n as f64;
            for v in buf.iter_mut() {
                *v *= scale;
            }
        }
    }

    /// Unnormalized forward transform, in place.
    pub fn fft(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// Transform over the leading axis of an `[n, lanes]` block stored as
    /// separate real/imaginary planes. All lanes transform simultaneously,
    /// which keeps the butterfly inner loops contiguous; this is the hot
    /// path of the spectral network layers.
    pub fn fft_lanes(&self, re: &mut [f64], im: &mut [f64], lanes: usize, inverse: bool) {
        let n = self.n;
        debug_assert_eq!(re.len(), n * lanes);
        debug_assert_eq!(im.len(), n * lanes);
        for (i, &r) in self.bitrev.iter().enumerate() {
            let r = r as usize;
            if i < r {
                for c in 0..lanes {
                    re.swap(i * lanes + c, r * lanes + c);
                    im.swap(i * lanes + c, r * lanes + c);
                }
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            let mut start = 0;
            while start < n {
                for j in 0..half {
                    let w = self.twiddle[j * stride];
                    let (wr, wi) = if inverse { (w.re, -w.im) } else { (w.re, w.im) };
                    let a = (start + j) * lanes;
                    let b = (start + j + half) * lanes;
                    // Split borrows: a-range and b-range are disjoint.
                    let (re_a, re_b) = re.split_at_mut(b);
                    let (im_a, im_b) = im.split_at_mut(b);
                    let ra = &mut re_a[a..a + lanes];
                    let rb = &mut re_b[..lanes];
                    let ia = &mut im_a[a..a + lanes];
                    let ib = &mut im_b[..lanes];
                    for c in 0..lanes {
                        let tr = rb[c] * wr - ib[c] * wi;
                        let ti = rb[c] * wi + ib[c] * wr;
                        let ar = ra[c];
                        let ai = ia[c];
                        ra[c] = ar + tr;
                        ia[c] = ai + ti;
                        rb[c] = ar - tr;
                        ib[c] = ai - ti;
                    }
                }
                start += len;
            }
            len *= 2;
        }
        if inverse {
            let scale = 1.0 / n as f64;
            re.iter_mut().for_each(|v| *v *= scale);
            im.iter_mut().for_each(|v| *v *= scale);
        }
    }

    /// Inverse transform with `1/N` normalization, in place.
    pub fn ifft(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
    }

    /// Forward transform of a real field.
    pub fn forward_real(&self, field: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(field.len(), self.n);
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft(&mut buf);
        buf
    }

    /// Inverse transform returning the real part; the imaginary residue is
    /// the caller's responsibility to bound (it is ~1e-15 for spectra of
    /// real fields).
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.ifft(&mut buf);
        buf.iter().map(|v| v.re).collect()
    }
}

/// Row-major 2D transforms built from two 1D plans (rows of length `nx`
/// along the fast axis, `ny` rows).
#[derive(Debug)]
pub struct Fft2Plan {
    pub px: Arc<FftPlan>,
    pub py: Arc<FftPlan>,
    nx: usize,
    ny: usize,
}

impl Fft2Plan {
    pub fn new(ny: usize, nx: usize) -> Result<Arc<Self>> {
        Ok(Arc::new(Fft2Plan { px: FftPlan::new(nx)?, py: FftPlan::new(ny)?, nx, ny }))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    fn columns<F: FnMut(&mut [Complex64])>(&self, buf: &mut [Complex64], mut f: F) {
        let mut col = vec![Complex64::default(); self.ny];
        for x in 0..self.nx {
            for y in 0..self.ny {
                col[y] = buf[y * self.nx + x];
            }
            f(&mut col);
            for y in 0..self.ny {
                buf[y * self.nx + x] = col[y];
            }
        }
    }

    pub fn fft2(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.nx * self.ny);
        for row in buf.chunks_exact_mut(self.nx) {
            self.px.fft(row);
        }
        self.columns(buf, |col| self.py.fft(col));
    }

    pub fn ifft2(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.nx * self.ny);
        for row in buf.chunks_exact_mut(self.nx) {
            self.px.ifft(row);
        }
        self.columns(buf, |col| self.py.ifft(col));
    }

    pub fn forward_real(&self, field: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf);
        buf
    }

    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        self.ifft2(&mut buf);
        buf.iter().map(|v| v.re).collect()
    }
}

/// Largest `|Im|` after an inverse transform; real-field pipelines assert
/// this stays tiny.
pub fn max_imag_residue(spectrum: &[Complex64], plan: &FftPlan) -> f64 {
    let mut buf = spectrum.to_vec();
    plan.ifft(&mut buf);
    buf.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::named_stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn randn(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = named_stream(seed, "fft-test", 0);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(FftPlan::new(48).is_err());
        assert!(FftPlan::new(0).is_err());
    }

    #[test]
    fn impulse_transforms_to_all_ones() {
        let plan = FftPlan::new(8).unwrap();
        let mut field = vec![0.0; 8];
        field[0] = 1.0;
        let spec = plan.forward_real(&field);
        for v in &spec {
            assert!((v.re - 1.0).abs() < 1e-14 && v.im.abs() < 1e-14, "got {v}");
        }
    }

    #[test]
    fn roundtrip_is_identity_within_1e12() {
        let plan = FftPlan::new(64).unwrap();
        let field = randn(64, 1);
        let spec = plan.forward_real(&field);
        let back = plan.inverse_real(&spec);
        let scale = field.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in field.iter().zip(&back) {
            assert!((a - b).abs() / scale < 1e-12, "roundtrip error {a} vs {b}");
        }
    }

    #[test]
    fn parseval_holds_to_1e10_relative() {
        let n = 256;
        let plan = FftPlan::new(n).unwrap();
        let field = randn(n, 2);
        let spec = plan.forward_real(&field);
        let lhs: f64 = field.iter().map(|v| v * v).sum();
        let rhs: f64 = spec.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        assert!((lhs - rhs).abs() / lhs.abs() < 1e-10, "Parseval: {lhs} vs {rhs}");
    }

    #[test]
    fn real_field_spectrum_is_hermitian() {
        let n = 128;
        let plan = FftPlan::new(n).unwrap();
        let field = randn(n, 3);
        let spec = plan.forward_real(&field);
        let scale = spec.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for k in 1..n {
            let d = (spec[n - k] - spec[k].conj()).norm();
            assert!(d / scale < 1e-12, "Hermitian violation at mode {k}: {d}");
        }
    }

    #[test]
    fn fft_is_linear() {
        let n = 64;
        let plan = FftPlan::new(n).unwrap();
        let a = randn(n, 4);
        let b = randn(n, 5);
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.5 * x - 1.25 * y).collect();
        let sa = plan.forward_real(&a);
        let sb = plan.forward_real(&b);
        let sc = plan.forward_real(&combo);
        for k in 0..n {
            let expect = 2.5 * sa[k] - 1.25 * sb[k];
            assert!((sc[k] - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn lane_transform_matches_scalar_transform() {
        let n = 32;
        let lanes = 5;
        let plan = FftPlan::new(n).unwrap();
        let mut rng = named_stream(9, "fft-test", 1);
        let mut re = vec![0.0; n * lanes];
        let mut im = vec![0.0; n * lanes];
        for v in re.iter_mut().chain(im.iter_mut()) {
            *v = rng.sample(StandardNormal);
        }
        let (re0, im0) = (re.clone(), im.clone());
        for inverse in [false, true] {
            let mut re_l = re0.clone();
            let mut im_l = im0.clone();
            plan.fft_lanes(&mut re_l, &mut im_l, lanes, inverse);
            for c in 0..lanes {
                let mut buf: Vec<Complex64> =
                    (0..n).map(|k| Complex64::new(re0[k * lanes + c], im0[k * lanes + c])).collect();
                if inverse {
                    plan.ifft(&mut buf);
                } else {
                    plan.fft(&mut buf);
                }
                for k in 0..n {
                    assert!((buf[k].re - re_l[k * lanes + c]).abs() < 1e-12);
                    assert!((buf[k].im - im_l[k * lanes + c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fft2_roundtrip_and_impulse() {
        let plan = Fft2Plan::new(16, 8).unwrap();
        let mut field = vec![0.0; 128];
        field[0] = 1.0;
        let spec = plan.forward_real(&field);
        for v in &spec {
            assert!((v.re - 1.0).abs() < 1e-13 && v.im.abs() < 1e-13);
        }
        let field = randn(128, 6);
        let back = plan.inverse_real(&plan.forward_real(&field));
        for (a, b) in field.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
