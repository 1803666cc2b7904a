//! Runtime oracle suites behind the `selfcheck` command: finite-difference
//! gradient checks, solver convergence orders, elliptic-solver oracles,
//! Karhunen-Loeve optimality, flow-matching identities, the Wasserstein
//! stability probe, and metric reference checks. The acceptance tests run
//! the same functions.

use crate::autodiff::{ParamStore, Tape, VarId};
use crate::darcy::{self, CgConfig};
use crate::dll;
use crate::fft::{Fft2Plan, FftPlan};
use crate::grid::{Grid1d, Grid2d};
use crate::kl::{self, ConditionalEnsemble};
use crate::metrics::{self, SampleCloud};
use crate::rng::named_stream;
use crate::solvers::etdrk::{EtdrkScratch, EtdrkTable};
use crate::solvers::kolmogorov::KolmogorovFlow;
use crate::solvers::ks::KsSolver;
use crate::tensor::Tensor;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        CheckResult { name: name.to_string(), pass, detail }
    }
}

fn check(results: &mut Vec<CheckResult>, name: &str, pass: bool, detail: String) {
    results.push(CheckResult::new(name, pass, detail));
}

/// Max relative disagreement between reverse-mode and central finite
/// differences over every parameter of the graph built by `build`.
fn fd_max_rel_err<F>(store: &mut ParamStore, build: F) -> f64
where
    F: for<'a> Fn(&'a ParamStore) -> (Tape<'a>, VarId),
{
    let h = 1e-5;
    let ids: Vec<_> = store.param_ids().collect();
    let analytic: Vec<Tensor> = {
        let (mut tape, loss) = build(store);
        let grads = tape.backward(loss).expect("backward");
        ids.iter()
            .map(|&id| grads.for_param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec())))
            .collect()
    };
    let mut worst = 0.0f64;
    for (pi, &pid) in ids.iter().enumerate() {
        let mut fd = vec![0.0; store.get(pid).len()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let orig = store.get(pid).data()[i];
            store.get_mut(pid).data_mut()[i] = orig + h;
            let up = {
                let (tape, loss) = build(store);
                tape.value(loss).item()
            };
            store.get_mut(pid).data_mut()[i] = orig - h;
            let down = {
                let (tape, loss) = build(store);
                tape.value(loss).item()
            };
            store.get_mut(pid).data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        // Relative error in the max norm of each parameter's gradient.
        let scale = fd
            .iter()
            .chain(analytic[pi].data())
            .map(|v| v.abs())
            .fold(1e-8, f64::max);
        for (f, a) in fd.iter().zip(analytic[pi].data()) {
            worst = worst.max((f - a).abs() / scale);
        }
    }
    worst
}

/// Finite-difference agreement (< 1e-6 max relative) for every recorded
/// operation over `seeds` random instantiations.
pub fn gradient_suite(seeds: u64) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut worst_mlp = 0.0f64;
    let mut worst_s1 = 0.0f64;
    let mut worst_s2 = 0.0f64;
    let mut worst_mix = 0.0f64;
    for seed in 0..seeds {
        // Dense affine + GELU + squared-error reduction.
        {
            let mut rng = named_stream(seed, "check:fd-mlp", 0);
            let mut store = ParamStore::new();
            let w1 = store.add("w1", Tensor::randn(vec![4, 6], 0.6, &mut rng));
            let b1 = store.add("b1", Tensor::randn(vec![6], 0.6, &mut rng));
            let w2 = store.add("w2", Tensor::randn(vec![6, 2], 0.6, &mut rng));
            let x = Tensor::randn(vec![3, 4], 1.0, &mut rng);
            let t = Tensor::randn(vec![3, 2], 1.0, &mut rng);
            worst_mlp = worst_mlp.max(fd_max_rel_err(&mut store, move |s| {
                let mut tape = Tape::new(s);
                let xv = tape.data(x.clone());
                let tv = tape.data(t.clone());
                let w1 = tape.param(w1);
                let b1 = tape.param(b1);
                let w2 = tape.param(w2);
                let h = tape.affine(xv, w1, Some(b1)).unwrap();
                let h = tape.gelu(h);
                let y = tape.affine(h, w2, None).unwrap();
                let l = tape.quad_loss(y, tv, 1.0).unwrap();
                (tape, l)
            }));
        }
        // 1D spectral mixing.
        {
            let mut rng = named_stream(seed, "check:fd-s1", 0);
            let plan = FftPlan::new(16).unwrap();
            let mut store = ParamStore::new();
            let wre = store.add("wre", Tensor::randn(vec![4, 2, 2], 0.4, &mut rng));
            let wim = store.add("wim", Tensor::randn(vec![4, 2, 2], 0.4, &mut rng));
            let xin = store.add("x", Tensor::randn(vec![2, 16, 2], 1.0, &mut rng));
            let t = Tensor::randn(vec![2, 16, 2], 1.0, &mut rng);
            worst_s1 = worst_s1.max(fd_max_rel_err(&mut store, move |s| {
                let mut tape = Tape::new(s);
                let x = tape.param(xin);
                let wre = tape.param(wre);
                let wim = tape.param(wim);
                let tv = tape.data(t.clone());
                let y = tape.spectral_mix_1d(x, wre, wim, plan.clone(), 4).unwrap();
                let l = tape.quad_loss(y, tv, 1.0).unwrap();
                (tape, l)
            }));
        }
        // 2D spectral mixing.
        {
            let mut rng = named_stream(seed, "check:fd-s2", 0);
            let plan = Fft2Plan::new(8, 8).unwrap();
            let mut store = ParamStore::new();
            let wre = store.add("wre", Tensor::randn(vec![4, 2, 2, 2], 0.4, &mut rng));
            let wim = store.add("wim", Tensor::randn(vec![4, 2, 2, 2], 0.4, &mut rng));
            let xin = store.add("x", Tensor::randn(vec![1, 8, 8, 2], 1.0, &mut rng));
            let t = Tensor::randn(vec![1, 8, 8, 2], 1.0, &mut rng);
            worst_s2 = worst_s2.max(fd_max_rel_err(&mut store, move |s| {
                let mut tape = Tape::new(s);
                let x = tape.param(xin);
                let wre = tape.param(wre);
                let wim = tape.param(wim);
                let tv = tape.data(t.clone());
                let y = tape.spectral_mix_2d(x, wre, wim, plan.clone(), 2).unwrap();
                let l = tape.quad_loss(y, tv, 1.0).unwrap();
                (tape, l)
            }));
        }
        // Pooling, concatenation, decoding, scaling, addition, sum-squares.
        {
            let mut rng = named_stream(seed, "check:fd-mix", 0);
            let mut store = ParamStore::new();
            let a = store.add("a", Tensor::randn(vec![2, 5, 3], 1.0, &mut rng));
            let c = store.add("c", Tensor::randn(vec![2, 3], 1.0, &mut rng));
            let basis = store.add("basis", Tensor::randn(vec![2, 4, 3], 1.0, &mut rng));
            let w = store.add("w", Tensor::randn(vec![6, 4], 0.6, &mut rng));
            worst_mix = worst_mix.max(fd_max_rel_err(&mut store, move |s| {
                let mut tape = Tape::new(s);
                let av = tape.param(a);
                let cv = tape.param(c);
                let bv = tape.param(basis);
                let wv = tape.param(w);
                let pooled = tape.mean_pool(av).unwrap();
                let cat = tape.concat_last(&[pooled, cv]).unwrap();
                let mapped = tape.affine(cat, wv, None).unwrap();
                let dec = tape.coeff_decode(cv, bv).unwrap();
                let sum = tape.add(mapped, dec).unwrap();
                let scaled = tape.scale(sum, 0.7);
                let l = tape.sum_squares(scaled);
                (tape, l)
            }));
        }
    }
    check(&mut results, "grad.affine_gelu_mse", worst_mlp < 1e-6, format!("max rel err {worst_mlp:.3e}"));
    check(&mut results, "grad.spectral_mix_1d", worst_s1 < 1e-6, format!("max rel err {worst_s1:.3e}"));
    check(&mut results, "grad.spectral_mix_2d", worst_s2 < 1e-6, format!("max rel err {worst_s2:.3e}"));
    check(&mut results, "grad.pool_concat_decode", worst_mix < 1e-6, format!("max rel err {worst_mix:.3e}"));
    results
}

fn regression_slope(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let xm = xs.iter().sum::<f64>() / xs.len() as f64;
    let ym = ys.iter().sum::<f64>() / ys.len() as f64;
    xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>()
        / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>()
}

fn forced_ode(order: u8, h: f64, lambda: f64) -> Complex64 {
    let steps = (1.0 / h).round() as usize;
    let table = EtdrkTable::build(&[Complex64::new(lambda, 0.0)], h, order).unwrap();
    let mut u = vec![Complex64::new(1.0, 0.0)];
    let mut scratch = EtdrkScratch::new();
    for s in 0..steps {
        let t = s as f64 * h;
        table.step(&mut u, t, &mut scratch, &mut |_, ts, out| {
            out[0] = Complex64::new(ts.cos(), 0.0);
        });
    }
    u[0]
}

/// Solver-order and solver-exactness checks.
pub fn solver_suite() -> Vec<CheckResult> {
    let mut results = Vec::new();
    let lambda = -8.0;
    for (order, lo, hi) in [(2u8, 1.7, 2.3), (4u8, 3.7, 4.3)] {
        let reference = forced_ode(order, 1.0 / (320.0 * 64.0), lambda);
        let hs = [1.0 / 40.0, 1.0 / 80.0, 1.0 / 160.0, 1.0 / 320.0];
        let errs: Vec<f64> = hs.iter().map(|&h| (forced_ode(order, h, lambda) - reference).norm()).collect();
        let slope = regression_slope(&hs, &errs);
        check(
            &mut results,
            &format!("solver.etdrk{order}_order"),
            slope >= lo && slope <= hi,
            format!("slope {slope:.3}"),
        );
    }
    // Heat-propagator exactness: pure linear step is the exact exponential.
    {
        let nu = 0.1;
        let h = 0.05;
        let ks: Vec<f64> = (0..8).map(|k| k as f64).collect();
        let linear: Vec<Complex64> = ks.iter().map(|k| Complex64::new(-nu * k * k, 0.0)).collect();
        let table = EtdrkTable::build(&linear, h, 4).unwrap();
        let mut u: Vec<Complex64> = (0..8).map(|i| Complex64::new(1.0 + i as f64, -0.3)).collect();
        let u0 = u.clone();
        let mut scratch = EtdrkScratch::new();
        table.step(&mut u, 0.0, &mut scratch, &mut |_, _, out| {
            out.iter_mut().for_each(|v| *v = Complex64::default());
        });
        let mut worst = 0.0f64;
        for (i, &k) in ks.iter().enumerate() {
            let expect = u0[i] * Complex64::new((-nu * k * k * h).exp(), 0.0);
            worst = worst.max((u[i] - expect).norm() / expect.norm().max(1.0));
        }
        check(&mut results, "solver.heat_exact", worst < 1e-12, format!("max rel err {worst:.3e}"));
    }
    // KS mode-0 conservation per macro step.
    {
        let grid = Grid1d::new(128, 60.0).unwrap();
        let mut solver = KsSolver::new(grid.clone(), 0.01, 100).unwrap();
        let mut rng = named_stream(0, "check:ks", 0);
        let mut u0 = crate::solvers::init::sample_ic_1d(&grid, 2.0, 1.0, &mut rng);
        u0.iter_mut().for_each(|v| *v += 0.21);
        let mut u_hat = solver.to_spectral(&u0);
        let m0 = solver.mean(&u_hat);
        let mut worst = 0.0f64;
        for _ in 0..5 {
            solver.macro_step(&mut u_hat).unwrap();
            worst = worst.max((solver.mean(&u_hat) - m0).abs());
        }
        check(&mut results, "solver.ks_mode0", worst <= 1e-10, format!("max drift {worst:.3e}"));
    }
    // Kolmogorov parallel-shear decay.
    {
        let n = 32;
        let mut flow =
            KolmogorovFlow::new(Grid2d::new(n, 2.0 * std::f64::consts::PI).unwrap(), 1e-2, 0.1, 4, 0.0, 0.01, 25)
                .unwrap();
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let mut w = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                w[iy * n + ix] = (4.0 * iy as f64 * h).sin();
            }
        }
        let mut w_hat = flow.to_spectral(&w);
        let before = w_hat[4 * n].norm();
        flow.macro_step(&mut w_hat).unwrap();
        let rate = (-(1e-2 * 16.0 + 0.1) * 0.25f64).exp();
        let err = (w_hat[4 * n].norm() - before * rate).abs();
        check(&mut results, "solver.kolmogorov_shear", err <= 1e-8 * before.max(1.0), format!("err {err:.3e}"));
    }
    results
}

/// Darcy solver oracles: dense-solver parity, manufactured-solution order,
/// SPD structure, and the discrete maximum principle.
pub fn darcy_suite() -> Vec<CheckResult> {
    let mut results = Vec::new();
    // CG vs dense Cholesky on a random 16x16 instance.
    {
        let n = 16;
        let mut rng = named_stream(1, "check:darcy", 0);
        let a = darcy::sample_permeability(n, &mut rng).unwrap();
        let f: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let (u, outcome) = darcy::solve_darcy(&a, &f, &CgConfig::default()).unwrap();
        let interior = (n - 2) * (n - 2);
        let mut mat = nalgebra::DMatrix::zeros(interior, interior);
        let mut out = vec![0.0; n * n];
        for col in 0..interior {
            let mut e = vec![0.0; n * n];
            e[(col / (n - 2) + 1) * n + col % (n - 2) + 1] = 1.0;
            darcy::apply_darcy_operator(n, &a, &e, &mut out);
            for row in 0..interior {
                mat[(row, col)] = out[(row / (n - 2) + 1) * n + row % (n - 2) + 1];
            }
        }
        let mut b = nalgebra::DVector::zeros(interior);
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                b[(i - 1) * (n - 2) + (j - 1)] = f[i * n + j];
            }
        }
        let dense = mat.cholesky().expect("SPD").solve(&b);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let d = u[i * n + j] - dense[(i - 1) * (n - 2) + (j - 1)];
                num += d * d;
                den += dense[(i - 1) * (n - 2) + (j - 1)].powi(2);
            }
        }
        let rel = (num / den).sqrt();
        check(
            &mut results,
            "darcy.cg_vs_dense",
            outcome.converged && rel < 1e-5,
            format!("rel err {rel:.3e}, {} iters", outcome.iterations),
        );
    }
    // Manufactured solution at second order.
    {
        let err_at = |n: usize| -> f64 {
            let a = vec![darcy::PERM_HIGH; n * n];
            let h = 1.0 / (n - 1) as f64;
            let pi = std::f64::consts::PI;
            let mut f = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    f[i * n + j] = darcy::PERM_HIGH
                        * 2.0
                        * pi
                        * pi
                        * (pi * j as f64 * h).sin()
                        * (pi * i as f64 * h).sin();
                }
            }
            let cfg = CgConfig { tolerance: 1e-10, max_iterations: 10000 };
            let (u, _) = darcy::solve_darcy(&a, &f, &cfg).unwrap();
            let mut worst = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let exact = (pi * j as f64 * h).sin() * (pi * i as f64 * h).sin();
                    worst = worst.max((u[i * n + j] - exact).abs());
                }
            }
            worst
        };
        let slope = (err_at(17) / err_at(33)).log2();
        check(&mut results, "darcy.manufactured_order", (slope - 2.0).abs() < 0.2, format!("slope {slope:.3}"));
    }
    // SPD and maximum principle.
    {
        let n = 12;
        let mut spd_ok = true;
        let mut sym_worst = 0.0f64;
        for seed in 0..20u64 {
            let mut rng = named_stream(seed, "check:darcy-spd", 0);
            let a = darcy::sample_permeability(n, &mut rng).unwrap();
            let mut v = vec![0.0; n * n];
            let mut w = vec![0.0; n * n];
            for i in 1..n - 1 {
                for j in 1..n - 1 {
                    v[i * n + j] = rng.sample(StandardNormal);
                    w[i * n + j] = rng.sample(StandardNormal);
                }
            }
            let mut av = vec![0.0; n * n];
            let mut aw = vec![0.0; n * n];
            darcy::apply_darcy_operator(n, &a, &v, &mut av);
            darcy::apply_darcy_operator(n, &a, &w, &mut aw);
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            spd_ok &= dot(&v, &av) > 0.0;
            sym_worst = sym_worst.max((dot(&v, &aw) - dot(&w, &av)).abs());
        }
        check(&mut results, "darcy.spd", spd_ok && sym_worst < 1e-10, format!("max asym {sym_worst:.3e}"));

        let mut rng = named_stream(3, "check:darcy-max", 0);
        let a = darcy::sample_permeability(16, &mut rng).unwrap();
        let f: Vec<f64> = (0..256).map(|_| rng.gen::<f64>()).collect();
        let (u, _) = darcy::solve_darcy(&a, &f, &CgConfig::default()).unwrap();
        let min = u.iter().cloned().fold(f64::MAX, f64::min);
        check(&mut results, "darcy.max_principle", min >= -1e-10, format!("min u {min:.3e}"));
    }
    results
}

/// KL optimality: randomized subspace search never beats the eigenvalue
/// tail, over `seeds` ensembles with `competitors` random subspaces each.
pub fn kl_suite(seeds: u64, competitors: u64) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut worst_margin = f64::MAX;
    let mut ok = true;
    for seed in 0..seeds {
        let mut rng = named_stream(seed, "check:kl", 0);
        let samples: Vec<Vec<f64>> = (0..60)
            .map(|_| (0..6).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let ens = ConditionalEnsemble::new(samples.clone(), 1.0).unwrap();
        let basis = kl::empirical_kl(&ens).unwrap();
        let mu = ens.mean_field();
        for r in 1..6usize {
            let tail = kl::optimal_rank_r_error(&basis, r);
            for trial in 0..competitors / 5 {
                // Random orthonormal r-frame by Gram-Schmidt on Gaussians.
                let mut frame: Vec<Vec<f64>> = Vec::new();
                while frame.len() < r {
                    let mut v: Vec<f64> = (0..6).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    for e in &frame {
                        let c: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
                        for (x, b) in v.iter_mut().zip(e) {
                            *x -= c * b;
                        }
                    }
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > 1e-8 {
                        v.iter_mut().for_each(|x| *x /= norm);
                        frame.push(v);
                    }
                }
                let mut resid = 0.0;
                for s in &samples {
                    let c: Vec<f64> = s.iter().zip(&mu).map(|(v, m)| v - m).collect();
                    let p = kl::project(&c, &frame, 1.0).unwrap();
                    resid += c.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
                resid /= samples.len() as f64;
                let margin = resid - tail;
                worst_margin = worst_margin.min(margin);
                ok &= margin >= -1e-9;
                let _ = trial;
            }
        }
    }
    check(&mut results, "kl.truncation_optimal", ok, format!("worst competitor margin {worst_margin:.3e}"));
    results
}

/// Flow-matching identities and the closed-form Gaussian sampler.
pub fn flow_suite() -> Vec<CheckResult> {
    let mut results = Vec::new();
    let x = vec![2.0, 0.0];
    let eps = vec![0.0, 2.0];
    let endpoints = dll::noise_sample(&x, &eps, 0.0) == x && dll::noise_sample(&x, &eps, 1.0) == eps;
    check(&mut results, "flow.schedule_endpoints", endpoints, "tau=0 / tau=1 exact".into());

    let oracle = dll::velocity_loss_mc(|_, _, e| dll::oracle_velocity(&[1.5, -0.5], e), &[vec![1.5, -0.5]], 2000, 0);
    check(&mut results, "flow.oracle_zero_loss", oracle == 0.0, format!("loss {oracle:.3e}"));

    let latent = vec![0.5, -1.0, 2.0, 0.0];
    let r = latent.len() as f64;
    let expect = r + latent.iter().map(|v| v * v).sum::<f64>();
    let draws = 100_000;
    let loss = dll::velocity_loss_mc(|xt, _, _| vec![0.0; xt.len()], &[latent.clone()], draws, 1);
    let se = (2.0 * (r + 2.0 * expect)) / (draws as f64).sqrt();
    check(
        &mut results,
        "flow.zero_predictor_moments",
        (loss - expect).abs() < 3.0 * se,
        format!("loss {loss:.4} vs {expect:.4} (3se {:.4})", 3.0 * se),
    );

    let (mean, std) = (3.0, 0.5);
    let n = 10_000;
    let mut rng = named_stream(2, "check:flow", 0);
    let mut samples: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    dll::euler_flow_scalar(&mut samples, 100, |x, tau| dll::gaussian_marginal_velocity(mean, std, x, tau));
    let m = samples.iter().sum::<f64>() / n as f64;
    let v = (samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
    check(
        &mut results,
        "flow.gaussian_closed_form",
        (m - mean).abs() < 0.05 && (v - std).abs() < 0.05,
        format!("mean {m:.4}, std {v:.4}"),
    );
    results
}

/// Wasserstein stability probe: W2 nondecreasing in the perturbation and a
/// bounded W2 / sqrt(L_V) ratio across the sweep.
pub fn stability_suite() -> Vec<CheckResult> {
    let mut results = Vec::new();
    let (w2_0, lv_0) = dll::wasserstein_stability_probe(3.0, 0.5, 0.0, 10_000, 100, 5);
    check(
        &mut results,
        "stability.unperturbed_floor",
        w2_0 < 0.02 && lv_0 < 1e-10,
        format!("W2 {w2_0:.4}, L_V {lv_0:.3e}"),
    );
    let mut last = w2_0;
    let mut monotone = true;
    let mut ratios = Vec::new();
    for delta in [0.05, 0.1, 0.2] {
        let (w2, lv) = dll::wasserstein_stability_probe(3.0, 0.5, delta, 10_000, 100, 5);
        monotone &= w2 >= last;
        last = w2;
        ratios.push(w2 / lv.sqrt());
    }
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    check(&mut results, "stability.w2_monotone", monotone, format!("W2 up to {last:.4}"));
    check(
        &mut results,
        "stability.sqrt_scaling",
        max / min < 10.0,
        format!("ratio spread {:.3} / {:.3}", max, min),
    );
    results
}

/// Metric oracles: naive references, analytic cases, identical-cloud zeros.
pub fn metrics_suite() -> Vec<CheckResult> {
    let mut results = Vec::new();
    let gaussian = |k: usize, d: usize, mean: f64, seed: u64| -> SampleCloud {
        let mut rng = named_stream(seed, "check:metrics", 0);
        SampleCloud::new(
            (0..k)
                .map(|_| (0..d).map(|_| mean + rng.sample::<f64, _>(StandardNormal)).collect())
                .collect(),
        )
        .unwrap()
    };
    // Double-loop parity on small clouds.
    {
        let x = gaussian(33, 17, 0.0, 10);
        let y = gaussian(64, 17, 0.3, 11);
        let fast = metrics::energy_distance(&x, &y);
        let mut cross = 0.0;
        for a in x.members() {
            for b in y.members() {
                cross += a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            }
        }
        let mut wx = 0.0;
        for a in x.members() {
            for b in x.members() {
                wx += a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            }
        }
        let mut wy = 0.0;
        for a in y.members() {
            for b in y.members() {
                wy += a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            }
        }
        let naive = 2.0 * cross / (33.0 * 64.0) - wx / (33.0f64 * 33.0) - wy / (64.0f64 * 64.0);
        let diff = (fast - naive).abs();
        check(&mut results, "metrics.ed_reference", diff < 1e-10, format!("diff {diff:.3e}"));
    }
    // Identical clouds score exactly zero.
    {
        let x = gaussian(24, 8, 0.0, 12);
        let zed = metrics::energy_distance(&x, &x).abs();
        let zswd = metrics::sliced_wasserstein(&x, &x, 64, 0);
        check(&mut results, "metrics.identical_zero", zed < 1e-12 && zswd == 0.0, format!("ED {zed:.3e}, SWD {zswd:.3e}"));
    }
    // Analytic cases. The estimators are unbiased; sample counts are sized
    // so the stated tolerances sit at >= 2 standard errors.
    {
        let x = gaussian(8000, 1, 0.0, 13);
        let y = gaussian(8000, 1, 1.0, 14);
        let ed = metrics::energy_distance(&x, &y);
        let ed_expect = 0.5418065793;
        let ed_ok = (ed - ed_expect).abs() / ed_expect < 0.05;
        let x2 = gaussian(8000, 2, 0.0, 15);
        let y2 = {
            let mut rng = named_stream(16, "check:metrics", 0);
            SampleCloud::new(
                (0..8000)
                    .map(|_| {
                        vec![1.0 + rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)]
                    })
                    .collect(),
            )
            .unwrap()
        };
        let swd = metrics::sliced_wasserstein(&x2, &y2, 2048, 2);
        let swd_expect = 2.0 / std::f64::consts::PI;
        let swd_ok = (swd - swd_expect).abs() / swd_expect < 0.05;
        let g = gaussian(20_000, 1, 0.0, 17);
        let c = metrics::crps(&g, &[0.0]).unwrap();
        let c_expect = 0.23369497725510906;
        let c_ok = (c - c_expect).abs() / c_expect < 0.02;
        check(&mut results, "metrics.ed_analytic", ed_ok, format!("ED {ed:.4} vs {ed_expect:.4}"));
        check(&mut results, "metrics.swd_analytic", swd_ok, format!("SWD {swd:.4} vs {swd_expect:.4}"));
        check(&mut results, "metrics.crps_analytic", c_ok, format!("CRPS {c:.4} vs {c_expect:.4}"));
    }
    results
}

/// Every suite, in acceptance order.
pub fn all_suites() -> Vec<CheckResult> {
    let mut all = Vec::new();
    all.extend(gradient_suite(20));
    all.extend(solver_suite());
    all.extend(darcy_suite());
    all.extend(kl_suite(10, 500));
    all.extend(flow_suite());
    all.extend(stability_suite());
    all.extend(metrics_suite());
    all
}
