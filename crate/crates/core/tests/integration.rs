//! Cross-module integration: the staged pipeline end to end on tiny
//! problems, checkpoint and digest behavior, sampling determinism, the
//! conditional-stability probe, and discretization consistency.

use dll_core::checkpoint::Checkpoint;
use dll_core::config::RunConfig;
use dll_core::dataset::{generate, SystemKind, TrajectorySet};
use dll_core::dll::{sample_ensemble, sorted_w2};
use dll_core::grid::Grid1d;
use dll_core::metrics::SampleCloud;
use dll_core::pipeline;
use dll_core::rng::named_stream;
use dll_core::solvers::init::sample_ic_1d;
use dll_core::tensor::Tensor;

/// Tiny stochastic Burgers config that trains in seconds.
fn tiny_cfg() -> RunConfig {
    let mut cfg = RunConfig::preset("sburgers", "desk", 11).unwrap();
    cfg.grid.n = 32;
    cfg.solver.substep = 1e-3;
    cfg.solver.substeps_per_macro = 100;
    cfg.data.n_train = 48;
    cfg.data.n_eval_inputs = 4;
    cfg.data.eval_realizations = 8;
    cfg.model.width = 16;
    cfg.model.fno_layers = 2;
    cfg.model.modes_cap = 8;
    cfg.model.rank = 8;
    cfg.model.velocity_hidden = 64;
    cfg.model.cond_dim = 16;
    cfg.train.encoder_epochs = 20;
    cfg.train.dll_epochs = 30;
    cfg.train.dll_joint_epochs = 5;
    cfg.train.fno_epochs = 8;
    cfg.train.batch_size = 16;
    cfg.train.sample_count = 8;
    cfg
}

#[test]
fn staged_pipeline_checkpoints_and_determinism() {
    let cfg = tiny_cfg();
    let (train, eval) = generate(&cfg).unwrap();
    let enc_stage = pipeline::train_encoder_stage(&cfg, &train, Some(&eval)).unwrap();
    assert!(enc_stage.log.val_losses.last().unwrap() < &enc_stage.log.val_losses[0]);
    let dll_stage = pipeline::train_dll_stage(&cfg, &enc_stage.store, &enc_stage.enc, &train).unwrap();

    let dir = std::env::temp_dir().join(format!("dll-int-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();

    // Checkpoint round trips preserve sampling behavior exactly.
    let enc_ckpt = pipeline::encoder_checkpoint(&enc_stage, &cfg, train.config_digest);
    enc_ckpt.write(&dir.join("encoder.dllm")).unwrap();
    let dll_ckpt = pipeline::dll_checkpoint(&dll_stage, &cfg, train.config_digest);
    dll_ckpt.write(&dir.join("dll.dllm")).unwrap();
    let (enc_store2, enc2) =
        pipeline::load_encoder_stage(&cfg, &Checkpoint::read(&dir.join("encoder.dllm")).unwrap())
            .unwrap();
    let (dll_store2, dll2) =
        pipeline::load_dll_stage(&cfg, &Checkpoint::read(&dir.join("dll.dllm")).unwrap()).unwrap();

    let a = eval.input(0);
    let s1 = sample_ensemble(
        &enc_stage.store,
        &enc_stage.enc,
        &dll_stage.ema_store,
        &dll_stage.dll,
        a,
        &eval.norm,
        4,
        cfg.train.sampler_steps,
        cfg.seed,
        0,
    )
    .unwrap();
    let s2 = sample_ensemble(
        &enc_store2,
        &enc2,
        &dll_store2,
        &dll2,
        a,
        &eval.norm,
        4,
        cfg.train.sampler_steps,
        cfg.seed,
        0,
    )
    .unwrap();
    assert_eq!(s1, s2, "checkpoint roundtrip changed samples");

    // Same seed regenerates the ensemble bitwise; another tag decorrelates.
    let s3 = sample_ensemble(
        &enc_store2, &enc2, &dll_store2, &dll2, a, &eval.norm, 4, 10, cfg.seed, 0,
    )
    .unwrap();
    assert_eq!(s1, s3);
    let s4 = sample_ensemble(
        &enc_store2, &enc2, &dll_store2, &dll2, a, &eval.norm, 4, 10, cfg.seed, 1,
    )
    .unwrap();
    assert_ne!(s1, s4);

    // Digest mismatches are hard errors.
    let mut other = cfg.clone();
    other.seed = 999;
    assert!(pipeline::load_encoder_stage(&other, &enc_ckpt).is_ok(), "same arch loads");
    let mut bad_arch = cfg.clone();
    bad_arch.model.rank = 4;
    assert!(matches!(
        pipeline::load_encoder_stage(&bad_arch, &enc_ckpt),
        Err(dll_core::error::CoreError::DigestMismatch(_))
    ));
    assert!(pipeline::require_digest_match(train.config_digest, 0xdead, "test").is_err());

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn training_is_bit_reproducible_across_executions() {
    let cfg = {
        let mut c = tiny_cfg();
        c.train.encoder_epochs = 6;
        c
    };
    let (train, _) = generate(&cfg).unwrap();
    let run = || {
        let stage = pipeline::train_encoder_stage(&cfg, &train, None).unwrap();
        let mut bytes = Vec::new();
        for (_, t) in stage.store.iter() {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    };
    assert_eq!(run(), run(), "repeated training diverged bitwise");
}

#[test]
fn stochastic_ensembles_have_positive_spread_and_seeds_differ() {
    let cfg = tiny_cfg();
    let (train, eval) = generate(&cfg).unwrap();
    let enc = pipeline::train_encoder_stage(&cfg, &train, None).unwrap();
    let dll = pipeline::train_dll_stage(&cfg, &enc.store, &enc.enc, &train).unwrap();
    let ens = sample_ensemble(
        &enc.store,
        &enc.enc,
        &dll.ema_store,
        &dll.dll,
        eval.input(0),
        &eval.norm,
        8,
        10,
        cfg.seed,
        7,
    )
    .unwrap();
    let cloud = SampleCloud::new(ens).unwrap();
    let std = cloud.std();
    assert!(std.iter().all(|&s| s > 0.0), "degenerate per-point ensemble std");
}

/// Conditional stability: for two nearby inputs the sorted-sample W2 between
/// output ensembles grows linearly in the input perturbation, with an
/// intercept at the sampling floor.
#[test]
fn conditional_stability_probe_on_trained_model() {
    let cfg = tiny_cfg();
    let (train, eval) = generate(&cfg).unwrap();
    let enc = pipeline::train_encoder_stage(&cfg, &train, None).unwrap();
    let dll = pipeline::train_dll_stage(&cfg, &enc.store, &enc.enc, &train).unwrap();

    let a0 = eval.input(0).to_vec();
    let grid = Grid1d::new(cfg.grid.n, cfg.grid.length).unwrap();
    let mut rng = named_stream(5, "int:cond-stab", 0);
    let dir = sample_ic_1d(&grid, 2.0, 1.0, &mut rng);
    let k = 64;
    // Aggregated per-point sorted-sample W2 between field ensembles.
    let w2_fields = |ea: &[Vec<f64>], eb: &[Vec<f64>]| -> f64 {
        let pts = ea[0].len();
        let mut acc = 0.0;
        for p in 0..pts {
            let xa: Vec<f64> = ea.iter().map(|m| m[p]).collect();
            let xb: Vec<f64> = eb.iter().map(|m| m[p]).collect();
            let w = sorted_w2(&xa, &xb);
            acc += w * w;
        }
        (acc / pts as f64).sqrt()
    };
    let sample = |a: &[f64], tag: u64| {
        sample_ensemble(
            &enc.store, &enc.enc, &dll.ema_store, &dll.dll, a, &eval.norm, k, 10, 777, tag,
        )
        .unwrap()
    };
    let base = sample(&a0, 0);
    // Sampling floor: an independent ensemble for the same input.
    let floor = w2_fields(&base, &sample(&a0, 1));
    let deltas = [0.02, 0.04, 0.06, 0.08, 0.10];
    let mut w2s = Vec::new();
    for (i, &d) in deltas.iter().enumerate() {
        let a: Vec<f64> = a0.iter().zip(&dir).map(|(x, v)| x + d * v).collect();
        w2s.push(w2_fields(&base, &sample(&a, 2 + i as u64)));
    }
    // Least-squares line through the sweep.
    let n = deltas.len() as f64;
    let mx = deltas.iter().sum::<f64>() / n;
    let my = w2s.iter().sum::<f64>() / n;
    let slope = deltas.iter().zip(&w2s).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / deltas.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    let intercept = my - slope * mx;
    assert!(slope.is_finite() && slope > 0.0, "fitted slope {slope}");
    assert!(
        intercept < 2.0 * floor,
        "intercept {intercept} vs sampling floor {floor} (w2s {w2s:?})"
    );
}

/// A trained 1D encoder evaluated on a 2x finer grid keeps its relative
/// reconstruction error within 25% of the training-grid value.
#[test]
fn discretization_consistency_of_trained_encoder() {
    use dll_core::autodiff::{ParamStore, Tape};
    use dll_core::encoder::{train_operator_encoder, OperatorEncoder};
    use rand::Rng;
    use rand_distr::StandardNormal;

    let n = 32;
    let mut cfg = RunConfig::preset("sburgers", "desk", 3).unwrap();
    cfg.grid.n = n;
    cfg.model.width = 16;
    cfg.model.fno_layers = 2;
    cfg.model.modes_cap = 5;
    cfg.model.rank = 8;
    cfg.train.encoder_epochs = 200;
    cfg.train.batch_size = 8;
    cfg.train.lr = 3e-3;

    // Rank-4 synthetic task evaluable on any grid: coefficients are smooth
    // functionals of a's low Fourier modes.
    let coeffs_of = |a_hat: &[(f64, f64)]| -> Vec<f64> {
        (1..=4).map(|k| a_hat[k - 1].0 + 0.5 * a_hat[k - 1].1).collect()
    };
    let build = |nn: usize, seed: u64| -> (Vec<f64>, Vec<f64>) {
        let mut rng = named_stream(seed, "int:disc", 0);
        // Low-mode random input: a(x) = sum_{k<=4} (p cos kx + q sin kx).
        let spec: Vec<(f64, f64)> = (0..4)
            .map(|_| (rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let mut a = vec![0.0; nn];
        let mut u = vec![0.0; nn];
        let c = coeffs_of(&spec);
        for (j, (av, uv)) in a.iter_mut().zip(u.iter_mut()).enumerate() {
            let x = 2.0 * std::f64::consts::PI * j as f64 / nn as f64;
            for k in 1..=4usize {
                let (p, q) = spec[k - 1];
                *av += p * (k as f64 * x).cos() + q * (k as f64 * x).sin();
                *uv += c[k - 1] * (k as f64 * x).cos();
            }
        }
        (a, u)
    };
    let mut train = TrajectorySet::new(SystemKind::Synthetic, 1, n, cfg.grid.length, 0, 64, 1, 1, 0);
    for i in 0..64 {
        let (a, u) = build(n, i as u64);
        train.set_input(i, &a);
        train.set_output(i, 0, 0, &u);
    }
    train.compute_norm();
    let mut store = ParamStore::new();
    let mut rng = named_stream(1, "int:disc-init", 0);
    let enc = OperatorEncoder::new(&mut store, &cfg, &mut rng).unwrap();
    train_operator_encoder(&mut store, &enc, &train, None, &cfg).unwrap();

    let nrmse_on = |nn: usize| -> f64 {
        let nf = enc.nf.backbone.with_grid(nn).unwrap();
        let no = enc.no.with_grid(nn).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for s in 100..116u64 {
            let (a, u) = build(nn, s);
            let a_norm = Tensor::new(vec![1, nn], train.norm.normalize_in(&a)).unwrap();
            let u_norm = train.norm.normalize_out(&u);
            let mut tape = Tape::new(&store);
            let feats = nf.forward(&mut tape, &a_norm).unwrap();
            let _ = feats;
            // Coefficients from the NF pooled head on the fine grid.
            let u_t = Tensor::new(vec![1, nn], u_norm.clone()).unwrap();
            let feat_u = nf.forward(&mut tape, &u_t).unwrap();
            let pooled = tape.mean_pool(feat_u).unwrap();
            let w = tape.param(enc.nf.out.w);
            let b = enc.nf.out.b.map(|b| tape.param(b));
            let xi = tape.affine(pooled, w, b).unwrap();
            let basis = no.forward(&mut tape, &a_norm).unwrap();
            let recon = tape.coeff_decode(xi, basis).unwrap();
            let r = tape.value(recon).data();
            num += r.iter().zip(&u_norm).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / nn as f64;
            den += u_norm.iter().map(|y| y * y).sum::<f64>() / nn as f64;
        }
        (num / den).sqrt()
    };
    let coarse = nrmse_on(n);
    let fine = nrmse_on(2 * n);
    let rel_change = (fine - coarse).abs() / coarse.max(1e-9);
    assert!(
        rel_change < 0.25,
        "NRMSE changed {coarse:.4} -> {fine:.4} ({:.1}% relative)",
        rel_change * 100.0
    );
}
