// Temporary op-level timing probes.
use dll_core::autodiff::{ParamStore, Tape};
use dll_core::fft::Fft2Plan;
use dll_core::rng::named_stream;
use dll_core::tensor::Tensor;
use std::time::Instant;

fn time_it(label: &str, reps: usize, mut f: impl FnMut()) {
    f();
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!("{label}: {:.1} ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}

#[test]
#[ignore]
fn bench_ops_2d() {
    let batch = 16usize;
    let (ny, nx, c) = (32usize, 32usize, 64usize);
    let pts = ny * nx;
    let modes = 10usize;
    let mut rng = named_stream(0, "opbench", 0);
    let mut store = ParamStore::new();
    let wre = store.add("wre", Tensor::randn(vec![2 * modes, modes, c, c], 0.1, &mut rng));
    let wim = store.add("wim", Tensor::randn(vec![2 * modes, modes, c, c], 0.1, &mut rng));
    let skw = store.add("skw", Tensor::randn(vec![c, c], 0.1, &mut rng));
    let skb = store.add("skb", Tensor::zeros(vec![c]));
    let x = Tensor::randn(vec![batch, pts, c], 1.0, &mut rng);
    let x4 = Tensor::randn(vec![batch, ny, nx, c], 1.0, &mut rng);
    let plan = Fft2Plan::new(ny, nx).unwrap();

    time_it("affine fwd", 5, || {
        let mut tape = Tape::new(&store);
        let xv = tape.data(x.clone());
        let w = tape.param(skw);
        let b = tape.param(skb);
        let _ = tape.affine(xv, w, Some(b)).unwrap();
    });
    time_it("affine fwd+bwd", 5, || {
        let mut tape = Tape::new(&store);
        let xv = tape.data(x.clone());
        let w = tape.param(skw);
        let b = tape.param(skb);
        let y = tape.affine(xv, w, Some(b)).unwrap();
        let l = tape.sum_squares(y);
        let _ = tape.backward(l).unwrap();
    });
    time_it("gelu fwd", 5, || {
        let mut tape = Tape::new(&store);
        let xv = tape.data(x.clone());
        let _ = tape.gelu(xv);
    });
    time_it("spectral2d fwd", 5, || {
        let mut tape = Tape::new(&store);
        let xv = tape.data(x4.clone());
        let wre = tape.param(wre);
        let wim = tape.param(wim);
        let _ = tape.spectral_mix_2d(xv, wre, wim, plan.clone(), modes).unwrap();
    });
    time_it("spectral2d fwd+bwd", 5, || {
        let mut tape = Tape::new(&store);
        let xv = tape.data(x4.clone());
        let wre = tape.param(wre);
        let wim = tape.param(wim);
        let y = tape.spectral_mix_2d(xv, wre, wim, plan.clone(), modes).unwrap();
        let l = tape.sum_squares(y);
        let _ = tape.backward(l).unwrap();
    });
    time_it("tensor clone 8MB", 20, || {
        let _ = x.clone();
    });
}
