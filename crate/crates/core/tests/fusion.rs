use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slidefuse::fusion::*;
use slidefuse::numkit::*;

fn setup(mode: FusionMode, d1: usize, d2: usize, seed: u64) -> (FfmWeights, ParameterStore<f64>) {
    let cfg = FusionConfig { mode, reduction: 4, gate_bias: true };
    let w = FfmWeights::new(cfg, d1, d2, "ffm").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    w.init_params(&mut store, &mut rng).unwrap();
    for (_, e) in store.iter_mut() {
        for v in e.value.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    (w, store)
}

fn rand_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix<f64> {
    Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0))
}

fn ln_oracle(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    x.iter().enumerate().map(|(i, v)| (v - mu) / (var + 1e-5).sqrt() * gamma[i] + beta[i]).collect()
}

fn affine(x: &[f64], w: &Matrix<f64>, b: &Matrix<f64>) -> Vec<f64> {
    (0..w.cols()).map(|j| (0..x.len()).map(|i| x[i] * w.get(i, j)).sum::<f64>() + b.get(0, j)).collect()
}

fn run(w: &FfmWeights, store: &ParameterStore<f64>, a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let out = ffm(&mut tape, &p, w, va, vb).unwrap();
    tape.value(out).clone()
}

#[test]
fn se_fusion_matches_step_by_step_evaluation() {
    let (w, store) = setup(FusionMode::Se, 8, 4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, b) = (rand_rows(&mut rng, 3, 8), rand_rows(&mut rng, 3, 4));
    let out = run(&w, &store, &a, &b);
    let v = |n: &str| store.value(&format!("ffm.{n}")).unwrap();
    for r in 0..3 {
        let x: Vec<f64> = a.row(r).iter().chain(b.row(r)).copied().collect();
        let s: Vec<f64> = affine(&x, v("down.w"), v("down.b")).into_iter().map(|z| z.max(0.0)).collect();
        let gate: Vec<f64> = affine(&s, v("up.w"), v("up.b")).into_iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
        for g in &gate {
            assert!(*g > 0.0 && *g < 1.0);
        }
        let gated: Vec<f64> = x.iter().zip(&gate).map(|(x, g)| x * g).collect();
        let oracle = ln_oracle(&gated, v("ln.gamma").data(), v("ln.beta").data());
        for (o, e) in out.row(r).iter().zip(&oracle) {
            assert!((o - e).abs() < 1e-12, "{o} vs {e}");
        }
    }
}

#[test]
fn saturated_gates_reduce_to_layer_norm_of_concat() {
    let (w, mut store) = setup(FusionMode::Se, 5, 3, 3);
    store.value_mut("ffm.up.b").unwrap().fill(60.0);
    store.value_mut("ffm.up.w").unwrap().fill(0.0);
    store.value_mut("ffm.ln.gamma").unwrap().fill(1.0);
    store.value_mut("ffm.ln.beta").unwrap().fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (a, b) = (rand_rows(&mut rng, 2, 5), rand_rows(&mut rng, 2, 3));
    let out = run(&w, &store, &a, &b);
    for r in 0..2 {
        let x: Vec<f64> = a.row(r).iter().chain(b.row(r)).copied().collect();
        let e = layer_norm(&x, &[1.0; 8], &[0.0; 8], 1e-5).unwrap();
        for (o, e) in out.row(r).iter().zip(&e) {
            assert!((o - e).abs() < 1e-12);
        }
    }
}

#[test]
fn none_mode_is_exact_concatenation() {
    let (w, store) = setup(FusionMode::None, 4, 6, 5);
    assert!(store.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (a, b) = (rand_rows(&mut rng, 5, 4), rand_rows(&mut rng, 5, 6));
    let out = run(&w, &store, &a, &b);
    assert_eq!(out, Matrix::hconcat(&[&a, &b]));
}

#[test]
fn identity_linear_mode_is_layer_norm_of_concat() {
    let (w, mut store) = setup(FusionMode::Linear, 3, 3, 7);
    *store.value_mut("ffm.lin.w").unwrap() = Matrix::identity(6);
    store.value_mut("ffm.lin.b").unwrap().fill(0.0);
    store.value_mut("ffm.ln.gamma").unwrap().fill(1.0);
    store.value_mut("ffm.ln.beta").unwrap().fill(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (a, b) = (rand_rows(&mut rng, 1, 3), rand_rows(&mut rng, 1, 3));
    let out = run(&w, &store, &a, &b);
    let x: Vec<f64> = a.row(0).iter().chain(b.row(0)).copied().collect();
    let e = layer_norm(&x, &[1.0; 6], &[0.0; 6], 1e-5).unwrap();
    for (o, e) in out.row(0).iter().zip(&e) {
        assert!((o - e).abs() < 1e-12);
    }
}

#[test]
fn rows_are_fused_independently() {
    let (w, store) = setup(FusionMode::Se, 6, 2, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (a, b) = (rand_rows(&mut rng, 7, 6), rand_rows(&mut rng, 7, 2));
    let full = run(&w, &store, &a, &b);
    let perm = [3usize, 0, 6, 2, 5, 1, 4];
    let permuted = run(&w, &store, &a.gather_rows(&perm), &b.gather_rows(&perm));
    for (k, &src) in perm.iter().enumerate() {
        assert_eq!(permuted.row(k), full.row(src));
        let single = run(&w, &store, &a.gather_rows(&[src]), &b.gather_rows(&[src]));
        assert_eq!(single.row(0), full.row(src));
    }
}

#[test]
fn fusion_weights_pass_grad_check() {
    for (i, mode) in [FusionMode::Se, FusionMode::Linear].into_iter().enumerate() {
        for seed in 0..4u64 {
            let (w, mut store) = setup(mode, 5, 3, 20 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(30 + seed);
            store.insert("a", rand_rows(&mut rng, 3, 5)).unwrap();
            store.insert("b", rand_rows(&mut rng, 3, 3)).unwrap();
            let target = rand_rows(&mut rng, 3, 8);
            let report = grad_check_store(
                &store,
                |tape, p| {
                    let out = ffm(tape, p, &w, p.var("a"), p.var("b")).unwrap();
                    let t = tape.constant(target.clone());
                    let m = tape.mul(out, t);
                    tape.sum_all(m)
                },
                6,
                seed + i as u64,
                1e-4,
            );
            assert!(report.passed, "{mode:?} seed {seed}: {report:?}");
        }
    }
}
