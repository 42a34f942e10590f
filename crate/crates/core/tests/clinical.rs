use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slidefuse::clinical::*;
use slidefuse::numkit::*;

fn randomize(store: &mut ParameterStore<f64>, rng: &mut ChaCha8Rng) {
    for (_, e) in store.iter_mut() {
        for v in e.value.data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
}

/// Row-vector MLP `relu(x·w1 + b1)·w2 + b2`, evaluated with plain loops.
fn mlp_oracle(x: &[f64], w1: &Matrix<f64>, b1: &Matrix<f64>, w2: &Matrix<f64>, b2: &Matrix<f64>) -> Vec<f64> {
    let hidden: Vec<f64> = (0..w1.cols())
        .map(|j| (x.iter().enumerate().map(|(i, v)| v * w1.get(i, j)).sum::<f64>() + b1.get(0, j)).max(0.0))
        .collect();
    (0..w2.cols())
        .map(|j| hidden.iter().enumerate().map(|(i, v)| v * w2.get(i, j)).sum::<f64>() + b2.get(0, j))
        .collect()
}

fn weights_of<'a>(store: &'a ParameterStore<f64>, p: &str, enc: bool) -> [&'a Matrix<f64>; 4] {
    let (a, b) = if enc { ("enc1", "enc2") } else { ("dec1", "dec2") };
    [
        store.value(&format!("{p}.{a}.w")).unwrap(),
        store.value(&format!("{p}.{a}.b")).unwrap(),
        store.value(&format!("{p}.{b}.w")).unwrap(),
        store.value(&format!("{p}.{b}.b")).unwrap(),
    ]
}

fn mixed_schema() -> (ClinicalSchema, Vec<RawRecord>) {
    let specs = [
        FieldSpec::numeric("age"),
        FieldSpec::categorical("stage"),
        FieldSpec::numeric("psa"),
        FieldSpec::categorical("sex"),
    ];
    let rows: Vec<RawRecord> = [
        ["61", "II", "4.1", "M"],
        ["47", "I", "2.2", "F"],
        ["70", "III", "9.0", "M"],
        ["55", "II", "3.3", "F"],
    ]
    .iter()
    .map(|r| r.iter().map(|s| Some(s.to_string())).collect())
    .collect();
    (fit_schema(&rows, &specs).unwrap(), rows)
}

#[test]
fn encode_field_matches_direct_formula_64_dim() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = CdeWeights { prefix: "c".into(), widths: vec![64], categorical: vec![false], hidden: 32 };
    let mut store = ParameterStore::<f64>::new();
    w.init_params(&mut store, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let x: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let c = tape.constant(Matrix::row_vector(x.clone()));
    let h = encode_field(&mut tape, &p, "c.f0", c);
    let [w1, b1, w2, b2] = weights_of(&store, "c.f0", true);
    let oracle = mlp_oracle(&x, w1, b1, w2, b2);
    for (a, b) in tape.value(h).data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
    let r = decode_field(&mut tape, &p, "c.f0", h);
    let [w3, b3, w4, b4] = weights_of(&store, "c.f0", false);
    let rec = mlp_oracle(&oracle, w3, b3, w4, b4);
    assert_eq!(tape.value(r).shape(), (1, 64));
    for (a, b) in tape.value(r).data().iter().zip(&rec) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn embedding_is_mean_of_field_encodings() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (schema, rows) = mixed_schema();
    let w = CdeWeights::new(&schema, 16, "clin").unwrap();
    let mut store = ParameterStore::<f64>::new();
    w.init_params(&mut store, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let rec = schema.encode(&rows[2]).unwrap();
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let out = cde_forward(&mut tape, &p, &w, &rec).unwrap();
    let mut mean = vec![0.0; 16];
    for k in 0..4 {
        let [w1, b1, w2, b2] = weights_of(&store, &format!("clin.f{k}"), true);
        for (m, h) in mean.iter_mut().zip(mlp_oracle(&rec.values[k], w1, b1, w2, b2)) {
            *m += h / 4.0;
        }
    }
    for (a, b) in tape.value(out.embedding).data().iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_field_embedding_is_its_encoding() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let w = CdeWeights { prefix: "c".into(), widths: vec![3], categorical: vec![true], hidden: 5 };
    let mut store = ParameterStore::<f64>::new();
    w.init_params(&mut store, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let rec = ClinicalRecord { values: vec![vec![0.0, 1.0, 0.0]] };
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let out = cde_forward(&mut tape, &p, &w, &rec).unwrap();
    let c = tape.constant(Matrix::row_vector(rec.values[0].clone()));
    let h = encode_field(&mut tape, &p, "c.f0", c);
    assert_eq!(tape.value(out.embedding).data(), tape.value(h).data());
}

#[test]
fn mixed_recon_loss_matches_hand_evaluation() {
    let w = CdeWeights { prefix: "c".into(), widths: vec![1, 3], categorical: vec![false, true], hidden: 1 };
    let rec = ClinicalRecord { values: vec![vec![0.5], vec![0.0, 0.0, 1.0]] };
    let mut tape = Tape::<f64>::new();
    let r0 = tape.leaf(Matrix::scalar(-0.25));
    let r1 = tape.leaf(Matrix::row_vector(vec![1.0, 2.0, 0.5]));
    let l = clinical_recon_loss(&mut tape, &w, &rec, &[r0, r1]).unwrap();
    let lse = (1f64.exp() + 2f64.exp() + 0.5f64.exp()).ln();
    let hand = 0.75f64.powi(2) + (lse - 0.5);
    assert!((tape.scalar(l) - hand).abs() < 1e-12);
    assert!(tape.scalar(l) >= 0.0);
}

#[test]
fn cde_embedding_width_is_hidden_for_any_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for widths in [vec![1], vec![4], vec![1, 1, 3], vec![2, 5, 1, 1]] {
        let categorical = widths.iter().map(|&w| w > 1).collect();
        let w = CdeWeights { prefix: "c".into(), widths: widths.clone(), categorical, hidden: 7 };
        let mut store = ParameterStore::<f64>::new();
        w.init_params(&mut store, &mut rng).unwrap();
        let rec = ClinicalRecord { values: widths.iter().map(|&k| vec![1.0 / k as f64; k]).collect() };
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let out = cde_forward(&mut tape, &p, &w, &rec).unwrap();
        assert_eq!(tape.value(out.embedding).shape(), (1, 7));
    }
}

#[test]
fn cde_weights_pass_grad_check_through_recon_and_downstream() {
    let (schema, rows) = mixed_schema();
    let w = CdeWeights::new(&schema, 6, "clin").unwrap();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut store = ParameterStore::<f64>::new();
        w.init_params(&mut store, &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        store.insert("head.w", Matrix::from_fn(6, 1, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let rec = schema.encode(&rows[seed as usize % rows.len()]).unwrap();
        let report = grad_check_store(
            &store,
            |tape, p| {
                let out = cde_forward(tape, p, &w, &rec).unwrap();
                let lc = clinical_recon_loss(tape, &w, &rec, &out.reconstructions).unwrap();
                let task = tape.matmul(out.embedding, p.var("head.w"));
                let task = tape.bce_logits(task, 1.0);
                let lc = tape.scale(lc, 0.1);
                tape.add(task, lc)
            },
            4,
            seed,
            1e-4,
        );
        assert!(report.passed, "seed {seed}: {report:?}");
    }
}
