use proptest::prelude::*;
use slidefuse::graph::PatchBag;
use slidefuse::io::*;
use slidefuse::metrics::auc_roc;
use slidefuse::numkit::Matrix;
use slidefuse::objectives::Task;
use slidefuse::trainer::split_dataset;
use slidefuse::Error;

fn bag_strategy() -> impl Strategy<Value = PatchBag> {
    (1usize..20, 1usize..8).prop_flat_map(|(n, d)| {
        (prop::collection::vec(any::<f32>(), n * d), prop::collection::vec(any::<(f32, f32)>(), n)).prop_map(
            move |(f, c)| PatchBag::new("b", Matrix::from_vec(n, d, f), c.into_iter().map(|(x, y)| [x, y]).collect()).unwrap(),
        )
    })
}

proptest! {
    #[test]
    fn bag_files_round_trip_bitwise(bag in bag_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pbag");
        write_bag(&p, &bag).unwrap();
        prop_assert_eq!(std::fs::metadata(&p).unwrap().len() as usize, 14 + 4 * bag.len() * bag.dim() + 8 * bag.len());
        let back = read_bag(&p).unwrap();
        let bits = |b: &PatchBag| b.features.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&bag));
        let cbits = |b: &PatchBag| b.coords.iter().flat_map(|c| [c[0].to_bits(), c[1].to_bits()]).collect::<Vec<_>>();
        prop_assert_eq!(cbits(&back), cbits(&bag));
    }

    #[test]
    fn every_truncation_is_reported(cut in 0usize..40) {
        let bag = PatchBag::new("b", Matrix::filled(2, 2, 1.5f32), vec![[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let bytes = encode_bag(&bag);
        prop_assume!(cut < bytes.len());
        let r = decode_bag(&bytes[..cut], std::path::Path::new("b.pbag"), "b");
        prop_assert!(matches!(r, Err(Error::Truncated { .. })), "{:?}", r);
    }
}

fn bag_bytes(d: &Dataset) -> Vec<Vec<u8>> {
    d.samples.iter().map(|s| encode_bag(&s.bag)).collect()
}

#[test]
fn generators_are_deterministic() {
    let g = ClassificationGen { n_bags: 8, patches: 16, ..Default::default() };
    let (a, _) = gen_classification_dataset(3, &g).unwrap();
    let (b, _) = gen_classification_dataset(3, &g).unwrap();
    let (c, _) = gen_classification_dataset(4, &g).unwrap();
    assert_eq!(bag_bytes(&a), bag_bytes(&b));
    assert_ne!(bag_bytes(&a), bag_bytes(&c));
    let s = SurvivalGen { n_patients: 30, patches: 9, ..Default::default() };
    assert_eq!(gen_survival_dataset(1, &s).unwrap(), gen_survival_dataset(1, &s).unwrap());
}

#[test]
fn generator_argument_errors() {
    assert!(gen_classification_dataset(0, &ClassificationGen { n_bags: 3, ..Default::default() }).is_err());
    assert!(gen_survival_dataset(0, &SurvivalGen { n_patients: 19, ..Default::default() }).is_err());
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = SurvivalGen { n_patients: 25, patches: 9, missing_rate: 0.1, ..Default::default() };
    let (data, meta) = gen_survival_dataset(5, &s).unwrap();
    write_dataset(dir.path(), &data, "patient_id").unwrap();
    write_meta(dir.path(), &meta).unwrap();
    let mut back = read_dataset(dir.path(), Task::Survival, "patient_id", &survival_fields()).unwrap();
    for (b, a) in back.samples.iter_mut().zip(&data.samples) {
        assert_eq!(b.latent_risk.map(|x| (x - a.latent_risk.unwrap()).abs() < 1e-12), Some(true));
        b.latent_risk = a.latent_risk;
    }
    assert_eq!(back, data);

    let c = ClassificationGen { n_bags: 6, patches: 4, dim: 3, ..Default::default() };
    let (data, _) = gen_classification_dataset(2, &c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data, "patient_id").unwrap();
    assert_eq!(read_dataset(dir.path(), Task::Classification, "patient_id", &[]).unwrap(), data);
    assert!(matches!(read_dataset(dir.path(), Task::Survival, "patient_id", &[]), Err(Error::Schema(_))));
    std::fs::remove_file(dir.path().join("bags").join("bag_0000.pbag")).unwrap();
    assert!(matches!(read_dataset(dir.path(), Task::Classification, "patient_id", &[]), Err(Error::MissingFile(_))));
}

#[test]
fn event_fraction_tracks_censoring_target() {
    for (seed, rate) in [(1u64, 0.3), (2, 0.5), (3, 0.1)] {
        let g = SurvivalGen { n_patients: 600, patches: 4, dim: 2, censoring: rate, ..Default::default() };
        let (_, meta) = gen_survival_dataset(seed, &g).unwrap();
        let f = meta.event_fraction.unwrap();
        assert!((f - (1.0 - rate)).abs() <= 0.05, "rate {rate}: event fraction {f}");
    }
    let g = SurvivalGen { n_patients: 50, patches: 4, dim: 2, censoring: 0.0, ..Default::default() };
    let (d, meta) = gen_survival_dataset(9, &g).unwrap();
    assert_eq!(meta.event_fraction, Some(1.0));
    assert!(d.samples.iter().all(|s| s.target.survival().unwrap().event));
}

#[test]
fn oracle_c_index_from_latent_risk() {
    let (_, meta) = gen_survival_dataset(42, &SurvivalGen::default()).unwrap();
    let c = meta.oracle_c_index.unwrap();
    assert!(c > 0.85, "oracle C-index {c}");
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn zero_clinical_weight_leaves_clinical_fields_as_noise() {
    let g = SurvivalGen { n_patients: 600, patches: 4, dim: 2, w_cl: 0.0, ..Default::default() };
    let (d, _) = gen_survival_dataset(8, &g).unwrap();
    let age: Vec<f64> = d.samples.iter().map(|s| s.clinical.as_ref().unwrap()[0].as_ref().unwrap().parse().unwrap()).collect();
    let risk: Vec<f64> = d.samples.iter().map(|s| s.latent_risk.unwrap()).collect();
    assert!(pearson(&age, &risk).abs() < 0.1);
    let (d2, _) = gen_survival_dataset(8, &SurvivalGen { w_cl: 2.0, ..g }).unwrap();
    let r2: Vec<f64> = d2.samples.iter().map(|s| s.latent_risk.unwrap()).collect();
    assert!(pearson(&age, &r2) > 0.2);
    assert!(d.samples.iter().zip(&d2.samples).all(|(a, b)| a.clinical == b.clinical));
}

/// Ridge regression on mean bag features, scored by validation AUC.
fn mean_feature_probe(data: &Dataset, seed: u64) -> f64 {
    let ids: Vec<String> = data.samples.iter().map(|s| s.id.clone()).collect();
    let (tr, va) = split_dataset(&ids, seed, 0.8).unwrap();
    let feat = |id: &str| {
        let s = data.samples.iter().find(|s| s.id == id).unwrap();
        let mut m = s.bag.features.cast::<f64>().mean_rows().into_vec();
        m.push(1.0);
        (m, s.target.class().unwrap())
    };
    let train: Vec<_> = tr.iter().map(|i| feat(i)).collect();
    let d = train[0].0.len();
    let mut a = vec![vec![0.0; d + 1]; d];
    for (x, y) in &train {
        for i in 0..d {
            for j in 0..d {
                a[i][j] += x[i] * x[j];
            }
            a[i][d] += x[i] * if *y { 1.0 } else { -1.0 };
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += 1e-3;
    }
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        for r in 0..d {
            if r != c {
                let f = a[r][c] / a[c][c];
                let pivot = a[c].clone();
                for (v, pv) in a[r].iter_mut().zip(&pivot) {
                    *v -= f * pv;
                }
            }
        }
    }
    let w: Vec<f64> = (0..d).map(|i| a[i][d] / a[i][i]).collect();
    let (s, y): (Vec<f64>, Vec<bool>) =
        va.iter()
            .map(|i| {
                let (x, y) = feat(i);
                (x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>(), y)
            })
            .unzip();
    auc_roc(&s, &y).unwrap()
}

#[test]
fn planted_signal_is_linearly_detectable() {
    let (d, _) = gen_classification_dataset(42, &ClassificationGen::default()).unwrap();
    let auc = mean_feature_probe(&d, 42);
    assert!(auc > 0.9, "probe AUC {auc}");
}

#[test]
fn zero_tumor_fraction_carries_no_signal() {
    let mut aucs: Vec<f64> = (0..5)
        .map(|s| {
            let g = ClassificationGen { n_bags: 200, patches: 64, tumor_fraction: 0.0, ..Default::default() };
            mean_feature_probe(&gen_classification_dataset(s, &g).unwrap().0, s)
        })
        .collect();
    aucs.sort_by(f64::total_cmp);
    assert!((0.3..=0.7).contains(&aucs[2]), "null probe AUCs {aucs:?}");
}
