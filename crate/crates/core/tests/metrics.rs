use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use slidefuse::metrics::*;
use slidefuse::objectives::SurvivalLabel;

fn c_index_oracle(r: &[f64], l: &[SurvivalLabel]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..r.len() {
        for j in 0..r.len() {
            if l[i].event && l[i].time < l[j].time {
                den += 1.0;
                if r[i] > r[j] {
                    num += 1.0;
                } else if r[i] == r[j] {
                    num += 0.5;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

fn auc_oracle(s: &[f64], y: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] && !y[j] {
                den += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

#[test]
fn c_index_equals_pair_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
        let l: Vec<SurvivalLabel> = (0..n)
            .map(|_| SurvivalLabel { time: rng.random_range(0..10) as f64, event: rng.random_bool(0.5) })
            .collect();
        match c_index_oracle(&r, &l) {
            Some(e) => {
                assert_eq!(c_index(&r, &l).unwrap(), e);
                checked += 1;
            }
            None => assert!(c_index(&r, &l).is_err()),
        }
    }
    assert!(checked > 150);
}

#[test]
fn auc_equals_pair_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let n: usize = rng.random_range(2..60);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
        let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        y[0] = true;
        y[1] = false;
        assert_eq!(auc_roc(&s, &y).unwrap(), auc_oracle(&s, &y));
    }
}

proptest! {
    #[test]
    fn auc_of_negated_scores_is_complement(seed: u64, n in 2usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        y[0] = true;
        y[1] = false;
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auc_roc(&s, &y).unwrap() + auc_roc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn km_is_a_nonincreasing_step_function(seed: u64, n in 1usize..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l: Vec<SurvivalLabel> = (0..n)
            .map(|_| SurvivalLabel { time: rng.random_range(0..30) as f64, event: rng.random_bool(0.6) })
            .collect();
        let c = km_estimate(&l).unwrap();
        let mut prev = 1.0;
        for k in 0..c.times.len() {
            prop_assert!(c.survival[k] <= prev && c.survival[k] >= 0.0);
            prop_assert!(c.lower[k] <= c.survival[k] && c.survival[k] <= c.upper[k]);
            prop_assert!(c.lower[k] >= 0.0 && c.upper[k] <= 1.0);
            prop_assert_eq!(c.survival_at(c.times[k]), c.survival[k]);
            prop_assert_eq!(c.survival_at(c.times[k] - 1e-9), prev);
            prev = c.survival[k];
        }
        prop_assert_eq!(c.survival_at(-1.0), 1.0);
    }
}

#[test]
fn km_matches_direct_product_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l: Vec<SurvivalLabel> = (0..60)
        .map(|_| SurvivalLabel { time: rng.random_range(0..15) as f64, event: rng.random_bool(0.7) })
        .collect();
    let c = km_estimate(&l).unwrap();
    for t in 0..16 {
        let t = t as f64;
        let mut s = 1.0;
        for u in 0..=t as usize {
            let u = u as f64;
            let n = l.iter().filter(|x| x.time >= u).count() as f64;
            let d = l.iter().filter(|x| x.time == u && x.event).count() as f64;
            if d > 0.0 {
                s *= 1.0 - d / n;
            }
        }
        assert!((c.survival_at(t) - s).abs() < 1e-12);
    }
}

fn exp_arm(rng: &mut ChaCha8Rng, n: usize, hazard: f64) -> Vec<SurvivalLabel> {
    let ev = Exp::new(hazard).unwrap();
    let cens = Exp::new(0.02).unwrap();
    (0..n)
        .map(|_| {
            let (t, c) = (ev.sample(rng), cens.sample(rng));
            SurvivalLabel { time: t.min(c), event: t <= c }
        })
        .collect()
}

#[test]
fn log_rank_detects_hazard_ratio_four() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = exp_arm(&mut rng, 200, 0.4);
    let b = exp_arm(&mut rng, 200, 0.1);
    let r = log_rank(&a, &b).unwrap();
    assert!(r.p_value < 1e-4, "{r:?}");
    let s = log_rank(&b, &a).unwrap();
    assert!((r.chi2 - s.chi2).abs() < 1e-9 * r.chi2);
}

#[test]
fn log_rank_p_values_are_uniform_under_shuffling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pool = exp_arm(&mut rng, 120, 0.2);
    let mut p = Vec::new();
    for _ in 0..500 {
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(&mut rng);
        let a: Vec<SurvivalLabel> = idx[..60].iter().map(|&i| pool[i]).collect();
        let b: Vec<SurvivalLabel> = idx[60..].iter().map(|&i| pool[i]).collect();
        let r = log_rank(&a, &b).unwrap();
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        p.push(r.p_value);
    }
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let ks = p
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / n - v).abs().max((v - i as f64 / n).abs()))
        .fold(0.0, f64::max);
    assert!(ks < 0.1, "KS distance {ks}");
}

#[test]
fn stratification_matches_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let r: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        let mut s = r.clone();
        s.sort_by(f64::total_cmp);
        let g = stratify_by_risk(&r).unwrap();
        for (v, grp) in r.iter().zip(&g) {
            assert_eq!(*grp == RiskGroup::High, *v > s[2]);
        }
        assert_eq!(g.iter().filter(|x| **x == RiskGroup::High).count(), 2);
    }
}

#[test]
fn accuracy_matches_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let p: Vec<bool> = (0..100).map(|_| rng.random_bool(0.5)).collect();
    let y: Vec<bool> = (0..100).map(|_| rng.random_bool(0.5)).collect();
    let mut hits = 0;
    for i in 0..100 {
        if p[i] == y[i] {
            hits += 1;
        }
    }
    assert_eq!(accuracy(&p, &y).unwrap(), hits as f64 / 100.0);
}

#[test]
fn km_exports() {
    let l = [
        SurvivalLabel { time: 1.0, event: true },
        SurvivalLabel { time: 2.0, event: false },
        SurvivalLabel { time: 3.0, event: true },
    ];
    let c = km_estimate(&l).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("km.csv");
    write_km_csv(&path, &[("high", &c), ("low", &c)]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "time,survival,lower,upper,n_at_risk,group");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(lines[1].starts_with("0,1,1,1,3,high"));
    let svg = km_svg(&[("high", &c)], "risk <groups>");
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("&lt;groups&gt;"));
}
