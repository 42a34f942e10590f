//! Synthetic bag datasets with planted spatial, image and clinical signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, DatasetMeta, Sample, Target};
use crate::clinical::FieldSpec;
use crate::error::{Error, Result};
use crate::graph::PatchBag;
use crate::metrics::c_index;
use crate::numkit::Matrix;
use crate::objectives::{SurvivalLabel, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationGen {
    pub n_bags: usize,
    pub patches: usize,
    pub dim: usize,
    /// Fraction of patches in the tumor cluster of a positive bag.
    pub tumor_fraction: f64,
    /// Tumor mean shift along a hidden direction, in noise standard deviations.
    pub shift: f64,
    /// Common mean of every feature, which keeps neighbouring patches similar.
    pub base_mean: f64,
    /// Tile stride in pixels.
    pub stride: f64,
    /// Negative bags get the same number of shifted patches, scattered
    /// instead of clustered, so only spatial structure separates the classes.
    pub decoys: bool,
}

impl Default for ClassificationGen {
    fn default() -> Self {
        Self {
            n_bags: 200,
            patches: 256,
            dim: 32,
            tumor_fraction: 0.1,
            shift: 2.0,
            base_mean: 2.0,
            stride: 256.0,
            decoys: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurvivalGen {
    pub n_patients: usize,
    pub patches: usize,
    pub dim: usize,
    /// Weight of the image factor in the latent log-hazard.
    pub w_img: f64,
    /// Weight of the clinical factor; 0 leaves every clinical field as noise.
    pub w_cl: f64,
    /// Target fraction of censored patients.
    pub censoring: f64,
    /// Baseline hazard per day.
    pub base_hazard: f64,
    pub shift: f64,
    pub base_mean: f64,
    pub stride: f64,
    /// Probability that a clinical cell is left empty.
    pub missing_rate: f64,
}

impl Default for SurvivalGen {
    fn default() -> Self {
        Self {
            n_patients: 300,
            patches: 48,
            dim: 16,
            w_img: 2.0,
            w_cl: 2.0,
            censoring: 0.3,
            base_hazard: 1e-3,
            shift: 2.0,
            base_mean: 2.0,
            stride: 256.0,
            missing_rate: 0.0,
        }
    }
}

/// Clinical fields written by [`gen_survival_dataset`].
pub fn survival_fields() -> Vec<FieldSpec> {
    vec![
        FieldSpec::numeric("age"),
        FieldSpec::categorical("stage"),
        FieldSpec::numeric("grade"),
        FieldSpec::categorical("sex"),
    ]
}

fn bag_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index as u64 + 1);
    r
}

fn unit_direction(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn grid_coords(n: usize, stride: f64) -> Vec<[f32; 2]> {
    let side = (n as f64).sqrt().ceil() as usize;
    (0..n).map(|i| [((i % side) as f64 * stride) as f32, ((i / side) as f64 * stride) as f32]).collect()
}

/// The `k` patches nearest a random centre (ties by index): a contiguous blob.
fn cluster(rng: &mut ChaCha8Rng, coords: &[[f32; 2]], k: usize) -> Vec<usize> {
    let c = coords[rng.random_range(0..coords.len())];
    let mut idx: Vec<usize> = (0..coords.len()).collect();
    let dist = |i: usize| {
        let (dx, dy) = (coords[i][0] - c[0], coords[i][1] - c[1]);
        dx * dx + dy * dy
    };
    idx.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn patch_features(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    base: f64,
    shifted: &[usize],
    dir: &[f64],
    shift: f64,
) -> Matrix<f32> {
    let mut f = Matrix::from_fn(n, d, |_, _| (base + rng.sample::<f64, _>(StandardNormal)) as f32);
    for &i in shifted {
        for (v, u) in f.row_mut(i).iter_mut().zip(dir) {
            *v += (shift * u) as f32;
        }
    }
    f
}

fn check_common(patches: usize, dim: usize, stride: f64) -> Result<()> {
    if patches == 0 || dim == 0 {
        return Err(Error::InvalidArgument("generator needs at least one patch and one feature".into()));
    }
    if !(stride > 0.0) {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    Ok(())
}

pub fn gen_classification_dataset(seed: u64, cfg: &ClassificationGen) -> Result<(Dataset, DatasetMeta)> {
    if cfg.n_bags < 4 {
        return Err(Error::InvalidArgument("classification generator needs at least 4 bags".into()));
    }
    check_common(cfg.patches, cfg.dim, cfg.stride)?;
    if !(0.0..=1.0).contains(&cfg.tumor_fraction) {
        return Err(Error::InvalidArgument("tumor_fraction must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = unit_direction(&mut rng, cfg.dim);
    let mut labels: Vec<bool> = (0..cfg.n_bags).map(|i| i < cfg.n_bags / 2).collect();
    labels.shuffle(&mut rng);
    let coords = grid_coords(cfg.patches, cfg.stride);
    let k = (cfg.tumor_fraction * cfg.patches as f64).round() as usize;
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &pos)| {
            let mut r = bag_rng(seed, i);
            let shifted = if pos {
                cluster(&mut r, &coords, k)
            } else if cfg.decoys {
                let mut all: Vec<usize> = (0..cfg.patches).collect();
                all.shuffle(&mut r);
                all.truncate(k);
                all
            } else {
                Vec::new()
            };
            let f = patch_features(&mut r, cfg.patches, cfg.dim, cfg.base_mean, &shifted, &dir, cfg.shift);
            let id = format!("bag_{i:04}");
            let bag = PatchBag::new(id.clone(), f, coords.clone())?;
            Ok(Sample { id, bag, target: Target::Class(pos), clinical: None, latent_risk: None })
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = DatasetMeta { task: Task::Classification, samples: samples.len(), seed, event_fraction: None, oracle_c_index: None };
    Ok((Dataset { task: Task::Classification, samples, clinical_fields: Vec::new() }, meta))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Upper end `c` of a uniform censoring window with `mean(max(0, 1 − tᵢ/c)) = target`.
fn censoring_window(times: &[f64], event_target: f64) -> f64 {
    let frac = |c: f64| times.iter().map(|t| (1.0 - t / c).max(0.0)).sum::<f64>() / times.len() as f64;
    let (mut lo, mut hi) = (1e-12, times.iter().cloned().fold(1.0, f64::max));
    while frac(hi) < event_target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) < event_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const STAGES: [&str; 4] = ["I", "II", "III", "IV"];

pub fn gen_survival_dataset(seed: u64, cfg: &SurvivalGen) -> Result<(Dataset, DatasetMeta)> {
    if cfg.n_patients < 20 {
        return Err(Error::InvalidArgument("survival generator needs at least 20 patients".into()));
    }
    check_common(cfg.patches, cfg.dim, cfg.stride)?;
    if !(0.0..1.0).contains(&cfg.censoring) || !(0.0..1.0).contains(&cfg.missing_rate) {
        return Err(Error::InvalidArgument("censoring and missing_rate must lie in [0, 1)".into()));
    }
    if !(cfg.base_hazard > 0.0) {
        return Err(Error::InvalidArgument("base_hazard must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = unit_direction(&mut rng, cfg.dim);
    let coords = grid_coords(cfg.patches, cfg.stride);
    let stage_effect = |s: usize| (s as f64 - 1.5) / 1.25f64.sqrt();

    let mut samples = Vec::with_capacity(cfg.n_patients);
    let mut latent = Vec::with_capacity(cfg.n_patients);
    let mut times = Vec::with_capacity(cfg.n_patients);
    for i in 0..cfg.n_patients {
        let mut r = bag_rng(seed, i);
        let z_img: f64 = r.sample(StandardNormal);
        let frac = 0.05 + 0.5 * sigmoid(1.7 * z_img);
        let k = ((frac * cfg.patches as f64).round() as usize).min(cfg.patches);
        let shifted = cluster(&mut r, &coords, k);
        let f = patch_features(&mut r, cfg.patches, cfg.dim, cfg.base_mean, &shifted, &dir, cfg.shift);

        let age_z: f64 = r.sample(StandardNormal);
        let stage = r.random_range(0..4);
        let grade = r.random_range(1..=3);
        let sex = if r.random_bool(0.5) { "F" } else { "M" };
        let s_cl = 0.6 * age_z + 0.8 * stage_effect(stage);
        let eta = cfg.w_img * z_img + cfg.w_cl * s_cl;
        let u: f64 = r.random_range(f64::EPSILON..1.0);
        let t = -u.ln() / (cfg.base_hazard * eta.exp());
        let mut cell = |v: String| (!r.random_bool(cfg.missing_rate)).then_some(v);
        let clinical = vec![
            cell(format!("{:.1}", 60.0 + 10.0 * age_z)),
            cell(STAGES[stage].to_string()),
            cell(grade.to_string()),
            cell(sex.to_string()),
        ];
        let id = format!("pt_{i:04}");
        samples.push(Sample {
            id: id.clone(),
            bag: PatchBag::new(id, f, coords.clone())?,
            target: Target::Class(false),
            clinical: Some(clinical),
            latent_risk: Some(eta),
        });
        latent.push(eta);
        times.push(t);
    }

    let window = (cfg.censoring > 0.0).then(|| censoring_window(&times, 1.0 - cfg.censoring));
    let mut crng = ChaCha8Rng::seed_from_u64(seed);
    crng.set_stream(0);
    let mut labels = Vec::with_capacity(times.len());
    for (s, &t) in samples.iter_mut().zip(&times) {
        let label = match window {
            Some(c) => {
                let ct = crng.random_range(0.0..c);
                SurvivalLabel { time: t.min(ct), event: t <= ct }
            }
            None => SurvivalLabel { time: t, event: true },
        };
        s.target = Target::Survival(label);
        labels.push(label);
    }
    let events = labels.iter().filter(|l| l.event).count() as f64 / labels.len() as f64;
    let oracle = c_index(&latent, &labels)?;
    let meta = DatasetMeta {
        task: Task::Survival,
        samples: samples.len(),
        seed,
        event_fraction: Some(events),
        oracle_c_index: Some(oracle),
    };
    Ok((Dataset { task: Task::Survival, samples, clinical_fields: survival_fields() }, meta))
}
