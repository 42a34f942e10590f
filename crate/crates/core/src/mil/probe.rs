//! Wall-clock scaling of the MIL encoder in the bag size.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::block::MilEncoder;
use crate::error::{Error, Result};
use crate::numkit::{Matrix, ParameterStore, Tape};

pub const MIN_PROBE_SIZE: usize = 1024;

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub sizes: Vec<usize>,
    /// Best-of-`repeats` seconds per size.
    pub seconds: Vec<f64>,
    /// `seconds[i+1] / seconds[i]`.
    pub ratios: Vec<f64>,
    /// Least-squares slope of `ln t` on `ln N`.
    pub exponent: f64,
}

/// Times the encoder forward pass (no selection, no stored scan states)
/// on random bags of each size.
pub fn complexity_probe(
    encoder: &MilEncoder,
    store: &ParameterStore<f32>,
    sizes: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if sizes.len() < 3 {
        return Err(Error::InvalidArgument("complexity probe needs at least three sizes".into()));
    }
    if let Some(&s) = sizes.iter().find(|&&s| s < MIN_PROBE_SIZE) {
        return Err(Error::InvalidArgument(format!("probe size {s} below {MIN_PROBE_SIZE}")));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("probe sizes must be strictly increasing".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Matrix<f32>> =
        sizes.iter().map(|&n| Matrix::from_fn(n, encoder.in_dim, |_, _| rng.random_range(-1.0f32..1.0))).collect();
    // repeats cycle through all sizes so a transient slowdown hits every size, not one
    let mut seconds = vec![f64::INFINITY; sizes.len()];
    for _ in 0..repeats.max(1) {
        for (x, best) in inputs.iter().zip(seconds.iter_mut()) {
            let mut tape = Tape::inference();
            let p = store.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let start = Instant::now();
            let out = encoder.forward(&mut tape, &p, xv)?;
            std::hint::black_box(tape.value(out.z_bag));
            *best = best.min(start.elapsed().as_secs_f64());
        }
    }
    for t in &mut seconds {
        *t = t.max(1e-9);
    }
    let ratios = seconds.windows(2).map(|w| w[1] / w[0]).collect();
    let lx: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = seconds.iter().map(|t| t.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(ProbeReport { sizes: sizes.to_vec(), seconds, ratios, exponent: sxy / sxx })
}
