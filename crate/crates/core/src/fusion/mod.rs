//! Two-input feature fusion: concatenation, optional squeeze-and-excitation
//! gating, and layer normalization.

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{linear, Bound, Matrix, ParameterStore, Real, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Plain concatenation.
    None,
    /// Affine map on the concatenation, then layer norm.
    Linear,
    /// Bottleneck sigmoid gate on the concatenation, then layer norm.
    Se,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "linear" => Ok(Self::Linear),
            "se" => Ok(Self::Se),
            other => Err(Error::Config(format!("unknown fusion mode {other:?} (expected none, linear or se)"))),
        }
    }
}

pub fn fusion_mode(token: &str) -> Result<FusionMode> {
    token.parse()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub reduction: usize,
    pub gate_bias: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { mode: FusionMode::Se, reduction: 16, gate_bias: true }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reduction == 0 {
            return Err(Error::Config("fusion reduction ratio must be at least 1".into()));
        }
        Ok(())
    }
}

/// Parameter layout for one fusion site of inputs `d1` and `d2`:
/// `{prefix}.down`, `{prefix}.up` (SE), `{prefix}.lin` (linear mode) and
/// `{prefix}.ln.{gamma,beta}`.
#[derive(Clone, Debug)]
pub struct FfmWeights {
    pub config: FusionConfig,
    pub d1: usize,
    pub d2: usize,
    pub prefix: String,
}

impl FfmWeights {
    pub fn new(config: FusionConfig, d1: usize, d2: usize, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, d1, d2, prefix: prefix.into() })
    }

    pub fn out_dim(&self) -> usize {
        self.d1 + self.d2
    }

    pub fn bottleneck(&self) -> usize {
        (self.out_dim() / self.config.reduction).max(1)
    }

    pub fn init_params<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        let d = self.out_dim();
        let p = &self.prefix;
        match self.config.mode {
            FusionMode::None => return Ok(()),
            FusionMode::Se => {
                let r = self.bottleneck();
                store.insert_glorot(&format!("{p}.down.w"), d, r, rng)?;
                // gates start at a uniform ½ instead of a random function of the row
                store.insert_zeros(&format!("{p}.up.w"), r, d)?;
                if self.config.gate_bias {
                    store.insert_zeros(&format!("{p}.down.b"), 1, r)?;
                    store.insert_zeros(&format!("{p}.up.b"), 1, d)?;
                }
            }
            FusionMode::Linear => {
                store.insert_glorot(&format!("{p}.lin.w"), d, d, rng)?;
                store.insert_zeros(&format!("{p}.lin.b"), 1, d)?;
            }
        }
        store.insert(format!("{p}.ln.gamma"), Matrix::filled(1, d, T::one()))?;
        store.insert_zeros(&format!("{p}.ln.beta"), 1, d)?;
        Ok(())
    }

    /// Sigmoid gates for an already concatenated input (SE mode only).
    pub fn gates<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Var {
        let s = linear(tape, p, &format!("{}.down", self.prefix), x);
        let s = tape.relu(s);
        let s = linear(tape, p, &format!("{}.up", self.prefix), s);
        tape.sigmoid(s)
    }
}

/// Fuses row batches `f1` (`B × d1`) and `f2` (`B × d2`) into `B × (d1+d2)`.
pub fn ffm<T: Real>(tape: &mut Tape<T>, p: &Bound, w: &FfmWeights, f1: Var, f2: Var) -> Result<Var> {
    let (r1, c1) = tape.value(f1).shape();
    let (r2, c2) = tape.value(f2).shape();
    if r1 != r2 {
        return Err(Error::Shape(format!("fusion inputs have {r1} and {r2} rows")));
    }
    if c1 != w.d1 || c2 != w.d2 {
        return Err(Error::Shape(format!(
            "fusion expects widths ({}, {}), got ({c1}, {c2})",
            w.d1, w.d2
        )));
    }
    let x = tape.concat_cols(&[f1, f2]);
    let pre = match w.config.mode {
        FusionMode::None => return Ok(x),
        FusionMode::Linear => linear(tape, p, &format!("{}.lin", w.prefix), x),
        FusionMode::Se => {
            let g = w.gates(tape, p, x);
            tape.mul(x, g)
        }
    };
    let gamma = p.var(&format!("{}.ln.gamma", w.prefix));
    let beta = p.var(&format!("{}.ln.beta", w.prefix));
    Ok(tape.layer_norm_rows(pre, gamma, beta, T::lit(LAYER_NORM_EPS)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mode_tokens() {
        assert_eq!(fusion_mode("se").unwrap(), FusionMode::Se);
        assert_eq!(fusion_mode("linear").unwrap(), FusionMode::Linear);
        assert_eq!(fusion_mode("none").unwrap(), FusionMode::None);
        assert!(matches!(fusion_mode("SE"), Err(Error::Config(_))));
        assert!(fusion_mode("attention").is_err());
    }

    #[test]
    fn bottleneck_is_clamped() {
        let w = FfmWeights::new(FusionConfig::default(), 3, 4, "f").unwrap();
        assert_eq!(w.bottleneck(), 1);
        let w = FfmWeights::new(FusionConfig::default(), 256, 256, "f").unwrap();
        assert_eq!(w.bottleneck(), 32);
        assert!(FfmWeights::new(FusionConfig { reduction: 0, ..Default::default() }, 1, 1, "f").is_err());
    }

    #[test]
    fn output_width_and_row_mismatch() {
        let w = FfmWeights::new(FusionConfig::default(), 5, 3, "f").unwrap();
        let mut store = ParameterStore::<f64>::new();
        w.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let a = tape.constant(Matrix::from_fn(4, 5, |i, j| (i + j) as f64 * 0.3));
        let b = tape.constant(Matrix::from_fn(4, 3, |i, j| (i * j) as f64 - 1.0));
        let out = ffm(&mut tape, &p, &w, a, b).unwrap();
        assert_eq!(tape.value(out).shape(), (4, 8));
        let c = tape.constant(Matrix::zeros(2, 3));
        assert!(matches!(ffm(&mut tape, &p, &w, a, c), Err(Error::Shape(_))));
        let d = tape.constant(Matrix::zeros(4, 2));
        assert!(ffm(&mut tape, &p, &w, a, d).is_err());
    }
}
