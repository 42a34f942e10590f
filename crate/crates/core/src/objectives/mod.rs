//! Prediction heads and training objectives.

mod cox;

pub use cox::{cox_loss, cox_value_and_grad, CoxResult};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{linear, Bound, ParameterStore, Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Survival,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    /// Observed time in days.
    pub time: f64,
    /// `true` for an event, `false` for censoring.
    pub event: bool,
}

impl SurvivalLabel {
    pub fn new(time: f64, event: bool) -> Result<Self> {
        if !(time >= 0.0) || !time.is_finite() {
            return Err(Error::InvalidArgument(format!("survival time {time} must be finite and nonnegative")));
        }
        Ok(Self { time, event })
    }
}

/// Linear ramp of the L2 coefficient from `start` (first epoch) to `end` (last epoch).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct L2Ramp {
    pub start: f64,
    pub end: f64,
}

impl L2Ramp {
    pub fn at(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 {
            return self.end;
        }
        let f = (epoch.min(epochs - 1)) as f64 / (epochs - 1) as f64;
        self.start + (self.end - self.start) * f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_reg: f64,
    pub l2_ramp: L2Ramp,
    pub recon_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_reg: 1e-4, l2_ramp: L2Ramp { start: 1e-6, end: 1e-4 }, recon_weight: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_reg, self.l2_ramp.start, self.l2_ramp.end, self.recon_weight];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Affine head `{prefix}.w` (d×out), `{prefix}.b` (1×out).
pub fn init_head<T: Real, R: Rng>(
    store: &mut ParameterStore<T>,
    prefix: &str,
    d: usize,
    out: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert_glorot(&format!("{prefix}.w"), d, out, rng)?;
    store.insert_zeros(&format!("{prefix}.b"), 1, out)
}

fn check_head<T: Real>(tape: &Tape<T>, p: &Bound, prefix: &str, z: Var) -> Result<()> {
    let w = p
        .try_var(&format!("{prefix}.w"))
        .ok_or_else(|| Error::Shape(format!("missing head weights {prefix}.w")))?;
    let (d, _) = tape.value(w).shape();
    if tape.value(z).cols() != d {
        return Err(Error::Shape(format!("head {prefix} expects width {d}, got {}", tape.value(z).cols())));
    }
    Ok(())
}

/// Class logits `z·W + b` (no activation).
pub fn classification_head<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, z: Var) -> Result<Var> {
    check_head(tape, p, prefix, z)?;
    Ok(linear(tape, p, prefix, z))
}

/// Risk `σ(z·W + b)` in `(0, 1)`.
pub fn survival_head<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, z: Var) -> Result<Var> {
    check_head(tape, p, prefix, z)?;
    let r = linear(tape, p, prefix, z);
    Ok(tape.sigmoid(r))
}

/// Collapses two-class logits (`n × 2`) to the scalar BCE logit `l₁ − l₀` (`n × 1`).
pub fn binary_logit<T: Real>(tape: &mut Tape<T>, logits: Var) -> Result<Var> {
    if tape.value(logits).cols() != 2 {
        return Err(Error::Shape(format!("binary logit needs 2 classes, got {}", tape.value(logits).cols())));
    }
    let l1 = tape.slice_cols(logits, 1, 1);
    let l0 = tape.slice_cols(logits, 0, 1);
    Ok(tape.sub(l1, l0))
}

/// `½·BCE(bag, y) + ½·BCE(max instance, y)` on scalar logits.
pub fn classification_loss<T: Real>(tape: &mut Tape<T>, bag_logit: Var, instance_logits: Var, label: bool) -> Result<Var> {
    if tape.value(bag_logit).len() != 1 {
        return Err(Error::Shape("bag logit must be a scalar".into()));
    }
    if tape.value(instance_logits).is_empty() {
        return Err(Error::EmptyBag);
    }
    let y = if label { T::one() } else { T::zero() };
    let lb = tape.bce_logits(bag_logit, y);
    let m = tape.max_all(instance_logits);
    let li = tape.bce_logits(m, y);
    let s = tape.add(lb, li);
    Ok(tape.scale(s, T::lit(0.5)))
}

/// `L_task + w_rec·L_clinical + λ_L2·Σ‖θ‖²` over the penalized parameters.
pub fn total_loss<T: Real>(
    tape: &mut Tape<T>,
    task: Var,
    clinical: Option<Var>,
    recon_weight: f64,
    lambda_l2: f64,
    penalized: &[Var],
) -> Var {
    let mut total = task;
    if let Some(c) = clinical {
        let c = tape.scale(c, T::lit(recon_weight));
        total = tape.add(total, c);
    }
    if lambda_l2 != 0.0 {
        for &w in penalized {
            let sq = tape.mul(w, w);
            let s = tape.sum_all(sq);
            let s = tape.scale(s, T::lit(lambda_l2));
            total = tape.add(total, s);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Matrix;

    fn bce(x: f64, y: f64) -> f64 {
        x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
    }

    #[test]
    fn uniform_logits_cost_ln2() {
        let mut tape = Tape::<f64>::new();
        let b = tape.leaf(Matrix::scalar(0.0));
        let i = tape.leaf(Matrix::col_vector(vec![0.0; 5]));
        for y in [true, false] {
            let l = classification_loss(&mut tape, b, i, y).unwrap();
            assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_correct_logits_cost_nothing() {
        let mut tape = Tape::<f64>::new();
        let b = tape.leaf(Matrix::scalar(20.0));
        let i = tape.leaf(Matrix::col_vector(vec![-3.0, 20.0]));
        let l = classification_loss(&mut tape, b, i, true).unwrap();
        assert!(tape.scalar(l) < 1e-8 && tape.scalar(l) >= 0.0);
    }

    #[test]
    fn hand_evaluated_negative_bag() {
        let mut tape = Tape::<f64>::new();
        let b = tape.leaf(Matrix::scalar(-1.0));
        let i = tape.leaf(Matrix::col_vector(vec![-2.0, 0.5]));
        let l = classification_loss(&mut tape, b, i, false).unwrap();
        let hand = 0.5 * (1f64.exp().recip()).ln_1p() + 0.5 * (0.5f64.exp()).ln_1p();
        assert!((tape.scalar(l) - hand).abs() < 1e-14);
        assert!((hand - 0.5 * (bce(-1.0, 0.0) + bce(0.5, 0.0))).abs() < 1e-15);
    }

    #[test]
    fn heads() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("cls.w", Matrix::identity(2)).unwrap();
        store.insert("cls.b", Matrix::zeros(1, 2)).unwrap();
        store.insert("surv.w", Matrix::scalar(0.5)).unwrap();
        store.insert("surv.b", Matrix::scalar(-1.0)).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let z = tape.constant(Matrix::row_vector(vec![3.0, -1.0]));
        let l = classification_head(&mut tape, &p, "cls", z).unwrap();
        assert_eq!(tape.value(l).data(), &[3.0, -1.0]);
        let s = binary_logit(&mut tape, l).unwrap();
        assert_eq!(tape.scalar(s), -4.0);
        let z1 = tape.constant(Matrix::scalar(2.0));
        let r = survival_head(&mut tape, &p, "surv", z1).unwrap();
        assert_eq!(tape.scalar(r), 0.5);
        assert!(classification_head(&mut tape, &p, "cls", z1).is_err());
        assert!(survival_head(&mut tape, &p, "missing", z1).is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        let mut tape = Tape::<f64>::new();
        let t = tape.leaf(Matrix::scalar(1.0));
        let c = tape.leaf(Matrix::scalar(2.0));
        let w = tape.leaf(Matrix::row_vector(vec![3.0, 4.0]));
        let l = total_loss(&mut tape, t, Some(c), 0.1, 0.0, &[w]);
        assert!((tape.scalar(l) - 1.2).abs() < 1e-15);
        let l = total_loss(&mut tape, t, None, 0.1, 1e-4, &[w]);
        assert!((tape.scalar(l) - (1.0 + 1e-4 * 25.0)).abs() < 1e-15);
        let l = total_loss(&mut tape, t, Some(c), 0.0, 0.0, &[]);
        assert_eq!(tape.scalar(l), 1.0);
    }

    #[test]
    fn l2_ramp_endpoints() {
        let r = LossConfig::default().l2_ramp;
        assert_eq!(r.at(0, 50), 1e-6);
        assert!((r.at(49, 50) - 1e-4).abs() < 1e-18);
        assert!(r.at(10, 50) < r.at(11, 50));
        assert_eq!(r.at(0, 1), 1e-4);
    }

    #[test]
    fn label_validation() {
        assert!(SurvivalLabel::new(-1.0, true).is_err());
        assert!(SurvivalLabel::new(f64::NAN, true).is_err());
        assert!(SurvivalLabel::new(0.0, false).is_ok());
    }
}
