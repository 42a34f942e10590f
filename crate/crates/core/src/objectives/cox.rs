//! Cox negative partial log-likelihood with Breslow ties and a risk-norm penalty.

use super::SurvivalLabel;
use crate::error::{Error, Result};
use crate::numkit::{CustomOp, Matrix, Real, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct CoxResult {
    pub loss: f64,
    /// `∂loss/∂r`.
    pub grad: Vec<f64>,
    /// No events: only the penalty contributes.
    pub no_events: bool,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `−(1/n)·Σ_{δᵢ=1}[rᵢ − log Σ_{tⱼ≥tᵢ} e^{rⱼ}] + λ·‖r‖₂` and its gradient, in O(n log n).
pub fn cox_value_and_grad(risks: &[f64], labels: &[SurvivalLabel], lambda_reg: f64) -> Result<CoxResult> {
    let n = risks.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cox loss needs at least one patient".into()));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} risks for {} labels", labels.len())));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| labels[b].time.total_cmp(&labels[a].time));

    // descending time: log of the risk-set sum for each tied-time group
    let mut lse = vec![0.0; n];
    let mut acc = f64::NEG_INFINITY;
    let mut g = 0;
    while g < n {
        let mut e = g;
        while e < n && labels[order[e]].time == labels[order[g]].time {
            acc = log_add_exp(acc, risks[order[e]]);
            e += 1;
        }
        for &i in &order[g..e] {
            lse[i] = acc;
        }
        g = e;
    }

    let inv_n = 1.0 / n as f64;
    let mut partial = 0.0;
    let mut events = 0usize;
    for i in 0..n {
        if labels[i].event {
            partial += risks[i] - lse[i];
            events += 1;
        }
    }
    let mut grad: Vec<f64> = (0..n).map(|i| if labels[i].event { -inv_n } else { 0.0 }).collect();

    // ascending time: log Σ_{events i, tᵢ ≤ t_k} e^{−lseᵢ}
    let mut acc = f64::NEG_INFINITY;
    let mut g = n;
    while g > 0 {
        let mut s = g;
        while s > 0 && labels[order[s - 1]].time == labels[order[g - 1]].time {
            let i = order[s - 1];
            if labels[i].event {
                acc = log_add_exp(acc, -lse[i]);
            }
            s -= 1;
        }
        for &k in &order[s..g] {
            if acc > f64::NEG_INFINITY {
                grad[k] += inv_n * (risks[k] + acc).exp();
            }
        }
        g = s;
    }

    let norm = risks.iter().map(|r| r * r).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (gk, r) in grad.iter_mut().zip(risks) {
            *gk += lambda_reg * r / norm;
        }
    }
    Ok(CoxResult { loss: -inv_n * partial + lambda_reg * norm, grad, no_events: events == 0 })
}

struct CoxOp {
    grad: Vec<f64>,
}

impl<T: Real> CustomOp<T> for CoxOp {
    fn backward(&self, inputs: &[&Matrix<T>], _output: &Matrix<T>, g: &Matrix<T>) -> Vec<Option<Matrix<T>>> {
        let s = g.data()[0];
        let (r, c) = inputs[0].shape();
        vec![Some(Matrix::from_vec(r, c, self.grad.iter().map(|&v| T::lit(v) * s).collect()))]
    }
}

/// Records the Cox loss of a risk column (`n × 1` or `1 × n`). Returns the
/// scalar loss and whether the event set was empty.
pub fn cox_loss<T: Real>(tape: &mut Tape<T>, risks: Var, labels: &[SurvivalLabel], lambda_reg: f64) -> Result<(Var, bool)> {
    let r: Vec<f64> = tape.value(risks).data().iter().map(|v| v.as_f64()).collect();
    let res = cox_value_and_grad(&r, labels, lambda_reg)?;
    let v = tape.custom(&[risks], Matrix::scalar(T::lit(res.loss)), Box::new(CoxOp { grad: res.grad }));
    Ok((v, res.no_events))
}
