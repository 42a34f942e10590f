//! Diagonal linear recurrence `h_t = ā_t ⊙ h_{t-1} + b̄_t · x_t`,
//! `y_t = ⟨c_t, h_t⟩ + D ⊙ x_t`, run sequentially in O(T).

use crate::error::{Error, Result};
use crate::numkit::{CustomOp, Matrix, Real, Tape, Var};

/// Source of the per-step transition `ā_t` and input gain `b̄_t`, both laid
/// out as `inner × state` (row-major).
pub trait Discretization<T: Real> {
    fn steps(&self) -> usize;
    fn inner(&self) -> usize;
    fn state(&self) -> usize;
    fn step(&self, t: usize, abar: &mut [T], bbar: &mut [T]);
}

/// Fully materialized `ā`, `b̄` of length `T · inner · state`.
pub struct Explicit<T> {
    pub steps: usize,
    pub inner: usize,
    pub state: usize,
    pub abar: Vec<T>,
    pub bbar: Vec<T>,
}

impl<T: Real> Discretization<T> for Explicit<T> {
    fn steps(&self) -> usize {
        self.steps
    }
    fn inner(&self) -> usize {
        self.inner
    }
    fn state(&self) -> usize {
        self.state
    }
    fn step(&self, t: usize, abar: &mut [T], bbar: &mut [T]) {
        let n = self.inner * self.state;
        abar.copy_from_slice(&self.abar[t * n..(t + 1) * n]);
        bbar.copy_from_slice(&self.bbar[t * n..(t + 1) * n]);
    }
}

/// Zero-order-hold style selective map: `ā = exp(Δ_t A)`, `b̄ = Δ_t B_t`.
pub struct Selective<'a, T> {
    /// `T × inner`, positive step sizes.
    pub delta: &'a Matrix<T>,
    /// `inner × state`, negative for a stable recurrence.
    pub a: &'a Matrix<T>,
    /// `T × state`.
    pub b: &'a Matrix<T>,
}

impl<T: Real> Discretization<T> for Selective<'_, T> {
    fn steps(&self) -> usize {
        self.delta.rows()
    }
    fn inner(&self) -> usize {
        self.a.rows()
    }
    fn state(&self) -> usize {
        self.a.cols()
    }
    fn step(&self, t: usize, abar: &mut [T], bbar: &mut [T]) {
        let s = self.a.cols();
        let bt = self.b.row(t);
        for (e, &dt) in self.delta.row(t).iter().enumerate() {
            let ar = self.a.row(e);
            for j in 0..s {
                abar[e * s + j] = (dt * ar[j]).exp();
                bbar[e * s + j] = dt * bt[j];
            }
        }
    }
}

pub struct ScanOutput<T> {
    /// `T × inner`.
    pub y: Matrix<T>,
    /// Every `h_t` (`T · inner · state`) when requested.
    pub states: Option<Vec<T>>,
}

/// Runs the recurrence over `x` (`T × inner`) with readout `c` (`T × state`)
/// and skip gain `d` (`inner`).
pub fn ssm_scan<T: Real, D: Discretization<T>>(
    x: &Matrix<T>,
    disc: &D,
    c: &Matrix<T>,
    d: &[T],
    keep_states: bool,
) -> Result<ScanOutput<T>> {
    let (steps, inner, state) = (disc.steps(), disc.inner(), disc.state());
    if steps == 0 {
        return Err(Error::InvalidArgument("scan needs at least one step".into()));
    }
    if x.shape() != (steps, inner) || c.shape() != (steps, state) || d.len() != inner {
        return Err(Error::Shape(format!(
            "scan shapes: x {:?}, c {:?}, d {} for T={steps}, inner={inner}, state={state}",
            x.shape(),
            c.shape(),
            d.len()
        )));
    }
    let n = inner * state;
    let mut h = vec![T::zero(); n];
    let mut abar = vec![T::zero(); n];
    let mut bbar = vec![T::zero(); n];
    let mut y = Matrix::zeros(steps, inner);
    let mut states = keep_states.then(|| Vec::with_capacity(steps * n));
    for t in 0..steps {
        disc.step(t, &mut abar, &mut bbar);
        let (xt, ct) = (x.row(t), c.row(t));
        let yt = y.row_mut(t);
        for e in 0..inner {
            let mut acc = d[e] * xt[e];
            let base = e * state;
            for j in 0..state {
                let k = base + j;
                h[k] = abar[k] * h[k] + bbar[k] * xt[e];
                acc += ct[j] * h[k];
            }
            yt[e] = acc;
        }
        if let Some(s) = states.as_mut() {
            s.extend_from_slice(&h);
        }
    }
    Ok(ScanOutput { y, states })
}

struct SelectiveScanOp<T> {
    states: Vec<T>,
}

impl<T: Real> CustomOp<T> for SelectiveScanOp<T> {
    fn backward(&self, inputs: &[&Matrix<T>], _output: &Matrix<T>, g: &Matrix<T>) -> Vec<Option<Matrix<T>>> {
        let [u, delta, a, b, c, d] = [inputs[0], inputs[1], inputs[2], inputs[3], inputs[4], inputs[5]];
        let (steps, inner) = u.shape();
        let state = a.cols();
        let n = inner * state;
        let (mut du, mut ddelta) = (Matrix::zeros(steps, inner), Matrix::zeros(steps, inner));
        let mut da = Matrix::zeros(inner, state);
        let (mut db, mut dc) = (Matrix::zeros(steps, state), Matrix::zeros(steps, state));
        let mut dd = Matrix::zeros(1, inner);
        // dh carries ā_{t+1} ⊙ ∂L/∂h_{t+1} into step t
        let mut dh = vec![T::zero(); n];
        let zeros = vec![T::zero(); n];
        for t in (0..steps).rev() {
            let h = &self.states[t * n..(t + 1) * n];
            let hprev = if t > 0 { &self.states[(t - 1) * n..t * n] } else { &zeros[..] };
            let (ut, gt, bt, ct, dt) = (u.row(t), g.row(t), b.row(t), c.row(t), delta.row(t));
            for e in 0..inner {
                let (ge, ue, de) = (gt[e], ut[e], dt[e]);
                let ar = a.row(e);
                let mut du_e = ge * d.data()[e];
                let mut ddelta_e = T::zero();
                dd.data_mut()[e] += ge * ue;
                for j in 0..state {
                    let k = e * state + j;
                    dh[k] += ge * ct[j];
                    dc.data_mut()[t * state + j] += ge * h[k];
                    let abar = (de * ar[j]).exp();
                    let dabar = dh[k] * hprev[k] * abar;
                    ddelta_e += dabar * ar[j] + dh[k] * bt[j] * ue;
                    da.data_mut()[k] += dabar * de;
                    db.data_mut()[t * state + j] += dh[k] * de * ue;
                    du_e += dh[k] * de * bt[j];
                    dh[k] *= abar;
                }
                du.data_mut()[t * inner + e] = du_e;
                ddelta.data_mut()[t * inner + e] = ddelta_e;
            }
        }
        vec![Some(du), Some(ddelta), Some(da), Some(db), Some(dc), Some(dd)]
    }
}

/// Selective scan on the tape. `u`, `delta`: `T × inner`; `a`: `inner × state`;
/// `b`, `c`: `T × state`; `d`: `1 × inner`. States are kept only when
/// the tape records gradients.
pub fn selective_scan<T: Real>(tape: &mut Tape<T>, u: Var, delta: Var, a: Var, b: Var, c: Var, d: Var) -> Result<Var> {
    let keep = tape.recording();
    let out = {
        let disc = Selective { delta: tape.value(delta), a: tape.value(a), b: tape.value(b) };
        let dv = tape.value(d);
        if dv.rows() != 1 {
            return Err(Error::Shape("scan skip gain must be a row vector".into()));
        }
        ssm_scan(tape.value(u), &disc, tape.value(c), dv.data(), keep)?
    };
    if !keep {
        return Ok(tape.constant(out.y));
    }
    let op = SelectiveScanOp { states: out.states.unwrap_or_default() };
    Ok(tape.custom(&[u, delta, a, b, c, d], out.y, Box::new(op)))
}
