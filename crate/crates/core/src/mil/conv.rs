//! Causal depthwise 1-D convolution along the sequence axis.

use crate::error::{Error, Result};
use crate::numkit::{CustomOp, Matrix, Real, Tape, Var};

/// `y[t, e] = b[e] + Σ_k w[k, e] · u[t + k − (K−1), e]`, zero-padded on the left.
pub fn causal_conv_value<T: Real>(u: &Matrix<T>, w: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let (steps, ch) = u.shape();
    let k = w.rows();
    let mut y = Matrix::zeros(steps, ch);
    for t in 0..steps {
        let yt = y.row_mut(t);
        yt.copy_from_slice(b.data());
        for j in 0..k {
            let Some(src) = (t + j).checked_sub(k - 1) else { continue };
            let (ur, wr) = (u.row(src), w.row(j));
            for e in 0..ch {
                yt[e] += wr[e] * ur[e];
            }
        }
    }
    y
}

struct CausalConvOp;

impl<T: Real> CustomOp<T> for CausalConvOp {
    fn backward(&self, inputs: &[&Matrix<T>], _output: &Matrix<T>, g: &Matrix<T>) -> Vec<Option<Matrix<T>>> {
        let (u, w) = (inputs[0], inputs[1]);
        let (steps, ch) = u.shape();
        let k = w.rows();
        let mut du = Matrix::zeros(steps, ch);
        let mut dw = Matrix::zeros(k, ch);
        let mut db = Matrix::zeros(1, ch);
        for t in 0..steps {
            let gt = g.row(t);
            for (acc, &v) in db.data_mut().iter_mut().zip(gt) {
                *acc += v;
            }
            for j in 0..k {
                let Some(src) = (t + j).checked_sub(k - 1) else { continue };
                for e in 0..ch {
                    du.data_mut()[src * ch + e] += gt[e] * w.get(j, e);
                    dw.data_mut()[j * ch + e] += gt[e] * u.get(src, e);
                }
            }
        }
        vec![Some(du), Some(dw), Some(db)]
    }
}

/// Records the convolution; `w` is `K × channels`, `b` is `1 × channels`.
pub fn causal_conv<T: Real>(tape: &mut Tape<T>, u: Var, w: Var, b: Var) -> Result<Var> {
    let (uv, wv, bv) = (tape.value(u), tape.value(w), tape.value(b));
    if wv.rows() == 0 || wv.cols() != uv.cols() || bv.shape() != (1, uv.cols()) {
        return Err(Error::Shape(format!(
            "conv shapes: input {:?}, kernel {:?}, bias {:?}",
            uv.shape(),
            wv.shape(),
            bv.shape()
        )));
    }
    let y = causal_conv_value(uv, wv, bv);
    Ok(tape.custom(&[u, w, b], y, Box::new(CausalConvOp)))
}
