//! Small building blocks shared by the model components.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::matrix::{Matrix, Real};
use super::params::Bound;
use super::tape::{Tape, Var};

/// Forward-pass mode. Training carries the RNG that draws dropout masks.
pub enum Ctx<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl<'r> Ctx<'r> {
    pub fn is_train(&self) -> bool {
        matches!(self, Ctx::Train(_))
    }

    /// Inverted dropout mask (`0` or `1/(1-p)`), or `None` in eval mode or when `p == 0`.
    pub fn mask<T: Real>(&mut self, rows: usize, cols: usize, p: f64) -> Option<Matrix<T>> {
        match self {
            Ctx::Train(rng) if p > 0.0 => {
                let keep = T::lit(1.0 / (1.0 - p));
                Some(Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < p { T::zero() } else { keep }))
            }
            _ => None,
        }
    }

    pub fn dropout<T: Real>(&mut self, tape: &mut Tape<T>, x: Var, p: f64) -> Var {
        let (r, c) = tape.value(x).shape();
        match self.mask(r, c, p) {
            Some(m) => tape.mul_const(x, m),
            None => x,
        }
    }
}

/// `x · W + b` with parameters `{prefix}.w` (in×out) and `{prefix}.b` (1×out).
pub fn linear<T: Real>(tape: &mut Tape<T>, p: &Bound, prefix: &str, x: Var) -> Var {
    let h = tape.matmul(x, p.var(&format!("{prefix}.w")));
    match p.try_var(&format!("{prefix}.b")) {
        Some(b) => tape.add_row(h, b),
        None => h,
    }
}
