//! Adaptive patch selection: a linear-sigmoid scorer and top-λ selection.

use std::cmp::Ordering;
use std::path::Path;


use crate::error::{Error, Result};
use crate::numkit::{linear, Bound, Matrix, ParameterStore, Real, Tape, Var};

/// Descending score, ascending index on ties.
fn rank_order<T: Real>(scores: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&i, &j| scores[j].partial_cmp(&scores[i]).unwrap_or(Ordering::Equal).then(i.cmp(&j))
}

/// Indices of the `min(N, λ)` highest scores, best first.
pub fn select_top<T: Real>(scores: &[T], lambda: usize) -> Vec<usize> {
    let k = lambda.min(scores.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k == 0 {
        return Vec::new();
    }
    let cmp = rank_order(scores);
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, &cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Reorders selected indices into spatial raster order (row `y`, then `x`, then index).
pub fn raster_order(coords: &[[f32; 2]], indices: &[usize]) -> Vec<usize> {
    let mut out = indices.to_vec();
    out.sort_by(|&a, &b| {
        let (ca, cb) = (coords[a], coords[b]);
        ca[1].total_cmp(&cb[1]).then(ca[0].total_cmp(&cb[0])).then(a.cmp(&b))
    });
    out
}

/// Patch scorer with parameters `{prefix}.w` (d×1) and `{prefix}.b` (1×1).
#[derive(Clone, Debug)]
pub struct PatchScorer {
    pub in_dim: usize,
    pub prefix: String,
}

pub struct ApsOutput {
    /// `N × 1` scores in `[0, 1]`.
    pub scores: Var,
    /// Selected original rows, highest score first.
    pub selected_indices: Vec<usize>,
    /// `λ′ × d` selected rows scaled by their scores, in `selected_indices` order.
    pub selected: Var,
}

impl PatchScorer {
    pub fn new(in_dim: usize, prefix: impl Into<String>) -> Self {
        Self { in_dim, prefix: prefix.into() }
    }

    /// Zero weights: every patch starts at score ½, so the score scaling does
    /// not inject a random projection of the features before the scorer learns.
    pub fn init_params<T: Real>(&self, store: &mut ParameterStore<T>) -> Result<()> {
        store.insert_zeros(&format!("{}.w", self.prefix), self.in_dim, 1)?;
        store.insert_zeros(&format!("{}.b", self.prefix), 1, 1)
    }

    pub fn scores<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, features: Var) -> Result<Var> {
        let (n, d) = tape.value(features).shape();
        if n == 0 {
            return Err(Error::EmptyBag);
        }
        if d != self.in_dim {
            return Err(Error::Shape(format!("scorer expects {} features, got {d}", self.in_dim)));
        }
        let s = linear(tape, p, &self.prefix, features);
        Ok(tape.sigmoid(s))
    }

    /// Scores every row and keeps the top `min(N, λ)`.
    pub fn aps<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, features: Var, lambda: usize) -> Result<ApsOutput> {
        if lambda == 0 {
            return Err(Error::InvalidArgument("lambda must be at least 1".into()));
        }
        let scores = self.scores(tape, p, features)?;
        let selected_indices = select_top(tape.value(scores).data(), lambda);
        let rows = tape.gather_rows(features, &selected_indices);
        let s = tape.gather_rows(scores, &selected_indices);
        let selected = tape.mul_col(rows, s);
        Ok(ApsOutput { scores, selected_indices, selected })
    }
}

/// Writes `patch_index,x,y,score` for each patch.
pub fn write_patch_scores<T: Real>(path: &Path, coords: &[[f32; 2]], scores: &Matrix<T>) -> Result<()> {
    if scores.len() != coords.len() {
        return Err(Error::Shape(format!("{} scores for {} patches", scores.len(), coords.len())));
    }
    let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
    w.write_record(["patch_index", "x", "y", "score"])?;
    for (i, (c, s)) in coords.iter().zip(scores.data()).enumerate() {
        w.write_record([i.to_string(), c[0].to_string(), c[1].to_string(), s.as_f64().to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
