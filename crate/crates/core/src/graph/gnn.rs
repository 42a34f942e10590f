//! GCN and GAT message passing over a [`SpatialGraph`], recorded on the tape.

use std::sync::Arc;

use super::build::SpatialGraph;
use crate::error::{Error, Result};
use crate::numkit::{Ctx, CustomOp, Matrix, Real, Tape, Unary, Var};

/// Row-compressed neighbourhoods `N(i) ∪ {i}` with per-entry coefficients.
#[derive(Clone, Debug)]
pub struct Csr<T> {
    pub offsets: Vec<usize>,
    pub cols: Vec<usize>,
    pub coef: Vec<T>,
}

impl<T: Real> Csr<T> {
    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Self loop first, then neighbours ascending; all coefficients 1.
    pub fn with_self_loops(graph: &SpatialGraph) -> Self {
        let n = graph.num_vertices();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(n + 2 * graph.num_edges());
        offsets.push(0);
        for i in 0..n {
            cols.push(i);
            cols.extend_from_slice(graph.neighbors(i));
            offsets.push(cols.len());
        }
        let coef = vec![T::one(); cols.len()];
        Self { offsets, cols, coef }
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}`.
    pub fn gcn_normalized(graph: &SpatialGraph) -> Self {
        let mut m = Self::with_self_loops(graph);
        let deg: Vec<T> = (0..graph.num_vertices())
            .map(|i| T::from_usize(graph.degree(i) + 1).unwrap())
            .collect();
        for i in 0..m.rows() {
            for k in m.row(i) {
                let j = m.cols[k];
                m.coef[k] = T::one() / (deg[i] * deg[j]).sqrt();
            }
        }
        m
    }

    fn spmm(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows(), x.cols());
        for i in 0..self.rows() {
            for k in self.row(i) {
                let (j, c) = (self.cols[k], self.coef[k]);
                for (o, &v) in out.row_mut(i).iter_mut().zip(x.row(j)) {
                    *o += c * v;
                }
            }
        }
        out
    }

    fn spmm_t(&self, g: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows(), g.cols());
        for i in 0..self.rows() {
            for k in self.row(i) {
                let (j, c) = (self.cols[k], self.coef[k]);
                for (o, &v) in out.row_mut(j).iter_mut().zip(g.row(i)) {
                    *o += c * v;
                }
            }
        }
        out
    }
}

struct SpmmOp<T> {
    csr: Arc<Csr<T>>,
}

impl<T: Real> CustomOp<T> for SpmmOp<T> {
    fn backward(&self, _inputs: &[&Matrix<T>], _out: &Matrix<T>, g: &Matrix<T>) -> Vec<Option<Matrix<T>>> {
        vec![Some(self.csr.spmm_t(g))]
    }
}

/// Fixed sparse matrix times `x`.
pub fn sparse_aggregate<T: Real>(tape: &mut Tape<T>, csr: &Arc<Csr<T>>, x: Var) -> Var {
    let v = csr.spmm(tape.value(x));
    tape.custom(&[x], v, Box::new(SpmmOp { csr: Arc::clone(csr) }))
}

fn check_rows<T: Real>(graph: &SpatialGraph, tape: &Tape<T>, x: Var) -> Result<()> {
    let rows = tape.value(x).rows();
    if rows != graph.num_vertices() {
        return Err(Error::Shape(format!(
            "feature matrix has {rows} rows but the graph has {} vertices",
            graph.num_vertices()
        )));
    }
    Ok(())
}

/// Tape handles for one GCN layer: `w` is `in × out`, `b` is `1 × out`.
#[derive(Clone, Copy, Debug)]
pub struct GcnWeights {
    pub w: Var,
    pub b: Option<Var>,
}

/// `act(Â · X · W + b)` with the symmetric-normalized self-looped adjacency.
pub fn gcn_forward<T: Real>(
    tape: &mut Tape<T>,
    graph: &SpatialGraph,
    x: Var,
    weights: GcnWeights,
    activation: Option<Unary<T>>,
) -> Result<Var> {
    check_rows(graph, tape, x)?;
    if tape.value(x).cols() != tape.value(weights.w).rows() {
        return Err(Error::Shape("gcn weight rows must equal feature columns".into()));
    }
    let csr = Arc::new(Csr::gcn_normalized(graph));
    let xw = tape.matmul(x, weights.w);
    let mut h = sparse_aggregate(tape, &csr, xw);
    if let Some(b) = weights.b {
        h = tape.add_row(h, b);
    }
    Ok(match activation {
        Some(f) => tape.unary(h, f),
        None => h,
    })
}

/// Tape handles for one multi-head GAT layer. `w` maps `in → heads·head_dim`;
/// `a_src`/`a_dst` are `1 × heads·head_dim` (head-major).
#[derive(Clone, Copy, Debug)]
pub struct GatWeights {
    pub w: Var,
    pub a_src: Var,
    pub a_dst: Var,
    pub b: Option<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct GatOptions {
    pub heads: usize,
    pub negative_slope: f64,
    /// Concatenate heads (hidden layer) or average them (output layer).
    pub concat: bool,
    pub attention_dropout: f64,
}

/// Per-head attention logits and coefficients for each CSR entry.
struct Attention<T> {
    pre: Vec<T>,
    alpha: Vec<T>,
}

fn head_scores<T: Real>(h: &Matrix<T>, a: &Matrix<T>, heads: usize) -> Vec<T> {
    let n = h.rows();
    let f = h.cols() / heads;
    let mut s = vec![T::zero(); n * heads];
    for i in 0..n {
        let row = h.row(i);
        for hd in 0..heads {
            let mut acc = T::zero();
            for k in hd * f..(hd + 1) * f {
                acc += row[k] * a.data()[k];
            }
            s[i * heads + hd] = acc;
        }
    }
    s
}

fn attention<T: Real>(csr: &Csr<T>, s_src: &[T], s_dst: &[T], heads: usize, slope: T) -> Attention<T> {
    let nnz = csr.cols.len();
    let mut pre = vec![T::zero(); nnz * heads];
    let mut alpha = vec![T::zero(); nnz * heads];
    for i in 0..csr.rows() {
        let range = csr.row(i);
        for hd in 0..heads {
            let mut m = T::neg_infinity();
            for k in range.clone() {
                let j = csr.cols[k];
                let e = s_dst[i * heads + hd] + s_src[j * heads + hd];
                let e = if e > T::zero() { e } else { slope * e };
                pre[k * heads + hd] = e;
                m = m.max(e);
            }
            let mut z = T::zero();
            for k in range.clone() {
                let w = (pre[k * heads + hd] - m).exp();
                alpha[k * heads + hd] = w;
                z += w;
            }
            for k in range.clone() {
                alpha[k * heads + hd] = alpha[k * heads + hd] / z;
            }
        }
    }
    Attention { pre, alpha }
}

/// Attention coefficients of the first GAT stage without dropout, as
/// `(neighbour, per-head α)` lists per vertex (self loop first).
pub fn gat_attention<T: Real>(
    graph: &SpatialGraph,
    h: &Matrix<T>,
    a_src: &Matrix<T>,
    a_dst: &Matrix<T>,
    heads: usize,
    negative_slope: f64,
) -> Vec<Vec<(usize, Vec<T>)>> {
    let csr = Csr::<T>::with_self_loops(graph);
    let s_src = head_scores(h, a_src, heads);
    let s_dst = head_scores(h, a_dst, heads);
    let att = attention(&csr, &s_src, &s_dst, heads, T::lit(negative_slope));
    (0..csr.rows())
        .map(|i| {
            csr.row(i)
                .map(|k| (csr.cols[k], att.alpha[k * heads..(k + 1) * heads].to_vec()))
                .collect()
        })
        .collect()
}

struct GatAggregateOp<T> {
    csr: Arc<Csr<T>>,
    heads: usize,
    slope: T,
    alpha: Vec<T>,
    pre: Vec<T>,
    mask: Option<Vec<T>>,
}

impl<T: Real> CustomOp<T> for GatAggregateOp<T> {
    fn backward(&self, inputs: &[&Matrix<T>], _out: &Matrix<T>, g: &Matrix<T>) -> Vec<Option<Matrix<T>>> {
        let (h, a_src, a_dst) = (inputs[0], inputs[1], inputs[2]);
        let heads = self.heads;
        let n = h.rows();
        let f = h.cols() / heads;
        let csr = &*self.csr;
        let mut dh = Matrix::zeros(n, h.cols());
        let mut ds_src = vec![T::zero(); n * heads];
        let mut ds_dst = vec![T::zero(); n * heads];
        let mut dalpha = vec![T::zero(); csr.cols.len() * heads];
        for i in 0..n {
            let gi = g.row(i);
            for k in csr.row(i) {
                let j = csr.cols[k];
                for hd in 0..heads {
                    let idx = k * heads + hd;
                    let m = self.mask.as_ref().map_or(T::one(), |m| m[idx]);
                    let hj = &h.row(j)[hd * f..(hd + 1) * f];
                    let gih = &gi[hd * f..(hd + 1) * f];
                    dalpha[idx] = m * crate::numkit::matrix::dot(gih, hj);
                    let w = self.alpha[idx] * m;
                    if w != T::zero() {
                        let dhj = &mut dh.row_mut(j)[hd * f..(hd + 1) * f];
                        for (o, &v) in dhj.iter_mut().zip(gih) {
                            *o += w * v;
                        }
                    }
                }
            }
            for hd in 0..heads {
                let mut dot_ad = T::zero();
                for k in csr.row(i) {
                    dot_ad += self.alpha[k * heads + hd] * dalpha[k * heads + hd];
                }
                for k in csr.row(i) {
                    let idx = k * heads + hd;
                    let de = self.alpha[idx] * (dalpha[idx] - dot_ad);
                    let dpre = if self.pre[idx] > T::zero() { de } else { de * self.slope };
                    ds_dst[i * heads + hd] += dpre;
                    ds_src[csr.cols[k] * heads + hd] += dpre;
                }
            }
        }
        let mut da_src = Matrix::zeros(1, h.cols());
        let mut da_dst = Matrix::zeros(1, h.cols());
        for j in 0..n {
            for hd in 0..heads {
                let (gs, gd) = (ds_src[j * heads + hd], ds_dst[j * heads + hd]);
                for c in hd * f..(hd + 1) * f {
                    let hv = h.get(j, c);
                    da_src.data_mut()[c] += gs * hv;
                    da_dst.data_mut()[c] += gd * hv;
                    let v = dh.get(j, c) + gs * a_src.data()[c] + gd * a_dst.data()[c];
                    dh.set(j, c, v);
                }
            }
        }
        vec![Some(dh), Some(da_src), Some(da_dst)]
    }
}

/// One GAT layer: transform, per-head leaky-ReLU attention over `N(i) ∪ {i}`,
/// softmax, weighted sum; heads concatenated or averaged, then bias.
pub fn gat_forward<T: Real>(
    tape: &mut Tape<T>,
    graph: &SpatialGraph,
    x: Var,
    weights: GatWeights,
    opts: GatOptions,
    ctx: &mut Ctx<'_>,
) -> Result<Var> {
    check_rows(graph, tape, x)?;
    let width = tape.value(weights.w).cols();
    if tape.value(x).cols() != tape.value(weights.w).rows() {
        return Err(Error::Shape("gat weight rows must equal feature columns".into()));
    }
    if opts.heads == 0 || width % opts.heads != 0 {
        return Err(Error::Shape(format!("gat width {width} not divisible by {} heads", opts.heads)));
    }
    if tape.value(weights.a_src).shape() != (1, width) || tape.value(weights.a_dst).shape() != (1, width) {
        return Err(Error::Shape("gat attention vectors must be 1 × heads·head_dim".into()));
    }
    let heads = opts.heads;
    let slope = T::lit(opts.negative_slope);
    let h = tape.matmul(x, weights.w);
    let csr = Arc::new(Csr::<T>::with_self_loops(graph));
    let (hm, asv, adv) = (tape.value(h), tape.value(weights.a_src), tape.value(weights.a_dst));
    let s_src = head_scores(hm, asv, heads);
    let s_dst = head_scores(hm, adv, heads);
    let att = attention(&csr, &s_src, &s_dst, heads, slope);
    let mask = ctx
        .mask::<T>(csr.cols.len(), heads, opts.attention_dropout)
        .map(Matrix::into_vec);

    let n = hm.rows();
    let f = width / heads;
    let mut out = Matrix::zeros(n, width);
    for i in 0..n {
        for k in csr.row(i) {
            let j = csr.cols[k];
            for hd in 0..heads {
                let idx = k * heads + hd;
                let w = att.alpha[idx] * mask.as_ref().map_or(T::one(), |m| m[idx]);
                if w == T::zero() {
                    continue;
                }
                let src = &hm.row(j)[hd * f..(hd + 1) * f];
                let dst = &mut out.row_mut(i)[hd * f..(hd + 1) * f];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
    }
    let op = GatAggregateOp { csr, heads, slope, alpha: att.alpha, pre: att.pre, mask };
    let mut y = tape.custom(&[h, weights.a_src, weights.a_dst], out, Box::new(op));
    if !opts.concat && heads > 1 {
        let avg = Matrix::from_fn(width, f, |r, c| if r % f == c { T::lit(1.0 / heads as f64) } else { T::zero() });
        let avg = tape.constant(avg);
        y = tape.matmul(y, avg);
    }
    if let Some(b) = weights.b {
        y = tape.add_row(y, b);
    }
    Ok(y)
}
