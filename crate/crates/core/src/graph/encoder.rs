//! Two-layer GNN producing per-patch graph embeddings and a pooled summary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::build::SpatialGraph;
use super::gnn::{gat_forward, gcn_forward, GatOptions, GatWeights, GcnWeights};
use crate::error::{Error, Result};
use crate::numkit::{Bound, Ctx, ParameterStore, Real, Tape, Unary, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnKind {
    Gcn,
    Gat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphEncoderConfig {
    pub model: GnnKind,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub heads: usize,
    pub negative_slope: f64,
}

impl Default for GraphEncoderConfig {
    fn default() -> Self {
        Self { model: GnnKind::Gat, hidden_dim: 256, out_dim: 256, dropout: 0.1, heads: 4, negative_slope: 0.2 }
    }
}

impl GraphEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("graph dims must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("graph dropout {} outside [0, 1)", self.dropout)));
        }
        if self.model == GnnKind::Gat {
            if self.heads == 0 {
                return Err(Error::Config("GAT needs at least one head".into()));
            }
            if self.hidden_dim % self.heads != 0 {
                return Err(Error::Config(format!(
                    "graph hidden_dim {} must be divisible by heads {}",
                    self.hidden_dim, self.heads
                )));
            }
        }
        Ok(())
    }
}

/// Graph encoder whose parameters live under `prefix` in a [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct GraphEncoder {
    pub config: GraphEncoderConfig,
    pub in_dim: usize,
    pub prefix: String,
}

pub struct GraphEmbedding {
    /// `N × out_dim`.
    pub patches: Var,
    /// `1 × out_dim` column mean of `patches`.
    pub summary: Var,
}

impl GraphEncoder {
    pub fn new(config: GraphEncoderConfig, in_dim: usize, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, in_dim, prefix: prefix.into() })
    }

    fn layer_dims(&self) -> [(usize, usize, bool); 2] {
        // (in, transformed width, concat heads)
        let c = &self.config;
        match c.model {
            GnnKind::Gcn => [(self.in_dim, c.hidden_dim, true), (c.hidden_dim, c.out_dim, true)],
            GnnKind::Gat => [(self.in_dim, c.hidden_dim, true), (c.hidden_dim, c.out_dim * c.heads, false)],
        }
    }

    pub fn init_params<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        for (l, (fan_in, width, concat)) in self.layer_dims().into_iter().enumerate() {
            let p = format!("{}.l{l}", self.prefix);
            store.insert_glorot(&format!("{p}.w"), fan_in, width, rng)?;
            let bias_w = if concat { width } else { self.config.out_dim };
            store.insert_zeros(&format!("{p}.b"), 1, bias_w)?;
            if self.config.model == GnnKind::Gat {
                let f = width / self.config.heads;
                store.insert_glorot(&format!("{p}.a_src"), 1, width, rng)?;
                store.insert_glorot(&format!("{p}.a_dst"), 1, width, rng)?;
                // scale attention vectors like a per-head (f → 1) glorot draw
                let s = T::lit(((1 + width) as f64 / (1 + f) as f64).sqrt());
                store.value_mut(&format!("{p}.a_src"))?.scale_assign(s);
                store.value_mut(&format!("{p}.a_dst"))?.scale_assign(s);
            }
        }
        Ok(())
    }

    fn layer<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        graph: &SpatialGraph,
        l: usize,
        x: Var,
        ctx: &mut Ctx<'_>,
    ) -> Result<Var> {
        let n = format!("{}.l{l}", self.prefix);
        let (_, _, concat) = self.layer_dims()[l];
        match self.config.model {
            GnnKind::Gcn => {
                let w = GcnWeights { w: p.var(&format!("{n}.w")), b: Some(p.var(&format!("{n}.b"))) };
                gcn_forward(tape, graph, x, w, None)
            }
            GnnKind::Gat => {
                let w = GatWeights {
                    w: p.var(&format!("{n}.w")),
                    a_src: p.var(&format!("{n}.a_src")),
                    a_dst: p.var(&format!("{n}.a_dst")),
                    b: Some(p.var(&format!("{n}.b"))),
                };
                let opts = GatOptions {
                    heads: self.config.heads,
                    negative_slope: self.config.negative_slope,
                    concat,
                    attention_dropout: self.config.dropout,
                };
                gat_forward(tape, graph, x, w, opts, ctx)
            }
        }
    }

    /// in → hidden (ELU, dropout) → out; summary is the column mean.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        graph: &SpatialGraph,
        x: Var,
        ctx: &mut Ctx<'_>,
    ) -> Result<GraphEmbedding> {
        if tape.value(x).cols() != self.in_dim {
            return Err(Error::Shape(format!(
                "graph encoder expects {} input features, got {}",
                self.in_dim,
                tape.value(x).cols()
            )));
        }
        let x = ctx.dropout(tape, x, self.config.dropout);
        let h = self.layer(tape, p, graph, 0, x, ctx)?;
        let h = tape.unary(h, Unary::Elu);
        let h = ctx.dropout(tape, h, self.config.dropout);
        let patches = self.layer(tape, p, graph, 1, h, ctx)?;
        let summary = tape.mean_rows(patches);
        Ok(GraphEmbedding { patches, summary })
    }
}

/// Eval-mode convenience wrapper: per-patch embeddings and the bag summary.
pub fn graph_embed<T: Real>(
    bag: &super::bag::PatchBag,
    graph: &SpatialGraph,
    encoder: &GraphEncoder,
    store: &ParameterStore<T>,
) -> Result<(crate::numkit::Matrix<T>, crate::numkit::Matrix<T>)> {
    let mut tape = Tape::inference();
    let p = store.bind(&mut tape);
    let x = tape.constant(bag.features_as::<T>());
    let e = encoder.forward(&mut tape, &p, graph, x, &mut Ctx::Eval)?;
    Ok((tape.value(e.patches).clone(), tape.value(e.summary).clone()))
}
