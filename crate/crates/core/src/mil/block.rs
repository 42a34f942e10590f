//! Stacked selective state-space blocks and the MIL read-out.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::causal_conv;
use super::scan::selective_scan;
use crate::error::{Error, Result};
use crate::numkit::{linear, Bound, Matrix, ParameterStore, Real, Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MilConfig {
    /// Residual stream width; `None` keeps the input width.
    pub d_model: Option<usize>,
    pub depth: usize,
    pub state_dim: usize,
    pub conv_width: usize,
    pub expansion: usize,
    /// Number of patches kept by the selector.
    pub lambda: usize,
    pub num_classes: usize,
}

impl Default for MilConfig {
    fn default() -> Self {
        Self { d_model: Some(32), depth: 2, state_dim: 16, conv_width: 4, expansion: 2, lambda: 512, num_classes: 2 }
    }
}

impl MilConfig {
    /// Depth 8 at the fused input width.
    pub fn paper_scale() -> Self {
        Self { d_model: None, depth: 8, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("d_model", self.d_model.unwrap_or(1)),
            ("state_dim", self.state_dim),
            ("conv_width", self.conv_width),
            ("expansion", self.expansion),
            ("lambda", self.lambda),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in checks {
            if v == 0 {
                return Err(Error::Config(format!("mil {name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Shapes of one block at model width `d`.
#[derive(Clone, Copy, Debug)]
pub struct BlockDims {
    pub d: usize,
    pub inner: usize,
    pub state: usize,
    pub conv: usize,
    pub dt_rank: usize,
}

impl BlockDims {
    pub fn new(d: usize, cfg: &MilConfig) -> Self {
        Self { d, inner: d * cfg.expansion, state: cfg.state_dim, conv: cfg.conv_width, dt_rank: d.div_ceil(16) }
    }
}

/// Parameters `{p}.ln.{gamma,beta}`, `{p}.in.w`, `{p}.conv.{w,b}`, `{p}.x.w`,
/// `{p}.dt.{w,b}`, `{p}.a_log`, `{p}.d`, `{p}.out.w`.
pub fn init_block<T: Real, R: Rng>(store: &mut ParameterStore<T>, p: &str, dims: BlockDims, rng: &mut R) -> Result<()> {
    let BlockDims { d, inner, state, conv, dt_rank } = dims;
    store.insert(format!("{p}.ln.gamma"), Matrix::filled(1, d, T::one()))?;
    store.insert_zeros(&format!("{p}.ln.beta"), 1, d)?;
    store.insert_glorot(&format!("{p}.in.w"), d, 2 * inner, rng)?;
    let bound = 1.0 / (conv as f64).sqrt();
    store.insert(
        format!("{p}.conv.w"),
        Matrix::from_fn(conv, inner, |_, _| T::lit(rng.random_range(-bound..bound))),
    )?;
    store.insert_zeros(&format!("{p}.conv.b"), 1, inner)?;
    store.insert_glorot(&format!("{p}.x.w"), inner, dt_rank + 2 * state, rng)?;
    store.insert_glorot(&format!("{p}.dt.w"), dt_rank, inner, rng)?;
    // softplus(b) = Δ₀ with Δ₀ log-uniform in [1e-3, 1e-1]
    let dt_bias = Matrix::from_fn(1, inner, |_, _| {
        let dt = (rng.random_range(1e-3f64.ln()..1e-1f64.ln())).exp();
        T::lit(dt + (-(-dt).exp_m1()).ln())
    });
    store.insert(format!("{p}.dt.b"), dt_bias)?;
    store.insert(format!("{p}.a_log"), Matrix::from_fn(inner, state, |_, j| T::lit(((j + 1) as f64).ln())))?;
    store.insert(format!("{p}.d"), Matrix::filled(1, inner, T::one()))?;
    store.insert_glorot(&format!("{p}.out.w"), inner, d, rng)?;
    Ok(())
}

/// `x + out(silu(z) ⊙ scan(silu(conv(u))))` with `[u | z] = in(LN(x))`.
pub fn mamba_block<T: Real>(tape: &mut Tape<T>, pb: &Bound, p: &str, dims: BlockDims, x: Var) -> Result<Var> {
    let BlockDims { d, inner, state, dt_rank, .. } = dims;
    if tape.value(x).cols() != d {
        return Err(Error::Shape(format!("block expects width {d}, got {}", tape.value(x).cols())));
    }
    let xn = tape.layer_norm_rows(
        x,
        pb.var(&format!("{p}.ln.gamma")),
        pb.var(&format!("{p}.ln.beta")),
        T::lit(LAYER_NORM_EPS),
    );
    let uz = tape.matmul(xn, pb.var(&format!("{p}.in.w")));
    let u = tape.slice_cols(uz, 0, inner);
    let z = tape.slice_cols(uz, inner, inner);
    let u = causal_conv(tape, u, pb.var(&format!("{p}.conv.w")), pb.var(&format!("{p}.conv.b")))?;
    let u = tape.silu(u);
    let proj = tape.matmul(u, pb.var(&format!("{p}.x.w")));
    let dt = tape.slice_cols(proj, 0, dt_rank);
    let b = tape.slice_cols(proj, dt_rank, state);
    let c = tape.slice_cols(proj, dt_rank + state, state);
    let delta = linear(tape, pb, &format!("{p}.dt"), dt);
    let delta = tape.softplus(delta);
    let a = tape.exp(pb.var(&format!("{p}.a_log")));
    let a = tape.scale(a, -T::one());
    let y = selective_scan(tape, u, delta, a, b, c, pb.var(&format!("{p}.d")))?;
    let gate = tape.silu(z);
    let y = tape.mul(y, gate);
    let out = tape.matmul(y, pb.var(&format!("{p}.out.w")));
    Ok(tape.add(x, out))
}

pub struct MilOutput {
    /// `λ′ × d` refined instance features.
    pub h_res: Var,
    /// `λ′ × C` when the encoder has an instance head.
    pub instance_logits: Option<Var>,
    /// `1 × d` column mean of `h_res`.
    pub z_bag: Var,
}

/// MIL encoder under `prefix`: optional input projection `{prefix}.proj`,
/// blocks `{prefix}.b{i}` and optional instance head `{prefix}.inst`.
#[derive(Clone, Debug)]
pub struct MilEncoder {
    pub config: MilConfig,
    pub in_dim: usize,
    pub prefix: String,
    pub instance_head: bool,
}

impl MilEncoder {
    pub fn new(config: MilConfig, in_dim: usize, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        if in_dim == 0 {
            return Err(Error::Config("mil input width must be at least 1".into()));
        }
        Ok(Self { config, in_dim, prefix: prefix.into(), instance_head: true })
    }

    pub fn without_instance_head(mut self) -> Self {
        self.instance_head = false;
        self
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model.unwrap_or(self.in_dim)
    }

    fn projects(&self) -> bool {
        self.d_model() != self.in_dim
    }

    pub fn dims(&self) -> BlockDims {
        BlockDims::new(self.d_model(), &self.config)
    }

    pub fn block_prefix(&self, i: usize) -> String {
        format!("{}.b{i}", self.prefix)
    }

    pub fn instance_head_prefix(&self) -> String {
        format!("{}.inst", self.prefix)
    }

    pub fn init_params<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        let d = self.d_model();
        if self.projects() {
            store.insert_glorot(&format!("{}.proj.w", self.prefix), self.in_dim, d, rng)?;
            store.insert_zeros(&format!("{}.proj.b", self.prefix), 1, d)?;
        }
        for i in 0..self.config.depth {
            init_block(store, &self.block_prefix(i), self.dims(), rng)?;
        }
        if self.instance_head {
            let h = self.instance_head_prefix();
            // zero start: a random head makes the max over instances large from step one
            store.insert_zeros(&format!("{h}.w"), d, self.config.num_classes)?;
            store.insert_zeros(&format!("{h}.b"), 1, self.config.num_classes)?;
        }
        Ok(())
    }

    /// Runs the blocks over `x` (`λ′ × in_dim`, rows in scan order).
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<MilOutput> {
        let (n, d) = tape.value(x).shape();
        if n == 0 {
            return Err(Error::EmptyBag);
        }
        if d != self.in_dim {
            return Err(Error::Shape(format!("mil encoder expects {} features, got {d}", self.in_dim)));
        }
        let mut h = if self.projects() { linear(tape, p, &format!("{}.proj", self.prefix), x) } else { x };
        for i in 0..self.config.depth {
            h = mamba_block(tape, p, &self.block_prefix(i), self.dims(), h)?;
        }
        let instance_logits = self.instance_head.then(|| linear(tape, p, &self.instance_head_prefix(), h));
        let z_bag = tape.mean_rows(h);
        Ok(MilOutput { h_res: h, instance_logits, z_bag })
    }
}

/// Eval-mode encoding of a fixed input.
pub fn mil_encode<T: Real>(
    encoder: &MilEncoder,
    store: &ParameterStore<T>,
    x: &Matrix<T>,
) -> Result<(Matrix<T>, Option<Matrix<T>>, Matrix<T>)> {
    let mut tape = Tape::inference();
    let p = store.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let out = encoder.forward(&mut tape, &p, xv)?;
    let logits = out.instance_logits.map(|l| tape.value(l).clone());
    Ok((tape.value(out.h_res).clone(), logits, tape.value(out.z_bag).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(depth: usize, d_model: Option<usize>) -> (MilEncoder, ParameterStore<f64>) {
        let cfg = MilConfig { d_model, depth, state_dim: 4, ..Default::default() };
        let enc = MilEncoder::new(cfg, 6, "mil").unwrap();
        let mut store = ParameterStore::new();
        enc.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        (enc, store)
    }

    fn input(n: usize) -> Matrix<f64> {
        Matrix::from_fn(n, 6, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0)
    }

    #[test]
    fn depth_zero_is_identity() {
        let (enc, store) = encoder(0, None);
        let x = input(5);
        let (h, _, z) = mil_encode(&enc, &store, &x).unwrap();
        assert_eq!(h, x);
        assert_eq!(z, x.mean_rows());
    }

    #[test]
    fn zero_output_projection_is_identity() {
        let (enc, mut store) = encoder(2, None);
        store.value_mut("mil.b0.out.w").unwrap().fill(0.0);
        store.value_mut("mil.b1.out.w").unwrap().fill(0.0);
        let x = input(9);
        let (h, _, _) = mil_encode(&enc, &store, &x).unwrap();
        assert_eq!(h, x);
    }

    #[test]
    fn shapes_and_single_instance() {
        let (enc, store) = encoder(2, Some(8));
        assert!(store.contains("mil.proj.w"));
        for n in [1, 4, 13] {
            let (h, logits, z) = mil_encode(&enc, &store, &input(n)).unwrap();
            assert_eq!(h.shape(), (n, 8));
            assert_eq!(logits.unwrap().shape(), (n, 2));
            assert_eq!(z.shape(), (1, 8));
            if n == 1 {
                assert_eq!(z.data(), h.row(0));
            }
        }
        assert!(mil_encode(&enc, &store, &Matrix::zeros(3, 5)).is_err());
        let bare = enc.clone().without_instance_head();
        let mut s2 = ParameterStore::<f64>::new();
        bare.init_params(&mut s2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(!s2.contains("mil.inst.w"));
        assert!(mil_encode(&bare, &s2, &input(3)).unwrap().1.is_none());
    }

    #[test]
    fn earlier_tokens_do_not_see_later_ones() {
        let (enc, store) = encoder(2, None);
        let x = input(10);
        let (full, _, _) = mil_encode(&enc, &store, &x).unwrap();
        let (prefix, _, _) = mil_encode(&enc, &store, &x.gather_rows(&[0, 1, 2, 3])).unwrap();
        for t in 0..4 {
            for (a, b) in full.row(t).iter().zip(prefix.row(t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(MilConfig { state_dim: 0, ..Default::default() }.validate().is_err());
        assert!(MilConfig { d_model: Some(0), ..Default::default() }.validate().is_err());
        assert!(MilConfig::paper_scale().validate().is_ok());
    }
}
