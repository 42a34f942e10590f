//! Per-field encoder/decoder pairs with mean aggregation into one embedding.

use rand::Rng;

use super::schema::{ClinicalRecord, ClinicalSchema};
use crate::error::{Error, Result};
use crate::numkit::{linear, Bound, Matrix, ParameterStore, Real, Tape, Var};

/// Layout of the clinical embedding parameters: field `k` owns
/// `{prefix}.f{k}.{enc1,enc2,dec1,dec2}.{w,b}`.
#[derive(Clone, Debug)]
pub struct CdeWeights {
    pub prefix: String,
    pub widths: Vec<usize>,
    /// Which fields are one-hot (cross-entropy target) rather than numeric.
    pub categorical: Vec<bool>,
    pub hidden: usize,
}

pub struct CdeOutput {
    /// `1 × hidden`.
    pub embedding: Var,
    /// One `1 × width_k` reconstruction per field.
    pub reconstructions: Vec<Var>,
}

impl CdeWeights {
    pub fn new(schema: &ClinicalSchema, hidden: usize, prefix: impl Into<String>) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("clinical hidden dim must be at least 1".into()));
        }
        Ok(Self {
            prefix: prefix.into(),
            widths: schema.widths(),
            categorical: schema.fields.iter().map(|f| f.is_categorical()).collect(),
            hidden,
        })
    }

    pub fn num_fields(&self) -> usize {
        self.widths.len()
    }

    pub fn field_prefix(&self, k: usize) -> String {
        format!("{}.f{k}", self.prefix)
    }

    pub fn init_params<T: Real, R: Rng>(&self, store: &mut ParameterStore<T>, rng: &mut R) -> Result<()> {
        let h = self.hidden;
        for (k, &w) in self.widths.iter().enumerate() {
            let p = self.field_prefix(k);
            for (name, fan_in, fan_out) in [("enc1", w, h), ("enc2", h, h), ("dec1", h, h), ("dec2", h, w)] {
                store.insert_glorot(&format!("{p}.{name}.w"), fan_in, fan_out, rng)?;
                store.insert_zeros(&format!("{p}.{name}.b"), 1, fan_out)?;
            }
        }
        Ok(())
    }
}

/// `h = ReLU(c·W₁ + b₁)·W₂ + b₂`.
pub fn encode_field<T: Real>(tape: &mut Tape<T>, p: &Bound, field_prefix: &str, c: Var) -> Var {
    let z = linear(tape, p, &format!("{field_prefix}.enc1"), c);
    let z = tape.relu(z);
    linear(tape, p, &format!("{field_prefix}.enc2"), z)
}

/// `ĉ = ReLU(h·W₃ + b₃)·W₄ + b₄`.
pub fn decode_field<T: Real>(tape: &mut Tape<T>, p: &Bound, field_prefix: &str, h: Var) -> Var {
    let z = linear(tape, p, &format!("{field_prefix}.dec1"), h);
    let z = tape.relu(z);
    linear(tape, p, &format!("{field_prefix}.dec2"), z)
}

/// Places the encoded record on the tape as constants.
pub fn record_inputs<T: Real>(tape: &mut Tape<T>, record: &ClinicalRecord) -> Vec<Var> {
    record
        .values
        .iter()
        .map(|v| tape.constant(Matrix::row_vector(v.iter().map(|&x| T::lit(x)).collect())))
        .collect()
}

fn check_record(w: &CdeWeights, record: &ClinicalRecord) -> Result<()> {
    if w.num_fields() == 0 {
        return Err(Error::InvalidArgument("clinical embedding needs at least one field".into()));
    }
    if record.values.len() != w.num_fields() {
        return Err(Error::Schema(format!(
            "record has {} fields, embedding expects {}",
            record.values.len(),
            w.num_fields()
        )));
    }
    for (k, (v, &width)) in record.values.iter().zip(&w.widths).enumerate() {
        if v.len() != width {
            return Err(Error::Schema(format!("field {k} has width {}, expected {width}", v.len())));
        }
    }
    Ok(())
}

/// Encodes every field, averages the hidden vectors, and decodes each one.
pub fn cde_forward<T: Real>(
    tape: &mut Tape<T>,
    p: &Bound,
    weights: &CdeWeights,
    record: &ClinicalRecord,
) -> Result<CdeOutput> {
    check_record(weights, record)?;
    let inputs = record_inputs(tape, record);
    let mut hidden = Vec::with_capacity(inputs.len());
    let mut reconstructions = Vec::with_capacity(inputs.len());
    for (k, &c) in inputs.iter().enumerate() {
        let fp = weights.field_prefix(k);
        let h = encode_field(tape, p, &fp, c);
        reconstructions.push(decode_field(tape, p, &fp, h));
        hidden.push(h);
    }
    let mut sum = hidden[0];
    for &h in &hidden[1..] {
        sum = tape.add(sum, h);
    }
    let embedding = tape.scale(sum, T::lit(1.0 / hidden.len() as f64));
    Ok(CdeOutput { embedding, reconstructions })
}

/// Sum of squared-error terms for numeric fields and softmax cross-entropy
/// (reconstructions as logits) for categorical fields.
pub fn clinical_recon_loss<T: Real>(
    tape: &mut Tape<T>,
    weights: &CdeWeights,
    record: &ClinicalRecord,
    reconstructions: &[Var],
) -> Result<Var> {
    check_record(weights, record)?;
    if reconstructions.len() != record.values.len() {
        return Err(Error::Shape("one reconstruction per field required".into()));
    }
    let mut terms = Vec::with_capacity(reconstructions.len());
    for (k, (&rec, target)) in reconstructions.iter().zip(&record.values).enumerate() {
        let t = Matrix::row_vector(target.iter().map(|&x| T::lit(x)).collect());
        if weights.categorical[k] {
            let logp = tape.log_softmax_rows(rec);
            let picked = tape.mul_const(logp, t);
            let s = tape.sum_all(picked);
            terms.push(tape.scale(s, -T::one()));
        } else {
            let t = tape.constant(t);
            let d = tape.sub(rec, t);
            let sq = tape.mul(d, d);
            let s = tape.sum_all(sq);
            terms.push(tape.scale(s, T::lit(1.0 / target.len() as f64)));
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t);
    }
    Ok(total)
}
