//! Clinical record ingestion and the per-field clinical embedding.

pub mod cde;
pub mod schema;

pub use cde::{cde_forward, clinical_recon_loss, decode_field, encode_field, record_inputs, CdeOutput, CdeWeights};
pub use schema::{
    fit_schema, read_clinical_csv, write_clinical_csv, ClinicalRecord, ClinicalSchema, FieldDescriptor,
    FieldEncoding, FieldKind, FieldSpec, RawRecord, UNKNOWN_CATEGORY,
};
