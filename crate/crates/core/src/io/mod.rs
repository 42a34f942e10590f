//! Files on disk: bag containers, dataset directories, synthetic generators,
//! run configs and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod pbag;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, BestEpoch, Checkpoint};
pub use config::{DataSection, RunConfig};
pub use dataset::{read_dataset, write_dataset, write_meta, Dataset, DatasetMeta, Sample, Target};
pub use pbag::{decode_bag, encode_bag, read_bag, write_bag};
pub use synth::{gen_classification_dataset, gen_survival_dataset, survival_fields, ClassificationGen, SurvivalGen};
