//! Action-unit labels, clip manifests, subject-wise cross-validation and a
//! synthetic clip generator.

mod loocv;
mod manifest;
pub mod synth;
mod taxonomy;

use std::path::PathBuf;

use thiserror::Error;

pub use loocv::{split_loocv, Fold, LoocvPlan};
pub use manifest::{format_manifest, load_manifest, parse_manifest, ClipRecord, Modality, LUX_RANGE};
pub use synth::{generate_synthetic, SyntheticClip, SyntheticSpec};
pub use taxonomy::{decode_target, encode_target, AuLabel, AU_TABLE, N_CLASSES};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DatasetError {
    #[error("unknown action unit {0}")]
    UnknownAu(u32),
    #[error("missing clip file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("manifest line {line}: {reason}")]
    MalformedManifest { line: usize, reason: String },
    #[error("cross-validation needs at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("io: {0}")]
    Io(String),
}
