//! Feature engineering: trigger emulation, particle ordering, LLF/HLF
//! assembly, balancing, shuffling, splitting and scaling.

mod event;
mod kinematics;
mod prepare;
mod sampling;
mod scaler;

pub use event::{
    build_llf, col, compute_hlf, event_to_example, trigger_select, Group, TriggerConfig,
    CHARGED_QUOTA, HLF_NAMES, NEUTRAL_QUOTA, PHOTON_QUOTA,
};
pub use kinematics::{delta_r, kinematics, wrap_phi, Kinematics, ETA_LIMIT};
pub use prepare::{
    list_records, prepare_examples, prepare_files, read_meta, DatasetMeta, PrepareConfig, Prepared,
    META_FILE,
};
pub use sampling::{class_counts, shuffle, shuffle_split, split, train_len, undersample, Labeled};
pub use scaler::{apply_scaler, fit_scaler, ScalerKind, ScalerParams};

use std::path::PathBuf;

use thiserror::Error;

use crate::format::{FormatError, Label};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot fit a scaler on an empty training set")]
    EmptyFit,
    #[error("class {0:?} has no events")]
    EmptyClass(Label),
    #[error("split fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("metadata {path}: {message}")]
    Meta { path: PathBuf, message: String },
    #[error("shard count must be at least 1")]
    NoShards,
}
