//! Ingestion, resampling, activation extraction, window sampling and
//! synthetic data.

use thiserror::Error;

mod activations;
mod ingest;
mod sampling;
mod series;
pub mod shards;
pub mod synth;

pub use activations::{get_activations, Activation, ActivationSpec};
pub use ingest::{ingest_csv, parse_csv, write_csv, ColumnSpec};
pub use sampling::{
    denormalize, filter_training_pair, generate_pairs, normalize_pair, positive_offsets, ChannelPair, FilterDecision,
    PairKind, PairStats, Provenance, RawPair, SamplePair, SamplingConfig, Skip, Split,
};
pub use series::{align, resample, resample_6s, CleanWindows, PowerSeries, DEFAULT_MAX_GAP_SECONDS, TARGET_PERIOD};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("cannot upsample from a {from} s period to {to} s")]
    Upsample { from: f64, to: f64 },
    #[error("{path}:{line}: {message}")]
    Csv { path: String, line: u64, message: String },
    #[error("no rows in {0}")]
    Empty(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed shard: {0}")]
    Shard(String),
}

pub type Result<T> = std::result::Result<T, DataError>;
