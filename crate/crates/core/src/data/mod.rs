//! Interaction ingestion and every static structure derived from it.

mod bundle;
mod correlation;
mod graph;
mod records;
mod split;

pub use bundle::{
    fingerprint, prepare, read_bundle, read_matrix_bin, write_bundle, write_matrix_bin, DataConfig,
    DatasetStats, PreparedDataset, MATRIX_MAGIC,
};
pub use correlation::{
    build_feedback_correlation, build_item_adjacency, normalize_adjacency, CorrelationSet,
    FeedbackCorrelation,
};
pub use graph::{normalize_times, Event, FeedbackGraph, IndexMaps};
pub use records::{
    filter_min_interactions, load_interactions, parse_interactions, polarity_of, Field,
    FilterOutcome, InteractionRecord, LoadReport, Polarity, Schema, SkippedRow, DEFAULT_THRESHOLD,
};
pub use split::{chronological_split, Split, SplitDataset, SplitRatios, SplitReport};
