//! Close-set benchmark runner: manifest → per-case scores → report.

mod manifest;
mod report;
mod run;

use thiserror::Error;

pub use manifest::{
    load_manifest, reference_count, video_counts, DimensionEntry, Manifest, ScorerKind, REFERENCE_COUNTS,
    REFERENCE_TOTAL_VIDEOS,
};
pub use report::{
    normalize_scores, render_markdown, render_radar_csv, render_report, BenchmarkReport, CaseRecord, CaseStatus, DimensionSummary, ModelReport,
    NormalizedScores, Provenance, AGGREGATION_NOTE,
};
pub use run::{
    run_close_set, score_case, CaseOutcome, ModelArtifacts, RunConfig, DEFAULT_REBOUND_QUESTION, EXTENSION_QUESTIONS,
    NEW_ACTIONS_QUESTION,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("manifest schema violation: {0}")]
    Schema(String),
    #[error("duplicate case_id {0}")]
    DuplicateCase(String),
    #[error("dimension {dimension_id} has {found} videos, expected {expected}")]
    CountMismatch {
        dimension_id: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("normalization needs at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("invalid run configuration: {0}")]
    Config(String),
}
