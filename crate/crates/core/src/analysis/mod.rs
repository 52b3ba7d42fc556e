//! Classification metrics, warmth/competence clustering and calibration.

mod calibration;
mod kmeans;
mod metrics;

use std::collections::HashMap;

use thiserror::Error;

use crate::adapters::ScoreRecord;

pub use calibration::{reliability_bins, score_histogram, Reliability, ReliabilityBin, ScoreHistogram};
pub use kmeans::{
    cluster_accuracy_correlation, fill_accuracy, kmeans_2d, kmeans_points, pearson, spearman,
    Cluster2D, ClusterRow, Correlation, KMeansFit, KMeansRun, DEFAULT_SEED,
};
pub use metrics::{prf_per_identity, MacroAverage, PrfRow, PrfTable};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("no prediction for case `{0}`")]
    MissingPrediction(String),
    #[error("case `{0}` is not in the corpus")]
    UnknownCaseId(String),
    #[error("{points} point(s) cannot form {k} cluster(s)")]
    TooFewPoints { points: usize, k: usize },
    #[error("correlation needs at least 3 clusters, got {0}")]
    TooFewClusters(usize),
    #[error("correlation undefined: all {0} are equal")]
    DegenerateVariance(&'static str),
    #[error("bin count must be at least {min}, got {got}")]
    InvalidBins { got: usize, min: usize },
}

pub(crate) fn index_predictions(predictions: &[ScoreRecord]) -> HashMap<&str, &ScoreRecord> {
    predictions.iter().map(|p| (p.case_id.as_str(), p)).collect()
}
