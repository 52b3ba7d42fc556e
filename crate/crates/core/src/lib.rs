//! Auditing toolkit for hate-speech classifiers: identity-mention bias from
//! minimal sets, emotion and stereotype breakdowns, warmth/competence scoring,
//! clustering and calibration, wired together by a staged pipeline.

pub mod adapters;
pub mod analysis;
pub mod bias;
pub mod config;
pub mod corpus;
pub mod emotion;
pub mod pipeline;
pub mod render;
pub mod report;
pub mod scm;
pub mod synthetic;

pub use adapters::{
    AdapterError, Backend, ClassifierConfig, Label, NliConfig, NliRecord, ScoreRecord,
};
pub use bias::{BiasError, BiasProfile, NormalizedPrediction};
pub use config::{ConfigError, RunConfig};
pub use corpus::{Corpus, CorpusError, CorpusFormat, Gold, TargetIdentity, TemplateGroup, TestCase};
pub use emotion::{Emotion, EmotionAnnotation, EmotionError, Polarity};
pub use pipeline::{run, PipelineError, RunOutcome, Stage};
pub use report::{Manifest, ReportBundle};
pub use scm::{HypothesisKind, ScmScore};
