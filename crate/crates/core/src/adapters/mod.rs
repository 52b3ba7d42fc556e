//! Classifier and NLI backends.
//!
//! Everything downstream consumes [`ScoreRecord`] and [`NliRecord`] only; how a
//! score was obtained (remote API, HTTP scoring service, cache file or the
//! built-in lexicon classifier) stays behind this module.

mod cache;
mod http;
pub(crate) mod lexicon;
mod limiter;
mod score;
mod transport;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Gold, TargetIdentity};
use crate::scm::HypothesisKind;

pub use cache::{JsonlLog, ScoreCache};
pub use http::{
    chat_complete, nli_score, ChatEndpoint, RetryPolicy, SCORER_API_KEY, ANNOTATOR_API_KEY,
};
pub use lexicon::{builtin_lexicon_score, builtin_nli_logits, HATE_TERMS, POSITIVE_TERMS};
pub use limiter::RateLimiter;
pub use score::{score_cases, score_nli};
pub use transport::{
    HttpResponse, OfflineTransport, RecordingTransport, Transport, TransportError, UreqTransport,
};

/// Predicted label; shares the gold label's vocabulary.
pub type Label = Gold;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("backend unavailable: {message} ({} case(s) unscored)", unscored.len())]
    BackendUnavailable {
        message: String,
        unscored: Vec<String>,
    },
    #[error("quota exceeded: {message} ({} case(s) unscored)", unscored.len())]
    QuotaExceeded {
        message: String,
        unscored: Vec<String>,
    },
    #[error("malformed response: {message} ({} case(s) unscored)", unscored.len())]
    MalformedResponse {
        message: String,
        unscored: Vec<String>,
    },
    #[error("incomplete cache: {message} ({} missing)", missing.len())]
    IncompleteCache {
        message: String,
        missing: Vec<String>,
    },
    #[error("case `{case_id}` has no named target identity")]
    UnsupportedIdentity { case_id: String },
    #[error("invalid classifier config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AdapterError {
    /// Case ids left without a score when the error was raised.
    pub fn unscored(&self) -> &[String] {
        match self {
            AdapterError::BackendUnavailable { unscored, .. }
            | AdapterError::QuotaExceeded { unscored, .. }
            | AdapterError::MalformedResponse { unscored, .. } => unscored,
            AdapterError::IncompleteCache { missing, .. } => missing,
            _ => &[],
        }
    }

    pub(crate) fn with_unscored(self, ids: Vec<String>) -> Self {
        match self {
            AdapterError::BackendUnavailable { message, .. } => AdapterError::BackendUnavailable {
                message,
                unscored: ids,
            },
            AdapterError::QuotaExceeded { message, .. } => AdapterError::QuotaExceeded {
                message,
                unscored: ids,
            },
            AdapterError::MalformedResponse { message, .. } => AdapterError::MalformedResponse {
                message,
                unscored: ids,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Comment-analysis style API, one attribute per request.
    RemoteAttributeApi,
    /// `POST /v1/score` service (see the model-service protocol).
    HttpScoringService,
    /// Scores must already be present in the cache.
    CacheFile,
    /// Deterministic keyword classifier with per-identity offsets.
    BuiltinLexicon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub model_id: String,
    pub backend: Backend,
    #[serde(default)]
    pub attribute: Option<String>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Requests per second.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: f64,
    /// Maximum in-flight requests.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Texts per `/v1/score` request.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Planted per-identity offsets for the builtin lexicon backend, keyed by
    /// identity surface string.
    #[serde(default)]
    pub offsets: BTreeMap<String, f64>,
    #[serde(skip)]
    pub retry: RetryPolicy,
}

fn default_threshold() -> f64 {
    0.5
}
fn default_rate_limit() -> f64 {
    10.0
}
fn default_parallelism() -> usize {
    4
}
fn default_batch_size() -> usize {
    32
}

impl ClassifierConfig {
    pub fn new(model_id: impl Into<String>, backend: Backend) -> Self {
        ClassifierConfig {
            model_id: model_id.into(),
            backend,
            attribute: None,
            threshold: default_threshold(),
            endpoint: None,
            rate_limit: default_rate_limit(),
            parallelism: default_parallelism(),
            batch_size: default_batch_size(),
            offsets: BTreeMap::new(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        let bad = |m: String| Err(AdapterError::InvalidConfig(format!("{}: {m}", self.model_id)));
        if self.model_id.trim().is_empty() {
            return bad("empty model_id".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold {} outside (0,1)", self.threshold));
        }
        if !(self.rate_limit > 0.0 && self.rate_limit.is_finite()) {
            return bad(format!("rate_limit {} must be > 0", self.rate_limit));
        }
        if self.parallelism == 0 || self.batch_size == 0 {
            return bad("parallelism and batch_size must be >= 1".into());
        }
        match self.backend {
            Backend::RemoteAttributeApi => {
                if self.attribute.is_none() {
                    return bad("remote_attribute_api needs `attribute`".into());
                }
                if self.endpoint.is_none() {
                    return bad("remote_attribute_api needs `endpoint`".into());
                }
            }
            Backend::HttpScoringService if self.endpoint.is_none() => {
                return bad("http_scoring_service needs `endpoint`".into());
            }
            _ => {}
        }
        for key in self.offsets.keys() {
            if !TargetIdentity::parse(key).is_named() {
                return bad(format!("offset for unknown identity `{key}`"));
            }
        }
        Ok(())
    }

    /// Offset table keyed by identity; identities without an entry get 0.
    pub fn identity_offsets(&self) -> BTreeMap<TargetIdentity, f64> {
        self.offsets
            .iter()
            .map(|(k, v)| (TargetIdentity::parse(k), *v))
            .collect()
    }

    pub fn label_for(&self, score: f64) -> Label {
        if score >= self.threshold {
            Gold::Hateful
        } else {
            Gold::NonHateful
        }
    }
}

/// One classifier verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub model_id: String,
    pub case_id: String,
    pub score: f64,
    pub label: Label,
}

impl ScoreRecord {
    pub fn new(model_id: &str, case_id: &str, score: f64, threshold: f64) -> Self {
        ScoreRecord {
            model_id: model_id.to_string(),
            case_id: case_id.to_string(),
            score,
            label: if score >= threshold {
                Gold::Hateful
            } else {
                Gold::NonHateful
            },
        }
    }
}

/// Raw NLI logits for one (case, hypothesis) pair, ordered entail, contradict, neutral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NliRecord {
    pub case_id: String,
    pub hypothesis_kind: HypothesisKind,
    pub logits: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NliBackend {
    Http,
    CacheFile,
    BuiltinLexicon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NliConfig {
    pub backend: NliBackend,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_rate_limit")]
    pub rate_limit: f64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(skip)]
    pub retry: RetryPolicy,
}

impl NliConfig {
    pub fn builtin() -> Self {
        NliConfig {
            backend: NliBackend::BuiltinLexicon,
            endpoint: None,
            rate_limit: default_rate_limit(),
            parallelism: default_parallelism(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), AdapterError> {
        if self.backend == NliBackend::Http && self.endpoint.is_none() {
            return Err(AdapterError::InvalidConfig("nli: http backend needs `endpoint`".into()));
        }
        if !(self.rate_limit > 0.0 && self.rate_limit.is_finite()) || self.parallelism == 0 {
            return Err(AdapterError::InvalidConfig(
                "nli: rate_limit must be > 0 and parallelism >= 1".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn default_timeout() -> Duration {
    Duration::from_secs(60)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = ClassifierConfig::new("m", Backend::BuiltinLexicon);
        assert!(c.validate().is_ok());
        c.threshold = 1.0;
        assert!(c.validate().is_err());
        c.threshold = 0.5;
        c.rate_limit = 0.0;
        assert!(c.validate().is_err());
        c.rate_limit = 1.0;
        c.offsets.insert("martians".into(), 0.1);
        assert!(c.validate().is_err());

        let r = ClassifierConfig::new("p", Backend::RemoteAttributeApi);
        assert!(r.validate().is_err());
    }

    #[test]
    fn label_uses_threshold_inclusively() {
        let c = ClassifierConfig::new("m", Backend::BuiltinLexicon);
        assert_eq!(c.label_for(0.5), Gold::Hateful);
        assert_eq!(c.label_for(0.4999), Gold::NonHateful);
    }

    #[test]
    fn config_parses_from_toml() {
        let c: ClassifierConfig = toml::from_str(
            r#"
            model_id = "lex"
            backend = "builtin_lexicon"
            offsets = { women = -0.15, "black people" = 0.2 }
            "#,
        )
        .unwrap();
        assert_eq!(c.threshold, 0.5);
        let o = c.identity_offsets();
        assert_eq!(o[&TargetIdentity::Women], -0.15);
        assert_eq!(o[&TargetIdentity::BlackPeople], 0.2);
    }
}
