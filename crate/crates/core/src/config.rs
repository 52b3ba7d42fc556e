//! Declarative run configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config file.
//! Credentials are never read from here; see [`crate::adapters::SCORER_API_KEY`]
//! and [`crate::adapters::ANNOTATOR_API_KEY`].

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{ChatEndpoint, ClassifierConfig, NliConfig};
use crate::analysis::DEFAULT_SEED;
use crate::corpus::CorpusFormat;
use crate::report::sha256_hex;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_run_name")]
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_run_name() -> String {
    "audit".to_string()
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            name: default_run_name(),
            seed: default_seed(),
            out_dir: default_out_dir(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub path: PathBuf,
    pub format: CorpusFormat,
    /// Defaults to the file stem.
    #[serde(default)]
    pub name: Option<String>,
}

impl CorpusSource {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpora {
    /// Templated corpus used for minimal-set bias estimation.
    pub bias: CorpusSource,
    /// Corpus the remaining analyses run on; defaults to the bias corpus.
    #[serde(default)]
    pub eval: Option<CorpusSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationMode {
    /// Write prompt batches for an external annotator and stop.
    EmitPrompts,
    /// Read replies previously collected for the emitted prompts.
    IngestResponses,
    /// Call a chat-completion service directly.
    CallService,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationConfig {
    pub mode: AnnotationMode,
    /// JSONL of `{"case_id", "response"}` rows.
    #[serde(default)]
    pub emotion_responses: Option<PathBuf>,
    #[serde(default)]
    pub stereotype_responses: Option<PathBuf>,
    #[serde(default)]
    pub chat: Option<ChatEndpoint>,
    #[serde(default = "default_chat_rate")]
    pub rate_limit: f64,
}

fn default_chat_rate() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "yes")]
    pub bias: bool,
    #[serde(default = "yes")]
    pub emotions: bool,
    #[serde(default = "yes")]
    pub scm: bool,
    #[serde(default = "yes")]
    pub cluster: bool,
    #[serde(default = "yes")]
    pub calibrate: bool,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn yes() -> bool {
    true
}
fn default_k() -> usize {
    10
}
fn default_min_count() -> usize {
    10
}
fn default_bins() -> usize {
    20
}
fn default_top_k() -> usize {
    10
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            bias: true,
            emotions: true,
            scm: true,
            cluster: true,
            calibrate: true,
            k: default_k(),
            min_count: default_min_count(),
            bins: default_bins(),
            top_k: default_top_k(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub corpora: Corpora,
    #[serde(rename = "classifier")]
    pub classifiers: Vec<ClassifierConfig>,
    #[serde(default)]
    pub nli: Option<NliConfig>,
    #[serde(default)]
    pub annotation: Option<AnnotationConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.run.out_dir);
        fix(&mut self.corpora.bias.path);
        if let Some(e) = self.corpora.eval.as_mut() {
            fix(&mut e.path);
        }
        if let Some(a) = self.annotation.as_mut() {
            a.emotion_responses.as_mut().map(fix);
            a.stereotype_responses.as_mut().map(fix);
        }
    }

    pub fn eval_source(&self) -> &CorpusSource {
        self.corpora.eval.as_ref().unwrap_or(&self.corpora.bias)
    }

    pub fn emotions_enabled(&self) -> bool {
        self.analysis.emotions && self.annotation.is_some()
    }

    pub fn scm_enabled(&self) -> bool {
        self.analysis.scm && self.nli.is_some()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let mut sources = vec![&self.corpora.bias];
        sources.extend(self.corpora.eval.as_ref());
        for s in sources {
            if !s.path.is_file() {
                return bad(format!("corpus file {} does not exist", s.path.display()));
            }
        }
        if self.classifiers.is_empty() {
            return bad("at least one [[classifier]] is required".into());
        }
        let mut ids = HashSet::new();
        for c in &self.classifiers {
            c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !ids.insert(c.model_id.as_str()) {
                return bad(format!("duplicate model_id `{}`", c.model_id));
            }
        }
        if let Some(n) = &self.nli {
            n.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if let Some(a) = &self.annotation {
            match a.mode {
                AnnotationMode::IngestResponses => {
                    for (label, p) in [
                        ("emotion_responses", &a.emotion_responses),
                        ("stereotype_responses", &a.stereotype_responses),
                    ] {
                        match p {
                            None => return bad(format!("annotation: ingest_responses needs `{label}`")),
                            Some(p) if !p.is_file() => {
                                return bad(format!("annotation: {} does not exist", p.display()))
                            }
                            _ => {}
                        }
                    }
                }
                AnnotationMode::CallService if a.chat.is_none() => {
                    return bad("annotation: call_service needs [annotation.chat]".into());
                }
                _ => {}
            }
            if !(a.rate_limit > 0.0 && a.rate_limit.is_finite()) {
                return bad("annotation: rate_limit must be > 0".into());
            }
        }
        let an = &self.analysis;
        if an.k == 0 || an.bins < 2 || an.top_k == 0 {
            return bad("analysis: k >= 1, bins >= 2 and top_k >= 1 required".into());
        }
        Ok(())
    }

    /// Digest of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&c).expect("serializable").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [corpora.bias]
        path = "bias.csv"
        format = "hatecheck_csv"

        [[classifier]]
        model_id = "lex"
        backend = "builtin_lexicon"
    "#;

    #[test]
    fn defaults_and_paths() {
        let c = RunConfig::from_toml(MINIMAL, Path::new("/cfg")).unwrap();
        assert_eq!(c.run.seed, 42);
        assert_eq!(c.run.out_dir, Path::new("/cfg/out"));
        assert_eq!(c.corpora.bias.path, Path::new("/cfg/bias.csv"));
        assert_eq!(c.eval_source().display_name(), "bias");
        assert_eq!(c.analysis.bins, 20);
        assert!(!c.emotions_enabled());
    }

    #[test]
    fn missing_corpus_is_invalid() {
        let c = RunConfig::from_toml(MINIMAL, Path::new("/nonexistent")).unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(m)) if m.contains("does not exist")));
    }

    #[test]
    fn secrets_are_rejected() {
        let text = format!("{MINIMAL}\napi_key = \"x\"\n");
        assert!(RunConfig::from_toml(&text, Path::new("/")).is_err());
        let text = MINIMAL.replace("backend = \"builtin_lexicon\"", "backend = \"builtin_lexicon\"\napi_key = \"x\"");
        assert!(RunConfig::from_toml(&text, Path::new("/")).is_err());
    }

    #[test]
    fn hash_ignores_out_dir() {
        let a = RunConfig::from_toml(MINIMAL, Path::new("/a")).unwrap();
        let mut b = a.clone();
        b.run.out_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.run.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }
}
