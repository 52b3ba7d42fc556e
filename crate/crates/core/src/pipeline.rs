//! Stage orchestration over an output directory.
//!
//! Layout under `out_dir`:
//!
//! ```text
//! cache/<role>/{scores,nli,chat}.jsonl   append-only backend caches
//! data/...                               stage outputs read by later stages
//! stages/<stage>.json                    completion marker + summary
//! report/                                the report bundle
//! ```
//!
//! A stage refuses to run until the markers of the stages it reads exist.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::adapters::{
    chat_complete, score_cases, score_nli, AdapterError, JsonlLog, RateLimiter, ScoreCache,
    ScoreRecord, Transport, ANNOTATOR_API_KEY,
};
use crate::analysis::{
    cluster_accuracy_correlation, fill_accuracy, kmeans_2d, prf_per_identity, reliability_bins,
    score_histogram, AnalysisError, Cluster2D, Correlation, PrfTable, Reliability, ScoreHistogram,
};
use crate::bias::{apply_debias, identity_bias_profile, normalize_by_template, BiasError, BiasProfile};
use crate::config::{AnnotationMode, ConfigError, CorpusSource, RunConfig};
use crate::corpus::{
    build_minimal_sets, corpus_stats, read_corpus, write_generic_csv, Corpus, CorpusError,
    CorpusFormat, Gold, TargetIdentity, TemplateGroup, TestCase,
};
use crate::emotion::{
    accuracy_by_emotion, accuracy_by_polarity_and_label, build_emotion_prompt,
    emotion_distribution, parse_emotion_response, Emotion, EmotionAnnotation, EmotionError,
    GroupBy, Polarity,
};
use crate::report::{write_bundle, Manifest, ReportError};
use crate::scm::{
    build_stereotype_prompt, parse_stereotype_response, scm_identity_means, scores_from_nli,
    top_stereotypes, ScmError, ScmScore, StereotypeSpan,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Score,
    Bias,
    Debias,
    Annotate,
    Scm,
    Cluster,
    Calibrate,
    Metrics,
    Report,
    All,
}

impl Stage {
    pub const SEQUENCE: [Stage; 10] = [
        Stage::Ingest,
        Stage::Score,
        Stage::Bias,
        Stage::Debias,
        Stage::Annotate,
        Stage::Scm,
        Stage::Cluster,
        Stage::Calibrate,
        Stage::Metrics,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Score => "score",
            Stage::Bias => "bias",
            Stage::Debias => "debias",
            Stage::Annotate => "annotate",
            Stage::Scm => "scm",
            Stage::Cluster => "cluster",
            Stage::Calibrate => "calibrate",
            Stage::Metrics => "metrics",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }

    /// Stages whose outputs this one reads.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Ingest | Stage::All => &[],
            Stage::Score | Stage::Annotate | Stage::Scm => &[Stage::Ingest],
            Stage::Bias | Stage::Calibrate | Stage::Metrics => &[Stage::Score],
            Stage::Debias => &[Stage::Bias],
            Stage::Cluster => &[Stage::Scm, Stage::Score],
            Stage::Report => &[Stage::Ingest, Stage::Score, Stage::Metrics],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Stage::SEQUENCE
            .iter()
            .chain(&[Stage::All])
            .find(|st| st.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}` needs `{missing}` to have run first")]
    StageDependencyMissing { stage: Stage, missing: Stage },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Bias(#[from] BiasError),
    #[error(transparent)]
    Emotion(#[from] EmotionError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 2 config, 3 backend, 4 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::StageDependencyMissing { .. } => 2,
            PipelineError::Adapter(e) => match e {
                AdapterError::InvalidConfig(_) => 2,
                AdapterError::UnsupportedIdentity { .. } | AdapterError::Io { .. } => 4,
                _ => 3,
            },
            _ => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "ConfigInvalid",
            PipelineError::StageDependencyMissing { .. } => "StageDependencyMissing",
            PipelineError::Corpus(_) => "CorpusError",
            PipelineError::Adapter(e) => match e {
                AdapterError::BackendUnavailable { .. } => "BackendUnavailable",
                AdapterError::QuotaExceeded { .. } => "QuotaExceeded",
                AdapterError::MalformedResponse { .. } => "MalformedResponse",
                AdapterError::IncompleteCache { .. } => "IncompleteCache",
                AdapterError::UnsupportedIdentity { .. } => "UnsupportedIdentity",
                AdapterError::InvalidConfig(_) => "ConfigInvalid",
                AdapterError::Io { .. } => "IoFailure",
            },
            PipelineError::Bias(_) => "BiasError",
            PipelineError::Emotion(_) => "EmotionError",
            PipelineError::Scm(_) => "ScmError",
            PipelineError::Analysis(_) => "AnalysisError",
            PipelineError::Report(_) => "ReportError",
            PipelineError::Data { .. } => "DataError",
            PipelineError::Io { .. } => "IoFailure",
        }
    }

    /// Machine-readable summary printed by the CLI.
    pub fn summary(&self, stage: Stage) -> Value {
        let mut v = json!({
            "status": "error",
            "stage": stage.name(),
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let PipelineError::Adapter(e) = self {
            if !e.unscored().is_empty() {
                v["unscored"] = json!(e.unscored());
            }
        }
        if let PipelineError::StageDependencyMissing { missing, .. } = self {
            v["missing"] = json!(missing.name());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub stages: Vec<StageSummary>,
    pub manifest: Option<Manifest>,
}

/// Runs one stage (or every enabled stage for [`Stage::All`]).
pub fn run(config: &RunConfig, stage: Stage, transport: &dyn Transport) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let p = Pipeline {
        config,
        out: config.run.out_dir.clone(),
        transport,
    };
    let stages: Vec<Stage> = if stage == Stage::All {
        Stage::SEQUENCE.into_iter().filter(|s| p.enabled(*s)).collect()
    } else {
        vec![stage]
    };
    let mut outcome = RunOutcome {
        stages: Vec::new(),
        manifest: None,
    };
    for s in stages {
        log::info!("stage {s}");
        let (summary, manifest) = p.run_stage(s)?;
        if manifest.is_some() {
            outcome.manifest = manifest;
        }
        outcome.stages.push(StageSummary { stage: s, summary });
    }
    Ok(outcome)
}

// ---- on-disk helpers -------------------------------------------------------

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut body = serde_json::to_string_pretty(value).expect("serializable");
    body.push('\n');
    fs::write(path, body).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut body = String::new();
    for r in rows {
        body.push_str(&serde_json::to_string(r).expect("serializable"));
        body.push('\n');
    }
    fs::write(path, body).map_err(io_err(path))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Data {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Annotator reply collected outside the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRow {
    pub case_id: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PromptRow {
    case_id: String,
    system: String,
    user: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ChatLine {
    task: String,
    case_id: String,
    response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFailure {
    pub case_id: String,
    pub raw_response: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalSet {
    pub template_id: String,
    pub case_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub name: String,
    pub n_cases: usize,
    pub n_templates: usize,
    pub n_template_cases: usize,
    /// (identity, hateful, non-hateful)
    pub stats: Vec<(TargetIdentity, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub bias: CorpusSummary,
    pub eval: CorpusSummary,
    pub eval_is_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub seed: u64,
    pub k: usize,
    pub inertia: f64,
    pub clusters: Vec<Cluster2D>,
    /// (case_id, cluster id), in scm_scores order.
    pub assignments: Vec<(String, usize)>,
    pub correlations: BTreeMap<String, CorrelationOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorrelationOutcome {
    Ok(Correlation),
    Undefined { error: String, table: Vec<(usize, f64, Option<f64>, usize)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub reliability: Reliability,
    pub histogram: ScoreHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub key: String,
    pub accuracy: Option<f64>,
    pub correct: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub prf: PrfTable,
    pub prf_debiased: Option<PrfTable>,
    pub accuracy_by_emotion: Option<Vec<AccuracyRow>>,
    /// key is `<gold>/<polarity>`.
    pub accuracy_by_polarity: Option<Vec<AccuracyRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionCounts {
    pub group_by: GroupBy,
    /// (group, emotion, count)
    pub cells: Vec<(String, String, usize)>,
    pub detected: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub models: BTreeMap<String, ModelMetrics>,
    pub emotion_distribution: Vec<EmotionCounts>,
}

struct Pipeline<'a> {
    config: &'a RunConfig,
    out: PathBuf,
    transport: &'a dyn Transport,
}

impl Pipeline<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn marker(&self, stage: Stage) -> PathBuf {
        self.path(&format!("stages/{}.json", stage.name()))
    }

    fn done(&self, stage: Stage) -> bool {
        self.marker(stage).is_file()
    }

    fn enabled(&self, stage: Stage) -> bool {
        let c = self.config;
        match stage {
            Stage::Bias | Stage::Debias => c.analysis.bias,
            Stage::Annotate => c.emotions_enabled(),
            Stage::Scm => c.scm_enabled(),
            Stage::Cluster => c.scm_enabled() && c.analysis.cluster,
            Stage::Calibrate => c.analysis.calibrate,
            _ => true,
        }
    }

    fn check_deps(&self, stage: Stage) -> Result<(), PipelineError> {
        let mut deps: Vec<Stage> = stage.requires().to_vec();
        if stage == Stage::Report {
            deps.extend(Stage::SEQUENCE.into_iter().filter(|s| *s != Stage::Report && self.enabled(*s)));
        }
        for d in deps {
            if !self.done(d) {
                return Err(PipelineError::StageDependencyMissing { stage, missing: d });
            }
        }
        Ok(())
    }

    fn run_stage(&self, stage: Stage) -> Result<(Value, Option<Manifest>), PipelineError> {
        self.check_deps(stage)?;
        let mut manifest = None;
        let summary = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Score => self.score()?,
            Stage::Bias => self.bias()?,
            Stage::Debias => self.debias()?,
            Stage::Annotate => self.annotate()?,
            Stage::Scm => self.scm()?,
            Stage::Cluster => self.cluster()?,
            Stage::Calibrate => self.calibrate()?,
            Stage::Metrics => self.metrics()?,
            Stage::Report => {
                let m = self.report()?;
                let v = json!({
                    "dir": "report",
                    "files": m.files.len(),
                    "bundle_checksum": m.run.bundle_checksum,
                });
                manifest = Some(m);
                v
            }
            Stage::All => unreachable!("expanded by run()"),
        };
        write_json(&self.marker(stage), &summary)?;
        Ok((summary, manifest))
    }

    // ---- corpora -----------------------------------------------------------

    fn eval_is_bias(&self) -> bool {
        self.config.corpora.eval.is_none()
    }

    fn corpus_file(&self, role: &str) -> PathBuf {
        self.path(&format!("data/corpus.{role}.csv"))
    }

    fn load_source(src: &CorpusSource) -> Result<Corpus, PipelineError> {
        let file = File::open(&src.path).map_err(io_err(&src.path))?;
        Ok(read_corpus(file, src.format, &src.display_name())?)
    }

    fn bias_corpus(&self) -> Result<Corpus, PipelineError> {
        let path = self.corpus_file("bias");
        let file = File::open(&path).map_err(io_err(&path))?;
        Ok(read_corpus(file, CorpusFormat::GenericCsv, &self.config.corpora.bias.display_name())?)
    }

    fn eval_corpus(&self) -> Result<Corpus, PipelineError> {
        if self.eval_is_bias() {
            return self.bias_corpus();
        }
        let path = self.corpus_file("eval");
        let file = File::open(&path).map_err(io_err(&path))?;
        Ok(read_corpus(file, CorpusFormat::GenericCsv, &self.config.eval_source().display_name())?)
    }

    fn minimal_sets(&self, corpus: &Corpus) -> Result<Vec<TemplateGroup>, PipelineError> {
        let sets: Vec<MinimalSet> = read_json(&self.path("data/minimal_sets.json"))?;
        sets.into_iter()
            .map(|s| {
                let cases = s
                    .case_ids
                    .iter()
                    .map(|id| {
                        corpus.get(id).cloned().ok_or_else(|| PipelineError::Data {
                            path: self.path("data/minimal_sets.json"),
                            message: format!("case `{id}` missing from the ingested corpus"),
                        })
                    })
                    .collect::<Result<Vec<TestCase>, _>>()?;
                Ok(TemplateGroup {
                    template_id: s.template_id,
                    cases,
                })
            })
            .collect()
    }

    fn cache(&self, role: &str) -> Result<ScoreCache, PipelineError> {
        let role = if self.eval_is_bias() { "bias" } else { role };
        let dir = self.path(&format!("cache/{role}"));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(ScoreCache::open(&dir)?)
    }

    fn predictions(&self, role: &str) -> Result<Vec<ScoreRecord>, PipelineError> {
        read_jsonl(&self.path(&format!("data/predictions.{role}.jsonl")))
    }

    fn model_predictions<'r>(records: &'r [ScoreRecord], model: &str) -> Vec<ScoreRecord> {
        records.iter().filter(|r| r.model_id == model).cloned().collect::<Vec<_>>()
    }

    // ---- stages ------------------------------------------------------------

    fn summarize(corpus: &Corpus, groups: &[TemplateGroup]) -> CorpusSummary {
        let stats = corpus_stats(corpus);
        let mut idents: Vec<&TargetIdentity> = stats.keys().map(|(i, _)| i).collect();
        idents.dedup();
        CorpusSummary {
            name: corpus.name().to_string(),
            n_cases: corpus.len(),
            n_templates: groups.len(),
            n_template_cases: groups.iter().map(|g| g.cases.len()).sum(),
            stats: idents
                .into_iter()
                .map(|i| {
                    let get = |g| stats.get(&(i.clone(), g)).copied().unwrap_or(0);
                    (i.clone(), get(Gold::Hateful), get(Gold::NonHateful))
                })
                .collect(),
        }
    }

    fn ingest(&self) -> Result<Value, PipelineError> {
        let bias = Self::load_source(&self.config.corpora.bias)?;
        let groups = if self.config.analysis.bias {
            build_minimal_sets(&bias)?
        } else {
            Vec::new()
        };
        let write_corpus = |c: &Corpus, role: &str| -> Result<(), PipelineError> {
            let path = self.corpus_file(role);
            fs::create_dir_all(path.parent().unwrap()).map_err(io_err(&path))?;
            let f = File::create(&path).map_err(io_err(&path))?;
            Ok(write_generic_csv(c, f)?)
        };
        write_corpus(&bias, "bias")?;
        let sets: Vec<MinimalSet> = groups
            .iter()
            .map(|g| MinimalSet {
                template_id: g.template_id.clone(),
                case_ids: g.cases.iter().map(|c| c.case_id.clone()).collect(),
            })
            .collect();
        write_json(&self.path("data/minimal_sets.json"), &sets)?;
        let bias_summary = Self::summarize(&bias, &groups);
        let eval_summary = match &self.config.corpora.eval {
            Some(src) => {
                let eval = Self::load_source(src)?;
                write_corpus(&eval, "eval")?;
                Self::summarize(&eval, &[])
            }
            None => bias_summary.clone(),
        };
        let summary = IngestSummary {
            bias: bias_summary,
            eval: eval_summary,
            eval_is_bias: self.eval_is_bias(),
        };
        Ok(serde_json::to_value(summary).expect("serializable"))
    }

    fn score(&self) -> Result<Value, PipelineError> {
        let bias = self.bias_corpus()?;
        let groups = self.minimal_sets(&bias)?;
        let bias_cases: Vec<TestCase> = groups.iter().flat_map(|g| g.cases.iter().cloned()).collect();
        let eval = self.eval_corpus()?;

        let mut bias_cache = self.cache("bias")?;
        let mut eval_cache = if self.eval_is_bias() { None } else { Some(self.cache("eval")?) };
        let (mut bias_out, mut eval_out) = (Vec::new(), Vec::new());
        let mut summary = serde_json::Map::new();
        for clf in &self.config.classifiers {
            let b = score_cases(clf, &bias_cases, &mut bias_cache, self.transport)?;
            let cache = eval_cache.as_mut().unwrap_or(&mut bias_cache);
            let e = score_cases(clf, eval.cases(), cache, self.transport)?;
            summary.insert(
                clf.model_id.clone(),
                json!({ "bias_cases": b.len(), "eval_cases": e.len() }),
            );
            bias_out.extend(b);
            eval_out.extend(e);
        }
        write_jsonl(&self.path("data/predictions.bias.jsonl"), &bias_out)?;
        write_jsonl(&self.path("data/predictions.eval.jsonl"), &eval_out)?;
        Ok(Value::Object(summary))
    }

    fn bias(&self) -> Result<Value, PipelineError> {
        let corpus = self.bias_corpus()?;
        let groups = self.minimal_sets(&corpus)?;
        let preds = self.predictions("bias")?;
        let mut profiles = Vec::new();
        for clf in &self.config.classifiers {
            let mine = Self::model_predictions(&preds, &clf.model_id);
            let normalized = normalize_by_template(&groups, &mine)?;
            profiles.push(identity_bias_profile(&normalized, &clf.model_id, corpus.name())?);
        }
        write_json(&self.path("data/bias_profiles.json"), &profiles)?;
        Ok(json!(profiles
            .iter()
            .map(|p| (p.model_id.clone(), json!(p.bias)))
            .collect::<serde_json::Map<_, _>>()))
    }

    fn debias(&self) -> Result<Value, PipelineError> {
        let corpus = self.eval_corpus()?;
        let profiles: Vec<BiasProfile> = read_json(&self.path("data/bias_profiles.json"))?;
        let preds = self.predictions("eval")?;
        let thresholds: HashMap<&str, f64> = self
            .config
            .classifiers
            .iter()
            .map(|c| (c.model_id.as_str(), c.threshold))
            .collect();
        let mut out = Vec::with_capacity(preds.len());
        let mut flips: BTreeMap<String, usize> = BTreeMap::new();
        for r in &preds {
            let profile = profiles
                .iter()
                .find(|p| p.model_id == r.model_id)
                .ok_or_else(|| PipelineError::Data {
                    path: self.path("data/bias_profiles.json"),
                    message: format!("no bias profile for model `{}`", r.model_id),
                })?;
            let case = corpus.get(&r.case_id).ok_or_else(|| PipelineError::Data {
                path: self.path("data/predictions.eval.jsonl"),
                message: format!("case `{}` missing from the eval corpus", r.case_id),
            })?;
            // untargeted cases carry no identity bias
            let d = if case.identity.is_named() {
                apply_debias(r, profile, &case.identity, thresholds[r.model_id.as_str()])?
            } else {
                r.clone()
            };
            *flips.entry(r.model_id.clone()).or_insert(0) += (d.label != r.label) as usize;
            out.push(d);
        }
        write_jsonl(&self.path("data/debiased.eval.jsonl"), &out)?;
        Ok(json!({ "label_flips": flips }))
    }

    fn annotate(&self) -> Result<Value, PipelineError> {
        let ann = self.config.annotation.as_ref().ok_or_else(|| {
            ConfigError::Invalid("annotate stage needs an [annotation] section".into())
        })?;
        let corpus = self.eval_corpus()?;
        let cases: Vec<&TestCase> = corpus.cases().iter().filter(|c| c.identity.is_named()).collect();
        let prompts = |f: fn(&TestCase) -> (String, String)| -> Vec<PromptRow> {
            cases
                .iter()
                .map(|c| {
                    let (system, user) = f(c);
                    PromptRow {
                        case_id: c.case_id.clone(),
                        system,
                        user,
                    }
                })
                .collect()
        };
        let emotion_prompts = prompts(build_emotion_prompt);
        let stereotype_prompts = prompts(build_stereotype_prompt);
        write_jsonl(&self.path("data/emotion_prompts.jsonl"), &emotion_prompts)?;
        write_jsonl(&self.path("data/stereotype_prompts.jsonl"), &stereotype_prompts)?;

        let (emotion_raw, stereotype_raw): (Vec<ResponseRow>, Vec<ResponseRow>) = match ann.mode {
            AnnotationMode::EmitPrompts => {
                return Ok(json!({
                    "mode": "emit_prompts",
                    "prompts": cases.len(),
                    "pending": true,
                }));
            }
            AnnotationMode::IngestResponses => (
                read_jsonl(ann.emotion_responses.as_ref().expect("validated"))?,
                read_jsonl(ann.stereotype_responses.as_ref().expect("validated"))?,
            ),
            AnnotationMode::CallService => {
                let endpoint = ann.chat.as_ref().expect("validated");
                let key = std::env::var(ANNOTATOR_API_KEY).ok();
                let limiter = RateLimiter::new(ann.rate_limit, 1);
                let cache_dir = self.path(if self.eval_is_bias() { "cache/bias" } else { "cache/eval" });
                fs::create_dir_all(&cache_dir).map_err(io_err(&cache_dir))?;
                let mut log: JsonlLog<ChatLine> = JsonlLog::open(&cache_dir.join("chat.jsonl"))?;
                let mut known: HashMap<(String, String), String> = log
                    .records()
                    .iter()
                    .map(|l| ((l.task.clone(), l.case_id.clone()), l.response.clone()))
                    .collect();
                let policy = crate::adapters::RetryPolicy::default();
                let mut collect = |task: &str, rows: &[PromptRow]| -> Result<Vec<ResponseRow>, PipelineError> {
                    let mut out = Vec::new();
                    for (i, r) in rows.iter().enumerate() {
                        let k = (task.to_string(), r.case_id.clone());
                        let response = match known.get(&k) {
                            Some(resp) => resp.clone(),
                            None => {
                                limiter.acquire();
                                let resp = chat_complete(self.transport, endpoint, key.as_deref(), &r.system, &r.user, &policy)
                                    .map_err(|e| {
                                        e.with_unscored(rows[i..].iter().map(|r| r.case_id.clone()).collect())
                                    })?;
                                log.append(ChatLine {
                                    task: task.to_string(),
                                    case_id: r.case_id.clone(),
                                    response: resp.clone(),
                                })?;
                                known.insert(k, resp.clone());
                                resp
                            }
                        };
                        out.push(ResponseRow {
                            case_id: r.case_id.clone(),
                            response,
                        });
                    }
                    Ok(out)
                };
                (collect("emotion", &emotion_prompts)?, collect("stereotype", &stereotype_prompts)?)
            }
        };

        let mut annotations = Vec::new();
        let mut failures = Vec::new();
        for r in &emotion_raw {
            if corpus.get(&r.case_id).is_none() {
                return Err(EmotionError::UnknownCaseId(r.case_id.clone()).into());
            }
            match parse_emotion_response(&r.response) {
                Ok(emotion) => annotations.push(EmotionAnnotation {
                    case_id: r.case_id.clone(),
                    emotion,
                    raw_response: r.response.clone(),
                }),
                Err(e) => failures.push(AnnotationFailure {
                    case_id: r.case_id.clone(),
                    raw_response: r.response.clone(),
                    error: e.to_string(),
                }),
            }
        }
        let spans: Vec<StereotypeSpan> = stereotype_raw
            .iter()
            .map(|r| {
                if corpus.get(&r.case_id).is_none() {
                    return Err(PipelineError::from(ScmError::UnknownCaseId(r.case_id.clone())));
                }
                Ok(StereotypeSpan {
                    case_id: r.case_id.clone(),
                    span: parse_stereotype_response(&r.response),
                })
            })
            .collect::<Result<_, _>>()?;
        write_jsonl(&self.path("data/annotations.jsonl"), &annotations)?;
        write_jsonl(&self.path("data/annotation_failures.jsonl"), &failures)?;
        write_jsonl(&self.path("data/stereotypes.jsonl"), &spans)?;
        let total = emotion_raw.len();
        Ok(json!({
            "mode": match ann.mode {
                AnnotationMode::IngestResponses => "ingest_responses",
                _ => "call_service",
            },
            "prompts": cases.len(),
            "responses": total,
            "annotated": annotations.len(),
            "detected": annotations.iter().filter(|a| a.emotion.is_some()).count(),
            "failures": failures.len(),
            "failure_rate": if total == 0 { 0.0 } else { failures.len() as f64 / total as f64 },
            "stereotype_spans": spans.iter().filter(|s| s.span.is_some()).count(),
            "pending": false,
        }))
    }

    fn annotations(&self) -> Result<Option<Vec<EmotionAnnotation>>, PipelineError> {
        let path = self.path("data/annotations.jsonl");
        if !self.done(Stage::Annotate) || !path.is_file() {
            return Ok(None);
        }
        read_jsonl(&path).map(Some)
    }

    fn scm(&self) -> Result<Value, PipelineError> {
        let nli = self
            .config
            .nli
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("scm stage needs an [nli] section".into()))?;
        let corpus = self.eval_corpus()?;
        let cases: Vec<TestCase> = corpus.cases().iter().filter(|c| c.identity.is_named()).cloned().collect();
        let mut cache = self.cache("eval")?;
        let records = score_nli(nli, &cases, &mut cache, self.transport)?;
        let scores = scores_from_nli(&records)?;
        write_jsonl(&self.path("data/scm_scores.jsonl"), &scores)?;
        let means = scm_identity_means(&scores, &corpus)?;
        Ok(json!({
            "scored": scores.len(),
            "means": means
                .iter()
                .map(|((i, g), m)| json!({
                    "identity": i, "gold": g.as_str(),
                    "warmth": m.warmth, "competence": m.competence, "n": m.n,
                }))
                .collect::<Vec<_>>(),
        }))
    }

    fn cluster(&self) -> Result<Value, PipelineError> {
        let corpus = self.eval_corpus()?;
        let scores: Vec<ScmScore> = read_jsonl(&self.path("data/scm_scores.jsonl"))?;
        let preds = self.predictions("eval")?;
        let k = self.config.analysis.k;
        let fit = kmeans_2d(&scores, k, self.config.run.seed)?;
        let mut correlations = BTreeMap::new();
        for clf in &self.config.classifiers {
            let mine = Self::model_predictions(&preds, &clf.model_id);
            let mut clusters = fit.clusters.clone();
            fill_accuracy(&mut clusters, &mine, &corpus)?;
            let outcome = match cluster_accuracy_correlation(&clusters) {
                Ok(c) => CorrelationOutcome::Ok(c),
                Err(e @ (AnalysisError::DegenerateVariance(_) | AnalysisError::TooFewClusters(_))) => {
                    CorrelationOutcome::Undefined {
                        error: e.to_string(),
                        table: clusters
                            .iter()
                            .map(|c| (c.id, c.distance, c.accuracy, c.members.len()))
                            .collect(),
                    }
                }
                Err(e) => return Err(e.into()),
            };
            correlations.insert(clf.model_id.clone(), outcome);
        }
        let out = ClusterOutput {
            seed: fit.seed,
            k,
            inertia: fit.inertia,
            clusters: fit.clusters.clone(),
            assignments: scores
                .iter()
                .zip(&fit.assignments)
                .map(|(s, a)| (s.case_id.clone(), *a))
                .collect(),
            correlations,
        };
        write_json(&self.path("data/clusters.json"), &out)?;
        Ok(json!({
            "seed": out.seed,
            "k": k,
            "non_empty_clusters": out.clusters.len(),
            "inertia": out.inertia,
            "pearson": out.correlations.iter().map(|(m, c)| (m.clone(), match c {
                CorrelationOutcome::Ok(c) => json!(c.pearson),
                CorrelationOutcome::Undefined { error, .. } => json!(error),
            })).collect::<serde_json::Map<_, _>>(),
        }))
    }

    fn calibrate(&self) -> Result<Value, PipelineError> {
        let corpus = self.eval_corpus()?;
        let preds = self.predictions("eval")?;
        let bins = self.config.analysis.bins;
        let mut out = BTreeMap::new();
        for clf in &self.config.classifiers {
            let mine = Self::model_predictions(&preds, &clf.model_id);
            out.insert(
                clf.model_id.clone(),
                Calibration {
                    reliability: reliability_bins(&mine, &corpus, bins)?,
                    histogram: score_histogram(&mine, &corpus, bins)?,
                },
            );
        }
        write_json(&self.path("data/calibration.json"), &out)?;
        Ok(json!(out
            .iter()
            .map(|(m, c)| (m.clone(), json!({ "ece": c.reliability.ece })))
            .collect::<serde_json::Map<_, _>>()))
    }

    fn metrics(&self) -> Result<Value, PipelineError> {
        let corpus = self.eval_corpus()?;
        let preds = self.predictions("eval")?;
        let debiased = if self.done(Stage::Debias) {
            Some(read_jsonl::<ScoreRecord>(&self.path("data/debiased.eval.jsonl"))?)
        } else {
            None
        };
        let annotations = self.annotations()?;
        let mut models = BTreeMap::new();
        for clf in &self.config.classifiers {
            let mine = Self::model_predictions(&preds, &clf.model_id);
            let prf = prf_per_identity(&mine, &corpus)?;
            let prf_debiased = debiased
                .as_ref()
                .map(|d| prf_per_identity(&Self::model_predictions(d, &clf.model_id), &corpus))
                .transpose()?;
            let (by_emotion, by_polarity) = match &annotations {
                Some(a) => {
                    let e = accuracy_by_emotion(a, &mine, &corpus, self.config.analysis.min_count)?;
                    let p = accuracy_by_polarity_and_label(a, &mine, &corpus)?;
                    (
                        Some(
                            e.into_iter()
                                .map(|(em, c)| AccuracyRow {
                                    key: em.name().to_string(),
                                    accuracy: c.accuracy,
                                    correct: c.correct,
                                    n: c.n,
                                })
                                .collect(),
                        ),
                        Some(
                            p.into_iter()
                                .map(|((g, pol), c)| AccuracyRow {
                                    key: format!("{}/{}", g.as_str(), polarity_name(pol)),
                                    accuracy: c.accuracy,
                                    correct: c.correct,
                                    n: c.n,
                                })
                                .collect(),
                        ),
                    )
                }
                None => (None, None),
            };
            models.insert(
                clf.model_id.clone(),
                ModelMetrics {
                    prf,
                    prf_debiased,
                    accuracy_by_emotion: by_emotion,
                    accuracy_by_polarity: by_polarity,
                },
            );
        }
        let mut emotion_dists = Vec::new();
        if let Some(a) = &annotations {
            for g in [GroupBy::Identity, GroupBy::Gold] {
                let d = emotion_distribution(a, &corpus, g)?;
                emotion_dists.push(EmotionCounts {
                    group_by: g,
                    cells: d
                        .counts
                        .iter()
                        .flat_map(|(grp, m)| m.iter().map(move |(e, n)| (grp.clone(), e.name().to_string(), *n)))
                        .collect(),
                    detected: d.detected,
                    total: d.total,
                });
            }
        }
        let metrics = Metrics {
            models,
            emotion_distribution: emotion_dists,
        };
        write_json(&self.path("data/metrics.json"), &metrics)?;
        Ok(json!(metrics
            .models
            .iter()
            .map(|(m, mm)| (m.clone(), json!({
                "macro_f1": mm.prf.average.f1,
                "macro_f1_debiased": mm.prf_debiased.as_ref().map(|p| p.average.f1),
            })))
            .collect::<serde_json::Map<_, _>>()))
    }

    fn report(&self) -> Result<Manifest, PipelineError> {
        let inputs = crate::render::ReportInputs {
            config: self.config,
            ingest: read_json(&self.marker(Stage::Ingest))?,
            bias: if self.done(Stage::Bias) {
                Some(read_json(&self.path("data/bias_profiles.json"))?)
            } else {
                None
            },
            metrics: read_json(&self.path("data/metrics.json"))?,
            annotation_summary: if self.done(Stage::Annotate) {
                Some(read_json(&self.marker(Stage::Annotate))?)
            } else {
                None
            },
            stereotypes: match self.annotations()? {
                Some(_) => {
                    let spans: Vec<StereotypeSpan> = read_jsonl(&self.path("data/stereotypes.jsonl"))?;
                    Some(top_stereotypes(&spans, &self.eval_corpus()?, self.config.analysis.top_k))
                }
                None => None,
            },
            scm: if self.done(Stage::Scm) {
                let scores: Vec<ScmScore> = read_jsonl(&self.path("data/scm_scores.jsonl"))?;
                Some(scores)
            } else {
                None
            },
            clusters: if self.done(Stage::Cluster) {
                Some(read_json(&self.path("data/clusters.json"))?)
            } else {
                None
            },
            calibration: if self.done(Stage::Calibrate) {
                Some(read_json(&self.path("data/calibration.json"))?)
            } else {
                None
            },
            eval: self.eval_corpus()?,
        };
        let bundle = crate::render::build_bundle(&inputs)?;
        let dir = self.path("report");
        if dir.join("manifest.json").is_file() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(write_bundle(&bundle, &dir)?)
    }
}

pub fn polarity_name(p: Polarity) -> &'static str {
    match p {
        Polarity::Positive => "positive",
        Polarity::Negative => "negative",
        Polarity::Ambiguous => "ambiguous",
    }
}

/// Emotion names in taxonomy order.
pub fn emotion_names() -> Vec<&'static str> {
    Emotion::ALL.iter().map(|e| e.name()).collect()
}
