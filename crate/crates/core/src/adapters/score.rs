//! Cache-first scoring fan-out.
//!
//! Misses are sent to the backend in waves; each wave's successes are appended
//! to the cache by the calling thread before the next wave starts, so an
//! aborted run resumes where it stopped. Results never contain partial data:
//! either every case gets a record or the call fails listing the unscored ids.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use super::http::{attribute_score, nli_score, service_scores, SCORER_API_KEY};
use super::lexicon::{builtin_lexicon_score, builtin_nli_logits};
use super::limiter::RateLimiter;
use super::transport::Transport;
use super::{
    AdapterError, Backend, ClassifierConfig, NliBackend, NliConfig, NliRecord, ScoreCache,
    ScoreRecord,
};
use crate::corpus::TestCase;
use crate::scm::{build_hypotheses, HypothesisKind};

const JOBS_PER_WORKER_PER_WAVE: usize = 8;

/// Runs `f` over `jobs` with at most `parallelism` in flight, one rate-limiter
/// token per call. After the first failure no new jobs start; unstarted jobs
/// come back as `None`.
fn fan_out<J, R, F>(
    jobs: &[J],
    parallelism: usize,
    limiter: &RateLimiter,
    f: F,
) -> Vec<Option<Result<R, AdapterError>>>
where
    J: Sync,
    R: Send,
    F: Fn(&J) -> Result<R, AdapterError> + Sync,
{
    let slots: Mutex<Vec<Option<Result<R, AdapterError>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let workers = parallelism.clamp(1, jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                limiter.acquire();
                let r = f(&jobs[i]);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap_or_else(|e| e.into_inner())
}

/// Scores `cases` with one classifier, consulting `cache` first.
pub fn score_cases(
    config: &ClassifierConfig,
    cases: &[TestCase],
    cache: &mut ScoreCache,
    transport: &dyn Transport,
) -> Result<Vec<ScoreRecord>, AdapterError> {
    config.validate()?;
    let model = config.model_id.as_str();

    let mut seen = HashSet::new();
    let misses: Vec<&TestCase> = cases
        .iter()
        .filter(|c| cache.score(model, &c.case_id).is_none())
        .filter(|c| seen.insert(c.case_id.as_str()))
        .collect();

    if !misses.is_empty() {
        match config.backend {
            Backend::CacheFile => {
                return Err(AdapterError::IncompleteCache {
                    message: format!("no cached score for model `{model}`"),
                    missing: misses.iter().map(|c| c.case_id.clone()).collect(),
                })
            }
            Backend::BuiltinLexicon => {
                let offsets = config.identity_offsets();
                for c in &misses {
                    let s = builtin_lexicon_score(&c.text, &c.identity, &offsets);
                    cache.insert_score(model, &c.case_id, s)?;
                }
            }
            Backend::HttpScoringService => {
                let endpoint = config.endpoint.as_deref().expect("validated");
                let batches: Vec<&[&TestCase]> = misses.chunks(config.batch_size).collect();
                run_waves(config, cache, &batches, |batch| {
                    let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
                    let scores = service_scores(transport, endpoint, model, &texts, &config.retry)?;
                    Ok(batch
                        .iter()
                        .zip(scores)
                        .map(|(c, s)| (c.case_id.clone(), s))
                        .collect())
                })?;
            }
            Backend::RemoteAttributeApi => {
                let endpoint = config.endpoint.as_deref().expect("validated");
                let attribute = config.attribute.as_deref().expect("validated");
                let key = std::env::var(SCORER_API_KEY).map_err(|_| {
                    AdapterError::InvalidConfig(format!(
                        "{model}: environment variable {SCORER_API_KEY} is not set"
                    ))
                })?;
                let singles: Vec<&[&TestCase]> = misses.chunks(1).collect();
                run_waves(config, cache, &singles, |one| {
                    let c = one[0];
                    let s = attribute_score(transport, endpoint, &key, attribute, &c.text, &config.retry)?;
                    Ok(vec![(c.case_id.clone(), s)])
                })?;
            }
        }
    }

    cases
        .iter()
        .map(|c| {
            cache
                .score(model, &c.case_id)
                .map(|s| ScoreRecord::new(model, &c.case_id, s, config.threshold))
                .ok_or_else(|| AdapterError::IncompleteCache {
                    message: format!("score for `{}` vanished from cache", c.case_id),
                    missing: vec![c.case_id.clone()],
                })
        })
        .collect()
}

type Batch<'a> = &'a [&'a TestCase];

fn run_waves<'a, F>(
    config: &ClassifierConfig,
    cache: &mut ScoreCache,
    batches: &[Batch<'a>],
    call: F,
) -> Result<(), AdapterError>
where
    F: Fn(&Batch<'a>) -> Result<Vec<(String, f64)>, AdapterError> + Sync,
{
    let limiter = RateLimiter::new(config.rate_limit, config.parallelism);
    let wave = config.parallelism * JOBS_PER_WORKER_PER_WAVE;
    for (w, chunk) in batches.chunks(wave).enumerate() {
        let results = fan_out(chunk, config.parallelism, &limiter, &call);
        let mut first_err = None;
        for r in results.into_iter().flatten() {
            match r {
                Ok(pairs) => {
                    for (id, s) in pairs {
                        cache.insert_score(&config.model_id, &id, s)?;
                    }
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_err {
            let unscored = batches[w * wave..]
                .iter()
                .flat_map(|b| b.iter())
                .filter(|c| cache.score(&config.model_id, &c.case_id).is_none())
                .map(|c| c.case_id.clone())
                .collect();
            return Err(e.with_unscored(unscored));
        }
    }
    Ok(())
}

/// Scores the four SCM hypotheses for every case. Cases need a named identity.
pub fn score_nli(
    config: &NliConfig,
    cases: &[TestCase],
    cache: &mut ScoreCache,
    transport: &dyn Transport,
) -> Result<Vec<NliRecord>, AdapterError> {
    config.validate()?;
    struct Job<'a> {
        case_id: &'a str,
        premise: &'a str,
        kind: HypothesisKind,
        hypothesis: String,
    }
    let mut jobs = Vec::new();
    let mut seen = HashSet::new();
    for c in cases {
        let hyps = build_hypotheses(&c.identity).map_err(|_| AdapterError::UnsupportedIdentity {
            case_id: c.case_id.clone(),
        })?;
        if !seen.insert(c.case_id.as_str()) {
            continue;
        }
        for (kind, hypothesis) in hyps {
            if cache.logits(&c.case_id, kind).is_none() {
                jobs.push(Job {
                    case_id: &c.case_id,
                    premise: &c.text,
                    kind,
                    hypothesis,
                });
            }
        }
    }

    if !jobs.is_empty() {
        match config.backend {
            NliBackend::CacheFile => {
                let mut missing: Vec<String> = jobs.iter().map(|j| j.case_id.to_string()).collect();
                missing.dedup();
                return Err(AdapterError::IncompleteCache {
                    message: "missing NLI logits".into(),
                    missing,
                });
            }
            NliBackend::BuiltinLexicon => {
                for j in &jobs {
                    cache.insert_logits(j.case_id, j.kind, builtin_nli_logits(j.premise, j.kind))?;
                }
            }
            NliBackend::Http => {
                let endpoint = config.endpoint.as_deref().expect("validated");
                let limiter = RateLimiter::new(config.rate_limit, config.parallelism);
                let wave = config.parallelism * JOBS_PER_WORKER_PER_WAVE;
                for (w, chunk) in jobs.chunks(wave).enumerate() {
                    let results = fan_out(chunk, config.parallelism, &limiter, |j| {
                        nli_score(transport, endpoint, j.premise, &j.hypothesis, &config.retry)
                    });
                    let mut first_err = None;
                    for (j, r) in chunk.iter().zip(results) {
                        match r {
                            Some(Ok(l)) => cache.insert_logits(j.case_id, j.kind, l)?,
                            Some(Err(e)) => {
                                first_err.get_or_insert(e);
                            }
                            None => {}
                        }
                    }
                    if let Some(e) = first_err {
                        let mut unscored: Vec<String> = jobs[w * wave..]
                            .iter()
                            .filter(|j| cache.logits(j.case_id, j.kind).is_none())
                            .map(|j| j.case_id.to_string())
                            .collect();
                        unscored.dedup();
                        return Err(e.with_unscored(unscored));
                    }
                }
            }
        }
    }

    let mut out = Vec::with_capacity(cases.len() * 4);
    for c in cases {
        for kind in HypothesisKind::ALL {
            let logits = cache.logits(&c.case_id, kind).ok_or_else(|| {
                AdapterError::IncompleteCache {
                    message: format!("NLI logits for `{}` vanished from cache", c.case_id),
                    missing: vec![c.case_id.clone()],
                }
            })?;
            out.push(NliRecord {
                case_id: c.case_id.clone(),
                hypothesis_kind: kind,
                logits,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{HttpResponse, RecordingTransport, RetryPolicy, TransportError};
    use crate::corpus::{Gold, TargetIdentity};
    use serde_json::Value;
    use std::time::Duration;

    fn case(id: &str, text: &str, identity: TargetIdentity) -> TestCase {
        TestCase {
            case_id: id.into(),
            text: text.into(),
            identity,
            functionality: "F1".into(),
            gold: Gold::Hateful,
            template_id: None,
            dataset: "fx".into(),
        }
    }

    /// Fake `/v1/score` + `/v1/nli` service; fails with `fail_status` for texts containing "boom".
    struct FakeService {
        fail_status: u16,
    }

    impl Transport for FakeService {
        fn post_json(
            &self,
            url: &str,
            _: &[(String, String)],
            body: &str,
        ) -> Result<HttpResponse, TransportError> {
            let v: Value = serde_json::from_str(body).unwrap();
            if url.ends_with("/v1/nli") {
                let n = v["premise"].as_str().unwrap().len() as f64;
                return Ok(HttpResponse {
                    status: 200,
                    body: format!(r#"{{"logits":{{"entail":{n},"contradict":1.0,"neutral":0.0}}}}"#),
                });
            }
            let texts: Vec<&str> = v["texts"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
            if texts.iter().any(|t| t.contains("boom")) {
                return Ok(HttpResponse {
                    status: self.fail_status,
                    body: r#"{"error":"down"}"#.into(),
                });
            }
            let scores: Vec<f64> = texts.iter().map(|t| (t.len() % 10) as f64 / 10.0).collect();
            Ok(HttpResponse {
                status: 200,
                body: serde_json::json!({ "scores": scores }).to_string(),
            })
        }
    }

    fn service_config() -> ClassifierConfig {
        let mut c = ClassifierConfig::new("svc", Backend::HttpScoringService);
        c.endpoint = Some("http://fake".into());
        c.batch_size = 2;
        c.rate_limit = 10_000.0;
        c.retry = RetryPolicy {
            retries: 2,
            base: Duration::from_millis(1),
        };
        c
    }

    #[test]
    fn warm_cache_means_no_network() {
        let cases: Vec<_> = (0..7)
            .map(|i| case(&i.to_string(), &"x".repeat(i + 1), TargetIdentity::Women))
            .collect();
        let t = RecordingTransport::new(FakeService { fail_status: 500 });
        let mut cache = ScoreCache::in_memory();
        let first = score_cases(&service_config(), &cases, &mut cache, &t).unwrap();
        assert_eq!(t.calls(), 4);
        let second = score_cases(&service_config(), &cases, &mut cache, &t).unwrap();
        assert_eq!(t.calls(), 4);
        assert_eq!(first, second);
        let ids: Vec<_> = first.iter().map(|r| r.case_id.as_str()).collect();
        assert_eq!(ids, ["0", "1", "2", "3", "4", "5", "6"]);
        assert_eq!(first[4].score, 0.5);
        assert_eq!(first[4].label, Gold::Hateful);
    }

    #[test]
    fn lexicon_backend() {
        let mut cfg = ClassifierConfig::new("lex", Backend::BuiltinLexicon);
        cfg.offsets.insert("black people".into(), 0.2);
        let cases = [
            case("a", "I hate immigrants", TargetIdentity::Immigrants),
            case("b", "I hate them", TargetIdentity::BlackPeople),
        ];
        let mut cache = ScoreCache::in_memory();
        let t = RecordingTransport::new(crate::adapters::OfflineTransport);
        let r = score_cases(&cfg, &cases, &mut cache, &t).unwrap();
        assert!((r[0].score - 0.5).abs() < 1e-12);
        assert_eq!(r[0].label, Gold::Hateful);
        assert!((r[1].score - 0.7).abs() < 1e-12);
        assert_eq!(t.calls(), 0);
    }

    #[test]
    fn failure_reports_unscored_and_keeps_successes() {
        let cases = vec![
            case("ok1", "fine", TargetIdentity::Women),
            case("ok2", "fine too", TargetIdentity::Women),
            case("bad", "boom", TargetIdentity::Women),
        ];
        let mut cfg = service_config();
        cfg.parallelism = 1;
        let t = FakeService { fail_status: 503 };
        let mut cache = ScoreCache::in_memory();
        let err = score_cases(&cfg, &cases, &mut cache, &t).unwrap_err();
        assert!(matches!(err, AdapterError::BackendUnavailable { .. }));
        assert_eq!(err.unscored(), ["bad".to_string()]);
        assert_eq!(cache.score("svc", "ok1"), Some(0.4));

        let t = FakeService { fail_status: 429 };
        let err = score_cases(&cfg, &cases, &mut cache, &t).unwrap_err();
        assert!(matches!(err, AdapterError::QuotaExceeded { .. }));
    }

    #[test]
    fn cache_file_backend_requires_complete_cache() {
        let mut cache = ScoreCache::in_memory();
        cache.insert_score("c", "a", 0.3).unwrap();
        let cfg = ClassifierConfig::new("c", Backend::CacheFile);
        let cases = [
            case("a", "x", TargetIdentity::Women),
            case("b", "y", TargetIdentity::Women),
        ];
        let err = score_cases(&cfg, &cases, &mut cache, &crate::adapters::OfflineTransport).unwrap_err();
        assert_eq!(err.unscored(), ["b".to_string()]);
        let ok = score_cases(&cfg, &cases[..1], &mut cache, &crate::adapters::OfflineTransport).unwrap();
        assert_eq!(ok[0].score, 0.3);
    }

    #[test]
    fn nli_fan_out_and_cache() {
        let cases = vec![
            case("a", "abc", TargetIdentity::Muslims),
            case("b", "abcdef", TargetIdentity::Women),
        ];
        let cfg = NliConfig {
            backend: NliBackend::Http,
            endpoint: Some("http://fake".into()),
            rate_limit: 10_000.0,
            parallelism: 3,
            retry: RetryPolicy::none(),
        };
        let t = RecordingTransport::new(FakeService { fail_status: 500 });
        let mut cache = ScoreCache::in_memory();
        let recs = score_nli(&cfg, &cases, &mut cache, &t).unwrap();
        assert_eq!(recs.len(), 8);
        assert_eq!(t.calls(), 8);
        assert_eq!(recs[0].logits, [3.0, 1.0, 0.0]);
        assert_eq!(recs[4].logits, [6.0, 1.0, 0.0]);
        score_nli(&cfg, &cases, &mut cache, &t).unwrap();
        assert_eq!(t.calls(), 8);
    }

    #[test]
    fn nli_rejects_unnamed_identity() {
        let cases = [case("a", "x", TargetIdentity::Other("Jewish".into()))];
        let err = score_nli(&NliConfig::builtin(), &cases, &mut ScoreCache::in_memory(), &crate::adapters::OfflineTransport)
            .unwrap_err();
        assert!(matches!(err, AdapterError::UnsupportedIdentity { .. }));
    }
}
