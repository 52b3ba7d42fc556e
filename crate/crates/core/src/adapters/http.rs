//! Wire formats for the scoring service, the comment-analysis API, and the
//! chat endpoint used for LLM annotation.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::transport::{HttpResponse, Transport, TransportError};
use super::AdapterError;

/// Credential for the remote attribute API.
pub const SCORER_API_KEY: &str = "SCORER_API_KEY";
/// Credential for the chat annotation endpoint.
pub const ANNOTATOR_API_KEY: &str = "ANNOTATOR_API_KEY";

/// Exponential backoff: `retries` extra attempts, waiting `base · 2^i` before attempt `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            retries: 0,
            base: Duration::ZERO,
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        self.base * 2u32.saturating_pow(attempt)
    }
}

fn error_message(resp: &HttpResponse) -> String {
    let detail = serde_json::from_str::<Value>(&resp.body)
        .ok()
        .and_then(|v| match &v["error"] {
            Value::String(s) => Some(s.clone()),
            Value::Object(o) => o.get("message").and_then(Value::as_str).map(str::to_string),
            _ => None,
        })
        .unwrap_or_else(|| resp.body.chars().take(200).collect());
    format!("HTTP {}: {detail}", resp.status)
}

/// POSTs `body`, retrying connection failures, 429 and 5xx with backoff.
pub(crate) fn post_with_retry(
    transport: &dyn Transport,
    url: &str,
    headers: &[(String, String)],
    body: &str,
    policy: &RetryPolicy,
) -> Result<HttpResponse, AdapterError> {
    let shown = redact(url);
    let mut attempt = 0;
    loop {
        let outcome = transport.post_json(url, headers, body);
        let (transient, err) = match outcome {
            Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp),
            Ok(resp) if resp.status == 429 => (
                true,
                AdapterError::QuotaExceeded {
                    message: format!("{shown}: {}", error_message(&resp)),
                    unscored: Vec::new(),
                },
            ),
            Ok(resp) => (
                resp.status >= 500,
                AdapterError::BackendUnavailable {
                    message: format!("{shown}: {}", error_message(&resp)),
                    unscored: Vec::new(),
                },
            ),
            Err(TransportError::Offline(_)) => {
                return Err(AdapterError::BackendUnavailable {
                    message: format!("network disabled, refusing request to {shown}"),
                    unscored: Vec::new(),
                })
            }
            Err(e) => (
                true,
                AdapterError::BackendUnavailable {
                    message: scrub(&format!("{shown}: {e}"), url),
                    unscored: Vec::new(),
                },
            ),
        };
        if !transient || attempt >= policy.retries {
            return Err(err);
        }
        log::warn!("{err}; retrying in {:?}", policy.delay(attempt));
        std::thread::sleep(policy.delay(attempt));
        attempt += 1;
    }
}

/// Drops the query string, which carries the attribute API key.
fn redact(url: &str) -> &str {
    url.split_once('?').map_or(url, |(base, _)| base)
}

fn scrub(message: &str, url: &str) -> String {
    match url.split_once('?') {
        Some((_, query)) if !query.is_empty() => message.replace(query, "<redacted>"),
        _ => message.to_string(),
    }
}

fn malformed(message: String) -> AdapterError {
    AdapterError::MalformedResponse {
        message,
        unscored: Vec::new(),
    }
}

fn join(endpoint: &str, path: &str) -> String {
    format!("{}{path}", endpoint.trim_end_matches('/'))
}

fn check_score(s: f64) -> Result<f64, AdapterError> {
    if s.is_finite() && (0.0..=1.0).contains(&s) {
        Ok(s)
    } else {
        Err(malformed(format!("score {s} outside [0,1]")))
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    model_id: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// `POST /v1/score`; one score per text, order preserved.
pub(crate) fn service_scores(
    transport: &dyn Transport,
    endpoint: &str,
    model_id: &str,
    texts: &[&str],
    policy: &RetryPolicy,
) -> Result<Vec<f64>, AdapterError> {
    let body = serde_json::to_string(&ScoreRequest { model_id, texts }).expect("serializable");
    let resp = post_with_retry(transport, &join(endpoint, "/v1/score"), &[], &body, policy)?;
    let parsed: ScoreResponse = serde_json::from_str(&resp.body)
        .map_err(|e| malformed(format!("/v1/score: {e}")))?;
    if parsed.scores.len() != texts.len() {
        return Err(malformed(format!(
            "/v1/score returned {} scores for {} texts",
            parsed.scores.len(),
            texts.len()
        )));
    }
    parsed.scores.into_iter().map(check_score).collect()
}

/// One comment-analysis request for a single attribute.
pub(crate) fn attribute_score(
    transport: &dyn Transport,
    endpoint: &str,
    api_key: &str,
    attribute: &str,
    text: &str,
    policy: &RetryPolicy,
) -> Result<f64, AdapterError> {
    let body = json!({
        "comment": { "text": text },
        "languages": ["en"],
        "requestedAttributes": { attribute: {} },
        "doNotStore": true,
    })
    .to_string();
    let url = format!("{endpoint}?key={api_key}");
    let resp = post_with_retry(transport, &url, &[], &body, policy)?;
    let v: Value = serde_json::from_str(&resp.body)
        .map_err(|e| malformed(format!("attribute response: {e}")))?;
    let score = v["attributeScores"][attribute]["summaryScore"]["value"]
        .as_f64()
        .ok_or_else(|| malformed(format!("no summaryScore for {attribute}")))?;
    check_score(score)
}

#[derive(Serialize)]
struct NliRequest<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Deserialize)]
struct NliLogits {
    entail: f64,
    contradict: f64,
    neutral: f64,
}

#[derive(Deserialize)]
struct NliResponse {
    logits: NliLogits,
}

/// `POST /v1/nli`. Returns raw `(entail, contradict, neutral)` logits, unnormalized.
pub fn nli_score(
    transport: &dyn Transport,
    endpoint: &str,
    premise: &str,
    hypothesis: &str,
    policy: &RetryPolicy,
) -> Result<[f64; 3], AdapterError> {
    let body = serde_json::to_string(&NliRequest {
        premise,
        hypothesis,
    })
    .expect("serializable");
    let resp = post_with_retry(transport, &join(endpoint, "/v1/nli"), &[], &body, policy)?;
    let parsed: NliResponse =
        serde_json::from_str(&resp.body).map_err(|e| malformed(format!("/v1/nli: {e}")))?;
    let l = parsed.logits;
    let out = [l.entail, l.contradict, l.neutral];
    if out.iter().any(|x| !x.is_finite()) {
        return Err(malformed(format!("/v1/nli: non-finite logits {out:?}")));
    }
    Ok(out)
}

/// OpenAI-compatible chat completion endpoint used for emotion and
/// stereotype annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatEndpoint {
    /// Base URL; `/v1/chat/completions` is appended.
    pub url: String,
    pub model: String,
}

/// Sends one system+user exchange at temperature 0 and returns the reply text.
pub fn chat_complete(
    transport: &dyn Transport,
    endpoint: &ChatEndpoint,
    api_key: Option<&str>,
    system: &str,
    user: &str,
    policy: &RetryPolicy,
) -> Result<String, AdapterError> {
    let body = json!({
        "model": endpoint.model,
        "temperature": 0,
        "messages": [
            { "role": "system", "content": system },
            { "role": "user", "content": user },
        ],
    })
    .to_string();
    let headers: Vec<(String, String)> = api_key
        .map(|k| vec![("Authorization".to_string(), format!("Bearer {k}"))])
        .unwrap_or_default();
    let resp = post_with_retry(
        transport,
        &join(&endpoint.url, "/v1/chat/completions"),
        &headers,
        &body,
        policy,
    )?;
    let v: Value = serde_json::from_str(&resp.body)
        .map_err(|e| malformed(format!("chat response: {e}")))?;
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| malformed("chat response without choices[0].message.content".into()))
}
