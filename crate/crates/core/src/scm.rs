//! Stereotype Content Model scoring.
//!
//! Each message is tested against four NLI hypotheses (warmth/coldness,
//! competent/incompetent). Warmth is the semantic differential
//!
//! ```text
//! S_warmth = Pe(H1+) + Pc(H1-) - Pc(H1+) - Pe(H1-)
//! ```
//!
//! over post-softmax probabilities, and competence is the same with H2±.
//! Both lie in [-2, 2].

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Gold, TargetIdentity, TestCase};

#[derive(Debug, Error, PartialEq)]
pub enum ScmError {
    #[error("no hypotheses for identity `{0}`")]
    UnsupportedIdentity(String),
    #[error("non-finite logit in {0:?}")]
    NonFiniteLogit([f64; 3]),
    #[error("case `{case_id}`: missing {kind:?} probabilities")]
    MissingHypothesis {
        case_id: String,
        kind: HypothesisKind,
    },
    #[error("case `{0}` is not in the corpus")]
    UnknownCaseId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisKind {
    WarmthPos,
    WarmthNeg,
    CompetencePos,
    CompetenceNeg,
}

impl HypothesisKind {
    pub const ALL: [HypothesisKind; 4] = [
        HypothesisKind::WarmthPos,
        HypothesisKind::WarmthNeg,
        HypothesisKind::CompetencePos,
        HypothesisKind::CompetenceNeg,
    ];

    pub fn is_warmth(self) -> bool {
        matches!(self, HypothesisKind::WarmthPos | HypothesisKind::WarmthNeg)
    }

    pub fn is_positive(self) -> bool {
        matches!(self, HypothesisKind::WarmthPos | HypothesisKind::CompetencePos)
    }

    pub fn render(self, identity: &str) -> String {
        match self {
            HypothesisKind::WarmthPos => format!("This message expresses warmth towards {identity}."),
            HypothesisKind::WarmthNeg => format!("This message expresses coldness towards {identity}."),
            HypothesisKind::CompetencePos => {
                format!("This message expresses that {identity} are competent.")
            }
            HypothesisKind::CompetenceNeg => {
                format!("This message expresses that {identity} are incompetent.")
            }
        }
    }
}

/// The four hypothesis strings for a named identity.
pub fn build_hypotheses(
    identity: &TargetIdentity,
) -> Result<BTreeMap<HypothesisKind, String>, ScmError> {
    if !identity.is_named() {
        return Err(ScmError::UnsupportedIdentity(identity.surface().to_string()));
    }
    Ok(HypothesisKind::ALL
        .iter()
        .map(|k| (*k, k.render(identity.surface())))
        .collect())
}

/// Post-softmax (entail, contradict, neutral) probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliProbs {
    pub entail: f64,
    pub contradict: f64,
    pub neutral: f64,
}

impl NliProbs {
    pub fn new(entail: f64, contradict: f64, neutral: f64) -> Self {
        NliProbs {
            entail,
            contradict,
            neutral,
        }
    }
}

/// Max-shifted softmax over `(entail, contradict, neutral)` logits.
pub fn softmax3(logits: [f64; 3]) -> Result<NliProbs, ScmError> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(ScmError::NonFiniteLogit(logits));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|x| (x - m).exp());
    let z: f64 = e.iter().sum();
    Ok(NliProbs::new(e[0] / z, e[1] / z, e[2] / z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmScore {
    pub case_id: String,
    pub warmth: f64,
    pub competence: f64,
}

fn differential(pos: &NliProbs, neg: &NliProbs) -> f64 {
    (pos.entail + neg.contradict) - (pos.contradict + neg.entail)
}

pub fn scm_score(
    case_id: &str,
    probs: &BTreeMap<HypothesisKind, NliProbs>,
) -> Result<ScmScore, ScmError> {
    let get = |kind| {
        probs.get(&kind).ok_or_else(|| ScmError::MissingHypothesis {
            case_id: case_id.to_string(),
            kind,
        })
    };
    Ok(ScmScore {
        case_id: case_id.to_string(),
        warmth: differential(get(HypothesisKind::WarmthPos)?, get(HypothesisKind::WarmthNeg)?),
        competence: differential(
            get(HypothesisKind::CompetencePos)?,
            get(HypothesisKind::CompetenceNeg)?,
        ),
    })
}

/// Turns raw NLI records into one score per case, in first-seen case order.
pub fn scores_from_nli(records: &[crate::adapters::NliRecord]) -> Result<Vec<ScmScore>, ScmError> {
    let mut order = Vec::new();
    let mut probs: HashMap<&str, BTreeMap<HypothesisKind, NliProbs>> = HashMap::new();
    for r in records {
        let entry = probs.entry(r.case_id.as_str()).or_insert_with(|| {
            order.push(r.case_id.as_str());
            BTreeMap::new()
        });
        entry.insert(r.hypothesis_kind, softmax3(r.logits)?);
    }
    order.iter().map(|id| scm_score(id, &probs[id])).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScmMeans {
    pub warmth: f64,
    pub competence: f64,
    pub n: usize,
}

/// Mean warmth and competence per (identity, gold) cell.
pub fn scm_identity_means(
    scores: &[ScmScore],
    corpus: &Corpus,
) -> Result<BTreeMap<(TargetIdentity, Gold), ScmMeans>, ScmError> {
    let mut acc: BTreeMap<(TargetIdentity, Gold), (f64, f64, usize)> = BTreeMap::new();
    for s in scores {
        let case = corpus
            .get(&s.case_id)
            .ok_or_else(|| ScmError::UnknownCaseId(s.case_id.clone()))?;
        let e = acc
            .entry((case.identity.clone(), case.gold))
            .or_insert((0.0, 0.0, 0));
        e.0 += s.warmth;
        e.1 += s.competence;
        e.2 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(k, (w, c, n))| {
            (
                k,
                ScmMeans {
                    warmth: w / n as f64,
                    competence: c / n as f64,
                    n,
                },
            )
        })
        .collect())
}

pub const STEREOTYPE_SYSTEM_PROMPT: &str = "You are an expert human rater trained to label hateful messages after analyzing the entire message. Also, you are an expert in the task of identifying and extracting terms in the messages relevant to hate or love.";

const STEREOTYPE_USER_TEMPLATE: &str = "Identify the bare minimum length text span (a phrase that has a minimum number of words) in the message that expresses hate or love towards the {target_identity}. Remove insignificant words from the text span other than those that are essentially required to express hate or love. Only if the text span does not reflect the sentiment of the entire message, modify the text span accordingly by adding negate words like \"not\" or \"no\" to that minimum text span so that it reflects the sentiment of the entire message and then return that modified text span without mentioning {target_identity}. Answer \"None\" if you can't find any.\n\nFor example, Message: \"No immigrants should be denied access to healthcare\". Here, the sentiment is love towards immigrants. Therefore, the original text span \"should be denied access\" should be negated so that it reflects the message sentiment. i.e., the modified text span has to be \"should not be denied access\". If the original text span already aligns with the sentiment expressed in the entire message, no modification is necessary. Now try to find the text span for me that reflects the message. Just return the final answer.\n\nMessage: '{message}'.";

/// System and user prompts asking an LLM for the minimal stereotype span.
pub fn build_stereotype_prompt(case: &TestCase) -> (String, String) {
    let user = STEREOTYPE_USER_TEMPLATE
        .replace("{target_identity}", case.identity.surface())
        .replacen("{message}", &case.text, 1);
    (STEREOTYPE_SYSTEM_PROMPT.to_string(), user)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StereotypeSpan {
    pub case_id: String,
    pub span: Option<String>,
}

const QUOTES: &[char] = &['"', '\'', '`', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}'];

/// Strips whitespace and wrapping quotes; `None` (any case) means no span.
pub fn parse_stereotype_response(raw: &str) -> Option<String> {
    let mut s = raw.trim();
    loop {
        let t = s.trim_matches(QUOTES).trim();
        if t == s {
            break;
        }
        s = t;
    }
    let bare = s.trim_end_matches('.');
    if s.is_empty() || bare.eq_ignore_ascii_case("none") {
        None
    } else {
        Some(s.to_string())
    }
}

fn normalize_span(span: &str) -> String {
    span.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Most frequent normalized spans per (identity, gold), ties broken lexicographically.
pub fn top_stereotypes(
    spans: &[StereotypeSpan],
    corpus: &Corpus,
    k: usize,
) -> BTreeMap<(TargetIdentity, Gold), Vec<(String, usize)>> {
    let mut counts: BTreeMap<(TargetIdentity, Gold), BTreeMap<String, usize>> = BTreeMap::new();
    for s in spans {
        let (Some(span), Some(case)) = (s.span.as_deref(), corpus.get(&s.case_id)) else {
            continue;
        };
        *counts
            .entry((case.identity.clone(), case.gold))
            .or_default()
            .entry(normalize_span(span))
            .or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|(cell, m)| {
            let mut v: Vec<(String, usize)> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            v.truncate(k);
            (cell, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(e: f64, c: f64, n: f64) -> NliProbs {
        NliProbs::new(e, c, n)
    }

    fn probs(w: [NliProbs; 2], c: [NliProbs; 2]) -> BTreeMap<HypothesisKind, NliProbs> {
        BTreeMap::from([
            (HypothesisKind::WarmthPos, w[0]),
            (HypothesisKind::WarmthNeg, w[1]),
            (HypothesisKind::CompetencePos, c[0]),
            (HypothesisKind::CompetenceNeg, c[1]),
        ])
    }

    #[test]
    fn hypotheses_for_muslims_and_women() {
        let h = build_hypotheses(&TargetIdentity::Muslims).unwrap();
        assert_eq!(
            h[&HypothesisKind::WarmthPos],
            "This message expresses warmth towards Muslims."
        );
        let w = build_hypotheses(&TargetIdentity::Women).unwrap();
        assert_eq!(
            w[&HypothesisKind::CompetenceNeg],
            "This message expresses that women are incompetent."
        );
        for t in TargetIdentity::NAMED {
            let h = build_hypotheses(&t).unwrap();
            let distinct: std::collections::BTreeSet<_> = h.values().collect();
            assert_eq!(distinct.len(), 4);
        }
        assert!(build_hypotheses(&TargetIdentity::Other("Jewish".into())).is_err());
    }

    #[test]
    fn softmax_examples() {
        let u = softmax3([0.0, 0.0, 0.0]).unwrap();
        for x in [u.entail, u.contradict, u.neutral] {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax3([2f64.ln(), 0.0, 0.0]).unwrap();
        assert!((s.entail - 0.5).abs() < 1e-15);
        assert!((s.contradict - 0.25).abs() < 1e-15);
        assert!((s.neutral - 0.25).abs() < 1e-15);
        let big = softmax3([1000.0, 0.0, 0.0]).unwrap();
        assert!((big.entail - 1.0).abs() < 1e-15 && big.contradict < 1e-300);
        assert!(matches!(
            softmax3([f64::NAN, 0.0, 0.0]),
            Err(ScmError::NonFiniteLogit(_))
        ));
    }

    #[test]
    fn eq_examples() {
        let max = scm_score(
            "x",
            &probs([p(1.0, 0.0, 0.0), p(0.0, 1.0, 0.0)], [p(0.0, 0.0, 1.0); 2]),
        )
        .unwrap();
        assert_eq!(max.warmth, 2.0);
        assert_eq!(max.competence, 0.0);

        let neutral = scm_score("x", &probs([p(0.0, 0.0, 1.0); 2], [p(0.0, 0.0, 1.0); 2])).unwrap();
        assert_eq!((neutral.warmth, neutral.competence), (0.0, 0.0));

        let s = scm_score(
            "x",
            &probs([p(0.7, 0.1, 0.2), p(0.2, 0.6, 0.2)], [p(0.0, 0.0, 1.0); 2]),
        )
        .unwrap();
        assert!((s.warmth - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_hypothesis() {
        let mut m = probs([p(0.0, 0.0, 1.0); 2], [p(0.0, 0.0, 1.0); 2]);
        m.remove(&HypothesisKind::CompetenceNeg);
        assert_eq!(
            scm_score("x", &m).unwrap_err(),
            ScmError::MissingHypothesis {
                case_id: "x".into(),
                kind: HypothesisKind::CompetenceNeg
            }
        );
    }

    #[test]
    fn stereotype_response_parsing() {
        assert_eq!(
            parse_stereotype_response("disgusting lifestyle").as_deref(),
            Some("disgusting lifestyle")
        );
        assert_eq!(parse_stereotype_response("None"), None);
        assert_eq!(parse_stereotype_response(" none. "), None);
        assert_eq!(
            parse_stereotype_response("\"should not be denied access\"").as_deref(),
            Some("should not be denied access")
        );
        assert_eq!(
            parse_stereotype_response("\u{201c}a burden\u{201d}\n").as_deref(),
            Some("a burden")
        );
    }

    fn corpus() -> Corpus {
        let mk = |id: &str, ident: TargetIdentity, gold: Gold| TestCase {
            case_id: id.into(),
            text: "t".into(),
            identity: ident,
            functionality: String::new(),
            gold,
            template_id: None,
            dataset: "fx".into(),
        };
        Corpus::new(
            "fx",
            vec![
                mk("1", TargetIdentity::DisabledPeople, Gold::Hateful),
                mk("2", TargetIdentity::DisabledPeople, Gold::Hateful),
                mk("3", TargetIdentity::DisabledPeople, Gold::Hateful),
                mk("4", TargetIdentity::DisabledPeople, Gold::Hateful),
                mk("5", TargetIdentity::Women, Gold::NonHateful),
                mk("6", TargetIdentity::Women, Gold::NonHateful),
            ],
        )
        .unwrap()
    }

    #[test]
    fn top_spans_hand_tally() {
        let span = |id: &str, s: Option<&str>| StereotypeSpan {
            case_id: id.into(),
            span: s.map(str::to_string),
        };
        let spans = [
            span("1", Some("a burden")),
            span("2", Some("A  burden")),
            span("3", Some("a drain")),
            span("4", None),
            span("5", Some("keep shining")),
            span("6", Some("beautiful")),
        ];
        let t = top_stereotypes(&spans, &corpus(), 5);
        assert_eq!(
            t[&(TargetIdentity::DisabledPeople, Gold::Hateful)],
            vec![("a burden".to_string(), 2), ("a drain".to_string(), 1)]
        );
        assert_eq!(
            t[&(TargetIdentity::Women, Gold::NonHateful)],
            vec![("beautiful".to_string(), 1), ("keep shining".to_string(), 1)]
        );
        assert!(top_stereotypes(&[], &corpus(), 3).is_empty());
        let t1 = top_stereotypes(&spans, &corpus(), 1);
        assert_eq!(t1[&(TargetIdentity::Women, Gold::NonHateful)].len(), 1);
    }

    #[test]
    fn identity_means_hand_computed() {
        let sc = |id: &str, w: f64, c: f64| ScmScore {
            case_id: id.into(),
            warmth: w,
            competence: c,
        };
        let scores = [
            sc("1", -2.0, -1.0),
            sc("2", -1.0, -2.0),
            sc("3", 0.0, -1.5),
            sc("4", -1.0, 0.5),
            sc("5", 1.0, -1.0),
        ];
        let m = scm_identity_means(&scores, &corpus()).unwrap();
        let d = m[&(TargetIdentity::DisabledPeople, Gold::Hateful)];
        assert_eq!((d.warmth, d.competence, d.n), (-1.0, -1.0, 4));
        let w = m[&(TargetIdentity::Women, Gold::NonHateful)];
        assert_eq!((w.warmth, w.competence, w.n), (1.0, -1.0, 1));
        assert!(matches!(
            scm_identity_means(&[sc("zz", 0.0, 0.0)], &corpus()),
            Err(ScmError::UnknownCaseId(_))
        ));
    }
}
