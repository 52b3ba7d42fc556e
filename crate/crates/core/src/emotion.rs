//! Fine-grained emotion annotation: prompt construction, response parsing,
//! polarity grouping and emotion-conditioned accuracy tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::adapters::ScoreRecord;
use crate::corpus::{Corpus, Gold, TestCase};

#[derive(Debug, Error, PartialEq)]
pub enum EmotionError {
    #[error("unparseable emotion response `{0}`")]
    ParseFailure(String),
    #[error("the None emotion has no polarity")]
    NoPolarityForNone,
    #[error("case `{0}` is not in the corpus")]
    UnknownCaseId(String),
    #[error("no prediction for case `{0}`")]
    MissingPrediction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Emotion {
    Admiration,
    Amusement,
    Approval,
    Caring,
    Desire,
    Excitement,
    Gratitude,
    Joy,
    Love,
    Optimism,
    Pride,
    Relief,
    Anger,
    Annoyance,
    Disappointment,
    Disapproval,
    Disgust,
    Embarrassment,
    Fear,
    Grief,
    Nervousness,
    Remorse,
    Sadness,
    Confusion,
    Curiosity,
    Realization,
    Surprise,
}

impl Emotion {
    /// Taxonomy in prompt order.
    pub const ALL: [Emotion; 27] = [
        Emotion::Admiration,
        Emotion::Amusement,
        Emotion::Approval,
        Emotion::Caring,
        Emotion::Desire,
        Emotion::Excitement,
        Emotion::Gratitude,
        Emotion::Joy,
        Emotion::Love,
        Emotion::Optimism,
        Emotion::Pride,
        Emotion::Relief,
        Emotion::Anger,
        Emotion::Annoyance,
        Emotion::Disappointment,
        Emotion::Disapproval,
        Emotion::Disgust,
        Emotion::Embarrassment,
        Emotion::Fear,
        Emotion::Grief,
        Emotion::Nervousness,
        Emotion::Remorse,
        Emotion::Sadness,
        Emotion::Confusion,
        Emotion::Curiosity,
        Emotion::Realization,
        Emotion::Surprise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Admiration => "admiration",
            Emotion::Amusement => "amusement",
            Emotion::Approval => "approval",
            Emotion::Caring => "caring",
            Emotion::Desire => "desire",
            Emotion::Excitement => "excitement",
            Emotion::Gratitude => "gratitude",
            Emotion::Joy => "joy",
            Emotion::Love => "love",
            Emotion::Optimism => "optimism",
            Emotion::Pride => "pride",
            Emotion::Relief => "relief",
            Emotion::Anger => "anger",
            Emotion::Annoyance => "annoyance",
            Emotion::Disappointment => "disappointment",
            Emotion::Disapproval => "disapproval",
            Emotion::Disgust => "disgust",
            Emotion::Embarrassment => "embarrassment",
            Emotion::Fear => "fear",
            Emotion::Grief => "grief",
            Emotion::Nervousness => "nervousness",
            Emotion::Remorse => "remorse",
            Emotion::Sadness => "sadness",
            Emotion::Confusion => "confusion",
            Emotion::Curiosity => "curiosity",
            Emotion::Realization => "realization",
            Emotion::Surprise => "surprise",
        }
    }

    /// Spelling used in the annotation prompt (keeps its "nerveousness").
    fn prompt_name(self) -> &'static str {
        match self {
            Emotion::Nervousness => "nerveousness",
            other => other.name(),
        }
    }

    pub fn polarity(self) -> Polarity {
        use Emotion::*;
        match self {
            Admiration | Amusement | Approval | Caring | Desire | Excitement | Gratitude | Joy
            | Love | Optimism | Pride | Relief => Polarity::Positive,
            Anger | Annoyance | Disappointment | Disapproval | Disgust | Embarrassment | Fear
            | Grief | Nervousness | Remorse | Sadness => Polarity::Negative,
            Confusion | Curiosity | Realization | Surprise => Polarity::Ambiguous,
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let lower = s.to_lowercase();
        if lower == "nerveousness" {
            return Ok(Emotion::Nervousness);
        }
        Emotion::ALL
            .into_iter()
            .find(|e| e.name() == lower)
            .ok_or(())
    }
}

/// Coarse polarity: +1, -1 or 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Negative,
    Ambiguous,
    Positive,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Negative, Polarity::Ambiguous, Polarity::Positive];

    pub fn value(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Ambiguous => 0,
            Polarity::Positive => 1,
        }
    }
}

/// `None` is the "no emotion detected" answer.
pub fn polarity_of(emotion: Option<Emotion>) -> Result<Polarity, EmotionError> {
    emotion
        .map(Emotion::polarity)
        .ok_or(EmotionError::NoPolarityForNone)
}

const EMOTION_SYSTEM_HEADER: &str =
    "You are an expert human rater trained to identify emotions in text.\nThe list of emotions of interest are:";

const EMOTION_USER_TEMPLATE: &str = "Label the main emotion towards {target_identity} expressed in the following message:\n\nMessage: '{message}'.\n\nReturn a single emotion or answer 'None' if none of the emotions is detected.";

pub fn emotion_system_prompt() -> String {
    let mut s = EMOTION_SYSTEM_HEADER.to_string();
    for e in Emotion::ALL {
        s.push_str("\n- ");
        s.push_str(e.prompt_name());
    }
    s
}

/// (system, user) prompt pair for one case. The message is inserted as-is.
pub fn build_emotion_prompt(case: &TestCase) -> (String, String) {
    let user = EMOTION_USER_TEMPLATE
        .replace("{target_identity}", case.identity.surface())
        .replacen("{message}", &case.text, 1);
    (emotion_system_prompt(), user)
}

/// Normalizes an LLM reply to a taxonomy label. `Ok(None)` is the explicit
/// "None" answer; anything else unrecognised is a `ParseFailure`.
pub fn parse_emotion_response(raw: &str) -> Result<Option<Emotion>, EmotionError> {
    let token = raw
        .trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation() || "\u{201c}\u{201d}\u{2018}\u{2019}".contains(c))
        .to_lowercase();
    if token == "none" {
        return Ok(None);
    }
    token
        .parse::<Emotion>()
        .map(Some)
        .map_err(|_| EmotionError::ParseFailure(raw.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionAnnotation {
    pub case_id: String,
    #[serde(serialize_with = "ser_emotion", deserialize_with = "de_emotion")]
    pub emotion: Option<Emotion>,
    pub raw_response: String,
}

fn ser_emotion<S: Serializer>(e: &Option<Emotion>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(e.map(Emotion::name).unwrap_or("none"))
}

fn de_emotion<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Emotion>, D::Error> {
    let raw = Option::<String>::deserialize(d)?;
    match raw {
        None => Ok(None),
        Some(s) => parse_emotion_response(&s).map_err(serde::de::Error::custom),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Identity,
    Functionality,
    Gold,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmotionDistribution {
    /// group label -> emotion -> count (only non-zero cells are stored)
    pub counts: BTreeMap<String, BTreeMap<Emotion, usize>>,
    pub detected: usize,
    pub total: usize,
}

impl EmotionDistribution {
    pub fn coverage(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.detected as f64 / self.total as f64
        }
    }
}

fn group_key(case: &TestCase, by: GroupBy) -> String {
    match by {
        GroupBy::Identity => case.identity.surface().to_string(),
        GroupBy::Functionality => case.functionality.clone(),
        GroupBy::Gold => case.gold.as_str().to_string(),
    }
}

/// Group × emotion counts over annotations with a detected emotion.
/// `total` is the corpus size, so coverage reads detected/total.
pub fn emotion_distribution(
    annotations: &[EmotionAnnotation],
    corpus: &Corpus,
    group_by: GroupBy,
) -> Result<EmotionDistribution, EmotionError> {
    let mut dist = EmotionDistribution {
        total: corpus.len(),
        ..Default::default()
    };
    for a in annotations {
        let case = corpus
            .get(&a.case_id)
            .ok_or_else(|| EmotionError::UnknownCaseId(a.case_id.clone()))?;
        if let Some(e) = a.emotion {
            *dist
                .counts
                .entry(group_key(case, group_by))
                .or_default()
                .entry(e)
                .or_insert(0) += 1;
            dist.detected += 1;
        }
    }
    Ok(dist)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    /// `None` when the cell is empty.
    pub accuracy: Option<f64>,
    pub correct: usize,
    pub n: usize,
}

impl AccuracyCell {
    fn from_counts(correct: usize, n: usize) -> Self {
        AccuracyCell {
            accuracy: (n > 0).then(|| correct as f64 / n as f64),
            correct,
            n,
        }
    }
}

/// Joins annotated cases with their gold label and prediction correctness.
fn joined<'a>(
    annotations: &'a [EmotionAnnotation],
    predictions: &[ScoreRecord],
    corpus: &'a Corpus,
) -> Result<Vec<(Emotion, Gold, bool)>, EmotionError> {
    let preds: HashMap<&str, &ScoreRecord> = predictions
        .iter()
        .map(|p| (p.case_id.as_str(), p))
        .collect();
    let mut out = Vec::new();
    for a in annotations {
        let Some(e) = a.emotion else { continue };
        let case = corpus
            .get(&a.case_id)
            .ok_or_else(|| EmotionError::UnknownCaseId(a.case_id.clone()))?;
        let p = preds
            .get(a.case_id.as_str())
            .ok_or_else(|| EmotionError::MissingPrediction(a.case_id.clone()))?;
        out.push((e, case.gold, p.label == case.gold));
    }
    Ok(out)
}

/// Accuracy per detected emotion, omitting emotions seen fewer than `min_count` times.
pub fn accuracy_by_emotion(
    annotations: &[EmotionAnnotation],
    predictions: &[ScoreRecord],
    corpus: &Corpus,
    min_count: usize,
) -> Result<BTreeMap<Emotion, AccuracyCell>, EmotionError> {
    let mut acc: BTreeMap<Emotion, (usize, usize)> = BTreeMap::new();
    for (e, _, ok) in joined(annotations, predictions, corpus)? {
        let c = acc.entry(e).or_insert((0, 0));
        c.0 += ok as usize;
        c.1 += 1;
    }
    Ok(acc
        .into_iter()
        .filter(|(_, (_, n))| *n >= min_count)
        .map(|(e, (k, n))| (e, AccuracyCell::from_counts(k, n)))
        .collect())
}

/// Accuracy for every (gold, polarity) cell; all six cells are present.
pub fn accuracy_by_polarity_and_label(
    annotations: &[EmotionAnnotation],
    predictions: &[ScoreRecord],
    corpus: &Corpus,
) -> Result<BTreeMap<(Gold, Polarity), AccuracyCell>, EmotionError> {
    let mut acc: BTreeMap<(Gold, Polarity), (usize, usize)> = BTreeMap::new();
    for g in [Gold::NonHateful, Gold::Hateful] {
        for p in Polarity::ALL {
            acc.insert((g, p), (0, 0));
        }
    }
    for (e, gold, ok) in joined(annotations, predictions, corpus)? {
        let c = acc.get_mut(&(gold, e.polarity())).expect("all cells seeded");
        c.0 += ok as usize;
        c.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(k, (c, n))| (k, AccuracyCell::from_counts(c, n)))
        .collect())
}
