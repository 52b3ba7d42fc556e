//! Identity-mention bias from minimal sets, and naive debiasing.
//!
//! Each template's seven scores are centred on their median; an identity's
//! bias is the mean of its centred scores over all templates. Debiasing
//! subtracts that bias from a raw score before thresholding.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::ScoreRecord;
use crate::corpus::{Gold, TargetIdentity, TemplateGroup};

#[derive(Debug, Error, PartialEq)]
pub enum BiasError {
    #[error("no score for case `{0}`")]
    MissingScore(String),
    #[error("no normalized predictions for identity `{0}`")]
    MissingIdentity(TargetIdentity),
    #[error("identity `{0}` has no bias entry")]
    UnknownIdentity(TargetIdentity),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPrediction {
    pub case_id: String,
    pub template_id: String,
    pub identity: TargetIdentity,
    pub normalized: f64,
}

/// Middle order statistic; callers pass odd-sized groups.
fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn normalize_by_template(
    groups: &[TemplateGroup],
    scores: &[ScoreRecord],
) -> Result<Vec<NormalizedPrediction>, BiasError> {
    let by_case: HashMap<&str, f64> = scores
        .iter()
        .map(|r| (r.case_id.as_str(), r.score))
        .collect();
    let mut out = Vec::with_capacity(groups.len() * 7);
    for g in groups {
        let vals = g
            .cases
            .iter()
            .map(|c| {
                by_case
                    .get(c.case_id.as_str())
                    .copied()
                    .ok_or_else(|| BiasError::MissingScore(c.case_id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let m = median(&vals);
        out.extend(g.cases.iter().zip(&vals).map(|(c, v)| NormalizedPrediction {
            case_id: c.case_id.clone(),
            template_id: g.template_id.clone(),
            identity: c.identity.clone(),
            normalized: v - m,
        }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasProfile {
    pub model_id: String,
    /// Name of the corpus whose minimal sets produced the profile.
    pub computed_on: String,
    pub bias: BTreeMap<TargetIdentity, f64>,
    pub n_templates: usize,
}

impl BiasProfile {
    pub fn get(&self, identity: &TargetIdentity) -> Option<f64> {
        self.bias.get(identity).copied()
    }
}

/// Mean normalized prediction per named identity.
pub fn identity_bias_profile(
    normalized: &[NormalizedPrediction],
    model_id: &str,
    computed_on: &str,
) -> Result<BiasProfile, BiasError> {
    let mut acc: BTreeMap<&TargetIdentity, (f64, usize)> = BTreeMap::new();
    let mut templates = std::collections::HashSet::new();
    for p in normalized {
        let e = acc.entry(&p.identity).or_insert((0.0, 0));
        e.0 += p.normalized;
        e.1 += 1;
        templates.insert(p.template_id.as_str());
    }
    let mut bias = BTreeMap::new();
    for ident in TargetIdentity::NAMED {
        let (sum, n) = acc
            .get(&ident)
            .copied()
            .ok_or_else(|| BiasError::MissingIdentity(ident.clone()))?;
        bias.insert(ident, sum / n as f64);
    }
    Ok(BiasProfile {
        model_id: model_id.to_string(),
        computed_on: computed_on.to_string(),
        bias,
        n_templates: templates.len(),
    })
}

/// Debiased record: `d = score - bias[identity]`; the label thresholds the
/// unclamped `d`, the reported score is `clamp01(d)`.
pub fn apply_debias(
    record: &ScoreRecord,
    profile: &BiasProfile,
    identity: &TargetIdentity,
    threshold: f64,
) -> Result<ScoreRecord, BiasError> {
    let b = profile
        .get(identity)
        .ok_or_else(|| BiasError::UnknownIdentity(identity.clone()))?;
    let d = record.score - b;
    Ok(ScoreRecord {
        model_id: record.model_id.clone(),
        case_id: record.case_id.clone(),
        score: d.clamp(0.0, 1.0),
        label: if d >= threshold {
            Gold::Hateful
        } else {
            Gold::NonHateful
        },
    })
}
