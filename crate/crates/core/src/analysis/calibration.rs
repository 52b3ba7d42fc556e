use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::adapters::ScoreRecord;
use crate::corpus::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    /// 1-based.
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    /// `None` for an empty bin.
    pub mean_predicted: Option<f64>,
    pub empirical_positive_rate: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reliability {
    pub bins: Vec<ReliabilityBin>,
    /// `None` when there are no predictions.
    pub ece: Option<f64>,
}

/// Scores are clamped into [0,1]; the last bin is closed at 1.0.
fn bin_of(score: f64, n: usize) -> usize {
    ((score.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n - 1)
}

fn gold_of<'a>(corpus: &'a Corpus, p: &ScoreRecord) -> Result<&'a crate::corpus::TestCase, AnalysisError> {
    corpus
        .get(&p.case_id)
        .ok_or_else(|| AnalysisError::UnknownCaseId(p.case_id.clone()))
}

pub fn reliability_bins(
    predictions: &[ScoreRecord],
    corpus: &Corpus,
    n: usize,
) -> Result<Reliability, AnalysisError> {
    if n < 2 {
        return Err(AnalysisError::InvalidBins { got: n, min: 2 });
    }
    let mut sum = vec![0.0; n];
    let mut pos = vec![0usize; n];
    let mut count = vec![0usize; n];
    for p in predictions {
        let case = gold_of(corpus, p)?;
        let b = bin_of(p.score, n);
        sum[b] += p.score;
        pos[b] += case.gold.is_hateful() as usize;
        count[b] += 1;
    }
    let total = predictions.len() as f64;
    let mut ece = 0.0;
    let bins = (0..n)
        .map(|i| {
            let (mean_predicted, empirical_positive_rate) = if count[i] == 0 {
                (None, None)
            } else {
                let m = sum[i] / count[i] as f64;
                let e = pos[i] as f64 / count[i] as f64;
                ece += count[i] as f64 / total * (m - e).abs();
                (Some(m), Some(e))
            };
            ReliabilityBin {
                bin: i + 1,
                lo: i as f64 / n as f64,
                hi: (i + 1) as f64 / n as f64,
                mean_predicted,
                empirical_positive_rate,
                count: count[i],
            }
        })
        .collect();
    Ok(Reliability {
        bins,
        ece: (!predictions.is_empty()).then_some(ece),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistogram {
    pub bins: usize,
    pub hateful: Vec<usize>,
    pub non_hateful: Vec<usize>,
}

/// Equal-width score counts, split by gold label.
pub fn score_histogram(
    predictions: &[ScoreRecord],
    corpus: &Corpus,
    bins: usize,
) -> Result<ScoreHistogram, AnalysisError> {
    if bins < 1 {
        return Err(AnalysisError::InvalidBins { got: bins, min: 1 });
    }
    let mut h = ScoreHistogram {
        bins,
        hateful: vec![0; bins],
        non_hateful: vec![0; bins],
    };
    for p in predictions {
        let b = bin_of(p.score, bins);
        if gold_of(corpus, p)?.gold.is_hateful() {
            h.hateful[b] += 1;
        } else {
            h.non_hateful[b] += 1;
        }
    }
    Ok(h)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::corpus::{Gold, TargetIdentity, TestCase};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn counts_sum_and_ece_matches_definition(
            rows in proptest::collection::vec((-0.2f64..1.2, any::<bool>()), 1..200),
            n in 2usize..30,
        ) {
            let cases: Vec<TestCase> = rows.iter().enumerate().map(|(i, (_, h))| TestCase {
                case_id: i.to_string(),
                text: "t".into(),
                identity: TargetIdentity::Women,
                functionality: "f".into(),
                gold: if *h { Gold::Hateful } else { Gold::NonHateful },
                template_id: None,
                dataset: "p".into(),
            }).collect();
            let corpus = Corpus::new("p", cases).unwrap();
            let preds: Vec<ScoreRecord> = rows.iter().enumerate()
                .map(|(i, (s, _))| ScoreRecord::new("m", &i.to_string(), *s, 0.5))
                .collect();
            let rel = reliability_bins(&preds, &corpus, n).unwrap();
            prop_assert_eq!(rel.bins.len(), n);
            prop_assert_eq!(rel.bins.iter().map(|b| b.count).sum::<usize>(), rows.len());
            let ece: f64 = rel.bins.iter().filter(|b| b.count > 0).map(|b| {
                b.count as f64 / rows.len() as f64
                    * (b.mean_predicted.unwrap() - b.empirical_positive_rate.unwrap()).abs()
            }).sum();
            let got = rel.ece.unwrap();
            prop_assert!((got - ece).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&got) || rows.iter().any(|(s, _)| !(0.0..=1.0).contains(s)));
        }
    }
}
