use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{index_predictions, AnalysisError};
use crate::adapters::ScoreRecord;
use crate::corpus::{Corpus, Gold, TargetIdentity};

/// Precision/recall/F1 for the Hateful class on one identity's cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfRow {
    pub identity: TargetIdentity,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Set when tp+fp = 0 and precision was defined as 0.
    pub degenerate_precision: bool,
}

impl PrfRow {
    fn from_counts(identity: TargetIdentity, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        PrfRow {
            identity,
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
            degenerate_precision: tp + fp == 0,
        }
    }
}

/// Unweighted mean over the identity rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroAverage {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfTable {
    pub rows: Vec<PrfRow>,
    pub average: MacroAverage,
}

/// One row per target identity present in the corpus (cases without a target
/// are skipped), ordered by identity.
pub fn prf_per_identity(
    predictions: &[ScoreRecord],
    corpus: &Corpus,
) -> Result<PrfTable, AnalysisError> {
    let preds = index_predictions(predictions);
    if let Some(p) = predictions.iter().find(|p| corpus.get(&p.case_id).is_none()) {
        return Err(AnalysisError::UnknownCaseId(p.case_id.clone()));
    }
    let mut counts: BTreeMap<&TargetIdentity, (usize, usize, usize)> = BTreeMap::new();
    for case in corpus.cases() {
        let pred = preds
            .get(case.case_id.as_str())
            .ok_or_else(|| AnalysisError::MissingPrediction(case.case_id.clone()))?;
        if case.identity.is_none() {
            continue;
        }
        let c = counts.entry(&case.identity).or_insert((0, 0, 0));
        match (case.gold, pred.label) {
            (Gold::Hateful, Gold::Hateful) => c.0 += 1,
            (Gold::NonHateful, Gold::Hateful) => c.1 += 1,
            (Gold::Hateful, Gold::NonHateful) => c.2 += 1,
            (Gold::NonHateful, Gold::NonHateful) => {}
        }
    }
    let rows: Vec<PrfRow> = counts
        .into_iter()
        .map(|(ident, (tp, fp, fn_))| PrfRow::from_counts(ident.clone(), tp, fp, fn_))
        .collect();
    let mean = |f: fn(&PrfRow) -> f64| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(f).sum::<f64>() / rows.len() as f64
        }
    };
    let average = MacroAverage {
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
    };
    Ok(PrfTable { rows, average })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TestCase;

    fn case(id: usize, ident: TargetIdentity, gold: Gold) -> TestCase {
        TestCase {
            case_id: id.to_string(),
            text: "t".into(),
            identity: ident,
            functionality: "F1".into(),
            gold,
            template_id: None,
            dataset: "fx".into(),
        }
    }

    #[test]
    fn perfect_predictions() {
        let cases: Vec<_> = TargetIdentity::NAMED
            .iter()
            .enumerate()
            .flat_map(|(i, t)| {
                [
                    case(2 * i, t.clone(), Gold::Hateful),
                    case(2 * i + 1, t.clone(), Gold::NonHateful),
                ]
            })
            .collect();
        let preds: Vec<_> = cases
            .iter()
            .map(|c| ScoreRecord::new("m", &c.case_id, if c.gold.is_hateful() { 1.0 } else { 0.0 }, 0.5))
            .collect();
        let corpus = Corpus::new("fx", cases).unwrap();
        let t = prf_per_identity(&preds, &corpus).unwrap();
        assert_eq!(t.rows.len(), 7);
        assert!(t.rows.iter().all(|r| (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)));
        assert_eq!((t.average.precision, t.average.recall, t.average.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_counted() {
        use TargetIdentity::*;
        // women: tp 2, fp 1, fn 1; Muslims: no positive predictions
        let cases = vec![
            case(1, Women, Gold::Hateful),
            case(2, Women, Gold::Hateful),
            case(3, Women, Gold::Hateful),
            case(4, Women, Gold::NonHateful),
            case(5, Muslims, Gold::Hateful),
            case(6, Muslims, Gold::NonHateful),
            case(7, TargetIdentity::none(), Gold::Hateful),
        ];
        let labels = [1, 1, 0, 1, 0, 0, 1];
        let preds: Vec<_> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| ScoreRecord::new("m", &(i + 1).to_string(), l as f64, 0.5))
            .collect();
        let corpus = Corpus::new("fx", cases).unwrap();
        let t = prf_per_identity(&preds, &corpus).unwrap();
        assert_eq!(t.rows.len(), 2);
        let w = &t.rows[0];
        assert_eq!(w.identity, Women);
        assert_eq!((w.tp, w.fp, w.fn_), (2, 1, 1));
        assert!((w.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.f1 - 2.0 / 3.0).abs() < 1e-15);
        let m = &t.rows[1];
        assert!(m.degenerate_precision);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!((t.average.f1 - 1.0 / 3.0).abs() < 1e-15);

        assert_eq!(
            prf_per_identity(&preds[..6], &corpus).unwrap_err(),
            AnalysisError::MissingPrediction("7".into())
        );
    }
}
