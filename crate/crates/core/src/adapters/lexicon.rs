use std::collections::BTreeMap;

use crate::corpus::TargetIdentity;
use crate::scm::HypothesisKind;

pub const HATE_TERMS: [&str; 7] = [
    "hate",
    "disgusting",
    "scum",
    "vermin",
    "eradicate",
    "burden",
    "parasites",
];

pub const POSITIVE_TERMS: [&str; 5] = ["love", "admire", "proud", "respect", "celebrate"];

/// (hate hits, positive hits), case-insensitive whole-word matching.
pub(crate) fn hits(text: &str) -> (usize, usize) {
    let mut hate = 0;
    let mut positive = 0;
    for word in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        let w = word.to_lowercase();
        if HATE_TERMS.contains(&w.as_str()) {
            hate += 1;
        }
        if POSITIVE_TERMS.contains(&w.as_str()) {
            positive += 1;
        }
    }
    (hate, positive)
}

/// Deterministic keyword classifier:
///
/// `clamp01(0.10 + 0.40·[H≥1] + 0.10·min(H−1, 3)·[H≥2] − 0.25·[P≥1] + offset[identity])`
pub fn builtin_lexicon_score(
    text: &str,
    identity: &TargetIdentity,
    offsets: &BTreeMap<TargetIdentity, f64>,
) -> f64 {
    let (h, p) = hits(text);
    let mut s = 0.10;
    if h >= 1 {
        s += 0.40;
    }
    if h >= 2 {
        s += 0.10 * (h - 1).min(3) as f64;
    }
    if p >= 1 {
        s -= 0.25;
    }
    s += offsets.get(identity).copied().unwrap_or(0.0);
    s.clamp(0.0, 1.0)
}

/// Offline stand-in for an NLI model, driven by the same keyword lists.
///
/// With sentiment `s = clamp(P − H, −2, 2)` and weight `w` (2.0 for warmth,
/// 1.5 for competence), positive hypotheses get logits `(w·s, −w·s, 0)` and
/// negative hypotheses `(−w·s, w·s, 0)`.
pub fn builtin_nli_logits(premise: &str, kind: HypothesisKind) -> [f64; 3] {
    let (h, p) = hits(premise);
    let s = (p as f64 - h as f64).clamp(-2.0, 2.0);
    let w = if kind.is_warmth() { 2.0 } else { 1.5 };
    let a = if kind.is_positive() { w * s } else { -w * s };
    [a, -a, 0.0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero() -> BTreeMap<TargetIdentity, f64> {
        BTreeMap::new()
    }

    #[test]
    fn single_hate_term() {
        let s = builtin_lexicon_score("I hate immigrants", &TargetIdentity::Immigrants, &zero());
        assert!((s - 0.50).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_base_rate() {
        assert!((builtin_lexicon_score("", &TargetIdentity::Women, &zero()) - 0.10).abs() < 1e-12);
    }

    #[test]
    fn identity_offset_is_added() {
        let mut o = zero();
        o.insert(TargetIdentity::BlackPeople, 0.2);
        let s = builtin_lexicon_score("I hate them", &TargetIdentity::BlackPeople, &o);
        assert!((s - 0.70).abs() < 1e-12);
        let w = builtin_lexicon_score("I hate them", &TargetIdentity::Women, &o);
        assert!((w - 0.50).abs() < 1e-12);
    }

    #[test]
    fn whole_words_only_and_case_insensitive() {
        let o = zero();
        // "hateful" and "lovely" are not whole-word hits.
        assert!((builtin_lexicon_score("hateful lovely", &TargetIdentity::Women, &o) - 0.10).abs() < 1e-12);
        assert!((builtin_lexicon_score("HATE!", &TargetIdentity::Women, &o) - 0.50).abs() < 1e-12);
    }

    #[test]
    fn extra_hits_saturate_at_three() {
        let o = zero();
        // H=5: 0.10 + 0.40 + 0.10*3 = 0.80
        let s = builtin_lexicon_score(
            "hate scum vermin burden parasites",
            &TargetIdentity::Women,
            &o,
        );
        assert!((s - 0.80).abs() < 1e-12);
        // H=2, P=1: 0.10 + 0.40 + 0.10 - 0.25 = 0.35
        let s = builtin_lexicon_score("hate scum, love", &TargetIdentity::Women, &o);
        assert!((s - 0.35).abs() < 1e-12);
    }

    #[test]
    fn clamps_to_unit_interval() {
        let mut o = zero();
        o.insert(TargetIdentity::Women, -0.5);
        assert_eq!(builtin_lexicon_score("love", &TargetIdentity::Women, &o), 0.0);
        o.insert(TargetIdentity::Women, 0.9);
        assert_eq!(builtin_lexicon_score("hate scum", &TargetIdentity::Women, &o), 1.0);
    }

    #[test]
    fn builtin_nli_is_neutral_without_hits() {
        for kind in HypothesisKind::ALL {
            assert_eq!(builtin_nli_logits("a plain sentence", kind), [0.0, 0.0, 0.0]);
        }
        let pos = builtin_nli_logits("I love them", HypothesisKind::WarmthPos);
        let neg = builtin_nli_logits("I love them", HypothesisKind::WarmthNeg);
        assert!(pos[0] > pos[1] && neg[1] > neg[0]);
    }
}
