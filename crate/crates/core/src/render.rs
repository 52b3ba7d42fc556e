//! Turns stage outputs into a [`ReportBundle`].

use std::collections::{BTreeMap, HashMap};

use serde_json::json;

use crate::bias::BiasProfile;
use crate::config::RunConfig;
use crate::corpus::{Corpus, Gold, TargetIdentity};
use crate::pipeline::{
    emotion_names, Calibration, ClusterOutput, CorrelationOutcome, IngestSummary, Metrics,
    PipelineError,
};
use crate::report::{file_safe, fixed, num, JsonArtifact, ReportBundle, RunMetadata, Table};
use crate::scm::{scm_identity_means, ScmScore};

/// Template count reported for the public HateCheck release after filtering.
const PUBLISHED_TEMPLATES: usize = 333;

pub struct ReportInputs<'a> {
    pub config: &'a RunConfig,
    pub ingest: IngestSummary,
    pub bias: Option<Vec<BiasProfile>>,
    pub metrics: Metrics,
    pub annotation_summary: Option<serde_json::Value>,
    pub stereotypes: Option<BTreeMap<(TargetIdentity, Gold), Vec<(String, usize)>>>,
    pub scm: Option<Vec<ScmScore>>,
    pub clusters: Option<ClusterOutput>,
    pub calibration: Option<BTreeMap<String, Calibration>>,
    pub eval: Corpus,
}

fn s<T: ToString>(x: T) -> String {
    x.to_string()
}

fn corpus_tables(inputs: &ReportInputs) -> Vec<Table> {
    let mut stats = Table::new(
        "corpus_stats",
        "Test cases per target identity",
        "corpus_stats",
        &["corpus", "identity", "hateful", "non-hateful", "total"],
    );
    let mut corpora = vec![&inputs.ingest.bias];
    if !inputs.ingest.eval_is_bias {
        corpora.push(&inputs.ingest.eval);
    }
    for c in &corpora {
        let (mut h, mut n) = (0, 0);
        for (ident, hateful, non) in &c.stats {
            stats.push(vec![c.name.clone(), s(ident), s(hateful), s(non), s(hateful + non)]);
            h += hateful;
            n += non;
        }
        stats.push(vec![c.name.clone(), "total".into(), s(h), s(n), s(h + n)]);
    }

    let b = &inputs.ingest.bias;
    let mut sets = Table::new(
        "minimal_sets",
        "Minimal sets",
        "build_minimal_sets",
        &["corpus", "cases", "templates", "template cases"],
    );
    sets.push(vec![b.name.clone(), s(b.n_cases), s(b.n_templates), s(b.n_template_cases)]);
    if b.n_templates != PUBLISHED_TEMPLATES {
        sets.notes.push(format!(
            "Retained {} templates; the public HateCheck release yields {PUBLISHED_TEMPLATES} under the same filters.",
            b.n_templates
        ));
    }
    vec![stats, sets]
}

fn bias_tables(profiles: &[BiasProfile], bundle: &mut ReportBundle) {
    let mut cols = vec!["identity"];
    cols.extend(profiles.iter().map(|p| p.model_id.as_str()));
    let mut t = Table::new("bias_profile", "Identity bias (% of score)", "identity_bias_profile", &cols);
    let mut bars = Table::new("bias_bars", "Identity bias", "identity_bias_profile", &["model", "identity", "bias"]);
    for ident in &TargetIdentity::NAMED {
        let mut row = vec![s(ident)];
        row.extend(profiles.iter().map(|p| fixed(p.get(ident).map(|b| b * 100.0), 2)));
        t.push(row);
    }
    for p in profiles {
        for ident in &TargetIdentity::NAMED {
            bars.push(vec![p.model_id.clone(), s(ident), num(p.get(ident))]);
        }
    }
    if let Some(p) = profiles.first() {
        t.notes.push(format!("Computed on {} ({} templates).", p.computed_on, p.n_templates));
    }
    bundle.tables.push(t);
    bundle.plots.push(bars);
}

fn metric_tables(m: &Metrics, bundle: &mut ReportBundle) {
    let mut prf = Table::new(
        "prf",
        "Per-identity precision / recall / F1 (hateful class)",
        "prf_per_identity",
        &["model", "variant", "identity", "precision", "recall", "f1", "tp", "fp", "fn"],
    );
    for (model, mm) in &m.models {
        let variants = [("raw", Some(&mm.prf)), ("debiased", mm.prf_debiased.as_ref())];
        for (variant, table) in variants {
            let Some(table) = table else { continue };
            for r in &table.rows {
                let p = if r.degenerate_precision {
                    format!("{}*", fixed(Some(r.precision), 3))
                } else {
                    fixed(Some(r.precision), 3)
                };
                prf.push(vec![
                    model.clone(),
                    variant.into(),
                    s(&r.identity),
                    p,
                    fixed(Some(r.recall), 3),
                    fixed(Some(r.f1), 3),
                    s(r.tp),
                    s(r.fp),
                    s(r.fn_),
                ]);
            }
            let a = &table.average;
            prf.push(vec![
                model.clone(),
                variant.into(),
                "avg".into(),
                fixed(Some(a.precision), 3),
                fixed(Some(a.recall), 3),
                fixed(Some(a.f1), 3),
                String::new(),
                String::new(),
                String::new(),
            ]);
        }
    }
    prf.notes.push("* precision defined as 0 (no positive predictions).".into());
    bundle.tables.push(prf);

    let mut by_emotion = Table::new(
        "accuracy_by_emotion",
        "Accuracy by detected emotion",
        "accuracy_by_emotion",
        &["model", "emotion", "accuracy", "correct", "n"],
    );
    let mut by_polarity = Table::new(
        "accuracy_by_polarity",
        "Accuracy by emotion polarity and gold label",
        "accuracy_by_polarity_and_label",
        &["model", "gold", "polarity", "accuracy", "correct", "n"],
    );
    for (model, mm) in &m.models {
        for r in mm.accuracy_by_emotion.iter().flatten() {
            by_emotion.push(vec![model.clone(), r.key.clone(), fixed(r.accuracy, 3), s(r.correct), s(r.n)]);
        }
        for r in mm.accuracy_by_polarity.iter().flatten() {
            let (gold, pol) = r.key.split_once('/').unwrap_or((&r.key, ""));
            by_polarity.push(vec![
                model.clone(),
                gold.into(),
                pol.into(),
                fixed(r.accuracy, 3),
                s(r.correct),
                s(r.n),
            ]);
        }
    }
    if m.models.values().any(|mm| mm.accuracy_by_emotion.is_some()) {
        bundle.tables.push(by_emotion);
        bundle.tables.push(by_polarity);
    }

    for d in &m.emotion_distribution {
        let g = match d.group_by {
            crate::emotion::GroupBy::Identity => "identity",
            crate::emotion::GroupBy::Functionality => "functionality",
            crate::emotion::GroupBy::Gold => "gold",
        };
        let names = emotion_names();
        let mut cols = vec![g];
        cols.extend(names.iter().copied());
        let mut matrix = Table::new(
            &format!("emotions_by_{g}"),
            &format!("Detected emotions by {g}"),
            "emotion_distribution",
            &cols,
        );
        let mut long = Table::new(
            &format!("emotion_matrix_{g}"),
            &format!("Detected emotions by {g}"),
            "emotion_distribution",
            &["group", "emotion", "count"],
        );
        let mut grid: BTreeMap<&str, HashMap<&str, usize>> = BTreeMap::new();
        for (grp, em, n) in &d.cells {
            grid.entry(grp.as_str()).or_default().insert(em.as_str(), *n);
            long.push(vec![grp.clone(), em.clone(), s(n)]);
        }
        for (grp, counts) in &grid {
            let mut row = vec![s(grp)];
            row.extend(names.iter().map(|e| s(counts.get(e).copied().unwrap_or(0))));
            matrix.push(row);
        }
        matrix.notes.push(format!(
            "Coverage: {}/{} cases with a detected emotion.",
            d.detected, d.total
        ));
        bundle.tables.push(matrix);
        bundle.plots.push(long);
    }
}

fn scm_tables(inputs: &ReportInputs, scores: &[ScmScore], bundle: &mut ReportBundle) -> Result<(), PipelineError> {
    let means = scm_identity_means(scores, &inputs.eval)?;
    let mut t = Table::new(
        "scm_means",
        "Mean warmth and competence per identity and gold label",
        "scm_identity_means",
        &["identity", "gold", "warmth", "competence", "n"],
    );
    for ((ident, gold), m) in &means {
        t.push(vec![s(ident), gold.as_str().into(), fixed(Some(m.warmth), 2), fixed(Some(m.competence), 2), s(m.n)]);
    }
    bundle.tables.push(t);

    let cluster_of: HashMap<&str, usize> = inputs
        .clusters
        .iter()
        .flat_map(|c| c.assignments.iter().map(|(id, k)| (id.as_str(), *k)))
        .collect();
    let mut scatter = Table::new(
        "scm_scatter",
        "Warmth/competence per case",
        "scm_score",
        &["case_id", "identity", "gold", "warmth", "competence", "cluster"],
    );
    for sc in scores {
        let case = inputs.eval.get(&sc.case_id);
        scatter.push(vec![
            sc.case_id.clone(),
            case.map(|c| s(&c.identity)).unwrap_or_default(),
            case.map(|c| c.gold.as_str().to_string()).unwrap_or_default(),
            num(Some(sc.warmth)),
            num(Some(sc.competence)),
            cluster_of.get(sc.case_id.as_str()).map(|k| s(k)).unwrap_or_default(),
        ]);
    }
    bundle.plots.push(scatter);
    Ok(())
}

fn cluster_tables(inputs: &ReportInputs, c: &ClusterOutput, bundle: &mut ReportBundle) {
    let coords: HashMap<&str, &ScmScore> = inputs
        .scm
        .iter()
        .flatten()
        .map(|sc| (sc.case_id.as_str(), sc))
        .collect();
    let mut clusters = Table::new("clusters", "Cluster assignments", "kmeans_2d", &["case_id", "cluster", "warmth", "competence"]);
    for (id, k) in &c.assignments {
        let sc = coords.get(id.as_str());
        clusters.push(vec![
            id.clone(),
            s(k),
            num(sc.map(|x| x.warmth)),
            num(sc.map(|x| x.competence)),
        ]);
    }
    bundle.plots.push(clusters);

    let mut corr = Table::new(
        "cluster_correlation",
        "Centroid distance vs. cluster accuracy",
        "cluster_accuracy_correlation",
        &["model", "pearson", "spearman", "clusters"],
    );
    let mut pairs = Table::new(
        "distance_accuracy",
        "Centroid distance vs. cluster accuracy",
        "cluster_accuracy_correlation",
        &["model", "cluster", "distance", "accuracy", "n"],
    );
    for (model, outcome) in &c.correlations {
        match outcome {
            CorrelationOutcome::Ok(r) => {
                corr.push(vec![model.clone(), fixed(Some(r.pearson), 3), fixed(Some(r.spearman), 3), s(r.table.len())]);
                for row in &r.table {
                    pairs.push(vec![model.clone(), s(row.cluster), num(Some(row.distance)), num(Some(row.accuracy)), s(row.n)]);
                }
            }
            CorrelationOutcome::Undefined { error, table } => {
                corr.push(vec![model.clone(), "undefined".into(), "undefined".into(), s(table.len())]);
                corr.notes.push(format!("{model}: {error}"));
                for (k, d, a, n) in table {
                    pairs.push(vec![model.clone(), s(k), num(Some(*d)), num(*a), s(n)]);
                }
            }
        }
    }
    corr.notes.push(format!("k-means: k = {}, seed = {}, inertia = {}.", c.k, c.seed, fixed(Some(c.inertia), 6)));
    bundle.tables.push(corr);
    bundle.plots.push(pairs);
}

fn calibration_tables(cal: &BTreeMap<String, Calibration>, bundle: &mut ReportBundle) {
    let mut summary = Table::new(
        "calibration",
        "Expected calibration error",
        "reliability_bins",
        &["model", "ece", "bins", "empty bins"],
    );
    let mut hist = Table::new(
        "score_histogram",
        "Score distribution by gold label",
        "score_histogram",
        &["model", "gold", "bin", "lo", "hi", "count"],
    );
    for (model, c) in cal {
        let r = &c.reliability;
        summary.push(vec![
            model.clone(),
            fixed(r.ece, 4),
            s(r.bins.len()),
            s(r.bins.iter().filter(|b| b.count == 0).count()),
        ]);
        let mut rel = Table::new(
            &format!("reliability.{}", file_safe(model)),
            &format!("Reliability bins for {model}"),
            "reliability_bins",
            &["bin", "lo", "hi", "mean_pred", "emp_rate", "count"],
        );
        for b in &r.bins {
            rel.push(vec![s(b.bin), num(Some(b.lo)), num(Some(b.hi)), num(b.mean_predicted), num(b.empirical_positive_rate), s(b.count)]);
        }
        bundle.plots.push(rel);
        let h = &c.histogram;
        let width = 1.0 / h.bins as f64;
        for (gold, counts) in [("hateful", &h.hateful), ("non-hateful", &h.non_hateful)] {
            for (i, n) in counts.iter().enumerate() {
                hist.push(vec![
                    model.clone(),
                    gold.into(),
                    s(i + 1),
                    num(Some(i as f64 * width)),
                    num(Some((i + 1) as f64 * width)),
                    s(n),
                ]);
            }
        }
    }
    bundle.tables.push(summary);
    bundle.plots.push(hist);
}

fn stereotype_table(top: &BTreeMap<(TargetIdentity, Gold), Vec<(String, usize)>>) -> Table {
    let mut t = Table::new(
        "top_stereotypes",
        "Most frequent stereotype spans",
        "top_stereotypes",
        &["identity", "gold", "rank", "span", "count"],
    );
    for ((ident, gold), spans) in top {
        for (i, (span, n)) in spans.iter().enumerate() {
            t.push(vec![s(ident), gold.as_str().into(), s(i + 1), span.clone(), s(n)]);
        }
    }
    t
}

pub fn build_bundle(inputs: &ReportInputs) -> Result<ReportBundle, PipelineError> {
    let cfg = inputs.config;
    let mut corpora = vec![inputs.ingest.bias.name.clone()];
    if !inputs.ingest.eval_is_bias {
        corpora.push(inputs.ingest.eval.name.clone());
    }
    let mut bundle = ReportBundle {
        metadata: RunMetadata {
            run_name: cfg.run.name.clone(),
            model_ids: cfg.classifiers.iter().map(|c| c.model_id.clone()).collect(),
            corpora,
            seed: cfg.run.seed,
            config_hash: cfg.hash(),
        },
        ..Default::default()
    };
    bundle.tables.extend(corpus_tables(inputs));
    if let Some(p) = &inputs.bias {
        bias_tables(p, &mut bundle);
    }
    metric_tables(&inputs.metrics, &mut bundle);
    if let Some(a) = &inputs.annotation_summary {
        let mut t = Table::new("annotation", "Annotation summary", "annotate", &["field", "value"]);
        if let Some(obj) = a.as_object() {
            for (k, v) in obj {
                t.push(vec![k.clone(), v.to_string().trim_matches('"').to_string()]);
            }
        }
        bundle.tables.push(t);
    }
    if let Some(top) = &inputs.stereotypes {
        bundle.tables.push(stereotype_table(top));
    }
    if let Some(scores) = &inputs.scm {
        scm_tables(inputs, scores, &mut bundle)?;
    }
    if let Some(c) = &inputs.clusters {
        cluster_tables(inputs, c, &mut bundle);
    }
    if let Some(cal) = &inputs.calibration {
        calibration_tables(cal, &mut bundle);
    }
    bundle.json.push(JsonArtifact {
        name: "metrics".into(),
        producer_op: "metrics".into(),
        value: json!({
            "models": inputs.metrics.models,
            "emotion_distribution": inputs.metrics.emotion_distribution,
            "bias": inputs.bias,
            "calibration": inputs.calibration.as_ref().map(|c| c
                .iter()
                .map(|(m, c)| (m.clone(), json!({ "ece": c.reliability.ece })))
                .collect::<serde_json::Map<_, _>>()),
            "correlation": inputs.clusters.as_ref().map(|c| &c.correlations),
            "kmeans": inputs.clusters.as_ref().map(|c| json!({ "k": c.k, "seed": c.seed, "inertia": c.inertia })),
        }),
    });
    Ok(bundle)
}
