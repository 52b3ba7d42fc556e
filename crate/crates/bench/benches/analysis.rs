use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hsaudit::adapters::ScoreRecord;
use hsaudit::analysis::{kmeans_points, reliability_bins};
use hsaudit::bias::normalize_by_template;
use hsaudit::corpus::{Corpus, Gold, TargetIdentity, TemplateGroup, TestCase};

fn case(id: String, identity: TargetIdentity, gold: Gold) -> TestCase {
    TestCase {
        case_id: id,
        text: "t".into(),
        identity,
        functionality: "f".into(),
        gold,
        template_id: None,
        dataset: "bench".into(),
    }
}

fn kmeans(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<[f64; 2]> = (0..3000)
        .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
        .collect();
    c.bench_function("kmeans_points 3000x10", |b| b.iter(|| kmeans_points(black_box(&pts), 10, 42).unwrap()));
}

fn reliability(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cases = Vec::new();
    let mut preds = Vec::new();
    for i in 0..20_000 {
        let u: f64 = rng.random();
        let gold = if rng.random::<f64>() < u { Gold::Hateful } else { Gold::NonHateful };
        cases.push(case(i.to_string(), TargetIdentity::Women, gold));
        preds.push(ScoreRecord::new("m", &i.to_string(), u, 0.5));
    }
    let corpus = Corpus::new("bench", cases).unwrap();
    c.bench_function("reliability_bins 20k", |b| {
        b.iter(|| reliability_bins(black_box(&preds), &corpus, 20).unwrap())
    });
}

fn normalize(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let groups: Vec<TemplateGroup> = (0..333)
        .map(|t| TemplateGroup {
            template_id: t.to_string(),
            cases: TargetIdentity::NAMED
                .iter()
                .enumerate()
                .map(|(i, id)| case(format!("{t}-{i}"), id.clone(), Gold::Hateful))
                .collect(),
        })
        .collect();
    let scores: Vec<ScoreRecord> = groups
        .iter()
        .flat_map(|g| g.cases.iter())
        .map(|c| ScoreRecord::new("m", &c.case_id, rng.random(), 0.5))
        .collect();
    c.bench_function("normalize_by_template 333x7", |b| {
        b.iter(|| normalize_by_template(black_box(&groups), &scores).unwrap())
    });
}

criterion_group!(benches, kmeans, reliability, normalize);
criterion_main!(benches);
