use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{index_predictions, AnalysisError};
use crate::adapters::ScoreRecord;
use crate::corpus::Corpus;
use crate::scm::ScmScore;

pub const DEFAULT_SEED: u64 = 42;
const RESTARTS: usize = 10;
const MAX_ITER: usize = 300;
const TOL: f64 = 1e-8;

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

/// Nearest centroid; ties go to the lower index.
fn nearest(p: [f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(p, *c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(*p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(*p, c));
        }
    }
    centroids
}

/// One Lloyd run from a k-means++ start.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansRun {
    pub centroids: Vec<[f64; 2]>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub restart: usize,
}

fn assign(points: &[[f64; 2]], centroids: &[[f64; 2]], out: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (a, p) in out.iter_mut().zip(points) {
        let (j, d) = nearest(*p, centroids);
        *a = j;
        inertia += d;
    }
    inertia
}

fn lloyd(points: &[[f64; 2]], k: usize, seed: u64, restart: usize) -> KMeansRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![0; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        trace.push(assign(points, &centroids, &mut assignments));

        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            counts[a] += 1;
        }
        let mut next: Vec<[f64; 2]> = (0..k)
            .map(|j| {
                if counts[j] > 0 {
                    [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64]
                } else {
                    centroids[j]
                }
            })
            .collect();
        // an empty cluster takes the point farthest from its own centroid
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = points
                .iter()
                .zip(&assignments)
                .enumerate()
                .map(|(i, (p, &a))| (i, dist2(*p, next[a])))
                .fold((0, -1.0), |best, x| if x.1 > best.1 { x } else { best });
            next[j] = points[far.0];
        }
        let drift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| dist2(*a, *b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if drift < TOL {
            break;
        }
    }
    let inertia = assign(points, &centroids, &mut assignments);
    trace.push(inertia);
    KMeansRun {
        centroids,
        assignments,
        inertia,
        trace,
        iterations,
        restart,
    }
}

/// Best of ten k-means++/Lloyd restarts; ties in inertia go to the earlier restart.
pub fn kmeans_points(points: &[[f64; 2]], k: usize, seed: u64) -> Result<KMeansRun, AnalysisError> {
    if k == 0 || points.len() < k {
        return Err(AnalysisError::TooFewPoints {
            points: points.len(),
            k,
        });
    }
    let runs: Vec<KMeansRun> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..RESTARTS)
            .map(|r| s.spawn(move || lloyd(points, k, seed, r)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("k-means worker panicked"))
            .collect()
    });
    Ok(runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("RESTARTS > 0"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster2D {
    pub id: usize,
    /// (warmth, competence)
    pub centroid: [f64; 2],
    pub members: Vec<String>,
    pub accuracy: Option<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Non-empty clusters in id order.
    pub clusters: Vec<Cluster2D>,
    /// Cluster id per input point.
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub trace: Vec<f64>,
    pub seed: u64,
}

pub fn kmeans_2d(points: &[ScmScore], k: usize, seed: u64) -> Result<KMeansFit, AnalysisError> {
    let xy: Vec<[f64; 2]> = points.iter().map(|p| [p.warmth, p.competence]).collect();
    let run = kmeans_points(&xy, k, seed)?;
    let mut members: Vec<Vec<String>> = vec![Vec::new(); k];
    for (p, &a) in points.iter().zip(&run.assignments) {
        members[a].push(p.case_id.clone());
    }
    let clusters = members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(id, members)| {
            let c = run.centroids[id];
            Cluster2D {
                id,
                centroid: c,
                members,
                accuracy: None,
                distance: c[0].hypot(c[1]),
            }
        })
        .collect();
    Ok(KMeansFit {
        clusters,
        assignments: run.assignments,
        inertia: run.inertia,
        trace: run.trace,
        seed,
    })
}

/// Fraction of members whose predicted label equals gold.
pub fn fill_accuracy(
    clusters: &mut [Cluster2D],
    predictions: &[ScoreRecord],
    corpus: &Corpus,
) -> Result<(), AnalysisError> {
    let preds = index_predictions(predictions);
    for c in clusters.iter_mut() {
        let mut correct = 0usize;
        for id in &c.members {
            let case = corpus
                .get(id)
                .ok_or_else(|| AnalysisError::UnknownCaseId(id.clone()))?;
            let p = preds
                .get(id.as_str())
                .ok_or_else(|| AnalysisError::MissingPrediction(id.clone()))?;
            correct += (p.label == case.gold) as usize;
        }
        c.accuracy = (!c.members.is_empty()).then(|| correct as f64 / c.members.len() as f64);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub cluster: usize,
    pub distance: f64,
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
    /// Sorted by distance, then cluster id.
    pub table: Vec<ClusterRow>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks, 1-based.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Correlation between centroid distance to the origin and cluster accuracy.
/// Clusters without an accuracy are ignored.
pub fn cluster_accuracy_correlation(clusters: &[Cluster2D]) -> Result<Correlation, AnalysisError> {
    let mut table: Vec<ClusterRow> = clusters
        .iter()
        .filter_map(|c| {
            c.accuracy.map(|accuracy| ClusterRow {
                cluster: c.id,
                distance: c.distance,
                accuracy,
                n: c.members.len(),
            })
        })
        .collect();
    if table.len() < 3 {
        return Err(AnalysisError::TooFewClusters(table.len()));
    }
    table.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.cluster.cmp(&b.cluster)));
    let d: Vec<f64> = table.iter().map(|r| r.distance).collect();
    let a: Vec<f64> = table.iter().map(|r| r.accuracy).collect();
    if d.iter().all(|x| *x == d[0]) {
        return Err(AnalysisError::DegenerateVariance("distances"));
    }
    if a.iter().all(|x| *x == a[0]) {
        return Err(AnalysisError::DegenerateVariance("accuracies"));
    }
    Ok(Correlation {
        pearson: pearson(&d, &a).expect("variance checked"),
        spearman: spearman(&d, &a).expect("variance checked"),
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scm(id: usize, w: f64, c: f64) -> ScmScore {
        ScmScore {
            case_id: id.to_string(),
            warmth: w,
            competence: c,
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = [scm(0, 0.0, 1.0), scm(1, 2.0, 3.0), scm(2, 1.0, -1.0)];
        let fit = kmeans_2d(&pts, 1, DEFAULT_SEED).unwrap();
        assert_eq!(fit.clusters.len(), 1);
        let c = fit.clusters[0].centroid;
        assert!((c[0] - 1.0).abs() < 1e-15 && (c[1] - 1.0).abs() < 1e-15);
        assert_eq!(fit.clusters[0].members.len(), 3);
    }

    #[test]
    fn identical_points() {
        let pts: Vec<_> = (0..5).map(|i| scm(i, 0.3, -0.2)).collect();
        let fit = kmeans_2d(&pts, 2, DEFAULT_SEED).unwrap();
        assert_eq!(fit.clusters.len(), 1);
        assert_eq!(fit.clusters[0].members.len(), 5);
        assert_eq!(fit.inertia, 0.0);
            }

    #[test]
    fn too_few_points() {
        let pts = [scm(0, 0.0, 0.0)];
        assert_eq!(
            kmeans_2d(&pts, 2, 1).unwrap_err(),
            AnalysisError::TooFewPoints { points: 1, k: 2 }
        );
    }

    #[test]
    fn deterministic_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 2]> = (0..500)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let a = kmeans_points(&pts, 10, 42).unwrap();
        let b = kmeans_points(&pts, 10, 42).unwrap();
        assert_eq!(a, b);
        for w in a.trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", a.trace);
        }
    }

    fn cluster(id: usize, distance: f64, accuracy: f64) -> Cluster2D {
        Cluster2D {
            id,
            centroid: [distance, 0.0],
            members: vec![id.to_string()],
            accuracy: Some(accuracy),
            distance,
        }
    }

    #[test]
    fn correlation_examples() {
        let lin: Vec<_> = (0..5).map(|i| cluster(i, i as f64 * 0.3, 0.5 + i as f64 * 0.1)).collect();
        let r = cluster_accuracy_correlation(&lin).unwrap();
        assert!((r.pearson - 1.0).abs() < 1e-12);
        assert!((r.spearman - 1.0).abs() < 1e-12);

        let neg: Vec<_> = (0..5).map(|i| cluster(i, i as f64 * 0.2, 1.0 - i as f64 * 0.2)).collect();
        assert!((cluster_accuracy_correlation(&neg).unwrap().pearson + 1.0).abs() < 1e-12);

        let flat: Vec<_> = (0..4).map(|i| cluster(i, i as f64, 0.8)).collect();
        assert_eq!(
            cluster_accuracy_correlation(&flat).unwrap_err(),
            AnalysisError::DegenerateVariance("accuracies")
        );
        assert_eq!(
            cluster_accuracy_correlation(&lin[..2]).unwrap_err(),
            AnalysisError::TooFewClusters(2)
        );
    }

    #[test]
    fn correlation_ignores_cluster_labels() {
        let a: Vec<_> = [(0.1, 0.6), (0.9, 0.9), (0.5, 0.7), (1.4, 0.95)]
            .iter()
            .enumerate()
            .map(|(i, &(d, acc))| cluster(i, d, acc))
            .collect();
        let mut b = a.clone();
        b.reverse();
        for (i, c) in b.iter_mut().enumerate() {
            c.id = 10 + i;
        }
        let (ra, rb) = (
            cluster_accuracy_correlation(&a).unwrap(),
            cluster_accuracy_correlation(&b).unwrap(),
        );
        assert_eq!(ra.pearson, rb.pearson);
        assert_eq!(ra.spearman, rb.spearman);
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
