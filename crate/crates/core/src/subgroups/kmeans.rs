use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Independent k-means++ restarts; the lowest-inertia run is kept.
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iter: 300,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub seed: u64,
    pub n_iter: usize,
    /// Inertia after each assignment step of the kept run.
    pub inertia_history: Vec<f64>,
}

/// Mean of all rows.
pub fn centroid(data: &[Vec<f64>]) -> Vec<f64> {
    let dim = data.first().map_or(0, Vec::len);
    let mut c = vec![0.0; dim];
    for row in data {
        for (a, b) in c.iter_mut().zip(row) {
            *a += b;
        }
    }
    let n = data.len().max(1) as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

fn plus_plus_init<R: Rng + ?Sized>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centers = vec![data[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| squared_distance(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            // Floating-point slack can leave r slightly positive at the end.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data[pick].clone();
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(squared_distance(x, &c));
        }
        centers.push(c);
    }
    centers
}

fn assign(data: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    data.iter()
        .map(|x| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = squared_distance(x, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

fn lloyd<R: Rng + ?Sized>(
    data: &[Vec<f64>],
    k: usize,
    config: &KMeansConfig,
    rng: &mut R,
) -> (Vec<Vec<f64>>, Vec<usize>, Vec<f64>, usize) {
    let dim = data[0].len();
    let mut centers = plus_plus_init(data, k, rng);
    let (mut labels, mut dists) = assign(data, &centers);
    let mut history = vec![dists.iter().sum::<f64>()];
    let mut n_iter = 0;
    for _ in 0..config.max_iter {
        n_iter += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &l) in data.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // Reseed from the point farthest from its own center.
                let far = dists
                    .iter()
                    .enumerate()
                    .fold((0, -1.0), |best, (i, &d)| if d > best.1 { (i, d) } else { best })
                    .0;
                centers[j] = data[far].clone();
                dists[far] = 0.0;
            }
        }
        let (new_labels, new_dists) = assign(data, &centers);
        let changed = new_labels != labels;
        labels = new_labels;
        dists = new_dists;
        history.push(dists.iter().sum());
        if !changed {
            break;
        }
    }
    // Centers are the means of the final assignment.
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &l) in data.iter().zip(&labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(x) {
            *s += v;
        }
    }
    for j in 0..k {
        if counts[j] > 0 {
            centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
        }
    }
    (centers, labels, history, n_iter)
}

pub fn kmeans(data: &[Vec<f64>], k: usize, seed: u64, config: &KMeansConfig) -> Result<Clustering> {
    let n = data.len();
    if k == 0 || n < k {
        return Err(Error::InvalidInput(format!(
            "k-means needs at least k points (n = {n}, k = {k})"
        )));
    }
    let dim = data[0].len();
    if let Some(bad) = data.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    let runs: Vec<_> = (0..config.n_init.max(1))
        .into_par_iter()
        .map(|run| {
            let mut rng = rng::derived(seed, run as u64);
            lloyd(data, k, config, &mut rng)
        })
        .collect();
    let mut best: Option<Clustering> = None;
    for (centers, labels, history, n_iter) in runs {
        let inertia: f64 = data
            .iter()
            .zip(&labels)
            .map(|(x, &l)| squared_distance(x, &centers[l]))
            .sum();
        if best.as_ref().is_none_or(|b| inertia < b.inertia) {
            best = Some(Clustering {
                k,
                centers,
                labels,
                inertia,
                seed,
                n_iter,
                inertia_history: history,
            });
        }
    }
    Ok(best.expect("at least one run"))
}

/// Mean silhouette coefficient. Points alone in their cluster score 0.
pub fn silhouette(data: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    Ok(silhouette_samples(data, labels)?.iter().sum::<f64>() / data.len() as f64)
}

pub fn silhouette_samples(data: &[Vec<f64>], labels: &[usize]) -> Result<Vec<f64>> {
    if data.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            actual: labels.len(),
        });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::InvalidInput(
            "silhouette needs at least two non-empty clusters".into(),
        ));
    }
    Ok(data
        .par_iter()
        .zip(labels)
        .map(|(x, &own)| {
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (y, &l) in data.iter().zip(labels) {
                sums[l] += squared_distance(x, y).sqrt();
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&j| j != own && sizes[j] > 0)
                .map(|j| sums[j] / sizes[j] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteReport {
    /// (k, mean silhouette) for every k tried, ascending.
    pub scores: Vec<(usize, f64)>,
    pub best_k: usize,
}

/// Clusters for every k in `k_range` (clipped to `2..=n-1`) and picks the
/// silhouette argmax; ties go to the smaller k.
pub fn select_k(
    data: &[Vec<f64>],
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
    config: &KMeansConfig,
) -> Result<(SilhouetteReport, Vec<Clustering>)> {
    let n = data.len();
    let lo = (*k_range.start()).max(2);
    let hi = (*k_range.end()).min(n.saturating_sub(1));
    if lo > hi {
        return Err(Error::InvalidInput(format!(
            "no valid k in {k_range:?} for {n} points"
        )));
    }
    let mut scores = Vec::new();
    let mut fits = Vec::new();
    for k in lo..=hi {
        let fit = kmeans(data, k, seed, config)?;
        let s = if fit.labels.iter().any(|&l| l != fit.labels[0]) {
            silhouette(data, &fit.labels)?
        } else {
            0.0
        };
        log::debug!("k = {k}: silhouette {s:.4}, inertia {:.4}", fit.inertia);
        scores.push((k, s));
        fits.push(fit);
    }
    let best_k = scores
        .iter()
        .fold((0, f64::NEG_INFINITY), |best, &(k, s)| if s > best.1 { (k, s) } else { best })
        .0;
    Ok((SilhouetteReport { scores, best_k }, fits))
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    if total == 0.0 {
        return 1.0;
    }
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn duplicated_locations_are_recovered_exactly() {
        let locs = [[0.0, 0.0], [5.0, 5.0], [-3.0, 7.0]];
        let data: Vec<Vec<f64>> = (0..30).map(|i| locs[i % 3].to_vec()).collect();
        let fit = kmeans(&data, 3, 1, &KMeansConfig::default()).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut centers = fit.centers.clone();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected: Vec<Vec<f64>> = locs.iter().map(|l| l.to_vec()).collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(centers, expected);
    }

    #[test]
    fn centroid_is_the_mean() {
        let data = vec![vec![0.0, 2.0], vec![2.0, 4.0], vec![4.0, 0.0]];
        assert_eq!(centroid(&data), [2.0, 2.0]);
    }

    #[test]
    fn too_few_points() {
        assert!(kmeans(&[vec![1.0]], 2, 0, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn silhouette_hand_example() {
        let data = vec![vec![0.0], vec![1.0], vec![11.0], vec![12.0]];
        let labels = [0, 0, 1, 1];
        // a = 1; b is the mean distance to the other pair: (11 + 12) / 2 etc.
        let s = silhouette_samples(&data, &labels).unwrap();
        let expected = [
            (11.5 - 1.0) / 11.5,
            (10.5 - 1.0) / 10.5,
            (10.5 - 1.0) / 10.5,
            (11.5 - 1.0) / 11.5,
        ];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn silhouette_pairs_at_equal_separation() {
        // Within-pair distance 1, every cross-pair distance 10.
        let h = 99.5f64.sqrt();
        let data = vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.5, h, 0.5],
            vec![0.5, h, -0.5],
        ];
        for s in silhouette_samples(&data, &[0, 0, 1, 1]).unwrap() {
            assert!((s - 0.9).abs() < 1e-12, "{s}");
        }
    }

    #[test]
    fn identical_points_score_zero() {
        let data = vec![vec![1.0, 1.0]; 4];
        assert_eq!(silhouette(&data, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(silhouette(&data, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn far_clusters_score_high() {
        let mut data = Vec::new();
        for i in 0..10 {
            data.push(vec![i as f64 * 0.01, 0.0]);
            data.push(vec![100.0 + i as f64 * 0.01, 0.0]);
        }
        let (report, _) = select_k(&data, 2..=5, 3, &KMeansConfig::default()).unwrap();
        assert_eq!(report.best_k, 2);
        assert!(report.scores[0].1 >= 0.9);
    }

    #[test]
    fn ari_known_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!((v - (-0.5)).abs() < 1e-12, "{v}");
    }

    proptest! {
        #[test]
        fn inertia_never_increases(seed in 0u64..200, n in 5usize..40, k in 2usize..5) {
            let mut r = rng::seeded(seed);
            let data: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
            let fit = kmeans(&data, k.min(n), seed, &KMeansConfig { max_iter: 300, n_init: 1 }).unwrap();
            for w in fit.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
            prop_assert!(fit.inertia >= 0.0);
            prop_assert!(fit.labels.iter().all(|&l| l < fit.k));
        }

        #[test]
        fn silhouette_bounded(seed in 0u64..200) {
            let mut r = rng::seeded(seed);
            let data: Vec<Vec<f64>> = (0..12).map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
            let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
            for s in silhouette_samples(&data, &labels).unwrap() {
                prop_assert!((-1.0..=1.0).contains(&s));
            }
        }
    }
}
