//! Feature codebook: k-means over asset features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sq_dist;

pub const DEFAULT_CODEBOOK_SIZE: usize = 64;
pub const DEFAULT_FEATURE_DIM: usize = 32;
const KMEANS_ITERS: usize = 50;
/// Extra Lloyd rounds allowed after the nominal 50 if assignments still move.
const SETTLE_ITERS: usize = 500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureCodebook {
    pub entries: Vec<Vec<f64>>,
}

impl FeatureCodebook {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries.first().map_or(0, Vec::len)
    }

    pub fn entry(&self, code: usize) -> &[f64] {
        &self.entries[code]
    }

    pub fn quantize(&self, v: &[f64]) -> usize {
        quantize_feature(v, self)
    }
}

/// Index of the nearest entry; ties go to the lowest index.
pub fn quantize_feature(v: &[f64], z: &FeatureCodebook) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, e) in z.entries.iter().enumerate() {
        let d = sq_dist(v, e);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Sum of squared distances from each feature to its nearest entry.
pub fn quantization_error(features: &[Vec<f64>], z: &FeatureCodebook) -> f64 {
    features
        .iter()
        .map(|f| sq_dist(f, z.entry(quantize_feature(f, z))))
        .sum()
}

fn assign(features: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    let z = FeatureCodebook {
        entries: centroids.to_vec(),
    };
    features.iter().map(|f| quantize_feature(f, &z)).collect()
}

fn means(features: &[Vec<f64>], labels: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (f, &l) in features.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(f) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    (sums, counts)
}

fn kmeans_pp(features: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![features[rng.random_range(0..features.len())].clone()];
    let mut d2: Vec<f64> = features.iter().map(|f| sq_dist(f, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..features.len())
        };
        let c = features[pick].clone();
        for (d, f) in d2.iter_mut().zip(features) {
            *d = d.min(sq_dist(f, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Moves each empty centroid onto the point farthest from its own
/// centroid. Returns whether anything changed.
fn reseed_empty(features: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>], counts: &mut [usize]) -> bool {
    let mut changed = false;
    for k in 0..centroids.len() {
        if counts[k] > 0 {
            continue;
        }
        let far = (0..features.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(&features[a], &centroids[labels[a]])
                    .total_cmp(&sq_dist(&features[b], &centroids[labels[b]]))
                    .then(b.cmp(&a))
            });
        if let Some(i) = far {
            counts[labels[i]] -= 1;
            labels[i] = k;
            counts[k] = 1;
            centroids[k] = features[i].clone();
            changed = true;
        }
    }
    changed
}

/// k-means++ seeding followed by Lloyd iterations. Every returned entry is
/// the mean of the inputs that quantize to it, and no entry is unused.
pub fn fit_codebook(features: &[Vec<f64>], k: usize, seed: u64) -> Result<FeatureCodebook> {
    if k == 0 {
        return Err(Error::InvalidInput("codebook size must be positive".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = features.iter().collect();
    distinct.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::InsufficientData {
            needed: k,
            got: distinct.len(),
        });
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim || f.iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidInput("features must be finite and share one dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(features, k, &mut rng);
    let mut labels = assign(features, &centroids);
    for _ in 0..KMEANS_ITERS + SETTLE_ITERS {
        let (mut next, mut counts) = means(features, &labels, k, dim);
        for (c, (n, &cnt)) in centroids.iter().zip(next.iter_mut().zip(&counts)) {
            if cnt == 0 {
                *n = c.clone();
            }
        }
        if reseed_empty(features, &mut labels, &mut next, &mut counts) {
            let (m, _) = means(features, &labels, k, dim);
            next = m;
        }
        centroids = next;
        let new_labels = assign(features, &centroids);
        let used = {
            let mut u = vec![false; k];
            new_labels.iter().for_each(|&l| u[l] = true);
            u.iter().all(|&x| x)
        };
        if new_labels == labels && used {
            break;
        }
        labels = new_labels;
    }
    Ok(FeatureCodebook { entries: centroids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_features(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn single_code_is_the_mean() {
        let f = random_features(50, 4, 1);
        let z = fit_codebook(&f, 1, 0).unwrap();
        for d in 0..4 {
            let mean = f.iter().map(|v| v[d]).sum::<f64>() / 50.0;
            assert!((z.entries[0][d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_inputs_are_recovered() {
        let f: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..6).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let z = fit_codebook(&f, 6, 3).unwrap();
        let mut got = z.entries.clone();
        got.sort_by_key(|v| v.iter().position(|&x| x == 1.0));
        assert_eq!(got, f);
    }

    #[test]
    fn too_few_vectors() {
        let f = random_features(3, 4, 2);
        assert!(matches!(
            fit_codebook(&f, 4, 0),
            Err(Error::InsufficientData { needed: 4, got: 3 })
        ));
        let dup = vec![vec![1.0, 0.0]; 10];
        assert!(fit_codebook(&dup, 2, 0).is_err());
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let z = FeatureCodebook {
            entries: vec![vec![5.0, 5.0], vec![1.0, 0.0], vec![9.0, 9.0], vec![0.0, 0.0], vec![-1.0, 0.0]],
        };
        assert_eq!(quantize_feature(&[0.0, 0.0], &z), 3);
        assert_eq!(quantize_feature(&[0.0, 0.5], &z), 3);
        let z = FeatureCodebook {
            entries: vec![vec![9.0], vec![1.0], vec![9.0], vec![9.0], vec![-1.0]],
        };
        assert_eq!(quantize_feature(&[0.0], &z), 1);
        assert_eq!(quantize_feature(&[1.0], &z), 1);
    }

    #[test]
    fn quantize_matches_linear_scan() {
        let z = FeatureCodebook {
            entries: random_features(64, 8, 5),
        };
        for q in random_features(200, 8, 6) {
            let oracle = (0..64)
                .min_by(|&a, &b| sq_dist(&q, &z.entries[a]).total_cmp(&sq_dist(&q, &z.entries[b])))
                .unwrap();
            assert_eq!(quantize_feature(&q, &z), oracle);
        }
    }

    #[test]
    fn centroids_are_cluster_means_and_all_used() {
        let f = random_features(400, 8, 7);
        let k = 32;
        let z = fit_codebook(&f, k, 11).unwrap();
        let labels: Vec<usize> = f.iter().map(|v| z.quantize(v)).collect();
        let (m, counts) = means(&f, &labels, k, 8);
        assert!(counts.iter().all(|&c| c > 0));
        for (a, b) in m.iter().zip(&z.entries) {
            assert!(sq_dist(a, b) < 1e-18);
        }
    }

    /// Plain Lloyd from uniformly sampled starts, best of ten.
    fn restart_oracle(f: &[Vec<f64>], k: usize) -> f64 {
        (0..10u64)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
                let mut idx: Vec<usize> = (0..f.len()).collect();
                for i in 0..k {
                    let j = rng.random_range(i..idx.len());
                    idx.swap(i, j);
                }
                let mut c: Vec<Vec<f64>> = idx[..k].iter().map(|&i| f[i].clone()).collect();
                for _ in 0..100 {
                    let l = assign(f, &c);
                    let (m, counts) = means(f, &l, k, f[0].len());
                    for j in 0..k {
                        if counts[j] > 0 {
                            c[j] = m[j].clone();
                        }
                    }
                }
                quantization_error(f, &FeatureCodebook { entries: c })
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn error_close_to_restart_oracle() {
        let f = random_features(300, 4, 9);
        let z = fit_codebook(&f, 16, 0).unwrap();
        let ours = quantization_error(&f, &z);
        let best = restart_oracle(&f, 16);
        assert!(ours <= best * 1.05, "ours {ours} vs best {best}");
    }
}
