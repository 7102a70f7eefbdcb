//! K-means with k-means++ seeding, best-of-restarts selection and the
//! elbow rule for choosing `K`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 25,
            seed: 42,
            max_iter: 300,
        }
    }
}

/// Outcome of one K-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster id in `1..=K` for every input row, in input order.
    pub assignments: Vec<usize>,
    /// `K x d`; row `q - 1` is the centroid of cluster `q`.
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
    /// Inertia per candidate `K = 1..`, when an elbow search was run.
    pub k_curve: Vec<f64>,
}

impl ClusterResult {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    /// Input-row indices of each cluster, ordered by cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c - 1].push(i);
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `Σ_q Σ_{x ∈ C_q} ‖x - μ_q‖²` for given assignments (`0`-based) and centroids.
pub fn inertia(points: &[Vec<f64>], assign: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assign)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum()
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if d2[pick] == 0.0 {
                pick = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(p, mu);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Lloyd iterations from the given centroids. Returns assignments,
/// centroids and the inertia after every iteration.
fn lloyd(
    points: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let n = points.len();
    let k = centroids.len();
    let dim = points[0].len();
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut trace = Vec::new();
    for _ in 0..max_iter {
        // Repair empty clusters with the point farthest from its centroid.
        loop {
            let mut counts = vec![0usize; k];
            assign.iter().for_each(|&c| counts[c] += 1);
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                break;
            };
            let far = (0..n)
                .filter(|&i| counts[assign[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &centroids[assign[a]])
                        .total_cmp(&sq_dist(&points[b], &centroids[assign[b]]))
                        .then(b.cmp(&a))
                })
                .expect("more points than clusters");
            assign[far] = empty;
            centroids[empty] = points[far].clone();
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assign) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            for s in sums[c].iter_mut() {
                *s /= counts[c] as f64;
            }
        }
        centroids = sums;
        trace.push(inertia(points, &assign, &centroids));
        let next: Vec<usize> = points
            .iter()
            .zip(&assign)
            .map(|(p, &cur)| {
                let c = nearest(p, &centroids);
                // Keep the current cluster on exact ties.
                if sq_dist(p, &centroids[cur]) <= sq_dist(p, &centroids[c]) {
                    cur
                } else {
                    c
                }
            })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    (assign, centroids, trace)
}

/// Best of `cfg.restarts` k-means++ / Lloyd runs on the rows of `features`.
/// Rows are processed in the order of `keys`, so the result does not depend
/// on row order; cluster ids are assigned by sorting centroids.
pub fn kmeans(
    features: &DMatrix<f64>,
    keys: &[String],
    k: usize,
    cfg: &KMeansConfig,
) -> Result<ClusterResult> {
    let n = features.nrows();
    if k == 0 || k > n {
        return Err(Error::EmptyClusterUnrecoverable { k, n });
    }
    if keys.len() != n {
        return Err(Error::InvalidInput(format!("{} keys for {n} feature rows", keys.len())));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite clustering feature".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| keys[a].cmp(&keys[b]).then(a.cmp(&b)));
    let points: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| features.row(i).iter().copied().collect())
        .collect();

    let runs: Vec<(f64, Vec<usize>, Vec<Vec<f64>>)> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let init = seed_plus_plus(&points, k, &mut rng);
            let (assign, centroids, _) = lloyd(&points, init, cfg.max_iter);
            (inertia(&points, &assign, &centroids), assign, centroids)
        })
        .collect();
    let (best_inertia, assign, centroids) = runs
        .into_iter()
        .reduce(|best, cand| if cand.0 < best.0 { cand } else { best })
        .expect("at least one restart");

    let mut rank: Vec<usize> = (0..k).collect();
    rank.sort_by(|&a, &b| {
        centroids[a]
            .iter()
            .zip(&centroids[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut label = vec![0; k];
    for (new, &old) in rank.iter().enumerate() {
        label[old] = new + 1;
    }
    let mut assignments = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignments[row] = label[assign[pos]];
    }
    let dim = features.ncols();
    let centroid_matrix = DMatrix::from_fn(k, dim, |q, c| centroids[rank[q]][c]);
    Ok(ClusterResult {
        assignments,
        centroids: centroid_matrix,
        inertia: best_inertia,
        k_curve: Vec::new(),
    })
}

/// Best-of-restarts inertia for `K = 1..=k_max`.
pub fn inertia_curve(
    features: &DMatrix<f64>,
    keys: &[String],
    k_max: usize,
    cfg: &KMeansConfig,
) -> Result<Vec<f64>> {
    (1..=k_max)
        .map(|k| kmeans(features, keys, k, cfg).map(|r| r.inertia))
        .collect()
}

/// Elbow of an inertia curve indexed by `K = 1..`: the `K` in
/// `2..=K_max - 1` maximising `I_{K-1} - 2 I_K + I_{K+1}` (smallest on ties).
pub fn elbow_select(k_curve: &[f64]) -> Result<usize> {
    if k_curve.len() < 3 {
        return Err(Error::CurveTooShort(k_curve.len()));
    }
    let mut best_k = 2;
    let mut best = f64::NEG_INFINITY;
    for k in 2..k_curve.len() {
        let curv = k_curve[k - 2] - 2.0 * k_curve[k - 1] + k_curve[k];
        if curv > best {
            best = curv;
            best_k = k;
        }
    }
    Ok(best_k)
}

/// Mean of the rows in each cluster, for checking stored centroids.
pub fn cluster_means(features: &DMatrix<f64>, result: &ClusterResult) -> Vec<DVector<f64>> {
    result
        .members()
        .iter()
        .map(|m| {
            let mut acc = DVector::zeros(features.ncols());
            for &i in m {
                acc += features.row(i).transpose();
            }
            acc / m.len() as f64
        })
        .collect()
}
