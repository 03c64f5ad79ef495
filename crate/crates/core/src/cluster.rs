//! Segment clustering: k-means (k-means++ seeding, Lloyd iterations) and a
//! diagonal-covariance Gaussian mixture fitted by EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GMM_VARIANCE_FLOOR: f64 = 1e-6;
pub const GMM_MIN_WEIGHT: f64 = 1e-12;

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = squared_distance(row, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn check_rows<R: AsRef<[f64]>>(rows: &[R], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidParams("cluster count must be at least 1".into()));
    }
    if rows.len() < k {
        return Err(Error::TooFewRows { rows: rows.len(), needed: k });
    }
    let dim = rows[0].as_ref().len();
    for r in rows {
        if r.as_ref().len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: r.as_ref().len(),
            });
        }
        if r.as_ref().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cluster input contains NaN or infinity".into()));
        }
    }
    Ok(dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 15,
            max_iter: 300,
            tol: 1e-4,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia of the k-means++ seeding, before any Lloyd update.
    pub initial_inertia: f64,
    /// Inertia after every assignment step, seeding first.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn kmeans_plus_plus<R: AsRef<[f64]>>(rows: &[R], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(rows[rng.random_range(0..n)].as_ref().to_vec());
    let mut d2: Vec<f64> = rows.iter().map(|r| squared_distance(r.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = rows[pick].as_ref().to_vec();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(squared_distance(r.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign_all<R: AsRef<[f64]> + Sync>(rows: &[R], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    rows.par_iter().map(|r| nearest(r.as_ref(), centroids)).unzip()
}

pub fn fit_kmeans<R: AsRef<[f64]> + Sync>(rows: &[R], cfg: &KMeansConfig) -> Result<KMeansFit> {
    let dim = check_rows(rows, cfg.k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = kmeans_plus_plus(rows, cfg.k, &mut rng);
    let (mut labels, mut dists) = assign_all(rows, &centroids);
    // sequential sum keeps the reduction order fixed
    let initial_inertia: f64 = dists.iter().sum();
    let mut history = vec![initial_inertia];
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(r.as_ref()) {
                *s += v;
            }
        }
        let mut new_centroids: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &c), old)| {
                if c == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|v| v / c as f64).collect()
                }
            })
            .collect();
        // empty clusters take the points currently worst served by their centroid
        let mut taken = vec![false; rows.len()];
        for k in (0..cfg.k).filter(|&k| counts[k] == 0) {
            let far = (0..rows.len())
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                taken[i] = true;
                new_centroids[k] = rows[i].as_ref().to_vec();
            }
        }
        let shift = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = new_centroids;
        (labels, dists) = assign_all(rows, &centroids);
        history.push(dists.iter().sum());
        if shift < cfg.tol {
            break;
        }
    }
    Ok(KMeansFit {
        centroids,
        labels,
        inertia: *history.last().unwrap(),
        initial_inertia,
        inertia_history: history,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    pub k: usize,
    pub em_iters: usize,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            k: 15,
            em_iters: 50,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGmm {
    #[serde(with = "crate::persist::block")]
    pub weights: Vec<f64>,
    #[serde(with = "crate::persist::matrix")]
    pub means: Vec<Vec<f64>>,
    #[serde(with = "crate::persist::matrix")]
    pub variances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: DiagonalGmm,
    /// Total log-likelihood under the parameters entering each EM iteration,
    /// plus the final parameters.
    pub log_likelihood: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl DiagonalGmm {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// `log(w_k) + log N(x | mu_k, diag(var_k))` for every component.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(w, (mu, var))| {
                let mut s = w.ln();
                for ((xi, m), v) in x.iter().zip(mu).zip(var) {
                    s -= 0.5 * (ln2pi + v.ln() + (xi - m) * (xi - m) / v);
                }
                s
            })
            .collect()
    }

    pub fn log_likelihood<R: AsRef<[f64]> + Sync>(&self, rows: &[R]) -> f64 {
        let per_row: Vec<f64> = rows.par_iter().map(|r| log_sum_exp(&self.log_joint(r.as_ref()))).collect();
        per_row.iter().sum()
    }

    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let lj = self.log_joint(x);
        let norm = log_sum_exp(&lj);
        lj.iter().map(|l| (l - norm).exp()).collect()
    }
}

pub fn fit_gmm<R: AsRef<[f64]> + Sync>(rows: &[R], cfg: &GmmConfig) -> Result<GmmFit> {
    let dim = check_rows(rows, cfg.k)?;
    let km = fit_kmeans(
        rows,
        &KMeansConfig {
            k: cfg.k,
            seed: cfg.seed,
            ..KMeansConfig::default()
        },
    )?;
    let n = rows.len() as f64;
    let mut counts = vec![0.0; cfg.k];
    let mut variances = vec![vec![0.0; dim]; cfg.k];
    for (r, &l) in rows.iter().zip(&km.labels) {
        counts[l] += 1.0;
        for ((v, x), m) in variances[l].iter_mut().zip(r.as_ref()).zip(&km.centroids[l]) {
            *v += (x - m) * (x - m);
        }
    }
    for (var, c) in variances.iter_mut().zip(&counts) {
        for v in var.iter_mut() {
            *v = if *c > 0.0 { *v / c } else { 1.0 }.max(GMM_VARIANCE_FLOOR);
        }
    }
    let mut model = DiagonalGmm {
        weights: counts.iter().map(|c| c / n).collect(),
        means: km.centroids,
        variances,
    };
    for (k, w) in model.weights.iter().enumerate() {
        if *w < GMM_MIN_WEIGHT {
            return Err(Error::DegenerateComponent { component: k, weight: *w });
        }
    }

    let mut history = Vec::with_capacity(cfg.em_iters + 1);
    for _ in 0..cfg.em_iters {
        // E step
        let resp: Vec<(Vec<f64>, f64)> = rows
            .par_iter()
            .map(|r| {
                let lj = model.log_joint(r.as_ref());
                let norm = log_sum_exp(&lj);
                (lj.iter().map(|l| (l - norm).exp()).collect(), norm)
            })
            .collect();
        history.push(resp.iter().map(|(_, ll)| ll).sum());

        // M step
        let mut nk = vec![0.0; cfg.k];
        let mut means = vec![vec![0.0; dim]; cfg.k];
        for ((g, _), r) in resp.iter().zip(rows) {
            for k in 0..cfg.k {
                nk[k] += g[k];
                for (m, x) in means[k].iter_mut().zip(r.as_ref()) {
                    *m += g[k] * x;
                }
            }
        }
        for (k, w) in nk.iter().enumerate() {
            if *w / n < GMM_MIN_WEIGHT {
                return Err(Error::DegenerateComponent {
                    component: k,
                    weight: w / n,
                });
            }
        }
        for (m, w) in means.iter_mut().zip(&nk) {
            m.iter_mut().for_each(|v| *v /= w);
        }
        let mut vars = vec![vec![0.0; dim]; cfg.k];
        for ((g, _), r) in resp.iter().zip(rows) {
            for k in 0..cfg.k {
                for ((v, x), m) in vars[k].iter_mut().zip(r.as_ref()).zip(&means[k]) {
                    *v += g[k] * (x - m) * (x - m);
                }
            }
        }
        for (var, w) in vars.iter_mut().zip(&nk) {
            var.iter_mut().for_each(|v| *v = (*v / w).max(GMM_VARIANCE_FLOOR));
        }
        model = DiagonalGmm {
            weights: nk.iter().map(|w| w / n).collect(),
            means,
            variances: vars,
        };
    }
    history.push(model.log_likelihood(rows));
    Ok(GmmFit {
        model,
        log_likelihood: history,
    })
}

/// A fitted segment clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClusterModel {
    Kmeans {
        #[serde(with = "crate::persist::matrix")]
        centroids: Vec<Vec<f64>>,
    },
    Gmm(DiagonalGmm),
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        match self {
            ClusterModel::Kmeans { centroids } => centroids.len(),
            ClusterModel::Gmm(g) => g.k(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ClusterModel::Kmeans { centroids } => centroids.first().map_or(0, Vec::len),
            ClusterModel::Gmm(g) => g.dim(),
        }
    }

    pub fn assign_one(&self, row: &[f64]) -> Result<usize> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: row.len(),
            });
        }
        Ok(match self {
            ClusterModel::Kmeans { centroids } => nearest(row, centroids).0,
            ClusterModel::Gmm(g) => {
                let lj = g.log_joint(row);
                let mut best = 0;
                for (k, v) in lj.iter().enumerate() {
                    if *v > lj[best] {
                        best = k;
                    }
                }
                best
            }
        })
    }

    /// Cluster index per row: nearest centroid, or highest responsibility.
    pub fn assign<R: AsRef<[f64]> + Sync>(&self, rows: &[R]) -> Result<Vec<usize>> {
        rows.par_iter().map(|r| self.assign_one(r.as_ref())).collect()
    }
}
