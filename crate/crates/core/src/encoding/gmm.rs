//! Diagonal-covariance Gaussian mixture fitted by EM.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EncodeError, KMeansParams, Provenance, REDUCE_CHUNK, kmeans_fit};
use crate::matrix::Matrix;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop when the average log-likelihood improves by less than this.
    pub tol: f64,
    /// Variance floor relative to the mean per-dimension data variance.
    pub variance_floor: f64,
}

impl GmmParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
            variance_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Matrix,
    pub variances: Matrix,
    /// Absolute floor every variance was clamped to.
    pub floor: f64,
    pub seed: u64,
    pub provenance: Provenance,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    /// `log w_k + log N(x | μ_k, σ_k²)` for every component.
    pub fn component_log_densities(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let w = self.weights[k];
            if w <= 0.0 {
                *o = f64::NEG_INFINITY;
                continue;
            }
            let mut s = 0.0;
            for ((xi, mi), vi) in x.iter().zip(self.means.row(k)).zip(self.variances.row(k)) {
                let diff = xi - mi;
                s += LN_2PI + vi.ln() + diff * diff / vi;
            }
            *o = w.ln() - 0.5 * s;
        }
    }

    /// Posterior responsibilities γ_k(x); returns `log p(x)`.
    pub fn responsibilities(&self, x: &[f64], gamma: &mut [f64]) -> f64 {
        self.component_log_densities(x, gamma);
        let max = gamma.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for g in gamma.iter_mut() {
            *g = (*g - max).exp();
            total += *g;
        }
        for g in gamma.iter_mut() {
            *g /= total;
        }
        max + total.ln()
    }
}

/// Average per-point log-likelihood of `data` under `gmm`.
pub fn log_likelihood(gmm: &GmmModel, data: &Matrix) -> f64 {
    let mut gamma = vec![0.0; gmm.k()];
    let total: f64 = data.iter_rows().map(|x| gmm.responsibilities(x, &mut gamma)).sum();
    total / data.rows() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Average log-likelihood at initialisation and after every EM iteration.
    pub loglik_history: Vec<f64>,
}

struct Stats {
    nk: Vec<f64>,
    sx: Vec<f64>,
    sxx: Vec<f64>,
    ll: f64,
}

fn e_step(gmm: &GmmModel, data: &Matrix) -> Stats {
    let (k, d) = (gmm.k(), gmm.dim());
    let idx: Vec<usize> = (0..data.rows().div_ceil(REDUCE_CHUNK)).collect();
    let parts: Vec<Stats> = idx
        .par_iter()
        .map(|&chunk| {
            let mut s = Stats {
                nk: vec![0.0; k],
                sx: vec![0.0; k * d],
                sxx: vec![0.0; k * d],
                ll: 0.0,
            };
            let mut gamma = vec![0.0; k];
            let end = ((chunk + 1) * REDUCE_CHUNK).min(data.rows());
            for i in chunk * REDUCE_CHUNK..end {
                let x = data.row(i);
                s.ll += gmm.responsibilities(x, &mut gamma);
                for (c, &g) in gamma.iter().enumerate() {
                    s.nk[c] += g;
                    // centred on the current mean to limit cancellation
                    for ((j, xj), mj) in x.iter().enumerate().zip(gmm.means.row(c)) {
                        let diff = xj - mj;
                        s.sx[c * d + j] += g * diff;
                        s.sxx[c * d + j] += g * diff * diff;
                    }
                }
            }
            s
        })
        .collect();
    let mut total = Stats {
        nk: vec![0.0; k],
        sx: vec![0.0; k * d],
        sxx: vec![0.0; k * d],
        ll: 0.0,
    };
    for p in parts {
        total.ll += p.ll;
        total.nk.iter_mut().zip(&p.nk).for_each(|(a, b)| *a += b);
        total.sx.iter_mut().zip(&p.sx).for_each(|(a, b)| *a += b);
        total.sxx.iter_mut().zip(&p.sxx).for_each(|(a, b)| *a += b);
    }
    total
}

fn m_step(gmm: &mut GmmModel, s: &Stats, n: usize) {
    let d = gmm.dim();
    for c in 0..gmm.k() {
        let nk = s.nk[c];
        if nk <= f64::MIN_POSITIVE {
            gmm.weights[c] = 0.0;
            continue;
        }
        gmm.weights[c] = nk / n as f64;
        for j in 0..d {
            let shift = s.sx[c * d + j] / nk;
            let var = s.sxx[c * d + j] / nk - shift * shift;
            gmm.means.row_mut(c)[j] += shift;
            gmm.variances.row_mut(c)[j] = var.max(gmm.floor);
        }
    }
    let wsum: f64 = gmm.weights.iter().sum();
    gmm.weights.iter_mut().for_each(|w| *w /= wsum);
}

pub fn gmm_fit(data: &Matrix, params: &GmmParams) -> Result<GmmFit, EncodeError> {
    let (n, d, k) = (data.rows(), data.cols(), params.k);
    if k == 0 {
        return Err(EncodeError::ZeroClusters);
    }
    if n < k {
        return Err(EncodeError::TooFewVectors { n, k });
    }
    if !data.is_finite() {
        return Err(EncodeError::NonFinite);
    }
    if k > 1 && data.iter_rows().all(|r| r == data.row(0)) {
        return Err(EncodeError::NonConvergence(format!(
            "all {n} vectors are identical; cannot separate {k} components"
        )));
    }

    let mut mean = vec![0.0; d];
    for r in data.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut var = vec![0.0; d];
    for r in data.iter_rows() {
        var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n as f64);
    }
    let mean_var = var.iter().sum::<f64>() / d as f64;
    let floor = params.variance_floor * if mean_var > 0.0 { mean_var } else { 1.0 };

    let km = kmeans_fit(
        data,
        &KMeansParams {
            k,
            seed: params.seed,
            max_iter: 100,
            tol: 1e-9,
        },
    )?;
    let mut gmm = GmmModel {
        weights: vec![0.0; k],
        means: km.codebook.centroids.clone(),
        variances: Matrix::zeros(k, d),
        floor,
        seed: params.seed,
        provenance: Provenance::default(),
    };
    let mut counts = vec![0usize; k];
    for (i, &c) in km.assignments.iter().enumerate() {
        counts[c] += 1;
        let x = data.row(i);
        let m = km.codebook.centroids.row(c).to_vec();
        for (j, v) in gmm.variances.row_mut(c).iter_mut().enumerate() {
            *v += (x[j] - m[j]).powi(2);
        }
    }
    for c in 0..k {
        gmm.weights[c] = counts[c] as f64 / n as f64;
        let cnt = counts[c].max(1) as f64;
        for v in gmm.variances.row_mut(c) {
            *v = (*v / cnt).max(floor);
        }
    }

    let mut stats = e_step(&gmm, data);
    let mut history = vec![stats.ll / n as f64];
    for _ in 0..params.max_iter {
        m_step(&mut gmm, &stats, n);
        stats = e_step(&gmm, data);
        let ll = stats.ll / n as f64;
        let gain = ll - history.last().copied().expect("history is never empty");
        history.push(ll);
        if !ll.is_finite() {
            return Err(EncodeError::NonConvergence("log-likelihood is not finite".into()));
        }
        if gain < params.tol {
            break;
        }
    }
    Ok(GmmFit {
        model: gmm,
        loglik_history: history,
    })
}
