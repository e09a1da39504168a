//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EncodeError, Provenance, REDUCE_CHUNK};
use crate::matrix::{Matrix, sq_dist};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the largest centroid move is below this distance.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            max_iter: 100,
            tol: 1e-6,
        }
    }
}

/// Learned VLAD quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub centroids: Matrix,
    pub seed: u64,
    /// Sum of squared distances to the assigned centroid at convergence.
    pub inertia: f64,
    pub provenance: Provenance,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Inertia after every assignment step, initial seeding included.
    pub inertia_history: Vec<f64>,
    pub assignments: Vec<usize>,
}

/// Index of the closest centroid; ties go to the lowest index.
///
/// Partial sums that already exceed the best distance are abandoned early,
/// which never changes the result.
pub fn nearest_centroid(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter_rows().enumerate() {
        let mut d = 0.0;
        let mut abandoned = false;
        for (a, b) in x.iter().zip(c) {
            d += (a - b) * (a - b);
            if d > best.1 {
                abandoned = true;
                break;
            }
        }
        if !abandoned && d < best.1 {
            best = (k, d);
        }
    }
    best
}

struct Partial {
    sums: Vec<f64>,
    counts: Vec<usize>,
    inertia: f64,
}

fn assign(data: &Matrix, centroids: &Matrix, labels: &mut [usize], dists: &mut [f64]) -> Partial {
    let (k, d) = (centroids.rows(), centroids.cols());
    let partials: Vec<Partial> = labels
        .par_chunks_mut(REDUCE_CHUNK)
        .zip(dists.par_chunks_mut(REDUCE_CHUNK))
        .enumerate()
        .map(|(chunk, (lab, dis))| {
            let mut p = Partial {
                sums: vec![0.0; k * d],
                counts: vec![0; k],
                inertia: 0.0,
            };
            for (j, (l, dd)) in lab.iter_mut().zip(dis.iter_mut()).enumerate() {
                let row = data.row(chunk * REDUCE_CHUNK + j);
                let (c, dist) = nearest_centroid(row, centroids);
                *l = c;
                *dd = dist;
                p.counts[c] += 1;
                p.inertia += dist;
                for (s, v) in p.sums[c * d..(c + 1) * d].iter_mut().zip(row) {
                    *s += v;
                }
            }
            p
        })
        .collect();
    let mut total = Partial {
        sums: vec![0.0; k * d],
        counts: vec![0; k],
        inertia: 0.0,
    };
    for p in partials {
        for (a, b) in total.sums.iter_mut().zip(&p.sums) {
            *a += b;
        }
        for (a, b) in total.counts.iter_mut().zip(&p.counts) {
            *a += b;
        }
        total.inertia += p.inertia;
    }
    total
}

fn plus_plus_init(data: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = data.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), data.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, slot) in d2.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    data.select_rows(&chosen)
}

pub fn kmeans_fit(data: &Matrix, params: &KMeansParams) -> Result<KMeansFit, EncodeError> {
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
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut centroids = plus_plus_init(data, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut history = Vec::new();

    for _ in 0..params.max_iter {
        let p = assign(data, &centroids, &mut labels, &mut dists);
        history.push(p.inertia);
        let mut next = Matrix::zeros(k, d);
        for c in 0..k {
            if p.counts[c] > 0 {
                let inv = 1.0 / p.counts[c] as f64;
                for (dst, s) in next.row_mut(c).iter_mut().zip(&p.sums[c * d..(c + 1) * d]) {
                    *dst = s * inv;
                }
            }
        }
        // empty clusters take the point farthest from its own centroid
        for c in 0..k {
            if p.counts[c] == 0 {
                let (far, _) = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
                next.row_mut(c).copy_from_slice(data.row(far));
                dists[far] = -1.0;
            }
        }
        let shift = (0..k)
            .map(|c| sq_dist(centroids.row(c), next.row(c)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < params.tol {
            break;
        }
    }
    let p = assign(data, &centroids, &mut labels, &mut dists);
    history.push(p.inertia);
    Ok(KMeansFit {
        codebook: Codebook {
            centroids,
            seed: params.seed,
            inertia: p.inertia,
            provenance: Provenance::default(),
        },
        inertia_history: history,
        assignments: labels,
    })
}
