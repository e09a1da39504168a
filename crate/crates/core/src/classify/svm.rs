//! Hinge-loss SVM trained by dual coordinate descent.
//!
//! The bias is folded in as a constant feature, so it carries the same `½b²`
//! penalty as the weights. The `rbf` kernel is approximated by random Fourier
//! features followed by the same linear solver.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ClassifierParams, ClassifyError, Dataset2D, Kernel, ModelKind, Standardizer, TrainedModel};
use crate::matrix::{Matrix, dot};

const MAX_EPOCHS: usize = 1000;
const GAP_TOL: f64 = 1e-6;
pub const RFF_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureMap {
    Identity,
    /// `z_j(x) = √(2/D)·cos(ω_j·x + φ_j)`, `ω ~ N(0, 2γ·I)`, `φ ~ U[0, 2π)`.
    /// The draws are regenerated from `seed` whenever the map is applied.
    RandomFourier {
        seed: u64,
        gamma: f64,
        dim: usize,
        input_dim: usize,
    },
}

impl FeatureMap {
    fn draws(seed: u64, gamma: f64, dim: usize, input_dim: usize) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (2.0 * gamma).sqrt()).expect("finite bandwidth");
        let omega: Vec<f64> = (0..dim * input_dim).map(|_| normal.sample(&mut rng)).collect();
        let phase = (0..dim).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        (Matrix::from_vec(dim, input_dim, omega).expect("sized"), phase)
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            FeatureMap::Identity => input_dim,
            FeatureMap::RandomFourier { dim, .. } => *dim,
        }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        match *self {
            FeatureMap::Identity => x.clone(),
            FeatureMap::RandomFourier { seed, gamma, dim, input_dim } => {
                let (omega, phase) = Self::draws(seed, gamma, dim, input_dim);
                let scale = (2.0 / dim as f64).sqrt();
                let mut out = Matrix::zeros(x.rows(), dim);
                for (i, r) in x.iter_rows().enumerate() {
                    for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                        *o = scale * (dot(omega.row(j), r) + phase[j]).cos();
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmOptions {
    pub rff_dim: usize,
    /// Overrides the default `1 / (M·var(X))` bandwidth.
    pub gamma: Option<f64>,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self {
            rff_dim: RFF_DIM,
            gamma: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SvmSolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub epochs: usize,
    pub gap: f64,
}

/// `½(‖w‖² + b²) + C·Σ max(0, 1 − ỹ(w·x + b))`, parameters packed `[w.., b]`.
pub fn hinge_objective(x: &Matrix, y: &[f64], c: f64, theta: &[f64]) -> f64 {
    let m = x.cols();
    let (w, b) = (&theta[..m], theta[m]);
    let loss: f64 = x
        .iter_rows()
        .zip(y)
        .map(|(r, &yi)| (1.0 - yi * (dot(w, r) + b)).max(0.0))
        .sum();
    0.5 * dot(theta, theta) + c * loss
}

/// Gradient of [`hinge_objective`] away from the kinks.
pub fn hinge_gradient(x: &Matrix, y: &[f64], c: f64, theta: &[f64]) -> Vec<f64> {
    let m = x.cols();
    let (w, b) = (&theta[..m], theta[m]);
    let mut g = theta.to_vec();
    for (r, &yi) in x.iter_rows().zip(y) {
        if 1.0 - yi * (dot(w, r) + b) > 0.0 {
            g[..m].iter_mut().zip(r).for_each(|(gj, xj)| *gj -= c * yi * xj);
            g[m] -= c * yi;
        }
    }
    g
}

/// Dual coordinate descent in fixed cyclic order. Stops when the duality gap
/// falls below `1e-6·max(1, primal)` or after 1000 epochs.
pub fn svm_solve(x: &Matrix, y: &[f64], c: f64) -> SvmSolution {
    let (n, m) = (x.rows(), x.cols());
    let mut theta = vec![0.0; m + 1];
    let mut alpha = vec![0.0; n];
    let qii: Vec<f64> = x.iter_rows().map(|r| dot(r, r) + 1.0).collect();
    let margin = |theta: &[f64], i: usize| dot(&theta[..m], x.row(i)) + theta[m];
    let mut epochs = 0;
    let mut gap = f64::INFINITY;

    while epochs < MAX_EPOCHS {
        epochs += 1;
        for i in 0..n {
            let g = y[i] * margin(&theta, i) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            if pg == 0.0 {
                continue;
            }
            let new = (alpha[i] - g / qii[i]).clamp(0.0, c);
            let delta = (new - alpha[i]) * y[i];
            alpha[i] = new;
            theta[..m].iter_mut().zip(x.row(i)).for_each(|(t, xi)| *t += delta * xi);
            theta[m] += delta;
        }
        let primal = hinge_objective(x, y, c, &theta);
        let dual = alpha.iter().sum::<f64>() - 0.5 * dot(&theta, &theta);
        gap = primal - dual;
        if gap <= GAP_TOL * primal.abs().max(1.0) {
            break;
        }
    }
    let bias = theta.pop().unwrap_or(0.0);
    SvmSolution {
        weights: theta,
        bias,
        epochs,
        gap,
    }
}

pub fn svm_fit(data: &Dataset2D, c: f64, kernel: Kernel, seed: u64) -> Result<TrainedModel, ClassifyError> {
    svm_fit_with(data, c, kernel, seed, SvmOptions::default())
}

pub fn svm_fit_with(
    data: &Dataset2D,
    c: f64,
    kernel: Kernel,
    seed: u64,
    opts: SvmOptions,
) -> Result<TrainedModel, ClassifyError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(ClassifyError::BadParameter(format!("C must be positive, got {c}")));
    }
    data.check_trainable()?;
    let standardizer = Standardizer::fit(&data.x);
    let z = standardizer.transform(&data.x);
    let map = match kernel {
        Kernel::Linear => FeatureMap::Identity,
        Kernel::Rbf => {
            let m = z.cols();
            let gamma = match opts.gamma {
                Some(g) => g,
                None => {
                    let vals = z.as_slice();
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                    if var > 0.0 { 1.0 / (m as f64 * var) } else { 1.0 / m.max(1) as f64 }
                }
            };
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(ClassifyError::BadParameter(format!("bandwidth must be positive, got {gamma}")));
            }
            FeatureMap::RandomFourier {
                seed,
                gamma,
                dim: opts.rff_dim,
                input_dim: m,
            }
        }
    };
    let mapped = map.transform(&z);
    let sol = svm_solve(&mapped, &data.signed_labels(), c);
    Ok(TrainedModel {
        params: ClassifierParams::Svc { c, kernel },
        seed,
        standardizer,
        kind: ModelKind::Svc {
            map,
            weights: sol.weights,
            bias: sol.bias,
        },
    })
}
