//! L2-regularised logistic regression with an unregularised bias.
//!
//! Objective: `½‖w‖² + C·Σ log(1 + exp(−ỹ(w·x + b)))`, `ỹ ∈ {−1, +1}`.

use std::collections::VecDeque;

use super::{ClassifyError, Dataset2D, LrSolver, ModelKind, Standardizer, TrainedModel, sigmoid};
use crate::matrix::{Matrix, dot};

const MAX_ITER: usize = 1000;
const GRAD_TOL: f64 = 1e-6;
const LBFGS_MEMORY: usize = 10;

#[derive(Debug, Clone)]
pub struct LrSolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting from the initial point.
    pub objective_history: Vec<f64>,
}

/// `log(1 + exp(-z))` without overflow.
fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Parameters are packed as `[w_0 .. w_{M-1}, b]`.
pub fn lr_objective(x: &Matrix, y: &[f64], c: f64, theta: &[f64]) -> f64 {
    let m = x.cols();
    let (w, b) = (&theta[..m], theta[m]);
    let reg = 0.5 * dot(w, w);
    let loss: f64 = x.iter_rows().zip(y).map(|(r, &yi)| log1p_exp_neg(yi * (dot(w, r) + b))).sum();
    reg + c * loss
}

pub fn lr_gradient(x: &Matrix, y: &[f64], c: f64, theta: &[f64]) -> Vec<f64> {
    let m = x.cols();
    let (w, b) = (&theta[..m], theta[m]);
    let mut g = w.to_vec();
    g.push(0.0);
    for (r, &yi) in x.iter_rows().zip(y) {
        let coef = -c * yi * sigmoid(-yi * (dot(w, r) + b));
        g[..m].iter_mut().zip(r).for_each(|(gj, xj)| *gj += coef * xj);
        g[m] += coef;
    }
    g
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Solves on already-standardised features.
pub fn lr_solve(x: &Matrix, y: &[f64], c: f64, solver: LrSolver) -> LrSolution {
    match solver {
        LrSolver::Lbfgs => lbfgs(x, y, c),
        LrSolver::Liblinear => coordinate_descent(x, y, c),
    }
}

fn lbfgs(x: &Matrix, y: &[f64], c: f64) -> LrSolution {
    let n = x.cols() + 1;
    let mut theta = vec![0.0; n];
    let mut f = lr_objective(x, y, c, &theta);
    let mut g = lr_gradient(x, y, c, &theta);
    let mut history = vec![f];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    while iterations < MAX_ITER && inf_norm(&g) >= GRAD_TOL {
        iterations += 1;
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, yv, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(yv).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, yv, _)) = mem.back() {
            let gamma = dot(s, yv) / dot(yv, yv);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let scale = 1.0 / inf_norm(&g).max(1.0);
            q.iter_mut().for_each(|v| *v *= scale);
        }
        for ((s, yv, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let beta = rho * dot(yv, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - beta) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            mem.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let fc = lr_objective(x, y, c, &cand);
            if fc <= f + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let gc = lr_gradient(x, y, c, &cand);
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if mem.len() == LBFGS_MEMORY {
                mem.pop_front();
            }
            mem.push_back((s, yv, 1.0 / sy));
        }
        let improved = fc < f;
        theta = cand;
        f = fc;
        g = gc;
        history.push(f);
        if !improved {
            break;
        }
    }
    let bias = theta.pop().unwrap_or(0.0);
    LrSolution {
        weights: theta,
        bias,
        iterations,
        objective_history: history,
    }
}

fn coordinate_descent(x: &Matrix, y: &[f64], c: f64) -> LrSolution {
    let (rows, m) = (x.rows(), x.cols());
    let mut theta = vec![0.0; m + 1];
    // margins[i] = ỹ_i (w·x_i + b)
    let mut margins = vec![0.0; rows];
    let mut history = vec![lr_objective(x, y, c, &theta)];
    let mut iterations = 0;
    let column = |j: usize, i: usize| if j == m { 1.0 } else { x.row(i)[j] };

    while iterations < MAX_ITER {
        if inf_norm(&lr_gradient(x, y, c, &theta)) < GRAD_TOL {
            break;
        }
        iterations += 1;
        for j in 0..=m {
            let reg = if j == m { 0.0 } else { 1.0 };
            let mut g = reg * theta[j];
            let mut h = reg;
            for i in 0..rows {
                let xij = column(j, i);
                if xij == 0.0 {
                    continue;
                }
                let s = sigmoid(-margins[i]);
                g -= c * y[i] * s * xij;
                h += c * s * (1.0 - s) * xij * xij;
            }
            if g == 0.0 || h <= 0.0 {
                continue;
            }
            let h = h.max(1e-12);
            let d_full = -g / h;
            let mut step = 1.0;
            for _ in 0..40 {
                let d = step * d_full;
                // Below rounding noise the sum of loss differences is meaningless;
                // the Newton step is then taken as is.
                let negligible = (d * g).abs() < 1e-13;
                let reg_delta = 0.5 * reg * d * (2.0 * theta[j] + d);
                let loss_delta: f64 = (0..rows)
                    .map(|i| log1p_exp_neg(margins[i] + y[i] * d * column(j, i)) - log1p_exp_neg(margins[i]))
                    .sum();
                if negligible || reg_delta + c * loss_delta <= 0.01 * d * g {
                    theta[j] += d;
                    for (i, mi) in margins.iter_mut().enumerate() {
                        *mi += y[i] * d * column(j, i);
                    }
                    break;
                }
                step *= 0.5;
            }
        }
        history.push(lr_objective(x, y, c, &theta));
    }
    let bias = theta.pop().unwrap_or(0.0);
    LrSolution {
        weights: theta,
        bias,
        iterations,
        objective_history: history,
    }
}

pub fn lr_fit(data: &Dataset2D, c: f64, solver: LrSolver, seed: u64) -> Result<TrainedModel, ClassifyError> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(ClassifyError::BadParameter(format!("C must be positive, got {c}")));
    }
    data.check_trainable()?;
    let standardizer = Standardizer::fit(&data.x);
    let z = standardizer.transform(&data.x);
    let sol = lr_solve(&z, &data.signed_labels(), c, solver);
    Ok(TrainedModel {
        params: super::ClassifierParams::Lr { c, solver },
        seed,
        standardizer,
        kind: ModelKind::Lr {
            weights: sol.weights,
            bias: sol.bias,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::predict;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, m: usize) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut data = Vec::with_capacity(n * m);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = sigmoid(dot(&truth, &row) * 2.0);
            y.push(if rng.random::<f64>() < p { 1.0 } else { -1.0 });
            data.extend(row);
        }
        (Matrix::from_vec(n, m, data).unwrap(), y)
    }

    #[test]
    fn separable_one_dimensional() {
        let data = Dataset2D::from_xy(Matrix::from_vec(2, 1, vec![-1.0, 1.0]).unwrap(), vec![0, 1]).unwrap();
        for solver in [LrSolver::Lbfgs, LrSolver::Liblinear] {
            let model = lr_fit(&data, 10.0, solver, 0).unwrap();
            let ModelKind::Lr { weights, .. } = &model.kind else { unreachable!() };
            assert!(weights[0] > 0.0);
            assert_eq!(predict(&model, &data.x).unwrap().labels, vec![0, 1]);
        }
    }

    #[test]
    fn tiny_c_gives_prior() {
        let (x, _) = random_problem(3, 40, 4);
        let y: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let data = Dataset2D::from_xy(x, y).unwrap();
        for solver in [LrSolver::Lbfgs, LrSolver::Liblinear] {
            let model = lr_fit(&data, 1e-8, solver, 0).unwrap();
            let ModelKind::Lr { weights, .. } = &model.kind else { unreachable!() };
            assert!(dot(weights, weights).sqrt() < 1e-3);
            for p in predict(&model, &data.x).unwrap().scores {
                assert!((p - 0.5).abs() < 1e-3, "{p}");
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = random_problem(11, 30, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let theta: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
            let g = lr_gradient(&x, &y, 0.7, &theta);
            for j in 0..6 {
                let h = 1e-5;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd = (lr_objective(&x, &y, 0.7, &tp) - lr_objective(&x, &y, 0.7, &tm)) / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(1e-3);
                assert!(rel < 1e-5, "coord {j}: analytic {} fd {fd}", g[j]);
            }
        }
    }

    #[test]
    fn solvers_reach_same_optimum() {
        for seed in 0..10 {
            let (x, y) = random_problem(seed, 60, 4);
            let c = [0.01, 0.1, 1.0, 10.0][seed as usize % 4];
            let a = lr_solve(&x, &y, c, LrSolver::Lbfgs);
            let b = lr_solve(&x, &y, c, LrSolver::Liblinear);
            let mut ta = a.weights.clone();
            ta.push(a.bias);
            let mut tb = b.weights.clone();
            tb.push(b.bias);
            let fa = lr_objective(&x, &y, c, &ta);
            let fb = lr_objective(&x, &y, c, &tb);
            assert!((fa - fb).abs() < 1e-4, "seed {seed}: {fa} vs {fb}");
            for (u, v) in ta.iter().zip(&tb) {
                assert!((u - v).abs() < 1e-4, "seed {seed}: {ta:?} vs {tb:?}");
            }
            assert!(inf_norm(&lr_gradient(&x, &y, c, &ta)) < 1e-6);
            assert!(inf_norm(&lr_gradient(&x, &y, c, &tb)) < 1e-6);
        }
    }

    #[test]
    fn single_class_and_nan_rejected() {
        let x = Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let d = Dataset2D::from_xy(x, vec![1, 1]).unwrap();
        assert!(matches!(lr_fit(&d, 1.0, LrSolver::Lbfgs, 0), Err(ClassifyError::SingleClass)));
        let x = Matrix::from_vec(2, 1, vec![f64::NAN, 1.0]).unwrap();
        let d = Dataset2D::from_xy(x, vec![0, 1]).unwrap();
        assert!(matches!(lr_fit(&d, 1.0, LrSolver::Lbfgs, 0), Err(ClassifyError::NonFinite)));
    }

    #[test]
    fn affine_rescaling_keeps_labels() {
        let (x, y) = random_problem(5, 50, 3);
        let y: Vec<u8> = y.iter().map(|&v| (v > 0.0) as u8).collect();
        let data = Dataset2D::from_xy(x.clone(), y.clone()).unwrap();
        let mut scaled = x.clone();
        for i in 0..scaled.rows() {
            let r = scaled.row_mut(i);
            r[1] = 7.5 * r[1] - 3.0;
        }
        let data2 = Dataset2D::from_xy(scaled.clone(), y).unwrap();
        let a = lr_fit(&data, 1.0, LrSolver::Lbfgs, 0).unwrap();
        let b = lr_fit(&data2, 1.0, LrSolver::Lbfgs, 0).unwrap();
        assert_eq!(predict(&a, &x).unwrap().labels, predict(&b, &scaled).unwrap().labels);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn quasi_newton_objective_monotone(seed in 0u64..1000, c in 0.01f64..10.0) {
            let (x, y) = random_problem(seed, 40, 3);
            let sol = lr_solve(&x, &y, c, LrSolver::Lbfgs);
            for w in sol.objective_history.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }
    }
}
