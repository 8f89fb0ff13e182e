//! Unregularized logistic regression trained by damped Newton iteration of
//! the exact likelihood. No penalty term: the zero-weight stationary point on
//! balanced equal-mean classes must survive exactly.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::FeatureMatrix;
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 200;
const GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// False when the iteration cap was hit (e.g. perfect separation).
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticModel {
    pub fn score(&self, row: &[f64]) -> f64 {
        self.bias + row.iter().zip(self.weights.iter()).map(|(x, w)| x * w).sum::<f64>()
    }

    pub fn scores(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows).map(|i| self.score(x.row(i))).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean negative log-likelihood of the labels under (weights, bias).
fn nll(x: &FeatureMatrix, y: &[bool], w: &[f64], b: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..x.n_rows {
        let z = b + x.row(i).iter().zip(w.iter()).map(|(v, w)| v * w).sum::<f64>();
        // log(1 + e^-|z|) + max(0, ∓z), stable in both tails.
        let loss = if y[i] { softplus(-z) } else { softplus(z) };
        total += loss;
    }
    total / x.n_rows as f64
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Gradient of the mean logistic NLL at (weights, bias); the last entry is
/// the bias derivative. This is the analytic quantity the stationarity
/// property asserts on.
pub fn logistic_nll_gradient(x: &FeatureMatrix, y: &[bool], weights: &[f64], bias: f64) -> Vec<f64> {
    let p = x.n_cols;
    let mut grad = vec![0.0; p + 1];
    for i in 0..x.n_rows {
        let row = x.row(i);
        let z = bias + row.iter().zip(weights.iter()).map(|(v, w)| v * w).sum::<f64>();
        let residual = sigmoid(z) - if y[i] { 1.0 } else { 0.0 };
        for j in 0..p {
            grad[j] += residual * row[j];
        }
        grad[p] += residual;
    }
    let scale = 1.0 / x.n_rows as f64;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    grad
}

/// Maximum-likelihood fit by damped Newton steps with a halving line search,
/// iterated to gradient norm ≤ 1e-6 or the iteration cap (perfect separation
/// returns a finite-weight model flagged unconverged).
pub fn fit_logistic(x: &FeatureMatrix, y: &[bool]) -> Result<LogisticModel> {
    if x.n_rows != y.len() {
        return Err(Error::Domain("labels do not match the feature matrix".into()));
    }
    let n_pos = y.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == y.len() {
        return Err(Error::DegenerateTarget("logistic regression needs both classes".into()));
    }
    let p = x.n_cols;
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut current = nll(x, y, &w, b);

    for iteration in 0..MAX_ITERATIONS {
        let grad = logistic_nll_gradient(x, y, &w, b);
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm <= GRAD_TOL {
            return Ok(LogisticModel { weights: w, bias: b, converged: true, iterations: iteration });
        }

        // Hessian of the mean NLL, with the bias folded in as column p.
        let mut h = DMatrix::<f64>::zeros(p + 1, p + 1);
        for i in 0..x.n_rows {
            let row = x.row(i);
            let z = b + row.iter().zip(w.iter()).map(|(v, w)| v * w).sum::<f64>();
            let s = sigmoid(z);
            let d = s * (1.0 - s);
            for a in 0..p {
                if row[a] == 0.0 {
                    continue;
                }
                for c in a..p {
                    h[(a, c)] += d * row[a] * row[c];
                }
                h[(a, p)] += d * row[a];
            }
            h[(p, p)] += d;
        }
        let scale = 1.0 / x.n_rows as f64;
        for a in 0..=p {
            for c in a..=p {
                let v = h[(a, c)] * scale;
                h[(a, c)] = v;
                h[(c, a)] = v;
            }
        }

        // One-hot blocks make the Hessian rank-deficient; a vanishing jitter
        // keeps the factorization defined without acting as regularization.
        let g = DVector::from_column_slice(&grad);
        let mut jitter = 1e-12;
        let step = loop {
            let mut damped = h.clone();
            for a in 0..=p {
                damped[(a, a)] += jitter;
            }
            if let Some(chol) = Cholesky::new(damped) {
                break chol.solve(&g);
            }
            jitter *= 100.0;
            if jitter > 1.0 {
                break g.clone();
            }
        };

        // Halving line search on the NLL.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let w_try: Vec<f64> = w.iter().zip(step.iter()).map(|(wi, s)| wi - t * s).collect();
            let b_try = b - t * step[p];
            let candidate = nll(x, y, &w_try, b_try);
            if candidate <= current {
                w = w_try;
                b = b_try;
                current = candidate;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok(LogisticModel { weights: w, bias: b, converged: false, iterations: iteration });
        }
    }
    Ok(LogisticModel { weights: w, bias: b, converged: false, iterations: MAX_ITERATIONS })
}
