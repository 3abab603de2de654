//! Pooled logistic regression by iteratively reweighted least squares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, max_abs, SquareMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    /// Max-norm of the log-likelihood gradient divided by the row count.
    pub gradient_norm: f64,
    /// Log-likelihood after each iteration, starting from `beta = 0`.
    pub trace: Vec<f64>,
}

impl LogisticFit {
    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(dot(&self.beta, row))
    }
}

#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn loglik(x: &[f64], k: usize, y: &[f64], beta: &[f64]) -> f64 {
    x.chunks_exact(k)
        .zip(y)
        .map(|(row, &yi)| {
            let eta = dot(beta, row);
            yi * eta - softplus(eta)
        })
        .sum()
}

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_TOL: f64 = 1e-10;

/// Maximum likelihood fit of `P(y = 1 | x) = sigmoid(beta' x)` for
/// row-major `x` with `k` columns.
pub fn fit_logistic(x: &[f64], k: usize, y: &[f64]) -> Result<LogisticFit> {
    let n = y.len();
    assert_eq!(x.len(), n * k, "design shape");
    if n == 0 {
        return Err(Error::RankDeficient("pooled logistic regression (no rows)"));
    }
    let mut beta = vec![0.0; k];
    let mut ll = loglik(x, k, y, &beta);
    let mut trace = vec![ll];
    for iterations in 0..=IRLS_MAX_ITER {
        let mut grad = vec![0.0; k];
        let mut info = SquareMatrix::zeros(k);
        for (row, &yi) in x.chunks_exact(k).zip(y) {
            let p = sigmoid(dot(&beta, row));
            let r = yi - p;
            for (g, xv) in grad.iter_mut().zip(row) {
                *g += r * xv;
            }
            info.add_outer(row, p * (1.0 - p));
        }
        let gradient_norm = max_abs(&grad) / n as f64;
        if gradient_norm < IRLS_TOL {
            return Ok(LogisticFit {
                beta,
                loglik: ll,
                iterations,
                gradient_norm,
                trace,
            });
        }
        if iterations == IRLS_MAX_ITER {
            break;
        }
        let step = info.cholesky_solve(&grad).ok_or(Error::IrlsDivergence(iterations))?;
        let mut lambda = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + lambda * s).collect();
            let cl = loglik(x, k, y, &cand);
            let accept = cl >= ll - 1e-12 * ll.abs();
            if accept || lambda < 1e-10 {
                if accept {
                    beta = cand;
                    ll = cl;
                }
                break;
            }
            lambda *= 0.5;
        }
        trace.push(ll);
        if !beta.iter().all(|b| b.is_finite()) || max_abs(&beta) > 20.0 {
            return Err(Error::IrlsDivergence(iterations + 1));
        }
    }
    Err(Error::IrlsDivergence(IRLS_MAX_ITER))
}
