//! L1-regularised logistic regression fitted by FISTA with backtracking and
//! adaptive restart.

use serde::{Deserialize, Serialize};

use super::logistic::{sigmoid, LinearObjective};
use super::{LogRegParams, TrainSet};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRegModel {
    /// Training means and standard deviations; columns with zero variance
    /// have scale 0 and weight 0.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Weights on the standardised features.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogRegModel {
    pub fn linear_score(&self, row: &[f64]) -> f64 {
        let mut f = self.bias;
        for j in 0..row.len() {
            if self.weights[j] != 0.0 {
                f += self.weights[j] * (row[j] - self.mean[j]) / self.scale[j];
            }
        }
        f
    }

    pub fn score(&self, row: &[f64]) -> f64 {
        sigmoid(self.linear_score(row))
    }

    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }

    pub(crate) fn validate(&self, d: usize) -> Result<(), String> {
        if self.mean.len() != d || self.scale.len() != d || self.weights.len() != d {
            return Err("logistic regression vectors do not match the column count".into());
        }
        let all = self.mean.iter().chain(&self.scale).chain(&self.weights);
        if all.clone().any(|v| !v.is_finite()) || !self.bias.is_finite() {
            return Err("non-finite logistic regression parameter".into());
        }
        if self.weights.iter().zip(&self.scale).any(|(w, s)| *w != 0.0 && *s <= 0.0) {
            return Err("weight on a zero-variance column".into());
        }
        Ok(())
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

pub(crate) fn fit(ts: &TrainSet<'_>, p: &LogRegParams) -> Result<LogRegModel> {
    let (n, d) = (ts.n, ts.d);
    let wsum: f64 = ts.w.iter().sum();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(ts.row(i)) {
            *m += ts.w[i] * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= wsum);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let c = ts.row(i)[j] - mean[j];
            var[j] += ts.w[i] * c * c;
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .zip(&mean)
        .map(|(v, m)| {
            let s = (v / wsum).sqrt();
            // variance below rounding noise of the mean counts as constant
            if s > 1e-12 * m.abs().max(1e-300) {
                s
            } else {
                0.0
            }
        })
        .collect();
    let active: Vec<usize> = (0..d).filter(|&j| scale[j] > 0.0).collect();
    let da = active.len();
    let mut z = Vec::with_capacity(n * da);
    for i in 0..n {
        let row = ts.row(i);
        z.extend(active.iter().map(|&j| (row[j] - mean[j]) / scale[j]));
    }

    let obj = LinearObjective::new(&z, n, da, &ts.y, &ts.w);
    let lambda = p.l1_strength;
    let penalty = |t: &[f64]| lambda * t[..da].iter().map(|v| v.abs()).sum::<f64>();
    let prox = |v: &[f64], step: f64| -> Vec<f64> {
        let mut out: Vec<f64> = v[..da].iter().map(|&x| soft_threshold(x, step * lambda)).collect();
        out.push(v[da]);
        out
    };

    let mut x = vec![0.0; da + 1];
    let prior = ts.y.iter().zip(&ts.w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    x[da] = (prior / (1.0 - prior)).ln();
    let mut yk = x.clone();
    let mut t = 1.0f64;
    let mut lip = (0.25 * obj.curvature_bound()).max(1e-12);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < p.max_iter {
        iterations += 1;
        let (fy, gy) = obj.value_and_gradient(&yk);
        let mut x_new;
        loop {
            let step = 1.0 / lip;
            let v: Vec<f64> = yk.iter().zip(&gy).map(|(a, g)| a - step * g).collect();
            x_new = prox(&v, step);
            let diff: Vec<f64> = x_new.iter().zip(&yk).map(|(a, b)| a - b).collect();
            let quad = fy
                + diff.iter().zip(&gy).map(|(a, b)| a * b).sum::<f64>()
                + 0.5 * lip * diff.iter().map(|a| a * a).sum::<f64>();
            if obj.value(&x_new) <= quad + 1e-12 * quad.abs() {
                break;
            }
            lip *= 2.0;
        }
        // gradient mapping at yk
        let gmap = x_new.iter().zip(&yk).map(|(a, b)| (lip * (b - a)).abs()).fold(0.0, f64::max);
        if gmap <= p.tol {
            x = x_new;
            converged = true;
            break;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let restart =
            yk.iter().zip(&x_new).zip(&x).map(|((y, xn), xo)| (y - xn) * (xn - xo)).sum::<f64>() > 0.0;
        if restart {
            t = 1.0;
            yk = x_new.clone();
        } else {
            let beta = (t - 1.0) / t_next;
            yk = x_new.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
            t = t_next;
        }
        x = x_new;
    }
    if !converged {
        log::warn!(
            "logistic regression stopped after {iterations} iterations (objective {:.6e})",
            obj.value(&x) + penalty(&x)
        );
    }

    let mut weights = vec![0.0; d];
    for (k, &j) in active.iter().enumerate() {
        weights[j] = x[k];
    }
    Ok(LogRegModel { mean, scale, weights, bias: x[da], iterations, converged })
}
