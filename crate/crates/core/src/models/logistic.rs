//! Logistic loss and its derivatives, shared by logistic regression and
//! gradient boosting.

use crate::par;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Negative log-likelihood of label `y` in {0,1} at raw score `f`.
pub fn log_loss(f: f64, y: f64) -> f64 {
    softplus(f) - y * f
}

/// d(log_loss)/df.
pub fn log_loss_grad(f: f64, y: f64) -> f64 {
    sigmoid(f) - y
}

/// d²(log_loss)/df².
pub fn log_loss_hess(f: f64) -> f64 {
    let p = sigmoid(f);
    p * (1.0 - p)
}

const CHUNK: usize = 1024;

/// Weighted mean logistic loss of a linear model `f = z·w + b` over a
/// row-major design matrix. Parameters are laid out as `[w..., b]`.
pub struct LinearObjective<'a> {
    z: &'a [f64],
    n: usize,
    d: usize,
    y: &'a [f64],
    /// Sample weights normalised to sum to 1.
    omega: Vec<f64>,
}

impl<'a> LinearObjective<'a> {
    pub fn new(z: &'a [f64], n: usize, d: usize, y: &'a [f64], w: &[f64]) -> Self {
        assert_eq!(z.len(), n * d);
        assert_eq!(y.len(), n);
        assert_eq!(w.len(), n);
        let total: f64 = w.iter().sum();
        let omega = w.iter().map(|v| v / total).collect();
        LinearObjective { z, n, d, y, omega }
    }

    pub fn dim(&self) -> usize {
        self.d + 1
    }

    fn margins(&self, theta: &[f64]) -> Vec<f64> {
        let (w, b) = theta.split_at(self.d);
        let b = b[0];
        let d = self.d;
        let chunks = par::map_range(self.n.div_ceil(CHUNK), |c| {
            (c * CHUNK..((c + 1) * CHUNK).min(self.n))
                .map(|i| {
                    let row = &self.z[i * d..(i + 1) * d];
                    b + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect::<Vec<_>>()
        });
        chunks.concat()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.margins(theta).iter().zip(self.y).zip(&self.omega).map(|((&f, &y), &o)| o * log_loss(f, y)).sum()
    }

    /// Loss and gradient at `theta`.
    pub fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let f = self.margins(theta);
        let d = self.d;
        let parts = par::map_range(self.n.div_ceil(CHUNK), |c| {
            let mut g = vec![0.0; d + 1];
            let mut v = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(self.n) {
                let o = self.omega[i];
                v += o * log_loss(f[i], self.y[i]);
                let r = o * log_loss_grad(f[i], self.y[i]);
                let row = &self.z[i * d..(i + 1) * d];
                for (gj, zj) in g.iter_mut().zip(row) {
                    *gj += r * zj;
                }
                g[d] += r;
            }
            (v, g)
        });
        let mut g = vec![0.0; d + 1];
        let mut v = 0.0;
        for (pv, pg) in parts {
            v += pv;
            for (a, b) in g.iter_mut().zip(pg) {
                *a += b;
            }
        }
        (v, g)
    }

    /// Largest eigenvalue of `sum omega_i [z_i,1][z_i,1]^T` by power
    /// iteration; a quarter of it bounds the gradient's Lipschitz constant.
    pub fn curvature_bound(&self) -> f64 {
        let d = self.d;
        let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
        let mut lambda = 1.0;
        for _ in 0..50 {
            let mut out = vec![0.0; d + 1];
            for i in 0..self.n {
                let row = &self.z[i * d..(i + 1) * d];
                let dot = v[d] + row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
                let s = self.omega[i] * dot;
                for (o, zj) in out.iter_mut().zip(row) {
                    *o += s * zj;
                }
                out[d] += s;
            }
            let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 1.0;
            }
            lambda = norm;
            v = out.into_iter().map(|x| x / norm).collect();
        }
        lambda
    }
}
