use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::logistic::{log_loss_grad, log_loss_hess, sigmoid};
use super::tree::{build_tree, Criterion, Ranked, SampleStats, Tree, TreeConfig};
use super::{BoostingParams, TrainSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostingModel {
    /// Log-odds of the training prior.
    pub init: f64,
    pub learning_rate: f64,
    /// Stages in training order. Leaves hold unshrunk Newton steps.
    pub trees: Vec<Tree>,
}

impl BoostingModel {
    pub fn raw_score(&self, row: &[f64]) -> f64 {
        let mut f = self.init;
        for t in &self.trees {
            f += self.learning_rate * t.predict(row);
        }
        f
    }

    pub fn score(&self, row: &[f64]) -> f64 {
        sigmoid(self.raw_score(row))
    }

    /// Summed gains across stages.
    pub fn importance(&self, d: usize) -> Vec<f64> {
        let mut g = vec![0.0; d];
        for t in &self.trees {
            t.accumulate_gains(&mut g);
        }
        g
    }

    pub(crate) fn validate(&self, d: usize) -> Result<(), String> {
        if !self.init.is_finite() || !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err("invalid boosting init or learning rate".into());
        }
        self.trees.iter().try_for_each(|t| t.validate(d))
    }
}

const PRIOR_CLAMP: f64 = 1e-12;

pub(crate) fn fit(ts: &TrainSet<'_>, p: &BoostingParams) -> BoostingModel {
    let ranked = Ranked::new(ts.x, ts.n, ts.d);
    let pool = ranked.varying_features();
    let wsum: f64 = ts.w.iter().sum();
    let prior = (ts.y.iter().zip(&ts.w).map(|(y, w)| y * w).sum::<f64>() / wsum)
        .clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    let init = (prior / (1.0 - prior)).ln();
    let cfg = TreeConfig {
        criterion: Criterion::Newton,
        max_depth: Some(p.max_depth),
        min_samples_leaf: p.min_samples_leaf,
        max_features: None,
    };
    let samples: Vec<u32> = (0..ts.n as u32).filter(|&i| ts.w[i as usize] > 0.0).collect();
    // all features are examined, so the generator is never drawn from
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut f = vec![init; ts.n];
    let mut trees = Vec::with_capacity(p.n_estimators);
    let (mut s, mut h, mut q) = (vec![0.0; ts.n], vec![0.0; ts.n], vec![0.0; ts.n]);
    for _ in 0..p.n_estimators {
        for i in 0..ts.n {
            let r = -log_loss_grad(f[i], ts.y[i]);
            s[i] = ts.w[i] * r;
            h[i] = ts.w[i] * log_loss_hess(f[i]);
            q[i] = ts.w[i] * r * r;
        }
        let st = SampleStats { w: &ts.w, s: &s, h: &h, q: &q };
        let tree = build_tree(&ranked, samples.clone(), &pool, &st, &cfg, &mut rng);
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += p.learning_rate * tree.predict(ts.row(i));
        }
        trees.push(tree);
    }
    BoostingModel { init, learning_rate: p.learning_rate, trees }
}
