use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{build_tree, Criterion, Ranked, SampleStats, Tree, TreeConfig};
use super::{derive_seed, ForestParams, TrainSet};
use crate::par;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestModel {
    /// Leaves hold the weighted fraction of malicious bootstrap rows.
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Mean leaf probability over trees.
    pub fn score(&self, row: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict(row)).sum();
        (s / self.trees.len() as f64).clamp(0.0, 1.0)
    }

    /// Per-tree gains normalised to sum 1, then averaged.
    pub fn importance(&self, d: usize) -> Vec<f64> {
        let mut acc = vec![0.0; d];
        for t in &self.trees {
            let mut g = vec![0.0; d];
            t.accumulate_gains(&mut g);
            let total: f64 = g.iter().sum();
            if total > 0.0 {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v / total;
                }
            }
        }
        let n = self.trees.len() as f64;
        acc.iter().map(|v| v / n).collect()
    }

    pub(crate) fn validate(&self, d: usize) -> Result<(), String> {
        if self.trees.is_empty() {
            return Err("forest has no trees".into());
        }
        for t in &self.trees {
            t.validate(d)?;
            if t.value.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err("forest leaf outside [0, 1]".into());
            }
        }
        Ok(())
    }
}

pub(crate) fn fit(ts: &TrainSet<'_>, p: &ForestParams, seed: u64) -> ForestModel {
    let ranked = Ranked::new(ts.x, ts.n, ts.d);
    let pool = ranked.varying_features();
    let cfg = TreeConfig {
        criterion: Criterion::Gini,
        max_depth: p.max_depth,
        min_samples_leaf: p.min_samples_leaf,
        max_features: Some(p.features_per_split.resolve(ts.d)),
    };
    let trees = par::map_range(p.n_trees, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let mut counts = vec![0u32; ts.n];
        for _ in 0..ts.n {
            counts[rng.random_range(0..ts.n)] += 1;
        }
        let w: Vec<f64> = counts.iter().zip(&ts.w).map(|(&c, &w)| c as f64 * w).collect();
        let s: Vec<f64> = w.iter().zip(&ts.y).map(|(w, y)| w * y).collect();
        let samples: Vec<u32> = (0..ts.n as u32).filter(|&i| w[i as usize] > 0.0).collect();
        let st = SampleStats { w: &w, s: &s, h: &[], q: &[] };
        build_tree(&ranked, samples, &pool, &st, &cfg, &mut rng)
    });
    ForestModel { trees }
}

#[cfg(test)]
mod tests {
    use super::super::tests::matrix;
    use super::super::{feature_importance, predict_proba, train, HyperParams, ModelBody};
    use super::*;

    fn data(seed: u64) -> crate::featurize::FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> =
            (0..300).map(|_| (0..6).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r[3] > 0.6)).collect();
        matrix(&rows, &y)
    }

    #[test]
    fn informative_feature_ranks_first() {
        let x = data(1);
        let m = train(&x, &HyperParams::random_forest(50, 4)).unwrap();
        let imp = feature_importance(&m);
        assert_eq!(imp[0].0, "f3");
        assert!((imp.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-9);
        let s = predict_proba(&m, &x).unwrap();
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn unanimous_forest_scores_one() {
        let x = matrix(&[vec![0.0], vec![1.0], vec![2.0]], &[1, 1, 1]);
        let m = train(&x, &HyperParams::random_forest(5, 0)).unwrap();
        assert_eq!(predict_proba(&m, &x).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn tree_order_does_not_matter() {
        let x = data(2);
        let m = train(&x, &HyperParams::random_forest(20, 9)).unwrap();
        let ModelBody::RandomForest(f) = &m.body else { unreachable!() };
        let mut rev = f.clone();
        rev.trees.reverse();
        for i in 0..x.n_rows() {
            let (a, b) = (f.score(x.row(i)), rev.score(x.row(i)));
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn same_seed_same_forest() {
        let x = data(3);
        let p = HyperParams::random_forest(10, 77);
        assert_eq!(train(&x, &p).unwrap(), train(&x, &p).unwrap());
        let q = HyperParams::random_forest(10, 78);
        assert_ne!(train(&x, &p).unwrap(), train(&x, &q).unwrap());
    }
}
