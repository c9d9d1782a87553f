use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    predict_proba, train, BoostingParams, ClassWeight, ForestParams, HyperParams, LogRegParams, ModelParams,
};
use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;
use crate::metrics::confusion;
use crate::par;

/// Hyper-parameter grid for one model family; cells are the Cartesian
/// product of the lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamGrid {
    Logreg {
        l1_strength: Vec<f64>,
    },
    RandomForest {
        n_trees: Vec<usize>,
        #[serde(default = "unlimited")]
        max_depth: Vec<Option<usize>>,
    },
    GradientBoosting {
        n_estimators: Vec<usize>,
        max_depth: Vec<usize>,
        learning_rate: Vec<f64>,
    },
}

fn unlimited() -> Vec<Option<usize>> {
    vec![None]
}

impl ParamGrid {
    pub fn default_random_forest() -> Self {
        ParamGrid::RandomForest { n_trees: vec![10, 50, 100, 200], max_depth: unlimited() }
    }

    pub fn default_gradient_boosting() -> Self {
        ParamGrid::GradientBoosting {
            n_estimators: vec![50, 100, 200],
            max_depth: vec![3, 5, 7],
            learning_rate: vec![0.01, 0.05, 0.1],
        }
    }

    pub fn default_logreg() -> Self {
        ParamGrid::Logreg { l1_strength: vec![1e-4, 1e-3, 1e-2, 1e-1] }
    }

    /// All cells in grid order, sharing `seed` and `class_weight`.
    pub fn cells(&self, seed: u64, class_weight: ClassWeight) -> Vec<HyperParams> {
        let mk = |model| HyperParams { model, seed, class_weight };
        match self {
            ParamGrid::Logreg { l1_strength } => l1_strength
                .iter()
                .map(|&l| mk(ModelParams::Logreg(LogRegParams { l1_strength: l, ..Default::default() })))
                .collect(),
            ParamGrid::RandomForest { n_trees, max_depth } => n_trees
                .iter()
                .flat_map(|&n| {
                    max_depth.iter().map(move |&d| ForestParams {
                        n_trees: n,
                        max_depth: d,
                        ..Default::default()
                    })
                })
                .map(|p| mk(ModelParams::RandomForest(p)))
                .collect(),
            ParamGrid::GradientBoosting { n_estimators, max_depth, learning_rate } => {
                let mut out = Vec::new();
                for &n in n_estimators {
                    for &d in max_depth {
                        for &lr in learning_rate {
                            out.push(mk(ModelParams::GradientBoosting(BoostingParams {
                                n_estimators: n,
                                max_depth: d,
                                learning_rate: lr,
                                ..Default::default()
                            })));
                        }
                    }
                }
                out
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub params: HyperParams,
    pub mean_f1: f64,
    pub fold_f1: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: HyperParams,
    pub best_f1: f64,
    pub cells: Vec<GridCell>,
}

/// Smaller models sort first: fewer trees, then shallower, then stronger
/// regularisation.
fn size_order(a: &HyperParams, b: &HyperParams) -> Ordering {
    fn key(p: &HyperParams) -> (usize, usize, f64) {
        match &p.model {
            ModelParams::Logreg(l) => (0, 0, -l.l1_strength),
            ModelParams::RandomForest(f) => (f.n_trees, f.max_depth.unwrap_or(usize::MAX), 0.0),
            ModelParams::GradientBoosting(g) => (g.n_estimators, g.max_depth, 0.0),
        }
    }
    let (ka, kb) = (key(a), key(b));
    ka.0.cmp(&kb.0).then(ka.1.cmp(&kb.1)).then(ka.2.total_cmp(&kb.2))
}

/// Stratified fold assignment: each class is shuffled with `seed` and dealt
/// round-robin. Returns the row indices of each fold.
pub fn stratified_folds(x: &FeatureMatrix, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config("need at least 2 folds".into()));
    }
    let (neg, pos) = x.class_counts();
    if pos < k || neg < k {
        return Err(Error::Training(format!(
            "{k}-fold split would leave a fold without {} rows ({pos} positive, {neg} negative); use a smaller k",
            if pos < k { "positive" } else { "negative" }
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    for class in [false, true] {
        let mut idx: Vec<usize> =
            (0..x.n_rows()).filter(|&i| x.labels()[i].is_malicious() == class).collect();
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            folds[j % k].push(i);
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

/// Scores every cell by stratified k-fold mean F1 at threshold 0.5 and
/// returns the best, preferring smaller models on ties.
pub fn grid_search(x: &FeatureMatrix, grid: &ParamGrid, k: usize, seed: u64) -> Result<GridResult> {
    grid_search_weighted(x, grid, k, seed, ClassWeight::None)
}

pub fn grid_search_weighted(
    x: &FeatureMatrix,
    grid: &ParamGrid,
    k: usize,
    seed: u64,
    class_weight: ClassWeight,
) -> Result<GridResult> {
    let cells = grid.cells(seed, class_weight);
    if cells.is_empty() {
        return Err(Error::Config("empty hyper-parameter grid".into()));
    }
    for c in &cells {
        c.validate()?;
    }
    let folds = stratified_folds(x, k, seed)?;
    let splits: Vec<(FeatureMatrix, FeatureMatrix)> = (0..k)
        .map(|f| {
            let train_rows: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            let mut train_rows = train_rows;
            train_rows.sort_unstable();
            (x.select_rows(&train_rows), x.select_rows(&folds[f]))
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    let scores = par::map(&jobs, |&(c, f)| -> Result<f64> {
        let (tr, te) = &splits[f];
        let m = train(tr, &cells[c])?;
        let s = predict_proba(&m, te)?;
        Ok(confusion(te.labels(), &s, 0.5)?.f1())
    });
    let mut it = scores.into_iter();
    let mut out = Vec::with_capacity(cells.len());
    for params in cells {
        let fold_f1 = (0..k).map(|_| it.next().expect("one score per job")).collect::<Result<Vec<f64>>>()?;
        let mean_f1 = fold_f1.iter().sum::<f64>() / k as f64;
        out.push(GridCell { params, mean_f1, fold_f1 });
    }
    let best = out
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            b.mean_f1.total_cmp(&a.mean_f1).then_with(|| size_order(&a.params, &b.params)).then(ia.cmp(ib))
        })
        .map(|(_, c)| c.clone())
        .expect("non-empty grid");
    Ok(GridResult { best: best.params, best_f1: best.mean_f1, cells: out })
}

#[cfg(test)]
mod tests {
    use super::super::tests::matrix;
    use super::*;
    use rand::Rng;

    fn data() -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rows: Vec<Vec<f64>> =
            (0..120).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let y: Vec<u8> = rows.iter().map(|r| u8::from(r[0] > 0.65)).collect();
        matrix(&rows, &y)
    }

    #[test]
    fn cell_counts() {
        assert_eq!(ParamGrid::default_random_forest().cells(0, ClassWeight::None).len(), 4);
        assert_eq!(ParamGrid::default_gradient_boosting().cells(0, ClassWeight::None).len(), 27);
    }

    #[test]
    fn grid_evaluates_every_cell() {
        let x = data();
        let g = ParamGrid::RandomForest { n_trees: vec![2, 4, 6, 8], max_depth: vec![Some(3)] };
        let r = grid_search(&x, &g, 3, 1).unwrap();
        assert_eq!(r.cells.len(), 4);
        assert!(r.cells.iter().all(|c| c.fold_f1.len() == 3));
        let top = r.cells.iter().map(|c| c.mean_f1).fold(f64::MIN, f64::max);
        assert_eq!(r.best_f1, top);
    }

    #[test]
    fn singleton_grid() {
        let x = data();
        let g = ParamGrid::Logreg { l1_strength: vec![0.01] };
        let r = grid_search(&x, &g, 2, 0).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.best, r.cells[0].params);
        assert_eq!(r.best_f1, r.cells[0].mean_f1);
    }

    #[test]
    fn ties_go_to_smaller_models() {
        let a = HyperParams::random_forest(10, 0);
        let b = HyperParams::random_forest(50, 0);
        assert_eq!(size_order(&a, &b), Ordering::Less);
        let c = HyperParams::logreg(0.1);
        let d = HyperParams::logreg(0.01);
        assert_eq!(size_order(&c, &d), Ordering::Less);
        // perfectly separable data: every cell scores 1, so the smallest wins
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let y: Vec<u8> = (0..40).map(|i| u8::from(i >= 20)).collect();
        let g = ParamGrid::RandomForest { n_trees: vec![50, 10, 20], max_depth: vec![None] };
        let r = grid_search(&matrix(&rows, &y), &g, 4, 0).unwrap();
        assert_eq!(r.best, HyperParams::random_forest(10, 0));
    }

    #[test]
    fn too_many_folds_is_an_error() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<u8> = (0..20).map(|i| u8::from(i < 2)).collect();
        let err = stratified_folds(&matrix(&rows, &y), 3, 0).unwrap_err().to_string();
        assert!(err.contains("smaller k"), "{err}");
    }

    #[test]
    fn folds_are_stratified_partition() {
        let x = data();
        let folds = stratified_folds(&x, 5, 3).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..x.n_rows()).collect::<Vec<_>>());
        let (_, pos) = x.class_counts();
        for f in &folds {
            let p = f.iter().filter(|&&i| x.labels()[i].is_malicious()).count();
            assert!(p == pos / 5 || p == pos / 5 + 1);
        }
    }
}
