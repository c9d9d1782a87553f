//! CART trees shared by the forest and the booster.
//!
//! Features are pre-ranked once per training run ([`Ranked`]); split search
//! then works on integer ranks, so every threshold is a value observed in
//! the training data and rows go left when `x <= threshold`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::par;

/// Flat pre-order tree. `feature[i] < 0` marks a leaf; children always
/// have larger indices than their parent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
    /// Weighted impurity decrease of each split (0 for leaves).
    pub gain: Vec<f64>,
}

impl Tree {
    pub fn len(&self) -> usize {
        self.feature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature.is_empty()
    }

    fn push_leaf(&mut self) -> usize {
        self.feature.push(-1);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(0.0);
        self.gain.push(0.0);
        self.feature.len() - 1
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            let f = self.feature[i];
            if f < 0 {
                return i;
            }
            i = if row[f as usize] <= self.threshold[i] { self.left[i] } else { self.right[i] } as usize;
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.value[self.leaf_index(row)]
    }

    /// Number of comparisons made on the way to the leaf.
    pub fn path_length(&self, row: &[f64]) -> usize {
        let mut i = 0;
        let mut steps = 0;
        while self.feature[i] >= 0 {
            let f = self.feature[i] as usize;
            i = if row[f] <= self.threshold[i] { self.left[i] } else { self.right[i] } as usize;
            steps += 1;
        }
        steps
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            if t.feature[i] < 0 {
                0
            } else {
                1 + walk(t, t.left[i] as usize).max(walk(t, t.right[i] as usize))
            }
        }
        if self.is_empty() {
            0
        } else {
            walk(self, 0)
        }
    }

    /// Adds each split's gain to `out[feature]`.
    pub fn accumulate_gains(&self, out: &mut [f64]) {
        for (i, &f) in self.feature.iter().enumerate() {
            if f >= 0 {
                out[f as usize] += self.gain[i];
            }
        }
    }

    /// Structural checks for deserialized trees.
    pub(crate) fn validate(&self, n_features: usize) -> Result<(), String> {
        let n = self.feature.len();
        if n == 0 {
            return Err("empty tree".into());
        }
        if [self.threshold.len(), self.left.len(), self.right.len(), self.value.len(), self.gain.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err("tree arrays differ in length".into());
        }
        for i in 0..n {
            if !self.value[i].is_finite() || !self.threshold[i].is_finite() {
                return Err(format!("node {i} has a non-finite value"));
            }
            let f = self.feature[i];
            if f >= 0 {
                let (l, r) = (self.left[i] as usize, self.right[i] as usize);
                if f as usize >= n_features || l <= i || r <= i || l >= n || r >= n {
                    return Err(format!("node {i} is malformed"));
                }
            }
        }
        Ok(())
    }
}

/// Column-major feature ranks with the sorted distinct values per feature.
pub(crate) struct Ranked {
    n: usize,
    ranks: Vec<u32>,
    uniques: Vec<Vec<f64>>,
}

impl Ranked {
    pub fn new(x: &[f64], n: usize, d: usize) -> Self {
        let cols = par::map_range(d, |f| {
            let mut vals: Vec<f64> = (0..n).map(|i| x[i * d + f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            let ranks: Vec<u32> = (0..n)
                .map(|i| {
                    let v = x[i * d + f];
                    vals.binary_search_by(|u| u.total_cmp(&v)).expect("value present") as u32
                })
                .collect();
            (ranks, vals)
        });
        let mut ranks = Vec::with_capacity(n * d);
        let mut uniques = Vec::with_capacity(d);
        for (r, u) in cols {
            ranks.extend_from_slice(&r);
            uniques.push(u);
        }
        Ranked { n, ranks, uniques }
    }

    fn col(&self, f: usize) -> &[u32] {
        &self.ranks[f * self.n..(f + 1) * self.n]
    }

    /// Features with more than one distinct value.
    pub fn varying_features(&self) -> Vec<usize> {
        (0..self.uniques.len()).filter(|&f| self.uniques[f].len() > 1).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Criterion {
    /// Gini impurity; `s` holds w*y; leaves predict S/W.
    Gini,
    /// Squared error on residuals; `s` holds w*r, `h` holds w*p(1-p);
    /// leaves take a Newton step S/H.
    Newton,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct TreeConfig {
    pub criterion: Criterion,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined per node; `None` examines all.
    pub max_features: Option<usize>,
}

/// Per-sample statistics. Entries of rows not in the sample list are unused.
pub(crate) struct SampleStats<'a> {
    pub w: &'a [f64],
    pub s: &'a [f64],
    pub h: &'a [f64],
    pub q: &'a [f64],
}

#[derive(Clone, Copy, Default)]
struct Totals {
    count: usize,
    w: f64,
    s: f64,
    h: f64,
    q: f64,
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    gain: f64,
    feature: usize,
    rank: u32,
}

enum FeatureResult {
    Constant,
    NoSplit,
    Split(Candidate),
}

/// Relative tolerance below which a node counts as pure.
const PURITY_TOL: f64 = 1e-12;

fn impurity_gain(c: Criterion, t: &Totals, wl: f64, sl: f64) -> f64 {
    let (wr, sr) = (t.w - wl, t.s - sl);
    match c {
        Criterion::Gini => {
            let g = |s: f64, w: f64| s * (w - s) / w;
            2.0 * (g(t.s, t.w) - g(sl, wl) - g(sr, wr))
        }
        Criterion::Newton => sl * sl / wl + sr * sr / wr - t.s * t.s / t.w,
    }
}

fn best_for_feature(
    f: usize,
    samples: &[u32],
    ranked: &Ranked,
    st: &SampleStats<'_>,
    cfg: &TreeConfig,
    totals: &Totals,
) -> FeatureResult {
    let col = ranked.col(f);
    let n_unique = ranked.uniques[f].len();

    // (rank, count, w, s) for each rank present in the node, ascending
    let mut groups: Vec<(u32, usize, f64, f64)> = Vec::new();
    if n_unique <= 2 * samples.len() {
        let mut cnt = vec![0usize; n_unique];
        let mut w = vec![0.0; n_unique];
        let mut s = vec![0.0; n_unique];
        for &i in samples {
            let r = col[i as usize] as usize;
            cnt[r] += 1;
            w[r] += st.w[i as usize];
            s[r] += st.s[i as usize];
        }
        for r in 0..n_unique {
            if cnt[r] > 0 {
                groups.push((r as u32, cnt[r], w[r], s[r]));
            }
        }
    } else {
        let mut pairs: Vec<(u32, u32)> = samples.iter().map(|&i| (col[i as usize], i)).collect();
        pairs.sort_unstable();
        for (r, i) in pairs {
            let (wi, si) = (st.w[i as usize], st.s[i as usize]);
            match groups.last_mut() {
                Some(g) if g.0 == r => {
                    g.1 += 1;
                    g.2 += wi;
                    g.3 += si;
                }
                _ => groups.push((r, 1, wi, si)),
            }
        }
    }
    if groups.len() < 2 {
        return FeatureResult::Constant;
    }

    let mut best: Option<Candidate> = None;
    let (mut cl, mut wl, mut sl) = (0usize, 0.0, 0.0);
    for g in &groups[..groups.len() - 1] {
        cl += g.1;
        wl += g.2;
        sl += g.3;
        let cr = totals.count - cl;
        if cl < cfg.min_samples_leaf || cr < cfg.min_samples_leaf {
            continue;
        }
        let wr = totals.w - wl;
        if wl <= 0.0 || wr <= 0.0 {
            continue;
        }
        // zero-gain splits are allowed so that XOR-like structure can be
        // found one level further down
        let gain = impurity_gain(cfg.criterion, totals, wl, sl).max(0.0);
        if best.map_or(true, |b| gain > b.gain) {
            best = Some(Candidate { gain, feature: f, rank: g.0 });
        }
    }
    match best {
        Some(c) => FeatureResult::Split(c),
        None => FeatureResult::NoSplit,
    }
}

fn pick(a: Option<Candidate>, b: Candidate) -> Option<Candidate> {
    match a {
        None => Some(b),
        Some(a) if b.gain > a.gain || (b.gain == a.gain && b.feature < a.feature) => Some(b),
        keep => keep,
    }
}

/// Grows one tree on `samples` (row indices with positive weight).
///
/// `features` is the candidate pool; with `max_features = Some(k)` each
/// node walks a fresh random permutation of the pool until it has examined
/// `k` features that vary within the node.
pub(crate) fn build_tree<R: Rng>(
    ranked: &Ranked,
    samples: Vec<u32>,
    features: &[usize],
    st: &SampleStats<'_>,
    cfg: &TreeConfig,
    rng: &mut R,
) -> Tree {
    let mut tree = Tree::default();
    tree.push_leaf();
    let mut stack: Vec<(usize, Vec<u32>, usize)> = vec![(0, samples, 0)];
    let mut perm: Vec<usize> = features.to_vec();

    while let Some((slot, samples, depth)) = stack.pop() {
        let mut t = Totals { count: samples.len(), ..Default::default() };
        for &i in &samples {
            let i = i as usize;
            t.w += st.w[i];
            t.s += st.s[i];
            if cfg.criterion == Criterion::Newton {
                t.h += st.h[i];
                t.q += st.q[i];
            }
        }
        tree.value[slot] = leaf_value(cfg.criterion, &t);

        let pure = match cfg.criterion {
            Criterion::Gini => t.s <= PURITY_TOL * t.w || t.s >= t.w * (1.0 - PURITY_TOL),
            Criterion::Newton => t.q - t.s * t.s / t.w <= PURITY_TOL * t.q,
        };
        if pure
            || t.w <= 0.0
            || cfg.max_depth.is_some_and(|d| depth >= d)
            || samples.len() < 2 * cfg.min_samples_leaf.max(1)
        {
            continue;
        }

        let parallel = samples.len() >= 4096;
        let eval =
            |fs: &[usize]| par::map_if(parallel, fs, |&f| best_for_feature(f, &samples, ranked, st, cfg, &t));
        let mut best: Option<Candidate> = None;
        match cfg.max_features {
            None => {
                for r in eval(&perm) {
                    if let FeatureResult::Split(c) = r {
                        best = pick(best, c);
                    }
                }
            }
            Some(k) => {
                let mut drawn = 0;
                let mut varying = 0;
                while varying < k && drawn < perm.len() {
                    let take = (k - varying).min(perm.len() - drawn);
                    for j in drawn..drawn + take {
                        let swap = rng.random_range(j..perm.len());
                        perm.swap(j, swap);
                    }
                    for r in eval(&perm[drawn..drawn + take]) {
                        match r {
                            FeatureResult::Constant => {}
                            FeatureResult::NoSplit => varying += 1,
                            FeatureResult::Split(c) => {
                                varying += 1;
                                best = pick(best, c);
                            }
                        }
                    }
                    drawn += take;
                }
            }
        }

        let Some(c) = best else { continue };
        let col = ranked.col(c.feature);
        let (left, right): (Vec<u32>, Vec<u32>) = samples.iter().partition(|&&i| col[i as usize] <= c.rank);
        let l = tree.push_leaf();
        let r = tree.push_leaf();
        tree.feature[slot] = c.feature as i32;
        tree.threshold[slot] = ranked.uniques[c.feature][c.rank as usize];
        tree.left[slot] = l as u32;
        tree.right[slot] = r as u32;
        tree.gain[slot] = c.gain;
        stack.push((r, right, depth + 1));
        stack.push((l, left, depth + 1));
    }
    tree
}

fn leaf_value(c: Criterion, t: &Totals) -> f64 {
    match c {
        Criterion::Gini => {
            if t.w > 0.0 {
                (t.s / t.w).clamp(0.0, 1.0)
            } else {
                0.0
            }
        }
        Criterion::Newton => {
            if t.h > 1e-300 {
                t.s / t.h
            } else {
                0.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fit(x: &[f64], y: &[f64], d: usize, cfg: TreeConfig) -> Tree {
        let n = y.len();
        let ranked = Ranked::new(x, n, d);
        let w = vec![1.0; n];
        let st = SampleStats { w: &w, s: y, h: &[], q: &[] };
        let feats = ranked.varying_features();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        build_tree(&ranked, (0..n as u32).collect(), &feats, &st, &cfg, &mut rng)
    }

    const GINI: TreeConfig =
        TreeConfig { criterion: Criterion::Gini, max_depth: None, min_samples_leaf: 1, max_features: None };

    #[test]
    fn xor_fits_through_zero_gain_root() {
        let x = [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let y = [0.0, 1.0, 1.0, 0.0];
        let t = fit(&x, &y, 2, GINI);
        assert_eq!(t.len(), 7);
        assert_eq!(t.gain[0], 0.0);
        for i in 0..4 {
            assert_eq!(t.predict(&x[2 * i..2 * i + 2]), y[i]);
        }
    }

    #[test]
    fn separates_threshold_data() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..10).map(|i| if i >= 6 { 1.0 } else { 0.0 }).collect();
        let t = fit(&x, &y, 1, GINI);
        assert_eq!(t.len(), 3);
        assert_eq!(t.threshold[0], 5.0);
        for i in 0..10 {
            assert_eq!(t.predict(&[i as f64]), y[i]);
        }
        assert!(t.validate(1).is_ok());
    }

    #[test]
    fn depth_limit_and_observed_thresholds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let d = 4;
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(0..50) as f64 / 7.0).collect();
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        for depth in 1..5 {
            let t = fit(&x, &y, d, TreeConfig { max_depth: Some(depth), ..GINI });
            assert!(t.depth() <= depth);
            for i in 0..n {
                assert!(t.path_length(&x[i * d..(i + 1) * d]) <= depth);
            }
            for (k, &f) in t.feature.iter().enumerate() {
                if f >= 0 {
                    let th = t.threshold[k];
                    assert!((0..n).any(|i| x[i * d + f as usize] == th));
                }
            }
        }
    }

    #[test]
    fn validate_rejects_bad_structure() {
        let mut t = Tree::default();
        t.push_leaf();
        assert!(t.validate(1).is_ok());
        t.feature[0] = 0;
        t.left[0] = 0;
        assert!(t.validate(1).is_err());
    }
}
