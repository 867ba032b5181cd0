//! CART classification trees (Gini impurity) and random forests.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::error::{Result, TpisError};
use crate::rng::{self, derive_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split; `None` examines all of them.
    pub max_features: Option<usize>,
    /// Leaf probability `(tb + 1) / (n + 2)` instead of `tb / n`.
    pub laplace: bool,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 6, min_leaf: 2, max_features: None, laplace: true }
    }
}

impl TreeParams {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_leaf == 0 {
            return Err(TpisError::InvalidHyperparameter(
                "tree: max_depth and min_leaf must be >= 1".into(),
            ));
        }
        if self.max_features == Some(0) {
            return Err(TpisError::InvalidHyperparameter("tree: max_features must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Weighted Gini impurity of this node and of its two children combined.
        impurity: f64,
        children_impurity: f64,
    },
    /// Weighted TB mass and total mass reaching the leaf.
    Leaf { tb: f64, total: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
    pub laplace: bool,
}

fn gini(tb: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let p = tb / total;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    tb: Vec<bool>,
    weights: &'a [f64],
    params: TreeParams,
    rng: Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn mass(&self, rows: &[usize]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(tb, total), &i| {
            let w = self.weights[i];
            (tb + if self.tb[i] { w } else { 0.0 }, total + w)
        })
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.x[0].len();
        match self.params.max_features {
            Some(m) if m < d => {
                let mut f = sample(&mut self.rng, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn best_split(&mut self, rows: &[usize], total_mass: f64) -> Option<BestSplit> {
        let min_leaf = self.params.min_leaf;
        let mut best: Option<BestSplit> = None;
        let mut sorted = rows.to_vec();
        for feature in self.candidate_features() {
            sorted.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]).then(a.cmp(&b)));
            let (all_tb, _) = self.mass(&sorted);
            let mut left_tb = 0.0;
            let mut left_total = 0.0;
            for pos in 0..sorted.len() - 1 {
                let i = sorted[pos];
                let w = self.weights[i];
                left_total += w;
                if self.tb[i] {
                    left_tb += w;
                }
                let here = self.x[i][feature];
                let next = self.x[sorted[pos + 1]][feature];
                let left_n = pos + 1;
                if here == next || left_n < min_leaf || sorted.len() - left_n < min_leaf {
                    continue;
                }
                let right_tb = all_tb - left_tb;
                let right_total = total_mass - left_total;
                let impurity = (left_total * gini(left_tb, left_total)
                    + right_total * gini(right_tb, right_total))
                    / total_mass;
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mid = 0.5 * (here + next);
                    // Adjacent floats can round the midpoint up onto `next`.
                    let threshold = if mid < next { mid } else { here };
                    best = Some(BestSplit { feature, threshold, impurity });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let (tb, total) = self.mass(&rows);
        let impurity = gini(tb, total);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { tb, total });
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_leaf || impurity <= 0.0 {
            return id;
        }
        let Some(split) = self.best_split(&rows, total) else {
            return id;
        };
        // Splits must strictly reduce weighted impurity.
        if split.impurity.partial_cmp(&(impurity - 1e-12)) != Some(std::cmp::Ordering::Less) {
            return id;
        }
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            impurity,
            children_impurity: split.impurity,
        };
        id
    }
}

impl DecisionTree {
    pub fn fit(params: &TreeParams, x: &[Vec<f64>], y: &[Label], seed: u64) -> Self {
        let rows: Vec<usize> = (0..x.len()).collect();
        let weights = vec![1.0; x.len()];
        Self::fit_rows(params, x, y, &weights, rows, rng::seeded(seed))
    }

    /// Fits on sample weights; used by boosting.
    pub fn fit_weighted(params: &TreeParams, x: &[Vec<f64>], y: &[Label], weights: &[f64], seed: u64) -> Self {
        let rows: Vec<usize> = (0..x.len()).collect();
        Self::fit_rows(params, x, y, weights, rows, rng::seeded(seed))
    }

    fn fit_rows(
        params: &TreeParams,
        x: &[Vec<f64>],
        y: &[Label],
        weights: &[f64],
        rows: Vec<usize>,
        rng: Rng,
    ) -> Self {
        let mut builder = Builder {
            x,
            tb: y.iter().map(|l| l.is_tb()).collect(),
            weights,
            params: *params,
            rng,
            nodes: Vec::new(),
        };
        builder.build(rows, 0);
        Self { nodes: builder.nodes, laplace: params.laplace }
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { .. } => return id,
                Node::Split { feature, threshold, left, right, .. } => {
                    id = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// `(tb mass, total mass)` of the leaf reached by `x`.
    pub fn leaf_counts(&self, x: &[f64]) -> (f64, f64) {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { tb, total } => (tb, total),
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let (tb, total) = self.leaf_counts(x);
        if self.laplace {
            (tb + 1.0) / (total + 2.0)
        } else if total > 0.0 {
            tb / total
        } else {
            0.5
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
    /// Examine `ceil(sqrt(d))` features per split.
    pub feature_subsample: bool,
    pub laplace: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 6,
            min_leaf: 2,
            bootstrap: true,
            feature_subsample: true,
            laplace: true,
        }
    }
}

impl ForestParams {
    pub(crate) fn tree(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            max_features: None,
            laplace: self.laplace,
        }
    }
}

/// Bagged CART trees; P(TB) is the mean of tree probabilities. Tree `t`
/// draws from the stream `derive_seed(seed, t)`, so the result does not
/// depend on how trees are scheduled across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
}

impl ForestModel {
    pub fn fit(params: &ForestParams, x: &[Vec<f64>], y: &[Label], seed: u64) -> Self {
        let n = x.len();
        let d = x[0].len();
        let mut tree_params = params.tree();
        if params.feature_subsample {
            tree_params.max_features = Some(((d as f64).sqrt().ceil() as usize).max(1));
        }
        let weights = vec![1.0; n];
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::seeded(derive_seed(seed, t as u64));
                let rows: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit_rows(&tree_params, x, y, &weights, rows, rng)
            })
            .collect();
        Self { trees }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict_proba(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn data(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<Label>) {
        let mut r = rng::seeded(seed);
        (0..n)
            .map(|_| {
                let row: Vec<f64> = (0..4).map(|_| (r.random_range(0..5) as f64) / 4.0).collect();
                let tb = row[0] + row[2] > 1.0 || r.random::<f64>() < 0.1;
                (row, Label::from_tb(tb))
            })
            .unzip()
    }

    #[test]
    fn leaf_frequency_rule() {
        let leaf = DecisionTree { nodes: vec![Node::Leaf { tb: 4.0, total: 5.0 }], laplace: false };
        assert!((leaf.predict_proba(&[0.0]) - 0.8).abs() < 1e-15);
        let smoothed = DecisionTree { laplace: true, ..leaf };
        assert!((smoothed.predict_proba(&[0.0]) - 5.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn splits_strictly_reduce_impurity() {
        for seed in 0..10 {
            let (x, y) = data(seed, 80);
            let tree = DecisionTree::fit(&TreeParams::default(), &x, &y, seed);
            assert!(tree.depth() <= 6);
            for node in &tree.nodes {
                if let Node::Split { impurity, children_impurity, .. } = node {
                    assert!(children_impurity < impurity);
                }
            }
        }
    }

    #[test]
    fn training_predictions_match_leaf_lookup() {
        let (x, y) = data(4, 60);
        let params = TreeParams { laplace: false, ..TreeParams::default() };
        let tree = DecisionTree::fit(&params, &x, &y, 0);
        for row in &x {
            let leaf = tree.leaf_index(row);
            // Recount the leaf's training members directly.
            let members: Vec<&Label> = x
                .iter()
                .zip(&y)
                .filter(|(r, _)| tree.leaf_index(r) == leaf)
                .map(|(_, l)| l)
                .collect();
            let tb = members.iter().filter(|l| l.is_tb()).count() as f64;
            assert_eq!(tree.predict_proba(row), tb / members.len() as f64);
        }
    }

    #[test]
    fn min_leaf_respected() {
        let (x, y) = data(8, 50);
        let tree = DecisionTree::fit(&TreeParams::default(), &x, &y, 0);
        for node in &tree.nodes {
            if let Node::Leaf { total, .. } = node {
                assert!(*total >= 2.0);
            }
        }
    }

    #[test]
    fn single_tree_forest_equals_tree() {
        let (x, y) = data(12, 70);
        let forest = ForestParams { n_trees: 1, bootstrap: false, feature_subsample: false, ..ForestParams::default() };
        let f = ForestModel::fit(&forest, &x, &y, 99);
        let t = DecisionTree::fit(&forest.tree(), &x, &y, 99);
        assert_eq!(f.trees[0], t);
        for row in &x {
            assert_eq!(f.predict_proba(row), t.predict_proba(row));
        }
    }

    #[test]
    fn forest_is_schedule_independent() {
        let (x, y) = data(2, 60);
        let params = ForestParams { n_trees: 16, ..ForestParams::default() };
        let a = ForestModel::fit(&params, &x, &y, 5);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| ForestModel::fit(&params, &x, &y, 5));
        assert_eq!(a, b);
    }
}
