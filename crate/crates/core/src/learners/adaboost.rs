use serde::{Deserialize, Serialize};

use super::sigmoid;
use super::tree::{DecisionTree, TreeParams};
use crate::domain::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaBoostParams {
    pub rounds: usize,
}

impl Default for AdaBoostParams {
    fn default() -> Self {
        Self { rounds: 100 }
    }
}

/// Smallest weighted error used when a stump classifies everything right.
const MIN_ERROR: f64 = 1e-10;

/// SAMME boosting of depth-1 stumps (two classes, so the per-round weight is
/// `ln((1 - err) / err)`). Boosting stops at the first stump whose weighted
/// error reaches 0.5; such a stump is discarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub stumps: Vec<DecisionTree>,
    pub alphas: Vec<f64>,
    pub errors: Vec<f64>,
}

fn stump_says_tb(stump: &DecisionTree, x: &[f64]) -> bool {
    let (tb, total) = stump.leaf_counts(x);
    2.0 * tb >= total
}

impl AdaBoostModel {
    pub fn fit(params: &AdaBoostParams, x: &[Vec<f64>], y: &[Label]) -> Self {
        let n = x.len();
        let stump_params = TreeParams { max_depth: 1, min_leaf: 1, max_features: None, laplace: false };
        let mut weights = vec![1.0 / n as f64; n];
        let mut model = Self { stumps: Vec::new(), alphas: Vec::new(), errors: Vec::new() };
        for _ in 0..params.rounds {
            let stump = DecisionTree::fit_weighted(&stump_params, x, y, &weights, 0);
            let wrong: Vec<bool> = x
                .iter()
                .zip(y)
                .map(|(row, l)| stump_says_tb(&stump, row) != l.is_tb())
                .collect();
            let total: f64 = weights.iter().sum();
            let err: f64 = weights.iter().zip(&wrong).filter(|(_, w)| **w).map(|(v, _)| v).sum::<f64>() / total;
            if err >= 0.5 {
                break;
            }
            let perfect = err <= MIN_ERROR;
            let err = err.max(MIN_ERROR);
            let alpha = ((1.0 - err) / err).ln();
            model.stumps.push(stump);
            model.alphas.push(alpha);
            model.errors.push(err);
            if perfect {
                break;
            }
            for (w, miss) in weights.iter_mut().zip(&wrong) {
                if *miss {
                    *w *= alpha.exp();
                }
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
        }
        model
    }

    /// Signed ensemble score: positive favours TB.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.stumps
            .iter()
            .zip(&self.alphas)
            .map(|(s, a)| if stump_says_tb(s, x) { *a } else { -*a })
            .sum()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.score(x))
    }
}
