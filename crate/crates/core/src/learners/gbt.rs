use serde::{Deserialize, Serialize};

use super::sigmoid;
use crate::domain::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbtParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// L2 penalty on leaf values; keeps Newton steps bounded in pure leaves.
    pub l2: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { rounds: 100, learning_rate: 0.1, max_depth: 3, min_leaf: 2, l2: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Regression tree on logistic-loss gradients; each leaf holds the Newton
/// step `-G / (H + l2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                RegNode::Leaf { value } => return *value,
                RegNode::Split { feature, threshold, left, right } => {
                    id = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

struct RegBuilder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbtParams,
    nodes: Vec<RegNode>,
}

impl RegBuilder<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.l2)
    }

    fn build(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let id = self.nodes.len();
        let denom = h + self.params.l2;
        let value = if denom > 0.0 { -g / denom } else { 0.0 };
        self.nodes.push(RegNode::Leaf { value });
        let min_leaf = self.params.min_leaf;
        if depth >= self.params.max_depth || rows.len() < 2 * min_leaf {
            return id;
        }
        let parent = self.score(g, h);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted = rows.clone();
        for feature in 0..self.x[0].len() {
            sorted.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]).then(a.cmp(&b)));
            let (mut gl, mut hl) = (0.0, 0.0);
            for pos in 0..sorted.len() - 1 {
                let i = sorted[pos];
                gl += self.grad[i];
                hl += self.hess[i];
                let here = self.x[i][feature];
                let next = self.x[sorted[pos + 1]][feature];
                if here == next || pos + 1 < min_leaf || sorted.len() - pos - 1 < min_leaf {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(g - gl, h - hl) - parent;
                if best.is_none_or(|b| gain > b.2) {
                    let mid = 0.5 * (here + next);
                    best = Some((feature, if mid < next { mid } else { here }, gain));
                }
            }
        }
        match best {
            Some((feature, threshold, gain)) if gain > 1e-12 => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
                let left = self.build(l, depth + 1);
                let right = self.build(r, depth + 1);
                self.nodes[id] = RegNode::Split { feature, threshold, left, right };
                id
            }
            _ => id,
        }
    }
}

/// Gradient boosting on the logistic loss, starting from the prior log-odds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegTree>,
}

impl GbtModel {
    pub fn fit(params: &GbtParams, x: &[Vec<f64>], y: &[Label]) -> Self {
        let n = x.len();
        let targets: Vec<f64> = y.iter().map(|l| l.target()).collect();
        let prior = targets.iter().sum::<f64>() / n as f64;
        let base_score = (prior / (1.0 - prior)).ln();
        let mut raw = vec![base_score; n];
        let mut trees = Vec::with_capacity(params.rounds);
        for _ in 0..params.rounds {
            let p: Vec<f64> = raw.iter().map(|&z| sigmoid(z)).collect();
            let grad: Vec<f64> = p.iter().zip(&targets).map(|(p, t)| p - t).collect();
            let hess: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
            let mut builder = RegBuilder { x, grad: &grad, hess: &hess, params, nodes: Vec::new() };
            builder.build((0..n).collect(), 0);
            let tree = RegTree { nodes: builder.nodes };
            for (z, row) in raw.iter_mut().zip(x) {
                *z += params.learning_rate * tree.predict(row);
            }
            trees.push(tree);
        }
        Self { base_score, learning_rate: params.learning_rate, trees }
    }

    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw_score(x))
    }
}
