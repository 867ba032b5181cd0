use serde::{Deserialize, Serialize};

use crate::domain::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// Stored training set; P(TB) is the TB fraction among the k nearest rows
/// by Euclidean distance, ties broken by training row index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub x: Vec<Vec<f64>>,
    pub tb: Vec<bool>,
}

impl KnnModel {
    pub fn fit(params: &KnnParams, x: &[Vec<f64>], y: &[Label]) -> Self {
        Self {
            k: params.k,
            x: x.to_vec(),
            tb: y.iter().map(|l| l.is_tb()).collect(),
        }
    }

    pub fn predict_proba(&self, query: &[f64]) -> f64 {
        let mut dist: Vec<(f64, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let d: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        let k = self.k.min(dist.len());
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, by_distance);
        }
        let tb = dist[..k].iter().filter(|(_, i)| self.tb[*i]).count();
        tb as f64 / k as f64
    }
}
