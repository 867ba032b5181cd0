use serde::{Deserialize, Serialize};

use super::{dot, sigmoid};
use crate::domain::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogRegParams {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
    /// Stop early once the gradient's max-norm falls below this.
    pub tolerance: f64,
}

impl Default for LogRegParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 500,
            l2: 1e-3,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations_run: usize,
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean log-loss plus `l2/2 * |w|^2`. `params` is `[w_0 .. w_{d-1}, b]`;
/// the bias is not regularized.
pub fn log_loss_objective(params: &[f64], x: &[Vec<f64>], targets: &[f64], l2: f64) -> f64 {
    let (w, b) = params.split_at(params.len() - 1);
    let n = x.len() as f64;
    let data: f64 = x
        .iter()
        .zip(targets)
        .map(|(row, t)| {
            let z = dot(w, row) + b[0];
            softplus(z) - t * z
        })
        .sum();
    data / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Analytic gradient of [`log_loss_objective`], same layout as `params`.
pub fn log_loss_gradient(params: &[f64], x: &[Vec<f64>], targets: &[f64], l2: f64) -> Vec<f64> {
    let d = params.len() - 1;
    let (w, b) = params.split_at(d);
    let n = x.len() as f64;
    let mut grad = vec![0.0; d + 1];
    for (row, t) in x.iter().zip(targets) {
        let r = sigmoid(dot(w, row) + b[0]) - t;
        for (g, v) in grad.iter_mut().zip(row) {
            *g += r * v;
        }
        grad[d] += r;
    }
    for g in &mut grad {
        *g /= n;
    }
    for (g, wj) in grad.iter_mut().zip(w) {
        *g += l2 * wj;
    }
    grad
}

impl LogRegModel {
    /// Full-batch gradient descent from the origin.
    pub fn fit(params: &LogRegParams, x: &[Vec<f64>], y: &[Label]) -> Self {
        let d = x[0].len();
        let targets: Vec<f64> = y.iter().map(|l| l.target()).collect();
        let mut theta = vec![0.0; d + 1];
        let mut iterations_run = 0;
        for _ in 0..params.iterations {
            let grad = log_loss_gradient(&theta, x, &targets, params.l2);
            iterations_run += 1;
            if grad.iter().all(|g| g.abs() < params.tolerance) {
                break;
            }
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= params.learning_rate * g;
            }
        }
        let bias = theta.pop().unwrap_or(0.0);
        Self { weights: theta, bias, iterations_run }
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_is_one_half() {
        let m = LogRegModel { weights: vec![0.0; 3], bias: 0.0, iterations_run: 0 };
        assert_eq!(m.predict_proba(&[0.3, -4.0, 9.0]), 0.5);
    }

    #[test]
    fn separable_two_points() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = [Label::Pneumonia, Label::Tb];
        let m = LogRegModel::fit(&LogRegParams::default(), &x, &y);
        assert!(m.predict_proba(&[1.0]) > 0.5);
        assert!(m.predict_proba(&[0.0]) < 0.5);
    }

    #[test]
    fn descent_lowers_objective() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64) / 30.0, ((i * 13) % 7) as f64 / 7.0]).collect();
        let t: Vec<f64> = (0..30).map(|i| if i > 14 { 1.0 } else { 0.0 }).collect();
        let y: Vec<Label> = t.iter().map(|&v| Label::from_tb(v > 0.5)).collect();
        let m = LogRegModel::fit(&LogRegParams::default(), &x, &y);
        let start = log_loss_objective(&[0.0, 0.0, 0.0], &x, &t, 1e-3);
        let end = log_loss_objective(&[m.weights[0], m.weights[1], m.bias], &x, &t, 1e-3);
        assert!(end < start);
    }
}
