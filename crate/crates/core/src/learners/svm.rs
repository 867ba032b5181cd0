use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{dot, sigmoid};
use crate::domain::Label;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmParams {
    pub c: f64,
    pub epochs: usize,
    /// Calibrate margins with a fitted sigmoid instead of the fixed one.
    pub platt: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, epochs: 200, platt: false }
    }
}

/// Linear SVM trained by Pegasos-style subgradient descent on
/// `lambda/2 * (|w|^2 + b^2) + mean hinge`, with `lambda = 1 / (C n)`.
///
/// The bias rides along as an extra constant feature and is regularized
/// with the weights. An epoch's update is kept only when it does not raise
/// the objective, so the accepted objective sequence never increases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Sigmoid `(a, b)` applied as `sigmoid(a * margin + b)`.
    pub calibration: (f64, f64),
}

fn objective(w: &[f64], b: f64, x: &[Vec<f64>], signs: &[f64], lambda: f64) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(signs)
        .map(|(row, s)| (1.0 - s * (dot(w, row) + b)).max(0.0))
        .sum();
    0.5 * lambda * (dot(w, w) + b * b) + hinge / x.len() as f64
}

impl SvmModel {
    /// Returns the model and the objective after each epoch.
    pub fn fit(params: &SvmParams, x: &[Vec<f64>], y: &[Label], seed: u64) -> (Self, Vec<f64>) {
        let n = x.len();
        let d = x[0].len();
        let lambda = 1.0 / (params.c * n as f64);
        let radius = 1.0 / lambda.sqrt();
        let signs: Vec<f64> = y.iter().map(|l| if l.is_tb() { 1.0 } else { -1.0 }).collect();
        let mut rng = rng::seeded(seed);
        let mut order: Vec<usize> = (0..n).collect();

        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut best = objective(&w, b, x, &signs, lambda);
        let mut trace = Vec::with_capacity(params.epochs);
        let mut t = 0usize;
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            let mut cw = w.clone();
            let mut cb = b;
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let margin = signs[i] * (dot(&cw, &x[i]) + cb);
                let shrink = 1.0 - eta * lambda;
                cw.iter_mut().for_each(|v| *v *= shrink);
                cb *= shrink;
                if margin < 1.0 {
                    for (v, xi) in cw.iter_mut().zip(&x[i]) {
                        *v += eta * signs[i] * xi;
                    }
                    cb += eta * signs[i];
                }
                let norm = (dot(&cw, &cw) + cb * cb).sqrt();
                if norm > radius {
                    let s = radius / norm;
                    cw.iter_mut().for_each(|v| *v *= s);
                    cb *= s;
                }
            }
            let candidate = objective(&cw, cb, x, &signs, lambda);
            if candidate <= best {
                w = cw;
                b = cb;
                best = candidate;
            }
            trace.push(best);
        }

        let calibration = if params.platt {
            let margins: Vec<f64> = x.iter().map(|row| dot(&w, row) + b).collect();
            platt_scale(&margins, y)
        } else {
            (1.0, 0.0)
        };
        (Self { weights: w, bias: b, calibration }, trace)
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let (a, b) = self.calibration;
        sigmoid(a * self.margin(x) + b)
    }
}

/// Newton fit of `sigmoid(a * m + b)` to smoothed targets.
fn platt_scale(margins: &[f64], y: &[Label]) -> (f64, f64) {
    let pos = y.iter().filter(|l| l.is_tb()).count() as f64;
    let neg = y.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    let targets: Vec<f64> = y.iter().map(|l| if l.is_tb() { hi } else { lo }).collect();
    let (mut a, mut b) = (1.0, 0.0);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (m, t) in margins.iter().zip(&targets) {
            let p = sigmoid(a * m + b);
            let r = p - t;
            let s = p * (1.0 - p);
            ga += r * m;
            gb += r;
            haa += s * m * m;
            hab += s * m;
            hbb += s;
        }
        let det = haa * hbb - hab * hab;
        if det.abs() < 1e-300 {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        a -= da;
        b -= db;
        if da.abs() < 1e-12 && db.abs() < 1e-12 {
            break;
        }
    }
    (a, b)
}
