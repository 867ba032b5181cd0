//! Binary base learners sharing one contract: fit on a complete, normalized
//! feature matrix and emit P(TB) for a feature vector.
//!
//! Hyperparameters are typed per learner kind and validated before fitting.
//! Fitting is deterministic in `(spec, x, y)`; learners that shuffle or
//! subsample draw from a ChaCha8 stream seeded by `spec.seed`.

mod adaboost;
mod gbt;
mod knn;
mod logistic;
mod svm;
pub mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::error::{Result, TpisError};

pub use adaboost::{AdaBoostModel, AdaBoostParams};
pub use gbt::{GbtModel, GbtParams};
pub use knn::{KnnModel, KnnParams};
pub use logistic::{log_loss_gradient, log_loss_objective, LogRegModel, LogRegParams};
pub use svm::{SvmModel, SvmParams};
pub use tree::{DecisionTree, ForestModel, ForestParams, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Knn,
    LogReg,
    LinearSvm,
    DecisionTree,
    RandomForest,
    AdaBoost,
    Gbt,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 7] = [
        LearnerKind::Knn,
        LearnerKind::LogReg,
        LearnerKind::LinearSvm,
        LearnerKind::DecisionTree,
        LearnerKind::RandomForest,
        LearnerKind::AdaBoost,
        LearnerKind::Gbt,
    ];

    /// Short display name used in comparison tables.
    pub fn short_name(self) -> &'static str {
        match self {
            LearnerKind::Knn => "KNN",
            LearnerKind::LogReg => "LR",
            LearnerKind::LinearSvm => "SVM",
            LearnerKind::DecisionTree => "DT",
            LearnerKind::RandomForest => "RF",
            LearnerKind::AdaBoost => "AdaBoost",
            LearnerKind::Gbt => "GBT",
        }
    }

    pub fn default_params(self) -> LearnerParams {
        match self {
            LearnerKind::Knn => LearnerParams::Knn(KnnParams::default()),
            LearnerKind::LogReg => LearnerParams::LogReg(LogRegParams::default()),
            LearnerKind::LinearSvm => LearnerParams::LinearSvm(SvmParams::default()),
            LearnerKind::DecisionTree => LearnerParams::DecisionTree(TreeParams::default()),
            LearnerKind::RandomForest => LearnerParams::RandomForest(ForestParams::default()),
            LearnerKind::AdaBoost => LearnerParams::AdaBoost(AdaBoostParams::default()),
            LearnerKind::Gbt => LearnerParams::Gbt(GbtParams::default()),
        }
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for LearnerKind {
    type Err = TpisError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        LearnerKind::ALL
            .into_iter()
            .find(|k| k.short_name().to_ascii_lowercase() == lower)
            .or(match lower.as_str() {
                "logreg" => Some(LearnerKind::LogReg),
                "linear_svm" => Some(LearnerKind::LinearSvm),
                "decision_tree" => Some(LearnerKind::DecisionTree),
                "random_forest" => Some(LearnerKind::RandomForest),
                "ada_boost" => Some(LearnerKind::AdaBoost),
                _ => None,
            })
            .ok_or_else(|| TpisError::ConfigError(format!("unknown learner `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerParams {
    Knn(KnnParams),
    LogReg(LogRegParams),
    LinearSvm(SvmParams),
    DecisionTree(TreeParams),
    RandomForest(ForestParams),
    AdaBoost(AdaBoostParams),
    Gbt(GbtParams),
}

impl LearnerParams {
    pub fn kind(&self) -> LearnerKind {
        match self {
            LearnerParams::Knn(_) => LearnerKind::Knn,
            LearnerParams::LogReg(_) => LearnerKind::LogReg,
            LearnerParams::LinearSvm(_) => LearnerKind::LinearSvm,
            LearnerParams::DecisionTree(_) => LearnerKind::DecisionTree,
            LearnerParams::RandomForest(_) => LearnerKind::RandomForest,
            LearnerParams::AdaBoost(_) => LearnerKind::AdaBoost,
            LearnerParams::Gbt(_) => LearnerKind::Gbt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(TpisError::InvalidHyperparameter(msg.to_string()));
        match self {
            LearnerParams::Knn(p) if p.k == 0 => bad("knn: k must be >= 1"),
            LearnerParams::LogReg(p) if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) => {
                bad("logreg: learning_rate must be > 0")
            }
            LearnerParams::LogReg(p) if p.iterations == 0 => bad("logreg: iterations must be >= 1"),
            LearnerParams::LogReg(p) if !(p.l2 >= 0.0 && p.l2.is_finite()) => bad("logreg: l2 must be >= 0"),
            LearnerParams::LinearSvm(p) if !(p.c > 0.0 && p.c.is_finite()) => bad("svm: c must be > 0"),
            LearnerParams::LinearSvm(p) if p.epochs == 0 => bad("svm: epochs must be >= 1"),
            LearnerParams::DecisionTree(p) => p.validate(),
            LearnerParams::RandomForest(p) if p.n_trees == 0 => bad("random_forest: n_trees must be >= 1"),
            LearnerParams::RandomForest(p) => p.tree().validate(),
            LearnerParams::AdaBoost(p) if p.rounds == 0 => bad("adaboost: rounds must be >= 1"),
            LearnerParams::Gbt(p) if p.rounds == 0 => bad("gbt: rounds must be >= 1"),
            // Zero is allowed: the model then reduces to the prior log-odds.
            LearnerParams::Gbt(p) if !(p.learning_rate >= 0.0 && p.learning_rate.is_finite()) => {
                bad("gbt: learning_rate must be finite and >= 0")
            }
            LearnerParams::Gbt(p) if p.max_depth == 0 || p.min_leaf == 0 => {
                bad("gbt: max_depth and min_leaf must be >= 1")
            }
            LearnerParams::Gbt(p) if !(p.l2 >= 0.0 && p.l2.is_finite()) => bad("gbt: l2 must be >= 0"),
            _ => Ok(()),
        }
    }
}

/// What to fit: a parameterized learner plus its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub params: LearnerParams,
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(params: LearnerParams, seed: u64) -> Self {
        Self { params, seed }
    }

    pub fn default_for(kind: LearnerKind, seed: u64) -> Self {
        Self::new(kind.default_params(), seed)
    }

    pub fn kind(&self) -> LearnerKind {
        self.params.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Knn(KnnModel),
    LogReg(LogRegModel),
    LinearSvm(SvmModel),
    DecisionTree(DecisionTree),
    RandomForest(ForestModel),
    AdaBoost(AdaBoostModel),
    Gbt(GbtModel),
}

/// An immutable fitted learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedLearner {
    pub n_features: usize,
    pub seed: u64,
    pub model: FittedModel,
}

impl TrainedLearner {
    pub fn kind(&self) -> LearnerKind {
        match &self.model {
            FittedModel::Knn(_) => LearnerKind::Knn,
            FittedModel::LogReg(_) => LearnerKind::LogReg,
            FittedModel::LinearSvm(_) => LearnerKind::LinearSvm,
            FittedModel::DecisionTree(_) => LearnerKind::DecisionTree,
            FittedModel::RandomForest(_) => LearnerKind::RandomForest,
            FittedModel::AdaBoost(_) => LearnerKind::AdaBoost,
            FittedModel::Gbt(_) => LearnerKind::Gbt,
        }
    }

    /// P(TB | x) in [0, 1].
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(TpisError::ShapeError { expected: self.n_features, got: x.len() });
        }
        let p = match &self.model {
            FittedModel::Knn(m) => m.predict_proba(x),
            FittedModel::LogReg(m) => m.predict_proba(x),
            FittedModel::LinearSvm(m) => m.predict_proba(x),
            FittedModel::DecisionTree(m) => m.predict_proba(x),
            FittedModel::RandomForest(m) => m.predict_proba(x),
            FittedModel::AdaBoost(m) => m.predict_proba(x),
            FittedModel::Gbt(m) => m.predict_proba(x),
        };
        Ok(p.clamp(0.0, 1.0))
    }

    /// Hard label: TB iff P(TB) >= 0.5.
    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        Ok(Label::from_tb(self.predict_proba(x)? >= 0.5))
    }
}

/// Checks shape and label preconditions shared by every learner.
pub(crate) fn check_training_data(x: &[Vec<f64>], y: &[Label]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(TpisError::ShapeError { expected: x.len(), got: y.len() });
    }
    let width = x.first().map(Vec::len).ok_or(TpisError::EmptyDataset)?;
    for (i, row) in x.iter().enumerate() {
        if row.len() != width {
            return Err(TpisError::ShapeError { expected: width, got: row.len() });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(TpisError::InvalidFeature {
                field: format!("x[{i}][{j}]"),
                reason: "training matrix must be complete and finite".into(),
            });
        }
    }
    let tb = y.iter().filter(|l| l.is_tb()).count();
    if tb == 0 || tb == y.len() {
        return Err(TpisError::DegenerateLabels);
    }
    Ok(width)
}

pub fn fit(spec: &LearnerSpec, x: &[Vec<f64>], y: &[Label]) -> Result<TrainedLearner> {
    spec.params.validate()?;
    let n_features = check_training_data(x, y)?;
    let model = match &spec.params {
        LearnerParams::Knn(p) => FittedModel::Knn(KnnModel::fit(p, x, y)),
        LearnerParams::LogReg(p) => FittedModel::LogReg(LogRegModel::fit(p, x, y)),
        LearnerParams::LinearSvm(p) => FittedModel::LinearSvm(SvmModel::fit(p, x, y, spec.seed).0),
        LearnerParams::DecisionTree(p) => FittedModel::DecisionTree(DecisionTree::fit(p, x, y, spec.seed)),
        LearnerParams::RandomForest(p) => FittedModel::RandomForest(ForestModel::fit(p, x, y, spec.seed)),
        LearnerParams::AdaBoost(p) => FittedModel::AdaBoost(AdaBoostModel::fit(p, x, y)),
        LearnerParams::Gbt(p) => FittedModel::Gbt(GbtModel::fit(p, x, y)),
    };
    Ok(TrainedLearner { n_features, seed: spec.seed, model })
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
