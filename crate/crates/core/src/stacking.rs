//! Ensemble layers, out-of-fold meta-features, vote tallies and the
//! confidence score.
//!
//! A learner counts toward TB when its P(TB) exceeds ε and toward pneumonia
//! when its P(pneumonia) = 1 - P(TB) exceeds ε. With ε below 0.5 a hesitant
//! learner (P(TB) in (ε, 1 - ε)) counts toward both classes, which is what
//! lets five voters produce a level tally.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Label, VoteOutcome};
use crate::error::{Result, TpisError};
use crate::learners::{self, LearnerSpec, TrainedLearner};
use crate::rng;

pub const DEFAULT_EPSILON: f64 = 0.4;
pub const DEFAULT_ROUTE_THRESHOLD: f64 = 0.51;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidencePolicy {
    pub epsilon: f64,
    /// Patients with a confidence score strictly below this are routed.
    pub route_threshold: f64,
}

impl Default for ConfidencePolicy {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, route_threshold: DEFAULT_ROUTE_THRESHOLD }
    }
}

impl ConfidencePolicy {
    pub fn new(epsilon: f64, route_threshold: f64) -> Result<Self> {
        let policy = Self { epsilon, route_threshold };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(TpisError::InvalidPolicy(format!("epsilon {} not in (0, 1)", self.epsilon)));
        }
        // Thresholds just above 1 are allowed so that every patient can be routed.
        if !(self.route_threshold >= 0.0 && self.route_threshold.is_finite()) {
            return Err(TpisError::InvalidPolicy(format!(
                "route threshold {} must be a finite value >= 0",
                self.route_threshold
            )));
        }
        Ok(())
    }

    /// Routing rule: undetermined votes always route; otherwise route when
    /// `cs < route_threshold`.
    pub fn routes(&self, outcome: VoteOutcome, cs: f64) -> bool {
        outcome == VoteOutcome::Undetermined || cs < self.route_threshold
    }
}

/// Per-learner P(TB), in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VotePanel {
    probs: Vec<f64>,
}

impl VotePanel {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(TpisError::InvalidFeature {
                field: "meta2".into(),
                reason: format!("probability {p} outside [0, 1]"),
            });
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.probs.is_empty() {
            return 0.5;
        }
        self.probs.iter().sum::<f64>() / self.probs.len() as f64
    }
}

/// `(tb_count, p_count)`: learners with P(TB) > ε and learners with
/// P(pneumonia) > ε.
pub fn tally_votes(panel: &VotePanel, policy: &ConfidencePolicy) -> (usize, usize) {
    let eps = policy.epsilon;
    let tb = panel.probs.iter().filter(|&&p| p > eps).count();
    let pn = panel.probs.iter().filter(|&&p| 1.0 - p > eps).count();
    (tb, pn)
}

/// `|tb - p| / (tb + p)` from a tally; 0 when nobody votes.
pub fn confidence_from_tally(tb: usize, pn: usize) -> f64 {
    if tb + pn == 0 {
        0.0
    } else {
        tb.abs_diff(pn) as f64 / (tb + pn) as f64
    }
}

pub fn confidence_score(panel: &VotePanel, policy: &ConfidencePolicy) -> f64 {
    let (tb, pn) = tally_votes(panel, policy);
    confidence_from_tally(tb, pn)
}

pub fn outcome_from_tally(tb: usize, pn: usize) -> VoteOutcome {
    match tb.cmp(&pn) {
        std::cmp::Ordering::Greater => VoteOutcome::Decided(Label::Tb),
        std::cmp::Ordering::Less => VoteOutcome::Decided(Label::Pneumonia),
        std::cmp::Ordering::Equal => VoteOutcome::Undetermined,
    }
}

pub fn vote_label(panel: &VotePanel, policy: &ConfidencePolicy) -> VoteOutcome {
    let (tb, pn) = tally_votes(panel, policy);
    outcome_from_tally(tb, pn)
}

/// Plain majority of hard votes (P(TB) >= 0.5 votes TB). A level vote,
/// only possible with an even panel, resolves to TB.
pub fn hard_majority(panel: &VotePanel) -> Label {
    let tb = panel.probs.iter().filter(|&&p| p >= 0.5).count();
    Label::from_tb(2 * tb >= panel.len())
}

/// Fitted learners sharing one input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleLayer {
    pub learners: Vec<TrainedLearner>,
    /// Fold count used for out-of-fold meta-features; 0 if none were made.
    pub folds: usize,
}

impl EnsembleLayer {
    /// Fits every spec on the full data, without meta-features.
    pub fn fit(specs: &[LearnerSpec], x: &[Vec<f64>], y: &[Label]) -> Result<Self> {
        check_layer_size(specs)?;
        let learners = specs
            .par_iter()
            .map(|s| learners::fit(s, x, y))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { learners, folds: 0 })
    }

    pub fn n_features(&self) -> usize {
        self.learners.first().map_or(0, |l| l.n_features)
    }

    pub fn len(&self) -> usize {
        self.learners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.learners.is_empty()
    }

    /// Each learner's P(TB) for `x`.
    pub fn meta_features(&self, x: &[f64]) -> Result<VotePanel> {
        let probs = self
            .learners
            .iter()
            .map(|l| l.predict_proba(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(VotePanel { probs })
    }
}

fn check_layer_size(specs: &[LearnerSpec]) -> Result<()> {
    if specs.len() < 2 {
        return Err(TpisError::LayerTooSmall { needed: 2, got: specs.len() });
    }
    Ok(())
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(y: &[Label], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(TpisError::InvalidFolds(folds));
    }
    let mut rng = rng::seeded(seed);
    let mut assignment = vec![0usize; y.len()];
    for label in [Label::Pneumonia, Label::Tb] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == label).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    for f in 0..folds {
        let held: Vec<Label> = (0..y.len()).filter(|&i| assignment[i] == f).map(|i| y[i]).collect();
        let has_both = held.contains(&Label::Tb) && held.contains(&Label::Pneumonia);
        if !has_both {
            return Err(TpisError::DegenerateFold(f));
        }
    }
    Ok(assignment)
}

/// A fitted layer with its out-of-fold meta matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFit {
    pub layer: EnsembleLayer,
    /// `meta[i][j]`: P(TB) for row i from learner j refit without row i's fold.
    pub meta: Vec<Vec<f64>>,
    pub fold_of_row: Vec<usize>,
}

/// Fits each spec on all rows, and again per fold on the other folds to
/// produce leakage-free meta-features.
pub fn fit_layer(
    specs: &[LearnerSpec],
    x: &[Vec<f64>],
    y: &[Label],
    folds: usize,
    seed: u64,
) -> Result<LayerFit> {
    check_layer_size(specs)?;
    if x.len() != y.len() {
        return Err(TpisError::ShapeError { expected: x.len(), got: y.len() });
    }
    let fold_of_row = stratified_folds(y, folds, seed)?;
    let layer = EnsembleLayer::fit(specs, x, y)?;

    let jobs: Vec<(usize, usize)> = (0..folds).flat_map(|f| (0..specs.len()).map(move |j| (f, j))).collect();
    let fold_models = jobs
        .par_iter()
        .map(|&(f, j)| {
            let train: Vec<usize> = (0..x.len()).filter(|&i| fold_of_row[i] != f).collect();
            let tx: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let ty: Vec<Label> = train.iter().map(|&i| y[i]).collect();
            learners::fit(&specs[j], &tx, &ty)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut meta = vec![vec![0.0; specs.len()]; x.len()];
    for (i, row) in x.iter().enumerate() {
        let f = fold_of_row[i];
        for j in 0..specs.len() {
            meta[i][j] = fold_models[f * specs.len() + j].predict_proba(row)?;
        }
    }
    Ok(LayerFit {
        layer: EnsembleLayer { folds, ..layer },
        meta,
        fold_of_row,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::LearnerKind;

    fn panel(p: &[f64]) -> VotePanel {
        VotePanel::new(p.to_vec()).unwrap()
    }

    fn eps(e: f64) -> ConfidencePolicy {
        ConfidencePolicy::new(e, 0.51).unwrap()
    }

    #[test]
    fn tally_examples() {
        assert_eq!(tally_votes(&panel(&[0.9; 5]), &eps(0.4)), (5, 0));
        assert_eq!(tally_votes(&panel(&[0.5; 5]), &eps(0.4)), (5, 5));
        assert_eq!(tally_votes(&panel(&[0.9, 0.9, 0.9, 0.2, 0.2]), &eps(0.5)), (3, 2));
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence_from_tally(5, 0), 1.0);
        assert_eq!(confidence_from_tally(5, 5), 0.0);
        assert_eq!(confidence_from_tally(3, 1), 0.5);
        assert_eq!(confidence_from_tally(0, 0), 0.0);
        assert_eq!(confidence_score(&panel(&[0.9; 5]), &eps(0.4)), 1.0);
    }

    #[test]
    fn vote_examples() {
        assert_eq!(outcome_from_tally(5, 0), VoteOutcome::Decided(Label::Tb));
        assert_eq!(outcome_from_tally(5, 5), VoteOutcome::Undetermined);
        assert_eq!(outcome_from_tally(2, 3), VoteOutcome::Decided(Label::Pneumonia));
        assert_eq!(vote_label(&panel(&[0.5; 5]), &eps(0.4)), VoteOutcome::Undetermined);
    }

    #[test]
    fn hard_majority_examples() {
        assert_eq!(hard_majority(&panel(&[0.9, 0.8, 0.6, 0.1, 0.2])), Label::Tb);
        assert_eq!(hard_majority(&panel(&[0.1; 5])), Label::Pneumonia);
    }

    #[test]
    fn policy_validation() {
        assert!(ConfidencePolicy::new(0.0, 0.5).is_err());
        assert!(ConfidencePolicy::new(1.0, 0.5).is_err());
        assert!(ConfidencePolicy::new(0.4, -0.1).is_err());
        assert!(ConfidencePolicy::new(0.4, 1.01).is_ok());
        assert!(VotePanel::new(vec![1.2]).is_err());
    }

    #[test]
    fn routing_rule() {
        let p = ConfidencePolicy::default();
        assert!(p.routes(VoteOutcome::Decided(Label::Tb), 0.5));
        assert!(!p.routes(VoteOutcome::Decided(Label::Tb), 0.6));
        assert!(p.routes(VoteOutcome::Undetermined, 0.0));
        let zero = ConfidencePolicy::new(0.4, 0.0).unwrap();
        assert!(!zero.routes(VoteOutcome::Decided(Label::Pneumonia), 0.0));
        assert!(zero.routes(VoteOutcome::Undetermined, 0.0));
    }

    fn toy(n: usize) -> (Vec<Vec<f64>>, Vec<Label>) {
        (0..n)
            .map(|i| {
                let a = ((i * 37) % 101) as f64 / 100.0;
                let b = ((i * 53) % 97) as f64 / 96.0;
                (vec![a, b], Label::from_tb(a + 0.2 * b > 0.6))
            })
            .unzip()
    }

    fn default_specs() -> Vec<LearnerSpec> {
        [
            LearnerKind::Knn,
            LearnerKind::LogReg,
            LearnerKind::LinearSvm,
            LearnerKind::DecisionTree,
            LearnerKind::RandomForest,
        ]
        .into_iter()
        .enumerate()
        .map(|(i, k)| LearnerSpec::default_for(k, i as u64))
        .collect()
    }

    #[test]
    fn layer_shapes() {
        let (x, y) = toy(120);
        let fit = fit_layer(&default_specs(), &x, &y, 5, 3).unwrap();
        assert_eq!(fit.meta.len(), 120);
        assert!(fit.meta.iter().all(|r| r.len() == 5 && r.iter().all(|p| (0.0..=1.0).contains(p))));
        assert_eq!(fit.layer.len(), 5);
        assert_eq!(fit.layer.folds, 5);
        let panel = fit.layer.meta_features(&x[0]).unwrap();
        assert_eq!(panel.len(), 5);
        for (j, l) in fit.layer.learners.iter().enumerate() {
            assert_eq!(panel.probs()[j], l.predict_proba(&x[0]).unwrap());
        }
    }

    #[test]
    fn fold_errors() {
        let (x, y) = toy(40);
        assert_eq!(fit_layer(&default_specs(), &x, &y, 1, 0).unwrap_err(), TpisError::InvalidFolds(1));
        let tiny_y: Vec<Label> = (0..12).map(|i| Label::from_tb(i < 3)).collect();
        let tiny_x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        assert!(matches!(
            fit_layer(&default_specs(), &tiny_x, &tiny_y, 5, 0),
            Err(TpisError::DegenerateFold(_))
        ));
        assert!(matches!(
            fit_layer(&default_specs()[..1], &x, &y, 5, 0),
            Err(TpisError::LayerTooSmall { .. })
        ));
    }

    #[test]
    fn duplicated_spec_gives_equal_columns() {
        let (x, y) = toy(60);
        let spec = LearnerSpec::default_for(LearnerKind::RandomForest, 8);
        let fit = fit_layer(&[spec.clone(), spec], &x, &y, 5, 1).unwrap();
        assert!(fit.meta.iter().all(|r| r[0] == r[1]));
        let panel = fit.layer.meta_features(&x[3]).unwrap();
        assert_eq!(panel.probs()[0], panel.probs()[1]);
    }

    #[test]
    fn out_of_fold_rows_never_seen() {
        // A 1-NN learner reproduces a row's own label when the row is in its
        // training set; with labels that are pure noise w.r.t. features, the
        // out-of-fold prediction must come from a different row.
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 10.0]).collect();
        let y: Vec<Label> = (0..50).map(|i| Label::from_tb(i % 2 == 0)).collect();
        let knn1 = LearnerSpec::new(
            crate::learners::LearnerParams::Knn(crate::learners::KnnParams { k: 1 }),
            0,
        );
        let fit = fit_layer(&[knn1.clone(), knn1], &x, &y, 5, 4).unwrap();
        for i in 0..50 {
            let f = fit.fold_of_row[i];
            let nearest = (0..50)
                .filter(|&j| fit.fold_of_row[j] != f)
                .min_by_key(|&j| (i.abs_diff(j), j))
                .unwrap();
            assert_ne!(nearest, i);
            assert_eq!(fit.meta[i][0], y[nearest].target(), "row {i}");
        }
        let counts: Vec<usize> = (0..5).map(|f| fit.fold_of_row.iter().filter(|&&g| g == f).count()).collect();
        assert_eq!(counts, vec![10; 5]);
    }
}
