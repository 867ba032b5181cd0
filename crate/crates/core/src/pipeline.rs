//! The assembled two-step model.
//!
//! Step 1 runs two stacked layers over the demographic and symptom block;
//! layer 2 sees only layer 1's meta-features and its ε-tally gives the
//! early label and the confidence score. Routed patients go to step 2, a
//! third layer over the lab/CXR block concatenated with layer 2's
//! meta-features, decided by plain majority.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    step_one_kinds, step_two_kinds, Dataset, Label, PatientRecord, StepOneFeatures, StepTwoFeatures, VoteOutcome,
    META_COLUMNS, STEP_ONE_COLUMNS, STEP_TWO_COLUMNS,
};
use crate::error::{Result, TpisError};
use crate::learners::{LearnerKind, LearnerParams, LearnerSpec};
use crate::preprocess::{BlockPreprocessor, PreprocessOptions};
use crate::rng::derive_seed;
use crate::stacking::{
    confidence_from_tally, fit_layer, hard_majority, outcome_from_tally, tally_votes, ConfidencePolicy,
    EnsembleLayer, VotePanel, DEFAULT_FOLDS,
};

/// Base learners of every layer, in meta-feature column order.
pub const DEFAULT_LAYER_KINDS: [LearnerKind; 5] = [
    LearnerKind::Knn,
    LearnerKind::LogReg,
    LearnerKind::LinearSvm,
    LearnerKind::DecisionTree,
    LearnerKind::RandomForest,
];

const STREAM_LAYER1: u64 = 1;
const STREAM_LAYER2: u64 = 2;
const STREAM_STEP2: u64 = 3;
const STREAM_FOLDS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TpisConfig {
    pub seed: u64,
    pub folds: usize,
    pub policy: ConfidencePolicy,
    pub preprocess: PreprocessOptions,
    pub layer1: Vec<LearnerParams>,
    pub layer2: Vec<LearnerParams>,
    pub step2: Vec<LearnerParams>,
}

impl Default for TpisConfig {
    fn default() -> Self {
        let layer: Vec<LearnerParams> = DEFAULT_LAYER_KINDS.iter().map(|k| k.default_params()).collect();
        Self {
            seed: 0,
            folds: DEFAULT_FOLDS,
            policy: ConfidencePolicy::default(),
            preprocess: PreprocessOptions::default(),
            layer1: layer.clone(),
            layer2: layer.clone(),
            step2: layer,
        }
    }
}

impl TpisConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    fn specs(&self, stream: u64, params: &[LearnerParams]) -> Vec<LearnerSpec> {
        let layer_seed = derive_seed(self.seed, stream);
        params
            .iter()
            .enumerate()
            .map(|(j, p)| LearnerSpec::new(p.clone(), derive_seed(layer_seed, j as u64)))
            .collect()
    }

    pub fn layer1_specs(&self) -> Vec<LearnerSpec> {
        self.specs(STREAM_LAYER1, &self.layer1)
    }

    pub fn layer2_specs(&self) -> Vec<LearnerSpec> {
        self.specs(STREAM_LAYER2, &self.layer2)
    }

    pub fn step2_specs(&self) -> Vec<LearnerSpec> {
        self.specs(STREAM_STEP2, &self.step2)
    }

    pub fn fold_seed(&self, stream: u64) -> u64 {
        derive_seed(self.seed, STREAM_FOLDS + stream)
    }

    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.folds < 2 {
            return Err(TpisError::InvalidFolds(self.folds));
        }
        for p in self.layer1.iter().chain(&self.layer2).chain(&self.step2) {
            p.validate()?;
        }
        if !(0.0..=1.0).contains(&self.preprocess.missing_threshold) || self.preprocess.impute_k == 0 {
            return Err(TpisError::ConfigError(
                "preprocess: missing_threshold must be in [0, 1] and impute_k >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Column names for each model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub step1: Vec<String>,
    pub step2: Vec<String>,
    pub meta: Vec<String>,
}

impl FeatureManifest {
    fn new(meta_len: usize) -> Self {
        let meta = if meta_len == META_COLUMNS.len() {
            META_COLUMNS.iter().map(|s| s.to_string()).collect()
        } else {
            (0..meta_len).map(|j| format!("meta_{j}")).collect()
        };
        Self {
            step1: STEP_ONE_COLUMNS.iter().map(|s| s.to_string()).collect(),
            step2: STEP_TWO_COLUMNS.iter().map(|s| s.to_string()).collect(),
            meta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpisModel {
    pub seed: u64,
    pub policy: ConfidencePolicy,
    pub manifest: FeatureManifest,
    pub step1_prep: BlockPreprocessor,
    pub step2_prep: BlockPreprocessor,
    pub layer1: EnsembleLayer,
    pub layer2: EnsembleLayer,
    pub step2_layer: EnsembleLayer,
}

/// Step-1 layers together with their out-of-fold training meta-features.
#[derive(Debug, Clone)]
pub struct StepOneFit {
    pub layer1: EnsembleLayer,
    pub layer2: EnsembleLayer,
    pub meta1: Vec<Vec<f64>>,
    pub meta2: Vec<Vec<f64>>,
}

/// Fits both step-1 layers on a prepared FS1 matrix.
pub fn fit_step_one(x1: &[Vec<f64>], y: &[Label], config: &TpisConfig) -> Result<StepOneFit> {
    let first = fit_layer(&config.layer1_specs(), x1, y, config.folds, config.fold_seed(STREAM_LAYER1))?;
    let second = fit_layer(&config.layer2_specs(), &first.meta, y, config.folds, config.fold_seed(STREAM_LAYER2))?;
    Ok(StepOneFit {
        layer1: first.layer,
        layer2: second.layer,
        meta1: first.meta,
        meta2: second.meta,
    })
}

pub(crate) fn step_one_rows(records: &[PatientRecord]) -> Vec<Vec<Option<f64>>> {
    records.iter().map(|r| r.step1.values().to_vec()).collect()
}

/// Step-2 raw rows; fails on a record without any observed step-2 cell.
pub(crate) fn step_two_rows(records: &[PatientRecord]) -> Result<Vec<Vec<Option<f64>>>> {
    records
        .iter()
        .map(|r| {
            r.observed_step2()
                .map(|s| s.values().to_vec())
                .ok_or_else(|| TpisError::StepTwoUnavailable(Some(r.id.clone())))
        })
        .collect()
}

pub(crate) fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

pub fn fit_tpis(train: &Dataset, config: &TpisConfig) -> Result<TpisModel> {
    fit_tpis_detailed(train, config).map(|fit| fit.model)
}

/// A fitted model plus the prepared training blocks and out-of-fold
/// layer-2 meta-features it was trained on.
#[derive(Debug, Clone)]
pub struct TpisFit {
    pub model: TpisModel,
    pub x1: Vec<Vec<f64>>,
    pub x2: Vec<Vec<f64>>,
    pub meta2: Vec<Vec<f64>>,
}

pub fn fit_tpis_detailed(train: &Dataset, config: &TpisConfig) -> Result<TpisFit> {
    config.validate()?;
    if train.is_empty() {
        return Err(TpisError::EmptyDataset);
    }
    let y = train.labels()?;
    if train.records().iter().all(|r| r.observed_step2().is_none()) {
        return Err(TpisError::StepTwoUnavailable(None));
    }
    let (step1_prep, x1) = BlockPreprocessor::fit(&step_one_rows(train.records()), &step_one_kinds(), &config.preprocess)?;
    let (step2_prep, x2) =
        BlockPreprocessor::fit(&step_two_rows(train.records())?, &step_two_kinds(), &config.preprocess)?;

    let step_one = fit_step_one(&x1, &y, config)?;
    let fs4: Vec<Vec<f64>> = x2.iter().zip(&step_one.meta2).map(|(a, m)| concat(a, m)).collect();
    let step2_layer = EnsembleLayer::fit(&config.step2_specs(), &fs4, &y)?;

    let model = TpisModel {
        seed: config.seed,
        policy: config.policy,
        manifest: FeatureManifest::new(step_one.layer2.len()),
        step1_prep,
        step2_prep,
        layer1: step_one.layer1,
        layer2: step_one.layer2,
        step2_layer,
    };
    Ok(TpisFit { model, x1, x2, meta2: step_one.meta2 })
}

/// Result of the early (step-1) diagnosis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyDiagnosis {
    pub outcome: VoteOutcome,
    pub cs: f64,
    pub tally: (usize, usize),
    pub meta1: VotePanel,
    pub meta2: VotePanel,
}

impl EarlyDiagnosis {
    /// A definite step-1 label for scoring; level votes fall back to the
    /// mean layer-2 probability.
    pub fn decided_label(&self) -> Label {
        self.outcome.label().unwrap_or_else(|| Label::from_tb(self.meta2.mean() >= 0.5))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalDiagnosis {
    pub label: Label,
    pub votes: VotePanel,
}

/// Combined ε-tally decision over a panel.
pub fn decide(panel: &VotePanel, policy: &ConfidencePolicy) -> (VoteOutcome, f64, (usize, usize)) {
    let (tb, pn) = tally_votes(panel, policy);
    (outcome_from_tally(tb, pn), confidence_from_tally(tb, pn), (tb, pn))
}

impl TpisModel {
    pub fn prepare_step_one(&self, features: &StepOneFeatures) -> Result<Vec<f64>> {
        self.step1_prep.transform(features.values())
    }

    pub fn prepare_step_two(&self, features: &StepTwoFeatures) -> Result<Vec<f64>> {
        if features.is_empty() {
            return Err(TpisError::StepTwoUnavailable(None));
        }
        self.step2_prep.transform(features.values())
    }

    /// Layer-1 panel, layer-2 panel, ε-tally label and confidence score.
    pub fn early_diagnose(&self, features: &StepOneFeatures) -> Result<EarlyDiagnosis> {
        let x = self.prepare_step_one(features)?;
        self.early_from_prepared(&x)
    }

    pub fn early_from_prepared(&self, x: &[f64]) -> Result<EarlyDiagnosis> {
        let meta1 = self.layer1.meta_features(x)?;
        let meta2 = self.layer2.meta_features(meta1.probs())?;
        let (outcome, cs, tally) = decide(&meta2, &self.policy);
        Ok(EarlyDiagnosis { outcome, cs, tally, meta1, meta2 })
    }

    /// Majority vote of the step-2 layer over `[step-2 block, meta2]`.
    pub fn final_diagnose(&self, meta2: &VotePanel, features: &StepTwoFeatures) -> Result<FinalDiagnosis> {
        let x2 = self.prepare_step_two(features)?;
        self.final_from_prepared(meta2, &x2)
    }

    pub fn final_from_prepared(&self, meta2: &VotePanel, x2: &[f64]) -> Result<FinalDiagnosis> {
        if meta2.len() != self.layer2.len() {
            return Err(TpisError::ShapeError { expected: self.layer2.len(), got: meta2.len() });
        }
        let votes = self.step2_layer.meta_features(&concat(x2, meta2.probs()))?;
        Ok(FinalDiagnosis { label: hard_majority(&votes), votes })
    }

    pub fn routes(&self, early: &EarlyDiagnosis) -> bool {
        self.policy.routes(early.outcome, early.cs)
    }

    /// Same model under a different routing policy.
    pub fn with_policy(&self, policy: ConfidencePolicy) -> Result<Self> {
        policy.validate()?;
        Ok(Self { policy, ..self.clone() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Step1,
    Step2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageOutcome {
    pub id: String,
    pub true_label: Option<Label>,
    pub early_label: VoteOutcome,
    pub cs: f64,
    pub tally: (usize, usize),
    pub routed: bool,
    pub final_label: Label,
    pub stage_decided: Stage,
}

/// Table-7 cell group: patients of one true class with one exact CS value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsBucket {
    pub cs: f64,
    pub predicted_pneumonia: usize,
    pub predicted_tb: usize,
    pub undetermined: usize,
}

impl CsBucket {
    pub fn total(&self) -> usize {
        self.predicted_pneumonia + self.predicted_tb + self.undetermined
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRouting {
    pub label: Label,
    pub n: usize,
    pub routed: usize,
    pub confident_right: usize,
    pub confident_wrong: usize,
    pub step2_right: usize,
    pub step2_wrong: usize,
    pub buckets: Vec<CsBucket>,
}

impl ClassRouting {
    fn frac(&self, count: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            count as f64 / self.n as f64
        }
    }

    pub fn routed_fraction(&self) -> f64 {
        self.frac(self.routed)
    }

    pub fn confident_wrong_fraction(&self) -> f64 {
        self.frac(self.confident_wrong)
    }

    pub fn step2_wrong_fraction(&self) -> f64 {
        if self.routed == 0 {
            0.0
        } else {
            self.step2_wrong as f64 / self.routed as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub route_threshold: f64,
    pub epsilon: f64,
    /// Pneumonia first, then TB.
    pub classes: Vec<ClassRouting>,
    pub correct: usize,
    pub evaluated: usize,
    pub accuracy: f64,
    pub routed_fraction: f64,
}

impl RoutingReport {
    pub fn class(&self, label: Label) -> &ClassRouting {
        self.classes.iter().find(|c| c.label == label).expect("both classes reported")
    }

    /// Table-7-shaped step-1 rows for [`aggregate_accuracy`].
    pub fn step_one_table(&self) -> Vec<StepOneClassRow> {
        self.classes
            .iter()
            .map(|c| {
                let mut routed_buckets = Vec::new();
                for b in &c.buckets {
                    if b.cs < self.route_threshold {
                        routed_buckets.push(c.frac(b.total()));
                    } else if b.undetermined > 0 {
                        routed_buckets.push(c.frac(b.undetermined));
                    }
                }
                StepOneClassRow {
                    class_size: c.n,
                    routed_buckets,
                    confident_wrong: c.confident_wrong_fraction(),
                    confident_right: c.frac(c.confident_right),
                }
            })
            .collect()
    }

    /// Table-8-shaped step-2 rows for [`aggregate_accuracy`].
    pub fn step_two_table(&self) -> Vec<StepTwoClassRow> {
        self.classes
            .iter()
            .map(|c| StepTwoClassRow {
                wrong_of_routed: c.step2_wrong_fraction(),
                right_of_routed: if c.routed == 0 { 0.0 } else { 1.0 - c.step2_wrong_fraction() },
            })
            .collect()
    }

    /// Aligned text rendering of the CS-bucket and step-2 tables.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let pct = |count: usize, n: usize| if n == 0 { 0.0 } else { 100.0 * count as f64 / n as f64 };
        let _ = writeln!(
            out,
            "Step-1 outcomes by confidence score (epsilon = {}, route if CS < {})",
            self.epsilon, self.route_threshold
        );
        for c in &self.classes {
            let _ = writeln!(out, "  Real class {} (n = {})", c.label, c.n);
            let _ = writeln!(out, "    {:>8}  {:>12}  {:>12}  {:>12}  {:>7}", "CS", "pred P", "pred TB", "suspicious", "routed");
            for b in &c.buckets {
                let routed = b.cs < self.route_threshold || b.undetermined > 0;
                let _ = writeln!(
                    out,
                    "    {:>8.4}  {:>11.2}%  {:>11.2}%  {:>11.2}%  {:>7}",
                    b.cs,
                    pct(b.predicted_pneumonia, c.n),
                    pct(b.predicted_tb, c.n),
                    pct(b.undetermined, c.n),
                    if routed { "yes" } else { "no" },
                );
            }
            let _ = writeln!(
                out,
                "    routed {:.2}%, confident errors {:.2}%",
                100.0 * c.routed_fraction(),
                100.0 * c.confident_wrong_fraction()
            );
        }
        let _ = writeln!(out, "Step-2 outcomes for routed patients");
        let _ = writeln!(out, "    {:>10}  {:>10}  {:>10}", "real", "right", "wrong");
        for c in &self.classes {
            let _ = writeln!(
                out,
                "    {:>10}  {:>9.2}%  {:>9.2}%",
                c.label.code(),
                pct(c.step2_right, c.routed),
                pct(c.step2_wrong, c.routed)
            );
        }
        let _ = writeln!(
            out,
            "Routed {:.2}% overall; aggregate accuracy {:.2}% ({} of {} correct)",
            100.0 * self.routed_fraction,
            100.0 * self.accuracy,
            self.correct,
            self.evaluated
        );
        out
    }
}

/// Per-record outcomes, per-record failures and the aggregate report.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowResult {
    pub outcomes: Vec<TriageOutcome>,
    pub failures: Vec<(String, TpisError)>,
    pub report: RoutingReport,
}

fn triage(model: &TpisModel, record: &PatientRecord) -> Result<TriageOutcome> {
    let early = model.early_diagnose(&record.step1)?;
    let routed = model.routes(&early);
    let (final_label, stage) = if routed {
        let step2 = record
            .observed_step2()
            .ok_or_else(|| TpisError::StepTwoUnavailable(Some(record.id.clone())))?;
        (model.final_diagnose(&early.meta2, step2)?.label, Stage::Step2)
    } else {
        (early.decided_label(), Stage::Step1)
    };
    Ok(TriageOutcome {
        id: record.id.clone(),
        true_label: record.label,
        early_label: early.outcome,
        cs: early.cs,
        tally: early.tally,
        routed,
        final_label,
        stage_decided: stage,
    })
}

/// Early diagnosis for every record, step 2 for routed ones, and the
/// routing report over labelled records.
pub fn run_workflow(model: &TpisModel, cohort: &Dataset) -> WorkflowResult {
    let results: Vec<Result<TriageOutcome>> = cohort.records().par_iter().map(|r| triage(model, r)).collect();
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (record, result) in cohort.records().iter().zip(results) {
        match result {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push((record.id.clone(), e)),
        }
    }
    let report = routing_report(&outcomes, &model.policy);
    WorkflowResult { outcomes, failures, report }
}

pub fn routing_report(outcomes: &[TriageOutcome], policy: &ConfidencePolicy) -> RoutingReport {
    let mut classes = Vec::new();
    let mut correct = 0;
    let mut evaluated = 0;
    let mut routed_total = 0;
    for label in [Label::Pneumonia, Label::Tb] {
        let mut c = ClassRouting {
            label,
            n: 0,
            routed: 0,
            confident_right: 0,
            confident_wrong: 0,
            step2_right: 0,
            step2_wrong: 0,
            buckets: Vec::new(),
        };
        // Non-negative floats order the same as their bit patterns.
        let mut buckets: BTreeMap<u64, CsBucket> = BTreeMap::new();
        for o in outcomes.iter().filter(|o| o.true_label == Some(label)) {
            c.n += 1;
            let b = buckets.entry(o.cs.to_bits()).or_insert(CsBucket {
                cs: o.cs,
                predicted_pneumonia: 0,
                predicted_tb: 0,
                undetermined: 0,
            });
            match o.early_label {
                VoteOutcome::Decided(Label::Tb) => b.predicted_tb += 1,
                VoteOutcome::Decided(Label::Pneumonia) => b.predicted_pneumonia += 1,
                VoteOutcome::Undetermined => b.undetermined += 1,
            }
            let right = o.final_label == label;
            match (o.routed, right) {
                (true, true) => c.step2_right += 1,
                (true, false) => c.step2_wrong += 1,
                (false, true) => c.confident_right += 1,
                (false, false) => c.confident_wrong += 1,
            }
            if o.routed {
                c.routed += 1;
            }
            if right {
                correct += 1;
            }
        }
        c.buckets = buckets.into_values().collect();
        evaluated += c.n;
        routed_total += c.routed;
        classes.push(c);
    }
    let frac = |a: usize| if evaluated == 0 { 0.0 } else { a as f64 / evaluated as f64 };
    RoutingReport {
        route_threshold: policy.route_threshold,
        epsilon: policy.epsilon,
        classes,
        correct,
        evaluated,
        accuracy: frac(correct),
        routed_fraction: frac(routed_total),
    }
}

/// Step-1 fractions of one true class, relative to the class size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOneClassRow {
    pub class_size: usize,
    /// Fractions of the class in each routed CS bucket.
    pub routed_buckets: Vec<f64>,
    /// Kept at step 1 and misdiagnosed.
    pub confident_wrong: f64,
    /// Kept at step 1 and diagnosed correctly.
    pub confident_right: f64,
}

/// Step-2 fractions of one true class, relative to its routed patients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTwoClassRow {
    pub wrong_of_routed: f64,
    pub right_of_routed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateAccuracy {
    pub misdiagnosed: u64,
    pub total: u64,
    pub accuracy: f64,
}

/// Tolerance on column sums of percentage tables rounded to whole percents.
pub const TABLE_SUM_TOLERANCE: f64 = 0.025;

/// Nearest whole patient, halves rounded up. The small offset absorbs
/// products like `0.5 - 1e-17` that are exact halves on paper.
pub fn round_patients(x: f64) -> u64 {
    (x + 0.5 + 1e-9).floor().max(0.0) as u64
}

/// Overall accuracy when only routed patients are re-decided at step 2.
///
/// Per class, misdiagnosed patients are the confident step-1 errors plus
/// step-2 errors among the routed, each rounded to whole patients.
pub fn aggregate_accuracy(step1: &[StepOneClassRow], step2: &[StepTwoClassRow]) -> Result<AggregateAccuracy> {
    if step1.len() != step2.len() || step1.is_empty() {
        return Err(TpisError::InvalidTable(format!(
            "{} step-1 rows vs {} step-2 rows",
            step1.len(),
            step2.len()
        )));
    }
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    let mut misdiagnosed = 0u64;
    let mut total = 0u64;
    for (i, (one, two)) in step1.iter().zip(step2).enumerate() {
        if one.class_size == 0 {
            return Err(TpisError::InvalidTable(format!("class {i}: size must be positive")));
        }
        let cells = one.routed_buckets.iter().copied().chain([one.confident_wrong, one.confident_right]);
        if !cells.clone().all(in_unit) || !in_unit(two.wrong_of_routed) || !in_unit(two.right_of_routed) {
            return Err(TpisError::InvalidTable(format!("class {i}: fractions must lie in [0, 1]")));
        }
        let column: f64 = cells.sum();
        if column > 1.0 + TABLE_SUM_TOLERANCE {
            return Err(TpisError::InvalidTable(format!("class {i}: step-1 column sums to {column}")));
        }
        if two.wrong_of_routed + two.right_of_routed > 1.0 + TABLE_SUM_TOLERANCE {
            return Err(TpisError::InvalidTable(format!("class {i}: step-2 column exceeds 1")));
        }
        let n = one.class_size as f64;
        let routed: f64 = one.routed_buckets.iter().sum();
        misdiagnosed += round_patients(one.confident_wrong * n) + round_patients(two.wrong_of_routed * routed * n);
        total += one.class_size as u64;
    }
    Ok(AggregateAccuracy {
        misdiagnosed,
        total,
        accuracy: 1.0 - misdiagnosed as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_tables() -> (Vec<StepOneClassRow>, Vec<StepTwoClassRow>) {
        (
            vec![
                StepOneClassRow {
                    class_size: 119,
                    routed_buckets: vec![0.06, 0.05, 0.04],
                    confident_wrong: 0.02,
                    confident_right: 0.83,
                },
                StepOneClassRow {
                    class_size: 80,
                    routed_buckets: vec![0.01, 0.18, 0.02],
                    confident_wrong: 0.01,
                    confident_right: 0.78,
                },
            ],
            vec![
                StepTwoClassRow { wrong_of_routed: 0.06, right_of_routed: 0.94 },
                StepTwoClassRow { wrong_of_routed: 0.17, right_of_routed: 0.83 },
            ],
        )
    }

    #[test]
    fn published_tables_give_seven_errors() {
        let (one, two) = paper_tables();
        let agg = aggregate_accuracy(&one, &two).unwrap();
        assert_eq!(agg.misdiagnosed, 7);
        assert_eq!(agg.total, 199);
        assert!((100.0 * agg.accuracy - 96.48).abs() <= 0.01);
    }

    #[test]
    fn perfect_tables() {
        let (mut one, mut two) = paper_tables();
        for r in &mut one {
            r.confident_right += r.confident_wrong;
            r.confident_wrong = 0.0;
        }
        two.fill(StepTwoClassRow { wrong_of_routed: 0.0, right_of_routed: 1.0 });
        assert_eq!(aggregate_accuracy(&one, &two).unwrap().accuracy, 1.0);
    }

    #[test]
    fn nobody_routed() {
        let one = vec![
            StepOneClassRow { class_size: 119, routed_buckets: vec![], confident_wrong: 0.03, confident_right: 0.97 },
            StepOneClassRow { class_size: 80, routed_buckets: vec![], confident_wrong: 0.01, confident_right: 0.99 },
        ];
        let two = vec![StepTwoClassRow { wrong_of_routed: 0.0, right_of_routed: 0.0 }; 2];
        let agg = aggregate_accuracy(&one, &two).unwrap();
        assert_eq!(agg.misdiagnosed, 5);
        assert!((100.0 * agg.accuracy - 97.49).abs() < 0.005);
    }

    #[test]
    fn inconsistent_tables_rejected() {
        let (mut one, two) = paper_tables();
        one[0].confident_right = 0.95;
        assert!(matches!(aggregate_accuracy(&one, &two), Err(TpisError::InvalidTable(_))));
        let (one, _) = paper_tables();
        assert!(aggregate_accuracy(&one, &[]).is_err());
        let (mut one, two) = paper_tables();
        one[1].class_size = 0;
        assert!(aggregate_accuracy(&one, &two).is_err());
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_patients(2.5), 3);
        assert_eq!(round_patients(2.4999), 2);
        assert_eq!(round_patients(0.17 * 0.21 * 80.0), 3);
        assert_eq!(round_patients(0.06 * 0.15 * 119.0), 1);
    }

    #[test]
    fn config_seeds_are_distinct_per_layer() {
        let c = TpisConfig::with_seed(7);
        let seeds: Vec<u64> = c
            .layer1_specs()
            .iter()
            .chain(&c.layer2_specs())
            .chain(&c.step2_specs())
            .map(|s| s.seed)
            .collect();
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), 15);
    }
}
