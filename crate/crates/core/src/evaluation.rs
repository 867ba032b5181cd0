//! Repeated balanced-split evaluation and the model comparison harness.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, FeatureSetId, Label};
use crate::error::{Result, TpisError};
use crate::learners::{self, LearnerKind, LearnerParams, LearnerSpec};
use crate::metrics::{evaluate_scores, roc_auc, MetricReport, RocCurve, RunMetrics};
use crate::pipeline::{concat, decide, fit_tpis_detailed, step_one_rows, step_two_rows, TpisConfig, TpisFit};
use crate::preprocess::{balanced_split, SplitSpec};
use crate::rng::derive_seed;
use crate::stacking::VotePanel;

pub const DEFAULT_RUNS: usize = 30;
pub const DEFAULT_TRAIN_PER_CLASS: usize = 60;

/// One row of a comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    /// A single learner on the table's feature set.
    Single(LearnerKind),
    /// ε-tally of the first stacked layer.
    TpisLayer1,
    /// ε-tally of the second stacked layer (the early diagnosis).
    TpisStep1,
    /// Step 2 applied to every patient.
    TpisStep2,
    /// Step 1, with routed patients re-decided by step 2.
    TpisRouted,
}

impl Recipe {
    pub fn name(&self) -> String {
        match self {
            Recipe::Single(k) => k.short_name().to_string(),
            Recipe::TpisLayer1 => "TPIS step 1, layer 1".into(),
            Recipe::TpisStep1 => "TPIS step 1, layer 2".into(),
            Recipe::TpisStep2 => "TPIS step 2".into(),
            Recipe::TpisRouted => "TPIS routed".into(),
        }
    }

    fn needs_tpis(&self, fs: FeatureSetId) -> bool {
        !matches!(self, Recipe::Single(_)) || fs.needs_meta()
    }
}

impl std::str::FromStr for Recipe {
    type Err = TpisError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tpis-layer1" => Ok(Recipe::TpisLayer1),
            "tpis-step1" => Ok(Recipe::TpisStep1),
            "tpis-step2" => Ok(Recipe::TpisStep2),
            "tpis-routed" => Ok(Recipe::TpisRouted),
            other => other.parse::<LearnerKind>().map(Recipe::Single),
        }
    }
}

const TABLE_SINGLES: [LearnerKind; 6] = [
    LearnerKind::DecisionTree,
    LearnerKind::LogReg,
    LearnerKind::LinearSvm,
    LearnerKind::RandomForest,
    LearnerKind::AdaBoost,
    LearnerKind::Gbt,
];

/// Early-diagnosis comparison on FS1: six single learners and both step-1 layers.
pub fn early_table_recipes() -> Vec<Recipe> {
    let mut v: Vec<Recipe> = TABLE_SINGLES.iter().map(|&k| Recipe::Single(k)).collect();
    v.extend([Recipe::TpisLayer1, Recipe::TpisStep1]);
    v
}

/// Final-diagnosis comparison on FS4: six single learners and step 2.
pub fn final_table_recipes() -> Vec<Recipe> {
    let mut v = single_learner_recipes();
    v.push(Recipe::TpisStep2);
    v
}

/// The six single learners compared across feature sets.
pub fn single_learner_recipes() -> Vec<Recipe> {
    TABLE_SINGLES.iter().map(|&k| Recipe::Single(k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub runs: usize,
    pub train_per_class: usize,
    pub seed: u64,
    pub tpis: TpisConfig,
    /// Hyperparameters for single-learner rows; kinds not listed use defaults.
    pub learners: Vec<LearnerParams>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            runs: DEFAULT_RUNS,
            train_per_class: DEFAULT_TRAIN_PER_CLASS,
            seed: 0,
            tpis: TpisConfig::default(),
            learners: Vec::new(),
        }
    }
}

impl EvalSettings {
    fn params_for(&self, kind: LearnerKind) -> LearnerParams {
        self.learners.iter().find(|p| p.kind() == kind).cloned().unwrap_or_else(|| kind.default_params())
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(TpisError::ConfigError("runs must be at least 1".into()));
        }
        if self.train_per_class == 0 {
            return Err(TpisError::ConfigError("train_per_class must be at least 1".into()));
        }
        for p in &self.learners {
            p.validate()?;
        }
        self.tpis.validate()
    }
}

/// Per-recipe test-set scores and labels of one run.
struct RunOutput {
    metrics: Vec<RunMetrics>,
    scored: Vec<(Vec<f64>, Vec<Label>)>,
}

struct Prepared {
    x1: Vec<Vec<f64>>,
    x2: Option<Vec<Vec<f64>>>,
    meta2: Option<Vec<Vec<f64>>>,
}

impl Prepared {
    fn features(&self, fs: FeatureSetId) -> Result<Vec<Vec<f64>>> {
        let x2 = || self.x2.as_ref().ok_or(TpisError::StepTwoUnavailable(None));
        let meta = || self.meta2.as_ref().ok_or(TpisError::MissingMetaFeatures(fs.name()));
        Ok(match fs {
            FeatureSetId::FS1 => self.x1.clone(),
            FeatureSetId::FS2 => x2()?.clone(),
            FeatureSetId::FS3 => meta()?.clone(),
            FeatureSetId::FS4 => x2()?.iter().zip(meta()?).map(|(a, b)| concat(a, b)).collect(),
            FeatureSetId::FS5 => self.x1.iter().zip(x2()?).map(|(a, b)| concat(a, b)).collect(),
        })
    }
}

fn label_from_mean(panel: &VotePanel, outcome: crate::domain::VoteOutcome) -> Label {
    outcome.label().unwrap_or_else(|| Label::from_tb(panel.mean() >= 0.5))
}

fn run_once(
    dataset: &Dataset,
    fs: FeatureSetId,
    recipes: &[Recipe],
    settings: &EvalSettings,
    run: usize,
) -> Result<RunOutput> {
    let run_seed = derive_seed(settings.seed, run as u64);
    let (train, test) = balanced_split(
        dataset,
        SplitSpec { train_per_class: settings.train_per_class, seed: derive_seed(run_seed, 0) },
    )?;
    let y_train = train.labels()?;
    let y_test = test.labels()?;
    let need_two = fs.uses_step_two() || recipes.iter().any(|r| r.needs_tpis(fs));

    let tpis_fit: Option<TpisFit> = if recipes.iter().any(|r| r.needs_tpis(fs)) {
        let config = TpisConfig { seed: derive_seed(run_seed, 1), ..settings.tpis.clone() };
        Some(fit_tpis_detailed(&train, &config)?)
    } else {
        None
    };

    let (train_prep, test_prep) = match &tpis_fit {
        Some(fit) => {
            let m = &fit.model;
            let x1 = step_one_rows(test.records())
                .iter()
                .map(|r| m.step1_prep.transform(r))
                .collect::<Result<Vec<_>>>()?;
            let x2 = step_two_rows(test.records())?
                .iter()
                .map(|r| m.step2_prep.transform(r))
                .collect::<Result<Vec<_>>>()?;
            let meta2 = x1
                .iter()
                .map(|x| m.early_from_prepared(x).map(|e| e.meta2.probs().to_vec()))
                .collect::<Result<Vec<_>>>()?;
            (
                Prepared { x1: fit.x1.clone(), x2: Some(fit.x2.clone()), meta2: Some(fit.meta2.clone()) },
                Prepared { x1, x2: Some(x2), meta2: Some(meta2) },
            )
        }
        None => {
            use crate::domain::{step_one_kinds, step_two_kinds};
            use crate::preprocess::BlockPreprocessor;
            let opts = &settings.tpis.preprocess;
            let (p1, x1) = BlockPreprocessor::fit(&step_one_rows(train.records()), &step_one_kinds(), opts)?;
            let t1 = step_one_rows(test.records()).iter().map(|r| p1.transform(r)).collect::<Result<Vec<_>>>()?;
            let (x2, t2) = if need_two {
                let (p2, x2) = BlockPreprocessor::fit(&step_two_rows(train.records())?, &step_two_kinds(), opts)?;
                let t2 =
                    step_two_rows(test.records())?.iter().map(|r| p2.transform(r)).collect::<Result<Vec<_>>>()?;
                (Some(x2), Some(t2))
            } else {
                (None, None)
            };
            (Prepared { x1, x2, meta2: None }, Prepared { x1: t1, x2: t2, meta2: None })
        }
    };

    let mut metrics = Vec::with_capacity(recipes.len());
    let mut scored = Vec::with_capacity(recipes.len());
    for (j, recipe) in recipes.iter().enumerate() {
        let (scores, predicted): (Vec<f64>, Vec<Label>) = match recipe {
            Recipe::Single(kind) => {
                let spec = LearnerSpec::new(settings.params_for(*kind), derive_seed(run_seed, 2 + j as u64));
                let model = learners::fit(&spec, &train_prep.features(fs)?, &y_train)?;
                test_prep
                    .features(fs)?
                    .iter()
                    .map(|x| model.predict_proba(x).map(|p| (p, Label::from_tb(p >= 0.5))))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip()
            }
            tpis_recipe => {
                let m = &tpis_fit.as_ref().expect("fitted for TPIS recipes").model;
                let x2 = test_prep.x2.as_ref().expect("prepared with TPIS");
                test_prep
                    .x1
                    .iter()
                    .zip(x2)
                    .map(|(x1, x2)| -> Result<(f64, Label)> {
                        let early = m.early_from_prepared(x1)?;
                        Ok(match tpis_recipe {
                            Recipe::TpisLayer1 => {
                                let (outcome, _, _) = decide(&early.meta1, &m.policy);
                                (early.meta1.mean(), label_from_mean(&early.meta1, outcome))
                            }
                            Recipe::TpisStep1 => (early.meta2.mean(), early.decided_label()),
                            Recipe::TpisStep2 => {
                                let fin = m.final_from_prepared(&early.meta2, x2)?;
                                (fin.votes.mean(), fin.label)
                            }
                            _ => {
                                if m.routes(&early) {
                                    let fin = m.final_from_prepared(&early.meta2, x2)?;
                                    (fin.votes.mean(), fin.label)
                                } else {
                                    (early.meta2.mean(), early.decided_label())
                                }
                            }
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip()
            }
        };
        metrics.push(evaluate_scores(&scores, &predicted, &y_test)?);
        scored.push((scores, y_test.clone()));
    }
    Ok(RunOutput { metrics, scored })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub feature_set: FeatureSetId,
    pub model: String,
    pub report: MetricReport,
    /// ROC of test scores pooled over all runs.
    pub pooled_roc: RocCurve,
    pub pooled_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Evaluates every recipe on the same `runs` balanced splits of `dataset`.
/// Recipes that need the step-1 model share one fit per run.
pub fn compare_models(
    fs: FeatureSetId,
    recipes: &[Recipe],
    dataset: &Dataset,
    settings: &EvalSettings,
) -> Result<ComparisonTable> {
    if recipes.is_empty() {
        return Err(TpisError::EmptyRecipeList);
    }
    settings.validate()?;
    let outputs: Vec<RunOutput> = (0..settings.runs)
        .into_par_iter()
        .map(|r| run_once(dataset, fs, recipes, settings, r))
        .collect::<Result<Vec<_>>>()?;
    let rows = recipes
        .iter()
        .enumerate()
        .map(|(j, recipe)| {
            let runs: Vec<RunMetrics> = outputs.iter().map(|o| o.metrics[j]).collect();
            let mut scores = Vec::new();
            let mut truth = Vec::new();
            for o in &outputs {
                scores.extend_from_slice(&o.scored[j].0);
                truth.extend_from_slice(&o.scored[j].1);
            }
            let (pooled_roc, pooled_auc) = roc_auc(&scores, &truth)?;
            Ok(ComparisonRow {
                feature_set: fs,
                model: recipe.name(),
                report: MetricReport::from_runs(&runs)?,
                pooled_roc,
                pooled_auc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonTable { rows })
}

pub fn repeated_eval(
    recipe: Recipe,
    fs: FeatureSetId,
    dataset: &Dataset,
    settings: &EvalSettings,
) -> Result<MetricReport> {
    let mut table = compare_models(fs, &[recipe], dataset, settings)?;
    Ok(table.rows.remove(0).report)
}

const METRIC_NAMES: [&str; 5] = ["accuracy", "auc", "precision", "recall", "f_score"];

impl ComparisonTable {
    pub fn extend(&mut self, other: ComparisonTable) {
        self.rows.extend(other.rows);
    }

    pub fn row(&self, model: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// One line per row; means and half-widths as fractions in full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature_set,model,runs");
        for m in METRIC_NAMES {
            let _ = write!(out, ",{m}_mean,{m}_half_width");
        }
        out.push_str(",degenerate_runs\n");
        for row in &self.rows {
            let _ = write!(out, "{},\"{}\",{}", row.feature_set, row.model, row.report.runs);
            for e in row.report.estimates() {
                let _ = write!(out, ",{},{}", e.mean, e.half_width);
            }
            let _ = writeln!(out, ",{}", row.report.degenerate_runs);
        }
        out
    }

    /// Aligned text with percentages `mean±half-width`.
    pub fn to_text(&self) -> String {
        let headers = ["Features", "Model", "Accuracy", "AUC", "Precision", "Recall", "F-Score"];
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|row| {
                let mut v = vec![row.feature_set.to_string(), row.model.clone()];
                v.extend(
                    row.report
                        .estimates()
                        .iter()
                        .map(|e| format!("{:.2}±{:.2}", 100.0 * e.mean, 100.0 * e.half_width)),
                );
                v
            })
            .collect();
        let widths: Vec<usize> = (0..headers.len())
            .map(|c| cells.iter().map(|r| r[c].chars().count()).chain([headers[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |fields: Vec<&str>| -> String {
            let parts: Vec<String> = fields
                .iter()
                .enumerate()
                .map(|(c, f)| {
                    let pad = widths[c] - f.chars().count();
                    if c < 2 {
                        format!("{f}{}", " ".repeat(pad))
                    } else {
                        format!("{}{f}", " ".repeat(pad))
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = line(headers.to_vec());
        out.push('\n');
        for r in &cells {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }

    /// `model,fpr,tpr` rows of the pooled ROC curves.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("feature_set,model,fpr,tpr\n");
        for row in &self.rows {
            for (x, y) in &row.pooled_roc.points {
                let _ = writeln!(out, "{},\"{}\",{x},{y}", row.feature_set, row.model);
            }
        }
        out
    }
}
