//! Shared vocabulary: labels, patient records, feature-set selectors and
//! confusion matrices.
//!
//! Binary features use a single convention throughout the crate:
//! Yes / Abnormal / Male encode as `1.0`, No / Normal / Female as `0.0`.
//! Missing cells are `None`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TpisError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Label {
    /// Positive class.
    #[serde(rename = "TB")]
    Tb,
    #[serde(rename = "P")]
    Pneumonia,
}

impl Label {
    pub fn is_tb(self) -> bool {
        matches!(self, Label::Tb)
    }

    pub fn from_tb(is_tb: bool) -> Self {
        if is_tb {
            Label::Tb
        } else {
            Label::Pneumonia
        }
    }

    /// `1.0` for TB, `0.0` for pneumonia.
    pub fn target(self) -> f64 {
        if self.is_tb() {
            1.0
        } else {
            0.0
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Label::Tb => "TB",
            Label::Pneumonia => "P",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Label {
    type Err = TpisError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TB" => Ok(Label::Tb),
            "P" => Ok(Label::Pneumonia),
            other => Err(TpisError::InvalidFeature {
                field: "label".into(),
                reason: format!("`{other}` is not one of TB, P"),
            }),
        }
    }
}

/// Outcome of an ε-tally vote, which may end level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteOutcome {
    Decided(Label),
    Undetermined,
}

impl VoteOutcome {
    pub fn label(self) -> Option<Label> {
        match self {
            VoteOutcome::Decided(label) => Some(label),
            VoteOutcome::Undetermined => None,
        }
    }
}

impl fmt::Display for VoteOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VoteOutcome::Decided(label) => label.fmt(f),
            VoteOutcome::Undetermined => f.write_str("undetermined"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Binary,
}

pub const STEP_ONE_LEN: usize = 18;
pub const STEP_TWO_LEN: usize = 10;

/// Column order of the step-1 block (FS1).
pub const STEP_ONE_COLUMNS: [&str; STEP_ONE_LEN] = [
    "age",
    "gender",
    "cough",
    "sputum",
    "bloody_sputum",
    "fever",
    "shaking",
    "smoking",
    "joint_pain",
    "edema",
    "asthma",
    "diabetes",
    "cyanosis",
    "weight_loss",
    "weakness",
    "lung_sound_abnormal",
    "dyspnea",
    "orthopnea",
];

/// Column order of the step-2 block (FS2).
pub const STEP_TWO_COLUMNS: [&str; STEP_TWO_LEN] = [
    "wbc",
    "hemoglobin",
    "hematocrit",
    "neutrophil",
    "lymphocyte",
    "mcv",
    "crp",
    "esr",
    "lung_abnormalities_cxr",
    "white_spots_cxr",
];

/// Meta-feature column names for the default five-learner layer.
pub const META_COLUMNS: [&str; 5] = ["meta_knn", "meta_lr", "meta_svm", "meta_dt", "meta_rf"];

pub const AGE_RANGE: (f64, f64) = (0.0, 130.0);

pub fn step_one_kinds() -> Vec<ColumnKind> {
    (0..STEP_ONE_LEN)
        .map(|i| if i == 0 { ColumnKind::Numeric } else { ColumnKind::Binary })
        .collect()
}

pub fn step_two_kinds() -> Vec<ColumnKind> {
    (0..STEP_TWO_LEN)
        .map(|i| if i < 8 { ColumnKind::Numeric } else { ColumnKind::Binary })
        .collect()
}

fn check_binary(field: &str, value: Option<f64>) -> Result<()> {
    match value {
        Some(v) if v != 0.0 && v != 1.0 => Err(TpisError::InvalidFeature {
            field: field.to_string(),
            reason: format!("binary value must be 0 or 1, got {v}"),
        }),
        _ => Ok(()),
    }
}

/// Demographics and symptoms, in [`STEP_ONE_COLUMNS`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOneFeatures([Option<f64>; STEP_ONE_LEN]);

impl StepOneFeatures {
    pub fn new(values: [Option<f64>; STEP_ONE_LEN]) -> Result<Self> {
        if let Some(age) = values[0] {
            if !age.is_finite() || age < AGE_RANGE.0 || age > AGE_RANGE.1 {
                return Err(TpisError::InvalidFeature {
                    field: "age".into(),
                    reason: format!("{age} outside [0, 130]"),
                });
            }
        }
        for (name, value) in STEP_ONE_COLUMNS.iter().zip(values.iter()).skip(1) {
            check_binary(name, *value)?;
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[Option<f64>; STEP_ONE_LEN] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        STEP_ONE_COLUMNS
            .iter()
            .position(|c| *c == name)
            .and_then(|i| self.0[i])
    }
}

/// Laboratory values followed by the two CXR report keywords, in
/// [`STEP_TWO_COLUMNS`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTwoFeatures([Option<f64>; STEP_TWO_LEN]);

impl StepTwoFeatures {
    pub fn new(values: [Option<f64>; STEP_TWO_LEN]) -> Result<Self> {
        for (i, (name, value)) in STEP_TWO_COLUMNS.iter().zip(values.iter()).enumerate() {
            if i < 8 {
                if let Some(v) = value {
                    if !v.is_finite() {
                        return Err(TpisError::InvalidFeature {
                            field: name.to_string(),
                            reason: "lab value must be finite".into(),
                        });
                    }
                }
            } else {
                check_binary(name, *value)?;
            }
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[Option<f64>; STEP_TWO_LEN] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub step1: StepOneFeatures,
    /// Absent when only the low-cost examination has been done.
    pub step2: Option<StepTwoFeatures>,
    pub label: Option<Label>,
}

impl PatientRecord {
    /// Step-2 block if any of its cells is observed.
    pub fn observed_step2(&self) -> Option<&StepTwoFeatures> {
        self.step2.as_ref().filter(|s| !s.is_empty())
    }
}

/// A collection of patients with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<PatientRecord>,
}

impl Dataset {
    pub fn new(records: Vec<PatientRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(TpisError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<PatientRecord> {
        self.records
    }

    /// Labels of every record, failing on the first unlabeled one.
    pub fn labels(&self) -> Result<Vec<Label>> {
        self.records
            .iter()
            .map(|r| r.label.ok_or_else(|| TpisError::MissingLabel(r.id.clone())))
            .collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let tb = self.records.iter().filter(|r| r.label == Some(Label::Tb)).count();
        let p = self
            .records
            .iter()
            .filter(|r| r.label == Some(Label::Pneumonia))
            .count();
        (tb, p)
    }

    /// Records at the given positions, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSetId {
    /// Demographics and symptoms.
    FS1,
    /// Laboratory values and CXR keywords.
    FS2,
    /// Layer-2 meta-features.
    FS3,
    /// FS2 followed by FS3.
    FS4,
    /// FS1 followed by FS2.
    FS5,
}

impl FeatureSetId {
    pub const ALL: [FeatureSetId; 5] = [
        FeatureSetId::FS1,
        FeatureSetId::FS2,
        FeatureSetId::FS3,
        FeatureSetId::FS4,
        FeatureSetId::FS5,
    ];

    pub fn needs_meta(self) -> bool {
        matches!(self, FeatureSetId::FS3 | FeatureSetId::FS4)
    }

    pub fn uses_step_one(self) -> bool {
        matches!(self, FeatureSetId::FS1 | FeatureSetId::FS5)
    }

    pub fn uses_step_two(self) -> bool {
        matches!(self, FeatureSetId::FS2 | FeatureSetId::FS4 | FeatureSetId::FS5)
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSetId::FS1 => "FS1",
            FeatureSetId::FS2 => "FS2",
            FeatureSetId::FS3 => "FS3",
            FeatureSetId::FS4 => "FS4",
            FeatureSetId::FS5 => "FS5",
        }
    }

    /// Column names in the order produced by [`select_features`].
    /// `meta_names` names the layer-2 meta-feature columns.
    pub fn columns(self, meta_names: &[&str]) -> Vec<String> {
        let one = STEP_ONE_COLUMNS.iter().map(|s| s.to_string());
        let two = STEP_TWO_COLUMNS.iter().map(|s| s.to_string());
        let meta = meta_names.iter().map(|s| s.to_string());
        match self {
            FeatureSetId::FS1 => one.collect(),
            FeatureSetId::FS2 => two.collect(),
            FeatureSetId::FS3 => meta.collect(),
            FeatureSetId::FS4 => two.chain(meta).collect(),
            FeatureSetId::FS5 => one.chain(two).collect(),
        }
    }
}

impl fmt::Display for FeatureSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSetId {
    type Err = TpisError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FS1" => Ok(FeatureSetId::FS1),
            "FS2" => Ok(FeatureSetId::FS2),
            "FS3" => Ok(FeatureSetId::FS3),
            "FS4" => Ok(FeatureSetId::FS4),
            "FS5" => Ok(FeatureSetId::FS5),
            other => Err(TpisError::ConfigError(format!("unknown feature set `{other}`"))),
        }
    }
}

/// Concatenates the raw (unscaled) cells of a record for `fs`.
///
/// Missing cells stay `None`; an absent step-2 block yields ten `None`s.
/// Meta-features are appended after the step-2 block for FS4.
pub fn select_features(
    record: &PatientRecord,
    fs: FeatureSetId,
    meta2: Option<&[f64]>,
) -> Result<Vec<Option<f64>>> {
    let step_two = || -> Vec<Option<f64>> {
        match &record.step2 {
            Some(s) => s.values().to_vec(),
            None => vec![None; STEP_TWO_LEN],
        }
    };
    let meta = || -> Result<Vec<Option<f64>>> {
        meta2
            .map(|m| m.iter().copied().map(Some).collect())
            .ok_or(TpisError::MissingMetaFeatures(fs.name()))
    };
    Ok(match fs {
        FeatureSetId::FS1 => record.step1.values().to_vec(),
        FeatureSetId::FS2 => step_two(),
        FeatureSetId::FS3 => meta()?,
        FeatureSetId::FS4 => {
            let mut v = step_two();
            v.extend(meta()?);
            v
        }
        FeatureSetId::FS5 => {
            let mut v = record.step1.values().to_vec();
            v.extend(step_two());
            v
        }
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Tb, Label::Tb) => self.tp += 1,
            (Label::Tb, Label::Pneumonia) => self.fn_ += 1,
            (Label::Pneumonia, Label::Tb) => self.fp += 1,
            (Label::Pneumonia, Label::Pneumonia) => self.tn += 1,
        }
    }
}
