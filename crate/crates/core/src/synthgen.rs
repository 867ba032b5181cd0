//! Synthetic cohorts drawn from published class-conditional marginals.
//!
//! Features are sampled independently given the class: numeric values from
//! a normal truncated to the published `[min, max]`, binary values from a
//! per-class Bernoulli. The realism limitation is that no correlation
//! between features survives.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    Dataset, Label, PatientRecord, StepOneFeatures, StepTwoFeatures, STEP_ONE_COLUMNS, STEP_ONE_LEN,
    STEP_TWO_COLUMNS, STEP_TWO_LEN,
};
use crate::error::{Result, TpisError};
use crate::rng;

pub const SPEC_FORMAT_VERSION: u32 = 1;
const DEFAULT_SPEC_TOML: &str = include_str!("../data/cohort_tables_v1.toml");
const REJECTION_TRIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSizes {
    pub pneumonia: u32,
    pub tb: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericStats {
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericFeature {
    #[serde(default)]
    pub interpreted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub missing_rate: f64,
    /// Decimal places kept after sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round_to: Option<u32>,
    pub pneumonia: NumericStats,
    pub tb: NumericStats,
}

impl NumericFeature {
    pub fn stats(&self, label: Label) -> &NumericStats {
        match label {
            Label::Tb => &self.tb,
            Label::Pneumonia => &self.pneumonia,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryCounts {
    pub no: u32,
    pub yes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryFeature {
    pub pneumonia: BinaryCounts,
    pub tb: BinaryCounts,
}

impl BinaryFeature {
    pub fn counts(&self, label: Label) -> BinaryCounts {
        match label {
            Label::Tb => self.tb,
            Label::Pneumonia => self.pneumonia,
        }
    }
}

/// Class sizes plus per-feature class-conditional parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub format_version: u32,
    pub classes: ClassSizes,
    pub numeric: BTreeMap<String, NumericFeature>,
    pub binary: BTreeMap<String, BinaryFeature>,
}

fn is_numeric_column(name: &str) -> bool {
    name == "age" || STEP_TWO_COLUMNS[..8].contains(&name)
}

impl CohortSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: CohortSpec = toml::from_str(text).map_err(|e| TpisError::SpecError(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| TpisError::SpecError(e.to_string()))
    }

    pub fn class_size(&self, label: Label) -> u32 {
        match label {
            Label::Tb => self.classes.tb,
            Label::Pneumonia => self.classes.pneumonia,
        }
    }

    pub fn tb_prevalence(&self) -> f64 {
        self.classes.tb as f64 / (self.classes.tb + self.classes.pneumonia) as f64
    }

    /// P(yes | class, observed) for a binary column.
    pub fn binary_rate(&self, name: &str, label: Label) -> Option<f64> {
        self.binary.get(name).map(|f| {
            let c = f.counts(label);
            let observed = c.yes + c.no;
            if observed == 0 {
                0.0
            } else {
                c.yes as f64 / observed as f64
            }
        })
    }

    /// Fraction of class members with the column missing.
    pub fn missing_rate(&self, name: &str, label: Label) -> Option<f64> {
        if let Some(f) = self.numeric.get(name) {
            return Some(f.missing_rate);
        }
        self.binary.get(name).map(|f| {
            let c = f.counts(label);
            1.0 - (c.yes + c.no) as f64 / self.class_size(label) as f64
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TpisError::SpecError(msg));
        if self.format_version != SPEC_FORMAT_VERSION {
            return bad(format!(
                "format_version {} unsupported (expected {SPEC_FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.classes.tb == 0 || self.classes.pneumonia == 0 {
            return bad("both class sizes must be positive".into());
        }
        for name in STEP_ONE_COLUMNS.iter().chain(STEP_TWO_COLUMNS.iter()) {
            let present = if is_numeric_column(name) {
                self.numeric.contains_key(*name)
            } else {
                self.binary.contains_key(*name)
            };
            if !present {
                return bad(format!("feature `{name}` missing"));
            }
        }
        for name in self.numeric.keys() {
            if !is_numeric_column(name) {
                return bad(format!("unknown numeric feature `{name}`"));
            }
        }
        for name in self.binary.keys() {
            let known = STEP_ONE_COLUMNS.contains(&name.as_str()) || STEP_TWO_COLUMNS.contains(&name.as_str());
            if !known || is_numeric_column(name) {
                return bad(format!("unknown binary feature `{name}`"));
            }
        }
        for (name, f) in &self.numeric {
            if !(0.0..=1.0).contains(&f.missing_rate) {
                return bad(format!("{name}: missing_rate outside [0, 1]"));
            }
            for (class, s) in [("pneumonia", &f.pneumonia), ("tb", &f.tb)] {
                let finite = [s.min, s.mean, s.median, s.max, s.std].iter().all(|v| v.is_finite());
                if !finite || !(s.min <= s.median && s.median <= s.max) || s.std < 0.0 {
                    return bad(format!("{name}/{class}: need min <= median <= max and std >= 0"));
                }
            }
        }
        for (name, f) in &self.binary {
            for label in [Label::Pneumonia, Label::Tb] {
                let c = f.counts(label);
                if c.yes + c.no > self.class_size(label) {
                    return bad(format!("{name}/{label}: counts exceed class size"));
                }
            }
        }
        Ok(())
    }
}

/// Parameters shipped with the crate.
pub fn default_spec() -> CohortSpec {
    CohortSpec::from_toml(DEFAULT_SPEC_TOML).expect("bundled cohort spec is valid")
}

fn truncated_normal<R: Rng>(rng: &mut R, s: &NumericStats) -> f64 {
    if s.std <= 0.0 || s.min == s.max {
        return s.mean.clamp(s.min, s.max);
    }
    let normal = Normal::new(s.mean, s.std).expect("std checked positive");
    for _ in 0..REJECTION_TRIES {
        let v = normal.sample(rng);
        if (s.min..=s.max).contains(&v) {
            return v;
        }
    }
    normal.sample(rng).clamp(s.min, s.max)
}

fn round(v: f64, places: Option<u32>) -> f64 {
    match places {
        Some(p) => {
            let scale = 10f64.powi(p as i32);
            (v * scale).round() / scale
        }
        None => v,
    }
}

fn sample_value<R: Rng>(spec: &CohortSpec, rng: &mut R, name: &str, label: Label) -> f64 {
    if let Some(f) = spec.numeric.get(name) {
        let s = f.stats(label);
        round(truncated_normal(rng, s), f.round_to).clamp(s.min, s.max)
    } else {
        let rate = spec.binary_rate(name, label).unwrap_or(0.0);
        if rng.random_bool(rate) {
            1.0
        } else {
            0.0
        }
    }
}

/// Draws a value and its missingness mask. The mask is always drawn so the
/// value stream does not depend on `missing`.
fn sample_cell<R: Rng>(spec: &CohortSpec, rng: &mut R, name: &str, label: Label, missing: bool) -> (f64, Option<f64>) {
    let value = sample_value(spec, rng, name, label);
    let masked = rng.random_bool(spec.missing_rate(name, label).unwrap_or(0.0).clamp(0.0, 1.0));
    (value, (!(missing && masked)).then_some(value))
}

/// Draws `n` labelled patients. Deterministic in `(spec, n, seed, missing)`.
/// A block whose cells all end up masked keeps its first cell.
pub fn sample_cohort(spec: &CohortSpec, n: usize, seed: u64, missing: bool) -> Result<Dataset> {
    spec.validate()?;
    if n < 10 {
        return Err(TpisError::SpecError(format!("cohort size {n} below minimum of 10")));
    }
    let mut rng = rng::seeded(seed);
    let prevalence = spec.tb_prevalence();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let label = Label::from_tb(rng.random_bool(prevalence));
        let mut one = [None; STEP_ONE_LEN];
        let mut one_raw = [0.0; STEP_ONE_LEN];
        for (c, name) in STEP_ONE_COLUMNS.iter().enumerate() {
            (one_raw[c], one[c]) = sample_cell(spec, &mut rng, name, label, missing);
        }
        if one.iter().all(Option::is_none) {
            one[0] = Some(one_raw[0]);
        }
        let mut two = [None; STEP_TWO_LEN];
        let mut two_raw = [0.0; STEP_TWO_LEN];
        for (c, name) in STEP_TWO_COLUMNS.iter().enumerate() {
            (two_raw[c], two[c]) = sample_cell(spec, &mut rng, name, label, missing);
        }
        if two.iter().all(Option::is_none) {
            two[0] = Some(two_raw[0]);
        }
        records.push(PatientRecord {
            id: format!("syn-{i:05}"),
            step1: StepOneFeatures::new(one)?,
            step2: Some(StepTwoFeatures::new(two)?),
            label: Some(label),
        });
    }
    Dataset::new(records)
}
