//! Request documents and response bodies shared by the HTTP service and
//! the `diagnose` command.

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use tpis_core::domain::{
    StepOneFeatures, StepTwoFeatures, VoteOutcome, STEP_ONE_COLUMNS, STEP_ONE_LEN, STEP_TWO_COLUMNS,
    STEP_TWO_LEN,
};
use tpis_core::pipeline::{decide, TpisModel};
use tpis_core::stacking::VotePanel;
use tpis_core::TpisError;

/// A rejected request document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocumentError {
    pub error: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub extra: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

impl DocumentError {
    pub fn message(error: impl Into<String>) -> Self {
        Self { error: error.into(), missing: Vec::new(), extra: Vec::new(), field: None }
    }

    fn at(field: &str, error: impl Into<String>) -> Self {
        Self { field: Some(field.to_string()), ..Self::message(error) }
    }
}

impl std::fmt::Display for DocumentError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.error)?;
        if !self.missing.is_empty() {
            write!(f, "; missing: {}", self.missing.join(", "))?;
        }
        if !self.extra.is_empty() {
            write!(f, "; unexpected: {}", self.extra.join(", "))?;
        }
        Ok(())
    }
}

fn from_core(e: TpisError) -> DocumentError {
    match e {
        TpisError::InvalidFeature { field, reason } => DocumentError::at(&field, reason),
        other => DocumentError::message(other.to_string()),
    }
}

/// Reads exactly the named fields from a JSON object; `null` is a missing
/// value.
fn read_fields<const N: usize>(doc: &Value, names: &[&str; N]) -> Result<[Option<f64>; N], DocumentError> {
    let obj: &Map<String, Value> = doc.as_object().ok_or_else(|| DocumentError::message("expected a JSON object"))?;
    let missing: Vec<String> = names.iter().filter(|n| !obj.contains_key(**n)).map(|n| n.to_string()).collect();
    let extra: Vec<String> = obj.keys().filter(|k| !names.contains(&k.as_str())).cloned().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(DocumentError {
            error: format!("expected exactly the {N} feature fields"),
            missing,
            extra,
            field: None,
        });
    }
    let mut out = [None; N];
    for (slot, name) in out.iter_mut().zip(names) {
        *slot = match &obj[*name] {
            Value::Null => None,
            Value::Number(n) => Some(n.as_f64().ok_or_else(|| DocumentError::at(name, "not a finite number"))?),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => return Err(DocumentError::at(name, "value must be a number, boolean or null")),
        };
    }
    Ok(out)
}

pub fn parse_step_one(doc: &Value) -> Result<StepOneFeatures, DocumentError> {
    let values = read_fields::<STEP_ONE_LEN>(doc, &STEP_ONE_COLUMNS)?;
    StepOneFeatures::new(values).map_err(from_core)
}

pub fn parse_step_two(doc: &Value) -> Result<StepTwoFeatures, DocumentError> {
    let values = read_fields::<STEP_TWO_LEN>(doc, &STEP_TWO_COLUMNS)?;
    let features = StepTwoFeatures::new(values).map_err(from_core)?;
    if features.is_empty() {
        return Err(DocumentError::message("every step-2 field is null"));
    }
    Ok(features)
}

pub fn step_one_document(features: &StepOneFeatures) -> Value {
    let mut obj = Map::new();
    for (name, v) in STEP_ONE_COLUMNS.iter().zip(features.values()) {
        obj.insert(name.to_string(), v.map_or(Value::Null, Value::from));
    }
    Value::Object(obj)
}

pub fn step_two_document(features: &StepTwoFeatures) -> Value {
    let mut obj = Map::new();
    for (name, v) in STEP_TWO_COLUMNS.iter().zip(features.values()) {
        obj.insert(name.to_string(), v.map_or(Value::Null, Value::from));
    }
    Value::Object(obj)
}

pub fn outcome_name(outcome: VoteOutcome) -> &'static str {
    match outcome {
        VoteOutcome::Decided(l) => l.code(),
        VoteOutcome::Undetermined => "undetermined",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tally {
    pub tb: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step1Response {
    pub label: &'static str,
    pub cs: f64,
    pub routed: bool,
    pub tally: Tally,
    pub meta2: Vec<f64>,
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step2Response {
    pub final_label: &'static str,
    pub votes: Vec<f64>,
    pub voters: Vec<String>,
    /// Step 1 was already confident for these meta-features.
    pub step1_confident: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Content-derived id: the same model and features always get the same id.
pub fn session_id(model_digest: &str, features: &StepOneFeatures) -> String {
    let mut h = Sha256::new();
    h.update(model_digest.as_bytes());
    h.update(step_one_document(features).to_string().as_bytes());
    let digest = h.finalize();
    digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

pub fn archive_digest(archive: &str) -> String {
    Sha256::digest(archive.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn step_one(model: &TpisModel, model_digest: &str, features: &StepOneFeatures) -> tpis_core::Result<Step1Response> {
    let early = model.early_diagnose(features)?;
    Ok(Step1Response {
        label: outcome_name(early.outcome),
        cs: early.cs,
        routed: model.routes(&early),
        tally: Tally { tb: early.tally.0, p: early.tally.1 },
        meta2: early.meta2.probs().to_vec(),
        session_id: session_id(model_digest, features),
    })
}

pub fn step_two(model: &TpisModel, meta2: &VotePanel, features: &StepTwoFeatures) -> tpis_core::Result<Step2Response> {
    let fin = model.final_diagnose(meta2, features)?;
    let (outcome, cs, _) = decide(meta2, &model.policy);
    let confident = !model.policy.routes(outcome, cs);
    Ok(Step2Response {
        final_label: fin.label.code(),
        votes: fin.votes.probs().to_vec(),
        voters: model.step2_layer.learners.iter().map(|l| l.kind().short_name().to_string()).collect(),
        step1_confident: confident,
        warning: confident.then(|| {
            format!(
                "step 1 was already confident (cs {cs} >= threshold {}); laboratory tests were not indicated",
                model.policy.route_threshold
            )
        }),
    })
}
