//! Cohort CSV files and model archives.
//!
//! A cohort file has the header `id,label,<step-1 columns>,<step-2 columns>`;
//! empty cells are missing values and an empty label marks an unlabelled
//! record. A record whose ten step-2 cells are all empty has no step-2 block.
//!
//! A model archive is a JSON document `{"format_version": 1, "model": ..}`
//! written with a fixed key order and shortest round-trip floats, so the
//! same model always produces the same bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    Dataset, Label, PatientRecord, StepOneFeatures, StepTwoFeatures, STEP_ONE_COLUMNS, STEP_ONE_LEN,
    STEP_TWO_COLUMNS, STEP_TWO_LEN,
};
use crate::error::{Result, TpisError};
use crate::pipeline::TpisModel;

pub const MODEL_FORMAT_VERSION: u64 = 1;

pub fn dataset_header() -> Vec<&'static str> {
    let mut h = vec!["id", "label"];
    h.extend(STEP_ONE_COLUMNS);
    h.extend(STEP_TWO_COLUMNS);
    h
}

fn csv_error(e: csv::Error) -> TpisError {
    match e.position() {
        Some(pos) => TpisError::CellError { row: pos.line() as usize, column: String::new(), reason: e.to_string() },
        None => TpisError::Io(e.to_string()),
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(TpisError::CellError {
            row,
            column: column.to_string(),
            reason: format!("`{s}` is not a finite number"),
        }),
    }
}

/// Maps a feature validation failure back to its cell.
fn locate(e: TpisError, row: usize) -> TpisError {
    match e {
        TpisError::InvalidFeature { field, reason } => TpisError::CellError { row, column: field, reason },
        other => other,
    }
}

/// Reads a cohort from CSV. Row numbers in errors are 1-based file lines
/// (the header is line 1).
pub fn read_dataset_from<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let expected = dataset_header();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        let unknown: Vec<&str> = got.iter().copied().filter(|c| !expected.contains(c)).collect();
        let absent: Vec<&str> = expected.iter().copied().filter(|c| !got.contains(c)).collect();
        return Err(TpisError::SchemaError(format!(
            "header mismatch; unknown columns {unknown:?}, missing columns {absent:?}, or wrong order"
        )));
    }
    let mut records = Vec::new();
    for result in rdr.records() {
        let rec = result.map_err(csv_error)?;
        let row = rec.position().map_or(records.len() + 2, |p| p.line() as usize);
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(TpisError::CellError { row, column: "id".into(), reason: "empty id".into() });
        }
        let label = match rec[1].trim() {
            "" => None,
            s => Some(s.parse::<Label>().map_err(|_| TpisError::CellError {
                row,
                column: "label".into(),
                reason: format!("label must be TB, P or empty, got `{s}`"),
            })?),
        };
        let mut one = [None; STEP_ONE_LEN];
        for (j, cell) in one.iter_mut().enumerate() {
            *cell = parse_cell(&rec[2 + j], row, STEP_ONE_COLUMNS[j])?;
        }
        let mut two = [None; STEP_TWO_LEN];
        for (j, cell) in two.iter_mut().enumerate() {
            *cell = parse_cell(&rec[2 + STEP_ONE_LEN + j], row, STEP_TWO_COLUMNS[j])?;
        }
        let step1 = StepOneFeatures::new(one).map_err(|e| locate(e, row))?;
        let step2 = if two.iter().all(Option::is_none) {
            None
        } else {
            Some(StepTwoFeatures::new(two).map_err(|e| locate(e, row))?)
        };
        records.push(PatientRecord { id, step1, step2, label });
    }
    Dataset::new(records)
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> TpisError + '_ {
    move |e| TpisError::Io(format!("{}: {e}", path.display()))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_from(fs::File::open(path).map_err(io_at(path))?)
}

fn format_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_dataset_to<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(dataset_header()).map_err(csv_error)?;
    for r in dataset.records() {
        let mut row = vec![r.id.clone(), r.label.map(|l| l.code().to_string()).unwrap_or_default()];
        row.extend(r.step1.values().iter().map(|v| format_cell(*v)));
        match &r.step2 {
            Some(s) => row.extend(s.values().iter().map(|v| format_cell(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), STEP_TWO_LEN)),
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset_to(dataset, &mut buf)?;
    fs::write(path, buf).map_err(io_at(path))?;
    Ok(())
}

#[derive(Serialize)]
struct ArchiveOut<'a> {
    format_version: u64,
    model: &'a TpisModel,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveIn {
    #[allow(dead_code)]
    format_version: u64,
    model: TpisModel,
}

pub fn model_to_string(model: &TpisModel) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&ArchiveOut { format_version: MODEL_FORMAT_VERSION, model })
        .map_err(|e| TpisError::ArchiveError(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_str(text: &str) -> Result<TpisModel> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| TpisError::ArchiveError(format!("unreadable archive: {e}")))?;
    let found = value
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| TpisError::ArchiveError("missing format_version".into()))?;
    if found != MODEL_FORMAT_VERSION {
        return Err(TpisError::VersionError { found, supported: MODEL_FORMAT_VERSION });
    }
    let archive: ArchiveIn =
        serde_json::from_value(value).map_err(|e| TpisError::ArchiveError(format!("corrupted model section: {e}")))?;
    validate_model(&archive.model)?;
    Ok(archive.model)
}

/// Checks the manifest and that each layer's input width matches what
/// feeds it.
pub fn validate_model(m: &TpisModel) -> Result<()> {
    let bad = |what: String| Err(TpisError::ArchiveError(what));
    if m.manifest.step1 != STEP_ONE_COLUMNS || m.manifest.step2 != STEP_TWO_COLUMNS {
        return bad("feature manifest does not match the cohort schema".into());
    }
    if m.manifest.meta.len() != m.layer2.len() {
        return bad(format!("{} meta columns for a layer of {}", m.manifest.meta.len(), m.layer2.len()));
    }
    if m.step1_prep.width != STEP_ONE_LEN || m.step2_prep.width != STEP_TWO_LEN {
        return bad("preprocessor width does not match the cohort schema".into());
    }
    let checks = [
        ("layer 1", m.layer1.n_features(), m.step1_prep.output_width()),
        ("layer 2", m.layer2.n_features(), m.layer1.len()),
        ("step 2", m.step2_layer.n_features(), m.step2_prep.output_width() + m.layer2.len()),
    ];
    for (name, got, expected) in checks {
        if got != expected {
            return bad(format!("{name} expects {got} inputs but is fed {expected}"));
        }
    }
    if m.layer1.len() < 2 || m.layer2.len() < 2 || m.step2_layer.len() < 2 {
        return bad("every layer needs at least 2 learners".into());
    }
    m.policy.validate()
}

pub fn save_model(model: &TpisModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_string(model)?).map_err(io_at(path))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TpisModel> {
    model_from_str(&fs::read_to_string(path).map_err(io_at(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_line() -> String {
        dataset_header().join(",")
    }

    fn row(label: &str, age: &str) -> String {
        let mut cells = vec!["r1".to_string(), label.to_string(), age.to_string()];
        cells.extend(std::iter::repeat_n("0".to_string(), STEP_ONE_LEN - 1));
        cells.extend(std::iter::repeat_n(String::new(), STEP_TWO_LEN));
        cells.join(",")
    }

    #[test]
    fn reads_minimal_file() {
        let text = format!("{}\n{}\n", header_line(), row("TB", "40"));
        let d = read_dataset_from(text.as_bytes()).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.records()[0].label, Some(Label::Tb));
        assert!(d.records()[0].step2.is_none());
    }

    #[test]
    fn unknown_column_is_schema_error() {
        let text = format!("{},extra\n", header_line());
        assert!(matches!(read_dataset_from(text.as_bytes()), Err(TpisError::SchemaError(_))));
    }

    #[test]
    fn bad_cells_are_located() {
        let text = format!("{}\n{}\n", header_line(), row("TBC", "40"));
        assert!(matches!(
            read_dataset_from(text.as_bytes()),
            Err(TpisError::CellError { row: 2, ref column, .. }) if column == "label"
        ));
        let text = format!("{}\n{}\n", header_line(), row("P", "abc"));
        assert!(matches!(
            read_dataset_from(text.as_bytes()),
            Err(TpisError::CellError { row: 2, ref column, .. }) if column == "age"
        ));
        let text = format!("{}\n{}\n", header_line(), row("P", "200"));
        assert!(matches!(
            read_dataset_from(text.as_bytes()),
            Err(TpisError::CellError { row: 2, ref column, .. }) if column == "age"
        ));
    }

    #[test]
    fn version_checks() {
        let future = r#"{"format_version": 2, "model": {}}"#;
        let err = model_from_str(future).unwrap_err();
        assert_eq!(err, TpisError::VersionError { found: 2, supported: 1 });
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('1'));
        assert!(matches!(model_from_str(r#"{"format_version": 1, "model": {}}"#), Err(TpisError::ArchiveError(_))));
        assert!(matches!(model_from_str(r#"{"format_version": 1, "mod"#), Err(TpisError::ArchiveError(_))));
    }
}
