//! CSV + sidecar-spec persistence.
//!
//! CSV layout: UTF-8 with a header row, a required `label` column, an
//! optional `id` column, and numeric feature columns. The sidecar spec is
//! a JSON array of per-feature objects whose order matches the CSV
//! feature columns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, FeatureSpec};
use crate::matrix::Matrix;

#[derive(Serialize, Deserialize)]
struct SpecFileEntry {
    name: String,
    kind: super::FeatureKind,
    modifiable: bool,
    constraint: super::Constraint,
    value_domain: super::ValueDomain,
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_specs(path: &Path) -> Result<Vec<FeatureSpec>, DatasetError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let entries: Vec<SpecFileEntry> = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| DatasetError::MalformedCsv {
            row: 0,
            message: format!("spec file {}: {e}", path.display()),
        })?;
    Ok(entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| FeatureSpec {
            index: i,
            name: e.name,
            kind: e.kind,
            modifiable: e.modifiable,
            constraint: e.constraint,
            value_domain: e.value_domain,
        })
        .collect())
}

pub fn save_specs(specs: &[FeatureSpec], path: &Path) -> Result<(), DatasetError> {
    let entries: Vec<SpecFileEntry> = specs
        .iter()
        .map(|s| SpecFileEntry {
            name: s.name.clone(),
            kind: s.kind,
            modifiable: s.modifiable,
            constraint: s.constraint,
            value_domain: s.value_domain,
        })
        .collect();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &entries).map_err(|e| DatasetError::MalformedCsv {
        row: 0,
        message: format!("spec serialization: {e}"),
    })?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Loads a dataset from `path` with feature specs from `spec_path`.
/// Row order is preserved; ids come from an `id` column when present,
/// else they are the row indices.
pub fn load_csv(path: &Path, spec_path: &Path) -> Result<Dataset, DatasetError> {
    let specs = load_specs(spec_path)?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));

    let headers = reader
        .headers()
        .map_err(|e| DatasetError::MalformedCsv {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let mut id_col = None;
    let mut label_col = None;
    let mut feature_cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        match h {
            "id" => id_col = Some(i),
            "label" => label_col = Some(i),
            _ => feature_cols.push((i, h.to_string())),
        }
    }
    let label_col = label_col.ok_or_else(|| DatasetError::MalformedCsv {
        row: 0,
        message: "missing required `label` column".into(),
    })?;
    if feature_cols.len() != specs.len() {
        return Err(DatasetError::SpecMismatch {
            spec: specs.len(),
            csv: feature_cols.len(),
            detail: "feature column count differs from sidecar spec".into(),
        });
    }
    for (spec, (_, name)) in specs.iter().zip(&feature_cols) {
        if &spec.name != name {
            return Err(DatasetError::SpecMismatch {
                spec: specs.len(),
                csv: feature_cols.len(),
                detail: format!("column '{name}' does not match spec '{}'", spec.name),
            });
        }
    }

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DatasetError::MalformedCsv {
            row: row_idx,
            message: e.to_string(),
        })?;
        let parse = |col: usize, name: &str| -> Result<f64, DatasetError> {
            record
                .get(col)
                .ok_or_else(|| DatasetError::MalformedCsv {
                    row: row_idx,
                    message: format!("missing column '{name}'"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|_| DatasetError::MalformedCsv {
                    row: row_idx,
                    message: format!("non-numeric value in column '{name}'"),
                })
        };
        let label = parse(label_col, "label")?;
        if label != 0.0 && label != 1.0 {
            return Err(DatasetError::BadLabel {
                row: row_idx,
                value: label,
            });
        }
        labels.push(label as u8);
        ids.push(match id_col {
            Some(c) => record
                .get(c)
                .and_then(|s| s.trim().parse::<u64>().ok())
                .ok_or_else(|| DatasetError::MalformedCsv {
                    row: row_idx,
                    message: "non-integer id".into(),
                })?,
            None => row_idx as u64,
        });
        let mut row = Vec::with_capacity(feature_cols.len());
        for (col, name) in &feature_cols {
            row.push(parse(*col, name)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DatasetError::MalformedCsv {
            row: 0,
            message: "csv has no data rows".into(),
        });
    }
    Dataset::new(Matrix::from_rows(&rows), labels, specs, ids)
}

/// Writes the dataset as `id,<features...>,label` plus the sidecar spec.
/// Floats use the shortest round-trip representation, so save/load is exact.
pub fn save_csv(ds: &Dataset, path: &Path, spec_path: &Path) -> Result<(), DatasetError> {
    save_specs(ds.specs(), spec_path)?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["id".to_string()];
    header.extend(ds.specs().iter().map(|s| s.name.clone()));
    header.push("label".into());
    w.write_record(&header).map_err(|e| DatasetError::MalformedCsv {
        row: 0,
        message: e.to_string(),
    })?;
    for i in 0..ds.n_rows() {
        let mut record = vec![ds.id(i).to_string()];
        record.extend(ds.row(i).iter().map(|v| v.to_string()));
        record.push(ds.label(i).to_string());
        w.write_record(&record).map_err(|e| DatasetError::MalformedCsv {
            row: i,
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, FeatureKind, SynthConfig};

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    const TWO_COL_SPEC: &str = r#"[
        {"name":"f0","kind":"integer","modifiable":true,"constraint":"free","value_domain":"observed_benign_only"},
        {"name":"f1","kind":"real","modifiable":true,"constraint":"free","value_domain":"observed_benign_only"}
    ]"#;

    #[test]
    fn loads_three_row_csv() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_file(
            &dir,
            "d.csv",
            "id,f0,f1,label\n10,1,0.5,0\n11,2,0.25,1\n12,3,0.75,0\n",
        );
        let spec = write_file(&dir, "d.spec.json", TWO_COL_SPEC);
        let ds = load_csv(&csv, &spec).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.ids(), &[10, 11, 12]);
        assert_eq!(ds.labels(), &[0, 1, 0]);
    }

    #[test]
    fn missing_id_column_synthesizes_row_indices() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_file(&dir, "d.csv", "f0,f1,label\n1,0.5,0\n2,0.25,1\n3,0.75,0\n");
        let spec = write_file(&dir, "d.spec.json", TWO_COL_SPEC);
        let ds = load_csv(&csv, &spec).unwrap();
        assert_eq!(ds.ids(), &[0, 1, 2]);
    }

    #[test]
    fn integer_column_with_fraction_is_an_error_naming_column_and_row() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_file(&dir, "d.csv", "f0,f1,label\n1,0.5,0\n1.5,0.25,0\n2,0.1,1\n");
        let spec = write_file(&dir, "d.spec.json", TWO_COL_SPEC);
        let err = load_csv(&csv, &spec).unwrap_err();
        match err {
            DatasetError::NonIntegralValue { column, row, .. } => {
                assert_eq!(column, "f0");
                assert_eq!(row, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn label_outside_01_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_file(&dir, "d.csv", "f0,f1,label\n1,0.5,2\n");
        let spec = write_file(&dir, "d.spec.json", TWO_COL_SPEC);
        assert!(matches!(
            load_csv(&csv, &spec).unwrap_err(),
            DatasetError::BadLabel { row: 0, value } if value == 2.0
        ));
    }

    #[test]
    fn spec_column_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let csv = write_file(&dir, "d.csv", "f0,label\n1,0\n2,1\n");
        let spec = write_file(&dir, "d.spec.json", TWO_COL_SPEC);
        assert!(matches!(
            load_csv(&csv, &spec).unwrap_err(),
            DatasetError::SpecMismatch { .. }
        ));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let cfg = SynthConfig {
            n_samples: 60,
            n_features: 5,
            n_informative: 3,
            benign_subpopulations: 2,
            class_separation: 3.0,
            integer_feature_fraction: 0.5,
            seed: 42,
        };
        let ds = generate_synthetic(&cfg).unwrap();
        assert!(ds.specs().iter().any(|s| s.kind == FeatureKind::Integer));
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        let spec = dir.path().join("d.spec.json");
        save_csv(&ds, &csv, &spec).unwrap();
        let loaded = load_csv(&csv, &spec).unwrap();
        assert_eq!(ds, loaded);
    }
}
