//! CheXpert-style CSV manifests:
//! `Path,Sex,Age,Frontal/Lateral,AP/PA,<14 observation names>`.

use super::labels::{RawLabelVector, LABEL_COUNT};
use crate::{Error, Result};

pub const METADATA_COLUMNS: [&str; 5] = ["Path", "Sex", "Age", "Frontal/Lateral", "AP/PA"];
const VIEW_COLUMN: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum View {
    Frontal,
    Lateral,
}

impl View {
    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "Frontal" => Some(View::Frontal),
            "Lateral" => Some(View::Lateral),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            View::Frontal => "Frontal",
            View::Lateral => "Lateral",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    /// Image path relative to the image root.
    pub path: String,
    pub sex: String,
    pub age: String,
    pub view: View,
    pub projection: String,
    pub labels: RawLabelVector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub observations: Vec<String>,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn parse_manifest(csv_text: &str) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(csv_text.as_bytes());
    let expected_cols = METADATA_COLUMNS.len() + LABEL_COUNT;
    let mut rows = reader.records();

    let header = match rows.next() {
        Some(row) => row.map_err(|e| csv_error(e, 1))?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header row".into(),
            })
        }
    };
    if header.len() != expected_cols {
        return Err(Error::Parse {
            line: 1,
            message: format!("header has {} columns, expected {expected_cols}", header.len()),
        });
    }
    for (i, name) in METADATA_COLUMNS.iter().enumerate() {
        if header[i].trim() != *name {
            return Err(Error::Parse {
                line: 1,
                message: format!("column {} is `{}`, expected `{name}`", i + 1, &header[i]),
            });
        }
    }
    let observations = header
        .iter()
        .skip(METADATA_COLUMNS.len())
        .map(|s| s.trim().to_string())
        .collect();

    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(|e| csv_error(e, 0))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.len() == 1 && row[0].trim().is_empty() {
            continue;
        }
        if row.len() != expected_cols {
            return Err(Error::Parse {
                line,
                message: format!("row has {} columns, expected {expected_cols}", row.len()),
            });
        }
        let path = row[0].trim().to_string();
        if path.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty image path".into(),
            });
        }
        let view = View::parse(&row[VIEW_COLUMN]).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown view tag `{}`", &row[VIEW_COLUMN]),
        })?;
        let tokens: Vec<&str> = row.iter().skip(METADATA_COLUMNS.len()).collect();
        let labels = RawLabelVector::from_tokens(&tokens).map_err(|e| Error::Parse {
            line,
            message: match e {
                Error::Parameter(m) => m,
                other => other.to_string(),
            },
        })?;
        records.push(ManifestRecord {
            path,
            sex: row[1].to_string(),
            age: row[2].to_string(),
            view,
            projection: row[4].to_string(),
            labels,
        });
    }
    Ok(DatasetManifest { observations, records })
}

fn csv_error(e: csv::Error, fallback_line: usize) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(fallback_line);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn serialize_manifest(manifest: &DatasetManifest) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let header: Vec<&str> = METADATA_COLUMNS
        .iter()
        .copied()
        .chain(manifest.observations.iter().map(String::as_str))
        .collect();
    writer.write_record(&header).expect("in-memory write");
    for r in &manifest.records {
        let mut row = vec![
            r.path.as_str(),
            r.sex.as_str(),
            r.age.as_str(),
            r.view.as_str(),
            r.projection.as_str(),
        ];
        row.extend(r.labels.0.iter().map(|o| o.token()));
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Keeps frontal views only, preserving order.
pub fn filter_frontal(manifest: &DatasetManifest) -> DatasetManifest {
    DatasetManifest {
        observations: manifest.observations.clone(),
        records: manifest
            .records
            .iter()
            .filter(|r| r.view == View::Frontal)
            .cloned()
            .collect(),
    }
}
