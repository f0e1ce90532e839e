//! Evaluation reports: aggregate metrics plus per-sample rows, with the
//! resolved configuration echoed so runs are auditable and reproducible.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub record_id: String,
    pub values: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub benchmark: String,
    pub config: BTreeMap<String, String>,
    pub aggregates: BTreeMap<String, f64>,
    pub samples: Vec<SampleRow>,
}

impl EvalReport {
    pub fn new(benchmark: impl Into<String>) -> Self {
        Self {
            benchmark: benchmark.into(),
            config: BTreeMap::new(),
            aggregates: BTreeMap::new(),
            samples: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::input(format!("report serialization: {e}")))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Flat CSV of per-sample rows; columns are the sorted union of keys.
    pub fn to_csv(&self) -> String {
        let mut columns: Vec<&str> = Vec::new();
        for row in &self.samples {
            for key in row.values.keys() {
                if !columns.contains(&key.as_str()) {
                    columns.push(key);
                }
            }
        }
        columns.sort_unstable();
        let mut out = String::from("record_id");
        for c in &columns {
            out.push(',');
            out.push_str(&csv_escape(c));
        }
        out.push('\n');
        for row in &self.samples {
            out.push_str(&csv_escape(&row.record_id));
            for c in &columns {
                out.push(',');
                if let Some(v) = row.values.get(*c) {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Recomputes mean aggregates from per-sample rows; used by the
    /// self-consistency tests.
    pub fn mean_of(&self, key: &str) -> Option<f64> {
        let values: Vec<f64> = self
            .samples
            .iter()
            .filter_map(|s| s.values.get(key).copied())
            .collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout_and_escaping() {
        let mut report = EvalReport::new("demo");
        let mut values = BTreeMap::new();
        values.insert("iou".to_string(), 0.5);
        report.samples.push(SampleRow {
            record_id: "a,b".into(),
            values,
            note: None,
        });
        let csv = report.to_csv();
        assert_eq!(csv, "record_id,iou\n\"a,b\",0.5\n");
    }

    #[test]
    fn mean_recomputation() {
        let mut report = EvalReport::new("demo");
        for (id, v) in [("a", 1.0), ("b", 0.0)] {
            let mut values = BTreeMap::new();
            values.insert("acc".to_string(), v);
            report.samples.push(SampleRow {
                record_id: id.into(),
                values,
                note: None,
            });
        }
        assert_eq!(report.mean_of("acc"), Some(0.5));
        assert_eq!(report.mean_of("missing"), None);
    }
}
