//! Aggregated metrics and their JSON/CSV serialisation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    /// Record field the metric averages; `None` for derived metrics.
    pub field: Option<String>,
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    pub expected: Option<f64>,
    /// Where the expected value comes from.
    pub reference: Option<String>,
}

impl Metric {
    /// Summary statistics of `values` (sample standard deviation).
    pub fn summarize(name: &str, values: &[f64]) -> Metric {
        let n = values.len();
        let mean = if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 };
        let var = if n < 2 {
            0.0
        } else {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        };
        Metric {
            name: name.to_string(),
            field: None,
            mean,
            std_dev: var.sqrt(),
            min: values.iter().copied().reduce(f64::min).unwrap_or(0.0),
            max: values.iter().copied().reduce(f64::max).unwrap_or(0.0),
            count: n,
            expected: None,
            reference: None,
        }
    }

    /// Average of a numeric or boolean field over the records that have it.
    pub fn from_field(name: &str, field: &str, records: &[Value]) -> Metric {
        let values: Vec<f64> = records.iter().filter_map(|r| field_value(r, field)).collect();
        Metric {
            field: Some(field.to_string()),
            ..Metric::summarize(name, &values)
        }
    }

    /// Annotate without a point value.
    pub fn note(mut self, reference: &str) -> Metric {
        self.reference = Some(reference.to_string());
        self
    }

    pub fn expect(mut self, value: f64, reference: &str) -> Metric {
        self.expected = Some(value);
        self.reference = Some(reference.to_string());
        self
    }
}

/// Numeric value of `field` in a record; `name/i` indexes into an array.
pub fn field_value(record: &Value, field: &str) -> Option<f64> {
    let value = match field.split_once('/') {
        Some((name, i)) => record.get(name)?.get(i.parse::<usize>().ok()?)?,
        None => record.get(field)?,
    };
    match value {
        Value::Bool(b) => Some(*b as u8 as f64),
        Value::Number(n) => n.as_f64(),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Hard invariants fail the command; targets are only reported.
    pub invariant: bool,
    pub detail: String,
}

impl Check {
    pub fn invariant(name: &str, passed: bool, detail: String) -> Check {
        Check { name: name.into(), passed, invariant: true, detail }
    }

    pub fn target(name: &str, passed: bool, detail: String) -> Check {
        Check { name: name.into(), passed, invariant: false, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub seed: u64,
    pub trials: usize,
    pub parameters: BTreeMap<String, Value>,
    pub metrics: Vec<Metric>,
    pub checks: Vec<Check>,
    pub records: Vec<Value>,
}

impl Report {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn failed_invariants(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.invariant && !c.passed).collect()
    }

    /// Recompute field-backed metrics from the records; names of those that differ.
    pub fn inconsistent_metrics(&self) -> Vec<String> {
        self.metrics
            .iter()
            .filter_map(|m| {
                let field = m.field.as_ref()?;
                let again = Metric::from_field(&m.name, field, &self.records);
                let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs());
                (!(again.count == m.count && close(again.mean, m.mean))).then(|| m.name.clone())
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// One row per metric.
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["experiment", "metric", "mean", "std_dev", "min", "max", "count", "expected", "reference"])
            .map_err(io_err)?;
        for m in &self.metrics {
            w.write_record([
                self.experiment.clone(),
                m.name.clone(),
                m.mean.to_string(),
                m.std_dev.to_string(),
                m.min.to_string(),
                m.max.to_string(),
                m.count.to_string(),
                m.expected.map(|e| e.to_string()).unwrap_or_default(),
                m.reference.clone().unwrap_or_default(),
            ])
            .map_err(io_err)?;
        }
        String::from_utf8(w.into_inner().map_err(io_err)?).map_err(io_err)
    }

    /// Write `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), HarnessError> {
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&json, self.to_json() + "\n").map_err(io_err)?;
        std::fs::write(&csv, self.to_csv()?).map_err(io_err)?;
        Ok((json, csv))
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{} (seed {}, {} trials)\n", self.experiment, self.seed, self.trials);
        for m in &self.metrics {
            out += &format!("  {:<32} {:>14.6} ± {:<12.6}", m.name, m.mean, m.std_dev);
            if let Some(e) = m.expected {
                out += &format!(" expected {e:.6}");
            }
            out.push('\n');
        }
        for c in &self.checks {
            out += &format!("  [{}] {}: {}\n", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
        }
        out
    }
}

fn io_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Experiment(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn summary_statistics() {
        let m = Metric::summarize("x", &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std_dev - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!((m.min, m.max, m.count), (1.0, 4.0, 4));
        let empty = Metric::summarize("e", &[]);
        assert_eq!((empty.mean, empty.min, empty.max), (0.0, 0.0, 0.0));
    }

    #[test]
    fn fields_and_consistency() {
        let records = vec![json!({"a": true, "b": 3, "c": [1, 5]}), json!({"a": false, "b": null, "c": [2, 7]})];
        assert_eq!(Metric::from_field("c1", "c/1", &records).mean, 6.0);
        let m = Metric::from_field("a", "a", &records);
        assert_eq!((m.mean, m.count), (0.5, 2));
        let b = Metric::from_field("b", "b", &records);
        assert_eq!((b.mean, b.count), (3.0, 1));
        let mut r = Report {
            experiment: "t".into(),
            seed: 0,
            trials: 2,
            parameters: BTreeMap::new(),
            metrics: vec![m, b],
            checks: vec![],
            records,
        };
        assert!(r.inconsistent_metrics().is_empty());
        r.metrics[0].mean = 0.7;
        assert_eq!(r.inconsistent_metrics(), vec!["a".to_string()]);
        assert!(r.to_csv().unwrap().starts_with("experiment,metric"));
    }
}
