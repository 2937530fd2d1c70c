//! Cross-product parameter sweeps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use memlab_core::seed::splitmix64;
use serde::{Deserialize, Serialize};

use crate::config::Settings;
use crate::experiments::run_experiment;
use crate::report::Report;
use crate::HarnessError;

/// One swept parameter and its values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl Axis {
    /// Parse `key=v1,v2,...`; `a..b` expands to the integers `a..=b`.
    pub fn parse(text: &str) -> Result<Axis, HarnessError> {
        let (key, values) = text
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("grid axis {text:?} is not key=v1,v2,...")))?;
        let mut out = Vec::new();
        for v in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
            match v.split_once("..") {
                Some((a, b)) => {
                    let bad = || HarnessError::Config(format!("bad range {v:?}"));
                    let a: i64 = a.parse().map_err(|_| bad())?;
                    let b: i64 = b.parse().map_err(|_| bad())?;
                    if a > b {
                        return Err(bad());
                    }
                    out.extend((a..=b).map(|i| i.to_string()));
                }
                None => out.push(v.to_string()),
            }
        }
        if out.is_empty() {
            return Err(HarnessError::Config(format!("grid axis {key:?} has no values")));
        }
        Ok(Axis {
            key: key.trim().to_string(),
            values: out,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub index: u64,
    pub seed: u64,
    pub assignment: BTreeMap<String, String>,
    pub report: Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub experiment: String,
    pub seed: u64,
    pub axes: Vec<Axis>,
    pub cells: Vec<Cell>,
}

/// Seed of grid cell `index`.
pub fn cell_seed(base: u64, index: u64) -> u64 {
    base ^ splitmix64(index)
}

/// Run `experiment` on every point of the grid. Cells run in order; trials
/// inside a cell are parallel.
pub fn sweep(experiment: &str, base: &Settings, axes: &[Axis]) -> Result<SweepTable, HarnessError> {
    if axes.is_empty() || axes.iter().any(|a| a.values.is_empty()) {
        return Err(HarnessError::Config("sweep grid is empty".into()));
    }
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let mut cells = Vec::with_capacity(total);
    for index in 0..total {
        let mut settings = base.clone();
        let mut assignment = BTreeMap::new();
        let mut rest = index;
        for axis in axes.iter().rev() {
            let v = &axis.values[rest % axis.values.len()];
            rest /= axis.values.len();
            settings.set(experiment, &axis.key, v)?;
            assignment.insert(axis.key.clone(), v.clone());
        }
        let seed = cell_seed(base.experiment.seed, index as u64);
        settings.experiment.seed = seed;
        let report = run_experiment(experiment, &settings)?;
        cells.push(Cell {
            index: index as u64,
            seed,
            assignment,
            report,
        });
    }
    Ok(SweepTable {
        experiment: experiment.to_string(),
        seed: base.experiment.seed,
        axes: axes.to_vec(),
        cells,
    })
}

impl SweepTable {
    /// Wide table: one row per cell, swept keys then each metric's mean.
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let err = |e: csv::Error| HarnessError::Experiment(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        let metrics: Vec<String> = self
            .cells
            .first()
            .map(|c| c.report.metrics.iter().map(|m| m.name.clone()).collect())
            .unwrap_or_default();
        let mut header = vec!["cell".to_string(), "seed".to_string()];
        header.extend(self.axes.iter().map(|a| a.key.clone()));
        header.extend(metrics.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for c in &self.cells {
            let mut row = vec![c.index.to_string(), c.seed.to_string()];
            row.extend(self.axes.iter().map(|a| c.assignment[&a.key].clone()));
            row.extend(
                metrics
                    .iter()
                    .map(|m| c.report.metric(m).map(|m| m.mean.to_string()).unwrap_or_default()),
            );
            w.write_record(&row).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Experiment(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Experiment(e.to_string()))
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), HarnessError> {
        let io = |e: std::io::Error| HarnessError::Experiment(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        let text = serde_json::to_string_pretty(self).expect("table serialises");
        std::fs::write(&json, text + "\n").map_err(io)?;
        std::fs::write(&csv, self.to_csv()?).map_err(io)?;
        Ok((json, csv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!(Axis::parse("mu=0.01,0.05").unwrap().values, ["0.01", "0.05"]);
        assert_eq!(Axis::parse("N=1..4").unwrap().values, ["1", "2", "3", "4"]);
        assert!(Axis::parse("mu=").is_err());
        assert!(Axis::parse("mu").is_err());
        assert!(Axis::parse("N=4..1").is_err());
    }

    #[test]
    fn empty_grid_is_config_error() {
        let e = sweep("bhk", &Settings::default(), &[]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn cells_cover_the_product() {
        let mut s = Settings::default();
        s.experiment.trials = 20;
        let axes = [Axis::parse("N=3,4").unwrap(), Axis::parse("M=1,2").unwrap()];
        let t = sweep("bhk", &s, &axes).unwrap();
        assert_eq!(t.cells.len(), 4);
        assert_eq!(t.cells[1].assignment["N"], "3");
        assert_eq!(t.cells[1].assignment["M"], "2");
        assert_eq!(t.cells[3].seed, cell_seed(0, 3));
        assert_eq!(t.to_csv().unwrap().lines().count(), 5);
    }
}
