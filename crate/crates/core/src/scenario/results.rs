//! Sweep results and their CSV / JSON forms.

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Mode;

pub const CSV_HEADER: [&str; 7] = ["speed_kmh", "mode", "scenario_id", "seed", "detected", "total", "rate_pct"];
pub const MEAN_ID: &str = "mean";

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub speed_kmh: f64,
    pub mode: Mode,
    pub scenario_id: String,
    pub seed: u64,
    pub detected: usize,
    pub total: usize,
    pub rate_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub speed_kmh: f64,
    pub mode: Mode,
    pub mean_rate_pct: f64,
    pub rates: Vec<f64>,
    pub detected: usize,
    pub total: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

impl SweepResult {
    /// Aggregates per (speed, mode) in order of first appearance.
    pub fn from_runs(runs: Vec<RunRow>) -> Self {
        let mut aggregates: Vec<AggregateRow> = Vec::new();
        for r in &runs {
            match aggregates.iter_mut().find(|a| a.speed_kmh == r.speed_kmh && a.mode == r.mode) {
                Some(a) => {
                    a.rates.push(r.rate_pct);
                    a.detected += r.detected;
                    a.total += r.total;
                }
                None => aggregates.push(AggregateRow {
                    speed_kmh: r.speed_kmh,
                    mode: r.mode,
                    mean_rate_pct: 0.0,
                    rates: vec![r.rate_pct],
                    detected: r.detected,
                    total: r.total,
                }),
            }
        }
        for a in &mut aggregates {
            a.mean_rate_pct = mean(&a.rates);
        }
        SweepResult { runs, aggregates }
    }

    pub fn aggregate(&self, speed_kmh: f64, mode: Mode) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.speed_kmh == speed_kmh && a.mode == mode)
    }

    /// Per-run rows followed by one `mean` row per (speed, mode).
    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), ResultsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for r in &self.runs {
            out.write_record([
                format!("{:?}", r.speed_kmh),
                r.mode.to_string(),
                r.scenario_id.clone(),
                r.seed.to_string(),
                r.detected.to_string(),
                r.total.to_string(),
                format!("{:?}", r.rate_pct),
            ])?;
        }
        for a in &self.aggregates {
            out.write_record([
                format!("{:?}", a.speed_kmh),
                a.mode.to_string(),
                MEAN_ID.to_string(),
                String::new(),
                a.detected.to_string(),
                a.total.to_string(),
                format!("{:?}", a.mean_rate_pct),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Parses CSV written by [`SweepResult::write_csv`]. Aggregate rows are
    /// rebuilt from the run rows and checked against the file.
    pub fn from_csv(text: &str) -> Result<Self, ResultsError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(ResultsError::Row { row: 0, message: format!("unexpected header {header:?}") });
        }
        let mut runs = Vec::new();
        let mut means = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row = i + 1;
            let bad = |message: String| ResultsError::Row { row, message };
            let num = |idx: usize| -> Result<f64, ResultsError> {
                rec[idx].parse::<f64>().map_err(|e| bad(format!("{}: {e}", CSV_HEADER[idx])))
            };
            let count = |idx: usize| -> Result<usize, ResultsError> {
                rec[idx].parse::<usize>().map_err(|e| bad(format!("{}: {e}", CSV_HEADER[idx])))
            };
            let speed_kmh = num(0)?;
            let mode: Mode = rec[1].parse().map_err(bad)?;
            if &rec[2] == MEAN_ID {
                means.push((speed_kmh, mode, count(4)?, count(5)?, num(6)?));
            } else {
                runs.push(RunRow {
                    speed_kmh,
                    mode,
                    scenario_id: rec[2].to_string(),
                    seed: rec[3].parse().map_err(|e| bad(format!("seed: {e}")))?,
                    detected: count(4)?,
                    total: count(5)?,
                    rate_pct: num(6)?,
                });
            }
        }
        let result = SweepResult::from_runs(runs);
        if means.len() != result.aggregates.len() {
            return Err(ResultsError::Row { row: 0, message: "mean rows do not match run rows".into() });
        }
        for (m, a) in means.iter().zip(&result.aggregates) {
            if (m.0, m.1, m.2, m.3) != (a.speed_kmh, a.mode, a.detected, a.total) || m.4 != a.mean_rate_pct {
                return Err(ResultsError::Row {
                    row: 0,
                    message: format!("mean row for {} km/h {} disagrees with its runs", m.0, m.1),
                });
            }
        }
        Ok(result)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ResultsError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(speed: f64, mode: Mode, id: &str, detected: usize) -> RunRow {
        RunRow {
            speed_kmh: speed,
            mode,
            scenario_id: id.into(),
            seed: 42,
            detected,
            total: 5,
            rate_pct: 100.0 * detected as f64 / 5.0,
        }
    }

    #[test]
    fn one_of_five_is_twenty_percent() {
        let r = SweepResult::from_runs(vec![row(20.0, Mode::Hybrid, "s01", 1)]);
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "speed_kmh,mode,scenario_id,seed,detected,total,rate_pct");
        assert_eq!(lines.next().unwrap(), "20.0,hybrid,s01,42,1,5,20.0");
        assert_eq!(lines.next().unwrap(), "20.0,hybrid,mean,,1,5,20.0");
        assert_eq!(r.aggregates[0].mean_rate_pct, 20.0);
    }

    #[test]
    fn empty_sweep_is_header_only() {
        let csv = SweepResult::default().to_csv();
        assert_eq!(csv, "speed_kmh,mode,scenario_id,seed,detected,total,rate_pct\n");
        assert_eq!(SweepResult::from_csv(&csv).unwrap(), SweepResult::default());
    }

    #[test]
    fn csv_and_json_round_trip() {
        let r = SweepResult::from_runs(vec![
            row(20.0, Mode::Hybrid, "s01", 1),
            row(20.0, Mode::Hybrid, "s02", 2),
            row(20.0, Mode::P2dapOnly, "s01", 5),
            row(60.0, Mode::FootprintOnly, "s01", 3),
        ]);
        assert_eq!(SweepResult::from_csv(&r.to_csv()).unwrap(), r);
        assert_eq!(SweepResult::from_json(&r.to_json()).unwrap(), r);
        assert!((r.aggregate(20.0, Mode::Hybrid).unwrap().mean_rate_pct - 30.0).abs() < 1e-12);
    }

    #[test]
    fn tampered_mean_row_rejected() {
        let r = SweepResult::from_runs(vec![row(20.0, Mode::Hybrid, "s01", 1)]);
        let csv = r.to_csv().replace("mean,,1,5,20.0", "mean,,1,5,40.0");
        assert!(SweepResult::from_csv(&csv).is_err());
    }
}
