//! Result files: metric JSON, series, loss traces, forecasts and tables.
//!
//! Forecast files for a target `(d, s)`:
//! * `forecast-dDDDD-sSSSS-od.txt`: `day slot i j value` lines of the blended
//!   OD forecast, the same layout as corpus day files but with real values.
//! * `forecast-dDDDD-sSSSS-demand.txt`: `i raw blended` lines per cell.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use stgat_core::eval::{MetricReport, SeriesRow};
use stgat_core::train::EpochLoss;
use stgat_core::transfer::ForecastResult;

use crate::error::{CliError, PathContext, Result};

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).at(path)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::user(format!("{}: {e}", path.display()))
}

pub fn write_loss_csv(path: &Path, trace: &[EpochLoss]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"]).map_err(csv_err(path))?;
    for e in trace {
        let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([e.epoch.to_string(), e.train_loss.to_string(), val]).map_err(csv_err(path))?;
    }
    w.flush().at(path)
}

pub fn write_series_csv(path: &Path, rows: &[SeriesRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["day", "slot", "total_actual", "total_predicted"]).map_err(csv_err(path))?;
    for r in rows {
        w.write_record([r.day.to_string(), r.slot.to_string(), r.total_actual.to_string(), r.total_predicted.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().at(path)
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsFile {
    pub predictor: String,
    pub fingerprint: String,
    pub test_days: [usize; 2],
    pub targets: usize,
    pub demand: MetricReport,
    pub od: MetricReport,
    /// Unblended model output, for the model predictor only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<RawMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RawMetrics {
    pub demand: MetricReport,
    pub od: MetricReport,
}

pub fn forecast_stem(day: usize, slot: usize) -> String {
    format!("forecast-d{day:04}-s{slot:04}")
}

pub fn write_forecast(dir: &Path, f: &ForecastResult) -> Result<()> {
    let (day, slot) = (f.target.day, f.target.slot);
    let stem = forecast_stem(day, slot);
    let mut od = String::from("# day slot i j value\n");
    let n = f.blended_od.rows();
    for i in 0..n {
        for j in 0..n {
            let v = f.blended_od[(i, j)];
            if v != 0.0 {
                writeln!(od, "{day} {slot} {i} {j} {v:e}").expect("string write");
            }
        }
    }
    let path = dir.join(format!("{stem}-od.txt"));
    fs::write(&path, od).at(&path)?;
    let mut demand = String::from("# i raw blended\n");
    for (i, (r, b)) in f.raw_demand.iter().zip(&f.blended_demand).enumerate() {
        writeln!(demand, "{i} {r:e} {b:e}").expect("string write");
    }
    let path = dir.join(format!("{stem}-demand.txt"));
    fs::write(&path, demand).at(&path)
}

/// One ablation variant's demand and OD reports.
#[derive(Debug, Clone, Serialize)]
pub struct VariantMetrics {
    pub variant: String,
    pub demand: MetricReport,
    pub od: MetricReport,
}

/// `variant,task,mape_0,mae_0,mape_3,mae_3,mape_5,mae_5`.
pub fn write_ablation_csv(path: &Path, rows: &[VariantMetrics]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["variant".to_string(), "task".to_string()];
    for k in stgat_core::eval::THRESHOLDS {
        header.push(format!("mape_{k}"));
        header.push(format!("mae_{k}"));
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for r in rows {
        for (task, rep) in [("demand", &r.demand), ("od", &r.od)] {
            let mut rec = vec![r.variant.clone(), task.to_string()];
            for t in &rep.thresholds {
                rec.push(t.mape.to_string());
                rec.push(t.mae.to_string());
            }
            w.write_record(&rec).map_err(csv_err(path))?;
        }
    }
    w.flush().at(path)
}

/// Side-by-side text table: one row per variant, demand and OD columns.
pub fn ablation_table(rows: &[VariantMetrics]) -> String {
    let mut out = String::new();
    let mut head = format!("{:<14}", "variant");
    for task in ["demand", "od"] {
        for k in stgat_core::eval::THRESHOLDS {
            write!(head, " {:>10} {:>10}", format!("{task} MAPE-{k}"), format!("MAE-{k}")).expect("string write");
        }
    }
    writeln!(out, "{}", head.trim_end()).expect("string write");
    for r in rows {
        let mut line = format!("{:<14}", r.variant);
        for rep in [&r.demand, &r.od] {
            for t in &rep.thresholds {
                write!(line, " {:>10.4} {:>10.4}", t.mape, t.mae).expect("string write");
            }
        }
        writeln!(out, "{line}").expect("string write");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub days: usize,
    pub test_targets: usize,
    pub demand_mape0: f64,
    pub demand_mae0: f64,
    pub od_mape0: f64,
    pub od_mae0: f64,
    pub havg_demand_mape0: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    if rows.is_empty() {
        w.write_record(["param", "value", "days", "test_targets", "demand_mape0", "demand_mae0", "od_mape0", "od_mae0", "havg_demand_mape0"])
            .map_err(csv_err(path))?;
    }
    w.flush().at(path)
}
