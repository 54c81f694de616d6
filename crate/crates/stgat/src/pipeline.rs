//! The subcommands as library functions. Each writes into an output
//! directory, echoing the resolved configuration first.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use stgat_core::eval::{evaluate, evaluate_model, HistoricalAverage, ModelForecaster};
use stgat_core::experiment::{prepare_with, run_ar, run_prepared, ExperimentConfig, Prepared};
use stgat_core::ingest::{build_od, Corpus, OrderEvent, SlotIndex};
use stgat_core::synth::generate as synth_generate;
use stgat_core::temporal::{Channel, ChannelFlags};
use stgat_core::train::{split, train, SplitPlan, MIN_SPLIT_DAYS};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::corpus_io::{read_corpus, write_corpus};
use crate::error::{CliError, PathContext, Result};
use crate::orders::{parse_orders, to_events, write_orders};
use crate::reports::{
    ablation_table, write_ablation_csv, write_forecast, write_json, write_loss_csv, write_series_csv, write_sweep_csv, MetricsFile,
    RawMetrics, SweepRow, VariantMetrics,
};

pub const CHECKPOINT: &str = "checkpoint.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    Model,
    Ar,
    Havg,
}

impl FromStr for PredictorKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Self::Model),
            "ar" => Ok(Self::Ar),
            "havg" => Ok(Self::Havg),
            other => Err(CliError::user(format!("unknown predictor `{other}`, expected model, ar or havg"))),
        }
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    fingerprint: String,
    seed: u64,
    seeds: Vec<(String, u64)>,
}

/// Validates, creates `out` and echoes the configuration into it.
fn begin(cfg: &RunConfig, out: &Path, command: &str) -> Result<()> {
    cfg.validate()?;
    cfg.echo(out)?;
    write_json(
        &out.join("run.json"),
        &RunRecord {
            command,
            fingerprint: cfg.fingerprint(),
            seed: cfg.seed,
            seeds: cfg.seeds(),
        },
    )
}

fn require_path(flag: Option<&Path>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| configured.clone())
        .ok_or_else(|| CliError::user(format!("no {what} given: pass the flag or set it under [paths]")))
}

/// Loads a corpus and adopts its grid and granularity into `cfg`.
pub fn load_corpus(cfg: &mut RunConfig, dir: Option<&Path>) -> Result<Corpus> {
    let dir = require_path(dir, &cfg.paths.corpus, "corpus directory")?;
    let (_, corpus) = read_corpus(&dir)?;
    let g = corpus.grid;
    cfg.grid.origin_lat = g.origin_lat;
    cfg.grid.origin_lon = g.origin_lon;
    cfg.grid.cell_length_km = g.cell_length_km;
    cfg.grid.rows = g.rows;
    cfg.grid.cols = g.cols;
    cfg.grid.geo_threshold_km = g.geo_threshold_km;
    cfg.ingest.granularity_min = corpus.granularity_min;
    cfg.ingest.days = Some(corpus.days);
    cfg.paths.corpus = Some(dir);
    Ok(corpus)
}

/// The chronological split, or everything in training for short corpora.
pub fn plan_for(days: usize) -> SplitPlan {
    split(days).unwrap_or_else(|_| SplitPlan::train_only(days))
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    begin(cfg, out, "generate")?;
    let spec = cfg.scenario()?;
    let events = synth_generate(&spec)?;
    let path = out.join("orders.csv");
    write_orders(fs::File::create(&path).at(&path)?, cfg.scenario_start()?, &events)?;
    write_json(&out.join("scenario.json"), &spec)?;
    eprintln!("generated {} orders over {} days into {}", events.len(), spec.days, path.display());
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub rows: usize,
    pub malformed: usize,
    pub outside_grid: usize,
    pub accepted: usize,
    pub days: usize,
    pub slots: usize,
    pub nonzero_entries: usize,
    /// Non-zero share of all `slots × n × n` OD entries.
    pub density: f64,
    pub start_date: String,
}

pub fn cmd_ingest(cfg: &mut RunConfig, input: Option<&Path>, out: &Path) -> Result<IngestSummary> {
    cfg.validate()?;
    let input = require_path(input, &cfg.paths.orders, "orders CSV")?;
    if !input.exists() {
        return Err(CliError::user(format!("orders file {} does not exist", input.display())));
    }
    let parsed = parse_orders(&input)?;
    let start = cfg.ingest.start_date.as_deref().map(|d| chrono::NaiveDate::parse_from_str(d, "%Y-%m-%d")).transpose().map_err(CliError::io)?;
    let timed = to_events(&parsed.records, start)?;
    cfg.paths.orders = Some(input);
    cfg.ingest.start_date = Some(timed.start.to_string());
    begin(cfg, out, "ingest")?;
    let grid = cfg.grid();
    let build = build_od(&timed.events, &grid, cfg.ingest.granularity_min, cfg.ingest.days)?;
    let outside = build.skipped_outside;
    let accepted = build.accepted;
    let corpus = Corpus::from_build(grid, cfg.ingest.granularity_min, timed.start_weekday, build)?;
    write_corpus(out, &corpus, Some(timed.start.to_string()))?;
    let slots = corpus.matrices().len();
    let nonzero: usize = corpus.matrices().iter().map(|m| m.entries().len()).sum();
    let cells = (slots * corpus.n() * corpus.n()) as f64;
    let summary = IngestSummary {
        rows: parsed.rows,
        malformed: parsed.malformed,
        outside_grid: outside,
        accepted,
        days: corpus.days,
        slots,
        nonzero_entries: nonzero,
        density: if cells > 0.0 { nonzero as f64 / cells } else { 0.0 },
        start_date: timed.start.to_string(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    eprintln!(
        "ingested {accepted} of {} rows ({} malformed, {outside} outside the grid) into {} days",
        parsed.rows, parsed.malformed, corpus.days
    );
    Ok(summary)
}

fn prepared(corpus: &Corpus, exp: &ExperimentConfig) -> Result<Prepared> {
    Ok(prepare_with(corpus, exp, plan_for(corpus.days))?)
}

fn progress(epochs: usize) -> impl FnMut(&stgat_core::train::EpochLoss) {
    let every = (epochs / 10).max(1);
    move |e| {
        if e.epoch % every == 0 || e.epoch == epochs {
            match e.val_loss {
                Some(v) => eprintln!("epoch {:>4}: train {:.6} val {:.6}", e.epoch, e.train_loss, v),
                None => eprintln!("epoch {:>4}: train {:.6}", e.epoch, e.train_loss),
            }
        }
    }
}

#[derive(Serialize)]
struct TrainSummary {
    fingerprint: String,
    split: SplitPlan,
    train_targets: usize,
    val_targets: usize,
    best_epoch: usize,
    final_train_loss: f64,
}

pub fn cmd_train(cfg: &mut RunConfig, corpus_dir: Option<&Path>, out: &Path) -> Result<PathBuf> {
    let corpus = load_corpus(cfg, corpus_dir)?;
    begin(cfg, out, "train")?;
    if corpus.days < MIN_SPLIT_DAYS {
        eprintln!("corpus has {} days, fewer than {MIN_SPLIT_DAYS}: training on all of them without validation", corpus.days);
    }
    let exp = cfg.experiment()?;
    let prep = prepared(&corpus, &exp)?;
    let init = stgat_core::experiment::initial_params(&exp)?;
    let outcome = train(init, &exp.window, &prep.store, &prep.train_targets, &prep.val_targets, &exp.train, progress(exp.train.epochs))?;
    let ckpt = out.join(CHECKPOINT);
    checkpoint::save(&ckpt, &outcome.best)?;
    write_loss_csv(&out.join("loss.csv"), &outcome.trace)?;
    write_json(
        &out.join("train_summary.json"),
        &TrainSummary {
            fingerprint: cfg.fingerprint(),
            split: prep.plan.clone(),
            train_targets: prep.train_targets.len(),
            val_targets: prep.val_targets.len(),
            best_epoch: outcome.best_epoch,
            final_train_loss: outcome.trace.last().map_or(f64::NAN, |e| e.train_loss),
        },
    )?;
    eprintln!("best epoch {} of {}; checkpoint {}", outcome.best_epoch, exp.train.epochs, ckpt.display());
    Ok(ckpt)
}

pub fn cmd_evaluate(
    cfg: &mut RunConfig,
    corpus_dir: Option<&Path>,
    predictor: PredictorKind,
    checkpoint_path: Option<&Path>,
    out: &Path,
) -> Result<MetricsFile> {
    let corpus = load_corpus(cfg, corpus_dir)?;
    let params = match predictor {
        PredictorKind::Model => {
            let path = require_path(checkpoint_path, &cfg.paths.checkpoint, "checkpoint")?;
            let p = checkpoint::load(&path)?;
            cfg.paths.checkpoint = Some(path);
            cfg.model.z = p.dims.z;
            cfg.model.hidden = p.dims.hidden;
            cfg.model.heads = p.dims.heads;
            cfg.model.leaky_slope = p.dims.leaky_slope;
            Some(p)
        }
        _ => None,
    };
    begin(cfg, out, "evaluate")?;
    let exp = cfg.experiment()?;
    let prep = prepared(&corpus, &exp)?;
    if prep.test_targets.is_empty() {
        return Err(CliError::user(format!(
            "no test slots: evaluation needs at least {MIN_SPLIT_DAYS} days and test days past N_days, corpus has {}",
            corpus.days
        )));
    }
    let fp = cfg.fingerprint();
    let (name, mut eval, raw) = match predictor {
        PredictorKind::Havg => ("havg", evaluate(&HistoricalAverage { history: &prep.history }, &corpus, &prep.test_targets)?, None),
        PredictorKind::Ar => ("ar", run_ar(&corpus, &prep, exp.ar_order)?, None),
        PredictorKind::Model => {
            let params = params.as_ref().expect("loaded above");
            let f = ModelForecaster {
                params,
                window: &exp.window,
                store: &prep.store,
                history: &prep.history,
                lambda: exp.train.lambda,
            };
            let m = evaluate_model(&f, &corpus, &prep.test_targets)?;
            ("model", m.blended, Some(m.raw))
        }
    };
    eval.demand.fingerprint = fp.clone();
    eval.od.fingerprint = fp.clone();
    let raw = raw.map(|mut r| {
        r.demand.fingerprint = fp.clone();
        r.od.fingerprint = fp.clone();
        RawMetrics { demand: r.demand, od: r.od }
    });
    let metrics = MetricsFile {
        predictor: name.into(),
        fingerprint: fp,
        test_days: [prep.plan.test.start, prep.plan.test.end],
        targets: prep.test_targets.len(),
        demand: eval.demand,
        od: eval.od,
        raw,
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    write_series_csv(&out.join("series.csv"), &eval.series)?;
    eprintln!(
        "{name}: demand MAPE-0 {:.4} MAE-0 {:.4}; OD MAPE-0 {:.4} MAE-0 {:.4}",
        metrics.demand.mape0(),
        metrics.demand.at(0).map_or(f64::NAN, |t| t.mae),
        metrics.od.mape0(),
        metrics.od.at(0).map_or(f64::NAN, |t| t.mae)
    );
    Ok(metrics)
}

pub fn cmd_predict(
    cfg: &mut RunConfig,
    corpus_dir: Option<&Path>,
    checkpoint_path: Option<&Path>,
    day: usize,
    slot: usize,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(cfg, corpus_dir)?;
    let path = require_path(checkpoint_path, &cfg.paths.checkpoint, "checkpoint")?;
    let params = checkpoint::load(&path)?;
    cfg.paths.checkpoint = Some(path);
    let target = SlotIndex::new(day, slot);
    if !corpus.contains(target) {
        return Err(CliError::user(format!(
            "slot (day {day}, slot {slot}) is outside the corpus: days 0..{}, slots 0..{}",
            corpus.days,
            corpus.slots_per_day()
        )));
    }
    cfg.model.z = params.dims.z;
    cfg.model.hidden = params.dims.hidden;
    cfg.model.heads = params.dims.heads;
    cfg.model.leaky_slope = params.dims.leaky_slope;
    begin(cfg, out, "predict")?;
    let exp = cfg.experiment()?;
    let prep = prepared(&corpus, &exp)?;
    let f = ModelForecaster {
        params: &params,
        window: &exp.window,
        store: &prep.store,
        history: &prep.history,
        lambda: exp.train.lambda,
    }
    .forecast_result(target)?;
    write_forecast(out, &f)?;
    eprintln!("forecast for day {day} slot {slot}: total demand {:.3}", f.blended_demand.iter().sum::<f64>());
    Ok(())
}

/// Full model first, then one variant per removed channel.
pub fn ablation_variants() -> Vec<(String, ChannelFlags)> {
    let mut v = vec![("full".to_string(), ChannelFlags::default())];
    for c in Channel::ALL {
        let mut flags = ChannelFlags::default();
        match c {
            Channel::Linear => flags.linear = false,
            Channel::Stpp => flags.stpp = false,
            Channel::Stpm => flags.stpm = false,
            Channel::Nonlinear => flags.nonlinear = false,
        }
        v.push((format!("no-{}", c.name()), flags));
    }
    v
}

pub fn cmd_ablate(cfg: &mut RunConfig, corpus_dir: Option<&Path>, out: &Path) -> Result<Vec<VariantMetrics>> {
    let corpus = load_corpus(cfg, corpus_dir)?;
    begin(cfg, out, "ablate")?;
    let fp = cfg.fingerprint();
    let mut rows = Vec::new();
    for (variant, flags) in ablation_variants() {
        eprintln!("variant {variant}");
        let mut exp = cfg.experiment()?;
        exp.window.channels = flags;
        let prep = prepare_with(&corpus, &exp, split(corpus.days)?)?;
        let outcome = run_prepared(&corpus, &exp, prep, progress(exp.train.epochs))?;
        let mut demand = outcome.model.blended.demand;
        let mut od = outcome.model.blended.od;
        demand.fingerprint = fp.clone();
        od.fingerprint = fp.clone();
        rows.push(VariantMetrics { variant, demand, od });
    }
    write_ablation_csv(&out.join("ablation.csv"), &rows)?;
    let table = ablation_table(&rows);
    fs::write(out.join("ablation.txt"), &table).at(&out.join("ablation.txt"))?;
    write_json(&out.join("ablation.json"), &rows)?;
    eprint!("{table}");
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Granularity,
    NDays,
    HHours,
    CellLength,
}

impl FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "granularity" | "granularity_min" => Ok(Self::Granularity),
            "n_days" => Ok(Self::NDays),
            "h_hours" => Ok(Self::HHours),
            "cell_length" | "cell_length_km" => Ok(Self::CellLength),
            other => Err(CliError::user(format!(
                "unknown sweep parameter `{other}`, expected granularity, n_days, h_hours or cell_length_km"
            ))),
        }
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Granularity => "granularity_min",
            Self::NDays => "n_days",
            Self::HHours => "h_hours",
            Self::CellLength => "cell_length_km",
        }
    }

    /// Whether each point needs the raw orders re-binned.
    pub fn reingests(self) -> bool {
        matches!(self, Self::Granularity | Self::CellLength)
    }

    /// Sets the parameter on a copy of `base`. A new cell length keeps the
    /// covered area by rescaling the row and column counts.
    pub fn apply(self, base: &RunConfig, value: &str) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let bad = || CliError::user(format!("invalid value `{value}` for {}", self.name()));
        match self {
            Self::Granularity => cfg.ingest.granularity_min = value.parse().map_err(|_| bad())?,
            Self::NDays => cfg.temporal.n_days = value.parse().map_err(|_| bad())?,
            Self::HHours => cfg.temporal.h_hours = value.parse().map_err(|_| bad())?,
            Self::CellLength => {
                let l: f64 = value.parse().map_err(|_| bad())?;
                if !(l > 0.0 && l.is_finite()) {
                    return Err(bad());
                }
                let scale = base.grid.cell_length_km / l;
                cfg.grid.rows = ((base.grid.rows as f64 * scale) - 1e-9).ceil().max(1.0) as usize;
                cfg.grid.cols = ((base.grid.cols as f64 * scale) - 1e-9).ceil().max(1.0) as usize;
                cfg.grid.cell_length_km = l;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Where sweep points get their data.
pub enum SweepSource {
    /// Raw orders, re-binned per point. `days` fixes the corpus length.
    Events { events: Vec<OrderEvent>, start_weekday: usize, days: Option<usize> },
    Corpus(Corpus),
}

impl SweepSource {
    fn corpus_for(&self, cfg: &RunConfig) -> Result<Corpus> {
        match self {
            Self::Events { events, start_weekday, days } => {
                let grid = cfg.grid();
                let build = build_od(events, &grid, cfg.ingest.granularity_min, *days)?;
                Ok(Corpus::from_build(grid, cfg.ingest.granularity_min, *start_weekday, build)?)
            }
            Self::Corpus(c) => Ok(c.clone()),
        }
    }
}

pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[String], source: &SweepSource) -> Result<Vec<SweepRow>> {
    if param.reingests() && matches!(source, SweepSource::Corpus(_)) {
        return Err(CliError::user(format!("sweeping {} needs raw orders or a scenario, not an ingested corpus", param.name())));
    }
    let points = values.iter().map(|v| param.apply(cfg, v)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(points.len());
    for (value, point) in values.iter().zip(&points) {
        eprintln!("{} = {value}", param.name());
        let corpus = source.corpus_for(point)?;
        let exp = point.experiment()?;
        let prep = prepare_with(&corpus, &exp, split(corpus.days)?)?;
        let o = run_prepared(&corpus, &exp, prep, progress(exp.train.epochs))?;
        let mae0 = |r: &stgat_core::eval::MetricReport| r.at(0).map_or(f64::NAN, |t| t.mae);
        rows.push(SweepRow {
            param: param.name().into(),
            value: value.clone(),
            days: corpus.days,
            test_targets: o.prepared.test_targets.len(),
            demand_mape0: o.model.blended.demand.mape0(),
            demand_mae0: mae0(&o.model.blended.demand),
            od_mape0: o.model.blended.od.mape0(),
            od_mae0: mae0(&o.model.blended.od),
            havg_demand_mape0: o.havg.demand.mape0(),
        });
    }
    Ok(rows)
}

pub fn cmd_sweep(
    cfg: &mut RunConfig,
    param: &str,
    values: &[String],
    orders: Option<&Path>,
    corpus_dir: Option<&Path>,
    out: &Path,
) -> Result<Vec<SweepRow>> {
    let param: SweepParam = param.parse()?;
    if values.is_empty() {
        return Err(CliError::user("sweep needs at least one value"));
    }
    let source = if let Some(path) = orders.map(Path::to_path_buf).or_else(|| cfg.paths.orders.clone()) {
        let parsed = parse_orders(&path)?;
        let start = cfg.ingest.start_date.as_deref().map(|d| chrono::NaiveDate::parse_from_str(d, "%Y-%m-%d")).transpose().map_err(CliError::io)?;
        let timed = to_events(&parsed.records, start)?;
        cfg.paths.orders = Some(path);
        SweepSource::Events { events: timed.events, start_weekday: timed.start_weekday, days: cfg.ingest.days }
    } else if corpus_dir.is_some() || cfg.paths.corpus.is_some() {
        SweepSource::Corpus(load_corpus(cfg, corpus_dir)?)
    } else {
        let spec = cfg.scenario()?;
        let start = cfg.scenario_start()?;
        SweepSource::Events {
            events: synth_generate(&spec)?,
            start_weekday: chrono::Datelike::weekday(&start).num_days_from_monday() as usize,
            days: Some(spec.days),
        }
    };
    begin(cfg, out, "sweep")?;
    let rows = sweep(cfg, param, values, &source)?;
    write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    Ok(rows)
}
