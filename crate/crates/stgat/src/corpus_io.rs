//! On-disk corpus: `manifest.json` plus one text file per day under `days/`.
//!
//! Day files hold one line per non-zero OD entry, `day slot i j count`,
//! sorted by `(slot, i, j)`. Lines starting with `#` are comments. A day
//! without orders is an empty file.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stgat_core::geo::GridSpec;
use stgat_core::ingest::{Corpus, SlotODMatrix};

use crate::error::{CliError, PathContext, Result};

pub const FORMAT: &str = "stgat-corpus/1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub grid: GridSpec,
    pub granularity_min: usize,
    pub start_date: Option<String>,
    pub start_weekday: usize,
    pub days: usize,
    pub slots_per_day: usize,
    pub n_cells: usize,
    pub total_orders: u64,
    pub files: Vec<String>,
}

pub fn day_file(day: usize) -> String {
    format!("days/day-{day:04}.txt")
}

pub fn format_day(corpus: &Corpus, day: usize) -> String {
    let spd = corpus.slots_per_day();
    let mut out = String::from("# day slot i j count\n");
    for m in &corpus.matrices()[day * spd..(day + 1) * spd] {
        for &(i, j, c) in m.entries() {
            writeln!(out, "{} {} {i} {j} {c}", m.day, m.slot).expect("string write");
        }
    }
    out
}

pub fn write_corpus(dir: &Path, corpus: &Corpus, start_date: Option<String>) -> Result<Manifest> {
    fs::create_dir_all(dir.join("days")).at(dir)?;
    let files: Vec<String> = (0..corpus.days).map(day_file).collect();
    for (day, name) in files.iter().enumerate() {
        let path = dir.join(name);
        fs::write(&path, format_day(corpus, day)).at(&path)?;
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        grid: corpus.grid,
        granularity_min: corpus.granularity_min,
        start_date,
        start_weekday: corpus.start_weekday,
        days: corpus.days,
        slots_per_day: corpus.slots_per_day(),
        n_cells: corpus.n(),
        total_orders: corpus.total_orders(),
        files,
    };
    crate::reports::write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_corpus(dir: &Path) -> Result<(Manifest, Corpus)> {
    let mpath = dir.join(MANIFEST);
    if !mpath.exists() {
        return Err(CliError::user(format!("no corpus at {}: missing {MANIFEST}", dir.display())));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&mpath).at(&mpath)?)
        .map_err(|e| CliError::user(format!("{}: {e}", mpath.display())))?;
    if manifest.format != FORMAT {
        return Err(CliError::user(format!("{}: unsupported format `{}`", mpath.display(), manifest.format)));
    }
    if manifest.files.len() != manifest.days {
        return Err(CliError::user(format!("{}: {} files for {} days", mpath.display(), manifest.files.len(), manifest.days)));
    }
    let n = manifest.grid.n_cells();
    let spd = manifest.slots_per_day;
    let mut matrices = Vec::with_capacity(manifest.days * spd);
    for (day, name) in manifest.files.iter().enumerate() {
        let path: PathBuf = dir.join(name);
        let text = fs::read_to_string(&path).at(&path)?;
        let mut per_slot: Vec<Vec<(usize, usize, u32)>> = vec![Vec::new(); spd];
        let mut seen = BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| CliError::user(format!("{}:{}: {why}: `{line}`", path.display(), lineno + 1));
            let f: Vec<u64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("expected five non-negative integers"))?;
            let [d, s, i, j, c] = f[..] else {
                return Err(bad("expected `day slot i j count`"));
            };
            let (d, s, i, j) = (d as usize, s as usize, i as usize, j as usize);
            if d != day {
                return Err(bad("day does not match the file"));
            }
            if s >= spd || i >= n || j >= n {
                return Err(bad("slot or cell out of range"));
            }
            if c == 0 || c > u32::MAX as u64 {
                return Err(bad("count must be in 1..=u32::MAX"));
            }
            if !seen.insert((s, i, j)) {
                return Err(bad("duplicate entry"));
            }
            per_slot[s].push((i, j, c as u32));
        }
        for (s, triples) in per_slot.iter().enumerate() {
            matrices.push(SlotODMatrix::from_triples(day, s, n, triples)?);
        }
    }
    let corpus = Corpus::new(manifest.grid, manifest.granularity_min, manifest.start_weekday, manifest.days, matrices)?;
    if corpus.slots_per_day() != spd || corpus.total_orders() != manifest.total_orders {
        return Err(CliError::user(format!(
            "{}: manifest totals disagree with the day files",
            mpath.display()
        )));
    }
    Ok((manifest, corpus))
}
