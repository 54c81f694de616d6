//! Plain-text parameter checkpoints.
//!
//! ```text
//! stgat-checkpoint 1
//! dims <z> <hidden> <heads> <leaky_slope>
//! tensors <count>
//! <name> <rows> <cols>        one manifest line per tensor
//! ...
//! data <name>                 then `rows` lines of `cols` values each
//! ...
//! ```
//!
//! Values are written in shortest round-trip exponent form, so loading a
//! saved checkpoint reproduces every bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use stgat_core::params::{ModelDims, ModelParams};
use stgat_core::Tensor2;

use crate::error::{CliError, PathContext, Result};

const MAGIC: &str = "stgat-checkpoint 1";

pub fn to_text(params: &ModelParams) -> String {
    let d = params.dims;
    let mut out = format!("{MAGIC}\ndims {} {} {} {:e}\ntensors {}\n", d.z, d.hidden, d.heads, d.leaky_slope, params.tensors.len());
    for (name, t) in params.names().iter().zip(&params.tensors) {
        writeln!(out, "{name} {} {}", t.rows(), t.cols()).expect("string write");
    }
    for (name, t) in params.names().iter().zip(&params.tensors) {
        writeln!(out, "data {name}").expect("string write");
        for r in 0..t.rows() {
            let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", row.join(" ")).expect("string write");
        }
    }
    out
}

pub fn from_text(text: &str) -> Result<ModelParams> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
    let mut next = |what: &str| lines.next().ok_or_else(|| CliError::user(format!("checkpoint truncated, expected {what}")));
    let bad = |line: usize, why: String| CliError::user(format!("checkpoint line {line}: {why}"));

    let (k, magic) = next("header")?;
    if magic != MAGIC {
        return Err(bad(k, format!("expected `{MAGIC}`")));
    }
    let (k, dims_line) = next("dims")?;
    let f: Vec<&str> = dims_line.split_whitespace().collect();
    let dims = match f[..] {
        ["dims", z, h, heads, slope] => ModelDims {
            z: z.parse().map_err(|_| bad(k, "bad z".into()))?,
            hidden: h.parse().map_err(|_| bad(k, "bad hidden".into()))?,
            heads: heads.parse().map_err(|_| bad(k, "bad heads".into()))?,
            leaky_slope: slope.parse().map_err(|_| bad(k, "bad leaky_slope".into()))?,
        },
        _ => return Err(bad(k, "expected `dims z hidden heads leaky_slope`".into())),
    };
    let (k, count_line) = next("tensor count")?;
    let count: usize = count_line
        .strip_prefix("tensors ")
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| bad(k, "expected `tensors <count>`".into()))?;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let (k, l) = next("tensor manifest entry")?;
        let f: Vec<&str> = l.split_whitespace().collect();
        let parsed = match f[..] {
            [name, r, c] => r.parse::<usize>().ok().zip(c.parse::<usize>().ok()).map(|(r, c)| (name.to_string(), r, c)),
            _ => None,
        };
        shapes.push(parsed.ok_or_else(|| bad(k, "expected `<name> <rows> <cols>`".into()))?);
    }
    let mut named = Vec::with_capacity(count);
    for (name, rows, cols) in shapes {
        let (k, l) = next("data block")?;
        if l.strip_prefix("data ") != Some(name.as_str()) {
            return Err(bad(k, format!("expected `data {name}`")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (k, l) = next("tensor row")?;
            let row: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(k, "non-numeric value".into()))?;
            if row.len() != cols {
                return Err(bad(k, format!("{name}: expected {cols} values, found {}", row.len())));
            }
            data.extend(row);
        }
        named.push((name, Tensor2::from_vec(rows, cols, data)?));
    }
    if let Some((k, l)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(bad(k, format!("trailing content `{l}`")));
    }
    ModelParams::from_named(dims, named).map_err(|e| CliError::user(format!("checkpoint does not fit the model: {e}")))
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, to_text(params)).at(path)
}

pub fn load(path: &Path) -> Result<ModelParams> {
    if !path.exists() {
        return Err(CliError::user(format!("checkpoint {} does not exist", path.display())));
    }
    from_text(&fs::read_to_string(path).at(path)?).map_err(|e| e.context(path.display()))
}
