//! Plain-text model checkpoints.
//!
//! ```text
//! normkit-checkpoint 1
//! latent_dim 10
//! covariate_dim 8
//! strategy mopoe
//! mopoe_include_empty true
//! modality m1 90 64,32
//! modality m2 90 64,32
//! block m0.dec.0.b 1 64
//! <64 values>
//! ...
//! ```
//!
//! Values are written in shortest round-trip exponent form, so loading
//! reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ModalityConfig, MvnModel};
use crate::aggregation::AggregationStrategy;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamSet};

const MAGIC: &str = "normkit-checkpoint";
const VERSION: u32 = 1;

pub fn write_checkpoint(model: &MvnModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "latent_dim {}", model.latent_dim);
    let _ = writeln!(out, "covariate_dim {}", model.covariate_dim);
    let _ = writeln!(out, "strategy {}", model.strategy);
    let _ = writeln!(out, "mopoe_include_empty {}", model.mopoe_include_empty);
    for m in &model.modalities {
        let hidden: Vec<String> = m.hidden_dims.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(out, "modality {} {} {}", m.name, m.input_dim, hidden.join(","));
    }
    for (name, block) in model.params.iter() {
        let _ = writeln!(out, "block {name} {} {}", block.rows(), block.cols());
        let values: Vec<String> = block.data().iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", values.join(" "));
    }
    out
}

fn field<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, &'a str)> {
    let (no, line) = lines
        .next()
        .ok_or_else(|| Error::parse(0, format!("missing {key} line")))?;
    match line.split_once(' ') {
        Some((k, v)) if k == key => Ok((no, v.trim())),
        _ => Err(Error::parse(no, format!("expected {key}, found {line:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(no: usize, s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::parse(no, format!("invalid {what} {s:?}")))
}

pub fn read_checkpoint(text: &str) -> Result<MvnModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (no, header) = lines.next().ok_or_else(|| Error::parse(1, "empty checkpoint"))?;
    let version = header
        .strip_prefix(MAGIC)
        .map(str::trim)
        .ok_or_else(|| Error::parse(no, "not a normkit checkpoint"))?;
    if parse_num::<u32>(no, version, "version")? != VERSION {
        return Err(Error::parse(no, format!("unsupported checkpoint version {version}")));
    }
    let (no, v) = field(&mut lines, "latent_dim")?;
    let latent_dim: usize = parse_num(no, v, "latent_dim")?;
    let (no, v) = field(&mut lines, "covariate_dim")?;
    let covariate_dim: usize = parse_num(no, v, "covariate_dim")?;
    let (no, v) = field(&mut lines, "strategy")?;
    let strategy: AggregationStrategy = v.parse().map_err(|e: Error| Error::parse(no, e.to_string()))?;
    let (no, v) = field(&mut lines, "mopoe_include_empty")?;
    let include_empty: bool = parse_num(no, v, "flag")?;

    let mut modalities = Vec::new();
    let mut blocks: Vec<(usize, String, usize, usize)> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    while let Some((no, line)) = lines.next() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.first() {
            Some(&"modality") if parts.len() == 4 && blocks.is_empty() => {
                let hidden = parts[3]
                    .split(',')
                    .map(|h| parse_num(no, h, "hidden size"))
                    .collect::<Result<Vec<usize>>>()?;
                let input_dim = parse_num(no, parts[2], "input dimension")?;
                modalities.push(
                    ModalityConfig::new(parts[1], input_dim, hidden)
                        .map_err(|e| Error::parse(no, e.to_string()))?,
                );
            }
            Some(&"block") if parts.len() == 4 => {
                let rows = parse_num(no, parts[2], "row count")?;
                let cols = parse_num(no, parts[3], "column count")?;
                let (vno, vline) = lines
                    .next()
                    .ok_or_else(|| Error::parse(no, "block without values"))?;
                let vals = vline
                    .split_whitespace()
                    .map(|t| parse_num(vno, t, "value"))
                    .collect::<Result<Vec<f64>>>()?;
                if vals.len() != rows * cols {
                    return Err(Error::parse(
                        vno,
                        format!("block {} needs {} values, found {}", parts[1], rows * cols, vals.len()),
                    ));
                }
                blocks.push((no, parts[1].to_string(), rows, cols));
                values.push(vals);
            }
            None => {}
            _ => return Err(Error::parse(no, format!("unexpected line {line:?}"))),
        }
    }

    let mut model = MvnModel::zeroed(modalities, latent_dim, covariate_dim, strategy)
        .map_err(|e| Error::parse(0, e.to_string()))?;
    model.mopoe_include_empty = include_empty;
    let mut params = ParamSet::new();
    for ((no, name, rows, cols), vals) in blocks.into_iter().zip(values) {
        params
            .insert(name, Matrix::from_vec(rows, cols, vals)?)
            .map_err(|e| Error::parse(no, e.to_string()))?;
    }
    model
        .with_params(params)
        .map_err(|e| Error::parse(0, format!("parameters do not fit the architecture: {e}")))
}

pub fn save_checkpoint(model: &MvnModel, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MvnModel> {
    read_checkpoint(&fs::read_to_string(path)?)
}
