//! Comma-delimited cohort files.
//!
//! Header: `subject_id,stage,age,sex,cog,m1_r001,…,m1_rNNN,m2_r001,…`.
//! Reals are written with 17 significant digits so a write/read cycle is
//! exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Cohort, Sex, Stage};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

const FIXED: [&str; 5] = ["subject_id", "stage", "age", "sex", "cog"];

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn cohort_to_string(cohort: &Cohort) -> String {
    let mut out = FIXED.join(",");
    for (m, x) in cohort.modalities.iter().enumerate() {
        for r in 0..x.cols() {
            let _ = write!(out, ",m{}_r{:03}", m + 1, r + 1);
        }
    }
    out.push('\n');
    for i in 0..cohort.len() {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            cohort.subject_ids[i],
            cohort.stages[i],
            real(cohort.ages[i]),
            cohort.sexes[i].code(),
            real(cohort.cognition[i])
        );
        for x in &cohort.modalities {
            for v in x.row(i) {
                out.push(',');
                out.push_str(&real(*v));
            }
        }
        out.push('\n');
    }
    out
}

/// Parses the header into region counts per modality.
fn parse_header(line: &str) -> Result<Vec<usize>> {
    let cols: Vec<&str> = line.trim_end_matches('\r').split(',').map(str::trim).collect();
    if cols.len() < FIXED.len() || cols[..FIXED.len()] != FIXED {
        return Err(Error::parse(1, format!("header must start with {}", FIXED.join(","))));
    }
    let mut counts: Vec<usize> = Vec::new();
    for name in &cols[FIXED.len()..] {
        let bad = || Error::parse(1, format!("malformed feature column {name:?}"));
        let rest = name.strip_prefix('m').ok_or_else(bad)?;
        let (m, r) = rest.split_once("_r").ok_or_else(bad)?;
        let m: usize = m.parse().map_err(|_| bad())?;
        let r: usize = r.parse().map_err(|_| bad())?;
        if m == counts.len() + 1 && r == 1 {
            counts.push(1);
        } else if m == counts.len() && r == counts[m - 1] + 1 {
            counts[m - 1] += 1;
        } else {
            return Err(Error::parse(1, format!("feature column {name:?} is out of order")));
        }
    }
    if counts.is_empty() {
        return Err(Error::parse(1, "header has no feature columns"));
    }
    Ok(counts)
}

pub fn cohort_from_str(text: &str) -> Result<Cohort> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty cohort file"))?;
    let counts = parse_header(header)?;
    let width = FIXED.len() + counts.iter().sum::<usize>();

    let mut ids = Vec::new();
    let mut stages = Vec::new();
    let mut ages = Vec::new();
    let mut sexes = Vec::new();
    let mut cognition = Vec::new();
    let mut features: Vec<Vec<f64>> = vec![Vec::new(); counts.len()];
    for (no, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != width {
            return Err(Error::parse(no, format!("expected {width} fields, found {}", cells.len())));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(no, format!("invalid {what} {s:?}")))
        };
        ids.push(cells[0].to_string());
        stages.push(
            cells[1]
                .parse::<Stage>()
                .map_err(|_| Error::parse(no, format!("unknown stage label {:?}", cells[1])))?,
        );
        ages.push(num(cells[2], "age")?);
        sexes.push(
            cells[3]
                .parse::<Sex>()
                .map_err(|_| Error::parse(no, format!("unknown sex {:?}", cells[3])))?,
        );
        cognition.push(num(cells[4], "cognition score")?);
        let mut at = FIXED.len();
        for (m, &c) in counts.iter().enumerate() {
            for cell in &cells[at..at + c] {
                features[m].push(num(cell, "feature value")?);
            }
            at += c;
        }
    }
    let n = ids.len();
    let modalities = features
        .into_iter()
        .zip(&counts)
        .map(|(data, &c)| Matrix::from_vec(n, c, data))
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(ids, stages, ages, sexes, cognition, modalities).map_err(|e| Error::parse(0, e.to_string()))
}

pub fn write_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    fs::write(path, cohort_to_string(cohort))?;
    Ok(())
}

pub fn read_cohort(path: &Path) -> Result<Cohort> {
    cohort_from_str(&fs::read_to_string(path)?)
}
