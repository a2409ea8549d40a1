//! CSV ingestion and emission for trial and target samples.
//!
//! Files carry a header row. Missing covariates are the literal token `NA`.
//! The trial file holds the covariates plus a treatment column (values 0/1)
//! and an outcome column; the target file holds the covariates only. The
//! source of a row is implied by the file it came from, so a `source` column
//! is rejected.

use std::io::{Read, Write};
use std::path::Path;

use crate::data::{MaskedMatrix, TargetSample, TrialSample};
use crate::error::{Error, Result};

pub const NA_TOKEN: &str = "NA";
pub const DEFAULT_TREATMENT_COLUMN: &str = "A";
pub const DEFAULT_OUTCOME_COLUMN: &str = "Y";
const RESERVED_SOURCE_COLUMN: &str = "source";

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return NA_TOKEN.to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn parse_cell(raw: &str, line: usize, column: &str) -> Result<Option<f64>> {
    let t = raw.trim();
    if t == NA_TOKEN {
        return Ok(None);
    }
    let v: f64 = t
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}, column `{column}`: cannot parse `{t}`")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!(
            "line {line}, column `{column}`: non-finite value `{t}`"
        )));
    }
    Ok(Some(v))
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Schema("missing header row".into()));
    }
    if header.iter().any(|h| h.eq_ignore_ascii_case(RESERVED_SOURCE_COLUMN)) {
        return Err(Error::Schema(
            "a `source` column is not accepted; the source is implied by the input file".into(),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| s.to_string()).collect());
    }
    Ok(Table { header, rows })
}

fn covariates_from(table: &Table, skip: &[usize]) -> Result<MaskedMatrix> {
    let cols: Vec<usize> = (0..table.header.len()).filter(|c| !skip.contains(c)).collect();
    let names: Vec<String> = cols.iter().map(|&c| table.header[c].clone()).collect();
    let n = table.rows.len();
    let p = cols.len();
    let mut values = Vec::with_capacity(n * p);
    let mut mask = Vec::with_capacity(n * p);
    for (r, row) in table.rows.iter().enumerate() {
        for &c in &cols {
            match parse_cell(&row[c], r + 2, &table.header[c])? {
                Some(v) => {
                    values.push(v);
                    mask.push(true);
                }
                None => {
                    values.push(0.0);
                    mask.push(false);
                }
            }
        }
    }
    MaskedMatrix::new(n, p, values, mask, names)
}

fn column_index(table: &Table, name: &str) -> Result<usize> {
    table
        .header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("required column `{name}` not found")))
}

pub fn read_trial<R: Read>(reader: R, treatment_col: &str, outcome_col: &str) -> Result<TrialSample> {
    let table = read_table(reader)?;
    let a_col = column_index(&table, treatment_col)?;
    let y_col = column_index(&table, outcome_col)?;
    let mut treatment = Vec::with_capacity(table.rows.len());
    let mut outcome = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        let a = parse_cell(&row[a_col], r + 2, treatment_col)?
            .ok_or_else(|| Error::Schema(format!("line {}: treatment must be observed", r + 2)))?;
        treatment.push(match a {
            x if x == 0.0 => false,
            x if x == 1.0 => true,
            _ => {
                return Err(Error::Schema(format!(
                    "line {}: treatment must be 0 or 1, got {a}",
                    r + 2
                )))
            }
        });
        let y = parse_cell(&row[y_col], r + 2, outcome_col)?
            .ok_or_else(|| Error::Schema(format!("line {}: outcome must be observed", r + 2)))?;
        outcome.push(y);
    }
    let covariates = covariates_from(&table, &[a_col, y_col])?;
    TrialSample::new(covariates, treatment, outcome)
}

pub fn read_target<R: Read>(reader: R) -> Result<TargetSample> {
    let table = read_table(reader)?;
    Ok(TargetSample::new(covariates_from(&table, &[])?))
}

pub fn read_trial_file(path: &Path, treatment_col: &str, outcome_col: &str) -> Result<TrialSample> {
    read_trial(std::fs::File::open(path)?, treatment_col, outcome_col)
}

pub fn read_target_file(path: &Path) -> Result<TargetSample> {
    read_target(std::fs::File::open(path)?)
}

fn covariate_cells(m: &MaskedMatrix, i: usize) -> Vec<String> {
    (0..m.ncols())
        .map(|j| m.get(i, j).map(fmt_f64).unwrap_or_else(|| NA_TOKEN.into()))
        .collect()
}

pub fn write_trial<W: Write>(writer: W, t: &TrialSample) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = t.covariates.names().to_vec();
    header.push(DEFAULT_TREATMENT_COLUMN.into());
    header.push(DEFAULT_OUTCOME_COLUMN.into());
    w.write_record(&header)?;
    for i in 0..t.len() {
        let mut rec = covariate_cells(&t.covariates, i);
        rec.push(if t.treatment[i] { "1".into() } else { "0".into() });
        rec.push(fmt_f64(t.outcome[i]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_target<W: Write>(writer: W, o: &TargetSample) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(o.covariates.names())?;
    for i in 0..o.len() {
        w.write_record(covariate_cells(&o.covariates, i))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trial_file(path: &Path, t: &TrialSample) -> Result<()> {
    write_trial(std::fs::File::create(path)?, t)
}

pub fn write_target_file(path: &Path, o: &TargetSample) -> Result<()> {
    write_target(std::fs::File::create(path)?, o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_round_trip_with_na() {
        let src = "X1,X2,A,Y\n1.5,NA,1,3.0\n-2,4,0,1e1\n";
        let t = read_trial(src.as_bytes(), "A", "Y").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.covariates.get(0, 1), None);
        assert_eq!(t.covariates.get(1, 0), Some(-2.0));
        assert_eq!(t.treatment, vec![true, false]);
        let mut buf = Vec::new();
        write_trial(&mut buf, &t).unwrap();
        let back = read_trial(buf.as_slice(), "A", "Y").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_source_column_and_bad_treatment() {
        assert!(read_target("X1,source\n1,0\n".as_bytes()).is_err());
        assert!(read_trial("X1,A,Y\n1,2,0\n".as_bytes(), "A", "Y").is_err());
        assert!(read_trial("X1,A,Y\n1,1,NA\n".as_bytes(), "A", "Y").is_err());
    }

    #[test]
    fn seventeen_significant_digits() {
        let s = fmt_f64(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
    }
}
