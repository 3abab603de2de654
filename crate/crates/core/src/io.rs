//! Counting-process CSV ingestion and serialization.
//!
//! `subjects.csv`: `id,delta,x_time,v_time,gamma,<baseline...>`, one row per
//! subject. `covariates.csv`: `id,time,<covariate...>`, each value holding
//! from `time` until the next record of the same subject.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::cohort::{Cohort, StepFunction, SubjectPath};
use crate::error::{Error, Result};

const SUBJECT_FIXED: [&str; 5] = ["id", "delta", "x_time", "v_time", "gamma"];
const COVARIATE_FIXED: [&str; 2] = ["id", "time"];

pub fn load_cohort(subjects_path: &Path, covariates_path: &Path) -> Result<Cohort<f64>> {
    let subjects = File::open(subjects_path).map_err(|e| Error::io(subjects_path, e))?;
    let covariates = File::open(covariates_path).map_err(|e| Error::io(covariates_path, e))?;
    read_cohort(
        subjects,
        covariates,
        &subjects_path.display().to_string(),
        &covariates_path.display().to_string(),
    )
}

struct SubjectRow {
    line: usize,
    id: String,
    delta: bool,
    x_time: f64,
    v_time: f64,
    gamma: bool,
    baseline: Vec<f64>,
}

fn data_err(file: &str, row: usize, message: impl Into<String>) -> Error {
    Error::Data {
        file: file.to_string(),
        row,
        message: message.into(),
    }
}

fn csv_err(file: &str, err: csv::Error) -> Error {
    let row = err.position().map_or(0, |p| p.line() as usize);
    let message = match err.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => format!("inconsistent column count: expected {expected_len}, found {len}"),
        _ => err.to_string(),
    };
    data_err(file, row, message)
}

fn parse_f64(file: &str, row: usize, column: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| data_err(file, row, format!("column {column}: cannot parse {raw:?} as a number")))?;
    if !v.is_finite() {
        return Err(data_err(file, row, format!("column {column}: non-finite value {raw:?}")));
    }
    Ok(v)
}

fn parse_bool(file: &str, row: usize, column: &str, raw: &str) -> Result<bool> {
    match raw.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(data_err(file, row, format!("column {column}: expected 0 or 1, found {other:?}"))),
    }
}

fn check_header(file: &str, header: &csv::StringRecord, fixed: &[&str]) -> Result<Vec<String>> {
    if header.len() < fixed.len() || fixed.iter().zip(header.iter()).any(|(a, b)| *a != b.trim()) {
        return Err(data_err(
            file,
            1,
            format!("header must start with {}", fixed.join(",")),
        ));
    }
    Ok(header.iter().skip(fixed.len()).map(|s| s.trim().to_string()).collect())
}

/// Reads a cohort from any pair of CSV readers. `*_name` label error messages.
pub fn read_cohort<R1: Read, R2: Read>(
    subjects: R1,
    covariates: R2,
    subjects_name: &str,
    covariates_name: &str,
) -> Result<Cohort<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(subjects);
    let header = rdr.headers().map_err(|e| csv_err(subjects_name, e))?.clone();
    let baseline_names = check_header(subjects_name, &header, &SUBJECT_FIXED)?;

    let mut rows = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(subjects_name, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id = rec[0].trim().to_string();
        if index_of.insert(id.clone(), rows.len()).is_some() {
            return Err(data_err(subjects_name, line, format!("duplicate subject id {id:?}")));
        }
        let delta = parse_bool(subjects_name, line, "delta", &rec[1])?;
        let x_time = parse_f64(subjects_name, line, "x_time", &rec[2])?;
        let v_time = parse_f64(subjects_name, line, "v_time", &rec[3])?;
        let gamma = parse_bool(subjects_name, line, "gamma", &rec[4])?;
        if x_time < 0.0 || v_time < 0.0 {
            return Err(data_err(subjects_name, line, "negative time"));
        }
        if v_time > x_time {
            return Err(data_err(
                subjects_name,
                line,
                format!("non-monotone times: v_time {v_time} > x_time {x_time}"),
            ));
        }
        let baseline = baseline_names
            .iter()
            .enumerate()
            .map(|(k, name)| parse_f64(subjects_name, line, name, &rec[5 + k]))
            .collect::<Result<Vec<_>>>()?;
        rows.push(SubjectRow {
            line,
            id,
            delta,
            x_time,
            v_time,
            gamma,
            baseline,
        });
    }

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(covariates);
    let header = rdr.headers().map_err(|e| csv_err(covariates_name, e))?.clone();
    let covariate_names = check_header(covariates_name, &header, &COVARIATE_FIXED)?;

    let mut trajectories: Vec<(Vec<f64>, Vec<Vec<f64>>)> = vec![(Vec::new(), Vec::new()); rows.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(covariates_name, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id = rec[0].trim();
        let &idx = index_of.get(id).ok_or_else(|| {
            data_err(covariates_name, line, format!("subject id {id:?} not present in subjects file"))
        })?;
        let time = parse_f64(covariates_name, line, "time", &rec[1])?;
        if time < 0.0 {
            return Err(data_err(covariates_name, line, "negative time"));
        }
        if time > rows[idx].x_time {
            return Err(data_err(
                covariates_name,
                line,
                format!("time {time} beyond x_time {} of subject {id:?}", rows[idx].x_time),
            ));
        }
        let values = covariate_names
            .iter()
            .enumerate()
            .map(|(k, name)| parse_f64(covariates_name, line, name, &rec[2 + k]))
            .collect::<Result<Vec<_>>>()?;
        let (times, vals) = &mut trajectories[idx];
        match times.last() {
            Some(&last) if time < last => {
                return Err(data_err(
                    covariates_name,
                    line,
                    format!("non-monotone times for subject {id:?}: {time} after {last}"),
                ));
            }
            Some(&last) if time == last => {
                if vals.last() != Some(&values) {
                    return Err(data_err(
                        covariates_name,
                        line,
                        format!("conflicting duplicate record at time {time} for subject {id:?}"),
                    ));
                }
                continue;
            }
            _ => {}
        }
        times.push(time);
        vals.push(values);
    }

    let mut subjects = Vec::with_capacity(rows.len());
    for (row, (times, vals)) in rows.into_iter().zip(trajectories) {
        let covariates = if times.is_empty() {
            if !covariate_names.is_empty() {
                return Err(data_err(
                    subjects_name,
                    row.line,
                    format!("subject {:?} has no covariate records", row.id),
                ));
            }
            StepFunction::constant(Vec::new())
        } else {
            if times[0] != 0.0 {
                return Err(data_err(
                    subjects_name,
                    row.line,
                    format!("subject {:?}: first covariate record must be at time 0", row.id),
                ));
            }
            StepFunction::new(times, vals)?
        };
        let path = SubjectPath {
            id: row.id,
            baseline: row.baseline,
            covariates,
            x_time: row.x_time,
            delta: row.delta,
            v_time: row.v_time,
            gamma: row.gamma,
        };
        path.validate()
            .map_err(|m| data_err(subjects_name, row.line, m))?;
        subjects.push(path);
    }
    Cohort::new(subjects, covariate_names, baseline_names)
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes the subjects table. Floats use the shortest representation that
/// parses back to the same bits.
pub fn write_subjects<W: Write>(cohort: &Cohort<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = SUBJECT_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(cohort.baseline_names().iter().cloned());
    w.write_record(&header)?;
    for s in cohort.subjects() {
        let mut rec = vec![
            s.id.clone(),
            flag(s.delta).into(),
            s.x_time.to_string(),
            s.v_time.to_string(),
            flag(s.gamma).into(),
        ];
        rec.extend(s.baseline.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("subjects", e))?;
    Ok(())
}

pub fn write_covariates<W: Write>(cohort: &Cohort<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = COVARIATE_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(cohort.covariate_names().iter().cloned());
    w.write_record(&header)?;
    if cohort.covariate_names().is_empty() {
        w.flush().map_err(|e| Error::io("covariates", e))?;
        return Ok(());
    }
    for s in cohort.subjects() {
        for (k, &t) in s.covariates.breakpoints().iter().enumerate() {
            let mut rec = vec![s.id.clone(), t.to_string()];
            rec.extend(s.covariates.value(k).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("covariates", e))?;
    Ok(())
}

pub fn save_cohort(cohort: &Cohort<f64>, subjects_path: &Path, covariates_path: &Path) -> Result<()> {
    let f = File::create(subjects_path).map_err(|e| Error::io(subjects_path, e))?;
    write_subjects(cohort, f)?;
    let f = File::create(covariates_path).map_err(|e| Error::io(covariates_path, e))?;
    write_covariates(cohort, f)
}
