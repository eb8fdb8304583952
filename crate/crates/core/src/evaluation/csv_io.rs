//! Result CSV with one row per (record, user) plus an aggregate row.
//!
//! Header: `scheme,scenario,nu,h_lo,h_hi,lambda_ratio,user,ser,sser,trials,ci95,seed`.
//! Users are numbered from 1; the aggregate row has `user = 0`, `ser = sser`
//! and the pooled half-width in `ci95`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ser::SerRecord;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 12] = [
    "scheme",
    "scenario",
    "nu",
    "h_lo",
    "h_hi",
    "lambda_ratio",
    "user",
    "ser",
    "sser",
    "trials",
    "ci95",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    scheme: String,
    scenario: String,
    nu: f64,
    h_lo: f64,
    h_hi: f64,
    lambda_ratio: f64,
    user: usize,
    ser: f64,
    sser: f64,
    trials: u64,
    ci95: f64,
    seed: u64,
}

pub fn write_records<W: Write>(out: W, records: &[SerRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let base = |user: usize, ser: f64, ci95: f64| Row {
            scheme: r.scheme.clone(),
            scenario: r.scenario.clone(),
            nu: r.nu,
            h_lo: r.h_lo,
            h_hi: r.h_hi,
            lambda_ratio: r.lambda_ratio,
            user,
            ser,
            sser: r.sser,
            trials: r.trials,
            ci95,
            seed: r.seed,
        };
        for (u, (&ser, &ci)) in r.ser.iter().zip(&r.ci95).enumerate() {
            w.serialize(base(u + 1, ser, ci))?;
        }
        w.serialize(base(0, r.sser, r.sser_ci95))?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_records`].
pub fn read_records<R: Read>(input: R) -> Result<Vec<SerRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Config(format!("unexpected CSV header {header:?}")));
    }
    let mut records = Vec::new();
    let mut current: Option<SerRecord> = None;
    for (i, row) in rd.deserialize::<Row>().enumerate() {
        let row = row?;
        let line = i + 2;
        if row.user == 0 {
            let mut rec = current
                .take()
                .ok_or_else(|| Error::Config(format!("line {line}: aggregate row without user rows")))?;
            if rec.scheme != row.scheme || rec.nu.to_bits() != row.nu.to_bits() {
                return Err(Error::Config(format!(
                    "line {line}: aggregate row does not match its user rows"
                )));
            }
            rec.sser_ci95 = row.ci95;
            records.push(rec);
            continue;
        }
        let rec = current.get_or_insert_with(|| SerRecord {
            scheme: row.scheme.clone(),
            scenario: row.scenario.clone(),
            nu: row.nu,
            h_lo: row.h_lo,
            h_hi: row.h_hi,
            lambda_ratio: row.lambda_ratio,
            ser: Vec::new(),
            sser: row.sser,
            trials: row.trials,
            ci95: Vec::new(),
            sser_ci95: 0.0,
            seed: row.seed,
        });
        if row.user != rec.ser.len() + 1 {
            return Err(Error::Config(format!(
                "line {line}: expected user {}, found {}",
                rec.ser.len() + 1,
                row.user
            )));
        }
        rec.ser.push(row.ser);
        rec.ci95.push(row.ci95);
    }
    if current.is_some() {
        return Err(Error::Config("trailing user rows without aggregate row".into()));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(ser: Vec<f64>, nu: f64, seed: u64) -> SerRecord {
        let sser = ser.iter().sum::<f64>() / ser.len() as f64;
        SerRecord {
            scheme: "ae".into(),
            scenario: "multi-user".into(),
            nu,
            h_lo: 0.01,
            h_hi: 0.03,
            lambda_ratio: 1.0 / 3.0,
            ci95: ser.iter().map(|s| s / 7.0).collect(),
            sser_ci95: sser / 11.0,
            ser,
            sser,
            trials: 100_000,
            seed,
        }
    }

    #[test]
    fn header_is_exact() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[record(vec![0.1], 1.0, 3)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "scheme,scenario,nu,h_lo,h_hi,lambda_ratio,user,ser,sser,trials,ci95,seed"
        );
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(
            sers in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 1..4), 1..5),
            nu in 1e-3f64..1e3,
            seed in any::<u64>(),
        ) {
            let records: Vec<_> = sers.into_iter().map(|s| record(s, nu, seed)).collect();
            let mut buf = Vec::new();
            write_records(&mut buf, &records).unwrap();
            let back = read_records(buf.as_slice()).unwrap();
            prop_assert_eq!(back, records);
        }
    }
}
