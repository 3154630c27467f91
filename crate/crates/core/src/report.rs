//! CSV output of sweep records and summaries, and the run manifest.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ao::Stage;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::sweep::{summarize, Dataset, RunRecord};

pub const RECORD_COLUMNS: [&str; 14] = [
    "sweep_value",
    "variant",
    "realization",
    "stage",
    "outer_iter",
    "sum_se_bps_hz",
    "p_tot_w",
    "ee_bit_per_joule",
    "per_user_se",
    "eta",
    "u_x",
    "u_y",
    "bits",
    "flags",
];

pub const SUMMARY_COLUMNS: [&str; 7] = ["param", "sweep_value", "variant", "metric", "mean", "std_err", "count"];

/// 17 significant digits, enough to recover every `f64` exactly.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn join<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(";")
}

fn parse_float(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse(format!("invalid number '{s}'")))
}

fn split<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';').map(f).collect()
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

fn record_fields(r: &RunRecord) -> [String; 14] {
    [
        r.sweep_value.map(format_float).unwrap_or_default(),
        r.variant.clone(),
        r.realization.to_string(),
        r.stage.as_str().to_string(),
        r.outer_iter.to_string(),
        format_float(r.sum_se),
        format_float(r.p_tot),
        format_float(r.ee),
        join(&r.per_user_se, |x| format_float(*x)),
        join(&r.eta, |x| format_float(*x)),
        join(&r.u_x, |x| format_float(*x)),
        join(&r.u_y, |x| format_float(*x)),
        join(&r.bits, u32::to_string),
        r.flags.join(";"),
    ]
}

/// Writes the record table; the column set does not depend on `K` or `M`.
pub fn write_records<W: Write>(w: W, records: &[RunRecord]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(RECORD_COLUMNS).map_err(csv_err)?;
    for r in records {
        out.write_record(record_fields(r)).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_records<R: Read>(r: R) -> Result<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(RECORD_COLUMNS) {
        return Err(Error::Parse("unexpected record header".into()));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_err)?;
        let f = |i: usize| row.get(i).unwrap_or_default();
        let int = |i: usize| f(i).parse::<u64>().map_err(|_| Error::Parse(format!("invalid integer '{}'", f(i))));
        out.push(RunRecord {
            sweep_value: if f(0).is_empty() { None } else { Some(parse_float(f(0))?) },
            variant: f(1).to_string(),
            realization: int(2)?,
            stage: Stage::parse(f(3)).ok_or_else(|| Error::Parse(format!("unknown stage '{}'", f(3))))?,
            outer_iter: int(4)? as usize,
            sum_se: parse_float(f(5))?,
            p_tot: parse_float(f(6))?,
            ee: parse_float(f(7))?,
            per_user_se: split(f(8), parse_float)?,
            eta: split(f(9), parse_float)?,
            u_x: split(f(10), parse_float)?,
            u_y: split(f(11), parse_float)?,
            bits: split(f(12), |s| s.parse().map_err(|_| Error::Parse(format!("invalid bit depth '{s}'"))))?,
            flags: split(f(13), |s| Ok(s.to_string()))?,
        });
    }
    Ok(out)
}

/// Long-format table: one row per (sweep value, variant, metric).
pub fn write_summary<W: Write>(w: W, data: &Dataset) -> Result<()> {
    let mut out = writer(w);
    out.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    let param = data.param.clone().unwrap_or_default();
    for s in summarize(data) {
        out.write_record([
            param.clone(),
            s.sweep_value.map(format_float).unwrap_or_default(),
            s.variant,
            s.metric.to_string(),
            format_float(s.mean),
            format_float(s.std_err),
            s.count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_failures<W: Write>(w: W, data: &Dataset) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["sweep_value", "variant", "realization", "message"]).map_err(csv_err)?;
    for f in &data.failures {
        out.write_record([
            f.sweep_value.map(format_float).unwrap_or_default(),
            f.variant.clone(),
            f.realization.to_string(),
            f.message.clone(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub realizations: usize,
    pub sweep_param: Option<String>,
    pub sweep_values: Vec<f64>,
    pub records: usize,
    pub failures: usize,
    pub files: Vec<String>,
}

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";

/// Writes records, summary, failures, the resolved config and a manifest
/// into `dir`, creating it if needed. Returns the written paths.
pub fn emit_report(data: &Dataset, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [RECORDS_FILE, SUMMARY_FILE, FAILURES_FILE, CONFIG_FILE, MANIFEST_FILE];
    let path = |f: &str| dir.join(f);
    write_records(fs::File::create(path(RECORDS_FILE))?, &data.records)?;
    write_summary(fs::File::create(path(SUMMARY_FILE))?, data)?;
    write_failures(fs::File::create(path(FAILURES_FILE))?, data)?;
    fs::write(path(CONFIG_FILE), cfg.to_toml())?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        realizations: cfg.realizations,
        sweep_param: cfg.sweep.as_ref().map(|s| s.param.clone()),
        sweep_values: cfg.sweep.as_ref().map(|s| s.values.clone()).unwrap_or_default(),
        records: data.records.len(),
        failures: data.failures.len(),
        files: files.iter().map(|f| f.to_string()).collect(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(path(MANIFEST_FILE), text)?;
    Ok(files.iter().map(|f| path(f)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(k: usize, m: usize) -> RunRecord {
        RunRecord {
            sweep_value: Some(0.1),
            variant: "fas-fp".into(),
            realization: 4,
            stage: Stage::AfterBits,
            outer_iter: 2,
            sum_se: 12.345678901234567,
            p_tot: 3.0 / 7.0,
            ee: 1.0e8 / 3.0,
            per_user_se: (0..k).map(|i| i as f64 / 3.0).collect(),
            eta: vec![1.0 / 3.0; k],
            u_x: vec![-0.0375; k],
            u_y: vec![1e-17; k],
            bits: (1..=m as u32).collect(),
            flags: vec!["qos-violated".into()],
        }
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let mut buf = Vec::new();
        write_records(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), RECORD_COLUMNS.join(",") + "\n");
    }

    #[test]
    fn column_count_is_fixed() {
        for (k, m) in [(1, 1), (4, 9), (10, 20)] {
            let mut buf = Vec::new();
            write_records(&mut buf, &[sample(k, m)]).unwrap();
            let text = String::from_utf8(buf).unwrap();
            for line in text.lines() {
                assert_eq!(line.split(',').count(), RECORD_COLUMNS.len());
            }
        }
    }

    #[test]
    fn round_trip_exact() {
        let mut none = sample(2, 3);
        none.sweep_value = None;
        none.flags.clear();
        let recs = vec![sample(3, 2), none];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(parse_records(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(parse_records("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn unwritable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = emit_report(&Dataset::default(), &ExperimentConfig::default(), &blocker.join("out")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn emits_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&Dataset::default(), &ExperimentConfig::default(), dir.path()).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        let manifest: Manifest = toml::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest.config_hash, ExperimentConfig::default().hash());
    }

    proptest! {
        #[test]
        fn floats_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(parse_float(&format_float(x)).unwrap(), x);
        }
    }
}
