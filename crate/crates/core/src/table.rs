//! Versioned CSV tables.
//!
//! Every table opens with a banner line naming the payload kind and optional
//! `key=value` metadata, followed by an ordinary CSV header and rows. Readers
//! refuse a payload whose kind does not match what the caller expects, so a
//! fit cannot silently run on the wrong table and two ensembles from
//! different channels cannot be merged by accident.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Banner prefix shared by every table this crate writes.
pub const FORMAT_TAG: &str = "# aoi-csv v1";

/// One checkpoint of one run inside an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPoint {
    pub variant: String,
    pub seed: u64,
    pub k: u64,
    pub gamma: Option<f64>,
    pub nu: Option<f64>,
    pub time_avg_aoi: f64,
    pub regret: Option<f64>,
    pub interval_mean: f64,
    /// Squared distance of the iterate from the reference root, when both
    /// are available.
    pub sq_err: Option<f64>,
}

/// Per-checkpoint aggregate of one ensemble variant. Learner columns are
/// empty when any contributing run lacks them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRow {
    pub variant: String,
    pub k: u64,
    pub n_seeds: u64,
    pub aoi_mean: f64,
    pub aoi_std: f64,
    pub gamma_mean: Option<f64>,
    pub gamma_std: Option<f64>,
    pub sq_err_mean: Option<f64>,
    pub sq_err_std: Option<f64>,
    pub regret_mean: Option<f64>,
    pub regret_std: Option<f64>,
    pub interval_mean: f64,
    pub interval_std: f64,
}

/// Least-squares summary of an error-decay curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub quantity: String,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: u64,
}

/// Paired spread comparison of two learner variants at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub k: u64,
    pub n_seeds: u64,
    pub std_plain: f64,
    pub std_momentum: f64,
    /// `std_momentum / std_plain`; empty when the plain spread is
    /// numerically zero.
    pub ratio: Option<f64>,
    pub aoi_plain_mean: f64,
    pub aoi_momentum_mean: f64,
    /// Paired mean of momentum minus plain time-average age, with its
    /// standard error.
    pub aoi_diff_mean: f64,
    pub aoi_diff_se: f64,
}

fn check_token(what: &str, s: &str, allow_eq: bool) -> Result<()> {
    if s.is_empty() {
        return Err(Error::TableFormat(format!("{what} must not be empty")));
    }
    if s.chars().any(char::is_whitespace) {
        return Err(Error::TableFormat(format!(
            "{what} must not contain whitespace, got {s:?}"
        )));
    }
    if !allow_eq && s.contains('=') {
        return Err(Error::TableFormat(format!(
            "{what} must not contain '=', got {s:?}"
        )));
    }
    Ok(())
}

/// Writes a banner plus CSV rows.
pub fn write_csv<T: Serialize, W: Write>(
    mut out: W,
    kind: &str,
    meta: &[(&str, String)],
    rows: &[T],
) -> Result<()> {
    check_token("table kind", kind, false)?;
    let mut banner = format!("{FORMAT_TAG} {kind}");
    for (key, value) in meta {
        check_token("metadata key", key, false)?;
        check_token("metadata value", value, true)?;
        banner.push_str(&format!(" {key}={value}"));
    }
    writeln!(out, "{banner}")?;
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a banner-tagged CSV, refusing mismatched kinds. Returns the banner
/// metadata alongside the rows.
pub fn read_csv<T: DeserializeOwned, R: Read>(
    input: R,
    kind: &str,
) -> Result<(Vec<(String, String)>, Vec<T>)> {
    let mut reader = BufReader::new(input);
    let mut banner = String::new();
    reader.read_line(&mut banner)?;
    let banner = banner.trim_end();
    let rest = banner.strip_prefix(FORMAT_TAG).ok_or_else(|| {
        Error::TableFormat(format!("missing {FORMAT_TAG:?} banner, got {banner:?}"))
    })?;
    let mut parts = rest.split_whitespace();
    let found = parts
        .next()
        .ok_or_else(|| Error::TableFormat("banner names no table kind".to_string()))?;
    if found != kind {
        return Err(Error::TableFormat(format!(
            "expected a {kind:?} table, found {found:?}"
        )));
    }
    let meta = parts
        .map(|part| {
            part.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| {
                    Error::TableFormat(format!("metadata entry {part:?} is not key=value"))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = csv::Reader::from_reader(reader)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, csv::Error>>()?;
    Ok((meta, rows))
}

pub fn write_csv_file<T: Serialize>(
    path: &Path,
    kind: &str,
    meta: &[(&str, String)],
    rows: &[T],
) -> Result<()> {
    write_csv(BufWriter::new(File::create(path)?), kind, meta, rows)
}

pub fn read_csv_file<T: DeserializeOwned>(
    path: &Path,
    kind: &str,
) -> Result<(Vec<(String, String)>, Vec<T>)> {
    read_csv(File::open(path)?, kind)
}

/// Looks up one metadata key.
pub fn meta_value<'a>(meta: &'a [(String, String)], key: &str) -> Option<&'a str> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_points() -> Vec<RunPoint> {
        vec![
            RunPoint {
                variant: "online".to_string(),
                seed: 1,
                k: 100,
                gamma: Some(1.25),
                nu: Some(0.0),
                time_avg_aoi: 2.5,
                regret: Some(10.0),
                interval_mean: 2.0,
                sq_err: Some(0.0625),
            },
            RunPoint {
                variant: "zero_wait".to_string(),
                seed: 1,
                k: 100,
                gamma: None,
                nu: None,
                time_avg_aoi: f64::NAN,
                regret: None,
                interval_mean: 2.0,
                sq_err: None,
            },
        ]
    }

    #[test]
    fn tables_round_trip_byte_identically() {
        let rows = sample_points();
        let meta = [("channel", "abc123".to_string()), ("seeds", "2".to_string())];
        let mut first = Vec::new();
        write_csv(&mut first, "ensemble", &meta, &rows).unwrap();

        let (meta_back, parsed): (_, Vec<RunPoint>) =
            read_csv(first.as_slice(), "ensemble").unwrap();
        assert_eq!(meta_back.len(), 2);
        assert_eq!(meta_value(&meta_back, "channel"), Some("abc123"));
        assert_eq!(meta_value(&meta_back, "seeds"), Some("2"));
        assert_eq!(meta_value(&meta_back, "missing"), None);
        assert_eq!(parsed[0], rows[0]);
        assert_eq!(parsed[1].gamma, None);
        assert!(parsed[1].time_avg_aoi.is_nan());

        let meta_again: Vec<(&str, String)> = meta_back
            .iter()
            .map(|(k, v)| (k.as_str(), v.clone()))
            .collect();
        let mut second = Vec::new();
        write_csv(&mut second, "ensemble", &meta_again, &parsed).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn kind_mismatch_is_refused() {
        let mut buf = Vec::new();
        write_csv(&mut buf, "ensemble", &[], &sample_points()).unwrap();
        let err = read_csv::<RunPoint, _>(buf.as_slice(), "trace").unwrap_err();
        assert!(matches!(err, Error::TableFormat(_)), "{err}");
    }

    #[test]
    fn missing_banner_is_refused() {
        let plain = b"variant,seed\nonline,1\n";
        let err = read_csv::<RunPoint, _>(&plain[..], "ensemble").unwrap_err();
        assert!(matches!(err, Error::TableFormat(_)), "{err}");
    }

    #[test]
    fn banner_tokens_are_validated_on_write() {
        let rows: Vec<RunPoint> = Vec::new();
        let mut buf = Vec::new();
        assert!(write_csv(&mut buf, "two words", &[], &rows).is_err());
        assert!(write_csv(&mut buf, "ok", &[("bad key", "v".to_string())], &rows).is_err());
        assert!(write_csv(&mut buf, "ok", &[("k", "bad value".to_string())], &rows).is_err());
        assert!(write_csv(&mut buf, "ok", &[("k=v", "v".to_string())], &rows).is_err());
    }

    #[test]
    fn trace_rows_flow_through_the_same_channel() {
        use crate::simulator::TraceRow;
        let row = TraceRow {
            k: 7,
            gamma: Some(0.5),
            nu: None,
            u: Some(0.0),
            m: 2,
            d_f: 0.3,
            d_a: 0.7,
            d_v: 1.1,
            w: 0.0,
            l: 1.8,
            f: 3.4,
            s_next: 12.0,
            cum_aoi: 40.0,
            samples: 9,
            interval_mean: 1.333,
            regret: None,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, "trace", &[], &[row.clone()]).unwrap();
        let (_, parsed): (_, Vec<TraceRow>) = read_csv(buf.as_slice(), "trace").unwrap();
        assert_eq!(parsed, vec![row]);
    }

    #[test]
    fn file_helpers_round_trip() {
        let dir = std::env::temp_dir().join("aoi-table-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("points.csv");
        let rows = sample_points();
        write_csv_file(&path, "ensemble", &[("n", "2".to_string())], &rows).unwrap();
        let (meta, parsed): (_, Vec<RunPoint>) = read_csv_file(&path, "ensemble").unwrap();
        assert_eq!(meta_value(&meta, "n"), Some("2"));
        assert_eq!(parsed.len(), rows.len());
        std::fs::remove_file(&path).unwrap();
    }
}
