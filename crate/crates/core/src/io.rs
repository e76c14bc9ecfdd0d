//! File formats.
//!
//! * Dataset CSV: header `label,f1,…,fd`, one row per point.
//! * Subsample CSV: header `index,label,o_1,…,o_{K−1},f1,…,fd`.
//! * Replication CSVs: a summary with one row per γ
//!   (`gamma,mean_tau,nsub_frac,acc_full,acc_lus,acc_us,acc_cc`) and a
//!   per-coordinate table (`gamma,coordinate,tau_lus,tau_us,tau_cc`).
//! * Everything else is JSON through serde.
//!
//! Floats are written with Rust's shortest round-trip formatting, so files are
//! byte-identical across runs and read back bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{LusError, Result};
use crate::model::{Dataset, LabeledPoint, OffsetVector};
use crate::sampling::{Subsample, SubsampleEntry};
use crate::simulate::ReplicationReport;

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| LusError::Parse {
        line,
        msg: format!("`{s}`: {e}"),
    })
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|e| LusError::Parse {
        line,
        msg: format!("`{s}`: {e}"),
    })
}

/// Reads a dataset; `k` defaults to the largest label seen.
///
/// A header row is optional and recognised by a non-numeric first field.
pub fn read_dataset<R: Read>(reader: R, k: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut d = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line + 1;
        let first = rec.get(0).unwrap_or("");
        if line == 1 && first.parse::<f64>().is_err() {
            continue;
        }
        let width = rec.len() - 1;
        match d {
            None => d = Some(width),
            Some(d) if d != width => {
                return Err(LusError::Parse {
                    line,
                    msg: format!("expected {} features, found {width}", d),
                })
            }
            _ => {}
        }
        labels.push(parse_usize(first, line)?);
        for f in rec.iter().skip(1) {
            features.push(parse_f64(f, line)?);
        }
    }
    let d = d.unwrap_or(0);
    let k = k.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(2).max(2));
    Dataset::from_flat(features, labels, d, k)
}

pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["label".to_string()];
    header.extend((1..=data.dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(data.dim() + 1);
    for (x, c) in data.iter() {
        row.clear();
        row.push(c.to_string());
        row.extend(x.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a subsample. `K` is taken from the number of `o_*` columns;
/// `n_original` and `gamma` are not stored in the file and must be supplied.
pub fn read_subsample<R: Read>(reader: R, n_original: usize, gamma: f64) -> Result<Subsample> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("index") || header.get(1) != Some("label") {
        return Err(LusError::Parse {
            line: 1,
            msg: "subsample header must start with `index,label`".into(),
        });
    }
    let n_off = header.iter().filter(|h| h.starts_with("o_")).count();
    if n_off == 0 {
        return Err(LusError::Parse {
            line: 1,
            msg: "subsample header has no offset columns".into(),
        });
    }
    let k = n_off + 1;
    let d = header.len() - 2 - n_off;
    let mut entries = Vec::new();
    let mut last: Option<usize> = None;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        if rec.len() != header.len() {
            return Err(LusError::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let index = parse_usize(&rec[0], line)?;
        if last.is_some_and(|l| l >= index) || index >= n_original {
            return Err(LusError::Parse {
                line,
                msg: format!("index {index} out of order or out of range"),
            });
        }
        last = Some(index);
        let label = parse_usize(&rec[1], line)?;
        let offsets = (0..n_off)
            .map(|j| parse_f64(&rec[2 + j], line))
            .collect::<Result<Vec<_>>>()?;
        let features = (0..d)
            .map(|j| parse_f64(&rec[2 + n_off + j], line))
            .collect::<Result<Vec<_>>>()?;
        entries.push(SubsampleEntry {
            index,
            point: LabeledPoint::new(features, label),
            offsets: OffsetVector::new(offsets)?,
        });
    }
    if let Some(bad) = entries.iter().find(|e| e.point.label == 0 || e.point.label > k) {
        return Err(LusError::invalid(format!(
            "subsample label {} outside 1..={k}",
            bad.point.label
        )));
    }
    Ok(Subsample {
        entries,
        n_original,
        gamma,
        k,
        d,
    })
}

pub fn write_subsample<W: Write>(writer: W, sub: &Subsample) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["index".to_string(), "label".to_string()];
    header.extend((1..sub.k).map(|j| format!("o_{j}")));
    header.extend((1..=sub.d).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for e in &sub.entries {
        row.clear();
        row.push(e.index.to_string());
        row.push(e.point.label.to_string());
        row.extend(e.offsets.as_slice().iter().map(f64::to_string));
        row.extend(e.point.features.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_replication_summary<W: Write>(writer: W, reports: &[ReplicationReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "gamma", "mean_tau", "nsub_frac", "acc_full", "acc_lus", "acc_us", "acc_cc",
    ])?;
    for r in reports {
        w.write_record([
            r.gamma.to_string(),
            r.mean_tau.to_string(),
            r.subsample_fraction.to_string(),
            r.accuracy.full.to_string(),
            r.accuracy.lus.to_string(),
            r.accuracy.us.to_string(),
            r.accuracy.cc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_replication_tau<W: Write>(writer: W, reports: &[ReplicationReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["gamma", "coordinate", "tau_lus", "tau_us", "tau_cc"])?;
    for r in reports {
        for j in 0..r.tau.len() {
            w.write_record([
                r.gamma.to_string(),
                j.to_string(),
                r.tau[j].to_string(),
                r.tau_us[j].to_string(),
                r.tau_cc[j].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>, k: Option<usize>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?), k)
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), data)
}

pub fn load_subsample(path: impl AsRef<Path>, n_original: usize, gamma: f64) -> Result<Subsample> {
    read_subsample(BufReader::new(File::open(path)?), n_original, gamma)
}

pub fn save_subsample(path: impl AsRef<Path>, sub: &Subsample) -> Result<()> {
    write_subsample(BufWriter::new(File::create(path)?), sub)
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{draw_subsample, AcceptancePlan, AcceptanceVector, Scheme};

    fn sample_data() -> Dataset {
        Dataset::new(
            vec![
                LabeledPoint::new(vec![0.1, -2.5], 1),
                LabeledPoint::new(vec![1.0 / 3.0, 4.0], 3),
                LabeledPoint::new(vec![-0.0, 1e-300], 2),
            ],
            2,
            3,
        )
        .unwrap()
    }

    #[test]
    fn dataset_csv_round_trip_is_exact() {
        let data = sample_data();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("label,f1,f2\n1,0.1,-2.5\n"));
        let back = read_dataset(buf.as_slice(), Some(3)).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn dataset_without_header() {
        let d = read_dataset("1,0.5\n2,1.5\n".as_bytes(), None).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.classes(), 2);
        assert!(read_dataset("1,0.5\n2,1.5,3\n".as_bytes(), None).is_err());
        assert!(read_dataset("1,0.5\n0,1.5\n".as_bytes(), None).is_err());
        assert!(read_dataset("1,abc\n".as_bytes(), None).is_err());
    }

    #[test]
    fn subsample_csv_round_trip() {
        let data = sample_data();
        let a = AcceptanceVector::new(vec![0.5, 0.25, 1.0]).unwrap();
        let plan = AcceptancePlan {
            scheme: Scheme::Lus,
            gamma: 2.0,
            per_point: vec![AcceptanceVector::new(vec![1.0, 1.0, 1.0]).unwrap(), a.clone(), a],
        };
        let sub = draw_subsample(&data, &plan, 1).unwrap();
        let mut buf = Vec::new();
        write_subsample(&mut buf, &sub).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("index,label,o_1,o_2,f1,f2\n0,1,0,0,0.1,-2.5\n"));
        let back = read_subsample(buf.as_slice(), 3, 2.0).unwrap();
        assert_eq!(back, sub);
    }

    #[test]
    fn subsample_header_checked() {
        assert!(read_subsample("label,f1\n1,2\n".as_bytes(), 3, 1.0).is_err());
        assert!(read_subsample("index,label,f1\n0,1,2\n".as_bytes(), 3, 1.0).is_err());
        assert!(read_subsample("index,label,o_1,f1\n1,1,0,2\n0,2,0,1\n".as_bytes(), 3, 1.0).is_err());
    }
}
