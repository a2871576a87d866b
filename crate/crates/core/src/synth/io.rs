//! Dataset serialization: CSV for labeled samples, JSON lines for bags.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bag, LabeledSample};
use crate::error::{Error, Result};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Writes `domain_id,label,f0..f{d-1}`.
pub fn write_domain_csv(path: &Path, samples: &[LabeledSample]) -> Result<()> {
    let d = samples.first().map_or(0, |s| s.features.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["domain_id".to_string(), "label".to_string()];
    header.extend((0..d).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for s in samples {
        if s.features.len() != d {
            return Err(Error::DimMismatch { expected: d, got: s.features.len() });
        }
        let mut row = vec![s.domain_id.to_string(), s.label.to_string()];
        // `{:?}` prints the shortest string that parses back to the same f64.
        row.extend(s.features.iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_domain_csv(path: &Path) -> Result<Vec<LabeledSample>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.len() < 3 || &headers[0] != "domain_id" || &headers[1] != "label" {
        return Err(Error::Data(format!("{}: expected header domain_id,label,f0,...", path.display())));
    }
    let parse = |field: &str, line: usize| -> Result<f64> {
        field
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Data(format!("{}:{line}: cannot parse {field:?}", path.display())))
    };
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let int = |field: &str| {
            field
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("{}:{line}: cannot parse {field:?}", path.display())))
        };
        out.push(LabeledSample {
            domain_id: int(&rec[0])?,
            label: int(&rec[1])?,
            features: rec.iter().skip(2).map(|f| parse(f, line)).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagRecord {
    pub bag_id: usize,
    pub label: usize,
    pub instances: Vec<Vec<f64>>,
}

pub fn write_bags_jsonl(path: &Path, bags: &[Bag]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (bag_id, bag) in bags.iter().enumerate() {
        let rec = BagRecord {
            bag_id,
            label: bag.label,
            instances: bag.instances.iter().map(|s| s.features.clone()).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_bags_jsonl(path: &Path) -> Result<Vec<BagRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
