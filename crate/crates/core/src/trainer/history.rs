use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f64,
    pub lmmd: f64,
    pub total: f64,
    pub src_bacc: f64,
    /// Only when evaluation labels were available.
    pub tgt_bacc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn push(&mut self, r: EpochRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// `epoch,ce,lmmd,total,src_bacc,tgt_bacc`; a missing target accuracy is
    /// an empty field.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,ce,lmmd,total,src_bacc,tgt_bacc\n");
        for r in &self.records {
            let tgt = r.tgt_bacc.map(|v| format!("{v:?}")).unwrap_or_default();
            out.push_str(&format!("{},{:?},{:?},{:?},{:?},{}\n", r.epoch, r.ce, r.lmmd, r.total, r.src_bacc, tgt));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut h = TrainHistory::default();
        h.push(EpochRecord { epoch: 1, ce: 0.5, lmmd: 0.25, total: 0.875, src_bacc: 0.75, tgt_bacc: None });
        h.push(EpochRecord { epoch: 2, ce: 0.4, lmmd: 0.2, total: 0.7, src_bacc: 0.8, tgt_bacc: Some(0.6) });
        let csv = h.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,ce,lmmd,total,src_bacc,tgt_bacc");
        assert_eq!(lines[1], "1,0.5,0.25,0.875,0.75,");
        assert_eq!(lines[2], "2,0.4,0.2,0.7,0.8,0.6");
    }
}
