//! Metric reports: one CSV row per scan plus a text summary.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use snaketrace::MatchReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scan: String,
    pub ov: f64,
    pub ai: f64,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub ids: usize,
    pub mota: f64,
    pub idf1: f64,
}

impl ReportRow {
    pub fn new(scan: &str, r: &MatchReport) -> Self {
        Self {
            scan: scan.into(),
            ov: r.ov,
            ai: r.ai,
            tp: r.corr.tp,
            fn_: r.corr.fn_,
            fp: r.corr.fp,
            ids: r.ids,
            mota: r.mota,
            idf1: r.idf1,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "scan {}\n  OV   {:.4}\n  AI   {:.4} mm\n  TP {}  FN {}  FP {}\n  IDS  {}\n  MOTA {:.4}\n  IDF1 {:.4}\n",
            self.scan, self.ov, self.ai, self.tp, self.fn_, self.fp, self.ids, self.mota, self.idf1
        )
    }
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
