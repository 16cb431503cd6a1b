use std::fs;
use std::io::{self, Write};
use std::path::Path;

use super::studies::{Record, StudyReport};
use crate::error::Result;

/// Writes `epsilon,n,rep,theta_hat_1..theta_hat_p,err_norm,method,runtime_ms`.
pub fn write_records_csv<W: Write>(mut w: W, records: &[Record], p: usize) -> io::Result<()> {
    write!(w, "epsilon,n,rep")?;
    for i in 1..=p {
        write!(w, ",theta_hat_{i}")?;
    }
    writeln!(w, ",err_norm,method,runtime_ms")?;
    for r in records {
        write!(w, "{:?},{},{}", r.epsilon, r.n, r.rep)?;
        for i in 0..p {
            match r.theta_hat.get(i) {
                Some(v) => write!(w, ",{v:?}")?,
                None => write!(w, ",")?,
            }
        }
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        writeln!(w, ",{},{},{}", opt(r.err_norm), r.method, opt(r.runtime_ms))?;
    }
    Ok(())
}

pub fn write_summary_json<W: Write>(w: W, report: &StudyReport) -> Result<()> {
    serde_json::to_writer_pretty(w, report)?;
    Ok(())
}

/// Writes `records.csv` and `summary.json` into `dir`, creating it if needed.
pub fn write_report(dir: &Path, report: &StudyReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut csv = io::BufWriter::new(fs::File::create(dir.join("records.csv"))?);
    write_records_csv(&mut csv, &report.records, report.config.theta0.len())?;
    csv.flush()?;
    let mut json = io::BufWriter::new(fs::File::create(dir.join("summary.json"))?);
    write_summary_json(&mut json, report)?;
    writeln!(json)?;
    json.flush()?;
    Ok(())
}
