use std::fmt::Write as _;
use std::path::Path;

use super::parse_error;
use crate::error::Result;
use crate::fit::{FitTrace, TraceRecord};

pub const TRACE_HEADER: &str = "iter,l_px,l_xp,l_parsimony,l_total,sum_gamma,active";

pub fn trace_to_csv(trace: &FitTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter, r.l_px, r.l_xp, r.l_parsimony, r.l_total, r.sum_gamma, r.active
        );
    }
    out
}

pub fn save_trace_csv(trace: &FitTrace, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, trace_to_csv(trace))?;
    Ok(())
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<FitTrace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(parse_error(path, "line 1".into(), "unexpected trace header".into()));
    }
    let mut records = Vec::new();
    for (no, line) in lines.enumerate() {
        let at = || format!("line {}", no + 2);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(parse_error(path, at(), format!("expected 7 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_error(path, at(), e.to_string()));
        let int = |s: &str| s.parse::<usize>().map_err(|e| parse_error(path, at(), e.to_string()));
        records.push(TraceRecord {
            iter: int(f[0])?,
            l_px: num(f[1])?,
            l_xp: num(f[2])?,
            l_parsimony: num(f[3])?,
            l_total: num(f[4])?,
            sum_gamma: num(f[5])?,
            active: int(f[6])?,
        });
    }
    Ok(FitTrace { records })
}
