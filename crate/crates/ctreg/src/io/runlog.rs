//! Line-delimited run log: one JSON header line, then one JSON record per
//! optimizer iteration.

use crate::engine::IterationRecord;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const RUNLOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct RunLogHeader {
    format: String,
    format_version: u32,
}

/// Render the full run log (header + records) as line-delimited JSON.
pub fn render_runlog(records: &[IterationRecord]) -> String {
    let mut out = String::new();
    let header =
        RunLogHeader { format: "ctreg-runlog".into(), format_version: RUNLOG_FORMAT_VERSION };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_runlog(path: &Path, records: &[IterationRecord]) -> Result<()> {
    super::write_atomic(path, render_runlog(records).as_bytes())
}

/// Parse a run log back into records (header validated).
pub fn parse_runlog_str(text: &str) -> Result<Vec<IterationRecord>> {
    let mut lines = text.lines();
    let header_line =
        lines.next().ok_or_else(|| Error::MalformedFile("empty run log".into()))?;
    let header: RunLogHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::MalformedFile(format!("run log header: {e}")))?;
    if header.format != "ctreg-runlog" || header.format_version != RUNLOG_FORMAT_VERSION {
        return Err(Error::MalformedFile(format!(
            "run log format {}@{}",
            header.format, header.format_version
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: IterationRecord = serde_json::from_str(line)
            .map_err(|e| Error::MalformedFile(format!("run log line {}: {e}", i + 2)))?;
        records.push(r);
    }
    // records strictly ordered by (level, iteration)
    for w in records.windows(2) {
        if (w[1].level, w[1].iteration) <= (w[0].level, w[0].iteration) {
            return Err(Error::MalformedFile(format!(
                "records out of order at level {} iteration {}",
                w[1].level, w[1].iteration
            )));
        }
    }
    Ok(records)
}

/// Run log text with the wall-clock telemetry field zeroed; two runs of the
/// same registration agree bit-for-bit on this canonical form.
pub fn canonical_runlog(records: &[IterationRecord]) -> String {
    let stripped: Vec<IterationRecord> = records
        .iter()
        .map(|r| IterationRecord { wall_ms: 0.0, ..r.clone() })
        .collect();
    render_runlog(&stripped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossBreakdown;

    fn record(level: usize, iteration: usize) -> IterationRecord {
        IterationRecord {
            level,
            iteration,
            loss: LossBreakdown::new(-0.5, -0.25, 0.125),
            grad_norm: 0.75,
            wall_ms: 12.5,
        }
    }

    #[test]
    fn round_trip_and_additivity() {
        let records = vec![record(0, 1), record(0, 2), record(1, 1)];
        let text = render_runlog(&records);
        let parsed = parse_runlog_str(&text).unwrap();
        assert_eq!(parsed.len(), 3);
        for r in &parsed {
            assert_eq!(r.loss.total, r.loss.sim + r.loss.seg + r.loss.reg);
        }
    }

    #[test]
    fn order_enforced() {
        let records = vec![record(0, 2), record(0, 1)];
        let text = render_runlog(&records);
        assert!(matches!(parse_runlog_str(&text), Err(Error::MalformedFile(_))));
    }

    #[test]
    fn canonical_form_drops_timing() {
        let mut a = vec![record(0, 1)];
        let mut b = vec![record(0, 1)];
        a[0].wall_ms = 5.0;
        b[0].wall_ms = 99.0;
        assert_ne!(render_runlog(&a), render_runlog(&b));
        assert_eq!(canonical_runlog(&a), canonical_runlog(&b));
    }
}
