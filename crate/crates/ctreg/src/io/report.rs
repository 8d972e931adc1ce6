//! Metrics report and ablation table rendering.

use crate::error::Result;
use crate::metrics::MetricsReport;
use serde::Serialize;
use std::path::Path;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct ReportDocument<'a> {
    format: &'static str,
    format_version: u32,
    #[serde(flatten)]
    report: &'a MetricsReport,
}

pub fn render_report_json(report: &MetricsReport) -> String {
    let doc = ReportDocument {
        format: "ctreg-metrics",
        format_version: REPORT_FORMAT_VERSION,
        report,
    };
    serde_json::to_string_pretty(&doc).expect("report serializes")
}

/// Human-readable report: one line per label plus the summary.
pub fn render_report_text(report: &MetricsReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("mi: {:.6}\n", report.mi));
    s.push_str("label  dice      tre_mm\n");
    for l in &report.labels_evaluated {
        let dice = report.dice_per_label.get(l).copied().unwrap_or(f64::NAN);
        match report.tre_per_label.get(l) {
            Some(t) => s.push_str(&format!("{l:>5}  {dice:<8.4}  {t:.3}\n")),
            None => s.push_str(&format!("{l:>5}  {dice:<8.4}  (excluded)\n")),
        }
    }
    s.push_str(&format!(
        "mean   {:<8.4}  {:.3}   ({} labels, {} excluded from TRE)\n",
        report.dice_mean,
        report.tre_mean,
        report.labels_evaluated.len(),
        report.tre_excluded.len()
    ));
    s
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    super::write_atomic(path, render_report_json(report).as_bytes())
}

/// Mean and standard deviation summaries of one method arm across phantoms.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ArmStats {
    pub mi_mean: f64,
    pub mi_std: f64,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub tre_mean: f64,
    pub tre_std: f64,
    /// Mean within-bone deformation-gradient energy of the recovered fields.
    pub bone_energy_mean: f64,
}

/// One ablation row: baseline vs proposed at a fixed mu_r, with the paired
/// t-test on per-phantom Dice.
#[derive(Debug, Clone, Serialize)]
pub struct AblateRow {
    pub mu_r: f64,
    pub baseline: ArmStats,
    pub proposed: ArmStats,
    pub dice_t: f64,
    pub dice_p: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblateTable {
    pub format: &'static str,
    pub format_version: u32,
    pub delta: f64,
    pub gamma: f64,
    pub n_phantoms: usize,
    pub rows: Vec<AblateRow>,
    /// Per-phantom dice means (baseline, proposed) per row, for auditing.
    pub per_phantom_dice: Vec<Vec<(f64, f64)>>,
}

impl AblateTable {
    pub fn new(delta: f64, gamma: f64, n_phantoms: usize) -> Self {
        Self {
            format: "ctreg-ablate",
            format_version: REPORT_FORMAT_VERSION,
            delta,
            gamma,
            n_phantoms,
            rows: Vec::new(),
            per_phantom_dice: Vec::new(),
        }
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Text table mirroring the baseline-vs-proposed comparison layout.
pub fn render_ablate_text(table: &AblateTable) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "baseline (uniform mu_r) vs proposed (gamma = {}, delta = {}), n = {} phantoms\n",
        table.gamma, table.delta, table.n_phantoms
    ));
    s.push_str(
        "   mu_r |        MI (base / prop) |      Dice (base / prop) |  TRE mm (base / prop) | bone energy (base / prop) | p(Dice)\n",
    );
    for row in &table.rows {
        s.push_str(&format!(
            "{:>7} | {:>5.3}+-{:.3} / {:>5.3}+-{:.3} | {:>5.3}+-{:.3} / {:>5.3}+-{:.3} | {:>6.2}+-{:.2} / {:>6.2}+-{:.2} | {:>10.3e} / {:>10.3e} | {:.4}\n",
            row.mu_r,
            row.baseline.mi_mean,
            row.baseline.mi_std,
            row.proposed.mi_mean,
            row.proposed.mi_std,
            row.baseline.dice_mean,
            row.baseline.dice_std,
            row.proposed.dice_mean,
            row.proposed.dice_std,
            row.baseline.tre_mean,
            row.baseline.tre_std,
            row.proposed.tre_mean,
            row.proposed.tre_std,
            row.baseline.bone_energy_mean,
            row.proposed.bone_energy_mean,
            row.dice_p,
        ));
    }
    s
}

pub fn render_ablate_json(table: &AblateTable) -> String {
    serde_json::to_string_pretty(table).expect("table serializes")
}
