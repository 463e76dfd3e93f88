use super::drivers::RunManifest;
use crate::metrics::{build_tables, EvalReport};

/// Rows labelled by setup (and mismatched adapter, where present), columns
/// by evaluation language.
pub fn report_rows(manifests: &[RunManifest]) -> Vec<(String, EvalReport)> {
    let mut rows = Vec::new();
    for m in manifests {
        rows.push((m.row_label.clone(), m.report.clone()));
        for extra in &m.extra_reports {
            rows.push((format!("{} [{}]", m.row_label, extra.label), extra.report.clone()));
        }
    }
    rows
}

/// Both result tables rendered as plain text.
pub fn render_report(manifests: &[RunManifest]) -> String {
    let (quality, overlap) = build_tables(&report_rows(manifests));
    format!("{}\n{}", quality.render(), overlap.render())
}
