use std::fmt::Write as _;

use super::ScoreReport;
use crate::corpus::NECategory;

/// Formats a `[0, 1]` score as a percentage with one decimal.
pub fn percent(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-category table with a closing `F_final` row.
pub fn report_csv(report: &ScoreReport) -> String {
    let mut out = String::from("Category,Precision,Recall,F_beta\n");
    for s in &report.per_category {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.category.japanese_label(),
            percent(s.precision),
            percent(s.recall),
            percent(s.f_beta)
        );
    }
    let _ = writeln!(out, "F_final,,,{}", percent(report.f_final));
    out
}

pub fn report_markdown(report: &ScoreReport) -> String {
    let mut out = String::new();
    let meta = &report.meta;
    let _ = write!(out, "Config `{}`", meta.config_id);
    if let Some(split) = meta.split {
        let _ = write!(out, ", {split} split");
    }
    if let Some(it) = meta.iterations {
        let _ = write!(out, ", {it} iterations");
    }
    if let Some(digest) = &meta.manifest_digest {
        let _ = write!(out, ", manifest `{digest}`");
    }
    out.push_str("\n\n| Category | Precision | Recall | F_beta |\n|---|---:|---:|---:|\n");
    for s in &report.per_category {
        let _ = writeln!(
            out,
            "| {} ({}) | {} | {} | {} |",
            s.category.japanese_label(),
            s.category.english_id(),
            percent(s.precision),
            percent(s.recall),
            percent(s.f_beta)
        );
    }
    let _ = writeln!(out, "| **F_final** | | | **{}** |", percent(report.f_final));
    out
}

fn comparison_rows(reports: &[ScoreReport]) -> Vec<Vec<String>> {
    reports
        .iter()
        .map(|r| {
            let mut row = vec![
                r.meta.config_id.clone(),
                r.meta.split.map(|s| s.to_string()).unwrap_or_default(),
                r.meta.variant.clone().unwrap_or_default(),
                r.meta.iterations.map(|i| i.to_string()).unwrap_or_default(),
            ];
            row.extend(r.per_category.iter().map(|s| percent(s.f_beta)));
            row.push(percent(r.f_final));
            row
        })
        .collect()
}

fn comparison_header() -> Vec<String> {
    let mut header: Vec<String> = ["Config", "Split", "Variant", "Iterations"]
        .map(String::from)
        .to_vec();
    header.extend(
        NECategory::ALL
            .iter()
            .map(|c| c.japanese_label().to_string()),
    );
    header.push("F_final".into());
    header
}

/// One row per report: config, split, variant, iterations, the six `F_β`
/// values and `F_final`.
pub fn comparison_csv(reports: &[ScoreReport]) -> String {
    let mut out = String::new();
    for row in std::iter::once(comparison_header()).chain(comparison_rows(reports)) {
        let fields: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn comparison_markdown(reports: &[ScoreReport]) -> String {
    let header = comparison_header();
    let mut out = format!("| {} |\n", header.join(" | "));
    out.push_str("|---|---|---|---:|");
    out.push_str(&"---:|".repeat(header.len() - 4));
    out.push('\n');
    for row in comparison_rows(reports) {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    out
}
