//! Line-oriented `key=value` records followed by one aligned table.

use std::fmt::Write as _;

use degfair_core::metrics::{FairnessReport, MeanStd, RunAggregate};

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec());
    for row in rows {
        line(row.iter().map(String::as_str).collect());
    }
    out
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

/// Metrics of one evaluation; `context` lines come first.
pub fn format_report(context: &[(&str, String)], r: &FairnessReport) -> String {
    let mut out = String::new();
    for (k, v) in context {
        writeln!(out, "{k}={v}").unwrap();
    }
    writeln!(out, "r_eval={}", r.r_eval).unwrap();
    writeln!(out, "fraction={}", r.fraction).unwrap();
    writeln!(out, "accuracy={:.6}", r.accuracy).unwrap();
    writeln!(out, "delta_dsp={:.6}", r.delta_dsp).unwrap();
    writeln!(out, "delta_deo={:.6}", r.delta_deo).unwrap();
    writeln!(out, "group_size_g0={}", r.group_sizes.0).unwrap();
    writeln!(out, "group_size_g1={}", r.group_sizes.1).unwrap();
    out.push('\n');
    let rows: Vec<Vec<String>> = r
        .per_class
        .iter()
        .map(|c| {
            vec![
                c.class.to_string(),
                format!("{:.6}", c.pred_rate_g0),
                format!("{:.6}", c.pred_rate_g1),
                opt(c.recall_g0),
                opt(c.recall_g1),
            ]
        })
        .collect();
    out.push_str(&table(&["class", "pred_rate_g0", "pred_rate_g1", "recall_g0", "recall_g1"], &rows));
    out
}

/// Multi-run summary; the table shows percentages as `mean ± std`.
pub fn format_aggregate(context: &[(&str, String)], agg: &RunAggregate) -> String {
    let metrics: [(&str, MeanStd); 3] = [
        ("accuracy", agg.accuracy),
        ("delta_dsp", agg.delta_dsp),
        ("delta_deo", agg.delta_deo),
    ];
    let mut out = String::new();
    for (k, v) in context {
        writeln!(out, "{k}={v}").unwrap();
    }
    writeln!(out, "runs={}", agg.runs).unwrap();
    for (name, m) in &metrics {
        writeln!(out, "{name}_mean={:.6}", m.mean).unwrap();
        writeln!(out, "{name}_std={:.6}", m.std).unwrap();
    }
    out.push('\n');
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|(name, m)| vec![name.to_string(), format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std)])
        .collect();
    out.push_str(&table(&["metric", "percent"], &rows));
    out
}
