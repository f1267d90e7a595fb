//! Text renderings of evaluation results: aligned tables for people and
//! `key=value` records for scripts.

use std::fmt::Write;

use scenecam_core::eval::EvalReport;
use scenecam_core::experiment::ResultGrid;

pub fn format_report(r: &EvalReport) -> String {
    let mut s = String::new();
    let width = r.labels.iter().map(String::len).max().unwrap_or(5).max(5);
    let _ = writeln!(
        s,
        "overall accuracy {:.4} ({} recordings, {} trial{})",
        r.overall_acc,
        r.total(),
        r.n_trials,
        if r.n_trials == 1 { "" } else { "s" }
    );
    let _ = write!(s, "{:width$}  {:>8}", "class", "accuracy");
    for i in 0..r.labels.len() {
        let _ = write!(s, " {:>5}", i);
    }
    s.push('\n');
    for (i, (label, row)) in r.labels.iter().zip(&r.confusion).enumerate() {
        let _ = write!(s, "{label:width$}  {:>8.4}", r.per_class_acc[i]);
        for v in row {
            let _ = write!(s, " {v:>5}");
        }
        s.push('\n');
    }
    for (kind, secs) in &r.timing {
        let _ = writeln!(s, "time {kind}: {secs:.3} s");
    }
    s
}

/// One metric per line. Floats use the shortest exact representation so
/// identical runs give identical files.
pub fn report_records(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "overall_acc={}", r.overall_acc);
    let _ = writeln!(s, "n_trials={}", r.n_trials);
    let _ = writeln!(s, "n_samples={}", r.total());
    for (label, acc) in r.labels.iter().zip(&r.per_class_acc) {
        let _ = writeln!(s, "per_class_acc.{label}={acc}");
    }
    for (label, row) in r.labels.iter().zip(&r.confusion) {
        for (pred, v) in r.labels.iter().zip(row) {
            let _ = writeln!(s, "confusion.{label}.{pred}={v}");
        }
    }
    for (kind, secs) in &r.timing {
        let _ = writeln!(s, "time.{kind}={secs}");
    }
    s
}

/// Feature kinds down, architectures across.
pub fn format_grid(g: &ResultGrid) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<14}", "Feature\\Model");
    for a in &g.archs {
        let _ = write!(s, " {:>8}", a.label());
    }
    s.push('\n');
    for (k, row) in g.kinds.iter().zip(&g.accuracy) {
        let _ = write!(s, "{:<14}", k.label());
        for acc in row {
            let _ = write!(s, " {acc:>8.3}");
        }
        s.push('\n');
    }
    s
}

pub fn grid_records(g: &ResultGrid) -> String {
    let mut s = String::new();
    for (k, row) in g.kinds.iter().zip(&g.accuracy) {
        for (a, acc) in g.archs.iter().zip(row) {
            let _ = writeln!(s, "accuracy.{}.{}={acc}", k.name(), a.name());
        }
    }
    s
}
