//! Test-set evaluation: accuracy, macro precision/recall/F1, confusion
//! matrices with alphabetical label ordering, and multi-run summaries.

use crate::dataset::{AudioStore, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::svg;
use crate::tensor::{Mode, Tensor};
use crate::training::{restore_model_and_frontend, Checkpoint};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Evaluation result over one subset. Confusion rows are true labels,
/// columns predicted, both in alphabetical label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_tag: String,
    pub labels: Vec<String>,
    pub items: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<usize>>,
    /// Validation-side metrics of the producing run, carried along for
    /// summary tables.
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
}

/// Metrics from predicted/true index pairs (labels alphabetical).
pub fn compute_report(
    model_tag: &str,
    labels: &[String],
    y_true: &[usize],
    y_pred: &[usize],
) -> EvalReport {
    assert_eq!(y_true.len(), y_pred.len());
    let n = labels.len();
    let mut confusion = vec![vec![0usize; n]; n];
    for (&t, &p) in y_true.iter().zip(y_pred.iter()) {
        confusion[t][p] += 1;
    }

    let total: usize = y_true.len();
    let trace: usize = (0..n).map(|i| confusion[i][i]).sum();
    let accuracy = if total > 0 { trace as f64 / total as f64 } else { 0.0 };

    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..n).map(|r| confusion[r][c]).sum();
        let tp = confusion[c][c];
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            log::warn!(
                "class {:?} never predicted; defining its precision as 0",
                labels[c]
            );
            0.0
        };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassMetrics { label: labels[c].clone(), support, precision, recall, f1 });
    }

    let macro_of = |f: fn(&ClassMetrics) -> f64| -> f64 {
        per_class.iter().map(f).sum::<f64>() / n as f64
    };
    EvalReport {
        model_tag: model_tag.into(),
        labels: labels.to_vec(),
        items: total,
        accuracy,
        macro_f1: macro_of(|c| c.f1),
        macro_recall: macro_of(|c| c.recall),
        macro_precision: macro_of(|c| c.precision),
        per_class,
        confusion,
        val_accuracy: None,
        val_loss: None,
    }
}

/// Restores the checkpointed model and scores one subset by chunk-level
/// argmax. With `group_by_file`, chunk predictions are majority-voted per
/// recording (ties resolve to the lowest class index) and items are
/// recordings instead of chunks.
pub fn evaluate(
    ckpt: &Checkpoint,
    manifest: &DatasetManifest,
    store: &AudioStore,
    split: Split,
    group_by_file: bool,
) -> Result<EvalReport> {
    let labels = manifest.labels();
    if labels != ckpt.meta.labels {
        return Err(Error::Label(format!(
            "checkpoint was trained on {} labels, manifest has {}",
            ckpt.meta.labels.len(),
            labels.len()
        )));
    }
    let label_index: HashMap<String, usize> =
        labels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
    let refs = manifest.chunk_refs(split);
    if refs.is_empty() {
        return Err(Error::Data(format!("no chunks in {:?} split", split)));
    }

    let (model, frontend) = restore_model_and_frontend(ckpt)?;
    let mut rng = crate::rng::StreamFactory::new(0).stream("eval-unused", 0);

    // (entry index, true class, predicted class) per chunk.
    let mut chunk_preds: Vec<(usize, usize, usize)> = Vec::with_capacity(refs.len());
    for batch in refs.chunks(ckpt.meta.config.batch_size.max(1)) {
        let mut maps = Vec::with_capacity(batch.len());
        for &(ei, ci) in batch {
            let entry = &manifest.entries[ei];
            let w = store.load_chunk(entry, &entry.chunks[ci])?;
            maps.push(frontend.forward(&w)?.values().clone());
        }
        let stacked = Tensor::stack(&maps);
        let (b, c, f) = (stacked.shape()[0], stacked.shape()[1], stacked.shape()[2]);
        let logits = model.forward(&stacked.reshape(&[b, 1, c, f]), Mode::Eval, &mut rng)?;
        let (rows, classes) = (logits.shape()[0], logits.shape()[1]);
        let lv = logits.values();
        for (row, &(ei, _)) in batch.iter().enumerate().take(rows) {
            let slice = &lv[row * classes..(row + 1) * classes];
            let pred = slice
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            chunk_preds.push((ei, label_index[&manifest.entries[ei].label], pred));
        }
    }

    let (y_true, y_pred) = if group_by_file {
        let mut votes: HashMap<usize, (usize, Vec<usize>)> = HashMap::new();
        for &(ei, t, p) in &chunk_preds {
            let e = votes.entry(ei).or_insert_with(|| (t, vec![0; labels.len()]));
            e.1[p] += 1;
        }
        let mut entries: Vec<_> = votes.into_iter().collect();
        entries.sort_by_key(|(ei, _)| *ei);
        let mut yt = Vec::new();
        let mut yp = Vec::new();
        for (_, (t, counts)) in entries {
            // max_by keeps the later element on ties, so compare indexes
            // reversed to prefer the lowest class.
            let best = counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            yt.push(t);
            yp.push(best);
        }
        (yt, yp)
    } else {
        (
            chunk_preds.iter().map(|&(_, t, _)| t).collect(),
            chunk_preds.iter().map(|&(_, _, p)| p).collect(),
        )
    };

    let tag = format!("{}-{}", ckpt.meta.config.frontend.name(), ckpt.meta.config.n_conv_layers);
    let mut report = compute_report(&tag, &labels, &y_true, &y_pred);
    report.val_accuracy = Some(ckpt.meta.best_val_acc);
    report.val_loss = Some(ckpt.meta.best_val_loss);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Median (lower-middle for even counts) and range of one metric across
/// runs.
fn summarize_metric(values: &[f64]) -> MetricSummary {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    MetricSummary {
        median: sorted[(sorted.len() - 1) / 2],
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    }
}

/// Per-metric median and range over repeated runs of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model_tag: String,
    pub n_runs: usize,
    pub accuracy: MetricSummary,
    pub f1: MetricSummary,
    pub recall: MetricSummary,
    pub precision: MetricSummary,
    pub val_accuracy: Option<MetricSummary>,
    pub val_loss: Option<MetricSummary>,
}

pub fn summarize_runs(reports: &[EvalReport]) -> Result<RunSummary> {
    if reports.is_empty() {
        return Err(Error::Data("no reports to summarize".into()));
    }
    let labels = &reports[0].labels;
    if reports.iter().any(|r| &r.labels != labels) {
        return Err(Error::Label("reports have mixed label sets".into()));
    }
    let collect = |f: fn(&EvalReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let opt = |f: fn(&EvalReport) -> Option<f64>| -> Option<MetricSummary> {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        (vals.len() == reports.len()).then(|| summarize_metric(&vals))
    };
    Ok(RunSummary {
        model_tag: reports[0].model_tag.clone(),
        n_runs: reports.len(),
        accuracy: summarize_metric(&collect(|r| r.accuracy)),
        f1: summarize_metric(&collect(|r| r.macro_f1)),
        recall: summarize_metric(&collect(|r| r.macro_recall)),
        precision: summarize_metric(&collect(|r| r.macro_precision)),
        val_accuracy: opt(|r| r.val_accuracy),
        val_loss: opt(|r| r.val_loss),
    })
}

pub fn write_report_json(report: &EvalReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Data(format!("report serialization: {}", e)))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_report_json(path: &Path) -> Result<EvalReport> {
    let content = std::fs::read_to_string(path)?;
    serde_json::from_str(&content).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })
}

/// Confusion counts as CSV: header row/column carry the alphabetical
/// labels.
pub fn export_confusion_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push(',');
    out.push_str(&report.labels.join(","));
    out.push('\n');
    for (i, row) in report.confusion.iter().enumerate() {
        out.push_str(&report.labels[i]);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Confusion heatmap (rows true, columns predicted). With
/// `group_separators`, lines are drawn where the first word of the label
/// (the genus in binomial names) changes.
pub fn export_confusion_svg(report: &EvalReport, path: &Path, group_separators: bool) -> Result<()> {
    let n = report.labels.len();
    let cell = (640.0 / n as f64).clamp(6.0, 40.0);
    let margin_left = 170.0;
    let margin_top = 170.0;
    let grid = cell * n as f64;
    let width = margin_left + grid + 40.0;
    let height = margin_top + grid + 40.0;

    let max_count = report
        .confusion
        .iter()
        .flat_map(|r| r.iter())
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;

    let mut body = String::new();
    body.push_str(&svg::text(
        margin_left + grid / 2.0,
        24.0,
        16.0,
        "middle",
        &format!(
            "{}: accuracy {:.3} (true rows, predicted columns)",
            report.model_tag, report.accuracy
        ),
        None,
    ));
    for (r, row) in report.confusion.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            let x = margin_left + c as f64 * cell;
            let y = margin_top + r as f64 * cell;
            body.push_str(&svg::rect(x, y, cell, cell, &svg::heat_color(count as f64 / max_count)));
        }
    }
    let label_step = (n as f64 / 64.0).ceil() as usize;
    for (i, label) in report.labels.iter().enumerate() {
        if i % label_step != 0 {
            continue;
        }
        let y = margin_top + i as f64 * cell + cell * 0.7;
        body.push_str(&svg::text(margin_left - 6.0, y, cell.min(11.0), "end", label, None));
        let x = margin_left + i as f64 * cell + cell * 0.7;
        body.push_str(&svg::text(
            0.0,
            0.0,
            cell.min(11.0),
            "start",
            label,
            Some(&format!("translate({:.2},{:.2}) rotate(-90)", x, margin_top - 6.0)),
        ));
    }
    if group_separators {
        let genus = |s: &str| s.split_whitespace().next().unwrap_or(s).to_string();
        for i in 1..n {
            if genus(&report.labels[i]) != genus(&report.labels[i - 1]) {
                let offset = i as f64 * cell;
                body.push_str(&svg::line(
                    margin_left,
                    margin_top + offset,
                    margin_left + grid,
                    margin_top + offset,
                    "#888888",
                    0.8,
                ));
                body.push_str(&svg::line(
                    margin_left + offset,
                    margin_top,
                    margin_left + offset,
                    margin_top + grid,
                    "#888888",
                    0.8,
                ));
            }
        }
    }
    body.push_str(&svg::line(margin_left, margin_top, margin_left + grid, margin_top, "black", 1.0));
    body.push_str(&svg::line(margin_left, margin_top, margin_left, margin_top + grid, "black", 1.0));

    std::fs::write(path, svg::document(width, height, &body))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_predictions() {
        let r = compute_report("m", &labels(&["a", "b"]), &[0, 0, 1, 1], &[0, 0, 1, 1]);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion, vec![vec![2, 0], vec![0, 2]]);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn hand_computed_four_item_case() {
        // y_true = [a, a, b, b], y_pred = [a, b, b, b]
        let r = compute_report("m", &labels(&["a", "b"]), &[0, 0, 1, 1], &[0, 1, 1, 1]);
        assert_relative_eq!(r.accuracy, 0.75);
        assert_relative_eq!(r.macro_precision, (1.0 + 2.0 / 3.0) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.macro_recall, 0.75);
        assert_relative_eq!(r.macro_f1, (2.0 / 3.0 + 0.8) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn absent_prediction_gives_zero_precision() {
        let r = compute_report("m", &labels(&["a", "b"]), &[0, 1], &[0, 0]);
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].f1, 0.0);
    }

    #[test]
    fn accuracy_is_trace_over_total() {
        let r = compute_report("m", &labels(&["a", "b", "c"]), &[0, 1, 2, 2, 1], &[0, 2, 2, 0, 1]);
        let trace: usize = (0..3).map(|i| r.confusion[i][i]).sum();
        let total: usize = r.confusion.iter().flatten().sum();
        assert_relative_eq!(r.accuracy, trace as f64 / total as f64);
    }

    #[test]
    fn macro_metrics_invariant_under_relabeling() {
        let y_true = [0, 0, 1, 2, 2, 1, 0];
        let y_pred = [0, 1, 1, 2, 0, 1, 0];
        let r1 = compute_report("m", &labels(&["a", "b", "c"]), &y_true, &y_pred);
        // Swap classes 0 and 2 everywhere.
        let swap = |v: usize| match v {
            0 => 2,
            2 => 0,
            x => x,
        };
        let yt2: Vec<usize> = y_true.iter().map(|&v| swap(v)).collect();
        let yp2: Vec<usize> = y_pred.iter().map(|&v| swap(v)).collect();
        let r2 = compute_report("m", &labels(&["c", "b", "a"]), &yt2, &yp2);
        assert_relative_eq!(r1.macro_f1, r2.macro_f1, epsilon = 1e-12);
        assert_relative_eq!(r1.macro_precision, r2.macro_precision, epsilon = 1e-12);
        assert_relative_eq!(r1.accuracy, r2.accuracy, epsilon = 1e-12);
    }

    fn report_with_accuracy(acc: f64) -> EvalReport {
        let mut r = compute_report("m", &labels(&["a", "b"]), &[0, 1], &[0, 1]);
        r.accuracy = acc;
        r
    }

    #[test]
    fn summary_matches_published_row() {
        // Five runs: median 0.62, range 0.57-0.67.
        let runs: Vec<EvalReport> =
            [0.62, 0.57, 0.67, 0.60, 0.65].iter().map(|&a| report_with_accuracy(a)).collect();
        let s = summarize_runs(&runs).unwrap();
        assert_relative_eq!(s.accuracy.median, 0.62);
        assert_relative_eq!(s.accuracy.min, 0.57);
        assert_relative_eq!(s.accuracy.max, 0.67);
    }

    #[test]
    fn three_run_median() {
        let runs: Vec<EvalReport> =
            [0.79, 0.81, 0.83].iter().map(|&a| report_with_accuracy(a)).collect();
        assert_relative_eq!(summarize_runs(&runs).unwrap().accuracy.median, 0.81);
    }

    #[test]
    fn single_run_median_equals_extremes() {
        let s = summarize_runs(&[report_with_accuracy(0.5)]).unwrap();
        assert_eq!((s.accuracy.median, s.accuracy.min, s.accuracy.max), (0.5, 0.5, 0.5));
    }

    #[test]
    fn even_count_takes_lower_middle() {
        let runs: Vec<EvalReport> =
            [0.4, 0.6, 0.5, 0.7].iter().map(|&a| report_with_accuracy(a)).collect();
        assert_relative_eq!(summarize_runs(&runs).unwrap().accuracy.median, 0.5);
    }

    #[test]
    fn summary_invariant_to_permutation() {
        let a: Vec<EvalReport> =
            [0.62, 0.57, 0.67].iter().map(|&x| report_with_accuracy(x)).collect();
        let b: Vec<EvalReport> =
            [0.67, 0.62, 0.57].iter().map(|&x| report_with_accuracy(x)).collect();
        assert_eq!(summarize_runs(&a).unwrap(), summarize_runs(&b).unwrap());
    }

    #[test]
    fn mixed_label_sets_rejected() {
        let r1 = compute_report("m", &labels(&["a", "b"]), &[0], &[0]);
        let r2 = compute_report("m", &labels(&["a", "c"]), &[0], &[0]);
        assert!(matches!(summarize_runs(&[r1, r2]), Err(Error::Label(_))));
    }

    #[test]
    fn confusion_csv_exact_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let r = compute_report("m", &labels(&["a", "b"]), &[0, 0, 1, 1], &[0, 0, 1, 1]);
        export_confusion_csv(&r, &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), ",a,b\na,2,0\nb,0,2\n");
    }

    #[test]
    fn confusion_svg_is_well_formed_xml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.svg");
        let r = compute_report(
            "m",
            &labels(&["Genus one", "Genus two", "Other three"]),
            &[0, 1, 2, 2],
            &[0, 1, 1, 2],
        );
        export_confusion_svg(&r, &path, true).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        let mut reader = quick_xml::Reader::from_str(&content);
        loop {
            match reader.read_event() {
                Ok(quick_xml::events::Event::Eof) => break,
                Ok(_) => {}
                Err(e) => panic!("invalid xml: {}", e),
            }
        }
    }

    #[test]
    fn report_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let mut r = compute_report("m", &labels(&["a", "b"]), &[0, 1], &[0, 1]);
        r.val_accuracy = Some(0.9);
        r.val_loss = Some(0.3);
        write_report_json(&r, &path).unwrap();
        assert_eq!(load_report_json(&path).unwrap(), r);
    }
}
