//! Filter-distribution analysis of trained frontends: initialization curve,
//! per-filter deviation, sorted coverage, density summaries and ordering
//! disturbance.

use crate::dsp::hz_to_mel;
use crate::error::{Error, Result};
use crate::frontend::LeafParams;
use crate::svg;
use serde::{Deserialize, Serialize};
use std::path::Path;

const DENSITY_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRow {
    pub index: usize,
    pub init_hz: f64,
    pub trained_hz: f64,
    pub init_mel: f64,
    pub trained_mel: f64,
    pub deviation_hz: f64,
}

/// Per-filter centers before/after training plus derived orderings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub rows: Vec<FilterRow>,
    /// Filter indexes ordered by trained center frequency (stable).
    pub sorted_permutation: Vec<usize>,
    /// Histogram of trained centers over mel bins spanning the full range.
    pub density_histogram: Vec<usize>,
    pub mel_range: (f64, f64),
}

/// Tabulates centers, deviations, sorted ordering and a density histogram.
pub fn extract_filter_report(init: &LeafParams, trained: &LeafParams) -> Result<FilterReport> {
    if init.n_filters() != trained.n_filters() {
        return Err(Error::Data(format!(
            "filter count mismatch: init {} vs trained {}",
            init.n_filters(),
            trained.n_filters()
        )));
    }
    let n = init.n_filters();
    let rows: Vec<FilterRow> = (0..n)
        .map(|i| {
            let init_hz = init.center_freqs[i] as f64;
            let trained_hz = trained.center_freqs[i] as f64;
            FilterRow {
                index: i,
                init_hz,
                trained_hz,
                init_mel: hz_to_mel(init_hz.max(0.0)),
                trained_mel: hz_to_mel(trained_hz.max(0.0)),
                deviation_hz: trained_hz - init_hz,
            }
        })
        .collect();

    let mut sorted_permutation: Vec<usize> = (0..n).collect();
    sorted_permutation.sort_by(|&a, &b| {
        rows[a].trained_hz.partial_cmp(&rows[b].trained_hz).unwrap().then(a.cmp(&b))
    });

    let mel_max = hz_to_mel(22_050.0);
    let mut density_histogram = vec![0usize; DENSITY_BINS];
    for r in &rows {
        let bin = ((r.trained_mel / mel_max) * DENSITY_BINS as f64).floor() as usize;
        density_histogram[bin.min(DENSITY_BINS - 1)] += 1;
    }

    Ok(FilterReport { rows, sorted_permutation, density_histogram, mel_range: (0.0, mel_max) })
}

/// Fraction of adjacent index pairs whose trained centers are out of
/// ascending order: 0 for a fully ordered bank, 1 for fully reversed.
pub fn order_disturbance_metric(report: &FilterReport) -> f64 {
    let n = report.rows.len();
    if n < 2 {
        return 0.0;
    }
    let inversions = report
        .rows
        .windows(2)
        .filter(|w| w[0].trained_hz > w[1].trained_hz)
        .count();
    inversions as f64 / (n - 1) as f64
}

/// `index,init_hz,trained_hz,init_mel,trained_mel,deviation_hz` CSV.
pub fn write_filter_csv(report: &FilterReport, path: &Path) -> Result<()> {
    let mut out = String::from("index,init_hz,trained_hz,init_mel,trained_mel,deviation_hz\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            r.index, r.init_hz, r.trained_hz, r.init_mel, r.trained_mel, r.deviation_hz
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Panel {
    tag: &'static str,
    title: &'static str,
    /// y value per filter index.
    init: Vec<f64>,
    data: Vec<f64>,
    y_max: f64,
    y_label: &'static str,
}

/// Six-panel SVG: initialization curve, trained (unsorted), trained sorted
/// by center, in Hz (A-C) and mel (D-F), each with the initialization curve
/// overlaid, plus a filter-density strip over mel.
pub fn render_filter_plots(report: &FilterReport, path: &Path) -> Result<()> {
    let n = report.rows.len();
    let hz: Vec<f64> = report.rows.iter().map(|r| r.trained_hz).collect();
    let hz_init: Vec<f64> = report.rows.iter().map(|r| r.init_hz).collect();
    let hz_sorted: Vec<f64> = report.sorted_permutation.iter().map(|&i| hz[i]).collect();
    let mel: Vec<f64> = report.rows.iter().map(|r| r.trained_mel).collect();
    let mel_init: Vec<f64> = report.rows.iter().map(|r| r.init_mel).collect();
    let mel_sorted: Vec<f64> = report.sorted_permutation.iter().map(|&i| mel[i]).collect();
    let mel_max = report.mel_range.1;

    let panels = [
        Panel { tag: "A", title: "initialization", init: hz_init.clone(), data: hz_init.clone(), y_max: 22_050.0, y_label: "Hz" },
        Panel { tag: "B", title: "trained", init: hz_init.clone(), data: hz.clone(), y_max: 22_050.0, y_label: "Hz" },
        Panel { tag: "C", title: "trained, sorted", init: hz_init.clone(), data: hz_sorted, y_max: 22_050.0, y_label: "Hz" },
        Panel { tag: "D", title: "initialization", init: mel_init.clone(), data: mel_init.clone(), y_max: mel_max, y_label: "mel" },
        Panel { tag: "E", title: "trained", init: mel_init.clone(), data: mel.clone(), y_max: mel_max, y_label: "mel" },
        Panel { tag: "F", title: "trained, sorted", init: mel_init, data: mel_sorted, y_max: mel_max, y_label: "mel" },
    ];

    let (pw, ph) = (300.0, 230.0);
    let (mx, my) = (55.0, 45.0);
    let strip_h = 90.0;
    let width = 3.0 * (pw + mx) + mx;
    let height = 2.0 * (ph + my) + my + strip_h + 60.0;

    let mut body = String::new();
    for (pi, panel) in panels.iter().enumerate() {
        let ox = mx + (pi % 3) as f64 * (pw + mx);
        let oy = my + (pi / 3) as f64 * (ph + my);
        // Panel-local coordinates: identical data yields identical point
        // strings regardless of panel position.
        body.push_str(&format!("<g transform=\"translate({:.2},{:.2})\">\n", ox, oy));
        body.push_str(&svg::text(0.0, -8.0, 14.0, "start", &format!("{}: {}", panel.tag, panel.title), None));
        body.push_str(&svg::line(0.0, 0.0, 0.0, ph, "black", 1.0));
        body.push_str(&svg::line(0.0, ph, pw, ph, "black", 1.0));
        body.push_str(&svg::text(-8.0, 10.0, 10.0, "end", &format!("{:.0}", panel.y_max), None));
        body.push_str(&svg::text(-8.0, ph, 10.0, "end", "0", None));
        body.push_str(&svg::text(pw / 2.0, ph + 26.0, 10.0, "middle", "filter index", None));
        body.push_str(&svg::text(-30.0, ph / 2.0, 10.0, "middle", panel.y_label,
            Some(&format!("rotate(-90 {} {})", -30.0, ph / 2.0))));

        let to_xy = |vals: &[f64]| -> Vec<(f64, f64)> {
            vals.iter()
                .enumerate()
                .map(|(i, &v)| {
                    let x = pw * i as f64 / (n - 1).max(1) as f64;
                    let y = ph * (1.0 - (v / panel.y_max).clamp(0.0, 1.0));
                    (x, y)
                })
                .collect()
        };
        // The initialization curve overlays every panel for comparison.
        body.push_str(&svg::polyline(&to_xy(&panel.init), "#e08020", 1.2, None));
        let pts = to_xy(&panel.data);
        body.push_str(&svg::polyline(&pts, "#3050c0", 1.2, Some(&format!("panel-{}-data", panel.tag))));
        for &(x, y) in &pts {
            body.push_str(&svg::circle(x, y, 1.6, "#3050c0"));
        }
        body.push_str("</g>\n");
    }

    // Density strip over mel.
    let oy = 2.0 * (ph + my) + my + 20.0;
    let max_bin = report.density_histogram.iter().copied().max().unwrap_or(1).max(1) as f64;
    let strip_w = width - 2.0 * mx;
    body.push_str(&svg::text(mx, oy - 6.0, 12.0, "start", "filter density over mel", None));
    let bw = strip_w / report.density_histogram.len() as f64;
    for (i, &count) in report.density_histogram.iter().enumerate() {
        let h = strip_h * count as f64 / max_bin;
        body.push_str(&svg::rect(mx + i as f64 * bw, oy + strip_h - h, bw - 1.0, h, "#3050c0"));
    }
    body.push_str(&svg::line(mx, oy + strip_h, mx + strip_w, oy + strip_h, "black", 1.0));
    body.push_str(&svg::text(mx, oy + strip_h + 14.0, 10.0, "start", "0 mel", None));
    body.push_str(&svg::text(mx + strip_w, oy + strip_h + 14.0, 10.0, "end",
        &format!("{:.0} mel", report.mel_range.1), None));

    std::fs::write(path, svg::document(width, height, &body))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{leaf_init, F_MAX, F_MIN};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    #[test]
    fn identity_report_has_zero_deviation_and_identity_permutation() {
        let p = leaf_init(64, F_MIN, F_MAX);
        let r = extract_filter_report(&p, &p).unwrap();
        assert_eq!(r.rows.len(), 64);
        assert!(r.rows.iter().all(|row| row.deviation_hz == 0.0));
        assert_eq!(r.sorted_permutation, (0..64).collect::<Vec<_>>());
        assert_eq!(order_disturbance_metric(&r), 0.0);
    }

    #[test]
    fn swapped_centers_show_as_transposition() {
        let init = leaf_init(64, F_MIN, F_MAX);
        let mut trained = init.clone();
        trained.center_freqs.swap(10, 11);
        let r = extract_filter_report(&init, &trained).unwrap();
        assert_eq!(r.sorted_permutation[10], 11);
        assert_eq!(r.sorted_permutation[11], 10);
        assert_eq!(r.rows[10].deviation_hz, -r.rows[11].deviation_hz);
    }

    #[test]
    fn large_downward_shift_of_top_filter_is_visible() {
        // The top filter initializes near 20.9 kHz; a move to ~13 kHz shows
        // as a large negative deviation on the highest index and breaks its
        // position in the sorted order.
        let init = leaf_init(64, F_MIN, F_MAX);
        let mut trained = init.clone();
        trained.center_freqs[63] = 13_000.0;
        let r = extract_filter_report(&init, &trained).unwrap();
        assert!(r.rows[63].deviation_hz < -7_000.0, "{}", r.rows[63].deviation_hz);
        assert_ne!(*r.sorted_permutation.last().unwrap(), 63);
    }

    #[test]
    fn filter_count_mismatch_rejected() {
        let a = leaf_init(64, F_MIN, F_MAX);
        let b = leaf_init(32, F_MIN, F_MAX);
        assert!(extract_filter_report(&a, &b).is_err());
    }

    #[test]
    fn fully_reversed_centers_score_one() {
        let init = leaf_init(64, F_MIN, F_MAX);
        let mut trained = init.clone();
        trained.center_freqs.reverse();
        let r = extract_filter_report(&init, &trained).unwrap();
        assert_eq!(order_disturbance_metric(&r), 1.0);
    }

    #[test]
    fn random_permutations_average_near_half() {
        let init = leaf_init(64, F_MIN, F_MAX);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut total = 0.0;
        let trials = 1000;
        for _ in 0..trials {
            let mut trained = init.clone();
            trained.center_freqs.shuffle(&mut rng);
            let r = extract_filter_report(&init, &trained).unwrap();
            total += order_disturbance_metric(&r);
        }
        let mean = total / trials as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean disturbance {}", mean);
    }

    #[test]
    fn sorted_permutation_recovers_order() {
        let init = leaf_init(64, F_MIN, F_MAX);
        let mut trained = init.clone();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        trained.center_freqs.shuffle(&mut rng);
        let r = extract_filter_report(&init, &trained).unwrap();
        let sorted: Vec<f64> = r.sorted_permutation.iter().map(|&i| r.rows[i].trained_hz).collect();
        for w in sorted.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn csv_has_64_data_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = leaf_init(64, F_MIN, F_MAX);
        let r = extract_filter_report(&p, &p).unwrap();
        let path = dir.path().join("f.csv");
        write_filter_csv(&r, &path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        assert_eq!(content.lines().count(), 65); // header + 64
        assert!(content.starts_with("index,init_hz,trained_hz,init_mel,trained_mel,deviation_hz\n"));
    }

    #[test]
    fn plots_are_valid_xml_with_coinciding_panels_for_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = leaf_init(64, F_MIN, F_MAX);
        let r = extract_filter_report(&p, &p).unwrap();
        let path = dir.path().join("f.svg");
        render_filter_plots(&r, &path).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();

        let mut reader = quick_xml::Reader::from_str(&content);
        loop {
            match reader.read_event() {
                Ok(quick_xml::events::Event::Eof) => break,
                Ok(_) => {}
                Err(e) => panic!("invalid xml: {}", e),
            }
        }
        // Identity report: trained and sorted panels coincide with the
        // initialization panel.
        let points_of = |tag: &str| -> String {
            let marker = format!("id=\"panel-{}-data\" points=\"", tag);
            let start = content.find(&marker).expect("panel present") + marker.len();
            content[start..].split('"').next().unwrap().to_string()
        };
        assert_eq!(points_of("A"), points_of("B"));
        assert_eq!(points_of("A"), points_of("C"));
        // Axis ranges cover the full frequency range.
        assert!(content.contains("22050"));
        assert!(content.contains(&format!("{:.0} mel", hz_to_mel(22_050.0))));
    }
}
