//! Result tables in the published column layouts and SVG figures, all
//! regenerated from persisted evaluation rows without touching models.

use std::collections::BTreeSet;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::fid::{pooled_hists, FidReport};
use crate::harness::{fraction_count, EvalRow, Scenario, UncertaintyReport};

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn fmt_acc(v: f64) -> String {
    format!("{v:.2}")
}

fn find_acc(rows: &[EvalRow], pick: impl Fn(&EvalRow) -> bool, what: &str) -> Result<f64> {
    let hits: Vec<&EvalRow> = rows.iter().filter(|r| pick(r)).collect();
    match hits.as_slice() {
        [one] => Ok(one.accuracy),
        [] => Err(Error::InvalidInput(format!("no evaluation row for {what}"))),
        _ => Err(Error::InvalidInput(format!("ambiguous evaluation rows for {what}"))),
    }
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// Hierarchical accuracy table: one row per (layer, data) group with the
/// three scenario columns.
pub fn hierarchical_table(rows: &[EvalRow]) -> Result<String> {
    let mut out = String::from("layer,data,original,synth,ori+synth\n");
    let mut groups: Vec<(String, String)> = Vec::new();
    for level in ["L1", "L2", "L3"] {
        let mut datasets: Vec<String> = rows
            .iter()
            .filter(|r| r.level == level)
            .map(|r| r.dataset.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        datasets.sort();
        groups.extend(datasets.into_iter().map(|d| (level.to_string(), d)));
    }
    if groups.is_empty() {
        return Err(Error::InvalidInput("no hierarchical rows to tabulate".into()));
    }
    for (level, dataset) in groups {
        let mut cells = Vec::with_capacity(3);
        for scenario in [Scenario::Original, Scenario::Synth, Scenario::OriSynth] {
            let acc = find_acc(
                rows,
                |r| r.level == level && r.dataset == dataset && r.scenario == scenario,
                &format!("{level}/{dataset}/{}", scenario.id()),
            )?;
            cells.push(fmt_acc(acc));
        }
        out.push_str(&format!("{level},{dataset},{}\n", cells.join(",")));
    }
    Ok(out)
}

/// Generator-dimensionality table: per dataset, the full-data original
/// accuracy and the synth / ori+synth columns for the 1D and 2D models.
pub fn dm_1d2d_table(rows: &[EvalRow]) -> Result<String> {
    let mut out =
        String::from("dataset,original,synth_1d,synth_2d,ori+synth_1d,ori+synth_2d\n");
    let datasets: BTreeSet<String> = rows
        .iter()
        .filter(|r| r.level.starts_with("dm-") || r.level == "baseline")
        .map(|r| r.dataset.clone())
        .collect();
    if datasets.is_empty() {
        return Err(Error::InvalidInput("no generator-comparison rows to tabulate".into()));
    }
    for dataset in datasets {
        let base = find_acc(
            rows,
            |r| r.dataset == dataset && r.level == "baseline",
            &format!("{dataset}/baseline"),
        )?;
        let mut cells = vec![fmt_acc(base)];
        for scenario in [Scenario::Synth, Scenario::OriSynth] {
            for level in ["dm-1d", "dm-2d"] {
                let acc = find_acc(
                    rows,
                    |r| r.dataset == dataset && r.level == level && r.scenario == scenario,
                    &format!("{dataset}/{level}/{}", scenario.id()),
                )?;
                cells.push(fmt_acc(acc));
            }
        }
        out.push_str(&format!("{dataset},{}\n", cells.join(",")));
    }
    Ok(out)
}

/// Representation table: per dataset, 1D and 2D original-data accuracy at
/// each training fraction (e.g. 80/40/20%).
pub fn fraction_table(
    rows: &[EvalRow],
    fractions_pct: &[usize],
    per_class_total: usize,
) -> Result<String> {
    if fractions_pct.is_empty() {
        return Err(Error::InvalidInput("no fractions requested".into()));
    }
    let mut header = String::from("dataset");
    for pct in fractions_pct {
        header.push_str(&format!(",1d_{pct},2d_{pct}"));
    }
    let mut out = header + "\n";
    let datasets: BTreeSet<String> = rows
        .iter()
        .filter(|r| r.level.starts_with("repr-"))
        .map(|r| r.dataset.clone())
        .collect();
    if datasets.is_empty() {
        return Err(Error::InvalidInput("no representation rows to tabulate".into()));
    }
    for dataset in datasets {
        let mut cells = Vec::new();
        for &pct in fractions_pct {
            let k = fraction_count(pct, per_class_total);
            for level in ["repr-1d", "repr-2d"] {
                let acc = find_acc(
                    rows,
                    |r| r.dataset == dataset && r.level == level && r.train_size == k,
                    &format!("{dataset}/{level}/{pct}%"),
                )?;
                cells.push(fmt_acc(acc));
            }
        }
        out.push_str(&format!("{dataset},{}\n", cells.join(",")));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Figures
// ---------------------------------------------------------------------------

const FIG_SIZE: (u32, u32) = (800, 500);
const SERIES_COLORS: [RGBColor; 3] = [RGBColor(31, 119, 180), RGBColor(255, 127, 14), RGBColor(44, 160, 44)];

/// Per-class distribution-distance bars with a mean line.
pub fn fid_bars_svg(report: &FidReport, path: &Path) -> Result<()> {
    if report.per_class.is_empty() {
        return Err(Error::InvalidInput("empty per-class distance report".into()));
    }
    let n = report.per_class.len();
    let ymax = report
        .per_class
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::MIN, f64::max)
        .max(1e-12)
        * 1.15;
    let root = SVGBackend::new(path, FIG_SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let title = format!(
        "{} distribution distance ({} embedder)",
        report.dataset_id, report.embedder_id
    );
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(56)
        .build_cartesian_2d(-0.5f64..(n as f64 - 0.5), 0f64..ymax)
        .map_err(plot_err)?;
    let labels: Vec<u32> = report.per_class.iter().map(|&(c, _)| c).collect();
    chart
        .configure_mesh()
        .x_desc("class")
        .y_desc("distance")
        .x_labels(n.min(20))
        .x_label_formatter(&|x| {
            let i = x.round() as i64;
            if i >= 0 && (i as usize) < labels.len() && (x - i as f64).abs() < 0.25 {
                format!("{}", labels[i as usize])
            } else {
                String::new()
            }
        })
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(report.per_class.iter().enumerate().map(|(i, &(_, v))| {
            Rectangle::new(
                [(i as f64 - 0.35, 0.0), (i as f64 + 0.35, v)],
                SERIES_COLORS[0].filled(),
            )
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(
            [(-0.5f64, report.mean), (n as f64 - 0.5, report.mean)],
            SERIES_COLORS[1].stroke_width(2),
        ))
        .map_err(plot_err)?
        .label(format!("mean {:.3}", report.mean))
        .legend(|(x, y)| PathElement::new([(x, y), (x + 18, y)], SERIES_COLORS[1].stroke_width(2)));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// One accuracy line per scenario against an integer x axis.
fn accuracy_lines_svg(
    rows: &[EvalRow],
    x_of: &dyn Fn(&EvalRow) -> usize,
    x_desc: &str,
    title: &str,
    path: &Path,
) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("no rows to plot".into()));
    }
    let xs: Vec<usize> = rows.iter().map(x_of).collect();
    let (xmin, xmax) = (*xs.iter().min().unwrap(), *xs.iter().max().unwrap());
    let pad = ((xmax - xmin) as f64 * 0.05).max(0.5);
    let root = SVGBackend::new(path, FIG_SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(56)
        .build_cartesian_2d(
            (xmin as f64 - pad)..(xmax as f64 + pad),
            0f64..103f64,
        )
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc("accuracy (%)")
        .draw()
        .map_err(plot_err)?;
    for (i, scenario) in [Scenario::Original, Scenario::Synth, Scenario::OriSynth]
        .into_iter()
        .enumerate()
    {
        let mut pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.scenario == scenario)
            .map(|r| (x_of(r) as f64, r.accuracy))
            .collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let color = SERIES_COLORS[i];
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(scenario.id())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|&(x, y)| Circle::new((x, y), 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Accuracy against the number of original training traces per class.
pub fn accuracy_vs_size_svg(rows: &[EvalRow], title: &str, path: &Path) -> Result<()> {
    accuracy_lines_svg(rows, &|r| r.train_size, "original traces per class", title, path)
}

/// Accuracy against the trace-prefix length.
pub fn accuracy_vs_prefix_svg(rows: &[EvalRow], title: &str, path: &Path) -> Result<()> {
    accuracy_lines_svg(rows, &|r| r.crop_length, "prefix length (samples)", title, path)
}

/// Accuracy against the synthetic count per class.
pub fn accuracy_vs_synth_svg(rows: &[EvalRow], title: &str, path: &Path) -> Result<()> {
    accuracy_lines_svg(rows, &|r| r.synth_count, "synthetic images per class", title, path)
}

/// Overlaid entropy histograms for the legitimate and anomaly
/// populations, on [0, ln K].
pub fn entropy_dist_svg(report: &UncertaintyReport, bins: usize, path: &Path) -> Result<()> {
    if bins < 2 {
        return Err(Error::InvalidInput("need at least 2 bins".into()));
    }
    let hmax = report.max_entropy().max(1e-12);
    let hist = |vals: &[f64]| -> Vec<f64> {
        let mut h = vec![0.0f64; bins];
        for &v in vals {
            let b = ((v / hmax * bins as f64) as usize).min(bins - 1);
            h[b] += 1.0;
        }
        for x in &mut h {
            *x /= vals.len() as f64;
        }
        h
    };
    let legit = hist(&report.legit_entropy);
    let anom = hist(&report.anomaly_entropy);
    let ymax = legit.iter().chain(&anom).fold(f64::MIN, |a, &b| a.max(b)) * 1.15;
    let root = SVGBackend::new(path, FIG_SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("predictive entropy, M={}", report.ensemble_size),
            ("sans-serif", 22),
        )
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(56)
        .build_cartesian_2d(0f64..hmax, 0f64..ymax)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("entropy (nats)")
        .y_desc("fraction of traces")
        .draw()
        .map_err(plot_err)?;
    for (name, h, color) in [
        ("legitimate", &legit, SERIES_COLORS[0]),
        ("anomaly", &anom, SERIES_COLORS[1]),
    ] {
        chart
            .draw_series(h.iter().enumerate().filter(|(_, &v)| v > 0.0).map(|(i, &v)| {
                Rectangle::new(
                    [
                        (i as f64 / bins as f64 * hmax, 0.0),
                        ((i + 1) as f64 / bins as f64 * hmax, v),
                    ],
                    color.mix(0.45).filled(),
                )
            }))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| {
                Rectangle::new([(x, y - 5), (x + 14, y + 5)], color.mix(0.45).filled())
            });
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Pooled pixel-value histograms of original and synthetic image sets.
pub fn pixel_histogram_svg(
    original: &[crate::enhance::PixelImage],
    synthetic: &[crate::enhance::PixelImage],
    bins: usize,
    path: &Path,
) -> Result<()> {
    let (ho, hs) = pooled_hists(original, synthetic, bins)?;
    pixel_histogram_series_svg(&ho, &hs, path)
}

/// Same figure from already-binned normalized histograms (the persisted
/// artifact form).
pub fn pixel_histogram_series_svg(ho: &[f64], hs: &[f64], path: &Path) -> Result<()> {
    if ho.len() != hs.len() || ho.len() < 2 {
        return Err(Error::InvalidInput("histograms must share >= 2 bins".into()));
    }
    let bins = ho.len();
    let ymax = ho.iter().chain(hs).fold(f64::MIN, |a, &b| a.max(b)) * 1.15;
    let root = SVGBackend::new(path, FIG_SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("pixel-value distribution", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(56)
        .build_cartesian_2d(0f64..1f64, 0f64..ymax)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("pixel value")
        .y_desc("fraction of pixels")
        .draw()
        .map_err(plot_err)?;
    for (name, h, color) in [
        ("original", &ho, SERIES_COLORS[0]),
        ("synthetic", &hs, SERIES_COLORS[1]),
    ] {
        let pts: Vec<(f64, f64)> = h
            .iter()
            .enumerate()
            .map(|(i, &v)| ((i as f64 + 0.5) / bins as f64, v))
            .collect();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
