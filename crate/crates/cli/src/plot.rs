//! SVG figures: validation DICE/loss overlays, learning-rate traces and
//! ablation bar charts.

use std::path::{Path, PathBuf};

use oarseg_core::engine::{read_curves, CurvePoint};
use oarseg_core::optim::read_lr_trace;
use plotters::prelude::*;

use crate::error::CliError;

const SIZE: (u32, u32) = (1200, 480);

pub struct PlotOutput {
    pub files: Vec<PathBuf>,
    /// Exactly the points drawn in each learning-rate figure.
    pub lr_series: Vec<(String, Vec<(u64, f64)>)>,
}

fn draw_err(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("plot rendering failed: {e}"))
}

fn run_label(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

type Series = (String, Vec<(f64, f64)>);

fn line_panel<DB: DrawingBackend>(area: &DrawingArea<DB, plotters::coord::Shift>, title: &str, x_label: &str, series: &[Series]) -> Result<(), CliError>
where
    DB::ErrorType: 'static,
{
    let x_max = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.0)).fold(1.0, f64::max);
    let (y_lo, y_hi) = span(series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(0.0..x_max, y_lo..y_hi)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc(x_label).y_desc(title).draw().map_err(draw_err)?;
    for (i, (label, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    Ok(())
}

fn curve_series(curves: &[(String, Vec<CurvePoint>)], value: fn(&CurvePoint) -> f64) -> Vec<Series> {
    curves
        .iter()
        .map(|(label, points)| (label.clone(), points.iter().map(|p| (p.epoch as f64, value(p))).collect()))
        .collect()
}

/// `curves.svg` with validation DICE and loss panels (one series per run)
/// and `lr_<run>.svg` for every run with a learning-rate trace.
pub fn plot_runs(runs: &[PathBuf], out: &Path) -> Result<PlotOutput, CliError> {
    if runs.is_empty() {
        return Err(CliError::MissingCurves("no run directories given".into()));
    }
    let mut curves = Vec::new();
    for dir in runs {
        if !dir.join("curves.csv").is_file() {
            return Err(CliError::MissingCurves(format!("{} has no curves.csv", dir.display())));
        }
        let (_, val) = read_curves(dir)?;
        curves.push((run_label(dir), val));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut files = Vec::new();

    let path = out.join("curves.svg");
    {
        let root = SVGBackend::new(&path, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let panels = root.split_evenly((1, 2));
        line_panel(&panels[0], "DICE", "epoch", &curve_series(&curves, |p| p.mean_dice))?;
        line_panel(&panels[1], "Loss", "epoch", &curve_series(&curves, |p| p.loss))?;
        root.present().map_err(draw_err)?;
    }
    files.push(path);

    let mut lr_series = Vec::new();
    for dir in runs {
        let trace_path = dir.join("lr_trace.csv");
        if !trace_path.is_file() {
            continue;
        }
        let trace = read_lr_trace(&trace_path).map_err(|e| CliError::Data(e.to_string()))?;
        if trace.is_empty() {
            continue;
        }
        let label = run_label(dir);
        let path = out.join(format!("lr_{label}.svg"));
        {
            let root = SVGBackend::new(&path, SIZE).into_drawing_area();
            root.fill(&WHITE).map_err(draw_err)?;
            let points: Vec<(f64, f64)> = trace.iter().map(|&(t, lr)| (t as f64, lr)).collect();
            line_panel(&root, "learning rate", "iteration", &[(label.clone(), points)])?;
            root.present().map_err(draw_err)?;
        }
        files.push(path);
        lr_series.push((label, trace));
    }
    Ok(PlotOutput { files, lr_series })
}

/// Vertical bars of `values` in [0, 1], labelled by arm.
pub fn bar_chart(path: &Path, title: &str, bars: &[(String, f64)]) -> Result<(), CliError> {
    let root = SVGBackend::new(path, (160 * bars.len().max(3) as u32, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d((0..bars.len()).into_segmented(), 0.0..1.0)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc("overall DICE")
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) => bars.get(*i).map(|b| b.0.clone()).unwrap_or_default(),
            _ => String::new(),
        })
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(
            Histogram::vertical(&chart)
                .style(BLUE.mix(0.6).filled())
                .margin(12)
                .data(bars.iter().enumerate().map(|(i, (_, v))| (i, *v))),
        )
        .map_err(draw_err)?;
    root.present().map_err(draw_err)
}
