use std::path::Path;

use anyhow::{anyhow, bail, Result};
use fsfnet::metrics::MetricsReport;
use fsfnet::train::HistoryRow;
use plotters::prelude::*;

fn err(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("plotting: {e}")
}

/// Total loss and the three pyramid terms against step.
pub fn loss_curves(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    if rows.is_empty() {
        bail!("history is empty");
    }
    let series: [(&str, RGBColor, fn(&HistoryRow) -> f64); 4] = [
        ("total", BLACK, |r| r.total_loss),
        ("l1", RGBColor(31, 119, 180), |r| r.l1),
        ("l2", RGBColor(255, 127, 14), |r| r.l2),
        ("l3", RGBColor(44, 160, 44), |r| r.l3),
    ];
    let x_max = rows.last().map_or(1, |r| r.step).max(1) as f64;
    let y_max = rows
        .iter()
        .flat_map(|r| series.iter().map(move |(_, _, f)| f(r)))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-6)
        * 1.05;

    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training loss", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..x_max, 0.0..y_max)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc("loss")
        .draw()
        .map_err(err)?;
    for (name, color, f) in series {
        chart
            .draw_series(LineSeries::new(rows.iter().map(|r| (r.step as f64, f(r))), color))
            .map_err(err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

/// One bar per class; classes absent from both prediction and ground truth are skipped.
pub fn class_iou_bars(path: &Path, report: &MetricsReport) -> Result<()> {
    let n = report.class_iou.len();
    if n == 0 {
        bail!("report has no classes");
    }
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let caption = format!("per-class IoU (mean {:.3})", report.mean_iou);
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(-0.5..n as f64 - 0.5, 0.0..1.0)
        .map_err(err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| format!("{}", x.round() as i64))
        .x_desc("class")
        .y_desc("IoU")
        .draw()
        .map_err(err)?;
    chart
        .draw_series(report.class_iou.iter().enumerate().filter_map(|(c, iou)| {
            let v = (*iou)?;
            let x = c as f64;
            Some(Rectangle::new(
                [(x - 0.35, 0.0), (x + 0.35, v)],
                RGBColor(31, 119, 180).filled(),
            ))
        }))
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}
