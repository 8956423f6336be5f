//! Training-curve chart: train loss (left axis) and test accuracy (right
//! axis) against epoch, as a standalone SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::train::{read_metrics, EpochMetrics};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;

const LOSS_COLOR: &str = "#c0392b";
const ACC_COLOR: &str = "#2471a3";

struct Frame {
    x_min: f64,
    x_max: f64,
    loss_max: f64,
}

impl Frame {
    fn x(&self, epoch: f64) -> f64 {
        LEFT + (epoch - self.x_min) / (self.x_max - self.x_min) * (WIDTH - LEFT - RIGHT)
    }

    /// Maps `v / top` in `[0, 1]` to a y coordinate inside the plot area.
    fn y(&self, v: f64, top: f64) -> f64 {
        let plot_h = HEIGHT - TOP - BOTTOM;
        TOP + plot_h * (1.0 - (v / top).clamp(0.0, 1.0))
    }
}

fn polyline(frame: &Frame, points: impl Iterator<Item = (f64, f64)>, top: f64, color: &str) -> String {
    let coords: Vec<String> = points
        .map(|(e, v)| format!("{:.2},{:.2}", frame.x(e), frame.y(v, top)))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Renders the chart. Fails on an empty series.
pub fn render_svg(rows: &[EpochMetrics]) -> Result<String> {
    let (Some(first), Some(last)) = (rows.first(), rows.last()) else {
        return Err(Error::Metrics {
            line: 1,
            reason: "no epoch rows to plot".into(),
        });
    };
    let x_min = first.epoch as f64;
    let mut x_max = rows.iter().map(|r| r.epoch).max().unwrap_or(last.epoch) as f64;
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let loss_max = rows.iter().map(|r| r.train_loss).fold(0.0, f64::max);
    let frame = Frame {
        x_min,
        x_max,
        loss_max: if loss_max > 0.0 { loss_max * 1.05 } else { 1.0 },
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        svg,
        "<rect x=\"{x0}\" y=\"{y0}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>",
        x1 - x0,
        y1 - y0
    );

    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let y = frame.y(f, 1.0);
        let _ = writeln!(
            svg,
            "<line x1=\"{x0}\" y1=\"{y:.2}\" x2=\"{x1}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>"
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" fill=\"{LOSS_COLOR}\">{:.3}</text>",
            x0 - 6.0,
            y + 4.0,
            f * frame.loss_max
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{ACC_COLOR}\">{:.0}%</text>",
            x1 + 6.0,
            y + 4.0,
            f * 100.0
        );
        let epoch = x_min + f * (x_max - x_min);
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            frame.x(epoch),
            y1 + 18.0,
            epoch.round()
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">epoch</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{x0}\" y=\"{:.2}\" fill=\"{LOSS_COLOR}\">train loss</text>",
        TOP - 14.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"{x1}\" y=\"{:.2}\" text-anchor=\"end\" fill=\"{ACC_COLOR}\">test accuracy</text>",
        TOP - 14.0
    );

    svg.push_str(&polyline(
        &frame,
        rows.iter().map(|r| (r.epoch as f64, r.train_loss)),
        frame.loss_max,
        LOSS_COLOR,
    ));
    svg.push_str(&polyline(
        &frame,
        rows.iter().map(|r| (r.epoch as f64, r.test_acc)),
        1.0,
        ACC_COLOR,
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Reads a metrics CSV and writes the chart to `out`.
pub fn plot_metrics(metrics: &Path, out: &Path) -> Result<()> {
    let rows = read_metrics(metrics)?;
    let svg = render_svg(&rows)?;
    write_atomic(out, svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize) -> Vec<EpochMetrics> {
        (1..=n)
            .map(|e| EpochMetrics {
                epoch: e,
                train_loss: 2.3 / e as f64,
                train_acc: 0.5,
                test_acc: 1.0 - 0.5 / e as f64,
                seconds: 0.0,
            })
            .collect()
    }

    fn points(svg: &str) -> Vec<(f64, f64)> {
        svg.split("points=\"")
            .skip(1)
            .flat_map(|s| s[..s.find('"').unwrap()].split(' '))
            .map(|p| {
                let (x, y) = p.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn two_series_inside_viewbox() {
        let svg = render_svg(&rows(12)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        let pts = points(&svg);
        assert_eq!(pts.len(), 24);
        for (x, y) in pts {
            assert!((0.0..=WIDTH).contains(&x) && (0.0..=HEIGHT).contains(&y));
        }
    }

    #[test]
    fn single_epoch_is_plottable() {
        let svg = render_svg(&rows(1)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn empty_series_is_an_error() {
        assert!(matches!(render_svg(&[]), Err(Error::Metrics { .. })));
    }
}
