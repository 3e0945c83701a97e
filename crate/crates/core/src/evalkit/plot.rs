//! SVG line charts and histograms.

use std::path::Path;

use plotters::prelude::*;

use super::EvalError;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn draw_err<E: std::error::Error + Send + Sync>(e: DrawingAreaErrorKind<E>) -> EvalError {
    EvalError::Plot(e.to_string())
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<(), EvalError> {
    let all = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(draw_err)?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(
                s.points.iter().cloned().filter(|(x, y)| x.is_finite() && y.is_finite()),
                color.stroke_width(2),
            ))
            .map_err(draw_err)?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Side-by-side bars per bin, one colour per series.
pub fn histogram(path: &Path, title: &str, x_label: &str, edges: &[f64], series: &[(String, Vec<usize>)]) -> Result<(), EvalError> {
    if edges.len() < 2 {
        return Err(EvalError::Plot("a histogram needs at least one bin".into()));
    }
    let top = series.iter().flat_map(|(_, c)| c.iter()).max().copied().unwrap_or(0).max(1) as f64;
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(edges[0]..edges[edges.len() - 1], 0.0..top * 1.05)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc("count")
        .draw()
        .map_err(draw_err)?;
    let k = series.len().max(1) as f64;
    for (i, (label, counts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let bars = edges.windows(2).zip(counts).map(move |(w, c)| {
            let width = (w[1] - w[0]) / k;
            let left = w[0] + width * i as f64;
            Rectangle::new([(left, 0.0), (left + width * 0.9, *c as f64)], color.filled())
        });
        chart
            .draw_series(bars)
            .map_err(draw_err)?
            .label(label.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_svg_files() {
        let dir = tempfile::tempdir().unwrap();
        let line = dir.path().join("line.svg");
        line_chart(
            &line,
            "loss",
            "iteration",
            "value",
            &[
                Series {
                    label: "policy".into(),
                    points: vec![(1.0, 3.0), (2.0, 2.5), (3.0, f64::NAN)],
                },
                Series {
                    label: "value".into(),
                    points: vec![(1.0, 1.0), (2.0, 0.9)],
                },
            ],
        )
        .unwrap();
        let text = std::fs::read_to_string(&line).unwrap();
        assert!(text.starts_with("<svg") && text.contains("policy"));

        let hist = dir.path().join("hist.svg");
        histogram(
            &hist,
            "regret",
            "regret",
            &[0.0, 1.0, 2.0],
            &[("first".into(), vec![3, 1]), ("final".into(), vec![1, 0])],
        )
        .unwrap();
        assert!(std::fs::read_to_string(&hist).unwrap().contains("<rect"));
        assert!(histogram(&hist, "x", "x", &[0.0], &[]).is_err());
    }
}
