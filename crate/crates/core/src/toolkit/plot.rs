//! Static SVG plot of projected latent trajectories.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use super::commands::PcaPoint;

/// One polyline per motion, colored by embodiment.
pub fn trajectory_svg(path: &Path, points: &[PcaPoint]) -> Result<(), String> {
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        x0 = x0.min(p.pc1);
        x1 = x1.max(p.pc1);
        y0 = y0.min(p.pc2);
        y1 = y1.max(p.pc2);
    }
    if points.is_empty() {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let m = ((hi - lo) * 0.05).max(1e-6);
        (lo - m)..(hi + m)
    };

    let root = SVGBackend::new(path, (800, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(pad(x0, x1), pad(y0, y1))
        .map_err(|e| err(&e))?;
    chart.configure_mesh().draw().map_err(|e| err(&e))?;

    let mut tracks: BTreeMap<(&str, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for p in points {
        tracks.entry((p.embodiment.as_str(), p.motion)).or_default().push((p.pc1, p.pc2));
    }
    let mut colors: BTreeMap<&str, usize> = BTreeMap::new();
    for (emb, _) in tracks.keys() {
        let n = colors.len();
        colors.entry(emb).or_insert(n);
    }
    for ((emb, _), pts) in &tracks {
        let color = Palette99::pick(colors[emb]);
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(1)))
            .map_err(|e| err(&e))?;
    }
    root.present().map_err(|e| err(&e))
}
