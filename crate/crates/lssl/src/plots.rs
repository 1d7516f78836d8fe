//! Static figures: SVG charts through plotters and the traversal strip as a
//! PNG.

use std::path::Path;

use lssl_core::analysis::TrendFit;
use lssl_core::{Group, ImageVolume};
use plotters::prelude::*;

use crate::error::{CliError, Result};

const SIZE: (u32, u32) = (720, 480);
/// Pixels per voxel in the traversal strip.
pub const STRIP_SCALE: u32 = 4;
const STRIP_GAP: u32 = 4;

fn perr<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Plot(e.to_string())
}

fn group_color(group: Group) -> RGBColor {
    match group {
        Group::Control => RGBColor(31, 119, 180),
        Group::Diseased => RGBColor(214, 39, 40),
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
    (lo - pad, hi + pad)
}

fn extent(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
        .map(|(lo, hi)| padded(lo, hi))
}

/// Normalized brain age against chronological age, one color per group,
/// with each group's quadratic trend.
pub fn brain_age_scatter(path: &Path, points: &[(f64, f64, Group)], trends: &[(Group, TrendFit)]) -> Result<()> {
    let (x0, x1) = extent(points.iter().map(|p| p.0)).ok_or_else(|| CliError::Plot("no points".into()))?;
    let (y0, y1) = extent(points.iter().map(|p| p.1)).ok_or_else(|| CliError::Plot("no points".into()))?;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(perr)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Brain age", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(perr)?;
    chart
        .configure_mesh()
        .x_desc("age (years)")
        .y_desc("normalized brain age")
        .draw()
        .map_err(perr)?;
    for group in [Group::Control, Group::Diseased] {
        let color = group_color(group);
        let pts: Vec<_> = points.iter().filter(|p| p.2 == group).collect();
        if pts.is_empty() {
            continue;
        }
        chart
            .draw_series(pts.iter().map(|p| Circle::new((p.0, p.1), 2, color.mix(0.5).filled())))
            .map_err(perr)?
            .label(group.as_str())
            .legend(move |(x, y)| Circle::new((x, y), 4, color.filled()));
    }
    for (group, fit) in trends {
        let color = group_color(*group);
        let curve: Vec<_> = (0..=100)
            .map(|i| {
                let a = x0 + (x1 - x0) * i as f64 / 100.0;
                (a, fit.eval(a))
            })
            .filter(|(_, y)| *y >= y0 && *y <= y1)
            .collect();
        chart
            .draw_series(LineSeries::new(curve, color.stroke_width(2)))
            .map_err(perr)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(perr)?;
    root.present().map_err(perr)
}

/// Quartiles by linear interpolation between order statistics.
pub fn five_numbers(values: &[f64]) -> Option<[f64; 5]> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    Some([v[0], q(0.25), q(0.5), q(0.75), v[v.len() - 1]])
}

/// One box per group: quartile box, median bar and min/max whiskers.
pub fn slope_boxplot(path: &Path, groups: &[(Group, Vec<f64>)]) -> Result<()> {
    let stats: Vec<(Group, [f64; 5])> = groups
        .iter()
        .filter_map(|(g, v)| five_numbers(v).map(|s| (*g, s)))
        .collect();
    let (y0, y1) = extent(stats.iter().flat_map(|(_, s)| [s[0], s[4]])).ok_or_else(|| CliError::Plot("no slopes".into()))?;
    let n = stats.len();
    let names: Vec<&'static str> = stats.iter().map(|(g, _)| g.as_str()).collect();
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(perr)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Brain-age slope per subject", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(-0.6..(n as f64 - 0.4), y0..y1)
        .map_err(perr)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n.max(1))
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < names.len() {
                names[i as usize].to_string()
            } else {
                String::new()
            }
        })
        .y_desc("slope (per year)")
        .draw()
        .map_err(perr)?;
    for (i, (group, s)) in stats.iter().enumerate() {
        let x = i as f64;
        let color = group_color(*group);
        chart
            .draw_series([Rectangle::new([(x - 0.25, s[1]), (x + 0.25, s[3])], color.mix(0.3).filled())])
            .map_err(perr)?;
        chart
            .draw_series([Rectangle::new([(x - 0.25, s[1]), (x + 0.25, s[3])], color.stroke_width(2))])
            .map_err(perr)?;
        let segments = [
            vec![(x - 0.25, s[2]), (x + 0.25, s[2])],
            vec![(x, s[0]), (x, s[1])],
            vec![(x, s[3]), (x, s[4])],
            vec![(x - 0.1, s[0]), (x + 0.1, s[0])],
            vec![(x - 0.1, s[4]), (x + 0.1, s[4])],
        ];
        chart
            .draw_series(segments.into_iter().map(|p| PathElement::new(p, color.stroke_width(2))))
            .map_err(perr)?;
    }
    root.present().map_err(perr)
}

/// Middle slice of a volume, or the image itself, as (rows, cols, values).
fn display_slice(image: &ImageVolume) -> Result<(usize, usize, &[f64])> {
    let d = image.dims();
    match d.len() {
        2 => Ok((d[0], d[1], image.data())),
        3 => {
            let plane = d[1] * d[2];
            let k = d[0] / 2;
            Ok((d[1], d[2], &image.data()[k * plane..(k + 1) * plane]))
        }
        n => Err(CliError::Plot(format!("cannot display a rank-{n} tensor"))),
    }
}

/// Panels side by side, intensities clamped to [0, 1].
pub fn traversal_strip(path: &Path, images: &[ImageVolume]) -> Result<()> {
    if images.is_empty() {
        return Err(CliError::Plot("no traversal images".into()));
    }
    let slices = images.iter().map(display_slice).collect::<Result<Vec<_>>>()?;
    let rows = slices.iter().map(|s| s.0).max().unwrap_or(0) as u32;
    let cols = slices[0].1 as u32;
    if slices.iter().any(|s| s.1 as u32 != cols) {
        return Err(CliError::Plot("traversal panels differ in width".into()));
    }
    let panel = cols * STRIP_SCALE;
    let n = slices.len() as u32;
    let mut img = image::GrayImage::from_pixel(n * panel + (n - 1) * STRIP_GAP, rows * STRIP_SCALE, image::Luma([255]));
    for (p, (r, c, data)) in slices.iter().enumerate() {
        let x0 = p as u32 * (panel + STRIP_GAP);
        for y in 0..r * STRIP_SCALE as usize {
            for x in 0..c * STRIP_SCALE as usize {
                let v = data[(y / STRIP_SCALE as usize) * c + x / STRIP_SCALE as usize];
                let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel(x0 + x as u32, y as u32, image::Luma([g]));
            }
        }
    }
    img.save(path).map_err(perr)
}

/// Held-out accuracy against epoch, one line per method.
pub fn convergence(path: &Path, title: &str, series: &[(String, Vec<f64>)]) -> Result<()> {
    let epochs = series.iter().map(|s| s.1.len()).max().unwrap_or(0);
    if epochs == 0 {
        return Err(CliError::Plot(format!("{title}: no curves")));
    }
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(perr)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(1f64..epochs.max(2) as f64, 0f64..1f64)
        .map_err(perr)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("held-out accuracy")
        .draw()
        .map_err(perr)?;
    for (i, (name, curve)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                curve.iter().enumerate().map(|(e, a)| ((e + 1) as f64, *a)),
                color.stroke_width(2),
            ))
            .map_err(perr)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(perr)?;
    root.present().map_err(perr)
}
