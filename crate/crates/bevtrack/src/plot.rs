//! SVG rendering of ground-plane trajectories.
//!
//! Points are written in world meters inside a group whose transform maps
//! them to the canvas, so a reader can recover trajectories from the
//! `points` attributes directly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use bevtrack_core::metrics::GtTrajectory;
use bevtrack_core::tracker::TrackRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotOptions {
    pub width: u32,
    pub height: u32,
    /// Canvas margin, pixels.
    pub margin: f64,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            width: 1200,
            height: 500,
            margin: 20.0,
        }
    }
}

/// Color of a track id: golden-angle hue steps keep neighbouring ids apart.
pub fn track_color(id: u64) -> String {
    let hue = (id as f64 * 137.507_764_050_037_85) % 360.0;
    format!("hsl({hue:.1},70%,42%)")
}

/// Polylines grouped by id, frames in order.
fn polylines(points: impl Iterator<Item = (u64, i64, f64, f64)>) -> BTreeMap<u64, Vec<(i64, f64, f64)>> {
    let mut lines: BTreeMap<u64, Vec<(i64, f64, f64)>> = BTreeMap::new();
    for (id, f, x, y) in points {
        lines.entry(id).or_default().push((f, x, y));
    }
    for l in lines.values_mut() {
        l.sort_by_key(|p| p.0);
    }
    lines
}

fn points_attr(line: &[(i64, f64, f64)]) -> String {
    let mut s = String::new();
    for (i, (_, x, y)) in line.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{x:.3},{y:.3}").expect("writing to a String");
    }
    s
}

/// One polyline per track id; ground truth, when given, is drawn underneath
/// as dashed gray lines.
pub fn render_svg(tracks: &[TrackRecord], gt: Option<&[GtTrajectory]>, opts: &PlotOptions) -> String {
    let track_lines = polylines(tracks.iter().map(|r| (r.track_id, r.frame, r.x, r.y)));
    let gt_lines = polylines(
        gt.unwrap_or_default()
            .iter()
            .flat_map(|t| t.samples.iter().map(move |&(f, x, y)| (t.identity, f, x, y))),
    );

    let all = track_lines.values().chain(gt_lines.values()).flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(_, x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    // World y runs along the canvas width, world x down its height.
    let (w, h) = (f64::from(opts.width), f64::from(opts.height));
    let span_y = (y1 - y0).max(1e-6);
    let span_x = (x1 - x0).max(1e-6);
    let scale = ((w - 2.0 * opts.margin) / span_y).min((h - 2.0 * opts.margin) / span_x);

    let mut svg = String::new();
    let mut line = |s: String| {
        svg.push_str(&s);
        svg.push('\n');
    };
    line(format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        opts.width, opts.height, opts.width, opts.height
    ));
    line(format!(r#"<rect width="{}" height="{}" fill="white"/>"#, opts.width, opts.height));
    line(format!(
        r#"<g id="world" transform="translate({:.3} {:.3}) matrix(0 {scale:.6} {scale:.6} 0 0 0) translate({:.3} {:.3})">"#,
        opts.margin, opts.margin, -x0, -y0
    ));
    for (id, l) in &gt_lines {
        line(format!(
            r##"<polyline class="gt" data-id="{id}" points="{}" fill="none" stroke="#888888" stroke-width="2" stroke-dasharray="6 4" vector-effect="non-scaling-stroke"/>"##,
            points_attr(l)
        ));
    }
    for (id, l) in &track_lines {
        line(format!(
            r#"<polyline class="track" data-id="{id}" points="{}" fill="none" stroke="{}" stroke-width="2" vector-effect="non-scaling-stroke"/>"#,
            points_attr(l),
            track_color(*id)
        ));
    }
    line("</g>".to_owned());
    line("</svg>".to_owned());
    svg
}
