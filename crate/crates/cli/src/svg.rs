//! Hand-written SVG: scatter plots with trajectory overlays and log-log
//! profile charts. Fixed 800x800 canvas.

use std::fmt::Write;

use disco::analysis::LogBins;
use disco::datagen::Point;

pub const SIZE: f64 = 800.0;
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const GRAY: &str = "#555555";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace("--", "- -")
}

fn header(out: &mut String, comment: &str) {
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    );
    let _ = writeln!(out, "<!--\n{}\n-->", escape(comment));
    let _ = writeln!(out, "<rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\"/>");
}

/// Scatter of `points` in `[-extent, extent]^2`, coloured by `colors[i]`
/// (`None` draws gray), with dotted `paths` on top.
pub fn scatter(points: &[Point], colors: &[Option<usize>], paths: &[(Vec<Point>, Option<usize>)], extent: f64, comment: &str) -> String {
    let map = |p: Point| ((p[0] + extent) / (2.0 * extent) * SIZE, (extent - p[1]) / (2.0 * extent) * SIZE);
    let color = |c: Option<usize>| c.map_or(GRAY, |c| PALETTE[c % PALETTE.len()]);
    let mut out = String::new();
    header(&mut out, comment);
    out.push_str("<g id=\"samples\" fill-opacity=\"0.6\">\n");
    for (p, c) in points.iter().zip(colors) {
        let (x, y) = map(*p);
        let _ = writeln!(out, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.6\" fill=\"{}\"/>", color(*c));
    }
    out.push_str("</g>\n<g id=\"trajectories\" fill=\"none\" stroke-width=\"1\" stroke-dasharray=\"2,3\">\n");
    for (path, c) in paths {
        let pts: Vec<String> = path
            .iter()
            .map(|&p| {
                let (x, y) = map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(out, "<polyline points=\"{}\" stroke=\"{}\"/>", pts.join(" "), color(*c));
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Log-log chart of one value per bin for each named series.
pub fn profile(title: &str, bins: &LogBins, series: &[(&str, &[Option<f64>])], comment: &str) -> String {
    let margin = 70.0;
    let inner = SIZE - 2.0 * margin;
    let centers = bins.centers();
    let values: Vec<f64> = series
        .iter()
        .flat_map(|(_, v)| v.iter().flatten().copied())
        .filter(|v| *v > 0.0 && v.is_finite())
        .collect();
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.1, 10.0);
    }
    if hi <= lo * 1.0001 {
        (lo, hi) = (lo / 2.0, hi * 2.0);
    }
    let (xl, xh) = (bins.edges[0].log10(), bins.edges[bins.len()].log10());
    let (yl, yh) = (lo.log10(), hi.log10());
    let px = |t: f64| margin + (t.log10() - xl) / (xh - xl) * inner;
    let py = |v: f64| margin + (yh - v.log10()) / (yh - yl) * inner;

    let mut out = String::new();
    header(&mut out, comment);
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"40\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"20\">{}</text>",
        SIZE / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        "<rect x=\"{margin}\" y=\"{margin}\" width=\"{inner}\" height=\"{inner}\" fill=\"none\" stroke=\"black\"/>"
    );
    for e in (xl.floor() as i32)..=(xh.ceil() as i32) {
        let t = 10f64.powi(e);
        if t < bins.edges[0] || t > bins.edges[bins.len()] {
            continue;
        }
        let x = px(t);
        let _ = writeln!(
            out,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">1e{e}</text>",
            SIZE - margin + 22.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">t</text>",
        SIZE / 2.0,
        SIZE - 15.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{margin}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n<text x=\"{margin}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        margin - 8.0,
        format_args!("{hi:.3e}"),
        SIZE - margin + 40.0,
        format_args!("min {lo:.3e}")
    );
    for (i, (name, vals)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = centers
            .iter()
            .zip(vals.iter())
            .filter_map(|(&t, v)| v.filter(|v| *v > 0.0).map(|v| format!("{:.2},{:.2}", px(t), py(v))))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\" font-family=\"sans-serif\" font-size=\"16\">{}</text>",
            margin + 10.0,
            margin + 22.0 * (i + 1) as f64,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
