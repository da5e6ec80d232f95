use std::fmt::Write;

use super::curve::SlcResult;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

/// An SVG figure of both learning curves on a log-scaled size axis with
/// the gap between them shaded (green where transfer wins, red where it
/// loses).
pub fn slc_svg(result: &SlcResult, title: &str) -> String {
    let t = &result.curve_transfer.points;
    let s = &result.curve_scratch.points;
    let (lo, hi) = (
        (t.first().map_or(1, |p| p.n) as f64).log10(),
        (t.last().map_or(10, |p| p.n) as f64).log10(),
    );
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |n: usize| LEFT + ((n as f64).log10() - lo) / span * (W - LEFT - RIGHT);
    let py = |a: f64| TOP + (1.0 - a) * (H - TOP - BOTTOM);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{} (AUC = {:.3})</text>"#,
        W / 2.0,
        escape(title),
        result.auc
    );
    for i in 1..t.len().min(s.len()) {
        let gap = t[i - 1].mean_acc - s[i - 1].mean_acc + t[i].mean_acc - s[i].mean_acc;
        let color = if gap >= 0.0 { "#2ca02c" } else { "#d62728" };
        let _ = writeln!(
            svg,
            r#"<polygon points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1} {:.1},{:.1}" fill="{color}" fill-opacity="0.2"/>"#,
            px(t[i - 1].n),
            py(t[i - 1].mean_acc),
            px(t[i].n),
            py(t[i].mean_acc),
            px(s[i].n),
            py(s[i].mean_acc),
            px(s[i - 1].n),
            py(s[i - 1].mean_acc)
        );
    }
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, py(0.0), py(1.0));
    let _ = writeln!(
        svg,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let a = k as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{a:.1}</text>"#,
            x0 - 6.0,
            py(a) + 4.0
        );
    }
    for p in t {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            px(p.n),
            y0 + 18.0,
            p.n
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">target subset size (log scale)</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">test accuracy</text>"#,
        (TOP + y0) / 2.0,
        (TOP + y0) / 2.0
    );
    for (points, color, name, dy) in [(t, "#1f77b4", "transfer", 0.0), (s, "#ff7f0e", "scratch", 16.0)] {
        let path: Vec<String> = points
            .iter()
            .map(|p| format!("{:.1},{:.1}", px(p.n), py(p.mean_acc)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for p in points.iter() {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                px(p.n),
                py(p.mean_acc)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            x1 - 70.0,
            TOP + 12.0 + dy
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
