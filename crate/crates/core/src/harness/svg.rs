//! Minimal SVG line chart of long-horizon success across iterations.

use std::fmt::Write as _;

use super::experiment::MetricsReport;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn polyline(points: &[(f64, f64)], color: &str) -> String {
    let pts: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.1},{y:.1}"))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
        pts.join(" ")
    )
}

/// Orchestrated and product-baseline success rates against iteration.
pub fn render_svg(report: &MetricsReport) -> String {
    let n = report.long_horizon.len().max(2) as f64;
    let x = |i: f64| PAD + (i - 1.0) / (n - 1.0) * (W - 2.0 * PAD);
    let y = |r: f64| H - PAD - r * (H - 2.0 * PAD);
    let series = |f: &dyn Fn(&super::experiment::LongHorizon) -> f64| -> Vec<(f64, f64)> {
        report
            .long_horizon
            .iter()
            .map(|l| (x(l.iteration as f64), y(f(l))))
            .collect()
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>",
        H - PAD
    );
    for t in 0..=4 {
        let r = f64::from(t) * 0.25;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{r:.2}</text>",
            PAD - 6.0,
            y(r) + 4.0
        );
    }
    for l in &report.long_horizon {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            x(l.iteration as f64),
            H - PAD + 16.0,
            l.iteration
        );
    }
    s.push_str(&polyline(
        &series(&|l| l.orchestrated.success_rate),
        "#1f77b4",
    ));
    s.push_str(&polyline(
        &series(&|l| l.product_baseline.success_rate),
        "#d62728",
    ));
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"20\" font-size=\"12\" fill=\"#1f77b4\">orchestrated</text>",
        PAD
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"36\" font-size=\"12\" fill=\"#d62728\">product of subtask rates</text>",
        PAD
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">iteration</text>",
        W / 2.0,
        H - 8.0
    );
    s.push_str("</svg>\n");
    s
}
