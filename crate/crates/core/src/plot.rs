//! Log-log error plots written as plain SVG.

use std::fmt::Write as _;

use crate::analysis::{McLevel, RateEstimate};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, tau: f64) -> f64 {
        LEFT + (tau.log10() - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v.log10() - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn decades(lo: f64, hi: f64) -> (f64, f64) {
    let (a, b) = (lo.log10().floor(), hi.log10().ceil());
    if a == b {
        (a, a + 1.0)
    } else {
        (a, b)
    }
}

fn polyline(out: &mut String, frame: &Frame, pts: &[(f64, f64)], style: &str) {
    let pts: Vec<String> = pts
        .iter()
        .filter(|(t, v)| *t > 0.0 && *v > 0.0 && v.is_finite())
        .map(|&(t, v)| format!("{:.2},{:.2}", frame.x(t), frame.y(v)))
        .collect();
    if pts.len() >= 2 {
        let _ = writeln!(out, r#"<polyline fill="none" {style} points="{}"/>"#, pts.join(" "));
    }
}

/// Per-replicate curves (light gray), the mean (red), mean ± std (dashed)
/// and the regression line (blue) with its `c·τ^{a±σ}` label.
pub fn render(p: f64, levels: &[McLevel], estimate: Option<&RateEstimate>, fit_taus: &[f64]) -> String {
    let shown: Vec<&McLevel> = levels.iter().filter(|l| l.tau > 0.0).collect();
    let positive = shown
        .iter()
        .flat_map(|l| l.values.iter().copied().chain([l.mean + l.std]))
        .filter(|v| *v > 0.0 && v.is_finite());
    let (vmin, vmax) = positive.fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let (vmin, vmax) = if vmax > 0.0 { (vmin, vmax) } else { (1e-3, 1.0) };
    let (tmin, tmax) = shown
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), l| (a.min(l.tau), b.max(l.tau)));
    let (tmin, tmax) = if tmax > 0.0 { (tmin, tmax) } else { (0.1, 1.0) };
    let (x0, x1) = decades(tmin, tmax);
    let (y0, y1) = decades(vmin, vmax);
    let frame = Frame { x0, x1, y0, y1 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (px0, px1, py0, py1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<rect x="{px0}" y="{py0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        px1 - px0,
        py1 - py0
    );
    for k in x0 as i32..=x1 as i32 {
        let x = frame.x(10f64.powi(k));
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{py1}" x2="{x:.2}" y2="{}" stroke="black"/>"#, py1 + 6.0);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{py0}" x2="{x:.2}" y2="{py1}" stroke="#e0e0e0"/>"##);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">10<tspan baseline-shift="super" font-size="9">{k}</tspan></text>"#,
            py1 + 20.0
        );
    }
    for k in y0 as i32..=y1 as i32 {
        let y = frame.y(10f64.powi(k));
        let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{px0}" y2="{y:.2}" stroke="black"/>"#, px0 - 6.0);
        let _ = writeln!(s, r##"<line x1="{px0}" y1="{y:.2}" x2="{px1}" y2="{y:.2}" stroke="#e0e0e0"/>"##);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">10<tspan baseline-shift="super" font-size="9">{k}</tspan></text>"#,
            px0 - 10.0,
            y + 4.0
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">τ</text>"#, (px0 + px1) / 2.0, HEIGHT - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">Ẽ(τ)</text>"#,
        (py0 + py1) / 2.0,
        (py0 + py1) / 2.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">p = {p}</text>"#, (px0 + px1) / 2.0);

    let replicates = shown.iter().map(|l| l.values.len()).max().unwrap_or(0);
    for r in 0..replicates {
        let pts: Vec<(f64, f64)> = shown
            .iter()
            .filter_map(|l| l.values.get(r).map(|&v| (l.tau, v)))
            .collect();
        polyline(&mut s, &frame, &pts, r##"stroke="#b0b0b0" stroke-width="0.8""##);
    }
    let band = |sign: f64| -> Vec<(f64, f64)> { shown.iter().map(|l| (l.tau, l.mean + sign * l.std)).collect() };
    let dashed = r##"stroke="#d62728" stroke-width="1.2" stroke-dasharray="5,4""##;
    polyline(&mut s, &frame, &band(1.0), dashed);
    polyline(&mut s, &frame, &band(-1.0), dashed);
    let mean: Vec<(f64, f64)> = shown.iter().map(|l| (l.tau, l.mean)).collect();
    polyline(&mut s, &frame, &mean, r##"stroke="#d62728" stroke-width="2.2""##);

    if let Some(e) = estimate {
        let lo = fit_taus.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = fit_taus.iter().copied().fold(0.0, f64::max);
        let c = e.log_c_mean_curve.exp();
        let line = [(lo, c * lo.powf(e.a_mean_curve)), (hi, c * hi.powf(e.a_mean_curve))];
        polyline(&mut s, &frame, &line, r##"stroke="#1f77b4" stroke-width="1.6""##);
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" fill="#1f77b4">{:.3}·τ<tspan baseline-shift="super" font-size="9">{:.2}±{:.2}</tspan></text>"##,
            px0 + 12.0,
            py0 + 20.0,
            c,
            e.a_biased,
            e.slope_std
        );
        let corrected = match &e.correction {
            Some(c) => format!("corrected a = {:.3}, α = {:.3}", c.a, c.alpha),
            None => "no bias-corrected rate".to_string(),
        };
        let _ = writeln!(s, r#"<text x="{}" y="{}">{corrected}</text>"#, px0 + 12.0, py0 + 38.0);
    }
    s.push_str("</svg>\n");
    s
}
