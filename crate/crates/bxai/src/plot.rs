//! Hand-written SVG figures. Coordinates are printed with fixed precision
//! so identical inputs give identical files.

use std::fmt::Write as _;

use bxai_core::dsp::{EnvelopeSpectrum, SubBands};
use bxai_core::eval::{Method, RemovalResult};

const PANEL_W: f64 = 820.0;
const PANEL_H: f64 = 130.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const TITLE_H: f64 = 22.0;
const AXIS_H: f64 = 26.0;

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Svg {
            body: String::new(),
            width,
            height,
        }
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, style: &str) {
        writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" {style}/>"#
        )
        .unwrap();
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, style: &str) {
        writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" {style}/>"#
        )
        .unwrap();
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, size: f64, s: &str) {
        writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-family="sans-serif" font-size="{size:.0}">{}</text>"#,
            escape(s)
        )
        .unwrap();
    }

    fn polyline(&mut self, pts: &[(f64, f64)], style: &str) {
        let mut d = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            if i > 0 {
                d.push(' ');
            }
            write!(d, "{x:.1},{y:.1}").unwrap();
        }
        writeln!(self.body, r#"<polyline points="{d}" fill="none" {style}/>"#).unwrap();
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Fill color for an importance value scaled to `[-1, 1]`: red for
/// positive, blue for negative, opacity by magnitude.
fn heat(v: f64) -> String {
    let a = v.abs().min(1.0) * 0.6;
    if v >= 0.0 {
        format!(r#"fill="rgb(214,39,40)" fill-opacity="{a:.3}""#)
    } else {
        format!(r#"fill="rgb(31,119,180)" fill-opacity="{a:.3}""#)
    }
}

/// A spectrum together with its importance vector over the same bins.
#[derive(Debug, Clone)]
pub struct ExplainPanel<'a> {
    pub title: String,
    pub spectrum: &'a EnvelopeSpectrum,
    pub importance: &'a [f32],
}

/// Stacked panels: each spectrum drawn over a heat strip of its Grad-CAM
/// importance, with the sub-bands shaded green and dashed lines at the
/// first three fault-order harmonics.
pub fn explain_svg(panels: &[ExplainPanel<'_>], bands: Option<&SubBands>, clamp: bool) -> String {
    let height = panels.len() as f64 * (PANEL_H + TITLE_H) + AXIS_H + 10.0;
    let mut svg = Svg::new(PANEL_W, height);
    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    for (p, panel) in panels.iter().enumerate() {
        let grid = panel.spectrum.grid;
        let top = p as f64 * (PANEL_H + TITLE_H) + TITLE_H;
        let x_of = |order: f64| MARGIN_L + (order - grid.order_min) / (grid.order_max - grid.order_min) * plot_w;
        svg.text(MARGIN_L, top - 6.0, "start", 13.0, &panel.title);

        let n = panel.importance.len();
        let group = if n % 8 == 0 { 8 } else { 1 };
        let scale = panel
            .importance
            .iter()
            .map(|&v| if clamp { v.max(0.0) } else { v.abs() } as f64)
            .fold(0.0, f64::max);
        for c in 0..n / group {
            let vals = &panel.importance[c * group..(c + 1) * group];
            let mut v = vals.iter().map(|&x| x as f64).sum::<f64>() / group as f64;
            if clamp {
                v = v.max(0.0);
            }
            let v = if scale > 0.0 { v / scale } else { 0.0 };
            let x0 = x_of(grid.order_min + (c * group) as f64 * grid.bin_width());
            let x1 = x_of(grid.order_min + ((c + 1) * group) as f64 * grid.bin_width());
            svg.rect(x0, top, x1 - x0, PANEL_H, &heat(v));
        }
        if let Some(sb) = bands {
            for b in &sb.bands {
                let (x0, x1) = (x_of(b.lo), x_of(b.hi));
                svg.rect(x0, top, x1 - x0, PANEL_H, r#"fill="rgb(44,160,44)" fill-opacity="0.25""#);
            }
            for h in 1..=3 {
                let x = x_of(h as f64 * sb.center);
                svg.line(x, top, x, top + PANEL_H, r#"stroke="rgb(44,160,44)" stroke-dasharray="4,3""#);
            }
        }
        let amps = &panel.spectrum.amplitudes;
        let peak = amps.iter().map(|&a| a as f64).fold(0.0, f64::max);
        let pts: Vec<(f64, f64)> = amps
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let y = if peak > 0.0 { a as f64 / peak } else { 0.0 };
                (x_of(grid.center(i)), top + PANEL_H - y * (PANEL_H - 6.0))
            })
            .collect();
        svg.polyline(&pts, r#"stroke="black" stroke-width="0.8""#);
        svg.rect(MARGIN_L, top, plot_w, PANEL_H, r#"fill="none" stroke="black""#);
        svg.text(MARGIN_L - 6.0, top + 10.0, "end", 10.0, &format!("{peak:.3}"));
        svg.text(MARGIN_L - 6.0, top + PANEL_H, "end", 10.0, "0");
    }
    if let Some(first) = panels.first() {
        let grid = first.spectrum.grid;
        let base = panels.len() as f64 * (PANEL_H + TITLE_H);
        let span = grid.order_max - grid.order_min;
        for t in 0..=6 {
            let order = grid.order_min + span * t as f64 / 6.0;
            let x = MARGIN_L + plot_w * t as f64 / 6.0;
            svg.line(x, base, x, base + 4.0, r#"stroke="black""#);
            svg.text(x, base + 16.0, "middle", 11.0, &format!("{order:.0}"));
        }
        svg.text(PANEL_W - MARGIN_R, base + 16.0, "end", 11.0, "order");
    }
    svg.finish()
}

fn method_color(m: Option<Method>) -> &'static str {
    match m {
        None => "rgb(90,90,90)",
        Some(Method::Random) => "rgb(31,119,180)",
        Some(Method::CamFull) => "rgb(255,127,14)",
        Some(Method::CamSub) => "rgb(44,160,44)",
    }
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(1e-3);
    (lo - pad, hi + pad)
}

/// Test accuracy (left) and loss (right) against the removed fraction, mean
/// with standard-deviation error bars; series are offset horizontally so
/// their bars do not overlap. The baseline is a dashed line.
pub fn removal_svg(results: &[RemovalResult]) -> String {
    let (w, h) = (980.0, 380.0);
    let mut svg = Svg::new(w, h);
    let baseline = results.iter().find(|r| r.method.is_none());
    let series: Vec<Option<Method>> = {
        let mut m: Vec<Option<Method>> = results.iter().filter(|r| r.method.is_some()).map(|r| r.method).collect();
        m.dedup();
        m
    };
    let fractions: Vec<f64> = results.iter().filter(|r| r.method.is_some()).map(|r| r.fraction).collect();
    let (f_lo, f_hi) = fractions
        .iter()
        .fold((0.0f64, f64::NEG_INFINITY), |(lo, hi), &f| (lo.min(f), hi.max(f)));
    let f_hi = if f_hi > f_lo { f_hi } else { f_lo + 1.0 };
    let offset = (f_hi - f_lo) * 0.012;

    for (panel, (label, pick)) in [
        ("test accuracy", (|r: &RemovalResult| (r.mean_accuracy, r.std_accuracy)) as fn(&RemovalResult) -> (f64, f64)),
        ("test loss", |r: &RemovalResult| (r.mean_loss, r.std_loss)),
    ]
    .into_iter()
    .enumerate()
    {
        let left = 70.0 + panel as f64 * (w / 2.0);
        let (pw, top, ph) = (w / 2.0 - 100.0, 40.0, h - 100.0);
        let finite: Vec<(f64, f64)> = results
            .iter()
            .map(pick)
            .filter(|(m, s)| m.is_finite() && s.is_finite())
            .collect();
        let lo = finite.iter().map(|(m, s)| m - s).fold(f64::INFINITY, f64::min);
        let hi = finite.iter().map(|(m, s)| m + s).fold(f64::NEG_INFINITY, f64::max);
        let (y_lo, y_hi) = nice_range(lo, hi);
        let x_of = |f: f64| left + (f - f_lo + offset * 2.0) / (f_hi - f_lo + offset * 4.0) * pw;
        let y_of = |v: f64| top + ph - (v - y_lo) / (y_hi - y_lo) * ph;

        svg.rect(left, top, pw, ph, r#"fill="none" stroke="black""#);
        svg.text(left + pw / 2.0, top - 12.0, "middle", 14.0, label);
        svg.text(left + pw / 2.0, top + ph + 36.0, "middle", 12.0, "fraction of training samples removed");
        for t in 0..=4 {
            let v = y_lo + (y_hi - y_lo) * t as f64 / 4.0;
            let y = y_of(v);
            svg.line(left - 4.0, y, left, y, r#"stroke="black""#);
            svg.text(left - 7.0, y + 4.0, "end", 11.0, &format!("{v:.3}"));
        }
        let mut ticks = fractions.clone();
        ticks.sort_by(f64::total_cmp);
        ticks.dedup();
        for f in ticks {
            let x = x_of(f);
            svg.line(x, top + ph, x, top + ph + 4.0, r#"stroke="black""#);
            svg.text(x, top + ph + 17.0, "middle", 11.0, &format!("{f:.2}"));
        }
        if let Some(b) = baseline {
            let (m, _) = pick(b);
            if m.is_finite() {
                let y = y_of(m);
                svg.line(left, y, left + pw, y, r#"stroke="rgb(90,90,90)" stroke-dasharray="6,4""#);
            }
        }
        for (s, &method) in series.iter().enumerate() {
            let dx = (s as f64 - (series.len() as f64 - 1.0) / 2.0) * offset;
            let color = method_color(method);
            let pts: Vec<(f64, f64, f64)> = results
                .iter()
                .filter(|r| r.method == method)
                .map(|r| {
                    let (m, sd) = pick(r);
                    (r.fraction + dx, m, sd)
                })
                .filter(|(_, m, _)| m.is_finite())
                .collect();
            let line: Vec<(f64, f64)> = pts.iter().map(|&(f, m, _)| (x_of(f), y_of(m))).collect();
            svg.polyline(&line, &format!(r#"stroke="{color}" stroke-width="1.5""#));
            for &(f, m, sd) in &pts {
                let x = x_of(f);
                let sd = if sd.is_finite() { sd } else { 0.0 };
                svg.line(x, y_of(m - sd), x, y_of(m + sd), &format!(r#"stroke="{color}""#));
                svg.line(x - 3.0, y_of(m - sd), x + 3.0, y_of(m - sd), &format!(r#"stroke="{color}""#));
                svg.line(x - 3.0, y_of(m + sd), x + 3.0, y_of(m + sd), &format!(r#"stroke="{color}""#));
                svg.rect(x - 2.5, y_of(m) - 2.5, 5.0, 5.0, &format!(r#"fill="{color}""#));
            }
        }
    }
    let mut lx = 70.0;
    let mut entries: Vec<(Option<Method>, &str)> = series.iter().map(|&m| (m, m.map_or("baseline", |m| m.name()))).collect();
    if baseline.is_some() {
        entries.push((None, "baseline (no removal)"));
    }
    for (m, name) in entries {
        svg.rect(lx, h - 22.0, 12.0, 12.0, &format!(r#"fill="{}""#, method_color(m)));
        svg.text(lx + 16.0, h - 12.0, "start", 12.0, name);
        lx += 40.0 + 7.0 * name.len() as f64;
    }
    svg.finish()
}
