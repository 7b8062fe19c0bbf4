//! Static SVG reward curves with a shaded ±std band per table.

use std::fmt::Write as _;

use crate::stats::CurveTable;

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("nothing to plot")]
    NoTables,
    #[error("curve table `{0}` has no rows")]
    EmptyTable(String),
}

#[derive(Debug, Clone)]
pub struct PlotStyle {
    pub width: f64,
    pub height: f64,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            width: 720.0,
            height: 440.0,
            title: String::new(),
            x_label: "environment steps".into(),
            y_label: "evaluation return".into(),
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 50.0;
const TICKS: usize = 5;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Widens a degenerate range so the axes stay finite.
fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = lo.abs().max(1.0) * 0.5;
        (lo - pad, hi + pad)
    }
}

pub fn render(tables: &[CurveTable], style: &PlotStyle) -> Result<String, PlotError> {
    if tables.is_empty() {
        return Err(PlotError::NoTables);
    }
    if let Some(t) = tables.iter().find(|t| t.is_empty()) {
        return Err(PlotError::EmptyTable(t.label.clone()));
    }
    let finite = |x: &f64| x.is_finite();
    let xs = tables
        .iter()
        .flat_map(|t| t.steps.iter().map(|&s| s as f64));
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
        (a.min(x), b.max(x))
    });
    let ys = tables.iter().flat_map(|t| {
        t.mean
            .iter()
            .zip(&t.std)
            .flat_map(|(m, s)| [m - s, m + s])
            .filter(finite)
    });
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| {
        (a.min(y), b.max(y))
    });
    let (y0, y1) = if y0.is_finite() {
        span(y0, y1)
    } else {
        (-1.0, 1.0)
    };
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { span(x0, x1) };

    let (w, h) = (style.width, style.height);
    let pw = w - MARGIN_L - MARGIN_R;
    let ph = h - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w:.0}" height="{h:.0}" fill="white"/>"#);
    if !style.title.is_empty() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            w / 2.0,
            escape(&style.title)
        );
    }
    // Axes, ticks and grid.
    let _ = writeln!(
        s,
        r#"<g stroke="black" fill="none"><line x1="{l:.2}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}"/><line x1="{l:.2}" y1="{t:.2}" x2="{l:.2}" y2="{b:.2}"/></g>"#,
        l = MARGIN_L,
        r = MARGIN_L + pw,
        t = MARGIN_T,
        b = MARGIN_T + ph
    );
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{b2:.2}" stroke="black"/><text x="{x:.2}" y="{ty:.2}" text-anchor="middle">{xv:.0}</text>"##,
            x = px(xv),
            b = MARGIN_T + ph,
            b2 = MARGIN_T + ph + 5.0,
            ty = MARGIN_T + ph + 18.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{l:.2}" y1="{y:.2}" x2="{r:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{tx:.2}" y="{ty:.2}" text-anchor="end">{yv:.1}</text>"##,
            l = MARGIN_L,
            r = MARGIN_L + pw,
            y = py(yv),
            tx = MARGIN_L - 6.0,
            ty = py(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_L + pw / 2.0,
        h - 10.0,
        escape(&style.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(&style.y_label)
    );

    for (k, t) in tables.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut band = String::new();
        for i in 0..t.len() {
            let _ = write!(
                band,
                "{:.2},{:.2} ",
                px(t.steps[i] as f64),
                py(t.mean[i] + t.std[i])
            );
        }
        for i in (0..t.len()).rev() {
            let _ = write!(
                band,
                "{:.2},{:.2} ",
                px(t.steps[i] as f64),
                py(t.mean[i] - t.std[i])
            );
        }
        let _ = writeln!(
            s,
            r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = (0..t.len())
            .map(|i| format!("{:.2},{:.2}", px(t.steps[i] as f64), py(t.mean[i])))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
    }

    // Legend, top right inside the plot area.
    let lx = MARGIN_L + pw - 170.0;
    for (k, t) in tables.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let ly = MARGIN_T + 12.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&t.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Renders and writes; nothing is written on error.
pub fn write_svg(
    path: &std::path::Path,
    tables: &[CurveTable],
    style: &PlotStyle,
) -> Result<(), crate::HarnessError> {
    let svg = render(tables, style)?;
    std::fs::write(path, svg).map_err(|e| crate::HarnessError::io(path, e))
}
