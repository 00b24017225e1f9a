//! Hand-emitted SVG line charts: axes, ticks, polylines, error bars, legend.
//! No plotting dependency; output is a deterministic function of the data.

use std::fmt::Write;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Symmetric error bar half-length per point.
    pub err: Option<Vec<f64>>,
}

const PALETTE: [&str; 8] =
    ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

const W: f64 = 800.0;
const H: f64 = 500.0;
const ML: f64 = 70.0;
const MR: f64 = 160.0;
const MT: f64 = 40.0;
const MB: f64 = 60.0;

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi - lo).is_finite() || hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|s| s * mag)
        .find(|&s| (hi - lo) / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() * step;
    let mut t = Vec::new();
    let mut v = start;
    while v <= hi + 1e-9 * step {
        t.push(v);
        v += step;
    }
    t
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.01 {
        format!("{v:.1e}")
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.3}")
    }
}

/// Renders series as polylines over labeled axes. `log_x` spaces the x axis
/// logarithmically (learning curves over sample sizes).
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_x: bool) -> String {
    let xs = |x: f64| if log_x { x.max(1e-12).log10() } else { x };
    let all: Vec<(f64, f64, f64)> = series
        .iter()
        .flat_map(|s| {
            let errs = s.err.clone().unwrap_or_else(|| vec![0.0; s.points.len()]);
            s.points.iter().zip(errs).map(|(&(x, y), e)| (xs(x), y - e, y + e)).collect::<Vec<_>>()
        })
        .collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, ylo, yhi) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(ylo);
        y1 = y1.max(yhi);
    }
    if !x0.is_finite() {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;

    let pw = W - ML - MR;
    let ph = H - MT - MB;
    let px = |x: f64| ML + (xs(x) - x0) / (x1 - x0) * pw;
    let py = |y: f64| MT + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        ML + pw / 2.0
    );

    // axes
    let _ = writeln!(
        s,
        r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{:.1}" stroke="black"/>"#,
        MT + ph
    );
    let _ = writeln!(
        s,
        r#"<line x1="{ML}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        MT + ph,
        ML + pw,
        MT + ph
    );

    // x ticks: at data x values when few, else nice ticks in transformed space
    let data_x: Vec<f64> = {
        let mut v: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let tick_xs: Vec<f64> = if data_x.len() <= 12 {
        data_x
    } else {
        nice_ticks(x0, x1).into_iter().map(|t| if log_x { 10f64.powf(t) } else { t }).collect()
    };
    for tx in tick_xs {
        let x = px(tx);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
            MT + ph,
            MT + ph + 6.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            MT + ph + 20.0,
            fmt_num(tx)
        );
    }
    for ty in nice_ticks(y0, y1) {
        let y = py(ty);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{ML}" y2="{y:.1}" stroke="black"/>"#,
            ML - 6.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{ML}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"#,
            ML + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            ML - 10.0,
            y + 4.0,
            fmt_num(ty)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{xlabel}</text>"#,
        ML + pw / 2.0,
        H - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">{ylabel}</text>"#,
        MT + ph / 2.0,
        MT + ph / 2.0
    );

    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(errs) = &ser.err {
            for (&(x, y), &e) in ser.points.iter().zip(errs) {
                if e > 0.0 {
                    let (xx, ylo, yhi) = (px(x), py(y - e), py(y + e));
                    let _ = writeln!(
                        s,
                        r#"<line x1="{xx:.1}" y1="{ylo:.1}" x2="{xx:.1}" y2="{yhi:.1}" stroke="{color}" stroke-width="1"/>"#
                    );
                    let _ = writeln!(
                        s,
                        r#"<line x1="{:.1}" y1="{ylo:.1}" x2="{:.1}" y2="{ylo:.1}" stroke="{color}"/>"#,
                        xx - 3.0,
                        xx + 3.0
                    );
                    let _ = writeln!(
                        s,
                        r#"<line x1="{:.1}" y1="{yhi:.1}" x2="{:.1}" y2="{yhi:.1}" stroke="{color}"/>"#,
                        xx - 3.0,
                        xx + 3.0
                    );
                }
            }
        }
        let pts: String = ser
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            s,
            r#"<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>"#
        );
        for &(x, y) in &ser.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(x),
                py(y)
            );
        }
        // legend
        let ly = MT + 14.0 + i as f64 * 20.0;
        let lx = ML + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            ser.label
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Histogram rendered as stepped count polylines, one series per group.
pub fn histogram(title: &str, xlabel: &str, values: &[(String, Vec<f64>)], bins: usize) -> String {
    let all: Vec<f64> = values.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-9);
    let width = (hi - lo) / bins as f64;
    let series: Vec<Series> = values
        .iter()
        .map(|(label, vals)| {
            let mut counts = vec![0usize; bins];
            for &v in vals {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            let points = counts
                .iter()
                .enumerate()
                .map(|(b, &c)| (lo + (b as f64 + 0.5) * width, c as f64))
                .collect();
            Series { label: label.clone(), points, err: None }
        })
        .collect();
    line_chart(title, xlabel, "count", &series, false)
}
