use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::metrics::{read_metrics, MetricsRow};
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

/// One curve: mean over runs with the min–max range.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub runs: usize,
}

/// Group label of a metrics path: the parent directory name (or the file
/// stem) with any `_seed<k>` suffix removed.
pub fn group_label(path: &Path) -> String {
    let base = match path.file_name().and_then(|f| f.to_str()) {
        Some("metrics.csv") => path.parent().and_then(|p| p.file_name()).and_then(|f| f.to_str()),
        _ => path.file_stem().and_then(|f| f.to_str()),
    }
    .unwrap_or("run")
    .to_string();
    match base.rfind("_seed") {
        Some(i) if base[i + 5..].chars().all(|c| c.is_ascii_digit()) && i + 5 < base.len() => base[..i].to_string(),
        _ => base,
    }
}

/// Aggregates `column` across the runs of one group by environment step.
/// Non-finite values are skipped.
pub fn band(label: &str, runs: &[Vec<MetricsRow>], column: &str) -> Band {
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for rows in runs {
        for r in rows {
            if let Some(v) = r.column(column).filter(|v| v.is_finite()) {
                by_step.entry(r.env_step).or_default().push(v);
            }
        }
    }
    let mut b = Band { label: label.to_string(), x: Vec::new(), mean: Vec::new(), lo: Vec::new(), hi: Vec::new(), runs: runs.len() };
    for (step, vs) in by_step {
        b.x.push(step as f64);
        b.mean.push(vs.iter().sum::<f64>() / vs.len() as f64);
        b.lo.push(vs.iter().copied().fold(f64::INFINITY, f64::min));
        b.hi.push(vs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    b
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * span { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// A self-contained SVG line chart. Each band draws its mean as a line
/// and, when it aggregates more than one run, its range as a shaded area.
/// `dashed` selects bands drawn with a dashed stroke.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, bands: &[(Band, bool)]) -> String {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (b, _) in bands {
        for i in 0..b.x.len() {
            x0 = x0.min(b.x[i]);
            x1 = x1.max(b.x[i]);
            y0 = y0.min(b.lo[i]);
            y1 = y1.max(b.hi[i]);
        }
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, esc(title));
    let _ = writeln!(s, r##"<g stroke="#ccc" stroke-width="0.5">"##);
    for t in nice_ticks(x0, x1) {
        let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}"/>"#, sx(t), MARGIN, HEIGHT - MARGIN);
    }
    for t in nice_ticks(y0, y1) {
        let _ = writeln!(s, r#"<line x1="{1:.2}" y1="{0:.2}" x2="{2:.2}" y2="{0:.2}"/>"#, sy(t), MARGIN, WIDTH - MARGIN);
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for t in nice_ticks(x0, x1) {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, sx(t), HEIGHT - MARGIN + 14.0, fmt_tick(t));
    }
    for t in nice_ticks(y0, y1) {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN - 4.0, sy(t) + 4.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 16.0, esc(x_label));
    let _ = writeln!(s, r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#, HEIGHT / 2.0, esc(y_label));

    for (k, (b, dashed)) in bands.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if b.x.is_empty() {
            continue;
        }
        if b.runs > 1 {
            let mut d = String::new();
            for i in 0..b.x.len() {
                let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(b.x[i]), sy(b.hi[i]));
            }
            for i in (0..b.x.len()).rev() {
                let _ = write!(d, "L{:.2},{:.2} ", sx(b.x[i]), sy(b.lo[i]));
            }
            let _ = writeln!(s, r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, d);
        }
        let pts: Vec<String> = b.x.iter().zip(&b.mean).map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
        let dash = if *dashed { r#" stroke-dasharray="6 3""# } else { "" };
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#, pts.join(" "));
        let ly = MARGIN + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
            MARGIN + 8.0,
            MARGIN + 28.0
        );
        let n = if b.runs > 1 { format!(" (n={})", b.runs) } else { String::new() };
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}{}</text>"#, MARGIN + 32.0, ly + 4.0, esc(&b.label), n);
    }
    s.push_str("</svg>\n");
    s
}

/// Reads metrics CSVs, groups them by run name modulo seed, and writes
/// `return.svg`, `value.svg` and `error_ratio.svg` into `out_dir`.
pub fn emit_plots(csvs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if csvs.is_empty() {
        return Err(Error::config("no metrics files to plot"));
    }
    let mut groups: BTreeMap<String, Vec<Vec<MetricsRow>>> = BTreeMap::new();
    for p in csvs {
        let rows = read_metrics(p).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse { line, msg: format!("{}: {msg}", p.display()) },
            other => other,
        })?;
        groups.entry(group_label(p)).or_default().push(rows);
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, svg: String| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, svg)?;
        written.push(p);
        Ok(())
    };

    let has_eval = groups.values().flatten().flatten().any(|r| r.eval_return.is_finite());
    let ret_col = if has_eval { "eval_return" } else { "episode_return" };
    let bands: Vec<(Band, bool)> = groups.iter().map(|(g, runs)| (band(g, runs, ret_col), false)).collect();
    emit("return.svg", render_svg("Return", "environment step", ret_col, &bands))?;

    let mut bands = Vec::new();
    for (g, runs) in &groups {
        bands.push((band(&format!("{g} estimate"), runs, "value_estimate"), false));
        bands.push((band(&format!("{g} true"), runs, "true_value"), true));
    }
    emit("value.svg", render_svg("Value estimate vs true value", "environment step", "value", &bands))?;

    let bands: Vec<(Band, bool)> = groups.iter().map(|(g, runs)| (band(g, runs, "error_ratio"), false)).collect();
    emit("error_ratio.svg", render_svg("Approximation error ratio", "environment step", "(V_hat - V) / V", &bands))?;
    Ok(written)
}
