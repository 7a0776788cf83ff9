//! Output files. Everything here is a pure function of its inputs so that
//! identical runs produce identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use fragctl::AgentRecord;

use crate::error::CliError;

pub const CSV_HEADER: &str = "t,agent,rel_error,disagreement,residual,lyap_V,lyap_bound";

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn csv_string(records: &[AgentRecord]) -> String {
    let mut out = String::with_capacity(64 + records.len() * 120);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_f64(r.t),
            r.agent,
            cell(r.rel_error),
            cell(r.disagreement),
            cell(r.residual),
            cell(r.lyap_v),
            cell(r.lyap_bound)
        );
    }
    out
}

pub fn emit_csv(path: &Path, records: &[AgentRecord]) -> Result<(), CliError> {
    write(path, csv_string(records).as_bytes())
}

pub fn emit_summary(path: &Path, summary: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(summary).map_err(|e| CliError::Config(format!("summary serialization: {e}")))?;
    text.push('\n');
    write(path, text.as_bytes())
}

/// Generic CSV with a caller-supplied header; floats use [`fmt_f64`].
pub fn emit_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write(path, out.as_bytes())
}

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Log-scale relative error against time, one polyline per agent.
pub fn plot_svg(title: &str, records: &[AgentRecord]) -> String {
    let agents = records.iter().map(|r| r.agent + 1).max().unwrap_or(0);
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); agents];
    for r in records {
        if let Some(e) = r.rel_error.filter(|e| e.is_finite() && *e > 0.0) {
            series[r.agent].push((r.t, e.log10()));
        }
    }
    let pts = series.iter().flatten();
    let (mut t0, mut t1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(t, y) in pts {
        t0 = t0.min(t);
        t1 = t1.max(t);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !t0.is_finite() {
        (t0, t1, y0, y1) = (0.0, 1.0, -1.0, 0.0);
    }
    if t1 <= t0 {
        t1 = t0 + 1.0;
    }
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |t: f64| LEFT + (t - t0) / (t1 - t0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    let step = ((y1 - y0) / 8.0).ceil().max(1.0);
    let mut d = y0;
    while d <= y1 + 1e-9 {
        let y = sy(d);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">1e{}</text>"#, LEFT - 6.0, y + 4.0, d as i64);
        d += step;
    }
    for k in 0..=5 {
        let t = t0 + (t1 - t0) * k as f64 / 5.0;
        let x = sx(t);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.1}" text-anchor="middle">{}</text>"#, H - BOTTOM + 18.0, tick(t));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">t</text>"#, LEFT + pw / 2.0, H - 10.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">relative error</text>"#, TOP + ph / 2.0, TOP + ph / 2.0);
    for (i, pts) in series.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let mut path = String::new();
        for (k, &(t, y)) in pts.iter().enumerate() {
            let _ = write!(path, "{}{:.2},{:.2}", if k == 0 { "" } else { " " }, sx(t), sy(y));
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{path}"><title>agent {i}</title></polyline>"#, PALETTE[i % PALETTE.len()]);
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_plot(path: &Path, title: &str, records: &[AgentRecord]) -> Result<(), CliError> {
    write(path, plot_svg(title, records).as_bytes())
}

fn tick(t: f64) -> String {
    let s = format!("{t:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path.display().to_string(), e))
}
