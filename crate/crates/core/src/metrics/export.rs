//! Kaplan–Meier curve export as CSV and a minimal SVG plot.

use std::fmt::Write as _;
use std::path::Path;

use super::survival::KmCurve;
use crate::error::{Error, Result};

/// Rows `time,survival,lower,upper,n_at_risk,group`, starting each group at `t = 0`.
pub fn write_km_csv(path: &Path, curves: &[(&str, &KmCurve)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::Csv)?;
    w.write_record(["time", "survival", "lower", "upper", "n_at_risk", "group"])?;
    for (name, c) in curves {
        let n0 = c.at_risk.first().copied().unwrap_or(0);
        w.write_record(["0".into(), "1".into(), "1".into(), "1".into(), n0.to_string(), name.to_string()])?;
        for k in 0..c.times.len() {
            w.write_record([
                c.times[k].to_string(),
                c.survival[k].to_string(),
                c.lower[k].to_string(),
                c.upper[k].to_string(),
                c.at_risk[k].to_string(),
                name.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

const PALETTE: [&str; 4] = ["#c0392b", "#27ae60", "#2c6fbb", "#8e44ad"];

/// Step curves with shaded bands; `title` is drawn at the top.
pub fn km_svg(curves: &[(&str, &KmCurve)], title: &str) -> String {
    let (w, h, m) = (640.0, 420.0, 50.0);
    let t_max = curves
        .iter()
        .flat_map(|(_, c)| c.times.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let x = |t: f64| m + (w - 2.0 * m) * t / t_max;
    let y = |s: f64| h - m - (h - 2.0 * m) * s;
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<path d="M{m} {} L{m} {} L{} {}" stroke="black" fill="none"/>"#,
        y(1.0),
        y(0.0),
        w - m,
        y(0.0)
    );
    for (i, (name, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let steps = |vals: &[f64]| {
            let mut pts = vec![(0.0, 1.0)];
            let mut prev = 1.0;
            for (k, &t) in c.times.iter().enumerate() {
                pts.push((t, prev));
                pts.push((t, vals[k]));
                prev = vals[k];
            }
            pts.push((t_max, prev));
            pts
        };
        let upper = steps(&c.upper);
        let lower = steps(&c.lower);
        let mut band = String::new();
        for (k, (t, s)) in upper.iter().chain(lower.iter().rev()).enumerate() {
            let _ = write!(band, "{}{:.2} {:.2} ", if k == 0 { "M" } else { "L" }, x(*t), y(*s));
        }
        let _ = writeln!(out, r#"<path d="{band}Z" fill="{color}" fill-opacity="0.15" stroke="none"/>"#);
        let mut line = String::new();
        for (k, (t, s)) in steps(&c.survival).iter().enumerate() {
            let _ = write!(line, "{}{:.2} {:.2} ", if k == 0 { "M" } else { "L" }, x(*t), y(*s));
        }
        let _ = writeln!(out, r#"<path d="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, line.trim_end());
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            w - m - 90.0,
            m + 16.0 * (i as f64 + 1.0),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
