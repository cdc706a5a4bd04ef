//! CSV series and minimal SVG line charts for evaluation reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hemo::error::{HemoError, Result};
use hemo::metrics::CalibrationReport;

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let ypad = 0.05 * (y1 - y0);
    (x0, x1, y0 - ypad, y1 + ypad)
}

/// Line chart with one polyline per series.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{} L{PAD},{} L{},{}" stroke="black" fill="none"/>"#,
        PAD,
        H - PAD,
        W - PAD,
        H - PAD
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(fx), H - PAD + 16.0, tick(fx));
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, PAD - 4.0, sy(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let d: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="{c}" stroke-width="2" fill="none"/>"#, d.join(" "));
        for p in &d {
            let (px, py) = p.split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="3" fill="{c}"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{c}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * i as f64,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn series_csv(xname: &str, series: &[Series]) -> String {
    let mut s = format!("series,{xname},value\n");
    for ser in series {
        for (x, y) in &ser.points {
            let _ = writeln!(s, "{},{x},{y}", ser.name);
        }
    }
    s
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| HemoError::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn emit(dir: &Path, stem: &str, title: &str, xlabel: &str, ylabel: &str, series: &[Series], written: &mut Vec<PathBuf>) -> Result<()> {
    write(dir.join(format!("{stem}.csv")), &series_csv(xlabel, series), written)?;
    write(dir.join(format!("{stem}.svg")), &line_chart(title, xlabel, ylabel, series), written)
}

/// MAE, ACAUC and SCI against SNR, posterior-std histograms and the
/// std-gated MAE curve. Returns the files written.
pub fn report_plots(report: &CalibrationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HemoError::io(dir, e))?;
    let mut written = Vec::new();
    let names: Vec<&str> = report.biomarkers.iter().map(|b| b.name.as_str()).collect();
    let per_bin = |f: &dyn Fn(&hemo::metrics::BiomarkerReport) -> f64| -> Vec<Series> {
        names
            .iter()
            .enumerate()
            .map(|(k, n)| Series {
                name: n.to_string(),
                points: report.snr_bins.iter().map(|b| (b.mean_snr_db, f(&b.biomarkers[k]))).collect(),
            })
            .collect()
    };
    for (k, name) in names.iter().enumerate() {
        let mae = vec![Series {
            name: name.to_string(),
            points: report.snr_bins.iter().map(|b| (b.mean_snr_db, b.biomarkers[k].mae)).collect(),
        }];
        emit(dir, &format!("mae_vs_snr_{}", name.to_lowercase()), &format!("{name} MAE"), "SNR (dB)", "MAE", &mae, &mut written)?;
    }
    emit(dir, "rae_vs_snr", "Relative absolute error", "SNR (dB)", "RAE", &per_bin(&|b| b.rae), &mut written)?;
    emit(dir, "acauc_vs_snr", "ACAUC", "SNR (dB)", "ACAUC", &per_bin(&|b| b.acauc), &mut written)?;
    let levels: Vec<f64> = report.biomarkers.first().map(|b| b.sci.iter().map(|s| s.alpha).collect()).unwrap_or_default();
    for (li, alpha) in levels.iter().enumerate() {
        let stem = format!("sci_{:02}_vs_snr", (alpha * 100.0).round() as u32);
        emit(dir, &stem, &format!("SCI at {alpha}"), "SNR (dB)", "cells", &per_bin(&|b| b.sci[li].cells), &mut written)?;
    }
    let gating: Vec<Series> = report
        .biomarkers
        .iter()
        .map(|b| Series {
            name: b.name.clone(),
            points: b.spread_gating.iter().map(|g| (g.keep_fraction, g.mae / b.mae)).collect(),
        })
        .collect();
    emit(dir, "std_gated_mae", "MAE after posterior-std gating (relative to all)", "kept fraction", "MAE / MAE(all)", &gating, &mut written)?;
    for b in &report.biomarkers {
        let h = &b.std_histogram;
        let w = (h.hi - h.lo) / h.counts.len() as f64;
        let ser = vec![Series {
            name: b.name.clone(),
            points: h.counts.iter().enumerate().map(|(i, &c)| (h.lo + (i as f64 + 0.5) * w, c as f64)).collect(),
        }];
        emit(dir, &format!("std_hist_{}", b.name.to_lowercase()), &format!("{} posterior std", b.name), "std", "count", &ser, &mut written)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed() {
        let s = line_chart("t<", "x", "y", &[Series { name: "a".into(), points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, f64::NAN)] }]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("t&lt;"));
        assert_eq!(s.matches("<circle").count(), 2);
        let csv = series_csv("x", &[Series { name: "a".into(), points: vec![(0.0, 1.0)] }]);
        assert_eq!(csv, "series,x,value\na,0,1\n");
    }
}
