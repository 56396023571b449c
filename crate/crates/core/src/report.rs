//! CSV, JSON and SVG exports.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::closeness::{BoundReport, ClosenessReport};
use crate::error::Result;

/// `epsilon,sup_distance,argmax_t,slope_contrib`; missing values are left empty.
pub fn write_sweep_csv(report: &ClosenessReport, out: &mut impl Write) -> Result<()> {
    let long = report.records.iter().any(|r| r.short_sup_distance.is_some());
    if long {
        writeln!(out, "epsilon,sup_distance,argmax_t,slope_contrib,short_sup_distance")?;
    } else {
        writeln!(out, "epsilon,sup_distance,argmax_t,slope_contrib")?;
    }
    let opt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in &report.records {
        write!(
            out,
            "{:?},{},{},{}",
            r.epsilon,
            opt(r.sup_distance),
            opt(r.argmax_t),
            opt(r.slope_contrib)
        )?;
        if long {
            write!(out, ",{}", opt(r.short_sup_distance))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// `t,distance,bound,margin`.
pub fn write_bound_csv(report: &BoundReport, out: &mut impl Write) -> Result<()> {
    writeln!(out, "t,distance,bound,margin")?;
    for s in &report.samples {
        writeln!(out, "{:?},{:?},{:?},{:?}", s.t, s.distance, s.bound, s.margin)?;
    }
    Ok(())
}

/// `t,distance`.
pub fn write_distance_csv(series: &[(f64, f64)], out: &mut impl Write) -> Result<()> {
    writeln!(out, "t,distance")?;
    for (t, d) in series {
        writeln!(out, "{t:?},{d:?}")?;
    }
    Ok(())
}

/// Pretty-printed JSON object followed by a newline.
pub fn write_summary(value: &impl Serialize, out: &mut impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value).map_err(std::io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit<'a>(series: impl Iterator<Item = &'a [(f64, f64)]>) -> Frame {
        let (mut xl, mut xh, mut yl, mut yh) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for s in series {
            for &(x, y) in s.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                xl = xl.min(x);
                xh = xh.max(x);
                yl = yl.min(y);
                yh = yh.max(y);
            }
        }
        if !xl.is_finite() {
            (xl, xh, yl, yh) = (0.0, 1.0, 0.0, 1.0);
        }
        if xh <= xl {
            xh = xl + 1.0;
        }
        if yh <= yl {
            yh = yl + 1.0;
        }
        Frame { x: (xl, xh), y: (yl, yh) }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * PAD)
    }
}

fn svg_open(title: &str, frame: &Frame, xlabel: &str, ylabel: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xlabel}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (v, anchor, x, y) in [
        (frame.x.0, "start", PAD, H - PAD + 16.0),
        (frame.x.1, "end", W - PAD, H - PAD + 16.0),
    ] {
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{v:.4}</text>"#);
    }
    for (v, y) in [(frame.y.0, H - PAD), (frame.y.1, PAD + 10.0)] {
        let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end" font-size="10">{v:.4}</text>"#, PAD - 4.0);
    }
    s
}

fn polyline(frame: &Frame, pts: &[(f64, f64)], color: &str, dashed: bool) -> String {
    let coords: Vec<String> = pts
        .iter()
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
        .collect();
    let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
    format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>\n",
        coords.join(" ")
    )
}

/// Line plot of labelled series on shared axes.
pub fn line_plot_svg(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let frame = Frame::fit(series.iter().map(|(_, s)| s.as_slice()));
    let mut s = svg_open(title, &frame, xlabel, ylabel);
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        s.push_str(&polyline(&frame, pts, color, i % 2 == 1));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{label}</text>"#,
            PAD + 8.0,
            PAD + 16.0 + 14.0 * i as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Log-log plot of `D(eps)` with the fitted slope line through the centroid.
pub fn sweep_plot_svg(report: &ClosenessReport) -> String {
    let pts: Vec<(f64, f64)> = report
        .records
        .iter()
        .filter_map(|r| r.sup_distance.filter(|d| *d > 0.0).map(|d| (r.epsilon.log10(), d.log10())))
        .collect();
    let fit: Vec<(f64, f64)> = match (report.slope, pts.is_empty()) {
        (Some(slope), false) => {
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
            let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            vec![(lo, my + slope * (lo - mx)), (hi, my + slope * (hi - mx))]
        }
        _ => Vec::new(),
    };
    let frame = Frame::fit([pts.as_slice(), fit.as_slice()].into_iter());
    let title = match report.slope {
        Some(s) => format!("{} {}: slope {s:.4} ({})", report.system, report.kind, report.verdict),
        None => format!("{} {}: {}", report.system, report.kind, report.verdict),
    };
    let mut s = svg_open(&title, &frame, "log10 eps", "log10 D(eps)");
    if !fit.is_empty() {
        s.push_str(&polyline(&frame, &fit, COLORS[1], true));
    }
    for &(x, y) in &pts {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
            frame.px(x),
            frame.py(y),
            COLORS[0]
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closeness::{EpsilonRecord, Verdict};

    fn report() -> ClosenessReport {
        let rec = |e: f64, d: Option<f64>| EpsilonRecord {
            epsilon: e,
            horizon: 1.0 / e,
            sup_distance: d,
            argmax_t: d.map(|_| 1.0),
            short_sup_distance: None,
            samples: 10,
            slope_contrib: None,
            error: None,
        };
        ClosenessReport {
            kind: "epsilon_sweep".into(),
            system: "demo".into(),
            records: vec![rec(0.2, Some(0.02)), rec(0.1, None)],
            slope: Some(1.0),
            verdict: Verdict::Pass,
            constants: None,
            stability: None,
            notes: vec![],
        }
    }

    #[test]
    fn sweep_csv_layout() {
        let mut buf = Vec::new();
        write_sweep_csv(&report(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "epsilon,sup_distance,argmax_t,slope_contrib\n0.2,0.02,1.0,\n0.1,,,\n");
    }

    #[test]
    fn summary_is_json() {
        let mut buf = Vec::new();
        write_summary(&report(), &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["verdict"], "pass");
        assert_eq!(v["records"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn svg_is_closed() {
        let s = sweep_plot_svg(&report());
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        let s = line_plot_svg("t", "x", "y", &[("a".into(), vec![(0.0, 1.0), (1.0, 2.0)])]);
        assert!(s.contains("polyline"));
    }
}
