//! Minimal SVG line charts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::MetricsRow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    SiSdr,
    SdSnr,
    SslFeatureMse,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::SiSdr, Metric::SdSnr, Metric::SslFeatureMse];

    pub fn name(self) -> &'static str {
        match self {
            Metric::SiSdr => "si_sdr_db",
            Metric::SdSnr => "sd_snr_db",
            Metric::SslFeatureMse => "ssl_feature_mse",
        }
    }

    pub fn value(self, row: &MetricsRow) -> f64 {
        match self {
            Metric::SiSdr => row.si_sdr_db,
            Metric::SdSnr => row.sd_snr_db,
            Metric::SslFeatureMse => row.ssl_feature_mse,
        }
    }
}

/// Log-scaled α positions; α = 0 sits one decade below the smallest
/// positive α.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaAxis {
    pub ticks: Vec<(f64, f64)>,
}

impl AlphaAxis {
    pub fn position(&self, alpha: f64) -> f64 {
        self.ticks
            .iter()
            .find(|(a, _)| *a == alpha)
            .map(|(_, x)| *x)
            .expect("alpha is on the axis")
    }
}

pub fn alpha_axis(alphas: &[f64]) -> AlphaAxis {
    let mut vals: Vec<f64> = alphas.to_vec();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let min_pos = vals.iter().copied().filter(|a| *a > 0.0).fold(f64::INFINITY, f64::min);
    let zero_at = if min_pos.is_finite() { min_pos.log10().floor() - 1.0 } else { 0.0 };
    AlphaAxis {
        ticks: vals
            .into_iter()
            .map(|a| (a, if a > 0.0 { a.log10() } else { zero_at }))
            .collect(),
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Canvas {
    svg: String,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Canvas {
    fn new(title: &str, x_label: &str, y_label: &str, x_range: (f64, f64), ys: &[f64]) -> Self {
        let (mut lo, mut hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if !(hi - lo > 1e-12) {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        let x_range = if x_range.1 - x_range.0 > 0.0 { x_range } else { (x_range.0 - 0.5, x_range.1 + 0.5) };
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
        let _ = writeln!(
            svg,
            r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - LEFT - RIGHT,
            H - TOP - BOTTOM
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (LEFT + W - RIGHT) / 2.0, H - 10.0, escape(x_label));
        let _ = writeln!(
            svg,
            r#"<text x="15" y="{0}" text-anchor="middle" transform="rotate(-90 15 {0})">{1}</text>"#,
            (TOP + H - BOTTOM) / 2.0,
            escape(y_label)
        );
        let mut c = Self {
            svg,
            x_range,
            y_range: (lo - pad, hi + pad),
        };
        for i in 0..=4 {
            let v = c.y_range.0 + (c.y_range.1 - c.y_range.0) * i as f64 / 4.0;
            let y = c.py(v);
            let _ = writeln!(c.svg, r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 4.0);
            let _ = writeln!(c.svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, fmt_num(v));
        }
        c
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + 10.0 + (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * (W - LEFT - RIGHT - 20.0)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * (H - TOP - BOTTOM)
    }

    fn x_tick(&mut self, x: f64, label: &str) {
        let px = self.px(x);
        let _ = writeln!(
            self.svg,
            r#"<line class="xtick" x1="{px:.2}" y1="{0}" x2="{px:.2}" y2="{1}" stroke="black"/>"#,
            H - BOTTOM,
            H - BOTTOM + 4.0
        );
        let _ = writeln!(self.svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 18.0, escape(label));
    }

    fn series(&mut self, points: &[(f64, f64)], color: &str, name: &str, index: usize) {
        let pts: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y))).collect();
        let _ = writeln!(self.svg, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for &(x, y) in points {
            let _ = writeln!(self.svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, self.px(x), self.py(y));
        }
        self.legend(color, name, index, false);
    }

    fn hline(&mut self, y: f64, color: &str, name: &str, index: usize) {
        let py = self.py(y);
        let _ = writeln!(
            self.svg,
            r#"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="{color}" stroke-dasharray="6 4" stroke-width="1.5"/>"#,
            W - RIGHT
        );
        self.legend(color, name, index, true);
    }

    fn legend(&mut self, color: &str, name: &str, index: usize, dashed: bool) {
        let y = TOP + 14.0 + 16.0 * index as f64;
        let x = W - RIGHT - 170.0;
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(self.svg, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>"#, x + 20.0);
        let _ = writeln!(self.svg, r#"<text x="{}" y="{}">{}</text>"#, x + 26.0, y + 4.0, escape(name));
    }

    fn save(mut self, path: &Path) -> Result<()> {
        self.svg.push_str("</svg>\n");
        fs::write(path, self.svg).map_err(|e| Error::io(path, e))
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_num(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn fmt_alpha(a: f64) -> String {
    if a == 0.0 {
        "0".into()
    } else if (1e-2..1e3).contains(&a) {
        format!("{a}")
    } else {
        format!("{a:e}")
    }
}

/// Metric against α for rows that carry one; rows without α are drawn as
/// dashed reference lines. Returns the α tick count.
pub fn plot_metric_vs_alpha(rows: &[MetricsRow], metric: Metric, path: &Path) -> Result<usize> {
    let with_alpha: Vec<&MetricsRow> = rows.iter().filter(|r| r.alpha.is_some()).collect();
    if with_alpha.is_empty() {
        return Err(Error::EmptyReport);
    }
    let alphas: Vec<f64> = with_alpha.iter().filter_map(|r| r.alpha).collect();
    let axis = alpha_axis(&alphas);
    let xs: Vec<f64> = axis.ticks.iter().map(|t| t.1).collect();
    let x_range = (xs[0], *xs.last().expect("non-empty"));
    let ys: Vec<f64> = rows.iter().map(|r| metric.value(r)).collect();
    let mut c = Canvas::new(&format!("{} vs alpha", metric.name()), "alpha (log scale)", metric.name(), x_range, &ys);
    for &(a, x) in &axis.ticks {
        c.x_tick(x, &fmt_alpha(a));
    }
    let mut k = 0;
    for (name, group) in group_by_system(&with_alpha) {
        let mut pts: Vec<(f64, f64)> = group.iter().map(|r| (axis.position(r.alpha.expect("has alpha")), metric.value(r))).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        c.series(&pts, COLORS[k % COLORS.len()], &name, k);
        k += 1;
    }
    for r in rows.iter().filter(|r| r.alpha.is_none()) {
        c.hline(metric.value(r), COLORS[k % COLORS.len()], &r.system, k);
        k += 1;
    }
    c.save(path)?;
    Ok(axis.ticks.len())
}

/// Metric against β, one line per system. Returns the β tick count.
pub fn plot_metric_vs_beta(rows: &[MetricsRow], metric: Metric, path: &Path) -> Result<usize> {
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut betas: Vec<f64> = rows.iter().map(|r| r.beta).collect();
    betas.sort_by(f64::total_cmp);
    betas.dedup();
    let x_range = (betas[0], *betas.last().expect("non-empty"));
    let ys: Vec<f64> = rows.iter().map(|r| metric.value(r)).collect();
    let mut c = Canvas::new(&format!("{} vs beta", metric.name()), "beta", metric.name(), x_range, &ys);
    for &b in &betas {
        c.x_tick(b, &format!("{b}"));
    }
    let all: Vec<&MetricsRow> = rows.iter().collect();
    for (k, (name, group)) in group_by_system(&all).into_iter().enumerate() {
        let mut pts: Vec<(f64, f64)> = group.iter().map(|r| (r.beta, metric.value(r))).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        c.series(&pts, COLORS[k % COLORS.len()], &name, k);
    }
    c.save(path)?;
    Ok(betas.len())
}

fn group_by_system<'a>(rows: &[&'a MetricsRow]) -> Vec<(String, Vec<&'a MetricsRow>)> {
    let mut out: Vec<(String, Vec<&MetricsRow>)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(n, _)| *n == r.system) {
            Some((_, g)) => g.push(r),
            None => out.push((r.system.clone(), vec![r])),
        }
    }
    out
}

/// Writes `<metric>_vs_alpha.svg` when rows carry α values and
/// `<metric>_vs_beta.svg` when several β values are present.
pub fn emit_plots(rows: &[MetricsRow], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    let has_alpha = rows.iter().any(|r| r.alpha.is_some());
    let mut betas: Vec<u64> = rows.iter().map(|r| r.beta.to_bits()).collect();
    betas.sort_unstable();
    betas.dedup();
    for m in Metric::ALL {
        if has_alpha {
            let p = dir.join(format!("{}_vs_alpha.svg", m.name()));
            plot_metric_vs_alpha(rows, m, &p)?;
            out.push(p);
        }
        if betas.len() > 1 {
            let p = dir.join(format!("{}_vs_beta.svg", m.name()));
            plot_metric_vs_beta(rows, m, &p)?;
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(system: &str, beta: f64, alpha: Option<f64>, v: f64) -> MetricsRow {
        MetricsRow {
            system: system.into(),
            beta,
            alpha,
            si_sdr_db: v,
            sd_snr_db: v + 1.0,
            ssl_feature_mse: 1.0 / (1.0 + v.abs()),
            n_utterances: 3,
        }
    }

    #[test]
    fn zero_alpha_sits_a_decade_below() {
        let axis = alpha_axis(&[10.0, 0.0, 1e-4, 0.1]);
        assert_eq!(axis.ticks.len(), 4);
        assert_eq!(axis.position(0.0), -5.0);
        assert!((axis.position(1e-4) + 4.0).abs() < 1e-12);
        assert!((axis.position(10.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seven_alphas_give_seven_ticks() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = vec![row("snr_baseline", 0.0, None, 9.0)];
        for (i, a) in [0.0, 1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0].into_iter().enumerate() {
            rows.push(row("ssl_mt_alpha", 0.0, Some(a), i as f64));
        }
        let p = dir.path().join("a.svg");
        assert_eq!(plot_metric_vs_alpha(&rows, Metric::SiSdr, &p).unwrap(), 7);
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.matches(r#"class="xtick""#).count(), 7);
        assert!(text.starts_with("<svg"));
        let files = emit_plots(&rows, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
    }

    #[test]
    fn beta_plots() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<MetricsRow> = [0.0, 0.1, 0.5, 1.0].iter().map(|&b| row("model", b, None, 10.0 - b)).collect();
        assert_eq!(plot_metric_vs_beta(&rows, Metric::SdSnr, &dir.path().join("b.svg")).unwrap(), 4);
        assert_eq!(emit_plots(&rows, dir.path()).unwrap().len(), 3);
        assert!(matches!(emit_plots(&[], dir.path()), Err(Error::EmptyReport)));
    }
}
