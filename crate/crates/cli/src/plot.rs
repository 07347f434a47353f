//! A small SVG line-chart writer for learning curves.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

/// One curve: the mean over runs sharing a label, with a band of one std.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    /// `None` for single-run labels.
    pub std: Option<Vec<f64>>,
}

/// Runs stored as `<label>/seed<k>` share `<label>`; others use their own name.
pub fn run_label(dir: &Path) -> String {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let is_seed = name
        .strip_prefix("seed")
        .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()));
    match (is_seed, dir.parent().and_then(Path::file_name)) {
        (true, Some(p)) => p.to_string_lossy().into_owned(),
        _ => name,
    }
}

/// Reads `metric` from `<dir>/metrics.csv` for every run.
pub fn load_series(dirs: &[PathBuf], metric: &str) -> Result<Vec<Series>, CliError> {
    if dirs.is_empty() {
        return Err(CliError::usage("plot needs at least one run directory"));
    }
    let mut groups: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for d in dirs {
        let path = d.join("metrics.csv");
        let mut r = csv::Reader::from_path(&path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let headers = r
            .headers()
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
            .clone();
        let col = headers
            .iter()
            .position(|h| h == metric)
            .ok_or_else(|| CliError::config(format!("{}: no column `{metric}`", path.display())))?;
        let mut ys = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            ys.push(rec.get(col).and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN));
        }
        groups.entry(run_label(d)).or_default().push(ys);
    }
    Ok(groups
        .into_iter()
        .map(|(label, runs)| {
            let len = runs.iter().map(Vec::len).min().unwrap_or(0);
            let k = runs.len() as f64;
            let mean: Vec<f64> = (0..len).map(|i| runs.iter().map(|r| r[i]).sum::<f64>() / k).collect();
            let std = (runs.len() > 1).then(|| {
                (0..len)
                    .map(|i| (runs.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / k).sqrt())
                    .collect()
            });
            Series {
                label,
                x: (0..len).map(|i| i as f64).collect(),
                mean,
                std,
            }
        })
        .collect())
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Renders the series as a standalone SVG document.
pub fn render_svg(series: &[Series], title: &str) -> String {
    let (w, h, m) = (720.0, 420.0, 50.0);
    let finite = |v: &f64| v.is_finite();
    let mut xs = series.iter().flat_map(|s| s.x.iter().copied());
    let x_max = xs.clone().fold(f64::MIN, f64::max).max(1.0);
    let x_min = xs.by_ref().fold(f64::MAX, f64::min).min(x_max - 1.0);
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for (i, m) in s.mean.iter().enumerate() {
            let d = s.std.as_ref().map_or(0.0, |v| v[i]);
            ys.extend([m - d, m + d]);
        }
    }
    ys.retain(finite);
    let (mut y_min, mut y_max) = ys.iter().fold((f64::MAX, f64::MIN), |(a, b), &y| (a.min(y), b.max(y)));
    if ys.is_empty() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-12 {
        (y_min, y_max) = (y_min - 0.5, y_max + 0.5);
    }
    let px = |x: f64| m + (x - x_min) / (x_max - x_min) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y_min) / (y_max - y_min) * (h - 2.0 * m);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for (y, anchor) in [(y_min, h - m), (y_max, m)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{anchor}" text-anchor="end" font-family="sans-serif" font-size="11">{y:.3}</text>"#,
            m - 4.0
        );
    }
    for (x, anchor) in [(x_min, m), (x_max, w - m)] {
        let _ = writeln!(
            out,
            r#"<text x="{anchor}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{x}</text>"#,
            h - m + 16.0
        );
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some(std) = &s.std {
            let upper = s.x.iter().zip(&s.mean).zip(std).map(|((x, y), d)| (px(*x), py(y + d)));
            let lower =
                s.x.iter()
                    .zip(&s.mean)
                    .zip(std)
                    .rev()
                    .map(|((x, y), d)| (px(*x), py(y - d)));
            let pts: Vec<String> = upper.chain(lower).map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
            let _ = writeln!(
                out,
                r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> =
            s.x.iter()
                .zip(&s.mean)
                .filter(|(_, y)| y.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="line" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let ly = m + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}" font-family="sans-serif" font-size="12">{}</text>"#,
            w - m - 150.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_group_seed_directories() {
        assert_eq!(run_label(Path::new("out/n=2/seed3")), "n=2");
        assert_eq!(run_label(Path::new("out/flat_ppo")), "flat_ppo");
        assert_eq!(run_label(Path::new("out/seeds")), "seeds");
    }

    #[test]
    fn one_line_per_label_and_bands_only_for_groups() {
        let one = Series {
            label: "a".into(),
            x: vec![0.0, 1.0, 2.0],
            mean: vec![1.0, 2.0, 1.5],
            std: None,
        };
        let svg = render_svg(std::slice::from_ref(&one), "t");
        assert_eq!(svg.matches("class=\"line\"").count(), 1);
        assert_eq!(svg.matches("class=\"band\"").count(), 0);
        let two = Series {
            label: "b".into(),
            std: Some(vec![0.1, 0.2, 0.3]),
            ..one.clone()
        };
        let svg = render_svg(&[one.clone(), two.clone()], "t");
        assert_eq!(svg, render_svg(&[one, two], "t"));
        assert_eq!(svg.matches("class=\"line\"").count(), 2);
        assert_eq!(svg.matches("class=\"band\"").count(), 1);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
