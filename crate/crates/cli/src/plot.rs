//! `roughflow plot`: SVG of mean `log10 L` against iteration, one series per H.
//!
//! The plotter does no smoothing. Each `<polyline>` carries the CSV values
//! verbatim in a `data-values` attribute so the figure can be checked
//! against `aggregate.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    /// Hurst value as written in the CSV.
    pub label: String,
    pub hurst: f64,
    pub iters: Vec<usize>,
    /// Raw CSV strings and their parsed values.
    pub raw: Vec<String>,
    pub values: Vec<f64>,
}

/// Parses `hurst,iter,mean_log10_loss,runs` into series ordered by H.
pub fn read_aggregate(text: &str) -> Result<Vec<PlotSeries>, CliError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "hurst,iter,mean_log10_loss,runs" => {}
        _ => return Err(CliError::Input("aggregate CSV has an unexpected header".into())),
    }
    let mut map: BTreeMap<String, PlotSeries> = BTreeMap::new();
    for (no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || CliError::Input(format!("malformed aggregate row {}: {line}", no + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad());
        }
        let hurst: f64 = cols[0].parse().map_err(|_| bad())?;
        let iter: usize = cols[1].parse().map_err(|_| bad())?;
        let value: f64 = cols[2].parse().map_err(|_| bad())?;
        let s = map.entry(cols[0].to_string()).or_insert_with(|| PlotSeries {
            label: cols[0].to_string(),
            hurst,
            iters: Vec::new(),
            raw: Vec::new(),
            values: Vec::new(),
        });
        s.iters.push(iter);
        s.raw.push(cols[2].to_string());
        s.values.push(value);
    }
    let mut series: Vec<PlotSeries> = map.into_values().collect();
    if series.is_empty() {
        return Err(CliError::Input("aggregate CSV has no rows".into()));
    }
    series.sort_by(|a, b| a.hurst.total_cmp(&b.hurst));
    let axis = &series[0].iters;
    if let Some(r) = series.iter().find(|s| &s.iters != axis) {
        return Err(CliError::Input(format!(
            "ragged series: H = {} has {} points, H = {} has {}",
            r.label,
            r.iters.len(),
            series[0].label,
            axis.len()
        )));
    }
    Ok(series)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Final-iteration ordering, lowest first, and whether it is increasing in H.
pub fn final_ordering(series: &[PlotSeries]) -> (Vec<String>, bool) {
    let mut last: Vec<(&PlotSeries, f64)> = series.iter().map(|s| (s, *s.values.last().unwrap())).collect();
    last.sort_by(|a, b| a.1.total_cmp(&b.1));
    let labels = last.iter().map(|(s, _)| format!("H={}", s.label)).collect();
    let monotone = last.windows(2).all(|w| w[0].0.hurst < w[1].0.hurst && w[0].1 < w[1].1);
    (labels, monotone)
}

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

pub fn render_svg(title: &str, series: &[PlotSeries]) -> String {
    let (w, h) = (800.0, 500.0);
    let (ml, mr, mt, mb) = (70.0, 170.0, 40.0, 60.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let xmax = series[0].iters.last().copied().unwrap_or(1).max(1) as f64;
    let (mut ylo, mut yhi) = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if yhi - ylo < 1e-9 {
        ylo -= 0.5;
        yhi += 0.5;
    }
    let pad = 0.05 * (yhi - ylo);
    let (ylo, yhi) = (ylo - pad, yhi + pad);
    let sx = |x: f64| ml + pw * x / xmax;
    let sy = |y: f64| mt + ph * (yhi - y) / (yhi - ylo);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        ml + pw / 2.0,
        escape(title)
    )
    .unwrap();
    writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for t in nice_ticks(0.0, xmax, 8) {
        let x = sx(t);
        writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
            mt + ph,
            mt + ph + 5.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{t}</text>"#,
            mt + ph + 20.0
        )
        .unwrap();
    }
    for t in nice_ticks(ylo, yhi, 8) {
        let y = sy(t);
        writeln!(
            s,
            r##"<line x1="{ml}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/>"##,
            ml + pw
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{t}</text>"#,
            ml - 8.0,
            y + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">gradient descent iteration k</text>"#,
        ml + pw / 2.0,
        h - 15.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">mean log10 L(h^k)</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0
    )
    .unwrap();

    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = ser
            .iters
            .iter()
            .zip(&ser.values)
            .map(|(&k, &v)| format!("{:.2},{:.2}", sx(k as f64), sy(v)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" data-hurst="{}" data-iters="{}" data-values="{}" points="{}"/>"#,
            ser.label,
            ser.iters.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" "),
            ser.raw.join(" "),
            pts.join(" ")
        )
        .unwrap();
        let ly = mt + 20.0 + 20.0 * i as f64;
        let lx = ml + pw + 15.0;
        writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 25.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}">H = {}</text>"#,
            lx + 32.0,
            ly + 4.0,
            ser.label
        )
        .unwrap();
    }
    let (order, monotone) = final_ordering(series);
    let ay = mt + 40.0 + 20.0 * series.len() as f64;
    let ax = ml + pw + 15.0;
    writeln!(
        s,
        r#"<text x="{ax}" y="{ay}" font-size="11">final, lowest first:</text>"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{ax}" y="{}" font-size="11">{}</text>"#,
        ay + 15.0,
        order.join(" &lt; ")
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{ax}" y="{}" font-size="11">ordered by H: {}</text>"#,
        ay + 30.0,
        if monotone { "yes" } else { "no" }
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Directories under `dir` (including itself) holding an `aggregate.csv`.
fn run_dirs(dir: &Path) -> Vec<PathBuf> {
    if dir.join("aggregate.csv").is_file() {
        return vec![dir.to_path_buf()];
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.join("aggregate.csv").is_file())
        .collect();
    out.sort();
    out
}

/// Writes `figure_<family>.svg` into each run directory found under `dir`.
pub fn cmd_plot(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let dirs = run_dirs(dir);
    if dirs.is_empty() {
        return Err(CliError::Input(format!("no aggregate.csv under {}", dir.display())));
    }
    // parse everything before writing anything
    let mut figures = Vec::new();
    for d in &dirs {
        let text = std::fs::read_to_string(d.join("aggregate.csv"))?;
        let series = read_aggregate(&text)?;
        let (title, label) = match ExperimentConfig::load(&d.join("config.toml")) {
            Ok(cfg) => (
                format!("{}: {}, L = {}", cfg.name, cfg.family.label(), cfg.steps),
                cfg.family.label(),
            ),
            Err(_) => ("mean log10 loss".to_string(), "run".to_string()),
        };
        figures.push((d.join(format!("figure_{label}.svg")), render_svg(&title, &series)));
    }
    let mut written = Vec::new();
    for (path, svg) in figures {
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
