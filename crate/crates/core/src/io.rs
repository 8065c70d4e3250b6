//! Persistence of experiment results: CSV tables, JSON mirrors, run
//! manifests and static SVG charts.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{ExperimentResult, Layout};

pub const SIGNIFICANT_DIGITS: usize = 9;
pub const LOCK_FILE: &str = ".chiralsim.lock";

/// Fixed 9-significant-digit rendering. Scientific notation is used below
/// 1e-4 and from 1e9 up; negative zero prints as `0`.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let a = x.abs();
    if !(1e-4..1e9).contains(&a) {
        return format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    }
    let exponent = a.log10().floor() as i32;
    let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exponent).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

pub fn to_csv(result: &ExperimentResult) -> String {
    let mut out = result.columns.join(",");
    out.push('\n');
    for row in &result.rows {
        let cells: Vec<String> = row.iter().map(|&x| format_number(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Parse a table written by [`to_csv`] (or any header-plus-numbers CSV).
pub fn parse_csv(name: &str, text: &str) -> Result<ExperimentResult> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Config("CSV input is empty".into()))?;
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let ys = columns.iter().filter(|c| c.starts_with("p_q")).cloned().collect();
    let mut result = ExperimentResult::new(name, columns.clone(), Layout::Series { x: columns[0].clone(), ys });
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("CSV line {}: {e}", i + 2)))?;
        if row.len() != columns.len() {
            return Err(Error::Config(format!("CSV line {} has {} fields, expected {}", i + 2, row.len(), columns.len())));
        }
        result.push(row);
    }
    Ok(result)
}

fn json_number(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// JSON mirror of the CSV table plus parameters, summary and warnings.
pub fn to_json(result: &ExperimentResult) -> String {
    let rows: Vec<Value> = result.rows.iter().map(|r| Value::Array(r.iter().map(|&x| json_number(x)).collect())).collect();
    let doc = json!({
        "name": result.name,
        "params": result.params,
        "columns": result.columns,
        "rows": rows,
        "summary": result.summary,
        "warnings": result.warnings,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("JSON values serialize");
    s.push('\n');
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageTime {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub experiment: String,
    /// SHA-256 of the serialized device configuration.
    pub config_hash: String,
    pub seed: Option<u64>,
    pub version: String,
    pub method: String,
    pub dt_ns: Option<f64>,
    pub drift: f64,
    pub wall_times: Vec<StageTime>,
    pub params: Value,
    pub summary: Value,
    pub warnings: Vec<String>,
}

pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl RunManifest {
    pub fn for_result(result: &ExperimentResult, wall_times: Vec<StageTime>) -> Self {
        Self {
            experiment: result.name.clone(),
            config_hash: config_hash(result.device_toml.as_deref().unwrap_or("")),
            seed: result.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            method: "rk4 interaction picture, dt/2 verified".into(),
            dt_ns: result.dt_ns,
            drift: result.drift,
            wall_times,
            params: json!(result.params),
            summary: json!(result.summary),
            warnings: result.warnings.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Write via a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name")))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Exclusive handle on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        let lock = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(Error::Io(std::io::Error::new(
                    e.kind(),
                    format!("output directory {} is locked by another run ({})", root.display(), lock.display()),
                )));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self { root: root.to_path_buf(), lock })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Table (`<name>.csv` or `<name>.json`), manifest and optional SVG.
    pub fn write(
        &self,
        result: &ExperimentResult,
        format: Format,
        manifest: &RunManifest,
        plot: bool,
    ) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let table = match format {
            Format::Csv => (self.root.join(format!("{}.csv", result.name)), to_csv(result)),
            Format::Json => (self.root.join(format!("{}.json", result.name)), to_json(result)),
        };
        write_atomic(&table.0, table.1.as_bytes())?;
        written.push(table.0);
        let mpath = self.root.join(format!("{}.manifest.json", result.name));
        write_atomic(&mpath, manifest.to_json().as_bytes())?;
        written.push(mpath);
        if plot {
            let svg = emit_svg(result)?;
            let spath = self.root.join(format!("{}.svg", result.name));
            write_atomic(&spath, svg.as_bytes())?;
            written.push(spath);
        }
        Ok(written)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

fn column_index(result: &ExperimentResult, name: &str) -> Result<usize> {
    result
        .columns
        .iter()
        .position(|c| c == name)
        .ok_or_else(|| Error::Config(format!("result has no column {name}")))
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn svg_header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn svg_axes(out: &mut String, x: (&str, f64, f64), y: (&str, f64, f64)) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 2.0 + 8.0, HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, HEIGHT - 12.0, escape(x.0));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(y.0)
    );
    for (v, px) in [(x.1, l), (x.2, r)] {
        let _ = writeln!(out, r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#, b + 14.0, short(v));
    }
    for (v, py) in [(y.1, b), (y.2, t)] {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, py + 4.0, short(v));
    }
}

fn short(x: f64) -> String {
    format!("{x:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn px(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    a + (v - lo) / (hi - lo) * (b - a)
}

fn polyline(out: &mut String, pts: &[(f64, f64)], xr: (f64, f64), yr: (f64, f64), color: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 2.0 + 8.0, HEIGHT - MARGIN);
    let mut d = String::new();
    let mut pen_up = true;
    for &(x, y) in pts {
        if !x.is_finite() || !y.is_finite() {
            pen_up = true;
            continue;
        }
        let _ = write!(d, "{}{:.2} {:.2} ", if pen_up { "M" } else { "L" }, px(x, xr.0, xr.1, l, r), px(y, yr.0, yr.1, b, t));
        pen_up = false;
    }
    let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, label) in labels.iter().enumerate().take(12) {
        let y = MARGIN / 2.0 + 20.0 + 14.0 * i as f64;
        let x = WIDTH - MARGIN / 2.0 - 110.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<line x1="{x}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#, y - 4.0, x + 16.0, y - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 20.0, escape(label));
    }
}

fn lines_svg(result: &ExperimentResult, series: Vec<(String, Vec<(f64, f64)>)>, xname: &str, yname: &str) -> String {
    let xr = finite_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let yr = finite_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let mut out = String::new();
    svg_header(&mut out, &result.name);
    svg_axes(&mut out, (xname, xr.0, xr.1), (yname, yr.0, yr.1));
    for (i, (_, pts)) in series.iter().enumerate() {
        polyline(&mut out, pts, xr, yr, PALETTE[i % PALETTE.len()]);
    }
    legend(&mut out, &series.iter().map(|s| s.0.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

fn heat_color(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * v).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * v - 1.0).abs()) * 0.8).round() as u8;
    let b = (255.0 * (1.0 - v)).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn heatmap_svg(result: &ExperimentResult, x: &str, y: &str, value: &str) -> Result<String> {
    let (ix, iy, iv) = (column_index(result, x)?, column_index(result, y)?, column_index(result, value)?);
    let mut xs: Vec<f64> = result.rows.iter().map(|r| r[ix]).collect();
    let mut ys: Vec<f64> = result.rows.iter().map(|r| r[iy]).collect();
    for v in [&mut xs, &mut ys] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let vr = finite_range(result.rows.iter().map(|r| r[iv]));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 2.0 + 8.0, HEIGHT - MARGIN);
    let cw = (r - l) / xs.len() as f64;
    let ch = (b - t) / ys.len() as f64;
    let mut out = String::new();
    svg_header(&mut out, &format!("{} ({value})", result.name));
    for row in &result.rows {
        let i = xs.partition_point(|&v| v < row[ix]);
        let j = ys.partition_point(|&v| v < row[iy]);
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            l + i as f64 * cw,
            b - (j + 1) as f64 * ch,
            cw + 0.05,
            ch + 0.05,
            heat_color((row[iv] - vr.0) / (vr.1 - vr.0))
        );
    }
    svg_axes(&mut out, (x, xs[0], xs[xs.len() - 1]), (y, ys[0], ys[ys.len() - 1]));
    out.push_str("</svg>\n");
    Ok(out)
}

/// Static SVG rendering of a result using its declared layout: line charts
/// for series, one line per group for grouped tables and a heatmap for grids.
pub fn emit_svg(result: &ExperimentResult) -> Result<String> {
    if result.rows.is_empty() {
        return Err(Error::Config(format!("result {} has an empty table; nothing to plot", result.name)));
    }
    match &result.layout {
        Layout::Series { x, ys } => {
            let ix = column_index(result, x)?;
            let mut series = Vec::new();
            for y in ys {
                let iy = column_index(result, y)?;
                series.push((y.clone(), result.rows.iter().map(|r| (r[ix], r[iy])).collect()));
            }
            Ok(lines_svg(result, series, x, if ys.len() == 1 { &ys[0] } else { "value" }))
        }
        Layout::Grouped { x, y, by } => {
            let (ix, iy) = (column_index(result, x)?, column_index(result, y)?);
            let keys: Vec<usize> = by.iter().map(|k| column_index(result, k)).collect::<Result<_>>()?;
            let mut groups: Vec<(Vec<f64>, Vec<(f64, f64)>)> = Vec::new();
            for row in &result.rows {
                let key: Vec<f64> = keys.iter().map(|&k| row[k]).collect();
                match groups.iter_mut().find(|g| g.0 == key) {
                    Some(g) => g.1.push((row[ix], row[iy])),
                    None => groups.push((key, vec![(row[ix], row[iy])])),
                }
            }
            let series = groups
                .into_iter()
                .map(|(key, pts)| {
                    let label = by.iter().zip(&key).map(|(n, v)| format!("{n}={}", short(*v))).collect::<Vec<_>>().join(" ");
                    (label, pts)
                })
                .collect();
            Ok(lines_svg(result, series, x, y))
        }
        Layout::Grid { x, y, value } => heatmap_svg(result, x, y, value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ExperimentResult {
        let mut r = ExperimentResult::new("demo", vec!["t_ns".into(), "p_q1".into()], Layout::Series {
            x: "t_ns".into(),
            ys: vec!["p_q1".into()],
        });
        r.push(vec![0.0, 1.0]);
        r.push(vec![1.0, 0.25]);
        r
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(166.666666666), "166.666667");
        assert_eq!(format_number(0.5), "0.5");
        assert_eq!(format_number(-0.0), "0");
        assert_eq!(format_number(-1e-12), "-1.00000000e-12");
        assert_eq!(format_number(1.0 / 3.0), "0.333333333");
        assert_eq!(format_number(2e9), "2.00000000e9");
        assert_eq!(format_number(f64::NAN), "nan");
        assert_eq!(format_number(600.0), "600");
        assert_eq!(format_number(-3.14159265358979), "-3.14159265");
    }

    #[test]
    fn csv_has_header_and_rows() {
        assert_eq!(to_csv(&table()), "t_ns,p_q1\n0,1\n1,0.25\n");
    }

    #[test]
    fn csv_parses_back() {
        let back = parse_csv("demo", &to_csv(&table())).unwrap();
        assert_eq!(back.rows, table().rows);
        assert!(parse_csv("x", "a,b\n1\n").is_err());
        assert!(parse_csv("x", "").is_err());
    }

    #[test]
    fn json_mirrors_table() {
        let v: Value = serde_json::from_str(&to_json(&table())).unwrap();
        assert_eq!(v["columns"][1], "p_q1");
        assert_eq!(v["rows"][1][1], 0.25);
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(config_hash(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn svg_deterministic_and_rejects_empty() {
        assert_eq!(emit_svg(&table()).unwrap(), emit_svg(&table()).unwrap());
        let mut empty = table();
        empty.rows.clear();
        assert!(emit_svg(&empty).is_err());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputDir::acquire(dir.path()).unwrap();
        assert!(matches!(OutputDir::acquire(dir.path()), Err(Error::Io(_))));
        drop(a);
        let b = OutputDir::acquire(dir.path()).unwrap();
        let manifest = RunManifest::for_result(&table(), vec![]);
        let files = b.write(&table(), Format::Csv, &manifest, true).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(fs::read_to_string(&files[0]).unwrap(), to_csv(&table()));
    }
}
