use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::args::{PlotCmd, PlotKind};
use crate::commands::fit::LoadingsFile;
use crate::commands::TOOL;
use crate::error::{CliError, CliResult};
use crate::io::write_text;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

/// Numeric columns of a CSV keyed by header, plus string columns on demand.
struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn parse(bytes: &[u8], path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r.records().map(|rec| rec.map(|r| r.iter().map(str::to_string).collect())).collect::<Result<Vec<Vec<String>>, _>>()?;
        if rows.is_empty() {
            return Err(CliError::Input(format!("{}: no rows", path.display())));
        }
        Ok(Self { header, rows })
    }

    fn index(&self, name: &str) -> CliResult<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("column '{name}' not found; this input does not fit the selected plot kind")))
    }

    fn text(&self, name: &str) -> CliResult<Vec<String>> {
        let j = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[j].clone()).collect())
    }

    fn numbers(&self, name: &str) -> CliResult<Vec<f64>> {
        self.text(name)?
            .iter()
            .map(|s| if s == "NA" { Ok(f64::NAN) } else { s.parse().map_err(|_| CliError::Input(format!("column '{name}': '{s}' is not a number"))) })
            .collect()
    }
}

struct Svg(String);

impl Svg {
    fn new(provenance: &str, title: &str) -> Self {
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#);
        let _ = writeln!(s, "<!-- {provenance} -->");
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
        Self(s)
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(self.0, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"/>"#);
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(self.0, r##"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}" stroke="#444444" stroke-width="0.3"/>"##);
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(self.0, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}"/>"#);
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(self.0, r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#, coords.join(" "));
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, body: &str) {
        let _ = writeln!(self.0, r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">{}</text>"#, escape(body));
    }

    fn finish(mut self) -> String {
        self.0.push_str("</svg>\n");
        self.0
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Linear map of `[lo, hi]` onto `[a, b]`; degenerate ranges map to the middle.
fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        (a + b) / 2.0
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Axes with tick labels at both ends of each range.
fn axes(svg: &mut Svg, (x0, x1): (f64, f64), (y0, y1): (f64, f64), xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN, HEIGHT - MARGIN);
    svg.line(l, b, r, b, "black");
    svg.line(l, t, l, b, "black");
    svg.text(l, b + 14.0, "middle", &format!("{x0:.3}"));
    svg.text(r, b + 14.0, "middle", &format!("{x1:.3}"));
    svg.text(l - 4.0, b, "end", &format!("{y0:.3}"));
    svg.text(l - 4.0, t + 4.0, "end", &format!("{y1:.3}"));
    svg.text((l + r) / 2.0, b + 30.0, "middle", xlabel);
    svg.text(14.0, (t + b) / 2.0, "start", ylabel);
}

fn diverging(v: f64, max: f64) -> String {
    let t = if max > 0.0 { (v / max).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |c: f64| (255.0 - (255.0 - c) * t.abs()).round() as u8;
    let (r, g, b) = if t >= 0.0 { (fade(178.0), fade(24.0), fade(43.0)) } else { (fade(33.0), fade(102.0), fade(172.0)) };
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn heatmap(bytes: &[u8], provenance: &str) -> CliResult<String> {
    let file: LoadingsFile =
        serde_json::from_slice(bytes).map_err(|e| CliError::Input(format!("not a loadings file written by `fit`: {e}")))?;
    let comps = &file.loadings.components;
    let (p, n) = (file.variables.len(), file.sources.len());
    let cols = n * comps.len();
    let max = comps.iter().flat_map(|c| c.0.iter()).fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut svg = Svg::new(provenance, "Loadings by source and component");
    let (cw, ch) = ((WIDTH - 1.5 * MARGIN) / cols.max(1) as f64, (HEIGHT - 2.0 * MARGIN) / p.max(1) as f64);
    for (l, c) in comps.iter().enumerate() {
        for i in 0..n {
            let x = MARGIN + (l * n + i) as f64 * cw;
            for j in 0..p {
                svg.rect(x, MARGIN + j as f64 * ch, cw, ch, &diverging(c.0[(j, i)], max));
            }
            svg.text(x + cw / 2.0, HEIGHT - MARGIN + 12.0, "middle", &file.sources[i]);
        }
        svg.text(MARGIN + (l as f64 + 0.5) * n as f64 * cw, HEIGHT - MARGIN + 26.0, "middle", &format!("PC{}", l + 1));
    }
    for (j, v) in file.variables.iter().enumerate() {
        svg.text(MARGIN - 4.0, MARGIN + (j as f64 + 0.6) * ch, "end", v);
    }
    Ok(svg.finish())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn scree_box(csv: &Csv, provenance: &str) -> CliResult<String> {
    let comp = csv.numbers("component")?;
    let share = csv.numbers("explained_share")?;
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for (c, s) in comp.iter().zip(&share) {
        if s.is_finite() {
            groups.entry(*c as u64).or_default().push(*s);
        }
    }
    let (lo, hi) = range(share.iter().copied());
    let (lo, hi) = (lo.min(0.0), hi.max(lo));
    let mut svg = Svg::new(provenance, "Explained variance per source");
    axes(&mut svg, (1.0, groups.len() as f64), (lo, hi), "component", "share");
    let (t, b) = (MARGIN, HEIGHT - MARGIN);
    let w = (WIDTH - 1.5 * MARGIN) / groups.len().max(1) as f64;
    for (g, (c, vals)) in groups.iter_mut().enumerate() {
        vals.sort_by(f64::total_cmp);
        let y = |v: f64| scale(v, lo, hi, b, t);
        let x = MARGIN + (g as f64 + 0.5) * w;
        let q: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|q| quantile(vals, *q)).collect();
        svg.line(x, y(q[0]), x, y(q[1]), "black");
        svg.line(x, y(q[3]), x, y(q[4]), "black");
        svg.rect(x - w / 4.0, y(q[3]), w / 2.0, y(q[1]) - y(q[3]), "#bcd4e6");
        svg.line(x - w / 4.0, y(q[2]), x + w / 4.0, y(q[2]), "black");
        svg.text(x, b + 14.0, "middle", &c.to_string());
    }
    Ok(svg.finish())
}

fn path(csv: &Csv, provenance: &str) -> CliResult<String> {
    let gamma = csv.numbers("gamma")?;
    let eta = csv.numbers("eta")?;
    let tpo = csv.numbers("tpo")?;
    let selected = csv.text("selected")?;
    let mut curves: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for k in 0..eta.len() {
        curves.entry(format!("{:.4}", gamma[k])).or_default().push((eta[k], tpo[k]));
    }
    let xr = range(eta.iter().copied());
    let yr = range(tpo.iter().copied());
    let mut svg = Svg::new(provenance, "Trade-off product along the eta path");
    axes(&mut svg, xr, yr, "eta", "TPO");
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN, HEIGHT - MARGIN);
    let map = |(x, y): (f64, f64)| (scale(x, xr.0, xr.1, l, r), scale(y, yr.0, yr.1, b, t));
    for (c, (g, pts)) in curves.iter().enumerate() {
        let color = PALETTE[c % PALETTE.len()];
        let pts: Vec<(f64, f64)> = pts.iter().filter(|(_, y)| y.is_finite()).map(|p| map(*p)).collect();
        svg.polyline(&pts, color);
        svg.text(r - 4.0, t + 12.0 * (c as f64 + 1.0), "end", &format!("gamma {g}"));
    }
    for k in 0..eta.len() {
        if selected[k] == "true" && tpo[k].is_finite() {
            let (x, y) = map((eta[k], tpo[k]));
            svg.circle(x, y, 4.0, "black");
        }
    }
    Ok(svg.finish())
}

fn density(csv: &Csv, column: &str, provenance: &str) -> CliResult<String> {
    let values = csv.numbers(column)?;
    let sources = csv.text("source")?;
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (s, v) in sources.iter().zip(&values) {
        if v.is_finite() {
            groups.entry(s).or_default().push(*v);
        }
    }
    let xr = range(values.iter().copied());
    let pad = 0.1 * (xr.1 - xr.0).max(1e-12);
    let xr = (xr.0 - pad, xr.1 + pad);
    let grid: Vec<f64> = (0..=200).map(|k| xr.0 + (xr.1 - xr.0) * k as f64 / 200.0).collect();
    let curves: Vec<(&str, Vec<f64>)> = groups
        .iter()
        .map(|(s, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
            let h = (1.06 * sd * n.powf(-0.2)).max(1e-6 * (xr.1 - xr.0));
            let dens = grid
                .iter()
                .map(|g| v.iter().map(|x| (-0.5 * ((g - x) / h).powi(2)).exp()).sum::<f64>() / (n * h * (2.0 * std::f64::consts::PI).sqrt()))
                .collect();
            (*s, dens)
        })
        .collect();
    let ymax = curves.iter().flat_map(|(_, d)| d.iter().copied()).fold(0.0, f64::max);
    let mut svg = Svg::new(provenance, &format!("Density of {column} per source"));
    axes(&mut svg, xr, (0.0, ymax), column, "density");
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN / 2.0, MARGIN, HEIGHT - MARGIN);
    for (c, (s, d)) in curves.iter().enumerate() {
        let color = PALETTE[c % PALETTE.len()];
        let pts: Vec<(f64, f64)> = grid.iter().zip(d).map(|(x, y)| (scale(*x, xr.0, xr.1, l, r), scale(*y, 0.0, ymax, b, t))).collect();
        svg.polyline(&pts, color);
        svg.text(r - 4.0, t + 12.0 * (c as f64 + 1.0), "end", s);
    }
    Ok(svg.finish())
}

pub fn run(cmd: &PlotCmd) -> CliResult<()> {
    let bytes = std::fs::read(&cmd.input).map_err(|source| CliError::Read { path: cmd.input.clone(), source })?;
    let kind = match cmd.kind {
        PlotKind::LoadingsHeatmap => "loadings-heatmap",
        PlotKind::ScreeBox => "scree-box",
        PlotKind::Path => "path",
        PlotKind::Density => "density",
    };
    let name = cmd.input.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let provenance = format!("{TOOL}; kind {kind}; input {name} sha256 {:x}", Sha256::digest(&bytes));
    let svg = match cmd.kind {
        PlotKind::LoadingsHeatmap => heatmap(&bytes, &provenance)?,
        PlotKind::ScreeBox => scree_box(&Csv::parse(&bytes, &cmd.input)?, &provenance)?,
        PlotKind::Path => path(&Csv::parse(&bytes, &cmd.input)?, &provenance)?,
        PlotKind::Density => density(&Csv::parse(&bytes, &cmd.input)?, &cmd.column, &provenance)?,
    };
    write_text(&cmd.out, &svg)
}
