use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ReportError, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    EpsSweep,
    LayerGain,
    Staircase,
    DecisionMap,
    AngularPolar,
    SpectrumScatter,
    Convergence,
}

impl PlotKind {
    pub const ALL: [PlotKind; 7] = [
        PlotKind::EpsSweep,
        PlotKind::LayerGain,
        PlotKind::Staircase,
        PlotKind::DecisionMap,
        PlotKind::AngularPolar,
        PlotKind::SpectrumScatter,
        PlotKind::Convergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::EpsSweep => "eps_sweep",
            PlotKind::LayerGain => "layer_gain",
            PlotKind::Staircase => "staircase",
            PlotKind::DecisionMap => "decision_map",
            PlotKind::AngularPolar => "angular_polar",
            PlotKind::SpectrumScatter => "spectrum_scatter",
            PlotKind::Convergence => "convergence",
        }
    }
}

impl FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.replace('-', "_").to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                format!("unknown plot kind `{s}` (expected one of {})", names.join(", "))
            })
    }
}

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f",
];

#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Option<Axis> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return None;
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo <= 0.0 {
            let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.5 };
            lo -= pad;
            hi += pad;
        }
        Some(Axis { lo, hi, log })
    }

    fn frac(&self, v: f64) -> Option<f64> {
        let v = if self.log {
            if v <= 0.0 {
                return None;
            }
            v.log10()
        } else {
            v
        };
        v.is_finite().then(|| (v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let step = ((self.hi - self.lo) / 8.0).ceil().max(1.0);
            let mut out = Vec::new();
            let mut e = self.lo;
            while e <= self.hi + 1e-9 {
                out.push((e, format!("1e{}", e as i64)));
                e += step;
            }
            out
        } else {
            (0..=4)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                    (v, format!("{v:.3e}"))
                })
                .collect()
        }
    }
}

struct Frame {
    x: Axis,
    y: Axis,
    body: String,
}

impl Frame {
    fn px(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let fx = self.x.frac(x)?;
        let fy = self.y.frac(y)?;
        Some((LEFT + fx * (W - LEFT - RIGHT), H - BOTTOM - fy * (H - TOP - BOTTOM)))
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str) {
        let coords: Vec<String> = pts
            .iter()
            .filter_map(|&(x, y)| self.px(x, y))
            .map(|(a, b)| format!("{a:.2},{b:.2}"))
            .collect();
        if coords.len() > 1 {
            let _ = writeln!(
                self.body,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
                coords.join(" ")
            );
        }
    }

    fn dots(&mut self, pts: &[(f64, f64)], color: &str) {
        for &(x, y) in pts {
            if let Some((a, b)) = self.px(x, y) {
                let _ = writeln!(self.body, r#"<circle cx="{a:.2}" cy="{b:.2}" r="2" fill="{color}"/>"#);
            }
        }
    }
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn finish_axes(frame: &Frame, title: &str, xlabel: &str, ylabel: &str, legend: &[(String, &str)]) -> String {
    let mut svg = header(title);
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y1 - y0
    );
    for (v, label) in frame.x.ticks() {
        let px = x0 + (v - frame.x.lo) / (frame.x.hi - frame.x.lo) * (x1 - x0);
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{label}</text>"#,
            y1 + 4.0,
            y1 + 16.0
        );
    }
    for (v, label) in frame.y.ticks() {
        let py = y1 - (v - frame.y.lo) / (frame.y.hi - frame.y.lo) * (y1 - y0);
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
    svg.push_str(&frame.body);
    for (i, (name, color)) in legend.iter().enumerate() {
        let y = y0 + 14.0 + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{y}">{}</text>"#,
            x1 - 110.0,
            y - 9.0,
            x1 - 96.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Rows grouped by a label column, in first-appearance order.
fn grouped(labels: &[&str], xs: &[f64], ys: &[f64]) -> Vec<(String, Vec<(f64, f64)>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for ((l, &x), &y) in labels.iter().zip(xs).zip(ys) {
        if !groups.contains_key(*l) {
            order.push(l.to_string());
        }
        groups.entry(l.to_string()).or_default().push((x, y));
    }
    order
        .into_iter()
        .map(|l| {
            let pts = groups.remove(&l).unwrap_or_default();
            (l, pts)
        })
        .collect()
}

fn no_data(kind: PlotKind) -> ReportError {
    ReportError::Plot(format!("no plottable values for {}", kind.name()))
}

fn line_chart(
    kind: PlotKind,
    groups: Vec<(String, Vec<(f64, f64)>)>,
    log_x: bool,
    log_y: bool,
    labels: (&str, &str, &str),
) -> Result<String, ReportError> {
    let all = || groups.iter().flat_map(|(_, p)| p.iter().copied());
    let x = Axis::fit(all().map(|p| p.0), log_x).ok_or_else(|| no_data(kind))?;
    let y = Axis::fit(all().map(|p| p.1), log_y).ok_or_else(|| no_data(kind))?;
    let mut frame = Frame { x, y, body: String::new() };
    let mut legend = Vec::new();
    for (i, (name, pts)) in groups.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        frame.polyline(pts, color);
        frame.dots(pts, color);
        if i < 12 {
            legend.push((name.clone(), color));
        }
    }
    Ok(finish_axes(&frame, labels.0, labels.1, labels.2, &legend))
}

fn decision_raster(t: &Table) -> Result<String, ReportError> {
    let rows: Vec<usize> = t.floats("row")?.iter().map(|&r| r as usize).collect();
    let cols: Vec<usize> = t.floats("col")?.iter().map(|&c| c as usize).collect();
    let winners = t.strings("winner")?;
    let n_rows = rows.iter().max().map_or(0, |m| m + 1);
    let n_cols = cols.iter().max().map_or(0, |m| m + 1);
    let side = (W - LEFT - RIGHT).min(H - TOP - BOTTOM);
    let (cw, ch) = (side / n_cols as f64, side / n_rows as f64);
    let mut svg = header("Decision map (white: first token, black: second)");
    let _ = writeln!(svg, r#"<g shape-rendering="crispEdges">"#);
    for ((&r, &c), w) in rows.iter().zip(&cols).zip(&winners) {
        let fill = match *w {
            "first" => "white",
            "second" => "black",
            _ => "#d62728",
        };
        // row 0 is the most negative ε₂, drawn at the bottom
        let x = LEFT + c as f64 * cw;
        let y = TOP + (n_rows - 1 - r) as f64 * ch;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.3}" y="{y:.3}" width="{cw:.3}" height="{ch:.3}" fill="{fill}"/>"#
        );
    }
    let _ = writeln!(
        svg,
        "</g>\n<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{side:.3}\" height=\"{side:.3}\" fill=\"none\" stroke=\"#7f7f7f\"/>"
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">ε along dir_i</text>"#,
        LEFT + side / 2.0,
        TOP + side + 20.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn polar(t: &Table) -> Result<String, ReportError> {
    let theta = t.floats("theta")?;
    let s = t.floats("s_max")?;
    let peak = s.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(no_data(PlotKind::AngularPolar));
    }
    let (cx, cy) = (W / 2.0, TOP + (H - TOP - BOTTOM) / 2.0 + 8.0);
    let radius = (H - TOP - BOTTOM) / 2.0;
    let mut svg = header(&format!("Angular stability profile (outer ring s_max = {peak:e})"));
    for frac in [0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            svg,
            "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"{:.2}\" fill=\"none\" stroke=\"#cccccc\"/>",
            radius * frac
        );
    }
    let pts: Vec<String> = theta
        .iter()
        .zip(&s)
        .filter(|(_, v)| v.is_finite())
        .map(|(th, v)| {
            let r = radius * v / peak;
            format!("{:.2},{:.2}", cx + r * th.cos(), cy - r * th.sin())
        })
        .collect();
    let _ = writeln!(
        svg,
        "<polygon fill=\"#1f77b4\" fill-opacity=\"0.25\" stroke=\"#1f77b4\" points=\"{}\"/>",
        pts.join(" ")
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Renders `records` as a standalone SVG document. Output depends only on
/// the table contents.
pub fn render(records: &Table, kind: PlotKind) -> Result<String, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Plot("no records to plot".into()));
    }
    let t = records;
    match kind {
        PlotKind::EpsSweep => {
            let groups = grouped(&t.strings("direction_label")?, &t.floats("eps")?, &t.floats("d_eff")?);
            line_chart(kind, groups, true, true, ("Effective directional number", "ε", "D(ε, v)"))
        }
        PlotKind::LayerGain => {
            let eps = t.floats("eps")?;
            let title = format!("Layer-wise gain at ε = {:e}", eps[0]);
            let groups = grouped(&t.strings("direction_label")?, &t.floats("layer")?, &t.floats("gain")?);
            line_chart(kind, groups, false, true, (&title, "tap", "gain"))
        }
        PlotKind::Staircase => {
            let x = t.floats("index")?;
            let (y, label) = if t.has_column("cumulative") {
                (t.floats("cumulative")?, "‖m_i − m_0‖")
            } else {
                (t.floats("drift")?, "drift ‖m_i − m_0‖")
            };
            let pts: Vec<(f64, f64)> = x.into_iter().zip(y).collect();
            line_chart(kind, vec![("state".into(), pts)], false, false, ("Micro-continuity", "step", label))
        }
        PlotKind::DecisionMap => decision_raster(t),
        PlotKind::AngularPolar => polar(t),
        PlotKind::SpectrumScatter => {
            let pts: Vec<(f64, f64)> = t.floats("sigma")?.into_iter().zip(t.floats("s_max")?).collect();
            let all = || pts.iter().copied();
            let x = Axis::fit(all().map(|p| p.0), true).ok_or_else(|| no_data(kind))?;
            let y = Axis::fit(all().map(|p| p.1), true).ok_or_else(|| no_data(kind))?;
            let mut frame = Frame { x, y, body: String::new() };
            frame.dots(&pts, PALETTE[0]);
            Ok(finish_axes(&frame, "Boundary along singular directions", "σ_k", "s_max", &[]))
        }
        PlotKind::Convergence => {
            let n = t.floats("n_samples")?;
            let k = t.floats("kappa")?;
            let mut by_n: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
            for (&n, &k) in n.iter().zip(&k) {
                by_n.entry(n as u64).or_default().push(k);
            }
            let means: Vec<(f64, f64)> = by_n
                .iter()
                .map(|(&n, v)| (n as f64, v.iter().sum::<f64>() / v.len() as f64))
                .collect();
            let raw: Vec<(f64, f64)> = n.into_iter().zip(k).collect();
            let all = || raw.iter().copied();
            let x = Axis::fit(all().map(|p| p.0), true).ok_or_else(|| no_data(kind))?;
            let y = Axis::fit(all().map(|p| p.1), false).ok_or_else(|| no_data(kind))?;
            let mut frame = Frame { x, y, body: String::new() };
            frame.dots(&raw, PALETTE[7]);
            frame.polyline(&means, PALETTE[0]);
            let legend = [("repeats".to_string(), PALETTE[7]), ("mean".to_string(), PALETTE[0])];
            Ok(finish_axes(&frame, "Noise-averaged estimate", "n samples", "κ_smooth", &legend))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&str], rows: &[&[&str]]) -> Table {
        Table {
            columns: cols.iter().map(|c| c.to_string()).collect(),
            rows: rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect(),
        }
    }

    #[test]
    fn kinds_parse_by_name() {
        for k in PlotKind::ALL {
            assert_eq!(k.name().parse::<PlotKind>().unwrap(), k);
        }
        assert_eq!("eps-sweep".parse::<PlotKind>().unwrap(), PlotKind::EpsSweep);
        assert!("pie".parse::<PlotKind>().is_err());
    }

    #[test]
    fn empty_and_mismatched_records_fail() {
        let empty = table(&["eps", "d_eff", "direction_label"], &[]);
        assert!(render(&empty, PlotKind::EpsSweep).is_err());
        let t = table(&["layer", "gain"], &[&["0", "1e0"]]);
        assert!(matches!(render(&t, PlotKind::EpsSweep), Err(ReportError::Plot(_))));
    }

    #[test]
    fn sweep_render_is_stable() {
        let t = table(
            &["eps", "d_eff", "direction_label"],
            &[&["1e-3", "2e0", "v1"], &["1e-2", "3e0", "v1"], &["1e-3", "0e0", "e1"]],
        );
        let a = render(&t, PlotKind::EpsSweep).unwrap();
        assert_eq!(a, render(&t, PlotKind::EpsSweep).unwrap());
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
    }
}
