use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::*;
use super::plot::{render, PlotKind};
use super::table::{ConvergenceRow, DecisionCell, InstabilityRow, SpectrumRow};
use super::{ReportError, Table, SCHEMA_VERSION};
use crate::model::{build_model, EmbeddingPoint, PointInit, RepresentationMap, ToyModel};
use crate::numerics::PrecisionMode;
use crate::probes::*;
use crate::spectrum::{compute_spectrum, default_fd_step, SpectrumCache, SpectrumResult};

/// JSON sidecar written next to every data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub artifact_version: String,
    pub probe: String,
    pub data_file: String,
    pub plot_file: Option<String>,
    pub columns: Vec<String>,
    pub record_count: usize,
    pub flagged_count: usize,
    pub model_seed: u64,
    pub precision: PrecisionMode,
    pub reduction: String,
    pub thresholds: RegimeThresholds,
    pub spectrum: SpectrumInfo,
    pub wall_time_seconds: f64,
    pub summary: Value,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumInfo {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub fd_step: f64,
    pub cache_file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub probe: &'static str,
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub svg: Option<PathBuf>,
    pub records: usize,
    pub flagged: usize,
    pub summary: Value,
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| ReportError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| ReportError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ReportError::io(path, e))
}

fn refuse_collisions(paths: &[&Path], overwrite: bool) -> Result<(), ReportError> {
    if overwrite {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(ReportError::Collision(p.to_path_buf())),
        None => Ok(()),
    }
}

/// Resolves `v<k>` (1-based singular vector), `e<i>` (1-based axis) or `rand<seed>`.
pub fn resolve_direction(
    name: &str,
    width: usize,
    spectrum: &SpectrumResult,
) -> Result<LabeledDirection, ReportError> {
    let bad = || {
        ReportError::Invalid(format!(
            "direction `{name}` is not v<1..={}>, e<1..={width}> or rand<seed>",
            spectrum.len()
        ))
    };
    let index = |s: &str, max: usize| s.parse::<usize>().ok().filter(|&k| k >= 1 && k <= max);
    if let Some(seed) = name.strip_prefix("rand") {
        let seed = seed.parse::<u64>().map_err(|_| bad())?;
        return Ok(LabeledDirection::random(width, seed));
    }
    if let Some(k) = name.strip_prefix('v') {
        let k = index(k, spectrum.len()).ok_or_else(bad)?;
        return Ok(LabeledDirection::singular(spectrum, k - 1));
    }
    if let Some(i) = name.strip_prefix('e') {
        let i = index(i, width).ok_or_else(bad)?;
        return Ok(LabeledDirection::coordinate(width, i - 1));
    }
    Err(bad())
}

fn cached_spectrum(
    model: &ToyModel,
    cache: &SpectrumCache,
    key: u64,
    p: &EmbeddingPoint,
) -> Result<SpectrumResult, ReportError> {
    let step = default_fd_step(p.perturbed_slice());
    Ok(cache.get_or_compute(key, p, step, || compute_spectrum(model, p, Some(step)))?)
}

struct Context {
    model: ToyModel,
    point: EmbeddingPoint,
    cache: SpectrumCache,
    key: u64,
    spectrum: SpectrumResult,
}

impl Context {
    fn new(cfg: &RunConfig) -> Result<Self, ReportError> {
        let model = build_model(cfg.model.clone())?;
        let point = cfg.point.build(&cfg.model);
        let cache = SpectrumCache::new(cfg.cache_dir());
        let key = cfg.model.fingerprint();
        let spectrum = cached_spectrum(&model, &cache, key, &point)?;
        Ok(Self {
            model,
            point,
            cache,
            key,
            spectrum,
        })
    }

    fn spectrum_at(&self, p: &EmbeddingPoint) -> Result<SpectrumResult, ReportError> {
        cached_spectrum(&self.model, &self.cache, self.key, p)
    }

    fn spectrum_file(&self, p: &EmbeddingPoint) -> PathBuf {
        self.cache
            .path_for(self.key, p, default_fd_step(p.perturbed_slice()))
    }

    fn direction(&self, name: &str) -> Result<LabeledDirection, ReportError> {
        resolve_direction(name, self.model.width(), &self.spectrum)
    }

    fn directions(&self, names: &[String]) -> Result<Vec<LabeledDirection>, ReportError> {
        names.iter().map(|n| self.direction(n)).collect()
    }

    /// Start of a window of `span` centred on the FP32 boundary along `dir`.
    fn centred_start(&self, dir: &LabeledDirection, span: f64) -> Result<f64, ReportError> {
        let base = self.model.evaluate(&self.point, &[])?;
        let r = search_boundary(&self.model, &self.point, dir, &base, &BoundaryConfig::default());
        Ok(match r.status {
            BoundaryStatus::Found => (r.s_max - span / 2.0).max(0.0),
            _ => 0.0,
        })
    }
}

struct ProbeOutput {
    table: Table,
    summary: Value,
    flagged: usize,
    thresholds: RegimeThresholds,
    plot: PlotKind,
}

impl ProbeOutput {
    fn new(table: Table, summary: Value, plot: PlotKind) -> Self {
        Self {
            table,
            summary,
            flagged: 0,
            thresholds: RegimeThresholds::default(),
            plot,
        }
    }
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > 0.0 && lo.is_finite() {
        hi / lo
    } else {
        f64::NAN
    }
}

fn boundary_summary<'a>(results: impl Iterator<Item = &'a BoundaryResult> + Clone) -> (Value, usize) {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in results.clone() {
        let key = serde_json::to_value(r.status).ok().and_then(|v| v.as_str().map(str::to_string));
        *counts.entry(key.unwrap_or_default()).or_default() += 1;
    }
    let found = results.clone().filter(|r| r.status == BoundaryStatus::Found);
    let flagged = results.filter(|r| r.status == BoundaryStatus::NonFinite).count();
    (json!({ "status_counts": counts, "s_max_spread": spread(found.map(|r| r.s_max)) }), flagged)
}

fn run_probe(ctx: &Context, probe: &ProbeSpec) -> Result<ProbeOutput, ReportError> {
    match probe {
        ProbeSpec::Sweep(s) => {
            let cfg = SweepConfig {
                eps_grid: s.eps.values()?,
                directions: ctx.directions(&s.directions)?,
                precision: ctx.model.precision(),
                base_point: ctx.point.clone(),
                thresholds: s.thresholds,
            };
            let recs = directional_sweep(&ctx.model, &ctx.spectrum, &cfg)?;
            let per_direction: Vec<Value> = recs
                .chunk_by(|a, b| a.direction_index == b.direction_index)
                .map(|chunk| {
                    let regimes: Vec<Regime> = chunk.iter().map(|r| r.regime).collect();
                    let largest_constant = chunk
                        .iter()
                        .filter(|r| r.bitwise_constant)
                        .map(|r| r.eps)
                        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
                    json!({
                        "direction": chunk[0].direction_label,
                        "largest_constant_eps": largest_constant,
                        "max_d_eff": chunk.iter().map(|r| r.d_eff).filter(|d| d.is_finite()).fold(0.0, f64::max),
                        "ordered_trichotomy": is_ordered_trichotomy(&regimes, 2),
                    })
                })
                .collect();
            let mut out = ProbeOutput::new(
                Table::from_records(&recs),
                json!({ "directions": per_direction }),
                PlotKind::EpsSweep,
            );
            out.flagged = recs.iter().filter(|r| r.flagged).count();
            out.thresholds = s.thresholds;
            Ok(out)
        }
        ProbeSpec::LayerGain(s) => {
            let dirs = ctx.directions(&s.directions)?;
            let t = layerwise_gain(&ctx.model, &ctx.point, s.eps, &dirs)?;
            let summary = json!({ "final_layer": t.labels.iter().zip(t.final_layer()).map(|(l, g)| json!({"direction": l, "gain": g})).collect::<Vec<_>>() });
            Ok(ProbeOutput::new(Table::from_records(&t.records()), summary, PlotKind::LayerGain))
        }
        ProbeSpec::Instability(s) => {
            if s.n_points < 2 || !(s.step > 0.0) {
                return Err(ReportError::Invalid("instability needs n_points ≥ 2 and step > 0".into()));
            }
            let dir = ctx.direction(&s.direction)?;
            let span = s.step * (s.n_points - 1) as f64;
            let start = match s.start {
                Some(v) => v,
                None => ctx.centred_start(&dir, span)?,
            };
            let eps: Vec<f64> = (0..s.n_points).map(|i| start + i as f64 * s.step).collect();
            let r = instability_sweep(&ctx.model, &ctx.point, &dir, &eps)?;
            let rows: Vec<InstabilityRow> = (0..eps.len())
                .map(|i| InstabilityRow {
                    index: i,
                    eps: eps[i],
                    instability: if i == 0 { f64::NAN } else { r.instabilities[i - 1] },
                    drift: r.drifts[i],
                    margin: r.margins[i],
                })
                .collect();
            let summary = json!({ "start": start, "statistics": r.summary });
            Ok(ProbeOutput::new(Table::from_records(&rows), summary, PlotKind::Staircase))
        }
        ProbeSpec::MicroContinuity(s) => {
            let dir = ctx.direction(&s.direction)?;
            let start = match s.start {
                Some(v) => v,
                None => ctx.centred_start(&dir, s.delta * s.n_steps as f64)?,
            };
            let st = micro_continuity(&ctx.model, &ctx.point, &dir, start, s.n_steps, s.delta)?;
            let summary = json!({
                "start": start,
                "stalls": st.stalls,
                "jumps": st.jumps,
                "stall_fraction": st.stall_fraction(),
            });
            Ok(ProbeOutput::new(Table::from_records(&st.steps), summary, PlotKind::Staircase))
        }
        ProbeSpec::DecisionMap(s) => {
            let tie_dir = ctx.direction(&s.tie_direction)?;
            let x0 = find_near_tie(&ctx.model, &ctx.point, &tie_dir, &s.near_tie)?;
            let local = ctx.spectrum_at(&x0)?;
            let width = ctx.model.width();
            let di = resolve_direction(&s.dir_i, width, &local)?;
            let dj = resolve_direction(&s.dir_j, width, &local)?;
            let map = decision_map(&ctx.model, &x0, &di, &dj, s.eps_range, s.step)?;
            let cells: Vec<DecisionCell> = map
                .grid
                .iter()
                .enumerate()
                .flat_map(|(r, row)| {
                    let axes = &map.axes;
                    row.iter().enumerate().map(move |(c, &w)| DecisionCell {
                        row: r,
                        col: c,
                        eps_i: axes.offset(c),
                        eps_j: axes.offset(r),
                        winner: w,
                    })
                })
                .collect();
            let margin = ctx.model.evaluate(&x0, &[])?.margin;
            let summary = json!({
                "flip_frequency": map.flip_frequency,
                "fragmentation": map.fragmentation,
                "crossing_density": map.crossing_density,
                "overflow_cells": map.overflow_cells,
                "cells_per_side": map.axes.cells_per_side(),
                "tokens": [map.tokens.0, map.tokens.1],
                "margin_at_x0": margin,
                "x0_spectrum_file": ctx.spectrum_file(&x0).display().to_string(),
            });
            Ok(ProbeOutput::new(Table::from_records(&cells), summary, PlotKind::DecisionMap))
        }
        ProbeSpec::AngularBoundary(s) => {
            let (a, b) = (ctx.direction(&s.dir_a)?, ctx.direction(&s.dir_b)?);
            let recs = angular_boundary(&ctx.model, &ctx.point, &a, &b, s.n_angles, &s.search)?;
            let (summary, flagged) = boundary_summary(recs.iter().map(|r| &r.result));
            let mut out = ProbeOutput::new(Table::from_records(&recs), summary, PlotKind::AngularPolar);
            out.flagged = flagged;
            Ok(out)
        }
        ProbeSpec::SpectrumBoundary(s) => {
            let recs = spectrum_boundary(&ctx.model, &ctx.point, &ctx.spectrum, &s.search)?;
            let (mut summary, flagged) = boundary_summary(recs.iter().map(|r| &r.result));
            summary["sigma_ratio"] = json!(ctx.spectrum.condition_number());
            let mut out = ProbeOutput::new(Table::from_records(&recs), summary, PlotKind::SpectrumScatter);
            out.flagged = flagged;
            Ok(out)
        }
        ProbeSpec::NoiseKappa(s) => {
            let dir = ctx.direction(&s.direction)?;
            let plain = NoiseConfig { n_samples: 1, noise_mag: 0.0, seed: 0 };
            let d_eff = noise_averaged_kappa(&ctx.model, &ctx.point, &dir, s.eps, &plain)?;
            let mut rows = Vec::new();
            let mut stats = Vec::new();
            for &n in &s.samples {
                let mut ks = Vec::with_capacity(s.repeats);
                for r in 0..s.repeats {
                    let seed = s.seed + r as u64;
                    let cfg = NoiseConfig { n_samples: n, noise_mag: s.noise_mag, seed };
                    let kappa = noise_averaged_kappa(&ctx.model, &ctx.point, &dir, s.eps, &cfg)?;
                    ks.push(kappa);
                    rows.push(ConvergenceRow { n_samples: n, repeat: r, seed, eps: s.eps, kappa });
                }
                let (mean, std) = mean_std(&ks);
                stats.push(json!({ "n_samples": n, "mean": mean, "std": std }));
            }
            let summary = json!({ "plain_d_eff": d_eff, "by_samples": stats });
            Ok(ProbeOutput::new(Table::from_records(&rows), summary, PlotKind::Convergence))
        }
    }
}

struct Outputs {
    csv: PathBuf,
    manifest: PathBuf,
    svg: PathBuf,
}

impl Outputs {
    fn new(dir: &Path, stem: &str) -> Self {
        Self {
            csv: dir.join(format!("{stem}.csv")),
            manifest: dir.join(format!("{stem}.manifest.json")),
            svg: dir.join(format!("{stem}.svg")),
        }
    }

    fn check(&self, cfg: &RunConfig) -> Result<(), ReportError> {
        let mut paths = vec![self.csv.as_path(), self.manifest.as_path()];
        if cfg.plot {
            paths.push(&self.svg);
        }
        refuse_collisions(&paths, cfg.overwrite)
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

#[allow(clippy::too_many_arguments)]
fn emit(
    cfg: &RunConfig,
    ctx: &Context,
    probe: &'static str,
    paths: &Outputs,
    out: ProbeOutput,
    svg: Option<String>,
    started: Instant,
) -> Result<RunOutcome, ReportError> {
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        probe: probe.to_string(),
        data_file: file_name(&paths.csv),
        plot_file: svg.as_ref().map(|_| file_name(&paths.svg)),
        columns: out.table.columns.clone(),
        record_count: out.table.len(),
        flagged_count: out.flagged,
        model_seed: cfg.model.seed,
        precision: cfg.model.precision,
        reduction: cfg.model.reduction.to_string(),
        thresholds: out.thresholds,
        spectrum: SpectrumInfo {
            sigma_max: ctx.spectrum.sigma_max(),
            sigma_min: ctx.spectrum.sigma_min(),
            fd_step: ctx.spectrum.fd_step,
            cache_file: ctx.spectrum_file(&ctx.point).display().to_string(),
        },
        wall_time_seconds: started.elapsed().as_secs_f64(),
        summary: out.summary.clone(),
        config: cfg.clone(),
    };
    let csv = out.table.to_csv_bytes()?;
    // the manifest lands first so a data file never exists without one
    write_atomic(&paths.manifest, &serde_json::to_vec_pretty(&manifest)?)?;
    write_atomic(&paths.csv, &csv)?;
    if let Some(svg) = &svg {
        write_atomic(&paths.svg, svg.as_bytes())?;
    }
    if out.flagged > 0 {
        return Err(ReportError::Flagged {
            count: out.flagged,
            dir: cfg.output_dir.clone(),
        });
    }
    Ok(RunOutcome {
        probe,
        csv: paths.csv.clone(),
        manifest: paths.manifest.clone(),
        svg: svg.map(|_| paths.svg.clone()),
        records: out.table.len(),
        flagged: out.flagged,
        summary: out.summary,
    })
}

/// Executes the configured probe and writes `<probe>.csv`, its manifest and
/// optionally `<probe>.svg` under `output_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, ReportError> {
    cfg.validate()?;
    let started = Instant::now();
    let probe = cfg.probe.name();
    let paths = Outputs::new(&cfg.output_dir, probe);
    paths.check(cfg)?;
    let ctx = Context::new(cfg)?;
    let out = run_probe(&ctx, &cfg.probe)?;
    let svg = if cfg.plot && !out.table.is_empty() {
        Some(render(&out.table, out.plot)?)
    } else {
        None
    };
    emit(cfg, &ctx, probe, &paths, out, svg, started)
}

/// Computes (or loads) the spectrum at the configured point and writes
/// `spectrum.csv` with its manifest.
pub fn run_spectrum(cfg: &RunConfig) -> Result<RunOutcome, ReportError> {
    cfg.validate()?;
    let started = Instant::now();
    let paths = Outputs::new(&cfg.output_dir, "spectrum");
    refuse_collisions(&[&paths.csv, &paths.manifest], cfg.overwrite)?;
    let ctx = Context::new(cfg)?;
    let rows: Vec<SpectrumRow> = ctx
        .spectrum
        .sigma
        .iter()
        .enumerate()
        .map(|(k, &sigma)| SpectrumRow { k, sigma })
        .collect();
    let summary = json!({ "condition_number": ctx.spectrum.condition_number() });
    let out = ProbeOutput::new(Table::from_records(&rows), summary, PlotKind::SpectrumScatter);
    emit(cfg, &ctx, "spectrum", &paths, out, None, started)
}

/// Renders a CSV written by [`run`]. `out` defaults to the CSV path with an
/// `.svg` extension.
pub fn plot_csv(
    csv: &Path,
    kind: PlotKind,
    out: Option<&Path>,
    overwrite: bool,
) -> Result<PathBuf, ReportError> {
    let target = out.map_or_else(|| csv.with_extension("svg"), Path::to_path_buf);
    refuse_collisions(&[&target], overwrite)?;
    let table = Table::read_csv(csv)?;
    let svg = render(&table, kind)?;
    write_atomic(&target, svg.as_bytes())?;
    Ok(target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Demo {
    /// Directional sweeps in all three precisions.
    Regimes,
    /// Layer-wise gains at a signal-scale and a rounding-scale ε.
    Avalanche,
    /// Angular and spectrum-wide boundary searches.
    Boundary,
}

impl FromStr for Demo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regimes" => Ok(Demo::Regimes),
            "avalanche" => Ok(Demo::Avalanche),
            "boundary" => Ok(Demo::Boundary),
            _ => Err(format!("unknown demo `{s}` (expected regimes, avalanche or boundary)")),
        }
    }
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// The canned configurations behind `demo`, one per stage, writing under `out_dir/<stage>`.
pub fn demo_configs(demo: Demo, out_dir: &Path) -> Vec<RunConfig> {
    let base = |stage: &str, probe: ProbeSpec| RunConfig {
        schema_version: SCHEMA_VERSION,
        output_dir: out_dir.join(stage),
        plot: true,
        overwrite: false,
        cache_dir: Some(out_dir.join("cache")),
        model: crate::model::ModelConfig::with_seed(0),
        point: PointConfig::default(),
        probe,
    };
    match demo {
        Demo::Regimes => PrecisionMode::ALL
            .iter()
            .map(|&p| {
                let mut cfg = base(
                    p.name(),
                    ProbeSpec::Sweep(SweepSpec {
                        eps: EpsGrid { min: 1e-20, max: 1e-1, n: 96 },
                        directions: names(&["v1", "v16", "v32", "v64", "e1", "rand7"]),
                        thresholds: RegimeThresholds::default(),
                    }),
                );
                cfg.model.precision = p;
                cfg
            })
            .collect(),
        Demo::Avalanche => [("eps_1e-1", 0.1), ("eps_1e-9", 1e-9)]
            .into_iter()
            .map(|(stage, eps)| {
                base(
                    stage,
                    ProbeSpec::LayerGain(LayerGainSpec {
                        eps,
                        directions: names(&["v1", "v64", "e1", "rand11"]),
                    }),
                )
            })
            .collect(),
        Demo::Boundary => {
            let angular = base("angular", ProbeSpec::AngularBoundary(AngularSpec::default()));
            let mut spectrum = base("spectrum", ProbeSpec::SpectrumBoundary(SpectrumBoundarySpec::default()));
            // entries sharing one binade keep the ULP uniform across coordinates
            spectrum.point = PointConfig {
                init: PointInit::Binade,
                scale: 2f64.powi(-6),
                ..PointConfig::default()
            };
            vec![angular, spectrum]
        }
    }
}

pub fn run_demo(
    demo: Demo,
    out_dir: &Path,
    overwrite: bool,
    precision: Option<PrecisionMode>,
) -> Result<Vec<RunOutcome>, ReportError> {
    demo_configs(demo, out_dir)
        .into_iter()
        .map(|mut cfg| {
            cfg.overwrite = overwrite;
            if let Some(p) = precision {
                cfg.model.precision = p;
            }
            run(&cfg)
        })
        .collect()
}
