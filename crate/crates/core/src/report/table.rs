use std::path::Path;

use super::ReportError;
use crate::probes::{
    AngularRecord, BoundaryResult, BoundaryStatus, LayerGainRecord, SpectrumBoundaryRecord,
    StaircaseStep, SweepRecord, Winner,
};

/// Shortest round-trip decimal in scientific notation (`1e-14`, `3.5e2`).
pub fn fmt_float(x: f64) -> String {
    format!("{x:e}")
}

/// A record type that becomes one CSV row; columns follow the fields.
pub trait CsvRecord {
    const COLUMNS: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

/// Header plus string cells, as written to or read back from CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn from_records<R: CsvRecord>(records: &[R]) -> Self {
        Self {
            columns: R::COLUMNS.iter().map(|c| c.to_string()).collect(),
            rows: records.iter().map(CsvRecord::fields).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>, ReportError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner()
            .map_err(|e| ReportError::io("<csv buffer>", e.into_error()))
    }

    pub fn read_csv(path: &Path) -> Result<Self, ReportError> {
        let mut r = csv::Reader::from_path(path)?;
        let columns = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self { columns, rows })
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c == name)
    }

    pub fn strings(&self, name: &str) -> Result<Vec<&str>, ReportError> {
        let i = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| ReportError::Plot(format!("records have no `{name}` column")))?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn floats(&self, name: &str) -> Result<Vec<f64>, ReportError> {
        self.strings(name)?
            .into_iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| ReportError::Plot(format!("`{name}` value `{s}` is not a number")))
            })
            .collect()
    }
}

fn status_name(s: BoundaryStatus) -> &'static str {
    match s {
        BoundaryStatus::Found => "found",
        BoundaryStatus::UnboundedAtCap => "unbounded_at_cap",
        BoundaryStatus::NoStableMagnitude => "no_stable_magnitude",
        BoundaryStatus::NonFinite => "non_finite",
    }
}

fn boundary_fields(r: &BoundaryResult) -> [String; 5] {
    [
        r.direction_label.clone(),
        fmt_float(r.s_max),
        r.s_next_flips.to_string(),
        r.search_evals.to_string(),
        status_name(r.status).to_string(),
    ]
}

impl CsvRecord for SweepRecord {
    const COLUMNS: &'static [&'static str] = &[
        "direction_index",
        "eps_index",
        "eps",
        "direction_label",
        "d_eff",
        "bitwise_constant",
        "regime",
        "flagged",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.direction_index.to_string(),
            self.eps_index.to_string(),
            fmt_float(self.eps),
            self.direction_label.clone(),
            fmt_float(self.d_eff),
            self.bitwise_constant.to_string(),
            self.regime.name().to_string(),
            self.flagged.to_string(),
        ]
    }
}

impl CsvRecord for LayerGainRecord {
    const COLUMNS: &'static [&'static str] = &["layer", "direction_label", "eps", "gain"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.layer.to_string(),
            self.direction_label.clone(),
            fmt_float(self.eps),
            fmt_float(self.gain),
        ]
    }
}

impl CsvRecord for StaircaseStep {
    const COLUMNS: &'static [&'static str] = &["index", "s", "step_norm", "cumulative", "jump"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.index.to_string(),
            fmt_float(self.s),
            fmt_float(self.step_norm),
            fmt_float(self.cumulative),
            self.jump.to_string(),
        ]
    }
}

impl CsvRecord for AngularRecord {
    const COLUMNS: &'static [&'static str] = &[
        "angle_index",
        "theta",
        "direction_label",
        "s_max",
        "s_next_flips",
        "search_evals",
        "status",
    ];

    fn fields(&self) -> Vec<String> {
        let mut out = vec![self.angle_index.to_string(), fmt_float(self.theta)];
        out.extend(boundary_fields(&self.result));
        out
    }
}

impl CsvRecord for SpectrumBoundaryRecord {
    const COLUMNS: &'static [&'static str] = &[
        "k",
        "sigma",
        "direction_label",
        "s_max",
        "s_next_flips",
        "search_evals",
        "status",
    ];

    fn fields(&self) -> Vec<String> {
        let mut out = vec![self.k.to_string(), fmt_float(self.sigma)];
        out.extend(boundary_fields(&self.result));
        out
    }
}

/// One point of an instability sweep. `instability` is NaN at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct InstabilityRow {
    pub index: usize,
    pub eps: f64,
    pub instability: f64,
    pub drift: f64,
    pub margin: f64,
}

impl CsvRecord for InstabilityRow {
    const COLUMNS: &'static [&'static str] = &["index", "eps", "instability", "drift", "margin"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.index.to_string(),
            fmt_float(self.eps),
            fmt_float(self.instability),
            fmt_float(self.drift),
            fmt_float(self.margin),
        ]
    }
}

/// One decision-map cell; `row` follows `eps_j`, `col` follows `eps_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionCell {
    pub row: usize,
    pub col: usize,
    pub eps_i: f64,
    pub eps_j: f64,
    pub winner: Winner,
}

pub(crate) fn winner_name(w: Winner) -> &'static str {
    match w {
        Winner::First => "first",
        Winner::Second => "second",
        Winner::Overflow => "overflow",
    }
}

impl CsvRecord for DecisionCell {
    const COLUMNS: &'static [&'static str] = &["row", "col", "eps_i", "eps_j", "winner"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.row.to_string(),
            self.col.to_string(),
            fmt_float(self.eps_i),
            fmt_float(self.eps_j),
            winner_name(self.winner).to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n_samples: usize,
    pub repeat: usize,
    pub seed: u64,
    pub eps: f64,
    pub kappa: f64,
}

impl CsvRecord for ConvergenceRow {
    const COLUMNS: &'static [&'static str] = &["n_samples", "repeat", "seed", "eps", "kappa"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.n_samples.to_string(),
            self.repeat.to_string(),
            self.seed.to_string(),
            fmt_float(self.eps),
            fmt_float(self.kappa),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub k: usize,
    pub sigma: f64,
}

impl CsvRecord for SpectrumRow {
    const COLUMNS: &'static [&'static str] = &["k", "sigma"];

    fn fields(&self) -> Vec<String> {
        vec![self.k.to_string(), fmt_float(self.sigma)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for x in [1e-14, 0.1, 3.7042210405261517e3, f64::MIN_POSITIVE, 5e-324, -0.0, 2.0f64.powi(-24)] {
            let s = fmt_float(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_float(1e-14), "1e-14");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![SpectrumRow { k: 0, sigma: 210.5 }, SpectrumRow { k: 1, sigma: 1e-7 }];
        let t = Table::from_records(&rows);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, t.to_csv_bytes().unwrap()).unwrap();
        let back = Table::read_csv(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.floats("sigma").unwrap(), vec![210.5, 1e-7]);
        assert!(back.floats("gain").is_err());
    }
}
