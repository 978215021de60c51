//! Run configuration, CSV/JSON emission, SVG plots and the run pipeline
//! behind the command-line front end.

mod config;
mod plot;
mod runner;
mod table;

pub use config::{
    DecisionMapSpec, EpsGrid, InstabilitySpec, LayerGainSpec, MicroContinuitySpec, NoiseSpec,
    AngularSpec, PointConfig, ProbeSpec, RunConfig, SpectrumBoundarySpec, SweepSpec,
    SCHEMA_VERSION,
};
pub use plot::{render, PlotKind};
pub use runner::{
    demo_configs, plot_csv, resolve_direction, run, run_demo, run_spectrum, write_atomic, Demo,
    RunManifest, RunOutcome, SpectrumInfo,
};
pub use table::{
    fmt_float, ConvergenceRow, CsvRecord, DecisionCell, InstabilityRow, SpectrumRow, Table,
};

use std::path::PathBuf;

use crate::model::ModelError;
use crate::probes::ProbeError;
use crate::spectrum::SpectrumError;

/// Process exit status for errors: 1 config, 2 numerical abort, 3 search budget.
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing required field `{0}`")]
    MissingField(String),
    #[error("unsupported schema_version {found}, this build reads {SCHEMA_VERSION}")]
    SchemaVersion { found: i64 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("refusing to overwrite `{}` (set overwrite = true or pass --overwrite)", .0.display())]
    Collision(PathBuf),
    #[error("cannot plot: {0}")]
    Plot(String),
    #[error("{count} record(s) hit NaN or infinity; outputs kept in `{}`", .dir.display())]
    Flagged { count: usize, dir: PathBuf },
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl ReportError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ReportError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            ReportError::Flagged { .. } => EXIT_NUMERICAL,
            ReportError::Probe(ProbeError::NoNearTie(_)) => EXIT_BUDGET,
            ReportError::Probe(e) if e.is_numerical() => EXIT_NUMERICAL,
            ReportError::Spectrum(SpectrumError::NoConvergence { .. }) => EXIT_BUDGET,
            ReportError::Spectrum(SpectrumError::NonFinite { .. })
            | ReportError::Spectrum(SpectrumError::Model(ModelError::NonFinite { .. }))
            | ReportError::Model(ModelError::NonFinite { .. }) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        }
    }
}
