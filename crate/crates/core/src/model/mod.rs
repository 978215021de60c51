//! The probed programs: a seeded toy transformer and a linear reference map.

mod config;
mod oracle;
mod point;
mod transformer;
mod weights;

pub use config::ModelConfig;
pub use oracle::{log_spaced_sigma, LinearOracle};
pub use point::{
    top_two, EmbeddingPoint, LstOutput, PerturbSite, PointInit, DEFAULT_EMBEDDING_SCALE,
};
pub use transformer::{leading_pair, ToyModel};
pub use weights::{read_weights, write_weights, LayerWeights, Weights, WeightsHeader};

use crate::numerics::PrecisionMode;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite value encountered in {stage}")]
    NonFinite { stage: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A program whose last hidden state `M(x)` the probes measure.
///
/// Perturbations are passed as `(coefficient, direction)` terms. They are
/// added, in order, to the embedding slice at the point's perturbation sites,
/// with every product and sum rounded in the map's precision.
pub trait RepresentationMap: Sync {
    /// Length of a perturbation direction.
    fn width(&self) -> usize;

    fn precision(&self) -> PrecisionMode;

    /// The same map computing in another precision.
    fn with_precision(&self, precision: PrecisionMode) -> Self
    where
        Self: Sized;

    fn evaluate(
        &self,
        point: &EmbeddingPoint,
        terms: &[(f64, &[f64])],
    ) -> Result<LstOutput, ModelError>;

    /// Intermediate states at the readout position, first to last.
    fn taps(
        &self,
        point: &EmbeddingPoint,
        terms: &[(f64, &[f64])],
    ) -> Result<Vec<Vec<f64>>, ModelError>;
}

pub fn build_model(config: ModelConfig) -> Result<ToyModel, ModelError> {
    ToyModel::build(config)
}

pub fn forward(model: &ToyModel, point: &EmbeddingPoint) -> Result<LstOutput, ModelError> {
    model.forward(point)
}

pub fn layer_taps(model: &ToyModel, point: &EmbeddingPoint) -> Result<Vec<Vec<f64>>, ModelError> {
    model.layer_taps(point)
}

pub fn oracle_forward(oracle: &LinearOracle, x: &[f64]) -> Result<Vec<f64>, ModelError> {
    oracle.oracle_forward(x)
}
