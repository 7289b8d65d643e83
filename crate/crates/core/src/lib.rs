//! Bell-type inequalities for tree-structured networks of independent
//! sources: construction by iterated extension, exact quantum evaluation,
//! optimization of the free weights, and classical falsification.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod catalog;
pub mod classical;
pub mod expression;
pub mod extension;
pub mod network;
pub mod optimizer;
pub mod quantum;
pub mod report;

pub use expression::{Inequality, Term, WeightGroup};
pub use extension::{build_base, extend_inequality, Base, Extension};
pub use network::{Network, ObserverSpec, SourceSpec};
pub use quantum::{QuantumStrategy, StateSpec};

/// Absolute tolerance for treating a coefficient or block as zero.
pub const TOL: f64 = 1e-12;

/// Seed used when neither a flag nor `TREEBELL_SEED` provides one.
pub fn default_seed() -> u64 {
    std::env::var("TREEBELL_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(optimizer::DEFAULT_SEED)
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Network(#[from] network::NetworkError),
    #[error(transparent)]
    Expression(#[from] expression::ExpressionError),
    #[error(transparent)]
    Extension(#[from] extension::ExtensionError),
    #[error(transparent)]
    Quantum(#[from] quantum::QuantumError),
    #[error(transparent)]
    Classical(#[from] classical::ClassicalError),
    #[error(transparent)]
    Optimizer(#[from] optimizer::OptimizerError),
    #[error(transparent)]
    Catalog(#[from] catalog::CatalogError),
}

impl Error {
    pub fn is_resource_limit(&self) -> bool {
        matches!(
            self,
            Error::Quantum(quantum::QuantumError::ResourceLimit(_))
                | Error::Classical(classical::ClassicalError::ResourceLimit(_))
                | Error::Optimizer(optimizer::OptimizerError::GridTooLarge { .. })
                | Error::Catalog(catalog::CatalogError::Quantum(quantum::QuantumError::ResourceLimit(_)))
        )
    }
}
