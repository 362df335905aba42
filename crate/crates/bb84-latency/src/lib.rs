//! Completion-time analysis of the BB84 protocol over a single quantum
//! repeater.
//!
//! The crate computes the distribution of the protocol completion time three
//! independent ways and cross-validates them:
//!
//! - **Analytic**: composing per-phase MGFs into the completion-time MGF,
//!   inverting the Laplace transform for the CDF, and minimising a Chernoff
//!   grid for tail bounds ([`rus`], [`transforms`], [`bb84`]).
//! - **Full-scale Monte Carlo**: event-by-event simulation of link
//!   generation, entanglement swaps, teleportation and reconciliation
//!   ([`sim_full`]).
//! - **Synthetic**: Coxian phase-type fits to the single-qubit teleportation
//!   times, aggregated through gamma–binomial cascades so each completion
//!   sample costs a constant number of draws ([`sim_synth`]).
//!
//! [`elementary`] covers two standalone communication modules: a closed-form
//! tail bound for a geometric compound of parallel exponentials, and the
//! diff-time cut-off swap policy with gamma moment matching.

pub mod bb84;
pub mod elementary;
pub mod numeric;
pub mod rus;
pub mod sim_full;
pub mod sim_synth;
pub mod stats;
pub mod transforms;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error, Clone)]
pub enum Error {
    /// An MGF or geometric-series composition was evaluated at or beyond its
    /// convergence abscissa.
    #[error("MGF diverges at Re(t) = {at}")]
    Divergent { at: f64 },

    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration or call-site parameter is invalid.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The success probability is degenerate (p ≡ 0); the completion time is
    /// almost surely infinite.
    #[error("degenerate protocol: success probability is zero")]
    DegenerateSuccess,

    /// Two independent numerical routes disagreed beyond tolerance.
    #[error("numerical instability: {0}")]
    Instability(String),

    /// Moment matching failed even after phase-count degradation.
    #[error("distribution fit failure: {0}")]
    FitFailure(String),

    /// Index arguments violated `0 ≤ j ≤ l` or similar bounds.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
}

pub type Result<T> = std::result::Result<T, Error>;
