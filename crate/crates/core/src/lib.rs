//! EM for over-specified Gaussian location mixtures and mixtures of linear
//! regressions.
//!
//! The crate provides population operators (deterministic, by quadrature
//! after a radial reduction), sample operators and full EM runs, the
//! closed-form contraction bounds and epoch schedule, fixed-point analysis
//! of the one-dimensional sample map, error metrics, and a seeded parallel
//! harness for rate experiments.
//!
//! ```
//! use em_lab::em_population::pop_em_symmetric;
//! use em_lab::theory::{gamma_low, gamma_up};
//!
//! let m = pop_em_symmetric(&[0.1], 0.5, 1.0).unwrap()[0];
//! assert!(m >= 0.1 * gamma_low(0.1, 1.0).unwrap());
//! assert!(m <= 0.1 * gamma_up(0.1, 1.0).unwrap());
//! ```

// `!(x > 0.0)` is used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod em_population;
pub mod em_sample;
pub mod error;
pub mod fixedpoint;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod params;
pub mod quadrature;
pub mod theory;

pub use em_sample::{run_em, EmResult, EmRunConfig, Init};
pub use error::{Error, ErrorClass, Result};
pub use metrics::MixingMeasure;
pub use models::{derive_stream, Dataset, FitKind, FitSpec, Stream, TrueModel};
pub use params::{ParamState, TrajectoryRecord};
pub use quadrature::QuadratureRule;
