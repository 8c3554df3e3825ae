//! Blind source separation for nonnegative, nearly degenerate linear mixtures.
//!
//! The pipeline models data as `X = A·S` with nonnegative mixing matrix `A`
//! (mixtures × sources) and nonnegative sources `S` (sources × samples). When
//! each source owns a dominant interval of samples, the columns of `X` cluster
//! around the columns of `A`; [`clustering`] estimates `A` from those clusters.
//! Because `A` is nearly singular, small estimation errors bleed between
//! sources as negative peaks. Two refinements address that:
//!
//! * [`qp`] finds a constrained approximate inverse `B` of the estimate with
//!   `B·X ≥ 0`;
//! * [`l1`] recovers each column of `S` as the sparsest nonnegative solution.
//!
//! [`cone`] implements the convex-cone (NN) baseline, [`synth`] generates
//! ground-truth scenarios and [`metrics`] scores recoveries modulo the
//! permutation/scaling ambiguity.

pub mod cli;
pub mod clustering;
pub mod cone;
pub mod error;
pub mod io;
pub mod l1;
mod linalg;
pub mod metrics;
pub mod model;
pub mod nnls;
pub mod qp;
pub mod report;
pub mod simplex;
pub mod synth;

pub use error::{Error, Result};
pub use model::{Matrix, MixingEstimate, ModelDims, Provenance, Signedness};
pub use report::SolverReport;
