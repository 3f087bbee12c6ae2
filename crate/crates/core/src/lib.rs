// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weighted CUSUM tests for a change in the deterministic coefficient of a
//! random coefficient autoregression
//!
//! ```text
//! y_i = (beta_0 + e_{i,1}) y_{i-1} + e_{i,2}
//! ```
//!
//! The tests compare weighted least squares estimates before and after every
//! split point. They work whether `y_i` is stationary, explosive or at the
//! boundary, and there is a heteroskedasticity-robust variant.
//!
//! Layout:
//! - [`rca`]: the model, regime changes and path simulation
//! - [`estimators`]: cumulative WLS tables and the variance estimate
//! - [`cusum`]: the CUSUM process and its weighted sup, Darling-Erdős and Rényi functionals
//! - [`hetero`]: the heteroskedasticity-robust process and kernel
//! - [`critical`]: analytic, simulated and data-driven critical values
//! - [`detector`]: end-to-end tests and binary segmentation
//! - [`harness`]: Monte Carlo size and power experiments
//! - [`io`]: CSV ingestion and report output

#![forbid(unsafe_code)]
// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod critical;
pub mod cusum;
pub mod detector;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod hetero;
pub mod io;
pub mod rca;
pub mod rng;
pub mod weights;

pub use critical::{
    de_asymptotic_cv, de_finite_sample_cv, hetero_fnl_cv, simulate_bridge_cv, simulate_renyi_cv,
    CvFamily, CvRequest, CvTable,
};
pub use cusum::{
    darling_erdos_stat, q_process, renyi_stat, weighted_sup, CusumProcess, StatResult,
};
pub use detector::{
    binary_segmentation, run_test, ChangepointSet, CvSource, Statistic, TestConfig, TestReport,
    VarianceMode,
};
pub use error::{Error, Result};
pub use estimators::{build_cumulants, eta_hat_sq, CumulantTable, EtaHatSq};
pub use harness::{
    power_curve, power_experiment, size_experiment, BreakKind, ExperimentSpec, HeteroCase,
    RejectionTable, TestPolicy,
};
pub use hetero::{build_kernel, qbar_process, HeteroKernel};
pub use io::{
    emit_report, load_series, ColumnSel, IngestSpec, ReportDocument, ReportFormat, Transform,
};
pub use rca::{simulate_rca, BreakAt, RcaParams, RcaSimSpec, RegimeBreak, RegimeSpec, TimeSeries};
pub use weights::{integrability_check, CustomWeight, TrimSpec, WeightSpec};
