//! Geodesics, Jacobi fields, Morse indices and bifurcation detection for
//! Finsler metrics given by symbolic expressions on a single chart.
//!
//! The pipeline runs `metric` → `geoflow` → `jacobi` → `morse` → `bifurc`;
//! `nav` builds Zermelo and Fermat metrics on top of `metric`.

// NaN must fail every guard, so comparisons are written in negated form.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ad;
pub mod bifurc;
pub mod error;
pub mod expr;
pub mod geoflow;
pub mod jacobi;
pub mod linalg;
pub mod metric;
pub mod morse;
pub mod nav;
pub mod ode;

pub use bifurc::{
    classify_alternative, detect_bifurcation, find_branches, sweep_family, BifurcationScan, BranchEvidence,
    BranchOptions, Diagnosis, FamilySpec, SweepOptions, TrivialBranch, Verdict,
};
pub use error::{Error, Result};
pub use expr::{ExprError, Expression, Params};
pub use geoflow::{
    connect, exp_map, integrate_geodesic, orthogonal_initial, BoundaryData, ConnectOptions, GeodesicPath,
};
pub use jacobi::{conjugate_scan, expmap_jacobian, focal_scan, ConjugateReport, ScanOptions};
pub use metric::{
    ChartBox, DerivativeStrategy, InvariantReport, LagrangianJet, MetricField, MetricKind, MetricSpec,
    PhaseState,
};
pub use morse::{cross_check, index_by_counting, index_spectral, Boundary, IndexReport, SpectralOptions};
pub use nav::{fermat_metric, lift_lightlike, travel_time, zermelo_to_randers, StationaryData, ZermeloData};
pub use ode::OdeOptions;
