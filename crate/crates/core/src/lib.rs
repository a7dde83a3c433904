//! Simulation and analysis of two competing species that diffuse, drift
//! downstream and are harvested in a heterogeneous river habitat:
//!
//! ```text
//! u_t = (d1 u_x - alpha1 u)_x + r u (1 - (u+v)/K - mu1)
//! v_t = (d2 v_x - alpha2 v)_x + r v (1 - (u+v)/K - mu2)
//! ```
//!
//! with zero-flux boundaries `d u_x - alpha u = 0`. The numerical core is
//! generic over [`Scalar`] (`f32`/`f64`); the `*64` aliases below are what
//! the experiments and command-line driver use.

pub mod banded;
pub mod config;
pub mod discretization;
pub mod error;
pub mod experiments;
pub mod expr;
pub mod model;
pub mod output;
pub mod pipeline;
pub mod scalar;
pub mod spectral;
pub mod steady;
pub mod timestepper;

pub use banded::{BandLu, BandMatrix};
pub use discretization::{
    assemble, assemble_transport, assemble_transport_2d, Advection2d, Dim, Field, Grid,
    TransportOperator,
};
pub use error::{Error, Result};
pub use expr::FieldExpr;
pub use model::{
    build_effective_params, classify_regime, reaction, EffectiveParams, Kinetics, ModelParams,
    RegimeReport,
};
pub use scalar::Scalar;

pub type Grid64 = Grid<f64>;
pub type Grid32 = Grid<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type TransportOperator64 = TransportOperator<f64>;
pub type EffectiveParams64 = EffectiveParams<f64>;
