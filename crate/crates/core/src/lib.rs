//! In-host dynamics of Mycobacterium tuberculosis: deterministic model,
//! equilibria and their stability, bifurcation scans, and Ito SDE ensembles
//! with demographic or environmental noise.

pub mod bifurcation;
pub mod ensemble;
pub mod equilibrium;
pub mod error;
pub mod model;
pub mod ode;
pub mod roots;
pub mod sde;

pub use error::{Error, Result};
pub use model::{ModelParams, ParamName, StateVec};
