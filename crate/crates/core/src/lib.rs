//! Numerical laboratory for microcanonical ensembles of the discrete
//! focusing nonlinear Schrödinger equation on a periodic lattice.

pub mod continuum;
pub mod dnls;
pub mod error;
pub mod green;
pub mod io;
pub mod lattice;
pub mod metric;
pub mod microcanonical;
pub mod numerics;
pub mod ode;
pub mod rate;
pub mod rng;
pub mod soliton;
pub mod spectral;
pub mod variational;
pub mod window;

pub use error::{Error, Result};
pub use lattice::{Field, GridSpec, ObservableSet, SubsetMask};
