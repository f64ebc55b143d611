//! Differentiable unstructured finite-volume solver for the 2D Euler
//! equations with a learned correction to gradient reconstruction.

pub mod autodiff;
pub mod bc;
pub mod bench;
pub mod error;
pub mod euler;
pub mod io;
pub mod mesh;
pub mod mlcorr;
pub mod recon;
pub mod solver;
pub mod train;

pub use autodiff::{Real, Tape, Var};
pub use error::{Error, Result};
pub use euler::{Cons, GasModel, Prim};
pub use mesh::{BoundaryTag, Mesh};
