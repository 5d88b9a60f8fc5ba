//! A numerical laboratory for semicommutative d-adic martingale paraproducts.
//!
//! Matrix-valued step functions on a finite d-adic lattice carry every object:
//! symbols, test functions, square functions. On top of them sit the
//! paraproduct operators, the operator-valued BMO and Hardy-space norms, and
//! seeded optimization experiments that probe operator-norm growth.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod ncmat;
pub mod norms;
pub mod opnorm;
pub mod paraproducts;
pub mod random;
pub mod stepfn;

pub use error::{Error, Result};
pub use lattice::{Interval, Lattice, LatticeParams};
pub use ncmat::{CMatrix, C64};
pub use stepfn::{haar_function, HaarCoefficients, StepFunction};
