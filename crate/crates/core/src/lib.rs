//! Channel estimation for the linear-Gaussian model `y = A h + z`.
//!
//! The crate provides exact MMSE and its modified (interference-cancelling)
//! form, the generic information-geometry message exchange with the rank-1
//! split (IGA), the per-coefficient IC-IGA and mean-only IC-SIGA estimators,
//! and the massive-MIMO beam-domain measurement model (UPA steering, ZC
//! pilots, Kronecker structure) with an FFT-backed implicit operator.
//!
//! Module map:
//! - [`geometry`]: complex Gaussian coordinates, KL divergence, m-projection.
//! - [`exact`]: MMSE and modified-MMSE estimators, the measurement model.
//! - [`iga`]: split schemes, auxiliary points and the damped belief loop.
//! - [`ic`]: IC-IGA / IC-SIGA kernels and the block-inversion belief oracle.
//! - [`bscm`]: steering matrices, pilots, dense and fast operators.
//! - [`scenario`]: synthetic power matrices, channels and received signals.
//! - [`harness`]: NMSE, reconstruction, benchmark sweeps and CSV output.
//! - [`validate`]: the oracle suite behind `igachan validate`.

pub mod bscm;
pub mod error;
pub mod exact;
pub mod geometry;
pub mod harness;
pub mod ic;
pub mod iga;
pub mod linalg;
pub mod operator;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod validate;

pub use error::{Error, Result};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Double-precision complex scalar.
pub type C64 = Complex64;
/// Dense complex matrix.
pub type CMat = DMatrix<C64>;
/// Dense complex vector.
pub type CVec = DVector<C64>;
/// Dense real vector.
pub type RVec = DVector<f64>;
