//! Numerical kernels shared by every other module: dense symmetric
//! matrices, eigendecomposition and truncated pseudoinverse, distribution
//! functions, a reproducible RNG, variate generators and goodness-of-fit
//! checks.

mod eigen;
pub mod gof;
mod matrix;
mod rng;
pub mod sample;
pub mod special;

pub use eigen::{pinv_truncated, sym_eig, EigenDecomp, Pinv, DEFAULT_REL_TOL};
pub use matrix::{multinomial_kernel, Matrix, SymMatrix};
pub use rng::{RngStream, RNG_ALGORITHM};
pub use special::{chisq_cdf, chisq_sf, f_cdf, f_sf};
