//! Titchmarsh–Weyl m-functions, Green's kernels and spectral functions of
//! first-order symmetric systems `J y′ − B(t) y = λ Δ(t) y`.

pub mod boundary;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod propagate;
pub mod quadrature;
pub mod selftest;
pub mod spectral;
pub mod sysdef;
pub mod tolerances;
pub mod weyl;

pub use error::{Error, Result};
pub use tolerances::Tolerances;
