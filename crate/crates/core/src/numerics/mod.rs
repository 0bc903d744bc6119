//! Numerical kernels: dense eigen/Cholesky helpers, a convex QP solver and a
//! small semidefinite program solver.

pub mod dense;
pub mod eigen;
pub mod qp;
pub mod sdp;
