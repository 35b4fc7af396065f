//! Forward and adjoint kernels used by the autodiff graph.

pub mod conv;
pub mod resize;
