//! Kolmogorov–Arnold layers: univariate bases, single layers and stacks.

pub mod basis;
mod layer;

pub use basis::{bspline_basis, rbf_basis, Basis, BasisConfig, BsplineGrid, RbfGrid};
pub use layer::{kan_param_count, least_squares, KanLayer, KanStack};

#[cfg(test)]
mod tests;
