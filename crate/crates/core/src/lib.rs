//! Ground states and two-spin entanglement of long-range XXZ chains.

extern crate blas_src;

mod env;
pub mod linalg;
pub mod mpo;
pub mod mps;
pub mod ed;
pub mod dmrg;
pub mod exec;
pub mod entanglement;
pub mod fit;
