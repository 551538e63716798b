// `!(x > 0.0)` is the NaN-rejecting comparison throughout
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod graphdiff;
pub mod graphspde;
pub mod hamiltonian;
pub mod harness;
pub mod noise;
pub mod numerics;
pub mod pde2d;
pub mod reeb;
pub mod sde;
pub mod spaces;
