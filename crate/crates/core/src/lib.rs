//! Catching-up discretisation of integro-differential sweeping processes
//! `−ẋ ∈ N_{C(t)}(x) + f₁(t,x) + ∫ f₂(t,s,x(s)) ds` over prox-regular moving sets.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod circuits;
pub mod config;
pub mod error;
pub mod expr;
pub mod gronwall;
pub mod linalg;
pub mod nidcs;
pub mod oracle;
pub mod problem;
pub mod quadrature;
pub mod sets;
pub mod solver;

pub use error::{Error, Result};
pub use problem::{
    Horizon, KernelSpec, Matrix, PerturbationSpec, ProblemSpec, TimeGrid, Trajectory, Vector,
};
pub use sets::{MovingSet, SublevelSet, TranslatedFixedSet};
