//! Immuno-epidemiological model of vector-borne infections where the host
//! infectious period is set by a linear within-host virus/antibody system.

pub mod numerics;
pub mod pde;
pub mod reproduction;
pub mod uhr;
pub mod within_host;
