//! Static security assessment of transmission grids under N-1 line outages.

pub mod netmodel;
pub mod powerflow;
pub mod security;
pub mod lasso;
pub mod exec;
pub mod scenario;
pub mod assessor;
pub mod cli;
