//! Numerical substrate: dual arrays, layers, pooling.

pub mod dual;
pub mod layers;
pub mod pool;
