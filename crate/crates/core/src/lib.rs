pub mod error;
pub mod linalg;
pub mod lp;
pub mod qp;
pub(crate) mod optim;
pub mod quadrature;
pub mod market;
pub mod arbitrage;
pub mod portfolio;
pub mod hedging;
pub mod sentinel;
pub mod factor;
pub mod tree;
pub mod cli;
