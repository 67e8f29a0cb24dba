pub mod cli;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod nn;
pub mod quant;
pub mod ranking;
pub mod sid;
