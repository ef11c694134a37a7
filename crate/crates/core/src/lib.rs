pub mod autodiff;
pub mod config;
pub mod data;
pub mod deeponet;
pub mod error;
pub mod euler;
pub mod eval;
pub mod field;
pub mod fv;
pub mod io;
pub mod nbf;
pub mod pipeline;
pub mod pod;
pub mod train;

pub use error::{Error, Result};
