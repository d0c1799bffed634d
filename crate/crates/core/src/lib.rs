pub mod diffcore;
mod error;
pub mod gnssdata;
pub mod hvae;
pub mod mogi;
pub mod nn;
pub mod pila;
pub mod trainer;

pub use error::{Error, Result};
