pub mod chaos;
pub mod engine;
pub mod error;
pub mod evt;
pub mod gausslin;
pub mod harness;
pub mod m4;
pub mod numerics;
pub mod pointproc;
pub mod rng;
pub mod series;
pub mod subordinate;

pub use error::{Error, Result};
