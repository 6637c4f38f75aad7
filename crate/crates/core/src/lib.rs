pub mod config;
pub mod conic;
pub mod distortion;
pub mod dnn;
pub mod error;
pub mod experiments;
pub mod fipsa;
pub mod linalg;
pub mod nullspace;
pub mod oracle;
pub mod parallel;
pub mod rates;
pub mod spca;

pub use error::{Error, Result};
