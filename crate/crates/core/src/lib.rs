pub mod coefficients;
pub mod critical_point;
pub mod error;
pub mod id_analyzer;
pub mod matrix_criteria;
pub mod model;
pub mod rational;
pub mod series_oracle;

pub use error::{Error, Result};
