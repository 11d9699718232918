pub mod autodiff;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod fit;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod optimizer;
pub mod real;
pub mod renderer;
pub mod scenes;
pub mod supervision;

pub use error::{Error, Result};
pub use real::Real;
