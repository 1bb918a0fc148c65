pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod geometry;
pub mod field;
pub mod grids;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
