pub mod error;
pub mod advect;
pub mod block;
pub mod data;
pub mod field;
pub mod grid;
pub mod norms;
pub mod plan;
pub mod quadrature;
pub mod shears;
pub mod track;
pub mod velocity;

pub use error::{Error, Result};
