pub mod bortfeld;
pub mod detector;
pub mod discrimination;
pub mod error;
pub mod inference;
pub mod phantom;
pub mod quadrature;
pub mod runner;
pub mod special;

pub use error::{Error, Result};
