pub mod asymptotics;
pub mod bands;
pub mod decomposition;
pub mod eigensearch;
pub mod error;
pub mod lattice;
pub mod stats;
pub mod transfer;
pub mod weyl;

pub use error::{Result, SpectralError};
