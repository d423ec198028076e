pub mod config;
pub mod error;
pub mod eval;
pub mod gating;
pub mod io;
pub mod gaussian;
pub mod motion;
pub mod nufft;
pub mod phantom;
pub mod pipeline;
pub mod recon;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{ComplexVolume, Dims, Dvf, RealVolume, C64};
