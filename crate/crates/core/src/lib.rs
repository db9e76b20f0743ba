pub mod analysis;
pub mod datasets;
pub mod error;
pub mod gradnet;
pub mod graph;
pub mod hypgeo;
pub mod sarkar2d;
pub mod train;
pub mod wlcolor;
pub mod wlhn;

pub use error::{Error, Result};
pub use graph::{Batch, Graph};
