pub mod book;
pub mod emd;
pub mod error;
pub mod grid;
pub mod haar;
pub mod harness;
pub mod kmedian;
pub mod pipeline;
pub mod pyramid;
pub mod randrec;
pub mod sparsemodel;
pub mod synth;
pub mod treecosamp;

pub use error::{Error, Result};
pub use grid::{CellId, Grid, GridImage, PyramidCoeffs, TreeSupport};
