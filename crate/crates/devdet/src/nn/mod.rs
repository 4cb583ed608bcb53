//! Minimal neural-network substrate: named flat parameters, layer ops with
//! hand-written backward passes, Adam, and the checkpoint file format.

pub mod adam;
pub mod checkpoint;
pub mod ops;
pub mod params;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use params::ParamVec;
