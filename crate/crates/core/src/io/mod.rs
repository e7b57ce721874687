//! File formats: PFM disparity maps, PPM images and weight checkpoints.

pub mod checkpoint;
mod header;
pub mod pfm;
pub mod ppm;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_module, read_checkpoint, save_module, NamedTensors};
pub use pfm::{read_pfm, write_pfm};
pub use ppm::{read_ppm, write_ppm};
