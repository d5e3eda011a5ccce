//! Synthetic scene generation, augmentation, and file formats.

pub mod checkpoint;
mod header;
pub mod pfm;
pub mod ppm;
pub mod scene;

pub use checkpoint::{load_checkpoint, read_checkpoint_names, save_checkpoint};
pub use pfm::{read_pfm, write_pfm, write_pfm_scaled};
pub use ppm::{read_ppm, write_ppm};
pub use scene::{augment_flip, synth_scene, DepthSample, SceneSpec};
