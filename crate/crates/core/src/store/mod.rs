//! Tensor containers, PNG images and the synthetic face model generator.

pub mod container;
pub mod image;
pub mod synth;

pub use container::{read_container, write_container, Container, DType, Entry};
pub use image::{load_image, save_image, Image};
pub use synth::{generate_synthetic_model, SyntheticModelSpec};
