pub mod checks;
pub mod error;
pub mod eval;
pub mod facemodel;
pub mod illumination;
pub mod losses;
pub mod masks;
pub mod nets;
pub mod pipeline;
pub mod renderer;
pub mod store;
pub mod uvops;

pub use error::{FaceError, Result};
