//! Parameter storage and the layers used by the networks.

mod layers;
mod param;
mod spectral;

pub use layers::{gn_groups, group_norm, Conv2d, ConvOpts, ConvTranspose2d, Gate, GatedConv, GroupNorm, Linear, ResUnit};
pub use param::{Param, Path, VarStore};
pub use spectral::{spectral_normalize, SpectralNorm};
