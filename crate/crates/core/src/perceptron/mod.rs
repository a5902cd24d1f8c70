//! Proposal perception through a frozen ViT-style encoder: crop and resize
//! each proposal, encode it with inserted learnable tokens, project tokens
//! to spatial maps and fuse them with the RoI features.

pub mod config;
pub mod crop;
pub mod encoder;
pub mod fusion;

pub use config::EncoderConfig;
pub use crop::{crop_and_resize_proposals, CropBatch};
pub use encoder::{EncoderOutput, EncoderState, ENCODER_KIND, PIXEL_MEAN, PIXEL_STD};
pub use fusion::{fuse_with_roi, Fusion, FusionStrategy};
