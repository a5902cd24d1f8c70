//! Differentiable building blocks over the tensor engine.

pub mod gru;
pub mod linear;
pub mod mlp;
pub mod patch_embed;
pub mod transformer;

pub use gru::{GruCell, GruTrace};
pub use linear::{Init, LayerNorm, Linear};
pub use mlp::{Activation, Mlp};
pub use patch_embed::{unfold_patches, PatchEmbed};
pub use transformer::{BlockOutput, TransformerBlock};
