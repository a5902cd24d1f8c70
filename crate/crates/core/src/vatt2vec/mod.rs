//! Attribute knowledge: the 47-tag vehicle schema, text embeddings for each
//! tag, the attribute prediction head, per-group selection and GRU fusion
//! into a single attribute vector, and the alignment losses.

pub mod align;
pub mod embeddings;
pub mod head;
pub mod pretrain;
pub mod schema;
pub mod select;

pub use align::{contrastive_alignment_loss, cosine_alignment_loss, VisualAligner};
pub use embeddings::{get_text_embeddings, EmbeddingProvider, TextEmbeddingTable};
pub use head::{AttributeHead, AttributeOutput};
pub use pretrain::{attribute_targets, group_accuracy, pretrain_attribute_head, OptimizerKind, PretrainConfig, PretrainReport};
pub use schema::{AttributeGroup, AttributeSchema};
pub use select::{fuse_attributes, gather_attribute_embeddings, select_group_argmax};
