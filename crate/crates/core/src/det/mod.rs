//! Two-stage detection scaffolding: backbone, anchors, region proposals,
//! RoIAlign, box coding, NMS, the second-stage head and target assignment.

pub mod anchors;
pub mod backbone;
pub mod boxes;
pub mod head;
pub mod nms;
pub mod roi_align;
pub mod rpn;
pub mod targets;

pub use anchors::{generate_anchors, AnchorConfig};
pub use backbone::Backbone;
pub use boxes::{iou_matrix, BBox, DeltaCoder, Detection, Proposal};
pub use head::{DetectionHead, HeadOutput};
pub use nms::{nms, nms_indices};
pub use roi_align::{roi_align, RoiAlignOutput};
pub use rpn::{rpn_forward, select_proposals, RpnConfig, RpnHead, RpnOutput, RpnRaw};
pub use targets::{assign_anchors, assign_targets, sample_targets, Assignment, RoiTarget};
