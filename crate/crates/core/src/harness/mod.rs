//! Synthetic data, configuration, the assembled detector, training,
//! evaluation, checkpoints, inference outputs and ablations.

pub mod ablate;
pub mod ap;
pub mod attr;
pub mod checkpoint;
pub mod config;
pub mod detect;
pub mod eval;
pub mod model;
pub mod synth;
pub mod train;

pub use ablate::{run_ablation, AblationAxis, AblationRow, AblationTable};
pub use ap::{coco_thresholds, evaluate_ap, ClassReport, EvalReport, GroundTruth};
pub use attr::{pretrain_attributes, save_attribute_head};
pub use checkpoint::{load_checkpoint, restore_into, save_checkpoint, TrainState, CHECKPOINT_KIND};
pub use config::{AlignLoss, AttrUsage, Config, Preset};
pub use detect::{run_detect, DetectFlags, DetectOutput, DetectionRecord};
pub use eval::evaluate;
pub use model::{AttributeReadout, Inference, LossBreakdown, VfmDet};
pub use synth::{generate_samples, generate_synthetic_dataset, load_dataset, single_vehicle_scene, Sample, SynthConfig, CLASSES};
pub use train::{read_log, schedule_steps, train, StepLog, TrainOptions, TrainReport};
