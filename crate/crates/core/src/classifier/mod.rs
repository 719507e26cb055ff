//! Cross-domain visual classifier: shared encoder, per-domain learnable
//! anchors, cross-domain attention and a shared head, trained jointly on
//! source labels and target pseudo-labels.

mod config;
mod eval;
mod model;
mod train;

pub use config::{AblationPreset, Switches, TargetStructure, TrainConfig};
pub use eval::{
    evaluate, evaluate_split, export_embeddings, predict, score, separation, structure_gap, Evaluation,
    ExportSummary, Separation,
};
pub use model::{
    cross_domain_attend, cross_domain_attend_var, AttentionHead, BoundModel, ClassifierModel, Forward,
    LearnableAnchors, PartOutput,
};
pub use train::{
    absolute_alignment_loss, batch_terms, train_classifier, BatchData, BatchTerms, ClassifierBundle, StepLog,
    TrainContext, CHECKPOINT_KIND,
};
