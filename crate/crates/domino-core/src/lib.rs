//! Domain-aware calibration for pixel classifiers.
//!
//! The idea: not all segmentation mistakes are equal. Calling cancellous
//! bone cortical is benign; calling it air is not. This crate trains a
//! small per-pixel classifier whose loss carries an extra regularizer
//! driven by a class-by-class penalty matrix, so that the probability mass
//! of a mistake is steered toward domain-acceptable substitutes. Two
//! penalty constructions are provided — one estimated from a baseline
//! model's confusion on held-out data, one declared from a class hierarchy
//! — together with everything needed to measure whether the calibration
//! helped: Dice overlap, Hausdorff distances, top-N accuracy, reliability
//! curves and expected calibration error, at the original granularity and
//! after merging classes into coarser groups.
//!
//! The crate is deliberately self-contained and deterministic: synthetic
//! phantom images stand in for scan data, every random draw comes from a
//! seeded [`rng::SplitMix64`] stream, and all artifacts round-trip through
//! a small binary tensor format ([`io`]).

pub mod error;
pub mod grid;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod penalty;
pub mod phantom;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
pub use grid::{argmax_map, binary_mask, one_hot, ClassSet, DenseMatrix, LabelMap, ProbMap};
pub use loss::{
    cross_entropy, domino_penalty, soft_dice_loss, softmax_map, total_loss, total_loss_and_grad,
    LogitMap, LossConfig,
};
pub use metrics::{
    dice, evaluate, expected_calibration_error, hausdorff, merged_top_n_accuracy,
    modified_hausdorff, reliability_curve, top_n_accuracy, GroupMap,
};
pub use model::{
    domino_cm_workflow, load_model, mean_loss, model_bytes, predict_labels, predict_prob,
    save_model, trace_to_csv, train, CmWorkflow, ParamGrads, PatchClassifier, SavedModel,
    TracePoint, TrainConfig,
};
pub use penalty::{
    build_cm_penalty, build_hc_penalty, confusion_from_predictions, load_confusion, load_penalty,
    save_confusion, save_penalty, ConfusionMatrix, HierarchySpec, PenaltyMatrix,
};
pub use phantom::{
    dataset_fingerprint, generate, load_dataset, save_dataset, EllipseRegion, PhantomConfig,
    PhantomSample,
};
pub use report::{
    reliability_csv, render_metrics_csv, render_reliability_svg, render_text, ClassReport,
    GranularityReport, MetricsReport, ReliabilityBin, ReliabilityCurve,
};
pub use rng::SplitMix64;
