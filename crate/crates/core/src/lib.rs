//! fundus-seg — optic disc and cup segmentation on eye fundus images.
//!
//! The toolkit segments the optic disc and the optic cup with a lightweight
//! constant-width U-Net trained under a `-log` soft-Dice loss, then derives
//! the cup-to-disc ratio (CDR) and a glaucoma-suspicion flag from the two
//! masks. Processing stages:
//!
//! 1. **Preprocess** – CLAHE contrast equalization, bilinear/nearest resizing,
//!    disc bounding-box extraction and margin cropping.
//! 2. **Model** – the segmentation network: contracting/expansive paths with
//!    skip merges, dropout, ReLU and a sigmoid head, plus a binary weight format.
//! 3. **Train** – SGD with momentum, paired geometric augmentation, epoch loop
//!    with early stopping, and 5-fold cross-validation scoring.
//! 4. **Pipeline** – stage-1 disc segmentation, ROI crop with margin, stage-2
//!    cup segmentation mapped back to full frame, CDR and flag.
//! 5. **Data** – normalized on-disk dataset layout and a synthetic eye
//!    generator for desk-scale testing.
//!
//! Runnable walkthroughs live under `examples/`; the `fundus-seg` binary
//! exposes the same capabilities as subcommands (`synth`, `train`, `crossval`,
//! `predict`, `assess`).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod train;

pub use error::{Error, Result};
pub use metrics::{BinaryMask, ProbabilityMap, ScoreReport};
pub use model::{ModelConfig, SegmentationModel};
pub use pipeline::{AssessmentReport, PipelineConfig};
pub use preprocess::{BoundingBox, CropTransform, FundusImage};
pub use train::{TrainConfig, TrainHistory};
