//! Brain-tumor image grading pipeline: a small CNN trained from first
//! principles, compared across three input preparations (uncropped, cropped,
//! segmented lesion) at three input sizes (32, 64, 128).
//!
//! Layer map:
//! * [`tensor`] / [`layers`] / [`gradcheck`] — dense f64 tensors, layer
//!   primitives with hand-written backward passes, finite-difference checks
//! * [`pgm`] / [`dataset`] — the portable dataset container and the
//!   deterministic stratified 70/15/15 split
//! * [`preprocess`] — variant pipelines and bilinear resizing
//! * [`model`] — the 18-layer architecture, init, forward/backward
//! * [`training`] / [`checkpoint`] — ADAM loop, history, persistence
//! * [`evaluation`] — confusion matrices, per-class and macro metrics,
//!   comparison reports
//! * [`synth`] — procedural phantom datasets for tests and demos
//! * [`pipeline`] / [`cli`] — wiring and the `btcnn` binary

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod pgm;
pub mod pipeline;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod training;
