//! Multi-stream video question answering with modality-bias analysis.
//!
//! The crate trains attention-based multi-stream QA models over subtitle,
//! visual-concept, frame and regional feature tracks, generates synthetic
//! datasets with planted modality cues for controlled evaluation, and
//! ships the analysis instruments (IEM / IoU / agreement subsets, vote
//! statistics, question-type breakdowns, significance tests) used to
//! quantify how much each modality contributes to a trained model.

pub mod analysis;
pub mod data;
pub mod fusion;
pub mod model;
pub mod numerics;
pub mod params;
pub mod pipeline;
pub mod training;
