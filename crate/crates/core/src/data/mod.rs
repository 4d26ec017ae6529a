//! Datasets: QA annotations, per-clip modality tracks, synthetic
//! generation with planted cues, and the file formats for both.

pub mod bank;
pub mod embed;
pub mod generate;
pub mod jsonl;
pub mod segment;

pub use bank::{BankEntry, FeatureBank};
pub use embed::{build_vocab, ContextualMixer, EmbeddingTable, Vocabulary};
pub use generate::{generate_dataset, CueMix, DatasetConfig, QTypeMix};
pub use jsonl::{load_tvqa_jsonl, save_tvqa_jsonl};
pub use segment::{segment_by_timestamp, segment_with_fallback, select_top_k_regions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("generation error: {0}")]
    Generation(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("segmentation error: {0}")]
    Segmentation(String),
    #[error("unknown clip `{0}`")]
    MissingClip(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

/// The seven question categories; everything that does not start with a
/// recognized question word (typos, "whom", did/does, double-when) is
/// `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QType {
    What,
    Who,
    Why,
    Where,
    How,
    Which,
    Other,
}

impl QType {
    pub const ALL: [QType; 7] = [
        QType::What,
        QType::Who,
        QType::Why,
        QType::Where,
        QType::How,
        QType::Which,
        QType::Other,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            QType::What => "what",
            QType::Who => "who",
            QType::Why => "why",
            QType::Where => "where",
            QType::How => "how",
            QType::Which => "which",
            QType::Other => "other",
        }
    }
}

/// Which modality carries the planted evidence for a synthetic example.
/// Loaded real data carries `Unknown`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CueLabel {
    Sub,
    Vid,
    Joint,
    None,
    Unknown,
}

impl CueLabel {
    pub fn name(&self) -> &'static str {
        match self {
            CueLabel::Sub => "SUB",
            CueLabel::Vid => "VID",
            CueLabel::Joint => "JOINT",
            CueLabel::None => "NONE",
            CueLabel::Unknown => "UNKNOWN",
        }
    }
}

/// One question with its five candidate answers.
#[derive(Debug, Clone, PartialEq)]
pub struct QAExample {
    pub qid: u64,
    pub question: Vec<String>,
    pub answers: [Vec<String>; 5],
    pub answer_idx: usize,
    pub clip_id: String,
    pub ts: (f64, f64),
    pub qtype: QType,
    pub cue_label: CueLabel,
}

impl QAExample {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.answer_idx > 4 {
            return Err(DataError::Invalid(format!(
                "answer_idx {} out of range",
                self.answer_idx
            )));
        }
        if self.ts.0 >= self.ts.1 {
            return Err(DataError::Invalid(format!(
                "timestamp {:?} has start >= end",
                self.ts
            )));
        }
        if self.question.is_empty() {
            return Err(DataError::Invalid("empty question".into()));
        }
        if self.answers.iter().any(|a| a.is_empty()) {
            return Err(DataError::Invalid("empty answer".into()));
        }
        let qt = classify_question_type(&self.question)?;
        if qt != self.qtype {
            return Err(DataError::Invalid(format!(
                "qtype {:?} inconsistent with question (classified {qt:?})",
                self.qtype
            )));
        }
        Ok(())
    }
}

/// A subtitle token with its time span in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtitleToken {
    pub token: String,
    pub start: f64,
    pub end: f64,
}

/// A detected region: label, detector confidence, source frame, feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub label: String,
    pub confidence: f64,
    pub frame_idx: usize,
    pub feature: Vec<f64>,
}

/// A visual concept token with its first-detection frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub token: String,
    pub frame_idx: usize,
}

/// Per-clip feature tracks. Frame indices on regions and concepts are
/// absolute clip positions, so segmentation is idempotent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModalityBundle {
    pub clip_id: String,
    pub fps: f64,
    /// Absolute frame index of `frames` row 0.
    pub frame_offset: usize,
    /// L2-normalized frame features `[f, d_img]`.
    pub frames: Option<Tensor>,
    pub subtitle: Vec<SubtitleToken>,
    pub regions: Vec<Region>,
    /// Deduplicated, ordered by first detection.
    pub concepts: Vec<Concept>,
}

impl ModalityBundle {
    pub fn frame_count(&self) -> usize {
        self.frames.as_ref().map(|f| f.rows()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if let Some(frames) = &self.frames {
            for i in 0..frames.rows() {
                let norm: f64 = frames.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(DataError::Invalid(format!(
                        "frame {i} of `{}` has L2 norm {norm}",
                        self.clip_id
                    )));
                }
            }
        }
        let mut per_frame = std::collections::BTreeMap::new();
        for r in &self.regions {
            *per_frame.entry(r.frame_idx).or_insert(0usize) += 1;
        }
        if let Some((frame, count)) = per_frame.iter().find(|(_, c)| **c > 20) {
            return Err(DataError::Invalid(format!(
                "frame {frame} of `{}` has {count} regions (cap 20)",
                self.clip_id
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.concepts {
            if !seen.insert(&c.token) {
                return Err(DataError::Invalid(format!(
                    "duplicate concept `{}` in `{}`",
                    c.token, self.clip_id
                )));
            }
        }
        Ok(())
    }
}

/// Lower-cases and splits on whitespace, trimming surrounding
/// punctuation from each token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'');
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Classifies by exact match of the lower-cased first token against the
/// six question words; anything else falls to `Other`.
pub fn classify_question_type(question: &[String]) -> Result<QType, DataError> {
    let first = question
        .first()
        .ok_or_else(|| DataError::Invalid("empty question".into()))?;
    Ok(match first.to_lowercase().as_str() {
        "what" => QType::What,
        "who" => QType::Who,
        "why" => QType::Why,
        "where" => QType::Where,
        "how" => QType::How,
        "which" => QType::Which,
        _ => QType::Other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn question_type_from_first_token() {
        let q = toks("What was House saying before he leaned over the bed?");
        assert_eq!(classify_question_type(&q).unwrap(), QType::What);
    }

    #[test]
    fn typo_and_did_fall_to_other() {
        let q = toks("tWhat was the reason House said they should do a brain biopsy?");
        assert_eq!(classify_question_type(&q).unwrap(), QType::Other);
        let q2 = toks("Did Joey walk into the room before or after Chandler?");
        assert_eq!(classify_question_type(&q2).unwrap(), QType::Other);
        let q3 = toks("Whom did Roger say was following him after he made the drop?");
        assert_eq!(classify_question_type(&q3).unwrap(), QType::Other);
    }

    #[test]
    fn empty_question_is_an_error() {
        assert!(classify_question_type(&[]).is_err());
    }

    #[test]
    fn every_question_maps_to_exactly_one_type() {
        for t in ["Why now?", "where is it", "HOW come", "which one", "who", "whenever"] {
            let q = toks(t);
            let qt = classify_question_type(&q).unwrap();
            let matches = QType::ALL.iter().filter(|x| **x == qt).count();
            assert_eq!(matches, 1);
        }
    }

    #[test]
    fn tokenizer_strips_punctuation_and_lowers() {
        assert_eq!(toks("What's up, Doc?!"), vec!["what's", "up", "doc"]);
        assert_eq!(toks("  a  b  "), vec!["a", "b"]);
        assert!(toks(" ... ").is_empty());
    }

    #[test]
    fn bundle_validation_catches_norms_and_caps() {
        let mut b = ModalityBundle {
            clip_id: "c".into(),
            fps: 3.0,
            frame_offset: 0,
            frames: Some(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap()),
            ..Default::default()
        };
        assert!(b.validate().is_err());
        b.frames = Some(Tensor::matrix(1, 2, vec![0.6, 0.8]).unwrap());
        assert!(b.validate().is_ok());
        for _ in 0..21 {
            b.regions.push(Region {
                label: "x".into(),
                confidence: 0.5,
                frame_idx: 0,
                feature: vec![0.0; 2],
            });
        }
        assert!(b.validate().is_err());
    }
}
