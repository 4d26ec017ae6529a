//! The multi-stream QA network: per-stream encoding, context matching
//! against question and answers, stream processors, and additive vote
//! aggregation. Any subset of the four feature streams can be enabled;
//! the dual-stream variant fuses subtitle and frame features with
//! bilinear pooling instead.

pub mod dual_stream;
pub mod forward;

pub use forward::{context_match, model_forward, predict_batch, Mode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::embed::TokenEncoder;
use crate::data::DataError;
use crate::fusion::SketchParams;
use crate::numerics::{LstmParams, NumericsError, RngState, Tensor};
use crate::params::{ParamError, ParamStore};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("inference failed for qid {qid}: {msg}")]
    Inference { qid: u64, msg: String },
    #[error("model configuration: {0}")]
    Config(String),
}

/// One of the four feature streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Subtitle,
    Vcpt,
    Img,
    Reg,
}

impl Stream {
    pub fn name(&self) -> &'static str {
        match self {
            Stream::Subtitle => "sub",
            Stream::Vcpt => "vcpt",
            Stream::Img => "img",
            Stream::Reg => "reg",
        }
    }

    pub fn letter(&self) -> char {
        match self {
            Stream::Subtitle => 'S',
            Stream::Vcpt => 'V',
            Stream::Img => 'I',
            Stream::Reg => 'R',
        }
    }
}

/// Which streams are enabled; at least one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSet {
    pub subtitle: bool,
    pub vcpt: bool,
    pub img: bool,
    pub reg: bool,
}

impl StreamSet {
    pub fn new(subtitle: bool, vcpt: bool, img: bool, reg: bool) -> Result<Self, ModelError> {
        let s = StreamSet { subtitle, vcpt, img, reg };
        if s.enabled().is_empty() {
            return Err(ModelError::Config("at least one stream must be enabled".into()));
        }
        Ok(s)
    }

    /// Parses labels like "S", "SI", "SVIR" (any order, case-insensitive).
    pub fn parse(label: &str) -> Result<Self, ModelError> {
        let mut s = StreamSet { subtitle: false, vcpt: false, img: false, reg: false };
        for c in label.chars() {
            match c.to_ascii_uppercase() {
                'S' => s.subtitle = true,
                'V' => s.vcpt = true,
                'I' => s.img = true,
                'R' => s.reg = true,
                other => {
                    return Err(ModelError::Config(format!(
                        "unknown stream letter `{other}` in `{label}`"
                    )))
                }
            }
        }
        if s.enabled().is_empty() {
            return Err(ModelError::Config(format!("empty stream set `{label}`")));
        }
        Ok(s)
    }

    /// Canonical S-V-I-R order.
    pub fn enabled(&self) -> Vec<Stream> {
        let mut out = Vec::new();
        if self.subtitle {
            out.push(Stream::Subtitle);
        }
        if self.vcpt {
            out.push(Stream::Vcpt);
        }
        if self.img {
            out.push(Stream::Img);
        }
        if self.reg {
            out.push(Stream::Reg);
        }
        out
    }

    pub fn label(&self) -> String {
        self.enabled().iter().map(|s| s.letter()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    /// Frozen static lookup vectors.
    Static,
    /// Frozen contextual rows (each depends on the whole sequence).
    Contextual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    /// Small dims for CPU-scale runs; ratios match the full model.
    Desk,
    /// The full model's published dimensions.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Mcb,
    Mfh,
}

/// Resolved layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Word-vector space every track is projected into.
    pub d_wordvec: usize,
    /// Global encoder output (two directions).
    pub hidden: usize,
    /// Stream encoder output (two directions).
    pub stream_hidden: usize,
    /// First classifier layer width.
    pub fc_dim: usize,
    /// MCB sketch output width.
    pub mcb_dim: usize,
    pub mfh_factor: usize,
    pub mfh_out: usize,
    pub mfh_blocks: usize,
    pub top_k_regions: usize,
}

impl ScalePreset {
    pub fn dims(&self) -> ModelDims {
        match self {
            ScalePreset::Desk => ModelDims {
                d_wordvec: 32,
                hidden: 32,
                stream_hidden: 64,
                fc_dim: 50,
                mcb_dim: 64,
                mfh_factor: 2,
                mfh_out: 32,
                mfh_blocks: 2,
                top_k_regions: 5,
            },
            ScalePreset::Paper => ModelDims {
                d_wordvec: 300,
                hidden: 300,
                stream_hidden: 600,
                fc_dim: 500,
                mcb_dim: 1500,
                mfh_factor: 5,
                mfh_out: 300,
                mfh_blocks: 2,
                top_k_regions: 20,
            },
        }
    }

    pub fn d_static(&self) -> usize {
        match self {
            ScalePreset::Desk => 32,
            ScalePreset::Paper => 300,
        }
    }

    pub fn d_contextual(&self) -> usize {
        match self {
            ScalePreset::Desk => 48,
            ScalePreset::Paper => 768,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub streams: StreamSet,
    pub embedding: EmbeddingKind,
    pub scale: ScalePreset,
    /// Token embedding width (resolved from scale and embedding kind).
    pub d_text: usize,
    /// Frame / region feature width.
    pub d_img: usize,
    pub dims: ModelDims,
    pub dropout: f64,
    /// `Some` switches to the dual-stream fused model (needs S and I).
    pub fusion: Option<FusionKind>,
    /// Weight init seed; also derives the MCB sketch hashes.
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(
        streams: StreamSet,
        embedding: EmbeddingKind,
        scale: ScalePreset,
        d_img: usize,
        fusion: Option<FusionKind>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if fusion.is_some() && !(streams.subtitle && streams.img) {
            return Err(ModelError::Config(
                "dual-stream fusion needs the S and I tracks".into(),
            ));
        }
        let d_text = match embedding {
            EmbeddingKind::Static => scale.d_static(),
            EmbeddingKind::Contextual => scale.d_contextual(),
        };
        Ok(ModelConfig {
            streams,
            embedding,
            scale,
            d_text,
            d_img,
            dims: scale.dims(),
            dropout: 0.5,
            fusion,
            seed,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("model config serializes")
    }
}

/// A model: resolved config, trainable parameters, the frozen token
/// encoder, and (for MCB fusion) the fixed sketch maps.
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub encoder: TokenEncoder,
    pub sketches: Option<(SketchParams, SketchParams)>,
}

const SKETCH_SEED_A: u64 = 0x5AE7_C401_A11C_E001;
const SKETCH_SEED_B: u64 = 0x5AE7_C402_B22D_F002;

fn affine_init(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut RngState) {
    let bound = 1.0 / (d_in as f64).sqrt();
    store
        .insert(&format!("{name}.w"), Tensor::uniform(vec![d_in, d_out], -bound, bound, rng))
        .expect("fresh name");
    let mut b = Tensor::zeros(vec![d_out]);
    b.requires_grad = true;
    store.insert(&format!("{name}.b"), b).expect("fresh name");
}

impl Model {
    /// Initializes all weights for the enabled streams.
    pub fn init(cfg: ModelConfig, encoder: TokenEncoder) -> Result<Self, ModelError> {
        if encoder.dim() != cfg.d_text {
            return Err(ModelError::Config(format!(
                "encoder dim {} but config d_text {}",
                encoder.dim(),
                cfg.d_text
            )));
        }
        let mut rng = RngState::new(cfg.seed ^ 0x4D4F_4445_4C00_0001);
        let mut params = ParamStore::new();
        let d = cfg.dims;

        // Input projections into word-vector space. Concept tokens are
        // words and ride the text projection.
        affine_init(&mut params, "proj.text", cfg.d_text, d.d_wordvec, &mut rng);
        if cfg.streams.img {
            affine_init(&mut params, "proj.img", cfg.d_img, d.d_wordvec, &mut rng);
        }
        if cfg.streams.reg {
            affine_init(&mut params, "proj.reg", cfg.d_img, d.d_wordvec, &mut rng);
        }

        // Shared global bidirectional encoder.
        let gh = d.hidden / 2;
        params.insert_lstm("global.fwd", &LstmParams::init(d.d_wordvec, gh, &mut rng))?;
        params.insert_lstm("global.bwd", &LstmParams::init(d.d_wordvec, gh, &mut rng))?;

        let mut sketches = None;
        match cfg.fusion {
            None => {
                for stream in cfg.streams.enabled() {
                    Self::init_processor(&mut params, &format!("stream.{}", stream.name()), &d, &mut rng)?;
                }
            }
            Some(kind) => {
                Self::init_processor(&mut params, "stream.fused", &d, &mut rng)?;
                let fused_dim = match kind {
                    FusionKind::Mcb => d.mcb_dim,
                    FusionKind::Mfh => d.mfh_blocks * d.mfh_out,
                };
                affine_init(&mut params, "fusion.proj", fused_dim, d.hidden, &mut rng);
                match kind {
                    FusionKind::Mcb => {
                        sketches = Some((
                            SketchParams::new(d.hidden, d.mcb_dim, cfg.seed ^ SKETCH_SEED_A),
                            SketchParams::new(d.hidden, d.mcb_dim, cfg.seed ^ SKETCH_SEED_B),
                        ));
                    }
                    FusionKind::Mfh => {
                        let width = d.mfh_factor * d.mfh_out;
                        let bound = 1.0 / (d.hidden as f64).sqrt();
                        for b in 0..d.mfh_blocks {
                            for side in ["u", "v"] {
                                params.insert(
                                    &format!("fusion.mfh.{b}.{side}"),
                                    Tensor::uniform(vec![d.hidden, width], -bound, bound, &mut rng),
                                )?;
                            }
                        }
                    }
                }
            }
        }
        Ok(Model {
            cfg,
            params,
            encoder,
            sketches,
        })
    }

    fn init_processor(
        params: &mut ParamStore,
        prefix: &str,
        d: &ModelDims,
        rng: &mut RngState,
    ) -> Result<(), ModelError> {
        let sh = d.stream_hidden / 2;
        let width = 5 * d.hidden;
        params.insert_lstm(&format!("{prefix}.enc.fwd"), &LstmParams::init(width, sh, rng))?;
        params.insert_lstm(&format!("{prefix}.enc.bwd"), &LstmParams::init(width, sh, rng))?;
        affine_init(params, &format!("{prefix}.fc1"), d.stream_hidden, d.fc_dim, rng);
        affine_init(params, &format!("{prefix}.fc2"), d.fc_dim, 1, rng);
        Ok(())
    }

    /// Rebuilds a model around a loaded parameter store.
    pub fn from_parts(
        cfg: ModelConfig,
        params: ParamStore,
        encoder: TokenEncoder,
    ) -> Result<Self, ModelError> {
        let sketches = match cfg.fusion {
            Some(FusionKind::Mcb) => Some((
                SketchParams::new(cfg.dims.hidden, cfg.dims.mcb_dim, cfg.seed ^ SKETCH_SEED_A),
                SketchParams::new(cfg.dims.hidden, cfg.dims.mcb_dim, cfg.seed ^ SKETCH_SEED_B),
            )),
            _ => None,
        };
        Ok(Model {
            cfg,
            params,
            encoder,
            sketches,
        })
    }
}

/// Per-question prediction: every enabled stream's pre-softmax vote, the
/// aggregate, and the resulting answer distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub qid: u64,
    /// `(stream name, 5-d pre-softmax vote)` in canonical stream order.
    pub stream_votes: Vec<(String, [f64; 5])>,
    /// Element-wise sum of the enabled stream votes.
    pub aggregate: [f64; 5],
    /// `softmax(aggregate)`.
    pub distribution: [f64; 5],
    pub predicted: usize,
    pub correct: bool,
}

pub(crate) fn argmax5(v: &[f64; 5]) -> usize {
    let mut best = 0;
    for i in 1..5 {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_set_parsing_and_labels() {
        let s = StreamSet::parse("vs").unwrap();
        assert_eq!(s.label(), "SV");
        assert_eq!(StreamSet::parse("SVIR").unwrap().enabled().len(), 4);
        assert!(StreamSet::parse("").is_err());
        assert!(StreamSet::parse("SX").is_err());
        assert!(StreamSet::new(false, false, false, false).is_err());
    }

    #[test]
    fn fusion_requires_s_and_i() {
        let si = StreamSet::parse("SI").unwrap();
        assert!(ModelConfig::new(si, EmbeddingKind::Static, ScalePreset::Desk, 64, Some(FusionKind::Mcb), 1).is_ok());
        let s = StreamSet::parse("S").unwrap();
        assert!(ModelConfig::new(s, EmbeddingKind::Static, ScalePreset::Desk, 64, Some(FusionKind::Mcb), 1).is_err());
    }

    #[test]
    fn desk_dims_preserve_paper_ratios() {
        let desk = ScalePreset::Desk.dims();
        let paper = ScalePreset::Paper.dims();
        assert_eq!(desk.stream_hidden, 2 * desk.hidden);
        assert_eq!(paper.stream_hidden, 2 * paper.hidden);
        assert_eq!(5 * paper.hidden, 1500);
        assert_eq!(paper.fc_dim, 500);
        assert_eq!(paper.mcb_dim, 1500);
        assert_eq!(paper.top_k_regions, 20);
    }
}
