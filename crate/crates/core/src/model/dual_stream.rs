//! Dual-stream model: subtitle and frame features are aligned by context
//! matching (subtitle as context, frames as query) and fused per time
//! step with bilinear pooling into a single stream processor.

use super::forward::{
    build_forward, context_match, encode_question_answers, encode_stream, match_stream,
    stream_processor, Ctx, ForwardVars, Mode,
};
use super::{FusionKind, ModelError};
use crate::data::segment::segment_with_fallback;
use crate::data::{ModalityBundle, QAExample};
use crate::fusion::{mcb_pool, mfh_pool};
use crate::numerics::Var;

/// Builds the fused forward producing one 5-d vote. Subtitle is always
/// the first pooling argument (the fusion runs on the subtitle timeline).
pub fn build_dual_forward(
    ctx: &mut Ctx,
    ex: &QAExample,
    bundle: &ModalityBundle,
    kind: FusionKind,
) -> Result<ForwardVars, ModelError> {
    let seg = segment_with_fallback(bundle, ex.ts, bundle.fps);
    if seg.subtitle.is_empty() {
        return Err(ModelError::Inference {
            qid: ex.qid,
            msg: "dual-stream model needs a subtitle track".into(),
        });
    }
    let frames = seg.frames.clone().ok_or_else(|| ModelError::Inference {
        qid: ex.qid,
        msg: "dual-stream model needs the frame track".into(),
    })?;

    let qa = encode_question_answers(ctx, ex)?;

    let tokens: Vec<String> = seg.subtitle.iter().map(|t| t.token.clone()).collect();
    let sub_emb = ctx.model.encoder.encode(&tokens)?;
    let f_sub = encode_stream(ctx, &sub_emb, "proj.text")?;
    let f_img = encode_stream(ctx, &frames, "proj.img")?;

    // Image features re-expressed on the subtitle timeline.
    let aware_img = context_match(ctx.g, f_sub, f_img)?;

    let n = ctx.g.shape(f_sub)[0];
    let training = ctx.mode == Mode::Train;
    let mut fused_rows: Vec<Var> = Vec::with_capacity(n);
    for t in 0..n {
        let sub_t = ctx.g.row(f_sub, t)?;
        let img_t = ctx.g.row(aware_img, t)?;
        let fused = match kind {
            FusionKind::Mcb => {
                let (sp1, sp2) = ctx.model.sketches.as_ref().ok_or_else(|| {
                    ModelError::Config("MCB model without sketch params".into())
                })?;
                mcb_pool(ctx.g, sub_t, img_t, sp1, sp2)?
            }
            FusionKind::Mfh => {
                let d = ctx.model.cfg.dims;
                let mut blocks = Vec::with_capacity(d.mfh_blocks);
                for b in 0..d.mfh_blocks {
                    let u = ctx.bind.bind(ctx.g, &ctx.model.params, &format!("fusion.mfh.{b}.u"))?;
                    let v = ctx.bind.bind(ctx.g, &ctx.model.params, &format!("fusion.mfh.{b}.v"))?;
                    blocks.push((u, v));
                }
                mfh_pool(
                    ctx.g,
                    sub_t,
                    img_t,
                    &blocks,
                    d.mfh_factor,
                    d.mfh_out,
                    ctx.model.cfg.dropout,
                    ctx.rng,
                    training,
                )?
            }
        };
        fused_rows.push(fused);
    }
    let fused_seq = ctx.g.stack_rows(&fused_rows)?;

    // Back into the encoder's hidden space, mirroring the input mapping.
    let w = ctx.bind.bind(ctx.g, &ctx.model.params, "fusion.proj.w")?;
    let b = ctx.bind.bind(ctx.g, &ctx.model.params, "fusion.proj.b")?;
    let lin = ctx.g.linear(fused_seq, w, b)?;
    let f_fused = ctx.g.tanh(lin)?;

    let st = match_stream(ctx, f_fused, &qa)?;
    let vote = stream_processor(ctx, "stream.fused", &st)?;
    Ok(ForwardVars {
        stream_votes: vec![("fused", Some(vote))],
        aggregate: vote,
    })
}

/// The separate-stream baseline forward with the same S+I inputs, used
/// for comparisons against the fused variant.
pub fn build_baseline_forward(
    ctx: &mut Ctx,
    ex: &QAExample,
    bundle: &ModalityBundle,
) -> Result<ForwardVars, ModelError> {
    build_forward(ctx, ex, bundle)
}
