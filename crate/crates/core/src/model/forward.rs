//! Forward passes: track encoding, context matching, stream processors,
//! vote aggregation, and batched prediction.

use std::collections::BTreeMap;

use super::{argmax5, Model, ModelError, PredictionRecord, Stream};
use crate::data::segment::{region_matrix, segment_with_fallback, select_top_k_regions};
use crate::data::{ModalityBundle, QAExample};
use crate::numerics::{bilstm_encode, bilstm_encode_multi, softmax_slice, Graph, RngState, Tensor, Var};
use crate::params::Binding;

/// Dropout on/off. Training mode draws masks from the supplied stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything a forward construction needs. One `Ctx` builds one graph;
/// parameters bound through it are shared by every example appended to
/// the same graph.
pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    pub bind: &'a mut Binding,
    pub model: &'a Model,
    pub rng: &'a mut RngState,
    pub mode: Mode,
}

impl<'a> Ctx<'a> {
    pub fn new(
        g: &'a mut Graph,
        bind: &'a mut Binding,
        model: &'a Model,
        rng: &'a mut RngState,
        mode: Mode,
    ) -> Self {
        Ctx { g, bind, model, rng, mode }
    }

    fn training(&self) -> bool {
        self.mode == Mode::Train
    }
}

/// Scaled dot-product attention of queries onto a context timeline:
/// `softmax_rows(C·Qᵀ/√h)·Q`, one context-aware query row per context
/// position.
pub fn context_match(g: &mut Graph, context: Var, query: Var) -> Result<Var, ModelError> {
    let (cs, qs) = (g.shape(context), g.shape(query));
    if cs.len() != 2 || qs.len() != 2 || cs[1] != qs[1] {
        return Err(ModelError::Config(format!(
            "context_match dims: context {cs:?} vs query {qs:?}"
        )));
    }
    let h = cs[1] as f64;
    let qt = g.transpose(query)?;
    let scores = g.matmul(context, qt)?;
    let scaled = g.scale(scores, 1.0 / h.sqrt())?;
    let attn = g.softmax_rows(scaled)?;
    Ok(g.matmul(attn, query)?)
}

/// Projects a raw track into word-vector space (affine + tanh) and runs
/// the shared global bidirectional encoder: `[n, d_track] -> [n, hidden]`.
pub fn encode_stream(ctx: &mut Ctx, raw: &Tensor, proj: &str) -> Result<Var, ModelError> {
    if raw.rows() == 0 {
        return Err(ModelError::Config("encode_stream: empty input".into()));
    }
    let x = ctx.g.leaf(raw.shape(), raw.values())?;
    let w = ctx.bind.bind(ctx.g, &ctx.model.params, &format!("{proj}.w"))?;
    let b = ctx.bind.bind(ctx.g, &ctx.model.params, &format!("{proj}.b"))?;
    let lin = ctx.g.linear(x, w, b)?;
    let projected = ctx.g.tanh(lin)?;
    let gh = ctx.model.cfg.dims.hidden / 2;
    let fwd = ctx.bind.bind_lstm(ctx.g, &ctx.model.params, "global.fwd", ctx.model.cfg.dims.d_wordvec, gh)?;
    let bwd = ctx.bind.bind_lstm(ctx.g, &ctx.model.params, "global.bwd", ctx.model.cfg.dims.d_wordvec, gh)?;
    Ok(bilstm_encode(ctx.g, projected, &fwd, &bwd)?)
}

/// Encoded question and answers, shared across streams of one example.
pub struct EncodedQa {
    pub question: Var,
    pub answers: [Var; 5],
}

pub fn encode_question_answers(ctx: &mut Ctx, ex: &QAExample) -> Result<EncodedQa, ModelError> {
    let q_emb = ctx.model.encoder.encode(&ex.question)?;
    let question = encode_stream(ctx, &q_emb, "proj.text")?;
    let mut answers = Vec::with_capacity(5);
    for a in &ex.answers {
        let emb = ctx.model.encoder.encode(a)?;
        answers.push(encode_stream(ctx, &emb, "proj.text")?);
    }
    Ok(EncodedQa {
        question,
        answers: answers.try_into().map_err(|_| ModelError::Config("five answers".into()))?,
    })
}

/// Context plus its context-aware question and answers.
pub struct StreamTensors {
    pub context: Var,
    pub aware_q: Var,
    pub aware_a: [Var; 5],
}

pub fn match_stream(ctx: &mut Ctx, context: Var, qa: &EncodedQa) -> Result<StreamTensors, ModelError> {
    let aware_q = context_match(ctx.g, context, qa.question)?;
    let mut aware_a = Vec::with_capacity(5);
    for a in qa.answers.iter() {
        aware_a.push(context_match(ctx.g, context, *a)?);
    }
    Ok(StreamTensors {
        context,
        aware_q,
        aware_a: aware_a.try_into().map_err(|_| ModelError::Config("five answers".into()))?,
    })
}

/// The concat-encode-pool-classify block producing a stream's 5-d vote.
/// Per answer: `[F; Aq; Aa; F⊙Aq; F⊙Aa]`, the stream's bidirectional
/// encoder, max pooling over time, then the two affine layers (shared
/// across the five answer hypotheses).
pub fn stream_processor(ctx: &mut Ctx, prefix: &str, st: &StreamTensors) -> Result<Var, ModelError> {
    let d = ctx.model.cfg.dims;
    let width = 5 * d.hidden;
    let sh = d.stream_hidden / 2;
    let enc_fwd = ctx.bind.bind_lstm(ctx.g, &ctx.model.params, &format!("{prefix}.enc.fwd"), width, sh)?;
    let enc_bwd = ctx.bind.bind_lstm(ctx.g, &ctx.model.params, &format!("{prefix}.enc.bwd"), width, sh)?;
    let fc1_w = ctx.bind.bind(ctx.g, &ctx.model.params, &format!("{prefix}.fc1.w"))?;
    let fc1_b = ctx.bind.bind(ctx.g, &ctx.model.params, &format!("{prefix}.fc1.b"))?;
    let fc2_w = ctx.bind.bind(ctx.g, &ctx.model.params, &format!("{prefix}.fc2.w"))?;
    let fc2_b = ctx.bind.bind(ctx.g, &ctx.model.params, &format!("{prefix}.fc2.b"))?;

    let fq = ctx.g.mul(st.context, st.aware_q)?;
    let mut concats = Vec::with_capacity(5);
    for i in 0..5 {
        let fa = ctx.g.mul(st.context, st.aware_a[i])?;
        concats.push(
            ctx.g
                .concat_cols(&[st.context, st.aware_q, st.aware_a[i], fq, fa])?,
        );
    }
    // The five answer hypotheses share weights and length: encode them in
    // one batched pass, then classify the pooled rows together.
    let encoded = bilstm_encode_multi(ctx.g, &concats, &enc_fwd, &enc_bwd)?;
    let mut pooled = Vec::with_capacity(5);
    for e in encoded {
        pooled.push(ctx.g.max_pool_time(e)?);
    }
    let rows = ctx.g.stack_rows(&pooled)?;
    let h1 = ctx.g.linear(rows, fc1_w, fc1_b)?;
    let h1 = ctx.g.relu(h1)?;
    let h1 = ctx.g.dropout(h1, ctx.model.cfg.dropout, ctx.rng, ctx.training())?;
    let out = ctx.g.linear(h1, fc2_w, fc2_b)?;
    Ok(ctx.g.flatten(out)?)
}

/// Raw per-stream input for one example after timestamp segmentation
/// with full-clip fallback. `None` when the track has no content at all.
fn stream_input(
    model: &Model,
    stream: Stream,
    seg: &ModalityBundle,
) -> Result<Option<(Tensor, &'static str)>, ModelError> {
    match stream {
        Stream::Subtitle => {
            if seg.subtitle.is_empty() {
                return Ok(None);
            }
            let tokens: Vec<String> = seg.subtitle.iter().map(|t| t.token.clone()).collect();
            Ok(Some((model.encoder.encode(&tokens)?, "proj.text")))
        }
        Stream::Vcpt => {
            if seg.concepts.is_empty() {
                return Ok(None);
            }
            // Concepts are detector labels, i.e. word tokens: they share
            // the text projection so token identity survives encoding.
            let tokens: Vec<String> = seg.concepts.iter().map(|c| c.token.clone()).collect();
            Ok(Some((model.encoder.encode(&tokens)?, "proj.text")))
        }
        Stream::Img => Ok(seg.frames.clone().map(|f| (f, "proj.img"))),
        Stream::Reg => {
            let picked = select_top_k_regions(seg, model.cfg.dims.top_k_regions)?;
            Ok(region_matrix(&picked)?.map(|m| (m, "proj.reg")))
        }
    }
}

/// Tape handles for one example's forward pass.
pub struct ForwardVars {
    /// Votes per stream label in canonical order; `None` votes are empty
    /// tracks (they contribute a neutral all-zero vote).
    pub stream_votes: Vec<(&'static str, Option<Var>)>,
    pub aggregate: Var,
}

/// Builds the multi-stream forward on the given graph. Errors if every
/// enabled stream is empty for this example.
pub fn build_forward(
    ctx: &mut Ctx,
    ex: &QAExample,
    bundle: &ModalityBundle,
) -> Result<ForwardVars, ModelError> {
    let seg = segment_with_fallback(bundle, ex.ts, bundle.fps);
    let qa = encode_question_answers(ctx, ex)?;
    let mut stream_votes: Vec<(&'static str, Option<Var>)> = Vec::new();
    let mut live: Vec<Var> = Vec::new();
    for stream in ctx.model.cfg.streams.enabled() {
        match stream_input(ctx.model, stream, &seg)? {
            None => stream_votes.push((stream.name(), None)),
            Some((raw, proj)) => {
                let context = encode_stream(ctx, &raw, proj)?;
                let st = match_stream(ctx, context, &qa)?;
                let vote = stream_processor(ctx, &format!("stream.{}", stream.name()), &st)?;
                stream_votes.push((stream.name(), Some(vote)));
                live.push(vote);
            }
        }
    }
    if live.is_empty() {
        return Err(ModelError::Inference {
            qid: ex.qid,
            msg: "all enabled streams empty for this example".into(),
        });
    }
    let aggregate = ctx.g.add_n(&live)?;
    Ok(ForwardVars {
        stream_votes,
        aggregate,
    })
}

/// Builds either the multi-stream or the dual-stream forward, per config.
pub fn build_model_forward(
    ctx: &mut Ctx,
    ex: &QAExample,
    bundle: &ModalityBundle,
) -> Result<ForwardVars, ModelError> {
    match ctx.model.cfg.fusion {
        None => build_forward(ctx, ex, bundle),
        Some(kind) => super::dual_stream::build_dual_forward(ctx, ex, bundle, kind),
    }
}

fn to_array5(values: &[f64]) -> [f64; 5] {
    let mut out = [0.0; 5];
    out.copy_from_slice(values);
    out
}

pub(crate) fn record_from_vars(
    g: &Graph,
    ex: &QAExample,
    fwd: &ForwardVars,
) -> PredictionRecord {
    let stream_votes: Vec<(String, [f64; 5])> = fwd
        .stream_votes
        .iter()
        .map(|(s, v)| {
            let vote = match v {
                Some(var) => to_array5(g.value(*var)),
                None => [0.0; 5],
            };
            (s.to_string(), vote)
        })
        .collect();
    let aggregate = to_array5(g.value(fwd.aggregate));
    let distribution = to_array5(&softmax_slice(&aggregate));
    let predicted = argmax5(&aggregate);
    PredictionRecord {
        qid: ex.qid,
        stream_votes,
        aggregate,
        distribution,
        predicted,
        correct: predicted == ex.answer_idx,
    }
}

/// Runs one example end to end and extracts its prediction record.
pub fn model_forward(
    model: &Model,
    ex: &QAExample,
    bundle: &ModalityBundle,
    mode: Mode,
    rng: &mut RngState,
) -> Result<PredictionRecord, ModelError> {
    let mut g = Graph::new();
    let mut bind = Binding::new();
    let mut ctx = Ctx::new(&mut g, &mut bind, model, rng, mode);
    let fwd = build_model_forward(&mut ctx, ex, bundle)?;
    Ok(record_from_vars(&g, ex, &fwd))
}

/// Deterministic, order-preserving evaluation with dropout disabled.
/// Per-example failures carry the offending qid.
pub fn predict_batch(
    model: &Model,
    examples: &[QAExample],
    bundles: &BTreeMap<String, ModalityBundle>,
) -> Result<Vec<PredictionRecord>, ModelError> {
    let mut rng = RngState::new(0);
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let bundle = bundles.get(&ex.clip_id).ok_or_else(|| ModelError::Inference {
            qid: ex.qid,
            msg: format!("missing bundle for clip `{}`", ex.clip_id),
        })?;
        out.push(model_forward(model, ex, bundle, Mode::Eval, &mut rng)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::embed::{EmbeddingTable, TokenEncoder};
    use crate::data::generate::{generate_dataset, DatasetConfig};
    use crate::model::{EmbeddingKind, FusionKind, ModelConfig, ScalePreset, StreamSet};

    fn tiny_dataset(n: usize, seed: u64) -> (Vec<QAExample>, BTreeMap<String, ModalityBundle>) {
        let cfg = DatasetConfig {
            n_examples: n,
            seed,
            ..Default::default()
        };
        generate_dataset(&cfg).unwrap()
    }

    fn desk_model(streams: &str, fusion: Option<FusionKind>, seed: u64) -> Model {
        let cfg = ModelConfig::new(
            StreamSet::parse(streams).unwrap(),
            EmbeddingKind::Static,
            ScalePreset::Desk,
            64,
            fusion,
            seed,
        )
        .unwrap();
        Model::init(cfg, TokenEncoder::Static(EmbeddingTable::hashed(32))).unwrap()
    }

    #[test]
    fn context_match_single_query_row_passthrough() {
        let mut g = Graph::new();
        let c = g.leaf(&[3, 4], &[0.3; 12]).unwrap();
        let qv = [1.0, -2.0, 0.5, 4.0];
        let q = g.leaf(&[1, 4], &qv).unwrap();
        let out = context_match(&mut g, c, q).unwrap();
        for i in 0..3 {
            assert_eq!(&g.value(out)[i * 4..(i + 1) * 4], &qv);
        }
    }

    #[test]
    fn context_match_orthogonal_alignment() {
        // Context rows are scaled one-hots aligned with query rows: at a
        // large scale the attention is effectively the identity.
        let scale = 100.0;
        let mut g = Graph::new();
        let mut cv = vec![0.0; 3 * 3];
        let mut qv = vec![0.0; 3 * 3];
        for i in 0..3 {
            cv[i * 3 + i] = scale;
            qv[i * 3 + i] = 1.0;
        }
        let c = g.leaf(&[3, 3], &cv).unwrap();
        let q = g.leaf(&[3, 3], &qv).unwrap();
        let out = context_match(&mut g, c, q).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.value(out)[i * 3 + j] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = RngState::new(5);
        let mut g = Graph::new();
        let cvals: Vec<f64> = (0..4 * 6).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let qvals: Vec<f64> = (0..3 * 6).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let c = g.leaf(&[4, 6], &cvals).unwrap();
        let q = g.leaf(&[3, 6], &qvals).unwrap();
        let qt = g.transpose(q).unwrap();
        let scores = g.matmul(c, qt).unwrap();
        let scaled = g.scale(scores, 1.0 / 6.0f64.sqrt()).unwrap();
        let attn = g.softmax_rows(scaled).unwrap();
        for i in 0..4 {
            let sum: f64 = g.value(attn)[i * 3..(i + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn concat_width_is_five_hidden() {
        let (examples, bundles) = tiny_dataset(2, 3);
        let model = desk_model("S", None, 1);
        let ex = &examples[0];
        let bundle = &bundles[&ex.clip_id];
        let seg = segment_with_fallback(bundle, ex.ts, bundle.fps);
        let mut g = Graph::new();
        let mut bind = Binding::new();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&mut g, &mut bind, &model, &mut rng, Mode::Eval);
        let qa = encode_question_answers(&mut ctx, ex).unwrap();
        let tokens: Vec<String> = seg.subtitle.iter().map(|t| t.token.clone()).collect();
        let emb = ctx.model.encoder.encode(&tokens).unwrap();
        let f = encode_stream(&mut ctx, &emb, "proj.text").unwrap();
        let st = match_stream(&mut ctx, f, &qa).unwrap();
        let fq = ctx.g.mul(st.context, st.aware_q).unwrap();
        let fa = ctx.g.mul(st.context, st.aware_a[0]).unwrap();
        let cat = ctx
            .g
            .concat_cols(&[st.context, st.aware_q, st.aware_a[0], fq, fa])
            .unwrap();
        assert_eq!(ctx.g.shape(cat)[1], 5 * model.cfg.dims.hidden);
        // Output length equals input length through the encoder.
        assert_eq!(ctx.g.shape(f)[0], tokens.len());
    }

    #[test]
    fn identical_answers_get_identical_votes() {
        let (mut examples, bundles) = tiny_dataset(2, 7);
        let ex = &mut examples[0];
        let same = ex.answers[0].clone();
        for a in ex.answers.iter_mut() {
            *a = same.clone();
        }
        let model = desk_model("SV", None, 2);
        let mut rng = RngState::new(0);
        let rec = model_forward(&model, ex, &bundles[&ex.clip_id], Mode::Eval, &mut rng).unwrap();
        for (_, vote) in &rec.stream_votes {
            for i in 1..5 {
                assert!((vote[i] - vote[0]).abs() < 1e-9, "{vote:?}");
            }
        }
    }

    #[test]
    fn global_encoder_weights_are_shared_across_modalities() {
        let (examples, bundles) = tiny_dataset(1, 9);
        let model = desk_model("SVI", None, 3);
        let ex = &examples[0];
        let mut g = Graph::new();
        let mut bind = Binding::new();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&mut g, &mut bind, &model, &mut rng, Mode::Eval);
        build_forward(&mut ctx, ex, &bundles[&ex.clip_id]).unwrap();
        // Binding dedups by name: one leaf per global weight regardless of
        // how many modalities passed through the encoder.
        let v1 = bind.bind(&mut g, &model.params, "global.fwd.w_input").unwrap();
        let v2 = bind.bind(&mut g, &model.params, "global.fwd.w_input").unwrap();
        assert_eq!(v1, v2);
    }

    #[test]
    fn vote_additivity_is_exact_and_single_stream_softmax() {
        let (examples, bundles) = tiny_dataset(6, 11);
        let multi = desk_model("SVI", None, 4);
        let single = desk_model("S", None, 5);
        for ex in &examples {
            let mut rng = RngState::new(0);
            let rec = model_forward(&multi, ex, &bundles[&ex.clip_id], Mode::Eval, &mut rng).unwrap();
            let mut acc = [0.0; 5];
            for (_, vote) in &rec.stream_votes {
                for i in 0..5 {
                    acc[i] += vote[i];
                }
            }
            assert_eq!(acc, rec.aggregate, "vote additivity must be bitwise");

            let rec_s = model_forward(&single, ex, &bundles[&ex.clip_id], Mode::Eval, &mut rng).unwrap();
            assert_eq!(rec_s.stream_votes.len(), 1);
            assert_eq!(rec_s.stream_votes[0].1, rec_s.aggregate);
            let sm = softmax_slice(&rec_s.aggregate);
            for i in 0..5 {
                assert!((sm[i] - rec_s.distribution[i]).abs() < 1e-15);
            }
            let sum: f64 = rec_s.distribution.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn permuting_answers_permutes_votes() {
        let (examples, bundles) = tiny_dataset(3, 13);
        let model = desk_model("SV", None, 6);
        let perm = [2usize, 0, 4, 1, 3];
        for ex in &examples {
            let mut rng = RngState::new(0);
            let base = model_forward(&model, ex, &bundles[&ex.clip_id], Mode::Eval, &mut rng).unwrap();

            let mut shuffled = ex.clone();
            for (new_pos, old_pos) in perm.iter().enumerate() {
                shuffled.answers[new_pos] = ex.answers[*old_pos].clone();
                if *old_pos == ex.answer_idx {
                    shuffled.answer_idx = new_pos;
                }
            }
            let rec = model_forward(&model, &shuffled, &bundles[&ex.clip_id], Mode::Eval, &mut rng).unwrap();
            for ((_, vote_b), (_, vote_p)) in base.stream_votes.iter().zip(&rec.stream_votes) {
                for (new_pos, old_pos) in perm.iter().enumerate() {
                    assert_eq!(vote_p[new_pos], vote_b[*old_pos], "votes must permute bitwise");
                }
            }
            // Prediction maps through the permutation.
            let mapped = perm.iter().position(|p| *p == base.predicted).unwrap();
            assert_eq!(rec.predicted, mapped);
        }
    }

    #[test]
    fn aggregate_shift_leaves_prediction_unchanged() {
        let v = [0.4, -1.0, 2.2, 2.1, 0.0];
        let shifted: [f64; 5] = std::array::from_fn(|i| v[i] + 17.5);
        assert_eq!(crate::model::argmax5(&v), crate::model::argmax5(&shifted));
    }

    #[test]
    fn disabling_a_stream_never_changes_other_votes() {
        let (examples, bundles) = tiny_dataset(4, 17);
        // Same init seed: shared parameter names get identical weights, so
        // the S vote must match bitwise between the S and SV models.
        let sv = desk_model("SV", None, 8);
        let mut s_only = desk_model("S", None, 8);
        // Copy the S-relevant weights from the SV model so both share them.
        for (name, tensor) in sv.params.iter() {
            if let Ok(t) = s_only.params.get_mut(name) {
                *t = tensor.clone();
            }
        }
        for ex in &examples {
            let mut rng = RngState::new(0);
            let rec_sv = model_forward(&sv, ex, &bundles[&ex.clip_id], Mode::Eval, &mut rng).unwrap();
            let rec_s = model_forward(&s_only, ex, &bundles[&ex.clip_id], Mode::Eval, &mut rng).unwrap();
            let sv_sub = rec_sv.stream_votes.iter().find(|(n, _)| n == "sub").unwrap();
            let s_sub = rec_s.stream_votes.iter().find(|(n, _)| n == "sub").unwrap();
            assert_eq!(sv_sub.1, s_sub.1, "stream independence violated");
        }
    }

    #[test]
    fn empty_streams_are_neutral_and_all_empty_errors() {
        let (examples, bundles) = tiny_dataset(1, 19);
        let ex = &examples[0];
        let mut bundle = bundles[&ex.clip_id].clone();
        bundle.regions.clear();
        // R stream empty -> neutral zero vote, prediction still works.
        let model = desk_model("SR", None, 9);
        let mut rng = RngState::new(0);
        let rec = model_forward(&model, ex, &bundle, Mode::Eval, &mut rng).unwrap();
        let reg = rec.stream_votes.iter().find(|(n, _)| n == "reg").unwrap();
        assert_eq!(reg.1, [0.0; 5]);

        // All enabled streams empty -> inference error with qid.
        let r_only = desk_model("R", None, 10);
        match model_forward(&r_only, ex, &bundle, Mode::Eval, &mut rng) {
            Err(ModelError::Inference { qid, .. }) => assert_eq!(qid, ex.qid),
            other => panic!("expected inference error, got {other:?}"),
        }
    }

    #[test]
    fn batch_results_independent_of_partitioning() {
        let (examples, bundles) = tiny_dataset(6, 23);
        let model = desk_model("SV", None, 11);
        let full = predict_batch(&model, &examples, &bundles).unwrap();
        let first = predict_batch(&model, &examples[..2], &bundles).unwrap();
        let rest = predict_batch(&model, &examples[2..], &bundles).unwrap();
        let stitched: Vec<PredictionRecord> = first.into_iter().chain(rest).collect();
        assert_eq!(full, stitched);
        assert!(predict_batch(&model, &[], &bundles).unwrap().is_empty());
    }

    #[test]
    fn dual_stream_shapes_and_distribution() {
        let (examples, bundles) = tiny_dataset(3, 29);
        for kind in [FusionKind::Mcb, FusionKind::Mfh] {
            let model = desk_model("SI", Some(kind), 12);
            for ex in &examples {
                let mut rng = RngState::new(0);
                let rec =
                    model_forward(&model, ex, &bundles[&ex.clip_id], Mode::Eval, &mut rng).unwrap();
                let sum: f64 = rec.distribution.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert_eq!(rec.stream_votes.len(), 1);
                assert_eq!(rec.stream_votes[0].0, "fused");
            }
        }
    }

    #[test]
    fn dual_stream_fused_length_matches_subtitle() {
        let (examples, bundles) = tiny_dataset(1, 31);
        let ex = &examples[0];
        let bundle = &bundles[&ex.clip_id];
        let model = desk_model("SI", Some(FusionKind::Mcb), 13);
        let seg = segment_with_fallback(bundle, ex.ts, bundle.fps);
        let n_s = seg.subtitle.len();

        // Rebuild the fused sequence the way the forward does and check
        // its length against the subtitle timeline.
        let mut g = Graph::new();
        let mut bind = Binding::new();
        let mut rng = RngState::new(0);
        let mut ctx = Ctx::new(&mut g, &mut bind, &model, &mut rng, Mode::Eval);
        let tokens: Vec<String> = seg.subtitle.iter().map(|t| t.token.clone()).collect();
        let sub_emb = ctx.model.encoder.encode(&tokens).unwrap();
        let f_sub = encode_stream(&mut ctx, &sub_emb, "proj.text").unwrap();
        let f_img = encode_stream(&mut ctx, &seg.frames.clone().unwrap(), "proj.img").unwrap();
        let aware = context_match(ctx.g, f_sub, f_img).unwrap();
        assert_eq!(ctx.g.shape(aware), &[n_s, model.cfg.dims.hidden]);
    }

    #[test]
    fn forward_gradients_match_finite_differences_on_sampled_params() {
        let (examples, bundles) = tiny_dataset(1, 37);
        let ex = &examples[0];
        let mut model = desk_model("S", None, 14);
        model.cfg.dropout = 0.0;
        let bundle = &bundles[&ex.clip_id];

        let loss_of = |model: &Model| -> f64 {
            let mut g = Graph::new();
            let mut bind = Binding::new();
            let mut rng = RngState::new(0);
            let mut ctx = Ctx::new(&mut g, &mut bind, model, &mut rng, Mode::Eval);
            let fwd = build_forward(&mut ctx, ex, bundle).unwrap();
            let loss = g.cross_entropy_logits(fwd.aggregate, ex.answer_idx).unwrap();
            g.scalar_value(loss)
        };
        // Analytic gradients via the tape.
        let analytic = {
            let mut g = Graph::new();
            let mut bind = Binding::new();
            let mut rng = RngState::new(0);
            let mut ctx = Ctx::new(&mut g, &mut bind, &model, &mut rng, Mode::Eval);
            let fwd = build_forward(&mut ctx, ex, bundle).unwrap();
            let loss = g.cross_entropy_logits(fwd.aggregate, ex.answer_idx).unwrap();
            let sink = g.backward(loss).unwrap();
            bind.collect(&sink)
        };

        // Sampled central differences across every parameter tensor.
        let eps = 1e-5;
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.clone()).collect();
        let mut sample_rng = RngState::new(99);
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for name in names {
            let numel = model.params.get(&name).unwrap().numel();
            for _ in 0..2.min(numel) {
                let j = sample_rng.below(numel as u64) as usize;
                let orig = model.params.get(&name).unwrap().values()[j];
                model.params.get_mut(&name).unwrap().values_mut()[j] = orig + eps;
                let plus = loss_of(&model);
                model.params.get_mut(&name).unwrap().values_mut()[j] = orig - eps;
                let minus = loss_of(&model);
                model.params.get_mut(&name).unwrap().values_mut()[j] = orig;
                let fd = (plus - minus) / (2.0 * eps);
                let a = analytic.get(&name).map(|g| g[j]).unwrap_or(0.0);
                let denom = a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max((a - fd).abs() / denom);
                checked += 1;
            }
        }
        assert!(checked > 40, "checked {checked}");
        assert!(worst < 1e-4, "worst rel err {worst}");
    }
}
