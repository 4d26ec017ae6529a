//! Synthetic multimodal QA generation with planted, labeled cues.
//!
//! Every example gets one of four cue kinds:
//!   SUB   — the correct answer's entity token appears in the in-window
//!           subtitle and no other candidate's entity does;
//!   VID   — the entity appears among in-window visual concepts (via a
//!           planted region) and a matching direction is mixed into the
//!           in-window frame features;
//!   JOINT — the answer is identified only by the pairing of a subtitle
//!           token with a concurrent concept token; either token alone is
//!           shared with a second candidate;
//!   NONE  — no signal, all five candidates equally supported.
//!
//! Token pools (entities / fillers / objects) are disjoint, so distractor
//! text can never leak a cue of the wrong kind.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    CueLabel, DataError, ModalityBundle, QAExample, QType, Region,
    SubtitleToken,
};
use crate::numerics::{fnv1a64, RngState, Tensor};

/// Proportions of planted cue kinds. Must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CueMix {
    #[serde(default)]
    pub sub: f64,
    #[serde(default)]
    pub vid: f64,
    #[serde(default)]
    pub joint: f64,
    #[serde(default)]
    pub none: f64,
}

impl Default for CueMix {
    fn default() -> Self {
        CueMix { sub: 0.25, vid: 0.25, joint: 0.25, none: 0.25 }
    }
}

/// Proportions of question types. Must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QTypeMix {
    pub what: f64,
    pub who: f64,
    pub why: f64,
    #[serde(rename = "where")]
    pub where_: f64,
    pub how: f64,
    pub which: f64,
    pub other: f64,
}

impl Default for QTypeMix {
    fn default() -> Self {
        QTypeMix {
            what: 0.34,
            who: 0.20,
            why: 0.10,
            where_: 0.12,
            how: 0.10,
            which: 0.12,
            other: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_examples: usize,
    pub vocab_size: usize,
    pub cue_mix: CueMix,
    pub qtype_mix: QTypeMix,
    pub clip_len_s: f64,
    pub fps: f64,
    /// Frame / region feature width.
    pub d_img: usize,
    /// Static embedding width; planted frame directions are tiled static
    /// embeddings so the frame stream has a learnable map to word space.
    pub d_static: usize,
    /// 0 = no length signal; 1 = correct answers systematically longer.
    pub answer_length_bias: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_examples: 1000,
            vocab_size: 200,
            cue_mix: CueMix::default(),
            qtype_mix: QTypeMix::default(),
            clip_len_s: 6.0,
            fps: 3.0,
            d_img: 64,
            d_static: 32,
            answer_length_bias: 0.0,
            seed: 7,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_examples == 0 {
            return Err(DataError::Generation("n_examples must be positive".into()));
        }
        if self.vocab_size < 40 {
            return Err(DataError::Generation(format!(
                "vocab_size {} too small: non-leaking distractor sampling needs >= 40 \
                 (disjoint entity/filler/object pools)",
                self.vocab_size
            )));
        }
        let cm = self.cue_mix;
        let cue_sum = cm.sub + cm.vid + cm.joint + cm.none;
        if [cm.sub, cm.vid, cm.joint, cm.none].iter().any(|p| *p < 0.0)
            || (cue_sum - 1.0).abs() > 1e-9
        {
            return Err(DataError::Generation(format!(
                "cue mix must be non-negative and sum to 1 (got {cue_sum})"
            )));
        }
        let qm = self.qtype_mix;
        let q = [qm.what, qm.who, qm.why, qm.where_, qm.how, qm.which, qm.other];
        let q_sum: f64 = q.iter().sum();
        if q.iter().any(|p| *p < 0.0) || (q_sum - 1.0).abs() > 1e-9 {
            return Err(DataError::Generation(format!(
                "qtype mix must be non-negative and sum to 1 (got {q_sum})"
            )));
        }
        if self.d_img < 4 || self.d_static < 4 {
            return Err(DataError::Generation("feature dims must be >= 4".into()));
        }
        if !(0.0..=1.0).contains(&self.answer_length_bias) {
            return Err(DataError::Generation(format!(
                "answer_length_bias {} outside [0, 1]",
                self.answer_length_bias
            )));
        }
        if self.clip_len_s < 4.0 || self.fps <= 0.0 {
            return Err(DataError::Generation(
                "clip_len_s must be >= 4 and fps positive".into(),
            ));
        }
        Ok(())
    }
}

struct Pools {
    entities: Vec<String>,
    /// Subtitle and question filler tokens.
    fillers: Vec<String>,
    /// Answer filler tokens; disjoint from subtitle fillers so the only
    /// subtitle/answer matches are planted cue tokens.
    answer_fillers: Vec<String>,
    objects: Vec<String>,
}

fn build_pools(vocab_size: usize) -> Pools {
    let n_ent = (vocab_size * 2) / 5;
    let n_obj = vocab_size / 5;
    let rest = vocab_size - n_ent - n_obj;
    let n_fil = rest / 2;
    let n_afil = rest - n_fil;
    Pools {
        entities: (0..n_ent).map(|i| format!("ent{i:03}")).collect(),
        fillers: (0..n_fil).map(|i| format!("fil{i:03}")).collect(),
        answer_fillers: (0..n_afil).map(|i| format!("wrd{i:03}")).collect(),
        objects: (0..n_obj).map(|i| format!("obj{i:03}")).collect(),
    }
}

fn pick<'a>(pool: &'a [String], rng: &mut RngState) -> &'a str {
    &pool[rng.below(pool.len() as u64) as usize]
}

/// Samples `n` distinct items from a pool.
fn pick_distinct<'a>(pool: &'a [String], n: usize, rng: &mut RngState) -> Vec<&'a str> {
    assert!(pool.len() >= n, "pool too small");
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    rng.shuffle(&mut idx);
    idx[..n].iter().map(|i| pool[*i].as_str()).collect()
}

/// Tiles a static embedding across the image width, L2-normalized: the
/// map back to word space is a fixed linear projection, so frame
/// features correlate learnably with answer embeddings.
fn planted_direction(token: &str, d_img: usize, d_static: usize) -> Vec<f64> {
    let emb = super::embed::EmbeddingTable::hashed(d_static).embed(token);
    let mut v: Vec<f64> = (0..d_img).map(|i| emb[i % d_static]).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

fn noise_unit(rng: &mut RngState, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.next_normal()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    v
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    v
}

const FRAME_NOISE: f64 = 0.35;
const REGION_NOISE: f64 = 0.25;
const OTHER_STARTERS: [&str; 4] = ["did", "whom", "twhat", "does"];

fn question_tokens(qtype: QType, pools: &Pools, rng: &mut RngState) -> Vec<String> {
    let starter = match qtype {
        QType::Other => OTHER_STARTERS[rng.below(OTHER_STARTERS.len() as u64) as usize],
        t => t.name(),
    };
    let mut q = vec![starter.to_string()];
    let len = rng.range_inclusive(3, 5) as usize;
    for _ in 0..len {
        q.push(pick(&pools.fillers, rng).to_string());
    }
    q
}

/// Builds an answer of exactly `len` tokens containing the given cue
/// tokens at random positions, padded with fillers.
fn answer_tokens(cues: &[&str], len: usize, pools: &Pools, rng: &mut RngState) -> Vec<String> {
    let len = len.max(cues.len()).max(1);
    let mut toks: Vec<String> = cues.iter().map(|c| c.to_string()).collect();
    while toks.len() < len {
        toks.push(pick(&pools.answer_fillers, rng).to_string());
    }
    rng.shuffle(&mut toks);
    toks
}

fn answer_lengths(bias: f64, correct: usize, rng: &mut RngState) -> [usize; 5] {
    let mut lens = [0usize; 5];
    for l in lens.iter_mut() {
        *l = rng.range_inclusive(2, 5) as usize;
    }
    if rng.flip(bias) {
        lens[correct] += rng.range_inclusive(2, 4) as usize;
    }
    lens
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Generates a labeled synthetic dataset. Deterministic per config:
/// identical configs (including seed) produce byte-identical
/// serializations.
pub fn generate_dataset(
    cfg: &DatasetConfig,
) -> Result<(Vec<QAExample>, BTreeMap<String, ModalityBundle>), DataError> {
    cfg.validate()?;
    let pools = build_pools(cfg.vocab_size);
    let base = RngState::new(cfg.seed ^ fnv1a64("dataset"));
    let mut examples = Vec::with_capacity(cfg.n_examples);
    let mut bundles = BTreeMap::new();

    for qid in 0..cfg.n_examples as u64 {
        let mut rng = base.fork(qid + 1);
        let cue = match rng.pick_weighted(&[
            cfg.cue_mix.sub,
            cfg.cue_mix.vid,
            cfg.cue_mix.joint,
            cfg.cue_mix.none,
        ]) {
            0 => CueLabel::Sub,
            1 => CueLabel::Vid,
            2 => CueLabel::Joint,
            _ => CueLabel::None,
        };
        let qm = cfg.qtype_mix;
        let qtype = QType::ALL[rng.pick_weighted(&[
            qm.what, qm.who, qm.why, qm.where_, qm.how, qm.which, qm.other,
        ])];
        let (example, bundle) = generate_example(cfg, &pools, qid, cue, qtype, &mut rng)?;
        example.validate().map_err(|e| {
            DataError::Generation(format!("internal invariant broke on qid {qid}: {e}"))
        })?;
        bundle.validate().map_err(|e| {
            DataError::Generation(format!("internal invariant broke on qid {qid}: {e}"))
        })?;
        bundles.insert(bundle.clip_id.clone(), bundle);
        examples.push(example);
    }
    Ok((examples, bundles))
}

fn generate_example(
    cfg: &DatasetConfig,
    pools: &Pools,
    qid: u64,
    cue: CueLabel,
    qtype: QType,
    rng: &mut RngState,
) -> Result<(QAExample, ModalityBundle), DataError> {
    let clip_id = format!("clip{qid:06}");
    let duration = cfg.clip_len_s;
    let n_frames = (duration * cfg.fps).round() as usize;

    // Timestamp window, quantized to the 2-decimal wire precision.
    let win_len = rng.uniform(1.6, 2.6);
    let start = round2(rng.uniform(0.2, duration - win_len - 0.2));
    let ts = (start, round2(start + win_len));

    let answer_idx = rng.below(5) as usize;

    // Candidate identities. SUB/VID/NONE answers carry one entity each;
    // JOINT answers carry an (entity, object) pair.
    let mut answer_cues: Vec<Vec<&str>> = Vec::with_capacity(5);
    let mut joint_pair: Option<(&str, &str)> = None;
    let entities = pick_distinct(&pools.entities, 5, rng);
    match cue {
        CueLabel::Joint => {
            // The correct pair (p, x); its entity p is shared with two
            // distractors and its object x with the other two, so either
            // modality alone leaves three consistent candidates while the
            // pairing pins exactly one.
            let ents = pick_distinct(&pools.entities, 3, rng); // p, q, r
            let objs = pick_distinct(&pools.objects, 3, rng); // x, y, z
            let correct_pair = (ents[0], objs[0]);
            let mut distractors = vec![
                (ents[0], objs[1]),
                (ents[0], objs[2]),
                (ents[1], objs[0]),
                (ents[2], objs[0]),
            ];
            rng.shuffle(&mut distractors);
            let mut slots: Vec<(&str, &str)> = Vec::with_capacity(5);
            let mut it = distractors.into_iter();
            for i in 0..5 {
                if i == answer_idx {
                    slots.push(correct_pair);
                } else {
                    slots.push(it.next().expect("four distractor pairs"));
                }
            }
            joint_pair = Some(correct_pair);
            answer_cues = slots.into_iter().map(|(u, v)| vec![u, v]).collect();
        }
        _ => {
            for e in &entities {
                answer_cues.push(vec![*e]);
            }
        }
    }

    let lens = answer_lengths(cfg.answer_length_bias, answer_idx, rng);
    let answers: [Vec<String>; 5] = std::array::from_fn(|i| {
        answer_tokens(&answer_cues[i], lens[i], pools, rng)
    });

    let question = question_tokens(qtype, pools, rng);

    // ── Subtitle track ─────────────────────────────────────────────
    let n_sub = (duration * 1.75).round() as usize;
    let dt = duration / n_sub as f64;
    let mut subtitle: Vec<SubtitleToken> = (0..n_sub)
        .map(|k| SubtitleToken {
            token: pick(&pools.fillers, rng).to_string(),
            start: round2(k as f64 * dt),
            end: round2((k + 1) as f64 * dt),
        })
        .collect();
    let in_window: Vec<usize> = (0..n_sub)
        .filter(|k| subtitle[*k].end >= ts.0 && subtitle[*k].start <= ts.1)
        .collect();
    let out_window: Vec<usize> = (0..n_sub).filter(|k| !in_window.contains(k)).collect();
    debug_assert!(in_window.len() >= 2, "window too narrow for subtitles");

    let planted_sub_token: Option<&str> = match cue {
        CueLabel::Sub => Some(answer_cues[answer_idx][0]),
        CueLabel::Joint => Some(joint_pair.unwrap().0),
        _ => None,
    };
    if let Some(tok) = planted_sub_token {
        let first = rng.below(in_window.len() as u64) as usize;
        subtitle[in_window[first]].token = tok.to_string();
        if in_window.len() >= 3 {
            let second = (first + 1 + rng.below(in_window.len() as u64 - 1) as usize)
                % in_window.len();
            subtitle[in_window[second]].token = tok.to_string();
        }
    }
    // Out-of-window decoy: a wrong candidate's entity, teaching the
    // model that evidence outside the timestamp window is unreliable.
    if matches!(cue, CueLabel::Sub) && !out_window.is_empty() && rng.flip(0.35) {
        let wrong: Vec<usize> = (0..5).filter(|i| *i != answer_idx).collect();
        let j = wrong[rng.below(4) as usize];
        let slot = out_window[rng.below(out_window.len() as u64) as usize];
        subtitle[slot].token = answer_cues[j][0].to_string();
    }

    // ── Frames ─────────────────────────────────────────────────────
    let frame_lo = (ts.0 * cfg.fps).floor() as usize;
    let frame_hi = ((ts.1 * cfg.fps).ceil() as usize).min(n_frames);
    let vid_direction: Option<Vec<f64>> = match cue {
        CueLabel::Vid => Some(planted_direction(
            answer_cues[answer_idx][0],
            cfg.d_img,
            cfg.d_static,
        )),
        _ => None,
    };
    let mut frame_rows: Vec<Vec<f64>> = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let noise = noise_unit(rng, cfg.d_img);
        let row = match (&vid_direction, f >= frame_lo && f < frame_hi) {
            (Some(dir), true) => normalize(
                dir.iter()
                    .zip(&noise)
                    .map(|(d, n)| d + FRAME_NOISE * n)
                    .collect(),
            ),
            _ => noise,
        };
        frame_rows.push(row);
    }
    let mut frames = Tensor::from_rows(&frame_rows)?;
    frames.quantize_f32();

    // ── Regions (concepts derive from their labels) ────────────────
    // Decoy labels avoid every candidate's object token so a concept can
    // only ever support the planted answer.
    let forbidden: Vec<&str> = answer_cues.iter().flat_map(|c| c.iter().copied()).collect();
    let decoys: Vec<String> = pools
        .objects
        .iter()
        .filter(|o| !forbidden.contains(&o.as_str()))
        .cloned()
        .collect();
    if decoys.len() < 3 {
        return Err(DataError::Generation(
            "vocab too small: object pool exhausted by candidate answers".into(),
        ));
    }
    let mut regions: Vec<Region> = Vec::new();
    for f in 0..n_frames {
        let count = match rng.below(10) {
            0..=4 => 0,
            5..=8 => 1,
            _ => 2,
        };
        for _ in 0..count {
            let label = decoys[rng.below(decoys.len() as u64) as usize].clone();
            let feature = normalize(
                planted_direction(&label, cfg.d_img, cfg.d_static)
                    .iter()
                    .zip(noise_unit(rng, cfg.d_img))
                    .map(|(d, n)| d + REGION_NOISE * n)
                    .collect(),
            );
            regions.push(Region {
                label,
                confidence: rng.uniform(0.3, 0.88),
                frame_idx: f,
                feature,
            });
        }
    }
    let planted_concept: Option<&str> = match cue {
        CueLabel::Vid => Some(answer_cues[answer_idx][0]),
        CueLabel::Joint => Some(joint_pair.unwrap().1),
        _ => None,
    };
    if let Some(label) = planted_concept {
        // Plant in a few in-window frames with top confidence.
        let span = frame_hi.saturating_sub(frame_lo).max(1);
        let n_plant = span.min(3);
        for p in 0..n_plant {
            let f = frame_lo + (p * span) / n_plant;
            let feature = normalize(
                planted_direction(label, cfg.d_img, cfg.d_static)
                    .iter()
                    .zip(noise_unit(rng, cfg.d_img))
                    .map(|(d, n)| d + REGION_NOISE * n)
                    .collect(),
            );
            regions.push(Region {
                label: label.to_string(),
                confidence: rng.uniform(0.9, 0.99),
                frame_idx: f.min(n_frames - 1),
                feature,
            });
        }
        // Out-of-window decoy entity region, mirroring the subtitle decoy.
        if matches!(cue, CueLabel::Vid) && frame_lo > 1 && rng.flip(0.35) {
            let wrong: Vec<usize> = (0..5).filter(|i| *i != answer_idx).collect();
            let j = wrong[rng.below(4) as usize];
            let label = answer_cues[j][0];
            regions.push(Region {
                label: label.to_string(),
                confidence: rng.uniform(0.9, 0.99),
                frame_idx: rng.below(frame_lo as u64) as usize,
                feature: normalize(
                    planted_direction(label, cfg.d_img, cfg.d_static)
                        .iter()
                        .zip(noise_unit(rng, cfg.d_img))
                        .map(|(d, n)| d + REGION_NOISE * n)
                        .collect(),
                ),
            });
        }
    }
    regions.sort_by(|a, b| {
        a.frame_idx.cmp(&b.frame_idx).then(
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap_or(std::cmp::Ordering::Equal),
        )
    });
    for r in &mut regions {
        r.confidence = round2(r.confidence);
        for v in &mut r.feature {
            *v = *v as f32 as f64;
        }
    }

    // Concepts: deduplicated region labels ordered by first detection.
    let mut concepts = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for r in &regions {
        if seen.insert(r.label.clone()) {
            concepts.push(super::Concept {
                token: r.label.clone(),
                frame_idx: r.frame_idx,
            });
        }
    }

    let example = QAExample {
        qid,
        question,
        answers,
        answer_idx,
        clip_id: clip_id.clone(),
        ts,
        qtype,
        cue_label: cue,
    };
    let bundle = ModalityBundle {
        clip_id,
        fps: cfg.fps,
        frame_offset: 0,
        frames: Some(frames),
        subtitle,
        regions,
        concepts,
    };
    Ok((example, bundle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::jsonl::save_dataset;
    use crate::data::segment_by_timestamp;

    fn cfg(n: usize, mix: CueMix, seed: u64) -> DatasetConfig {
        DatasetConfig {
            n_examples: n,
            cue_mix: mix,
            seed,
            ..Default::default()
        }
    }

    fn window_subtitle_tokens(b: &ModalityBundle, ts: (f64, f64)) -> Vec<&str> {
        b.subtitle
            .iter()
            .filter(|t| t.end >= ts.0 && t.start <= ts.1)
            .map(|t| t.token.as_str())
            .collect()
    }

    fn window_concepts(b: &ModalityBundle, ts: (f64, f64), fps: f64) -> Vec<&str> {
        let lo = (ts.0 * fps).floor() as usize;
        let hi = (ts.1 * fps).ceil() as usize;
        b.concepts
            .iter()
            .filter(|c| c.frame_idx >= lo && c.frame_idx < hi)
            .map(|c| c.token.as_str())
            .collect()
    }

    /// Evidence-scan classifier: counts a candidate's cue-eligible tokens
    /// (entities and objects; filler matches carry no information under
    /// the generative model) confirmed by the in-window subtitle or
    /// concepts; ties go to the lowest index. On signal-free data this is
    /// the Bayes-optimal rule (uniform posterior).
    fn scan_classify(ex: &QAExample, b: &ModalityBundle) -> usize {
        let subs = window_subtitle_tokens(b, ex.ts);
        let cons = window_concepts(b, ex.ts, b.fps);
        let mut best = (0usize, -1i64);
        for (i, ans) in ex.answers.iter().enumerate() {
            let score = ans
                .iter()
                .filter(|t| t.starts_with("ent") || t.starts_with("obj"))
                .map(|t| {
                    subs.contains(&t.as_str()) as i64 + cons.contains(&t.as_str()) as i64
                })
                .sum::<i64>();
            if score > best.1 {
                best = (i, score);
            }
        }
        best.0
    }

    #[test]
    fn sub_cues_are_sound() {
        let mix = CueMix { sub: 1.0, vid: 0.0, joint: 0.0, none: 0.0 };
        let (examples, bundles) = generate_dataset(&cfg(200, mix, 11)).unwrap();
        let mut clean = 0;
        for ex in &examples {
            let b = &bundles[&ex.clip_id];
            let subs = window_subtitle_tokens(b, ex.ts);
            // The correct answer's entity token is in the window.
            let correct_hit = ex.answers[ex.answer_idx]
                .iter()
                .any(|t| subs.contains(&t.as_str()));
            assert!(correct_hit, "qid {} missing planted cue", ex.qid);
            // No incorrect answer's entity token in the window.
            let leak = (0..5)
                .filter(|i| *i != ex.answer_idx)
                .any(|i| ex.answers[i].iter().any(|t| t.starts_with("ent") && subs.contains(&t.as_str())));
            if !leak {
                clean += 1;
            }
        }
        assert!(clean as f64 >= 0.95 * examples.len() as f64, "{clean}/200");
        // The scan oracle solves the set.
        let correct = examples
            .iter()
            .filter(|ex| scan_classify(ex, &bundles[&ex.clip_id]) == ex.answer_idx)
            .count();
        assert!(correct as f64 > 0.98 * examples.len() as f64, "{correct}/200");
    }

    #[test]
    fn vid_cues_live_in_concepts_and_frames() {
        let mix = CueMix { sub: 0.0, vid: 1.0, joint: 0.0, none: 0.0 };
        let (examples, bundles) = generate_dataset(&cfg(100, mix, 13)).unwrap();
        for ex in &examples {
            let b = &bundles[&ex.clip_id];
            let cons = window_concepts(b, ex.ts, b.fps);
            let entity = ex.answers[ex.answer_idx]
                .iter()
                .find(|t| t.starts_with("ent"))
                .unwrap();
            assert!(cons.contains(&entity.as_str()), "qid {}", ex.qid);
            // No entity leak into the in-window subtitle.
            let subs = window_subtitle_tokens(b, ex.ts);
            assert!(subs.iter().all(|t| !t.starts_with("ent")));
            // In-window frames correlate with the planted direction.
            let seg = segment_by_timestamp(b, ex.ts, b.fps).unwrap();
            let dir = planted_direction(entity, 64, 32);
            let frames = seg.frames.as_ref().unwrap();
            let mean_dot: f64 = (0..frames.rows())
                .map(|i| frames.row(i).iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>()
                / frames.rows() as f64;
            assert!(mean_dot > 0.7, "qid {} mean_dot {mean_dot}", ex.qid);
        }
    }

    #[test]
    fn joint_cues_need_both_modalities() {
        let mix = CueMix { sub: 0.0, vid: 0.0, joint: 1.0, none: 0.0 };
        let (examples, bundles) = generate_dataset(&cfg(150, mix, 17)).unwrap();
        for ex in &examples {
            let b = &bundles[&ex.clip_id];
            let subs = window_subtitle_tokens(b, ex.ts);
            let cons = window_concepts(b, ex.ts, b.fps);
            // Brute-force consistency: candidates whose entity is in the
            // subtitle window / whose object is among window concepts.
            let sub_consistent: Vec<usize> = (0..5)
                .filter(|i| {
                    ex.answers[*i]
                        .iter()
                        .any(|t| t.starts_with("ent") && subs.contains(&t.as_str()))
                })
                .collect();
            let vid_consistent: Vec<usize> = (0..5)
                .filter(|i| {
                    ex.answers[*i]
                        .iter()
                        .any(|t| t.starts_with("obj") && cons.contains(&t.as_str()))
                })
                .collect();
            assert!(
                sub_consistent.len() >= 2,
                "qid {}: subtitle alone pins {:?}",
                ex.qid,
                sub_consistent
            );
            assert!(
                vid_consistent.len() >= 2,
                "qid {}: concepts alone pin {:?}",
                ex.qid,
                vid_consistent
            );
            // The pairing is unique: intersection = the correct answer.
            let both: Vec<usize> = sub_consistent
                .iter()
                .filter(|i| vid_consistent.contains(i))
                .cloned()
                .collect();
            assert_eq!(both, vec![ex.answer_idx], "qid {}", ex.qid);
        }
    }

    #[test]
    fn none_mix_is_chance_for_the_scan_oracle() {
        let mix = CueMix { sub: 0.0, vid: 0.0, joint: 0.0, none: 1.0 };
        let (examples, bundles) = generate_dataset(&cfg(2000, mix, 19)).unwrap();
        let correct = examples
            .iter()
            .filter(|ex| scan_classify(ex, &bundles[&ex.clip_id]) == ex.answer_idx)
            .count();
        let acc = correct as f64 / examples.len() as f64;
        assert!((acc - 0.2).abs() <= 0.03, "accuracy {acc}");
    }

    #[test]
    fn same_config_serializes_byte_identically() {
        let mix = CueMix::default();
        let (e1, b1) = generate_dataset(&cfg(40, mix, 5)).unwrap();
        let (e2, b2) = generate_dataset(&cfg(40, mix, 5)).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_dataset(d1.path(), &e1, &b1).unwrap();
        save_dataset(d2.path(), &e2, &b2).unwrap();
        for name in [
            "annotations.jsonl",
            "subtitles.jsonl",
            "concepts.jsonl",
            "regions.jsonl",
            "frames.bin",
            "frames.meta.json",
            "regions.bin",
            "regions.meta.json",
            "dataset.json",
        ] {
            let x = std::fs::read(d1.path().join(name)).unwrap();
            let y = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(x, y, "{name} differs");
        }
        // Different seed changes the bytes.
        let (e3, _) = generate_dataset(&cfg(40, mix, 6)).unwrap();
        assert_ne!(e1[0].question, e3[0].question);
    }

    #[test]
    fn dataset_round_trips_through_files() {
        let (examples, bundles) = generate_dataset(&cfg(25, CueMix::default(), 23)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &examples, &bundles).unwrap();
        let (e2, b2) = crate::data::jsonl::load_dataset(dir.path()).unwrap();
        assert_eq!(examples, e2);
        assert_eq!(bundles, b2);
    }

    #[test]
    fn length_bias_drives_longest_answer_heuristic() {
        let longest = |ex: &QAExample| -> usize {
            let mut best = 0;
            for i in 1..5 {
                if ex.answers[i].len() > ex.answers[best].len() {
                    best = i;
                }
            }
            best
        };
        let mut biased = cfg(1500, CueMix::default(), 31);
        biased.answer_length_bias = 1.0;
        let (examples, _) = generate_dataset(&biased).unwrap();
        let acc = examples.iter().filter(|e| longest(e) == e.answer_idx).count() as f64
            / examples.len() as f64;
        assert!(acc > 0.6, "biased accuracy {acc}");

        let mut flat = cfg(1500, CueMix::default(), 31);
        flat.answer_length_bias = 0.0;
        let (examples, _) = generate_dataset(&flat).unwrap();
        let acc = examples.iter().filter(|e| longest(e) == e.answer_idx).count() as f64
            / examples.len() as f64;
        assert!((acc - 0.2).abs() <= 0.03, "flat accuracy {acc}");
    }

    #[test]
    fn qtype_partition_covers_dataset() {
        let (examples, _) = generate_dataset(&cfg(300, CueMix::default(), 37)).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for e in &examples {
            *counts.entry(e.qtype).or_insert(0usize) += 1;
        }
        let total: usize = counts.values().sum();
        assert_eq!(total, 300);
        // Default mix exercises every type at n=300.
        assert!(counts.len() >= 6, "{counts:?}");
    }

    #[test]
    fn infeasible_config_names_the_constraint() {
        let mut c = cfg(10, CueMix::default(), 1);
        c.vocab_size = 30;
        match generate_dataset(&c) {
            Err(DataError::Generation(msg)) => assert!(msg.contains("vocab_size"), "{msg}"),
            other => panic!("expected generation error, got {other:?}"),
        }
    }
}
