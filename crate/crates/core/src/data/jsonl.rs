//! Annotation and track files.
//!
//! Annotations are TVQA-style JSON Lines: one object per question with
//! fields `qid, q, a0..a4, answer_idx, vid_name, ts` (ts as a
//! `"start-end"` decimal string). Synthetic data adds a `cue_label`
//! field which loaders treat as optional. Subtitle, concept and region
//! metadata live in sibling JSONL files keyed by `vid_name`; frame and
//! region features live in feature banks.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bank::FeatureBank;
use super::{
    classify_question_type, tokenize, Concept, CueLabel, DataError, ModalityBundle, QAExample,
    Region, SubtitleToken,
};

#[derive(Serialize, Deserialize)]
struct QARecord {
    qid: u64,
    q: String,
    a0: String,
    a1: String,
    a2: String,
    a3: String,
    a4: String,
    answer_idx: i64,
    vid_name: String,
    ts: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    cue_label: Option<String>,
}

fn parse_ts(raw: &str) -> Option<(f64, f64)> {
    let (a, b) = raw.split_once('-')?;
    let start: f64 = a.trim().parse().ok()?;
    let end: f64 = b.trim().parse().ok()?;
    Some((start, end))
}

fn format_ts(ts: (f64, f64)) -> String {
    format!("{:.2}-{:.2}", ts.0, ts.1)
}

fn parse_cue(raw: Option<&str>) -> Result<CueLabel, String> {
    match raw {
        None => Ok(CueLabel::Unknown),
        Some("SUB") => Ok(CueLabel::Sub),
        Some("VID") => Ok(CueLabel::Vid),
        Some("JOINT") => Ok(CueLabel::Joint),
        Some("NONE") => Ok(CueLabel::None),
        Some("UNKNOWN") => Ok(CueLabel::Unknown),
        Some(other) => Err(format!("unknown cue label `{other}`")),
    }
}

/// Loads TVQA-format annotations; question types are computed on load
/// and `cue_label` defaults to `Unknown`.
pub fn load_tvqa_jsonl(path: &Path) -> Result<Vec<QAExample>, DataError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let rec: QARecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if !(0..=4).contains(&rec.answer_idx) {
            return Err(DataError::Parse {
                line: lineno,
                msg: format!("answer_idx {} not in 0..=4", rec.answer_idx),
            });
        }
        let ts = parse_ts(&rec.ts).ok_or_else(|| DataError::Parse {
            line: lineno,
            msg: format!("malformed ts `{}`", rec.ts),
        })?;
        if ts.0 >= ts.1 {
            return Err(DataError::Parse {
                line: lineno,
                msg: format!("ts `{}` has start >= end", rec.ts),
            });
        }
        let question = tokenize(&rec.q);
        let qtype = classify_question_type(&question).map_err(|e| DataError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let answers = [
            tokenize(&rec.a0),
            tokenize(&rec.a1),
            tokenize(&rec.a2),
            tokenize(&rec.a3),
            tokenize(&rec.a4),
        ];
        if answers.iter().any(|a| a.is_empty()) {
            return Err(DataError::Parse {
                line: lineno,
                msg: "empty answer text".into(),
            });
        }
        let cue_label = parse_cue(rec.cue_label.as_deref())
            .map_err(|msg| DataError::Parse { line: lineno, msg })?;
        out.push(QAExample {
            qid: rec.qid,
            question,
            answers,
            answer_idx: rec.answer_idx as usize,
            clip_id: rec.vid_name,
            ts,
            qtype,
            cue_label,
        });
    }
    Ok(out)
}

/// Writes annotations in the same JSONL layout (normalized key order,
/// two-decimal timestamps). Token sequences are joined with spaces.
pub fn save_tvqa_jsonl(path: &Path, examples: &[QAExample]) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for ex in examples {
        let rec = QARecord {
            qid: ex.qid,
            q: ex.question.join(" "),
            a0: ex.answers[0].join(" "),
            a1: ex.answers[1].join(" "),
            a2: ex.answers[2].join(" "),
            a3: ex.answers[3].join(" "),
            a4: ex.answers[4].join(" "),
            answer_idx: ex.answer_idx as i64,
            vid_name: ex.clip_id.clone(),
            ts: format_ts(ex.ts),
            cue_label: match ex.cue_label {
                CueLabel::Unknown => None,
                other => Some(other.name().to_string()),
            },
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| DataError::Invalid(format!("encode qid {}: {e}", ex.qid)))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SubtitleRecord {
    vid_name: String,
    tokens: Vec<SubtitleToken>,
}

#[derive(Serialize, Deserialize)]
struct ConceptRecord {
    vid_name: String,
    concepts: Vec<Concept>,
}

#[derive(Serialize, Deserialize)]
struct RegionMetaRecord {
    vid_name: String,
    /// `(label, confidence, frame_idx)` aligned with bank row order.
    regions: Vec<(String, f64, usize)>,
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), DataError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        let line =
            serde_json::to_string(&item).map_err(|e| DataError::Invalid(format!("encode: {e}")))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DataError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// File names used inside a dataset directory.
pub mod files {
    pub const ANNOTATIONS: &str = "annotations.jsonl";
    pub const SUBTITLES: &str = "subtitles.jsonl";
    pub const CONCEPTS: &str = "concepts.jsonl";
    pub const REGION_META: &str = "regions.jsonl";
    pub const FRAME_BANK: &str = "frames";
    pub const REGION_BANK: &str = "regions";
    pub const MANIFEST: &str = "dataset.json";
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    fps: f64,
    n_examples: usize,
    n_clips: usize,
}

/// Writes a full dataset (annotations plus all modality tracks) into a
/// directory, creating it if needed.
pub fn save_dataset(
    dir: &Path,
    examples: &[QAExample],
    bundles: &BTreeMap<String, ModalityBundle>,
) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    save_tvqa_jsonl(&dir.join(files::ANNOTATIONS), examples)?;
    write_jsonl(
        &dir.join(files::SUBTITLES),
        bundles.iter().map(|(id, b)| SubtitleRecord {
            vid_name: id.clone(),
            tokens: b.subtitle.clone(),
        }),
    )?;
    write_jsonl(
        &dir.join(files::CONCEPTS),
        bundles.iter().map(|(id, b)| ConceptRecord {
            vid_name: id.clone(),
            concepts: b.concepts.clone(),
        }),
    )?;
    write_jsonl(
        &dir.join(files::REGION_META),
        bundles.iter().map(|(id, b)| RegionMetaRecord {
            vid_name: id.clone(),
            regions: b
                .regions
                .iter()
                .map(|r| (r.label.clone(), r.confidence, r.frame_idx))
                .collect(),
        }),
    )?;

    let mut frame_bank = FeatureBank::new();
    let mut region_bank = FeatureBank::new();
    let mut fps = 3.0;
    for (id, b) in bundles {
        fps = b.fps;
        match &b.frames {
            Some(frames) => frame_bank.push_matrix(id, frames)?,
            None => frame_bank.push(id, &[], 0)?,
        }
        let rows: Vec<Vec<f64>> = b.regions.iter().map(|r| r.feature.clone()).collect();
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        region_bank.push(id, &rows, dim)?;
    }
    frame_bank.write(&dir.join(files::FRAME_BANK))?;
    region_bank.write(&dir.join(files::REGION_BANK))?;

    let manifest = DatasetManifest {
        fps,
        n_examples: examples.len(),
        n_clips: bundles.len(),
    };
    fs::write(
        dir.join(files::MANIFEST),
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| DataError::Invalid(format!("manifest encode: {e}")))?
            + "\n",
    )?;
    Ok(())
}

/// Loads a dataset directory written by [`save_dataset`].
pub fn load_dataset(
    dir: &Path,
) -> Result<(Vec<QAExample>, BTreeMap<String, ModalityBundle>), DataError> {
    let examples = load_tvqa_jsonl(&dir.join(files::ANNOTATIONS))?;
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(
        dir.join(files::MANIFEST),
    )?)
    .map_err(|e| DataError::Invalid(format!("manifest decode: {e}")))?;

    let subs: Vec<SubtitleRecord> = read_jsonl(&dir.join(files::SUBTITLES))?;
    let concepts: Vec<ConceptRecord> = read_jsonl(&dir.join(files::CONCEPTS))?;
    let region_meta: Vec<RegionMetaRecord> = read_jsonl(&dir.join(files::REGION_META))?;
    let frame_bank = FeatureBank::read(&dir.join(files::FRAME_BANK))?;
    let region_bank = FeatureBank::read(&dir.join(files::REGION_BANK))?;

    let mut bundles: BTreeMap<String, ModalityBundle> = BTreeMap::new();
    for rec in subs {
        bundles
            .entry(rec.vid_name.clone())
            .or_insert_with(|| ModalityBundle {
                clip_id: rec.vid_name.clone(),
                fps: manifest.fps,
                ..Default::default()
            })
            .subtitle = rec.tokens;
    }
    for rec in concepts {
        bundles
            .entry(rec.vid_name.clone())
            .or_insert_with(|| ModalityBundle {
                clip_id: rec.vid_name.clone(),
                fps: manifest.fps,
                ..Default::default()
            })
            .concepts = rec.concepts;
    }
    for rec in region_meta {
        let features = region_bank.rows(&rec.vid_name)?;
        if features.len() != rec.regions.len() {
            return Err(DataError::Invalid(format!(
                "clip `{}`: {} region rows vs {} metadata entries",
                rec.vid_name,
                features.len(),
                rec.regions.len()
            )));
        }
        let regions: Vec<Region> = rec
            .regions
            .into_iter()
            .zip(features)
            .map(|((label, confidence, frame_idx), feature)| Region {
                label,
                confidence,
                frame_idx,
                feature,
            })
            .collect();
        bundles
            .entry(rec.vid_name.clone())
            .or_insert_with(|| ModalityBundle {
                clip_id: rec.vid_name.clone(),
                fps: manifest.fps,
                ..Default::default()
            })
            .regions = regions;
    }
    for (id, bundle) in &mut bundles {
        bundle.frames = frame_bank.matrix(id)?;
    }
    Ok((examples, bundles))
}
