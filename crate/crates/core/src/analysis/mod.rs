//! Quantitative instruments over fixed evaluation splits: IoU and
//! agreement between runs, inclusion-exclusion subsets, popular vote,
//! pre-softmax vote statistics, question-type breakdowns, heuristic
//! baselines, and subset export.

pub mod report;
pub mod stats;

pub use stats::{quartiles, welch_ttest};

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CueLabel, QAExample, QType};
use crate::model::PredictionRecord;
use crate::numerics::softmax_slice;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("runs cover different splits: {0}")]
    SplitMismatch(String),
    #[error("invalid analysis input: {0}")]
    Invalid(String),
    #[error("statistic undefined: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ground-truth facts about one question, captured when a run is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QidMeta {
    pub truth: usize,
    pub qtype: QType,
    pub cue: CueLabel,
}

/// One model's predictions over a fixed evaluation split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRun {
    pub run_id: String,
    pub streams: String,
    pub embedding: String,
    pub records: Vec<PredictionRecord>,
    pub meta: BTreeMap<u64, QidMeta>,
}

impl ModelRun {
    pub fn new(
        run_id: &str,
        streams: &str,
        embedding: &str,
        records: Vec<PredictionRecord>,
        split: &[QAExample],
    ) -> Result<Self, AnalysisError> {
        let meta: BTreeMap<u64, QidMeta> = split
            .iter()
            .map(|e| {
                (
                    e.qid,
                    QidMeta {
                        truth: e.answer_idx,
                        qtype: e.qtype,
                        cue: e.cue_label,
                    },
                )
            })
            .collect();
        let record_ids: BTreeSet<u64> = records.iter().map(|r| r.qid).collect();
        if record_ids.len() != records.len() {
            return Err(AnalysisError::Invalid(format!(
                "run `{run_id}` has duplicate qids"
            )));
        }
        let split_ids: BTreeSet<u64> = meta.keys().cloned().collect();
        if record_ids != split_ids {
            return Err(AnalysisError::Invalid(format!(
                "run `{run_id}` records do not cover the split ({} vs {} qids)",
                record_ids.len(),
                split_ids.len()
            )));
        }
        Ok(ModelRun {
            run_id: run_id.to_string(),
            streams: streams.to_string(),
            embedding: embedding.to_string(),
            records,
            meta,
        })
    }

    pub fn split_ids(&self) -> BTreeSet<u64> {
        self.meta.keys().cloned().collect()
    }

    pub fn correct_set(&self) -> BTreeSet<u64> {
        self.records.iter().filter(|r| r.correct).map(|r| r.qid).collect()
    }

    pub fn accuracy(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.correct).count() as f64 / self.records.len() as f64
    }

    pub fn accuracy_on(&self, qids: &BTreeSet<u64>) -> f64 {
        if qids.is_empty() {
            return 0.0;
        }
        let hit = self
            .records
            .iter()
            .filter(|r| qids.contains(&r.qid) && r.correct)
            .count();
        hit as f64 / qids.len() as f64
    }

    /// Accuracy over the slice of questions with a given cue label.
    pub fn accuracy_on_cue(&self, cue: CueLabel) -> Option<f64> {
        let slice: BTreeSet<u64> = self
            .meta
            .iter()
            .filter(|(_, m)| m.cue == cue)
            .map(|(q, _)| *q)
            .collect();
        if slice.is_empty() {
            None
        } else {
            Some(self.accuracy_on(&slice))
        }
    }
}

fn check_same_split(runs: &[&ModelRun]) -> Result<(), AnalysisError> {
    if runs.len() < 2 {
        return Ok(());
    }
    let first = runs[0].split_ids();
    for r in &runs[1..] {
        if r.split_ids() != first {
            return Err(AnalysisError::SplitMismatch(format!(
                "`{}` vs `{}`",
                runs[0].run_id, r.run_id
            )));
        }
    }
    Ok(())
}

/// `|C_a ∩ C_b| / |C_a ∪ C_b|` over correctly answered question ids;
/// 1 when both correct sets are empty.
pub fn iou_correct(a: &ModelRun, b: &ModelRun) -> Result<f64, AnalysisError> {
    check_same_split(&[a, b])?;
    let ca = a.correct_set();
    let cb = b.correct_set();
    let union = ca.union(&cb).count();
    if union == 0 {
        return Ok(1.0);
    }
    let inter = ca.intersection(&cb).count();
    Ok(inter as f64 / union as f64)
}

/// Fraction of questions where the two runs predict the same index,
/// regardless of correctness.
pub fn agreement(a: &ModelRun, b: &ModelRun) -> Result<f64, AnalysisError> {
    check_same_split(&[a, b])?;
    let preds_a: BTreeMap<u64, usize> = a.records.iter().map(|r| (r.qid, r.predicted)).collect();
    let mut same = 0;
    for r in &b.records {
        if preds_a[&r.qid] == r.predicted {
            same += 1;
        }
    }
    Ok(same as f64 / b.records.len().max(1) as f64)
}

/// Inclusion-Exclusion Measure: questions answered correctly by at
/// least one model of group A and by no model of group B, as a subset
/// and as a fraction of the split. An empty group B yields group A's
/// union accuracy.
pub fn iem(
    group_a: &[&ModelRun],
    group_b: &[&ModelRun],
) -> Result<(BTreeSet<u64>, f64), AnalysisError> {
    if group_a.is_empty() {
        return Err(AnalysisError::Invalid("group A must be non-empty".into()));
    }
    let all: Vec<&ModelRun> = group_a.iter().chain(group_b.iter()).cloned().collect();
    check_same_split(&all)?;
    let mut union_a: BTreeSet<u64> = BTreeSet::new();
    for run in group_a {
        union_a.extend(run.correct_set());
    }
    for run in group_b {
        let cb = run.correct_set();
        union_a.retain(|q| !cb.contains(q));
    }
    let split_len = group_a[0].records.len();
    let pct = union_a.len() as f64 / split_len.max(1) as f64;
    Ok((union_a, pct))
}

/// A named question subset with the rule that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSpec {
    pub name: String,
    pub qids: BTreeSet<u64>,
    pub rule: String,
}

/// Questions where at least `threshold` of the runs agree on one index;
/// with `require_correct` the agreed index must also be the ground truth.
pub fn popular_vote_subset(
    runs: &[&ModelRun],
    threshold: f64,
    require_correct: bool,
    name: &str,
) -> Result<SubsetSpec, AnalysisError> {
    if runs.is_empty() {
        return Err(AnalysisError::Invalid("popular vote needs >= 1 run".into()));
    }
    if !(0.5..=1.0).contains(&threshold) {
        return Err(AnalysisError::Invalid(format!(
            "popular-vote threshold {threshold} outside [0.5, 1]"
        )));
    }
    check_same_split(runs)?;
    let n_runs = runs.len() as f64;
    let mut qids = BTreeSet::new();
    for (idx, base) in runs[0].records.iter().enumerate() {
        let qid = base.qid;
        let mut counts = [0usize; 5];
        let mut correct_counts = [0usize; 5];
        for run in runs {
            let rec = &run.records[idx];
            debug_assert_eq!(rec.qid, qid, "records must be order-aligned");
            counts[rec.predicted] += 1;
            if rec.correct {
                correct_counts[rec.predicted] += 1;
            }
        }
        let included = if require_correct {
            let truth = runs[0].meta[&qid].truth;
            debug_assert!(correct_counts[truth] == 0 || correct_counts[truth] == counts[truth]);
            counts[truth] as f64 / n_runs >= threshold
        } else {
            counts.iter().any(|c| *c as f64 / n_runs >= threshold)
        };
        if included {
            qids.insert(qid);
        }
    }
    Ok(SubsetSpec {
        name: name.to_string(),
        qids,
        rule: format!(
            "popular_vote(threshold={threshold}, require_correct={require_correct}, runs=[{}])",
            runs.iter().map(|r| r.run_id.as_str()).collect::<Vec<_>>().join(",")
        ),
    })
}

/// Confusion class of one (example, answer, stream) vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VoteClass {
    Tp,
    Fp,
    Tn,
    Fn,
}

impl VoteClass {
    pub const ALL: [VoteClass; 4] = [VoteClass::Tp, VoteClass::Fp, VoteClass::Tn, VoteClass::Fn];

    pub fn name(&self) -> &'static str {
        match self {
            VoteClass::Tp => "TP",
            VoteClass::Fp => "FP",
            VoteClass::Tn => "TN",
            VoteClass::Fn => "FN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteSummary {
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub summary: Option<VoteSummary>,
}

/// Per-stream, per-class sample counts and quartile summaries of the
/// pre-softmax votes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteStats {
    pub per_stream: BTreeMap<String, BTreeMap<VoteClass, ClassStats>>,
    pub n_examples: usize,
}

impl VoteStats {
    pub fn class(&self, stream: &str, class: VoteClass) -> Option<&ClassStats> {
        self.per_stream.get(stream).and_then(|m| m.get(&class))
    }
}

/// Classifies every (example, answer, stream) vote:
/// answer == prediction and correct -> TP; answer == prediction and
/// incorrect -> FP; answer != prediction but answer is the truth -> FN;
/// otherwise TN.
pub fn vote_contribution_stats(run: &ModelRun) -> Result<VoteStats, AnalysisError> {
    if run.records.iter().any(|r| r.stream_votes.is_empty()) {
        return Err(AnalysisError::Invalid(format!(
            "run `{}` lacks per-stream votes",
            run.run_id
        )));
    }
    let mut values: BTreeMap<String, BTreeMap<VoteClass, Vec<f64>>> = BTreeMap::new();
    for rec in &run.records {
        let truth = run.meta[&rec.qid].truth;
        for (stream, vote) in &rec.stream_votes {
            let per_class = values.entry(stream.clone()).or_default();
            for answer in 0..5 {
                let class = if answer == rec.predicted {
                    if rec.correct {
                        VoteClass::Tp
                    } else {
                        VoteClass::Fp
                    }
                } else if answer == truth {
                    VoteClass::Fn
                } else {
                    VoteClass::Tn
                };
                per_class.entry(class).or_default().push(vote[answer]);
            }
        }
    }
    let mut per_stream = BTreeMap::new();
    for (stream, classes) in values {
        let mut out = BTreeMap::new();
        for class in VoteClass::ALL {
            let vals = classes.get(&class).map(|v| v.as_slice()).unwrap_or(&[]);
            let summary = if vals.is_empty() {
                None
            } else {
                let mut sorted = vals.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let (q1, median, q3) = quartiles(&sorted);
                Some(VoteSummary {
                    mean: vals.iter().sum::<f64>() / vals.len() as f64,
                    q1,
                    median,
                    q3,
                })
            };
            out.insert(
                class,
                ClassStats {
                    count: vals.len(),
                    summary,
                },
            );
        }
        per_stream.insert(stream, out);
    }
    Ok(VoteStats {
        per_stream,
        n_examples: run.records.len(),
    })
}

/// Per-type accuracy, its offset from the run's overall accuracy, and
/// the question count. Types absent from the split are omitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QTypeStat {
    pub count: usize,
    pub accuracy: f64,
    pub offset: f64,
}

pub fn qtype_performance(run: &ModelRun) -> BTreeMap<QType, QTypeStat> {
    let overall = run.accuracy();
    let mut per_type: BTreeMap<QType, (usize, usize)> = BTreeMap::new();
    for rec in &run.records {
        let qtype = run.meta[&rec.qid].qtype;
        let slot = per_type.entry(qtype).or_insert((0, 0));
        slot.0 += 1;
        if rec.correct {
            slot.1 += 1;
        }
    }
    per_type
        .into_iter()
        .map(|(qtype, (count, hit))| {
            let accuracy = hit as f64 / count as f64;
            (
                qtype,
                QTypeStat {
                    count,
                    accuracy,
                    offset: accuracy - overall,
                },
            )
        })
        .collect()
}

/// Percentage increase of each question type's share inside a subset
/// relative to its share of the whole split. `None` marks types absent
/// from the split (undefined ratio).
pub fn qtype_abundance(
    subset: &SubsetSpec,
    run: &ModelRun,
) -> Result<BTreeMap<QType, Option<f64>>, AnalysisError> {
    if subset.qids.is_empty() {
        return Err(AnalysisError::Invalid(format!(
            "subset `{}` is empty",
            subset.name
        )));
    }
    if !subset.qids.is_subset(&run.split_ids()) {
        return Err(AnalysisError::Invalid(format!(
            "subset `{}` has qids outside the split",
            subset.name
        )));
    }
    let total_split = run.meta.len() as f64;
    let total_subset = subset.qids.len() as f64;
    let mut out = BTreeMap::new();
    for qtype in QType::ALL {
        let in_split = run.meta.values().filter(|m| m.qtype == qtype).count() as f64;
        if in_split == 0.0 {
            out.insert(qtype, None);
            continue;
        }
        let in_subset = subset
            .qids
            .iter()
            .filter(|q| run.meta[q].qtype == qtype)
            .count() as f64;
        let share_split = in_split / total_split;
        let share_subset = in_subset / total_subset;
        out.insert(qtype, Some((share_subset - share_split) / share_split * 100.0));
    }
    Ok(out)
}

/// Predicts the answer with the most tokens (ties to the lowest index);
/// returns a run usable by every other instrument. Votes are the raw
/// token counts.
pub fn longest_answer_baseline(split: &[QAExample]) -> Result<ModelRun, AnalysisError> {
    let records: Vec<PredictionRecord> = split
        .iter()
        .map(|ex| {
            let lens: [f64; 5] = std::array::from_fn(|i| ex.answers[i].len() as f64);
            let mut predicted = 0;
            for i in 1..5 {
                if lens[i] > lens[predicted] {
                    predicted = i;
                }
            }
            PredictionRecord {
                qid: ex.qid,
                stream_votes: vec![("len".to_string(), lens)],
                aggregate: lens,
                distribution: {
                    let sm = softmax_slice(&lens);
                    std::array::from_fn(|i| sm[i])
                },
                predicted,
                correct: predicted == ex.answer_idx,
            }
        })
        .collect();
    ModelRun::new("longest_answer", "heuristic", "none", records, split)
}

// ── Subset export ──────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct SubsetLine {
    qid: u64,
    rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    cue_label: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct SubsetManifestEntry {
    name: String,
    file: String,
    rule: String,
    size: usize,
}

/// Writes one JSONL file per subset plus `subsets.manifest.json`;
/// reloading reproduces identical membership.
pub fn export_subsets(
    specs: &[SubsetSpec],
    meta: Option<&BTreeMap<u64, QidMeta>>,
    dir: &Path,
) -> Result<(), AnalysisError> {
    fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    for spec in specs {
        let file = format!("subset_{}.jsonl", spec.name);
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join(&file))?);
        for qid in &spec.qids {
            let line = SubsetLine {
                qid: *qid,
                rule: spec.rule.clone(),
                cue_label: meta
                    .and_then(|m| m.get(qid))
                    .map(|m| m.cue.name().to_string()),
            };
            writeln!(
                w,
                "{}",
                serde_json::to_string(&line)
                    .map_err(|e| AnalysisError::Invalid(format!("encode: {e}")))?
            )?;
        }
        w.flush()?;
        manifest.push(SubsetManifestEntry {
            name: spec.name.clone(),
            file,
            rule: spec.rule.clone(),
            size: spec.qids.len(),
        });
    }
    fs::write(
        dir.join("subsets.manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| AnalysisError::Invalid(format!("manifest: {e}")))?
            + "\n",
    )?;
    Ok(())
}

/// Reads subsets back from an export directory.
pub fn load_subsets(dir: &Path) -> Result<Vec<SubsetSpec>, AnalysisError> {
    let manifest_text = fs::read_to_string(dir.join("subsets.manifest.json"))?;
    let manifest: Vec<SubsetManifestEntry> = serde_json::from_str(&manifest_text)
        .map_err(|e| AnalysisError::Invalid(format!("manifest decode: {e}")))?;
    let mut out = Vec::new();
    for entry in manifest {
        let text = fs::read_to_string(dir.join(&entry.file))?;
        let mut qids = BTreeSet::new();
        let mut rule = entry.rule.clone();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: SubsetLine = serde_json::from_str(line)
                .map_err(|e| AnalysisError::Invalid(format!("subset line: {e}")))?;
            qids.insert(parsed.qid);
            rule = parsed.rule;
        }
        out.push(SubsetSpec {
            name: entry.name,
            qids,
            rule,
        });
    }
    Ok(out)
}
