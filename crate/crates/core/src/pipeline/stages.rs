//! Pipeline stages over a run directory:
//! `gen-data -> train -> eval -> analyze -> report`.
//!
//! Every artifact is deterministic given the resolved configuration, so
//! rerunning a stage reproduces its outputs byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelEntry};
use super::PipelineError;
use crate::analysis::{
    self, agreement, iem, iou_correct, longest_answer_baseline, popular_vote_subset,
    qtype_abundance, qtype_performance, report, vote_contribution_stats, welch_ttest, ModelRun,
    SubsetSpec,
};
use crate::data::embed::{ContextualMixer, EmbeddingTable, TokenEncoder};
use crate::data::generate::generate_dataset;
use crate::data::jsonl::{load_dataset, save_dataset};
use crate::data::{ModalityBundle, QAExample};
use crate::model::{EmbeddingKind, Model, ModelConfig, PredictionRecord, StreamSet};
use crate::numerics::{fnv1a64, RngState};
use crate::params::{load_checkpoint, save_checkpoint};
use crate::training::{evaluate, train, train_rubi, RubiModel, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    Train,
    Eval,
    Analyze,
    Report,
    All,
}

impl Stage {
    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        Ok(match s {
            "gen-data" => Stage::GenData,
            "train" => Stage::Train,
            "eval" => Stage::Eval,
            "analyze" => Stage::Analyze,
            "report" => Stage::Report,
            "all" => Stage::All,
            other => {
                return Err(PipelineError::Config(format!(
                    "unknown stage `{other}` (expected all|gen-data|train|eval|analyze|report)"
                )))
            }
        })
    }
}

pub struct Paths {
    pub out: PathBuf,
}

impl Paths {
    fn data(&self) -> PathBuf {
        self.out.join("data")
    }
    fn models(&self) -> PathBuf {
        self.out.join("models")
    }
    fn predictions(&self) -> PathBuf {
        self.out.join("predictions")
    }
    fn analysis(&self) -> PathBuf {
        self.out.join("analysis")
    }
    fn report(&self) -> PathBuf {
        self.out.join("report")
    }
    fn checkpoint(&self, id: &str) -> PathBuf {
        self.models().join(format!("{id}.ckpt"))
    }
    fn history(&self, id: &str) -> PathBuf {
        self.models().join(format!("{id}.history.csv"))
    }
    fn dump(&self, id: &str) -> PathBuf {
        self.predictions().join(format!("{id}.val.jsonl"))
    }
    fn split_file(&self) -> PathBuf {
        self.out.join("split.json")
    }
}

/// Applies `--seed-override`: dataset, split and training seeds become
/// `n`; each model's init seed is derived from `n` and its id.
pub fn apply_seed_override(cfg: &mut ExperimentConfig, n: u64) {
    if let Some(s) = &mut cfg.dataset.synthetic {
        s.seed = n;
    }
    cfg.dataset.split_seed = n;
    cfg.training.train.seed = n;
    for m in &mut cfg.models {
        m.seed = n ^ fnv1a64(&m.id);
    }
}

pub fn run_pipeline(
    cfg: &ExperimentConfig,
    stage: Stage,
    out: &Path,
) -> Result<(), PipelineError> {
    let paths = Paths { out: out.to_path_buf() };
    fs::create_dir_all(out).map_err(PipelineError::from)?;
    let resolved = serde_json::to_string_pretty(cfg)
        .map_err(|e| PipelineError::Runtime(format!("resolved config encode: {e}")))?;
    fs::write(out.join("resolved_config.json"), resolved + "\n")?;

    match stage {
        Stage::GenData => stage_gen_data(cfg, &paths),
        Stage::Train => stage_train(cfg, &paths),
        Stage::Eval => stage_eval(cfg, &paths),
        Stage::Analyze => stage_analyze(cfg, &paths),
        Stage::Report => stage_report(cfg, &paths),
        Stage::All => {
            stage_gen_data(cfg, &paths)?;
            stage_train(cfg, &paths)?;
            stage_eval(cfg, &paths)?;
            stage_analyze(cfg, &paths)?;
            stage_report(cfg, &paths)
        }
    }
}

// ── Data ───────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train_qids: Vec<u64>,
    val_qids: Vec<u64>,
}

fn stage_gen_data(cfg: &ExperimentConfig, paths: &Paths) -> Result<(), PipelineError> {
    let (examples, bundles) = match (&cfg.dataset.synthetic, &cfg.dataset.real_dir) {
        (Some(synth), None) => {
            let (e, b) = generate_dataset(synth)?;
            save_dataset(&paths.data(), &e, &b)?;
            (e, b)
        }
        (None, Some(dir)) => {
            if !dir.join("annotations.jsonl").exists() {
                return Err(PipelineError::Config(format!(
                    "real_dir `{}` has no annotations.jsonl",
                    dir.display()
                )));
            }
            load_dataset(dir)?
        }
        _ => unreachable!("validated at parse time"),
    };
    drop(bundles);

    // Deterministic split by shuffled qids.
    let mut qids: Vec<u64> = examples.iter().map(|e| e.qid).collect();
    let mut rng = RngState::new(cfg.dataset.split_seed ^ fnv1a64("split"));
    rng.shuffle(&mut qids);
    let n_train = ((qids.len() as f64) * cfg.dataset.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, qids.len().saturating_sub(1).max(1));
    let split = SplitFile {
        train_qids: {
            let mut t = qids[..n_train].to_vec();
            t.sort_unstable();
            t
        },
        val_qids: {
            let mut v = qids[n_train..].to_vec();
            v.sort_unstable();
            v
        },
    };
    fs::write(
        paths.split_file(),
        serde_json::to_string(&split)
            .map_err(|e| PipelineError::Runtime(format!("split encode: {e}")))?
            + "\n",
    )?;
    Ok(())
}

fn load_data(
    cfg: &ExperimentConfig,
    paths: &Paths,
) -> Result<(Vec<QAExample>, Vec<QAExample>, BTreeMap<String, ModalityBundle>), PipelineError> {
    let dir = match (&cfg.dataset.synthetic, &cfg.dataset.real_dir) {
        (Some(_), None) => paths.data(),
        (None, Some(dir)) => dir.clone(),
        _ => unreachable!(),
    };
    if !dir.join("annotations.jsonl").exists() {
        return Err(PipelineError::MissingArtifact {
            what: format!("dataset at {}", dir.display()),
            stage: "gen-data".into(),
        });
    }
    if !paths.split_file().exists() {
        return Err(PipelineError::MissingArtifact {
            what: "split.json".into(),
            stage: "gen-data".into(),
        });
    }
    let (examples, bundles) = load_dataset(&dir)?;
    let split: SplitFile = serde_json::from_str(&fs::read_to_string(paths.split_file())?)
        .map_err(|e| PipelineError::Runtime(format!("split decode: {e}")))?;
    let by_qid: BTreeMap<u64, QAExample> = examples.into_iter().map(|e| (e.qid, e)).collect();
    let pick = |ids: &[u64]| -> Result<Vec<QAExample>, PipelineError> {
        ids.iter()
            .map(|q| {
                by_qid
                    .get(q)
                    .cloned()
                    .ok_or_else(|| PipelineError::Runtime(format!("split qid {q} not in dataset")))
            })
            .collect()
    };
    Ok((pick(&split.train_qids)?, pick(&split.val_qids)?, bundles))
}

// ── Models ─────────────────────────────────────────────────────────

fn encoder_for(entry: &ModelEntry) -> Result<TokenEncoder, PipelineError> {
    let scale = entry.scale;
    Ok(match entry.embedding {
        EmbeddingKind::Static => TokenEncoder::Static(EmbeddingTable::hashed(scale.d_static())),
        EmbeddingKind::Contextual => TokenEncoder::Contextual(
            ContextualMixer::new(
                EmbeddingTable::hashed(scale.d_static()),
                scale.d_contextual(),
            )
            .map_err(PipelineError::from)?,
        ),
    })
}

fn model_config(entry: &ModelEntry, d_img: usize) -> Result<ModelConfig, PipelineError> {
    let streams = StreamSet::parse(&entry.streams).map_err(|e| PipelineError::Config(e.to_string()))?;
    ModelConfig::new(streams, entry.embedding, entry.scale, d_img, entry.fusion, entry.seed)
        .map_err(|e| PipelineError::Config(e.to_string()))
}

fn dataset_d_img(bundles: &BTreeMap<String, ModalityBundle>) -> usize {
    bundles
        .values()
        .find_map(|b| b.frames.as_ref().map(|f| f.cols()))
        .unwrap_or(64)
}

fn train_one(
    cfg: &ExperimentConfig,
    entry: &ModelEntry,
    train_split: &[QAExample],
    val_split: &[QAExample],
    bundles: &BTreeMap<String, ModalityBundle>,
    paths: &Paths,
) -> Result<(), PipelineError> {
    let d_img = dataset_d_img(bundles);
    let mcfg = model_config(entry, d_img)?;
    let encoder = encoder_for(entry)?;
    let tcfg = TrainConfig {
        seed: cfg.training.train.seed ^ fnv1a64(&entry.id),
        ..cfg.training.train
    };
    let (params, history, header) = if entry.rubi {
        let full = Model::init(mcfg.clone(), encoder).map_err(PipelineError::from)?;
        let qo_cfg = ModelConfig::new(
            StreamSet::parse("S").map_err(|e| PipelineError::Config(e.to_string()))?,
            entry.embedding,
            entry.scale,
            d_img,
            None,
            entry.seed ^ 0x0F0,
        )
        .map_err(|e| PipelineError::Config(e.to_string()))?;
        let qo = Model::init(qo_cfg, encoder_for(entry)?).map_err(PipelineError::from)?;
        let mut rubi = RubiModel::new(full, qo).map_err(PipelineError::from)?;
        let history = train_rubi(&mut rubi, train_split, val_split, bundles, &tcfg, &cfg.training.optimizer)
            .map_err(PipelineError::from)?;
        let header = rubi.full.cfg.to_json();
        (rubi.full.params, history, header)
    } else {
        let mut model = Model::init(mcfg, encoder).map_err(PipelineError::from)?;
        let history = train(&mut model, train_split, val_split, bundles, &tcfg, &cfg.training.optimizer)
            .map_err(PipelineError::from)?;
        let header = model.cfg.to_json();
        (model.params, history, header)
    };
    save_checkpoint(&paths.checkpoint(&entry.id), &header, entry.seed, &params)?;
    history.write_csv(&paths.history(&entry.id)).map_err(PipelineError::from)?;
    Ok(())
}

fn stage_train(cfg: &ExperimentConfig, paths: &Paths) -> Result<(), PipelineError> {
    let (train_split, val_split, bundles) = load_data(cfg, paths)?;
    fs::create_dir_all(paths.models())?;
    // Pending grid cells train in parallel; each writes only its own
    // files. Existing checkpoints are kept (resume semantics).
    let pending: Vec<&ModelEntry> = cfg
        .models
        .iter()
        .filter(|m| !paths.checkpoint(&m.id).exists())
        .collect();
    pending
        .par_iter()
        .map(|entry| train_one(cfg, entry, &train_split, &val_split, &bundles, paths))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(())
}

// ── Evaluation dumps ───────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct DumpLine {
    qid: u64,
    predicted: usize,
    correct: bool,
    votes: BTreeMap<String, [f64; 5]>,
}

fn load_model(entry: &ModelEntry, d_img: usize, paths: &Paths) -> Result<Model, PipelineError> {
    let ckpt = paths.checkpoint(&entry.id);
    if !ckpt.exists() {
        return Err(PipelineError::MissingArtifact {
            what: format!("checkpoint {}", ckpt.display()),
            stage: "train".into(),
        });
    }
    let (_, _, params) = load_checkpoint(&ckpt)?;
    let mcfg = model_config(entry, d_img)?;
    Model::from_parts(mcfg, params, encoder_for(entry)?).map_err(PipelineError::from)
}

fn stage_eval(cfg: &ExperimentConfig, paths: &Paths) -> Result<(), PipelineError> {
    let (_, val_split, bundles) = load_data(cfg, paths)?;
    fs::create_dir_all(paths.predictions())?;
    let d_img = dataset_d_img(&bundles);
    for entry in &cfg.models {
        let model = load_model(entry, d_img, paths)?;
        let (_, records) = evaluate(&model, &val_split, &bundles)?;
        let mut w = std::io::BufWriter::new(fs::File::create(paths.dump(&entry.id))?);
        for rec in &records {
            let line = DumpLine {
                qid: rec.qid,
                predicted: rec.predicted,
                correct: rec.correct,
                votes: rec.stream_votes.iter().cloned().collect(),
            };
            writeln!(
                w,
                "{}",
                serde_json::to_string(&line)
                    .map_err(|e| PipelineError::Runtime(format!("dump encode: {e}")))?
            )?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Rebuilds prediction records from a dump; the aggregate is re-derived
/// as the canonical-order vote sum.
fn load_dump(path: &Path, split: &[QAExample]) -> Result<Vec<PredictionRecord>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact {
            what: format!("prediction dump {}", path.display()),
            stage: "eval".into(),
        });
    }
    let order = ["sub", "vcpt", "img", "reg", "fused", "len"];
    let truth: BTreeMap<u64, usize> = split.iter().map(|e| (e.qid, e.answer_idx)).collect();
    let reader = std::io::BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DumpLine = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Runtime(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let mut stream_votes: Vec<(String, [f64; 5])> = Vec::new();
        for name in order {
            if let Some(v) = parsed.votes.get(name) {
                stream_votes.push((name.to_string(), *v));
            }
        }
        for (name, v) in &parsed.votes {
            if !order.contains(&name.as_str()) {
                stream_votes.push((name.clone(), *v));
            }
        }
        let mut aggregate = [0.0; 5];
        for (_, v) in &stream_votes {
            for i in 0..5 {
                aggregate[i] += v[i];
            }
        }
        let distribution = {
            let sm = crate::numerics::softmax_slice(&aggregate);
            std::array::from_fn(|i| sm[i])
        };
        let _ = truth;
        out.push(PredictionRecord {
            qid: parsed.qid,
            stream_votes,
            aggregate,
            distribution,
            predicted: parsed.predicted,
            correct: parsed.correct,
        });
    }
    Ok(out)
}

fn load_runs(cfg: &ExperimentConfig, paths: &Paths) -> Result<Vec<ModelRun>, PipelineError> {
    let (_, val_split, _) = load_data(cfg, paths)?;
    let mut runs = Vec::new();
    for entry in &cfg.models {
        let records = load_dump(&paths.dump(&entry.id), &val_split)?;
        let embedding = match entry.embedding {
            EmbeddingKind::Static => "static",
            EmbeddingKind::Contextual => "contextual",
        };
        runs.push(
            ModelRun::new(&entry.id, &entry.streams, embedding, records, &val_split)
                .map_err(PipelineError::from)?,
        );
    }
    Ok(runs)
}

// ── Analysis ───────────────────────────────────────────────────────

fn stage_analyze(cfg: &ExperimentConfig, paths: &Paths) -> Result<(), PipelineError> {
    let runs = load_runs(cfg, paths)?;
    let (_, val_split, _) = load_data(cfg, paths)?;
    let dir = paths.analysis();
    fs::create_dir_all(&dir)?;

    let refs: Vec<&ModelRun> = runs.iter().collect();
    fs::write(dir.join("accuracy.csv"), report::accuracy_table_csv(&refs))?;

    // Pairwise matrices.
    let names: Vec<String> = runs.iter().map(|r| r.run_id.clone()).collect();
    let mut iou = vec![vec![0.0; runs.len()]; runs.len()];
    let mut agree = vec![vec![0.0; runs.len()]; runs.len()];
    for i in 0..runs.len() {
        for j in 0..runs.len() {
            iou[i][j] = iou_correct(&runs[i], &runs[j]).map_err(PipelineError::from)?;
            agree[i][j] = agreement(&runs[i], &runs[j]).map_err(PipelineError::from)?;
        }
    }
    fs::write(dir.join("iou.csv"), report::matrix_csv(&names, &iou))?;
    fs::write(dir.join("agreement.csv"), report::matrix_csv(&names, &agree))?;

    // IEM table and exported subsets.
    let by_id: BTreeMap<&str, &ModelRun> = runs.iter().map(|r| (r.run_id.as_str(), r)).collect();
    let mut iem_rows = Vec::new();
    let mut subsets: Vec<SubsetSpec> = Vec::new();
    for pair in &cfg.analysis.iem_pairs {
        let ga: Vec<&ModelRun> = pair.group_a.iter().map(|id| by_id[id.as_str()]).collect();
        let gb: Vec<&ModelRun> = pair.group_b.iter().map(|id| by_id[id.as_str()]).collect();
        let (qids, pct) = iem(&ga, &gb).map_err(PipelineError::from)?;
        iem_rows.push((
            pair.group_a.join("+"),
            if pair.group_b.is_empty() {
                "-".to_string()
            } else {
                pair.group_b.join("+")
            },
            qids.len(),
            pct,
        ));
        subsets.push(SubsetSpec {
            name: pair.name.clone(),
            qids,
            rule: format!(
                "iem(A=[{}], B=[{}])",
                pair.group_a.join(","),
                pair.group_b.join(",")
            ),
        });
    }
    fs::write(dir.join("iem.csv"), report::iem_table_csv(&iem_rows))?;

    // Popular vote.
    let pv_runs: Vec<&ModelRun> = if cfg.analysis.popular_vote_runs.is_empty() {
        runs.iter().collect()
    } else {
        cfg.analysis
            .popular_vote_runs
            .iter()
            .map(|id| by_id[id.as_str()])
            .collect()
    };
    let pv = popular_vote_subset(
        &pv_runs,
        cfg.analysis.popular_vote_threshold,
        cfg.analysis.popular_vote_require_correct,
        "popular_vote",
    )
    .map_err(PipelineError::from)?;
    subsets.push(pv);

    // Heuristic baseline rides along in the accuracy table.
    let longest = longest_answer_baseline(&val_split).map_err(PipelineError::from)?;
    let mut with_baseline = refs.clone();
    with_baseline.push(&longest);
    fs::write(
        dir.join("accuracy.csv"),
        report::accuracy_table_csv(&with_baseline),
    )?;

    // Vote statistics per run.
    for run in &runs {
        let stats = vote_contribution_stats(run).map_err(PipelineError::from)?;
        fs::write(
            dir.join(format!("votes_{}.csv", run.run_id)),
            report::vote_stats_csv(&run.run_id, &stats),
        )?;
    }

    // Question-type tables.
    let perfs: Vec<(String, BTreeMap<crate::data::QType, analysis::QTypeStat>)> = runs
        .iter()
        .map(|r| (r.run_id.clone(), qtype_performance(r)))
        .collect();
    let perf_refs: Vec<(&str, &BTreeMap<crate::data::QType, analysis::QTypeStat>)> =
        perfs.iter().map(|(n, m)| (n.as_str(), m)).collect();
    fs::write(
        dir.join("qtype_performance.csv"),
        report::qtype_performance_csv(&perf_refs),
    )?;

    let mut abundance_rows = Vec::new();
    for spec in &subsets {
        if spec.qids.is_empty() {
            continue;
        }
        abundance_rows.push((
            spec.name.clone(),
            qtype_abundance(spec, &runs[0]).map_err(PipelineError::from)?,
        ));
    }
    let ab_refs: Vec<(&str, &BTreeMap<crate::data::QType, Option<f64>>)> = abundance_rows
        .iter()
        .map(|(n, m)| (n.as_str(), m))
        .collect();
    fs::write(
        dir.join("qtype_abundance.csv"),
        report::qtype_abundance_csv(&ab_refs),
    )?;

    // Significance test over configured accuracy groups.
    if !cfg.analysis.ttest_group_a.is_empty() && !cfg.analysis.ttest_group_b.is_empty() {
        let acc = |ids: &[String]| -> Vec<f64> {
            ids.iter().map(|id| by_id[id.as_str()].accuracy()).collect()
        };
        let a = acc(&cfg.analysis.ttest_group_a);
        let b = acc(&cfg.analysis.ttest_group_b);
        let line = match welch_ttest(&a, &b) {
            Ok((t, df, p)) => format!("t,{t:.6}\ndf,{df:.6}\np_two_sided,{p:.6e}\n"),
            Err(e) => format!("error,{e}\n"),
        };
        fs::write(dir.join("ttest.csv"), line)?;
    }

    // Subset files.
    analysis::export_subsets(&subsets, Some(&runs[0].meta), &dir.join("subsets"))
        .map_err(PipelineError::from)?;
    Ok(())
}

// ── Report ─────────────────────────────────────────────────────────

fn stage_report(cfg: &ExperimentConfig, paths: &Paths) -> Result<(), PipelineError> {
    let runs = load_runs(cfg, paths)?;
    let dir = paths.report();
    fs::create_dir_all(&dir)?;
    let refs: Vec<&ModelRun> = runs.iter().collect();
    let names: Vec<String> = runs.iter().map(|r| r.run_id.clone()).collect();

    let mut iou = vec![vec![0.0; runs.len()]; runs.len()];
    let mut agree = vec![vec![0.0; runs.len()]; runs.len()];
    for i in 0..runs.len() {
        for j in 0..runs.len() {
            iou[i][j] = iou_correct(&runs[i], &runs[j]).map_err(PipelineError::from)?;
            agree[i][j] = agreement(&runs[i], &runs[j]).map_err(PipelineError::from)?;
        }
    }
    fs::write(
        dir.join("iou_heatmap.svg"),
        report::heatmap_svg(&names, &iou, "IoU of correct answers"),
    )?;
    fs::write(
        dir.join("agreement_heatmap.svg"),
        report::heatmap_svg(&names, &agree, "Prediction agreement"),
    )?;

    for run in &runs {
        let stats = vote_contribution_stats(run).map_err(PipelineError::from)?;
        fs::write(
            dir.join(format!("votes_{}.svg", run.run_id)),
            report::vote_stats_svg(&run.run_id, &stats),
        )?;
    }

    let perfs: Vec<(String, BTreeMap<crate::data::QType, analysis::QTypeStat>)> = runs
        .iter()
        .map(|r| (r.run_id.clone(), qtype_performance(r)))
        .collect();
    let perf_refs: Vec<(&str, &BTreeMap<crate::data::QType, analysis::QTypeStat>)> =
        perfs.iter().map(|(n, m)| (n.as_str(), m)).collect();
    fs::write(
        dir.join("qtype_offsets.svg"),
        report::qtype_offsets_svg(&perf_refs, "Question-type accuracy offsets"),
    )?;

    // IEM rows and subsets from the analyze stage artifacts.
    let by_id: BTreeMap<&str, &ModelRun> = runs.iter().map(|r| (r.run_id.as_str(), r)).collect();
    let mut iem_rows = Vec::new();
    for pair in &cfg.analysis.iem_pairs {
        let ga: Vec<&ModelRun> = pair.group_a.iter().map(|id| by_id[id.as_str()]).collect();
        let gb: Vec<&ModelRun> = pair.group_b.iter().map(|id| by_id[id.as_str()]).collect();
        let (qids, pct) = iem(&ga, &gb).map_err(PipelineError::from)?;
        iem_rows.push((
            pair.group_a.join("+"),
            if pair.group_b.is_empty() { "-".into() } else { pair.group_b.join("+") },
            qids.len(),
            pct,
        ));
    }
    let subsets = analysis::load_subsets(&paths.analysis().join("subsets")).unwrap_or_default();
    let ttest = {
        let a_ids = &cfg.analysis.ttest_group_a;
        let b_ids = &cfg.analysis.ttest_group_b;
        if a_ids.is_empty() || b_ids.is_empty() {
            None
        } else {
            let a: Vec<f64> = a_ids.iter().map(|id| by_id[id.as_str()].accuracy()).collect();
            let b: Vec<f64> = b_ids.iter().map(|id| by_id[id.as_str()].accuracy()).collect();
            welch_ttest(&a, &b).ok().map(|(t, df, p)| {
                (
                    format!("{} vs {}", a_ids.join("+"), b_ids.join("+")),
                    t,
                    df,
                    p,
                )
            })
        }
    };
    fs::write(
        dir.join("report.md"),
        report::markdown_summary(&refs, &iem_rows, &subsets, ttest),
    )?;
    Ok(())
}
