use std::collections::BTreeMap;
use std::time::Instant;

use mmqa::analysis::{iem, vote_contribution_stats, ModelRun, VoteClass};
use mmqa::data::embed::{EmbeddingTable, TokenEncoder};
use mmqa::data::generate::{generate_dataset, CueMix, DatasetConfig};
use mmqa::data::{CueLabel, QAExample};
use mmqa::model::{EmbeddingKind, Model, ModelConfig, PredictionRecord, ScalePreset, StreamSet};
use mmqa::training::{evaluate, train, OptimizerConfig, TrainConfig};

fn slice_acc(recs: &[PredictionRecord], examples: &[QAExample], cue: CueLabel) -> f64 {
    let by_qid: BTreeMap<u64, bool> = recs.iter().map(|r| (r.qid, r.correct)).collect();
    let slice: Vec<&QAExample> = examples.iter().filter(|e| e.cue_label == cue).collect();
    if slice.is_empty() { return f64::NAN; }
    slice.iter().filter(|e| by_qid[&e.qid]).count() as f64 / slice.len() as f64
}

fn main() {
    let t_all = Instant::now();
    let dcfg = DatasetConfig {
        n_examples: 4000,
        vocab_size: 240,
        cue_mix: CueMix { sub: 0.5, vid: 0.2, joint: 0.2, none: 0.1 },
        seed: 42,
        ..Default::default()
    };
    let (examples, bundles) = generate_dataset(&dcfg).unwrap();
    let bundles: BTreeMap<_, _> = bundles.into_iter().collect();
    let (train_split, val_split) = examples.split_at(2800);

    let mut runs: Vec<ModelRun> = Vec::new();
    for (streams, max_epochs, patience) in [("S", 20, 6), ("V", 34, 10), ("SV", 28, 8)] {
        let t0 = Instant::now();
        let mcfg = ModelConfig::new(
            StreamSet::parse(streams).unwrap(),
            EmbeddingKind::Static,
            ScalePreset::Desk,
            64,
            None,
            7,
        )
        .unwrap();
        let mut model = Model::init(mcfg, TokenEncoder::Static(EmbeddingTable::hashed(32))).unwrap();
        let tcfg = TrainConfig {
            batch_size: 32,
            val_interval: 176,
            patience_epochs: patience,
            max_epochs,
            seed: 3,
            train_eval_cap: 120,
            ..Default::default()
        };
        let ocfg = OptimizerConfig { learning_rate: 1e-2, ..Default::default() };
        let hist = train(&mut model, train_split, val_split, &bundles, &tcfg, &ocfg).unwrap();
        let (val_acc, recs) = evaluate(&model, val_split, &bundles).unwrap();
        println!(
            "{streams:<2} | val {val_acc:.3} SUB {:.2} VID {:.2} JOINT {:.2} NONE {:.2} | iters {} | {:?}",
            slice_acc(&recs, val_split, CueLabel::Sub),
            slice_acc(&recs, val_split, CueLabel::Vid),
            slice_acc(&recs, val_split, CueLabel::Joint),
            slice_acc(&recs, val_split, CueLabel::None),
            hist.total_iterations, t0.elapsed()
        );
        runs.push(ModelRun::new(streams, streams, "static", recs, val_split).unwrap());
    }

    // Criterion 7: IEM({SV}, {S, V}) JOINT enrichment.
    let (subset, pct) = iem(&[&runs[2]], &[&runs[0], &runs[1]]).unwrap();
    let joint_in = subset.iter().filter(|q| runs[0].meta[q].cue == CueLabel::Joint).count();
    let share_sub = joint_in as f64 / subset.len().max(1) as f64;
    let share_all = val_split.iter().filter(|e| e.cue_label == CueLabel::Joint).count() as f64 / val_split.len() as f64;
    println!("IEM {} qids ({:.1}% of split), JOINT {:.3} vs {:.3} -> {:.2}x", subset.len(), pct * 100.0, share_sub, share_all, share_sub / share_all);

    // Criterion 6: SV median TP vote, subtitle vs visual streams.
    let stats = vote_contribution_stats(&runs[2]).unwrap();
    let med = |s: &str| stats.class(s, VoteClass::Tp).and_then(|c| c.summary.as_ref().map(|x| x.median)).unwrap_or(f64::NAN);
    println!("SV TP medians: sub {:.3} vcpt {:.3}", med("sub"), med("vcpt"));
    println!("total {:?}", t_all.elapsed());
}
