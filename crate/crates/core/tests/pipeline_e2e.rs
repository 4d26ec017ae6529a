//! The CLI pipeline end to end on a tiny synthetic experiment.

use std::fs;
use std::path::Path;
use std::process::Command;

fn tiny_config(out_dir: &Path) -> String {
    format!(
        r#"{{
  "dataset": {{
    "synthetic": {{
      "n_examples": 90,
      "vocab_size": 120,
      "cue_mix": {{"sub": 0.6, "vid": 0.2, "joint": 0.1, "none": 0.1}},
      "seed": 5
    }},
    "train_fraction": 0.7,
    "split_seed": 5
  }},
  "models": [
    {{"id": "s_only", "streams": "S", "seed": 1}},
    {{"id": "v_only", "streams": "V", "seed": 2}},
    {{"id": "sv", "streams": "SV", "seed": 3}}
  ],
  "training": {{
    "train": {{"batch_size": 16, "val_interval": 4, "patience_epochs": 1, "max_epochs": 1, "seed": 9, "train_eval_cap": 20}},
    "optimizer": {{"learning_rate": 0.005}}
  }},
  "analysis": {{
    "iem_pairs": [
      {{"name": "multimodal", "group_a": ["sv"], "group_b": ["s_only", "v_only"]}},
      {{"name": "union_all", "group_a": ["s_only", "v_only", "sv"], "group_b": []}}
    ],
    "popular_vote_threshold": 0.5
  }},
  "out_dir": "{}"
}}"#,
        out_dir.display()
    )
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mmqa"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg_path = dir.path().join("exp.json");
    fs::write(&cfg_path, tiny_config(&out)).unwrap();

    let output = run_cli(&["--config", cfg_path.to_str().unwrap(), "--stage", "all"]);
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );

    // Grid contract: one checkpoint, history and dump per model.
    for id in ["s_only", "v_only", "sv"] {
        assert!(out.join(format!("models/{id}.ckpt")).exists(), "{id} ckpt");
        assert!(out.join(format!("models/{id}.history.csv")).exists());
        assert!(out.join(format!("predictions/{id}.val.jsonl")).exists());
    }
    for f in [
        "resolved_config.json",
        "split.json",
        "data/annotations.jsonl",
        "analysis/accuracy.csv",
        "analysis/iou.csv",
        "analysis/agreement.csv",
        "analysis/iem.csv",
        "analysis/qtype_performance.csv",
        "analysis/qtype_abundance.csv",
        "analysis/subsets/subsets.manifest.json",
        "report/iou_heatmap.svg",
        "report/agreement_heatmap.svg",
        "report/qtype_offsets.svg",
        "report/votes_sv.svg",
        "report/report.md",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }

    // Rerunning analyze reproduces byte-identical outputs.
    let before: Vec<(String, Vec<u8>)> = fs::read_dir(out.join("analysis"))
        .unwrap()
        .filter_map(|e| {
            let e = e.unwrap();
            if e.path().is_file() {
                Some((
                    e.file_name().to_string_lossy().into_owned(),
                    fs::read(e.path()).unwrap(),
                ))
            } else {
                None
            }
        })
        .collect();
    let output = run_cli(&["--config", cfg_path.to_str().unwrap(), "--stage", "analyze"]);
    assert!(output.status.success());
    for (name, bytes) in before {
        assert_eq!(
            fs::read(out.join("analysis").join(&name)).unwrap(),
            bytes,
            "analyze output {name} changed on rerun"
        );
    }
}

#[test]
fn later_stage_without_artifacts_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg_path = dir.path().join("exp.json");
    fs::write(&cfg_path, tiny_config(&out)).unwrap();

    let output = run_cli(&["--config", cfg_path.to_str().unwrap(), "--stage", "analyze"]);
    assert_eq!(output.status.code(), Some(2), "runtime failure exit code");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("gen-data") || stderr.contains("eval"), "{stderr}");
}

#[test]
fn config_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.json");
    fs::write(
        &cfg_path,
        r#"{"dataset": {"synthetic": {"n_examples": 10}}, "models": [{"id": "s", "streams": "S"}], "training": {"train": {"bacth_size": 4}}}"#,
    )
    .unwrap();
    let output = run_cli(&["--config", cfg_path.to_str().unwrap(), "--stage", "train", "--out", "/tmp/nope"]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("bacth_size"), "{stderr}");
}

#[test]
fn seed_override_changes_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let cfg_path = dir.path().join("exp.json");
    fs::write(&cfg_path, tiny_config(&out_a)).unwrap();

    let run = |out: &Path, seed: Option<&str>| {
        let mut args = vec![
            "--config",
            cfg_path.to_str().unwrap(),
            "--stage",
            "gen-data",
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(s) = seed {
            args.extend(["--seed-override", s]);
        }
        assert!(run_cli(&args).status.success());
    };
    run(&out_a, None);
    run(&out_b, Some("123"));
    let a = fs::read(out_a.join("data/annotations.jsonl")).unwrap();
    let b = fs::read(out_b.join("data/annotations.jsonl")).unwrap();
    assert_ne!(a, b, "seed override must change generation");
}
