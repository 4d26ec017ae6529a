//! Deterministic CSV / SVG / Markdown rendering of analysis results.
//! Charts are standalone SVG with the numbers alongside in CSV, so no
//! plotting runtime is needed downstream.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{ModelRun, QTypeStat, SubsetSpec, VoteClass, VoteStats};
use crate::data::{CueLabel, QType};

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// Per-run accuracy table with cue-slice columns.
pub fn accuracy_table_csv(runs: &[&ModelRun]) -> String {
    let mut out = String::from("run_id,streams,embedding,overall,sub_slice,vid_slice,joint_slice,none_slice\n");
    for run in runs {
        let slice = |cue: CueLabel| {
            run.accuracy_on_cue(cue)
                .map(fmt)
                .unwrap_or_else(|| "".to_string())
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            run.run_id,
            run.streams,
            run.embedding,
            fmt(run.accuracy()),
            slice(CueLabel::Sub),
            slice(CueLabel::Vid),
            slice(CueLabel::Joint),
            slice(CueLabel::None),
        );
    }
    out
}

/// Square matrix CSV with row/column labels.
pub fn matrix_csv(names: &[String], matrix: &[Vec<f64>]) -> String {
    let mut out = String::from("run_id");
    for n in names {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    for (i, row) in matrix.iter().enumerate() {
        let _ = write!(out, "{}", names[i]);
        for v in row {
            let _ = write!(out, ",{}", fmt(*v));
        }
        out.push('\n');
    }
    out
}

fn svg_header(width: usize, height: usize, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"12\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n\
         <text x=\"12\" y=\"20\" font-size=\"14\">{title}</text>\n"
    )
}

fn heat_color(v: f64) -> String {
    // 0 -> light, 1 -> deep blue.
    let v = v.clamp(0.0, 1.0);
    let r = (245.0 - 190.0 * v) as u8;
    let g = (247.0 - 150.0 * v) as u8;
    let b = 250u8;
    format!("rgb({r},{g},{b})")
}

/// Heatmap with numeric cell labels for IoU / agreement matrices.
pub fn heatmap_svg(names: &[String], matrix: &[Vec<f64>], title: &str) -> String {
    let cell = 64usize;
    let left = 110usize;
    let top = 60usize;
    let width = left + cell * names.len() + 20;
    let height = top + cell * names.len() + 20;
    let mut out = svg_header(width, height, title);
    for (j, name) in names.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{name}</text>",
            left + j * cell + cell / 2,
            top - 10
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{name}</text>",
            left - 8,
            top + j * cell + cell / 2 + 4
        );
    }
    for (i, row) in matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let x = left + j * cell;
            let y = top + i * cell;
            let _ = writeln!(
                out,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\" stroke=\"#999\"/>",
                heat_color(*v)
            );
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                x + cell / 2,
                y + cell / 2 + 4,
                fmt(*v)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Long-form CSV of per-stream per-class vote statistics.
pub fn vote_stats_csv(run_id: &str, stats: &VoteStats) -> String {
    let mut out = String::from("run_id,stream,class,count,mean,q1,median,q3\n");
    for (stream, classes) in &stats.per_stream {
        for class in VoteClass::ALL {
            if let Some(cs) = classes.get(&class) {
                match &cs.summary {
                    Some(s) => {
                        let _ = writeln!(
                            out,
                            "{run_id},{stream},{},{},{},{},{},{}",
                            class.name(),
                            cs.count,
                            fmt(s.mean),
                            fmt(s.q1),
                            fmt(s.median),
                            fmt(s.q3)
                        );
                    }
                    None => {
                        let _ = writeln!(out, "{run_id},{stream},{},0,,,,", class.name());
                    }
                }
            }
        }
    }
    out
}

/// Quartile-box rendering of vote contributions (the violin-plot
/// analogue): one box per (stream, class), whiskers at Q1/Q3, a line at
/// the median, a dot at the mean.
pub fn vote_stats_svg(run_id: &str, stats: &VoteStats) -> String {
    let streams: Vec<&String> = stats.per_stream.keys().collect();
    let group_w = 4 * 46 + 30;
    let left = 70usize;
    let top = 50usize;
    let plot_h = 220usize;
    let width = left + streams.len() * group_w + 30;
    let height = top + plot_h + 70;

    // Global value range across all summaries.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for classes in stats.per_stream.values() {
        for cs in classes.values() {
            if let Some(s) = &cs.summary {
                lo = lo.min(s.q1);
                hi = hi.max(s.q3);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() || lo == hi {
        lo = -1.0;
        hi = 1.0;
    }
    let pad = (hi - lo) * 0.15;
    lo -= pad;
    hi += pad;
    let y_of = |v: f64| top as f64 + (hi - v) / (hi - lo) * plot_h as f64;

    let mut out = svg_header(width, height, &format!("Pre-softmax vote quartiles: {run_id}"));
    // Axis labels.
    for tick in 0..=4 {
        let v = lo + (hi - lo) * tick as f64 / 4.0;
        let y = y_of(v);
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            left - 8,
            y + 4.0,
            fmt(v)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{left}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#eee\"/>",
            width - 20
        );
    }
    let colors = ["#2b6cb0", "#c05621", "#718096", "#9b2c2c"];
    for (si, stream) in streams.iter().enumerate() {
        let base_x = left + si * group_w + 10;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{stream}</text>",
            base_x + 2 * 46,
            top + plot_h + 40
        );
        for (ci, class) in VoteClass::ALL.iter().enumerate() {
            let x = base_x + ci * 46;
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
                x + 14,
                top + plot_h + 20,
                class.name()
            );
            if let Some(cs) = stats.per_stream[*stream].get(class) {
                if let Some(s) = &cs.summary {
                    let y1 = y_of(s.q3);
                    let y2 = y_of(s.q1);
                    let color = colors[ci % colors.len()];
                    let _ = writeln!(
                        out,
                        "<rect x=\"{x}\" y=\"{y1:.1}\" width=\"28\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"0.35\" stroke=\"{color}\"/>",
                        (y2 - y1).max(1.0)
                    );
                    let ym = y_of(s.median);
                    let _ = writeln!(
                        out,
                        "<line x1=\"{x}\" y1=\"{ym:.1}\" x2=\"{}\" y2=\"{ym:.1}\" stroke=\"{color}\" stroke-width=\"2\" stroke-dasharray=\"4 2\"/>",
                        x + 28
                    );
                    let yme = y_of(s.mean);
                    let _ = writeln!(
                        out,
                        "<circle cx=\"{}\" cy=\"{yme:.1}\" r=\"3\" fill=\"{color}\"/>",
                        x + 14
                    );
                }
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Per-type accuracy offsets for several runs.
pub fn qtype_performance_csv(rows: &[(&str, &BTreeMap<QType, QTypeStat>)]) -> String {
    let mut out = String::from("run_id,qtype,count,accuracy,offset\n");
    for (run_id, stats) in rows {
        for (qtype, s) in stats.iter() {
            let _ = writeln!(
                out,
                "{run_id},{},{},{},{}",
                qtype.name(),
                s.count,
                fmt(s.accuracy),
                fmt(s.offset)
            );
        }
    }
    out
}

/// Grouped bar chart of per-type accuracy offsets.
pub fn qtype_offsets_svg(rows: &[(&str, &BTreeMap<QType, QTypeStat>)], title: &str) -> String {
    let types: Vec<QType> = QType::ALL.to_vec();
    let group_w = 26 * rows.len().max(1) + 26;
    let left = 70usize;
    let top = 50usize;
    let plot_h = 200usize;
    let width = left + types.len() * group_w + 40;
    let height = top + plot_h + 80;
    let mut lo: f64 = -0.05;
    let mut hi: f64 = 0.05;
    for (_, stats) in rows {
        for s in stats.values() {
            lo = lo.min(s.offset);
            hi = hi.max(s.offset);
        }
    }
    let span = (hi - lo).max(1e-6);
    let y_of = |v: f64| top as f64 + (hi - v) / span * plot_h as f64;
    let zero_y = y_of(0.0);
    let colors = ["#2b6cb0", "#c05621", "#2f855a", "#9b2c2c", "#6b46c1", "#975a16"];

    let mut out = svg_header(width, height, title);
    let _ = writeln!(
        out,
        "<line x1=\"{left}\" y1=\"{zero_y:.1}\" x2=\"{}\" y2=\"{zero_y:.1}\" stroke=\"#333\"/>",
        width - 20
    );
    for (ti, qtype) in types.iter().enumerate() {
        let base_x = left + ti * group_w + 8;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            base_x + group_w / 2 - 8,
            top + plot_h + 30,
            qtype.name()
        );
        for (ri, (run_id, stats)) in rows.iter().enumerate() {
            if let Some(s) = stats.get(qtype) {
                let x = base_x + ri * 26;
                let y = y_of(s.offset.max(0.0));
                let h = (y_of(s.offset.min(0.0)) - y).max(1.0);
                let color = colors[ri % colors.len()];
                let _ = writeln!(
                    out,
                    "<rect x=\"{x}\" y=\"{y:.1}\" width=\"20\" height=\"{h:.1}\" fill=\"{color}\" fill-opacity=\"0.7\"><title>{run_id} {}: {}</title></rect>",
                    qtype.name(),
                    fmt(s.offset)
                );
            }
        }
    }
    // Legend.
    for (ri, (run_id, _)) in rows.iter().enumerate() {
        let y = top + plot_h + 50 + 0 * 16;
        let x = left + ri * 120;
        let color = colors[ri % colors.len()];
        let _ = writeln!(
            out,
            "<rect x=\"{x}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\">{run_id}</text>",
            y - 10,
            x + 16,
            y
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Question-type abundance shifts inside subsets.
pub fn qtype_abundance_csv(rows: &[(&str, &BTreeMap<QType, Option<f64>>)]) -> String {
    let mut out = String::from("subset,qtype,pct_increase\n");
    for (name, stats) in rows {
        for (qtype, v) in stats.iter() {
            let _ = writeln!(
                out,
                "{name},{},{}",
                qtype.name(),
                v.map(fmt).unwrap_or_else(|| "undefined".to_string())
            );
        }
    }
    out
}

/// IEM table: one row per (group A, group B) pair.
pub fn iem_table_csv(rows: &[(String, String, usize, f64)]) -> String {
    let mut out = String::from("group_a,group_b,subset_size,pct_of_split\n");
    for (a, b, size, pct) in rows {
        let _ = writeln!(out, "{a},{b},{size},{}", fmt(*pct));
    }
    out
}

/// Markdown index tying the artifacts together.
pub fn markdown_summary(
    runs: &[&ModelRun],
    iem_rows: &[(String, String, usize, f64)],
    subsets: &[SubsetSpec],
    ttest: Option<(String, f64, f64, f64)>,
) -> String {
    let mut out = String::from("# Analysis report\n\n## Run accuracies\n\n");
    out.push_str("| run | streams | embedding | accuracy |\n|---|---|---|---|\n");
    for r in runs {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            r.run_id,
            r.streams,
            r.embedding,
            fmt(r.accuracy())
        );
    }
    out.push_str("\nSee `accuracy.csv` for cue-slice columns.\n\n## Inclusion-exclusion (IEM)\n\n");
    out.push_str("| group A | group B | size | share of split |\n|---|---|---|---|\n");
    for (a, b, size, pct) in iem_rows {
        let _ = writeln!(out, "| {a} | {b} | {size} | {} |", fmt(*pct));
    }
    out.push_str("\n## Exported subsets\n\n");
    for s in subsets {
        let _ = writeln!(out, "- `{}`: {} questions ({})", s.name, s.qids.len(), s.rule);
    }
    if let Some((desc, t, df, p)) = ttest {
        out.push_str("\n## Significance\n\n");
        let _ = writeln!(
            out,
            "Welch t-test ({desc}): t = {}, df = {}, two-sided p = {}",
            fmt(t),
            fmt(df),
            if p < 1e-4 {
                format!("{p:.3e}")
            } else {
                fmt(p)
            }
        );
    }
    out.push_str("\n## Charts\n\n");
    out.push_str("- `iou_heatmap.svg`, `agreement_heatmap.svg`\n");
    out.push_str("- `votes_<run>.svg` quartile boxes per stream and confusion class\n");
    out.push_str("- `qtype_offsets.svg`, with raw numbers in `qtype_performance.csv`\n");
    out.push_str("- `qtype_abundance.csv` for subset composition shifts\n");
    out
}
