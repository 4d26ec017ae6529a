//! Timestamp segmentation and regional feature selection.

use super::{DataError, ModalityBundle, Region};
use crate::numerics::Tensor;

/// Restricts a bundle to the timestamp window: frames to indices
/// `[floor(start*fps), ceil(end*fps))`, subtitle tokens to spans
/// intersecting `[start, end]`, regions and concepts to surviving
/// frames. Errors if a previously non-empty modality empties out;
/// callers that want the full-clip fallback use
/// [`segment_with_fallback`]. Regions may empty freely.
pub fn segment_by_timestamp(
    bundle: &ModalityBundle,
    ts: (f64, f64),
    fps: f64,
) -> Result<ModalityBundle, DataError> {
    let (start, end) = ts;
    if !(start < end) {
        return Err(DataError::Segmentation(format!(
            "window ({start}, {end}) has start >= end"
        )));
    }
    if fps <= 0.0 {
        return Err(DataError::Segmentation(format!("fps {fps} must be positive")));
    }

    let lo = (start * fps).floor().max(0.0) as usize;
    let hi = (end * fps).ceil() as usize;

    let mut out = ModalityBundle {
        clip_id: bundle.clip_id.clone(),
        fps: bundle.fps,
        frame_offset: bundle.frame_offset,
        frames: None,
        subtitle: Vec::new(),
        regions: Vec::new(),
        concepts: Vec::new(),
    };

    // Frames: intersect the requested absolute range with what is present.
    let keep_lo = lo.max(bundle.frame_offset);
    let keep_hi = hi.min(bundle.frame_offset + bundle.frame_count());
    if let Some(frames) = &bundle.frames {
        if keep_lo >= keep_hi {
            return Err(DataError::Segmentation(format!(
                "no frames of `{}` inside ({start}, {end})",
                bundle.clip_id
            )));
        }
        let rows: Vec<Vec<f64>> = (keep_lo..keep_hi)
            .map(|abs| frames.row(abs - bundle.frame_offset).to_vec())
            .collect();
        out.frames = Some(Tensor::from_rows(&rows)?);
        out.frame_offset = keep_lo;
    }

    // Subtitle tokens whose spans intersect [start, end].
    out.subtitle = bundle
        .subtitle
        .iter()
        .filter(|t| t.end >= start && t.start <= end)
        .cloned()
        .collect();
    if !bundle.subtitle.is_empty() && out.subtitle.is_empty() {
        return Err(DataError::Segmentation(format!(
            "no subtitle tokens of `{}` inside ({start}, {end})",
            bundle.clip_id
        )));
    }

    // Regions and concepts from surviving frames only.
    let frame_keeps = |idx: usize| idx >= keep_lo && idx < keep_hi;
    out.regions = bundle
        .regions
        .iter()
        .filter(|r| frame_keeps(r.frame_idx))
        .cloned()
        .collect();
    out.concepts = bundle
        .concepts
        .iter()
        .filter(|c| frame_keeps(c.frame_idx))
        .cloned()
        .collect();
    if !bundle.concepts.is_empty() && out.concepts.is_empty() {
        return Err(DataError::Segmentation(format!(
            "no visual concepts of `{}` inside ({start}, {end})",
            bundle.clip_id
        )));
    }

    Ok(out)
}

/// Segments each modality independently; a modality that would empty out
/// keeps its full-clip track instead.
pub fn segment_with_fallback(bundle: &ModalityBundle, ts: (f64, f64), fps: f64) -> ModalityBundle {
    match segment_by_timestamp(bundle, ts, fps) {
        Ok(seg) => seg,
        Err(_) => {
            // Retry modality by modality.
            let mut out = bundle.clone();
            let mut frames_only = ModalityBundle {
                frames: bundle.frames.clone(),
                ..blank_like(bundle)
            };
            if let Ok(seg) = segment_by_timestamp(&frames_only, ts, fps) {
                out.frames = seg.frames;
                out.frame_offset = seg.frame_offset;
                // Regions/concepts follow the surviving frame range.
                let keep = |idx: usize| {
                    idx >= out.frame_offset
                        && idx < out.frame_offset + out.frames.as_ref().map(|f| f.rows()).unwrap_or(0)
                };
                let regions: Vec<Region> = bundle
                    .regions
                    .iter()
                    .filter(|r| keep(r.frame_idx))
                    .cloned()
                    .collect();
                out.regions = regions;
                let concepts: Vec<_> = bundle
                    .concepts
                    .iter()
                    .filter(|c| keep(c.frame_idx))
                    .cloned()
                    .collect();
                if !concepts.is_empty() || bundle.concepts.is_empty() {
                    out.concepts = concepts;
                }
            }
            frames_only.frames = None;
            let subs: Vec<_> = bundle
                .subtitle
                .iter()
                .filter(|t| t.end >= ts.0 && t.start <= ts.1)
                .cloned()
                .collect();
            if !subs.is_empty() {
                out.subtitle = subs;
            }
            out
        }
    }
}

fn blank_like(bundle: &ModalityBundle) -> ModalityBundle {
    ModalityBundle {
        clip_id: bundle.clip_id.clone(),
        fps: bundle.fps,
        frame_offset: bundle.frame_offset,
        frames: None,
        subtitle: Vec::new(),
        regions: Vec::new(),
        concepts: Vec::new(),
    }
}

/// Ranks regions by confidence per label, keeps the top `k` per label
/// across the segment, and returns them in descending confidence order
/// (label, then frame index break ties deterministically).
pub fn select_top_k_regions(bundle: &ModalityBundle, k: usize) -> Result<Vec<&Region>, DataError> {
    if k == 0 {
        return Err(DataError::Invalid("top-k selection needs k >= 1".into()));
    }
    let mut by_label: std::collections::BTreeMap<&str, Vec<&Region>> = Default::default();
    for r in &bundle.regions {
        by_label.entry(r.label.as_str()).or_default().push(r);
    }
    let mut kept: Vec<&Region> = Vec::new();
    for (_, mut regions) in by_label {
        regions.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.frame_idx.cmp(&b.frame_idx))
        });
        kept.extend(regions.into_iter().take(k));
    }
    kept.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.label.cmp(&b.label))
            .then(a.frame_idx.cmp(&b.frame_idx))
    });
    Ok(kept)
}

/// Stacks selected regions into an `[n_reg, d]` matrix; `None` when the
/// selection is empty (the stream then contributes a neutral vote).
pub fn region_matrix(regions: &[&Region]) -> Result<Option<Tensor>, DataError> {
    if regions.is_empty() {
        return Ok(None);
    }
    let rows: Vec<Vec<f64>> = regions.iter().map(|r| r.feature.clone()).collect();
    Ok(Some(Tensor::from_rows(&rows)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Concept, SubtitleToken};

    fn unit_row(dim: usize, hot: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[hot % dim] = 1.0;
        v
    }

    fn demo_bundle() -> ModalityBundle {
        let rows: Vec<Vec<f64>> = (0..24).map(|i| unit_row(4, i)).collect();
        ModalityBundle {
            clip_id: "clip".into(),
            fps: 3.0,
            frame_offset: 0,
            frames: Some(Tensor::from_rows(&rows).unwrap()),
            subtitle: (0..16)
                .map(|i| SubtitleToken {
                    token: format!("tok{i}"),
                    start: i as f64 * 0.5,
                    end: i as f64 * 0.5 + 0.5,
                })
                .collect(),
            regions: vec![
                Region { label: "a".into(), confidence: 0.9, frame_idx: 7, feature: vec![1.0; 4] },
                Region { label: "a".into(), confidence: 0.4, frame_idx: 2, feature: vec![2.0; 4] },
                Region { label: "b".into(), confidence: 0.7, frame_idx: 8, feature: vec![3.0; 4] },
            ],
            concepts: vec![
                Concept { token: "a".into(), frame_idx: 2 },
                Concept { token: "b".into(), frame_idx: 8 },
            ],
        }
    }

    #[test]
    fn window_spanning_clip_is_identity() {
        let b = demo_bundle();
        let seg = segment_by_timestamp(&b, (0.0, 8.0), 3.0).unwrap();
        assert_eq!(seg, b);
    }

    #[test]
    fn frame_index_arithmetic() {
        let b = demo_bundle();
        let seg = segment_by_timestamp(&b, (2.0, 4.0), 3.0).unwrap();
        // floor(2*3)=6 .. ceil(4*3)=12 exclusive -> indices 6..=11
        assert_eq!(seg.frame_offset, 6);
        assert_eq!(seg.frame_count(), 6);
        assert_eq!(seg.frames.as_ref().unwrap().row(0), &unit_row(4, 6)[..]);
        // Regions at frames 7 and 8 survive; frame 2 does not.
        assert_eq!(seg.regions.len(), 2);
        assert_eq!(seg.concepts.len(), 1);
        assert_eq!(seg.concepts[0].token, "b");
    }

    #[test]
    fn empty_window_is_segmentation_error() {
        let mut b = demo_bundle();
        // First subtitle token at 5s.
        b.subtitle = vec![SubtitleToken { token: "late".into(), start: 5.0, end: 5.5 }];
        let err = segment_by_timestamp(&b, (0.0, 0.1), 3.0).unwrap_err();
        assert!(matches!(err, DataError::Segmentation(_)));
    }

    #[test]
    fn segmentation_is_idempotent() {
        let b = demo_bundle();
        let once = segment_by_timestamp(&b, (1.0, 3.0), 3.0).unwrap();
        let twice = segment_by_timestamp(&once, (1.0, 3.0), 3.0).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn fallback_keeps_full_track_for_emptied_modalities() {
        let mut b = demo_bundle();
        b.subtitle = vec![SubtitleToken { token: "late".into(), start: 7.5, end: 7.9 }];
        let seg = segment_with_fallback(&b, (0.0, 1.0), 3.0);
        // Subtitle window empty -> full subtitle retained.
        assert_eq!(seg.subtitle.len(), 1);
        // Frames still restricted: 0..3
        assert_eq!(seg.frame_count(), 3);
        assert_eq!(seg.frame_offset, 0);
    }

    #[test]
    fn top_k_per_label_ordering() {
        let b = demo_bundle();
        let picked = select_top_k_regions(&b, 1).unwrap();
        let labels: Vec<(&str, f64)> = picked.iter().map(|r| (r.label.as_str(), r.confidence)).collect();
        assert_eq!(labels, vec![("a", 0.9), ("b", 0.7)]);

        // k larger than available keeps everything, confidence-ordered.
        let all = select_top_k_regions(&b, 10).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.windows(2).all(|w| w[0].confidence >= w[1].confidence));

        // Empty selection is valid.
        let empty = ModalityBundle { regions: vec![], ..demo_bundle() };
        let none = select_top_k_regions(&empty, 3).unwrap();
        assert!(region_matrix(&none).unwrap().is_none());
    }
}
