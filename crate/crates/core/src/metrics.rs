//! Forest quality: valid-segment statistics, ground-truth comparison and a
//! before/after correction summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correction::{CorrectionEvent, CorrectionKind};
use crate::forest::{extract_segments, CellSegment, LineageForest, NodeId};
use crate::frame::{Label, Movie};
use crate::geometry::overlap_table;

/// Minimum mean per-frame IoU for a predicted segment to match a true one.
pub const SEGMENT_IOU_MATCH: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("frame count differs: predicted {pred}, truth {truth}")]
    FrameCount { pred: usize, truth: usize },
    #[error("frame {frame} dimensions differ")]
    Dimensions { frame: usize },
    #[error("forest does not describe its movie: {0}")]
    ForestMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeValidity {
    pub clone_id: u32,
    pub total: usize,
    pub valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub total_segments: usize,
    pub valid_segments: usize,
    /// 0 for a forest without counted segments.
    pub valid_fraction: f64,
    pub per_tree: Vec<TreeValidity>,
    pub entrants_included: bool,
}

/// Valid-segment counts, leaving out segments of trees that enter the field
/// of view after the first frame.
pub fn validity_report(forest: &LineageForest) -> ValidityReport {
    validity_report_with(forest, false)
}

pub fn validity_report_with(forest: &LineageForest, include_entrants: bool) -> ValidityReport {
    let mut per: BTreeMap<u32, TreeValidity> = BTreeMap::new();
    for seg in extract_segments(forest) {
        if seg.entrant && !include_entrants {
            continue;
        }
        let t = per.entry(seg.clone_id).or_insert(TreeValidity {
            clone_id: seg.clone_id,
            total: 0,
            valid: 0,
        });
        t.total += 1;
        t.valid += usize::from(seg.is_valid);
    }
    let total: usize = per.values().map(|t| t.total).sum();
    let valid: usize = per.values().map(|t| t.valid).sum();
    ValidityReport {
        total_segments: total,
        valid_segments: valid,
        valid_fraction: if total == 0 { 0.0 } else { valid as f64 / total as f64 },
        per_tree: per.into_values().collect(),
        entrants_included: include_entrants,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthComparison {
    pub pred_segments: usize,
    pub true_segments: usize,
    pub matched_segments: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean mask IoU over the cells of matched segments.
    pub mean_iou: f64,
    pub pred_divisions: usize,
    pub true_divisions: usize,
    pub matched_divisions: usize,
    pub spurious_divisions: usize,
    pub missed_divisions: usize,
}

/// Mask IoU for every overlapping (pred, truth) label pair, per frame.
struct IouTable {
    frames: Vec<BTreeMap<(Label, Label), f64>>,
}

impl IouTable {
    fn new(pred: &Movie, truth: &Movie) -> Result<Self, MetricsError> {
        if pred.len() != truth.len() {
            return Err(MetricsError::FrameCount {
                pred: pred.len(),
                truth: truth.len(),
            });
        }
        let mut frames = Vec::with_capacity(pred.len());
        for (f, (a, b)) in pred.frames.iter().zip(&truth.frames).enumerate() {
            let shared = overlap_table(a, b).map_err(|_| MetricsError::Dimensions { frame: f })?;
            let area_a = a.regions();
            let area_b = b.regions();
            let iou = shared
                .into_iter()
                .map(|((la, lb), n)| {
                    let union = area_a[&la].area_px + area_b[&lb].area_px - n;
                    ((la, lb), n as f64 / union as f64)
                })
                .collect();
            frames.push(iou);
        }
        Ok(Self { frames })
    }

    fn iou(&self, a: NodeId, b: NodeId) -> f64 {
        debug_assert_eq!(a.frame, b.frame);
        self.frames[a.frame].get(&(a.label, b.label)).copied().unwrap_or(0.0)
    }
}

fn check_forest(forest: &LineageForest, movie: &Movie, side: &str) -> Result<(), MetricsError> {
    if forest.frame_count() != movie.len() {
        return Err(MetricsError::ForestMismatch(format!(
            "{side} forest spans {} frames, movie has {}",
            forest.frame_count(),
            movie.len()
        )));
    }
    if let Some(n) = forest
        .nodes()
        .iter()
        .find(|n| !movie.frames[n.id.frame].contains_label(n.id.label))
    {
        return Err(MetricsError::ForestMismatch(format!(
            "{side} node {} has no mask",
            n.id
        )));
    }
    Ok(())
}

fn division_mothers(forest: &LineageForest) -> Vec<NodeId> {
    forest
        .nodes()
        .iter()
        .filter(|n| n.children.len() >= 2)
        .map(|n| n.id)
        .collect()
}

/// Greedy one-to-one matching on descending score, ties broken by position.
fn greedy_match(mut candidates: Vec<(f64, usize, usize)>) -> Vec<(usize, usize, f64)> {
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_a = std::collections::BTreeSet::new();
    let mut used_b = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (score, a, b) in candidates {
        if used_a.contains(&a) || used_b.contains(&b) {
            continue;
        }
        used_a.insert(a);
        used_b.insert(b);
        out.push((a, b, score));
    }
    out
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Scores a predicted forest against the truth.
///
/// Segments match when they cover the same frames with mean per-frame mask
/// IoU of at least [`SEGMENT_IOU_MATCH`]. Divisions match when they happen in
/// the same frame with mother masks at the same IoU.
pub fn compare_to_truth(
    pred: &LineageForest,
    pred_movie: &Movie,
    truth: &LineageForest,
    truth_movie: &Movie,
) -> Result<TruthComparison, MetricsError> {
    let table = IouTable::new(pred_movie, truth_movie)?;
    check_forest(pred, pred_movie, "predicted")?;
    check_forest(truth, truth_movie, "true")?;

    let pred_segs = extract_segments(pred);
    let true_segs = extract_segments(truth);
    let mut by_span: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (j, s) in true_segs.iter().enumerate() {
        by_span.entry((s.start_frame, s.end_frame)).or_default().push(j);
    }
    let mean_iou = |a: &CellSegment, b: &CellSegment| {
        a.nodes
            .iter()
            .zip(&b.nodes)
            .map(|(&x, &y)| table.iou(x, y))
            .sum::<f64>()
            / a.nodes.len() as f64
    };
    let mut candidates = Vec::new();
    for (i, s) in pred_segs.iter().enumerate() {
        for &j in by_span.get(&(s.start_frame, s.end_frame)).into_iter().flatten() {
            let m = mean_iou(s, &true_segs[j]);
            if m >= SEGMENT_IOU_MATCH {
                candidates.push((m, i, j));
            }
        }
    }
    let matched = greedy_match(candidates);
    let (mut iou_sum, mut iou_cells) = (0.0, 0usize);
    for &(i, _, m) in &matched {
        let n = pred_segs[i].nodes.len();
        iou_sum += m * n as f64;
        iou_cells += n;
    }

    let pred_div = division_mothers(pred);
    let true_div = division_mothers(truth);
    let mut div_candidates = Vec::new();
    for (i, &a) in pred_div.iter().enumerate() {
        for (j, &b) in true_div.iter().enumerate() {
            if a.frame == b.frame {
                let iou = table.iou(a, b);
                if iou >= SEGMENT_IOU_MATCH {
                    div_candidates.push((iou, i, j));
                }
            }
        }
    }
    let div_matched = greedy_match(div_candidates).len();

    let precision = ratio(matched.len(), pred_segs.len());
    let recall = ratio(matched.len(), true_segs.len());
    Ok(TruthComparison {
        pred_segments: pred_segs.len(),
        true_segments: true_segs.len(),
        matched_segments: matched.len(),
        precision,
        recall,
        f1: f1(precision, recall),
        mean_iou: if iou_cells == 0 {
            0.0
        } else {
            iou_sum / iou_cells as f64
        },
        pred_divisions: pred_div.len(),
        true_divisions: true_div.len(),
        matched_divisions: div_matched,
        spurious_divisions: pred_div.len() - div_matched,
        missed_divisions: true_div.len() - div_matched,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSummary {
    pub before: ValidityReport,
    pub after: ValidityReport,
    pub valid_change: i64,
    /// Relative change of the valid-segment count; `None` when it was 0.
    pub relative_change: Option<f64>,
    pub events_by_kind: BTreeMap<String, usize>,
    pub unresolved: usize,
}

pub fn correction_summary(
    events: &[CorrectionEvent],
    before: &ValidityReport,
    after: &ValidityReport,
) -> CorrectionSummary {
    let mut events_by_kind: BTreeMap<String, usize> = CorrectionKind::ALL
        .iter()
        .map(|k| (k.as_str().to_string(), 0))
        .collect();
    for e in events {
        *events_by_kind.get_mut(e.kind.as_str()).expect("all kinds listed") += 1;
    }
    let valid_change = after.valid_segments as i64 - before.valid_segments as i64;
    CorrectionSummary {
        before: before.clone(),
        after: after.clone(),
        valid_change,
        relative_change: (before.valid_segments > 0).then(|| valid_change as f64 / before.valid_segments as f64),
        unresolved: events_by_kind[CorrectionKind::Unresolved.as_str()],
        events_by_kind,
    }
}

impl CorrectionSummary {
    /// Human-readable block.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let pct = |f: f64| format!("{:.1}%", 100.0 * f);
        let _ = writeln!(
            s,
            "valid segments: {} / {} ({}) -> {} / {} ({})",
            self.before.valid_segments,
            self.before.total_segments,
            pct(self.before.valid_fraction),
            self.after.valid_segments,
            self.after.total_segments,
            pct(self.after.valid_fraction),
        );
        let rel = match self.relative_change {
            Some(r) => format!("{:+.1}%", 100.0 * r),
            None => "n/a".to_string(),
        };
        let _ = writeln!(s, "valid segment change: {:+} ({rel})", self.valid_change);
        for (kind, n) in &self.events_by_kind {
            let _ = writeln!(s, "events {kind}: {n}");
        }
        s
    }

    /// Two-column table of every statistic.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("statistic\tvalue\n");
        let rows = [
            ("total_before", self.before.total_segments.to_string()),
            ("valid_before", self.before.valid_segments.to_string()),
            ("fraction_before", format!("{:.6}", self.before.valid_fraction)),
            ("total_after", self.after.total_segments.to_string()),
            ("valid_after", self.after.valid_segments.to_string()),
            ("fraction_after", format!("{:.6}", self.after.valid_fraction)),
            ("valid_change", self.valid_change.to_string()),
            (
                "relative_change",
                self.relative_change.map(|r| format!("{r:.6}")).unwrap_or_default(),
            ),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k}\t{v}");
        }
        for (kind, n) in &self.events_by_kind {
            let _ = writeln!(s, "events_{kind}\t{n}");
        }
        s
    }
}
