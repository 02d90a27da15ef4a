//! Frame-to-frame correspondence by pixel overlap.
//!
//! Forward tracking links every cell of frame `f+1` to the frame-`f` cell it
//! overlaps most. Nothing stops several cells from picking the same parent, so
//! a fragmented cell shows up as a mother with more than two daughters, which
//! is exactly the signature the correction loop looks for.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::NodeId;
use crate::frame::{Label, LabeledFrame, Movie, BACKGROUND};
use crate::geometry::{overlap_table, GeometryError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackingError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("neighborhood needs at least one anchor cell")]
    EmptyAnchors,
    #[error("anchor label {label} is not present in frame {frame}")]
    UnknownAnchor { frame: usize, label: Label },
    #[error("invalid analysis parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingLink {
    pub prev: NodeId,
    pub curr: NodeId,
    pub overlap_px: usize,
    /// `overlap_px / area(curr)`, in `(0, 1]`.
    pub score_fraction: f64,
}

/// Tunables of the analysis pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    /// Neighborhood coverage needed to accept an under-segmentation split.
    pub underseg_threshold: f64,
    /// Overlap needed at every level of a backward merge.
    pub merge_threshold: f64,
    /// Minimum age, in frames, of a lonely cell before a split is considered.
    pub min_life_frames: usize,
    /// Chebyshev dilation radius used to gather a neighborhood.
    pub neighborhood_radius_px: u32,
    pub max_sweeps: usize,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            underseg_threshold: 0.75,
            merge_threshold: 0.90,
            min_life_frames: 3,
            neighborhood_radius_px: 5,
            max_sweeps: 5,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<(), TrackingError> {
        // Thresholds above 1 are allowed: they make a gate unreachable on purpose.
        if self.underseg_threshold.is_nan() || self.underseg_threshold <= 0.0 {
            return Err(TrackingError::InvalidParams(format!(
                "T must be positive, got {}",
                self.underseg_threshold
            )));
        }
        if self.merge_threshold.is_nan() || self.merge_threshold <= 0.0 {
            return Err(TrackingError::InvalidParams(format!(
                "M must be positive, got {}",
                self.merge_threshold
            )));
        }
        if self.min_life_frames < 1 {
            return Err(TrackingError::InvalidParams("min-life must be at least 1".into()));
        }
        if self.max_sweeps < 1 {
            return Err(TrackingError::InvalidParams("max-sweeps must be at least 1".into()));
        }
        Ok(())
    }
}

fn areas(frame: &LabeledFrame) -> BTreeMap<Label, usize> {
    let mut out = BTreeMap::new();
    for &l in frame.labels() {
        if l != BACKGROUND {
            *out.entry(l).or_insert(0) += 1;
        }
    }
    out
}

/// Links each cell of `curr` to the `prev` cell it overlaps most.
///
/// Ties go to the smaller prev label. Cells overlapping nothing stay unlinked.
/// Links are ordered by current label.
pub fn match_frame_pair(prev: &LabeledFrame, curr: &LabeledFrame) -> Result<Vec<TrackingLink>, TrackingError> {
    let table = overlap_table(prev, curr)?;
    let curr_areas = areas(curr);
    // (curr) -> (best overlap, prev label)
    let mut best: BTreeMap<Label, (usize, Label)> = BTreeMap::new();
    for (&(p, c), &n) in &table {
        let entry = best.entry(c).or_insert((n, p));
        if n > entry.0 || (n == entry.0 && p < entry.1) {
            *entry = (n, p);
        }
    }
    Ok(best
        .into_iter()
        .map(|(c, (n, p))| TrackingLink {
            prev: NodeId::new(prev.index(), p),
            curr: NodeId::new(curr.index(), c),
            overlap_px: n,
            score_fraction: n as f64 / curr_areas[&c] as f64,
        })
        .collect())
}

/// Applies [`match_frame_pair`] to every consecutive pair of frames.
pub fn link_movie(movie: &Movie) -> Result<Vec<Vec<TrackingLink>>, TrackingError> {
    movie
        .frames
        .windows(2)
        .map(|w| match_frame_pair(&w[0], &w[1]))
        .collect()
}

/// Result of matching a neighborhood of cells against an adjacent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodPair {
    /// Anchors plus every anchor-frame cell reached by the dilated footprint.
    pub n_prev: Vec<Label>,
    /// Cells of the other frame overlapping the dilated footprint.
    pub n_curr: Vec<Label>,
    /// Each `n_prev` cell's best overlapping `n_curr` cell and the overlap.
    pub pair_matching: BTreeMap<Label, (Label, usize)>,
    /// Sum of matched overlaps over the total `n_prev` area, in `[0, 1]`.
    pub total_overlap_score: f64,
}

impl NeighborhoodPair {
    /// `n_prev` cells matched onto `target`, in ascending label order.
    pub fn matched_to(&self, target: Label) -> Vec<Label> {
        self.pair_matching
            .iter()
            .filter(|(_, &(q, _))| q == target)
            .map(|(&p, _)| p)
            .collect()
    }
}

fn dilate(frame: &LabeledFrame, seeds: &BTreeSet<Label>, radius: u32) -> Vec<bool> {
    let (w, h) = frame.dims();
    let r = radius as i64;
    let mut mask = vec![false; w * h];
    for (p, l) in frame.pixels() {
        if !seeds.contains(&l) {
            continue;
        }
        let (x0, x1) = ((p.x as i64 - r).max(0), (p.x as i64 + r).min(w as i64 - 1));
        let (y0, y1) = ((p.y as i64 - r).max(0), (p.y as i64 + r).min(h as i64 - 1));
        for y in y0..=y1 {
            let row = y as usize * w;
            for x in x0..=x1 {
                mask[row + x as usize] = true;
            }
        }
    }
    mask
}

/// Matches a neighborhood around `anchors` (cells of `anchor_frame`) against
/// `other`, a frame adjacent in either direction.
///
/// Matching runs from the anchor side: every cell of the neighborhood picks
/// the overlapping cell of `other` it shares most pixels with. Run with the
/// later frame as `other` this is the reversed tracking used to test for an
/// under-segmented cell: several anchor cells landing on one cell of `other`
/// mean that cell likely swallowed them.
pub fn neighborhood_correspondence(
    anchor_frame: &LabeledFrame,
    anchors: &[Label],
    other: &LabeledFrame,
    params: &AnalysisParams,
) -> Result<NeighborhoodPair, TrackingError> {
    if anchors.is_empty() {
        return Err(TrackingError::EmptyAnchors);
    }
    let present = anchor_frame.label_set();
    let anchor_set: BTreeSet<Label> = anchors.iter().copied().collect();
    if let Some(&missing) = anchor_set.iter().find(|l| !present.contains(l)) {
        return Err(TrackingError::UnknownAnchor {
            frame: anchor_frame.index(),
            label: missing,
        });
    }
    if anchor_frame.dims() != other.dims() {
        return Err(GeometryError::DimensionMismatch {
            a: anchor_frame.dims(),
            b: other.dims(),
        }
        .into());
    }

    let mask = dilate(anchor_frame, &anchor_set, params.neighborhood_radius_px);
    let mut n_prev = anchor_set.clone();
    let mut n_curr = BTreeSet::new();
    for ((&la, &lo), &inside) in anchor_frame.labels().iter().zip(other.labels()).zip(&mask) {
        if inside {
            if la != BACKGROUND {
                n_prev.insert(la);
            }
            if lo != BACKGROUND {
                n_curr.insert(lo);
            }
        }
    }

    let table = overlap_table(anchor_frame, other)?;
    let prev_areas = areas(anchor_frame);
    let mut pair_matching: BTreeMap<Label, (Label, usize)> = BTreeMap::new();
    for (&(p, q), &n) in &table {
        if !n_prev.contains(&p) || !n_curr.contains(&q) {
            continue;
        }
        let entry = pair_matching.entry(p).or_insert((q, n));
        if n > entry.1 || (n == entry.1 && q < entry.0) {
            *entry = (q, n);
        }
    }
    let matched: usize = pair_matching.values().map(|&(_, n)| n).sum();
    let total: usize = n_prev.iter().map(|l| prev_areas[l]).sum();
    Ok(NeighborhoodPair {
        n_prev: n_prev.into_iter().collect(),
        n_curr: n_curr.into_iter().collect(),
        pair_matching,
        total_overlap_score: matched as f64 / total as f64,
    })
}
