//! Tree-driven segmentation correction.
//!
//! Structural defects of the lineage forest point at segmentation errors:
//!
//! * a mother with more than two daughters means a cell was cut into
//!   fragments in the daughters' frame;
//! * a branch that stops before the movie ends leaves a *lonely* sibling.
//!   Either the lost cell was swallowed by a neighbor in the next frame
//!   (under-segmentation, repaired by splitting the swallowing mask), or the
//!   two "sisters" were fragments of one cell all along (over-segmentation in
//!   earlier frames, repaired by merging them back to the false division).
//!
//! [`run_correction_loop`] sweeps the movie frame by frame, repairs masks and
//! re-tracks locally after each repair, and repeats until a sweep changes
//! nothing. Defects that no repair explains are kept and logged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{LineageForest, NodeId, NodeRecord};
use crate::frame::{CellRegion, Label, LabeledFrame, Movie};
use crate::geometry::{
    connected_clusters, merge_regions, regions_touch, split_region_by_seeds, GeometryError, PixelSet,
};
use crate::tracking::{match_frame_pair, neighborhood_correspondence, AnalysisParams, TrackingError, TrackingLink};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrectionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Forest(#[from] crate::forest::ForestError),
    #[error("expected a {expected:?} anomaly")]
    WrongAnomaly { expected: AnomalyKind },
    #[error("movie has no frames")]
    EmptyMovie,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyKind {
    MultiOverseg,
    LonelyCell,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Anomaly {
    /// `parent` (at `detect_frame - 1`) has three or more children.
    MultiOverseg {
        detect_frame: usize,
        parent: NodeId,
        children: Vec<NodeId>,
    },
    /// `terminated` ends at `detect_frame - 1`, before the last frame.
    LonelyCell {
        detect_frame: usize,
        terminated: NodeId,
        /// The sister branch's cell at `detect_frame`, when the sister chain
        /// runs unbroken from the shared division up to that frame.
        lonely: Option<NodeId>,
        /// Mother whose division produced the terminated branch.
        mother: Option<NodeId>,
        /// First frame of the terminated branch.
        birth_frame: usize,
    },
}

impl Anomaly {
    pub fn kind(&self) -> AnomalyKind {
        match self {
            Anomaly::MultiOverseg { .. } => AnomalyKind::MultiOverseg,
            Anomaly::LonelyCell { .. } => AnomalyKind::LonelyCell,
        }
    }

    pub fn detect_frame(&self) -> usize {
        match self {
            Anomaly::MultiOverseg { detect_frame, .. } | Anomaly::LonelyCell { detect_frame, .. } => *detect_frame,
        }
    }

    /// The node the anomaly is anchored on.
    pub fn site(&self) -> NodeId {
        match self {
            Anomaly::MultiOverseg { parent, .. } => *parent,
            Anomaly::LonelyCell { terminated, .. } => *terminated,
        }
    }

    /// Frames the lonely cell has lived at the detection frame, counting its
    /// birth frame and the detection frame. `None` for fragment anomalies.
    pub fn lifespan(&self) -> Option<usize> {
        match self {
            Anomaly::LonelyCell {
                detect_frame,
                birth_frame,
                ..
            } => Some(detect_frame - birth_frame + 1),
            Anomaly::MultiOverseg { .. } => None,
        }
    }

    fn key(&self) -> (AnomalyKind, NodeId) {
        (self.kind(), self.site())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionKind {
    CoalesceToOne,
    CoalesceToDivision,
    UndersegSplit,
    RetroMerge,
    Unresolved,
}

impl CorrectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrectionKind::CoalesceToOne => "coalesce_to_one",
            CorrectionKind::CoalesceToDivision => "coalesce_to_division",
            CorrectionKind::UndersegSplit => "underseg_split",
            CorrectionKind::RetroMerge => "retro_merge",
            CorrectionKind::Unresolved => "unresolved",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "coalesce_to_one" => CorrectionKind::CoalesceToOne,
            "coalesce_to_division" => CorrectionKind::CoalesceToDivision,
            "underseg_split" => CorrectionKind::UndersegSplit,
            "retro_merge" => CorrectionKind::RetroMerge,
            "unresolved" => CorrectionKind::Unresolved,
            _ => return None,
        })
    }

    pub const ALL: [CorrectionKind; 5] = [
        CorrectionKind::CoalesceToOne,
        CorrectionKind::CoalesceToDivision,
        CorrectionKind::UndersegSplit,
        CorrectionKind::RetroMerge,
        CorrectionKind::Unresolved,
    ];
}

impl fmt::Display for CorrectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Audit record of one correction attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionEvent {
    pub kind: CorrectionKind,
    /// Ascending, nonempty.
    pub frames_affected: Vec<usize>,
    pub labels_before: Vec<NodeId>,
    /// Empty for unresolved events.
    pub labels_after: Vec<NodeId>,
    /// The value compared against T (split) or M (merge; the weakest level).
    pub score_used: Option<f64>,
    pub note: Option<String>,
}

impl CorrectionEvent {
    pub fn is_commit(&self) -> bool {
        self.kind != CorrectionKind::Unresolved
    }
}

/// A proposed repair: the event plus replacement frames for every frame it
/// edits. Nothing is applied until the loop driver commits it.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub event: CorrectionEvent,
    pub frames: Vec<LabeledFrame>,
}

/// Structural anomalies visible when frame `frame` is attached to the tree:
/// over-full mothers at `frame - 1`, then branches ending at `frame - 1`.
/// Each group is ordered by site label.
pub fn detect_anomalies(forest: &LineageForest, frame: usize) -> Vec<Anomaly> {
    let Some(last) = forest.last_frame() else {
        return Vec::new();
    };
    if frame == 0 || frame > last {
        return Vec::new();
    }
    let prev_nodes = forest.nodes_at(frame - 1);
    let mut out = Vec::new();
    for &i in &prev_nodes {
        let node = forest.get(i);
        if node.children.len() > 2 {
            out.push(Anomaly::MultiOverseg {
                detect_frame: frame,
                parent: node.id,
                children: node.children.iter().map(|&c| forest.get(c).id).collect(),
            });
        }
    }
    for &i in &prev_nodes {
        let node = forest.get(i);
        if !node.children.is_empty() {
            continue;
        }
        let start = forest.segment_start(i);
        let mother_idx = forest.get(start).parent;
        let mut lonely = None;
        if let Some(m) = mother_idx {
            let mother = forest.get(m);
            if mother.children.len() == 2 {
                let sister = mother
                    .children
                    .iter()
                    .copied()
                    .find(|&c| c != start)
                    .expect("two children");
                let chain = forest.chain_from(sister);
                let offset = frame - forest.get(sister).id.frame;
                lonely = chain.get(offset).map(|&n| forest.get(n).id);
            }
        }
        out.push(Anomaly::LonelyCell {
            detect_frame: frame,
            terminated: node.id,
            lonely,
            mother: mother_idx.map(|m| forest.get(m).id),
            birth_frame: forest.get(start).id.frame,
        });
    }
    out
}

fn frame_at(movie: &Movie, index: usize) -> &LabeledFrame {
    &movie.frames[index]
}

/// Coalesces the fragments under an over-full mother.
///
/// Fragments are grouped by contact: one group becomes one cell, two groups
/// become a two-cell division, and three or more (no plausible reading) are
/// merged into one cell with a low-confidence note.
pub fn correct_multi_overseg(
    anomaly: &Anomaly,
    movie: &Movie,
    _forest: &LineageForest,
) -> Result<Correction, CorrectionError> {
    let Anomaly::MultiOverseg {
        detect_frame,
        parent,
        children,
    } = anomaly
    else {
        return Err(CorrectionError::WrongAnomaly {
            expected: AnomalyKind::MultiOverseg,
        });
    };
    let t = *detect_frame;
    let frame = frame_at(movie, t);
    let labels: Vec<Label> = children.iter().map(|c| c.label).collect();
    let clusters = connected_clusters(frame, &labels);

    let (kind, groups, note) = match clusters.len() {
        1 => (CorrectionKind::CoalesceToOne, vec![labels.clone()], None),
        2 => (CorrectionKind::CoalesceToDivision, clusters, None),
        n => (
            CorrectionKind::CoalesceToOne,
            vec![labels.clone()],
            Some(format!("low confidence: {n} separate fragment clusters under {parent}")),
        ),
    };

    let mut edited = frame.clone();
    let mut after = Vec::new();
    for group in &groups {
        if group.len() == 1 {
            after.push(NodeId::new(t, group[0]));
            continue;
        }
        let (next, label) = merge_regions(&edited, group)?;
        edited = next;
        after.push(NodeId::new(t, label));
    }
    after.sort();
    Ok(Correction {
        event: CorrectionEvent {
            kind,
            frames_affected: vec![t],
            labels_before: children.clone(),
            labels_after: after,
            score_used: None,
            note,
        },
        frames: vec![edited],
    })
}

/// Tests the under-segmentation hypothesis for a lonely-cell anomaly.
///
/// The neighborhood of the terminated cell (and the lonely cell's
/// predecessor) at `t - 1` is tracked forward onto frame `t`. The cell of
/// frame `t` that the terminated cell lands on is the suspected merged mask;
/// it is split by the centroids of every anchor landing on it when the
/// neighborhood coverage reaches T. The split is kept only if the re-tracked
/// parts attach to their own anchors and, when a next frame exists, each part
/// carries on into it.
pub fn try_underseg_split(
    anomaly: &Anomaly,
    movie: &Movie,
    forest: &LineageForest,
    params: &AnalysisParams,
) -> Result<Option<Correction>, CorrectionError> {
    let Anomaly::LonelyCell {
        detect_frame,
        terminated,
        lonely,
        ..
    } = anomaly
    else {
        return Err(CorrectionError::WrongAnomaly {
            expected: AnomalyKind::LonelyCell,
        });
    };
    if anomaly.lifespan().unwrap_or(0) < params.min_life_frames {
        return Ok(None);
    }
    let t = *detect_frame;
    if t >= movie.len() {
        return Ok(None);
    }
    let prev = frame_at(movie, t - 1);
    let curr = frame_at(movie, t);

    let mut anchors: BTreeSet<Label> = BTreeSet::from([terminated.label]);
    if let Some(pred) = lonely.and_then(|l| forest.parent_id(l)) {
        anchors.insert(pred.label);
    }
    let first = neighborhood_correspondence(prev, &anchors.iter().copied().collect::<Vec<_>>(), curr, params)?;
    let Some(&(target, _)) = first.pair_matching.get(&terminated.label) else {
        return Ok(None);
    };
    let target_id = NodeId::new(t, target);
    if let Some(p) = forest.parent_id(target_id) {
        anchors.insert(p.label);
    }
    for &label in &first.n_prev {
        if forest
            .node(NodeId::new(t - 1, label))
            .is_some_and(|n| n.children.is_empty())
        {
            anchors.insert(label);
        }
    }
    let pair = neighborhood_correspondence(prev, &anchors.iter().copied().collect::<Vec<_>>(), curr, params)?;
    let seeds: Vec<Label> = pair
        .matched_to(target)
        .into_iter()
        .filter(|l| anchors.contains(l))
        .collect();
    if seeds.len() < 2 || !seeds.contains(&terminated.label) {
        return Ok(None);
    }
    let score = pair.total_overlap_score;
    if score < params.underseg_threshold {
        return Ok(None);
    }

    let regions = prev.regions();
    let centroids: Vec<(f64, f64)> = seeds.iter().map(|l| regions[l].centroid).collect();
    let (split, parts) = match split_region_by_seeds(curr, target, &centroids) {
        Ok(ok) => ok,
        Err(_) => return Ok(None),
    };

    let incoming = match_frame_pair(prev, &split)?;
    let parent_of: BTreeMap<Label, Label> = incoming.iter().map(|l| (l.curr.label, l.prev.label)).collect();
    if parts
        .iter()
        .zip(&seeds)
        .any(|(part, seed)| parent_of.get(part) != Some(seed))
    {
        return Ok(None);
    }
    if let Some(next) = movie.frames.get(t + 1) {
        let outgoing = match_frame_pair(&split, next)?;
        let with_child: BTreeSet<Label> = outgoing.iter().map(|l| l.prev.label).collect();
        if parts.iter().any(|p| !with_child.contains(p)) {
            return Ok(None);
        }
    }

    let note = (seeds.len() > 2).then(|| format!("{}-way split", seeds.len()));
    Ok(Some(Correction {
        event: CorrectionEvent {
            kind: CorrectionKind::UndersegSplit,
            frames_affected: vec![t],
            labels_before: vec![target_id],
            labels_after: parts.iter().map(|&l| NodeId::new(t, l)).collect(),
            score_used: Some(score),
            note,
        },
        frames: vec![split],
    }))
}

/// Tests the earlier-over-segmentation hypothesis for a lonely-cell anomaly.
///
/// Walking back from `t - 1` to the division that produced the two sister
/// branches, each pair of sister masks must touch, and their union must
/// overlap the cell it continues into (the lonely cell at `t`, then the union
/// one frame later) by at least M of the larger of the two areas. Any failing
/// level aborts the whole merge.
pub fn try_retro_merge(
    anomaly: &Anomaly,
    movie: &Movie,
    forest: &LineageForest,
    params: &AnalysisParams,
) -> Result<Option<Correction>, CorrectionError> {
    let Anomaly::LonelyCell {
        detect_frame,
        terminated,
        lonely: Some(lonely),
        mother: Some(_),
        birth_frame,
    } = anomaly
    else {
        if anomaly.kind() != AnomalyKind::LonelyCell {
            return Err(CorrectionError::WrongAnomaly {
                expected: AnomalyKind::LonelyCell,
            });
        }
        return Ok(None);
    };
    let t = *detect_frame;
    let birth = *birth_frame;
    let Some(x_idx) = forest.index_of(*terminated) else {
        return Ok(None);
    };
    let x_chain = forest.chain_from(forest.segment_start(x_idx));
    let Some(lonely_idx) = forest.index_of(*lonely) else {
        return Ok(None);
    };
    let z_chain = forest.chain_from(forest.segment_start(lonely_idx));
    let frames_back = t - birth;
    if x_chain.len() != frames_back || z_chain.len() < frames_back {
        return Ok(None);
    }

    let mut successor = PixelSet::from_label(frame_at(movie, t), lonely.label);
    let mut weakest = f64::INFINITY;
    let mut levels = Vec::with_capacity(frames_back);
    for offset in (0..frames_back).rev() {
        let f = birth + offset;
        let x = forest.get(x_chain[offset]).id;
        let z = forest.get(z_chain[offset]).id;
        debug_assert_eq!((x.frame, z.frame), (f, f));
        let frame = frame_at(movie, f);
        if !regions_touch(frame, x.label, z.label) {
            return Ok(None);
        }
        let merged = PixelSet::from_label(frame, x.label).union(&PixelSet::from_label(frame, z.label));
        let shared = merged.overlap(&successor);
        let score = shared as f64 / merged.len().max(successor.len()) as f64;
        if score < params.merge_threshold {
            return Ok(None);
        }
        weakest = weakest.min(score);
        levels.push((x, z));
        successor = merged;
    }

    levels.reverse();
    let mut frames = Vec::with_capacity(levels.len());
    let mut before = Vec::new();
    let mut after = Vec::new();
    for &(x, z) in &levels {
        let (edited, label) = merge_regions(frame_at(movie, x.frame), &[x.label, z.label])?;
        before.push(x);
        before.push(z);
        after.push(NodeId::new(x.frame, label));
        frames.push(edited);
    }
    before.sort();
    Ok(Some(Correction {
        event: CorrectionEvent {
            kind: CorrectionKind::RetroMerge,
            frames_affected: (birth..t).collect(),
            labels_before: before,
            labels_after: after,
            score_used: Some(weakest),
            note: None,
        },
        frames,
    }))
}

/// Output of the correction loop.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub movie: Movie,
    pub forest: LineageForest,
    /// Commits and unresolved anomalies, in the order they happened.
    pub events: Vec<CorrectionEvent>,
    pub sweeps: usize,
}

impl CorrectionOutcome {
    pub fn commits(&self) -> usize {
        self.events.iter().filter(|e| e.is_commit()).count()
    }
}

/// Mutable analysis state: frames, cached regions, links and the forest
/// built from them. Edits re-track only the frame pairs they touch.
struct Workspace {
    movie: Movie,
    regions: Vec<BTreeMap<Label, CellRegion>>,
    links: Vec<Vec<TrackingLink>>,
    forest: LineageForest,
}

impl Workspace {
    fn new(movie: &Movie) -> Result<Self, CorrectionError> {
        let regions = movie.frames.iter().map(LabeledFrame::regions).collect();
        let links = crate::tracking::link_movie(movie)?;
        let mut ws = Self {
            movie: movie.clone(),
            regions,
            links,
            forest: LineageForest::from_records(Vec::new(), 0)?,
        };
        ws.rebuild()?;
        Ok(ws)
    }

    fn rebuild(&mut self) -> Result<(), CorrectionError> {
        let mut parents = BTreeMap::new();
        for link in self.links.iter().flatten() {
            parents.insert(link.curr, link.prev);
        }
        let mut records = Vec::new();
        for (f, regions) in self.regions.iter().enumerate() {
            for (&label, r) in regions {
                let id = NodeId::new(f, label);
                records.push(NodeRecord {
                    id,
                    parent: parents.get(&id).copied(),
                    area_px: r.area_px,
                    centroid: r.centroid,
                    status_hint: None,
                });
            }
        }
        self.forest = LineageForest::from_records(records, self.movie.len())?;
        Ok(())
    }

    fn apply(&mut self, correction: &Correction) -> Result<(), CorrectionError> {
        let mut pairs = BTreeSet::new();
        for frame in &correction.frames {
            let f = frame.index();
            self.movie.frames[f] = frame.clone();
            self.regions[f] = frame.regions();
            if f > 0 {
                pairs.insert(f - 1);
            }
            if f + 1 < self.movie.len() {
                pairs.insert(f);
            }
        }
        for p in pairs {
            self.links[p] = match_frame_pair(&self.movie.frames[p], &self.movie.frames[p + 1])?;
        }
        self.rebuild()
    }
}

fn unresolved_event(anomaly: &Anomaly) -> CorrectionEvent {
    let site = anomaly.site();
    let note = match anomaly {
        Anomaly::MultiOverseg { children, .. } => format!("{} children kept", children.len()),
        Anomaly::LonelyCell { lonely: None, .. } => "no surviving sister; kept as possible death".to_string(),
        Anomaly::LonelyCell { .. } => "split and merge both rejected; branch kept".to_string(),
    };
    CorrectionEvent {
        kind: CorrectionKind::Unresolved,
        frames_affected: vec![site.frame],
        labels_before: vec![site],
        labels_after: Vec::new(),
        score_used: None,
        note: Some(note),
    }
}

/// Runs the closed correction loop over `movie` until a sweep commits nothing
/// or `max_sweeps` is reached.
pub fn run_correction_loop(movie: &Movie, params: &AnalysisParams) -> Result<CorrectionOutcome, CorrectionError> {
    params.validate()?;
    if movie.is_empty() {
        return Err(CorrectionError::EmptyMovie);
    }
    let mut ws = Workspace::new(movie)?;
    let mut events = Vec::new();
    let mut logged: BTreeSet<(AnomalyKind, NodeId)> = BTreeSet::new();
    let mut sweeps = 0;

    while sweeps < params.max_sweeps {
        sweeps += 1;
        let mut commits = 0;
        for t in 1..ws.movie.len() {
            let mut rejected: BTreeSet<(AnomalyKind, NodeId)> = BTreeSet::new();
            let budget = 4 * (ws.forest.nodes_at(t - 1).len() + ws.forest.nodes_at(t).len()) + 4;
            for _ in 0..budget {
                let Some(anomaly) = detect_anomalies(&ws.forest, t)
                    .into_iter()
                    .find(|a| !rejected.contains(&a.key()))
                else {
                    break;
                };
                let proposal = match anomaly.kind() {
                    AnomalyKind::MultiOverseg => correct_multi_overseg(&anomaly, &ws.movie, &ws.forest).ok(),
                    AnomalyKind::LonelyCell => match try_underseg_split(&anomaly, &ws.movie, &ws.forest, params)? {
                        Some(c) => Some(c),
                        None => try_retro_merge(&anomaly, &ws.movie, &ws.forest, params)?,
                    },
                };
                match proposal {
                    Some(correction) => {
                        ws.apply(&correction)?;
                        events.push(correction.event);
                        commits += 1;
                    }
                    None => {
                        rejected.insert(anomaly.key());
                        if logged.insert(anomaly.key()) {
                            events.push(unresolved_event(&anomaly));
                        }
                    }
                }
            }
        }
        if commits == 0 {
            break;
        }
    }

    let mut forest = ws.forest;
    forest.refresh_status();
    let crowded: Vec<NodeId> = forest
        .nodes()
        .iter()
        .filter(|n| n.children.len() > 2)
        .map(|n| n.id)
        .collect();
    for id in crowded {
        forest.mark_unresolved(id);
    }
    Ok(CorrectionOutcome {
        movie: ws.movie,
        forest,
        events,
        sweeps,
    })
}
