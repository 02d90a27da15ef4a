//! Lineage forests: per-frame cell nodes linked across frames, one tree per
//! founding cell, plus the views derived from them (cell segments, division
//! trees, clone identities).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Label, Movie};
use crate::tracking::TrackingLink;

/// A cell at one frame. Identity is the pair, never the pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub frame: usize,
    pub label: Label,
}

impl NodeId {
    pub fn new(frame: usize, label: Label) -> Self {
        Self { frame, label }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}_c{}", self.frame, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    Normal,
    Root,
    LeafFinalFrame,
    TerminatedEarly,
    Unresolved,
}

impl NodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Normal => "normal",
            NodeStatus::Root => "root",
            NodeStatus::LeafFinalFrame => "leaf-final-frame",
            NodeStatus::TerminatedEarly => "terminated-early",
            NodeStatus::Unresolved => "unresolved",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "normal" => NodeStatus::Normal,
            "root" => NodeStatus::Root,
            "leaf-final-frame" => NodeStatus::LeafFinalFrame,
            "terminated-early" => NodeStatus::TerminatedEarly,
            "unresolved" => NodeStatus::Unresolved,
            _ => return None,
        })
    }
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellNode {
    pub id: NodeId,
    /// Index of the parent node in the forest arena.
    pub parent: Option<usize>,
    /// Arena indices of next-frame nodes, ascending by label.
    pub children: Vec<usize>,
    pub clone_id: u32,
    pub status: NodeStatus,
    /// Root that appeared after frame 0 without a parent (cell entering the
    /// field of view, or a tracking gap).
    pub entrant: bool,
    pub area_px: usize,
    pub centroid: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForestError {
    #[error("link refers to {0}, which is not a labeled cell")]
    DanglingLink(NodeId),
    #[error("{0} has more than one parent link")]
    DuplicateParent(NodeId),
    #[error("link {parent} -> {child} does not join consecutive frames")]
    NonConsecutiveLink { parent: NodeId, child: NodeId },
    #[error("{0} appears twice")]
    DuplicateNode(NodeId),
}

/// Input row for assembling a forest from stored data.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub area_px: usize,
    pub centroid: (f64, f64),
    /// Kept only when it is [`NodeStatus::Unresolved`]; every other status is
    /// recomputed from the structure.
    pub status_hint: Option<NodeStatus>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineageForest {
    nodes: Vec<CellNode>,
    index: BTreeMap<NodeId, usize>,
    roots: Vec<usize>,
    frame_count: usize,
}

/// Assembles the forest for `movie` from per-frame-pair tracking links.
///
/// Every labeled cell becomes exactly one node. Cells without a parent link
/// become roots; those after frame 0 are flagged as entrants.
pub fn build_forest(movie: &Movie, links: &[Vec<TrackingLink>]) -> Result<LineageForest, ForestError> {
    let mut records = Vec::new();
    let mut parents: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut known = BTreeMap::new();
    for frame in &movie.frames {
        for (label, region) in frame.regions() {
            known.insert(NodeId::new(frame.index(), label), region);
        }
    }
    for link in links.iter().flatten() {
        for id in [link.prev, link.curr] {
            if !known.contains_key(&id) {
                return Err(ForestError::DanglingLink(id));
            }
        }
        if parents.insert(link.curr, link.prev).is_some() {
            return Err(ForestError::DuplicateParent(link.curr));
        }
    }
    for (id, region) in &known {
        records.push(NodeRecord {
            id: *id,
            parent: parents.get(id).copied(),
            area_px: region.area_px,
            centroid: region.centroid,
            status_hint: None,
        });
    }
    LineageForest::from_records(records, movie.len())
}

/// Recomputes clone ids: every node gets the 1-based rank of its tree's root
/// in `(frame, label)` order.
pub fn assign_clones(mut forest: LineageForest) -> LineageForest {
    forest.assign_clone_ids();
    forest
}

impl LineageForest {
    pub fn from_records(mut records: Vec<NodeRecord>, frame_count: usize) -> Result<Self, ForestError> {
        records.sort_by_key(|r| r.id);
        let mut index = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id, i).is_some() {
                return Err(ForestError::DuplicateNode(r.id));
            }
        }
        let mut nodes: Vec<CellNode> = records
            .iter()
            .map(|r| CellNode {
                id: r.id,
                parent: None,
                children: Vec::new(),
                clone_id: 0,
                status: NodeStatus::Normal,
                entrant: false,
                area_px: r.area_px,
                centroid: r.centroid,
            })
            .collect();
        for (i, r) in records.iter().enumerate() {
            if let Some(p) = r.parent {
                let &pi = index.get(&p).ok_or(ForestError::DanglingLink(p))?;
                if p.frame + 1 != r.id.frame {
                    return Err(ForestError::NonConsecutiveLink { parent: p, child: r.id });
                }
                nodes[i].parent = Some(pi);
                // Records are sorted, so children arrive in label order.
                nodes[pi].children.push(i);
            }
        }
        let roots = (0..nodes.len()).filter(|&i| nodes[i].parent.is_none()).collect();
        let mut forest = Self {
            nodes,
            index,
            roots,
            frame_count,
        };
        forest.assign_clone_ids();
        forest.refresh_status();
        for r in &records {
            if r.status_hint == Some(NodeStatus::Unresolved) {
                let i = forest.index[&r.id];
                forest.nodes[i].status = NodeStatus::Unresolved;
            }
        }
        Ok(forest)
    }

    fn assign_clone_ids(&mut self) {
        for (rank, &root) in self.roots.iter().enumerate() {
            let clone = rank as u32 + 1;
            let mut stack = vec![root];
            while let Some(i) = stack.pop() {
                self.nodes[i].clone_id = clone;
                stack.extend(self.nodes[i].children.iter().copied());
            }
        }
    }

    /// Recomputes structural statuses; `Unresolved` is cleared.
    pub fn refresh_status(&mut self) {
        let last = self.frame_count.saturating_sub(1);
        for node in &mut self.nodes {
            node.entrant = node.parent.is_none() && node.id.frame > 0;
            node.status = if node.parent.is_none() {
                NodeStatus::Root
            } else if node.children.is_empty() {
                if node.id.frame == last {
                    NodeStatus::LeafFinalFrame
                } else {
                    NodeStatus::TerminatedEarly
                }
            } else {
                NodeStatus::Normal
            };
        }
    }

    pub fn mark_unresolved(&mut self, id: NodeId) -> bool {
        match self.index.get(&id) {
            Some(&i) => {
                self.nodes[i].status = NodeStatus::Unresolved;
                true
            }
            None => false,
        }
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.frame_count.checked_sub(1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[CellNode] {
        &self.nodes
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn tree_count(&self) -> usize {
        self.roots.len()
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node(&self, id: NodeId) -> Option<&CellNode> {
        self.index_of(id).map(|i| &self.nodes[i])
    }

    pub fn get(&self, i: usize) -> &CellNode {
        &self.nodes[i]
    }

    pub fn parent_id(&self, id: NodeId) -> Option<NodeId> {
        let n = self.node(id)?;
        n.parent.map(|p| self.nodes[p].id)
    }

    pub fn children_ids(&self, id: NodeId) -> Vec<NodeId> {
        self.node(id)
            .map(|n| n.children.iter().map(|&c| self.nodes[c].id).collect())
            .unwrap_or_default()
    }

    /// Arena indices of the nodes at `frame`, ascending by label.
    pub fn nodes_at(&self, frame: usize) -> Vec<usize> {
        self.index
            .range(NodeId::new(frame, 0)..NodeId::new(frame + 1, 0))
            .map(|(_, &i)| i)
            .collect()
    }

    /// The parent-child pairs as tracking links (overlap fields zeroed).
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.nodes
            .iter()
            .filter_map(|n| n.parent.map(|p| (self.nodes[p].id, n.id)))
            .collect()
    }

    /// First node of the unary chain containing `i`.
    pub fn segment_start(&self, mut i: usize) -> usize {
        while let Some(p) = self.nodes[i].parent {
            if self.nodes[p].children.len() != 1 {
                break;
            }
            i = p;
        }
        i
    }

    /// Walks down from `i` through single-child links, returning the chain.
    pub fn chain_from(&self, i: usize) -> Vec<usize> {
        let mut chain = vec![i];
        let mut cur = i;
        while self.nodes[cur].children.len() == 1 {
            cur = self.nodes[cur].children[0];
            chain.push(cur);
        }
        chain
    }

    /// Clone id of every node, keyed by node id.
    pub fn clone_map(&self) -> BTreeMap<NodeId, u32> {
        self.nodes.iter().map(|n| (n.id, n.clone_id)).collect()
    }

    /// Preorder skeleton of the tree rooted at `root`: each entry is the node's
    /// frame and the position of its parent within the returned vector.
    pub fn skeleton(&self, root: usize) -> Vec<(usize, Option<usize>)> {
        let mut out = Vec::new();
        let mut stack = vec![(root, None)];
        while let Some((i, parent_pos)) = stack.pop() {
            let pos = out.len();
            out.push((self.nodes[i].id.frame, parent_pos));
            for &c in self.nodes[i].children.iter().rev() {
                stack.push((c, Some(pos)));
            }
        }
        out
    }
}

/// Maximal chain of nodes between branch points: one cell's lifespan as the
/// tree records it.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSegment {
    pub nodes: Vec<NodeId>,
    pub clone_id: u32,
    /// Whether the segment's tree starts with an entrant root.
    pub entrant: bool,
    pub start_frame: usize,
    pub end_frame: usize,
    pub starts_at_division: bool,
    pub ends_at_division: bool,
    /// The segment's last node branches into two or more children.
    pub ends_in_branch: bool,
    /// The segment is the root chain of its tree.
    pub starts_at_root: bool,
    pub is_valid: bool,
}

impl CellSegment {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Validity rule for a segment.
///
/// A segment is valid when it opens at a division or at a frame-0 root, and
/// closes at a division or at the movie's last frame.
pub fn segment_is_valid(
    starts_at_division: bool,
    starts_at_root: bool,
    start_frame: usize,
    ends_at_division: bool,
    end_frame: usize,
    last_frame: usize,
) -> bool {
    let open_ok = starts_at_division || (starts_at_root && start_frame == 0);
    let close_ok = ends_at_division || end_frame == last_frame;
    open_ok && close_ok
}

/// Splits the forest into segments. A branch point counts as a division only
/// when it has exactly two children and neither daughter branch dies out
/// before the last frame; a mother with three daughters, or one whose
/// daughter vanishes, is a tree defect rather than a division.
pub fn extract_segments(forest: &LineageForest) -> Vec<CellSegment> {
    let last = forest.last_frame().unwrap_or(0);
    let nodes = forest.nodes();
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let mut chain_of = vec![usize::MAX; nodes.len()];
    for i in 0..nodes.len() {
        let starts = match nodes[i].parent {
            None => true,
            Some(p) => nodes[p].children.len() != 1,
        };
        if starts {
            let chain = forest.chain_from(i);
            for &n in &chain {
                chain_of[n] = chains.len();
            }
            chains.push(chain);
        }
    }
    let terminated_early: Vec<bool> = chains
        .iter()
        .map(|c| {
            let tail = &nodes[*c.last().expect("chains are nonempty")];
            tail.children.is_empty() && tail.id.frame < last
        })
        .collect();
    let is_division = |i: usize| {
        let n = &nodes[i];
        n.children.len() == 2 && n.children.iter().all(|&c| !terminated_early[chain_of[c]])
    };

    chains
        .iter()
        .map(|chain| {
            let head = &nodes[chain[0]];
            let tail_idx = *chain.last().expect("chains are nonempty");
            let tail = &nodes[tail_idx];
            let starts_at_division = head.parent.is_some_and(is_division);
            let ends_at_division = is_division(tail_idx);
            let starts_at_root = head.parent.is_none();
            let root = forest.get(forest_root(forest, chain[0]));
            CellSegment {
                nodes: chain.iter().map(|&i| nodes[i].id).collect(),
                clone_id: head.clone_id,
                entrant: root.entrant,
                start_frame: head.id.frame,
                end_frame: tail.id.frame,
                starts_at_division,
                ends_at_division,
                ends_in_branch: tail.children.len() >= 2,
                starts_at_root,
                is_valid: segment_is_valid(
                    starts_at_division,
                    starts_at_root,
                    head.id.frame,
                    ends_at_division,
                    tail.id.frame,
                    last,
                ),
            }
        })
        .collect()
}

fn forest_root(forest: &LineageForest, mut i: usize) -> usize {
    while let Some(p) = forest.get(i).parent {
        i = p;
    }
    i
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivisionNode {
    pub first: NodeId,
    pub start_frame: usize,
    pub end_frame: usize,
    /// Indices into [`DivisionTree::nodes`].
    pub children: Vec<usize>,
    /// Time of the branching that ends this segment; `None` when the segment
    /// runs out without branching (movie end or lost track).
    pub division_time_min: Option<f64>,
    pub mean_area: f64,
}

impl DivisionNode {
    pub fn length(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }
}

/// A lineage tree with every unary chain contracted to a single node.
#[derive(Debug, Clone, PartialEq)]
pub struct DivisionTree {
    pub clone_id: u32,
    pub root: usize,
    pub nodes: Vec<DivisionNode>,
}

impl DivisionTree {
    /// Re-expands the tree into a lineage skeleton (same layout as
    /// [`LineageForest::skeleton`]) by unrolling every node into its chain.
    pub fn expand(&self) -> Vec<(usize, Option<usize>)> {
        let mut out = Vec::new();
        let mut stack = vec![(self.root, None)];
        while let Some((d, parent_pos)) = stack.pop() {
            let node = &self.nodes[d];
            let mut prev = parent_pos;
            for frame in node.start_frame..=node.end_frame {
                out.push((frame, prev));
                prev = Some(out.len() - 1);
            }
            for &c in node.children.iter().rev() {
                stack.push((c, prev));
            }
        }
        out
    }
}

/// Contracts each tree of the forest into its division tree.
pub fn condense_division_trees(forest: &LineageForest, interval_min: f64) -> Vec<DivisionTree> {
    let nodes = forest.nodes();
    forest
        .roots()
        .iter()
        .map(|&root| {
            let mut dt_nodes: Vec<DivisionNode> = Vec::new();
            // (lineage node starting a segment, parent division-node index)
            let mut stack: Vec<(usize, Option<usize>)> = vec![(root, None)];
            while let Some((start, parent)) = stack.pop() {
                let chain = forest.chain_from(start);
                let tail = &nodes[*chain.last().expect("chains are nonempty")];
                let mean_area = chain.iter().map(|&i| nodes[i].area_px as f64).sum::<f64>() / chain.len() as f64;
                let idx = dt_nodes.len();
                dt_nodes.push(DivisionNode {
                    first: nodes[start].id,
                    start_frame: nodes[start].id.frame,
                    end_frame: tail.id.frame,
                    children: Vec::new(),
                    division_time_min: (tail.children.len() >= 2).then_some(tail.id.frame as f64 * interval_min),
                    mean_area,
                });
                if let Some(p) = parent {
                    dt_nodes[p].children.push(idx);
                }
                if tail.children.len() >= 2 {
                    for &c in tail.children.iter().rev() {
                        stack.push((c, Some(idx)));
                    }
                }
            }
            DivisionTree {
                clone_id: nodes[root].clone_id,
                root: 0,
                nodes: dt_nodes,
            }
        })
        .map(sort_children)
        .collect()
}

// Children are discovered depth-first; put them back in label order so the
// expansion mirrors the lineage tree.
fn sort_children(mut tree: DivisionTree) -> DivisionTree {
    let firsts: Vec<NodeId> = tree.nodes.iter().map(|n| n.first).collect();
    for n in &mut tree.nodes {
        n.children.sort_by_key(|&c| firsts[c]);
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::LabeledFrame;
    use crate::tracking::link_movie;

    fn movie(frames: &[&[&[Label]]]) -> Movie {
        Movie::new(
            frames
                .iter()
                .enumerate()
                .map(|(i, rows)| LabeledFrame::from_rows(i, rows).unwrap())
                .collect(),
            5.0,
        )
    }

    fn forest_of(m: &Movie) -> LineageForest {
        build_forest(m, &link_movie(m).unwrap()).unwrap()
    }

    #[test]
    fn persisting_cell_is_one_chain() {
        let m = movie(&[&[&[1, 1]], &[&[1, 1]], &[&[1, 1]]]);
        let links = link_movie(&m).unwrap();
        assert_eq!(links.iter().map(Vec::len).sum::<usize>(), 2);
        let f = build_forest(&m, &links).unwrap();
        assert_eq!(f.tree_count(), 1);
        assert_eq!(f.len(), 3);
        assert_eq!(f.chain_from(f.roots()[0]).len(), 3);
    }

    #[test]
    fn division_gives_root_two_children() {
        let m = movie(&[&[&[1, 1, 1, 1]], &[&[1, 1, 2, 2]]]);
        let f = forest_of(&m);
        assert_eq!(f.tree_count(), 1);
        assert_eq!(f.get(f.roots()[0]).children.len(), 2);
    }

    #[test]
    fn dangling_and_duplicate_links_rejected() {
        let m = movie(&[&[&[1]], &[&[1]]]);
        let bad = vec![vec![TrackingLink {
            prev: NodeId::new(0, 4),
            curr: NodeId::new(1, 1),
            overlap_px: 1,
            score_fraction: 1.0,
        }]];
        assert_eq!(
            build_forest(&m, &bad),
            Err(ForestError::DanglingLink(NodeId::new(0, 4)))
        );
        let link = TrackingLink {
            prev: NodeId::new(0, 1),
            curr: NodeId::new(1, 1),
            overlap_px: 1,
            score_fraction: 1.0,
        };
        let dup = vec![vec![link.clone(), link]];
        assert_eq!(
            build_forest(&m, &dup),
            Err(ForestError::DuplicateParent(NodeId::new(1, 1)))
        );
    }

    #[test]
    fn orphan_after_frame_zero_is_entrant_root() {
        let m = movie(&[&[&[1, 0, 0]], &[&[1, 0, 2]]]);
        let f = forest_of(&m);
        assert_eq!(f.tree_count(), 2);
        let n = f.node(NodeId::new(1, 2)).unwrap();
        assert!(n.entrant);
        assert_eq!(n.status, NodeStatus::Root);
        assert_eq!(n.clone_id, 2);
    }

    #[test]
    fn clone_ids_follow_roots() {
        let m = movie(&[&[&[1, 0, 2]], &[&[1, 0, 2]]]);
        let f = assign_clones(forest_of(&m));
        let ids: Vec<u32> = f.nodes().iter().map(|n| n.clone_id).collect();
        assert_eq!(ids, vec![1, 2, 1, 2]);
    }

    #[test]
    fn undivided_cell_is_one_valid_segment() {
        let m = movie(&[&[&[1]], &[&[1]], &[&[1]]]);
        let segs = extract_segments(&forest_of(&m));
        assert_eq!(segs.len(), 1);
        assert!(segs[0].is_valid);
    }

    #[test]
    fn early_termination_is_invalid() {
        // Cell 2 disappears at frame 10 of a 20-frame movie.
        let mut frames: Vec<&[&[Label]]> = Vec::new();
        for f in 0..20 {
            frames.push(if f <= 10 { &[&[1, 0, 2]] } else { &[&[1, 0, 0]] });
        }
        let segs = extract_segments(&forest_of(&movie(&frames)));
        let dead = segs.iter().find(|s| s.nodes[0].label == 2).unwrap();
        assert_eq!(dead.end_frame, 10);
        assert!(!dead.is_valid);
        assert!(segs.iter().find(|s| s.nodes[0].label == 1).unwrap().is_valid);
    }

    #[test]
    fn validity_truth_table() {
        // Exhaustive over the four deciding flags and three frame positions.
        let last = 9;
        for sd in [false, true] {
            for root in [false, true] {
                for ed in [false, true] {
                    for start in [0usize, 4] {
                        for end in [4usize, 9] {
                            let v = segment_is_valid(sd, root, start, ed, end, last);
                            let expect = (sd || (root && start == 0)) && (ed || end == last);
                            assert_eq!(v, expect);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn chain_condenses_to_one_node() {
        let frames: Vec<&[&[Label]]> = vec![&[&[1]]; 10];
        let f = forest_of(&movie(&frames));
        let dts = condense_division_trees(&f, 5.0);
        assert_eq!(dts.len(), 1);
        assert_eq!(dts[0].nodes.len(), 1);
        assert_eq!(dts[0].nodes[0].division_time_min, None);
    }

    #[test]
    fn single_division_condenses_to_three_nodes() {
        let m = movie(&[&[&[1, 1, 1, 1]], &[&[1, 1, 1, 1]], &[&[1, 1, 2, 2]], &[&[1, 1, 2, 2]]]);
        let f = forest_of(&m);
        let dts = condense_division_trees(&f, 5.0);
        assert_eq!(dts[0].nodes.len(), 3);
        assert_eq!(dts[0].nodes[0].division_time_min, Some(5.0));
        assert_eq!(dts[0].nodes[0].children.len(), 2);
        assert_eq!(dts[0].expand(), f.skeleton(f.roots()[0]));
        assert!(extract_segments(&f).iter().all(|s| s.is_valid));
    }

    #[test]
    fn status_strings_round_trip() {
        for s in [
            NodeStatus::Normal,
            NodeStatus::Root,
            NodeStatus::LeafFinalFrame,
            NodeStatus::TerminatedEarly,
            NodeStatus::Unresolved,
        ] {
            assert_eq!(NodeStatus::parse(s.as_str()), Some(s));
        }
    }
}
