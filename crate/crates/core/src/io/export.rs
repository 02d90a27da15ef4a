use std::fmt::Write as _;
use std::path::Path;

use super::IoError;
use crate::correction::CorrectionEvent;
use crate::forest::{LineageForest, NodeId, NodeRecord, NodeStatus};

pub const FOREST_TSV_HEADER: &str =
    "frame\tcell_id\tparent_frame\tparent_cell_id\tclone_id\tarea_px\tcentroid_x\tcentroid_y\tstatus";
pub const EVENTS_TSV_HEADER: &str = "frame_from\tframe_to\tkind\tlabels_before\tlabels_after\tscore_used";

/// One row per node, sorted by (frame, cell_id); a root has empty parent
/// fields.
pub fn forest_tsv(forest: &LineageForest) -> String {
    let mut s = String::with_capacity(48 * (forest.len() + 1));
    s.push_str(FOREST_TSV_HEADER);
    s.push('\n');
    for node in forest.nodes() {
        let (pf, pc) = match node.parent.map(|p| forest.get(p).id) {
            Some(p) => (p.frame.to_string(), p.label.to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{}\t{}\t{pf}\t{pc}\t{}\t{}\t{:.3}\t{:.3}\t{}",
            node.id.frame, node.id.label, node.clone_id, node.area_px, node.centroid.0, node.centroid.1, node.status
        );
    }
    s
}

/// Parses [`forest_tsv`] output. `frame_count` defaults to one past the
/// last frame present.
pub fn read_forest_tsv(text: &str, frame_count: Option<usize>, path: &Path) -> Result<LineageForest, IoError> {
    let fail = |line: usize, message: String| IoError::Table {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == FOREST_TSV_HEADER => {}
        _ => return Err(fail(1, "missing forest header".into())),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 9 {
            return Err(fail(n, format!("expected 9 columns, found {}", cols.len())));
        }
        let int = |k: usize| -> Result<usize, IoError> {
            cols[k]
                .parse()
                .map_err(|_| fail(n, format!("column {}: not an integer: {:?}", k + 1, cols[k])))
        };
        let float = |k: usize| -> Result<f64, IoError> {
            cols[k]
                .parse()
                .map_err(|_| fail(n, format!("column {}: not a number: {:?}", k + 1, cols[k])))
        };
        let label = |k: usize| -> Result<u32, IoError> {
            u32::try_from(int(k)?).map_err(|_| fail(n, format!("column {}: label out of range", k + 1)))
        };
        let parent = match (cols[2].is_empty(), cols[3].is_empty()) {
            (true, true) => None,
            (false, false) => Some(NodeId::new(int(2)?, label(3)?)),
            _ => {
                return Err(fail(
                    n,
                    "parent_frame and parent_cell_id must both be set or both empty".into(),
                ))
            }
        };
        let status = NodeStatus::parse(cols[8]).ok_or_else(|| fail(n, format!("unknown status {:?}", cols[8])))?;
        records.push(NodeRecord {
            id: NodeId::new(int(0)?, label(1)?),
            parent,
            area_px: int(5)?,
            centroid: (float(6)?, float(7)?),
            status_hint: Some(status),
        });
    }
    let frames = frame_count.unwrap_or_else(|| records.iter().map(|r| r.id.frame + 1).max().unwrap_or(0));
    LineageForest::from_records(records, frames).map_err(|e| fail(0, e.to_string()))
}

/// Graphviz digraph with one node per cell and one edge per link.
pub fn forest_dot(forest: &LineageForest) -> String {
    let mut s = String::from("digraph lineage {\n  node [shape=box];\n");
    for node in forest.nodes() {
        let _ = writeln!(
            s,
            "  \"{}\" [clone_id={}, area_px={}, status=\"{}\"];",
            node.id, node.clone_id, node.area_px, node.status
        );
    }
    for (parent, child) in forest.edges() {
        let _ = writeln!(s, "  \"{parent}\" -> \"{child}\";");
    }
    s.push_str("}\n");
    s
}

fn join_ids(ids: &[NodeId]) -> String {
    ids.iter().map(NodeId::to_string).collect::<Vec<_>>().join(",")
}

pub fn events_tsv(events: &[CorrectionEvent]) -> String {
    let mut s = String::from(EVENTS_TSV_HEADER);
    s.push('\n');
    for e in events {
        let from = e.frames_affected.first().copied().unwrap_or(0);
        let to = e.frames_affected.last().copied().unwrap_or(from);
        let score = e.score_used.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{from}\t{to}\t{}\t{}\t{}\t{score}",
            e.kind,
            join_ids(&e.labels_before),
            join_ids(&e.labels_after)
        );
    }
    s
}
