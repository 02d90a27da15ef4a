//! Pixel-level operations on labeled regions.
//!
//! Adjacency is 8-connectivity everywhere. Operations never mutate their
//! input frame; edits come back as a new frame plus the labels they created.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use thiserror::Error;

use crate::frame::{components, Label, LabeledFrame, Pixel, BACKGROUND, NEIGHBORS_8};

/// Highest label a frame file can hold.
pub const MAX_LABEL: Label = u16::MAX as Label;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("frame dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("label {label} does not exist in frame {frame}")]
    UnknownLabel { frame: usize, label: Label },
    #[error("no labels given")]
    NoLabels,
    #[error("frame {frame} has no free label below {max}", max = MAX_LABEL)]
    LabelSpaceExhausted { frame: usize },
    #[error("cannot split a {area}-pixel region into {parts} parts")]
    TooManySeeds { area: usize, parts: usize },
    #[error("seeds {first} and {second} collapse onto the same region pixel")]
    SeedsCollapse { first: usize, second: usize },
    #[error("a split needs at least two seeds, got {0}")]
    TooFewSeeds(usize),
}

/// Explicit set of pixel coordinates, sorted row-major and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelSet {
    pixels: Vec<Pixel>,
}

impl PixelSet {
    pub fn new(mut pixels: Vec<Pixel>) -> Self {
        pixels.sort_by_key(|p| (p.y, p.x));
        pixels.dedup();
        Self { pixels }
    }

    pub fn from_label(frame: &LabeledFrame, label: Label) -> Self {
        Self {
            pixels: frame.pixels_of(label),
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[Pixel] {
        &self.pixels
    }

    pub fn union(&self, other: &PixelSet) -> PixelSet {
        let mut all = self.pixels.clone();
        all.extend_from_slice(&other.pixels);
        PixelSet::new(all)
    }

    pub fn overlap(&self, other: &PixelSet) -> usize {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        let lookup: BTreeSet<Pixel> = large.pixels.iter().copied().collect();
        small.pixels.iter().filter(|p| lookup.contains(p)).count()
    }

    pub fn touches(&self, other: &PixelSet) -> bool {
        let lookup: BTreeSet<Pixel> = other.pixels.iter().copied().collect();
        self.pixels.iter().any(|p| {
            lookup.contains(p)
                || NEIGHBORS_8.iter().any(|&(dx, dy)| {
                    let (x, y) = (p.x as i64 + dx, p.y as i64 + dy);
                    x >= 0 && y >= 0 && lookup.contains(&Pixel::new(x as u32, y as u32))
                })
        })
    }

    pub fn centroid(&self) -> Option<(f64, f64)> {
        if self.pixels.is_empty() {
            return None;
        }
        let n = self.pixels.len() as f64;
        let sx: f64 = self.pixels.iter().map(|p| p.x as f64).sum();
        let sy: f64 = self.pixels.iter().map(|p| p.y as f64).sum();
        Some((sx / n, sy / n))
    }
}

fn check_dims(a: &LabeledFrame, b: &LabeledFrame) -> Result<(), GeometryError> {
    if a.dims() != b.dims() {
        return Err(GeometryError::DimensionMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    Ok(())
}

/// Number of coordinates covered by `a_label` in `a` and by `b_label` in `b`.
pub fn pixel_overlap(
    a: &LabeledFrame,
    a_label: Label,
    b: &LabeledFrame,
    b_label: Label,
) -> Result<usize, GeometryError> {
    check_dims(a, b)?;
    Ok(a.labels()
        .iter()
        .zip(b.labels())
        .filter(|&(&la, &lb)| la == a_label && lb == b_label && la != BACKGROUND && lb != BACKGROUND)
        .count())
}

/// Overlap counts of every (a-label, b-label) pair sharing at least one pixel.
pub fn overlap_table(a: &LabeledFrame, b: &LabeledFrame) -> Result<BTreeMap<(Label, Label), usize>, GeometryError> {
    check_dims(a, b)?;
    let mut table = BTreeMap::new();
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        if la != BACKGROUND && lb != BACKGROUND {
            *table.entry((la, lb)).or_insert(0) += 1;
        }
    }
    Ok(table)
}

/// True when some pixel of `a` is 8-adjacent to some pixel of `b`.
pub fn regions_touch(frame: &LabeledFrame, a: Label, b: Label) -> bool {
    if a == b || a == BACKGROUND || b == BACKGROUND {
        return false;
    }
    frame.pixels().filter(|&(_, l)| l == a).any(|(p, _)| {
        NEIGHBORS_8
            .iter()
            .any(|&(dx, dy)| frame.get_signed(p.x as i64 + dx, p.y as i64 + dy) == b)
    })
}

/// Every unordered pair of distinct labels that touch, as `(low, high)`.
pub fn touching_pairs(frame: &LabeledFrame) -> BTreeSet<(Label, Label)> {
    let mut pairs = BTreeSet::new();
    for (p, l) in frame.pixels() {
        if l == BACKGROUND {
            continue;
        }
        for &(dx, dy) in &NEIGHBORS_8 {
            let m = frame.get_signed(p.x as i64 + dx, p.y as i64 + dy);
            if m != BACKGROUND && m != l {
                pairs.insert((l.min(m), l.max(m)));
            }
        }
    }
    pairs
}

/// Next label not used in `frame`.
pub fn fresh_label(frame: &LabeledFrame) -> Result<Label, GeometryError> {
    let next = frame.max_label() + 1;
    if next > MAX_LABEL {
        return Err(GeometryError::LabelSpaceExhausted { frame: frame.index() });
    }
    Ok(next)
}

fn check_labels(frame: &LabeledFrame, labels: &[Label]) -> Result<(), GeometryError> {
    if labels.is_empty() {
        return Err(GeometryError::NoLabels);
    }
    let present = frame.label_set();
    for &l in labels {
        if !present.contains(&l) {
            return Err(GeometryError::UnknownLabel {
                frame: frame.index(),
                label: l,
            });
        }
    }
    Ok(())
}

/// Relabels the union of `labels` to one fresh label.
///
/// The union may be disconnected; callers that need a single piece gate on
/// [`regions_touch`] first.
pub fn merge_regions(frame: &LabeledFrame, labels: &[Label]) -> Result<(LabeledFrame, Label), GeometryError> {
    check_labels(frame, labels)?;
    let new_label = fresh_label(frame)?;
    let set: BTreeSet<Label> = labels.iter().copied().collect();
    let mut out = frame.clone();
    for (p, l) in frame.pixels() {
        if set.contains(&l) {
            out.set(p.x, p.y, new_label);
        }
    }
    Ok((out, new_label))
}

/// Chamfer step costs for orthogonal and diagonal moves (5-7 approximates 1-√2).
const STEP_ORTHO: u64 = 5;
const STEP_DIAG: u64 = 7;

/// Splits one region into `seeds.len()` parts by geodesic nearest-seed
/// assignment inside the region.
///
/// Each seed snaps to the nearest region pixel (Euclidean, row-major order on
/// ties). Distances are chamfer 5-7 path lengths restricted to the region;
/// equal distances go to the lower seed index. Any part that still ends up
/// disconnected donates its stray pieces to the neighboring part sharing the
/// longest boundary with them.
pub fn split_region_by_seeds(
    frame: &LabeledFrame,
    label: Label,
    seeds: &[(f64, f64)],
) -> Result<(LabeledFrame, Vec<Label>), GeometryError> {
    check_labels(frame, &[label])?;
    if seeds.len() < 2 {
        return Err(GeometryError::TooFewSeeds(seeds.len()));
    }
    let pixels = frame.pixels_of(label);
    if seeds.len() > pixels.len() {
        return Err(GeometryError::TooManySeeds {
            area: pixels.len(),
            parts: seeds.len(),
        });
    }

    let snapped: Vec<usize> = seeds
        .iter()
        .map(|&(sx, sy)| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, p) in pixels.iter().enumerate() {
                let d = (p.x as f64 - sx).powi(2) + (p.y as f64 - sy).powi(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best
        })
        .collect();
    for i in 0..snapped.len() {
        for j in (i + 1)..snapped.len() {
            if snapped[i] == snapped[j] {
                return Err(GeometryError::SeedsCollapse { first: i, second: j });
            }
        }
    }

    let index: BTreeMap<Pixel, usize> = pixels.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let mut dist = vec![u64::MAX; pixels.len()];
    let mut owner = vec![usize::MAX; pixels.len()];
    let mut heap = BinaryHeap::new();
    for (seed, &pi) in snapped.iter().enumerate() {
        dist[pi] = 0;
        owner[pi] = seed;
        heap.push(Reverse((0u64, seed, pi)));
    }
    while let Some(Reverse((d, seed, pi))) = heap.pop() {
        if d > dist[pi] || owner[pi] != seed {
            continue;
        }
        let p = pixels[pi];
        for (dx, dy) in NEIGHBORS_8 {
            let (nx, ny) = (p.x as i64 + dx, p.y as i64 + dy);
            if nx < 0 || ny < 0 {
                continue;
            }
            let Some(&qi) = index.get(&Pixel::new(nx as u32, ny as u32)) else {
                continue;
            };
            let step = if dx != 0 && dy != 0 { STEP_DIAG } else { STEP_ORTHO };
            let nd = d + step;
            if nd < dist[qi] || (nd == dist[qi] && seed < owner[qi]) {
                dist[qi] = nd;
                owner[qi] = seed;
                heap.push(Reverse((nd, seed, qi)));
            }
        }
    }

    reattach_strays(&pixels, &index, &mut owner, &snapped);

    let first = fresh_label(frame)?;
    let last = first as u64 + seeds.len() as u64 - 1;
    if last > MAX_LABEL as u64 {
        return Err(GeometryError::LabelSpaceExhausted { frame: frame.index() });
    }
    let new_labels: Vec<Label> = (0..seeds.len() as Label).map(|k| first + k).collect();
    let mut out = frame.clone();
    for (pi, p) in pixels.iter().enumerate() {
        out.set(p.x, p.y, new_labels[owner[pi]]);
    }
    Ok((out, new_labels))
}

/// Moves pieces of a part that are cut off from that part's seed over to the
/// adjacent part with the longest shared boundary.
fn reattach_strays(pixels: &[Pixel], index: &BTreeMap<Pixel, usize>, owner: &mut [usize], seeds: &[usize]) {
    let parts = seeds.len();
    // Each pass moves at least one stray piece, so `pixels.len()` passes bound the loop.
    for _ in 0..pixels.len() {
        let mut moved = false;
        for part in 0..parts {
            let members: Vec<Pixel> = pixels
                .iter()
                .enumerate()
                .filter(|&(i, _)| owner[i] == part)
                .map(|(_, &p)| p)
                .collect();
            let comps = components(&members);
            if comps.len() <= 1 {
                continue;
            }
            let seed_px = pixels[seeds[part]];
            for comp in comps.iter().filter(|c| !c.contains(&seed_px)) {
                let mut shared = vec![0usize; parts];
                for p in comp {
                    for (dx, dy) in NEIGHBORS_8 {
                        let (nx, ny) = (p.x as i64 + dx, p.y as i64 + dy);
                        if nx < 0 || ny < 0 {
                            continue;
                        }
                        if let Some(&qi) = index.get(&Pixel::new(nx as u32, ny as u32)) {
                            if owner[qi] != part {
                                shared[owner[qi]] += 1;
                            }
                        }
                    }
                }
                let Some((target, _)) = shared
                    .iter()
                    .enumerate()
                    .filter(|&(_, &n)| n > 0)
                    .max_by_key(|&(i, &n)| (n, Reverse(i)))
                else {
                    continue;
                };
                for p in comp {
                    owner[index[p]] = target;
                }
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Groups `labels` into classes under the transitive closure of touching.
/// Clusters come back ordered by their smallest label, each sorted ascending.
pub fn connected_clusters(frame: &LabeledFrame, labels: &[Label]) -> Vec<Vec<Label>> {
    let wanted: Vec<Label> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let pos: BTreeMap<Label, usize> = wanted.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut parent: Vec<usize> = (0..wanted.len()).collect();

    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    for (a, b) in touching_pairs(frame) {
        if let (Some(&ia), Some(&ib)) = (pos.get(&a), pos.get(&b)) {
            let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<Label>> = BTreeMap::new();
    for (i, &l) in wanted.iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(l);
    }
    groups.into_values().collect()
}
