//! Label images and the regions they contain.
//!
//! A [`LabeledFrame`] is one movie frame after segmentation: every pixel holds
//! the label of the cell covering it, `0` meaning background. Pixel `(x, y)`
//! has its center at continuous coordinate `(x, y)`, so region centroids and
//! simulator cell positions share one coordinate system.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cell label within one frame. `0` is background.
pub type Label = u32;

pub const BACKGROUND: Label = 0;

/// Offsets of the 8-neighborhood.
pub(crate) const NEIGHBORS_8: [(i64, i64); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("label buffer holds {got} pixels, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("frame {frame}: label {label} is split into {components} disconnected pieces")]
    Disconnected {
        frame: usize,
        label: Label,
        components: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub x: u32,
    pub y: u32,
}

impl Pixel {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: u32,
    pub min_y: u32,
    pub max_x: u32,
    pub max_y: u32,
}

impl BBox {
    fn around(p: Pixel) -> Self {
        Self {
            min_x: p.x,
            min_y: p.y,
            max_x: p.x,
            max_y: p.y,
        }
    }

    fn include(&mut self, p: Pixel) {
        self.min_x = self.min_x.min(p.x);
        self.min_y = self.min_y.min(p.y);
        self.max_x = self.max_x.max(p.x);
        self.max_y = self.max_y.max(p.y);
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x as f64 && x <= self.max_x as f64 && y >= self.min_y as f64 && y <= self.max_y as f64
    }
}

/// Cached geometry of one labeled region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRegion {
    pub frame_index: usize,
    pub label: Label,
    pub area_px: usize,
    pub centroid: (f64, f64),
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledFrame {
    index: usize,
    width: usize,
    height: usize,
    labels: Vec<Label>,
}

impl LabeledFrame {
    pub fn new(index: usize, width: usize, height: usize, labels: Vec<Label>) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::EmptyDimensions { width, height });
        }
        if labels.len() != width * height {
            return Err(FrameError::BufferSize {
                expected: width * height,
                got: labels.len(),
            });
        }
        Ok(Self {
            index,
            width,
            height,
            labels,
        })
    }

    /// All-background frame.
    pub fn blank(index: usize, width: usize, height: usize) -> Result<Self, FrameError> {
        Self::new(index, width, height, vec![BACKGROUND; width * height])
    }

    /// Builds a frame from rows of labels; handy for small hand-made fixtures.
    pub fn from_rows(index: usize, rows: &[&[Label]]) -> Result<Self, FrameError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut labels = Vec::with_capacity(width * height);
        for row in rows {
            if row.len() != width {
                return Err(FrameError::BufferSize {
                    expected: width * height,
                    got: labels.len() + row.len(),
                });
            }
            labels.extend_from_slice(row);
        }
        Self::new(index, width, height, labels)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn set_index(&mut self, index: usize) {
        self.index = index;
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Label {
        self.labels[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, label: Label) {
        self.labels[y as usize * self.width + x as usize] = label;
    }

    /// Label at signed coordinates, background outside the frame.
    #[inline]
    pub(crate) fn get_signed(&self, x: i64, y: i64) -> Label {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            BACKGROUND
        } else {
            self.labels[y as usize * self.width + x as usize]
        }
    }

    pub fn contains_label(&self, label: Label) -> bool {
        label != BACKGROUND && self.labels.contains(&label)
    }

    pub fn label_set(&self) -> BTreeSet<Label> {
        self.labels.iter().copied().filter(|&l| l != BACKGROUND).collect()
    }

    pub fn max_label(&self) -> Label {
        self.labels.iter().copied().max().unwrap_or(BACKGROUND)
    }

    pub fn foreground_area(&self) -> usize {
        self.labels.iter().filter(|&&l| l != BACKGROUND).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = (Pixel, Label)> + '_ {
        let w = self.width;
        self.labels
            .iter()
            .enumerate()
            .map(move |(i, &l)| (Pixel::new((i % w) as u32, (i / w) as u32), l))
    }

    pub fn pixels_of(&self, label: Label) -> Vec<Pixel> {
        self.pixels().filter(|&(_, l)| l == label).map(|(p, _)| p).collect()
    }

    /// Pixel lists of every foreground label, each in row-major order.
    pub fn pixel_lists(&self) -> BTreeMap<Label, Vec<Pixel>> {
        let mut out: BTreeMap<Label, Vec<Pixel>> = BTreeMap::new();
        for (p, l) in self.pixels() {
            if l != BACKGROUND {
                out.entry(l).or_default().push(p);
            }
        }
        out
    }

    pub fn regions(&self) -> BTreeMap<Label, CellRegion> {
        let mut acc: BTreeMap<Label, (usize, f64, f64, BBox)> = BTreeMap::new();
        for (p, l) in self.pixels() {
            if l == BACKGROUND {
                continue;
            }
            let e = acc.entry(l).or_insert((0, 0.0, 0.0, BBox::around(p)));
            e.0 += 1;
            e.1 += p.x as f64;
            e.2 += p.y as f64;
            e.3.include(p);
        }
        acc.into_iter()
            .map(|(label, (n, sx, sy, bbox))| {
                let region = CellRegion {
                    frame_index: self.index,
                    label,
                    area_px: n,
                    centroid: (sx / n as f64, sy / n as f64),
                    bbox,
                };
                (label, region)
            })
            .collect()
    }

    pub fn region(&self, label: Label) -> Option<CellRegion> {
        let pixels = self.pixels_of(label);
        region_from_pixels(self.index, label, &pixels)
    }

    /// Checks that every label forms a single 8-connected piece.
    pub fn validate(&self) -> Result<(), FrameError> {
        for (label, pixels) in self.pixel_lists() {
            let components = count_components(&pixels);
            if components != 1 {
                return Err(FrameError::Disconnected {
                    frame: self.index,
                    label,
                    components,
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn region_from_pixels(frame_index: usize, label: Label, pixels: &[Pixel]) -> Option<CellRegion> {
    let first = *pixels.first()?;
    let mut bbox = BBox::around(first);
    let (mut sx, mut sy) = (0.0, 0.0);
    for &p in pixels {
        bbox.include(p);
        sx += p.x as f64;
        sy += p.y as f64;
    }
    let n = pixels.len() as f64;
    Some(CellRegion {
        frame_index,
        label,
        area_px: pixels.len(),
        centroid: (sx / n, sy / n),
        bbox,
    })
}

/// 8-connected components of a pixel set, each sorted row-major, ordered by
/// their first pixel.
pub(crate) fn components(pixels: &[Pixel]) -> Vec<Vec<Pixel>> {
    let set: BTreeSet<Pixel> = pixels.iter().copied().collect();
    let mut seen: BTreeSet<Pixel> = BTreeSet::new();
    let mut sorted: Vec<Pixel> = set.iter().copied().collect();
    sorted.sort_by_key(|p| (p.y, p.x));
    let mut out = Vec::new();
    for &start in &sorted {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            for (dx, dy) in NEIGHBORS_8 {
                let (nx, ny) = (p.x as i64 + dx, p.y as i64 + dy);
                if nx < 0 || ny < 0 {
                    continue;
                }
                let q = Pixel::new(nx as u32, ny as u32);
                if set.contains(&q) && seen.insert(q) {
                    queue.push_back(q);
                }
            }
        }
        comp.sort_by_key(|p| (p.y, p.x));
        out.push(comp);
    }
    out
}

pub(crate) fn count_components(pixels: &[Pixel]) -> usize {
    components(pixels).len()
}

/// A labeled movie: frames in temporal order plus the sampling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Movie {
    pub frames: Vec<LabeledFrame>,
    pub interval_min: f64,
}

impl Movie {
    pub fn new(frames: Vec<LabeledFrame>, interval_min: f64) -> Self {
        Self { frames, interval_min }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, index: usize) -> Option<&LabeledFrame> {
        self.frames.get(index)
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.frames.len().checked_sub(1)
    }

    pub fn time_min(&self, index: usize) -> f64 {
        index as f64 * self.interval_min
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(LabeledFrame::dims)
    }

    /// Total labeled-cell instances across all frames.
    pub fn cell_instances(&self) -> usize {
        self.frames.iter().map(|f| f.label_set().len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_report_area_centroid_and_tight_bbox() {
        let f = LabeledFrame::from_rows(0, &[&[0, 1, 1], &[0, 1, 1], &[2, 0, 0]]).unwrap();
        let regions = f.regions();
        let r1 = &regions[&1];
        assert_eq!(r1.area_px, 4);
        assert_eq!(r1.centroid, (1.5, 0.5));
        assert_eq!(
            r1.bbox,
            BBox {
                min_x: 1,
                min_y: 0,
                max_x: 2,
                max_y: 1
            }
        );
        assert!(r1.bbox.contains(r1.centroid.0, r1.centroid.1));
        assert_eq!(regions[&2].area_px, 1);
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(matches!(
            LabeledFrame::new(0, 0, 3, vec![]),
            Err(FrameError::EmptyDimensions { .. })
        ));
        assert!(matches!(
            LabeledFrame::new(0, 2, 2, vec![0; 3]),
            Err(FrameError::BufferSize { .. })
        ));
    }

    #[test]
    fn validate_uses_eight_connectivity() {
        let diag = LabeledFrame::from_rows(0, &[&[1, 0], &[0, 1]]).unwrap();
        assert!(diag.validate().is_ok());
        let split = LabeledFrame::from_rows(3, &[&[1, 0, 1]]).unwrap();
        assert_eq!(
            split.validate(),
            Err(FrameError::Disconnected {
                frame: 3,
                label: 1,
                components: 2
            })
        );
    }
}
