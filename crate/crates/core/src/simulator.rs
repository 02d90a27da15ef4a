//! Ground-truth colonies of rod-shaped cells, and a segmentation-error
//! injector with a typed log.
//!
//! Cells are capsules (a segment of length `length - width` swept by a disc of
//! diameter `width`) that grow geometrically, divide end to end at a sampled
//! length and push each other apart. Everything is driven by a seeded ChaCha
//! generator, so a config fully determines the output.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{extract_segments, LineageForest, NodeId, NodeRecord};
use crate::frame::{components, region_from_pixels, Label, LabeledFrame, Movie, Pixel, BACKGROUND};
use crate::geometry::{touching_pairs, MAX_LABEL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("growth overflow at frame {frame}: the population no longer fits the {width}x{height} grid")]
    GrowthOverflow { frame: usize, width: usize, height: usize },
    #[error("label space exhausted at frame {frame}")]
    LabelSpaceExhausted { frame: usize },
}

/// Explicit founder placement; `x`, `y` in pixels, `angle_deg` from the x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Founder {
    pub x: f64,
    pub y: f64,
    pub angle_deg: f64,
}

/// Removes one cell of clone `clone` from frame `frame` on: the most
/// recently born one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedDeath {
    pub frame: usize,
    pub clone: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_clones: usize,
    pub frames: usize,
    pub interval_min: f64,
    pub width: usize,
    pub height: usize,
    pub cell_width_px: f64,
    pub initial_length_px: f64,
    /// Length multiplier per frame.
    pub growth_rate: f64,
    pub division_length_mean_px: f64,
    pub division_length_cv: f64,
    /// Minimum distance between randomly placed founders.
    pub founder_spacing_px: f64,
    /// Overrides random placement when nonempty; must hold `n_clones` entries.
    pub founders: Vec<Founder>,
    pub deaths: Vec<ScriptedDeath>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_clones: 19,
            frames: 78,
            interval_min: 5.0,
            width: 384,
            height: 384,
            cell_width_px: 4.0,
            initial_length_px: 10.0,
            growth_rate: 1.035,
            division_length_mean_px: 18.0,
            division_length_cv: 0.1,
            founder_spacing_px: 36.0,
            founders: Vec::new(),
            deaths: Vec::new(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.frames == 0 {
            return bad("frames must be at least 1");
        }
        if self.n_clones == 0 {
            return bad("n_clones must be at least 1");
        }
        if self.width == 0 || self.height == 0 {
            return bad("grid must be nonempty");
        }
        if !self.growth_rate.is_finite() || self.growth_rate < 1.0 {
            return bad("growth_rate must be at least 1");
        }
        if self.division_length_cv.is_nan() || self.division_length_cv < 0.0 {
            return bad("division_length_cv must be nonnegative");
        }
        if self.cell_width_px.is_nan() || self.cell_width_px < 1.0 {
            return bad("cell_width_px must be at least 1");
        }
        if self.initial_length_px.is_nan() || self.initial_length_px < self.cell_width_px {
            return bad("initial_length_px must be at least the cell width");
        }
        if self.division_length_mean_px.is_nan() || self.division_length_mean_px <= self.initial_length_px {
            return bad("division_length_mean_px must exceed initial_length_px");
        }
        if self.interval_min.is_nan() || self.interval_min <= 0.0 {
            return bad("interval_min must be positive");
        }
        if !self.founders.is_empty() && self.founders.len() != self.n_clones {
            return bad("founders must list exactly n_clones entries");
        }
        if self.n_clones > MAX_LABEL as usize {
            return bad("too many clones for the label range");
        }
        Ok(())
    }
}

/// A simulated movie with its exact lineage.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub movie: Movie,
    /// Clone ids equal founder labels (1-based, in founder order).
    pub truth: LineageForest,
}

#[derive(Debug, Clone)]
struct Rod {
    label: Label,
    /// Label of this cell (or its mother) in the previous frame.
    prev: Option<Label>,
    x: f64,
    y: f64,
    angle: f64,
    length: f64,
    division_length: f64,
    clone: u32,
}

impl Rod {
    fn axis(&self, width: f64) -> ((f64, f64), (f64, f64)) {
        let h = ((self.length - width) / 2.0).max(0.0);
        let (s, c) = self.angle.sin_cos();
        ((self.x - h * c, self.y - h * s), (self.x + h * c, self.y + h * s))
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn segment_distance(a: ((f64, f64), (f64, f64)), b: ((f64, f64), (f64, f64))) -> f64 {
    let d1 = cross(a.0, a.1, b.0);
    let d2 = cross(a.0, a.1, b.1);
    let d3 = cross(b.0, b.1, a.0);
    let d4 = cross(b.0, b.1, a.1);
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return 0.0;
    }
    point_segment_distance(a.0, b.0, b.1)
        .min(point_segment_distance(a.1, b.0, b.1))
        .min(point_segment_distance(b.0, a.0, a.1))
        .min(point_segment_distance(b.1, a.0, a.1))
}

struct Colony<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    rods: Vec<Rod>,
    next_label: u32,
}

impl Colony<'_> {
    fn sample_division_length(&mut self) -> f64 {
        let mean = self.cfg.division_length_mean_px;
        let sd = mean * self.cfg.division_length_cv;
        let raw = if sd > 0.0 {
            Normal::new(mean, sd).expect("finite sd").sample(&mut self.rng)
        } else {
            mean
        };
        raw.max(2.0 * self.cfg.cell_width_px + 1.0)
    }

    fn place_founders(&mut self) -> Result<(), SimError> {
        let cfg = self.cfg;
        let mut placed: Vec<Founder> = cfg.founders.clone();
        if placed.is_empty() {
            // Colonies drift outward as they push each other, so founders start
            // well inside the grid.
            let margin = cfg.founder_spacing_px / 2.0 + 0.15 * cfg.width.min(cfg.height) as f64;
            let (w, h) = (cfg.width as f64, cfg.height as f64);
            if w <= 2.0 * margin || h <= 2.0 * margin {
                return Err(SimError::GrowthOverflow {
                    frame: 0,
                    width: cfg.width,
                    height: cfg.height,
                });
            }
            let mut attempts = 0;
            while placed.len() < cfg.n_clones {
                attempts += 1;
                if attempts > 20_000 {
                    return Err(SimError::GrowthOverflow {
                        frame: 0,
                        width: cfg.width,
                        height: cfg.height,
                    });
                }
                let x = self.rng.random_range(margin..w - margin);
                let y = self.rng.random_range(margin..h - margin);
                let far = placed
                    .iter()
                    .all(|f| (f.x - x).hypot(f.y - y) >= cfg.founder_spacing_px);
                if far {
                    let angle_deg = self.rng.random_range(0.0..180.0);
                    placed.push(Founder { x, y, angle_deg });
                }
            }
        }
        for (i, f) in placed.iter().enumerate() {
            let division_length = self.sample_division_length();
            self.rods.push(Rod {
                label: i as Label + 1,
                prev: None,
                x: f.x,
                y: f.y,
                angle: f.angle_deg.to_radians(),
                length: cfg.initial_length_px,
                division_length,
                clone: i as u32 + 1,
            });
        }
        self.next_label = placed.len() as u32 + 1;
        Ok(())
    }

    fn fresh(&mut self, frame: usize) -> Result<Label, SimError> {
        if self.next_label > MAX_LABEL {
            return Err(SimError::LabelSpaceExhausted { frame });
        }
        self.next_label += 1;
        Ok(self.next_label - 1)
    }

    fn grow_and_divide(&mut self, frame: usize) -> Result<(), SimError> {
        let noise = 10f64.to_radians();
        let old = std::mem::take(&mut self.rods);
        for mut rod in old {
            rod.prev = Some(rod.label);
            rod.length *= self.cfg.growth_rate;
            if rod.length < rod.division_length {
                self.rods.push(rod);
                continue;
            }
            let half = rod.length / 2.0;
            let (s, c) = rod.angle.sin_cos();
            for sign in [-1.0, 1.0] {
                let label = self.fresh(frame)?;
                let angle = rod.angle + self.rng.random_range(-noise..=noise);
                let division_length = self.sample_division_length();
                self.rods.push(Rod {
                    label,
                    prev: rod.prev,
                    x: rod.x + sign * half / 2.0 * c,
                    y: rod.y + sign * half / 2.0 * s,
                    angle,
                    length: half,
                    division_length,
                    clone: rod.clone,
                });
            }
        }
        Ok(())
    }

    fn apply_deaths(&mut self, frame: usize) {
        for death in &self.cfg.deaths {
            if death.frame != frame {
                continue;
            }
            let victim = self
                .rods
                .iter()
                .enumerate()
                .filter(|(_, r)| r.clone == death.clone)
                .max_by_key(|(_, r)| r.label)
                .map(|(i, _)| i);
            if let Some(i) = victim {
                self.rods.remove(i);
            }
        }
    }

    /// One pass of pairwise pushes; returns whether any pair collided.
    fn push_apart(&mut self) -> bool {
        let w = self.cfg.cell_width_px;
        let n = self.rods.len();
        let axes: Vec<_> = self.rods.iter().map(|r| r.axis(w)).collect();
        let mut shift = vec![(0.0, 0.0); n];
        let mut collided = false;
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (&self.rods[i], &self.rods[j]);
                let reach = (a.length + b.length) / 2.0 + w;
                if (a.x - b.x).abs() > reach || (a.y - b.y).abs() > reach {
                    continue;
                }
                let d = segment_distance(axes[i], axes[j]);
                if d >= w {
                    continue;
                }
                collided = true;
                let (mut ux, mut uy) = (b.x - a.x, b.y - a.y);
                let norm = ux.hypot(uy);
                if norm < 1e-9 {
                    let (s, c) = a.angle.sin_cos();
                    ux = -s;
                    uy = c;
                } else {
                    ux /= norm;
                    uy /= norm;
                }
                let step = (w - d) / 2.0 + 0.05;
                shift[i].0 -= ux * step;
                shift[i].1 -= uy * step;
                shift[j].0 += ux * step;
                shift[j].1 += uy * step;
            }
        }
        for (rod, (dx, dy)) in self.rods.iter_mut().zip(shift) {
            rod.x += dx;
            rod.y += dy;
        }
        collided
    }

    fn relax(&mut self) {
        for _round in 0..2 {
            for _ in 0..50 {
                if !self.push_apart() {
                    return;
                }
            }
            for rod in &mut self.rods {
                rod.x += self.rng.random_range(-0.5..=0.5);
                rod.y += self.rng.random_range(-0.5..=0.5);
            }
        }
    }

    fn fits(&self) -> bool {
        let w = self.cfg.cell_width_px;
        let (gw, gh) = (self.cfg.width as f64, self.cfg.height as f64);
        self.rods.iter().all(|r| {
            let (p, q) = r.axis(w);
            [p, q].iter().all(|&(x, y)| {
                x - w / 2.0 >= -0.5 && y - w / 2.0 >= -0.5 && x + w / 2.0 <= gw - 0.5 && y + w / 2.0 <= gh - 0.5
            })
        })
    }

    fn rasterize(&self, frame: usize) -> Result<LabeledFrame, SimError> {
        let cfg = self.cfg;
        let (gw, gh) = (cfg.width, cfg.height);
        let radius = cfg.cell_width_px / 2.0;
        let mut owner: Vec<(usize, f64)> = vec![(usize::MAX, f64::INFINITY); gw * gh];
        for (k, rod) in self.rods.iter().enumerate() {
            let (p, q) = rod.axis(cfg.cell_width_px);
            let x0 = (p.0.min(q.0) - radius).floor().max(0.0) as usize;
            let x1 = ((p.0.max(q.0) + radius).ceil().max(0.0) as usize).min(gw - 1);
            let y0 = (p.1.min(q.1) - radius).floor().max(0.0) as usize;
            let y1 = ((p.1.max(q.1) + radius).ceil().max(0.0) as usize).min(gh - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = point_segment_distance((x as f64, y as f64), p, q);
                    let slot = &mut owner[y * gw + x];
                    if d <= radius + 1e-9 && d < slot.1 {
                        *slot = (k, d);
                    }
                }
            }
        }
        let mut per_rod: Vec<Vec<Pixel>> = vec![Vec::new(); self.rods.len()];
        for (i, &(k, _)) in owner.iter().enumerate() {
            if k != usize::MAX {
                per_rod[k].push(Pixel::new((i % gw) as u32, (i / gw) as u32));
            }
        }
        let mut labels = vec![BACKGROUND; gw * gh];
        for (rod, pixels) in self.rods.iter().zip(per_rod) {
            let keep = components(&pixels)
                .into_iter()
                .max_by_key(|c| c.len())
                .ok_or(SimError::GrowthOverflow {
                    frame,
                    width: gw,
                    height: gh,
                })?;
            for p in keep {
                labels[p.y as usize * gw + p.x as usize] = rod.label;
            }
        }
        Ok(LabeledFrame::new(frame, gw, gh, labels).expect("buffer matches grid"))
    }
}

/// Simulates `cfg.frames` frames of colony growth.
pub fn simulate(cfg: &SimConfig) -> Result<Simulation, SimError> {
    cfg.validate()?;
    let mut colony = Colony {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        rods: Vec::new(),
        next_label: 1,
    };
    colony.place_founders()?;
    colony.relax();

    let mut frames = Vec::with_capacity(cfg.frames);
    let mut records = Vec::new();
    for f in 0..cfg.frames {
        if f > 0 {
            colony.grow_and_divide(f)?;
            colony.apply_deaths(f);
            colony.relax();
        }
        if !colony.fits() {
            return Err(SimError::GrowthOverflow {
                frame: f,
                width: cfg.width,
                height: cfg.height,
            });
        }
        let frame = colony.rasterize(f)?;
        let pixels = frame.pixel_lists();
        for rod in &colony.rods {
            let region = region_from_pixels(f, rod.label, &pixels[&rod.label]).expect("raster is nonempty");
            records.push(NodeRecord {
                id: NodeId::new(f, rod.label),
                parent: rod.prev.map(|p| NodeId::new(f - 1, p)),
                area_px: region.area_px,
                centroid: region.centroid,
                status_hint: None,
            });
        }
        frames.push(frame);
    }
    let truth = LineageForest::from_records(records, cfg.frames).expect("simulated lineage is consistent");
    Ok(Simulation {
        movie: Movie::new(frames, cfg.interval_min),
        truth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorConfig {
    /// Per cell and frame: cut one mask into 2 or 3 fragments for one frame.
    pub p_over_transient: f64,
    /// Per true cell segment: cut that cell the same way for `persist_len`
    /// consecutive frames.
    pub p_over_persistent: f64,
    pub persist_len: usize,
    /// Per touching pair and frame: give both cells one label for one frame.
    pub p_under: f64,
    pub seed: u64,
}

impl Default for ErrorConfig {
    fn default() -> Self {
        Self {
            p_over_transient: 0.0,
            p_over_persistent: 0.0,
            persist_len: 4,
            p_under: 0.0,
            seed: 0,
        }
    }
}

impl ErrorConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, p) in [
            ("p_over_transient", self.p_over_transient),
            ("p_over_persistent", self.p_over_persistent),
            ("p_under", self.p_under),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.persist_len == 0 {
            return Err(SimError::InvalidConfig("persist_len must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    OverTransient,
    OverPersistent,
    Under,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub frame: usize,
    pub kind: ErrorKind,
    pub true_labels: Vec<Label>,
    /// Labels carrying the mutated pixels; empty when skipped.
    pub corrupted_labels: Vec<Label>,
    /// The event was drawn but no valid mutation existed.
    pub skipped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorLog {
    pub entries: Vec<ErrorEntry>,
}

impl ErrorLog {
    pub fn applied(&self) -> impl Iterator<Item = &ErrorEntry> {
        self.entries.iter().filter(|e| !e.skipped)
    }

    pub fn count(&self, kind: ErrorKind) -> usize {
        self.applied().filter(|e| e.kind == kind).count()
    }
}

/// Cuts `pixels` perpendicular to their principal axis at the given
/// fractions of the axis extent. `None` unless every piece is a nonempty
/// 8-connected region.
fn cut_pixels(pixels: &[Pixel], fractions: &[f64]) -> Option<Vec<Vec<Pixel>>> {
    let n = pixels.len() as f64;
    if pixels.len() < fractions.len() + 1 {
        return None;
    }
    let cx = pixels.iter().map(|p| p.x as f64).sum::<f64>() / n;
    let cy = pixels.iter().map(|p| p.y as f64).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in pixels {
        let (dx, dy) = (p.x as f64 - cx, p.y as f64 - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let (s, c) = theta.sin_cos();
    let proj: Vec<f64> = pixels
        .iter()
        .map(|p| (p.x as f64 - cx) * c + (p.y as f64 - cy) * s)
        .collect();
    let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let cuts: Vec<f64> = fractions.iter().map(|f| lo + f * (hi - lo)).collect();
    let mut pieces = vec![Vec::new(); fractions.len() + 1];
    for (p, t) in pixels.iter().zip(&proj) {
        let k = cuts.iter().filter(|&&cut| *t >= cut).count();
        pieces[k].push(*p);
    }
    pieces
        .iter()
        .all(|piece| !piece.is_empty() && components(piece).len() == 1)
        .then_some(pieces)
}

struct PlannedCut {
    start: usize,
    /// Label of the cell at each frame of the event.
    labels: Vec<Label>,
    fractions: Vec<f64>,
}

/// Corrupts a clean movie with over- and under-segmentation errors.
///
/// Frame 0 is never touched, and a cell takes part in at most one mutation
/// per frame. Persistent cuts are planned first, one draw per true cell
/// segment; then, frame by frame, transient cuts are drawn per cell and
/// label merges per touching pair.
pub fn inject_errors(movie: &Movie, truth: &LineageForest, cfg: &ErrorConfig) -> Result<(Movie, ErrorLog), SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = ErrorLog::default();
    let last = movie.len().saturating_sub(1);
    let k = cfg.persist_len;

    let mut persistent: BTreeMap<usize, Vec<(Label, Vec<f64>)>> = BTreeMap::new();
    if cfg.p_over_persistent > 0.0 {
        for seg in extract_segments(truth) {
            if !rng.random_bool(cfg.p_over_persistent) {
                continue;
            }
            let first = seg.start_frame + 1;
            // The cut must heal before the cell divides and before the movie ends.
            let latest = seg.end_frame.min(last).saturating_sub(k);
            if latest < first {
                let id = seg.nodes[0];
                log.entries.push(ErrorEntry {
                    frame: id.frame,
                    kind: ErrorKind::OverPersistent,
                    true_labels: vec![id.label],
                    corrupted_labels: Vec::new(),
                    skipped: true,
                });
                continue;
            }
            let start = rng.random_range(first..=latest);
            let fraction = rng.random_range(0.35..0.65);
            let plan = PlannedCut {
                start,
                labels: (start..start + k)
                    .map(|f| seg.nodes[f - seg.start_frame].label)
                    .collect(),
                fractions: vec![fraction],
            };
            let viable = plan.labels.iter().enumerate().all(|(i, &label)| {
                let pixels = movie.frames[plan.start + i].pixels_of(label);
                cut_pixels(&pixels, &plan.fractions).is_some()
            });
            if !viable {
                log.entries.push(ErrorEntry {
                    frame: start,
                    kind: ErrorKind::OverPersistent,
                    true_labels: vec![plan.labels[0]],
                    corrupted_labels: Vec::new(),
                    skipped: true,
                });
                continue;
            }
            for (i, &label) in plan.labels.iter().enumerate() {
                persistent
                    .entry(plan.start + i)
                    .or_default()
                    .push((label, plan.fractions.clone()));
            }
        }
    }

    let mut frames = Vec::with_capacity(movie.len());
    for (f, original) in movie.frames.iter().enumerate() {
        if f == 0 {
            frames.push(original.clone());
            continue;
        }
        let mut frame = original.clone();
        let mut next_label = original.max_label() + 1;
        let mut touched: BTreeSet<Label> = BTreeSet::new();
        let pixels = original.pixel_lists();

        let mut apply_cut = |frame: &mut LabeledFrame,
                             label: Label,
                             pieces: Vec<Vec<Pixel>>,
                             kind: ErrorKind,
                             log: &mut ErrorLog|
         -> Result<(), SimError> {
            let mut corrupted = vec![label];
            for piece in pieces.iter().skip(1) {
                if next_label > MAX_LABEL {
                    return Err(SimError::LabelSpaceExhausted { frame: f });
                }
                for p in piece {
                    frame.set(p.x, p.y, next_label);
                }
                corrupted.push(next_label);
                next_label += 1;
            }
            log.entries.push(ErrorEntry {
                frame: f,
                kind,
                true_labels: vec![label],
                corrupted_labels: corrupted,
                skipped: false,
            });
            Ok(())
        };

        for (label, fractions) in persistent.remove(&f).unwrap_or_default() {
            if !touched.insert(label) {
                continue;
            }
            let pieces = cut_pixels(&pixels[&label], &fractions).expect("checked when planned");
            apply_cut(&mut frame, label, pieces, ErrorKind::OverPersistent, &mut log)?;
        }

        if cfg.p_over_transient > 0.0 {
            for (&label, cell) in &pixels {
                if !rng.random_bool(cfg.p_over_transient) {
                    continue;
                }
                let fractions = if rng.random_bool(0.5) {
                    vec![rng.random_range(0.3..0.7)]
                } else {
                    vec![rng.random_range(0.25..0.4), rng.random_range(0.6..0.75)]
                };
                if touched.contains(&label) {
                    continue;
                }
                match cut_pixels(cell, &fractions) {
                    Some(pieces) => {
                        touched.insert(label);
                        apply_cut(&mut frame, label, pieces, ErrorKind::OverTransient, &mut log)?;
                    }
                    None => log.entries.push(ErrorEntry {
                        frame: f,
                        kind: ErrorKind::OverTransient,
                        true_labels: vec![label],
                        corrupted_labels: Vec::new(),
                        skipped: true,
                    }),
                }
            }
        }

        if cfg.p_under > 0.0 {
            for (a, b) in touching_pairs(original) {
                if !rng.random_bool(cfg.p_under) {
                    continue;
                }
                let keep_first = rng.random_bool(0.5);
                if touched.contains(&a) || touched.contains(&b) {
                    log.entries.push(ErrorEntry {
                        frame: f,
                        kind: ErrorKind::Under,
                        true_labels: vec![a, b],
                        corrupted_labels: Vec::new(),
                        skipped: true,
                    });
                    continue;
                }
                let (kept, lost) = if keep_first { (a, b) } else { (b, a) };
                for p in &pixels[&lost] {
                    frame.set(p.x, p.y, kept);
                }
                touched.insert(a);
                touched.insert(b);
                log.entries.push(ErrorEntry {
                    frame: f,
                    kind: ErrorKind::Under,
                    true_labels: vec![a, b],
                    corrupted_labels: vec![kept],
                    skipped: false,
                });
            }
        }
        frames.push(frame);
    }
    Ok((Movie::new(frames, movie.interval_min), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::condense_division_trees;
    use crate::geometry::pixel_overlap;

    fn small(clones: usize, frames: usize, seed: u64) -> SimConfig {
        SimConfig {
            n_clones: clones,
            frames,
            width: 200,
            height: 200,
            founder_spacing_px: 30.0,
            seed,
            ..SimConfig::default()
        }
    }

    #[test]
    fn static_cell_without_growth() {
        let cfg = SimConfig {
            n_clones: 1,
            frames: 6,
            growth_rate: 1.0,
            width: 40,
            height: 40,
            founder_spacing_px: 20.0,
            ..SimConfig::default()
        };
        let sim = simulate(&cfg).unwrap();
        for f in 1..6 {
            assert_eq!(sim.movie.frames[f].labels(), sim.movie.frames[0].labels());
        }
        assert_eq!(sim.truth.len(), 6);
        assert_eq!(sim.truth.tree_count(), 1);
        assert!(sim.truth.nodes().iter().all(|n| n.children.len() <= 1));
    }

    #[test]
    fn single_division_gives_three_segments() {
        let cfg = SimConfig {
            n_clones: 1,
            frames: 10,
            width: 48,
            height: 48,
            founder_spacing_px: 24.0,
            growth_rate: 1.05,
            initial_length_px: 10.0,
            division_length_mean_px: 12.0,
            division_length_cv: 0.0,
            ..SimConfig::default()
        };
        let sim = simulate(&cfg).unwrap();
        let segs = extract_segments(&sim.truth);
        assert_eq!(segs.len(), 3);
        let trees = condense_division_trees(&sim.truth, 5.0);
        assert_eq!(trees.len(), 1);
        assert_eq!(trees[0].nodes.len(), 3);
        // 10 * 1.05^f first reaches 12 at f = 4.
        assert_eq!(segs[0].end_frame, 3);
    }

    #[test]
    fn same_seed_same_movie() {
        let a = simulate(&small(4, 20, 7)).unwrap();
        let b = simulate(&small(4, 20, 7)).unwrap();
        let c = simulate(&small(4, 20, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.movie, c.movie);
    }

    #[test]
    fn frames_are_valid_and_match_truth() {
        let sim = simulate(&small(5, 40, 3)).unwrap();
        for frame in &sim.movie.frames {
            frame.validate().unwrap();
        }
        assert_eq!(sim.truth.len(), sim.movie.cell_instances());
        assert_eq!(sim.truth.tree_count(), 5);
        assert!(sim.truth.nodes().iter().all(|n| n.children.len() <= 2));
        assert!(extract_segments(&sim.truth).iter().all(|s| s.is_valid));
    }

    #[test]
    fn children_overlap_their_parent() {
        let sim = simulate(&small(5, 40, 11)).unwrap();
        for node in sim.truth.nodes() {
            let Some(p) = sim.truth.parent_id(node.id) else {
                continue;
            };
            let shared = pixel_overlap(
                &sim.movie.frames[p.frame],
                p.label,
                &sim.movie.frames[node.id.frame],
                node.id.label,
            )
            .unwrap();
            assert!(2 * shared >= node.area_px, "{} overlaps {} by {shared}", node.id, p);
        }
    }

    #[test]
    fn overflow_names_the_frame() {
        let cfg = SimConfig {
            n_clones: 2,
            frames: 60,
            width: 40,
            height: 40,
            founders: vec![
                Founder {
                    x: 14.0,
                    y: 20.0,
                    angle_deg: 0.0,
                },
                Founder {
                    x: 26.0,
                    y: 20.0,
                    angle_deg: 90.0,
                },
            ],
            ..SimConfig::default()
        };
        match simulate(&cfg) {
            Err(SimError::GrowthOverflow { frame, .. }) => assert!(frame > 0),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn scripted_death_removes_one_cell() {
        let mut cfg = small(2, 40, 5);
        cfg.deaths = vec![ScriptedDeath { frame: 30, clone: 1 }];
        let sim = simulate(&cfg).unwrap();
        let early: Vec<_> = sim
            .truth
            .nodes()
            .iter()
            .filter(|n| n.children.is_empty() && n.id.frame < 39)
            .collect();
        assert_eq!(early.len(), 1);
        assert_eq!(early[0].id.frame, 29);
    }

    #[test]
    fn zero_probabilities_change_nothing() {
        let sim = simulate(&small(3, 15, 1)).unwrap();
        let (out, log) = inject_errors(&sim.movie, &sim.truth, &ErrorConfig::default()).unwrap();
        assert_eq!(out, sim.movie);
        assert!(log.entries.is_empty());
    }

    #[test]
    fn forced_transient_cut_preserves_area() {
        let sim = simulate(&small(1, 4, 2)).unwrap();
        let cfg = ErrorConfig {
            p_over_transient: 1.0,
            ..ErrorConfig::default()
        };
        let (out, log) = inject_errors(&sim.movie, &sim.truth, &cfg).unwrap();
        assert_eq!(out.frames[0], sim.movie.frames[0]);
        for f in 1..4 {
            let (before, after) = (&sim.movie.frames[f], &out.frames[f]);
            assert_ne!(before, after);
            assert_eq!(before.foreground_area(), after.foreground_area());
            for (a, b) in before.labels().iter().zip(after.labels()) {
                assert_eq!(*a == 0, *b == 0);
            }
            after.validate().unwrap();
        }
        assert_eq!(log.count(ErrorKind::OverTransient), 3);
    }

    #[test]
    fn persistent_cut_spans_k_frames() {
        let cfg = SimConfig {
            n_clones: 1,
            frames: 12,
            growth_rate: 1.0,
            width: 40,
            height: 40,
            founder_spacing_px: 20.0,
            initial_length_px: 14.0,
            ..SimConfig::default()
        };
        let sim = simulate(&cfg).unwrap();
        let err = ErrorConfig {
            p_over_persistent: 1.0,
            persist_len: 4,
            seed: 3,
            ..ErrorConfig::default()
        };
        let (out, log) = inject_errors(&sim.movie, &sim.truth, &err).unwrap();
        let frames: Vec<usize> = log.applied().map(|e| e.frame).collect();
        assert_eq!(frames.len(), 4);
        assert!(frames.windows(2).all(|w| w[1] == w[0] + 1));
        let sizes: Vec<usize> = frames.iter().map(|&f| out.frames[f].label_set().len()).collect();
        assert_eq!(sizes, vec![2; 4]);
        // The same cut on a static cell yields identical frames.
        assert!(frames
            .windows(2)
            .all(|w| out.frames[w[0]].labels() == out.frames[w[1]].labels()));
    }

    #[test]
    fn under_merge_keeps_union() {
        let sim = simulate(&small(2, 30, 4)).unwrap();
        let err = ErrorConfig {
            p_under: 0.5,
            seed: 9,
            ..ErrorConfig::default()
        };
        let (out, log) = inject_errors(&sim.movie, &sim.truth, &err).unwrap();
        assert!(log.count(ErrorKind::Under) > 0);
        for e in log.applied() {
            let before = &sim.movie.frames[e.frame];
            let after = &out.frames[e.frame];
            let union: usize = e.true_labels.iter().map(|&l| before.pixels_of(l).len()).sum();
            assert_eq!(after.pixels_of(e.corrupted_labels[0]).len(), union);
        }
    }

    #[test]
    fn invalid_probability_rejected() {
        let sim = simulate(&small(1, 2, 0)).unwrap();
        let err = ErrorConfig {
            p_under: 1.5,
            ..ErrorConfig::default()
        };
        assert!(matches!(
            inject_errors(&sim.movie, &sim.truth, &err),
            Err(SimError::InvalidConfig(_))
        ));
    }
}
