//! Lineage forests for segmented bacterial cell movies, with tree-driven
//! correction of segmentation errors.
//!
//! A movie is a sequence of [`LabeledFrame`]s. Frames are linked by maximum
//! pixel overlap into a [`LineageForest`]; the forest's structural defects
//! drive [`run_correction_loop`], which edits masks until the forest is
//! consistent. [`simulator`] produces ground-truth colonies and corrupted
//! copies of them, and [`metrics`] scores a forest against the truth.

pub mod correction;
pub mod forest;
pub mod frame;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod simulator;
pub mod tracking;

pub use correction::{
    detect_anomalies, run_correction_loop, Anomaly, AnomalyKind, Correction, CorrectionError, CorrectionEvent,
    CorrectionKind, CorrectionOutcome,
};
pub use forest::{
    build_forest, condense_division_trees, extract_segments, CellNode, CellSegment, DivisionNode, DivisionTree,
    ForestError, LineageForest, NodeId, NodeStatus,
};
pub use frame::{BBox, CellRegion, FrameError, Label, LabeledFrame, Movie, Pixel, BACKGROUND};
pub use geometry::{GeometryError, PixelSet, MAX_LABEL};
pub use metrics::{
    compare_to_truth, correction_summary, validity_report, CorrectionSummary, TruthComparison, ValidityReport,
};
pub use pipeline::{analyze, Analysis};
pub use simulator::{inject_errors, simulate, ErrorConfig, ErrorKind, ErrorLog, SimConfig, SimError, Simulation};
pub use tracking::{link_movie, match_frame_pair, AnalysisParams, NeighborhoodPair, TrackingError, TrackingLink};
