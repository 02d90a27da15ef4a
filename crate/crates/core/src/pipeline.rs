//! Movie in, forest out: tracking plus (optionally) the correction loop.

use crate::correction::{run_correction_loop, CorrectionError, CorrectionEvent};
use crate::forest::{build_forest, LineageForest};
use crate::frame::Movie;
use crate::metrics::{correction_summary, validity_report, CorrectionSummary, ValidityReport};
use crate::tracking::{link_movie, AnalysisParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    /// The corrected movie, or the input when correction is off.
    pub movie: Movie,
    pub forest: LineageForest,
    pub events: Vec<CorrectionEvent>,
    /// Validity of the tracked, uncorrected forest.
    pub before: ValidityReport,
    pub after: ValidityReport,
}

impl Analysis {
    pub fn summary(&self) -> CorrectionSummary {
        correction_summary(&self.events, &self.before, &self.after)
    }
}

pub fn analyze(movie: &Movie, params: &AnalysisParams, correct: bool) -> Result<Analysis, CorrectionError> {
    params.validate()?;
    if movie.is_empty() {
        return Err(CorrectionError::EmptyMovie);
    }
    let raw = build_forest(movie, &link_movie(movie)?)?;
    let before = validity_report(&raw);
    if !correct {
        return Ok(Analysis {
            movie: movie.clone(),
            forest: raw,
            events: Vec::new(),
            after: before.clone(),
            before,
        });
    }
    let out = run_correction_loop(movie, params)?;
    Ok(Analysis {
        after: validity_report(&out.forest),
        movie: out.movie,
        forest: out.forest,
        events: out.events,
        before,
    })
}
