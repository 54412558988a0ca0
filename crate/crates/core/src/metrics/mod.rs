//! Diversity, recognizability and originality scores, generalization curves
//! and the rank statistics used to validate them.

mod curve;
mod report;
mod scores;
mod stats;

pub use curve::{
    bin_by_originality, fit_generalization_curve, fit_points, CurvePoint, GeneralizationCurve, OriginalityBin,
    ScoredSample,
};
pub use report::{mean_over_concepts, save_concept_csv, write_concept_csv, ConceptEvaluation, CurveDocument};
pub use scores::{
    cosine_distance, diversity, originality, originality_setting, recognizability, recognizability_with,
    validate_originality, DistanceKind, OriginalitySetting, SettingCorrelation,
};
pub use stats::{average_ranks, pearson, spearman_rank_correlation, spearman_rho, t_approx_p_value};
