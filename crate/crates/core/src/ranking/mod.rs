//! Hit lists ranked by class-conditional score, FRR/FAR uncertainty curves
//! with the equal-uncertainty rate, and prospect scoring.

mod curves;
mod hitlist;
mod prospect;

pub use curves::{curves_from_scores, labeling_effect, uncertainty_curves, LabelingEffect, UncertaintyCurves};
pub use hitlist::{rank_hitlist, HitEntry, HitList};
pub use prospect::{near_boundary_count, prospect_score, Prospect, ProspectComponents};
