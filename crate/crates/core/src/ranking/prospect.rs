use serde::{Deserialize, Serialize};

use super::UncertaintyCurves;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProspectComponents {
    pub eur: f64,
    pub near_boundary_count: usize,
    /// Labels per day.
    pub label_velocity: f64,
}

/// Expected harvest from reviewing a class's hit list next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prospect {
    pub class_key: String,
    pub score: f64,
    pub components: ProspectComponents,
}

/// Residual candidates at or above the EUR threshold.
pub fn near_boundary_count(curves: &UncertaintyCurves, residual_scores: &[f64]) -> usize {
    residual_scores.iter().filter(|&&s| s >= curves.eur_threshold).count()
}

/// `eur · ln(1 + near) · (1 + min(1, velocity / cap))`.
pub fn prospect_score(curves: &UncertaintyCurves, near_boundary: usize, label_velocity: f64, velocity_cap: f64) -> Prospect {
    let v = if velocity_cap > 0.0 {
        (label_velocity.max(0.0) / velocity_cap).min(1.0)
    } else {
        0.0
    };
    Prospect {
        class_key: curves.class_key.clone(),
        score: curves.eur * (near_boundary as f64).ln_1p() * (1.0 + v),
        components: ProspectComponents {
            eur: curves.eur,
            near_boundary_count: near_boundary,
            label_velocity,
        },
    }
}
