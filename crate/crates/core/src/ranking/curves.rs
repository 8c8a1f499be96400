use serde::{Deserialize, Serialize};

use crate::ballpark::{ClassModel, Sample};
use crate::error::{Error, Result};

/// FRR and presumed-FAR as step functions of the score threshold.
///
/// `frr[i]` is the fraction of labeled positives scoring below
/// `thresholds[i]`; `far_presumed[i]` the fraction of the residual pool
/// scoring at or above it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyCurves {
    pub class_key: String,
    pub thresholds: Vec<f64>,
    pub frr: Vec<f64>,
    #[serde(rename = "far")]
    pub far_presumed: Vec<f64>,
    /// Rate where the two curves cross.
    pub eur: f64,
    pub eur_threshold: f64,
}

impl UncertaintyCurves {
    /// Presumed FAR at an arbitrary threshold `t`.
    pub fn far_at(&self, t: f64) -> f64 {
        let i = self.thresholds.partition_point(|&x| x < t);
        self.far_presumed.get(i).copied().unwrap_or(0.0)
    }

    /// FRR at an arbitrary threshold `t`.
    pub fn frr_at(&self, t: f64) -> f64 {
        let i = self.thresholds.partition_point(|&x| x < t);
        self.frr.get(i).copied().unwrap_or(1.0)
    }
}

/// Builds curves over every distinct score of both sets and locates the
/// crossing. Between two thresholds that bracket the crossing the rate and
/// threshold are interpolated linearly. If FRR stays below FAR up to the
/// top score, the crossing is taken against the limit point (FRR 1, FAR 0)
/// just above it.
pub fn curves_from_scores(class_key: &str, positives: &[f64], residual: &[f64]) -> Result<UncertaintyCurves> {
    if positives.len() < 2 {
        return Err(Error::CurvesUndefined(format!(
            "class {class_key} has {} human-labeled positives, need 2",
            positives.len()
        )));
    }
    if residual.is_empty() {
        return Err(Error::CurvesUndefined(format!("class {class_key} has an empty residual pool")));
    }
    if positives.iter().chain(residual).any(|s| !s.is_finite()) {
        return Err(Error::domain("non-finite score"));
    }
    let mut pos = positives.to_vec();
    let mut res = residual.to_vec();
    pos.sort_by(f64::total_cmp);
    res.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = pos.iter().chain(&res).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let np = pos.len() as f64;
    let nr = res.len() as f64;
    let frr: Vec<f64> = thresholds
        .iter()
        .map(|&t| pos.partition_point(|&s| s < t) as f64 / np)
        .collect();
    let far: Vec<f64> = thresholds
        .iter()
        .map(|&t| (res.len() - res.partition_point(|&s| s < t)) as f64 / nr)
        .collect();

    let (eur, eur_threshold) = match (0..thresholds.len()).find(|&i| frr[i] >= far[i]) {
        Some(i) if frr[i] == far[i] => (frr[i], thresholds[i]),
        Some(i) => {
            // FAR is 1 at the lowest threshold, so a strict crossing is never at 0
            let d0 = frr[i - 1] - far[i - 1];
            let d1 = frr[i] - far[i];
            let u = -d0 / (d1 - d0);
            (
                frr[i - 1] + u * (frr[i] - frr[i - 1]),
                thresholds[i - 1] + u * (thresholds[i] - thresholds[i - 1]),
            )
        }
        None => {
            let last = thresholds.len() - 1;
            let d0 = frr[last] - far[last];
            let u = -d0 / (1.0 - d0);
            (frr[last] + u * (1.0 - frr[last]), thresholds[last])
        }
    };
    Ok(UncertaintyCurves {
        class_key: class_key.to_string(),
        thresholds,
        frr,
        far_presumed: far,
        eur,
        eur_threshold,
    })
}

/// Curves for `model` from its human-labeled positives and the scores of
/// the residual (presumed negative) pool. Synthetic samples are ignored.
pub fn uncertainty_curves(model: &ClassModel, positives: &[Sample], residual_scores: &[f64]) -> Result<UncertaintyCurves> {
    if !model.is_trained() {
        return Err(Error::NoModel(model.class_key.clone()));
    }
    let mut scores = Vec::with_capacity(positives.len());
    for s in positives.iter().filter(|s| s.provenance.is_human()) {
        model.check_dim(&s.feature.histogram)?;
        scores.push(model.log_density(&s.feature.histogram).expect("trained model"));
    }
    curves_from_scores(&model.class_key, &scores, residual_scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingEffect {
    pub class_key: String,
    pub old_threshold: f64,
    pub far_before: f64,
    pub far_after: f64,
    /// Negative when the FAR curve got steeper.
    pub delta_far_at_old_eur_threshold: f64,
    pub delta_eur: f64,
}

/// Change in presumed FAR at the earlier EUR threshold after retraining.
pub fn labeling_effect(before: &UncertaintyCurves, after: &UncertaintyCurves) -> Result<LabelingEffect> {
    if before.class_key != after.class_key {
        return Err(Error::domain(format!(
            "curves belong to {} and {}",
            before.class_key, after.class_key
        )));
    }
    let t = before.eur_threshold;
    let far_before = before.far_at(t);
    let far_after = after.far_at(t);
    Ok(LabelingEffect {
        class_key: before.class_key.clone(),
        old_threshold: t,
        far_before,
        far_after,
        delta_far_at_old_eur_threshold: far_after - far_before,
        delta_eur: after.eur - before.eur,
    })
}
