//! Importance weights for the two-step FSIW baseline.
//!
//! Two auxiliary logistic models are fitted on the oracle dataset, both with
//! the features augmented by the elapsed time (normalized to `[0, 1]`):
//!
//! * `pos_model` estimates `p(S = +1 | C = +1, x, e)`; a temporally positive
//!   row is weighted by its inverse.
//! * `neg_model` estimates `p(C = +1 | Y = -1, x, e)`; a temporally negative
//!   row is weighted by `1 - p`.

use crate::data::{BiasedExample, FeatureVector, Label, OracleExample};
use crate::error::{DflError, Result};
use crate::model::LinearModel;
use crate::optim::{minimize, LinearObjective, TrainConfig};
use crate::risk::sigmoid;

/// Floor on the positive-model probability; caps weights at `1 / EPSILON`.
pub const EPSILON: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct FsiwWeights {
    pub pos_model: LinearModel,
    pub neg_model: LinearModel,
    pub elapsed_scale: f64,
}

fn augmented_score(model: &LinearModel, x: &FeatureVector, elapsed_norm: f64) -> Result<f64> {
    if model.dimension() != x.dimension() + 1 {
        return Err(DflError::DimensionMismatch {
            expected: model.dimension() - 1,
            got: x.dimension(),
        });
    }
    Ok(model.score_indices(x.indices()) + model.weights()[x.dimension()] * elapsed_norm)
}

impl FsiwWeights {
    fn normalize(&self, elapsed: f64) -> f64 {
        elapsed.clamp(0.0, self.elapsed_scale) / self.elapsed_scale
    }

    /// Estimated `p(S = +1 | C = +1, x, e)`.
    pub fn prob_correct(&self, x: &FeatureVector, elapsed: f64) -> Result<f64> {
        Ok(sigmoid(augmented_score(&self.pos_model, x, self.normalize(elapsed))?))
    }

    /// Estimated `p(C = +1 | Y = -1, x, e)`.
    pub fn prob_pending(&self, x: &FeatureVector, elapsed: f64) -> Result<f64> {
        Ok(sigmoid(augmented_score(&self.neg_model, x, self.normalize(elapsed))?))
    }
}

pub fn positive_weight(prob_correct: f64) -> f64 {
    1.0 / prob_correct.max(EPSILON)
}

pub fn negative_weight(prob_pending: f64) -> f64 {
    (1.0 - prob_pending).clamp(0.0, 1.0)
}

pub fn fit_weight_models(e: &[OracleExample], elapsed_scale: f64, cfg: &TrainConfig) -> Result<FsiwWeights> {
    if !(elapsed_scale > 0.0 && elapsed_scale.is_finite()) {
        return Err(DflError::Config(format!("elapsed scale {elapsed_scale} must be > 0")));
    }
    let dim = e.first().ok_or(DflError::EmptyDataset("oracle dataset"))?.features.dimension();
    if let Some(r) = e.iter().find(|r| r.features.dimension() != dim) {
        return Err(DflError::DimensionMismatch {
            expected: dim,
            got: r.features.dimension(),
        });
    }
    let norm = |t: f64| t.clamp(0.0, elapsed_scale) / elapsed_scale;

    let positives: Vec<&OracleExample> = e.iter().filter(|r| r.class_label.is_positive()).collect();
    if positives.is_empty() {
        return Err(DflError::InsufficientRows("no positive oracle rows for the correctness model".into()));
    }
    let pending: Vec<&OracleExample> = e.iter().filter(|r| r.shifted_label() == Label::Negative).collect();
    if pending.is_empty() {
        return Err(DflError::InsufficientRows(
            "no temporally negative oracle rows for the pending-conversion model".into(),
        ));
    }
    let pos_obj = LinearObjective::logistic(
        positives
            .iter()
            .map(|r| (r.features.indices(), norm(r.elapsed_at_shifted_snapshot), r.snapshot_correct)),
        dim + 1,
        true,
    );
    let neg_obj = LinearObjective::logistic(
        pending
            .iter()
            .map(|r| (r.features.indices(), norm(r.elapsed_at_shifted_snapshot), r.class_label)),
        dim + 1,
        true,
    );
    let pos = minimize(&pos_obj, vec![0.0; dim + 1], cfg)?;
    let neg = minimize(&neg_obj, vec![0.0; dim + 1], cfg)?;
    Ok(FsiwWeights {
        pos_model: LinearModel::from_weights(pos.params)?,
        neg_model: LinearModel::from_weights(neg.params)?,
        elapsed_scale,
    })
}

/// One weight per biased row, using the row's own elapsed time clipped to the
/// oracle support.
pub fn weights_for(d: &[BiasedExample], w: &FsiwWeights) -> Result<Vec<f64>> {
    d.iter()
        .map(|r| match r.temporal_label {
            Label::Positive => Ok(positive_weight(w.prob_correct(&r.features, r.elapsed)?)),
            Label::Negative => Ok(negative_weight(w.prob_pending(&r.features, r.elapsed)?)),
        })
        .collect()
}
