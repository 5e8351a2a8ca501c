//! Surrogate losses and the empirical risks of every estimator.
//!
//! All risks are plain means over their datasets (`1/N` over the biased
//! rows, `1/M` over the oracle rows) and are evaluated with the logistic loss.

use crate::data::{BiasedExample, ClickEvent, Label, OracleExample};
use crate::error::{DflError, Result};
use crate::model::LinearModel;

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-z))` without overflow for large `|z|`.
pub fn logistic_loss(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `l(z) - l(-z)`; for the logistic loss this is exactly `-z`.
pub fn composite_loss(z: f64) -> f64 {
    LossKind::Logistic.composite(z)
}

/// `1` for `z >= 0`, else `0` (tie goes to the positive side).
pub fn zero_one_loss(z: f64) -> f64 {
    if z >= 0.0 {
        1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Logistic,
    /// Evaluation only; never used as a training objective.
    ZeroOne,
}

impl LossKind {
    pub fn value(self, z: f64) -> f64 {
        match self {
            LossKind::Logistic => logistic_loss(z),
            LossKind::ZeroOne => zero_one_loss(z),
        }
    }

    pub fn composite(self, z: f64) -> f64 {
        self.value(z) - self.value(-z)
    }
}

/// The four parts of the convDF risk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskParts {
    pub pos_d: f64,
    pub pos_e: f64,
    pub neg_d: f64,
    pub neg_e: f64,
}

impl RiskParts {
    pub fn convdf(&self) -> f64 {
        self.pos_d + self.pos_e + self.neg_d - self.neg_e
    }

    /// Negative part `neg_d - neg_e`, the quantity the non-negative
    /// correction clamps.
    pub fn negative_part(&self) -> f64 {
        self.neg_d - self.neg_e
    }

    pub fn nndf(&self) -> f64 {
        self.pos_d + self.pos_e + self.negative_part().max(0.0)
    }
}

fn non_empty<T>(rows: &[T], what: &'static str) -> Result<()> {
    if rows.is_empty() {
        Err(DflError::EmptyDataset(what))
    } else {
        Ok(())
    }
}

fn biased_scores(model: &LinearModel, d: &[BiasedExample]) -> Result<Vec<f64>> {
    d.iter().map(|r| model.score(&r.features)).collect()
}

fn oracle_scores(model: &LinearModel, e: &[OracleExample]) -> Result<Vec<f64>> {
    e.iter().map(|r| model.score(&r.features)).collect()
}

fn mean(sum: f64, n: usize) -> f64 {
    sum / n as f64
}

pub fn risk_bl(model: &LinearModel, d: &[BiasedExample]) -> Result<f64> {
    non_empty(d, "biased dataset")?;
    let g = biased_scores(model, d)?;
    let s: f64 = d
        .iter()
        .zip(&g)
        .map(|(r, &g)| logistic_loss(r.temporal_label.sign() * g))
        .sum();
    Ok(mean(s, d.len()))
}

pub fn risk_tw(model: &LinearModel, e: &[OracleExample]) -> Result<f64> {
    non_empty(e, "oracle dataset")?;
    let g = oracle_scores(model, e)?;
    let s: f64 = e
        .iter()
        .zip(&g)
        .map(|(r, &g)| logistic_loss(r.class_label.sign() * g))
        .sum();
    Ok(mean(s, e.len()))
}

/// Mean logistic loss against the true classes of `rows`.
pub fn oracle_risk(model: &LinearModel, rows: &[ClickEvent]) -> Result<f64> {
    non_empty(rows, "labelled set")?;
    let mut s = 0.0;
    for r in rows {
        s += logistic_loss(r.converted.sign() * model.score(&r.features)?);
    }
    Ok(mean(s, rows.len()))
}

/// Unbiased convex risk: biased logistic risk plus the composite-loss
/// correction over oracle rows that were still mislabelled at the shifted
/// snapshot.
pub fn risk_convdf(model: &LinearModel, d: &[BiasedExample], e: &[OracleExample]) -> Result<f64> {
    let bl = risk_bl(model, d)?;
    non_empty(e, "oracle dataset")?;
    let g = oracle_scores(model, e)?;
    let corr: f64 = e
        .iter()
        .zip(&g)
        .filter(|(r, _)| r.is_mislabeled_positive())
        .map(|(_, &g)| composite_loss(g))
        .sum();
    Ok(bl + mean(corr, e.len()))
}

pub fn risk_parts(model: &LinearModel, d: &[BiasedExample], e: &[OracleExample]) -> Result<RiskParts> {
    non_empty(d, "biased dataset")?;
    non_empty(e, "oracle dataset")?;
    let gd = biased_scores(model, d)?;
    let ge = oracle_scores(model, e)?;
    let (mut pos_d, mut neg_d) = (0.0, 0.0);
    for (r, &g) in d.iter().zip(&gd) {
        match r.temporal_label {
            Label::Positive => pos_d += logistic_loss(g),
            Label::Negative => neg_d += logistic_loss(-g),
        }
    }
    let (mut pos_e, mut neg_e) = (0.0, 0.0);
    for (r, &g) in e.iter().zip(&ge) {
        if r.is_mislabeled_positive() {
            pos_e += logistic_loss(g);
            neg_e += logistic_loss(-g);
        }
    }
    Ok(RiskParts {
        pos_d: mean(pos_d, d.len()),
        pos_e: mean(pos_e, e.len()),
        neg_d: mean(neg_d, d.len()),
        neg_e: mean(neg_e, e.len()),
    })
}

/// Non-negative corrected risk: the negative part is clamped at zero.
/// Written as the convDF risk plus the clamp's excess, so the dominance over
/// `risk_convdf` also holds in floating point.
pub fn risk_nndf(model: &LinearModel, d: &[BiasedExample], e: &[OracleExample]) -> Result<f64> {
    let parts = risk_parts(model, d, e)?;
    Ok(risk_convdf(model, d, e)? + (-parts.negative_part()).max(0.0))
}

/// Convex PU risk: oracle positives as the labelled positives, every biased
/// row as unlabelled data.
pub fn risk_putw(model: &LinearModel, d: &[BiasedExample], e: &[OracleExample]) -> Result<f64> {
    non_empty(d, "biased dataset")?;
    non_empty(e, "oracle dataset")?;
    let ge = oracle_scores(model, e)?;
    let pos: f64 = e
        .iter()
        .zip(&ge)
        .filter(|(r, _)| r.class_label.is_positive())
        .map(|(_, &g)| logistic_loss(g) - logistic_loss(-g))
        .sum();
    let gd = biased_scores(model, d)?;
    let unl: f64 = gd.iter().map(|&g| logistic_loss(-g)).sum();
    Ok(mean(pos, e.len()) + mean(unl, d.len()))
}

pub fn risk_pnutw(model: &LinearModel, d: &[BiasedExample], e: &[OracleExample], omega: f64) -> Result<f64> {
    check_omega(omega)?;
    Ok(omega * risk_putw(model, d, e)? + (1.0 - omega) * risk_tw(model, e)?)
}

pub(crate) fn check_omega(omega: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(DflError::Config(format!("omega {omega} outside [0, 1]")));
    }
    Ok(())
}

pub(crate) fn check_weights(weights: &[f64], rows: usize) -> Result<()> {
    if weights.len() != rows {
        return Err(DflError::InvalidWeights(format!(
            "{} weights for {rows} rows",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(DflError::InvalidWeights(format!("weight {w} is not a finite non-negative number")));
    }
    Ok(())
}

/// Importance-weighted biased risk.
pub fn risk_fsiw(model: &LinearModel, d: &[BiasedExample], weights: &[f64]) -> Result<f64> {
    non_empty(d, "biased dataset")?;
    check_weights(weights, d.len())?;
    let g = biased_scores(model, d)?;
    let s: f64 = d
        .iter()
        .zip(&g)
        .zip(weights)
        .map(|((r, &g), &w)| logistic_loss(r.temporal_label.sign() * g) * w)
        .sum();
    Ok(mean(s, d.len()))
}
