//! Delayed feedback model: logistic conversion probability `sigmoid(g(x))`
//! and an exponential delay with hazard `exp(h(x))` (per hour), fitted by
//! joint maximum likelihood on the biased dataset.
//!
//! A temporally positive row contributes the density of its observed delay.
//! A temporally negative row observed for `e` hours is either a true negative
//! or a conversion that has not happened yet:
//! `-log[(1 - p) + p * exp(-lambda * e)]`.

use crate::data::{BiasedExample, FeatureVector, Label};
use crate::error::{DflError, Result};
use crate::model::{LinearModel, Prediction};
use crate::optim::{gather, minimize, value_and_gradient, Batch, BatchLoss, GradBuffer, Params, TrainConfig};
use crate::risk::logistic_loss;

#[derive(Clone, Debug, PartialEq)]
pub struct DfmModel {
    pub cvr: LinearModel,
    pub hazard: LinearModel,
}

impl DfmModel {
    pub fn zeros(dimension: usize) -> Self {
        DfmModel {
            cvr: LinearModel::zeros(dimension),
            hazard: LinearModel::zeros(dimension),
        }
    }

    pub fn dimension(&self) -> usize {
        self.cvr.dimension()
    }

    /// Conversion prediction; the hazard part is never consulted.
    pub fn predict(&self, x: &FeatureVector) -> Result<Prediction> {
        self.cvr.predict(x)
    }

    /// Hazard rate `lambda(x) = exp(h(x))`.
    pub fn hazard_rate(&self, x: &FeatureVector) -> Result<f64> {
        Ok(self.hazard.score(x)?.exp())
    }

    fn to_params(&self) -> Vec<f64> {
        let mut p = self.cvr.weights().to_vec();
        p.extend_from_slice(self.hazard.weights());
        p
    }

    fn from_params(p: Vec<f64>) -> Result<Self> {
        let d = p.len() / 2;
        Ok(DfmModel {
            cvr: LinearModel::from_weights(p[..d].to_vec())?,
            hazard: LinearModel::from_weights(p[d..].to_vec())?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct DfmFit {
    pub model: DfmModel,
    pub trace: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

/// `log(exp(a) + exp(b))`.
fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct Term {
    value: f64,
    d_g: f64,
    d_h: f64,
}

fn row_term(g: f64, h: f64, row: &BiasedExample) -> Term {
    match (row.temporal_label, row.observed_delay) {
        (Label::Positive, Some(d)) => {
            let rate = h.exp();
            Term {
                value: logistic_loss(g) - h + rate * d,
                d_g: -crate::risk::sigmoid(-g),
                d_h: -1.0 + rate * d,
            }
        }
        _ => {
            let u = h.exp() * row.elapsed;
            if u == 0.0 {
                return Term {
                    value: 0.0,
                    d_g: 0.0,
                    d_h: 0.0,
                };
            }
            let a = -logistic_loss(-g);
            let b = -logistic_loss(g) - u;
            let lse = log_add_exp(a, b);
            // posterior probability of a pending conversion
            let w = (b - lse).exp();
            let sg = crate::risk::sigmoid(g);
            Term {
                value: -lse,
                d_g: (1.0 - w) * sg - w * (1.0 - sg),
                d_h: w * u,
            }
        }
    }
}

fn check_rows(d: &[BiasedExample]) -> Result<usize> {
    let first = d.first().ok_or(DflError::EmptyDataset("biased dataset"))?;
    let dim = first.features.dimension();
    for r in d {
        if r.features.dimension() != dim {
            return Err(DflError::DimensionMismatch {
                expected: dim,
                got: r.features.dimension(),
            });
        }
        if r.temporal_label.is_positive() && r.observed_delay.is_none() {
            return Err(DflError::InvalidEvent("temporally positive row without observed delay".into()));
        }
    }
    Ok(dim)
}

/// Mean negative log-likelihood of `model` on `d`.
pub fn dfm_nll(model: &DfmModel, d: &[BiasedExample]) -> Result<f64> {
    let dim = check_rows(d)?;
    if dim != model.dimension() {
        return Err(DflError::DimensionMismatch {
            expected: model.dimension(),
            got: dim,
        });
    }
    let mut s = 0.0;
    for r in d {
        let g = model.cvr.score(&r.features)?;
        let h = model.hazard.score(&r.features)?;
        s += row_term(g, h, r).value;
    }
    Ok(s / d.len() as f64)
}

struct DfmLoss<'a> {
    rows: &'a [BiasedExample],
    dim: usize,
}

impl BatchLoss for DfmLoss<'_> {
    fn param_len(&self) -> usize {
        2 * self.dim
    }

    fn reg_dim(&self) -> usize {
        self.dim
    }

    fn n_d(&self) -> usize {
        self.rows.len()
    }

    fn n_e(&self) -> usize {
        0
    }

    fn eval(&self, params: &Params, batch: &Batch<'_>, grad: &mut GradBuffer) -> f64 {
        if batch.d.is_empty() {
            return 0.0;
        }
        let w = params.raw();
        let s = params.scale();
        let inv = 1.0 / batch.d.len() as f64;
        let mut total = 0.0;
        for &r in batch.d {
            let row = &self.rows[r as usize];
            let idx = row.features.indices();
            let g = s * gather(w, idx);
            let h = s * gather(&w[self.dim..], idx);
            let t = row_term(g, h, row);
            total += t.value;
            grad.add_row(idx, 0, t.d_g * inv);
            grad.add_row(idx, self.dim, t.d_h * inv);
        }
        total * inv
    }
}

/// Value and gradient of the mean negative log-likelihood, laid out as
/// `[d/d theta_g, d/d theta_h]`.
pub fn dfm_gradient(model: &DfmModel, d: &[BiasedExample]) -> Result<(f64, Vec<f64>)> {
    let dim = check_rows(d)?;
    if dim != model.dimension() {
        return Err(DflError::DimensionMismatch {
            expected: model.dimension(),
            got: dim,
        });
    }
    value_and_gradient(&DfmLoss { rows: d, dim }, &model.to_params())
}

/// Joint gradient descent from `theta_g = 0` and a constant hazard equal to
/// the inverse mean observed delay.
pub fn train_dfm(d: &[BiasedExample], cfg: &TrainConfig) -> Result<DfmFit> {
    let dim = check_rows(d)?;
    let delays: Vec<f64> = d.iter().filter_map(|r| r.observed_delay).collect();
    let mut init = DfmModel::zeros(dim);
    if !delays.is_empty() {
        let mean = delays.iter().sum::<f64>() / delays.len() as f64;
        let mut h = vec![0.0; dim];
        h[dim - 1] = -mean.max(1e-2).ln();
        init.hazard = LinearModel::from_weights(h)?;
    }
    let out = minimize(&DfmLoss { rows: d, dim }, init.to_params(), cfg)?;
    Ok(DfmFit {
        model: DfmModel::from_params(out.params)?,
        trace: out.trace,
        epochs: out.epochs,
        converged: out.converged,
    })
}
