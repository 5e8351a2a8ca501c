#![allow(dead_code)]

use dfl_core::{BiasedExample, FeatureVector, Label, LinearModel, OracleExample};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const DIM: usize = 6;

pub fn random_features(rng: &mut ChaCha8Rng, dim: usize) -> FeatureVector {
    let active = (0..dim as u32 - 1).filter(|_| rng.random_bool(0.5)).collect();
    FeatureVector::new(active, dim).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> LinearModel {
    LinearModel::from_weights((0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Random biased and oracle rows. `neg_rate` is the share of temporally
/// negative D rows, `mis_rate` the share of late converters among E rows.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    neg_rate: f64,
    mis_rate: f64,
) -> (Vec<BiasedExample>, Vec<OracleExample>) {
    let d = (0..n)
        .map(|_| {
            let y = Label::from_bool(!rng.random_bool(neg_rate));
            BiasedExample {
                features: random_features(rng, DIM),
                temporal_label: y,
                elapsed: rng.random_range(0.1..100.0),
                observed_delay: y.is_positive().then(|| rng.random_range(0.0..50.0)),
            }
        })
        .collect();
    let e = (0..m)
        .map(|_| {
            let late = rng.random_bool(mis_rate);
            let c = Label::from_bool(late || rng.random_bool(0.5));
            OracleExample {
                features: random_features(rng, DIM),
                class_label: c,
                snapshot_correct: Label::from_bool(!late),
                elapsed_at_shifted_snapshot: rng.random_range(0.0..80.0),
            }
        })
        .collect();
    (d, e)
}

/// Central differences of `f` at `w`.
pub fn finite_difference(w: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = w.to_vec();
    (0..w.len())
        .map(|i| {
            x[i] = w[i] + h;
            let up = f(&x);
            x[i] = w[i] - h;
            let down = f(&x);
            x[i] = w[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a - b| / max(max |a|, 1e-8)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale
}

pub fn model_of(w: &[f64]) -> LinearModel {
    LinearModel::from_weights(w.to_vec()).unwrap()
}
