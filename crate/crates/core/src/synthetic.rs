//! Seeded synthetic click log with campaigns launched one per day.
//!
//! Each sample has 20 binary features and belongs to one of the campaigns
//! launched so far. The conversion score is `x . alpha + alpha_camp`, where
//! later campaigns convert more for `eta > 0`; that drift is what separates
//! methods that use recent data from those that only use old, settled labels.
//! Delays are half-normal with a feature-dependent scale and do not depend on
//! the campaign.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{ClickEvent, FeatureVector, Label, Snapshot, SnapshotConfig};
use crate::error::{DflError, Result};
use crate::risk::sigmoid;

pub const N_FEATURES: usize = 20;
pub const N_CAMPAIGNS: usize = 7;
/// Binary features, campaign indicators and the bias.
pub const DIMENSION: usize = N_FEATURES + N_CAMPAIGNS + 1;
pub const HOURS_PER_DAY: f64 = 24.0;
pub const DEFAULT_SAMPLES_PER_DAY: usize = 4800;
pub const DEFAULT_DAYS: usize = 8;
pub const DEFAULT_TAU: f64 = 24.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticParams {
    pub feature_means: Vec<f64>,
    pub cvr_weights: Vec<f64>,
    pub delay_weights: Vec<f64>,
    pub campaign_cvr: Vec<f64>,
    pub eta: f64,
    pub samples_per_day: usize,
    pub n_days: usize,
    /// Hours per unit of the delay scale `x . beta`.
    pub delay_sigma_unit: f64,
}

pub fn campaign_cvr(eta: f64) -> Vec<f64> {
    (1..=N_CAMPAIGNS).map(|d| d as f64 / N_CAMPAIGNS as f64 * eta).collect()
}

pub fn generate_params(seed: u64, eta: f64) -> Result<SyntheticParams> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(DflError::Config(format!("eta {eta} must be >= 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feature_means = (0..N_FEATURES)
        .map(|k| if k < 5 { rng.random_range(0.1..0.3) } else { rng.random_range(0.3..0.7) })
        .collect();
    let cvr_weights = (0..N_FEATURES).map(|_| rng.random_range(-0.5..0.5)).collect();
    let delay_weights = (0..N_FEATURES).map(|_| rng.random_range(0.0..10.0)).collect();
    Ok(SyntheticParams {
        feature_means,
        cvr_weights,
        delay_weights,
        campaign_cvr: campaign_cvr(eta),
        eta,
        samples_per_day: DEFAULT_SAMPLES_PER_DAY,
        n_days: DEFAULT_DAYS,
        delay_sigma_unit: 1.0,
    })
}

impl SyntheticParams {
    fn validate(&self) -> Result<()> {
        let lens = [
            (self.feature_means.len(), N_FEATURES),
            (self.cvr_weights.len(), N_FEATURES),
            (self.delay_weights.len(), N_FEATURES),
            (self.campaign_cvr.len(), N_CAMPAIGNS),
        ];
        if let Some(&(got, expected)) = lens.iter().find(|(g, e)| g != e) {
            return Err(DflError::LengthMismatch { left: got, right: expected });
        }
        if self.feature_means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(DflError::Config("feature means must lie in [0, 1]".into()));
        }
        if self.delay_weights.iter().any(|b| !(*b >= 0.0)) {
            return Err(DflError::Config("delay weights must be >= 0".into()));
        }
        if self.n_days < 2 || self.samples_per_day == 0 {
            return Err(DflError::Config("need at least two days and one sample per day".into()));
        }
        if !(self.delay_sigma_unit >= 0.0) {
            return Err(DflError::Config("delay unit must be >= 0".into()));
        }
        Ok(())
    }

    pub fn train_days(&self) -> usize {
        self.n_days - 1
    }

    /// End of the training period in hours.
    pub fn snapshot_time(&self) -> f64 {
        self.train_days() as f64 * HOURS_PER_DAY
    }

    /// Generating score `x . alpha + alpha_camp`; the bias carries no weight.
    pub fn cvr_score(&self, x: &FeatureVector) -> f64 {
        x.active()
            .iter()
            .map(|&i| {
                let i = i as usize;
                if i < N_FEATURES {
                    self.cvr_weights[i]
                } else {
                    self.campaign_cvr[i - N_FEATURES]
                }
            })
            .sum()
    }

    /// Half-normal scale of the delay in hours; campaigns contribute nothing.
    pub fn delay_scale(&self, x: &FeatureVector) -> f64 {
        let s: f64 = x
            .active()
            .iter()
            .filter(|&&i| (i as usize) < N_FEATURES)
            .map(|&i| self.delay_weights[i as usize])
            .sum();
        s * self.delay_sigma_unit
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticLog {
    pub train: Vec<ClickEvent>,
    pub test: Vec<ClickEvent>,
    pub params: SyntheticParams,
    pub seed: u64,
}

pub fn generate_log(params: &SyntheticParams, seed: u64) -> Result<SyntheticLog> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(params.train_days() * params.samples_per_day);
    let mut test = Vec::with_capacity(params.samples_per_day);
    let mut active = Vec::with_capacity(N_FEATURES + 1);
    for day in 1..=params.n_days {
        let launched = day.min(N_CAMPAIGNS);
        let start = (day - 1) as f64 * HOURS_PER_DAY;
        for _ in 0..params.samples_per_day {
            let arrival = start + rng.random_range(0.0..HOURS_PER_DAY);
            let campaign = rng.random_range(0..launched);
            active.clear();
            for (k, &mu) in params.feature_means.iter().enumerate() {
                if rng.random_bool(mu) {
                    active.push(k as u32);
                }
            }
            active.push((N_FEATURES + campaign) as u32);
            let x = FeatureVector::from_sorted(
                active.iter().copied().chain([(DIMENSION - 1) as u32]).collect(),
                DIMENSION,
            )?;
            let converted = Label::from_bool(rng.random_bool(sigmoid(params.cvr_score(&x))));
            let delay = if converted.is_positive() {
                let z: f64 = rng.sample(StandardNormal);
                Some(z.abs() * params.delay_scale(&x))
            } else {
                None
            };
            let event = ClickEvent::new(x, arrival, converted, delay)?;
            if day < params.n_days {
                train.push(event);
            } else {
                test.push(event);
            }
        }
    }
    Ok(SyntheticLog {
        train,
        test,
        params: params.clone(),
        seed,
    })
}

/// Training views at the end of the training period plus the held-out day
/// (whose `converted` field is the true class).
#[derive(Clone, Debug)]
pub struct SyntheticSnapshot {
    pub snapshot: Snapshot,
    pub test: Vec<ClickEvent>,
}

pub fn make_snapshot(log: &SyntheticLog, tau: f64) -> Result<SyntheticSnapshot> {
    let cfg = SnapshotConfig::new(log.params.snapshot_time(), tau)?;
    Ok(SyntheticSnapshot {
        snapshot: Snapshot::build(&log.train, cfg)?,
        test: log.test.clone(),
    })
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
}

/// `key = value` record of everything needed to regenerate a log.
pub fn write_params<W: Write>(mut out: W, seed: u64, p: &SyntheticParams) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "eta = {}", p.eta);
    let _ = writeln!(s, "samples_per_day = {}", p.samples_per_day);
    let _ = writeln!(s, "n_days = {}", p.n_days);
    let _ = writeln!(s, "delay_sigma_unit = {}", p.delay_sigma_unit);
    let _ = writeln!(s, "feature_means = {}", join(&p.feature_means));
    let _ = writeln!(s, "cvr_weights = {}", join(&p.cvr_weights));
    let _ = writeln!(s, "delay_weights = {}", join(&p.delay_weights));
    let _ = writeln!(s, "campaign_cvr = {}", join(&p.campaign_cvr));
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_params<R: BufRead>(input: R) -> Result<(u64, SyntheticParams)> {
    let mut kv = BTreeMap::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DflError::parse(n + 1, "expected key = value"))?;
        kv.insert(k.trim().to_string(), (n + 1, v.trim().to_string()));
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| DflError::Config(format!("missing key {k}")));
    fn num<T: std::str::FromStr>(entry: &(usize, String)) -> Result<T> {
        entry
            .1
            .parse()
            .map_err(|_| DflError::parse(entry.0, format!("bad value {:?}", entry.1)))
    }
    let list = |k: &str| -> Result<Vec<f64>> {
        let entry = get(k)?;
        entry
            .1
            .split(',')
            .map(|x| x.trim().parse().map_err(|_| DflError::parse(entry.0, format!("bad number {x:?}"))))
            .collect()
    };
    let params = SyntheticParams {
        feature_means: list("feature_means")?,
        cvr_weights: list("cvr_weights")?,
        delay_weights: list("delay_weights")?,
        campaign_cvr: list("campaign_cvr")?,
        eta: num(get("eta")?)?,
        samples_per_day: num(get("samples_per_day")?)?,
        n_days: num(get("n_days")?)?,
        delay_sigma_unit: num(get("delay_sigma_unit")?)?,
    };
    params.validate()?;
    Ok((num(get("seed")?)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(eta: f64, per_day: usize) -> SyntheticParams {
        SyntheticParams {
            samples_per_day: per_day,
            ..generate_params(1, eta).unwrap()
        }
    }

    #[test]
    fn params_ranges_and_campaigns() {
        let p = generate_params(5, 1.0).unwrap();
        assert!(p.feature_means[..5].iter().all(|m| (0.1..0.3).contains(m)));
        assert!(p.feature_means[5..].iter().all(|m| (0.3..0.7).contains(m)));
        assert!(p.cvr_weights.iter().all(|a| (-0.5..0.5).contains(a)));
        assert!(p.delay_weights.iter().all(|b| (0.0..10.0).contains(b)));
        assert_eq!(p.campaign_cvr[6], 1.0);
        assert!(p.campaign_cvr.windows(2).all(|w| w[0] <= w[1]));
        assert!(generate_params(5, 0.0).unwrap().campaign_cvr.iter().all(|&c| c == 0.0));
        assert_eq!(generate_params(5, 2.0).unwrap(), generate_params(5, 2.0).unwrap());
        assert!(generate_params(5, -1.0).is_err());
    }

    #[test]
    fn log_shape() {
        let log = generate_log(&small(1.0, 200), 3).unwrap();
        assert_eq!(log.train.len(), 7 * 200);
        assert_eq!(log.test.len(), 200);
        for (i, e) in log.train.iter().chain(&log.test).enumerate() {
            let day = i / 200;
            assert!(e.arrival >= day as f64 * 24.0 && e.arrival < (day + 1) as f64 * 24.0);
            assert_eq!(e.features.dimension(), DIMENSION);
            let camps: Vec<_> = e.features.active().iter().filter(|&&k| k >= 20).collect();
            assert_eq!(camps.len(), 1);
            // campaign d launches on day d
            assert!((*camps[0] as usize - N_FEATURES) <= day.min(6));
        }
        assert_eq!(log, generate_log(&small(1.0, 200), 3).unwrap());
    }

    #[test]
    fn saturated_negative_weights() {
        let p = SyntheticParams {
            cvr_weights: vec![-50.0; N_FEATURES],
            feature_means: vec![0.99; N_FEATURES],
            ..small(0.0, 600)
        };
        let log = generate_log(&p, 1).unwrap();
        assert!(log.train.iter().chain(&log.test).all(|e| e.converted == Label::Negative));
    }

    #[test]
    fn zero_delay_weights_no_mislabels() {
        let p = SyntheticParams {
            delay_weights: vec![0.0; N_FEATURES],
            ..small(1.0, 300)
        };
        let s = make_snapshot(&generate_log(&p, 2).unwrap(), 24.0).unwrap();
        assert!(s.snapshot.oracle.iter().all(|r| r.snapshot_correct == Label::Positive));
        let truth_pos = s.snapshot.truth.iter().filter(|c| c.is_positive()).count();
        let temporal_pos = s.snapshot.biased.iter().filter(|r| r.temporal_label.is_positive()).count();
        assert_eq!(truth_pos, temporal_pos);
    }

    #[test]
    fn deadline_must_fit() {
        let log = generate_log(&small(0.0, 10), 1).unwrap();
        assert!(make_snapshot(&log, 168.0).is_err());
        assert!(make_snapshot(&log, 84.0).is_ok());
    }

    #[test]
    fn mislabeled_fraction_recount() {
        let log = generate_log(&small(1.0, 1000), 11).unwrap();
        let s = make_snapshot(&log, 24.0).unwrap();
        let shifted = 168.0 - 24.0;
        let expect = log
            .train
            .iter()
            .filter(|e| e.arrival <= shifted)
            .filter(|e| {
                let d = e.delay.unwrap_or(f64::INFINITY);
                e.converted.is_positive() && shifted - e.arrival < d && d <= 168.0 - e.arrival
            })
            .count();
        assert_eq!(s.snapshot.oracle.iter().filter(|r| r.is_mislabeled_positive()).count(), expect);
    }

    #[test]
    fn positive_rate_matches_expectation() {
        let p = generate_params(21, 1.0).unwrap();
        let log = generate_log(&p, 4).unwrap();
        let n = log.train.len() + log.test.len();
        let rate = log.train.iter().chain(&log.test).filter(|e| e.converted.is_positive()).count() as f64 / n as f64;
        // brute-force expectation of sigmoid(score) over fresh feature draws,
        // with the same day/campaign mix
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 100_000;
        let mut mean = 0.0;
        for _ in 0..draws {
            let day = rng.random_range(1..=8usize);
            let camp = rng.random_range(0..day.min(7));
            let mut s = p.campaign_cvr[camp];
            for k in 0..N_FEATURES {
                if rng.random_bool(p.feature_means[k]) {
                    s += p.cvr_weights[k];
                }
            }
            mean += sigmoid(s);
        }
        mean /= draws as f64;
        let se = (mean * (1.0 - mean) / n as f64).sqrt();
        // allow for Monte-Carlo error in the expectation as well
        assert!((rate - mean).abs() < 3.0 * se + 3.0 * (0.25 / draws as f64).sqrt(), "{rate} vs {mean}");
    }

    #[test]
    fn half_normal_delay_scale() {
        let k = 4;
        let mut means = vec![0.0; N_FEATURES];
        means[k] = 1.0;
        let p = SyntheticParams {
            feature_means: means,
            cvr_weights: vec![50.0; N_FEATURES],
            samples_per_day: 12_500,
            ..generate_params(8, 0.0).unwrap()
        };
        let log = generate_log(&p, 6).unwrap();
        let delays: Vec<f64> = log.train.iter().chain(&log.test).filter_map(|e| e.delay).collect();
        assert!(delays.len() >= 100_000);
        let n = delays.len() as f64;
        let m = delays.iter().sum::<f64>() / n;
        let sd = (delays.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sigma = p.delay_weights[k] * p.delay_sigma_unit;
        let expect = sigma * (1.0 - 2.0 / std::f64::consts::PI).sqrt();
        assert!((sd - expect).abs() / expect < 0.05, "{sd} vs {expect}");
    }

    #[test]
    fn params_file_round_trip() {
        let p = generate_params(17, 0.25).unwrap();
        let mut buf = Vec::new();
        write_params(&mut buf, 17, &p).unwrap();
        let (seed, q) = read_params(buf.as_slice()).unwrap();
        assert_eq!(seed, 17);
        assert_eq!(q, p);
        assert!(read_params("eta = 1\n".as_bytes()).is_err());
    }
}
