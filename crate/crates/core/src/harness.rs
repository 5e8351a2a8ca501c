//! Experiment drivers: the synthetic drift sweep and the Criteo per-day run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::criteo;
use crate::data::{ClickEvent, Label, Snapshot};
use crate::error::{DflError, Result};
use crate::fsiw;
use crate::metrics;
use crate::model::LinearModel;
use crate::optim::{self, Method, TrainConfig, TrainData, CRITEO_LAMBDA_GRID};
use crate::synthetic;

/// Log-uniform range searched for the L2 strength on synthetic data.
pub const LAMBDA_RANGE: (f64, f64) = (1e-6, 1e-1);
/// L2 strength of the two FSIW weight models.
pub const FSIW_AUX_LAMBDA: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: Method,
    pub nll: f64,
    pub acc: f64,
    /// `None` when the test set has no positives.
    pub auc_pr: Option<f64>,
    /// Relative to the oracle fitted on the same rows.
    pub rll: Option<f64>,
}

/// Scores `model` on `test` against each row's full-log conversion flag.
pub fn evaluate(method: Method, model: &LinearModel, test: &[ClickEvent]) -> Result<EvalReport> {
    let mut probs = Vec::with_capacity(test.len());
    let mut scores = Vec::with_capacity(test.len());
    for e in test {
        let p = model.predict(&e.features)?;
        probs.push(p.probability);
        scores.push(p.score);
    }
    let labels: Vec<Label> = test.iter().map(|e| e.converted).collect();
    let auc_pr = match metrics::auc_pr(&scores, &labels) {
        Ok(v) => Some(v),
        Err(DflError::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        method,
        nll: metrics::nll(&probs, &labels)?,
        acc: metrics::acc(&probs, &labels)?,
        auc_pr,
        rll: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum CellStatus {
    Ok,
    Diverged,
}

impl CellStatus {
    pub fn name(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Diverged => "diverged",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaStrategy {
    Fixed(f64),
    /// Cross-validate `draws` log-uniform candidates inside every cell.
    PerCell { draws: usize, folds: usize },
    /// Cross-validate once per `(eta, method)` on an extra calibration draw
    /// that is never evaluated, then reuse the winner across trials.
    Calibrated { draws: usize, folds: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub base_seed: u64,
    pub train: TrainConfig,
    pub lambda: LambdaStrategy,
    pub samples_per_day: usize,
    pub delay_sigma_unit: f64,
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            base_seed: 0,
            train: TrainConfig::default(),
            lambda: LambdaStrategy::PerCell { draws: 20, folds: 2 },
            samples_per_day: synthetic::DEFAULT_SAMPLES_PER_DAY,
            delay_sigma_unit: 1.0,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub eta_index: usize,
    pub eta: f64,
    pub trial: usize,
    pub method: Method,
    pub status: CellStatus,
    /// Present iff `status` is `Ok`.
    pub report: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepAggregate {
    pub eta: f64,
    pub method: Method,
    /// Trials with a finite rll.
    pub trials: usize,
    pub diverged: usize,
    pub mean_rll: Option<f64>,
    /// Student-t 95% half-width; `None` with fewer than two trials.
    pub ci95_half_width: Option<f64>,
    pub mean_nll: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
    /// Calibrated lambdas keyed by `(eta index, method)`, if any.
    pub calibrated: Vec<(f64, Method, f64)>,
}

pub const SWEEP_HEADER: &str = "method,eta,trial,nll,acc,auc_pr,rll,status";

fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => "NA".to_string(),
    }
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            let rep = r.report.as_ref();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.method,
                r.eta,
                r.trial,
                num(rep.map(|x| x.nll)),
                num(rep.map(|x| x.acc)),
                num(rep.and_then(|x| x.auc_pr)),
                num(rep.and_then(|x| x.rll)),
                r.status.name()
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,eta,trials,diverged,mean_rll,ci95_half_width,mean_nll\n");
        for a in &self.aggregates {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                a.method,
                a.eta,
                a.trials,
                a.diverged,
                num(a.mean_rll),
                num(a.ci95_half_width),
                num(a.mean_nll)
            );
        }
        s
    }

    pub fn aggregate(&self, eta: f64, method: Method) -> Option<&SweepAggregate> {
        self.aggregates.iter().find(|a| a.eta == eta && a.method == method)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one `(eta, trial)` cell; `stream` separates its uses.
pub fn cell_seed(base: u64, eta_index: usize, trial: u64, stream: u64) -> u64 {
    splitmix(splitmix(splitmix(base) ^ eta_index as u64) ^ trial.wrapping_mul(0x1000_0000_01b3) ^ (stream << 56))
}

/// Calibration draws use a trial coordinate that no evaluated cell has.
const CALIBRATION_TRIAL: u64 = u64::MAX;

struct CellData {
    snapshot: Snapshot,
    test: Vec<ClickEvent>,
    tau: f64,
}

fn cell_data(eta: f64, eta_index: usize, trial: u64, tau: f64, cfg: &SweepConfig) -> Result<CellData> {
    let mut params = synthetic::generate_params(cell_seed(cfg.base_seed, eta_index, trial, 0), eta)?;
    params.samples_per_day = cfg.samples_per_day;
    params.delay_sigma_unit = cfg.delay_sigma_unit;
    let log = synthetic::generate_log(&params, cell_seed(cfg.base_seed, eta_index, trial, 1))?;
    let s = synthetic::make_snapshot(&log, tau)?;
    Ok(CellData {
        snapshot: s.snapshot,
        test: s.test,
        tau,
    })
}

/// FSIW weights for the biased rows; the weight models see the oracle rows.
fn fsiw_row_weights(snapshot: &Snapshot, tau: f64, base: &TrainConfig) -> Result<Vec<f64>> {
    let scale = (snapshot.config.snapshot_time() - tau).max(f64::MIN_POSITIVE);
    let w = fsiw::fit_weight_models(&snapshot.oracle, scale, &base.with_lambda(FSIW_AUX_LAMBDA))?;
    fsiw::weights_for(&snapshot.biased, &w)
}

/// Fits one method; `Ok(None)` reports divergence.
fn fit_method(
    method: Method,
    data: &TrainData<'_>,
    lambda: LambdaChoice,
    cfg: &TrainConfig,
) -> Result<Option<LinearModel>> {
    let lambda = match lambda {
        LambdaChoice::Value(l) => l,
        LambdaChoice::Search { candidates, folds } => optim::select_lambda(method, data, &candidates, folds, cfg)?.lambda,
    };
    match optim::train(method, data, &cfg.with_lambda(lambda)) {
        Ok(out) => Ok(Some(out.model)),
        Err(DflError::Diverged { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug)]
enum LambdaChoice {
    Value(f64),
    Search { candidates: Vec<f64>, folds: usize },
}

fn search(draws: usize, folds: usize, seed: u64) -> LambdaChoice {
    LambdaChoice::Search {
        candidates: optim::log_uniform_candidates(draws, LAMBDA_RANGE.0, LAMBDA_RANGE.1, seed),
        folds,
    }
}

fn run_cell(
    eta_index: usize,
    eta: f64,
    trial: usize,
    methods: &[Method],
    tau: f64,
    cfg: &SweepConfig,
    calibrated: &BTreeMap<(usize, Method), f64>,
) -> Result<Vec<SweepRow>> {
    let cell = cell_data(eta, eta_index, trial as u64, tau, cfg)?;
    let train_cfg = TrainConfig {
        seed: cell_seed(cfg.base_seed, eta_index, trial as u64, 2),
        ..cfg.train.clone()
    };
    let weights = if methods.contains(&Method::Fsiw) {
        Some(fsiw_row_weights(&cell.snapshot, cell.tau, &train_cfg)?)
    } else {
        None
    };
    let base = TrainData::from_snapshot(&cell.snapshot);
    let data = match &weights {
        Some(w) => base.with_weights(w),
        None => base,
    };
    let choice = |m: Method| match cfg.lambda {
        LambdaStrategy::Fixed(l) => LambdaChoice::Value(l),
        LambdaStrategy::PerCell { draws, folds } => search(draws, folds, train_cfg.seed ^ m as u64),
        LambdaStrategy::Calibrated { .. } => LambdaChoice::Value(calibrated[&(eta_index, m)]),
    };

    let mut fitted: Vec<(Method, Option<EvalReport>)> = Vec::new();
    let mut all = vec![Method::Oracle];
    all.extend(methods.iter().copied().filter(|&m| m != Method::Oracle));
    for &m in &all {
        let report = match fit_method(m, &data, choice(m), &train_cfg)? {
            Some(model) => Some(evaluate(m, &model, &cell.test)?),
            None => None,
        };
        fitted.push((m, report));
    }
    let oracle_nll = fitted[0].1.as_ref().map(|r| r.nll);
    Ok(fitted
        .into_iter()
        .filter(|(m, _)| methods.contains(m))
        .map(|(method, report)| {
            let report = report.map(|mut r| {
                r.rll = oracle_nll.and_then(|o| metrics::rll(r.nll, o).ok());
                r
            });
            SweepRow {
                eta_index,
                eta,
                trial,
                method,
                status: if report.is_some() { CellStatus::Ok } else { CellStatus::Diverged },
                report,
            }
        })
        .collect())
}

fn calibrate(
    etas: &[f64],
    methods: &[Method],
    tau: f64,
    draws: usize,
    folds: usize,
    cfg: &SweepConfig,
) -> Result<BTreeMap<(usize, Method), f64>> {
    let mut out = BTreeMap::new();
    let mut all = vec![Method::Oracle];
    all.extend(methods.iter().copied().filter(|&m| m != Method::Oracle));
    for (i, &eta) in etas.iter().enumerate() {
        let cell = cell_data(eta, i, CALIBRATION_TRIAL, tau, cfg)?;
        let train_cfg = TrainConfig {
            seed: cell_seed(cfg.base_seed, i, CALIBRATION_TRIAL, 2),
            ..cfg.train.clone()
        };
        let weights = if methods.contains(&Method::Fsiw) {
            Some(fsiw_row_weights(&cell.snapshot, tau, &train_cfg)?)
        } else {
            None
        };
        let base = TrainData::from_snapshot(&cell.snapshot);
        let data = match &weights {
            Some(w) => base.with_weights(w),
            None => base,
        };
        for &m in &all {
            let candidates = optim::log_uniform_candidates(draws, LAMBDA_RANGE.0, LAMBDA_RANGE.1, train_cfg.seed ^ m as u64);
            let sel = optim::select_lambda(m, &data, &candidates, folds, &train_cfg)?;
            out.insert((i, m), sel.lambda);
        }
    }
    Ok(out)
}

fn t_half_width(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?.inverse_cdf(0.975);
    Some(t * (var / n as f64).sqrt())
}

fn mean(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn aggregate(rows: &[SweepRow], etas: &[f64], methods: &[Method]) -> Vec<SweepAggregate> {
    let mut out = Vec::new();
    for (i, &eta) in etas.iter().enumerate() {
        for &m in methods {
            let cells: Vec<&SweepRow> = rows.iter().filter(|r| r.eta_index == i && r.method == m).collect();
            let rll: Vec<f64> = cells.iter().filter_map(|r| r.report.as_ref()?.rll).collect();
            let nll: Vec<f64> = cells.iter().filter_map(|r| r.report.as_ref().map(|x| x.nll)).collect();
            out.push(SweepAggregate {
                eta,
                method: m,
                trials: rll.len(),
                diverged: cells.iter().filter(|r| r.status == CellStatus::Diverged).count(),
                mean_rll: mean(&rll),
                ci95_half_width: t_half_width(&rll),
                mean_nll: mean(&nll),
            });
        }
    }
    out
}

fn dedup_methods(methods: &[Method]) -> Vec<Method> {
    let mut m = methods.to_vec();
    m.sort();
    m.dedup();
    m
}

/// Every `(eta, trial)` cell generates its own log from seeds derived from
/// `config.base_seed` and the cell coordinates, so the output does not depend
/// on scheduling.
pub fn run_synthetic_sweep(
    etas: &[f64],
    trials: usize,
    methods: &[Method],
    tau: f64,
    config: &SweepConfig,
) -> Result<SweepResult> {
    if trials == 0 {
        return Err(DflError::Config("trials must be >= 1".into()));
    }
    if etas.is_empty() || methods.is_empty() {
        return Err(DflError::Config("need at least one eta and one method".into()));
    }
    if let Some(e) = etas.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(DflError::Config(format!("eta {e} must be >= 0")));
    }
    let methods = dedup_methods(methods);
    let calibrated = match config.lambda {
        LambdaStrategy::Calibrated { draws, folds } => calibrate(etas, &methods, tau, draws, folds, config)?,
        _ => BTreeMap::new(),
    };
    let cells: Vec<(usize, usize)> = (0..etas.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    let job = |&(i, t): &(usize, usize)| run_cell(i, etas[i], t, &methods, tau, config, &calibrated);
    let results: Vec<Result<Vec<SweepRow>>> = if config.parallel {
        cells.par_iter().map(job).collect()
    } else {
        cells.iter().map(job).collect()
    };
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| (a.eta_index, a.trial, a.method).cmp(&(b.eta_index, b.trial, b.method)));
    let aggregates = aggregate(&rows, etas, &methods);
    Ok(SweepResult {
        rows,
        aggregates,
        calibrated: calibrated.into_iter().map(|((i, m), l)| (etas[i], m, l)).collect(),
    })
}

// ---------------------------------------------------------------------------
// Criteo
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct CriteoConfig {
    pub train: TrainConfig,
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    /// Keep only the most recent `n` training clicks, for smoke runs.
    pub max_train_rows: Option<usize>,
}

impl Default for CriteoConfig {
    fn default() -> Self {
        CriteoConfig {
            train: TrainConfig {
                max_epochs: 5,
                ..TrainConfig::minibatch()
            },
            lambda_grid: CRITEO_LAMBDA_GRID.to_vec(),
            folds: 2,
            max_train_rows: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriteoRow {
    /// `None` for the average over days.
    pub test_day: Option<i64>,
    pub method: Method,
    pub status: CellStatus,
    pub report: Option<EvalReport>,
}

pub const CRITEO_HEADER: &str = "method,test_day,tau_hours,nll,acc,auc_pr,status";

/// Trains each method on the 21 days before `test_day` (labelled at the day
/// boundary) and scores it on the test day.
pub fn run_criteo_experiment(
    events: &[ClickEvent],
    test_day: i64,
    methods: &[Method],
    tau: f64,
    config: &CriteoConfig,
) -> Result<Vec<CriteoRow>> {
    if methods.is_empty() {
        return Err(DflError::Config("need at least one method".into()));
    }
    let (snapshot, test) = criteo::day_snapshot(events, test_day, tau, config.max_train_rows)?;
    let methods = dedup_methods(methods);
    let weights = if methods.contains(&Method::Fsiw) {
        Some(fsiw_row_weights(&snapshot, tau, &config.train)?)
    } else {
        None
    };
    let base = TrainData::from_snapshot(&snapshot);
    let data = match &weights {
        Some(w) => base.with_weights(w),
        None => base,
    };
    let mut rows = Vec::new();
    for &m in &methods {
        let choice = LambdaChoice::Search {
            candidates: config.lambda_grid.clone(),
            folds: config.folds,
        };
        let report = match fit_method(m, &data, choice, &config.train)? {
            Some(model) => Some(evaluate(m, &model, &test)?),
            None => None,
        };
        rows.push(CriteoRow {
            test_day: Some(test_day),
            method: m,
            status: if report.is_some() { CellStatus::Ok } else { CellStatus::Diverged },
            report,
        });
    }
    Ok(rows)
}

/// Per-method mean over the days where the method did not diverge.
pub fn average_rows(rows: &[CriteoRow]) -> Vec<CriteoRow> {
    let methods = dedup_methods(&rows.iter().map(|r| r.method).collect::<Vec<_>>());
    methods
        .into_iter()
        .map(|m| {
            let ok: Vec<&EvalReport> = rows
                .iter()
                .filter(|r| r.method == m && r.test_day.is_some())
                .filter_map(|r| r.report.as_ref())
                .collect();
            let report = if ok.is_empty() {
                None
            } else {
                let auc: Vec<f64> = ok.iter().filter_map(|r| r.auc_pr).collect();
                Some(EvalReport {
                    method: m,
                    nll: mean(&ok.iter().map(|r| r.nll).collect::<Vec<_>>()).expect("non-empty"),
                    acc: mean(&ok.iter().map(|r| r.acc).collect::<Vec<_>>()).expect("non-empty"),
                    auc_pr: mean(&auc),
                    rll: None,
                })
            };
            CriteoRow {
                test_day: None,
                method: m,
                status: if report.is_some() { CellStatus::Ok } else { CellStatus::Diverged },
                report,
            }
        })
        .collect()
}

pub fn criteo_csv(rows: &[CriteoRow], tau: f64) -> String {
    let mut s = format!("{CRITEO_HEADER}\n");
    for r in rows {
        let rep = r.report.as_ref();
        let day = r.test_day.map(|d| d.to_string()).unwrap_or_else(|| "average".into());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method,
            day,
            tau,
            num(rep.map(|x| x.nll)),
            num(rep.map(|x| x.acc)),
            num(rep.and_then(|x| x.auc_pr)),
            r.status.name()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SweepConfig {
        SweepConfig {
            train: TrainConfig {
                max_epochs: 60,
                ..TrainConfig::default()
            },
            lambda: LambdaStrategy::Fixed(1e-3),
            samples_per_day: 150,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn oracle_only_sweep_has_zero_rll() {
        let r = run_synthetic_sweep(&[0.0, 2.0], 2, &[Method::Oracle], 24.0, &tiny()).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows.iter().all(|row| row.report.as_ref().unwrap().rll == Some(0.0)));
        assert!(r.aggregates.iter().all(|a| a.mean_rll == Some(0.0)));
    }

    #[test]
    fn single_trial_has_no_interval() {
        let r = run_synthetic_sweep(&[1.0], 1, &[Method::Bl, Method::Tw], 24.0, &tiny()).unwrap();
        assert!(r.aggregates.iter().all(|a| a.trials == 1 && a.ci95_half_width.is_none()));
        assert!(r.summary_csv().lines().nth(1).unwrap().contains(",NA,"));
    }

    #[test]
    fn csv_is_sorted_and_independent_of_scheduling() {
        let methods = [Method::NnDf, Method::Bl, Method::Oracle];
        let a = run_synthetic_sweep(&[0.5, 0.0], 2, &methods, 24.0, &tiny()).unwrap();
        let b = run_synthetic_sweep(&[0.5, 0.0], 2, &methods, 24.0, &SweepConfig { parallel: true, ..tiny() }).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let csv = a.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(SWEEP_HEADER));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[..3], ["oracle", "0.5", "0"]);
        assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
    }

    #[test]
    fn divergence_is_a_status_not_an_error() {
        let cfg = SweepConfig {
            train: TrainConfig {
                learning_rate: 1e12,
                max_epochs: 50,
                ..TrainConfig::default()
            },
            lambda: LambdaStrategy::Fixed(0.0),
            ..tiny()
        };
        let r = run_synthetic_sweep(&[4.0], 1, &[Method::ConvDf], 24.0, &cfg).unwrap();
        assert_eq!(r.rows[0].status, CellStatus::Diverged);
        assert!(r.to_csv().lines().nth(1).unwrap().ends_with("NA,NA,NA,NA,diverged"));
    }

    #[test]
    fn t_interval_matches_table_value() {
        // t_{0.975, 4} = 2.776445
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        let hw = t_half_width(&v).unwrap();
        assert!((hw - 2.776_445_105_2 * (2.5f64 / 5.0).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn cell_seeds_differ_by_coordinate() {
        let s = cell_seed(7, 0, 0, 0);
        assert_ne!(s, cell_seed(7, 1, 0, 0));
        assert_ne!(s, cell_seed(7, 0, 1, 0));
        assert_ne!(s, cell_seed(7, 0, 0, 1));
        assert_ne!(s, cell_seed(8, 0, 0, 0));
    }

    #[test]
    fn bad_sweep_configs() {
        assert!(run_synthetic_sweep(&[0.0], 0, &[Method::Bl], 24.0, &tiny()).is_err());
        assert!(run_synthetic_sweep(&[-1.0], 1, &[Method::Bl], 24.0, &tiny()).is_err());
        assert!(run_synthetic_sweep(&[], 1, &[Method::Bl], 24.0, &tiny()).is_err());
        assert!(run_synthetic_sweep(&[0.0], 1, &[Method::Bl], 100.0, &tiny()).is_err());
    }

    #[test]
    fn average_rows_skip_diverged_days() {
        let rep = |nll| EvalReport {
            method: Method::Bl,
            nll,
            acc: 0.5,
            auc_pr: Some(0.2),
            rll: None,
        };
        let rows = vec![
            CriteoRow { test_day: Some(1), method: Method::Bl, status: CellStatus::Ok, report: Some(rep(0.2)) },
            CriteoRow { test_day: Some(2), method: Method::Bl, status: CellStatus::Ok, report: Some(rep(0.4)) },
            CriteoRow { test_day: Some(3), method: Method::Bl, status: CellStatus::Diverged, report: None },
        ];
        let avg = average_rows(&rows);
        assert_eq!(avg.len(), 1);
        assert!((avg[0].report.as_ref().unwrap().nll - 0.3).abs() < 1e-15);
        assert!(criteo_csv(&avg, 168.0).contains("bl,average,168,"));
    }
}
