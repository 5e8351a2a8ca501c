//! Domain types for delayed-feedback logs and the two training views built
//! from a log at a snapshot: the biased dataset (current temporal labels for
//! every arrival) and the oracle dataset (samples old enough that their label
//! is final, annotated with whether the label was already correct `deadline`
//! hours earlier).

use crate::error::{DflError, Result};

/// Binary class / temporal label in {-1, +1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    /// Classification rule with the tie `sign(0) = +1`.
    pub fn from_score(score: f64) -> Label {
        if score >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn from_bool(positive: bool) -> Label {
        if positive {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

/// Sparse binary feature vector. The last coordinate (`dimension - 1`) is the
/// bias and is always active.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    indices: Vec<u32>,
    dimension: usize,
}

impl FeatureVector {
    /// Builds a vector from arbitrary active (non-bias) indices; sorts,
    /// deduplicates and appends the bias.
    pub fn new(mut active: Vec<u32>, dimension: usize) -> Result<Self> {
        if dimension == 0 || dimension > u32::MAX as usize {
            return Err(DflError::InvalidFeatures(format!(
                "dimension {dimension} out of range"
            )));
        }
        let bias = (dimension - 1) as u32;
        active.sort_unstable();
        active.dedup();
        if let Some(&bad) = active.iter().find(|&&i| i >= bias) {
            return Err(DflError::InvalidFeatures(format!(
                "index {bad} collides with or exceeds the bias index {bias}"
            )));
        }
        active.push(bias);
        Ok(FeatureVector {
            indices: active,
            dimension,
        })
    }

    /// Validates an already-complete index list (bias included).
    pub fn from_sorted(indices: Vec<u32>, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(DflError::InvalidFeatures("zero dimension".into()));
        }
        let bias = (dimension - 1) as u32;
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DflError::InvalidFeatures(
                "indices must be strictly increasing".into(),
            ));
        }
        if indices.last() != Some(&bias) {
            return Err(DflError::InvalidFeatures(format!(
                "bias index {bias} must be present as the largest index"
            )));
        }
        Ok(FeatureVector { indices, dimension })
    }

    pub fn bias_only(dimension: usize) -> Result<Self> {
        Self::new(Vec::new(), dimension)
    }

    /// All active indices, bias last.
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    /// Active indices excluding the bias.
    pub fn active(&self) -> &[u32] {
        &self.indices[..self.indices.len() - 1]
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bias_index(&self) -> u32 {
        (self.dimension - 1) as u32
    }

    pub fn contains(&self, index: u32) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dimension];
        for &i in &self.indices {
            dense[i as usize] = 1.0;
        }
        dense
    }
}

/// A logged click. `delay` is the time from arrival to conversion and is
/// present exactly when the sample ever converts.
#[derive(Clone, Debug, PartialEq)]
pub struct ClickEvent {
    pub features: FeatureVector,
    pub arrival: f64,
    pub converted: Label,
    pub delay: Option<f64>,
}

impl ClickEvent {
    pub fn new(
        features: FeatureVector,
        arrival: f64,
        converted: Label,
        delay: Option<f64>,
    ) -> Result<Self> {
        if !arrival.is_finite() {
            return Err(DflError::InvalidEvent(format!("arrival {arrival}")));
        }
        match (converted, delay) {
            (Label::Positive, Some(d)) if d >= 0.0 && d.is_finite() => {}
            (Label::Negative, None) => {}
            (c, d) => {
                return Err(DflError::InvalidEvent(format!(
                    "converted {c:?} with delay {d:?}"
                )))
            }
        }
        Ok(ClickEvent {
            features,
            arrival,
            converted,
            delay,
        })
    }
}

/// Training snapshot time `T` and label deadline `tau`, both in hours.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnapshotConfig {
    snapshot_time: f64,
    deadline: f64,
}

impl SnapshotConfig {
    pub fn new(snapshot_time: f64, deadline: f64) -> Result<Self> {
        if !(deadline > 0.0 && deadline.is_finite() && deadline <= snapshot_time / 2.0) {
            return Err(DflError::InvalidSnapshot {
                snapshot: snapshot_time,
                deadline,
            });
        }
        Ok(SnapshotConfig {
            snapshot_time,
            deadline,
        })
    }

    pub fn snapshot_time(&self) -> f64 {
        self.snapshot_time
    }

    pub fn deadline(&self) -> f64 {
        self.deadline
    }

    /// `T - tau`: the snapshot at which oracle rows are re-labelled.
    pub fn shifted_time(&self) -> f64 {
        self.snapshot_time - self.deadline
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasedExample {
    pub features: FeatureVector,
    pub temporal_label: Label,
    pub elapsed: f64,
    pub observed_delay: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleExample {
    pub features: FeatureVector,
    pub class_label: Label,
    /// `Negative` when the label observed at the shifted snapshot disagreed
    /// with `class_label` (a late converter).
    pub snapshot_correct: Label,
    pub elapsed_at_shifted_snapshot: f64,
}

impl OracleExample {
    /// Positive class that still looked negative at the shifted snapshot.
    pub fn is_mislabeled_positive(&self) -> bool {
        self.class_label == Label::Positive && self.snapshot_correct == Label::Negative
    }

    /// Temporal label at the shifted snapshot.
    pub fn shifted_label(&self) -> Label {
        if self.is_mislabeled_positive() {
            Label::Negative
        } else {
            self.class_label
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassPriors {
    pub gamma: f64,
    pub pi: f64,
    pub zeta: f64,
}

/// Label of `event` observed `elapsed` hours after its arrival.
pub fn temporal_label(event: &ClickEvent, elapsed: f64) -> Label {
    match (event.converted, event.delay) {
        (Label::Positive, Some(d)) if d <= elapsed => Label::Positive,
        _ => Label::Negative,
    }
}

fn check_arrival(event: &ClickEvent, cfg: &SnapshotConfig) -> Result<()> {
    if event.arrival > cfg.snapshot_time {
        return Err(DflError::FutureEvent {
            arrival: event.arrival,
            snapshot: cfg.snapshot_time,
        });
    }
    Ok(())
}

fn biased_row(event: &ClickEvent, snapshot: f64) -> BiasedExample {
    let elapsed = snapshot - event.arrival;
    let temporal = temporal_label(event, elapsed);
    BiasedExample {
        features: event.features.clone(),
        temporal_label: temporal,
        elapsed,
        observed_delay: if temporal.is_positive() {
            event.delay
        } else {
            None
        },
    }
}

fn oracle_row(event: &ClickEvent, cfg: &SnapshotConfig) -> OracleExample {
    let class_label = temporal_label(event, cfg.snapshot_time - event.arrival);
    let shifted_elapsed = cfg.shifted_time() - event.arrival;
    let shifted = temporal_label(event, shifted_elapsed);
    OracleExample {
        features: event.features.clone(),
        class_label,
        snapshot_correct: Label::from_bool(shifted == class_label),
        elapsed_at_shifted_snapshot: shifted_elapsed,
    }
}

pub fn build_biased_dataset(log: &[ClickEvent], cfg: &SnapshotConfig) -> Result<Vec<BiasedExample>> {
    log.iter()
        .map(|e| {
            check_arrival(e, cfg)?;
            Ok(biased_row(e, cfg.snapshot_time))
        })
        .collect()
}

pub fn build_oracle_dataset(log: &[ClickEvent], cfg: &SnapshotConfig) -> Result<Vec<OracleExample>> {
    let mut out = Vec::new();
    for e in log {
        check_arrival(e, cfg)?;
        if e.arrival <= cfg.shifted_time() {
            out.push(oracle_row(e, cfg));
        }
    }
    Ok(out)
}

pub fn estimate_priors(biased: &[BiasedExample], oracle: &[OracleExample]) -> Result<ClassPriors> {
    if biased.is_empty() {
        return Err(DflError::EmptyDataset("biased dataset (prior pi undefined)"));
    }
    if oracle.is_empty() {
        return Err(DflError::EmptyDataset("oracle dataset (priors gamma, zeta undefined)"));
    }
    let n = biased.len() as f64;
    let m = oracle.len() as f64;
    let pi = biased.iter().filter(|r| r.temporal_label.is_positive()).count() as f64 / n;
    let gamma = oracle.iter().filter(|r| r.class_label.is_positive()).count() as f64 / m;
    let zeta = oracle.iter().filter(|r| r.is_mislabeled_positive()).count() as f64 / m;
    Ok(ClassPriors { gamma, pi, zeta })
}

/// Both training views of one log at one snapshot, plus bookkeeping that the
/// trainer needs: the ground-truth class of every biased row (known for
/// synthetic logs; the full-log conversion flag otherwise) and, for every
/// oracle row, the index of the biased row built from the same event.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub config: SnapshotConfig,
    pub biased: Vec<BiasedExample>,
    pub oracle: Vec<OracleExample>,
    pub oracle_source: Vec<usize>,
    pub truth: Vec<Label>,
}

impl Snapshot {
    pub fn build(log: &[ClickEvent], cfg: SnapshotConfig) -> Result<Self> {
        let biased = build_biased_dataset(log, &cfg)?;
        let mut oracle = Vec::new();
        let mut oracle_source = Vec::new();
        for (i, e) in log.iter().enumerate() {
            if e.arrival <= cfg.shifted_time() {
                oracle.push(oracle_row(e, &cfg));
                oracle_source.push(i);
            }
        }
        Ok(Snapshot {
            config: cfg,
            biased,
            oracle,
            oracle_source,
            truth: log.iter().map(|e| e.converted).collect(),
        })
    }

    pub fn dimension(&self) -> Option<usize> {
        self.biased.first().map(|r| r.features.dimension())
    }

    pub fn priors(&self) -> Result<ClassPriors> {
        estimate_priors(&self.biased, &self.oracle)
    }
}
