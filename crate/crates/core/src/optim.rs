//! Gradient-based training for every estimator.
//!
//! Each linear-model method is compiled into per-row coefficients `(a, b)` so
//! that the batch objective is `sum a*l(g) / n_group + sum b*l(-g) / n_group`.
//! The `a` terms form the positive risk part and the `b` terms the negative
//! part; the non-negative estimator clamps the latter. A shared descent loop
//! handles batching, L2 regularization `lambda/D * |theta|^2`, stopping and
//! divergence detection.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{BiasedExample, Label, OracleExample, Snapshot};
use crate::dfm;
use crate::error::{DflError, Result};
use crate::model::LinearModel;
use crate::risk;

/// Objective magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Regularization grid used for the Criteo experiment.
pub const CRITEO_LAMBDA_GRID: [f64; 4] = [0.1, 0.05, 0.01, 0.005];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Oracle,
    Bl,
    Tw,
    Putw,
    Pnutw,
    Fsiw,
    Dfm,
    ConvDf,
    NnDf,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Oracle,
        Method::Bl,
        Method::Tw,
        Method::Putw,
        Method::Pnutw,
        Method::Fsiw,
        Method::Dfm,
        Method::ConvDf,
        Method::NnDf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Bl => "bl",
            Method::Tw => "tw",
            Method::Putw => "putw",
            Method::Pnutw => "pnutw",
            Method::Fsiw => "fsiw",
            Method::Dfm => "dfm",
            Method::ConvDf => "convdf",
            Method::NnDf => "nndf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = DflError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DflError::Config(format!("unknown method {s:?}")))
    }
}

pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

/// Behaviour of the non-negative estimator once its negative part is below zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NnMode {
    /// Follow the gradient of the positive part only.
    Plain,
    /// Ascend on the negative part.
    Ascent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Rows(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub max_epochs: usize,
    /// Stop once the sup-norm of the regularized gradient falls below this.
    pub grad_tolerance: f64,
    pub batch_size: BatchSize,
    pub nn_mode: NnMode,
    pub seed: u64,
    /// Mixing weight of the PNU estimator.
    pub omega: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            l2_lambda: 0.0,
            max_epochs: 2000,
            grad_tolerance: 1e-6,
            batch_size: BatchSize::Full,
            nn_mode: NnMode::Plain,
            seed: 0,
            omega: 0.5,
        }
    }
}

impl TrainConfig {
    /// Mini-batch settings for high-dimensional hashed data.
    pub fn minibatch() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            batch_size: BatchSize::Rows(1024),
            ..TrainConfig::default()
        }
    }

    pub fn with_lambda(&self, l2_lambda: f64) -> Self {
        TrainConfig {
            l2_lambda,
            ..self.clone()
        }
    }

    fn validate(&self, reg_dim: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DflError::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(DflError::Config(format!("lambda {} must be >= 0", self.l2_lambda)));
        }
        if self.batch_size == BatchSize::Rows(0) {
            return Err(DflError::Config("batch size must be >= 1".into()));
        }
        if 1.0 - self.learning_rate * 2.0 * self.l2_lambda / reg_dim as f64 <= 0.0 {
            return Err(DflError::Config("learning rate times lambda too large".into()));
        }
        risk::check_omega(self.omega)
    }
}

/// Borrowed inputs available to the trainer. Which fields are required
/// depends on the method.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub biased: &'a [BiasedExample],
    pub oracle: &'a [OracleExample],
    /// For each oracle row, the biased row built from the same event.
    pub oracle_source: Option<&'a [usize]>,
    /// True class of each biased row (oracle baseline only).
    pub truth: Option<&'a [Label]>,
    /// Importance weight of each biased row (FSIW only).
    pub fsiw_weights: Option<&'a [f64]>,
}

impl<'a> TrainData<'a> {
    pub fn new(biased: &'a [BiasedExample], oracle: &'a [OracleExample]) -> Self {
        TrainData {
            biased,
            oracle,
            oracle_source: None,
            truth: None,
            fsiw_weights: None,
        }
    }

    pub fn from_snapshot(s: &'a Snapshot) -> Self {
        TrainData {
            biased: &s.biased,
            oracle: &s.oracle,
            oracle_source: Some(&s.oracle_source),
            truth: Some(&s.truth),
            fsiw_weights: None,
        }
    }

    pub fn with_weights(self, w: &'a [f64]) -> Self {
        TrainData {
            fsiw_weights: Some(w),
            ..self
        }
    }

    pub fn dimension(&self) -> Result<usize> {
        let dim = self
            .biased
            .first()
            .map(|r| r.features.dimension())
            .or_else(|| self.oracle.first().map(|r| r.features.dimension()))
            .ok_or(DflError::EmptyDataset("no rows to infer the feature dimension"))?;
        let bad = self
            .biased
            .iter()
            .map(|r| r.features.dimension())
            .chain(self.oracle.iter().map(|r| r.features.dimension()))
            .find(|&d| d != dim);
        match bad {
            Some(got) => Err(DflError::DimensionMismatch { expected: dim, got }),
            None => Ok(dim),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: LinearModel,
    /// Regularized objective at the start of each epoch.
    pub trace: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

// ---------------------------------------------------------------------------
// Parameter storage and gradient accumulation
// ---------------------------------------------------------------------------

const DENSE_LIMIT: usize = 4096;

/// Parameters stored as `scale * w` so the L2 shrinkage step costs O(1).
pub(crate) struct Params {
    w: Vec<f64>,
    scale: f64,
}

impl Params {
    fn new(init: Vec<f64>) -> Self {
        Params { w: init, scale: 1.0 }
    }

    pub(crate) fn scale(&self) -> f64 {
        self.scale
    }

    pub(crate) fn raw(&self) -> &[f64] {
        &self.w
    }

    fn sum_sq(&self) -> f64 {
        let s: f64 = self.w.iter().map(|w| w * w).sum();
        s * self.scale * self.scale
    }

    fn get(&self, i: usize) -> f64 {
        self.scale * self.w[i]
    }

    fn step(&mut self, grad: &GradBuffer, lr: f64, shrink: f64) {
        let new_scale = self.scale * (1.0 - lr * shrink);
        let k = lr / new_scale;
        grad.for_each(|i, g| self.w[i] -= k * g);
        self.scale = new_scale;
        if self.scale < 1e-8 {
            let s = self.scale;
            self.w.iter_mut().for_each(|w| *w *= s);
            self.scale = 1.0;
        }
    }

    fn into_vec(self) -> Vec<f64> {
        let s = self.scale;
        self.w.into_iter().map(|w| w * s).collect()
    }
}

pub(crate) struct GradBuffer {
    g: Vec<f64>,
    touched: Option<(Vec<u32>, Vec<bool>)>,
}

impl GradBuffer {
    fn new(len: usize) -> Self {
        GradBuffer {
            g: vec![0.0; len],
            touched: if len > DENSE_LIMIT {
                Some((Vec::new(), vec![false; len]))
            } else {
                None
            },
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, i: usize, v: f64) {
        self.g[i] += v;
        if let Some((list, mark)) = &mut self.touched {
            if !mark[i] {
                mark[i] = true;
                list.push(i as u32);
            }
        }
    }

    /// Adds `v` at `offset + i` for every `i` in `idx`.
    #[inline]
    pub(crate) fn add_row(&mut self, idx: &[u32], offset: usize, v: f64) {
        match &mut self.touched {
            None => {
                let g = &mut self.g[offset..];
                for &i in idx {
                    g[i as usize] += v;
                }
            }
            Some((list, mark)) => {
                for &i in idx {
                    let j = offset + i as usize;
                    self.g[j] += v;
                    if !mark[j] {
                        mark[j] = true;
                        list.push(j as u32);
                    }
                }
            }
        }
    }

    fn clear(&mut self) {
        match &mut self.touched {
            None => self.g.iter_mut().for_each(|g| *g = 0.0),
            Some((list, mark)) => {
                for &i in list.iter() {
                    self.g[i as usize] = 0.0;
                    mark[i as usize] = false;
                }
                list.clear();
            }
        }
    }

    fn for_each(&self, mut f: impl FnMut(usize, f64)) {
        match &self.touched {
            None => self.g.iter().enumerate().for_each(|(i, &g)| f(i, g)),
            Some((list, _)) => list.iter().for_each(|&i| f(i as usize, self.g[i as usize])),
        }
    }

    fn sup_norm_with_shrink(&self, params: &Params, shrink: f64) -> f64 {
        let mut m = 0.0f64;
        match &self.touched {
            None => {
                for (i, &g) in self.g.iter().enumerate() {
                    m = m.max((g + shrink * params.get(i)).abs());
                }
            }
            Some(_) => {
                // Untouched coordinates only carry the regularizer.
                if shrink > 0.0 {
                    for i in 0..self.g.len() {
                        m = m.max((self.g[i] + shrink * params.get(i)).abs());
                    }
                } else {
                    self.for_each(|_, g| m = m.max(g.abs()));
                }
            }
        }
        m
    }
}

/// Indices into the objective's biased (`d`) and oracle (`e`) rows.
pub(crate) struct Batch<'a> {
    pub d: &'a [u32],
    pub e: &'a [u32],
}

pub(crate) trait BatchLoss {
    fn param_len(&self) -> usize;
    /// Feature dimension `D` in the `1/D` regularizer normalization.
    fn reg_dim(&self) -> usize;
    fn n_d(&self) -> usize;
    fn n_e(&self) -> usize;
    /// Data term on `batch`; adds its gradient into `grad`.
    fn eval(&self, params: &Params, batch: &Batch<'_>, grad: &mut GradBuffer) -> f64;
}

pub(crate) struct Minimized {
    pub params: Vec<f64>,
    pub trace: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
}

fn check_objective(epoch: usize, objective: f64) -> Result<()> {
    if !objective.is_finite() || objective.abs() > DIVERGENCE_LIMIT {
        return Err(DflError::Diverged { epoch, objective });
    }
    Ok(())
}

fn identity(n: usize) -> Vec<u32> {
    (0..n as u32).collect()
}

pub(crate) fn minimize<L: BatchLoss>(loss: &L, init: Vec<f64>, cfg: &TrainConfig) -> Result<Minimized> {
    let reg_dim = loss.reg_dim();
    cfg.validate(reg_dim)?;
    if init.len() != loss.param_len() {
        return Err(DflError::DimensionMismatch {
            expected: loss.param_len(),
            got: init.len(),
        });
    }
    let shrink = 2.0 * cfg.l2_lambda / reg_dim as f64;
    let reg = |p: &Params| cfg.l2_lambda / reg_dim as f64 * p.sum_sq();
    let mut params = Params::new(init);
    let mut grad = GradBuffer::new(loss.param_len());
    let mut d_order = identity(loss.n_d());
    let mut e_order = identity(loss.n_e());
    let mut trace = Vec::new();
    let largest = loss.n_d().max(loss.n_e());
    let batches = match cfg.batch_size {
        BatchSize::Full => 1,
        BatchSize::Rows(b) => largest.div_ceil(b).max(1),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    for epoch in 0..cfg.max_epochs {
        if batches > 1 {
            d_order.shuffle(&mut rng);
            e_order.shuffle(&mut rng);
            for b in 0..batches {
                let d = &d_order[b * d_order.len() / batches..(b + 1) * d_order.len() / batches];
                let e = &e_order[b * e_order.len() / batches..(b + 1) * e_order.len() / batches];
                grad.clear();
                let v = loss.eval(&params, &Batch { d, e }, &mut grad);
                check_objective(epoch, v)?;
                params.step(&grad, cfg.learning_rate, shrink);
            }
        }
        // Full pass: objective for the trace, gradient for the stopping rule
        // (and for the update itself in full-batch mode).
        grad.clear();
        let (full_d, full_e) = (identity_cache(&d_order, batches), identity_cache(&e_order, batches));
        let full = Batch { d: &full_d, e: &full_e };
        let objective = loss.eval(&params, &full, &mut grad) + reg(&params);
        check_objective(epoch, objective)?;
        trace.push(objective);
        if grad.sup_norm_with_shrink(&params, shrink) < cfg.grad_tolerance {
            return Ok(Minimized {
                params: params.into_vec(),
                trace,
                epochs: epoch + 1,
                converged: true,
            });
        }
        if batches == 1 {
            params.step(&grad, cfg.learning_rate, shrink);
        }
    }
    if params.raw().iter().any(|w| !w.is_finite()) {
        return Err(DflError::Diverged {
            epoch: cfg.max_epochs,
            objective: f64::NAN,
        });
    }
    Ok(Minimized {
        params: params.into_vec(),
        trace,
        epochs: cfg.max_epochs,
        converged: false,
    })
}

/// Full-data evaluation order; row order only matters for the summation, so
/// the canonical order is restored to keep full-batch runs reproducible
/// regardless of batching.
fn identity_cache(order: &[u32], batches: usize) -> std::borrow::Cow<'_, [u32]> {
    if batches == 1 {
        std::borrow::Cow::Borrowed(order)
    } else {
        std::borrow::Cow::Owned(identity(order.len()))
    }
}

// ---------------------------------------------------------------------------
// Linear objectives
// ---------------------------------------------------------------------------

/// Rows of one dataset in CSR form with their loss coefficients.
#[derive(Default)]
pub(crate) struct Block {
    offsets: Vec<usize>,
    indices: Vec<u32>,
    extra: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Block {
    fn push(&mut self, idx: &[u32], extra: f64, a: f64, b: f64) {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        self.indices.extend_from_slice(idx);
        self.offsets.push(self.indices.len());
        self.extra.push(extra);
        self.a.push(a);
        self.b.push(b);
    }

    fn len(&self) -> usize {
        self.a.len()
    }

    #[inline]
    fn row(&self, r: usize) -> &[u32] {
        &self.indices[self.offsets[r]..self.offsets[r + 1]]
    }
}

pub(crate) struct LinearObjective {
    dim: usize,
    /// Coordinate multiplied by the real-valued extra input, if any.
    extra_index: Option<usize>,
    reg_dim: usize,
    d: Block,
    e: Block,
    clamp: Option<NnMode>,
}

/// `(l(g), l(-g), sigmoid(g))` from a single exponential.
#[inline]
fn loss_pair(g: f64) -> (f64, f64, f64) {
    let e = (-g.abs()).exp();
    let one_e = 1.0 + e;
    let l = one_e.ln();
    let inv = 1.0 / one_e;
    if g >= 0.0 {
        (l, l + g, inv)
    } else {
        (l - g, l, e * inv)
    }
}

/// Sum of `w` over `idx` with four independent accumulators.
#[inline]
pub(crate) fn gather(w: &[f64], idx: &[u32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = idx.chunks_exact(4);
    let rest = chunks.remainder();
    for c in chunks {
        acc[0] += w[c[0] as usize];
        acc[1] += w[c[1] as usize];
        acc[2] += w[c[2] as usize];
        acc[3] += w[c[3] as usize];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for &i in rest {
        s += w[i as usize];
    }
    s
}

impl LinearObjective {
    fn new(dim: usize) -> Self {
        LinearObjective {
            dim,
            extra_index: None,
            reg_dim: dim,
            d: Block::default(),
            e: Block::default(),
            clamp: None,
        }
    }

    /// Plain logistic regression on `(indices, extra, label)` rows, with the
    /// extra input at coordinate `dim - 1` when `with_extra`.
    pub(crate) fn logistic<'r>(
        rows: impl Iterator<Item = (&'r [u32], f64, Label)>,
        dim: usize,
        with_extra: bool,
    ) -> Self {
        let mut obj = LinearObjective::new(dim);
        if with_extra {
            obj.extra_index = Some(dim - 1);
        }
        for (idx, extra, y) in rows {
            match y {
                Label::Positive => obj.d.push(idx, extra, 1.0, 0.0),
                Label::Negative => obj.d.push(idx, extra, 0.0, 1.0),
            }
        }
        obj
    }

    pub(crate) fn compile(method: Method, data: &TrainData<'_>, omega: f64, nn_mode: NnMode) -> Result<Self> {
        let dim = data.dimension()?;
        let mut obj = LinearObjective::new(dim);
        let need_d = || {
            if data.biased.is_empty() {
                Err(DflError::EmptyDataset("biased dataset"))
            } else {
                Ok(())
            }
        };
        let need_e = || {
            if data.oracle.is_empty() {
                Err(DflError::EmptyDataset("oracle dataset"))
            } else {
                Ok(())
            }
        };
        let biased_terms = |obj: &mut LinearObjective, weights: Option<&[f64]>| {
            for (i, r) in data.biased.iter().enumerate() {
                let w = weights.map_or(1.0, |w| w[i]);
                match r.temporal_label {
                    Label::Positive => obj.d.push(r.features.indices(), 0.0, w, 0.0),
                    Label::Negative => obj.d.push(r.features.indices(), 0.0, 0.0, w),
                }
            }
        };
        match method {
            Method::Bl => {
                need_d()?;
                biased_terms(&mut obj, None);
            }
            Method::Fsiw => {
                need_d()?;
                let w = data
                    .fsiw_weights
                    .ok_or_else(|| DflError::InvalidWeights("fsiw requires importance weights".into()))?;
                risk::check_weights(w, data.biased.len())?;
                biased_terms(&mut obj, Some(w));
            }
            Method::Oracle => {
                need_d()?;
                let truth = data
                    .truth
                    .ok_or_else(|| DflError::Config("oracle requires true class labels".into()))?;
                if truth.len() != data.biased.len() {
                    return Err(DflError::LengthMismatch {
                        left: truth.len(),
                        right: data.biased.len(),
                    });
                }
                for (r, c) in data.biased.iter().zip(truth) {
                    match c {
                        Label::Positive => obj.d.push(r.features.indices(), 0.0, 1.0, 0.0),
                        Label::Negative => obj.d.push(r.features.indices(), 0.0, 0.0, 1.0),
                    }
                }
            }
            Method::Tw => {
                need_e()?;
                for r in data.oracle {
                    match r.class_label {
                        Label::Positive => obj.e.push(r.features.indices(), 0.0, 1.0, 0.0),
                        Label::Negative => obj.e.push(r.features.indices(), 0.0, 0.0, 1.0),
                    }
                }
            }
            Method::ConvDf | Method::NnDf => {
                need_d()?;
                need_e()?;
                biased_terms(&mut obj, None);
                for r in data.oracle {
                    let (a, b) = if r.is_mislabeled_positive() { (1.0, -1.0) } else { (0.0, 0.0) };
                    obj.e.push(r.features.indices(), 0.0, a, b);
                }
                if method == Method::NnDf {
                    obj.clamp = Some(nn_mode);
                }
            }
            Method::Putw | Method::Pnutw => {
                need_d()?;
                need_e()?;
                let w = if method == Method::Putw { 1.0 } else { omega };
                risk::check_omega(w)?;
                for r in data.biased {
                    obj.d.push(r.features.indices(), 0.0, 0.0, w);
                }
                for r in data.oracle {
                    let (a, b) = match r.class_label {
                        // w*(l(g) - l(-g)) + (1-w)*l(g)
                        Label::Positive => (1.0, -w),
                        Label::Negative => (0.0, 1.0 - w),
                    };
                    obj.e.push(r.features.indices(), 0.0, a, b);
                }
            }
            Method::Dfm => {
                return Err(DflError::Config("dfm is not a linear objective".into()));
            }
        }
        Ok(obj)
    }

    #[inline]
    fn score(&self, params: &Params, block: &Block, r: usize) -> f64 {
        let w = params.raw();
        let mut s = gather(w, block.row(r));
        if let Some(x) = self.extra_index {
            s += w[x] * block.extra[r];
        }
        params.scale() * s
    }

    #[inline]
    fn scatter(&self, grad: &mut GradBuffer, block: &Block, r: usize, c: f64) {
        grad.add_row(block.row(r), 0, c);
        if let Some(x) = self.extra_index {
            grad.add(x, c * block.extra[r]);
        }
    }
}

impl BatchLoss for LinearObjective {
    fn param_len(&self) -> usize {
        self.dim
    }

    fn reg_dim(&self) -> usize {
        self.reg_dim
    }

    fn n_d(&self) -> usize {
        self.d.len()
    }

    fn n_e(&self) -> usize {
        self.e.len()
    }

    fn eval(&self, params: &Params, batch: &Batch<'_>, grad: &mut GradBuffer) -> f64 {
        let groups = [(&self.d, batch.d), (&self.e, batch.e)];
        let inv = |idx: &[u32]| if idx.is_empty() { 0.0 } else { 1.0 / idx.len() as f64 };
        let Some(mode) = self.clamp else {
            // Unclamped: one pass, gradient scattered immediately.
            let mut value = 0.0;
            for (block, idx) in groups {
                let w = inv(idx);
                let mut v = 0.0;
                for &r in idx {
                    let r = r as usize;
                    let (a, b) = (block.a[r], block.b[r]);
                    if a == 0.0 && b == 0.0 {
                        continue;
                    }
                    let (lp, ln, sg) = loss_pair(self.score(params, block, r));
                    v += a * lp + b * ln;
                    self.scatter(grad, block, r, (b * sg - a * (1.0 - sg)) * w);
                }
                value += v * w;
            }
            return value;
        };
        // Clamped: the branch depends on the whole batch, so sigmoids are kept
        // for a second pass.
        let mut sig: [Vec<f64>; 2] = [vec![0.0; batch.d.len()], vec![0.0; batch.e.len()]];
        let (mut pos, mut neg) = (0.0, 0.0);
        for (k, (block, idx)) in groups.iter().enumerate() {
            let w = inv(idx);
            let (mut p, mut n) = (0.0, 0.0);
            for (j, &r) in idx.iter().enumerate() {
                let r = r as usize;
                let (a, b) = (block.a[r], block.b[r]);
                if a == 0.0 && b == 0.0 {
                    continue;
                }
                let (lp, ln, sg) = loss_pair(self.score(params, block, r));
                p += a * lp;
                n += b * ln;
                sig[k][j] = sg;
            }
            pos += p * w;
            neg += n * w;
        }
        let (value, ca, cb) = if neg < 0.0 {
            match mode {
                NnMode::Plain => (pos, 1.0, 0.0),
                NnMode::Ascent => (pos, 0.0, -1.0),
            }
        } else {
            (pos + neg, 1.0, 1.0)
        };
        for (k, (block, idx)) in groups.iter().enumerate() {
            let w = inv(idx);
            for (j, &r) in idx.iter().enumerate() {
                let r = r as usize;
                let sg = sig[k][j];
                let c = cb * block.b[r] * sg - ca * block.a[r] * (1.0 - sg);
                if c != 0.0 {
                    self.scatter(grad, block, r, c * w);
                }
            }
        }
        value
    }
}

/// Value and gradient of a compiled loss at `weights` over all rows.
pub(crate) fn value_and_gradient<L: BatchLoss>(loss: &L, weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    if weights.len() != loss.param_len() {
        return Err(DflError::DimensionMismatch {
            expected: loss.param_len(),
            got: weights.len(),
        });
    }
    let params = Params::new(weights.to_vec());
    let mut grad = GradBuffer::new(loss.param_len());
    let d = identity(loss.n_d());
    let e = identity(loss.n_e());
    let v = loss.eval(&params, &Batch { d: &d, e: &e }, &mut grad);
    Ok((v, grad.g))
}

// ---------------------------------------------------------------------------
// Public gradient API
// ---------------------------------------------------------------------------

/// `lambda`-free L2 penalty `(1/D) sum theta_d^2` and its gradient.
pub fn l2_penalty(model: &LinearModel) -> (f64, Vec<f64>) {
    let dim = model.dimension() as f64;
    let w = model.weights();
    let value = w.iter().map(|t| t * t).sum::<f64>() / dim;
    (value, w.iter().map(|t| 2.0 * t / dim).collect())
}

/// Unregularized risk and its gradient for any linear-objective method.
pub fn objective_gradient(
    method: Method,
    model: &LinearModel,
    data: &TrainData<'_>,
    omega: f64,
    nn_mode: NnMode,
) -> Result<(f64, Vec<f64>)> {
    let obj = LinearObjective::compile(method, data, omega, nn_mode)?;
    value_and_gradient(&obj, model.weights())
}

pub fn grad_convdf(model: &LinearModel, d: &[BiasedExample], e: &[OracleExample]) -> Result<Vec<f64>> {
    Ok(objective_gradient(Method::ConvDf, model, &TrainData::new(d, e), 0.5, NnMode::Plain)?.1)
}

pub fn grad_nndf(model: &LinearModel, d: &[BiasedExample], e: &[OracleExample], mode: NnMode) -> Result<Vec<f64>> {
    Ok(objective_gradient(Method::NnDf, model, &TrainData::new(d, e), 0.5, mode)?.1)
}

pub fn grad_fsiw(model: &LinearModel, d: &[BiasedExample], weights: &[f64]) -> Result<Vec<f64>> {
    let data = TrainData::new(d, &[]).with_weights(weights);
    Ok(objective_gradient(Method::Fsiw, model, &data, 0.5, NnMode::Plain)?.1)
}

// ---------------------------------------------------------------------------
// Training and model selection
// ---------------------------------------------------------------------------

pub fn train(method: Method, data: &TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if method == Method::Dfm {
        let fit = dfm::train_dfm(data.biased, cfg)?;
        return Ok(TrainOutcome {
            model: fit.model.cvr,
            trace: fit.trace,
            epochs: fit.epochs,
            converged: fit.converged,
        });
    }
    let obj = LinearObjective::compile(method, data, cfg.omega, cfg.nn_mode)?;
    let out = minimize(&obj, vec![0.0; obj.dim], cfg)?;
    Ok(TrainOutcome {
        model: LinearModel::from_weights(out.params)?,
        trace: out.trace,
        epochs: out.epochs,
        converged: out.converged,
    })
}

/// The risk a method is judged by on held-out data.
pub fn validation_risk(method: Method, model: &LinearModel, data: &TrainData<'_>, omega: f64) -> Result<f64> {
    match method {
        Method::Bl => risk::risk_bl(model, data.biased),
        Method::Tw => risk::risk_tw(model, data.oracle),
        Method::ConvDf | Method::NnDf => risk::risk_nndf(model, data.biased, data.oracle),
        Method::Putw => risk::risk_putw(model, data.biased, data.oracle),
        Method::Pnutw => risk::risk_pnutw(model, data.biased, data.oracle, omega),
        Method::Fsiw => {
            let w = data
                .fsiw_weights
                .ok_or_else(|| DflError::InvalidWeights("fsiw requires importance weights".into()))?;
            risk::risk_fsiw(model, data.biased, w)
        }
        Method::Oracle => {
            let truth = data
                .truth
                .ok_or_else(|| DflError::Config("oracle requires true class labels".into()))?;
            let obj = LinearObjective::logistic(
                data.biased.iter().zip(truth).map(|(r, &c)| (r.features.indices(), 0.0, c)),
                model.dimension(),
                false,
            );
            Ok(value_and_gradient(&obj, model.weights())?.0)
        }
        Method::Dfm => Err(DflError::Config("dfm validation needs the full two-part model".into())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// `(candidate, mean validation risk)`; diverged candidates score +inf.
    pub scores: Vec<(f64, f64)>,
}

/// `n` seeded log-uniform draws from `[lo, hi]`.
pub fn log_uniform_candidates(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|_| rng.random_range(a..=b).exp()).collect()
}

/// Owned copy of a fold's rows.
struct FoldData {
    biased: Vec<BiasedExample>,
    oracle: Vec<OracleExample>,
    truth: Option<Vec<Label>>,
    weights: Option<Vec<f64>>,
}

impl FoldData {
    fn view(&self) -> TrainData<'_> {
        TrainData {
            biased: &self.biased,
            oracle: &self.oracle,
            oracle_source: None,
            truth: self.truth.as_deref(),
            fsiw_weights: self.weights.as_deref(),
        }
    }
}

fn split_folds(data: &TrainData<'_>, folds: usize, seed: u64) -> Result<Vec<(FoldData, FoldData)>> {
    let n = data.biased.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut fold_d = vec![0usize; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold_d[i] = pos % folds;
    }
    let fold_e: Vec<usize> = match data.oracle_source {
        Some(src) => {
            if src.len() != data.oracle.len() {
                return Err(DflError::LengthMismatch {
                    left: src.len(),
                    right: data.oracle.len(),
                });
            }
            src.iter().map(|&i| fold_d[i]).collect()
        }
        None => {
            let mut perm: Vec<usize> = (0..data.oracle.len()).collect();
            perm.shuffle(&mut rng);
            let mut f = vec![0usize; perm.len()];
            for (pos, &j) in perm.iter().enumerate() {
                f[j] = pos % folds;
            }
            f
        }
    };
    let take = |f: usize, held_out: bool| FoldData {
        biased: data
            .biased
            .iter()
            .zip(&fold_d)
            .filter(|(_, &k)| (k == f) == held_out)
            .map(|(r, _)| r.clone())
            .collect(),
        oracle: data
            .oracle
            .iter()
            .zip(&fold_e)
            .filter(|(_, &k)| (k == f) == held_out)
            .map(|(r, _)| r.clone())
            .collect(),
        truth: data.truth.map(|t| {
            t.iter()
                .zip(&fold_d)
                .filter(|(_, &k)| (k == f) == held_out)
                .map(|(c, _)| *c)
                .collect()
        }),
        weights: data.fsiw_weights.map(|w| {
            w.iter()
                .zip(&fold_d)
                .filter(|(_, &k)| (k == f) == held_out)
                .map(|(c, _)| *c)
                .collect()
        }),
    };
    (0..folds)
        .map(|f| {
            let train = take(f, false);
            let valid = take(f, true);
            if train.biased.is_empty() || valid.biased.is_empty() {
                return Err(DflError::InsufficientRows(format!("fold {f} has no biased rows")));
            }
            if !data.oracle.is_empty() && (train.oracle.is_empty() || valid.oracle.is_empty()) {
                return Err(DflError::InsufficientRows(format!("fold {f} has no oracle rows")));
            }
            Ok((train, valid))
        })
        .collect()
}

/// Mean held-out risk of `method` at one `lambda` (+inf on divergence).
fn cv_score(method: Method, folds: &[(FoldData, FoldData)], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for (train_fold, valid_fold) in folds {
        let score = if method == Method::Dfm {
            match dfm::train_dfm(&train_fold.biased, cfg) {
                Ok(fit) => dfm::dfm_nll(&fit.model, &valid_fold.biased)?,
                Err(DflError::Diverged { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            }
        } else {
            match train(method, &train_fold.view(), cfg) {
                Ok(out) => validation_risk(method, &out.model, &valid_fold.view(), cfg.omega)?,
                Err(DflError::Diverged { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            }
        };
        if !score.is_finite() {
            return Ok(f64::INFINITY);
        }
        total += score;
    }
    Ok(total / folds.len() as f64)
}

/// k-fold cross-validation over `candidates`; ties go to the larger lambda.
pub fn select_lambda(
    method: Method,
    data: &TrainData<'_>,
    candidates: &[f64],
    folds: usize,
    cfg: &TrainConfig,
) -> Result<LambdaSelection> {
    match candidates {
        [] => return Err(DflError::Config("no lambda candidates".into())),
        [only] => {
            return Ok(LambdaSelection {
                lambda: *only,
                scores: vec![(*only, f64::NAN)],
            })
        }
        _ => {}
    }
    if folds < 2 {
        return Err(DflError::Config("cross-validation needs at least 2 folds".into()));
    }
    let split = split_folds(data, folds, cfg.seed)?;
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in candidates {
        let s = cv_score(method, &split, &cfg.with_lambda(lambda))?;
        scores.push((lambda, s));
        best = match best {
            None => Some((lambda, s)),
            Some((bl, bs)) if s < bs || (s == bs && lambda > bl) => Some((lambda, s)),
            keep => keep,
        };
    }
    let (lambda, _) = best.expect("at least two candidates");
    Ok(LambdaSelection { lambda, scores })
}
