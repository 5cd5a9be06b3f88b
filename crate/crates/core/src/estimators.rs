//! Streaming estimators of `A*`.
//!
//! * `sgd_rer`: SGD over each buffer's transitions newest-first, skipping the
//!   gap samples, with a norm guard and tail averaging of end-of-buffer iterates.
//! * `sgd_er`: the same buffers replayed in a random order.
//! * `sgd`: plain forward SGD over every transition.
//! * `ols`: online least squares via Sherman-Morrison updates of the inverse
//!   covariance.
//! * `sparse_rer`: `sgd_rer` with each row's update restricted to a known support.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ErrorCurve, ErrorRecord, Evaluator};
use crate::model::{HyperParams, SampleSource};
use crate::numerics::{dot, spd_inverse, Matrix, Vector};
use crate::replay::{schedule, BufferReader, BufferView, OrderPolicy, TransitionSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    SgdRer,
    Sgd,
    SgdEr,
    Ols,
    SparseRer,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::SgdRer,
        EstimatorKind::Sgd,
        EstimatorKind::SgdEr,
        EstimatorKind::Ols,
        EstimatorKind::SparseRer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::SgdRer => "sgd_rer",
            EstimatorKind::Sgd => "sgd",
            EstimatorKind::SgdEr => "sgd_er",
            EstimatorKind::Ols => "ols",
            EstimatorKind::SparseRer => "sparse_rer",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown estimator '{s}' (expected one of sgd_rer, sgd, sgd_er, ols, sparse_rer)"
                ))
            })
    }
}

/// What happens when a buffered sample violates `||X||^2 <= R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardMode {
    /// Output the zero matrix from that buffer on, but keep consuming the
    /// stream so that curves stay aligned.
    #[default]
    ZeroOutput,
    /// Stop the run with an error.
    Abort,
}

/// Estimate reported at a buffer boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub estimate: Matrix,
    /// True while still inside the burn-in window (the estimate is then the
    /// last iterate rather than a tail average).
    pub burn_in: bool,
}

/// Running tail average `A_{a,t} = (1/(t-a)) sum_{tau=a+1..t} A^{tau-1}_B`.
#[derive(Debug, Clone)]
pub struct TailAverage {
    sum: Matrix,
    last: Matrix,
    burn_in: usize,
    buffers_done: usize,
}

impl TailAverage {
    pub fn new(dim: usize, burn_in: usize, start: &Matrix) -> Self {
        TailAverage {
            sum: Matrix::zeros(dim, dim),
            last: start.clone(),
            burn_in,
            buffers_done: 0,
        }
    }

    /// Records the iterate at the end of buffer `t = buffers_done + 1`.
    pub fn record(&mut self, end_iterate: &Matrix) {
        self.buffers_done += 1;
        if self.buffers_done > self.burn_in {
            self.sum
                .add_scaled_in_place(1.0, end_iterate)
                .expect("tail average dimension is fixed at construction");
        }
        self.last.clone_from(end_iterate);
    }

    pub fn buffers_done(&self) -> usize {
        self.buffers_done
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn snapshot(&self) -> Snapshot {
        if self.buffers_done <= self.burn_in {
            Snapshot {
                estimate: self.last.clone(),
                burn_in: true,
            }
        } else {
            Snapshot {
                estimate: self
                    .sum
                    .scale(1.0 / (self.buffers_done - self.burn_in) as f64),
                burn_in: false,
            }
        }
    }
}

fn check_pair(a: &Matrix, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != a.cols() || y.len() != a.rows() {
        return Err(Error::Dimension(format!(
            "transition ({}, {}) does not fit a {}x{} estimate",
            x.len(),
            y.len(),
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

/// `A <- A - 2 gamma (A x - y) x^T`.
#[inline]
fn rank_one_step(a: &mut Matrix, x: &[f64], y: &[f64], gamma: f64) {
    for (i, &yi) in y.iter().enumerate() {
        let row = a.row_mut(i);
        let coeff = 2.0 * gamma * (dot(row, x) - yi);
        if coeff != 0.0 {
            for (aij, &xj) in row.iter_mut().zip(x) {
                *aij -= coeff * xj;
            }
        }
    }
}

/// Same update with row `i` restricted to the columns in `support[i]`.
#[inline]
fn masked_rank_one_step(
    a: &mut Matrix,
    x: &[f64],
    y: &[f64],
    gamma: f64,
    support: &SupportPattern,
) {
    for (i, &yi) in y.iter().enumerate() {
        let row = a.row_mut(i);
        let coeff = 2.0 * gamma * (dot(row, x) - yi);
        if coeff != 0.0 {
            for &j in &support.rows[i] {
                row[j] -= coeff * x[j];
            }
        }
    }
}

/// One SGD step `A_{k+1} = A_k - 2 gamma (A_k x - y) x^T`.
pub fn sgd_step(a: &mut Matrix, x: &[f64], y: &[f64], gamma: f64) -> Result<()> {
    check_pair(a, x, y)?;
    rank_one_step(a, x, y, gamma);
    Ok(())
}

/// State of SGD with buffered experience replay (reverse or random order).
#[derive(Debug, Clone)]
pub struct RerState {
    current: Matrix,
    tail: TailAverage,
    poisoned: bool,
    guard: GuardMode,
}

impl RerState {
    pub fn new(init: Matrix, burn_in: usize) -> Self {
        let tail = TailAverage::new(init.rows(), burn_in, &init);
        RerState {
            current: init,
            tail,
            poisoned: false,
            guard: GuardMode::default(),
        }
    }

    pub fn zeros(dim: usize, burn_in: usize) -> Self {
        Self::new(Matrix::zeros(dim, dim), burn_in)
    }

    pub fn with_guard(mut self, guard: GuardMode) -> Self {
        self.guard = guard;
        self
    }

    /// The running iterate `A^t_i`.
    pub fn current(&self) -> &Matrix {
        &self.current
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    pub fn buffers_done(&self) -> usize {
        self.tail.buffers_done()
    }

    /// Zero once poisoned; the last iterate during burn-in; otherwise the
    /// tail average.
    pub fn snapshot(&self) -> Snapshot {
        if self.poisoned {
            return Snapshot {
                estimate: Matrix::zeros(self.current.rows(), self.current.cols()),
                burn_in: false,
            };
        }
        self.tail.snapshot()
    }

    /// Checks the guard on the buffer's own samples; returns false if the
    /// buffer must be skipped.
    fn guard_passes(&mut self, buf: &BufferView, hp: &HyperParams) -> Result<bool> {
        if self.poisoned {
            return Ok(false);
        }
        if let Some(bad) = buf.owned().iter().find(|x| x.norm_squared() > hp.r) {
            if self.guard == GuardMode::Abort {
                return Err(Error::Validation(format!(
                    "norm guard tripped in buffer {}: ||X||^2 = {} > R = {}",
                    buf.index,
                    bad.norm_squared(),
                    hp.r
                )));
            }
            self.poisoned = true;
            return Ok(false);
        }
        Ok(true)
    }

    fn check_buffer(&self, buf: &BufferView, sched: &TransitionSchedule) -> Result<()> {
        let d = self.current.rows();
        if buf.samples.iter().any(|x| x.dim() != d) {
            return Err(Error::Dimension(format!(
                "buffer {} has samples of the wrong dimension",
                buf.index
            )));
        }
        if sched.pairs.iter().any(|&(_, t)| t >= buf.samples.len()) {
            return Err(Error::Dimension(format!(
                "schedule indexes past the {} samples of buffer {}",
                buf.samples.len(),
                buf.index
            )));
        }
        Ok(())
    }

    /// Applies one buffer: guard, then the scheduled rank-one updates, then
    /// the tail-average bookkeeping.
    pub fn process_buffer(
        &mut self,
        buf: &BufferView,
        sched: &TransitionSchedule,
        hp: &HyperParams,
    ) -> Result<()> {
        self.check_buffer(buf, sched)?;
        if self.guard_passes(buf, hp)? {
            for &(c, t) in &sched.pairs {
                rank_one_step(
                    &mut self.current,
                    &buf.samples[c],
                    &buf.samples[t],
                    hp.gamma,
                );
            }
        }
        self.tail.record(&self.current);
        Ok(())
    }

    /// Applies one buffer given directly as `(x, y)` transitions, in order.
    /// The guard inspects the covariates.
    pub fn process_pairs(&mut self, pairs: &[(Vector, Vector)], gamma: f64, r: f64) -> Result<()> {
        for (x, y) in pairs {
            check_pair(&self.current, x, y)?;
        }
        if !self.poisoned {
            if pairs.iter().any(|(x, _)| x.norm_squared() > r) {
                if self.guard == GuardMode::Abort {
                    return Err(Error::Validation(format!(
                        "norm guard tripped: ||X||^2 > R = {r}"
                    )));
                }
                self.poisoned = true;
            } else {
                for (x, y) in pairs {
                    rank_one_step(&mut self.current, x, y, gamma);
                }
            }
        }
        self.tail.record(&self.current);
        Ok(())
    }
}

/// Applies one buffer to a replay state.
pub fn rer_process_buffer(
    state: &mut RerState,
    buf: &BufferView,
    sched: &TransitionSchedule,
    hp: &HyperParams,
) -> Result<()> {
    state.process_buffer(buf, sched, hp)
}

pub fn rer_snapshot(state: &RerState) -> Snapshot {
    state.snapshot()
}

/// Per-row supports `S_l` of a sparse `A*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportPattern {
    rows: Vec<Vec<usize>>,
}

impl SupportPattern {
    /// Validates and normalizes (sorts, dedups) the per-row index sets.
    pub fn new(dim: usize, mut rows: Vec<Vec<usize>>) -> Result<Self> {
        if rows.len() != dim {
            return Err(Error::Dimension(format!(
                "support pattern has {} rows for dimension {dim}",
                rows.len()
            )));
        }
        for (l, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if row.is_empty() {
                return Err(Error::InvalidParam(format!("support of row {l} is empty")));
            }
            if let Some(&j) = row.iter().find(|&&j| j >= dim) {
                return Err(Error::InvalidParam(format!(
                    "support index {j} of row {l} is out of range for dimension {dim}"
                )));
            }
        }
        Ok(SupportPattern { rows })
    }

    pub fn full(dim: usize) -> Self {
        SupportPattern {
            rows: (0..dim).map(|_| (0..dim).collect()).collect(),
        }
    }

    pub fn diagonal(dim: usize) -> Self {
        SupportPattern {
            rows: (0..dim).map(|l| vec![l]).collect(),
        }
    }

    /// Support of the nonzero entries of `a`; an all-zero row keeps its
    /// diagonal entry so that every row has a non-empty support.
    pub fn from_nonzeros(a: &Matrix) -> Self {
        SupportPattern {
            rows: (0..a.rows())
                .map(|l| {
                    let row: Vec<usize> = (0..a.cols()).filter(|&j| a[(l, j)] != 0.0).collect();
                    if row.is_empty() {
                        vec![l]
                    } else {
                        row
                    }
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, l: usize) -> &[usize] {
        &self.rows[l]
    }

    /// `s_0 = max_l |S_l|`.
    pub fn max_row_sparsity(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn contains(&self, l: usize, j: usize) -> bool {
        self.rows[l].binary_search(&j).is_ok()
    }

    /// True if `a` is zero everywhere off the support.
    pub fn admits(&self, a: &Matrix) -> bool {
        (0..a.rows()).all(|l| (0..a.cols()).all(|j| self.contains(l, j) || a[(l, j)] == 0.0))
    }
}

/// Guard bound suggested for the sparse estimator: `c s_0 sigma_max(G) ln T`.
pub fn sparse_default_r(c: f64, s0: usize, sigma_max_g: f64, horizon: usize) -> f64 {
    c * s0 as f64 * sigma_max_g * (horizon as f64).ln()
}

/// Reverse-replay state whose rows only ever move within their supports.
#[derive(Debug, Clone)]
pub struct SparseRerState {
    inner: RerState,
    support: SupportPattern,
}

impl SparseRerState {
    pub fn new(init: Matrix, burn_in: usize, support: SupportPattern) -> Result<Self> {
        if support.dim() != init.rows() {
            return Err(Error::Dimension(format!(
                "support pattern of dimension {} for a {}x{} estimate",
                support.dim(),
                init.rows(),
                init.cols()
            )));
        }
        if !support.admits(&init) {
            return Err(Error::InvalidParam(
                "initial estimate is nonzero off the support".into(),
            ));
        }
        Ok(SparseRerState {
            inner: RerState::new(init, burn_in),
            support,
        })
    }

    pub fn with_guard(mut self, guard: GuardMode) -> Self {
        self.inner.guard = guard;
        self
    }

    pub fn current(&self) -> &Matrix {
        self.inner.current()
    }

    pub fn support(&self) -> &SupportPattern {
        &self.support
    }

    pub fn is_poisoned(&self) -> bool {
        self.inner.is_poisoned()
    }

    pub fn snapshot(&self) -> Snapshot {
        self.inner.snapshot()
    }

    pub fn process_buffer(
        &mut self,
        buf: &BufferView,
        sched: &TransitionSchedule,
        hp: &HyperParams,
    ) -> Result<()> {
        let inner = &mut self.inner;
        inner.check_buffer(buf, sched)?;
        if inner.guard_passes(buf, hp)? {
            for &(c, t) in &sched.pairs {
                masked_rank_one_step(
                    &mut inner.current,
                    &buf.samples[c],
                    &buf.samples[t],
                    hp.gamma,
                    &self.support,
                );
            }
        }
        inner.tail.record(&inner.current);
        Ok(())
    }
}

pub fn sparse_rer_process_buffer(
    state: &mut SparseRerState,
    buf: &BufferView,
    sched: &TransitionSchedule,
    hp: &HyperParams,
) -> Result<()> {
    state.process_buffer(buf, sched, hp)
}

/// Online least squares: `A = (sum y x^T)(sum x x^T + eps I)^{-1}` with the
/// inverse maintained by Sherman-Morrison rank-one updates.
///
/// While the inverse is still close to `I / eps`, each update cancels large
/// terms and leaves an absolute error that later data never washes out. The
/// covariance sum is therefore also kept exactly, and at power-of-two update
/// counts the inverse is re-anchored to its Cholesky-based inverse.
#[derive(Debug, Clone)]
pub struct OlsState {
    inv_cov: Matrix,
    cov: Matrix,
    cross: Matrix,
    epsilon: f64,
    count: usize,
    reanchor: bool,
    scratch: Vec<f64>,
}

impl OlsState {
    pub fn new(dim: usize, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "ridge must be positive, got {epsilon}"
            )));
        }
        Ok(OlsState {
            inv_cov: Matrix::identity(dim).scale(1.0 / epsilon),
            cov: Matrix::identity(dim).scale(epsilon),
            cross: Matrix::zeros(dim, dim),
            epsilon,
            count: 0,
            reanchor: true,
            scratch: vec![0.0; dim],
        })
    }

    /// Pure Sherman-Morrison updates, never re-anchored.
    pub fn without_reanchoring(mut self) -> Self {
        self.reanchor = false;
        self
    }

    /// `sum x x^T + eps I`.
    pub fn regularized_cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn inv_cov(&self) -> &Matrix {
        &self.inv_cov
    }

    pub fn cross(&self) -> &Matrix {
        &self.cross
    }

    /// Adds the transition `(x, y)`.
    pub fn update(&mut self, x: &[f64], y: &[f64]) -> Result<()> {
        check_pair(&self.cross, x, y)?;
        let d = x.len();
        for (i, &yi) in y.iter().enumerate() {
            for (c, &xj) in self.cross.row_mut(i).iter_mut().zip(x) {
                *c += yi * xj;
            }
        }
        for (i, &xi) in x.iter().enumerate() {
            for (c, &xj) in self.cov.row_mut(i).iter_mut().zip(x) {
                *c += xi * xj;
            }
        }
        // k = inv x; inv <- inv - k k^T / (1 + x^T k)
        let k = &mut self.scratch;
        for (i, ki) in k.iter_mut().enumerate() {
            *ki = dot(self.inv_cov.row(i), x);
        }
        let denom = 1.0 + dot(x, k);
        for i in 0..d {
            let ki = k[i] / denom;
            for (j, v) in self.inv_cov.row_mut(i).iter_mut().enumerate() {
                *v -= ki * k[j];
            }
        }
        self.count += 1;
        if self.reanchor && self.count.is_power_of_two() {
            self.inv_cov = spd_inverse(&self.cov)?;
        }
        Ok(())
    }

    pub fn estimate(&self) -> Matrix {
        self.cross
            .matmul(&self.inv_cov)
            .expect("OLS state matrices share one dimension")
    }
}

pub fn ols_update(state: &mut OlsState, x: &[f64], y: &[f64]) -> Result<()> {
    state.update(x, y)
}

pub fn ols_estimate(state: &OlsState) -> Matrix {
    state.estimate()
}

/// Everything needed to drive one estimator over one stream.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub kind: EstimatorKind,
    pub hp: HyperParams,
    /// `A_0`; zero when absent.
    pub init: Option<Matrix>,
    /// OLS ridge; when absent, `1e-8 * tr(C) / d` with `C` the empirical
    /// second moment of the first buffer (and any prefix).
    pub ols_ridge: Option<f64>,
    /// Row supports for `sparse_rer`; full support when absent.
    pub support: Option<SupportPattern>,
    /// Seeds the random replay order of `sgd_er`.
    pub sched_seed: u64,
    pub guard: GuardMode,
    /// `sgd_er` draws with replacement instead of permuting.
    pub er_with_replacement: bool,
}

impl RunSpec {
    pub fn new(kind: EstimatorKind, hp: HyperParams) -> Self {
        RunSpec {
            kind,
            hp,
            init: None,
            ols_ridge: None,
            support: None,
            sched_seed: 0,
            guard: GuardMode::default(),
            er_with_replacement: false,
        }
    }
}

/// Called with the buffer index and snapshot at every buffer boundary.
pub type SnapshotObserver<'a> = &'a mut dyn FnMut(usize, &Snapshot);

/// Default OLS ridge `1e-8 * tr(C) / d`.
pub fn default_ols_ridge(samples: &[Vector], dim: usize) -> f64 {
    let n = samples.len().max(1) as f64;
    let tr: f64 = samples.iter().map(Vector::norm_squared).sum::<f64>() / n;
    let eps = 1e-8 * tr / dim.max(1) as f64;
    if eps > 0.0 && eps.is_finite() {
        eps
    } else {
        1e-8
    }
}

#[allow(clippy::large_enum_variant)]
enum Driver {
    Replay {
        state: RerState,
        policy: OrderPolicy,
    },
    Sparse {
        state: SparseRerState,
    },
    Sgd {
        current: Matrix,
        tail: TailAverage,
    },
    Ols {
        state: Option<OlsState>,
    },
}

/// Streams `source` through the estimator and evaluates its output at every
/// buffer boundary.
///
/// `prefix` holds samples that precede `source` (those spent estimating `R`);
/// only OLS consumes them. All estimators report on the same grid of buffers
/// of `S = B + u` samples, with `samples_seen = (buffer_index + 1) S` counted
/// from the start of `source`.
pub fn run_estimator<S: SampleSource + ?Sized>(
    spec: &RunSpec,
    prefix: &[Vector],
    source: &mut S,
    evaluator: &Evaluator,
    seed: u64,
    mut observer: Option<SnapshotObserver<'_>>,
) -> Result<ErrorCurve> {
    let d = source.dim();
    if evaluator.dim() != d {
        return Err(Error::Dimension(format!(
            "evaluator is {}-dimensional but the stream is {d}-dimensional",
            evaluator.dim()
        )));
    }
    let hp = &spec.hp;
    let span = hp.span();
    if hp.buffer_size == 0 {
        return Err(Error::Validation("buffer size B must be at least 1".into()));
    }
    let init = spec.init.clone().unwrap_or_else(|| Matrix::zeros(d, d));
    if init.rows() != d || init.cols() != d {
        return Err(Error::Dimension(
            "initial estimate does not match the stream".into(),
        ));
    }

    let mut driver = match spec.kind {
        EstimatorKind::SgdRer => Driver::Replay {
            state: RerState::new(init, hp.burn_in).with_guard(spec.guard),
            policy: OrderPolicy::Reverse,
        },
        EstimatorKind::SgdEr => {
            let rng = ChaCha8Rng::seed_from_u64(spec.sched_seed);
            Driver::Replay {
                state: RerState::new(init, hp.burn_in).with_guard(spec.guard),
                policy: if spec.er_with_replacement {
                    OrderPolicy::RandomWithReplacement(rng)
                } else {
                    OrderPolicy::Random(rng)
                },
            }
        }
        EstimatorKind::SparseRer => {
            let support = spec
                .support
                .clone()
                .unwrap_or_else(|| SupportPattern::full(d));
            Driver::Sparse {
                state: SparseRerState::new(init, hp.burn_in, support)?.with_guard(spec.guard),
            }
        }
        EstimatorKind::Sgd => Driver::Sgd {
            tail: TailAverage::new(d, hp.burn_in, &init),
            current: init,
        },
        EstimatorKind::Ols => Driver::Ols { state: None },
    };
    let reverse = schedule(&mut OrderPolicy::Reverse, hp.buffer_size, hp.gap);

    let mut reader = BufferReader::new(span);
    let mut records = Vec::new();
    while let Some(buf) = reader.next_buffer(source) {
        let snap = match &mut driver {
            Driver::Replay { state, policy } => {
                match policy {
                    OrderPolicy::Reverse => state.process_buffer(&buf, &reverse, hp)?,
                    _ => {
                        let sched = schedule(policy, hp.buffer_size, hp.gap);
                        state.process_buffer(&buf, &sched, hp)?
                    }
                }
                state.snapshot()
            }
            Driver::Sparse { state } => {
                state.process_buffer(&buf, &reverse, hp)?;
                state.snapshot()
            }
            Driver::Sgd { current, tail } => {
                for w in buf.samples.windows(2) {
                    sgd_step(current, &w[0], &w[1], hp.gamma)?;
                }
                tail.record(current);
                tail.snapshot()
            }
            Driver::Ols { state } => {
                let ols = match state {
                    Some(s) => s,
                    None => {
                        let eps = match spec.ols_ridge {
                            Some(e) => e,
                            None => {
                                let mut seen: Vec<Vector> = prefix.to_vec();
                                seen.extend_from_slice(&buf.samples);
                                default_ols_ridge(&seen, d)
                            }
                        };
                        let mut s = OlsState::new(d, eps)?;
                        for w in prefix.windows(2) {
                            s.update(&w[0], &w[1])?;
                        }
                        if let Some(last) = prefix.last() {
                            s.update(last, &buf.samples[0])?;
                        }
                        state.insert(s)
                    }
                };
                for w in buf.samples.windows(2) {
                    ols.update(&w[0], &w[1])?;
                }
                Snapshot {
                    estimate: ols.estimate(),
                    burn_in: false,
                }
            }
        };
        if let Some(obs) = observer.as_mut() {
            obs(buf.index, &snap);
        }
        let (param_err, pred_excess) = evaluator.evaluate(&snap.estimate)?;
        records.push(ErrorRecord {
            buffer_index: buf.index,
            samples_seen: (buf.index + 1) * span,
            param_err,
            pred_excess,
            burn_in: snap.burn_in,
        });
    }
    Ok(ErrorCurve {
        estimator: spec.kind,
        seed,
        records,
    })
}
