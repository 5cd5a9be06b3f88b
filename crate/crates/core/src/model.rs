//! Ground-truth VAR(1) systems, sample streams and hyperparameter recipes.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    cholesky_psd, gaussian_into, orthonormal_columns, solve_lyapunov, spectral_norm_or_best,
    spectral_radius, Matrix, Vector, DEFAULT_TOL,
};

/// Power iterations used to estimate the spectral radius for the gap rule.
pub const SPECTRAL_RADIUS_ITERS: usize = 1000;

/// A VAR(1) process `X_{t+1} = A* X_t + eta_t`, `eta_t ~ N(0, Sigma)`.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    a_star: Matrix,
    sigma: Matrix,
    sigma_chol: Matrix,
    a_norm: f64,
}

impl SystemSpec {
    pub fn new(a_star: Matrix, sigma: Matrix) -> Result<Self> {
        if !a_star.is_square() || !sigma.is_square() || a_star.rows() != sigma.rows() {
            return Err(Error::Dimension(format!(
                "A* is {}x{} and Sigma is {}x{}",
                a_star.rows(),
                a_star.cols(),
                sigma.rows(),
                sigma.cols()
            )));
        }
        if !a_star.is_finite() || !sigma.is_finite() {
            return Err(Error::InvalidParam("system matrices must be finite".into()));
        }
        if !sigma.is_symmetric(1e-12 * sigma.max_abs().max(1.0)) {
            return Err(Error::InvalidParam(
                "noise covariance must be symmetric".into(),
            ));
        }
        let sigma_chol = cholesky_psd(&sigma, 1e-12)?;
        let a_norm = spectral_norm_or_best(&a_star)?;
        Ok(SystemSpec {
            a_star,
            sigma,
            sigma_chol,
            a_norm,
        })
    }

    /// Isotropic noise `Sigma = sigma2 * I`.
    pub fn isotropic(a_star: Matrix, sigma2: f64) -> Result<Self> {
        let d = a_star.rows();
        Self::new(a_star, Matrix::identity(d).scale(sigma2))
    }

    pub fn dim(&self) -> usize {
        self.a_star.rows()
    }

    pub fn a_star(&self) -> &Matrix {
        &self.a_star
    }

    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn sigma_chol(&self) -> &Matrix {
        &self.sigma_chol
    }

    /// `||A*||`, the operator norm.
    pub fn a_norm(&self) -> f64 {
        self.a_norm
    }

    /// Stationary covariance `G`; errors when the process has none.
    pub fn stationary_covariance(&self) -> Result<Matrix> {
        solve_lyapunov(&self.a_star, &self.sigma, DEFAULT_TOL)
    }
}

/// How `X_0` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    Zero,
    /// `X_0` drawn from the stationary law `N(0, G)`.
    Stationary,
    /// A caller-chosen initial state.
    Fixed(Vector),
}

/// A `A* = U diag(rho, .., rho, rho/3, .., rho/3) U^T` draw with `U` uniformly
/// random orthogonal; `ceil(d/2)` eigenvalues equal `rho`.
pub fn rand_bimod<R: Rng + ?Sized>(d: usize, rho: f64, rng: &mut R) -> Result<Matrix> {
    if d == 0 {
        return Err(Error::InvalidParam("dimension must be positive".into()));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParam(format!(
            "rho must lie in (0, 1), got {rho}"
        )));
    }
    let gaussian = Matrix::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    let u = orthonormal_columns(&gaussian)?;
    let high = d.div_ceil(2);
    let diag: Vec<f64> = (0..d)
        .map(|i| if i < high { rho } else { rho / 3.0 })
        .collect();
    let a = u
        .matmul(&Matrix::from_diag(&diag))?
        .matmul(&u.transpose())?;
    Ok(a.symmetrized())
}

/// Anything that yields state samples one at a time.
pub trait SampleSource {
    fn dim(&self) -> usize;
    fn next_sample(&mut self) -> Option<Vector>;
}

/// Samples stored in memory, replayed in order.
#[derive(Debug, Clone)]
pub struct VecSource {
    dim: usize,
    samples: std::vec::IntoIter<Vector>,
}

impl VecSource {
    pub fn new(dim: usize, samples: Vec<Vector>) -> Self {
        VecSource {
            dim,
            samples: samples.into_iter(),
        }
    }
}

impl SampleSource for VecSource {
    fn dim(&self) -> usize {
        self.dim
    }

    fn next_sample(&mut self) -> Option<Vector> {
        self.samples.next()
    }
}

/// Simulated VAR(1) trajectory `X_0, X_1, ...`.
#[derive(Debug, Clone)]
pub struct VarStream<R = ChaCha8Rng> {
    a_star: Matrix,
    noise_chol: Matrix,
    state: Option<Vector>,
    rng: R,
    remaining: Option<usize>,
    z: Vec<f64>,
    noise: Vec<f64>,
}

impl VarStream<ChaCha8Rng> {
    pub fn from_seed(spec: &SystemSpec, start: StartMode, seed: u64) -> Result<Self> {
        Self::new(spec, start, ChaCha8Rng::seed_from_u64(seed))
    }
}

impl<R: Rng> VarStream<R> {
    /// Starts a stream; the stationary start draws `X_0 = L_G z` with `L_G`
    /// the Cholesky factor of the stationary covariance.
    pub fn new(spec: &SystemSpec, start: StartMode, mut rng: R) -> Result<Self> {
        let d = spec.dim();
        if spec.a_norm() >= 1.0 {
            warn!(
                "streaming an A* with operator norm {} >= 1; the process may not be stationary",
                spec.a_norm()
            );
        }
        let x0 = match start {
            StartMode::Zero => Vector::zeros(d),
            StartMode::Stationary => {
                let g = spec.stationary_covariance()?;
                let chol = cholesky_psd(&g, 1e-12)?;
                let mut z = vec![0.0; d];
                let mut out = vec![0.0; d];
                gaussian_into(&mut rng, &chol, &mut z, &mut out);
                Vector::from_vec(out)
            }
            StartMode::Fixed(v) => {
                if v.dim() != d {
                    return Err(Error::Dimension(format!(
                        "initial state has dimension {} but the system has {d}",
                        v.dim()
                    )));
                }
                v
            }
        };
        Ok(VarStream {
            a_star: spec.a_star().clone(),
            noise_chol: spec.sigma_chol().clone(),
            state: Some(x0),
            rng,
            remaining: None,
            z: vec![0.0; d],
            noise: vec![0.0; d],
        })
    }

    /// Caps the stream at `count` samples.
    pub fn take_samples(mut self, count: usize) -> Self {
        self.remaining = Some(count);
        self
    }
}

impl<R: Rng> SampleSource for VarStream<R> {
    fn dim(&self) -> usize {
        self.a_star.rows()
    }

    fn next_sample(&mut self) -> Option<Vector> {
        if let Some(left) = self.remaining.as_mut() {
            if *left == 0 {
                return None;
            }
            *left -= 1;
        }
        let current = self.state.take()?;
        gaussian_into(
            &mut self.rng,
            &self.noise_chol,
            &mut self.z,
            &mut self.noise,
        );
        let d = current.dim();
        let mut next = vec![0.0; d];
        for (i, n) in next.iter_mut().enumerate() {
            *n = crate::numerics::dot(self.a_star.row(i), &current) + self.noise[i];
        }
        self.state = Some(Vector::from_vec(next));
        Some(current)
    }
}

impl<R: Rng> Iterator for VarStream<R> {
    type Item = Vector;

    fn next(&mut self) -> Option<Vector> {
        self.next_sample()
    }
}

/// Which norm the data-driven bound `R` sums over the prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormRule {
    /// `sum ||X_i||^2`, the same quantity the buffer guard compares against.
    #[default]
    Squared,
    /// `sum ||X_i||`.
    Plain,
}

/// Data-driven norm bound from a prefix of the stream (squared norms).
pub fn estimate_r(prefix: &[Vector]) -> Result<f64> {
    estimate_r_with(prefix, NormRule::Squared)
}

pub fn estimate_r_with(prefix: &[Vector], rule: NormRule) -> Result<f64> {
    if prefix.is_empty() {
        return Err(Error::InvalidParam(
            "R estimation needs at least one sample".into(),
        ));
    }
    let r: f64 = prefix
        .iter()
        .map(|x| match rule {
            NormRule::Squared => x.norm_squared(),
            NormRule::Plain => x.norm(),
        })
        .sum();
    if r > 0.0 {
        Ok(r)
    } else {
        Err(Error::DegenerateR)
    }
}

/// Number of leading samples used to estimate `R`: `floor(2 ln T)`.
pub fn r_prefix_len(horizon: usize) -> usize {
    ((2.0 * (horizon as f64).ln()).floor() as usize).max(1)
}

/// `floor(ln T)` buffers of burn-in.
pub fn log_burn_in(horizon: usize) -> usize {
    (horizon as f64).ln().floor().max(0.0) as usize
}

/// Buffer, gap, step size and averaging parameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Horizon `T`.
    pub horizon: usize,
    /// Buffer size `B`: transitions used per buffer.
    pub buffer_size: usize,
    /// Gap `u`: leading samples of each buffer never used as covariates.
    pub gap: usize,
    /// Step size `gamma`.
    pub gamma: f64,
    /// Bound on `||X||^2` enforced by the buffer guard.
    pub r: f64,
    /// Number of burn-in buffers excluded from the tail average.
    pub burn_in: usize,
    pub alpha: f64,
}

impl HyperParams {
    /// `S = B + u`.
    pub fn span(&self) -> usize {
        self.buffer_size + self.gap
    }

    /// `N = floor(T / S)`.
    pub fn n_buffers(&self) -> usize {
        self.horizon / self.span().max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.buffer_size == 0 {
            return fail("buffer size B must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail(format!(
                "step size gamma must be positive, got {}",
                self.gamma
            ));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return fail(format!("norm bound R must be positive, got {}", self.r));
        }
        // Exact 1/(2R) must pass despite rounding.
        if self.gamma * self.r > 0.5 * (1.0 + 1e-12) {
            return fail(format!(
                "gamma*R <= 1/2 violated: gamma={} R={} gamma*R={}",
                self.gamma,
                self.r,
                self.gamma * self.r
            ));
        }
        let n = self.n_buffers();
        if self.burn_in >= n {
            return fail(format!(
                "burn-in a < N violated: a={} but horizon {} holds only N={} buffers of S={}",
                self.burn_in,
                self.horizon,
                n,
                self.span()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Gap, buffer and step size from the high-probability analysis.
    Theory,
    /// Fixed `B = 100`, `u = 10`, `gamma = 1/(2R)` used for the comparison runs.
    Experiment,
}

/// Inputs to [`pick_hyperparams`].
#[derive(Debug, Clone)]
pub struct HyperParamInputs {
    pub horizon: usize,
    /// Upper bound on `||A*||`.
    pub norm_bound: f64,
    /// Estimate of `tr(Sigma)`.
    pub tr_sigma: f64,
    pub alpha: f64,
    /// Multiplier `C` in the theory-preset `R`.
    pub r_constant: f64,
    /// Data-driven `R`, required by the experiment preset.
    pub r_estimate: Option<f64>,
}

impl HyperParamInputs {
    pub fn new(horizon: usize, norm_bound: f64, tr_sigma: f64) -> Self {
        HyperParamInputs {
            horizon,
            norm_bound,
            tr_sigma,
            alpha: 22.0,
            r_constant: 1.0,
            r_estimate: None,
        }
    }
}

/// Theory preset gap `u = ceil(alpha ln T / ln(1/||A*||))`.
pub fn theory_gap(horizon: usize, norm_bound: f64, alpha: f64) -> Result<usize> {
    if !(norm_bound > 0.0 && norm_bound < 1.0) {
        return Err(Error::Stability(format!(
            "the theory gap needs 0 < ||A*|| < 1 (got {norm_bound}); use the spectral-radius gap instead"
        )));
    }
    let u = (alpha * (horizon as f64).ln() / (1.0 / norm_bound).ln()).ceil();
    Ok(u.max(0.0) as usize)
}

pub fn pick_hyperparams(inputs: &HyperParamInputs, preset: Preset) -> Result<HyperParams> {
    if inputs.horizon == 0 {
        return Err(Error::InvalidParam("horizon must be at least 1".into()));
    }
    let hp = match preset {
        Preset::Theory => {
            if inputs.alpha < 22.0 {
                warn!(
                    "alpha = {} is below the analysed range (>= 22)",
                    inputs.alpha
                );
            }
            let u = theory_gap(inputs.horizon, inputs.norm_bound, inputs.alpha)?;
            let b = 10 * u;
            let log_t = (inputs.horizon as f64).ln();
            let r = inputs.r_constant * inputs.tr_sigma * log_t
                / (1.0 - inputs.norm_bound * inputs.norm_bound);
            let n = inputs.horizon / (b + u).max(1);
            HyperParams {
                horizon: inputs.horizon,
                buffer_size: b,
                gap: u,
                gamma: 1.0 / (8.0 * r * b as f64),
                r,
                burn_in: n / 2,
                alpha: inputs.alpha,
            }
        }
        Preset::Experiment => {
            let r = inputs.r_estimate.ok_or_else(|| {
                Error::InvalidParam("the experiment preset needs an estimated R".into())
            })?;
            HyperParams {
                horizon: inputs.horizon,
                buffer_size: 100,
                gap: 10,
                gamma: 1.0 / (2.0 * r),
                r,
                burn_in: log_burn_in(inputs.horizon),
                alpha: inputs.alpha,
            }
        }
    };
    hp.validate()?;
    Ok(hp)
}

/// Gap size from the spectral radius when `||A*||` may exceed one:
/// `ceil((ln(T lambda_max(G)) + d ln(d ||A*||)) / ln(1/rho))`.
///
/// The result is at least `d` (the power bound it comes from holds for
/// powers `k >= d`), and when `||A*|| < 1` at least `ceil(ln T / ln(1/||A*||))`.
pub fn gelfand_gap_u(a_star: &Matrix, horizon: usize, lambda_max_g: f64) -> Result<usize> {
    if !a_star.is_square() {
        return Err(Error::Dimension("A* must be square".into()));
    }
    let d = a_star.rows();
    let rho = spectral_radius(a_star, SPECTRAL_RADIUS_ITERS)?;
    if rho >= 1.0 {
        return Err(Error::Stability(format!(
            "estimated spectral radius {rho} >= 1"
        )));
    }
    let norm = spectral_norm_or_best(a_star)?;
    let t = horizon as f64;
    let mut u = if rho == 0.0 {
        0
    } else {
        let numer = (t * lambda_max_g).ln() + d as f64 * (d as f64 * norm).ln();
        (numer / (1.0 / rho).ln()).ceil().max(0.0) as usize
    };
    u = u.max(d).max(1);
    if norm > 0.0 && norm < 1.0 {
        let stable = (t.ln() / (1.0 / norm).ln()).ceil().max(0.0) as usize;
        u = u.max(stable);
    }
    Ok(u)
}
