//! Experiment configuration: defaults, a flat `key = value` file format and
//! command-line overrides, all funnelled through [`ExperimentConfig::set`].

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::model::{NormRule, Preset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Random orthogonal eigenbasis with eigenvalues `rho` and `rho/3`.
    RandBimod,
    /// `A* = rho I`.
    ScaledIdentity,
    /// `A*` read from a whitespace-separated text file, one row per line.
    MatrixFile(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    /// `1 / (2R)`.
    HalfOverR,
    /// `1 / (8RB)`.
    EighthOverRb,
    Fixed(f64),
}

impl FromStr for GammaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(' ', "").as_str() {
            "1/2r" | "1/(2r)" => Ok(GammaRule::HalfOverR),
            "1/8rb" | "1/(8rb)" => Ok(GammaRule::EighthOverRb),
            other => other.parse::<f64>().map(GammaRule::Fixed).map_err(|_| {
                Error::Validation(format!(
                    "gamma-rule must be 1/2R, 1/8RB or a number, got '{s}'"
                ))
            }),
        }
    }
}

impl fmt::Display for GammaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaRule::HalfOverR => f.write_str("1/2R"),
            GammaRule::EighthOverRb => f.write_str("1/8RB"),
            GammaRule::Fixed(g) => write!(f, "{g}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RRule {
    /// Sum over the first `floor(2 ln T)` samples, squared or plain norms.
    Estimate(NormRule),
    /// `C tr(Sigma) ln T / (1 - ||A*||^2)`.
    Theory,
    Fixed(f64),
}

impl RRule {
    pub fn consumes_prefix(self) -> bool {
        matches!(self, RRule::Estimate(_))
    }
}

impl FromStr for RRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "squared" => Ok(RRule::Estimate(NormRule::Squared)),
            "norms" | "plain" => Ok(RRule::Estimate(NormRule::Plain)),
            "theory" => Ok(RRule::Theory),
            other => other.parse::<f64>().map(RRule::Fixed).map_err(|_| {
                Error::Validation(format!(
                    "r-rule must be squared, norms, theory or a number, got '{s}'"
                ))
            }),
        }
    }
}

/// Start of the simulated trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartChoice {
    Zero,
    Stationary,
}

/// Everything that determines an experiment's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d: usize,
    pub rho: f64,
    /// Noise variance: `Sigma = sigma * I`.
    pub sigma: f64,
    pub system: SystemKind,
    pub horizon: usize,
    pub preset: Preset,
    pub buffer_size: Option<usize>,
    pub gap: Option<usize>,
    pub gamma_rule: Option<GammaRule>,
    pub r_rule: Option<RRule>,
    pub burn_in: Option<usize>,
    pub alpha: f64,
    pub r_constant: f64,
    pub ridge: Option<f64>,
    pub estimators: Vec<EstimatorKind>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub start: StartChoice,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 5,
            rho: 0.9,
            sigma: 1.0,
            system: SystemKind::RandBimod,
            horizon: 1_000_000,
            preset: Preset::Experiment,
            buffer_size: None,
            gap: None,
            gamma_rule: None,
            r_rule: None,
            burn_in: None,
            alpha: 22.0,
            r_constant: 1.0,
            ridge: None,
            estimators: vec![
                EstimatorKind::SgdRer,
                EstimatorKind::Sgd,
                EstimatorKind::SgdEr,
                EstimatorKind::Ols,
            ],
            seeds: vec![1, 2, 3, 4, 5],
            out: PathBuf::from("results.csv"),
            start: StartChoice::Zero,
            threads: None,
        }
    }
}

/// Keys accepted in config files (and, prefixed with `--`, on the command line).
pub const CONFIG_KEYS: &[&str] = &[
    "d",
    "rho",
    "sigma",
    "system",
    "matrix-file",
    "T",
    "B",
    "u",
    "preset",
    "gamma-rule",
    "r-rule",
    "a",
    "alpha",
    "r-constant",
    "ridge",
    "estimators",
    "seeds",
    "out",
    "start",
    "threads",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Validation(format!("{key}: cannot parse '{value}'")))
}

/// Accepts plain integers and scientific notation such as `1e6`.
fn parse_count(key: &str, value: &str) -> Result<usize> {
    let v = value.trim();
    if let Ok(n) = v.parse::<usize>() {
        return Ok(n);
    }
    let f: f64 = parse_num(key, v)?;
    if f >= 0.0 && f.fract() == 0.0 && f < 1e18 {
        Ok(f as usize)
    } else {
        Err(Error::Validation(format!(
            "{key}: '{value}' is not a non-negative integer"
        )))
    }
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_count(key, value)?,
            "rho" => self.rho = parse_num(key, value)?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "system" => {
                self.system = match value.trim() {
                    "rand_bimod" | "randbimod" => SystemKind::RandBimod,
                    "scaled_identity" | "identity" => SystemKind::ScaledIdentity,
                    other => {
                        return Err(Error::Validation(format!(
                            "system must be rand_bimod or scaled_identity (or give matrix-file), got '{other}'"
                        )))
                    }
                }
            }
            "matrix-file" => self.system = SystemKind::MatrixFile(PathBuf::from(value.trim())),
            "T" => self.horizon = parse_count(key, value)?,
            "B" => self.buffer_size = Some(parse_count(key, value)?),
            "u" => self.gap = Some(parse_count(key, value)?),
            "preset" => {
                self.preset = match value.trim() {
                    "theory" => Preset::Theory,
                    "experiment" => Preset::Experiment,
                    other => {
                        return Err(Error::Validation(format!(
                            "preset must be theory or experiment, got '{other}'"
                        )))
                    }
                }
            }
            "gamma-rule" => self.gamma_rule = Some(value.parse()?),
            "r-rule" => self.r_rule = Some(value.parse()?),
            "a" => self.burn_in = Some(parse_count(key, value)?),
            "alpha" => self.alpha = parse_num(key, value)?,
            "r-constant" => self.r_constant = parse_num(key, value)?,
            "ridge" => self.ridge = Some(parse_num(key, value)?),
            "estimators" => {
                self.estimators = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num::<u64>("seeds", s))
                    .collect::<Result<_>>()?
            }
            "out" => self.out = PathBuf::from(value.trim()),
            "start" => {
                self.start = match value.trim() {
                    "zero" => StartChoice::Zero,
                    "stationary" => StartChoice::Stationary,
                    other => {
                        return Err(Error::Validation(format!(
                            "start must be zero or stationary, got '{other}'"
                        )))
                    }
                }
            }
            "threads" => self.threads = Some(parse_count(key, value)?),
            other => {
                return Err(Error::Validation(format!(
                    "unknown configuration key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Applies a flat `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: expected 'key = value'", lineno + 1),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("line {}: {e}", lineno + 1),
                })?;
        }
        Ok(())
    }

    /// Checks everything that can be checked before any data is drawn.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.d == 0 {
            return fail("d must be at least 1".into());
        }
        if !matches!(self.system, SystemKind::MatrixFile(_)) && !(self.rho > 0.0 && self.rho < 1.0)
        {
            return fail(format!("rho must lie in (0, 1), got {}", self.rho));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.horizon < 2 {
            return fail("T must be at least 2".into());
        }
        if self.estimators.is_empty() {
            return fail("at least one estimator is required".into());
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return fail("seeds must be distinct".into());
        }
        let mut kinds = self.estimators.clone();
        kinds.sort_unstable();
        kinds.dedup();
        if kinds.len() != self.estimators.len() {
            return fail("estimators must be distinct".into());
        }
        if self.buffer_size == Some(0) {
            return fail("B must be at least 1".into());
        }
        if self.preset == Preset::Theory {
            if let (Some(b), Some(u)) = (self.buffer_size, self.gap) {
                if b != 10 * u {
                    return fail(format!("B = 10u violated in theory preset: B={b}, u={u}"));
                }
            }
            if let (Some(b), None) = (self.buffer_size, self.gap) {
                if b % 10 != 0 {
                    return fail(format!(
                        "B = 10u violated in theory preset: B={b} is not a multiple of 10"
                    ));
                }
            }
        }
        if let Some(GammaRule::Fixed(g)) = self.gamma_rule {
            if !(g > 0.0 && g.is_finite()) {
                return fail(format!("gamma must be positive, got {g}"));
            }
            if let Some(RRule::Fixed(r)) = self.r_rule {
                if g * r > 0.5 * (1.0 + 1e-12) {
                    return fail(format!("gamma*R <= 1/2 violated: gamma={g} R={r}"));
                }
            }
        }
        if let Some(RRule::Fixed(r)) = self.r_rule {
            if !(r > 0.0 && r.is_finite()) {
                return fail(format!("R must be positive, got {r}"));
            }
        }
        if let Some(eps) = self.ridge {
            if !(eps > 0.0 && eps.is_finite()) {
                return fail(format!("ridge must be positive, got {eps}"));
            }
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1".into());
        }
        if self.preset == Preset::Experiment {
            let b = self.buffer_size.unwrap_or(100);
            let u = self.gap.unwrap_or(10);
            let prefix = if self.r_rule.is_none_or(RRule::consumes_prefix) {
                crate::model::r_prefix_len(self.horizon)
            } else {
                0
            };
            let n = self.horizon.saturating_sub(prefix) / (b + u);
            let a = self
                .burn_in
                .unwrap_or_else(|| crate::model::log_burn_in(self.horizon));
            if a >= n {
                return fail(format!(
                    "burn-in a < N violated: a={a} but T={} yields only N={n} buffers of S={}",
                    self.horizon,
                    b + u
                ));
            }
        }
        Ok(())
    }
}

/// Flags of `sysid run`. Every value is kept as text and applied through
/// [`ExperimentConfig::set`], so the file and the command line share one parser.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// State dimension.
    #[arg(long)]
    pub d: Option<String>,
    /// Largest eigenvalue of the generated A*.
    #[arg(long)]
    pub rho: Option<String>,
    /// Noise variance (Sigma = sigma * I).
    #[arg(long)]
    pub sigma: Option<String>,
    /// rand_bimod or scaled_identity.
    #[arg(long)]
    pub system: Option<String>,
    /// Read A* from a text file instead of generating it.
    #[arg(long = "matrix-file")]
    pub matrix_file: Option<String>,
    /// Horizon (number of transitions).
    #[arg(long = "T")]
    pub horizon: Option<String>,
    /// Buffer size.
    #[arg(long = "B")]
    pub buffer_size: Option<String>,
    /// Gap between buffers.
    #[arg(long = "u")]
    pub gap: Option<String>,
    /// theory or experiment.
    #[arg(long)]
    pub preset: Option<String>,
    /// 1/2R, 1/8RB or a number.
    #[arg(long = "gamma-rule")]
    pub gamma_rule: Option<String>,
    /// squared, norms, theory or a number.
    #[arg(long = "r-rule")]
    pub r_rule: Option<String>,
    /// Burn-in buffers excluded from the tail average.
    #[arg(long = "a")]
    pub burn_in: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    /// Constant C in the theory-preset R.
    #[arg(long = "r-constant")]
    pub r_constant: Option<String>,
    /// OLS ridge (default scales with the first buffer's second moment).
    #[arg(long)]
    pub ridge: Option<String>,
    /// Comma-separated list of sgd_rer, sgd, sgd_er, ols, sparse_rer.
    #[arg(long)]
    pub estimators: Option<String>,
    /// Comma-separated run seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Output CSV path; the manifest goes to <out>.manifest.json.
    #[arg(long)]
    pub out: Option<String>,
    /// zero or stationary.
    #[arg(long)]
    pub start: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<String>,
}

impl RunArgs {
    fn pairs(&self) -> Vec<(&'static str, &String)> {
        let fields: [(&'static str, &Option<String>); 20] = [
            ("d", &self.d),
            ("rho", &self.rho),
            ("sigma", &self.sigma),
            ("system", &self.system),
            ("matrix-file", &self.matrix_file),
            ("T", &self.horizon),
            ("B", &self.buffer_size),
            ("u", &self.gap),
            ("preset", &self.preset),
            ("gamma-rule", &self.gamma_rule),
            ("r-rule", &self.r_rule),
            ("a", &self.burn_in),
            ("alpha", &self.alpha),
            ("r-constant", &self.r_constant),
            ("ridge", &self.ridge),
            ("estimators", &self.estimators),
            ("seeds", &self.seeds),
            ("out", &self.out),
            ("start", &self.start),
            ("threads", &self.threads),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v)))
            .collect()
    }

    /// Defaults, then the config file, then flags; validated.
    pub fn into_config(self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (key, value) in self.pairs() {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(clap::Parser)]
#[command(no_binary_name = true)]
struct RunOnly {
    #[command(flatten)]
    args: RunArgs,
}

/// Parses `sysid run` flags (without the program and subcommand names).
pub fn parse_config<I, S>(argv: I) -> Result<ExperimentConfig>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    use clap::Parser;
    let parsed = RunOnly::try_parse_from(argv).map_err(|e| Error::Validation(e.to_string()))?;
    parsed.args.into_config()
}
