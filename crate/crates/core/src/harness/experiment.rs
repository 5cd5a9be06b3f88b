//! Multi-seed, multi-estimator runs and their CSV/JSON serialization.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, GammaRule, RRule, StartChoice, SystemKind};
use crate::error::{Error, Result};
use crate::estimators::{run_estimator, EstimatorKind, RunSpec, SupportPattern};
use crate::metrics::{ErrorCurve, ErrorRecord, Evaluator};
use crate::model::{
    estimate_r_with, gelfand_gap_u, log_burn_in, r_prefix_len, rand_bimod, theory_gap, HyperParams,
    Preset, SampleSource, StartMode, SystemSpec, VarStream,
};
use crate::numerics::{spectral_norm_or_best, Matrix, Vector};

/// Exact CSV header.
pub const CSV_HEADER: [&str; 7] = [
    "estimator",
    "seed",
    "buffer_index",
    "samples_seen",
    "param_err",
    "pred_excess",
    "burn_in",
];

const TAG_SYSTEM: u64 = 0x5359_5354_454d;
const TAG_STREAM: u64 = 0x5354_5245_414d;
const TAG_SCHED: u64 = 0x0053_4348_4544;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent sub-seeds of one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DerivedSeeds {
    /// Draws `A*`.
    pub system: u64,
    /// Drives the sample stream, shared by every estimator of the seed.
    pub stream: u64,
    /// Random replay order of `sgd_er`.
    pub sched: u64,
}

impl DerivedSeeds {
    pub fn new(seed: u64) -> Self {
        let root = splitmix64(seed);
        DerivedSeeds {
            system: splitmix64(root ^ TAG_SYSTEM),
            stream: splitmix64(root ^ TAG_STREAM),
            sched: splitmix64(root ^ TAG_SCHED),
        }
    }
}

/// Reads a whitespace-separated square matrix, one row per line.
pub fn read_matrix_file(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        message: format!("'{t}' is not a number"),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let m = Matrix::from_rows(&rows).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    if !m.is_square() || m.rows() == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: format!("expected a square matrix, got {}x{}", m.rows(), m.cols()),
        });
    }
    Ok(m)
}

/// Builds the ground-truth system of one seed.
pub fn build_system(cfg: &ExperimentConfig, seeds: &DerivedSeeds) -> Result<SystemSpec> {
    let a_star = match &cfg.system {
        SystemKind::RandBimod => {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds.system);
            rand_bimod(cfg.d, cfg.rho, &mut rng)?
        }
        SystemKind::ScaledIdentity => Matrix::identity(cfg.d).scale(cfg.rho),
        SystemKind::MatrixFile(path) => read_matrix_file(path)?,
    };
    SystemSpec::isotropic(a_star, cfg.sigma)
}

/// Hyperparameters of one seed, given the system and the `R`-estimation prefix.
pub fn resolve_hyperparams(
    cfg: &ExperimentConfig,
    system: &SystemSpec,
    g: &Matrix,
    prefix: &[Vector],
) -> Result<HyperParams> {
    let d = system.dim();
    let norm = system.a_norm();
    let tr_sigma = system.sigma().trace();
    let horizon = cfg.horizon;
    let r_rule = cfg.r_rule.unwrap_or(match cfg.preset {
        Preset::Theory => RRule::Theory,
        Preset::Experiment => RRule::Estimate(Default::default()),
    });
    let r = match r_rule {
        RRule::Estimate(rule) => estimate_r_with(prefix, rule)?,
        RRule::Fixed(r) => r,
        RRule::Theory => {
            if norm >= 1.0 {
                return Err(Error::Validation(format!(
                    "theory R needs ||A*|| < 1 (got {norm}); pass an explicit r-rule"
                )));
            }
            cfg.r_constant * tr_sigma * (horizon as f64).ln() / (1.0 - norm * norm)
        }
    };

    let (buffer_size, gap) = match cfg.preset {
        Preset::Experiment => (cfg.buffer_size.unwrap_or(100), cfg.gap.unwrap_or(10)),
        Preset::Theory => match (cfg.buffer_size, cfg.gap) {
            (Some(b), Some(u)) => (b, u),
            (None, Some(u)) => (10 * u, u),
            (Some(b), None) => (b, b / 10),
            (None, None) => {
                let u = if norm < 1.0 {
                    theory_gap(horizon, norm, cfg.alpha)?
                } else {
                    gelfand_gap_u(system.a_star(), horizon, spectral_norm_or_best(g)?)?
                };
                (10 * u, u)
            }
        },
    };

    let gamma = match cfg.gamma_rule.unwrap_or(match cfg.preset {
        Preset::Theory => GammaRule::EighthOverRb,
        Preset::Experiment => GammaRule::HalfOverR,
    }) {
        GammaRule::HalfOverR => 1.0 / (2.0 * r),
        GammaRule::EighthOverRb => 1.0 / (8.0 * r * buffer_size as f64),
        GammaRule::Fixed(g) => g,
    };
    let span = buffer_size + gap;
    let available = horizon.saturating_sub(prefix.len()) / span.max(1);
    let burn_in = cfg.burn_in.unwrap_or(match cfg.preset {
        Preset::Theory => available / 2,
        Preset::Experiment => log_burn_in(horizon),
    });
    let hp = HyperParams {
        horizon,
        buffer_size,
        gap,
        gamma,
        r,
        burn_in,
        alpha: cfg.alpha,
    };
    hp.validate()?;
    if burn_in >= available {
        return Err(Error::Validation(format!(
            "burn-in a < N violated: a={burn_in} but only {available} buffers of S={span} follow the {}-sample prefix",
            prefix.len()
        )));
    }
    if d == 0 {
        return Err(Error::Validation("empty system".into()));
    }
    Ok(hp)
}

/// Shared, immutable per-seed state: system, metrics, hyperparameters and
/// the stream positioned right after the `R`-estimation prefix.
struct SeedSetup {
    seed: u64,
    seeds: DerivedSeeds,
    evaluator: Evaluator,
    support: SupportPattern,
    hp: HyperParams,
    prefix: Vec<Vector>,
    stream: VarStream,
}

fn setup_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedSetup> {
    let seeds = DerivedSeeds::new(seed);
    let system = build_system(cfg, &seeds)?;
    let evaluator = Evaluator::for_system(&system)?;
    let start = match cfg.start {
        StartChoice::Zero => StartMode::Zero,
        StartChoice::Stationary => StartMode::Stationary,
    };
    let mut stream =
        VarStream::from_seed(&system, start, seeds.stream)?.take_samples(cfg.horizon + 1);
    let consumes_prefix = match cfg.r_rule {
        Some(rule) => rule.consumes_prefix(),
        None => cfg.preset == Preset::Experiment,
    };
    let prefix: Vec<Vector> = if consumes_prefix {
        (0..r_prefix_len(cfg.horizon))
            .map_while(|_| stream.next_sample())
            .collect()
    } else {
        Vec::new()
    };
    let hp = resolve_hyperparams(cfg, &system, evaluator.g(), &prefix)?;
    Ok(SeedSetup {
        seed,
        seeds,
        support: SupportPattern::from_nonzeros(system.a_star()),
        evaluator,
        hp,
        prefix,
        stream,
    })
}

/// Reproduction record for one `(estimator, seed)` run.
#[derive(Debug, Clone, Serialize)]
pub struct RunEntry {
    pub estimator: EstimatorKind,
    pub seed: u64,
    pub derived_seeds: DerivedSeeds,
    pub hyperparams: HyperParams,
    pub prefix_len: usize,
    pub rows: usize,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunEntry>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub curves: Vec<ErrorCurve>,
    pub manifest: RunManifest,
}

/// Runs every `(estimator, seed)` pair. Output order is estimator (in the
/// configured order), then seed, then buffer, independent of scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let pool = {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cfg.threads {
            builder = builder.num_threads(n);
        }
        builder
            .build()
            .map_err(|e| Error::Validation(format!("cannot start worker pool: {e}")))?
    };
    pool.install(|| {
        let setups: Vec<SeedSetup> = cfg
            .seeds
            .par_iter()
            .map(|&seed| setup_seed(cfg, seed))
            .collect::<Result<_>>()?;
        let tasks: Vec<(EstimatorKind, &SeedSetup)> = cfg
            .estimators
            .iter()
            .flat_map(|&kind| setups.iter().map(move |s| (kind, s)))
            .collect();
        let outputs: Vec<(ErrorCurve, RunEntry)> = tasks
            .par_iter()
            .map(|&(kind, setup)| run_one(cfg, kind, setup))
            .collect::<Result<_>>()?;
        let (curves, runs): (Vec<_>, Vec<_>) = outputs.into_iter().unzip();
        Ok(ExperimentResult {
            curves,
            manifest: RunManifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: cfg.clone(),
                seeds: cfg.seeds.clone(),
                runs,
            },
        })
    })
}

fn run_one(
    cfg: &ExperimentConfig,
    kind: EstimatorKind,
    setup: &SeedSetup,
) -> Result<(ErrorCurve, RunEntry)> {
    let started = Instant::now();
    let mut spec = RunSpec::new(kind, setup.hp.clone());
    spec.sched_seed = setup.seeds.sched;
    spec.ols_ridge = cfg.ridge;
    spec.support = Some(setup.support.clone());
    let mut stream = setup.stream.clone();
    let curve = run_estimator(
        &spec,
        &setup.prefix,
        &mut stream,
        &setup.evaluator,
        setup.seed,
        None,
    )?;
    let elapsed = started.elapsed().as_secs_f64();
    info!(
        "{kind} seed {}: {} buffers in {elapsed:.2}s",
        setup.seed,
        curve.records.len()
    );
    let entry = RunEntry {
        estimator: kind,
        seed: setup.seed,
        derived_seeds: setup.seeds,
        hyperparams: setup.hp.clone(),
        prefix_len: setup.prefix.len(),
        rows: curve.records.len(),
        wall_clock_secs: elapsed,
    };
    Ok((curve, entry))
}

/// Serializes curves with the fixed header; floats use Rust's shortest
/// round-trip formatting.
pub fn curves_to_csv(curves: &[ErrorCurve]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Validation(format!("CSV encoding failed: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for c in curves {
        for r in &c.records {
            w.write_record([
                c.estimator.name().to_string(),
                c.seed.to_string(),
                r.buffer_index.to_string(),
                r.samples_seen.to_string(),
                r.param_err.to_string(),
                r.pred_excess.to_string(),
                r.burn_in.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::Validation(format!("CSV encoding failed: {e}")))
}

/// Parses a results CSV back into curves, one per `(estimator, seed)` in
/// order of first appearance.
pub fn read_curves_csv(path: &Path) -> Result<Vec<ErrorCurve>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_curves_csv(&bytes).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

fn parse_curves_csv(bytes: &[u8]) -> std::result::Result<Vec<ErrorCurve>, String> {
    let mut reader = csv::Reader::from_reader(bytes);
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(format!(
            "unexpected header '{}'",
            header.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut curves: Vec<ErrorCurve> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| e.to_string())?;
        let line = i + 2;
        let field = |k: usize| {
            row.get(k)
                .ok_or_else(|| format!("line {line}: missing column {}", CSV_HEADER[k]))
        };
        let num = |k: usize| -> std::result::Result<f64, String> {
            field(k)?
                .parse()
                .map_err(|_| format!("line {line}: bad {}", CSV_HEADER[k]))
        };
        let int = |k: usize| -> std::result::Result<u64, String> {
            field(k)?
                .parse()
                .map_err(|_| format!("line {line}: bad {}", CSV_HEADER[k]))
        };
        let estimator: EstimatorKind = field(0)?
            .parse()
            .map_err(|e: Error| format!("line {line}: {e}"))?;
        let seed = int(1)?;
        let record = ErrorRecord {
            buffer_index: int(2)? as usize,
            samples_seen: int(3)? as usize,
            param_err: num(4)?,
            pred_excess: num(5)?,
            burn_in: field(6)?
                .parse()
                .map_err(|_| format!("line {line}: bad burn_in"))?,
        };
        match curves
            .iter_mut()
            .find(|c| c.estimator == estimator && c.seed == seed)
        {
            Some(c) => c.records.push(record),
            None => curves.push(ErrorCurve {
                estimator,
                seed,
                records: vec![record],
            }),
        }
    }
    Ok(curves)
}

/// `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl ExperimentResult {
    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        curves_to_csv(&self.curves)
    }

    /// Writes the CSV to `out` and the manifest beside it.
    pub fn write(&self, out: &Path) -> Result<()> {
        if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bytes = self.csv_bytes()?;
        fs::write(out, bytes).map_err(|e| Error::io(out, e))?;
        let mpath = manifest_path(out);
        let json = serde_json::to_vec_pretty(&self.manifest)
            .map_err(|e| Error::Validation(format!("manifest encoding failed: {e}")))?;
        let mut f = fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
        f.write_all(&json).map_err(|e| Error::io(&mpath, e))?;
        Ok(())
    }
}
