//! Monte-Carlo grids: repeated generate + identify cycles per sample-count
//! multiplier, aggregated into a [`BenchmarkReport`].

use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::formats::{BenchmarkReport, CellSummary, TrialRecord};
use crate::ident::{identify_topology, score};
use crate::sim::{gen_rbts_like, simulate_phase, GroundTruth, NetworkSpec, NoiseConfig, SampleCount, SimError};

/// What network each trial draws.
#[derive(Clone, Debug, PartialEq)]
pub enum Scenario {
    /// Three phases over a random number of consumers each; `N` is a multiple
    /// of the consumer count `n_i`.
    Phase { consumers_per_phase: (usize, usize) },
    /// Multi-layer network; `N` is a multiple of the node count `n`.
    Layered(NetworkSpec),
}

impl Scenario {
    pub fn phase_default() -> Self {
        Scenario::Phase {
            consumers_per_phase: (75, 100),
        }
    }

    pub fn samples(&self, multiplier: f64) -> SampleCount {
        match self {
            Scenario::Phase { .. } => SampleCount::PerIndependent(multiplier),
            Scenario::Layered(_) => SampleCount::PerNode(multiplier),
        }
    }

    pub fn generate(
        &self,
        multiplier: f64,
        noise: Option<&NoiseConfig>,
        seed: u64,
    ) -> Result<GroundTruth, SimError> {
        match self {
            Scenario::Phase {
                consumers_per_phase,
            } => simulate_phase(*consumers_per_phase, self.samples(multiplier), noise, seed),
            Scenario::Layered(spec) => gen_rbts_like(spec, self.samples(multiplier), noise, seed),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Scenario::Phase {
                consumers_per_phase: (lo, hi),
            } => format!("phase {lo}-{hi} consumers per phase, N in multiples of n_i"),
            Scenario::Layered(spec) => format!(
                "layered {} nodes in {} layers, N in multiples of n",
                spec.node_count(),
                spec.layer_count()
            ),
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    /// `phase`, `phase:LO-HI`, `rbts`, `chain` or `uniform:F,T,C`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, arg) = s.split_once(':').unwrap_or((s, ""));
        let bad = || format!("cannot parse network spec `{s}`");
        match (head, arg) {
            ("phase", "") => Ok(Scenario::phase_default()),
            ("phase", range) => {
                let (lo, hi) = range.split_once('-').unwrap_or((range, range));
                let lo = lo.trim().parse().map_err(|_| bad())?;
                let hi = hi.trim().parse().map_err(|_| bad())?;
                Ok(Scenario::Phase {
                    consumers_per_phase: (lo, hi),
                })
            }
            ("rbts" | "rbts-bus2", "") => Ok(Scenario::Layered(NetworkSpec::rbts_bus2())),
            ("chain", "") => Ok(Scenario::Layered(NetworkSpec::chain())),
            ("uniform", dims) => {
                let d: Vec<usize> = dims
                    .split(',')
                    .map(|x| x.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad())?;
                match d[..] {
                    [f, t, c] => Ok(Scenario::Layered(NetworkSpec::uniform(f, t, c))),
                    _ => Err(bad()),
                }
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub scenario: Scenario,
    pub multipliers: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// `None` simulates noise-free readings; identification then uses the
    /// default estimator settings.
    pub noise: Option<NoiseConfig>,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GridError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("multiplier {0} must be finite and at least 1")]
    BadMultiplier(f64),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("thread pool: {0}")]
    Threads(String),
}

/// Seed of trial `trial`, independent of scheduling and of the multiplier, so
/// every cell sees the same sequence of networks.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(trial as u64);
    rng.next_u64()
}

/// One generate + identify cycle. Only the identification is timed.
pub fn run_trial(
    scenario: &Scenario,
    multiplier: f64,
    noise: Option<&NoiseConfig>,
    trial: usize,
    seed: u64,
) -> TrialRecord {
    let mut rec = TrialRecord {
        multiplier,
        trial,
        seed,
        n_nodes: 0,
        n_samples: 0,
        success: false,
        accuracy: 0.0,
        seconds: 0.0,
        error: String::new(),
    };
    let noise = noise.map(|c| c.clone().with_seed(seed));
    let gt = match scenario.generate(multiplier, noise.as_ref(), seed) {
        Ok(gt) => gt,
        Err(e) => {
            rec.error = format!("generation: {e}");
            return rec;
        }
    };
    rec.n_nodes = gt.network.node_count();
    rec.n_samples = gt.n_samples();
    let cfg = noise.unwrap_or_else(|| NoiseConfig {
        interval_minutes: gt.noisy_readings.interval_minutes(),
        ..NoiseConfig::default()
    });

    let start = Instant::now();
    let result = identify_topology(&gt.noisy_readings, gt.network.layers(), &cfg);
    rec.seconds = start.elapsed().as_secs_f64();

    match result {
        Ok(res) => {
            if let Some(f) = res.failures().next() {
                rec.error = format!("layer {}: {}", f.parent_level, f.error);
            }
            match score(&res, &gt.network) {
                Ok(s) => {
                    rec.success = s.success;
                    rec.accuracy = s.accuracy;
                }
                Err(e) => rec.error = e.to_string(),
            }
        }
        Err(e) => rec.error = e.to_string(),
    }
    rec
}

fn summarize(multiplier: f64, trials: &[TrialRecord]) -> CellSummary {
    let n = trials.len().max(1) as f64;
    let successes = trials.iter().filter(|t| t.success).count();
    CellSummary {
        multiplier,
        trials: trials.len(),
        successes,
        success_pct: 100.0 * successes as f64 / n,
        mean_samples: trials.iter().map(|t| t.n_samples as f64).sum::<f64>() / n,
        mean_seconds: trials.iter().map(|t| t.seconds).sum::<f64>() / n,
        mean_accuracy: trials.iter().map(|t| t.accuracy).sum::<f64>() / n,
        failed_trials: trials.iter().filter(|t| !t.error.is_empty()).count(),
    }
}

/// Describes the machine for the report header.
pub fn environment_note(threads: usize) -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{cpu}; {cores} logical cpus; {threads} worker threads; {}-{}",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

/// Runs every (multiplier, trial) cell. Trials run in parallel; failed
/// trials count as unsuccessful and never abort the grid.
pub fn run_grid(cfg: &GridConfig) -> Result<BenchmarkReport, GridError> {
    if cfg.trials == 0 {
        return Err(GridError::NoTrials);
    }
    if let Some(&m) = cfg.multipliers.iter().find(|m| !(m.is_finite() && **m >= 1.0)) {
        return Err(GridError::BadMultiplier(m));
    }
    if let Some(noise) = &cfg.noise {
        noise.validate().map_err(|e| GridError::Scenario(e.to_string()))?;
    }
    if let Scenario::Layered(spec) = &cfg.scenario {
        spec.validate().map_err(|e| GridError::Scenario(e.to_string()))?;
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| GridError::Threads(e.to_string()))?;

    let jobs: Vec<(f64, usize)> = cfg
        .multipliers
        .iter()
        .flat_map(|&m| (0..cfg.trials).map(move |t| (m, t)))
        .collect();
    let trials: Vec<TrialRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, t)| run_trial(&cfg.scenario, m, cfg.noise.as_ref(), t, trial_seed(cfg.seed, t)))
            .collect()
    });

    let cells = cfg
        .multipliers
        .iter()
        .zip(trials.chunks(cfg.trials))
        .map(|(&m, chunk)| summarize(m, chunk))
        .collect();
    Ok(BenchmarkReport {
        environment: environment_note(pool.current_num_threads()),
        scenario: cfg.scenario.describe(),
        seed: cfg.seed,
        cells,
        trials,
    })
}
