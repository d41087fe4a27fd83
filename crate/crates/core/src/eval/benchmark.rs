use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::ebm_fit;
use crate::error::{Result, VebmError};
use crate::mixture::{build_tables, fit_mixtures};
use crate::model::infer;
use crate::rng::SeededRng;
use crate::synth::{generate, SynthSpec};
use crate::types::{EventSequence, ModelConfig};

use super::{fraction_correct, kendalls_tau, median};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Vebm,
    Ebm,
}

impl Solver {
    pub const ALL: [Solver; 2] = [Solver::Vebm, Solver::Ebm];

    pub fn name(self) -> &'static str {
        match self {
            Solver::Vebm => "vebm",
            Solver::Ebm => "ebm",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = VebmError;

    fn from_str(s: &str) -> Result<Self> {
        Solver::ALL
            .into_iter()
            .find(|v| v.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<_> = Solver::ALL.iter().map(|v| v.name()).collect();
                VebmError::InvalidArgument(format!(
                    "unknown solver '{s}' (available: {})",
                    names.join(", ")
                ))
            })
    }
}

/// Baseline search budget. Defaults follow the usual EBM protocol of 10³
/// greedy iterations from 10 starts and a 10⁶-step chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EbmSettings {
    pub greedy_iters: usize,
    pub greedy_seeds: usize,
    pub mcmc_samples: usize,
    pub thin: usize,
}

impl Default for EbmSettings {
    fn default() -> Self {
        Self {
            greedy_iters: 1000,
            greedy_seeds: 10,
            mcmc_samples: 1_000_000,
            thin: 1000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub solvers: Vec<Solver>,
    /// (individuals, features)
    pub sizes: Vec<(usize, usize)>,
    pub sigma: f64,
    pub repeats: usize,
    /// Repeat `r` uses data and model seed `seed + r`.
    pub seed: u64,
    pub model: ModelConfig,
    pub ebm: EbmSettings,
    /// Include mixture fitting and table construction in the timing.
    pub end_to_end: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            solvers: Solver::ALL.to_vec(),
            sizes: vec![(100, 10)],
            sigma: 0.1,
            repeats: 1,
            seed: 0,
            model: ModelConfig::default(),
            ebm: EbmSettings::default(),
            end_to_end: false,
        }
    }
}

/// One solver run. Failed runs carry the error and NaN metrics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub solver: Solver,
    #[serde(rename = "I")]
    pub n_individuals: usize,
    #[serde(rename = "J")]
    pub n_features: usize,
    pub sigma: f64,
    pub seed: u64,
    pub wall_ms: f64,
    pub tau: f64,
    pub frac_correct: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkSummary {
    pub solver: Solver,
    pub n_individuals: usize,
    pub n_features: usize,
    pub median_ms: Option<f64>,
    pub median_tau: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

/// Runs every solver on `repeats` synthetic datasets per size, on a single
/// thread. A failing run is recorded and the sweep continues.
pub fn benchmark(cfg: &BenchmarkConfig) -> Result<Vec<BenchmarkRow>> {
    if cfg.repeats == 0 {
        return Err(VebmError::InvalidArgument(
            "repeats must be at least 1".into(),
        ));
    }
    if cfg.solvers.is_empty() || cfg.sizes.is_empty() {
        return Err(VebmError::InvalidArgument(
            "benchmark needs at least one solver and one size".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| VebmError::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut rows = Vec::new();
        for &(n_i, n_j) in &cfg.sizes {
            for r in 0..cfg.repeats {
                let seed = cfg.seed + r as u64;
                for &solver in &cfg.solvers {
                    let row = match run_one(cfg, solver, n_i, n_j, seed) {
                        Ok((ms, truth, found)) => BenchmarkRow {
                            solver,
                            n_individuals: n_i,
                            n_features: n_j,
                            sigma: cfg.sigma,
                            seed,
                            wall_ms: ms,
                            tau: if n_j >= 2 {
                                kendalls_tau(&truth, &found)?
                            } else {
                                1.0
                            },
                            frac_correct: fraction_correct(&truth, &found)?,
                            error: None,
                        },
                        Err(e) => BenchmarkRow {
                            solver,
                            n_individuals: n_i,
                            n_features: n_j,
                            sigma: cfg.sigma,
                            seed,
                            wall_ms: f64::NAN,
                            tau: f64::NAN,
                            frac_correct: f64::NAN,
                            error: Some(e.to_string()),
                        },
                    };
                    rows.push(row);
                }
            }
        }
        Ok(rows)
    })
}

fn run_one(
    cfg: &BenchmarkConfig,
    solver: Solver,
    n_i: usize,
    n_j: usize,
    seed: u64,
) -> Result<(f64, EventSequence, EventSequence)> {
    let data = generate(&SynthSpec::new(n_i, n_j, cfg.sigma, seed))?;
    let start = Instant::now();
    let mixtures = fit_mixtures(&data.dataset)?;
    let tables = build_tables(&data.dataset, &mixtures)?;
    let start = if cfg.end_to_end {
        start
    } else {
        Instant::now()
    };
    let found = match solver {
        Solver::Vebm => {
            let model = ModelConfig {
                seed,
                ..cfg.model.clone()
            };
            infer(&tables, &model)?.sequence
        }
        Solver::Ebm => {
            let e = &cfg.ebm;
            let mut rng = SeededRng::new(seed);
            ebm_fit(
                &tables,
                e.greedy_iters,
                e.greedy_seeds,
                e.mcmc_samples,
                e.thin,
                &mut rng,
            )?
            .sequence
        }
    };
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((ms, data.sequence, found))
}

/// Medians per solver and size.
pub fn summarise(rows: &[BenchmarkRow]) -> Vec<BenchmarkSummary> {
    let mut keys: Vec<(Solver, usize, usize)> = Vec::new();
    for r in rows {
        let k = (r.solver, r.n_individuals, r.n_features);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(solver, n_i, n_j)| {
            let group: Vec<&BenchmarkRow> = rows
                .iter()
                .filter(|r| r.solver == solver && r.n_individuals == n_i && r.n_features == n_j)
                .collect();
            let ok: Vec<&&BenchmarkRow> = group.iter().filter(|r| r.error.is_none()).collect();
            BenchmarkSummary {
                solver,
                n_individuals: n_i,
                n_features: n_j,
                median_ms: median(&ok.iter().map(|r| r.wall_ms).collect::<Vec<_>>()),
                median_tau: median(&ok.iter().map(|r| r.tau).collect::<Vec<_>>()),
                n_ok: ok.len(),
                n_failed: group.len() - ok.len(),
            }
        })
        .collect()
}
