use std::path::{Path, PathBuf};

use clap::Args;
use serde::de::DeserializeOwned;
use serde::Serialize;
use vebm::eval::{benchmark, max_off_diagonal, summarise, BenchmarkConfig, EbmSettings, Solver};
use vebm::{
    fraction_correct, generate, kendalls_tau, positional_variance_diagram,
    sample_positional_variance, validate_dataset, ModelConfig, SeededRng, SynthSpec,
};

use crate::config::Config;
use crate::failure::Failure;
use crate::files::{self, ModelFile, Table, Truth};
use crate::Common;

/// Model hyperparameter flags.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    /// Posterior temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Prior temperature.
    #[arg(long)]
    tau_prior: Option<f64>,
    /// Sinkhorn passes.
    #[arg(long)]
    sinkhorn_iters: Option<usize>,
    /// Optimiser steps.
    #[arg(long)]
    opt_iters: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Draw Gumbel noise every optimiser step.
    #[arg(long)]
    gumbel: bool,
    /// Score initialisation: zero or event_frequency.
    #[arg(long)]
    init: Option<String>,
    /// Sequence decoder: hungarian or barycentre.
    #[arg(long)]
    decoder: Option<String>,
    /// Soft likelihood: density_mixing or log_mixing.
    #[arg(long)]
    relaxation: Option<String>,
}

/// Parses a snake_case enum name through its serde representation.
fn parse_enum<T: DeserializeOwned>(what: &str, s: &str) -> Result<T, Failure> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
        .map_err(|_| Failure::usage(format!("unknown {what} '{s}'")))
}

/// Config file, output directory and thread pool for one command.
struct Session {
    config: Config,
    out_dir: PathBuf,
    seed: Option<u64>,
}

impl Session {
    fn start(common: &Common) -> Result<Self, Failure> {
        let config = match &common.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let out_dir: PathBuf =
            config.resolve(common.out_dir.clone(), "out_dir", PathBuf::from("."))?;
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| Failure::io(format!("cannot create {}: {e}", out_dir.display())))?;
        let threads = match common.threads {
            Some(n) => Some(n),
            None => config.get::<usize>("threads")?,
        };
        if let Some(n) = threads {
            if n == 0 {
                return Err(Failure::usage("--threads must be at least 1"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Failure::usage(format!("thread pool: {e}")))?;
        }
        let seed = match common.seed {
            Some(v) => Some(v),
            None => config.get::<u64>("seed")?,
        };
        Ok(Self {
            config,
            out_dir,
            seed,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        files::out_path(&self.out_dir, name)
    }

    fn model_config(&self, f: &ModelFlags) -> Result<ModelConfig, Failure> {
        let d = ModelConfig::default();
        let c = &self.config;
        let named = |flag: &Option<String>, key: &'static str| -> Result<Option<String>, Failure> {
            match flag {
                Some(v) => Ok(Some(v.clone())),
                None => c.get::<String>(key),
            }
        };
        let cfg = ModelConfig {
            tau: c.resolve(f.tau, "tau", d.tau)?,
            tau_prior: c.resolve(f.tau_prior, "tau_prior", d.tau_prior)?,
            n_s: c.resolve(f.sinkhorn_iters, "n_s", d.n_s)?,
            n_opt: c.resolve(f.opt_iters, "n_opt", d.n_opt)?,
            learning_rate: c.resolve(f.lr, "learning_rate", d.learning_rate)?,
            use_gumbel_noise: c.resolve(f.gumbel.then_some(true), "use_gumbel_noise", false)?,
            seed: self.seed.unwrap_or(d.seed),
            init: match named(&f.init, "init")? {
                Some(s) => parse_enum("init", &s)?,
                None => d.init,
            },
            decoder: match named(&f.decoder, "decoder")? {
                Some(s) => parse_enum("decoder", &s)?,
                None => d.decoder,
            },
            relaxation: match named(&f.relaxation, "relaxation")? {
                Some(s) => parse_enum("relaxation", &s)?,
                None => d.relaxation,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(path: &Path) {
    println!("wrote {}", path.display());
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    individuals: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    /// Measurement noise standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    control_fraction: Option<f64>,
    /// Probability that a cell is left empty.
    #[arg(long)]
    missing_fraction: Option<f64>,
}

pub fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let s = Session::start(&a.common)?;
    let d = SynthSpec::default();
    let c = &s.config;
    let spec = SynthSpec {
        n_individuals: c.resolve(a.individuals, "individuals", d.n_individuals)?,
        n_features: c.resolve(a.features, "features", d.n_features)?,
        sigma: c.resolve(a.sigma, "sigma", d.sigma)?,
        control_fraction: c.resolve(a.control_fraction, "control_fraction", d.control_fraction)?,
        missing_fraction: c.resolve(a.missing_fraction, "missing_fraction", d.missing_fraction)?,
        seed: s.seed.unwrap_or(d.seed),
        ..d
    };
    let g = generate(&spec)?;
    let width = g.stages.len().to_string().len();
    let ids: Vec<String> = (0..g.stages.len())
        .map(|i| format!("s{i:0width$}"))
        .collect();

    let data = s.path(files::DATA_FILE);
    files::write_table(&data, &ids, &g.dataset)?;
    report(&data);
    let truth = s.path(files::TRUTH_FILE);
    files::write_json(
        &truth,
        &Truth {
            sequence: g.sequence.order().to_vec(),
            feature_names: g.dataset.feature_names().to_vec(),
            stages: g.stages.clone(),
            patient_means: g.patient_means.clone(),
        },
    )?;
    report(&truth);
    let echo = s.path(files::SPEC_FILE);
    files::write_json(&echo, &spec)?;
    report(&echo);
    Ok(())
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    /// Data CSV: id,label,<features...>
    #[arg(long)]
    data: PathBuf,
}

pub fn fit(a: FitArgs) -> Result<(), Failure> {
    let s = Session::start(&a.common)?;
    let cfg = s.model_config(&a.model)?;
    let Table { data, .. } = files::read_table(&a.data)?;
    validate_dataset(&data)?;
    let fm = vebm::fit(&data, &cfg)?;
    let names = data.feature_names();

    let model = s.path(files::MODEL_FILE);
    files::write_json(&model, &ModelFile::from_fit(&fm, names))?;
    report(&model);
    let seq = s.path(files::SEQUENCE_FILE);
    files::write_sequence(&seq, &fm.sequence, names)?;
    report(&seq);
    if let Some(last) = fm.elbo_trace.last() {
        println!("final ELBO {last:.6}");
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct StageArgs {
    #[command(flatten)]
    common: Common,
    /// Model JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// Data CSV whose feature columns match the model's.
    #[arg(long)]
    data: PathBuf,
}

pub fn stage(a: StageArgs) -> Result<(), Failure> {
    let s = Session::start(&a.common)?;
    let mf: ModelFile = files::read_json(&a.model)?;
    let names = mf.feature_names.clone();
    let fm = mf.into_fit(&a.model)?;
    let Table { ids, data } = files::read_table(&a.data)?;

    let have = data.feature_names();
    if have.len() != names.len() {
        let missing: Vec<&str> = names
            .iter()
            .filter(|n| !have.contains(n))
            .map(String::as_str)
            .collect();
        let extra: Vec<&str> = have
            .iter()
            .filter(|n| !names.contains(n))
            .map(String::as_str)
            .collect();
        return Err(vebm::VebmError::FeatureMismatch(format!(
            "model has {} features, data has {}; missing [{}], unexpected [{}]",
            names.len(),
            have.len(),
            missing.join(", "),
            extra.join(", ")
        ))
        .into());
    }
    // align data columns to the model's feature order by name
    let mut perm = Vec::with_capacity(names.len());
    let mut missing = Vec::new();
    for n in &names {
        match have.iter().position(|h| h == n) {
            Some(j) => perm.push(j),
            None => missing.push(n.as_str()),
        }
    }
    if !missing.is_empty() {
        let extra: Vec<&str> = have
            .iter()
            .filter(|n| !names.contains(n))
            .map(String::as_str)
            .collect();
        return Err(vebm::VebmError::FeatureMismatch(format!(
            "missing [{}], unexpected [{}]",
            missing.join(", "),
            extra.join(", ")
        ))
        .into());
    }
    let data = data.permute_features(&perm)?;
    let posts = vebm::stage(&fm, &data)?;

    let out = s.path(files::STAGES_FILE);
    let mut w = files::csv_writer(&out)?;
    let n = fm.n_events();
    let mut header = vec!["id".to_string(), "ml_stage".to_string()];
    header.extend((0..=n).map(|k| format!("p{k}")));
    w.write_record(&header)
        .map_err(|e| files::io_err(&out, e))?;
    for (id, p) in ids.iter().zip(&posts) {
        let mut row = vec![id.clone(), p.ml_stage.to_string()];
        row.extend(p.probabilities.iter().map(|&v| files::fmt_f64(v)));
        w.write_record(&row).map_err(|e| files::io_err(&out, e))?;
    }
    w.flush().map_err(|e| files::io_err(&out, e))?;
    report(&out);
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model_flags: ModelFlags,
    /// Truth JSON written by `simulate`, or any sequence file.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Inferred sequence: sequence CSV, model JSON or truth JSON.
    #[arg(long)]
    inferred: Option<PathBuf>,
    /// Model JSON to draw a positional-variance table from.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Gumbel-Sinkhorn draws for the positional-variance table.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Run the timing and accuracy benchmark.
    #[arg(long)]
    benchmark: bool,
    /// Comma-separated IxJ sizes, e.g. 100x10,1000x100.
    #[arg(long, default_value = "100x10")]
    sizes: String,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Comma-separated solver names.
    #[arg(long, default_value = "vebm,ebm")]
    solvers: String,
    /// Benchmark noise level.
    #[arg(long)]
    sigma: Option<f64>,
    /// Time mixture fitting as well as inference.
    #[arg(long)]
    end_to_end: bool,
    #[arg(long)]
    greedy_iters: Option<usize>,
    #[arg(long)]
    greedy_seeds: Option<usize>,
    #[arg(long)]
    mcmc_samples: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
}

#[derive(Serialize)]
struct Metrics {
    n_events: usize,
    kendalls_tau: f64,
    frac_correct: f64,
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let s = Session::start(&a.common)?;
    let mut did = false;
    if let Some(inferred) = &a.inferred {
        let truth = a
            .truth
            .as_ref()
            .ok_or_else(|| Failure::usage("--inferred needs --truth"))?;
        let t = files::read_sequence(truth)?;
        let f = files::read_sequence(inferred)?;
        let m = Metrics {
            n_events: t.len(),
            kendalls_tau: kendalls_tau(&t, &f)?,
            frac_correct: fraction_correct(&t, &f)?,
        };
        println!("kendalls_tau {}", m.kendalls_tau);
        println!("frac_correct {}", m.frac_correct);
        let out = s.path(files::METRICS_FILE);
        files::write_json(&out, &m)?;
        report(&out);
        did = true;
    }
    if let Some(model) = &a.model {
        positional_variance(&s, &a, model)?;
        did = true;
    }
    if a.benchmark {
        run_benchmark(&s, &a)?;
        did = true;
    }
    if !did {
        return Err(Failure::usage(
            "evaluate needs --truth with --inferred, --model, or --benchmark",
        ));
    }
    Ok(())
}

fn positional_variance(s: &Session, a: &EvaluateArgs, model: &Path) -> Result<(), Failure> {
    let mf: ModelFile = files::read_json(model)?;
    let names = mf.feature_names.clone();
    let fm = mf.into_fit(model)?;
    let truth = a.truth.as_deref().map(files::read_sequence).transpose()?;
    let mut rng = SeededRng::new(s.seed.unwrap_or(0));
    let pv = sample_positional_variance(&fm, &fm.config, a.samples, &mut rng)?;
    let cells = positional_variance_diagram(&pv.frequencies(), &fm.sequence, truth.as_ref())?;

    let out = s.path(files::VARIANCE_FILE);
    let mut w = files::csv_writer(&out)?;
    w.write_record(["row", "event", "feature", "position", "frequency", "truth"])
        .map_err(|e| files::io_err(&out, e))?;
    for c in &cells {
        w.write_record([
            c.row.to_string(),
            c.event.to_string(),
            names[c.event].clone(),
            c.position.to_string(),
            files::fmt_f64(c.frequency),
            c.truth.to_string(),
        ])
        .map_err(|e| files::io_err(&out, e))?;
    }
    w.flush().map_err(|e| files::io_err(&out, e))?;
    println!("max off-diagonal frequency {}", max_off_diagonal(&cells));
    report(&out);
    Ok(())
}

fn parse_sizes(s: &str) -> Result<Vec<(usize, usize)>, Failure> {
    s.split(',')
        .map(|part| {
            let part = part.trim();
            let (i, j) = part
                .split_once(['x', 'X'])
                .ok_or_else(|| Failure::usage(format!("size '{part}' is not IxJ")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Failure::usage(format!("size '{part}' is not IxJ")))
            };
            Ok((num(i)?, num(j)?))
        })
        .collect()
}

fn run_benchmark(s: &Session, a: &EvaluateArgs) -> Result<(), Failure> {
    let solvers = a
        .solvers
        .split(',')
        .map(|v| {
            v.parse::<Solver>()
                .map_err(|e| Failure::usage(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let d = BenchmarkConfig::default();
    let e = EbmSettings::default();
    let cfg = BenchmarkConfig {
        solvers,
        sizes: parse_sizes(&a.sizes)?,
        sigma: s.config.resolve(a.sigma, "sigma", d.sigma)?,
        repeats: a.repeats,
        seed: s.seed.unwrap_or(d.seed),
        model: s.model_config(&a.model_flags)?,
        ebm: EbmSettings {
            greedy_iters: a.greedy_iters.unwrap_or(e.greedy_iters),
            greedy_seeds: a.greedy_seeds.unwrap_or(e.greedy_seeds),
            mcmc_samples: a.mcmc_samples.unwrap_or(e.mcmc_samples),
            thin: a.thin.unwrap_or(e.thin),
        },
        end_to_end: a.end_to_end,
    };
    let rows = benchmark(&cfg)?;
    let out = s.path(files::BENCHMARK_FILE);
    let mut w = files::csv_writer(&out)?;
    for r in &rows {
        w.serialize(r).map_err(|e| files::io_err(&out, e))?;
    }
    w.flush().map_err(|e| files::io_err(&out, e))?;
    println!("solver\tI\tJ\tmedian_ms\tmedian_tau\tok\tfailed");
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    for m in summarise(&rows) {
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.solver,
            m.n_individuals,
            m.n_features,
            show(m.median_ms),
            show(m.median_tau),
            m.n_ok,
            m.n_failed
        );
    }
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "warning: {} at {}x{} seed {} failed: {}",
            r.solver,
            r.n_individuals,
            r.n_features,
            r.seed,
            r.error.as_deref().unwrap_or("")
        );
    }
    report(&out);
    Ok(())
}
