//! Commands behind the `misogibbs` binary.
//!
//! Every command writes into one output directory and finishes with a
//! `manifest.json` listing what it wrote. Numeric files depend only on the
//! inputs and seeds; wall-clock timings go to `timing.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use misogibbs::collinearity::{Block, BlockDistribution, CollinearityMatrix, PairProbabilities};
use misogibbs::conditionals::ShapeConvention;
use misogibbs::convergence::{scheme_rates, write_matrix, ConvergenceReport};
use misogibbs::datagen::{generate_dataset, DatasetSpec};
use misogibbs::diagnostics::{pilot_maxima, FitReport, RlTargets};
use misogibbs::exec::Execution;
use misogibbs::io::{self, read_dataset, read_truth, write_json};
use misogibbs::kernel::{Hyperparameters, PreparedProblem, RegressionProblem, StableSplineKernel};
use misogibbs::samplers::{
    posterior_summary, run_chains, summarize_range, ChainConfig, ChainTrace, PosteriorSummary,
    SchemeId,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONVERGENCE_FILE: &str = "convergence.json";
/// Sample counts of the fit table.
pub const FIT_SAMPLE_COUNTS: [usize; 4] = [100, 200, 1000, 2000];
pub const PILOT_LENGTH: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Library(#[from] misogibbs::Error),
}

impl CliError {
    /// 2 for configuration and input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Library(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Library(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "misogibbs", version, about = "Bayesian MISO identification with blocked Gibbs samplers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a JSON descriptor.
    Generate(GenerateArgs),
    /// Run one or more chains on a dataset.
    Identify(IdentifyArgs),
    /// Convergence rates of RSGSOB and RSGS at fixed hyperparameters.
    Rate(RateArgs),
    /// Fit and run-length tables over identify runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Dataset descriptor (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the descriptor's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// β used for the exported pair probabilities.
    #[arg(long, default_value_t = 100.0)]
    pub beta: f64,
}

#[derive(Debug, Args, Default)]
pub struct ChainOptions {
    /// Chain settings (JSON); flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "n-mc")]
    pub n_mc: Option<usize>,
    #[arg(long = "n-ob")]
    pub n_ob: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "shape-convention")]
    pub shape_convention: Option<String>,
    /// Stored samples dropped from the summary (default: half).
    #[arg(long = "burn-in")]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Hold λ fixed at this value (requires --sigma2).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Hold σ² fixed at this value (requires --lambda).
    #[arg(long)]
    pub sigma2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Independent chains with seeds seed, seed+1, …; each gets its own
    /// `seed_<s>` subdirectory when more than one.
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[command(flatten)]
    pub chain: ChainOptions,
    /// Skip the binary trace dump.
    #[arg(long)]
    pub no_binary: bool,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to λ̂ of `--summary`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Defaults to σ̂² of `--summary`.
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// An identify `summary.json` providing λ̂ and σ̂².
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long = "n-ob", default_value_t = 0)]
    pub n_ob: usize,
    #[arg(long, default_value_t = 100.0)]
    pub beta: f64,
    /// Defaults to the dataset's α.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Also write the RSGSOB mixture matrix (`mixture.cmix`).
    #[arg(long)]
    pub dump_matrix: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding identify runs (searched recursively).
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub files: Vec<String>,
    #[serde(default)]
    pub details: serde_json::Value,
}

fn write_manifest(dir: &Path, command: &str, files: &[&str], details: serde_json::Value) -> CliResult<()> {
    let mut files: Vec<String> = files.iter().map(|s| s.to_string()).collect();
    files.push(MANIFEST_FILE.into());
    write_json(
        &dir.join(MANIFEST_FILE),
        &Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            files,
            details,
        },
    )?;
    Ok(())
}

/// Reads JSON, reporting the path of the offending field on failure.
pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        CliError::Config(format!("{}: at '{}': {}", path.display(), e.path(), e.inner()))
    })
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a).map(|_| ()),
        Command::Identify(a) => cmd_identify(&a).map(|_| ()),
        Command::Rate(a) => cmd_rate(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
    }
}

fn write_collinearity(dir: &Path, c: &CollinearityMatrix, pairs: &PairProbabilities) -> CliResult<()> {
    let mut w = csv::Writer::from_path(dir.join("collinearity.csv")).map_err(misogibbs::Error::from)?;
    let m = c.m();
    let mut header = vec!["channel".to_string()];
    header.extend((1..=m).map(|k| format!("u{k}")));
    w.write_record(&header).map_err(misogibbs::Error::from)?;
    for i in 0..m {
        let mut row = vec![format!("u{}", i + 1)];
        row.extend((0..m).map(|j| c.get(i, j).to_string()));
        w.write_record(&row).map_err(misogibbs::Error::from)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("pair_probabilities.csv")).map_err(misogibbs::Error::from)?;
    w.write_record(["i", "j", "c_ij", "p_ij", "beta"]).map_err(misogibbs::Error::from)?;
    for (i, j, p) in pairs.iter() {
        w.write_record([
            (i + 1).to_string(),
            (j + 1).to_string(),
            c.get(i, j).to_string(),
            p.to_string(),
            pairs.beta().to_string(),
        ])
        .map_err(misogibbs::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<PathBuf> {
    let mut spec: DatasetSpec = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let data = generate_dataset(&spec)?;
    io::write_dataset(&args.out, &data)?;
    let c = CollinearityMatrix::from_inputs(data.inputs.iter().map(Vec::as_slice).collect());
    let mut files = vec![io::DATA_FILE, io::PROBLEM_FILE, io::TRUTH_FILE];
    if spec.m >= 2 {
        let pairs = PairProbabilities::new(&c, args.beta)?;
        write_collinearity(&args.out, &c, &pairs)?;
        files.extend(["collinearity.csv", "pair_probabilities.csv"]);
    }
    write_manifest(
        &args.out,
        "generate",
        &files,
        serde_json::json!({ "seed": spec.seed, "sigma2": data.sigma2, "tail_ratio": data.tail_ratio }),
    )?;
    info!("dataset written to {}", args.out.display());
    Ok(args.out.clone())
}

/// Optional chain settings as read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub scheme: Option<SchemeId>,
    pub seed: Option<u64>,
    pub n_mc: Option<usize>,
    pub n_burn: Option<usize>,
    pub n_ob: Option<usize>,
    pub beta: Option<f64>,
    pub alpha: Option<f64>,
    pub shape_convention: Option<ShapeConvention>,
    pub thin: Option<usize>,
    pub lambda: Option<f64>,
    pub sigma2: Option<f64>,
}

/// Merges file settings and flags into a chain configuration.
pub fn resolve_chain_config(opts: &ChainOptions, default_alpha: f64) -> CliResult<ChainConfig> {
    let file: ChainFile = match &opts.config {
        Some(p) => read_config(p)?,
        None => ChainFile::default(),
    };
    let scheme = match &opts.scheme {
        Some(s) => s.parse::<SchemeId>().map_err(|e| CliError::Config(e.to_string()))?,
        None => file
            .scheme
            .ok_or_else(|| CliError::Config("no scheme given (use --scheme)".into()))?,
    };
    let n_mc = opts.n_mc.or(file.n_mc).unwrap_or(500);
    let mut cfg = ChainConfig::new(scheme, n_mc)
        .with_seed(opts.seed.or(file.seed).unwrap_or(0))
        .with_n_ob(opts.n_ob.or(file.n_ob).unwrap_or(0))
        .with_alpha(opts.alpha.or(file.alpha).unwrap_or(default_alpha))
        .with_beta(opts.beta.or(file.beta).unwrap_or(100.0))
        .with_thin(opts.thin.or(file.thin).unwrap_or(1));
    if let Some(b) = opts.burn_in.or(file.n_burn) {
        cfg = cfg.with_burn_in(b);
    }
    cfg.shape_convention = match &opts.shape_convention {
        Some(s) => s.parse().map_err(|e: misogibbs::Error| CliError::Config(e.to_string()))?,
        None => file.shape_convention.unwrap_or_default(),
    };
    match (opts.lambda.or(file.lambda), opts.sigma2.or(file.sigma2)) {
        (Some(l), Some(s)) => cfg = cfg.with_fixed_hyperparameters(l, s),
        (None, None) => {}
        _ => return Err(CliError::Config("--lambda and --sigma2 must be given together".into())),
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

/// A dataset ready for sampling.
pub struct LoadedProblem {
    pub problem: PreparedProblem,
    pub alpha: f64,
    pub truth: Option<io::Truth>,
}

pub fn load_problem(dir: &Path) -> CliResult<LoadedProblem> {
    let data = read_dataset(dir).map_err(|e| match e {
        misogibbs::Error::Io(io) => CliError::Config(format!("{}: {io}", dir.display())),
        other => CliError::Library(other),
    })?;
    let p = data.descriptor.p;
    let problem = RegressionProblem::build_any(data.inputs, data.output, p)?;
    Ok(LoadedProblem {
        problem: PreparedProblem::new(problem),
        alpha: data.descriptor.alpha,
        truth: read_truth(dir)?,
    })
}

/// Summary file of one identify run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: SchemeId,
    pub seed: u64,
    pub config: ChainConfig,
    pub stored_samples: usize,
    pub posterior: PosteriorSummary,
    pub fit: Option<FitReport>,
    /// Fit of `Σ_k θ̂_k` against `Σ_k θ_k`, meaningful when all inputs are
    /// identical.
    pub fit_sum: Option<f64>,
}

fn block_distribution(cfg: &ChainConfig, problem: &PreparedProblem) -> CliResult<Option<(CollinearityMatrix, PairProbabilities, BlockDistribution)>> {
    if problem.m() < 2 {
        return Ok(None);
    }
    let c = CollinearityMatrix::from_inputs(problem.inputs());
    let pairs = PairProbabilities::new(&c, cfg.beta)?;
    let dist = BlockDistribution::new(&pairs, cfg.n_ob);
    Ok(Some((c, pairs, dist)))
}

fn sum_of_blocks(set: &misogibbs::ImpulseResponseSet) -> Vec<f64> {
    (0..set.p())
        .map(|l| (0..set.m()).map(|k| set.block(k)[l]).sum())
        .collect()
}

fn write_selection_freq(dir: &Path, trace: &ChainTrace, dist: Option<&BlockDistribution>) -> CliResult<()> {
    let counts: BTreeMap<Block, usize> = trace.selection_counts().into_iter().collect();
    let total: usize = counts.values().sum();
    let mut w = csv::Writer::from_path(dir.join("selection_freq.csv")).map_err(misogibbs::Error::from)?;
    w.write_record(["block", "count", "frequency", "probability"]).map_err(misogibbs::Error::from)?;
    let blocks: Vec<(Block, Option<f64>)> = match dist {
        Some(d) if trace.scheme.sweep() == misogibbs::samplers::Sweep::Overlapping => {
            d.iter().map(|(b, p)| (b, Some(p))).collect()
        }
        _ if trace.scheme.sweep() == misogibbs::samplers::Sweep::RandomSingles => (0..trace.m)
            .map(|k| (Block::Single(k), Some(1.0 / trace.m as f64)))
            .collect(),
        _ => Vec::new(),
    };
    for (b, p) in blocks {
        let n = counts.get(&b).copied().unwrap_or(0);
        let freq = if total > 0 { n as f64 / total as f64 } else { 0.0 };
        w.write_record([
            b.to_string(),
            n.to_string(),
            freq.to_string(),
            p.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(misogibbs::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the configured chains and writes one run directory per chain.
pub fn cmd_identify(args: &IdentifyArgs) -> CliResult<Vec<RunSummary>> {
    if args.chains == 0 {
        return Err(CliError::Config("--chains must be at least 1".into()));
    }
    let loaded = load_problem(&args.data)?;
    let base = resolve_chain_config(&args.chain, loaded.alpha)?;
    let problem = &loaded.problem;
    let kernel = StableSplineKernel::new(base.alpha, problem.p())?;
    let blocks = block_distribution(&base, problem)?;
    let dist = blocks.as_ref().map(|b| &b.2);

    let configs: Vec<ChainConfig> = (0..args.chains as u64)
        .map(|k| base.clone().with_seed(base.seed + k))
        .collect();
    let started = Instant::now();
    let traces = run_chains(&configs, problem, &kernel, dist, Execution::Parallel);

    let truth = match &loaded.truth {
        Some(t) => Some((t.impulse_responses()?, t.collinear_channels.clone())),
        None => None,
    };
    let mut summaries = Vec::with_capacity(configs.len());
    for (cfg, trace) in configs.iter().zip(traces) {
        let trace = trace?;
        let dir = if args.chains == 1 {
            args.out.clone()
        } else {
            args.out.join(format!("seed_{}", cfg.seed))
        };
        fs::create_dir_all(&dir)?;
        let posterior = posterior_summary(&trace, cfg.n_burn / cfg.thin)?;
        let (fit, fit_sum) = match &truth {
            Some((t, col)) => {
                let est = posterior.mean_set();
                let fit = FitReport::new(t, &est, col)?;
                let fit_sum = misogibbs::fit(&sum_of_blocks(t), &sum_of_blocks(&est)).ok();
                (Some(fit), fit_sum)
            }
            None => (None, None),
        };
        let summary = RunSummary {
            scheme: cfg.scheme,
            seed: cfg.seed,
            config: cfg.clone(),
            stored_samples: trace.len(),
            posterior,
            fit,
            fit_sum,
        };
        io::write_trace_csv(&dir.join("trace.csv"), &trace)?;
        io::write_selections_csv(&dir.join("selections.csv"), &trace.selections)?;
        write_selection_freq(&dir, &trace, dist)?;
        write_json(&dir.join(SUMMARY_FILE), &summary)?;
        let mut files = vec!["trace.csv", "selections.csv", "selection_freq.csv", SUMMARY_FILE];
        if !args.no_binary {
            io::write_trace_binary(&dir.join("trace.bin"), &trace, cfg)?;
            files.extend(["trace.bin", "trace.bin.json"]);
        }
        if let Some((c, pairs, _)) = &blocks {
            write_collinearity(&dir, c, pairs)?;
            files.extend(["collinearity.csv", "pair_probabilities.csv"]);
        }
        write_json(&dir.join("timing.json"), &serde_json::json!({ "chain_secs": trace.elapsed_secs }))?;
        files.push("timing.json");
        write_manifest(
            &dir,
            "identify",
            &files,
            serde_json::json!({ "data": args.data, "scheme": cfg.scheme, "seed": cfg.seed }),
        )?;
        summaries.push(summary);
    }
    info!(
        "{} chain(s) of {} finished in {:.2}s",
        configs.len(),
        base.scheme,
        started.elapsed().as_secs_f64()
    );
    Ok(summaries)
}

pub fn cmd_rate(args: &RateArgs) -> CliResult<ConvergenceReport> {
    let loaded = load_problem(&args.data)?;
    let problem = &loaded.problem;
    let from_summary: Option<RunSummary> = match &args.summary {
        Some(p) => Some(read_config(p)?),
        None => None,
    };
    let lambda = args
        .lambda
        .or(from_summary.as_ref().map(|s| s.posterior.lambda_hat()))
        .ok_or_else(|| CliError::Config("give --lambda or --summary".into()))?;
    let sigma2 = args
        .sigma2
        .or(from_summary.as_ref().map(|s| s.posterior.sigma2_mean))
        .ok_or_else(|| CliError::Config("give --sigma2 or --summary".into()))?;
    let hyper = Hyperparameters::common(lambda, sigma2).map_err(|e| CliError::Config(e.to_string()))?;
    let alpha = args.alpha.unwrap_or(loaded.alpha);
    let kernel = StableSplineKernel::new(alpha, problem.p()).map_err(|e| CliError::Config(e.to_string()))?;
    let dist = if problem.m() >= 2 {
        let c = CollinearityMatrix::from_inputs(problem.inputs());
        BlockDistribution::new(&PairProbabilities::new(&c, args.beta)?, args.n_ob)
    } else {
        BlockDistribution::uniform_singles(1)
    };
    let started = Instant::now();
    let report = scheme_rates(problem, &kernel, &hyper, &dist, Some(args.beta), Execution::Parallel)?;
    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join(CONVERGENCE_FILE), &report)?;
    let mut files = vec![CONVERGENCE_FILE];
    if args.dump_matrix {
        if let Some(mix) = &report.mixture {
            let f = fs::File::create(args.out.join("mixture.cmix"))?;
            write_matrix(std::io::BufWriter::new(f), mix)?;
            files.push("mixture.cmix");
        }
    }
    write_manifest(
        &args.out,
        "rate",
        &files,
        serde_json::json!({ "data": args.data, "secs": started.elapsed().as_secs_f64() }),
    )?;
    Ok(report)
}

/// One row of the fit table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FitRow {
    pub scheme: SchemeId,
    pub seed: u64,
    pub samples: usize,
    pub fit_all: f64,
    pub fit_col: Option<f64>,
    pub fit_ind: Option<f64>,
}

/// One row of the run-length table: maxima over the collinear
/// coefficients of one pilot.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunLengthRow {
    pub scheme: SchemeId,
    pub seed: u64,
    pub max_burn_in: usize,
    pub max_total: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub runs: usize,
    pub fits: Vec<FitRow>,
    pub run_lengths: Vec<RunLengthRow>,
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> CliResult<()> {
    if dir.join(MANIFEST_FILE).exists() && dir.join("trace.bin").exists() && dir.join(SUMMARY_FILE).exists() {
        out.push(dir.to_path_buf());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for e in entries {
        find_runs(&e, out)?;
    }
    Ok(())
}

/// Posterior-mean fits after the first `k` stored samples (no burn-in).
pub fn fit_rows(trace: &ChainTrace, seed: u64, truth: &io::Truth, counts: &[usize]) -> CliResult<Vec<FitRow>> {
    let t = truth.impulse_responses()?;
    let mut rows = Vec::new();
    for &k in counts.iter().filter(|&&k| k <= trace.len()) {
        let est = summarize_range(trace, 0, k)?.mean_set();
        let f = FitReport::new(&t, &est, &truth.collinear_channels)?;
        rows.push(FitRow {
            scheme: trace.scheme,
            seed,
            samples: k,
            fit_all: f.fit_all,
            fit_col: f.fit_col,
            fit_ind: f.fit_ind,
        });
    }
    Ok(rows)
}

/// Stacked indices of every coefficient of the given channels.
pub fn channel_coefficients(channels: &[usize], p: usize) -> Vec<usize> {
    channels.iter().flat_map(|&k| k * p..(k + 1) * p).collect()
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<Report> {
    if !args.run.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", args.run.display())));
    }
    let mut runs = Vec::new();
    find_runs(&args.run, &mut runs)?;
    if runs.is_empty() {
        return Err(CliError::Config(format!("no identify runs under {}", args.run.display())));
    }
    let mut fits = Vec::new();
    let mut run_lengths = Vec::new();
    for dir in &runs {
        let summary: RunSummary = read_config(&dir.join(SUMMARY_FILE))?;
        let (trace, _) = io::read_trace_binary(&dir.join("trace.bin"))?;
        let data_dir: Option<PathBuf> = read_config::<Manifest>(&dir.join(MANIFEST_FILE))?
            .details
            .get("data")
            .and_then(|v| v.as_str())
            .map(PathBuf::from);
        let truth = match data_dir {
            Some(d) => read_truth(&d)?,
            None => None,
        };
        let Some(truth) = truth else { continue };
        fits.extend(fit_rows(&trace, summary.seed, &truth, &FIT_SAMPLE_COUNTS)?);
        let monitored = if truth.collinear_channels.is_empty() {
            (0..trace.dim()).collect()
        } else {
            channel_coefficients(&truth.collinear_channels, trace.p)
        };
        if trace.len() >= PILOT_LENGTH {
            let pm = pilot_maxima(
                std::slice::from_ref(&trace),
                &monitored,
                PILOT_LENGTH,
                &RlTargets::for_pilots(),
                Execution::Parallel,
            )?;
            run_lengths.push(RunLengthRow {
                scheme: summary.scheme,
                seed: summary.seed,
                max_burn_in: pm[0].max_burn_in,
                max_total: pm[0].max_total,
                skipped: pm[0].skipped,
            });
        }
    }
    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    fs::create_dir_all(&out)?;
    let mut w = csv::Writer::from_path(out.join("fit_table.csv")).map_err(misogibbs::Error::from)?;
    for r in &fits {
        w.serialize(r).map_err(misogibbs::Error::from)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(out.join("rl_table.csv")).map_err(misogibbs::Error::from)?;
    for r in &run_lengths {
        w.serialize(r).map_err(misogibbs::Error::from)?;
    }
    w.flush()?;
    let report = Report {
        runs: runs.len(),
        fits,
        run_lengths,
    };
    write_json(&out.join("report.json"), &report)?;
    write_manifest(&out, "report", &["fit_table.csv", "rl_table.csv", "report.json"], serde_json::json!({ "runs": runs.len() }))?;
    Ok(report)
}
