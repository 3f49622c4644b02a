//! The six Gibbs schemes and posterior summaries.
//!
//! | scheme    | scale factors | θ sweep per iteration                          |
//! |-----------|---------------|------------------------------------------------|
//! | `GS`      | common        | θ_1 … θ_m in order                             |
//! | `GSd`     | per block     | θ_1 … θ_m in order                             |
//! | `RSGS`    | common        | `m + n_OB` uniformly chosen single blocks      |
//! | `RSGSd`   | per block     | `m + n_OB` uniformly chosen single blocks      |
//! | `RSGSOB`  | common        | `m + n_OB` blocks drawn from `P_M`             |
//! | `RSGSOBd` | per block     | `m + n_OB` blocks drawn from `P_M`             |
//!
//! Each iteration first draws the scale factor(s) given the previous θ,
//! then σ² given the new scale and the previous θ, then runs the θ sweep.
//! Every block move is an exact full-conditional draw, so there is no
//! accept/reject step anywhere.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::DVector;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::collinearity::{Block, BlockDistribution};
use crate::conditionals::{
    lambda_common_conditional, lambda_k_conditional, sigma2_conditional, theta_ij_conditional,
    theta_k_conditional, InverseGammaLaw, ShapeConvention,
};
use crate::exec::{self, Execution};
use crate::kernel::{
    Hyperparameters, ImpulseResponseSet, PreparedProblem, ScaleFactors, StableSplineKernel,
};
use crate::linalg::quantile_sorted;
use crate::{ChainRng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeId {
    #[serde(rename = "GS")]
    Gs,
    #[serde(rename = "GSd")]
    Gsd,
    #[serde(rename = "RSGS")]
    Rsgs,
    #[serde(rename = "RSGSd")]
    Rsgsd,
    #[serde(rename = "RSGSOB")]
    Rsgsob,
    #[serde(rename = "RSGSOBd")]
    Rsgsobd,
}

/// How the θ blocks are visited inside one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    Systematic,
    RandomSingles,
    Overlapping,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::Gs,
        SchemeId::Gsd,
        SchemeId::Rsgs,
        SchemeId::Rsgsd,
        SchemeId::Rsgsob,
        SchemeId::Rsgsobd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::Gs => "GS",
            SchemeId::Gsd => "GSd",
            SchemeId::Rsgs => "RSGS",
            SchemeId::Rsgsd => "RSGSd",
            SchemeId::Rsgsob => "RSGSOB",
            SchemeId::Rsgsobd => "RSGSOBd",
        }
    }

    /// The "d" variants carry one scale factor per impulse response.
    pub fn per_block_scales(self) -> bool {
        matches!(self, SchemeId::Gsd | SchemeId::Rsgsd | SchemeId::Rsgsobd)
    }

    pub fn sweep(self) -> Sweep {
        match self {
            SchemeId::Gs | SchemeId::Gsd => Sweep::Systematic,
            SchemeId::Rsgs | SchemeId::Rsgsd => Sweep::RandomSingles,
            SchemeId::Rsgsob | SchemeId::Rsgsobd => Sweep::Overlapping,
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Domain(format!(
                    "unknown scheme '{s}' (expected one of gs, gsd, rsgs, rsgsd, rsgsob, rsgsobd)"
                ))
            })
    }
}

/// Whether the hyperparameters are sampled or held at their initial values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperparameterMode {
    #[default]
    Sample,
    Fixed,
}

/// What to do when a scale-factor or noise conditional has zero scale
/// (θ exactly zero, or an exact fit).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// Keep the current value for this iteration.
    #[default]
    Retain,
    /// Draw from the law with its scale floored at `1e-300`.
    Floor,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialState {
    /// Stacked θ⁽⁰⁾; zeros when absent.
    pub theta: Option<Vec<f64>>,
    /// λ⁽⁰⁾ for every scale factor; 1 when absent.
    pub lambda: Option<f64>,
    /// σ²⁽⁰⁾; the sample variance of Y when absent.
    pub sigma2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub scheme: SchemeId,
    pub n_mc: usize,
    /// Burn-in iterations; `n_burn / thin` stored samples.
    pub n_burn: usize,
    pub n_ob: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    #[serde(default)]
    pub shape_convention: ShapeConvention,
    #[serde(default)]
    pub init: InitialState,
    #[serde(default)]
    pub hyperparameters: HyperparameterMode,
    #[serde(default)]
    pub degenerate: DegeneratePolicy,
    /// Keep one state every `thin` iterations.
    #[serde(default = "one")]
    pub thin: usize,
}

fn one() -> usize {
    1
}

impl ChainConfig {
    /// Defaults: half the run as burn-in, `n_OB = 0`, `α = 0.9`, `β = 100`.
    pub fn new(scheme: SchemeId, n_mc: usize) -> Self {
        Self {
            scheme,
            n_mc,
            n_burn: n_mc / 2,
            n_ob: 0,
            alpha: 0.9,
            beta: 100.0,
            seed: 0,
            shape_convention: ShapeConvention::Pooled,
            init: InitialState::default(),
            hyperparameters: HyperparameterMode::Sample,
            degenerate: DegeneratePolicy::Retain,
            thin: 1,
        }
    }

    pub fn with_n_ob(mut self, n_ob: usize) -> Self {
        self.n_ob = n_ob;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_burn_in(mut self, n_burn: usize) -> Self {
        self.n_burn = n_burn;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_thin(mut self, thin: usize) -> Self {
        self.thin = thin;
        self
    }

    /// Holds `(λ, σ²)` fixed at the given values for the whole run.
    pub fn with_fixed_hyperparameters(mut self, lambda: f64, sigma2: f64) -> Self {
        self.hyperparameters = HyperparameterMode::Fixed;
        self.init.lambda = Some(lambda);
        self.init.sigma2 = Some(sigma2);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 {
            return Err(Error::Domain("n_mc must be positive".into()));
        }
        if self.n_burn >= self.n_mc {
            return Err(Error::Domain(format!(
                "burn-in {} must be shorter than the run {}",
                self.n_burn, self.n_mc
            )));
        }
        if self.thin == 0 {
            return Err(Error::Domain("thinning factor must be positive".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Domain(format!("beta must be positive, got {}", self.beta)));
        }
        if let Some(l) = self.init.lambda {
            if !(l > 0.0) {
                return Err(Error::Domain(format!("initial lambda must be positive, got {l}")));
            }
        }
        if let Some(s) = self.init.sigma2 {
            if !(s > 0.0) {
                return Err(Error::Domain(format!("initial sigma2 must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// One state of the chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub theta: ImpulseResponseSet,
    pub hyper: Hyperparameters,
    pub iteration: usize,
}

/// One block choice of a random sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub iteration: usize,
    pub substep: usize,
    pub block: Block,
}

/// Stored states of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    pub scheme: SchemeId,
    pub m: usize,
    pub p: usize,
    pub thin: usize,
    /// Number of scale factors per state (1 or m).
    pub n_scales: usize,
    pub iterations: Vec<usize>,
    /// Row-major, one stacked θ (length `mp`) per stored state.
    pub theta: Vec<f64>,
    pub scales: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub selections: Vec<Selection>,
    pub elapsed_secs: f64,
}

impl ChainTrace {
    fn empty(scheme: SchemeId, m: usize, p: usize, thin: usize, n_scales: usize) -> Self {
        Self {
            scheme,
            m,
            p,
            thin,
            n_scales,
            iterations: Vec::new(),
            theta: Vec::new(),
            scales: Vec::new(),
            sigma2: Vec::new(),
            selections: Vec::new(),
            elapsed_secs: 0.0,
        }
    }

    fn push(&mut self, state: &ChainState) {
        self.iterations.push(state.iteration);
        self.theta.extend(state.theta.stacked().iter());
        match &state.hyper.scale {
            ScaleFactors::Common(l) => self.scales.push(*l),
            ScaleFactors::PerBlock(ls) => self.scales.extend(ls),
        }
        self.sigma2.push(state.hyper.sigma2);
    }

    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.m * self.p
    }

    pub fn theta_row(&self, s: usize) -> &[f64] {
        let d = self.dim();
        &self.theta[s * d..(s + 1) * d]
    }

    pub fn scales_row(&self, s: usize) -> &[f64] {
        &self.scales[s * self.n_scales..(s + 1) * self.n_scales]
    }

    /// Values of stacked coefficient `idx` across stored states.
    pub fn coefficient_series(&self, idx: usize) -> Vec<f64> {
        (0..self.len()).map(|s| self.theta_row(s)[idx]).collect()
    }

    /// Values of a linear functional `w'θ` across stored states.
    pub fn functional_series(&self, weights: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|s| self.theta_row(s).iter().zip(weights).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// How often each block was picked by the random sweep, sorted by block.
    pub fn selection_counts(&self) -> Vec<(Block, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for s in &self.selections {
            *counts.entry(s.block).or_insert(0usize) += 1;
        }
        counts.into_iter().collect()
    }

    /// Copy restricted to the first `count` stored states.
    pub fn truncated(&self, count: usize) -> Self {
        let count = count.min(self.len());
        let d = self.dim();
        let last_iter = if count == 0 { 0 } else { self.iterations[count - 1] };
        Self {
            iterations: self.iterations[..count].to_vec(),
            theta: self.theta[..count * d].to_vec(),
            scales: self.scales[..count * self.n_scales].to_vec(),
            sigma2: self.sigma2[..count].to_vec(),
            selections: self
                .selections
                .iter()
                .copied()
                .filter(|s| s.iteration <= last_iter)
                .collect(),
            ..self.clone()
        }
    }
}

/// A running chain. [`run_chain`] drives one to completion; stepping it
/// manually is useful for long runs that only need streaming statistics.
pub struct Chain<'a> {
    config: ChainConfig,
    problem: &'a PreparedProblem,
    kernel: &'a StableSplineKernel,
    blocks: Option<BlockDistribution>,
    rng: ChainRng,
    state: ChainState,
    selections: Vec<Selection>,
    record_selections: bool,
    warned_degenerate: bool,
}

impl<'a> Chain<'a> {
    pub fn new(
        config: &ChainConfig,
        problem: &'a PreparedProblem,
        kernel: &'a StableSplineKernel,
        dist: Option<&BlockDistribution>,
    ) -> Result<Self> {
        config.validate()?;
        let m = problem.m();
        let p = problem.p();
        if kernel.order() != p {
            return Err(Error::Dimension(format!(
                "kernel order {} differs from FIR order {p}",
                kernel.order()
            )));
        }
        if (kernel.alpha() - config.alpha).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "kernel built with alpha={} but the chain is configured with alpha={}",
                kernel.alpha(),
                config.alpha
            )));
        }
        let blocks = match config.scheme.sweep() {
            Sweep::Systematic => None,
            Sweep::RandomSingles => Some(BlockDistribution::uniform_singles(m)),
            Sweep::Overlapping => {
                let d = dist.ok_or_else(|| {
                    Error::Domain(format!(
                        "{} needs a block distribution",
                        config.scheme.name()
                    ))
                })?;
                if d.m() != m || d.n_ob() != config.n_ob {
                    return Err(Error::Dimension(format!(
                        "block distribution is for m={}, n_OB={}; chain has m={m}, n_OB={}",
                        d.m(),
                        d.n_ob(),
                        config.n_ob
                    )));
                }
                Some(d.clone())
            }
        };

        let theta = match &config.init.theta {
            Some(v) => ImpulseResponseSet::from_stacked(m, p, DVector::from_column_slice(v))?,
            None => ImpulseResponseSet::zeros(m, p),
        };
        let lambda0 = config.init.lambda.unwrap_or(1.0);
        let scale = if config.scheme.per_block_scales() {
            ScaleFactors::PerBlock(vec![lambda0; m])
        } else {
            ScaleFactors::Common(lambda0)
        };
        let sigma2 = match config.init.sigma2 {
            Some(s) => s,
            None => {
                let y = problem.problem().output();
                let var = if y.len() > 1 { y.variance() * y.len() as f64 / (y.len() - 1) as f64 } else { 0.0 };
                if var > 0.0 {
                    var
                } else {
                    1.0
                }
            }
        };
        let state = ChainState {
            theta,
            hyper: Hyperparameters::new(scale, sigma2)?,
            iteration: 0,
        };
        Ok(Self {
            config: config.clone(),
            problem,
            kernel,
            blocks,
            rng: ChainRng::seed_from_u64(config.seed),
            state,
            selections: Vec::new(),
            record_selections: true,
            warned_degenerate: false,
        })
    }

    /// Stop logging block choices (for very long runs).
    pub fn without_selection_log(mut self) -> Self {
        self.record_selections = false;
        self
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn selections(&self) -> &[Selection] {
        &self.selections
    }

    /// One full iteration `t → t+1`.
    pub fn step(&mut self) -> Result<()> {
        let t = self.state.iteration + 1;
        self.iterate(t).map_err(|e| e.at_iteration(t))?;
        self.state.iteration = t;
        Ok(())
    }

    fn iterate(&mut self, t: usize) -> Result<()> {
        if self.config.hyperparameters == HyperparameterMode::Sample {
            self.update_scales()?;
            self.update_sigma2()?;
        }
        let m = self.problem.m();
        match self.config.scheme.sweep() {
            Sweep::Systematic => {
                for k in 0..m {
                    self.update_block(Block::Single(k))?;
                }
            }
            Sweep::RandomSingles | Sweep::Overlapping => {
                let steps = m + self.config.n_ob;
                for s in 0..steps {
                    let block = self
                        .blocks
                        .as_ref()
                        .expect("random sweeps carry a block law")
                        .sample(&mut self.rng);
                    if self.record_selections {
                        self.selections.push(Selection {
                            iteration: t,
                            substep: s + 1,
                            block,
                        });
                    }
                    self.update_block(block)?;
                }
            }
        }
        Ok(())
    }

    fn draw_positive(&mut self, law: InverseGammaLaw, current: f64, what: &str) -> Result<f64> {
        if !law.is_degenerate() {
            return law.draw(&mut self.rng);
        }
        if !self.warned_degenerate {
            warn!(
                "{what}: degenerate conditional at iteration {} ({:?} policy)",
                self.state.iteration + 1,
                self.config.degenerate
            );
            self.warned_degenerate = true;
        } else {
            debug!("{what}: degenerate conditional at iteration {}", self.state.iteration + 1);
        }
        match self.config.degenerate {
            DegeneratePolicy::Retain => Ok(current),
            DegeneratePolicy::Floor => law.floored().draw(&mut self.rng),
        }
    }

    fn update_scales(&mut self) -> Result<()> {
        let theta = &self.state.theta;
        match self.state.hyper.scale.clone() {
            ScaleFactors::Common(current) => {
                let law = lambda_common_conditional(
                    theta,
                    self.kernel,
                    self.config.shape_convention,
                    self.problem.n(),
                );
                let l = self.draw_positive(law, current, "lambda")?;
                self.state.hyper.scale = ScaleFactors::Common(l);
            }
            ScaleFactors::PerBlock(mut ls) => {
                for (k, lk) in ls.iter_mut().enumerate() {
                    let law = lambda_k_conditional(&self.state.theta, k, self.kernel);
                    *lk = self.draw_positive(law, *lk, "lambda_k")?;
                }
                self.state.hyper.scale = ScaleFactors::PerBlock(ls);
            }
        }
        Ok(())
    }

    fn update_sigma2(&mut self) -> Result<()> {
        let law = sigma2_conditional(self.problem, &self.state.theta);
        let current = self.state.hyper.sigma2;
        self.state.hyper.sigma2 = self.draw_positive(law, current, "sigma2")?;
        Ok(())
    }

    fn update_block(&mut self, block: Block) -> Result<()> {
        let gram = self.problem.gram();
        let state = &mut self.state;
        match block {
            Block::Single(k) => {
                let law = theta_k_conditional(k, &state.theta, &state.hyper, gram, self.kernel)?;
                let draw = law.draw(&mut self.rng);
                state.theta.set_block(k, &draw.rows(0, draw.len()));
            }
            Block::Pair(i, j) => {
                let law = theta_ij_conditional(i, j, &state.theta, &state.hyper, gram, self.kernel)?;
                let draw = law.draw(&mut self.rng);
                let p = gram.p();
                state.theta.set_block(i, &draw.rows(0, p));
                state.theta.set_block(j, &draw.rows(p, p));
            }
        }
        Ok(())
    }
}

/// Runs `config.n_mc` iterations and stores every `thin`-th state.
/// `dist` is required by the overlapping-block schemes only.
pub fn run_chain(
    config: &ChainConfig,
    problem: &PreparedProblem,
    kernel: &StableSplineKernel,
    dist: Option<&BlockDistribution>,
) -> Result<ChainTrace> {
    let started = Instant::now();
    let mut chain = Chain::new(config, problem, kernel, dist)?;
    let n_scales = if config.scheme.per_block_scales() { problem.m() } else { 1 };
    let mut trace = ChainTrace::empty(config.scheme, problem.m(), problem.p(), config.thin, n_scales);
    for _ in 0..config.n_mc {
        chain.step()?;
        if chain.state.iteration % config.thin == 0 {
            trace.push(&chain.state);
        }
    }
    trace.selections = std::mem::take(&mut chain.selections);
    trace.elapsed_secs = started.elapsed().as_secs_f64();
    Ok(trace)
}

/// Independent chains (different seeds or schemes) over the same problem.
pub fn run_chains(
    configs: &[ChainConfig],
    problem: &PreparedProblem,
    kernel: &StableSplineKernel,
    dist: Option<&BlockDistribution>,
    exec: Execution,
) -> Vec<Result<ChainTrace>> {
    exec::map_range(exec, configs.len(), |k| run_chain(&configs[k], problem, kernel, dist))
}

/// Posterior mean, 95% band and hyperparameter means of a stretch of a
/// trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub scheme: SchemeId,
    pub m: usize,
    pub p: usize,
    /// Stored samples used.
    pub samples: usize,
    /// Index of the first stored sample used.
    pub first: usize,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub scale_mean: Vec<f64>,
    pub sigma2_mean: f64,
}

impl PosteriorSummary {
    pub fn mean_set(&self) -> ImpulseResponseSet {
        ImpulseResponseSet::from_stacked(self.m, self.p, DVector::from_column_slice(&self.mean))
            .expect("summary dimensions are consistent")
    }

    /// Common λ̂ for common-scale schemes, the mean over blocks otherwise.
    pub fn lambda_hat(&self) -> f64 {
        self.scale_mean.iter().sum::<f64>() / self.scale_mean.len() as f64
    }
}

/// Summary over the stored samples after the first `n_burn`.
pub fn posterior_summary(trace: &ChainTrace, n_burn: usize) -> Result<PosteriorSummary> {
    summarize_range(trace, n_burn, trace.len())
}

/// Summary over stored samples `start..end`.
pub fn summarize_range(trace: &ChainTrace, start: usize, end: usize) -> Result<PosteriorSummary> {
    if start >= end || end > trace.len() {
        return Err(Error::InsufficientSamples(format!(
            "cannot summarize samples {start}..{end} of a trace with {} stored states",
            trace.len()
        )));
    }
    let d = trace.dim();
    let count = end - start;
    let mut mean = vec![0.0; d];
    let mut lower = vec![0.0; d];
    let mut upper = vec![0.0; d];
    let mut column = Vec::with_capacity(count);
    for idx in 0..d {
        column.clear();
        column.extend((start..end).map(|s| trace.theta_row(s)[idx]));
        mean[idx] = column.iter().sum::<f64>() / count as f64;
        column.sort_by(f64::total_cmp);
        lower[idx] = quantile_sorted(&column, 0.025);
        upper[idx] = quantile_sorted(&column, 0.975);
    }
    let scale_mean = (0..trace.n_scales)
        .map(|k| (start..end).map(|s| trace.scales_row(s)[k]).sum::<f64>() / count as f64)
        .collect();
    let sigma2_mean = trace.sigma2[start..end].iter().sum::<f64>() / count as f64;
    Ok(PosteriorSummary {
        scheme: trace.scheme,
        m: trace.m,
        p: trace.p,
        samples: count,
        first: start,
        mean,
        lower,
        upper,
        scale_mean,
        sigma2_mean,
    })
}
