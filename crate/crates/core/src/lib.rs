//! Bayesian identification of multiple-input single-output (MISO) FIR
//! systems driven by highly collinear inputs.
//!
//! Every impulse response `θ_k` gets a zero-mean Gaussian prior with
//! stable-spline covariance `λ_k K`, `K(i,j) = α^max(i,j)`. Jeffreys priors
//! are placed on the scale factors and on the noise variance. The posterior
//! is explored with six Gibbs schemes (see [`SchemeId`]): systematic or
//! random sweeps over single impulse responses, optionally complemented by
//! overlapping pair blocks `θ_ij = [θ_i', θ_j']'` drawn with a frequency
//! driven by input collinearity (RSGSOB).
//!
//! For fixed hyperparameters the θ-update of each random-sweep scheme is a
//! mixture of Gaussian autoregressions, and [`convergence`] turns that into
//! exact convergence rates.
//!
//! ```no_run
//! use misogibbs::prelude::*;
//! use rand::SeedableRng;
//!
//! # fn main() -> misogibbs::Result<()> {
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
//! let u = misogibbs::datagen::white_inputs(1, 500, 1.0, &mut rng).remove(0);
//! let inputs = vec![u.clone(), u];
//! let y: Vec<f64> = (0..500).map(|t| inputs[0][t]).collect();
//! let problem = PreparedProblem::new(RegressionProblem::build(inputs, y, 50)?);
//! let kernel = StableSplineKernel::new(0.9, 50)?;
//! let pairs = PairProbabilities::new(&CollinearityMatrix::from_inputs(problem.inputs()), 100.0)?;
//! let dist = BlockDistribution::new(&pairs, 2);
//! let config = ChainConfig::new(SchemeId::Rsgsob, 500).with_n_ob(2);
//! let trace = run_chain(&config, &problem, &kernel, Some(&dist))?;
//! let summary = posterior_summary(&trace, 250)?;
//! println!("{:?}", summary.mean);
//! # Ok(())
//! # }
//! ```

pub mod collinearity;
pub mod conditionals;
pub mod convergence;
pub mod datagen;
pub mod diagnostics;
mod error;
pub mod exec;
pub mod io;
pub mod kernel;
mod linalg;
pub mod samplers;

pub use error::{Error, Result};

pub use collinearity::{Block, BlockDistribution, CollinearityMatrix, PairProbabilities};
pub use conditionals::{GaussianBlockLaw, InverseGammaLaw, ShapeConvention};
pub use convergence::{scheme_rates, spectral_radius, ConvergenceReport, UpdateMatrix};
pub use diagnostics::{fit, raftery_lewis, FitReport, RunLengthReport};
pub use exec::Execution;
pub use kernel::{
    Gram, Hyperparameters, ImpulseResponseSet, PreparedProblem, RegressionProblem, ScaleFactors,
    StableSplineKernel, ToeplitzBlock,
};
pub use samplers::{
    posterior_summary, run_chain, run_chains, ChainConfig, ChainState, ChainTrace,
    PosteriorSummary, SchemeId,
};

/// The commonly used types in one import.
pub mod prelude {
    pub use crate::collinearity::{Block, BlockDistribution, CollinearityMatrix, PairProbabilities};
    pub use crate::kernel::{
        Hyperparameters, ImpulseResponseSet, PreparedProblem, RegressionProblem, ScaleFactors,
        StableSplineKernel,
    };
    pub use crate::samplers::{posterior_summary, run_chain, ChainConfig, SchemeId};
    pub use crate::{Error, Result};
}

/// Seedable generator used for every chain and dataset.
pub type ChainRng = rand_chacha::ChaCha8Rng;
