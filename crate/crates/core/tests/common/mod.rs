#![allow(dead_code)]

use misogibbs::prelude::*;
use misogibbs::ChainRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

/// Inputs sharing a common white component; smaller `mix` means stronger
/// collinearity.
pub fn correlated_problem(m: usize, p: usize, n: usize, mix: f64, seed: u64) -> PreparedProblem {
    let mut rng = ChainRng::seed_from_u64(seed);
    let base: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let inputs: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            base.iter()
                .map(|b| b + mix * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    PreparedProblem::new(RegressionProblem::build(inputs, y, p).unwrap())
}

pub fn block_law(problem: &PreparedProblem, beta: f64, n_ob: usize) -> BlockDistribution {
    let c = CollinearityMatrix::from_inputs(problem.inputs());
    BlockDistribution::new(&PairProbabilities::new(&c, beta).unwrap(), n_ob)
}

/// Mean and batch-means standard error of a series.
pub fn batch_mean_se(x: &[f64], batches: usize) -> (f64, f64) {
    let len = x.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| x[b * len..(b + 1) * len].iter().sum::<f64>() / len as f64)
        .collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}
