//! Chains against the closed-form Gaussian posterior at fixed
//! hyperparameters.

mod common;

use common::{batch_mean_se, block_law, correlated_problem};
use misogibbs::convergence::{joint_posterior_covariance, joint_posterior_mean};
use misogibbs::prelude::*;
use misogibbs::samplers::Sweep;
use misogibbs::{run_chain, ChainTrace};

const LAMBDA: f64 = 0.8;
const SIGMA2: f64 = 0.5;

/// Fraction of mean and covariance entries further than 3 standard errors
/// from the oracle.
fn oracle_exceedance(trace: &ChainTrace, mean: &nalgebra::DVector<f64>, cov: &nalgebra::DMatrix<f64>) -> (f64, f64) {
    let d = trace.dim();
    let (mut bad, mut total, mut worst) = (0usize, 0usize, 0.0f64);
    for i in 0..d {
        let xi = trace.coefficient_series(i);
        let (mu, se) = batch_mean_se(&xi, 50);
        let z = (mu - mean[i]).abs() / se;
        worst = worst.max(z);
        bad += (z > 3.0) as usize;
        total += 1;
        for j in i..d {
            let xj = trace.coefficient_series(j);
            let prod: Vec<f64> = xi
                .iter()
                .zip(&xj)
                .map(|(a, b)| (a - mean[i]) * (b - mean[j]))
                .collect();
            let (c, se) = batch_mean_se(&prod, 50);
            let z = (c - cov[(i, j)]).abs() / se;
            worst = worst.max(z);
            bad += (z > 3.0) as usize;
            total += 1;
        }
    }
    (bad as f64 / total as f64, worst)
}

#[test]
fn every_scheme_samples_the_joint_posterior() {
    let (m, p) = (3, 4);
    let prob = correlated_problem(m, p, 30, 0.3, 21);
    let kernel = StableSplineKernel::new(0.9, p).unwrap();
    let hyper = Hyperparameters::common(LAMBDA, SIGMA2).unwrap();
    let mean = joint_posterior_mean(&prob, &kernel, &hyper).unwrap();
    let cov = joint_posterior_covariance(&prob, &kernel, &hyper).unwrap();
    let dist = block_law(&prob, 100.0, 2);
    for (k, scheme) in SchemeId::ALL.into_iter().enumerate() {
        let cfg = ChainConfig::new(scheme, 20_000)
            .with_n_ob(2)
            .with_seed(100 + k as u64)
            .with_fixed_hyperparameters(LAMBDA, SIGMA2);
        let trace = run_chain(&cfg, &prob, &kernel, Some(&dist)).unwrap();
        let (frac, worst) = oracle_exceedance(&trace, &mean, &cov);
        assert!(frac <= 0.02 && worst < 5.0, "{scheme}: {frac} beyond 3 SE, worst z {worst}");
    }
}

#[test]
fn touched_blocks_always_move() {
    let prob = correlated_problem(3, 4, 30, 0.3, 22);
    let kernel = StableSplineKernel::new(0.9, 4).unwrap();
    let dist = block_law(&prob, 100.0, 2);
    for scheme in SchemeId::ALL {
        let cfg = ChainConfig::new(scheme, 200).with_n_ob(2).with_seed(7);
        let trace = run_chain(&cfg, &prob, &kernel, Some(&dist)).unwrap();
        let p = trace.p;
        for s in 1..trace.len() {
            let (prev, cur) = (trace.theta_row(s - 1), trace.theta_row(s));
            let touched: Vec<usize> = match scheme.sweep() {
                Sweep::Systematic => (0..trace.m).collect(),
                _ => trace
                    .selections
                    .iter()
                    .filter(|sel| sel.iteration == s + 1)
                    .flat_map(|sel| sel.block.channels())
                    .collect(),
            };
            for k in 0..trace.m {
                let moved = (k * p..(k + 1) * p).all(|i| prev[i] != cur[i]);
                let still = (k * p..(k + 1) * p).all(|i| prev[i] == cur[i]);
                if touched.contains(&k) {
                    assert!(moved, "{scheme}: channel {k} rejected at iteration {}", s + 1);
                } else {
                    assert!(still, "{scheme}: untouched channel {k} changed");
                }
            }
        }
    }
}

#[test]
fn overlapping_without_pairs_matches_random_singles() {
    let prob = correlated_problem(2, 4, 30, 0.3, 23);
    let kernel = StableSplineKernel::new(0.9, 4).unwrap();
    let dist = block_law(&prob, 100.0, 0);
    let run = |scheme, seed| {
        let cfg = ChainConfig::new(scheme, 20_000)
            .with_seed(seed)
            .with_fixed_hyperparameters(LAMBDA, SIGMA2);
        run_chain(&cfg, &prob, &kernel, Some(&dist)).unwrap()
    };
    let a = run(SchemeId::Rsgs, 1);
    let b = run(SchemeId::Rsgsob, 2);
    assert!(b.selections.iter().all(|s| matches!(s.block, Block::Single(_))));
    for i in 0..a.dim() {
        let (ma, sa) = batch_mean_se(&a.coefficient_series(i), 50);
        let (mb, sb) = batch_mean_se(&b.coefficient_series(i), 50);
        assert!((ma - mb).abs() < 3.0 * (sa * sa + sb * sb).sqrt(), "coefficient {i}: {ma} vs {mb}");
    }
}

#[test]
fn kernel_inverse_is_tridiagonal() {
    for (alpha, p) in [(0.9, 10), (0.5, 6), (0.99, 30)] {
        let k = StableSplineKernel::new(alpha, p).unwrap();
        let inv = k.inverse();
        let scale = inv.amax();
        for i in 0..p {
            for j in 0..p {
                if i.abs_diff(j) > 1 {
                    assert!(inv[(i, j)].abs() < 1e-8 * scale, "alpha {alpha}: ({i},{j}) = {}", inv[(i, j)]);
                }
            }
        }
        let eye = k.matrix() * inv;
        let err = (eye - nalgebra::DMatrix::identity(p, p)).amax();
        assert!(err < 1e-8, "alpha {alpha}: |K K^-1 - I| = {err}");
    }
}
