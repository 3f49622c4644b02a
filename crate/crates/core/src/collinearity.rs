//! Collinearity indices `c_ij`, pair probabilities `P_ij` and the block
//! selection law `P_M` over single and overlapping blocks.

use std::fmt;

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::{Error, Result};

/// Absolute sample correlation `|cov(u_i,u_j)| / sqrt(var u_i · var u_j)`.
pub fn correlation_index(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "correlation of sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientSamples(
            "correlation needs at least two samples".into(),
        ));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the sequences is constant".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).abs().min(1.0))
}

/// Symmetric matrix of collinearity indices with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct CollinearityMatrix {
    values: DMatrix<f64>,
}

impl CollinearityMatrix {
    /// Sample indices for every pair of inputs. Pairs involving a constant
    /// input get `c = 0`.
    pub fn from_inputs(inputs: Vec<&[f64]>) -> Self {
        Self::from_inputs_with(inputs, Execution::default())
    }

    pub fn from_inputs_with(inputs: Vec<&[f64]>, exec: Execution) -> Self {
        let m = inputs.len();
        let pairs: Vec<(usize, usize)> = (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .collect();
        let cs = exec::map_range(exec, pairs.len(), |k| {
            let (i, j) = pairs[k];
            match correlation_index(inputs[i], inputs[j]) {
                Ok(c) => c,
                Err(e) => {
                    warn!("c_({},{}) set to 0: {e}", i + 1, j + 1);
                    0.0
                }
            }
        });
        let mut values = DMatrix::identity(m, m);
        for ((i, j), c) in pairs.into_iter().zip(cs) {
            values[(i, j)] = c;
            values[(j, i)] = c;
        }
        Self { values }
    }

    /// Validates a given matrix (e.g. population indices known analytically).
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Dimension("collinearity matrix must be square".into()));
        }
        let m = values.nrows();
        for i in 0..m {
            if values[(i, i)] != 1.0 {
                return Err(Error::Domain(format!("c_({0},{0}) must be 1", i + 1)));
            }
            for j in 0..m {
                let c = values[(i, j)];
                if !(0.0..=1.0).contains(&c) || c != values[(j, i)] {
                    return Err(Error::Domain(format!(
                        "c_({},{}) = {c} must lie in [0,1] and be symmetric",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// `P_ij = (e^{β c_ij} − 1) / Σ_{i<j}(e^{β c_ij} − 1)` over pairs `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairProbabilities {
    m: usize,
    beta: f64,
    pairs: Vec<(usize, usize)>,
    probs: Vec<f64>,
}

impl PairProbabilities {
    pub fn new(c: &CollinearityMatrix, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        let m = c.m();
        let pairs: Vec<(usize, usize)> = (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
            .collect();
        if pairs.is_empty() {
            return Ok(Self { m, beta, pairs, probs: Vec::new() });
        }
        let cmax = pairs.iter().map(|&(i, j)| c.get(i, j)).fold(0.0, f64::max);
        // (e^{βc} − 1) rescaled by e^{−βcmax} so β·c never overflows
        let weights: Vec<f64> = pairs
            .iter()
            .map(|&(i, j)| {
                let x = beta * c.get(i, j);
                if beta * cmax < 700.0 {
                    x.exp_m1()
                } else {
                    (x - beta * cmax).exp() - (-beta * cmax).exp()
                }
            })
            .collect();
        let sum: f64 = weights.iter().sum();
        let probs = if sum > 0.0 {
            weights.iter().map(|w| w / sum).collect()
        } else {
            warn!("all collinearity indices are zero; pair probabilities set uniform");
            vec![1.0 / pairs.len() as f64; pairs.len()]
        };
        Ok(Self { m, beta, pairs, probs })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `(i, j, P_ij)` for `i < j`, 0-based.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.pairs.iter().zip(&self.probs).map(|(&(i, j), &p)| (i, j, p))
    }

    /// Symmetric lookup; zero on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        // index of (a, b) in the row-major upper-triangle enumeration
        let idx = a * (2 * self.m - a - 1) / 2 + (b - a - 1);
        self.probs[idx]
    }
}

/// A block of the parameter space: one impulse response or a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Block {
    Single(usize),
    Pair(usize, usize),
}

impl Block {
    pub fn channels(&self) -> Vec<usize> {
        match *self {
            Block::Single(i) => vec![i],
            Block::Pair(i, j) => vec![i, j],
        }
    }

    pub fn touches(&self, k: usize) -> bool {
        match *self {
            Block::Single(i) => i == k,
            Block::Pair(i, j) => i == k || j == k,
        }
    }

    /// Parses the 1-based labels produced by `Display`.
    pub fn parse_label(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad block label '{s}'"));
        let rest = s.strip_prefix("theta_").ok_or_else(bad)?;
        let idx: Vec<usize> = rest
            .split('_')
            .map(|t| t.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match idx.as_slice() {
            [i] if *i >= 1 => Ok(Block::Single(i - 1)),
            [i, j] if *i >= 1 && *j > *i => Ok(Block::Pair(i - 1, j - 1)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Block::Single(i) => write!(f, "theta_{}", i + 1),
            Block::Pair(i, j) => write!(f, "theta_{}_{}", i + 1, j + 1),
        }
    }
}

/// Discrete law over `M = {θ_i} ∪ {θ_ij}_{i<j}`: each single has mass
/// `1/(m+n_OB)`, each pair `n_OB/(m+n_OB) · P_ij`.
#[derive(Clone, Debug)]
pub struct BlockDistribution {
    m: usize,
    n_ob: usize,
    blocks: Vec<Block>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl BlockDistribution {
    pub fn new(pairs: &PairProbabilities, n_ob: usize) -> Self {
        let m = pairs.m();
        let total = (m + n_ob) as f64;
        let mut blocks: Vec<Block> = (0..m).map(Block::Single).collect();
        let mut probs = vec![1.0 / total; m];
        for (i, j, p) in pairs.iter() {
            blocks.push(Block::Pair(i, j));
            probs.push(n_ob as f64 / total * p);
        }
        Self::from_parts(m, n_ob, blocks, probs)
    }

    /// Uniform law over the single blocks (the plain random sweep).
    pub fn uniform_singles(m: usize) -> Self {
        let blocks = (0..m).map(Block::Single).collect();
        Self::from_parts(m, 0, blocks, vec![1.0 / m as f64; m])
    }

    /// All mass on one block.
    pub fn point_mass(m: usize, block: Block) -> Self {
        Self::from_parts(m, 0, vec![block], vec![1.0])
    }

    fn from_parts(m: usize, n_ob: usize, blocks: Vec<Block>, probs: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self {
            m,
            n_ob,
            blocks,
            probs,
            cumulative,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_ob(&self) -> usize {
        self.n_ob
    }

    /// Block updates per iteration, `m + n_OB`.
    pub fn steps_per_iteration(&self) -> usize {
        self.m + self.n_ob
    }

    pub fn iter(&self) -> impl Iterator<Item = (Block, f64)> + '_ {
        self.blocks.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn probability(&self, block: Block) -> f64 {
        self.iter()
            .filter(|(b, _)| *b == block)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `Σ_{b ∈ M_2} P_M(b)`.
    pub fn pair_mass(&self) -> f64 {
        self.iter()
            .filter(|(b, _)| matches!(b, Block::Pair(..)))
            .map(|(_, p)| p)
            .sum()
    }

    /// Categorical draw by inversion of the cumulative masses.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Block {
        let last = *self.cumulative.last().expect("non-empty block law");
        let u: f64 = rng.random::<f64>() * last;
        // zero-mass blocks share their predecessor's cumulative value and
        // are never returned
        let idx = self
            .cumulative
            .partition_point(|&c| c <= u)
            .min(self.blocks.len() - 1);
        self.blocks[idx]
    }
}
