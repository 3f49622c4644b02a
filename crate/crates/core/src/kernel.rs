//! Measurement model and stable-spline prior.
//!
//! The output is `Y = Σ_k G_k θ_k + E` where each `G_k` is the `n × p`
//! lower-triangular Toeplitz (convolution) matrix of input `u_k`, with inputs
//! taken as zero before the first sample. Indices in the formulas below are
//! 1-based; storage is 0-based.

use log::warn;
use nalgebra::{DMatrix, DVector, DVectorView};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::linalg::cholesky_with_jitter;
use crate::{Error, Result};

/// Stable-spline covariance `K(i,j) = α^max(i,j)`, `1 ≤ i,j ≤ p`, with its
/// inverse.
#[derive(Clone, Debug)]
pub struct StableSplineKernel {
    alpha: f64,
    order: usize,
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    jittered: bool,
}

impl StableSplineKernel {
    pub fn new(alpha: f64, order: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!(
                "kernel decay rate must lie in (0, 1), got {alpha}"
            )));
        }
        if order < 1 {
            return Err(Error::Domain("FIR order must be at least 1".into()));
        }
        let matrix = DMatrix::from_fn(order, order, |i, j| alpha.powi((i.max(j) + 1) as i32));
        let (chol, jittered) = cholesky_with_jitter(matrix.clone(), "stable spline kernel")?;
        let mut inverse = chol.inverse();
        // symmetrize away round-off so quadratic forms stay exact-symmetric
        inverse = (&inverse + inverse.transpose()) * 0.5;

        let residual = (&matrix * &inverse - DMatrix::identity(order, order)).norm()
            / (order as f64).sqrt();
        if residual > 1e-10 {
            warn!(
                "stable spline kernel (alpha={alpha}, p={order}): K*K^-1 deviates from I by {residual:e}"
            );
        }
        Ok(Self {
            alpha,
            order,
            matrix,
            inverse,
            jittered,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Whether the factorization needed diagonal jitter.
    pub fn was_jittered(&self) -> bool {
        self.jittered
    }

    /// `θ' K⁻¹ θ`.
    pub fn quadratic_form(&self, theta: &DVectorView<'_, f64>) -> f64 {
        theta.dot(&(&self.inverse * theta))
    }
}

/// Convolution matrix of one input channel, `G(i,l) = u(i−l+1)` for
/// `i ≥ l`, else 0. Stored as the generating input only.
#[derive(Clone, Debug, PartialEq)]
pub struct ToeplitzBlock {
    input: Vec<f64>,
    order: usize,
}

impl ToeplitzBlock {
    pub fn new(input: Vec<f64>, order: usize) -> Self {
        Self { input, order }
    }

    pub fn input(&self) -> &[f64] {
        &self.input
    }

    pub fn nrows(&self) -> usize {
        self.input.len()
    }

    pub fn ncols(&self) -> usize {
        self.order
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        if row >= col {
            self.input[row - col]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows(), self.order, |i, l| self.entry(i, l))
    }

    /// `G θ_k`, the channel's contribution to the output.
    pub fn apply(&self, theta: &DVectorView<'_, f64>) -> DVector<f64> {
        let n = self.nrows();
        let mut out = DVector::zeros(n);
        for t in 0..n {
            let lags = self.order.min(t + 1);
            let mut acc = 0.0;
            for l in 0..lags {
                acc += self.input[t - l] * theta[l];
            }
            out[t] = acc;
        }
        out
    }

    /// `G' v`.
    pub fn transpose_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.nrows();
        DVector::from_fn(self.order, |l, _| {
            (l..n).map(|t| self.input[t - l] * v[t]).sum()
        })
    }

    /// `G_self' G_other` in `O(n p)` using the Toeplitz structure: entry
    /// `(l+1, l'+1)` equals entry `(l, l')` minus the product of the two
    /// samples that fall off the end of the record.
    pub fn cross_gram(&self, other: &ToeplitzBlock) -> DMatrix<f64> {
        let p = self.order;
        let n = self.nrows();
        let a = &self.input;
        let b = &other.input;
        let mut out = DMatrix::zeros(p, p);
        // first row and first column directly
        for lag in 0..p.min(n) {
            out[(0, lag)] = (lag..n).map(|t| a[t] * b[t - lag]).sum();
            out[(lag, 0)] = (lag..n).map(|t| a[t - lag] * b[t]).sum();
        }
        for l in 1..p {
            for k in 1..p {
                let (li, ki) = (l - 1, k - 1);
                out[(l, k)] = out[(li, ki)] - a[n - 1 - li] * b[n - 1 - ki];
            }
        }
        out
    }
}

/// The regressors `{G_k}` without measured output.
#[derive(Clone, Debug)]
pub struct Regressors {
    blocks: Vec<ToeplitzBlock>,
    n: usize,
    p: usize,
}

impl Regressors {
    /// Requires at least two channels.
    pub fn new(inputs: Vec<Vec<f64>>, p: usize) -> Result<Self> {
        if inputs.len() < 2 {
            return Err(Error::Domain(format!(
                "a MISO problem needs m >= 2 input channels, got {}",
                inputs.len()
            )));
        }
        Self::with_any_channels(inputs, p)
    }

    /// Like [`Regressors::new`] but also accepts a single channel, which is
    /// useful for degenerate analyses (a one-block sampler, rate 0).
    pub fn with_any_channels(inputs: Vec<Vec<f64>>, p: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Domain("no input channels".into()));
        }
        if p < 1 {
            return Err(Error::Domain("FIR order must be at least 1".into()));
        }
        let n = inputs[0].len();
        if let Some((k, u)) = inputs.iter().enumerate().find(|(_, u)| u.len() != n) {
            return Err(Error::Dimension(format!(
                "input {} has length {}, expected {n}",
                k + 1,
                u.len()
            )));
        }
        if n < p {
            return Err(Error::Domain(format!(
                "record length n={n} is shorter than the FIR order p={p}"
            )));
        }
        let blocks = inputs.into_iter().map(|u| ToeplitzBlock::new(u, p)).collect();
        Ok(Self { blocks, n, p })
    }

    pub fn blocks(&self) -> &[ToeplitzBlock] {
        &self.blocks
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `G = [G_1 … G_m]`, `n × mp`.
    pub fn stacked_dense(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n, self.m() * self.p);
        for (k, block) in self.blocks.iter().enumerate() {
            g.view_mut((0, k * self.p), (self.n, self.p))
                .copy_from(&block.to_dense());
        }
        g
    }

    /// `G θ`.
    pub fn apply(&self, theta: &ImpulseResponseSet) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        let mut out = DVector::zeros(self.n);
        for (k, block) in self.blocks.iter().enumerate() {
            out += block.apply(&theta.block(k));
        }
        Ok(out)
    }

    /// `Y = Gθ + E`, `E ~ N(0, σ² I)`. `σ² = 0` returns `Gθ` exactly.
    pub fn simulate_output<R: Rng + ?Sized>(
        &self,
        theta: &ImpulseResponseSet,
        sigma2: f64,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        if !(sigma2 >= 0.0) {
            return Err(Error::Domain(format!("noise variance must be >= 0, got {sigma2}")));
        }
        let mut y = self.apply(theta)?;
        if sigma2 > 0.0 {
            let sd = sigma2.sqrt();
            for v in y.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += sd * z;
            }
        }
        Ok(y)
    }

    fn check_theta(&self, theta: &ImpulseResponseSet) -> Result<()> {
        if theta.m() != self.m() || theta.p() != self.p {
            return Err(Error::Dimension(format!(
                "impulse responses are {}x{}, regressors expect {}x{}",
                theta.m(),
                theta.p(),
                self.m(),
                self.p
            )));
        }
        Ok(())
    }
}

/// Output vector plus regressors.
#[derive(Clone, Debug)]
pub struct RegressionProblem {
    regressors: Regressors,
    output: DVector<f64>,
}

impl RegressionProblem {
    /// Builds the Toeplitz regressors from raw inputs. Needs `m ≥ 2`.
    pub fn build(inputs: Vec<Vec<f64>>, output: Vec<f64>, p: usize) -> Result<Self> {
        Self::from_regressors(Regressors::new(inputs, p)?, output)
    }

    /// As [`RegressionProblem::build`], allowing `m = 1`.
    pub fn build_any(inputs: Vec<Vec<f64>>, output: Vec<f64>, p: usize) -> Result<Self> {
        Self::from_regressors(Regressors::with_any_channels(inputs, p)?, output)
    }

    pub fn from_regressors(regressors: Regressors, output: Vec<f64>) -> Result<Self> {
        if output.len() != regressors.n() {
            return Err(Error::Dimension(format!(
                "output has length {}, inputs have length {}",
                output.len(),
                regressors.n()
            )));
        }
        Ok(Self {
            regressors,
            output: DVector::from_vec(output),
        })
    }

    pub fn regressors(&self) -> &Regressors {
        &self.regressors
    }

    pub fn output(&self) -> &DVector<f64> {
        &self.output
    }

    pub fn blocks(&self) -> &[ToeplitzBlock] {
        self.regressors.blocks()
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.blocks().iter().map(|b| b.input()).collect()
    }

    pub fn n(&self) -> usize {
        self.regressors.n()
    }

    pub fn m(&self) -> usize {
        self.regressors.m()
    }

    pub fn p(&self) -> usize {
        self.regressors.p()
    }
}

/// All impulse responses, stored stacked: `θ[(k−1)p+1 … kp] = θ_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpulseResponseSet {
    m: usize,
    p: usize,
    stacked: DVector<f64>,
}

impl ImpulseResponseSet {
    pub fn zeros(m: usize, p: usize) -> Self {
        Self {
            m,
            p,
            stacked: DVector::zeros(m * p),
        }
    }

    pub fn from_stacked(m: usize, p: usize, stacked: DVector<f64>) -> Result<Self> {
        if stacked.len() != m * p {
            return Err(Error::Dimension(format!(
                "stacked vector has length {}, expected {}",
                stacked.len(),
                m * p
            )));
        }
        Ok(Self { m, p, stacked })
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let m = blocks.len();
        let p = blocks.first().map_or(0, Vec::len);
        if blocks.iter().any(|b| b.len() != p) {
            return Err(Error::Dimension("impulse responses differ in length".into()));
        }
        let stacked = DVector::from_iterator(m * p, blocks.iter().flatten().copied());
        Ok(Self { m, p, stacked })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn stacked(&self) -> &DVector<f64> {
        &self.stacked
    }

    pub fn block(&self, k: usize) -> DVectorView<'_, f64> {
        self.stacked.rows(k * self.p, self.p)
    }

    pub fn set_block(&mut self, k: usize, values: &DVectorView<'_, f64>) {
        self.stacked.rows_mut(k * self.p, self.p).copy_from(values);
    }

    pub fn to_blocks(&self) -> Vec<Vec<f64>> {
        (0..self.m)
            .map(|k| self.block(k).iter().copied().collect())
            .collect()
    }
}

/// Either one common scale factor or one per impulse response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleFactors {
    Common(f64),
    PerBlock(Vec<f64>),
}

impl ScaleFactors {
    pub fn for_block(&self, k: usize) -> f64 {
        match self {
            ScaleFactors::Common(l) => *l,
            ScaleFactors::PerBlock(ls) => ls[k],
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            ScaleFactors::Common(l) => vec![*l],
            ScaleFactors::PerBlock(ls) => ls.clone(),
        }
    }

    fn all_positive(&self) -> bool {
        self.values().iter().all(|&l| l > 0.0 && l.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub scale: ScaleFactors,
    pub sigma2: f64,
}

impl Hyperparameters {
    pub fn new(scale: ScaleFactors, sigma2: f64) -> Result<Self> {
        let h = Self { scale, sigma2 };
        h.validate()?;
        Ok(h)
    }

    pub fn common(lambda: f64, sigma2: f64) -> Result<Self> {
        Self::new(ScaleFactors::Common(lambda), sigma2)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.scale.all_positive() || !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Domain(format!(
                "scale factors and noise variance must be strictly positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Sufficient statistics of the regression: all blocks `G_i'G_j`, `G_i'Y`
/// and `Y'Y`. Every conditional law and update matrix is built from these.
#[derive(Clone, Debug)]
pub struct Gram {
    m: usize,
    p: usize,
    blocks: Vec<DMatrix<f64>>,
    gty: Vec<DVector<f64>>,
    yty: f64,
}

impl Gram {
    pub fn new(problem: &RegressionProblem, exec: Execution) -> Self {
        let m = problem.m();
        let p = problem.p();
        let blocks_in = problem.blocks();
        let pairs: Vec<(usize, usize)> = (0..m)
            .flat_map(|i| (i..m).map(move |j| (i, j)))
            .collect();
        let upper = exec::map_range(exec, pairs.len(), |k| {
            let (i, j) = pairs[k];
            blocks_in[i].cross_gram(&blocks_in[j])
        });
        let mut blocks = vec![DMatrix::zeros(0, 0); m * m];
        for ((i, j), b) in pairs.iter().copied().zip(upper) {
            if i != j {
                blocks[j * m + i] = b.transpose();
            }
            blocks[i * m + j] = b;
        }
        let y = problem.output();
        let gty = exec::map_range(exec, m, |k| blocks_in[k].transpose_apply(y));
        Self {
            m,
            p,
            blocks,
            gty,
            yty: y.norm_squared(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// `G_i' G_j`.
    pub fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.blocks[i * self.m + j]
    }

    /// `G_k' Y`.
    pub fn gty(&self, k: usize) -> &DVector<f64> {
        &self.gty[k]
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    /// `G_k'(Y − Σ_{j ∉ skip} G_j θ_j)` for the channels not in `skip`.
    pub fn partial_residual_correlation(
        &self,
        k: usize,
        theta: &ImpulseResponseSet,
        skip: &[usize],
    ) -> DVector<f64> {
        let mut rhs = self.gty[k].clone();
        for j in 0..self.m {
            if skip.contains(&j) {
                continue;
            }
            rhs.gemv(-1.0, self.block(k, j), &theta.block(j), 1.0);
        }
        rhs
    }

    /// `‖Y − Gθ‖²` from the Gram blocks (may lose relative accuracy when
    /// the residual is tiny compared with `Y'Y`).
    pub fn residual_norm_squared(&self, theta: &ImpulseResponseSet) -> f64 {
        let mut quad = 0.0;
        let mut cross = 0.0;
        for i in 0..self.m {
            let ti = theta.block(i);
            cross += self.gty[i].dot(&ti);
            let mut acc = DVector::zeros(self.p);
            for j in 0..self.m {
                acc.gemv(1.0, self.block(i, j), &theta.block(j), 1.0);
            }
            quad += ti.dot(&acc);
        }
        (self.yty - 2.0 * cross + quad).max(0.0)
    }

    /// Dense `G'G`, `mp × mp`.
    pub fn dense(&self) -> DMatrix<f64> {
        let mp = self.m * self.p;
        let mut g = DMatrix::zeros(mp, mp);
        for i in 0..self.m {
            for j in 0..self.m {
                g.view_mut((i * self.p, j * self.p), (self.p, self.p))
                    .copy_from(self.block(i, j));
            }
        }
        g
    }
}

/// A regression problem bundled with its Gram statistics, shared read-only
/// by every chain and rate computation on the same data.
#[derive(Clone, Debug)]
pub struct PreparedProblem {
    problem: RegressionProblem,
    gram: Gram,
}

impl PreparedProblem {
    pub fn new(problem: RegressionProblem) -> Self {
        Self::with_execution(problem, Execution::default())
    }

    pub fn with_execution(problem: RegressionProblem, exec: Execution) -> Self {
        let gram = Gram::new(&problem, exec);
        Self { problem, gram }
    }

    pub fn problem(&self) -> &RegressionProblem {
        &self.problem
    }

    pub fn gram(&self) -> &Gram {
        &self.gram
    }

    pub fn inputs(&self) -> Vec<&[f64]> {
        self.problem.inputs()
    }

    pub fn m(&self) -> usize {
        self.problem.m()
    }

    pub fn p(&self) -> usize {
        self.problem.p()
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    /// Exact `‖Y − Gθ‖²`, evaluated through the Gram statistics and
    /// recomputed from the raw convolution when it is tiny relative to `Y'Y`.
    pub fn residual_norm_squared(&self, theta: &ImpulseResponseSet) -> f64 {
        let fast = self.gram.residual_norm_squared(theta);
        if fast > 1e-6 * self.gram.yty() {
            return fast;
        }
        match self.problem.regressors().apply(theta) {
            Ok(fitted) => (self.problem.output() - fitted).norm_squared(),
            Err(_) => fast,
        }
    }
}
