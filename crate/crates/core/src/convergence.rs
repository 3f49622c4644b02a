//! Convergence rates of the random-sweep θ-updates for fixed `(λ, σ²)`.
//!
//! With the hyperparameters held fixed, an exact draw of block `b` maps the
//! current state affinely plus Gaussian noise:
//! `θ⁽ˢ⁾ = C_b θ⁽ˢ⁻¹⁾ + c_b + ε`, `ε ~ N(0, Σ̂_b)` on the block's
//! coordinates. `C_b` is the identity except on the rows of `b`, which hold
//! `D_b = −Σ̂_b σ⁻² G_b'G_(b)` (`G_(b)` is `G` with the columns of `b`
//! zeroed). A random sweep picks `b` with probability `w_b` at each
//! sub-step, so one sub-step contracts like the mixture
//! `C = Σ_b w_b C_b`, and one iteration (`m + n_OB` sub-steps) like
//! `ρ(C)^{m+n_OB}`.
//!
//! Each `C_b` is self-adjoint with respect to the posterior covariance
//! (`C_b Σ = Σ C_b'`), so `C` is similar to a symmetric matrix and its
//! spectrum is real and lies in `[0, 1)`. [`scheme_rates`] exploits this.

use std::io::{Read, Write};

use log::warn;
use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::collinearity::{Block, BlockDistribution};
use crate::exec::{self, Execution};
use crate::kernel::{Hyperparameters, PreparedProblem, StableSplineKernel};
use crate::linalg::cholesky_with_jitter;
use crate::{ChainRng, Error, Result};

/// Above this dimension [`spectral_radius`] switches to power iteration.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

const POWER_RESTARTS: usize = 10;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 20_000;

/// Affine update of one block.
#[derive(Clone, Debug)]
pub struct UpdateMatrix {
    block: Block,
    m: usize,
    p: usize,
    /// `|b| × mp`; the columns of the block itself are zero.
    rows: DMatrix<f64>,
    offset: DVector<f64>,
    noise: DMatrix<f64>,
}

impl UpdateMatrix {
    pub fn block(&self) -> Block {
        self.block
    }

    /// Stacked coordinates touched by the block, in order.
    pub fn coordinates(&self) -> Vec<usize> {
        self.block
            .channels()
            .into_iter()
            .flat_map(|k| k * self.p..(k + 1) * self.p)
            .collect()
    }

    /// The `D` rows.
    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Offset on the block coordinates (`Σ̂_b σ⁻² G_b'Y`).
    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    /// Covariance `Σ̂_b` of the injected noise.
    pub fn noise(&self) -> &DMatrix<f64> {
        &self.noise
    }

    /// Full `mp × mp` matrix `C_b`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mp = self.m * self.p;
        let mut c = DMatrix::identity(mp, mp);
        for (r, &row) in self.coordinates().iter().enumerate() {
            c.row_mut(row).copy_from(&self.rows.row(r));
        }
        c
    }

    /// Full-length offset `c_b`, zero off the block.
    pub fn dense_offset(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.m * self.p);
        for (r, &row) in self.coordinates().iter().enumerate() {
            c[row] = self.offset[r];
        }
        c
    }

    /// Mean of the next state, `C_b θ + c_b`.
    pub fn apply(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut out = theta.clone();
        let moved = &self.rows * theta + &self.offset;
        for (r, &row) in self.coordinates().iter().enumerate() {
            out[row] = moved[r];
        }
        out
    }
}

fn check_hyper(problem: &PreparedProblem, kernel: &StableSplineKernel, hyper: &Hyperparameters) -> Result<()> {
    hyper.validate()?;
    if kernel.order() != problem.p() {
        return Err(Error::Dimension(format!(
            "kernel order {} differs from FIR order {}",
            kernel.order(),
            problem.p()
        )));
    }
    if let crate::kernel::ScaleFactors::PerBlock(ls) = &hyper.scale {
        if ls.len() != problem.m() {
            return Err(Error::Dimension(format!(
                "{} scale factors for {} channels",
                ls.len(),
                problem.m()
            )));
        }
    }
    Ok(())
}

fn build_update(
    block: Block,
    problem: &PreparedProblem,
    kernel: &StableSplineKernel,
    hyper: &Hyperparameters,
) -> Result<UpdateMatrix> {
    let gram = problem.gram();
    let (m, p) = (gram.m(), gram.p());
    let channels = block.channels();
    let d = channels.len() * p;
    let inv_s2 = 1.0 / hyper.sigma2;

    let mut precision = DMatrix::zeros(d, d);
    for (a, &ra) in channels.iter().enumerate() {
        for (b, &rb) in channels.iter().enumerate() {
            let mut blk = gram.block(ra, rb) * inv_s2;
            if a == b {
                blk += kernel.inverse() / hyper.scale.for_block(ra);
            }
            precision.view_mut((a * p, b * p), (p, p)).copy_from(&blk);
        }
    }

    // right-hand sides: σ⁻² G_b'G_(b) and σ⁻² G_b'Y
    let mut coupling = DMatrix::zeros(d, m * p);
    let mut rhs_offset = DVector::zeros(d);
    for (a, &ra) in channels.iter().enumerate() {
        for k in 0..m {
            if channels.contains(&k) {
                continue;
            }
            coupling
                .view_mut((a * p, k * p), (p, p))
                .copy_from(&(gram.block(ra, k) * inv_s2));
        }
        rhs_offset.rows_mut(a * p, p).copy_from(&(gram.gty(ra) * inv_s2));
    }

    let (chol, _) = cholesky_with_jitter(precision, &format!("{block} update"))?;
    let rows = -chol.solve(&coupling);
    let offset = chol.solve(&rhs_offset);
    let noise = chol.inverse();
    let noise = (&noise + noise.transpose()) * 0.5;
    Ok(UpdateMatrix {
        block,
        m,
        p,
        rows,
        offset,
        noise,
    })
}

/// `C_i`, `c_i`, `Σ̂_i` of the single-block update of channel `i`.
pub fn build_single_update(
    i: usize,
    problem: &PreparedProblem,
    kernel: &StableSplineKernel,
    hyper: &Hyperparameters,
) -> Result<UpdateMatrix> {
    check_hyper(problem, kernel, hyper)?;
    if i >= problem.m() {
        return Err(Error::Dimension(format!("channel {i} out of 0..{}", problem.m())));
    }
    build_update(Block::Single(i), problem, kernel, hyper)
}

/// `C_ij`, `c_ij`, `Σ̂_ij` of the pair update of channels `i`, `j`.
pub fn build_pair_update(
    i: usize,
    j: usize,
    problem: &PreparedProblem,
    kernel: &StableSplineKernel,
    hyper: &Hyperparameters,
) -> Result<UpdateMatrix> {
    check_hyper(problem, kernel, hyper)?;
    if i == j || i.max(j) >= problem.m() {
        return Err(Error::Domain(format!(
            "invalid pair ({i}, {j}) for {} channels",
            problem.m()
        )));
    }
    build_update(Block::Pair(i.min(j), i.max(j)), problem, kernel, hyper)
}

/// Mixture `C = Σ_b w_b C_b` with offset `c = Σ_b w_b c_b`.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

struct MixtureAccumulator {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl MixtureAccumulator {
    fn new(mp: usize) -> Self {
        Self {
            matrix: DMatrix::identity(mp, mp),
            offset: DVector::zeros(mp),
        }
    }

    // C = I + Σ_b w_b (C_b − I); C_b − I is zero off the block rows
    fn add(&mut self, update: &UpdateMatrix, weight: f64) {
        if weight == 0.0 {
            return;
        }
        for (r, &row) in update.coordinates().iter().enumerate() {
            let mut target = self.matrix.row_mut(row);
            for (t, s) in target.iter_mut().zip(update.rows.row(r).iter()) {
                *t += weight * s;
            }
            target[row] -= weight;
            self.offset[row] += weight * update.offset[r];
        }
    }

    fn finish(self) -> Mixture {
        Mixture {
            matrix: self.matrix,
            offset: self.offset,
        }
    }
}

/// Mixture of explicit updates under the weights of `dist`. Blocks absent
/// from `updates` contribute nothing.
pub fn mixture_matrix(updates: &[UpdateMatrix], dist: &BlockDistribution) -> Result<Mixture> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Domain("mixture of no update matrices".into()))?;
    let mut acc = MixtureAccumulator::new(first.m * first.p);
    for u in updates {
        if u.m != first.m || u.p != first.p {
            return Err(Error::Dimension("update matrices of different sizes".into()));
        }
        acc.add(u, dist.probability(u.block));
    }
    Ok(acc.finish())
}

/// Mean `μ*` of `θ | (Y, λ, σ²)`, from the dense joint precision.
pub fn joint_posterior_mean(
    problem: &PreparedProblem,
    kernel: &StableSplineKernel,
    hyper: &Hyperparameters,
) -> Result<DVector<f64>> {
    let (chol, info) = joint_precision(problem, kernel, hyper)?;
    Ok(chol.solve(&info))
}

/// Dense covariance of `θ | (Y, λ, σ²)`.
pub fn joint_posterior_covariance(
    problem: &PreparedProblem,
    kernel: &StableSplineKernel,
    hyper: &Hyperparameters,
) -> Result<DMatrix<f64>> {
    let (chol, _) = joint_precision(problem, kernel, hyper)?;
    let cov = chol.inverse();
    Ok((&cov + cov.transpose()) * 0.5)
}

fn joint_precision(
    problem: &PreparedProblem,
    kernel: &StableSplineKernel,
    hyper: &Hyperparameters,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, DVector<f64>)> {
    check_hyper(problem, kernel, hyper)?;
    let gram = problem.gram();
    let (m, p) = (gram.m(), gram.p());
    let inv_s2 = 1.0 / hyper.sigma2;
    let mut precision = gram.dense() * inv_s2;
    let mut info = DVector::zeros(m * p);
    for k in 0..m {
        let mut blk = precision.view_mut((k * p, k * p), (p, p));
        blk += kernel.inverse() / hyper.scale.for_block(k);
        info.rows_mut(k * p, p).copy_from(&(gram.gty(k) * inv_s2));
    }
    let (chol, _) = cholesky_with_jitter(precision, "joint posterior precision")?;
    Ok((chol, info))
}

/// Largest eigenvalue modulus of a square matrix, complex spectra included.
///
/// Dense real Schur decomposition up to [`DENSE_EIGEN_LIMIT`], power
/// iteration (10 random restarts) above it or if the Schur iteration
/// stalls.
pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("spectral radius of a {:?} matrix", a.shape())));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    if n <= DENSE_EIGEN_LIMIT {
        if let Some(schur) = Schur::try_new(a.clone(), f64::EPSILON, 1000 * n) {
            return Ok(schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max));
        }
        warn!("Schur iteration did not converge on a {n}x{n} matrix; using power iteration");
    }
    power_radius(a, 0x5eed)
}

/// Power-iteration estimate of `ρ(A)`.
///
/// Uses the two-step growth `sqrt(‖A²x‖/‖x‖)`, which also converges when
/// the dominant eigenvalues are a `±ρ` pair. Dominant complex pairs with
/// other arguments converge only in the averaged sense and may report
/// [`Error::NoConvergence`].
pub fn power_radius(a: &DMatrix<f64>, seed: u64) -> Result<f64> {
    let n = a.nrows();
    let mut rng = ChainRng::seed_from_u64(seed);
    let mut best = 0.0_f64;
    let mut converged = false;
    for _ in 0..POWER_RESTARTS {
        let mut x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        x /= x.norm();
        let mut prev = f64::NAN;
        for _ in 0..POWER_MAX_ITER {
            let y = a * &x;
            let z = a * &y;
            let zn = z.norm();
            if zn == 0.0 {
                prev = 0.0;
                converged = true;
                break;
            }
            let est = zn.sqrt();
            x = z / zn;
            if (est - prev).abs() <= POWER_TOL * est.max(1e-300) {
                converged = true;
                prev = est;
                break;
            }
            prev = est;
        }
        if prev.is_finite() {
            best = best.max(prev);
        }
    }
    if converged {
        Ok(best)
    } else {
        Err(Error::NoConvergence { bound: best })
    }
}

/// Radius of a matrix similar to a symmetric positive semi-definite one
/// through `S = L' C L'⁻¹`, where `L L'` is the posterior precision.
fn self_adjoint_radius(c: &DMatrix<f64>, precision_factor: &DMatrix<f64>) -> Result<f64> {
    let n = c.nrows();
    // X' = L⁻¹ C' gives X = C L'⁻¹
    let xt = precision_factor
        .solve_lower_triangular(&c.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("posterior precision factor".into()))?;
    let s = precision_factor.transpose() * xt.transpose();
    let s = (&s + s.transpose()) * 0.5;
    if n <= DENSE_EIGEN_LIMIT {
        let eig = SymmetricEigen::new(s);
        Ok(eig.eigenvalues.iter().map(|x| x.abs()).fold(0.0, f64::max))
    } else {
        power_radius(&s, 0x5eed)
    }
}

/// Rates of RSGSOB and RSGS at fixed hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub m: usize,
    pub p: usize,
    pub n_ob: usize,
    pub beta: Option<f64>,
    pub lambda: Vec<f64>,
    pub sigma2: f64,
    /// `ρ(C)` of the overlapping-block mixture.
    pub rho_rsgsob: f64,
    /// `ρ((1/m) Σ C_i)`.
    pub rho_rsgs: f64,
    /// `ρ(C)^{m+n_OB}`, per iteration.
    pub rate_rsgsob: f64,
    /// `ρ((1/m) Σ C_i)^{m+n_OB}`, per iteration.
    pub rate_rsgs: f64,
    /// Fixed-point residual `‖C μ* + c − μ*‖_∞` of the overlapping mixture.
    pub fixed_point_residual: f64,
    /// Always "fixed-hyperparameter": rates hold `(λ, σ²)` constant.
    pub hyperparameters: String,
    #[serde(skip)]
    pub mixture: Option<DMatrix<f64>>,
}

/// Builds every single and pair update (in parallel chunks, streaming into
/// the two mixtures) and reports both rates.
///
/// `beta` is only recorded in the report. Pair updates are skipped when
/// `dist` gives them zero mass, so `n_OB = 0` only costs the `m` singles.
pub fn scheme_rates(
    problem: &PreparedProblem,
    kernel: &StableSplineKernel,
    hyper: &Hyperparameters,
    dist: &BlockDistribution,
    beta: Option<f64>,
    exec: Execution,
) -> Result<ConvergenceReport> {
    check_hyper(problem, kernel, hyper)?;
    let (m, p) = (problem.m(), problem.p());
    if dist.m() != m {
        return Err(Error::Dimension(format!(
            "block distribution for m={}, problem has m={m}",
            dist.m()
        )));
    }
    let mp = m * p;
    let n_ob = dist.n_ob();
    let steps = (m + n_ob) as i32;

    let mut ob = MixtureAccumulator::new(mp);
    let mut rs = MixtureAccumulator::new(mp);
    let blocks: Vec<(Block, f64)> = dist.iter().filter(|&(_, w)| w > 0.0).collect();
    let mut failure = None;
    exec::map_chunked(
        exec,
        &blocks,
        exec::default_chunk(),
        |&(b, w)| build_update(b, problem, kernel, hyper).map(|u| (u, w)),
        |res| match res {
            Ok((u, w)) => {
                ob.add(&u, w);
                if let Block::Single(_) = u.block {
                    rs.add(&u, 1.0 / m as f64);
                }
            }
            Err(e) => {
                failure.get_or_insert(e);
            }
        },
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let ob = ob.finish();
    let rs = rs.finish();

    let (chol, info) = joint_precision(problem, kernel, hyper)?;
    let mu = chol.solve(&info);
    let fixed_point_residual = (&ob.matrix * &mu + &ob.offset - &mu).amax();
    let factor = chol.l();
    let rho_rsgsob = self_adjoint_radius(&ob.matrix, &factor)?;
    let rho_rsgs = self_adjoint_radius(&rs.matrix, &factor)?;
    Ok(ConvergenceReport {
        m,
        p,
        n_ob,
        beta,
        lambda: hyper.scale.values(),
        sigma2: hyper.sigma2,
        rho_rsgsob,
        rho_rsgs,
        rate_rsgsob: rho_rsgsob.powi(steps),
        rate_rsgs: rho_rsgs.powi(steps),
        fixed_point_residual,
        hyperparameters: "fixed-hyperparameter".into(),
        mixture: Some(ob.matrix),
    })
}

const MATRIX_MAGIC: &[u8; 4] = b"CMIX";
const MATRIX_VERSION: u32 = 1;

/// Writes `a` as: `b"CMIX"`, `u32` version, `u64` rows, `u64` cols, then
/// the entries column by column as little-endian `f64`.
pub fn write_matrix<W: Write>(mut w: W, a: &DMatrix<f64>) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes())?;
    w.write_all(&(a.nrows() as u64).to_le_bytes())?;
    w.write_all(&(a.ncols() as u64).to_le_bytes())?;
    for x in a.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a matrix written by [`write_matrix`].
pub fn read_matrix<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Format("not a CMIX matrix file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != MATRIX_VERSION {
        return Err(Error::Format(format!("unsupported CMIX version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collinearity::{CollinearityMatrix, PairProbabilities};
    use crate::datagen::delta_inputs;
    use crate::kernel::{ImpulseResponseSet, RegressionProblem};

    fn random_problem(m: usize, p: usize, n: usize, seed: u64) -> PreparedProblem {
        let mut rng = ChainRng::seed_from_u64(seed);
        let base: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let inputs: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                base.iter()
                    .map(|b| b + 0.3 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        PreparedProblem::new(RegressionProblem::build_any(inputs, y, p).unwrap())
    }

    fn toy() -> (PreparedProblem, StableSplineKernel, BlockDistribution) {
        let inputs = delta_inputs(10, 10);
        let y = vec![0.0; 10];
        let prob = PreparedProblem::new(RegressionProblem::build(inputs, y, 10).unwrap());
        let kernel = StableSplineKernel::new(0.9, 10).unwrap();
        let c = CollinearityMatrix::from_inputs(prob.inputs());
        let pairs = PairProbabilities::new(&c, 100.0).unwrap();
        (prob, kernel, BlockDistribution::new(&pairs, 3))
    }

    #[test]
    fn radius_examples() {
        let d = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        assert!((spectral_radius(&d).unwrap() - 3.0).abs() < 1e-12);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&rot).unwrap() - 1.0).abs() < 1e-12);
        assert!((power_radius(&rot, 1).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(spectral_radius(&DMatrix::zeros(3, 3)).unwrap(), 0.0);
        assert!(spectral_radius(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn power_iteration_matches_dense() {
        let mut rng = ChainRng::seed_from_u64(3);
        let a = DMatrix::from_fn(30, 30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let sym = &a * a.transpose();
        let dense = spectral_radius(&sym).unwrap();
        let power = power_radius(&sym, 9).unwrap();
        assert!((dense - power).abs() < 1e-8 * dense);
    }

    #[test]
    fn single_block_system_mixes_in_one_step() {
        let prob = random_problem(1, 4, 30, 1);
        let kernel = StableSplineKernel::new(0.9, 4).unwrap();
        let hyper = Hyperparameters::common(1.0, 0.5).unwrap();
        let u = build_single_update(0, &prob, &kernel, &hyper).unwrap();
        assert_eq!(u.to_dense().amax(), 0.0);
    }

    #[test]
    fn pair_of_two_channels_is_exact() {
        let prob = random_problem(2, 3, 40, 2);
        let kernel = StableSplineKernel::new(0.9, 3).unwrap();
        let hyper = Hyperparameters::common(1.0, 0.5).unwrap();
        let u = build_pair_update(0, 1, &prob, &kernel, &hyper).unwrap();
        assert_eq!(u.to_dense().amax(), 0.0);
        let mu = joint_posterior_mean(&prob, &kernel, &hyper).unwrap();
        assert!((u.dense_offset() - mu).amax() < 1e-10);
    }

    #[test]
    fn orthogonal_channels_decouple() {
        // impulses at different instants with p = 1 give G_1'G_2 = 0
        let mut first = vec![0.0; 6];
        first[0] = 1.0;
        let mut second = vec![0.0; 6];
        second[5] = 1.0;
        let prob = PreparedProblem::new(
            RegressionProblem::build(vec![first, second], vec![1.0; 6], 1).unwrap(),
        );
        let kernel = StableSplineKernel::new(0.8, 1).unwrap();
        let hyper = Hyperparameters::common(2.0, 1.0).unwrap();
        for i in 0..2 {
            let u = build_single_update(i, &prob, &kernel, &hyper).unwrap();
            assert_eq!(u.rows().amax(), 0.0);
        }
    }

    #[test]
    fn update_rows_match_the_conditional_mean() {
        let prob = random_problem(3, 3, 40, 4);
        let kernel = StableSplineKernel::new(0.85, 3).unwrap();
        let hyper = Hyperparameters::new(crate::ScaleFactors::PerBlock(vec![0.5, 1.0, 2.0]), 0.3).unwrap();
        let mut rng = ChainRng::seed_from_u64(5);
        let theta = DVector::from_fn(9, |_, _| rng.sample::<f64, _>(StandardNormal));
        let set = ImpulseResponseSet::from_stacked(3, 3, theta.clone()).unwrap();
        let u = build_single_update(1, &prob, &kernel, &hyper).unwrap();
        let law = crate::conditionals::theta_k_conditional(1, &set, &hyper, prob.gram(), &kernel).unwrap();
        let next = u.apply(&theta);
        assert!((next.rows(3, 3) - law.mean()).amax() < 1e-10);
        assert!((u.noise() - law.covariance()).amax() < 1e-10);
        let pu = build_pair_update(0, 2, &prob, &kernel, &hyper).unwrap();
        let plaw = crate::conditionals::theta_ij_conditional(0, 2, &set, &hyper, prob.gram(), &kernel).unwrap();
        let pn = pu.apply(&theta);
        assert!((pn.rows(0, 3) - plaw.mean().rows(0, 3)).amax() < 1e-10);
        assert!((pn.rows(6, 3) - plaw.mean().rows(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn fixed_point_of_every_update() {
        let prob = random_problem(3, 3, 60, 6);
        let kernel = StableSplineKernel::new(0.9, 3).unwrap();
        let hyper = Hyperparameters::common(0.7, 0.4).unwrap();
        let mu = joint_posterior_mean(&prob, &kernel, &hyper).unwrap();
        for b in [Block::Single(0), Block::Single(2), Block::Pair(0, 1), Block::Pair(1, 2)] {
            let u = build_update(b, &prob, &kernel, &hyper).unwrap();
            assert!((u.apply(&mu) - &mu).amax() < 1e-9, "{b}");
        }
    }

    #[test]
    fn mixture_arithmetic() {
        let prob = random_problem(2, 2, 30, 7);
        let kernel = StableSplineKernel::new(0.9, 2).unwrap();
        let hyper = Hyperparameters::common(1.0, 1.0).unwrap();
        let pairs = PairProbabilities::new(&CollinearityMatrix::from_inputs(prob.inputs()), 100.0).unwrap();
        let dist = BlockDistribution::new(&pairs, 2);
        let us: Vec<_> = [Block::Single(0), Block::Single(1), Block::Pair(0, 1)]
            .into_iter()
            .map(|b| build_update(b, &prob, &kernel, &hyper).unwrap())
            .collect();
        let mix = mixture_matrix(&us, &dist).unwrap();
        let expected = us[0].to_dense() * 0.25 + us[1].to_dense() * 0.25 + us[2].to_dense() * 0.5;
        assert!((mix.matrix - expected).amax() < 1e-14);
    }

    #[test]
    fn self_adjoint_radius_matches_general_eigensolver() {
        let prob = random_problem(3, 3, 50, 8);
        let kernel = StableSplineKernel::new(0.9, 3).unwrap();
        let hyper = Hyperparameters::common(1.0, 0.2).unwrap();
        let pairs = PairProbabilities::new(&CollinearityMatrix::from_inputs(prob.inputs()), 100.0).unwrap();
        let dist = BlockDistribution::new(&pairs, 2);
        let rep = scheme_rates(&prob, &kernel, &hyper, &dist, Some(100.0), Execution::Sequential).unwrap();
        let general = spectral_radius(rep.mixture.as_ref().unwrap()).unwrap();
        assert!((general - rep.rho_rsgsob).abs() < 1e-9);
        assert!(rep.fixed_point_residual < 1e-8);
        assert!(rep.rho_rsgsob < 1.0 && rep.rho_rsgs < 1.0);
    }

    #[test]
    fn n_ob_zero_gives_equal_mixtures() {
        let prob = random_problem(3, 2, 30, 9);
        let kernel = StableSplineKernel::new(0.9, 2).unwrap();
        let hyper = Hyperparameters::common(1.0, 1.0).unwrap();
        let pairs = PairProbabilities::new(&CollinearityMatrix::from_inputs(prob.inputs()), 100.0).unwrap();
        let rep = scheme_rates(&prob, &kernel, &hyper, &BlockDistribution::new(&pairs, 0), None, Execution::Parallel).unwrap();
        assert!((rep.rate_rsgs - rep.rate_rsgsob).abs() < 1e-14);
    }

    #[test]
    fn toy_rates() {
        let (prob, kernel, dist) = toy();
        let hyper = Hyperparameters::common(1.0, 1.0).unwrap();
        let rep = scheme_rates(&prob, &kernel, &hyper, &dist, Some(100.0), Execution::Parallel).unwrap();
        assert!((rep.rate_rsgsob - 0.5861).abs() < 5e-4, "{}", rep.rate_rsgsob);
        assert!(rep.rate_rsgsob < rep.rate_rsgs);
    }

    #[test]
    fn matrix_dump_round_trip() {
        let a = DMatrix::from_fn(3, 2, |i, j| i as f64 - 0.5 * j as f64);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &a).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 16 + 48);
        assert_eq!(read_matrix(&buf[..]).unwrap(), a);
        assert!(read_matrix(&b"XXXX"[..]).is_err());
    }
}
