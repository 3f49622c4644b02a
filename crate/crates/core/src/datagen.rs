//! Synthetic systems, inputs and datasets.
//!
//! Random systems share one stable denominator whose poles have modulus
//! drawn uniformly in `[0.5, 0.95]`, each pole independently real (random
//! sign) or part of a conjugate pair with a uniform argument in `(0, π)`.
//! Numerator coefficients are standard normal. A draw is rejected and
//! redrawn until every channel's energy beyond lag `p` is below 1% of its
//! total.

use nalgebra::{Complex, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::kernel::{ImpulseResponseSet, Regressors};
use crate::{ChainRng, Error, Result};

pub const POLE_MODULUS: (f64, f64) = (0.5, 0.95);
pub const MAX_TAIL_RATIO: f64 = 1e-2;
const MAX_SYSTEM_DRAWS: usize = 1000;
const TAIL_HORIZON: usize = 4000;
/// Coefficient of the moving-average noise `r(t) = v(t) − 0.8 v(t−1)`.
pub const MA_COEFFICIENT: f64 = 0.8;

/// Impulse response of `B(z)/A(z)` (polynomials in `z⁻¹`, `A` monic:
/// `den[0] = 1`), first `len` samples.
pub fn impulse_response(num: &[f64], den: &[f64], len: usize) -> Result<Vec<f64>> {
    if den.first() != Some(&1.0) {
        return Err(Error::Domain("denominator must be monic".into()));
    }
    let mut h = vec![0.0; len];
    for t in 0..len {
        let mut v = num.get(t).copied().unwrap_or(0.0);
        for (i, a) in den.iter().enumerate().skip(1) {
            if i <= t {
                v -= a * h[t - i];
            }
        }
        h[t] = v;
    }
    Ok(h)
}

/// Coefficients of `Π (1 − ρ_i z⁻¹)`; poles must come in conjugate pairs.
pub fn polynomial_from_poles(poles: &[Complex<f64>]) -> Vec<f64> {
    let mut c = vec![Complex::<f64>::new(1.0, 0.0)];
    for &r in poles {
        let mut next = vec![Complex::<f64>::new(0.0, 0.0); c.len() + 1];
        for (k, &ck) in c.iter().enumerate() {
            next[k] += ck;
            next[k + 1] -= ck * r;
        }
        c = next;
    }
    c.into_iter().map(|z| z.re).collect()
}

fn random_poles<R: Rng + ?Sized>(degree: usize, rng: &mut R) -> Vec<Complex<f64>> {
    let modulus = Uniform::new_inclusive(POLE_MODULUS.0, POLE_MODULUS.1).expect("valid range");
    let mut poles = Vec::with_capacity(degree);
    while poles.len() < degree {
        let r = modulus.sample(rng);
        if degree - poles.len() >= 2 && rng.random_bool(0.5) {
            let arg = rng.random_range(0.0..std::f64::consts::PI);
            let z = Complex::<f64>::from_polar(r, arg);
            poles.push(z);
            poles.push(z.conj());
        } else {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            poles.push(Complex::<f64>::new(sign * r, 0.0));
        }
    }
    poles
}

/// Random channels with a shared denominator.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RandomSystems {
    /// Truncated impulse responses, one per channel.
    pub firs: Vec<Vec<f64>>,
    /// `A(z)` coefficients, `denominator[0] = 1`.
    pub denominator: Vec<f64>,
    pub numerators: Vec<Vec<f64>>,
    /// `(re, im)` of every pole.
    pub poles: Vec<(f64, f64)>,
    /// Worst `‖h_{t≥p}‖ / ‖h‖` over channels.
    pub tail_ratio: f64,
}

/// `m` random rational systems of order `degree` with one common
/// denominator, truncated to `p` impulse-response samples.
pub fn random_common_denominator_tfs<R: Rng + ?Sized>(
    m: usize,
    degree: usize,
    p: usize,
    rng: &mut R,
) -> Result<RandomSystems> {
    if degree == 0 || m == 0 || p == 0 {
        return Err(Error::Domain(format!(
            "need m, degree, p >= 1 (got m={m}, degree={degree}, p={p})"
        )));
    }
    let horizon = TAIL_HORIZON.max(4 * p);
    let mut worst = f64::INFINITY;
    for _ in 0..MAX_SYSTEM_DRAWS {
        let poles = random_poles(degree, rng);
        let den = polynomial_from_poles(&poles);
        let numerators: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..degree).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut firs = Vec::with_capacity(m);
        let mut tail = 0.0_f64;
        for num in &numerators {
            let h = impulse_response(num, &den, horizon)?;
            let total: f64 = h.iter().map(|x| x * x).sum();
            let beyond: f64 = h[p..].iter().map(|x| x * x).sum();
            tail = tail.max(if total > 0.0 { (beyond / total).sqrt() } else { f64::INFINITY });
            firs.push(h[..p].to_vec());
        }
        if tail < MAX_TAIL_RATIO {
            return Ok(RandomSystems {
                firs,
                denominator: den,
                numerators,
                poles: poles.iter().map(|z| (z.re, z.im)).collect(),
                tail_ratio: tail,
            });
        }
        worst = worst.min(tail);
    }
    Err(Error::Degenerate(format!(
        "no system with tail ratio below {MAX_TAIL_RATIO} in {MAX_SYSTEM_DRAWS} draws (best {worst:.3e}, p={p})"
    )))
}

/// How the variance of the moving-average link noise is set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaVarianceConvention {
    /// `ω² = η²(1/c² − 1)/(1 + 0.8²)`: the MA(1) variance, so adjacent
    /// inputs hit the target correlation.
    #[default]
    Exact,
    /// `ω² = η²(1/c² − 1)(1 − 0.8²)`, which treats the link noise as if it
    /// had AR(1) variance. Adjacent correlations come out slightly above
    /// target (0.9941 for c = 0.99).
    AutoregressiveFormula,
}

impl MaVarianceConvention {
    /// Innovation variance for predecessor variance `eta2` and target `c`.
    pub fn innovation_variance(self, eta2: f64, c: f64) -> f64 {
        let a2 = MA_COEFFICIENT * MA_COEFFICIENT;
        let base = eta2 * (1.0 / (c * c) - 1.0);
        match self {
            MaVarianceConvention::Exact => base / (1.0 + a2),
            MaVarianceConvention::AutoregressiveFormula => base * (1.0 - a2),
        }
    }
}

fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Chain `u_1 = base`, `u_{i+1} = u_i + r_i` with `r_i(t) = v(t) − 0.8 v(t−1)`
/// and white Gaussian `v`, its variance set so that `corr(u_i, u_{i+1})`
/// targets `targets[i]`. Returns `targets.len() + 1` inputs.
pub fn collinear_input_chain<R: Rng + ?Sized>(
    base: &[f64],
    targets: &[f64],
    convention: MaVarianceConvention,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if base.len() < 2 {
        return Err(Error::InsufficientSamples("base input needs at least 2 samples".into()));
    }
    if let Some(c) = targets.iter().find(|&&c| !(c > 0.0 && c < 1.0)) {
        return Err(Error::Domain(format!("collinearity target {c} outside (0, 1)")));
    }
    let mut chain = vec![base.to_vec()];
    for &c in targets {
        let prev = chain.last().expect("chain is never empty");
        let omega = convention.innovation_variance(sample_variance(prev), c).sqrt();
        let mut v_prev = omega * rng.sample::<f64, _>(StandardNormal);
        let next: Vec<f64> = prev
            .iter()
            .map(|u| {
                let v = omega * rng.sample::<f64, _>(StandardNormal);
                let r = v - MA_COEFFICIENT * v_prev;
                v_prev = v;
                u + r
            })
            .collect();
        chain.push(next);
    }
    Ok(chain)
}

/// `factor` times the sample variance of `signal`.
pub fn noise_variance_from_snr(signal: &[f64], factor: f64) -> Result<f64> {
    if !(factor > 0.0) {
        return Err(Error::Domain(format!("noise factor must be positive, got {factor}")));
    }
    if signal.len() < 2 {
        return Err(Error::InsufficientSamples("signal needs at least 2 samples".into()));
    }
    let var = sample_variance(signal);
    if var == 0.0 {
        return Err(Error::Degenerate("constant signal has no variance to scale".into()));
    }
    Ok(factor * var)
}

/// `m` independent white Gaussian inputs of variance `variance`.
pub fn white_inputs<R: Rng + ?Sized>(m: usize, n: usize, variance: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let sd = variance.sqrt();
    (0..m)
        .map(|_| (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// `m` copies of the unit impulse of length `n`.
pub fn delta_inputs(m: usize, n: usize) -> Vec<Vec<f64>> {
    let mut u = vec![0.0; n];
    if n > 0 {
        u[0] = 1.0;
    }
    vec![u; m]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputDesign {
    /// One white sequence fed to every channel.
    Identical,
    /// Independent white sequences.
    White,
    /// Unit impulses at time 1 on every channel.
    Delta,
    /// A collinear chain over the first `targets.len() + 1` channels, white
    /// inputs on the rest.
    CollinearChain {
        targets: Vec<f64>,
        #[serde(default)]
        convention: MaVarianceConvention,
    },
}

impl InputDesign {
    /// Channels generated as mutually collinear.
    pub fn collinear_channels(&self, m: usize) -> Vec<usize> {
        match self {
            InputDesign::Identical | InputDesign::Delta => (0..m).collect(),
            InputDesign::White => Vec::new(),
            InputDesign::CollinearChain { targets, .. } => (0..(targets.len() + 1).min(m)).collect(),
        }
    }
}

fn default_degree() -> usize {
    5
}

fn default_alpha() -> f64 {
    0.9
}

fn default_variance() -> f64 {
    1.0
}

/// Experiment descriptor read by `misogibbs generate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub m: usize,
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Kernel decay recorded with the problem.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub inputs: InputDesign,
    #[serde(default = "default_variance")]
    pub input_variance: f64,
    /// σ² is this factor times the sample variance of the noiseless output.
    pub noise_factor: f64,
    pub seed: u64,
}

impl DatasetSpec {
    /// Two identical white inputs, `n = 500`, `p = 50`, σ² a fifth of the
    /// output variance.
    pub fn example1(seed: u64) -> Self {
        Self {
            m: 2,
            n: 500,
            p: 50,
            degree: 5,
            alpha: 0.9,
            inputs: InputDesign::Identical,
            input_variance: 1.0,
            noise_factor: 0.2,
            seed,
        }
    }

    /// `m = 20`: ten inputs chained at `c = 0.99` plus ten independent ones,
    /// `n = 10⁴`, `p = 50`, noise factor 0.3.
    pub fn example2_scaled(seed: u64) -> Self {
        Self {
            m: 20,
            n: 10_000,
            p: 50,
            degree: 5,
            alpha: 0.9,
            inputs: InputDesign::CollinearChain {
                targets: vec![0.99; 9],
                convention: MaVarianceConvention::Exact,
            },
            input_variance: 1.0,
            noise_factor: 0.3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.p == 0 || self.n < self.p {
            return Err(Error::Domain(format!(
                "need m >= 1 and n >= p >= 1 (got m={}, n={}, p={})",
                self.m, self.n, self.p
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.input_variance > 0.0) {
            return Err(Error::Domain("input_variance must be positive".into()));
        }
        if let InputDesign::CollinearChain { targets, .. } = &self.inputs {
            if targets.len() + 1 > self.m {
                return Err(Error::Domain(format!(
                    "{} chain links need at least {} channels, m={}",
                    targets.len(),
                    targets.len() + 1,
                    self.m
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
    pub truth: ImpulseResponseSet,
    pub sigma2: f64,
    pub collinear_channels: Vec<usize>,
    pub tail_ratio: f64,
}

/// Systems first, then inputs, then noise, all from one generator seeded
/// with `spec.seed`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChainRng::seed_from_u64(spec.seed);
    let systems = random_common_denominator_tfs(spec.m, spec.degree, spec.p, &mut rng)?;
    let inputs = match &spec.inputs {
        InputDesign::Identical => {
            let u = white_inputs(1, spec.n, spec.input_variance, &mut rng).remove(0);
            vec![u; spec.m]
        }
        InputDesign::White => white_inputs(spec.m, spec.n, spec.input_variance, &mut rng),
        InputDesign::Delta => delta_inputs(spec.m, spec.n),
        InputDesign::CollinearChain { targets, convention } => {
            let base = white_inputs(1, spec.n, spec.input_variance, &mut rng).remove(0);
            let mut all = collinear_input_chain(&base, targets, *convention, &mut rng)?;
            let rest = spec.m - all.len();
            all.extend(white_inputs(rest, spec.n, spec.input_variance, &mut rng));
            all
        }
    };
    let truth = ImpulseResponseSet::from_blocks(&systems.firs)?;
    let regressors = Regressors::with_any_channels(inputs.clone(), spec.p)?;
    let signal: DVector<f64> = regressors.apply(&truth)?;
    let sigma2 = noise_variance_from_snr(signal.as_slice(), spec.noise_factor)?;
    let sd = sigma2.sqrt();
    let output = signal
        .iter()
        .map(|s| s + sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(Dataset {
        collinear_channels: spec.inputs.collinear_channels(spec.m),
        spec: spec.clone(),
        inputs,
        output,
        truth,
        sigma2,
        tail_ratio: systems.tail_ratio,
    })
}
