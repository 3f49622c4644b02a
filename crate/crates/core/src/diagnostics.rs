//! Fit scores, the Raftery-Lewis run-length diagnostic and
//! autocovariances of chain functionals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::exec::{self, Execution};
use crate::kernel::ImpulseResponseSet;
use crate::linalg::quantile_sorted;
use crate::samplers::ChainTrace;
use crate::{Error, Result};

/// `100 (1 − ‖x − x̂‖ / ‖x‖)`.
pub fn fit(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Dimension(format!(
            "fit of vectors of lengths {} and {}",
            x.len(),
            x_hat.len()
        )));
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Domain("fit against an all-zero truth".into()));
    }
    let err = x
        .iter()
        .zip(x_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * (1.0 - err / norm))
}

/// Fits over all channels and over a collinear / independent split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fit_all: f64,
    pub fit_col: Option<f64>,
    pub fit_ind: Option<f64>,
    /// 0-based channels forming `θ_col`.
    pub col: Vec<usize>,
    /// 0-based channels forming `θ_ind`.
    pub ind: Vec<usize>,
}

fn gather(set: &ImpulseResponseSet, channels: &[usize]) -> Vec<f64> {
    channels
        .iter()
        .flat_map(|&k| set.block(k).iter().copied().collect::<Vec<_>>())
        .collect()
}

impl FitReport {
    /// Scores `estimate` against `truth`; `col` lists the collinear
    /// channels and every other channel counts as independent.
    pub fn new(truth: &ImpulseResponseSet, estimate: &ImpulseResponseSet, col: &[usize]) -> Result<Self> {
        if truth.m() != estimate.m() || truth.p() != estimate.p() {
            return Err(Error::Dimension("truth and estimate differ in shape".into()));
        }
        if let Some(&k) = col.iter().find(|&&k| k >= truth.m()) {
            return Err(Error::Dimension(format!("channel {k} out of 0..{}", truth.m())));
        }
        let ind: Vec<usize> = (0..truth.m()).filter(|k| !col.contains(k)).collect();
        let part = |ch: &[usize]| -> Result<Option<f64>> {
            if ch.is_empty() {
                return Ok(None);
            }
            fit(&gather(truth, ch), &gather(estimate, ch)).map(Some)
        };
        Ok(Self {
            fit_all: fit(truth.stacked().as_slice(), estimate.stacked().as_slice())?,
            fit_col: part(col)?,
            fit_ind: part(&ind)?,
            col: col.to_vec(),
            ind,
        })
    }
}

/// Quantile, accuracy and probability targets of the Raftery-Lewis
/// diagnostic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlTargets {
    pub q: f64,
    pub r: f64,
    pub s: f64,
    /// Tolerance of the burn-in criterion.
    pub eps: f64,
    /// Refuse traces shorter than `N_min`. Short pilots (such as 200
    /// samples against `N_min = 235`) need this off.
    pub require_min_length: bool,
}

impl Default for RlTargets {
    fn default() -> Self {
        Self {
            q: 0.025,
            r: 0.02,
            s: 0.95,
            eps: 0.001,
            require_min_length: true,
        }
    }
}

impl RlTargets {
    pub fn for_pilots() -> Self {
        Self {
            require_min_length: false,
            ..Self::default()
        }
    }

    /// `N_min = ⌈q(1−q) (Φ⁻¹((1+s)/2) / r)²⌉`, the run length for
    /// independent samples.
    pub fn n_min(&self) -> usize {
        let phi = standard_normal_quantile((1.0 + self.s) / 2.0);
        (self.q * (1.0 - self.q) * phi * phi / (self.r * self.r)).ceil() as usize
    }
}

fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLengthReport {
    /// Burn-in `M`.
    pub burn_in: usize,
    /// Total run length `N` (burn-in included).
    pub total: usize,
    pub n_min: usize,
    /// `N / N_min`.
    pub dependence_factor: f64,
    pub thin: usize,
    pub q: f64,
    pub r: f64,
    pub s: f64,
}

/// Raftery-Lewis diagnostic of a scalar trace.
///
/// The trace is dichotomized at its empirical `q`-quantile. The thinning
/// `k` is the smallest for which a first-order Markov chain beats a
/// second-order one on the thinned indicators by BIC; `M` and `N` then
/// follow from the two-state transition probabilities.
pub fn raftery_lewis(trace: &[f64], targets: &RlTargets) -> Result<RunLengthReport> {
    let RlTargets { q, r, s, eps, .. } = *targets;
    if !(q > 0.0 && q < 1.0 && r > 0.0 && s > 0.0 && s < 1.0 && eps > 0.0) {
        return Err(Error::Domain(format!("invalid targets q={q}, r={r}, s={s}, eps={eps}")));
    }
    let n_min = targets.n_min();
    let n = trace.len();
    if n < 4 || (targets.require_min_length && n < n_min) {
        return Err(Error::InsufficientSamples(format!(
            "Raftery-Lewis needs at least {} samples, got {n}",
            if targets.require_min_length { n_min } else { 4 }
        )));
    }
    let mut sorted = trace.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = quantile_sorted(&sorted, q);
    let z: Vec<usize> = trace.iter().map(|&x| usize::from(x <= cut)).collect();

    let mut k = 1;
    let thinned = loop {
        let t: Vec<usize> = z.iter().copied().step_by(k).collect();
        if t.len() < 3 {
            return Err(Error::InsufficientSamples(format!(
                "no thinning of {n} samples passes the first-order Markov test"
            )));
        }
        if markov_bic(&t) < 0.0 {
            break t;
        }
        k += 1;
    };

    let mut tran = [[0.0f64; 2]; 2];
    for w in thinned.windows(2) {
        tran[w[0]][w[1]] += 1.0;
    }
    let row0 = tran[0][0] + tran[0][1];
    let row1 = tran[1][0] + tran[1][1];
    if row0 == 0.0 || row1 == 0.0 {
        return Err(Error::Degenerate(
            "indicator chain never visits one of its states".into(),
        ));
    }
    let alpha = tran[0][1] / row0;
    let beta = tran[1][0] / row1;
    if alpha + beta == 0.0 {
        return Err(Error::Degenerate("indicator chain has no transitions".into()));
    }
    let phi = standard_normal_quantile((1.0 + s) / 2.0);
    let lambda = 1.0 - alpha - beta;
    let burn = if lambda.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        ((eps * (alpha + beta) / alpha.max(beta)).ln() / lambda.abs().ln()).ceil().max(0.0)
    };
    let burn_in = burn as usize * k;
    let prec = (2.0 - alpha - beta) * alpha * beta * phi * phi / ((alpha + beta).powi(3) * r * r);
    let keep = (prec * k as f64).ceil() as usize;
    let total = burn_in + keep;
    Ok(RunLengthReport {
        burn_in,
        total,
        n_min,
        dependence_factor: total as f64 / n_min as f64,
        thin: k,
        q,
        r,
        s,
    })
}

// G² of the first-order fit of a second-order chain, minus its BIC
// penalty; negative means the first-order chain is adequate
fn markov_bic(z: &[usize]) -> f64 {
    let mut t = [[[0.0f64; 2]; 2]; 2];
    for w in z.windows(3) {
        t[w[0]][w[1]][w[2]] += 1.0;
    }
    let mut g2 = 0.0;
    for i1 in 0..2 {
        for i2 in 0..2 {
            for i3 in 0..2 {
                let c = t[i1][i2][i3];
                if c == 0.0 {
                    continue;
                }
                let fitted = (t[i1][i2][0] + t[i1][i2][1]) * (t[0][i2][i3] + t[1][i2][i3])
                    / (t[0][i2][0] + t[0][i2][1] + t[1][i2][0] + t[1][i2][1]);
                g2 += 2.0 * c * (c / fitted).ln();
            }
        }
    }
    g2 - 2.0 * ((z.len() - 2) as f64).ln()
}

/// Largest `M` and `N` over a set of coefficients of one pilot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotRunLength {
    pub pilot: usize,
    pub max_burn_in: usize,
    pub max_total: usize,
    /// Coefficients whose indicator chain was degenerate in this pilot.
    pub skipped: usize,
}

/// Raftery-Lewis maxima over `coefficients` (stacked indices) of the first
/// `len` stored samples of every pilot trace.
///
/// Coefficients whose pilot indicator chain is degenerate are skipped and
/// counted; a pilot where every coefficient is skipped is an error.
pub fn pilot_maxima(
    pilots: &[ChainTrace],
    coefficients: &[usize],
    len: usize,
    targets: &RlTargets,
    exec: Execution,
) -> Result<Vec<PilotRunLength>> {
    let mut out = Vec::with_capacity(pilots.len());
    for (idx, trace) in pilots.iter().enumerate() {
        if trace.len() < len {
            return Err(Error::InsufficientSamples(format!(
                "pilot {idx} has {} stored samples, {len} requested",
                trace.len()
            )));
        }
        let reports = exec::map_range(exec, coefficients.len(), |c| {
            let series: Vec<f64> = (0..len).map(|s| trace.theta_row(s)[coefficients[c]]).collect();
            raftery_lewis(&series, targets)
        });
        let mut best = PilotRunLength {
            pilot: idx,
            max_burn_in: 0,
            max_total: 0,
            skipped: 0,
        };
        let mut any = false;
        for rep in reports {
            match rep {
                Ok(r) => {
                    any = true;
                    best.max_burn_in = best.max_burn_in.max(r.burn_in);
                    best.max_total = best.max_total.max(r.total);
                }
                Err(Error::Degenerate(_)) | Err(Error::InsufficientSamples(_)) => best.skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if !any {
            return Err(Error::Degenerate(format!(
                "pilot {idx}: every monitored coefficient is degenerate"
            )));
        }
        out.push(best);
    }
    Ok(out)
}

/// Biased (`1/T`) autocovariances at lags `0..=max_lag`.
pub fn autocovariance(series: &[f64], max_lag: usize) -> Vec<f64> {
    let t = series.len();
    if t == 0 {
        return vec![0.0; max_lag + 1];
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    (0..=max_lag)
        .map(|lag| {
            if lag >= t {
                return 0.0;
            }
            centered[..t - lag]
                .iter()
                .zip(&centered[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / t as f64
        })
        .collect()
}

/// Geometric ratio of `acov` over `lags`: `exp` of the least-squares slope
/// of `log γ(k)` against `k`. Non-positive values end the fit early.
pub fn geometric_decay_ratio(acov: &[f64], lags: std::ops::RangeInclusive<usize>) -> Result<f64> {
    let pts: Vec<(f64, f64)> = lags
        .take_while(|&k| k < acov.len() && acov[k] > 0.0)
        .map(|k| (k as f64, acov[k].ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientSamples(
            "fewer than two positive autocovariances to fit".into(),
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok((sxy / sxx).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ChainRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChainRng::seed_from_u64(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    #[test]
    fn fit_examples() {
        assert_eq!(fit(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 100.0);
        assert_eq!(fit(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((fit(&[3.0, 4.0], &[3.0, 0.0]).unwrap() - 20.0).abs() < 1e-12);
        assert!(fit(&[0.0], &[1.0]).is_err());
        let a = fit(&[3.0, 4.0], &[2.0, 1.0]).unwrap();
        let b = fit(&[-6.0, -8.0], &[-4.0, -2.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fit_report_splits_channels() {
        let truth = ImpulseResponseSet::from_blocks(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let est = ImpulseResponseSet::from_blocks(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let rep = FitReport::new(&truth, &est, &[0, 1]).unwrap();
        assert_eq!(rep.ind, vec![2]);
        assert_eq!(rep.fit_ind, Some(100.0));
        assert!((rep.fit_col.unwrap() - 100.0 * (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn n_min_default() {
        assert_eq!(RlTargets::default().n_min(), 235);
    }

    #[test]
    fn iid_trace_needs_about_n_min() {
        let mut rng = ChainRng::seed_from_u64(4);
        let x: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let rep = raftery_lewis(&x, &RlTargets::default()).unwrap();
        assert!((rep.total as f64 / 235.0 - 1.0).abs() < 0.1, "{rep:?}");
    }

    #[test]
    fn correlated_trace_needs_more() {
        let rep = raftery_lewis(&ar1(0.95, 50_000, 5), &RlTargets::default()).unwrap();
        assert!(rep.total >= 10 * rep.n_min, "{rep:?}");
    }

    #[test]
    fn constant_trace_is_degenerate() {
        assert!(matches!(
            raftery_lewis(&vec![1.0; 1000], &RlTargets::default()),
            Err(Error::Degenerate(_))
        ));
        assert!(raftery_lewis(&[1.0, 2.0, 3.0, 4.0, 5.0], &RlTargets::default()).is_err());
    }

    #[test]
    fn autocovariance_examples() {
        assert_eq!(autocovariance(&[2.0; 10], 2), vec![0.0; 3]);
        let mut rng = ChainRng::seed_from_u64(6);
        let x: Vec<f64> = (0..100_000).map(|_| rng.sample(StandardNormal)).collect();
        assert!(autocovariance(&x, 1)[1].abs() < 0.01);
        let g = autocovariance(&ar1(0.9, 200_000, 7), 3);
        assert!((g[1] / g[0] - 0.9).abs() < 0.02);
        assert!((g[2] / g[1] - 0.9).abs() < 0.02);
    }

    #[test]
    fn decay_ratio_of_exact_geometric_sequence() {
        let g: Vec<f64> = (0..10).map(|k| 0.7f64.powi(k)).collect();
        assert!((geometric_decay_ratio(&g, 1..=6).unwrap() - 0.7).abs() < 1e-12);
    }
}
