//! Relative Fisher information `FI(ν‖μ) = E_ν‖∇log(ν/μ)‖²`, its supremum
//! variant, decay along the OU flow, and Gaussian oracles.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::theta_integral;
use crate::error::{Error, Result};
use crate::linalg::{self, check_dim};
use crate::measures::{draw_variates, Gaussian, TargetMeasure};
use crate::ou::{ou_evolve, ThetaProfile};
use crate::rng::SamplerSeed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

fn require_samplable(nu: &TargetMeasure, mu: &TargetMeasure) -> Result<()> {
    check_dim(nu.dim(), mu.dim())?;
    if !nu.is_exactly_samplable() {
        return Err(Error::Unsupported(format!(
            "Fisher information needs exact samples from ν; {} has none",
            nu.family()
        )));
    }
    Ok(())
}

/// `‖∇log ν(x) − ∇log μ(x)‖²`, or a domain error naming the point.
fn score_gap_sq(nu: &TargetMeasure, mu: &TargetMeasure, x: &[f64]) -> Result<f64> {
    let d = x.len();
    let (mut a, mut b) = (vec![0.0; d], vec![0.0; d]);
    nu.score_into(x, &mut a);
    mu.score_into(x, &mut b);
    let v: f64 = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("non-finite score difference at {x:?}")))
    }
}

/// Monte Carlo `FI(ν‖μ)` from given `ν`-draws.
pub fn fi_from_samples(nu: &TargetMeasure, mu: &TargetMeasure, points: &[DVector<f64>]) -> Result<FiEstimate> {
    check_dim(nu.dim(), mu.dim())?;
    if points.is_empty() {
        return Err(Error::Domain("Fisher information needs at least one sample".into()));
    }
    let vals: Vec<f64> = points
        .par_iter()
        .map(|x| score_gap_sq(nu, mu, x.as_slice()))
        .collect::<Result<_>>()?;
    let (estimate, std_error) = linalg::mean_and_se(&vals);
    Ok(FiEstimate {
        estimate,
        std_error: if vals.len() > 1 { std_error } else { f64::INFINITY },
        samples: vals.len(),
    })
}

pub fn fi(nu: &TargetMeasure, mu: &TargetMeasure, n: usize, seed: SamplerSeed) -> Result<FiEstimate> {
    require_samplable(nu, mu)?;
    fi_from_samples(nu, mu, &nu.sample(seed, n)?)
}

/// Exact `FI(g₁‖g₂) = ‖A m₁ + c‖² + tr(A S₁ Aᵀ)` with `A = S₂⁻¹ − S₁⁻¹`,
/// `c = S₁⁻¹m₁ − S₂⁻¹m₂`.
pub fn fi_gaussian_closed(g1: &Gaussian, g2: &Gaussian) -> Result<f64> {
    check_dim(g1.mean().len(), g2.mean().len())?;
    let (p1, p2) = (g1.precision(), g2.precision());
    let a = p2 - p1;
    let c = p1 * g1.mean() - p2 * g2.mean();
    let shift = &a * g1.mean() + c;
    Ok(shift.norm_squared() + (&a * g1.cov() * a.transpose()).trace())
}

/// Whether `∇log(ν/μ)` is bounded, so that `FI_∞(ν‖μ) < ∞`.
///
/// Every supported family has score `−P x + bounded`; the difference is
/// bounded exactly when the two `P` agree.
pub fn score_difference_bounded(nu: &TargetMeasure, mu: &TargetMeasure) -> bool {
    let (a, b) = (nu.linear_precision(), mu.linear_precision());
    a.shape() == b.shape() && (a - b).amax() <= 1e-12 * a.amax().max(b.amax()).max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiInfEstimate {
    /// Largest refined squared score gap found; a lower bound on `FI_∞`.
    pub estimate: f64,
    pub argmax: Vec<f64>,
    pub samples: usize,
    pub refine_steps: usize,
}

pub const FI_INF_REFINE_STEPS: usize = 20;
const FI_INF_STEP: f64 = 0.05;
const FI_INF_FD: f64 = 1e-4;

/// Fixed-budget ascent on `x ↦ ‖∇log(ν/μ)(x)‖²` from `x0`.
fn refine_gap(nu: &TargetMeasure, mu: &TargetMeasure, x0: &[f64], steps: usize) -> Result<(f64, Vec<f64>)> {
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut fx = score_gap_sq(nu, mu, &x)?;
    let mut y = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for _ in 0..steps {
        for j in 0..d {
            y.copy_from_slice(&x);
            y[j] = x[j] + FI_INF_FD;
            let fp = score_gap_sq(nu, mu, &y)?;
            y[j] = x[j] - FI_INF_FD;
            let fm = score_gap_sq(nu, mu, &y)?;
            grad[j] = (fp - fm) / (2.0 * FI_INF_FD);
        }
        let gnorm = linalg::dot(&grad, &grad).sqrt();
        // flat integrand: nothing beyond rounding to chase
        if gnorm <= 1e-8 * fx.max(1.0) {
            break;
        }
        let step = FI_INF_STEP * linalg::dot(&x, &x).sqrt().max(1.0) / gnorm;
        for j in 0..d {
            y[j] = x[j] + step * grad[j];
        }
        let fy = score_gap_sq(nu, mu, &y)?;
        if fy > fx {
            x.copy_from_slice(&y);
            fx = fy;
        } else {
            break;
        }
    }
    Ok((fx, x))
}

/// Lower estimate of `FI_∞(ν‖μ) = esssup_ν ‖∇log(ν/μ)‖²`: the maximum over
/// `n` refined `ν`-draws.
pub fn fi_inf(
    nu: &TargetMeasure,
    mu: &TargetMeasure,
    n: usize,
    refine_steps: usize,
    seed: SamplerSeed,
) -> Result<FiInfEstimate> {
    require_samplable(nu, mu)?;
    if n == 0 {
        return Err(Error::Domain("FI_∞ needs at least one sample".into()));
    }
    let points = nu.sample(seed, n)?;
    let refined: Vec<(f64, Vec<f64>)> = points
        .par_iter()
        .map(|x| refine_gap(nu, mu, x.as_slice(), refine_steps))
        .collect::<Result<_>>()?;
    // first maximum in index order, for determinism
    let (mut best, mut arg) = (f64::NEG_INFINITY, Vec::new());
    for (v, x) in refined {
        if v > best {
            best = v;
            arg = x;
        }
    }
    Ok(FiInfEstimate {
        estimate: best,
        argmax: arg,
        samples: n,
        refine_steps,
    })
}

/// `FI(q_t^ν‖q_t^μ)` on a time grid, with the Grönwall envelope
/// `exp(−2∫_0^t(1 − 2θ_u)du)·FI(ν‖μ) = exp(4Φ(t) − 2t)·FI(ν‖μ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub times: Vec<f64>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub envelope: Vec<f64>,
    /// `FI(ν‖μ)` at `t = 0` feeding the envelope.
    pub fi0: f64,
    pub fi0_std_error: f64,
}

const ENVELOPE_RTOL: f64 = 1e-12;

impl DecayCurve {
    /// Envelope divided by `FI(ν‖μ)`.
    pub fn envelope_factor(&self, i: usize) -> f64 {
        if self.fi0 > 0.0 {
            self.envelope[i] / self.fi0
        } else {
            0.0
        }
    }

    /// Largest `estimate − envelope` in units of the combined standard error
    /// (`SE_t + factor·SE_0`); `≤ 3` means the envelope holds at every time.
    /// Gaps within `1e−12` relative count as zero; a larger gap with zero
    /// standard error reports `f64::MAX`.
    pub fn max_envelope_excess(&self) -> f64 {
        (0..self.times.len())
            .map(|i| {
                let slack = self.std_errors[i] + self.envelope_factor(i) * self.fi0_std_error;
                let gap = self.estimates[i] - self.envelope[i];
                if gap <= ENVELOPE_RTOL * self.envelope[i].abs().max(self.estimates[i].abs()) {
                    0.0
                } else if slack > 0.0 {
                    gap / slack
                } else {
                    f64::MAX
                }
            })
            .fold(0.0, f64::max)
    }

    /// Non-increasing up to `k` standard errors between consecutive times.
    pub fn is_nonincreasing(&self, k: f64) -> bool {
        self.estimates
            .windows(2)
            .zip(self.std_errors.windows(2))
            .all(|(e, s)| e[1] <= e[0] + k * (s[0] + s[1]) + ENVELOPE_RTOL * e[0].abs())
    }
}

pub fn fi_decay_curve(
    nu: &TargetMeasure,
    mu: &TargetMeasure,
    p: &ThetaProfile,
    times: &[f64],
    n: usize,
    seed: SamplerSeed,
) -> Result<DecayCurve> {
    require_samplable(nu, mu)?;
    if !mu.is_exactly_samplable() {
        return Err(Error::Unsupported("decay curves need exact OU evolution of μ".into()));
    }
    if times.is_empty() || times.windows(2).any(|w| w[0] >= w[1]) || times[0] < 0.0 {
        return Err(Error::Domain("decay times must be non-negative and strictly increasing".into()));
    }
    let p = p.validated()?;
    if n < 2 {
        return Err(Error::Domain("decay curve needs n ≥ 2".into()));
    }
    // common random numbers across all times
    let d = nu.dim();
    let mut rng = seed.rng();
    let mut z = vec![0.0; d];
    let variates: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|_| {
            let u = draw_variates(&mut rng, &mut z);
            (u, z.clone())
        })
        .collect();
    let at = |t: f64| -> Result<FiEstimate> {
        let qn = ou_evolve(nu, t)?.into_measure();
        let qm = ou_evolve(mu, t)?.into_measure();
        let pts: Vec<DVector<f64>> = variates
            .iter()
            .map(|(u, z)| {
                let mut x = DVector::zeros(d);
                qn.from_variates(*u, z, x.as_mut_slice()).map(|_| x)
            })
            .collect::<Result<_>>()?;
        fi_from_samples(&qn, &qm, &pts)
    };
    let base = at(0.0)?;
    let mut curve = DecayCurve {
        times: times.to_vec(),
        estimates: Vec::with_capacity(times.len()),
        std_errors: Vec::with_capacity(times.len()),
        envelope: Vec::with_capacity(times.len()),
        fi0: base.estimate,
        fi0_std_error: base.std_error,
    };
    for &t in times {
        let e = if t == 0.0 { base } else { at(t)? };
        curve.estimates.push(e.estimate);
        curve.std_errors.push(e.std_error);
        curve.envelope.push((4.0 * theta_integral(&p, t) - 2.0 * t).exp() * base.estimate);
    }
    Ok(curve)
}

/// Bures–Wasserstein distance
/// `W₂² = ‖m₁ − m₂‖² + tr(S₁ + S₂ − 2(S₂^{½} S₁ S₂^{½})^{½})`.
pub fn w2_gaussian(g1: &Gaussian, g2: &Gaussian) -> Result<f64> {
    check_dim(g1.mean().len(), g2.mean().len())?;
    let r2 = linalg::sqrtm_psd(g2.cov());
    let cross = linalg::sqrtm_psd(&linalg::symmetrize(&(&r2 * g1.cov() * &r2)));
    let w2sq = (g1.mean() - g2.mean()).norm_squared() + g1.cov().trace() + g2.cov().trace()
        - 2.0 * cross.trace();
    Ok(w2sq.max(0.0).sqrt())
}

/// `KL(g₁‖g₂) = ∫ log(g₁/g₂) dg₁`.
pub fn kl_gaussian(g1: &Gaussian, g2: &Gaussian) -> Result<f64> {
    let d = g1.mean().len();
    check_dim(d, g2.mean().len())?;
    let logdet = |m: &DMatrix<f64>| -> Result<f64> {
        let c = linalg::cholesky(m, "covariance")?;
        Ok(2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    };
    let dm = g2.mean() - g1.mean();
    let p2 = g2.precision();
    let kl = 0.5
        * ((p2 * g1.cov()).trace() + dm.dot(&(p2 * &dm)) - d as f64 + logdet(g2.cov())? - logdet(g1.cov())?);
    Ok(kl.max(0.0))
}
