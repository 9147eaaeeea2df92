//! Ornstein–Uhlenbeck semigroup machinery.
//!
//! The forward process `dX = −X dt + √2 dB` has kernel
//! `q_t(·|x) = N(e^{−t}x, (1 − e^{−2t}) I)`, so a Gaussian component
//! `N(m, Σ)` evolves to `N(e^{−t}m, e^{−2t}Σ + (1 − e^{−2t}) I)`. Gaussians and
//! shared-covariance mixtures are closed under this map, which gives exact
//! evolved scores `∇log q_t` for the flow drift.
//!
//! [`ThetaProfile`] holds the scalar curves `θ_u` bounding
//! `λ_max(I + ∇²log q_u)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_dim, check_finite};
use crate::measures::TargetMeasure;
use crate::rng::SamplerSeed;

/// `1 − e^{−2t}` without cancellation for small `t`.
#[inline]
pub fn kernel_variance(t: f64) -> f64 {
    -(-2.0 * t).exp_m1()
}

/// A target pushed forward by the OU semigroup to time `t`.
#[derive(Debug, Clone)]
pub struct EvolvedMeasure {
    base: TargetMeasure,
    t: f64,
    evolved: TargetMeasure,
}

impl EvolvedMeasure {
    pub fn base(&self) -> &TargetMeasure {
        &self.base
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// `μQ_t` as a measure of the same family.
    pub fn measure(&self) -> &TargetMeasure {
        &self.evolved
    }

    pub fn into_measure(self) -> TargetMeasure {
        self.evolved
    }
}

fn evolve_cov(cov: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let d = cov.nrows();
    cov * (-2.0 * t).exp() + DMatrix::identity(d, d) * kernel_variance(t)
}

/// Exact pushforward of a Gaussian or mixture through the OU kernel.
pub fn ou_evolve(m: &TargetMeasure, t: f64) -> Result<EvolvedMeasure> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("OU time must be finite and ≥ 0, got {t}")));
    }
    let decay = (-t).exp();
    let evolved = match m {
        TargetMeasure::Gaussian(g) => {
            TargetMeasure::gaussian(g.mean() * decay, evolve_cov(g.cov(), t))?
        }
        TargetMeasure::GaussianMixture(mix) => TargetMeasure::mixture(
            mix.means().iter().map(|mk| mk * decay).collect(),
            mix.weights().to_vec(),
            evolve_cov(mix.cov(), t),
        )?,
        TargetMeasure::PerturbedSlc(_) => {
            return Err(Error::Unsupported(
                "exact OU evolution of perturbed_slc; use evolved_score_generic".into(),
            ))
        }
    };
    Ok(EvolvedMeasure {
        base: m.clone(),
        t,
        evolved,
    })
}

/// `∇log(μQ_t)(y)` for Gaussians and mixtures.
pub fn evolved_score(m: &TargetMeasure, t: f64, y: &[f64]) -> Result<DVector<f64>> {
    ou_evolve(m, t)?.measure().score(y)
}

/// Self-normalized importance-sampling estimate of an evolved score.
#[derive(Debug, Clone)]
pub struct GenericScoreEstimate {
    pub score: DVector<f64>,
    /// Per-coordinate standard error.
    pub std_error: DVector<f64>,
    pub effective_sample_size: f64,
    /// Set when the effective sample size fell below 50.
    pub low_ess: bool,
}

pub const MIN_EFFECTIVE_SAMPLES: f64 = 50.0;

/// Monte Carlo evolved score for any family, through the posterior-mean
/// identity `∇log(μQ_t)(y) = (e^{−t} E_{μ_{y,t}}[X] − y) / (1 − e^{−2t})`
/// with `μ_{y,t}(x) ∝ q_t(y|x) μ(x)`.
///
/// The proposal is the exact posterior under the Gaussian part of the target
/// (`N(m₀, P₀⁻¹)`), so importance weights are the remaining non-Gaussian
/// factor. For a Gaussian target the weights are uniform.
pub fn evolved_score_generic(
    m: &TargetMeasure,
    t: f64,
    y: &[f64],
    n: usize,
    seed: SamplerSeed,
) -> Result<GenericScoreEstimate> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!(
            "generic evolved score needs t > 0 (kernel degenerates at 0), got {t}"
        )));
    }
    if n < 2 {
        return Err(Error::Domain("generic evolved score needs at least 2 samples".into()));
    }
    let d = m.dim();
    check_dim(d, y.len())?;
    check_finite(y, "evaluation point")?;

    let decay = (-t).exp();
    let var = kernel_variance(t);
    let (m0, p0) = m.prior_decomposition();
    let post_prec = &p0 + DMatrix::identity(d, d) * (decay * decay / var);
    let post_chol = linalg::cholesky(&post_prec, "posterior precision")?;
    let yv = DVector::from_column_slice(y);
    let post_mean = post_chol.solve(&(&p0 * &m0 + &yv * (decay / var)));
    // x = mean + U⁻¹ z with post_prec = U U^T, U lower
    let lower = post_chol.l();
    let upper_t = lower.transpose();

    let mut rng = seed.rng();
    let mut xs = Vec::with_capacity(n);
    let mut logw = Vec::with_capacity(n);
    for _ in 0..n {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dx = upper_t
            .solve_upper_triangular(&z)
            .expect("Cholesky factor is nonsingular");
        let x = &post_mean + dx;
        logw.push(m.prior_log_weight(x.as_slice()));
        xs.push(x);
    }
    let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return Err(Error::Domain("importance weights are all zero or non-finite".into()));
    }
    let mut w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
    let total = linalg::pairwise_sum(&w);
    w.iter_mut().for_each(|v| *v /= total);
    let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();

    let mut mean = DVector::zeros(d);
    for (wi, x) in w.iter().zip(&xs) {
        mean += x * *wi;
    }
    let mut var_mean = DVector::zeros(d);
    for (wi, x) in w.iter().zip(&xs) {
        let r = x - &mean;
        var_mean += r.component_mul(&r) * (wi * wi);
    }
    let scale = decay / var;
    Ok(GenericScoreEstimate {
        score: (mean * decay - yv) / var,
        std_error: var_mean.map(|v| v.sqrt() * scale),
        effective_sample_size: ess,
        low_ess: ess < MIN_EFFECTIVE_SAMPLES,
    })
}

/// Scalar bound curve `u ↦ θ_u` with `I + ∇²log q_u ⪯ θ_u I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThetaProfile {
    /// `α`-strongly log-concave target.
    Slc { alpha: f64 },
    /// `exp(−V − H)`, `V` `α`-convex, `H` `L`-Lipschitz.
    Perturbed { alpha: f64, lipschitz: f64 },
    /// `γ·exp(−h)` with `κ_h(r) ≥ α − ĝ(r)/r`; only `ĝ′(0)` enters.
    ConvexityProfile { alpha: f64, g0: f64 },
}

impl ThetaProfile {
    pub fn slc(alpha: f64) -> Result<Self> {
        Self::Slc { alpha }.validated()
    }

    pub fn perturbed(alpha: f64, lipschitz: f64) -> Result<Self> {
        Self::Perturbed { alpha, lipschitz }.validated()
    }

    pub fn convexity_profile(alpha: f64, g0: f64) -> Result<Self> {
        Self::ConvexityProfile { alpha, g0 }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let bad = |what: String| Err(Error::Construction(what));
        match self {
            ThetaProfile::Slc { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                bad(format!("slc profile needs α > 0, got {alpha}"))
            }
            ThetaProfile::Perturbed { alpha, lipschitz } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    bad(format!("perturbed profile needs α > 0, got {alpha}"))
                } else if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
                    bad(format!("perturbed profile needs L ≥ 0, got {lipschitz}"))
                } else {
                    Ok(self)
                }
            }
            ThetaProfile::ConvexityProfile { alpha, g0 } => {
                if !(alpha > -1.0 && alpha.is_finite()) {
                    bad(format!("convexity profile needs α > −1, got {alpha}"))
                } else if !(g0 >= 0.0 && g0.is_finite()) {
                    bad(format!("convexity profile needs ĝ′(0) ≥ 0, got {g0}"))
                } else {
                    Ok(self)
                }
            }
            other => Ok(other),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ThetaProfile::Slc { .. } => "slc",
            ThetaProfile::Perturbed { .. } => "perturbed",
            ThetaProfile::ConvexityProfile { .. } => "convexity_profile",
        }
    }

    /// The profile in perturbed form when it has one (`slc` is `L = 0`).
    pub(crate) fn as_perturbed(&self) -> Option<(f64, f64)> {
        match *self {
            ThetaProfile::Slc { alpha } => Some((alpha, 0.0)),
            ThetaProfile::Perturbed { alpha, lipschitz } => Some((alpha, lipschitz)),
            ThetaProfile::ConvexityProfile { .. } => None,
        }
    }

    /// Default profile for a target: `slc` with `α = λ_min(S⁻¹)` for a
    /// Gaussian, `perturbed` with the tilt constants for mixtures and
    /// perturbed targets.
    pub fn derive_for(m: &TargetMeasure) -> Result<Self> {
        match m {
            TargetMeasure::Gaussian(g) => Self::slc(linalg::lambda_min(g.precision())),
            TargetMeasure::GaussianMixture(mix) => {
                let b = mix.lipschitz_bound();
                Self::perturbed(b.alpha, b.lipschitz)
            }
            TargetMeasure::PerturbedSlc(p) => Self::perturbed(p.alpha(), p.lipschitz()),
        }
    }
}

/// `θ_u` for a profile.
///
/// The perturbed family diverges like `1/√u` at the origin; `theta` returns
/// `+∞` at `u = 0` when `L > 0`. Integrals against it use the closed-form
/// antiderivative in [`crate::bounds`].
pub fn theta(p: &ThetaProfile, u: f64) -> f64 {
    match *p {
        ThetaProfile::Slc { alpha } => theta_slc(alpha, u),
        ThetaProfile::Perturbed { alpha, lipschitz } => {
            let base = theta_slc(alpha, u);
            if lipschitz == 0.0 {
                return base;
            }
            let b = (2.0 * u).exp_m1();
            if b == 0.0 {
                return f64::INFINITY;
            }
            let e2u = b + 1.0;
            let q = alpha * b + 1.0;
            base + e2u * lipschitz * lipschitz / (q * q) + 2.0 * lipschitz * e2u / (q.powf(1.5) * b.sqrt())
        }
        ThetaProfile::ConvexityProfile { alpha, g0 } => {
            let e = (-2.0 * u).exp();
            let z = 1.0 + kernel_variance(u) * alpha;
            -e / z * (alpha - g0 / z)
        }
    }
}

fn theta_slc(alpha: f64, u: f64) -> f64 {
    (1.0 - alpha) / (alpha * (2.0 * u).exp_m1() + 1.0)
}

/// Result of checking `I + ∇²log q_t ⪯ θ_t I` on a probe set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaCheck {
    pub time: f64,
    pub theta: f64,
    /// `max_probes λ_max(I + ∇²log q_t)`.
    pub max_lambda: f64,
    /// `max_lambda − θ_t`; a valid profile gives a value ≤ 0 up to rounding.
    pub max_violation: f64,
}

pub fn theta_empirical_check(
    m: &TargetMeasure,
    p: &ThetaProfile,
    t: f64,
    probes: &[DVector<f64>],
) -> Result<ThetaCheck> {
    let evolved = ou_evolve(m, t)?;
    let d = m.dim();
    let mut max_lambda = f64::NEG_INFINITY;
    for y in probes {
        let h = evolved.measure().hessian(y.as_slice())?;
        max_lambda = max_lambda.max(linalg::lambda_max(&(h + DMatrix::identity(d, d))));
    }
    let th = theta(p, t);
    Ok(ThetaCheck {
        time: t,
        theta: th,
        max_lambda,
        max_violation: max_lambda - th,
    })
}

/// Evolved measures precomputed on a fixed set of OU times.
///
/// Built once per flow integration for the integrator's stage times; lookups
/// are by exact time value with an on-the-fly fallback.
#[derive(Debug, Clone)]
pub struct EvolvedScoreCache {
    base: TargetMeasure,
    times: Vec<f64>,
    measures: Vec<TargetMeasure>,
}

impl EvolvedScoreCache {
    pub fn new(base: &TargetMeasure, times: &[f64]) -> Result<Self> {
        let mut times: Vec<f64> = times.to_vec();
        times.sort_by(|a, b| a.total_cmp(b));
        times.dedup();
        let measures = times
            .iter()
            .map(|&t| ou_evolve(base, t).map(EvolvedMeasure::into_measure))
            .collect::<Result<_>>()?;
        Ok(Self {
            base: base.clone(),
            times,
            measures,
        })
    }

    pub fn base(&self) -> &TargetMeasure {
        &self.base
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn get(&self, t: f64) -> Option<&TargetMeasure> {
        self.times
            .binary_search_by(|probe| probe.total_cmp(&t))
            .ok()
            .map(|i| &self.measures[i])
    }

    pub(crate) fn index_of(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|probe| probe.total_cmp(&t)).ok()
    }

    #[inline]
    pub(crate) fn measure_at(&self, i: usize) -> &TargetMeasure {
        &self.measures[i]
    }

    #[inline]
    pub(crate) fn score_into(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        match self.get(t) {
            Some(m) => m.score_into(y, out),
            None => ou_evolve(&self.base, t)?.measure().score_into(y, out),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dv(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn mix2() -> TargetMeasure {
        TargetMeasure::mixture(
            vec![dv(&[1.0, -0.5]), dv(&[-1.5, 0.8])],
            vec![0.4, 0.6],
            DMatrix::from_row_slice(2, 2, &[0.7, 0.2, 0.2, 1.4]),
        )
        .unwrap()
    }

    fn params(m: &TargetMeasure) -> (Vec<DVector<f64>>, DMatrix<f64>) {
        match m {
            TargetMeasure::GaussianMixture(g) => (g.means().to_vec(), g.cov().clone()),
            TargetMeasure::Gaussian(g) => (vec![g.mean().clone()], g.cov().clone()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn time_zero_is_identity() {
        let m = mix2();
        let e = ou_evolve(&m, 0.0).unwrap();
        let (a, ca) = params(&m);
        let (b, cb) = params(e.measure());
        assert!(a.iter().zip(&b).all(|(x, y)| x == y));
        assert_eq!(ca, cb);
    }

    #[test]
    fn long_time_is_standard_gaussian() {
        let e = ou_evolve(&mix2(), 20.0).unwrap();
        let (means, cov) = params(e.measure());
        assert!(means.iter().all(|m| m.amax() < 1e-8));
        assert!((cov - DMatrix::identity(2, 2)).amax() < 1e-8);
    }

    #[test]
    fn semigroup_property() {
        let m = mix2();
        for (s, t) in [(0.1, 0.4), (1.0, 2.5), (0.0, 3.0)] {
            let two = ou_evolve(ou_evolve(&m, s).unwrap().measure(), t).unwrap();
            let one = ou_evolve(&m, s + t).unwrap();
            let (a, ca) = params(two.measure());
            let (b, cb) = params(one.measure());
            assert!((ca - cb).amax() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn evolved_mean_matches_kernel_pushforward() {
        // Monte Carlo oracle: push N(m, I) draws through the OU kernel.
        let m = dv(&[2.0]);
        let t: f64 = 0.7;
        let target = TargetMeasure::gaussian(m.clone(), DMatrix::identity(1, 1)).unwrap();
        let e = ou_evolve(&target, t).unwrap();
        let (means, cov) = params(e.measure());
        assert_relative_eq!(cov[(0, 0)], 1.0, epsilon = 1e-14);

        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut sum = 0.0;
        for _ in 0..n {
            let x0 = m[0] + rng.sample::<f64, _>(StandardNormal);
            let x = (-t).exp() * x0 + kernel_variance(t).sqrt() * rng.sample::<f64, _>(StandardNormal);
            sum += x;
        }
        let mc = sum / n as f64;
        assert!((mc - means[0][0]).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn evolved_score_of_standard_gaussian() {
        let g = TargetMeasure::standard_gaussian(3);
        for t in [0.0, 0.3, 5.0] {
            let s = evolved_score(&g, t, &[1.0, -2.0, 0.5]).unwrap();
            assert!((s - dv(&[-1.0, 2.0, -0.5])).amax() < 1e-14);
        }
    }

    #[test]
    fn evolved_score_matches_finite_differences() {
        let m = mix2();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in [0.05, 0.5, 2.0] {
            let e = ou_evolve(&m, t).unwrap();
            for _ in 0..20 {
                let y: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
                let s = e.measure().score(&y).unwrap();
                let mut yy = y.clone();
                for j in 0..2 {
                    let h = 1e-5;
                    yy[j] = y[j] + h;
                    let fp = e.measure().log_density(&yy).unwrap();
                    yy[j] = y[j] - h;
                    let fm = e.measure().log_density(&yy).unwrap();
                    yy[j] = y[j];
                    let fd = (fp - fm) / (2.0 * h);
                    assert!((s[j] - fd).abs() <= 1e-6 * s[j].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn evolved_score_approaches_standard_gaussian() {
        let m = mix2();
        let e = ou_evolve(&m, 20.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let dir = dv(&[rng.sample(StandardNormal), rng.sample(StandardNormal)]);
            let y = dir.normalize() * rng.random_range(0.0..3.0);
            let s = e.measure().score(y.as_slice()).unwrap();
            worst = worst.max((s + &y).amax());
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn perturbed_targets_are_not_evolved_exactly() {
        let p = TargetMeasure::perturbed_tilt(
            DMatrix::identity(1, 1),
            vec![dv(&[1.0])],
            vec![1.0],
        )
        .unwrap();
        assert!(matches!(ou_evolve(&p, 1.0), Err(Error::Unsupported(_))));
        assert!(matches!(ou_evolve(&mix2(), -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn generic_score_matches_exact_gaussian() {
        let g = TargetMeasure::standard_gaussian(2);
        for (i, t) in [0.2, 1.0, 3.0].into_iter().enumerate() {
            let y = [0.8, -1.3];
            let est = evolved_score_generic(&g, t, &y, 4000, SamplerSeed::new(i as u64, 0)).unwrap();
            assert!(!est.low_ess);
            for j in 0..2 {
                assert!(
                    (est.score[j] + y[j]).abs() <= 3.0 * est.std_error[j] + 1e-12,
                    "t={t}: {} vs {} (se {})",
                    est.score[j],
                    -y[j],
                    est.std_error[j]
                );
            }
        }
    }

    #[test]
    fn generic_score_matches_exact_mixture() {
        let m = mix2();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = 0.6;
        let e = ou_evolve(&m, t).unwrap();
        let mut misses = 0;
        for k in 0..20 {
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let exact = e.measure().score(&y).unwrap();
            let est = evolved_score_generic(&m, t, &y, 20_000, SamplerSeed::new(100 + k, 0)).unwrap();
            for j in 0..2 {
                if (est.score[j] - exact[j]).abs() > 3.0 * est.std_error[j] {
                    misses += 1;
                }
            }
        }
        // 40 coordinates at 3σ: more than two misses would be a real bias
        assert!(misses <= 2, "{misses} coordinates outside 3 SE");
    }

    #[test]
    fn generic_score_se_rate() {
        let m = mix2();
        let y = [0.3, 0.4];
        let se = |n: usize| {
            evolved_score_generic(&m, 0.5, &y, n, SamplerSeed::new(9, 0))
                .unwrap()
                .std_error
                .norm()
        };
        let ratio = se(5_000) / se(20_000);
        assert!((ratio - 2.0).abs() < 0.6, "ratio {ratio}");
    }

    #[test]
    fn generic_score_rejects_zero_time() {
        let g = TargetMeasure::standard_gaussian(1);
        assert!(matches!(
            evolved_score_generic(&g, 0.0, &[0.0], 100, SamplerSeed::new(0, 0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn theta_examples() {
        let slc1 = ThetaProfile::slc(1.0).unwrap();
        for u in [0.0, 0.5, 3.0] {
            assert_eq!(theta(&slc1, u), 0.0);
        }
        assert_relative_eq!(theta(&ThetaProfile::slc(0.5).unwrap(), 0.0), 0.5, epsilon = 1e-15);
        for alpha in [0.5, 1.0, 2.0] {
            let a = ThetaProfile::slc(alpha).unwrap();
            let b = ThetaProfile::perturbed(alpha, 0.0).unwrap();
            for u in [0.1, 1.0, 5.0] {
                assert!((theta(&a, u) - theta(&b, u)).abs() <= 1e-14);
            }
        }
        let cp = ThetaProfile::convexity_profile(1.0, 0.0).unwrap();
        for u in [0.1f64, 1.0, 3.0] {
            let e = (-2.0 * u).exp();
            assert_relative_eq!(theta(&cp, u), -e / (1.0 + (1.0 - e)), epsilon = 1e-15);
        }
        assert!(theta(&cp, 30.0).abs() < 1e-20);
        assert_eq!(theta(&ThetaProfile::perturbed(1.0, 0.5).unwrap(), 0.0), f64::INFINITY);
    }

    #[test]
    fn theta_monotonicity_and_decay() {
        let grid: Vec<f64> = (1..400).map(|i| i as f64 * 0.025).collect();
        let below = ThetaProfile::slc(0.4).unwrap();
        let above = ThetaProfile::slc(2.5).unwrap();
        for w in grid.windows(2) {
            assert!(theta(&below, w[1]) < theta(&below, w[0]));
            assert!(theta(&above, w[1]) > theta(&above, w[0]));
            assert!(theta(&above, w[1]) < 0.0);
        }
        for p in [
            below,
            above,
            ThetaProfile::perturbed(0.7, 1.0).unwrap(),
            ThetaProfile::convexity_profile(-0.5, 2.0).unwrap(),
        ] {
            assert!(theta(&p, 20.0).abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn profile_ranges_are_validated() {
        assert!(ThetaProfile::slc(0.0).is_err());
        assert!(ThetaProfile::perturbed(1.0, -0.1).is_err());
        assert!(ThetaProfile::convexity_profile(-1.0, 0.0).is_err());
        assert!(ThetaProfile::convexity_profile(-0.9, 0.0).is_ok());
    }

    #[test]
    fn theta_check_standard_gaussian() {
        let g = TargetMeasure::standard_gaussian(2);
        let p = ThetaProfile::slc(1.0).unwrap();
        let probes = vec![dv(&[0.0, 0.0]), dv(&[1.0, -3.0])];
        for t in [0.0, 0.5, 4.0] {
            let c = theta_empirical_check(&g, &p, t, &probes).unwrap();
            assert_eq!(c.max_violation, 0.0);
        }
    }

    #[test]
    fn theta_check_saturates_for_gaussians() {
        for alpha in [0.25, 0.5, 2.0, 4.0] {
            let g = TargetMeasure::gaussian(dv(&[0.0, 0.0]), DMatrix::identity(2, 2) / alpha).unwrap();
            let p = ThetaProfile::slc(alpha).unwrap();
            let probes = vec![dv(&[0.3, 0.3]), dv(&[-2.0, 1.0])];
            for t in [0.0, 0.1, 1.0, 3.0] {
                let c = theta_empirical_check(&g, &p, t, &probes).unwrap();
                assert!(c.max_violation.abs() <= 1e-10, "α={alpha} t={t}: {c:?}");
            }
        }
    }

    #[test]
    fn theta_check_mixture_with_derived_profile() {
        let m = mix2();
        let p = ThetaProfile::derive_for(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let probes: Vec<DVector<f64>> = (0..200)
            .map(|_| {
                let dir = dv(&[rng.sample(StandardNormal), rng.sample(StandardNormal)]);
                dir.normalize() * rng.random_range(0.0..4.0)
            })
            .collect();
        for t in [0.01, 0.1, 0.5, 1.0, 3.0] {
            let c = theta_empirical_check(&m, &p, t, &probes).unwrap();
            assert!(c.max_violation <= 1e-8, "t={t}: {c:?}");
        }
    }

    #[test]
    fn drift_is_one_sided_lipschitz() {
        let m = mix2();
        let p = ThetaProfile::derive_for(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for t in [0.05, 0.3, 1.0, 4.0] {
            let e = ou_evolve(&m, t).unwrap();
            let th = theta(&p, t);
            for _ in 0..200 {
                let x = dv(&[rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]);
                let y = dv(&[rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]);
                let fx = &x + e.measure().score(x.as_slice()).unwrap();
                let fy = &y + e.measure().score(y.as_slice()).unwrap();
                let lhs = (&x - &y).dot(&(fx - fy));
                assert!(lhs <= th * (&x - &y).norm_squared() + 1e-10);
            }
        }
    }

    #[test]
    fn cache_hits_and_falls_back() {
        let m = mix2();
        let cache = EvolvedScoreCache::new(&m, &[0.5, 0.1, 0.5, 2.0]).unwrap();
        assert_eq!(cache.len(), 3);
        assert!(cache.get(0.1).is_some());
        assert!(cache.get(0.3).is_none());
        let y = [0.2, -0.7];
        let mut out = [0.0; 2];
        cache.score_into(0.3, &y, &mut out).unwrap();
        let exact = evolved_score(&m, 0.3, &y).unwrap();
        assert!((exact - dv(&out)).amax() < 1e-15);
    }
}
