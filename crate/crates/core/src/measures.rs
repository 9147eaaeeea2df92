//! Target measures with exact log-densities, scores, Hessians and samplers.
//!
//! Three families are supported:
//!
//! - `Gaussian`: `N(m, S)` with `S` symmetric positive definite.
//! - `GaussianMixture`: `Σ_k w_k N(m_k, Σ)` with one covariance shared by all
//!   components.
//! - `PerturbedSlc`: `μ ∝ exp(−V − H)` with `V(x) = ½ xᵀ A x`, `A` SPD, and an
//!   `L`-Lipschitz perturbation `H`.
//!
//! A shared-covariance mixture *is* a perturbed strongly log-concave measure:
//! with `V(x) = ½‖x‖²_{Σ⁻¹}` and
//! `H(x) = −log Σ_k w_k exp(m_kᵀΣ⁻¹x − ½ m_kᵀΣ⁻¹m_k)` one has `μ ∝ exp(−V − H)`.
//! The sign of `H` is a convention: replacing `H` by `−H` changes neither the
//! Lipschitz constant nor any bound constant derived from it.
//!
//! Responsibilities are always evaluated with log-sum-exp stabilization, so
//! mixture scores cannot overflow for any finite input.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, check_dim, check_finite, dot, mat_vec_into};
use crate::rng::SamplerSeed;

/// Largest dimension for which Hessian-based checks are supported.
pub const HESSIAN_MAX_DIM: usize = 8;

/// A smooth perturbation `H` supplied by the caller.
///
/// Only `value` is required; the default gradient uses central differences.
pub trait Perturbation: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        central_gradient(|y| self.value(y), x, out);
    }
}

pub(crate) fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], out: &mut [f64]) {
    let mut y = x.to_vec();
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1.0);
        y[j] = x[j] + h;
        let fp = f(&y);
        y[j] = x[j] - h;
        let fm = f(&y);
        y[j] = x[j];
        out[j] = (fp - fm) / (2.0 * h);
    }
}

/// Log-linear tilt `x ↦ log Σ_k exp(c_k + b_kᵀ x)`.
///
/// Shared by the mixture log-density and the log-sum-exp perturbation.
#[derive(Debug, Clone)]
pub(crate) struct Tilt {
    /// Row `k` holds `b_k`.
    slopes: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

impl Tilt {
    /// Tilt for `Σ_k w_k exp(m_kᵀ P x − ½ m_kᵀ P m_k)`.
    fn from_means(means: &[DVector<f64>], weights: &[f64], precision: &DMatrix<f64>) -> Self {
        let mut slopes = Vec::with_capacity(means.len());
        let mut offsets = Vec::with_capacity(means.len());
        for (m, &w) in means.iter().zip(weights) {
            let b = precision * m;
            offsets.push(w.ln() - 0.5 * m.dot(&b));
            slopes.push(b.as_slice().to_vec());
        }
        Self { slopes, offsets }
    }

    #[inline]
    fn exponent(&self, k: usize, x: &[f64]) -> f64 {
        self.offsets[k] + dot(&self.slopes[k], x)
    }

    fn max_exponent(&self, x: &[f64]) -> f64 {
        (0..self.offsets.len())
            .map(|k| self.exponent(k, x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn log_sum_exp(&self, x: &[f64]) -> f64 {
        let mx = self.max_exponent(x);
        let s: f64 = (0..self.offsets.len())
            .map(|k| (self.exponent(k, x) - mx).exp())
            .sum();
        mx + s.ln()
    }

    /// `out += Σ_k w̄_k(x) b_k` with `w̄` the normalized responsibilities.
    #[inline]
    fn add_mean_slope(&self, x: &[f64], out: &mut [f64]) {
        if self.offsets.len() == 1 {
            for (o, b) in out.iter_mut().zip(&self.slopes[0]) {
                *o += b;
            }
            return;
        }
        let mx = self.max_exponent(x);
        let mut total = 0.0;
        let mut acc = [0.0f64; 16];
        let d = x.len();
        let small = d <= acc.len();
        let mut big = if small { Vec::new() } else { vec![0.0; d] };
        let acc: &mut [f64] = if small { &mut acc[..d] } else { &mut big };
        for k in 0..self.offsets.len() {
            let r = (self.exponent(k, x) - mx).exp();
            if r == 0.0 {
                continue;
            }
            total += r;
            for (a, b) in acc.iter_mut().zip(&self.slopes[k]) {
                *a += r * b;
            }
        }
        for (o, a) in out.iter_mut().zip(acc.iter()) {
            *o += a / total;
        }
    }

    fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let mx = self.max_exponent(x);
        let mut r: Vec<f64> = (0..self.offsets.len())
            .map(|k| (self.exponent(k, x) - mx).exp())
            .collect();
        let total: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= total);
        r
    }

    /// Responsibility-weighted covariance of the slopes `b_k`.
    fn slope_covariance(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let r = self.responsibilities(x);
        let mut mean = DVector::zeros(d);
        for (rk, b) in r.iter().zip(&self.slopes) {
            mean += DVector::from_column_slice(b) * *rk;
        }
        let mut cov = DMatrix::zeros(d, d);
        for (rk, b) in r.iter().zip(&self.slopes) {
            let c = DVector::from_column_slice(b) - &mean;
            cov += &c * c.transpose() * *rk;
        }
        cov
    }
}

#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    precision: DMatrix<f64>,
    /// `log det(2π S)`.
    log_norm: f64,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        check_finite(mean.as_slice(), "gaussian mean")?;
        let chol = linalg::cholesky(&cov, "gaussian covariance")?;
        let precision = linalg::symmetrize(&chol.inverse());
        let d = mean.len() as f64;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        Ok(Self {
            log_norm: d * (2.0 * std::f64::consts::PI).ln() + log_det,
            chol_lower: chol.l(),
            mean,
            cov,
            precision,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.mean;
        -0.5 * (diff.dot(&(&self.precision * &diff)) + self.log_norm)
    }

    #[inline]
    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let mut diff = [0.0f64; 16];
        if d <= diff.len() {
            for i in 0..d {
                diff[i] = x[i] - self.mean[i];
            }
            mat_vec_into(&self.precision, &diff[..d], out);
        } else {
            let diff: Vec<f64> = x.iter().zip(self.mean.iter()).map(|(a, b)| a - b).collect();
            mat_vec_into(&self.precision, &diff, out);
        }
        out.iter_mut().for_each(|o| *o = -*o);
    }

    fn from_variates(&self, z: &[f64], out: &mut [f64]) {
        mat_vec_into(&self.chol_lower, z, out);
        for (o, m) in out.iter_mut().zip(self.mean.iter()) {
            *o += m;
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    means: Vec<DVector<f64>>,
    weights: Vec<f64>,
    cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
    tilt: Tilt,
    cumulative: Vec<f64>,
}

/// Constants `(α, β, L)` of the tilt decomposition of a shared-covariance
/// mixture: `αI ⪯ Σ⁻¹ ⪯ βI` and `‖∇H‖ ≤ β max_k ‖m_k‖ = L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixtureBound {
    pub alpha: f64,
    pub beta: f64,
    pub lipschitz: f64,
}

fn validate_weights(weights: &[f64], k: usize) -> Result<()> {
    if weights.len() != k {
        return Err(Error::Construction(format!(
            "{} weights for {k} components",
            weights.len()
        )));
    }
    if k == 0 {
        return Err(Error::Construction("mixture needs at least one component".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Construction(format!("weight {w} is not a nonnegative number")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Construction(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

fn validate_means(means: &[DVector<f64>], d: usize) -> Result<()> {
    for m in means {
        check_dim(d, m.len())?;
        check_finite(m.as_slice(), "component mean")?;
    }
    Ok(())
}

impl GaussianMixture {
    pub fn new(means: Vec<DVector<f64>>, weights: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        validate_weights(&weights, means.len())?;
        validate_means(&means, cov.nrows())?;
        let chol = linalg::cholesky(&cov, "mixture covariance")?;
        let precision = linalg::symmetrize(&chol.inverse());
        let d = cov.nrows() as f64;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let tilt = Tilt::from_means(&means, &weights, &precision);
        let cumulative = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            log_norm: d * (2.0 * std::f64::consts::PI).ln() + log_det,
            chol_lower: chol.l(),
            means,
            weights,
            cov,
            precision,
            tilt,
            cumulative,
        })
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn lipschitz_bound(&self) -> MixtureBound {
        let eig = linalg::eigenvalues_sym(&self.precision);
        let max_norm = self.means.iter().map(|m| m.norm()).fold(0.0, f64::max);
        let beta = eig.max();
        MixtureBound {
            alpha: eig.min(),
            beta,
            lipschitz: beta * max_norm,
        }
    }

    /// Mixture mean and covariance.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.cov.nrows();
        let mut mean = DVector::zeros(d);
        for (m, w) in self.means.iter().zip(&self.weights) {
            mean += m * *w;
        }
        let mut cov = self.cov.clone();
        for (m, w) in self.means.iter().zip(&self.weights) {
            let c = m - &mean;
            cov += &c * c.transpose() * *w;
        }
        (mean, cov)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        -0.5 * (xv.dot(&(&self.precision * &xv)) + self.log_norm) + self.tilt.log_sum_exp(x)
    }

    #[inline]
    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        mat_vec_into(&self.precision, x, out);
        out.iter_mut().for_each(|o| *o = -*o);
        self.tilt.add_mean_slope(x, out);
    }

    fn component(&self, u: f64) -> usize {
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| {
                // u landed above a cumulative sum that rounded below 1
                self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
            })
    }

    fn from_variates(&self, u: f64, z: &[f64], out: &mut [f64]) {
        let k = self.component(u);
        mat_vec_into(&self.chol_lower, z, out);
        for (o, m) in out.iter_mut().zip(self.means[k].iter()) {
            *o += m;
        }
    }
}

#[derive(Clone)]
pub enum PerturbationKind {
    /// `H(x) = −log Σ_k w_k exp(m_kᵀ A x − ½ m_kᵀ A m_k)`.
    LogSumExp {
        means: Vec<DVector<f64>>,
        weights: Vec<f64>,
    },
    /// Caller-supplied `H` with a declared Lipschitz constant.
    Callable(Arc<dyn Perturbation>),
}

impl fmt::Debug for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PerturbationKind::LogSumExp { means, weights } => f
                .debug_struct("LogSumExp")
                .field("means", means)
                .field("weights", weights)
                .finish(),
            PerturbationKind::Callable(_) => f.write_str("Callable(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerturbedSlc {
    a: DMatrix<f64>,
    kind: PerturbationKind,
    tilt: Option<Tilt>,
    lipschitz: f64,
    alpha: f64,
}

impl PerturbedSlc {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn quadratic(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn perturbation(&self) -> &PerturbationKind {
        &self.kind
    }

    /// `H(x)`.
    pub fn h(&self, x: &[f64]) -> f64 {
        match (&self.kind, &self.tilt) {
            (_, Some(t)) => -t.log_sum_exp(x),
            (PerturbationKind::Callable(p), None) => p.value(x),
            _ => unreachable!("log-sum-exp perturbation always carries its tilt"),
        }
    }

    fn grad_h_into(&self, x: &[f64], out: &mut [f64]) {
        match (&self.kind, &self.tilt) {
            (_, Some(t)) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                t.add_mean_slope(x, out);
                out.iter_mut().for_each(|o| *o = -*o);
            }
            (PerturbationKind::Callable(p), None) => p.gradient(x, out),
            _ => unreachable!(),
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        -0.5 * xv.dot(&(&self.a * &xv)) - self.h(x)
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let mut g = vec![0.0; x.len()];
        self.grad_h_into(x, &mut g);
        mat_vec_into(&self.a, x, out);
        for (o, gi) in out.iter_mut().zip(&g) {
            *o = -*o - gi;
        }
    }
}

/// Sampling mode for [`TargetMeasure::sample_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingMode {
    Exact,
    /// Metropolis-adjusted Langevin chain; draws are approximate.
    Langevin(LangevinConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinConfig {
    pub step: f64,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            step: 0.1,
            burn_in: 2_000,
            thin: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub points: Vec<DVector<f64>>,
    /// True when the draws come from a Markov chain rather than exact sampling.
    pub approximate: bool,
    pub acceptance_rate: Option<f64>,
}

/// A target measure: one of the supported families.
#[derive(Debug, Clone)]
pub enum TargetMeasure {
    Gaussian(Gaussian),
    GaussianMixture(GaussianMixture),
    PerturbedSlc(PerturbedSlc),
}

impl TargetMeasure {
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Gaussian::new(mean, cov).map(Self::Gaussian)
    }

    pub fn standard_gaussian(d: usize) -> Self {
        Self::gaussian(DVector::zeros(d), DMatrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn mixture(means: Vec<DVector<f64>>, weights: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        GaussianMixture::new(means, weights, cov).map(Self::GaussianMixture)
    }

    /// `μ ∝ exp(−½xᵀAx − H)` with `H` the log-sum-exp tilt built from `means`
    /// and `weights`; equals the mixture `Σ w_k N(m_k, A⁻¹)`.
    pub fn perturbed_tilt(a: DMatrix<f64>, means: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        linalg::cholesky(&a, "quadratic form A")?;
        validate_weights(&weights, means.len())?;
        validate_means(&means, a.nrows())?;
        let eig = linalg::eigenvalues_sym(&a);
        let max_norm = means.iter().map(|m| m.norm()).fold(0.0, f64::max);
        let tilt = Tilt::from_means(&means, &weights, &a);
        Ok(Self::PerturbedSlc(PerturbedSlc {
            alpha: eig.min(),
            lipschitz: eig.max() * max_norm,
            tilt: Some(tilt),
            kind: PerturbationKind::LogSumExp { means, weights },
            a,
        }))
    }

    /// `μ ∝ exp(−½xᵀAx − H)` with a caller-supplied `H` of declared Lipschitz
    /// constant `lipschitz`. The declaration is spot-checked with central
    /// differences at 64 seeded probe points; it is never inferred.
    pub fn perturbed_callable(
        a: DMatrix<f64>,
        h: Arc<dyn Perturbation>,
        lipschitz: f64,
    ) -> Result<Self> {
        linalg::cholesky(&a, "quadratic form A")?;
        if !(lipschitz.is_finite() && lipschitz >= 0.0) {
            return Err(Error::Construction(format!(
                "declared Lipschitz constant {lipschitz} must be finite and nonnegative"
            )));
        }
        let d = a.nrows();
        let mut rng = SamplerSeed::new(0x5eed_11b5, 0).rng();
        let mut g = vec![0.0; d];
        for _ in 0..64 {
            let x: Vec<f64> = (0..d)
                .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            central_gradient(|y| h.value(y), &x, &mut g);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm <= lipschitz * (1.0 + 1e-6)) {
                return Err(Error::Construction(format!(
                    "perturbation gradient norm {norm} at probe {x:?} exceeds declared Lipschitz constant {lipschitz}"
                )));
            }
        }
        Ok(Self::PerturbedSlc(PerturbedSlc {
            alpha: linalg::lambda_min(&a),
            lipschitz,
            tilt: None,
            kind: PerturbationKind::Callable(h),
            a,
        }))
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetMeasure::Gaussian(g) => g.mean.len(),
            TargetMeasure::GaussianMixture(m) => m.cov.nrows(),
            TargetMeasure::PerturbedSlc(p) => p.a.nrows(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            TargetMeasure::Gaussian(_) => "gaussian",
            TargetMeasure::GaussianMixture(_) => "gaussian_mixture",
            TargetMeasure::PerturbedSlc(_) => "perturbed_slc",
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        check_finite(x, "evaluation point")
    }

    /// Log-density; normalized for Gaussians and mixtures, `−V − H` for
    /// perturbed targets.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(match self {
            TargetMeasure::Gaussian(g) => g.log_density(x),
            TargetMeasure::GaussianMixture(m) => m.log_density(x),
            TargetMeasure::PerturbedSlc(p) => p.log_density(x),
        })
    }

    pub fn score(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let mut out = DVector::zeros(x.len());
        self.score_into(x, out.as_mut_slice());
        Ok(out)
    }

    /// Unchecked score for hot loops.
    #[inline]
    pub(crate) fn score_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            TargetMeasure::Gaussian(g) => g.score_into(x, out),
            TargetMeasure::GaussianMixture(m) => m.score_into(x, out),
            TargetMeasure::PerturbedSlc(p) => p.score_into(x, out),
        }
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        if self.dim() > HESSIAN_MAX_DIM {
            return Err(Error::Unsupported(format!(
                "Hessians are limited to d ≤ {HESSIAN_MAX_DIM}, got d = {}",
                self.dim()
            )));
        }
        Ok(match self {
            TargetMeasure::Gaussian(g) => -g.precision.clone(),
            TargetMeasure::GaussianMixture(m) => {
                // Σ⁻¹ Cov_w̄[m] Σ⁻¹ = Cov_w̄[Σ⁻¹ m]
                linalg::symmetrize(&(m.tilt.slope_covariance(x) - &m.precision))
            }
            TargetMeasure::PerturbedSlc(p) => match &p.tilt {
                Some(t) => linalg::symmetrize(&(t.slope_covariance(x) - &p.a)),
                None => self.hessian_by_differences(x),
            },
        })
    }

    fn hessian_by_differences(&self, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let mut hess = DMatrix::zeros(d, d);
        let mut y = x.to_vec();
        let (mut sp, mut sm) = (vec![0.0; d], vec![0.0; d]);
        for j in 0..d {
            let h = 1e-5 * x[j].abs().max(1.0);
            y[j] = x[j] + h;
            self.score_into(&y, &mut sp);
            y[j] = x[j] - h;
            self.score_into(&y, &mut sm);
            y[j] = x[j];
            for i in 0..d {
                hess[(i, j)] = (sp[i] - sm[i]) / (2.0 * h);
            }
        }
        linalg::symmetrize(&hess)
    }

    /// Matrix `P` such that `score(x) + P x` is bounded; two measures have a
    /// bounded score difference iff their `P` agree.
    pub fn linear_precision(&self) -> &DMatrix<f64> {
        match self {
            TargetMeasure::Gaussian(g) => &g.precision,
            TargetMeasure::GaussianMixture(m) => &m.precision,
            TargetMeasure::PerturbedSlc(p) => &p.a,
        }
    }

    pub fn mixture_lipschitz_bound(&self) -> Result<MixtureBound> {
        match self {
            TargetMeasure::GaussianMixture(m) => Ok(m.lipschitz_bound()),
            other => Err(Error::Unsupported(format!(
                "mixture Lipschitz bound needs a gaussian_mixture, got {}",
                other.family()
            ))),
        }
    }

    pub fn is_exactly_samplable(&self) -> bool {
        !matches!(self, TargetMeasure::PerturbedSlc(_))
    }

    /// Map one uniform `u ∈ [0, 1)` and `d` standard normals to a draw.
    ///
    /// Gaussians ignore `u`; mixtures pick the component by inverse CDF.
    /// Feeding the same variates to two measures gives a common-random-number
    /// coupling.
    pub fn from_variates(&self, u: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            TargetMeasure::Gaussian(g) => g.from_variates(z, out),
            TargetMeasure::GaussianMixture(m) => m.from_variates(u, z, out),
            TargetMeasure::PerturbedSlc(_) => {
                return Err(Error::Unsupported(
                    "exact sampling from perturbed_slc; use SamplingMode::Langevin".into(),
                ))
            }
        }
        Ok(())
    }

    /// Exact i.i.d. draws. Fails for `perturbed_slc`.
    pub fn sample(&self, seed: SamplerSeed, n: usize) -> Result<Vec<DVector<f64>>> {
        self.sample_with(seed, n, SamplingMode::Exact).map(|b| b.points)
    }

    pub fn sample_with(&self, seed: SamplerSeed, n: usize, mode: SamplingMode) -> Result<SampleBatch> {
        match mode {
            SamplingMode::Exact => {
                let d = self.dim();
                let mut rng = seed.rng();
                let mut z = vec![0.0; d];
                let mut points = Vec::with_capacity(n);
                for _ in 0..n {
                    let u = draw_variates(&mut rng, &mut z);
                    let mut x = DVector::zeros(d);
                    self.from_variates(u, &z, x.as_mut_slice())?;
                    points.push(x);
                }
                Ok(SampleBatch {
                    points,
                    approximate: false,
                    acceptance_rate: None,
                })
            }
            SamplingMode::Langevin(cfg) => self.sample_mala(seed, n, cfg),
        }
    }

    fn sample_mala(&self, seed: SamplerSeed, n: usize, cfg: LangevinConfig) -> Result<SampleBatch> {
        if !(cfg.step > 0.0 && cfg.step.is_finite()) || cfg.thin == 0 {
            return Err(Error::Domain(format!("invalid Langevin settings {cfg:?}")));
        }
        let d = self.dim();
        let mut rng = seed.rng();
        let h = cfg.step;
        let mut x = vec![0.0; d];
        let mut lp = self.log_density(&x)?;
        let mut gx = vec![0.0; d];
        self.score_into(&x, &mut gx);
        let mut prop = vec![0.0; d];
        let mut gp = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut accepted = 0usize;
        let total = cfg.burn_in + n * cfg.thin;
        let mut points = Vec::with_capacity(n);
        // log q(to | from) up to a constant
        let log_q = |to: &[f64], from: &[f64], g_from: &[f64]| -> f64 {
            let s: f64 = (0..d)
                .map(|i| {
                    let r = to[i] - from[i] - h * g_from[i];
                    r * r
                })
                .sum();
            -s / (4.0 * h)
        };
        for it in 0..total {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for i in 0..d {
                prop[i] = x[i] + h * gx[i] + (2.0 * h).sqrt() * z[i];
            }
            let lp_prop = self.log_density(&prop)?;
            self.score_into(&prop, &mut gp);
            let log_ratio = lp_prop - lp + log_q(&x, &prop, &gp) - log_q(&prop, &x, &gx);
            let u: f64 = rng.random();
            if u.ln() < log_ratio {
                x.copy_from_slice(&prop);
                gx.copy_from_slice(&gp);
                lp = lp_prop;
                accepted += 1;
            }
            if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == cfg.thin - 1 {
                points.push(DVector::from_column_slice(&x));
            }
        }
        Ok(SampleBatch {
            points,
            approximate: true,
            acceptance_rate: Some(accepted as f64 / total as f64),
        })
    }

    /// Gaussian prior and log-weight of the decomposition
    /// `μ(x) ∝ N(x; m₀, P₀⁻¹) · exp(w(x))`.
    pub(crate) fn prior_decomposition(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim();
        match self {
            TargetMeasure::Gaussian(g) => (g.mean.clone(), g.precision.clone()),
            TargetMeasure::GaussianMixture(m) => (DVector::zeros(d), m.precision.clone()),
            TargetMeasure::PerturbedSlc(p) => (DVector::zeros(d), p.a.clone()),
        }
    }

    pub(crate) fn prior_log_weight(&self, x: &[f64]) -> f64 {
        match self {
            TargetMeasure::Gaussian(_) => 0.0,
            TargetMeasure::GaussianMixture(m) => m.tilt.log_sum_exp(x),
            TargetMeasure::PerturbedSlc(p) => -p.h(x),
        }
    }
}

/// Draw `u ~ U[0,1)` then fill `z` with standard normals.
pub(crate) fn draw_variates<R: Rng>(rng: &mut R, z: &mut [f64]) -> f64 {
    let u: f64 = rng.random();
    for zi in z.iter_mut() {
        *zi = rng.sample(StandardNormal);
    }
    u
}
