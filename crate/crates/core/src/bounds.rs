//! Explicit stability constants: `Λ_T`, `Λ_∞`, log-Sobolev constants `λ_s`,
//! `η_T`, `η_∞`, and the comparison helpers `ĝ_L`, `L̂`.
//!
//! Every closed form has a quadrature counterpart. Integrals in OU time `v`
//! are taken in `w = √v`, which turns the `√v` behaviour of the perturbed
//! profile near the origin into a smooth integrand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ou::{kernel_variance, theta, ThetaProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    /// Initial number of Simpson intervals (even).
    pub grid: usize,
    pub refine_factor: usize,
    pub rtol: f64,
    pub max_refinements: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            grid: 4096,
            refine_factor: 2,
            rtol: 1e-6,
            max_refinements: 6,
        }
    }
}

impl QuadratureSpec {
    fn validate(&self) -> Result<()> {
        if self.grid < 2 || !self.grid.is_multiple_of(2) {
            return Err(Error::Domain(format!("quadrature grid must be even and ≥ 2, got {}", self.grid)));
        }
        if self.refine_factor < 2 {
            return Err(Error::Domain("refinement factor must be ≥ 2".into()));
        }
        if !(self.rtol > 0.0) {
            return Err(Error::Domain("quadrature tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Composite Simpson on `[a, b]`, refined until two successive grids agree to
/// `rtol` relative (absolute when the value is below the smallest normal).
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, q: &QuadratureSpec) -> Result<f64> {
    refine(q, |n| simpson_fixed(&f, a, b, n))
}

fn simpson_fixed(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Drive a grid-indexed rule through refinements until converged.
fn refine(q: &QuadratureSpec, mut rule: impl FnMut(usize) -> f64) -> Result<f64> {
    q.validate()?;
    let mut n = q.grid;
    let mut prev = rule(n);
    for k in 1..=q.max_refinements {
        n *= q.refine_factor;
        let cur = rule(n);
        if !cur.is_finite() {
            return Err(Error::NonConvergence {
                previous: prev,
                last: cur,
                refinements: k,
            });
        }
        if (cur - prev).abs() <= q.rtol * cur.abs().max(f64::MIN_POSITIVE) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::NonConvergence {
        previous: prev,
        last: rule(n),
        refinements: q.max_refinements,
    })
}

// 5-point Gauss–Legendre on [-1, 1].
const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

fn gauss_legendre(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    GL_NODES.iter().zip(GL_WEIGHTS).map(|(x, w)| w * f(c + r * x)).sum::<f64>() * r
}

/// `θ(w²)·2w`, the profile in the `w = √u` variable. Finite at `w = 0` for
/// every family (the perturbed `1/√u` blow-up is absorbed by the Jacobian).
fn theta_dw(p: &ThetaProfile, w: f64) -> f64 {
    match p.as_perturbed() {
        Some((alpha, l)) if l > 0.0 => {
            let u = w * w;
            let b = (2.0 * u).exp_m1();
            let e2u = b + 1.0;
            let q = alpha * b + 1.0;
            // w / √b → 1/√2 as w → 0
            let w_over_sqrt_b = if w == 0.0 { std::f64::consts::FRAC_1_SQRT_2 } else { w / b.sqrt() };
            let slc = (1.0 - alpha) / q;
            2.0 * w * (slc + e2u * l * l / (q * q)) + 4.0 * l * e2u / q.powf(1.5) * w_over_sqrt_b
        }
        _ => theta(p, w * w) * 2.0 * w,
    }
}

/// `Φ(v) = ∫_0^v θ_u du` in closed form.
///
/// For the perturbed family (and `slc` as `L = 0`), with `b = e^{2v} − 1`:
/// `−½log((1+αb)/(1+b)) + bL²/(2(1+αb)) + 2L√b/√(1+αb)`. For the convexity
/// profile, with `k = 1 − e^{−2v}` and `z = 1 + αk`: `−½log z + ĝ′(0)k/(2z)`.
pub fn theta_integral(p: &ThetaProfile, v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    match *p {
        ThetaProfile::Slc { alpha } => phi_perturbed(alpha, 0.0, v),
        ThetaProfile::Perturbed { alpha, lipschitz } => phi_perturbed(alpha, lipschitz, v),
        ThetaProfile::ConvexityProfile { alpha, g0 } => {
            let k = kernel_variance(v);
            let z = 1.0 + alpha * k;
            -0.5 * z.ln() + g0 * k / (2.0 * z)
        }
    }
}

fn phi_perturbed(alpha: f64, l: f64, v: f64) -> f64 {
    let b = (2.0 * v).exp_m1();
    let q = 1.0 + alpha * b;
    // log((1+αb)/(1+b)) = log(α + (1−α)e^{−2v})
    let log_ratio = (alpha + (1.0 - alpha) * (-2.0 * v).exp()).ln();
    -0.5 * log_ratio + b * l * l / (2.0 * q) + 2.0 * l * (b / q).sqrt()
}

/// `Φ(v)` by direct quadrature of `θ` in `u = w²`; the oracle for
/// [`theta_integral`].
pub fn theta_integral_quadrature(p: &ThetaProfile, v: f64, q: &QuadratureSpec) -> Result<f64> {
    if v <= 0.0 {
        return Ok(0.0);
    }
    simpson(|w| theta_dw(p, w), 0.0, v.sqrt(), q)
}

/// Values of `Φ` at the nodes `w_i = i·h` of a uniform `w`-grid.
fn phi_on_grid(p: &ThetaProfile, h: f64, n: usize) -> Vec<f64> {
    if p.as_perturbed().is_some() {
        return (0..=n).map(|i| theta_integral(p, (i as f64 * h).powi(2))).collect();
    }
    // no closed form used in production: cumulative Gauss–Legendre per cell
    let f = |w: f64| theta_dw(p, w);
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 0..n {
        acc += gauss_legendre(&f, i as f64 * h, (i + 1) as f64 * h);
        out.push(acc);
    }
    out
}

/// `∫_0^T g(v, Φ(v)) dv` in `w = √v`, refined per `q`.
fn outer_integral(
    p: &ThetaProfile,
    horizon: f64,
    q: &QuadratureSpec,
    g: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("horizon must be finite and ≥ 0, got {horizon}")));
    }
    if horizon == 0.0 {
        return Ok(0.0);
    }
    let wmax = horizon.sqrt();
    refine(q, |n| {
        let h = wmax / n as f64;
        let phi = phi_on_grid(p, h, n);
        let mut s = 0.0;
        for (i, ph) in phi.iter().enumerate() {
            let w = i as f64 * h;
            let c = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += c * g(w * w, *ph) * 2.0 * w;
        }
        s * h / 3.0
    })
}

/// `Λ_T = ∫_0^T exp(∫_0^{T−s}(3θ_u − 1) du) ds = ∫_0^T e^{−v} e^{3Φ(v)} dv`
/// (the `√FI` factor excluded).
pub fn lambda_t(p: &ThetaProfile, horizon: f64, q: &QuadratureSpec) -> Result<f64> {
    let p = p.validated()?;
    outer_integral(&p, horizon, q, |v, phi| (3.0 * phi - v).exp())
}

/// Closed-form `Λ_∞` constant of each family.
///
/// `slc`: `1/α`. `perturbed`: `α^{−1}exp(3L²/(2α) + 6L/√α)`. `convexity`:
/// `(1+α)^{−1}exp(3ĝ′(0)/(2(1+α)))`. Exact for `slc`; for `L > 0` or
/// `ĝ′(0) > 0` this dominates `lim Λ_T` (see [`lambda_limit`]).
pub fn lambda_inf(p: &ThetaProfile) -> f64 {
    match *p {
        ThetaProfile::Slc { alpha } => 1.0 / alpha,
        ThetaProfile::Perturbed { alpha, lipschitz: l } => {
            (3.0 * l * l / (2.0 * alpha) + 6.0 * l / alpha.sqrt()).exp() / alpha
        }
        ThetaProfile::ConvexityProfile { alpha, g0 } => {
            (3.0 * g0 / (2.0 * (1.0 + alpha))).exp() / (1.0 + alpha)
        }
    }
}

/// `ln Λ_∞`, finite even where [`lambda_inf`] overflows.
pub fn ln_lambda_inf(p: &ThetaProfile) -> f64 {
    match *p {
        ThetaProfile::Slc { alpha } => 0.0 - alpha.ln(),
        ThetaProfile::Perturbed { alpha, lipschitz: l } => {
            3.0 * l * l / (2.0 * alpha) + 6.0 * l / alpha.sqrt() - alpha.ln()
        }
        ThetaProfile::ConvexityProfile { alpha, g0 } => 3.0 * g0 / (2.0 * (1.0 + alpha)) - (1.0 + alpha).ln(),
    }
}

/// `lim_{T→∞} Λ_T` by quadrature in `r = e^{−v}`:
/// `∫_0^1 ρ(r)^{−3/2} exp(3·E(r)) dr` with `ρ = r² + α(1 − r²)` and `E` the
/// non-logarithmic part of `Φ`. Uses `r = 1 − s²` to smooth the `r → 1` end.
pub fn lambda_limit(p: &ThetaProfile, q: &QuadratureSpec) -> Result<f64> {
    let p = p.validated()?;
    let integrand = move |s: f64| {
        let r = 1.0 - s * s;
        let one_minus_r2 = s * s * (2.0 - s * s);
        let jac = 2.0 * s;
        match p {
            ThetaProfile::Slc { .. } | ThetaProfile::Perturbed { .. } => {
                let (alpha, l) = p.as_perturbed().unwrap();
                let rho = r * r + alpha * one_minus_r2;
                // b/(1+αb) = (1 − r²)/ρ
                let x = one_minus_r2 / rho;
                rho.powf(-1.5) * (1.5 * l * l * x + 6.0 * l * x.sqrt()).exp() * jac
            }
            ThetaProfile::ConvexityProfile { alpha, g0 } => {
                let z = 1.0 + alpha * one_minus_r2;
                z.powf(-1.5) * (1.5 * g0 * one_minus_r2 / z).exp() * jac
            }
        }
    };
    simpson(integrand, 0.0, 1.0, q)
}

/// `u(s) = e^{2s} − 1`.
pub fn u_of(s: f64) -> f64 {
    (2.0 * s).exp_m1()
}

/// Log-Sobolev constant `λ_s` of the tilted posteriors at OU time `s`:
/// `(α + 1/u)^{−1}exp(L²/(α+1/u) + 4L/√(α+1/u))` (perturbed, `slc` as `L = 0`)
/// and `(1+α+1/u)^{−1}exp(ĝ′(0)/(1+α+1/u))` (convexity); `0` at `s = 0`.
pub fn lsi_constant(p: &ThetaProfile, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let u = u_of(s);
    lsi_over_u(p, u) * u
}

/// `λ/u` as a function of `u`, written to stay finite as `u → 0`.
fn lsi_over_u(p: &ThetaProfile, u: f64) -> f64 {
    match *p {
        ThetaProfile::Slc { alpha } => 1.0 / (alpha * u + 1.0),
        ThetaProfile::Perturbed { alpha, lipschitz: l } => {
            let q = alpha * u + 1.0;
            // 1/(α + 1/u) = u/q
            let x = u / q;
            (l * l * x + 4.0 * l * x.sqrt()).exp() / q
        }
        ThetaProfile::ConvexityProfile { alpha, g0 } => {
            let q = (1.0 + alpha) * u + 1.0;
            (g0 * u / q).exp() / q
        }
    }
}

/// How `λ` is indexed inside `d_v = e^v λ/u(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LsiIndexing {
    /// `λ` at OU time `v`, i.e. computed through `u(v)`.
    #[default]
    ThroughU,
    /// `λ` evaluated at time `u(v)`; kept for sensitivity comparisons.
    Literal,
}

/// `d_v = e^v λ/u(v)`.
pub fn eta_weight(p: &ThetaProfile, v: f64, indexing: LsiIndexing) -> f64 {
    let u = u_of(v);
    match indexing {
        LsiIndexing::ThroughU => v.exp() * lsi_over_u(p, u),
        LsiIndexing::Literal => {
            if u == 0.0 {
                // λ(u(v))/u(v) → 2·(λ/u)(0) as v → 0
                return 2.0 * lsi_over_u(p, 0.0);
            }
            v.exp() * lsi_of_u(p, u_of(u)) / u
        }
    }
}

/// `λ` as a function of `u`, valid up to `u = ∞`.
fn lsi_of_u(p: &ThetaProfile, u: f64) -> f64 {
    match *p {
        ThetaProfile::Slc { alpha } => 1.0 / (alpha + 1.0 / u),
        ThetaProfile::Perturbed { alpha, lipschitz: l } => {
            let x = 1.0 / (alpha + 1.0 / u);
            x * (l * l * x + 4.0 * l * x.sqrt()).exp()
        }
        ThetaProfile::ConvexityProfile { alpha, g0 } => {
            let x = 1.0 / (1.0 + alpha + 1.0 / u);
            x * (g0 * x).exp()
        }
    }
}

/// `η_T = ∫_0^T d_{T−s} exp(∫_0^{T−s} θ_u du) ds = ∫_0^T d_v e^{Φ(v)} dv`
/// (the `√FI_∞` factor excluded).
pub fn eta_t(p: &ThetaProfile, horizon: f64, q: &QuadratureSpec) -> Result<f64> {
    eta_t_with(p, horizon, q, LsiIndexing::ThroughU)
}

pub fn eta_t_with(
    p: &ThetaProfile,
    horizon: f64,
    q: &QuadratureSpec,
    indexing: LsiIndexing,
) -> Result<f64> {
    let p = p.validated()?;
    outer_integral(&p, horizon, q, |v, phi| eta_weight(&p, v, indexing) * phi.exp())
}

/// Closed-form `η_∞`; the same constants as [`lambda_inf`].
pub fn eta_inf(p: &ThetaProfile) -> f64 {
    let (a, e) = match *p {
        ThetaProfile::Slc { alpha } => (alpha, 0.0),
        ThetaProfile::Perturbed { alpha, lipschitz: l } => {
            (alpha, 3.0 * l * l / (2.0 * alpha) + 6.0 * l / alpha.sqrt())
        }
        ThetaProfile::ConvexityProfile { alpha, g0 } => (1.0 + alpha, 3.0 * g0 / (2.0 * (1.0 + alpha))),
    };
    e.exp() / a
}

/// Comparison function `ĝ_L(r) = 2√L tanh(r√L)`.
pub fn ghat(l: f64, r: f64) -> f64 {
    let s = l.sqrt();
    2.0 * s * (r * s).tanh()
}

/// Convexity-outside-a-ball data for `V`: `κ_V(r) ≥ α_V` for `r > R_V`, and
/// `κ_V ≥ −L_V` inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileParams {
    pub alpha_v: f64,
    pub lipschitz_v: f64,
    pub radius_v: f64,
}

pub const LHAT_TOL: f64 = 1e-10;
const LHAT_CAP: f64 = (1u64 << 60) as f64;

impl ProfileParams {
    pub fn new(alpha_v: f64, lipschitz_v: f64, radius_v: f64) -> Result<Self> {
        if !(alpha_v > 0.0 && alpha_v.is_finite()) {
            return Err(Error::Construction(format!("α_V must be > 0, got {alpha_v}")));
        }
        if !(lipschitz_v >= 0.0 && lipschitz_v.is_finite()) {
            return Err(Error::Construction(format!("L_V must be ≥ 0, got {lipschitz_v}")));
        }
        if !(radius_v >= 0.0 && radius_v.is_finite()) {
            return Err(Error::Construction(format!("R_V must be ≥ 0, got {radius_v}")));
        }
        Ok(Self {
            alpha_v,
            lipschitz_v,
            radius_v,
        })
    }

    /// `L̂ = inf{L ≥ 0 : ĝ_L(R_V)/R_V ≥ L_V}`.
    pub fn lhat(&self) -> Result<f64> {
        lhat(self)
    }

    /// `ĝ′(0) = 2L̂`, the slope of `ĝ_{L̂}` at the origin.
    pub fn g0(&self) -> Result<f64> {
        Ok(2.0 * self.lhat()?)
    }

    /// Profile for `μ = γ·exp(−h)` with `h = V − |x|²/2`, so `α = α_V − 1`.
    pub fn to_profile(&self) -> Result<ThetaProfile> {
        ThetaProfile::convexity_profile(self.alpha_v - 1.0, self.g0()?)
    }
}

pub fn lhat(p: &ProfileParams) -> Result<f64> {
    let (lv, r) = (p.lipschitz_v, p.radius_v);
    if r == 0.0 || lv == 0.0 {
        return Ok(0.0);
    }
    let holds = |l: f64| ghat(l, r) / r >= lv;
    let mut hi = lv;
    while !holds(hi) {
        hi *= 2.0;
        if hi > LHAT_CAP {
            return Err(Error::Domain(format!(
                "no L ≤ 2^60 satisfies ĝ_L({r})/{r} ≥ {lv}"
            )));
        }
    }
    let mut lo = 0.0;
    while hi - lo > LHAT_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
