use nalgebra::DVector;
use rand::Rng;

use super::config::{Experiment, ExperimentConfig, MeasureSpec};
use super::report::*;
use crate::bounds::{self, ProfileParams};
use crate::error::{Error, Result, StageExt};
use crate::fisher;
use crate::flow;
use crate::measures::TargetMeasure;
use crate::ou::{self, ThetaProfile};
use crate::rng::{streams, SamplerSeed};

/// Run whichever experiment the config selects.
pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    Ok(match cfg.experiment()? {
        Experiment::StabilityL2 | Experiment::StabilityLinf => Report::Stability(run_stability(cfg)?),
        Experiment::FiDecay => Report::Decay(run_decay(cfg)?),
        Experiment::ThetaCheck => Report::Theta(run_theta_check(cfg)?),
        Experiment::ConstantsTable => Report::Constants(run_constants(cfg)?),
    })
}

fn measure_spec(m: &Option<MeasureSpec>) -> MeasureSpec {
    m.clone().expect("validated config has the measure")
}

fn provenance(cfg: &ExperimentConfig) -> Provenance {
    Provenance::new(cfg.seed, cfg.hash())
}

fn seed(cfg: &ExperimentConfig, stream: u64) -> SamplerSeed {
    SamplerSeed::new(cfg.seed, stream)
}

fn as_gaussian(m: &TargetMeasure) -> Option<&crate::measures::Gaussian> {
    match m {
        TargetMeasure::Gaussian(g) => Some(g),
        _ => None,
    }
}

/// Coupled flows of `μ` and `ν` against `constant·√FI` (L²) or
/// `constant·√FI_∞` (L^∞).
pub fn run_stability(cfg: &ExperimentConfig) -> Result<StabilityReport> {
    let experiment = cfg.experiment()?;
    let linf = match experiment {
        Experiment::StabilityL2 => false,
        Experiment::StabilityLinf => true,
        other => return Err(Error::config("experiment", format!("`{other}` is not a stability experiment"))),
    };
    let (mu, nu) = (cfg.mu()?, cfg.nu()?);
    let profile = cfg.profile.resolve(Some(&mu))?;
    if linf && !fisher::score_difference_bounded(&nu, &mu) {
        return Err(Error::Domain(
            "refusing the L∞ bound check: ∇log(ν/μ) is unbounded for this pair \
             (different quadratic parts), so FI_∞ is infinite"
                .into(),
        ));
    }

    let dist = flow::coupled_distance(&mu, &nu, &cfg.flow, cfg.n, seed(cfg, streams::FLOW_INIT))
        .stage("coupled flow")?;
    let fi = fisher::fi(&nu, &mu, cfg.n, seed(cfg, streams::FISHER)).stage("Fisher information")?;
    let fi_inf = if linf {
        Some(
            fisher::fi_inf(&nu, &mu, cfg.n, cfg.fi_inf_refine_steps, seed(cfg, streams::FISHER_SUP))
                .stage("sup Fisher information")?
                .estimate,
        )
    } else {
        None
    };

    let horizon = cfg.flow.horizon;
    let constant = if linf {
        ConstantSummary {
            name: "eta_inf".into(),
            closed_form: bounds::eta_inf(&profile),
            finite_horizon: bounds::eta_t(&profile, horizon, &cfg.quadrature).stage("bound constant")?,
        }
    } else {
        ConstantSummary {
            name: "lambda_inf".into(),
            closed_form: bounds::lambda_inf(&profile),
            finite_horizon: bounds::lambda_t(&profile, horizon, &cfg.quadrature).stage("bound constant")?,
        }
    };
    let info = fi_inf.unwrap_or(fi.estimate).max(0.0);
    let bound = constant.closed_form * info.sqrt();
    let (statistic, statistic_std_error) = if linf {
        (dist.linf, 0.0)
    } else {
        (dist.l2, dist.l2_std_error)
    };
    // empirical ≤ bound·(1 + 3·relative SE of the empirical side)
    let rel_se = if statistic > 0.0 { statistic_std_error / statistic } else { 0.0 };
    let pass = statistic <= bound * (1.0 + 3.0 * rel_se);
    let w2 = match (as_gaussian(&mu), as_gaussian(&nu)) {
        (Some(a), Some(b)) => Some(fisher::w2_gaussian(b, a)?),
        _ => None,
    };

    Ok(StabilityReport {
        schema: SCHEMA_VERSION,
        experiment,
        provenance: provenance(cfg),
        mu: measure_spec(&cfg.mu),
        nu: measure_spec(&cfg.nu),
        profile,
        flow: cfg.flow,
        n: cfg.n,
        empirical: EmpiricalDistances {
            l2: dist.l2,
            l2_std_error: dist.l2_std_error,
            linf: dist.linf,
        },
        fisher: FisherSummary {
            fi: fi.estimate,
            fi_std_error: fi.std_error,
            fi_inf,
        },
        constant,
        w2_gaussian: w2,
        statistic,
        statistic_std_error,
        bound,
        slack: Slack::new(statistic, bound),
        pass,
    })
}

pub fn run_decay(cfg: &ExperimentConfig) -> Result<DecayReport> {
    let (mu, nu) = (cfg.mu()?, cfg.nu()?);
    let profile = cfg.profile.resolve(Some(&mu))?;
    let curve = fisher::fi_decay_curve(&nu, &mu, &profile, &cfg.decay.times, cfg.n, seed(cfg, streams::FISHER))
        .stage("Fisher decay")?;
    let max_envelope_excess = curve.max_envelope_excess();
    let nonincreasing = curve.is_nonincreasing(3.0);
    Ok(DecayReport {
        schema: SCHEMA_VERSION,
        experiment: Experiment::FiDecay,
        provenance: provenance(cfg),
        mu: measure_spec(&cfg.mu),
        nu: measure_spec(&cfg.nu),
        profile,
        n: cfg.n,
        curve,
        max_envelope_excess,
        nonincreasing,
        pass: max_envelope_excess <= 3.0 && nonincreasing,
    })
}

/// Probe points at OU time `t`: half drawn from `q_t`, half uniform on a box
/// covering the evolved component means with three units of margin.
fn theta_probes(q_t: &TargetMeasure, count: usize, seed: SamplerSeed) -> Result<Vec<DVector<f64>>> {
    let d = q_t.dim();
    let from_q = count / 2;
    let mut probes = q_t.sample(seed, from_q)?;
    let radius = match q_t {
        TargetMeasure::Gaussian(g) => g.mean().amax(),
        TargetMeasure::GaussianMixture(m) => m.means().iter().map(|v| v.amax()).fold(0.0, f64::max),
        TargetMeasure::PerturbedSlc(_) => 0.0,
    } + 3.0;
    let mut rng = seed.with_stream(seed.stream ^ (1 << 32)).rng();
    for _ in from_q..count {
        probes.push(DVector::from_fn(d, |_, _| rng.random_range(-radius..=radius)));
    }
    Ok(probes)
}

pub fn run_theta_check(cfg: &ExperimentConfig) -> Result<ThetaReport> {
    let mu = cfg.mu()?;
    let profile = cfg.profile.resolve(Some(&mu))?;
    let s = &cfg.theta_check;
    let mut checks = Vec::with_capacity(s.times.len());
    for (i, &t) in s.times.iter().enumerate() {
        let q_t = ou::ou_evolve(&mu, t).stage("OU evolution")?.into_measure();
        let probes = theta_probes(&q_t, s.probes, seed(cfg, streams::PROBES).with_stream(streams::PROBES + 16 * i as u64))?;
        checks.push(ou::theta_empirical_check(&mu, &profile, t, &probes).stage("θ check")?);
    }
    let max_violation = checks.iter().map(|c| c.max_violation).fold(0.0, f64::max);
    Ok(ThetaReport {
        schema: SCHEMA_VERSION,
        experiment: Experiment::ThetaCheck,
        provenance: provenance(cfg),
        mu: measure_spec(&cfg.mu),
        profile,
        probes: s.probes,
        checks,
        max_violation,
        tolerance: s.tolerance,
        pass: max_violation <= s.tolerance,
    })
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// One table row. Quantities that overflow `f64` are left empty; the
/// log-space `ln_lambda_inf` is always present.
fn profile_row(p: &ThetaProfile, cfg: &ExperimentConfig) -> Result<ConstantsRow> {
    let c = &cfg.constants;
    let q = &cfg.quadrature;
    let representable = bounds::lambda_inf(p).is_finite();
    let quad = |r: Result<f64>| -> Result<Option<f64>> {
        if representable {
            r.map(finite)
        } else {
            Ok(None)
        }
    };
    let mut row = ConstantsRow {
        family: p.tag().into(),
        lambda_t: quad(bounds::lambda_t(p, c.horizon, q))?,
        lambda_limit: quad(bounds::lambda_limit(p, q))?,
        lambda_inf: finite(bounds::lambda_inf(p)),
        eta_t: quad(bounds::eta_t_with(p, c.horizon, q, c.lsi_indexing))?,
        eta_inf: finite(bounds::eta_inf(p)),
        lsi_time: Some(c.lsi_time),
        lsi: finite(bounds::lsi_constant(p, c.lsi_time)),
        ln_lambda_inf: Some(bounds::ln_lambda_inf(p)),
        ..ConstantsRow::default()
    };
    match *p {
        ThetaProfile::Slc { alpha } => row.alpha = Some(alpha),
        ThetaProfile::Perturbed { alpha, lipschitz } => {
            row.alpha = Some(alpha);
            row.lipschitz = Some(lipschitz);
        }
        ThetaProfile::ConvexityProfile { alpha, g0 } => {
            row.alpha = Some(alpha);
            row.g0 = Some(g0);
        }
    }
    Ok(row)
}

/// `Λ_∞`, `η_∞`, `λ_s` and `L̂` across the configured parameter grid.
pub fn run_constants(cfg: &ExperimentConfig) -> Result<ConstantsReport> {
    let c = &cfg.constants;
    let mut rows = Vec::new();
    let mut lhat_consistent = true;
    let build = |r: Result<ThetaProfile>, path: &str| r.map_err(|e| Error::config(path, e.to_string()));
    for &alpha in &c.alphas {
        rows.push(profile_row(&build(ThetaProfile::slc(alpha), "constants.alphas")?, cfg)?);
    }
    for &alpha in &c.alphas {
        for &l in &c.lipschitz {
            rows.push(profile_row(&build(ThetaProfile::perturbed(alpha, l), "constants.lipschitz")?, cfg)?);
        }
    }
    for &[alpha, g0] in &c.convexity {
        rows.push(profile_row(&build(ThetaProfile::convexity_profile(alpha, g0), "constants.convexity")?, cfg)?);
    }
    for (k, &[alpha_v, lipschitz_v, radius_v]) in c.profile_params.iter().enumerate() {
        let path = format!("constants.profile_params[{k}]");
        let pp = ProfileParams::new(alpha_v, lipschitz_v, radius_v).map_err(|e| Error::config(&path, e.to_string()))?;
        let lhat = pp.lhat()?;
        if radius_v > 0.0 {
            let ratio = bounds::ghat(lhat, radius_v) / radius_v;
            lhat_consistent &= ratio >= lipschitz_v - 1e-10 && (ratio - lipschitz_v).abs() <= 1e-8;
        } else {
            lhat_consistent &= lhat == 0.0;
        }
        let p = build(pp.to_profile(), &path)?;
        let mut row = profile_row(&p, cfg)?;
        row.alpha_v = Some(alpha_v);
        row.lipschitz_v = Some(lipschitz_v);
        row.radius_v = Some(radius_v);
        row.lhat = Some(lhat);
        row.heuristic_exponent = Some(lipschitz_v / alpha_v * (lipschitz_v * radius_v * radius_v).max(1.0));
        rows.push(row);
    }
    let same_constants = rows.iter().all(|r| match (r.lambda_inf, r.eta_inf) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-14 * a.abs(),
        (None, None) => true,
        _ => false,
    });
    let finite_horizon_dominated = rows.iter().all(|r| match (r.lambda_t, r.lambda_inf) {
        (Some(t), Some(inf)) => t <= inf * (1.0 + 1e-9),
        _ => true,
    });
    Ok(ConstantsReport {
        schema: SCHEMA_VERSION,
        experiment: Experiment::ConstantsTable,
        provenance: provenance(cfg),
        horizon: c.horizon,
        rows,
        same_constants,
        finite_horizon_dominated,
        lhat_consistent,
        pass: same_constants && finite_horizon_dominated && lhat_consistent,
    })
}
