//! Fixed-step integration of the reverse probability-flow ODE
//!
//! ```text
//! dX_t/dt = X_t + ∇log q_{T−t}(X_t),   t ∈ [0, T]
//! ```
//!
//! whose time-`T` flow map pushes `q_T` onto the target. With `T` large
//! (default 10) and `X_0 ∼ γ` the terminal point approximates the Kim–Milman
//! map. Stepping is fixed (rk4, Heun or Euler) so every run is bit-reproducible.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_dim, check_finite};
use crate::measures::{draw_variates, TargetMeasure};
use crate::ou::{self, EvolvedScoreCache};
use crate::rng::SamplerSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Rk4,
    Heun,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    UniformT,
    /// Uniform over `[0, T − τ]`, then geometric in `T − t` down to `τ·10⁻⁴`,
    /// with `τ = min(1, T/2)`. Concentrates steps near the target.
    GeometricTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Both flows start from the same `γ` draw.
    #[default]
    SharedGamma,
    /// `X_0 ∼ q_T^μ`, `Y_0 ∼ q_T^ν` coupled through common random numbers.
    #[serde(rename = "exact_qT", alias = "exact_qt")]
    ExactQT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub horizon: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub schedule: Schedule,
    pub init_mode: InitMode,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            horizon: 10.0,
            steps: 400,
            scheme: Scheme::Rk4,
            schedule: Schedule::UniformT,
            init_mode: InitMode::SharedGamma,
        }
    }
}

pub const MIN_STEPS: usize = 10;

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Domain(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if self.steps < MIN_STEPS {
            return Err(Error::Domain(format!(
                "need at least {MIN_STEPS} steps, got {}",
                self.steps
            )));
        }
        Ok(())
    }

    /// Strictly increasing ODE-time nodes `0 = t_0 < … < t_N = T`.
    pub fn time_grid(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let (t_end, n) = (self.horizon, self.steps);
        let grid = match self.schedule {
            Schedule::UniformT => (0..=n).map(|i| t_end * i as f64 / n as f64).collect(),
            Schedule::GeometricTail => {
                let tail = t_end.min(2.0).min(1.0).min(t_end / 2.0);
                let bulk = n / 2;
                let tail_steps = n - bulk;
                let t_split = t_end - tail;
                let mut g: Vec<f64> = (0..=bulk).map(|i| t_split * i as f64 / bulk as f64).collect();
                // v_j = tail · (1e-4)^{j / (tail_steps - 1)}, j = 1..tail_steps-1, then v = 0
                for j in 1..tail_steps {
                    let frac = j as f64 / (tail_steps - 1) as f64;
                    g.push(t_end - tail * 1e-4f64.powf(frac));
                }
                g.push(t_end);
                g
            }
        };
        debug_assert!(grid.windows(2).all(|w| w[0] < w[1]));
        Ok(grid)
    }

    /// Every OU time at which the integrator evaluates the score.
    pub fn score_times(&self) -> Result<Vec<f64>> {
        let grid = self.time_grid()?;
        let mut times = Vec::with_capacity(2 * grid.len());
        for w in grid.windows(2) {
            times.extend_from_slice(&stage_times(self.horizon, w[0], w[1]));
        }
        Ok(times)
    }
}

/// OU times `(T − t_i, T − t_i − h/2, T − t_{i+1})` for one step.
#[inline]
fn stage_times(horizon: f64, t0: f64, t1: f64) -> [f64; 3] {
    let mid = t0 + 0.5 * (t1 - t0);
    [
        (horizon - t0).max(0.0),
        (horizon - mid).max(0.0),
        (horizon - t1).max(0.0),
    ]
}

/// Source of evolved scores `∇log q_t` for the flow drift.
pub trait ScoreSource: Sync {
    fn dim(&self) -> usize;

    /// Write `∇log q_t(y)` into `out`, `t` being forward OU time.
    fn score_into(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()>;
}

impl ScoreSource for EvolvedScoreCache {
    fn dim(&self) -> usize {
        self.base().dim()
    }

    #[inline]
    fn score_into(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        EvolvedScoreCache::score_into(self, t, y, out)
    }
}

/// Importance-sampled scores for targets without exact OU evolution.
///
/// Each OU time uses its own fixed random stream so the drift is a
/// deterministic function of `(t, y)`. Noisy; not for acceptance-grade runs.
#[derive(Debug, Clone)]
pub struct GenericScoreSource {
    pub measure: TargetMeasure,
    pub samples: usize,
    pub seed: u64,
}

impl ScoreSource for GenericScoreSource {
    fn dim(&self) -> usize {
        self.measure.dim()
    }

    fn score_into(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        if t == 0.0 {
            self.measure.score_into(y, out);
            return Ok(());
        }
        let est = ou::evolved_score_generic(
            &self.measure,
            t,
            y,
            self.samples,
            SamplerSeed::new(self.seed, t.to_bits()),
        )?;
        out.copy_from_slice(est.score.as_slice());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }
}

struct Workspace {
    x: Vec<f64>,
    tmp: Vec<f64>,
    k: [Vec<f64>; 4],
}

impl Workspace {
    fn new(d: usize) -> Self {
        Self {
            x: vec![0.0; d],
            tmp: vec![0.0; d],
            k: [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]],
        }
    }
}

/// Drift evaluation at the three stage times of one step.
trait StageEval {
    fn score(&self, stage: usize, x: &[f64], out: &mut [f64]) -> Result<()>;

    #[inline]
    fn drift(&self, stage: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.score(stage, x, out)?;
        for (o, xi) in out.iter_mut().zip(x) {
            *o += xi;
        }
        Ok(())
    }
}

struct BySource<'a> {
    source: &'a dyn ScoreSource,
    times: [f64; 3],
}

impl StageEval for BySource<'_> {
    #[inline]
    fn score(&self, stage: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.source.score_into(self.times[stage], x, out)
    }
}

/// Stage measures resolved ahead of time, skipping the per-call lookup.
struct ByMeasure<'a>([&'a TargetMeasure; 3]);

impl StageEval for ByMeasure<'_> {
    #[inline]
    fn score(&self, stage: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.0[stage].score_into(x, out);
        Ok(())
    }
}

/// One step of size `h` ending at `t1`, in place on `ws.x`.
fn step(eval: &impl StageEval, scheme: Scheme, h: f64, t1: f64, ws: &mut Workspace) -> Result<()> {
    let Workspace { x, tmp, k } = ws;
    let [k1, k2, k3, k4] = k;
    match scheme {
        Scheme::Euler => {
            eval.drift(0, x, k1)?;
            for (xi, a) in x.iter_mut().zip(k1.iter()) {
                *xi += h * a;
            }
        }
        Scheme::Heun => {
            eval.drift(0, x, k1)?;
            for i in 0..x.len() {
                tmp[i] = x[i] + h * k1[i];
            }
            eval.drift(2, tmp, k2)?;
            for i in 0..x.len() {
                x[i] += 0.5 * h * (k1[i] + k2[i]);
            }
        }
        Scheme::Rk4 => {
            eval.drift(0, x, k1)?;
            for i in 0..x.len() {
                tmp[i] = x[i] + 0.5 * h * k1[i];
            }
            eval.drift(1, tmp, k2)?;
            for i in 0..x.len() {
                tmp[i] = x[i] + 0.5 * h * k2[i];
            }
            eval.drift(1, tmp, k3)?;
            for i in 0..x.len() {
                tmp[i] = x[i] + h * k3[i];
            }
            eval.drift(2, tmp, k4)?;
            for i in 0..x.len() {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            time: t1,
            point: None,
        })
    }
}

fn integrate_with_grid(
    source: &dyn ScoreSource,
    x0: &[f64],
    cfg: &FlowConfig,
    grid: &[f64],
    mut record: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    let mut ws = Workspace::new(x0.len());
    ws.x.copy_from_slice(x0);
    record(&ws.x);
    for w in grid.windows(2) {
        let eval = BySource {
            source,
            times: stage_times(cfg.horizon, w[0], w[1]),
        };
        step(&eval, cfg.scheme, w[1] - w[0], w[1], &mut ws)?;
        record(&ws.x);
    }
    Ok(ws.x)
}

/// Integrate the flow from `x0`, keeping the whole trajectory.
pub fn integrate(source: &dyn ScoreSource, x0: &[f64], cfg: &FlowConfig) -> Result<Trajectory> {
    check_dim(source.dim(), x0.len())?;
    check_finite(x0, "initial point")?;
    let grid = cfg.time_grid()?;
    let mut states = Vec::with_capacity(grid.len());
    integrate_with_grid(source, x0, cfg, &grid, |x| {
        states.push(DVector::from_column_slice(x))
    })?;
    Ok(Trajectory {
        times: grid,
        states,
    })
}

enum Backend {
    /// Exact evolution, with cache indices of the three stage times per step.
    Cache {
        cache: EvolvedScoreCache,
        stages: Vec<[usize; 3]>,
    },
    Source(Box<dyn ScoreSource + Send>),
}

/// Flow map of one target for a fixed configuration.
///
/// Holds the evolved measures for every stage time of the grid, so batches
/// of points reuse the same precomputed parameters.
pub struct FlowMap {
    backend: Backend,
    cfg: FlowConfig,
    grid: Vec<f64>,
}

/// Importance samples per evaluation when a target has no exact evolution.
pub const GENERIC_SCORE_SAMPLES: usize = 4096;

impl FlowMap {
    pub fn new(m: &TargetMeasure, cfg: &FlowConfig) -> Result<Self> {
        let grid = cfg.time_grid()?;
        if !m.is_exactly_samplable() {
            return Self::with_source(
                Box::new(GenericScoreSource {
                    measure: m.clone(),
                    samples: GENERIC_SCORE_SAMPLES,
                    seed: 0,
                }),
                cfg,
            );
        }
        let cache = EvolvedScoreCache::new(m, &cfg.score_times()?)?;
        let stages = grid
            .windows(2)
            .map(|w| {
                stage_times(cfg.horizon, w[0], w[1])
                    .map(|t| cache.index_of(t).expect("every stage time is cached"))
            })
            .collect();
        Ok(Self {
            backend: Backend::Cache { cache, stages },
            cfg: *cfg,
            grid,
        })
    }

    pub fn with_source(source: Box<dyn ScoreSource + Send>, cfg: &FlowConfig) -> Result<Self> {
        Ok(Self {
            grid: cfg.time_grid()?,
            backend: Backend::Source(source),
            cfg: *cfg,
        })
    }

    pub fn dim(&self) -> usize {
        match &self.backend {
            Backend::Cache { cache, .. } => cache.base().dim(),
            Backend::Source(s) => s.dim(),
        }
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn apply(&self, x0: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.dim(), x0.len())?;
        check_finite(x0, "initial point")?;
        match &self.backend {
            Backend::Source(s) => {
                integrate_with_grid(s.as_ref(), x0, &self.cfg, &self.grid, |_| {}).map(DVector::from_vec)
            }
            Backend::Cache { cache, stages } => {
                let mut ws = Workspace::new(x0.len());
                ws.x.copy_from_slice(x0);
                for (w, idx) in self.grid.windows(2).zip(stages) {
                    let eval = ByMeasure(idx.map(|i| cache.measure_at(i)));
                    step(&eval, self.cfg.scheme, w[1] - w[0], w[1], &mut ws)?;
                }
                Ok(DVector::from_vec(ws.x))
            }
        }
    }

    /// Terminal points for a batch, in input order. Errors carry the index of
    /// the first failing point.
    pub fn apply_batch(&self, points: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        points
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                self.apply(p.as_slice()).map_err(|e| match e {
                    Error::Diverged { time, .. } => Error::Diverged {
                        time,
                        point: Some(i),
                    },
                    other => other,
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    }
}

pub fn flow_map_batch(
    m: &TargetMeasure,
    cfg: &FlowConfig,
    points: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    FlowMap::new(m, cfg)?.apply_batch(points)
}

/// Initial points for a coupled run: `(x_i, y_i)` pairs.
pub fn coupled_initials(
    mu: &TargetMeasure,
    nu: &TargetMeasure,
    cfg: &FlowConfig,
    n: usize,
    seed: SamplerSeed,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    check_dim(mu.dim(), nu.dim())?;
    let d = mu.dim();
    let mut rng = seed.rng();
    let mut z = vec![0.0; d];
    match cfg.init_mode {
        InitMode::SharedGamma => {
            let xs: Vec<DVector<f64>> = (0..n)
                .map(|_| {
                    draw_variates(&mut rng, &mut z);
                    DVector::from_column_slice(&z)
                })
                .collect();
            Ok((xs.clone(), xs))
        }
        InitMode::ExactQT => {
            let q_mu = ou::ou_evolve(mu, cfg.horizon)?.into_measure();
            let q_nu = ou::ou_evolve(nu, cfg.horizon)?.into_measure();
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let u = draw_variates(&mut rng, &mut z);
                let mut x = DVector::zeros(d);
                let mut y = DVector::zeros(d);
                q_mu.from_variates(u, &z, x.as_mut_slice())?;
                q_nu.from_variates(u, &z, y.as_mut_slice())?;
                xs.push(x);
                ys.push(y);
            }
            Ok((xs, ys))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoupledDistance {
    /// `(mean ‖X_T − Y_T‖²)^{1/2}` over the sampled initials.
    pub l2: f64,
    /// Delta-method standard error of `l2`.
    pub l2_std_error: f64,
    /// Largest sampled distance; a lower bound on the essential supremum.
    pub linf: f64,
    pub init_mode: InitMode,
    pub distances: Vec<f64>,
}

/// Integrate the flows of `mu` and `nu` from coupled initial points.
pub fn coupled_distance(
    mu: &TargetMeasure,
    nu: &TargetMeasure,
    cfg: &FlowConfig,
    n: usize,
    seed: SamplerSeed,
) -> Result<CoupledDistance> {
    if n == 0 {
        return Err(Error::Domain("coupled distance needs n ≥ 1".into()));
    }
    let (xs, ys) = coupled_initials(mu, nu, cfg, n, seed)?;
    let x_end = FlowMap::new(mu, cfg)?.apply_batch(&xs)?;
    let y_end = FlowMap::new(nu, cfg)?.apply_batch(&ys)?;
    let distances: Vec<f64> = x_end.iter().zip(&y_end).map(|(a, b)| (a - b).norm()).collect();
    let sq: Vec<f64> = distances.iter().map(|d| d * d).collect();
    let (mean_sq, se_sq) = linalg::mean_and_se(&sq);
    let l2 = mean_sq.sqrt();
    let l2_std_error = if l2 > 0.0 { se_sq / (2.0 * l2) } else { 0.0 };
    let linf = distances.iter().cloned().fold(0.0, f64::max);
    Ok(CoupledDistance {
        l2,
        l2_std_error,
        linf,
        init_mode: cfg.init_mode,
        distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dv(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn shift(m: &[f64]) -> TargetMeasure {
        TargetMeasure::gaussian(dv(m), DMatrix::identity(m.len(), m.len())).unwrap()
    }

    fn scale(sigma: f64) -> TargetMeasure {
        TargetMeasure::gaussian(dv(&[0.0]), DMatrix::from_element(1, 1, sigma * sigma)).unwrap()
    }

    /// Oracle for `ẋ = x(1 − 1/s²_{T−t})`, `s²_u = 1 + (σ² − 1)e^{−2u}`: the
    /// linear factor `exp(∫_0^T (1 − 1/s²_v) dv)` by composite Simpson.
    fn scale_factor_by_quadrature(sigma: f64, horizon: f64) -> f64 {
        let n = 200_000;
        let h = horizon / n as f64;
        let f = |v: f64| 1.0 - 1.0 / (1.0 + (sigma * sigma - 1.0) * (-2.0 * v).exp());
        let mut s = f(0.0) + f(horizon);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        (s * h / 3.0).exp()
    }

    #[test]
    fn standard_gaussian_flow_is_identity() {
        let g = TargetMeasure::standard_gaussian(2);
        let fm = FlowMap::new(&g, &FlowConfig::default()).unwrap();
        let x0 = [0.7, -1.1];
        assert_eq!(fm.apply(&x0).unwrap(), dv(&x0));
    }

    #[test]
    fn gaussian_shift_closed_form() {
        let m = 1.3;
        let cfg = FlowConfig::default();
        let cache = EvolvedScoreCache::new(&shift(&[m]), &cfg.score_times().unwrap()).unwrap();
        let traj = integrate(&cache, &[0.4], &cfg).unwrap();
        assert_eq!(traj.states.len(), cfg.steps + 1);
        let expect = 0.4 + m * (1.0 - (-10.0f64).exp());
        assert!((traj.terminal()[0] - expect).abs() < 1e-8);
    }

    #[test]
    fn gaussian_scale_matches_quadrature_oracle() {
        let sigma = 2.0;
        let lam = scale_factor_by_quadrature(sigma, 10.0);
        assert!((lam - 2.0).abs() < 1e-7);
        let fm = FlowMap::new(&scale(sigma), &FlowConfig::default()).unwrap();
        for x0 in [-2.5, 0.3, 1.0] {
            let y = fm.apply(&[x0]).unwrap()[0];
            assert!((y - lam * x0).abs() <= 1e-6 * x0.abs() + 1e-9);
            assert!((y - 2.0 * x0).abs() <= 1e-4 * x0.abs() + 1e-4);
        }
    }

    #[test]
    fn rk4_order_of_accuracy() {
        let m = 1.0;
        let exact = 0.2 + m * (1.0 - (-10.0f64).exp());
        let errs: Vec<f64> = [100, 200, 400]
            .iter()
            .map(|&steps| {
                let cfg = FlowConfig {
                    steps,
                    ..FlowConfig::default()
                };
                let fm = FlowMap::new(&shift(&[m]), &cfg).unwrap();
                (fm.apply(&[0.2]).unwrap()[0] - exact).abs()
            })
            .collect();
        let slope = (errs[0].ln() - errs[2].ln()) / 4f64.ln();
        assert!((3.6..=4.4).contains(&slope), "errors {errs:?}, slope {slope}");
    }

    #[test]
    fn lower_order_schemes_converge() {
        let m = 1.0;
        let exact = m * (1.0 - (-10.0f64).exp());
        for (scheme, lo, hi) in [(Scheme::Euler, 0.8, 1.2), (Scheme::Heun, 1.8, 2.2)] {
            let errs: Vec<f64> = [200, 400]
                .iter()
                .map(|&steps| {
                    let cfg = FlowConfig {
                        steps,
                        scheme,
                        ..FlowConfig::default()
                    };
                    (FlowMap::new(&shift(&[m]), &cfg).unwrap().apply(&[0.0]).unwrap()[0] - exact).abs()
                })
                .collect();
            let slope = (errs[0] / errs[1]).log2();
            assert!((lo..=hi).contains(&slope), "{scheme:?}: {slope}");
        }
    }

    #[test]
    fn geometric_tail_grid() {
        let cfg = FlowConfig {
            schedule: Schedule::GeometricTail,
            ..FlowConfig::default()
        };
        let g = cfg.time_grid().unwrap();
        assert_eq!(g.len(), cfg.steps + 1);
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 10.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(g[g.len() - 1] - g[g.len() - 2] < 1e-3);

        let mix = TargetMeasure::mixture(vec![dv(&[-2.0]), dv(&[2.0])], vec![0.5, 0.5], DMatrix::identity(1, 1))
            .unwrap();
        let a = FlowMap::new(&mix, &cfg).unwrap().apply(&[0.3]).unwrap();
        let b = FlowMap::new(&mix, &FlowConfig::default()).unwrap().apply(&[0.3]).unwrap();
        assert!((a - b).amax() < 1e-5);
    }

    #[test]
    fn invalid_configs() {
        let bad = FlowConfig {
            steps: 5,
            ..FlowConfig::default()
        };
        assert!(bad.time_grid().is_err());
        let bad = FlowConfig {
            horizon: 0.0,
            ..FlowConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    struct Exploding;
    impl ScoreSource for Exploding {
        fn dim(&self) -> usize {
            1
        }
        fn score_into(&self, t: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = if t < 5.0 { f64::INFINITY } else { y[0] };
            Ok(())
        }
    }

    #[test]
    fn divergence_reports_time_and_index() {
        let cfg = FlowConfig::default();
        match integrate(&Exploding, &[1.0], &cfg) {
            Err(Error::Diverged { time, point: None }) => assert!((5.0..=5.1).contains(&time)),
            other => panic!("{other:?}"),
        }
        let fm = FlowMap::with_source(Box::new(Exploding), &cfg).unwrap();
        match fm.apply_batch(&[dv(&[1.0]), dv(&[2.0])]) {
            Err(Error::Diverged { point: Some(0), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pushforward_matches_mixture_moments() {
        let mu = TargetMeasure::mixture(vec![dv(&[-2.0]), dv(&[2.0])], vec![0.5, 0.5], DMatrix::identity(1, 1))
            .unwrap();
        let cfg = FlowConfig {
            init_mode: InitMode::ExactQT,
            ..FlowConfig::default()
        };
        let n = 10_000;
        let (xs, _) = coupled_initials(&mu, &mu, &cfg, n, SamplerSeed::new(77, 0)).unwrap();
        let out = flow_map_batch(&mu, &cfg, &xs).unwrap();
        let v: Vec<f64> = out.iter().map(|p| p[0]).collect();
        let (m1, se1) = linalg::mean_and_se(&v);
        let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
        let (m2, se2) = linalg::mean_and_se(&sq);
        // μ: mean 0, second moment 1 + 4
        assert!(m1.abs() <= 3.0 * se1, "mean {m1} ± {se1}");
        assert!((m2 - 5.0).abs() <= 3.0 * se2, "second moment {m2} ± {se2}");
    }

    #[test]
    fn step_halving_and_horizon_convergence() {
        let mix = TargetMeasure::mixture(vec![dv(&[-0.5]), dv(&[0.6])], vec![0.3, 0.7], DMatrix::identity(1, 1))
            .unwrap();
        let pts: Vec<DVector<f64>> = [-2.0, -0.5, 0.0, 0.8, 2.2].iter().map(|x| dv(&[*x])).collect();
        let coarse = flow_map_batch(&mix, &FlowConfig::default(), &pts).unwrap();
        let fine = flow_map_batch(
            &mix,
            &FlowConfig {
                steps: 800,
                ..FlowConfig::default()
            },
            &pts,
        )
        .unwrap();
        for (a, b) in coarse.iter().zip(&fine) {
            assert!((a - b).amax() < 1e-6);
        }
        for target in [mix, shift(&[1.0]), scale(2.0)] {
            let short = flow_map_batch(&target, &FlowConfig { horizon: 8.0, ..FlowConfig::default() }, &pts).unwrap();
            let long = flow_map_batch(&target, &FlowConfig { horizon: 12.0, ..FlowConfig::default() }, &pts).unwrap();
            for (a, b) in short.iter().zip(&long) {
                assert!((a - b).amax() < 1e-3);
            }
        }
    }

    #[test]
    fn identical_targets_have_zero_distance() {
        let mix = TargetMeasure::mixture(vec![dv(&[-1.0]), dv(&[1.5])], vec![0.5, 0.5], DMatrix::identity(1, 1))
            .unwrap();
        for init_mode in [InitMode::SharedGamma, InitMode::ExactQT] {
            let cfg = FlowConfig {
                init_mode,
                ..FlowConfig::default()
            };
            let r = coupled_distance(&mix, &mix, &cfg, 200, SamplerSeed::new(1, 0)).unwrap();
            assert_eq!(r.l2, 0.0);
            assert_eq!(r.linf, 0.0);
            assert!(r.distances.iter().all(|d| *d == 0.0));
        }
    }

    #[test]
    fn shift_pair_distance_is_constant() {
        let g = TargetMeasure::standard_gaussian(1);
        let r = coupled_distance(&g, &shift(&[1.0]), &FlowConfig::default(), 10_000, SamplerSeed::new(3, 0))
            .unwrap();
        let expect = 1.0 - (-10.0f64).exp();
        assert!((r.l2 - expect).abs() < 1e-4);
        assert!((r.linf - r.l2).abs() < 1e-9);
    }

    #[test]
    fn scale_pair_distance() {
        let g = TargetMeasure::standard_gaussian(1);
        let r = coupled_distance(&g, &scale(2.0), &FlowConfig::default(), 100_000, SamplerSeed::new(3, 0))
            .unwrap();
        assert!((r.l2 - 1.0).abs() < 0.01, "{}", r.l2);
    }

    #[test]
    fn generic_source_tracks_exact_flow() {
        let mix = TargetMeasure::mixture(vec![dv(&[-0.5]), dv(&[0.5])], vec![0.5, 0.5], DMatrix::identity(1, 1))
            .unwrap();
        let pert = TargetMeasure::perturbed_tilt(
            DMatrix::identity(1, 1),
            vec![dv(&[-0.5]), dv(&[0.5])],
            vec![0.5, 0.5],
        )
        .unwrap();
        let cfg = FlowConfig {
            steps: 50,
            horizon: 6.0,
            ..FlowConfig::default()
        };
        let exact = FlowMap::new(&mix, &cfg).unwrap().apply(&[0.7]).unwrap();
        let approx = FlowMap::new(&pert, &cfg).unwrap().apply(&[0.7]).unwrap();
        assert!((exact - approx).amax() < 0.05);
    }
}
