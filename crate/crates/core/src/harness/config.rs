use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{LsiIndexing, ProfileParams, QuadratureSpec};
use crate::error::{Error, Result};
use crate::fisher::FI_INF_REFINE_STEPS;
use crate::flow::FlowConfig;
use crate::measures::TargetMeasure;
use crate::ou::ThetaProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    StabilityL2,
    StabilityLinf,
    FiDecay,
    ThetaCheck,
    ConstantsTable,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::StabilityL2,
        Experiment::StabilityLinf,
        Experiment::FiDecay,
        Experiment::ThetaCheck,
        Experiment::ConstantsTable,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Experiment::StabilityL2 => "stability_l2",
            Experiment::StabilityLinf => "stability_linf",
            Experiment::FiDecay => "fi_decay",
            Experiment::ThetaCheck => "theta_check",
            Experiment::ConstantsTable => "constants_table",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.tag() == tag)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A matrix given either as rows or as a scalar multiple of the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn build(&self, d: usize, path: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Scalar(s) => Ok(DMatrix::identity(d, d) * *s),
            MatrixSpec::Rows(rows) => {
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::config(path, format!("expected a {d}×{d} matrix")));
                }
                Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    StandardGaussian {
        dim: usize,
    },
    Gaussian {
        mean: Vec<f64>,
        cov: MatrixSpec,
    },
    GaussianMixture {
        means: Vec<Vec<f64>>,
        weights: Vec<f64>,
        cov: MatrixSpec,
    },
    /// `exp(−½xᵀAx − H)` with the log-sum-exp tilt `H` from `means`, `weights`.
    PerturbedTilt {
        a: MatrixSpec,
        means: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

fn means_dim(means: &[Vec<f64>], path: &str) -> Result<usize> {
    let d = means
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::config(format!("{path}.means"), "at least one mean is required"))?;
    if let Some(k) = means.iter().position(|m| m.len() != d) {
        return Err(Error::config(format!("{path}.means[{k}]"), format!("expected length {d}")));
    }
    Ok(d)
}

impl MeasureSpec {
    pub fn build(&self, path: &str) -> Result<TargetMeasure> {
        let wrap = |sub: &str| {
            let p = format!("{path}{sub}");
            move |e: Error| match e {
                Error::Config { .. } => e,
                other => Error::config(p, other.to_string()),
            }
        };
        match self {
            MeasureSpec::StandardGaussian { dim } => {
                if *dim == 0 {
                    return Err(Error::config(format!("{path}.dim"), "dimension must be ≥ 1"));
                }
                Ok(TargetMeasure::standard_gaussian(*dim))
            }
            MeasureSpec::Gaussian { mean, cov } => {
                if mean.is_empty() {
                    return Err(Error::config(format!("{path}.mean"), "dimension must be ≥ 1"));
                }
                let c = cov.build(mean.len(), &format!("{path}.cov"))?;
                TargetMeasure::gaussian(DVector::from_column_slice(mean), c).map_err(wrap(".cov"))
            }
            MeasureSpec::GaussianMixture { means, weights, cov } => {
                let d = means_dim(means, path)?;
                let c = cov.build(d, &format!("{path}.cov"))?;
                let ms = means.iter().map(|m| DVector::from_column_slice(m)).collect();
                TargetMeasure::mixture(ms, weights.clone(), c).map_err(wrap(""))
            }
            MeasureSpec::PerturbedTilt { a, means, weights } => {
                let d = means_dim(means, path)?;
                let a = a.build(d, &format!("{path}.a"))?;
                let ms = means.iter().map(|m| DVector::from_column_slice(m)).collect();
                TargetMeasure::perturbed_tilt(a, ms, weights.clone()).map_err(wrap(""))
            }
        }
    }
}

/// How the `θ` profile of `μ` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileChoice {
    /// From `μ`: `slc` for Gaussians, tilt constants for mixtures.
    #[default]
    Auto,
    Slc {
        alpha: f64,
    },
    Perturbed {
        alpha: f64,
        lipschitz: f64,
    },
    ConvexityProfile {
        alpha: f64,
        g0: f64,
    },
    /// Convexity profile from `(α_V, L_V, R_V)` through `L̂`.
    ConvexityParams {
        alpha_v: f64,
        lipschitz_v: f64,
        radius_v: f64,
    },
}

impl ProfileChoice {
    pub fn resolve(&self, mu: Option<&TargetMeasure>) -> Result<ThetaProfile> {
        let r = match *self {
            ProfileChoice::Auto => match mu {
                Some(m) => ThetaProfile::derive_for(m),
                None => return Err(Error::config("profile", "`auto` needs a `mu` measure")),
            },
            ProfileChoice::Slc { alpha } => ThetaProfile::slc(alpha),
            ProfileChoice::Perturbed { alpha, lipschitz } => ThetaProfile::perturbed(alpha, lipschitz),
            ProfileChoice::ConvexityProfile { alpha, g0 } => ThetaProfile::convexity_profile(alpha, g0),
            ProfileChoice::ConvexityParams {
                alpha_v,
                lipschitz_v,
                radius_v,
            } => ProfileParams::new(alpha_v, lipschitz_v, radius_v).and_then(|p| p.to_profile()),
        };
        r.map_err(|e| Error::config("profile", e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecaySettings {
    pub times: Vec<f64>,
}

impl Default for DecaySettings {
    fn default() -> Self {
        Self {
            times: (0..10).map(|i| 0.25 * i as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaCheckSettings {
    pub times: Vec<f64>,
    pub probes: usize,
    /// Allowed `λ_max − θ_t` before a time is counted as a violation.
    pub tolerance: f64,
}

impl Default for ThetaCheckSettings {
    fn default() -> Self {
        Self {
            times: vec![0.05, 0.1, 0.2, 0.4, 0.7, 1.0, 1.5, 2.5],
            probes: 200,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsSettings {
    pub alphas: Vec<f64>,
    pub lipschitz: Vec<f64>,
    /// Convexity-profile rows `(α, ĝ′(0))`.
    pub convexity: Vec<[f64; 2]>,
    /// `(α_V, L_V, R_V)` rows for `L̂`.
    pub profile_params: Vec<[f64; 3]>,
    pub horizon: f64,
    pub lsi_time: f64,
    pub lsi_indexing: LsiIndexing,
}

impl Default for ConstantsSettings {
    fn default() -> Self {
        Self {
            alphas: vec![0.5, 1.0, 2.0],
            lipschitz: vec![0.0, 0.3, 1.0],
            convexity: vec![[0.0, 1.0], [-0.5, 0.5], [1.0, 2.0]],
            profile_params: vec![
                [2.0, 0.1, 0.1],
                [2.0, 1.0, 1.0],
                [2.0, 10.0, 10.0],
                [1.5, 0.01, 0.1],
            ],
            horizon: 20.0,
            lsi_time: 1.0,
            lsi_indexing: LsiIndexing::ThroughU,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: Option<PathBuf>,
    /// File stem for `<stem>.json` / `<stem>.csv`; defaults to the experiment tag.
    pub stem: Option<String>,
}

pub const DEFAULT_SAMPLES: usize = 10_000;

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

fn default_refine() -> usize {
    FI_INF_REFINE_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional in files; the CLI subcommand fills it in.
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub n: usize,
    #[serde(default)]
    pub mu: Option<MeasureSpec>,
    #[serde(default)]
    pub nu: Option<MeasureSpec>,
    #[serde(default)]
    pub profile: ProfileChoice,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default = "default_refine")]
    pub fi_inf_refine_steps: usize,
    #[serde(default)]
    pub decay: DecaySettings,
    #[serde(default)]
    pub theta_check: ThetaCheckSettings,
    #[serde(default)]
    pub constants: ConstantsSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, format: ConfigFormat) -> Result<Self> {
        match format {
            ConfigFormat::Json => {
                let de = &mut serde_json::Deserializer::from_str(text);
                serde_path_to_error::deserialize(de).map_err(|e| {
                    let path = e.path().to_string();
                    let inner = e.into_inner();
                    Error::config(path, format!("{inner}"))
                })
            }
            ConfigFormat::Toml => {
                let de = toml::Deserializer::parse(text)
                    .map_err(|e| Error::config(".", e.to_string().trim_end().to_string()))?;
                serde_path_to_error::deserialize(de).map_err(|e| {
                    let path = e.path().to_string();
                    let inner = e.into_inner();
                    Error::config(path, inner.to_string().trim_end().to_string())
                })
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::parse(&text, ConfigFormat::from_path(path))
    }

    /// Fill in the experiment from a subcommand, rejecting a conflicting tag.
    pub fn with_experiment(mut self, e: Experiment) -> Result<Self> {
        match self.experiment {
            Some(found) if found != e => Err(Error::config(
                "experiment",
                format!("config is for `{found}` but `{e}` was requested"),
            )),
            _ => {
                self.experiment = Some(e);
                Ok(self)
            }
        }
    }

    pub fn experiment(&self) -> Result<Experiment> {
        self.experiment
            .ok_or_else(|| Error::config("experiment", "no experiment selected"))
    }

    pub fn mu(&self) -> Result<TargetMeasure> {
        self.mu
            .as_ref()
            .ok_or_else(|| Error::config("mu", "this experiment needs `mu`"))?
            .build("mu")
    }

    pub fn nu(&self) -> Result<TargetMeasure> {
        self.nu
            .as_ref()
            .ok_or_else(|| Error::config("nu", "this experiment needs `nu`"))?
            .build("nu")
    }

    /// Semantic checks beyond the schema.
    pub fn validate(&self) -> Result<()> {
        let e = self.experiment()?;
        self.flow
            .validate()
            .map_err(|err| Error::config("flow", err.to_string()))?;
        let needs_pair = matches!(
            e,
            Experiment::StabilityL2 | Experiment::StabilityLinf | Experiment::FiDecay
        );
        if needs_pair {
            let (mu, nu) = (self.mu()?, self.nu()?);
            if mu.dim() != nu.dim() {
                return Err(Error::config(
                    "nu",
                    format!("dimension {} does not match mu's {}", nu.dim(), mu.dim()),
                ));
            }
            if self.n < 2 {
                return Err(Error::config("n", "need at least 2 samples"));
            }
        }
        if e == Experiment::ThetaCheck {
            self.mu()?;
            if self.theta_check.probes == 0 {
                return Err(Error::config("theta_check.probes", "need at least one probe"));
            }
            if let Some(k) = self.theta_check.times.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(Error::config(format!("theta_check.times[{k}]"), "times must be > 0"));
            }
        }
        if e == Experiment::FiDecay {
            let t = &self.decay.times;
            if t.is_empty() || t[0] < 0.0 || t.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("decay.times", "times must be ≥ 0 and strictly increasing"));
            }
        }
        if e == Experiment::ConstantsTable && !(self.constants.horizon > 0.0) {
            return Err(Error::config("constants.horizon", "horizon must be > 0"));
        }
        if e != Experiment::ConstantsTable {
            self.profile.resolve(Some(&self.mu()?))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn stem(&self) -> String {
        self.output
            .stem
            .clone()
            .unwrap_or_else(|| self.experiment.map(|e| e.tag().to_string()).unwrap_or_else(|| "report".into()))
    }
}
