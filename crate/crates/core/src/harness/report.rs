use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Experiment, MeasureSpec};
use crate::error::Result;
use crate::fisher::DecayCurve;
use crate::flow::FlowConfig;
use crate::ou::{ThetaCheck, ThetaProfile};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_sha256: String,
    pub version: String,
}

impl Provenance {
    pub fn new(seed: u64, config_sha256: String) -> Self {
        Self {
            seed,
            config_sha256,
            version: format!("kimflow-core {}", env!("CARGO_PKG_VERSION")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlackLabel {
    /// Empirical and bound are both zero.
    Degenerate,
    /// Bound is zero but the empirical distance is not.
    Unbounded,
}

/// `empirical / bound`, or a label when the ratio is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Slack {
    Ratio(f64),
    Label(SlackLabel),
}

impl Slack {
    pub fn new(empirical: f64, bound: f64) -> Self {
        if bound > 0.0 {
            Slack::Ratio(empirical / bound)
        } else if empirical == 0.0 {
            Slack::Label(SlackLabel::Degenerate)
        } else {
            Slack::Label(SlackLabel::Unbounded)
        }
    }

    pub fn ratio(&self) -> Option<f64> {
        match self {
            Slack::Ratio(r) => Some(*r),
            Slack::Label(_) => None,
        }
    }

    fn csv_cell(&self) -> String {
        match self {
            Slack::Ratio(r) => r.to_string(),
            Slack::Label(SlackLabel::Degenerate) => "degenerate".into(),
            Slack::Label(SlackLabel::Unbounded) => "unbounded".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistances {
    pub l2: f64,
    pub l2_std_error: f64,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherSummary {
    pub fi: f64,
    pub fi_std_error: f64,
    /// Lower estimate of `FI_∞`; present for L^∞ runs.
    pub fi_inf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantSummary {
    /// `lambda_inf` or `eta_inf`.
    pub name: String,
    pub closed_form: f64,
    /// The same constant at the configured horizon, by quadrature.
    pub finite_horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub schema: u32,
    pub experiment: Experiment,
    pub provenance: Provenance,
    pub mu: MeasureSpec,
    pub nu: MeasureSpec,
    pub profile: ThetaProfile,
    pub flow: FlowConfig,
    pub n: usize,
    pub empirical: EmpiricalDistances,
    pub fisher: FisherSummary,
    pub constant: ConstantSummary,
    /// Exact `W₂(μ, ν)` when both are Gaussian; a lower bound on `l2`.
    pub w2_gaussian: Option<f64>,
    /// The empirical side of the check (`l2` or `linf`) and its standard error.
    pub statistic: f64,
    pub statistic_std_error: f64,
    /// `constant · √FI` (or `√FI_∞`).
    pub bound: f64,
    pub slack: Slack,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub schema: u32,
    pub experiment: Experiment,
    pub provenance: Provenance,
    pub mu: MeasureSpec,
    pub nu: MeasureSpec,
    pub profile: ThetaProfile,
    pub n: usize,
    pub curve: DecayCurve,
    pub max_envelope_excess: f64,
    pub nonincreasing: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaReport {
    pub schema: u32,
    pub experiment: Experiment,
    pub provenance: Provenance,
    pub mu: MeasureSpec,
    pub profile: ThetaProfile,
    pub probes: usize,
    pub checks: Vec<ThetaCheck>,
    /// Largest `λ_max(I + ∇²log q_t) − θ_t`, floored at 0.
    pub max_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ConstantsRow {
    pub family: String,
    pub alpha: Option<f64>,
    pub lipschitz: Option<f64>,
    pub g0: Option<f64>,
    pub alpha_v: Option<f64>,
    pub lipschitz_v: Option<f64>,
    pub radius_v: Option<f64>,
    pub lhat: Option<f64>,
    /// `Λ_T` at the table horizon.
    pub lambda_t: Option<f64>,
    /// `lim Λ_T` by quadrature.
    pub lambda_limit: Option<f64>,
    pub lambda_inf: Option<f64>,
    pub eta_t: Option<f64>,
    pub eta_inf: Option<f64>,
    pub lsi_time: Option<f64>,
    pub lsi: Option<f64>,
    /// `(L_V/α_V)·max(1, L_V R_V²)`, the growth exponent of the heuristic regime display.
    pub heuristic_exponent: Option<f64>,
    pub ln_lambda_inf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub schema: u32,
    pub experiment: Experiment,
    pub provenance: Provenance,
    pub horizon: f64,
    pub rows: Vec<ConstantsRow>,
    /// `eta_inf == lambda_inf` on every row.
    pub same_constants: bool,
    /// `Λ_T ≤ Λ_∞` closed form on every row.
    pub finite_horizon_dominated: bool,
    /// `L̂` satisfies its defining inequality on every row.
    pub lhat_consistent: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Report {
    Stability(StabilityReport),
    Decay(DecayReport),
    Theta(ThetaReport),
    Constants(ConstantsReport),
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Report {
    pub fn passed(&self) -> bool {
        match self {
            Report::Stability(r) => r.pass,
            Report::Decay(r) => r.pass,
            Report::Theta(r) => r.pass,
            Report::Constants(r) => r.pass,
        }
    }

    pub fn experiment(&self) -> Experiment {
        match self {
            Report::Stability(r) => r.experiment,
            Report::Decay(r) => r.experiment,
            Report::Theta(r) => r.experiment,
            Report::Constants(r) => r.experiment,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parse a JSON report back; the experiment tag picks the shape.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        let tag: Experiment = serde_json::from_value(v["experiment"].clone())?;
        Ok(match tag {
            Experiment::StabilityL2 | Experiment::StabilityLinf => Report::Stability(serde_json::from_value(v)?),
            Experiment::FiDecay => Report::Decay(serde_json::from_value(v)?),
            Experiment::ThetaCheck => Report::Theta(serde_json::from_value(v)?),
            Experiment::ConstantsTable => Report::Constants(serde_json::from_value(v)?),
        })
    }

    /// Plot-ready CSV; columns are documented in `docs/formats.md`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        match self {
            Report::Stability(r) => {
                w.write_record(["metric", "estimate", "std_error", "bound", "slack_ratio", "pass"])?;
                let pass = r.pass.to_string();
                let (l2_bound, linf_bound) = match r.experiment {
                    Experiment::StabilityLinf => (String::new(), r.bound.to_string()),
                    _ => (r.bound.to_string(), String::new()),
                };
                let (l2_slack, linf_slack, l2_pass, linf_pass) = match r.experiment {
                    Experiment::StabilityLinf => (String::new(), r.slack.csv_cell(), String::new(), pass),
                    _ => (r.slack.csv_cell(), String::new(), pass, String::new()),
                };
                w.write_record([
                    "l2".to_string(),
                    r.empirical.l2.to_string(),
                    r.empirical.l2_std_error.to_string(),
                    l2_bound,
                    l2_slack,
                    l2_pass,
                ])?;
                w.write_record([
                    "linf".to_string(),
                    r.empirical.linf.to_string(),
                    String::new(),
                    linf_bound,
                    linf_slack,
                    linf_pass,
                ])?;
                w.write_record([
                    "fi".to_string(),
                    r.fisher.fi.to_string(),
                    r.fisher.fi_std_error.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])?;
                if let Some(v) = r.fisher.fi_inf {
                    w.write_record(["fi_inf", &v.to_string(), "", "", "", ""])?;
                }
                if let Some(v) = r.w2_gaussian {
                    w.write_record(["w2_gaussian", &v.to_string(), "", "", "", ""])?;
                }
            }
            Report::Decay(r) => {
                w.write_record(["t", "estimate", "std_error", "envelope"])?;
                let c = &r.curve;
                for i in 0..c.times.len() {
                    w.write_record([
                        c.times[i].to_string(),
                        c.estimates[i].to_string(),
                        c.std_errors[i].to_string(),
                        c.envelope[i].to_string(),
                    ])?;
                }
            }
            Report::Theta(r) => {
                w.write_record(["t", "theta", "max_lambda", "max_violation"])?;
                for c in &r.checks {
                    w.write_record([
                        c.time.to_string(),
                        c.theta.to_string(),
                        c.max_lambda.to_string(),
                        c.max_violation.to_string(),
                    ])?;
                }
            }
            Report::Constants(r) => {
                w.write_record([
                    "family",
                    "alpha",
                    "lipschitz",
                    "g0",
                    "alpha_v",
                    "lipschitz_v",
                    "radius_v",
                    "lhat",
                    "lambda_t",
                    "lambda_limit",
                    "lambda_inf",
                    "eta_t",
                    "eta_inf",
                    "lsi_time",
                    "lsi",
                    "heuristic_exponent",
                    "ln_lambda_inf",
                ])?;
                for row in &r.rows {
                    let mut rec = vec![row.family.clone()];
                    rec.extend(
                        [
                            row.alpha,
                            row.lipschitz,
                            row.g0,
                            row.alpha_v,
                            row.lipschitz_v,
                            row.radius_v,
                            row.lhat,
                            row.lambda_t,
                            row.lambda_limit,
                            row.lambda_inf,
                            row.eta_t,
                            row.eta_inf,
                            row.lsi_time,
                            row.lsi,
                            row.heuristic_exponent,
                            row.ln_lambda_inf,
                        ]
                        .into_iter()
                        .map(cell),
                    );
                    w.write_record(rec)?;
                }
            }
        }
        w.flush()?;
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    /// Write `<stem>.json` and `<stem>.csv` into `dir`, each atomically.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        write_atomic(&json, self.to_json()?.as_bytes())?;
        write_atomic(&csv, &self.to_csv()?)?;
        Ok((json, csv))
    }
}

/// Write to a temporary file in the target directory, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
