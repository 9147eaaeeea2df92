//! Built-in experiment configurations.

use super::config::{ConfigFormat, ExperimentConfig};
use crate::error::{Error, Result};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub toml: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "shift_l2_d1",
        description: "γ vs N(1, 1): the tight L² case, bound 1",
        toml: r#"
experiment = "stability_l2"
seed = 1
n = 10000
mu = { family = "standard_gaussian", dim = 1 }
nu = { family = "gaussian", mean = [1.0], cov = 1.0 }
"#,
    },
    Preset {
        name: "shift_l2_d3",
        description: "γ vs N(m, I) in d = 3 with |m| = 1",
        toml: r#"
experiment = "stability_l2"
seed = 1
n = 10000
mu = { family = "standard_gaussian", dim = 3 }
nu = { family = "gaussian", mean = [0.6, 0.0, 0.8], cov = 1.0 }
"#,
    },
    Preset {
        name: "scale_l2",
        description: "γ vs N(0, 4): strict inequality, slack about 2/3",
        toml: r#"
experiment = "stability_l2"
seed = 1
n = 100000
mu = { family = "standard_gaussian", dim = 1 }
nu = { family = "gaussian", mean = [0.0], cov = 4.0 }
"#,
    },
    Preset {
        name: "mixture_l2",
        description: "symmetric mixtures ±0.5 vs ±0.6, perturbed profile from the tilt",
        toml: r#"
experiment = "stability_l2"
seed = 1
n = 10000
mu = { family = "gaussian_mixture", means = [[-0.5], [0.5]], weights = [0.5, 0.5], cov = 1.0 }
nu = { family = "gaussian_mixture", means = [[-0.6], [0.6]], weights = [0.5, 0.5], cov = 1.0 }
"#,
    },
    Preset {
        name: "shift_linf",
        description: "γ vs N(1, 1): the tight L^∞ case, bound 1",
        toml: r#"
experiment = "stability_linf"
seed = 1
n = 10000
mu = { family = "standard_gaussian", dim = 1 }
nu = { family = "gaussian", mean = [1.0], cov = 1.0 }
"#,
    },
    Preset {
        name: "mixture_linf",
        description: "symmetric mixtures ±0.5 vs ±0.6 in L^∞",
        toml: r#"
experiment = "stability_linf"
seed = 1
n = 10000
mu = { family = "gaussian_mixture", means = [[-0.5], [0.5]], weights = [0.5, 0.5], cov = 1.0 }
nu = { family = "gaussian_mixture", means = [[-0.6], [0.6]], weights = [0.5, 0.5], cov = 1.0 }
"#,
    },
    Preset {
        name: "shift_decay",
        description: "Fisher decay for γ vs N(1, 1); saturates the envelope",
        toml: r#"
experiment = "fi_decay"
seed = 1
n = 2000
mu = { family = "standard_gaussian", dim = 1 }
nu = { family = "gaussian", mean = [1.0], cov = 1.0 }
profile = { kind = "slc", alpha = 1.0 }

[decay]
times = [0.0, 0.3, 0.6, 0.9, 1.2, 1.5, 1.8, 2.1, 2.4, 2.7]
"#,
    },
    Preset {
        name: "mixture_decay",
        description: "Fisher decay for mixtures ±2 vs ±2.1 under the perturbed envelope",
        toml: r#"
experiment = "fi_decay"
seed = 1
n = 10000
mu = { family = "gaussian_mixture", means = [[-2.0], [2.0]], weights = [0.5, 0.5], cov = 1.0 }
nu = { family = "gaussian_mixture", means = [[-2.1], [2.1]], weights = [0.5, 0.5], cov = 1.0 }
"#,
    },
    Preset {
        name: "theta_gaussian",
        description: "θ check on γ with the slc profile α = 1",
        toml: r#"
experiment = "theta_check"
seed = 1
mu = { family = "standard_gaussian", dim = 2 }
profile = { kind = "slc", alpha = 1.0 }
"#,
    },
    Preset {
        name: "theta_mixture",
        description: "θ check on a three-component mixture in d = 2",
        toml: r#"
experiment = "theta_check"
seed = 1

[mu]
family = "gaussian_mixture"
means = [[-1.0, 0.5], [1.2, 0.0], [0.0, -1.5]]
weights = [0.3, 0.3, 0.4]
cov = [[0.8, 0.2], [0.2, 1.1]]
"#,
    },
    Preset {
        name: "constants",
        description: "Λ_∞, η_∞, λ_s and L̂ across the default parameter grid",
        toml: r#"
experiment = "constants_table"
"#,
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

pub fn load(name: &str) -> Result<ExperimentConfig> {
    let p = find(name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::config("preset", format!("unknown preset `{name}`; available: {}", names.join(", ")))
    })?;
    ExperimentConfig::parse(p.toml, ConfigFormat::Toml)
}
