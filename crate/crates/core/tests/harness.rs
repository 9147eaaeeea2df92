use kimflow_core::fisher;
use kimflow_core::flow::InitMode;
use kimflow_core::harness::{self, presets, ConfigFormat, Experiment, ExperimentConfig, Report};
use kimflow_core::{Error, SamplerSeed, TargetMeasure};
use nalgebra::{DMatrix, DVector};

fn preset(name: &str, n: usize) -> ExperimentConfig {
    let mut cfg = presets::load(name).unwrap();
    cfg.n = n;
    cfg
}

fn stability(cfg: &ExperimentConfig) -> harness::StabilityReport {
    match harness::run(cfg).unwrap() {
        Report::Stability(r) => r,
        other => panic!("unexpected {}", other.experiment()),
    }
}

#[test]
fn every_preset_runs_and_passes() {
    for p in presets::PRESETS {
        let mut cfg = presets::load(p.name).unwrap();
        cfg.n = cfg.n.min(2000);
        let report = harness::run(&cfg).unwrap_or_else(|e| panic!("{}: {e}", p.name));
        assert!(report.passed(), "{} failed", p.name);
        assert_eq!(Some(report.experiment()), cfg.experiment);
    }
}

#[test]
fn reports_round_trip_through_json() {
    for name in ["mixture_linf", "shift_decay", "theta_mixture", "constants"] {
        let report = harness::run(&preset(name, 500)).unwrap();
        let text = report.to_json().unwrap();
        let back = Report::from_json(&text).unwrap();
        assert_eq!(back, report, "{name}");
        assert_eq!(back.to_json().unwrap(), text);
    }
}

#[test]
fn csv_headers_are_stable() {
    let header = |name: &str| {
        let bytes = harness::run(&preset(name, 300)).unwrap().to_csv().unwrap();
        String::from_utf8(bytes).unwrap().lines().next().unwrap().to_owned()
    };
    assert_eq!(header("shift_l2_d1"), "metric,estimate,std_error,bound,slack_ratio,pass");
    assert_eq!(header("shift_decay"), "t,estimate,std_error,envelope");
    assert_eq!(header("theta_gaussian"), "t,theta,max_lambda,max_violation");
    assert_eq!(
        header("constants"),
        "family,alpha,lipschitz,g0,alpha_v,lipschitz_v,radius_v,lhat,lambda_t,lambda_limit,\
         lambda_inf,eta_t,eta_inf,lsi_time,lsi,heuristic_exponent,ln_lambda_inf"
    );
}

#[test]
fn write_is_atomic_and_leaves_no_temporaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("theta_gaussian", 100);
    let report = harness::run(&cfg).unwrap();
    let (json, csv) = report.write(dir.path(), &cfg.stem()).unwrap();
    // overwrite in place
    report.write(dir.path(), &cfg.stem()).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["theta_check.csv", "theta_check.json"]);
    assert!(json.exists() && csv.exists());
}

#[test]
fn linf_is_refused_for_the_scale_pair() {
    let mut cfg = preset("scale_l2", 200);
    assert!(cfg.clone().with_experiment(Experiment::StabilityLinf).is_err());
    cfg.experiment = Some(Experiment::StabilityLinf);
    let err = harness::run(&cfg).unwrap_err();
    assert!(matches!(err, Error::Domain(_)), "{err}");
    assert!(err.to_string().contains("unbounded"));
}

#[test]
fn sup_fisher_estimate_grows_with_n_for_the_scale_pair() {
    let mu = TargetMeasure::standard_gaussian(1);
    let nu = TargetMeasure::gaussian(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 4.0)).unwrap();
    assert!(!fisher::score_difference_bounded(&nu, &mu));
    let seed = SamplerSeed::new(3, 0);
    // no refinement: the raw sample maximum is what grows without bound
    let small = fisher::fi_inf(&nu, &mu, 1_000, 0, seed).unwrap().estimate;
    let large = fisher::fi_inf(&nu, &mu, 100_000, 0, seed).unwrap().estimate;
    assert!(large > small, "n=1e5 gives {large}, n=1e3 gives {small}");
}

/// With `X_0 ∼ q_T^μ`, `Y_0 ∼ q_T^ν` the flow endpoints are exactly `μ`- and
/// `ν`-distributed, so their coupling cost can't undercut `W₂`. (From a shared
/// `γ` draw the horizon-`T` maps miss the targets by `O(e^{−T})`.)
#[test]
fn coupling_distance_dominates_w2() {
    for name in ["shift_l2_d3", "scale_l2"] {
        let mut cfg = preset(name, 4000);
        cfg.flow.init_mode = InitMode::ExactQT;
        let r = stability(&cfg);
        let w2 = r.w2_gaussian.expect("Gaussian pair");
        let l2 = r.empirical.l2;
        assert!(l2 >= w2 - 3.0 * r.empirical.l2_std_error - 1e-9, "{name}: l2 {l2} < W₂ {w2}");
        // and the sup over samples dominates the root mean square
        assert!(r.empirical.linf >= l2);
    }
}

#[test]
fn linf_report_uses_eta_and_sup_fisher() {
    let r = stability(&preset("mixture_linf", 1000));
    assert_eq!(r.constant.name, "eta_inf");
    let fi_inf = r.fisher.fi_inf.unwrap();
    assert!(fi_inf >= r.fisher.fi - 3.0 * r.fisher.fi_std_error);
    assert!((r.bound - r.constant.closed_form * fi_inf.sqrt()).abs() <= 1e-12 * r.bound);
    assert_eq!(r.statistic, r.empirical.linf);
}

#[test]
fn same_seed_same_bytes_other_seed_different() {
    let run = |seed: u64| {
        let mut cfg = preset("mixture_l2", 1000);
        cfg.seed = seed;
        harness::run(&cfg).unwrap().to_json().unwrap()
    };
    let a = run(5);
    assert_eq!(a, run(5));
    assert_ne!(a, run(6));
}

#[test]
fn config_errors_name_the_offending_field() {
    let bad = r#"
experiment = "stability_l2"
mu = { family = "standard_gaussian", dim = 1 }
nu = { family = "gaussian", mean = [1.0], cov = 1.0 }
[flow]
stepz = 10
"#;
    let err = ExperimentConfig::parse(bad, ConfigFormat::Toml).unwrap_err();
    match err {
        Error::Config { path, .. } => assert!(path.starts_with("flow"), "{path}"),
        other => panic!("unexpected {other}"),
    }

    let mismatch = r#"
experiment = "stability_l2"
mu = { family = "standard_gaussian", dim = 2 }
nu = { family = "gaussian", mean = [1.0], cov = 1.0 }
"#;
    let cfg = ExperimentConfig::parse(mismatch, ConfigFormat::Toml).unwrap();
    assert!(harness::run(&cfg).is_err());

    let no_nu = r#"
experiment = "fi_decay"
mu = { family = "standard_gaussian", dim = 1 }
"#;
    let cfg = ExperimentConfig::parse(no_nu, ConfigFormat::Toml).unwrap();
    assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
}

#[test]
fn toml_and_json_configs_hash_alike() {
    let toml_cfg = presets::load("mixture_l2").unwrap();
    let json = serde_json::to_string(&toml_cfg).unwrap();
    let json_cfg = ExperimentConfig::parse(&json, ConfigFormat::Json).unwrap();
    assert_eq!(toml_cfg, json_cfg);
    assert_eq!(toml_cfg.hash(), json_cfg.hash());
    let mut other = toml_cfg.clone();
    other.seed += 1;
    assert_ne!(other.hash(), toml_cfg.hash());
}
