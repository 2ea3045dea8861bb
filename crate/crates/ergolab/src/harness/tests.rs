use super::*;
use crate::env::{Model, MultiplicityLaw, RateLaw};

const BASE_CONFIG: &str = r#"
[seeds]
master = 7
replicas = 3

[experiment]
kind = "measure-limit"
d = 2
side = 64
declared_beta = 8.0
eps_grid = [0.0625]
ells = [1.0]
tail_beta = 8.0

[experiment.model]
kind = "poisson-pp"
intensity = 2.0
mark_lo = 1.0
mark_hi = 1.0

[experiment.phi]
kind = "gaussian"
sigma = 0.5
"#;

#[test]
fn config_round_trips_and_hash_ignores_formatting() {
    let a = ExperimentConfig::from_toml(BASE_CONFIG).unwrap();
    // same content, different whitespace, key order, and float spelling
    let shuffled = BASE_CONFIG
        .replace("replicas = 3", "replicas   =   3")
        .replace("8.0", "8.000");
    let b = ExperimentConfig::from_toml(&shuffled).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());

    let c = ExperimentConfig::from_toml(&BASE_CONFIG.replace("master = 7", "master = 8")).unwrap();
    assert_ne!(a.hash().unwrap(), c.hash().unwrap());
}

#[test]
fn validation_errors_name_the_offending_key() {
    let err = ExperimentConfig::from_toml(&BASE_CONFIG.replace("[0.0625]", "[]"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("experiment.eps_grid"), "got: {err}");

    let err = ExperimentConfig::from_toml(&BASE_CONFIG.replace("side = 64", "side = 1"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("experiment.side"), "got: {err}");

    // 1/eps beyond side/4 breaks scale separation
    let err = ExperimentConfig::from_toml(&BASE_CONFIG.replace("[0.0625]", "[0.015625]"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("side/4"), "got: {err}");
}

#[test]
fn shallow_test_function_decay_is_rejected() {
    // in d = 2 a declared exponent of 2d+1 = 5 falls short of the 2d+2 line
    let err = ExperimentConfig::from_toml(
        &BASE_CONFIG.replace("declared_beta = 8.0", "declared_beta = 5.0"),
    )
    .unwrap_err()
    .to_string();
    assert!(err.contains("experiment.declared_beta"), "got: {err}");
    assert!(err.contains("2d+2"), "got: {err}");

    // a declared moment of order > 1 relaxes the line to d
    let relaxed = BASE_CONFIG.replace(
        "declared_beta = 8.0",
        "declared_beta = 5.0\nmoment_alpha = 1.5",
    );
    ExperimentConfig::from_toml(&relaxed).unwrap();

    // ... but not below d
    let err = ExperimentConfig::from_toml(&relaxed.replace("= 5.0", "= 1.5"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("exceed d"), "got: {err}");
}

#[test]
fn envelope_mismatch_with_phi_is_rejected() {
    // a power bump decaying like (1+r)^-7 cannot certify the declared exponent 8
    let lazy_phi = BASE_CONFIG.replace(
        "kind = \"gaussian\"\nsigma = 0.5",
        "kind = \"power-bump\"\nc = 1.0\nbeta = 7.0",
    );
    let err = ExperimentConfig::from_toml(&lazy_phi).unwrap_err().to_string();
    assert!(err.contains("experiment.phi"), "got: {err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let err = ExperimentConfig::from_toml(&BASE_CONFIG.replace("side = 64", "side = 64\nbogus = 1"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("bogus"), "got: {err}");
}

#[test]
fn sep_hydro_requires_the_unit_torus() {
    let text = r#"
[seeds]
master = 3

[experiment]
kind = "sep-hydro"
d = 1
side = 256
epsilon = 0.00390625
t_grid = [0.02]
corrector_tol = 1e-9

[experiment.model]
kind = "zd-nearest-neighbor"
multiplicity = "one"

[experiment.model.law]
kind = "constant"
value = 1.0

[experiment.rho0]
kind = "constant"
value = 0.5

[[experiment.phis]]
kind = "one"
"#;
    // 256 * 1/256 = 1: accepted
    ExperimentConfig::from_toml(text).unwrap();
    // 256 * 1/128 != 1: rejected with the exact-product message
    let err = ExperimentConfig::from_toml(&text.replace("0.00390625", "0.0078125"))
        .unwrap_err()
        .to_string();
    assert!(err.contains("epsilon * side"), "got: {err}");
}

#[test]
fn gaussian_envelope_certificate_dominates() {
    let phi = TestFunction::Gaussian { sigma: 1.3 };
    let cert = phi.envelope(8.0).unwrap();
    for i in 0..=4000 {
        let r = 40.0 * f64::from(i) / 4000.0;
        let bound = cert.c * (1.0 + r).powf(-cert.beta);
        assert!(phi.eval(&[r]) <= bound * (1.0 + 1e-12), "violated at r = {r}");
    }
    assert!(cert.support_radius.is_none());
}

#[test]
fn power_bump_envelope_is_definitional() {
    let phi = TestFunction::PowerBump { c: 2.5, beta: 6.0 };
    let cert = phi.envelope(6.0).unwrap();
    assert_eq!(cert.c, 2.5);
    // a steeper envelope than the bump's own decay is uncertifiable
    assert!(phi.envelope(8.0).is_err());
}

#[test]
fn sine_window_is_compact_with_zero_integral() {
    let phi = TestFunction::SineWindow { freq: 2, radius: 3.0 };
    let cert = phi.envelope(5.0).unwrap();
    assert_eq!(cert.support_radius, Some(3.0));
    assert_eq!(phi.eval(&[3.0, 0.0]), 0.0);
    assert_eq!(phi.eval(&[4.0, 1.0]), 0.0);
    assert!(phi.eval(&[0.3, 0.1]).abs() > 0.0);
    assert_eq!(phi.integral(2).unwrap(), 0.0);
}

#[test]
fn closed_form_integrals() {
    // ∫ e^{-|x|²/(2σ²)} over R² = 2πσ²
    let g = TestFunction::Gaussian { sigma: 0.7 };
    let expect = 2.0 * std::f64::consts::PI * 0.49;
    assert!((g.integral(2).unwrap() - expect).abs() < 1e-14);

    // ∫ (1+|x|)^{-8} over R² = 2π (1/6 - 1/7) = π/21
    let p = TestFunction::PowerBump { c: 1.0, beta: 8.0 };
    let expect = std::f64::consts::PI / 21.0;
    assert!((p.integral(2).unwrap() - expect).abs() < 1e-14);
    // and it refuses non-integrable exponents
    assert!(TestFunction::PowerBump { c: 1.0, beta: 2.0 }.integral(2).is_err());

    // 1d smoothed indicator: 2R + ∫ of two cos² shoulders = 2R + m
    let ind = TestFunction::IndicatorSmooth { radius: 1.5, margin: 0.8 };
    assert!((ind.integral(1).unwrap() - (2.0 * 1.5 + 0.8)).abs() < 1e-12);
}

#[test]
fn csv_cells_round_trip_floats_exactly() {
    let values = [
        0.1,
        1.0 / 3.0,
        -std::f64::consts::PI * 1e10,
        1e-17,
        f64::MIN_POSITIVE,
        123456789.123456789,
    ];
    let mut table = Table::new("probe", &["idx", "value"]);
    for (i, &v) in values.iter().enumerate() {
        table.push(vec![Cell::from(i), Cell::from(v)]);
    }
    let csv = table.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("idx,value"));
    for (line, &v) in lines.zip(&values) {
        let text = line.split(',').nth(1).unwrap();
        let parsed: f64 = text.parse().unwrap();
        assert_eq!(parsed.to_bits(), v.to_bits(), "lossy: {text}");
    }
}

#[test]
fn csv_masking_skips_only_named_columns() {
    let a = "eps,err2,runtime_s\n0.125,0.25,1.5\n0.0625,0.125,2.5\n";
    let b = "eps,err2,runtime_s\n0.125,0.25,99.0\n0.0625,0.125,0.001\n";
    assert!(csv_equal_masking(a, b, &["runtime_s"]));
    // a non-masked column difference is a real difference
    let c = "eps,err2,runtime_s\n0.125,0.26,1.5\n0.0625,0.125,2.5\n";
    assert!(!csv_equal_masking(a, c, &["runtime_s"]));
    // headers must agree exactly
    let d = "eps,err1,runtime_s\n0.125,0.25,1.5\n0.0625,0.125,2.5\n";
    assert!(!csv_equal_masking(a, d, &["runtime_s"]));
    // so must row counts
    let e = "eps,err2,runtime_s\n0.125,0.25,1.5\n";
    assert!(!csv_equal_masking(a, e, &["runtime_s"]));
}

#[test]
fn inline_toml_accepts_fragments_and_inline_tables() {
    let a: Probe = from_inline_toml("kind = \"gaussian\"\nwidth2 = 2.0").unwrap();
    let b: Probe = from_inline_toml("{ kind = \"gaussian\", width2 = 2.0 }").unwrap();
    assert_eq!(a, b);
    assert_eq!(a, Probe::Gaussian { width2: 2.0 });
    assert!(from_inline_toml::<Probe>("{ kind = \"gaussian\" ").is_err());
}

#[test]
fn covering_run_writes_deterministic_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        seeds: SeedSpec { master: 42, replicas: 1 },
        experiment: Experiment::CoveringTest { d: 2, instances: 25 },
    };
    let report = run(&config, dir.path()).unwrap();
    assert_eq!(report.kind, "covering-test");
    assert_eq!(report.passed, Some(true));
    let csv = std::fs::read_to_string(dir.path().join("covering.csv")).unwrap();
    assert!(csv.starts_with("index,b_size,chosen,difference_size_sum,ok,seed"));
    assert_eq!(csv.lines().count(), 26);
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains(&format!("{:016x}", report.config_hash)));

    // replaying the same config reproduces the bytes
    let dir2 = tempfile::tempdir().unwrap();
    run(&config, dir2.path()).unwrap();
    let csv2 = std::fs::read_to_string(dir2.path().join("covering.csv")).unwrap();
    assert_eq!(csv, csv2);
}

#[test]
fn gen_env_run_reports_mass_and_serializes() {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig {
        seeds: SeedSpec { master: 9, replicas: 1 },
        experiment: Experiment::GenEnv {
            model: Model::ZdNearestNeighbor {
                law: RateLaw::Uniform { lo: 1.0, hi: 2.0 },
                multiplicity: MultiplicityLaw::One,
            },
            d: 2,
            side: 8,
            norm: Norm::Two,
        },
    };
    let report = run(&config, dir.path()).unwrap();
    assert_eq!(report.passed, None);
    let text = std::fs::read_to_string(dir.path().join("environment.txt")).unwrap();
    let env = crate::env::io::from_text(&text).unwrap();
    assert_eq!(env.atom_count(), 64);
}

#[test]
fn median_and_stderr_helpers() {
    let mut odd = [5.0, 1.0, 3.0];
    assert_eq!(median(&mut odd), 3.0);
    let mut even = [4.0, 1.0, 3.0, 2.0];
    assert_eq!(median(&mut even), 2.5);

    let (m, s) = mean_stderr(&[1.0, 1.0, 1.0, 1.0]);
    assert_eq!(m, 1.0);
    assert_eq!(s, 0.0);
    let (m, s) = mean_stderr(&[0.0, 2.0]);
    assert_eq!(m, 1.0);
    assert!((s - 1.0).abs() < 1e-15);
}
