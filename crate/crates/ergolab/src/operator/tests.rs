use super::*;
use crate::env::{generate, Model, MultiplicityLaw, RateLaw};
use crate::geom::Norm;
use crate::refpde::quad::gauss_laguerre;

/// Solver tolerance used by the closed-form comparisons.
const TIGHT_TOL: f64 = 1e-10;
/// Tolerance for the semigroup/resolvent property checks.
const PROP_TOL: f64 = 1e-9;
/// Agreement demanded from the Laplace-transform quadrature oracle.
const LAPLACE_TOL: f64 = 1e-6;

/// Two-site ring: constant conductance 1, unit multiplicities. Both wrap
/// images of the single neighbor contribute, so the effective generator is
/// [[-2, 2], [2, -2]].
fn two_site_chain() -> crate::env::Environment {
    let model = Model::ZdNearestNeighbor {
        law: RateLaw::Constant { value: 1.0 },
        multiplicity: MultiplicityLaw::One,
    };
    generate(&model, 1, 2, 7, Norm::Two).expect("two-site chain generates")
}

fn random_instance(d: usize, side: i64, seed: u64) -> crate::env::Environment {
    let model = Model::ZdNearestNeighbor {
        law: RateLaw::Uniform { lo: 0.5, hi: 2.5 },
        multiplicity: MultiplicityLaw::TwoPointFair,
    };
    generate(&model, d, side, seed, Norm::Two).expect("random instance generates")
}

fn unit_rate_chain(side: i64, seed: u64) -> crate::env::Environment {
    let model = Model::ZdNearestNeighbor {
        law: RateLaw::Constant { value: 1.0 },
        multiplicity: MultiplicityLaw::One,
    };
    generate(&model, 1, side, seed, Norm::Two).expect("unit-rate chain generates")
}

fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut stream = Stream::keyed(&[seed, 0x7665_6374]);
    (0..n).map(|_| stream.unit()).collect()
}

/// Summed jump rate from `x` to `y` (parallel wrap edges accumulate).
fn total_rate(gen: &SparseGenerator, x: usize, y: usize) -> f64 {
    gen.row(x).filter(|&(c, _)| c == y).map(|(_, r)| r).sum()
}

#[test]
fn hand_assembled_two_site_chain_matches_the_generator() {
    let env = two_site_chain();
    let gen = build_generator(&env, 1.0).unwrap();
    assert_eq!(gen.state_count(), 2);
    assert_eq!(gen.dim(), 1);
    assert_eq!(gen.masses(), &[1.0, 1.0]);
    assert_eq!(total_rate(&gen, 0, 1), 2.0);
    assert_eq!(total_rate(&gen, 1, 0), 2.0);
    assert_eq!(gen.diagonal(0), -2.0);
    assert_eq!(gen.diagonal(1), -2.0);
    assert_eq!(gen.max_exit_rate(), 2.0);
}

#[test]
fn constants_lie_in_the_kernel_exactly() {
    let env = random_instance(2, 6, 11);
    let gen = build_generator(&env, 0.5).unwrap();
    let f = vec![3.25; gen.state_count()];
    for (x, v) in gen.apply(&f).iter().enumerate() {
        assert_eq!(*v, 0.0, "kernel defect at state {x}");
    }
}

#[test]
fn halving_epsilon_quadruples_every_entry() {
    let env = random_instance(2, 6, 13);
    let coarse = build_generator(&env, 0.25).unwrap();
    let fine = build_generator(&env, 0.125).unwrap();
    assert_eq!(coarse.rates.len(), fine.rates.len());
    for (c, f) in coarse.rates.iter().zip(&fine.rates) {
        assert_eq!(*f, 4.0 * *c, "rate scaling must be the exact factor 4");
    }
    for (c, f) in coarse.masses.iter().zip(&fine.masses) {
        assert_eq!(*f, *c / 4.0, "mass scaling must be the exact factor 1/4");
    }
}

#[test]
fn row_sums_vanish_and_detailed_balance_is_bitwise() {
    let env = random_instance(2, 6, 17);
    // A deliberately non-dyadic scale: exactness must not depend on it.
    let gen = build_generator(&env, 0.3).unwrap();
    for x in 0..gen.state_count() {
        let mut sum = 0.0;
        for (_, r) in gen.row(x) {
            assert!(r >= 0.0, "negative off-diagonal at row {x}");
            sum += r;
        }
        assert_eq!(sum + gen.diagonal(x), 0.0, "row {x} sum must vanish exactly");
    }
    for x in 0..gen.state_count() {
        for (y, rate_xy) in gen.row(x) {
            let back: Vec<f64> = gen
                .row(y)
                .filter(|&(c, _)| c == x)
                .map(|(_, r)| r)
                .collect();
            assert_eq!(back.len(), 1, "expected a single reverse entry");
            assert_eq!(
                gen.mass(x) * rate_xy,
                gen.mass(y) * back[0],
                "detailed balance must hold bitwise on edge ({x}, {y})"
            );
        }
    }
}

#[test]
fn isolated_axis_rates_reject_generator_assembly() {
    let model = Model::ZdAxes {
        rates: vec![1.0, 0.0],
    };
    let env = generate(&model, 2, 6, 3, Norm::Two).expect("stacked chains generate");
    assert!(!env.connected);
    assert!(build_generator(&env, 0.5).is_err());
}

#[test]
fn resolvent_returns_constants_scaled_by_the_shift() {
    let env = random_instance(2, 5, 19);
    let gen = build_generator(&env, 0.5).unwrap();
    let f = vec![3.0; gen.state_count()];
    let sol = resolvent(&gen, 2.0, &f, TIGHT_TOL).unwrap();
    assert!(sol.iterations >= 1);
    assert!(sol.residual <= TIGHT_TOL * gen.mu_norm(&f));
    for u in &sol.values {
        assert!((u - 1.5).abs() < 1e-8, "constant resolvent value {u}");
    }
}

#[test]
fn two_site_resolvent_matches_the_hand_inverse() {
    // (λ - L) = [[3.5, -2], [-2, 3.5]] at λ = 1.5; det = 8.25.
    let env = two_site_chain();
    let gen = build_generator(&env, 1.0).unwrap();
    let sol = resolvent(&gen, 1.5, &[1.0, 0.0], TIGHT_TOL).unwrap();
    assert!((sol.values[0] - 3.5 / 8.25).abs() < 1e-8);
    assert!((sol.values[1] - 2.0 / 8.25).abs() < 1e-8);
}

#[test]
fn resolvent_agrees_with_the_laplace_transform_quadrature() {
    // R_λ f = ∫_0^∞ e^{-λs} P_s f ds; substituting s = x/λ turns the right
    // side into a Gauss-Laguerre integral (1/λ) Σ_i w_i P_{x_i/λ} f.
    let env = unit_rate_chain(16, 29);
    let gen = build_generator(&env, 1.0).unwrap();
    let n = gen.state_count();
    let lambda = 2.0;
    let f: Vec<f64> = (0..n)
        .map(|x| (2.0 * std::f64::consts::PI * gen.position(x)[0] / 16.0).sin())
        .collect();
    let direct = resolvent(&gen, lambda, &f, TIGHT_TOL).unwrap();

    let rule = gauss_laguerre(64).unwrap();
    let mut quad = vec![0.0; n];
    for (&node, &weight) in rule.nodes.iter().zip(&rule.weights) {
        let pt = semigroup(&gen, node / lambda, &f, 1e-12).unwrap();
        for (q, v) in quad.iter_mut().zip(&pt) {
            *q += weight * v;
        }
    }
    for q in &mut quad {
        *q /= lambda;
    }

    let worst = direct
        .values
        .iter()
        .zip(&quad)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        worst < LAPLACE_TOL,
        "resolvent vs Laplace quadrature disagree by {worst}"
    );
}

#[test]
fn semigroup_at_time_zero_is_the_identity() {
    let env = random_instance(2, 5, 23);
    let gen = build_generator(&env, 0.5).unwrap();
    let f = random_vector(gen.state_count(), 23);
    assert_eq!(semigroup(&gen, 0.0, &f, PROP_TOL).unwrap(), f);
}

#[test]
fn semigroup_conserves_constants_exactly() {
    let env = random_instance(2, 5, 23);
    let gen = build_generator(&env, 0.5).unwrap();
    let f = vec![2.5; gen.state_count()];
    for v in semigroup(&gen, 0.7, &f, PROP_TOL).unwrap() {
        assert_eq!(v, 2.5, "constants must pass through bit-identically");
    }
}

#[test]
fn two_site_semigroup_matches_the_matrix_exponential() {
    // Relaxation rate = sum of the two off-diagonal entries = 4:
    // P_t (1, 0) = (1/2 + e^{-4t}/2, 1/2 - e^{-4t}/2).
    let env = two_site_chain();
    let gen = build_generator(&env, 1.0).unwrap();
    let t = 0.3;
    let u = semigroup(&gen, t, &[1.0, 0.0], 1e-12).unwrap();
    let decay = 0.5 * (-4.0 * t).exp();
    assert!((u[0] - (0.5 + decay)).abs() < 1e-10);
    assert!((u[1] - (0.5 - decay)).abs() < 1e-10);
}

#[test]
fn semigroup_properties_hold_on_a_random_instance() {
    let env = random_instance(2, 5, 31);
    let gen = build_generator(&env, 0.5).unwrap();
    let n = gen.state_count();
    let f = random_vector(n, 31);
    let g = random_vector(n, 37);
    let (t, s) = (0.13, 0.21);

    let pt_f = semigroup(&gen, t, &f, PROP_TOL).unwrap();
    let composed = semigroup(&gen, s, &pt_f, PROP_TOL).unwrap();
    let joint = semigroup(&gen, t + s, &f, PROP_TOL).unwrap();
    let diff: Vec<f64> = composed.iter().zip(&joint).map(|(a, b)| a - b).collect();
    assert!(
        gen.mu_norm(&diff) <= 10.0 * PROP_TOL * gen.mu_norm(&f),
        "semigroup property defect {}",
        gen.mu_norm(&diff)
    );

    let pt_g = semigroup(&gen, t, &g, PROP_TOL).unwrap();
    let asym = (gen.mu_dot(&pt_f, &g) - gen.mu_dot(&f, &pt_g)).abs();
    assert!(
        asym <= 10.0 * PROP_TOL * gen.mu_norm(&f) * gen.mu_norm(&g),
        "self-adjointness defect {asym}"
    );

    assert!(gen.mu_norm(&pt_f) <= gen.mu_norm(&f) * (1.0 + 1e-12), "contraction fails");

    let (lo, hi) = f.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        (a.min(v), b.max(v))
    });
    let slack = 1e-12 * (hi - lo).abs().max(1.0);
    for &v in &pt_f {
        assert!(v >= lo - slack && v <= hi + slack, "range violated: {v} vs [{lo}, {hi}]");
    }

    // Weighted total mass is conserved (μ is stationary).
    let ones = vec![1.0; n];
    let drift = (gen.mu_dot(&pt_f, &ones) - gen.mu_dot(&f, &ones)).abs();
    assert!(drift <= 10.0 * PROP_TOL * gen.mu_norm(&f) * gen.mu_norm(&ones));
}

#[test]
fn resolvent_identity_and_contraction_hold() {
    let env = random_instance(2, 5, 41);
    let gen = build_generator(&env, 0.5).unwrap();
    let n = gen.state_count();
    let f = random_vector(n, 41);
    let mut stream = Stream::keyed(&[41, 0x6c61_6d62]);
    for _ in 0..3 {
        let lambda = stream.uniform(0.5, 4.0);
        let nu = stream.uniform(0.5, 4.0);
        let r_l = resolvent(&gen, lambda, &f, TIGHT_TOL).unwrap().values;
        let r_n = resolvent(&gen, nu, &f, TIGHT_TOL).unwrap().values;
        let r_ln = resolvent(&gen, lambda, &r_n, TIGHT_TOL).unwrap().values;
        let defect: Vec<f64> = (0..n)
            .map(|i| r_l[i] - r_n[i] - (nu - lambda) * r_ln[i])
            .collect();
        assert!(
            gen.mu_norm(&defect) <= 1e-6 * gen.mu_norm(&f),
            "resolvent identity defect {} at ({lambda}, {nu})",
            gen.mu_norm(&defect)
        );
        let scaled: Vec<f64> = r_l.iter().map(|&u| lambda * u).collect();
        assert!(gen.mu_norm(&scaled) <= gen.mu_norm(&f) * (1.0 + 1e-9), "λR_λ expands");
        let floor = -1e-7 * f.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        for &u in &r_l {
            assert!(u >= floor, "resolvent positivity violated: {u}");
        }
    }
}

#[test]
fn paths_start_where_asked_and_stop_at_zero_horizon() {
    let env = random_instance(2, 5, 43);
    let frozen = simulate_path(&env, 0.5, 3, 0.0, 43).unwrap();
    assert_eq!(frozen.times, vec![0.0]);
    assert_eq!(frozen.atoms, vec![3]);
    assert_eq!(frozen.jump_count(), 0);

    let path = simulate_path(&env, 0.5, 3, 2.0, 43).unwrap();
    assert!(path.jump_count() > 0, "a sped-up walk should move in 2 time units");
    assert_eq!(path.final_atom(), *path.atoms.last().unwrap());
    for w in path.times.windows(2) {
        assert!(w[0] < w[1], "jump times must increase strictly");
    }
    for w in path.atoms.windows(2) {
        assert!(
            env.rate(w[0], w[1]) > 0.0,
            "jump {} -> {} has no rate",
            w[0],
            w[1]
        );
    }
    let replay = simulate_path(&env, 0.5, 3, 2.0, 43).unwrap();
    assert_eq!(replay.times, path.times, "same seed must replay the same path");
    assert_eq!(replay.atoms, path.atoms);
}

#[test]
fn occupancy_agrees_with_the_semigroup_law() {
    let env = two_site_chain();
    let gen = build_generator(&env, 1.0).unwrap();
    let t = 0.35;
    let n_paths = 100_000u64;
    let exact = semigroup(&gen, t, &[0.0, 1.0], 1e-12).unwrap()[0];
    let mc = path_occupancy(&env, 1.0, 0, t, n_paths, 0x0cc0).unwrap();
    let stderr = (exact * (1.0 - exact) / n_paths as f64).sqrt();
    let gap = (mc.probabilities[1] - exact).abs();
    assert!(
        gap <= 3.0 * stderr,
        "occupancy {} vs semigroup {exact} (3σ = {})",
        mc.probabilities[1],
        3.0 * stderr
    );
    assert!((mc.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn jump_counts_follow_the_sped_up_exit_rate() {
    // Exit rate 2 everywhere, ε = 1/2: jumps arrive at rate 8.
    let env = unit_rate_chain(8, 47);
    let est = msd_estimate(&env, 0.5, 1.0, 20_000, 0x6a6d70).unwrap();
    let expected = 8.0;
    assert!(
        (est.mean_jumps - expected).abs() <= 3.0 * est.jumps_stderr,
        "mean jumps {} vs {expected} (3σ = {})",
        est.mean_jumps,
        3.0 * est.jumps_stderr
    );
}

#[test]
fn short_horizon_msd_matches_the_first_jump_expansion() {
    let model = Model::ZdNearestNeighbor {
        law: RateLaw::Uniform { lo: 1.0, hi: 2.0 },
        multiplicity: MultiplicityLaw::One,
    };
    let env = generate(&model, 1, 16, 53, Norm::Two).unwrap();
    let target: f64 =
        (0..env.atom_count()).map(|x| env.lambda_k(x, 2)).sum::<f64>() / env.atom_count() as f64;
    let est = msd_estimate(&env, 1.0, 0.01, 100_000, 0x736a6d).unwrap();
    assert!(
        (est.msd_over_t - target).abs() <= 3.0 * est.stderr,
        "short-horizon msd/t {} vs first-jump value {target} (3σ = {})",
        est.msd_over_t,
        3.0 * est.stderr
    );
}

#[test]
fn one_dimensional_unit_rate_walk_diffuses_at_rate_two() {
    let env = unit_rate_chain(64, 59);
    let est = msd_estimate(&env, 0.125, 0.5, 4_000, 0x6d7364).unwrap();
    assert!(
        (est.msd_over_t - 2.0).abs() <= 3.0 * est.stderr,
        "msd/t {} vs 2 (3σ = {})",
        est.msd_over_t,
        3.0 * est.stderr
    );
    assert_eq!(est.checkpoints.len(), 4);
    for (tc, value) in &est.checkpoints {
        assert!(*tc > 0.0 && value.is_finite());
    }
}

#[test]
fn long_horizons_split_or_report_the_cap() {
    let env = unit_rate_chain(8, 61);
    let gen = build_generator(&env, 0.03125).unwrap();
    let f = random_vector(gen.state_count(), 61);
    // Λ = 2·ε^{-2} = 2048; t = 1 needs a few halvings and must succeed.
    let u = semigroup(&gen, 1.0, &f, PROP_TOL).unwrap();
    let mean = gen.mu_dot(&f, &vec![1.0; f.len()]) / gen.mu_dot(&vec![1.0; f.len()], &vec![1.0; f.len()]);
    for &v in &u {
        assert!((v - mean).abs() < 1e-6, "long-run value {v} vs stationary mean {mean}");
    }
    // Beyond 20 halvings the cap is reported instead.
    let err = semigroup(&gen, 2.0e5, &f, PROP_TOL).unwrap_err();
    assert!(err.to_string().contains("halving"), "unexpected error: {err}");
}
