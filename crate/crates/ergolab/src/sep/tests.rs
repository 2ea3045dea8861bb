use super::*;
use crate::env::{MultiplicityLaw, RateLaw};
use crate::operator;
use crate::rng::Stream;

/// Two-sample KS acceptance threshold at the 5% level.
const KS_LEVEL_COEFF: f64 = 1.358;
/// Polling resolution for grid-discretized hitting times.
const HIT_GRID: f64 = 0.02;

fn unit_ring(side: i64) -> Environment {
    let model = Model::ZdNearestNeighbor {
        law: RateLaw::Constant { value: 1.0 },
        multiplicity: MultiplicityLaw::One,
    };
    generate(&model, 1, side, 11, Norm::Two).expect("unit ring generates")
}

fn random_ring(side: i64, seed: u64) -> Environment {
    let model = Model::ZdNearestNeighbor {
        law: RateLaw::Uniform { lo: 0.5, hi: 2.5 },
        multiplicity: MultiplicityLaw::One,
    };
    generate(&model, 1, side, seed, Norm::Two).expect("random ring generates")
}

#[test]
fn construction_rejects_heavy_atoms_and_bad_bits() {
    let heavy_model = Model::ZdNearestNeighbor {
        law: RateLaw::Constant { value: 1.0 },
        multiplicity: MultiplicityLaw::TwoPointFair,
    };
    let heavy = generate(&heavy_model, 1, 32, 3, Norm::Two).unwrap();
    // A {1,2}-valued multiplicity field contains a 2 somewhere on 32 sites.
    assert!(heavy.multiplicity.iter().any(|&n| n != 1.0));
    let err = ExclusionState::new(&heavy, vec![0; heavy.atom_count()]).unwrap_err();
    assert!(err.to_string().contains("multiplicit"), "got: {err}");

    let env = unit_ring(8);
    assert!(ExclusionState::new(&env, vec![0; 7]).is_err());
    assert!(ExclusionState::new(&env, vec![2; 8]).is_err());
    assert!(ExclusionState::new(&env, vec![1; 8]).is_ok());
}

#[test]
fn frozen_lattices_stay_frozen() {
    let env = random_ring(16, 5);
    for fill in [0u8, 1u8] {
        let mut state = ExclusionState::new(&env, vec![fill; 16]).unwrap();
        let mut stream = Stream::keyed(&[42, rng::tag::PATH]);
        sep_run(&mut state, 2.0, 0.5, &mut stream).unwrap();
        assert_eq!(state.time(), 2.0);
        assert_eq!(state.occupations(), &vec![fill; 16][..]);
    }
}

#[test]
fn particles_are_conserved_exactly() {
    let env = random_ring(40, 9);
    let mut init = Stream::keyed(&[17, rng::tag::OCCUPATION]);
    let eta0: Vec<u8> = (0..40).map(|_| u8::from(init.bernoulli(0.37))).collect();
    let count = eta0.iter().map(|&v| v as usize).sum::<usize>();
    let mut state = ExclusionState::new(&env, eta0).unwrap();
    let mut dynamics = Stream::keyed(&[17, rng::tag::PATH]);
    for t in [0.1, 0.5, 1.25, 4.0] {
        sep_run(&mut state, t, 0.25, &mut dynamics).unwrap();
        assert_eq!(state.particle_count(), count);
        assert!(state.occupations().iter().all(|&v| v <= 1));
    }
}

#[test]
fn replaying_the_stream_replays_the_trajectory() {
    let env = random_ring(24, 13);
    let eta0: Vec<u8> = (0..24).map(|x| u8::from(x % 3 == 0)).collect();
    let run = |key: u64| {
        let mut state = ExclusionState::new(&env, eta0.clone()).unwrap();
        let mut stream = Stream::keyed(&[key, rng::tag::PATH]);
        sep_run(&mut state, 3.0, 1.0, &mut stream).unwrap();
        state.occupations().to_vec()
    };
    assert_eq!(run(100), run(100));
    assert_ne!(run(100), run(101));
}

#[test]
fn single_particle_occupancy_matches_the_semigroup() {
    // One particle in SSEP is exactly the continuous-time random walk, so
    // its occupation law at a fixed time must match the operator module's
    // matrix exponential within Monte Carlo bands.
    let env = unit_ring(8);
    let start = 2usize;
    let t = 0.3;
    let n_runs = 100_000usize;

    let gen = operator::build_generator(&env, 1.0).unwrap();
    let mut indicator = vec![0.0; 8];
    indicator[start] = 1.0;
    let law = operator::semigroup(&gen, t, &indicator, 1e-10).unwrap();

    let mut counts = vec![0usize; 8];
    for k in 0..n_runs {
        let mut eta = vec![0u8; 8];
        eta[start] = 1;
        let mut state = ExclusionState::new(&env, eta).unwrap();
        let mut stream = Stream::keyed(&[0x5345_5050, k as u64, rng::tag::PATH]);
        sep_run(&mut state, t, 1.0, &mut stream).unwrap();
        let pos = state
            .occupations()
            .iter()
            .position(|&v| v == 1)
            .expect("the particle survives");
        counts[pos] += 1;
    }
    for y in 0..8 {
        let p_hat = counts[y] as f64 / n_runs as f64;
        let target = law[y];
        let band = 3.0 * (target * (1.0 - target) / n_runs as f64).sqrt();
        assert!(
            (p_hat - target).abs() <= band.max(1e-3),
            "occupancy at {y}: {p_hat} vs semigroup {target} (band {band})"
        );
    }
}

/// First grid time `k * HIT_GRID` at which a walk trajectory sits on the
/// target atom, or `None` within the horizon.
fn walk_grid_hit(path: &operator::Trajectory, target: usize, horizon: f64) -> Option<f64> {
    let mut k = 0u64;
    loop {
        let t = k as f64 * HIT_GRID;
        if t > horizon {
            return None;
        }
        // Atom occupied at time t: last jump not later than t.
        let idx = path.times.partition_point(|&s| s <= t) - 1;
        if path.atoms[idx] == target {
            return Some(t);
        }
        k += 1;
    }
}

/// First grid time at which the single stirring particle sits on the
/// target, advancing the same state window by window so the trajectory
/// law is untouched by the polling.
fn stirring_grid_hit(
    env: &Environment,
    start: usize,
    target: usize,
    horizon: f64,
    key: u64,
) -> Option<f64> {
    let mut eta = vec![0u8; env.atom_count()];
    eta[start] = 1;
    let mut state = ExclusionState::new(env, eta).unwrap();
    let mut stream = Stream::keyed(&[key, rng::tag::PATH]);
    let mut k = 0u64;
    loop {
        let t = k as f64 * HIT_GRID;
        if t > horizon {
            return None;
        }
        sep_run(&mut state, t, 1.0, &mut stream).unwrap();
        if state.occupations()[target] == 1 {
            return Some(t);
        }
        k += 1;
    }
}

#[test]
fn stirring_one_tagged_particle_reproduces_walk_hitting_times() {
    // With every other particle removed, stirring restricted to the tagged
    // particle is the plain random walk; compare hitting-time samples with
    // a two-sample Kolmogorov-Smirnov test at the 5% level. Both samples
    // are read on the same time grid so the discretization cancels.
    let env = unit_ring(8);
    let (start, target) = (0usize, 4usize);
    let horizon = 400.0;
    let n = 400usize;

    let mut stirring = Vec::with_capacity(n);
    for k in 0..n {
        let t = stirring_grid_hit(&env, start, target, horizon, 0x6b73_0001 + k as u64)
            .expect("stirring particle reaches the far pole");
        stirring.push(t);
    }
    let mut walks = Vec::with_capacity(n);
    for k in 0..n {
        let path =
            operator::simulate_path(&env, 1.0, start, horizon, 0x6b73_1001 + k as u64).unwrap();
        let t = walk_grid_hit(&path, target, horizon).expect("walk reaches the far pole");
        walks.push(t);
    }

    stirring.sort_by(f64::total_cmp);
    walks.sort_by(f64::total_cmp);
    let mut gap: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n || j < n {
        let next = match (stirring.get(i), walks.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => break,
        };
        while i < n && stirring[i] <= next {
            i += 1;
        }
        while j < n && walks[j] <= next {
            j += 1;
        }
        gap = gap.max((i as f64 / n as f64 - j as f64 / n as f64).abs());
    }
    let critical = KS_LEVEL_COEFF * (2.0 / n as f64).sqrt();
    assert!(
        gap <= critical,
        "KS statistic {gap} exceeds the 5% critical value {critical}"
    );
}

#[test]
fn monotone_coupling_preserves_domination() {
    // Shared stirring randomness exchanges the same pairs at the same
    // times in both runs, so eta <= eta' survives every event exactly.
    let env = random_ring(32, 21);
    for master in [1u64, 2, 3] {
        let mut init = Stream::keyed(&[master, rng::tag::OCCUPATION]);
        let lower: Vec<u8> = (0..32).map(|_| u8::from(init.bernoulli(0.3))).collect();
        let mut upper = lower.clone();
        for slot in upper.iter_mut() {
            if *slot == 0 && init.bernoulli(0.4) {
                *slot = 1;
            }
        }
        let mut lo_state = ExclusionState::new(&env, lower).unwrap();
        let mut hi_state = ExclusionState::new(&env, upper).unwrap();
        let mut lo_stream = Stream::keyed(&[master, rng::tag::PATH]);
        let mut hi_stream = Stream::keyed(&[master, rng::tag::PATH]);
        for t in [0.1, 0.3, 0.7, 1.5] {
            sep_run(&mut lo_state, t, 1.0, &mut lo_stream).unwrap();
            sep_run(&mut hi_state, t, 1.0, &mut hi_stream).unwrap();
            for (l, h) in lo_state.occupations().iter().zip(hi_state.occupations()) {
                assert!(l <= h, "domination broken at time {t}");
            }
        }
    }
}

#[test]
fn empirical_profiles_match_hand_sums() {
    let env = unit_ring(256);
    let eps = 1.0 / 256.0;

    let empty = ExclusionState::new(&env, vec![0; 256]).unwrap();
    assert_eq!(empirical_profile(&empty, eps, |_| 5.0), 0.0);

    let mut one = vec![0u8; 256];
    one[37] = 1;
    let single = ExclusionState::new(&env, one).unwrap();
    let phi = TorusTest::Cos { freq: 1 };
    let want = eps * phi.eval(&[eps * env.position(37)[0]]);
    assert_eq!(empirical_profile(&single, eps, |x| phi.eval(x)), want);

    let full = ExclusionState::new(&env, vec![1; 256]).unwrap();
    let sine = empirical_profile(&full, eps, |x| TorusTest::Sin { freq: 1 }.eval(x));
    assert!(sine.abs() <= 1e-3, "Riemann sum of a zero-mean mode: {sine}");
    let mass = empirical_profile(&full, eps, |x| TorusTest::One.eval(x));
    assert!((mass - 1.0).abs() <= 1e-12);
}

#[test]
fn bernoulli_occupations_are_reversible_in_time_average() {
    // Product Bernoulli measures are reversible for symmetric stirring, so
    // after burn-in every site's time-averaged occupation sits near the
    // initial density, while conservation pins the global average exactly.
    let env = unit_ring(16);
    let mut init = Stream::keyed(&[0x7265_7631, rng::tag::OCCUPATION]);
    let eta0: Vec<u8> = (0..16).map(|_| u8::from(init.bernoulli(0.5))).collect();
    let exact_density = eta0.iter().map(|&v| f64::from(v)).sum::<f64>() / 16.0;
    let mut state = ExclusionState::new(&env, eta0).unwrap();
    let mut dynamics = Stream::keyed(&[0x7265_7631, rng::tag::PATH]);

    sep_run(&mut state, 20.0, 1.0, &mut dynamics).unwrap();
    let snapshots = 200usize;
    let spacing = 10.0;
    let mut site_sums = vec![0.0f64; 16];
    for s in 0..snapshots {
        sep_run(&mut state, 20.0 + (s as f64 + 1.0) * spacing, 1.0, &mut dynamics).unwrap();
        for (sum, &bit) in site_sums.iter_mut().zip(state.occupations()) {
            *sum += f64::from(bit);
        }
    }
    let mut global = 0.0;
    for sum in &site_sums {
        let avg = sum / snapshots as f64;
        assert!(
            (avg - 0.5).abs() <= 0.15,
            "site time-average {avg} strays from the density"
        );
        global += avg;
    }
    assert!((global / 16.0 - exact_density).abs() <= 1e-12);
}

#[test]
fn hydro_inputs_are_validated() {
    let model = Model::ZdNearestNeighbor {
        law: RateLaw::Constant { value: 1.0 },
        multiplicity: MultiplicityLaw::One,
    };
    let profile = Profile::Constant { value: 0.4 };
    let phis = [TorusTest::One];

    let wrong_eps = hydro_check(
        &model, 1, 64, Norm::Two, &profile, &[0.1], &phis, 0.02, 4, 7, 1e-8,
    )
    .unwrap_err();
    assert!(wrong_eps.to_string().contains("unit torus"), "got: {wrong_eps}");

    let eps = 1.0 / 64.0;
    assert!(hydro_check(&model, 1, 64, Norm::Two, &profile, &[], &phis, eps, 4, 7, 1e-8).is_err());
    assert!(
        hydro_check(&model, 1, 64, Norm::Two, &profile, &[0.1], &phis, eps, 1, 7, 1e-8).is_err()
    );
    let overfull = Profile::SineWave {
        base: 0.9,
        amplitude: 0.2,
        freq: 1,
    };
    assert!(
        hydro_check(&model, 1, 64, Norm::Two, &overfull, &[0.1], &phis, eps, 4, 7, 1e-8).is_err()
    );
}

#[test]
fn constant_profiles_are_hydrodynamically_flat() {
    // Bernoulli(p) is stationary for SSEP: every pairing stays at its
    // initial expectation up to Monte Carlo noise, and the reference knows
    // the exact conserved values.
    let model = Model::ZdNearestNeighbor {
        law: RateLaw::Constant { value: 1.0 },
        multiplicity: MultiplicityLaw::One,
    };
    let profile = Profile::Constant { value: 0.3 };
    let phis = [
        TorusTest::One,
        TorusTest::Sin { freq: 1 },
        TorusTest::Cos { freq: 1 },
    ];
    let report = hydro_check(
        &model,
        1,
        64,
        Norm::Two,
        &profile,
        &[0.04, 0.1],
        &phis,
        1.0 / 64.0,
        8,
        0x5345_5031,
        1e-8,
    )
    .unwrap();
    assert_eq!(report.rows.len(), 6);
    assert!((report.intensity - 1.0).abs() <= 1e-12);
    for row in &report.rows {
        let expected = match row.phi {
            TorusTest::One => 0.3,
            _ => 0.0,
        };
        assert!(
            (row.reference - expected).abs() <= 1e-12,
            "reference for {} drifted to {}",
            row.phi.label(),
            row.reference
        );
        assert!(row.stderr > 0.0);
        assert!(
            row.gap <= 3.0 * row.stderr,
            "gap {} exceeds 3 x stderr {} for {} at t = {}",
            row.gap,
            row.stderr,
            row.phi.label(),
            row.t
        );
    }
}

#[test]
fn sine_modes_relax_toward_the_heat_solution() {
    // Small version of the full pipeline: a single sine perturbation decays
    // at the spectral rate of the effective diffusion (here exactly 1).
    let model = Model::ZdNearestNeighbor {
        law: RateLaw::Constant { value: 1.0 },
        multiplicity: MultiplicityLaw::One,
    };
    let profile = Profile::SineWave {
        base: 0.5,
        amplitude: 0.25,
        freq: 1,
    };
    let phis = [TorusTest::Sin { freq: 1 }, TorusTest::One];
    let t = 0.02;
    let report = hydro_check(
        &model,
        1,
        64,
        Norm::Two,
        &profile,
        &[t],
        &phis,
        1.0 / 64.0,
        10,
        0x5345_5032,
        1e-8,
    )
    .unwrap();
    assert!((report.diffusion[(0, 0)] - 1.0).abs() <= 1e-10);

    let damp = (-4.0 * std::f64::consts::PI * std::f64::consts::PI * t).exp();
    let sin_row = &report.rows[0];
    // The reference equals the closed-form single-mode decay paired with
    // sin: amplitude * damp * integral of sin^2 = amplitude * damp / 2.
    assert!(
        (sin_row.reference - 0.25 * damp * 0.5).abs() <= 1e-10,
        "reference {} vs closed form {}",
        sin_row.reference,
        0.25 * damp * 0.5
    );
    assert!(
        sin_row.gap <= 0.05,
        "sine pairing gap {} exceeds the pipeline budget",
        sin_row.gap
    );
    let mass_row = &report.rows[1];
    assert!((mass_row.reference - 0.5).abs() <= 1e-12);
    assert!(mass_row.gap <= 3.0 * mass_row.stderr + 1e-12);
}

#[test]
fn hydro_reports_are_deterministic() {
    let model = Model::ZdNearestNeighbor {
        law: RateLaw::Uniform { lo: 1.0, hi: 2.0 },
        multiplicity: MultiplicityLaw::One,
    };
    let profile = Profile::SineWave {
        base: 0.5,
        amplitude: 0.2,
        freq: 1,
    };
    let phis = [TorusTest::Sin { freq: 1 }];
    let run = || {
        hydro_check(
            &model,
            1,
            32,
            Norm::Two,
            &profile,
            &[0.05],
            &phis,
            1.0 / 32.0,
            4,
            99,
            1e-8,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.empirical.to_bits(), rb.empirical.to_bits());
        assert_eq!(ra.reference.to_bits(), rb.reference.to_bits());
        assert_eq!(ra.stderr.to_bits(), rb.stderr.to_bits());
    }
    assert_eq!(a.diffusion, b.diffusion);
}
