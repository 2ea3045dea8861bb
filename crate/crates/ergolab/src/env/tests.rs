use super::*;
use crate::geom::Norm;

fn uniform12() -> RateLaw {
    RateLaw::Uniform { lo: 1.0, hi: 2.0 }
}

fn nn(law: RateLaw, multiplicity: MultiplicityLaw) -> Model {
    Model::ZdNearestNeighbor { law, multiplicity }
}

#[test]
fn chain_has_expected_atoms_edges_and_rates() {
    let env = generate(&nn(uniform12(), MultiplicityLaw::One), 1, 8, 7, Norm::Two).unwrap();
    assert_eq!(env.atom_count(), 8);
    assert_eq!(env.edges.len(), 8);
    for e in &env.edges {
        assert!((1.0..=2.0).contains(&e.conductance));
    }
    assert!(env.connected);
    env.check_invariants().unwrap();
}

#[test]
fn two_cell_torus_accumulates_parallel_edges() {
    let env = generate(
        &nn(RateLaw::Constant { value: 1.0 }, MultiplicityLaw::One),
        1,
        2,
        3,
        Norm::Two,
    )
    .unwrap();
    // both lattice edges join the same pair of atoms
    assert_eq!(env.edges.len(), 1);
    assert_eq!(env.edges[0].conductance, 2.0);
    assert_eq!(env.rate(0, 1), 2.0);
    assert_eq!(env.lambda_k(0, 0), 2.0);
}

#[test]
fn detailed_balance_products_are_bit_identical() {
    let env = generate(
        &nn(uniform12(), MultiplicityLaw::TwoPointFair),
        2,
        6,
        11,
        Norm::Two,
    )
    .unwrap();
    assert!(env.multiplicity.iter().any(|&n| n == 2.0));
    env.check_invariants().unwrap();
    for e in &env.edges {
        let fwd = env.multiplicity[e.a] * env.rate(e.a, e.b);
        let back = env.multiplicity[e.b] * env.rate(e.b, e.a);
        assert_eq!(fwd.to_bits(), back.to_bits());
        assert_eq!(fwd.to_bits(), e.conductance.to_bits());
    }
}

#[test]
fn constant_lattice_moments_are_exact() {
    let env = generate(
        &nn(RateLaw::Constant { value: 1.0 }, MultiplicityLaw::One),
        2,
        8,
        5,
        Norm::Two,
    )
    .unwrap();
    for x in 0..env.atom_count() {
        assert_eq!(env.lambda_k(x, 0), 4.0);
        assert_eq!(env.lambda_k(x, 2), 4.0);
    }
}

#[test]
fn long_range_needs_decay_above_d_plus_two() {
    let model = Model::ZdLongRange {
        law: uniform12(),
        decay: 3.0,
        multiplicity: MultiplicityLaw::One,
    };
    assert!(matches!(
        generate(&model, 1, 8, 1, Norm::Two),
        Err(crate::Error::MomentCondition(_))
    ));
    let ok = Model::ZdLongRange {
        law: uniform12(),
        decay: 5.5,
        multiplicity: MultiplicityLaw::One,
    };
    let env = generate(&ok, 1, 16, 1, Norm::Two).unwrap();
    env.check_invariants().unwrap();
    assert_eq!(env.info.truncation_radius, Some(7.0));
    let bound = env.info.lambda2_tail_bound.unwrap();
    assert!(bound > 0.0 && bound < 1.0, "tail bound {bound}");
    // every stored displacement respects the truncation
    for e in &env.edges {
        assert!(Norm::Two.eval(&e.disp) <= 7.0 * 2f64.sqrt() + 1e-12);
    }
}

#[test]
fn poisson_counts_match_intensity() {
    let model = Model::PoissonPP {
        intensity: 2.0,
        mark_lo: 0.5,
        mark_hi: 1.5,
    };
    let mut total = 0usize;
    let n_seeds = 200;
    for k in 0..n_seeds {
        let m = generate_measure(&model, 2, 8, crate::rng::replica_seed(4, k), Norm::Two).unwrap();
        total += m.atom_count();
    }
    let mean = total as f64 / n_seeds as f64;
    // Poisson(128): stderr over 200 seeds is 0.8
    assert!((mean - 128.0).abs() < 3.0, "mean count {mean}");
}

#[test]
fn poisson_environment_is_connected_and_balanced() {
    let model = Model::PoissonPP {
        intensity: 2.0,
        mark_lo: 0.5,
        mark_hi: 1.5,
    };
    let env = generate(&model, 2, 8, 9, Norm::Two).unwrap();
    assert!(env.connected);
    env.check_invariants().unwrap();
    assert!(env.info.truncation_radius == Some(4.0));
    // the exponential kernel bound shrinks fast as the cutoff grows
    let near = env.info.lambda2_tail_bound.unwrap();
    let far = generate(&model, 2, 16, 9, Norm::Two)
        .unwrap()
        .info
        .lambda2_tail_bound
        .unwrap();
    assert!(near.is_finite() && near > 0.0);
    assert!(far < 0.2 * near, "near {near} far {far}");
}

#[test]
fn triangular_lattice_has_six_neighbors_of_unit_length() {
    let env = generate(
        &Model::Triangular { law: RateLaw::Constant { value: 1.0 } },
        2,
        6,
        2,
        Norm::Two,
    )
    .unwrap();
    for x in 0..env.atom_count() {
        let row: Vec<_> = env.adjacency().row(x).collect();
        assert_eq!(row.len(), 6);
        for (_, _, disp) in row {
            assert!((Norm::Two.eval(disp) - 1.0).abs() < 1e-12);
        }
    }
    assert!((env.torus.volume() - 36.0 * 3f64.sqrt() / 2.0).abs() < 1e-9);
}

#[test]
fn shifted_generation_equals_translation() {
    for model in [
        nn(uniform12(), MultiplicityLaw::TwoPointFair),
        Model::ZdLongRange {
            law: uniform12(),
            decay: 6.5,
            multiplicity: MultiplicityLaw::One,
        },
    ] {
        for seed in 0..5 {
            let base = generate(&model, 2, 6, seed, Norm::Two).unwrap();
            for g in [[1, 0], [3, 5], [-2, 7]] {
                let shifted = generate_shifted(&model, 2, 6, seed, Norm::Two, &g).unwrap();
                let translated = base.translate(&g).unwrap();
                assert_eq!(shifted.multiplicity, translated.multiplicity);
                assert_eq!(shifted.edges.len(), translated.edges.len());
                for (e1, e2) in shifted.edges.iter().zip(&translated.edges) {
                    assert_eq!((e1.a, e1.b), (e2.a, e2.b));
                    assert_eq!(e1.conductance.to_bits(), e2.conductance.to_bits());
                    assert_eq!(e1.disp, e2.disp);
                }
            }
        }
    }
}

#[test]
fn palm_of_constant_observable_is_one() {
    let est = palm_expectation(
        &nn(uniform12(), MultiplicityLaw::TwoPointFair),
        2,
        6,
        Norm::Two,
        3,
        8,
        |_, _| 1.0,
    )
    .unwrap();
    assert_eq!(est.mean, 1.0);
    assert!(est.stderr < 1e-15);
}

#[test]
fn palm_of_total_rate_matches_two_d_times_mean() {
    let est = palm_expectation(
        &nn(uniform12(), MultiplicityLaw::One),
        2,
        8,
        Norm::Two,
        17,
        40,
        |env, x| env.lambda_k(x, 0),
    )
    .unwrap();
    // 2d edges of mean conductance 1.5 each
    assert!(
        (est.mean - 6.0).abs() <= 3.0 * est.stderr.max(1e-3),
        "mean {} stderr {}",
        est.mean,
        est.stderr
    );
}

#[test]
fn palm_is_size_biased_for_random_multiplicities() {
    let est = palm_expectation(
        &nn(uniform12(), MultiplicityLaw::TwoPointFair),
        2,
        12,
        Norm::Two,
        23,
        60,
        |env, x| env.multiplicity[x],
    )
    .unwrap();
    // E[n^2] / E[n] = (1 + 4)/2 / (3/2) = 5/3
    let target = 5.0 / 3.0;
    assert!(
        (est.mean - target).abs() <= 3.0 * est.stderr,
        "mean {} stderr {} target {target}",
        est.mean,
        est.stderr
    );
}

#[test]
fn intensity_is_exact_for_unit_multiplicities() {
    let (m, se) =
        intensity_estimate(&nn(uniform12(), MultiplicityLaw::One), 2, 8, Norm::Two, 5, 10)
            .unwrap();
    assert_eq!(m, 1.0);
    assert_eq!(se, 0.0);
}

#[test]
fn intensity_sees_random_multiplicities_and_poisson_rate() {
    let (m, se) = intensity_estimate(
        &nn(uniform12(), MultiplicityLaw::TwoPointFair),
        2,
        16,
        Norm::Two,
        5,
        30,
    )
    .unwrap();
    assert!(se > 0.0);
    assert!((m - 1.5).abs() < 3.0 * se + 1e-9, "mean {m} stderr {se}");

    let model = Model::PoissonPP {
        intensity: 2.0,
        mark_lo: 0.5,
        mark_hi: 1.5,
    };
    let (m, se) = intensity_estimate(&model, 2, 16, Norm::Two, 8, 30).unwrap();
    assert!((m - 2.0).abs() < 3.0 * se, "mean {m} stderr {se}");
}

#[test]
fn measure_rescaling_is_lazy_and_consistent() {
    let model = Model::PoissonPP {
        intensity: 2.0,
        mark_lo: 0.5,
        mark_hi: 1.5,
    };
    let m1 = generate_measure(&model, 2, 8, 31, Norm::Two).unwrap();
    let eps = 0.125;
    let m2 = m1.rescaled(eps);
    assert_eq!(m1.atom_count(), m2.atom_count());
    for a in 0..m1.atom_count() {
        let p1 = m1.position(a);
        let p2 = m2.position(a);
        for i in 0..2 {
            assert_eq!(p2[i].to_bits(), (p1[i] * eps).to_bits());
        }
        assert_eq!(m2.mass(a).to_bits(), (eps * eps * m1.mass(a)).to_bits());
    }
    assert!((m2.total_mass() - eps * eps * m1.total_mass()).abs() < 1e-12);
}

#[test]
fn riemann_sum_of_gaussian_is_one() {
    let env = generate(
        &nn(RateLaw::Constant { value: 1.0 }, MultiplicityLaw::One),
        1,
        512,
        1,
        Norm::Two,
    )
    .unwrap();
    let eps = 1.0 / 32.0;
    let m = env.measure().rescaled(eps);
    let v = m.integrate(|x| (-std::f64::consts::PI * x[0] * x[0]).exp());
    assert!((v - 1.0).abs() < 1e-6, "integral {v}");
}

#[test]
fn tail_mass_of_counting_measure_matches_zeta_series() {
    let env = generate(
        &nn(RateLaw::Constant { value: 1.0 }, MultiplicityLaw::One),
        1,
        512,
        1,
        Norm::Two,
    )
    .unwrap();
    let m = env.measure();
    let v = m.tail_mass(|r| (1.0 + r).powi(-4), 1.0);
    // 2 (zeta(4) - 1) with zeta(4) = pi^4 / 90; torus cutoff error < 1e-7
    let zeta4 = std::f64::consts::PI.powi(4) / 90.0;
    let target = 2.0 * (zeta4 - 1.0);
    assert!((v - target).abs() < 1e-6, "tail {v} target {target}");
    // cutoff 0 counts every atom
    let all = m.tail_mass(|_| 1.0, 0.0);
    assert_eq!(all, 512.0);
}

#[test]
fn serialization_round_trips_bit_exactly() {
    for model in [
        nn(uniform12(), MultiplicityLaw::TwoPointFair),
        Model::Triangular { law: uniform12() },
        Model::PoissonPP {
            intensity: 1.5,
            mark_lo: 0.5,
            mark_hi: 1.5,
        },
    ] {
        let env = generate(&model, 2, 6, 13, Norm::Two).unwrap();
        let text = io::to_text(&env);
        let back = io::from_text(&text).unwrap();
        assert_eq!(env.atom_count(), back.atom_count());
        assert_eq!(env.positions, back.positions);
        assert_eq!(env.multiplicity, back.multiplicity);
        assert_eq!(env.edges.len(), back.edges.len());
        for (e1, e2) in env.edges.iter().zip(&back.edges) {
            assert_eq!((e1.a, e1.b), (e2.a, e2.b));
            assert_eq!(e1.conductance.to_bits(), e2.conductance.to_bits());
        }
        for x in 0..env.atom_count() {
            assert_eq!(env.lambda_k(x, 2).to_bits(), back.lambda_k(x, 2).to_bits());
        }
        back.check_invariants().unwrap();
    }
}

#[test]
fn malformed_environment_text_is_rejected() {
    assert!(io::from_text("").is_err());
    assert!(io::from_text("2 8 2 zdnn").is_err());
    // duplicate edge
    let text = "1 4 2 zdnn 0\n0 0 1\n1 1 1\n2 2 1\n3 3 1\n\n0 1 1.0\n1 0 1.0\n";
    assert!(io::from_text(text).is_err());
}

#[test]
fn stored_field_errors_outside_box_and_hash_field_shifts() {
    let f = ScalarField::stored(vec![-1, -1], vec![1, 1], (0..9).map(f64::from).collect()).unwrap();
    assert!(f.check_box(1).is_ok());
    assert!(f.check_box(2).is_err());
    assert_eq!(f.value(&[-1, -1]), 0.0);
    assert_eq!(f.value(&[1, 1]), 8.0);

    let h = ScalarField::iid(2, 99, FieldLaw::Exponential).unwrap();
    let g = [5, -3];
    let hs = h.shifted(&g);
    for j in [[0i64, 0], [2, 7], [-4, 1]] {
        let moved = [j[0] + g[0], j[1] + g[1]];
        assert_eq!(hs.value(&j).to_bits(), h.value(&moved).to_bits());
    }
}

#[test]
fn mixture_field_resolves_one_component_per_seed() {
    let comps = [
        (0.5, FieldLaw::Bernoulli { p: 0.2 }),
        (0.5, FieldLaw::Bernoulli { p: 0.8 }),
    ];
    let mut seen = [false, false];
    for seed in 0..64 {
        let f = ScalarField::mixture(2, seed, &comps).unwrap();
        let label = f.mixture_label().unwrap();
        seen[label] = true;
        // values are valid Bernoulli draws of the selected component
        let mut sum = 0.0;
        let n = 2000;
        for k in 0..n {
            sum += f.value(&[k, -k]);
        }
        let p = [0.2, 0.8][label];
        assert!((sum / n as f64 - p).abs() < 0.05);
    }
    assert!(seen[0] && seen[1]);
}

#[test]
fn disconnected_axes_model_is_flagged_not_rejected() {
    let model = Model::ZdAxes { rates: vec![1.0, 0.0] };
    let env = generate(&model, 2, 6, 1, Norm::Two).unwrap();
    assert!(!env.connected);
    // only horizontal edges exist
    for e in &env.edges {
        assert_eq!(e.disp[1], 0.0);
    }
    // a fully zero model is invalid
    assert!(generate(&Model::ZdAxes { rates: vec![0.0] }, 1, 6, 1, Norm::Two).is_err());
}
