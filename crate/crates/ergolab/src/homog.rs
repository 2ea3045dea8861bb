//! Effective-matrix estimation by the periodized corrector problem.
//!
//! On an environment with multiplicities `n_z` and rates `r_{z,x}` the
//! homogenized matrix is characterized variationally: for a direction `a`,
//!
//! ```text
//! a·Da = inf_χ  (1 / 2 Σ_z n_z)  Σ_z Σ_x  n_z r_{z,x} (a·δ(z,x) + χ(x) − χ(z))²,
//! ```
//!
//! where `δ(z,x)` is the minimal-image displacement and the infimum runs
//! over scalar potentials `χ` on the atoms. The weights
//! `c_{z,x} = n_z r_{z,x}` are the detailed-balance conductances, symmetric
//! in `z ↔ x`, so the first-order conditions are a weighted graph-Laplacian
//! system
//!
//! ```text
//! Σ_x c_{w,x} (χ(w) − χ(x)) = Σ_x c_{w,x} a·δ(w,x)      for every atom w.
//! ```
//!
//! The right-hand side sums to zero over each connected component (every
//! edge contributes with both signs), so the singular system is always
//! consistent; conjugate gradients started from zero stays orthogonal to
//! the constant mode, which is additionally projected out every iteration
//! to stop roundoff drift. The returned potential is gauged to
//! `Σ_z n_z χ(z) = 0` and the energy is evaluated directly from the
//! quadratic form, which makes two facts structural rather than numerical:
//! the energy can only *decrease* from its value at `χ = 0` (CG is a
//! minimization method for this form), and `E(0)` is a variational upper
//! bound in every sample.
//!
//! Off-diagonal entries come from polarization,
//! `D_{ij} = [ (e_i+e_j)·D(e_i+e_j) − e_i·De_i − e_j·De_j ] / 2`,
//! which reuses the axis solver and keeps the assembled matrix symmetric
//! exactly. Degenerate directions are legitimate: stacked uncoupled chains
//! produce `De_2 = 0`, and the solver accepts that environment even though
//! its rate graph is disconnected — the consistency argument above does not
//! need connectivity.
//!
//! Ensemble estimates fan seeds out over a thread pool with one derived
//! seed per replica; results are reduced in replica order, so a rerun with
//! the same master seed is bit-identical.

use crate::env::{generate, Environment, Model};
use crate::error::{Error, Result};
use crate::geom::Norm;
use crate::rng;
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

/// Default relative residual for corrector solves.
pub const DEFAULT_CORRECTOR_TOL: f64 = 1e-8;

/// Hard cap on conjugate-gradient iterations per corrector solve.
const MAX_CG_ITERATIONS: usize = 500_000;

/// Outcome of a single corrector solve.
#[derive(Debug, Clone)]
pub struct CorrectorSolution {
    /// Potential on the atoms, gauged to `Σ n_z χ(z) = 0`.
    pub chi: Vec<f64>,
    /// Energy `E(χ) = a·D̂a` of the minimizer found.
    pub energy: f64,
    /// Energy of the zero trial function — a variational upper bound.
    pub upper_bound: f64,
    /// Relative residual of the linear solve.
    pub residual: f64,
    /// Conjugate-gradient iterations spent.
    pub iterations: usize,
}

/// Conductance graph in compressed-row form, with displacements.
struct EdgeSystem {
    d: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    /// Symmetric conductances `c_{w,x} = n_w r_{w,x}`.
    cond: Vec<f64>,
    /// Minimal-image displacements, `d` per entry, oriented `w → x`.
    disp: Vec<f64>,
    /// Weighted degrees `Σ_x c_{w,x}`.
    degree: Vec<f64>,
    /// Palm normalization `Σ_z n_z`.
    total_mass: f64,
}

impl EdgeSystem {
    fn build(env: &Environment) -> EdgeSystem {
        let d = env.torus.d;
        let n = env.atom_count();
        let mut counts = vec![0usize; n];
        for e in &env.edges {
            counts[e.a] += 1;
            counts[e.b] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0usize);
        for x in 0..n {
            offsets.push(offsets[x] + counts[x]);
        }
        let entries = offsets[n];
        let mut cols = vec![0usize; entries];
        let mut cond = vec![0.0f64; entries];
        let mut disp = vec![0.0f64; entries * d];
        let mut cursor = offsets.clone();
        for e in &env.edges {
            let fwd = cursor[e.a];
            cols[fwd] = e.b;
            cond[fwd] = e.conductance;
            disp[fwd * d..(fwd + 1) * d].copy_from_slice(&e.disp);
            cursor[e.a] += 1;
            let bwd = cursor[e.b];
            cols[bwd] = e.a;
            cond[bwd] = e.conductance;
            for k in 0..d {
                disp[bwd * d + k] = -e.disp[k];
            }
            cursor[e.b] += 1;
        }
        let degree: Vec<f64> = (0..n)
            .map(|x| cond[offsets[x]..offsets[x + 1]].iter().sum())
            .collect();
        let total_mass = env.total_mass();
        EdgeSystem {
            d,
            offsets,
            cols,
            cond,
            disp,
            degree,
            total_mass,
        }
    }

    /// Weighted Laplacian in difference form: `(Aχ)_w = Σ_x c (χ_w − χ_x)`.
    fn apply_into(&self, chi: &[f64], out: &mut [f64]) {
        for w in 0..chi.len() {
            let cw = chi[w];
            let mut acc = 0.0;
            for k in self.offsets[w]..self.offsets[w + 1] {
                acc += self.cond[k] * (cw - chi[self.cols[k]]);
            }
            out[w] = acc;
        }
    }

    /// Right-hand side `b_w = Σ_x c_{w,x} (a·δ(w,x))`.
    fn rhs(&self, a: &[f64]) -> Vec<f64> {
        let n = self.degree.len();
        let mut b = vec![0.0; n];
        for w in 0..n {
            let mut acc = crate::ergodic::Kahan::new();
            for k in self.offsets[w]..self.offsets[w + 1] {
                let proj: f64 = a
                    .iter()
                    .zip(&self.disp[k * self.d..(k + 1) * self.d])
                    .map(|(&ai, &di)| ai * di)
                    .sum();
                acc.add(self.cond[k] * proj);
            }
            b[w] = acc.total();
        }
        b
    }

    /// Quadratic form `(1 / 2 Σ n) Σ_w Σ_x c (a·δ + χ_x − χ_w)²`.
    fn energy(&self, a: &[f64], chi: &[f64]) -> f64 {
        let mut acc = crate::ergodic::Kahan::new();
        for w in 0..chi.len() {
            for k in self.offsets[w]..self.offsets[w + 1] {
                let proj: f64 = a
                    .iter()
                    .zip(&self.disp[k * self.d..(k + 1) * self.d])
                    .map(|(&ai, &di)| ai * di)
                    .sum();
                let slope = proj + chi[self.cols[k]] - chi[w];
                acc.add(self.cond[k] * slope * slope);
            }
        }
        acc.total() / (2.0 * self.total_mass)
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    let mut acc = crate::ergodic::Kahan::new();
    for (a, b) in u.iter().zip(v) {
        acc.add(a * b);
    }
    acc.total()
}

fn project_out_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v {
        *x -= mean;
    }
}

/// Solves the corrector problem in direction `a`.
///
/// Requires an identity lattice map (the Palm weighting is only meaningful
/// for the discrete and point-process cases); the rate graph may be
/// disconnected — decoupled chains are exactly the degenerate-matrix case.
pub fn corrector_solve(env: &Environment, a: &[f64], tol: f64) -> Result<CorrectorSolution> {
    let d = env.torus.d;
    if a.len() != d {
        return Err(Error::InvalidParameter(format!(
            "direction has {} components in dimension {d}",
            a.len()
        )));
    }
    if !a.iter().all(|x| x.is_finite()) || a.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidParameter(
            "corrector direction must be finite and nonzero".into(),
        ));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter(format!("solver tolerance {tol}")));
    }
    if !env.torus.map.is_identity() {
        return Err(Error::InvalidParameter(
            "corrector weighting needs an identity lattice map".into(),
        ));
    }
    if env.atom_count() == 0 {
        return Err(Error::InvalidParameter("environment has no atoms".into()));
    }

    let sys = EdgeSystem::build(env);
    let n = env.atom_count();
    let b = sys.rhs(a);
    let upper_bound = sys.energy(a, &vec![0.0; n]);
    let b_norm = dot(&b, &b).sqrt();
    if b_norm == 0.0 {
        // Gradient already vanishes at zero (e.g. constant rates, or a
        // direction with no coupled edges).
        return Ok(CorrectorSolution {
            chi: vec![0.0; n],
            energy: upper_bound,
            upper_bound,
            residual: 0.0,
            iterations: 0,
        });
    }
    let target = tol * b_norm;
    let precond: Vec<f64> = sys
        .degree
        .iter()
        .map(|&g| if g > 0.0 { g } else { 1.0 })
        .collect();

    let mut chi = vec![0.0; n];
    let mut r = b.clone();
    project_out_mean(&mut r);
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(&ri, &m)| ri / m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0usize;

    loop {
        if iterations >= MAX_CG_ITERATIONS {
            return Err(Error::SolverFailure {
                context: "corrector CG".into(),
                residual: dot(&r, &r).sqrt() / b_norm,
                iterations,
            });
        }
        iterations += 1;
        sys.apply_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverFailure {
                context: "corrector CG left the positive cone".into(),
                residual: dot(&r, &r).sqrt() / b_norm,
                iterations,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            chi[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        project_out_mean(&mut r);
        if dot(&r, &r).sqrt() <= target {
            // Confirm against the true residual before accepting.
            sys.apply_into(&chi, &mut ap);
            let mut true_r: Vec<f64> = b.iter().zip(&ap).map(|(&bi, &ai)| bi - ai).collect();
            project_out_mean(&mut true_r);
            let true_norm = dot(&true_r, &true_r).sqrt();
            if true_norm <= target {
                let gauge = {
                    let mut acc = crate::ergodic::Kahan::new();
                    for (m, c) in env.multiplicity.iter().zip(&chi) {
                        acc.add(m * c);
                    }
                    acc.total() / sys.total_mass
                };
                for c in &mut chi {
                    *c -= gauge;
                }
                let energy = sys.energy(a, &chi);
                return Ok(CorrectorSolution {
                    chi,
                    energy,
                    upper_bound,
                    residual: true_norm / b_norm,
                    iterations,
                });
            }
            r = true_r;
            z.iter_mut()
                .zip(r.iter().zip(&precond))
                .for_each(|(zi, (&ri, &m))| *zi = ri / m);
            p.copy_from_slice(&z);
            rz = dot(&r, &z);
            continue;
        }
        z.iter_mut()
            .zip(r.iter().zip(&precond))
            .for_each(|(zi, (&ri, &m))| *zi = ri / m);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_next;
    }
}

/// The estimated effective matrix together with solve diagnostics.
#[derive(Debug, Clone)]
pub struct EffectiveMatrix {
    /// Symmetric `d×d` matrix assembled by polarization.
    pub matrix: DMatrix<f64>,
    /// Directions solved: the axes, then `e_i + e_j` for `i < j`.
    pub directions: Vec<Vec<f64>>,
    /// Energy `a·D̂a` per solved direction.
    pub energies: Vec<f64>,
    /// Variational upper bound `E(0)` per solved direction.
    pub upper_bounds: Vec<f64>,
    /// Relative solve residual per direction.
    pub residuals: Vec<f64>,
}

impl EffectiveMatrix {
    /// Ambient dimension.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Trace of the matrix.
    #[must_use]
    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Smallest eigenvalue (PSD defect when negative).
    #[must_use]
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone())
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &e| m.min(e))
    }

    /// Largest relative residual across directions.
    #[must_use]
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0f64, |m, &r| m.max(r))
    }

    /// Smallest slack `E(0) − a·D̂a` across directions (nonnegative).
    #[must_use]
    pub fn min_upper_bound_gap(&self) -> f64 {
        self.upper_bounds
            .iter()
            .zip(&self.energies)
            .map(|(&u, &e)| u - e)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Solves all axis and mixed directions and assembles `D̂` by polarization.
pub fn effective_matrix(env: &Environment, tol: f64) -> Result<EffectiveMatrix> {
    let d = env.torus.d;
    let mut directions: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            e
        })
        .collect();
    for i in 0..d {
        for j in i + 1..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            e[j] = 1.0;
            directions.push(e);
        }
    }
    let solutions: Vec<CorrectorSolution> = directions
        .par_iter()
        .map(|a| corrector_solve(env, a, tol))
        .collect::<Result<_>>()?;

    let mut matrix = DMatrix::zeros(d, d);
    for i in 0..d {
        matrix[(i, i)] = solutions[i].energy;
    }
    let mut mixed = d;
    for i in 0..d {
        for j in i + 1..d {
            let off =
                0.5 * (solutions[mixed].energy - solutions[i].energy - solutions[j].energy);
            matrix[(i, j)] = off;
            matrix[(j, i)] = off;
            mixed += 1;
        }
    }

    let em = EffectiveMatrix {
        matrix,
        directions,
        energies: solutions.iter().map(|s| s.energy).collect(),
        upper_bounds: solutions.iter().map(|s| s.upper_bound).collect(),
        residuals: solutions.iter().map(|s| s.residual).collect(),
    };
    debug_assert!(
        em.min_upper_bound_gap() >= -1e-9 * (1.0 + em.trace().abs()),
        "variational bound violated"
    );
    debug_assert!(
        em.min_eigenvalue() >= -(1e-10f64.max(10.0 * tol)) * (1.0 + em.trace().abs()),
        "assembled matrix lost positive semidefiniteness"
    );
    Ok(em)
}

/// One replica of an ensemble estimate.
#[derive(Debug, Clone)]
pub struct SeedSample {
    /// Replica index.
    pub index: u64,
    /// Derived environment seed.
    pub seed: u64,
    /// Estimated matrix for this replica.
    pub matrix: DMatrix<f64>,
    /// Largest solve residual.
    pub residual_max: f64,
    /// Smallest variational slack.
    pub upper_bound_gap: f64,
}

/// Seed-averaged effective matrix with componentwise standard errors.
#[derive(Debug, Clone)]
pub struct EnsembleMatrix {
    /// Componentwise mean of the per-seed matrices.
    pub mean: DMatrix<f64>,
    /// Componentwise standard error of the mean.
    pub stderr: DMatrix<f64>,
    /// Per-seed results, in replica order.
    pub samples: Vec<SeedSample>,
}

/// Estimates the (self-averaging) effective matrix over independent seeds.
pub fn ensemble_effective_matrix(
    model: &Model,
    d: usize,
    side: i64,
    norm: Norm,
    n_seeds: u64,
    tol: f64,
    master_seed: u64,
) -> Result<EnsembleMatrix> {
    if n_seeds < 2 {
        return Err(Error::InvalidParameter(
            "ensemble estimate needs at least two seeds".into(),
        ));
    }
    let samples: Vec<SeedSample> = (0..n_seeds)
        .into_par_iter()
        .map(|k| {
            let seed = rng::replica_seed(master_seed, k);
            let env = generate(model, d, side, seed, norm)?;
            let em = effective_matrix(&env, tol)?;
            Ok(SeedSample {
                index: k,
                seed,
                residual_max: em.max_residual(),
                upper_bound_gap: em.min_upper_bound_gap(),
                matrix: em.matrix,
            })
        })
        .collect::<Result<_>>()?;

    let nf = n_seeds as f64;
    let mut mean = DMatrix::zeros(d, d);
    for s in &samples {
        mean += &s.matrix;
    }
    mean /= nf;
    let mut var = DMatrix::zeros(d, d);
    for s in &samples {
        let dev = &s.matrix - &mean;
        var += dev.component_mul(&dev);
    }
    let stderr = (var / (nf * (nf - 1.0))).map(f64::sqrt);
    Ok(EnsembleMatrix {
        mean,
        stderr,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, GenerationInfo, MultiplicityLaw, RateLaw};
    use crate::geom::Torus;
    use crate::operator;

    const ORACLE_TOL: f64 = 1e-10;

    fn nn_model(law: RateLaw) -> Model {
        Model::ZdNearestNeighbor {
            law,
            multiplicity: MultiplicityLaw::One,
        }
    }

    /// A 3-cycle with prescribed conductances 1, 2, 4.
    fn three_cycle() -> Environment {
        Environment::assemble(
            Torus::square(1, 3),
            Norm::Two,
            0,
            "fixture".into(),
            vec![0.0, 1.0, 2.0],
            vec![1.0, 1.0, 1.0],
            vec![(0, 1, 1.0), (1, 2, 2.0), (2, 0, 4.0)],
            None,
            GenerationInfo::default(),
        )
        .expect("three-cycle fixture assembles")
    }

    #[test]
    fn constant_rate_lattice_needs_no_corrector() {
        let env = generate(&nn_model(RateLaw::Constant { value: 1.5 }), 2, 8, 5, Norm::Two)
            .unwrap();
        let sol = corrector_solve(&env, &[1.0, 0.0], 1e-10).unwrap();
        assert_eq!(sol.iterations, 0, "the gradient vanishes at zero exactly");
        assert!(sol.chi.iter().all(|&c| c == 0.0));
        assert!((sol.energy - 1.5).abs() < ORACLE_TOL);

        let em = effective_matrix(&env, 1e-10).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.5 } else { 0.0 };
                assert!(
                    (em.matrix[(i, j)] - want).abs() < ORACLE_TOL,
                    "entry ({i},{j}) = {}",
                    em.matrix[(i, j)]
                );
            }
        }
    }

    #[test]
    fn three_cycle_recovers_the_series_resistance() {
        let sol = corrector_solve(&three_cycle(), &[1.0], 1e-12).unwrap();
        assert!(
            (sol.energy - 12.0 / 7.0).abs() < 1e-10,
            "energy {} vs harmonic mean 12/7",
            sol.energy
        );
        assert!(sol.upper_bound >= sol.energy);
        // Gauge: the multiplicity-weighted mean vanishes.
        let mean: f64 = sol.chi.iter().sum();
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn realized_chain_matches_its_own_harmonic_mean() {
        let env = generate(
            &nn_model(RateLaw::Uniform { lo: 1.0, hi: 2.0 }),
            1,
            512,
            77,
            Norm::Two,
        )
        .unwrap();
        let mut inv_sum = 0.0;
        for e in &env.edges {
            inv_sum += 1.0 / e.conductance;
        }
        let oracle = env.edges.len() as f64 / inv_sum;
        let em = effective_matrix(&env, 1e-12).unwrap();
        assert!(
            (em.matrix[(0, 0)] - oracle).abs() < 1e-8,
            "D = {} vs realized harmonic mean {oracle}",
            em.matrix[(0, 0)]
        );
    }

    #[test]
    fn upper_bound_dominates_the_energy() {
        let model = Model::ZdNearestNeighbor {
            law: RateLaw::Uniform { lo: 0.5, hi: 2.5 },
            multiplicity: MultiplicityLaw::TwoPointFair,
        };
        for seed in [1u64, 2, 3] {
            let env = generate(&model, 2, 12, seed, Norm::Two).unwrap();
            let em = effective_matrix(&env, 1e-9).unwrap();
            assert!(
                em.min_upper_bound_gap() >= 0.0,
                "variational slack {} at seed {seed}",
                em.min_upper_bound_gap()
            );
            assert!(em.min_eigenvalue() >= -1e-10 * em.trace().abs());
            assert_eq!(em.matrix[(0, 1)], em.matrix[(1, 0)]);
            assert!(em.max_residual() <= 1e-9);
        }
    }

    #[test]
    fn rate_scaling_multiplies_the_matrix_linearly() {
        let model = Model::ZdNearestNeighbor {
            law: RateLaw::Uniform { lo: 1.0, hi: 2.0 },
            multiplicity: MultiplicityLaw::One,
        };
        let env = generate(&model, 2, 10, 9, Norm::Two).unwrap();
        let base = effective_matrix(&env, 1e-11).unwrap();
        let scaled = effective_matrix(&env.scale_rates(3.0), 1e-11).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (scaled.matrix[(i, j)] - 3.0 * base.matrix[(i, j)]).abs()
                        < 1e-8 * (1.0 + base.trace()),
                    "entry ({i},{j}) scales wrong"
                );
            }
        }
    }

    #[test]
    fn stacked_chains_have_a_null_vertical_direction() {
        let env = generate(
            &Model::ZdAxes {
                rates: vec![1.0, 0.0],
            },
            2,
            8,
            21,
            Norm::Two,
        )
        .unwrap();
        assert!(!env.connected, "a dropped axis disconnects the chains");
        let em = effective_matrix(&env, 1e-10).unwrap();
        assert!((em.matrix[(0, 0)] - 1.0).abs() < 1e-9, "chains carry rate 1");
        assert!(em.matrix[(1, 1)].abs() < 1e-10, "vertical direction must be null");
        assert!(em.matrix[(0, 1)].abs() < 1e-10);
    }

    #[test]
    fn triangular_lattices_are_rejected() {
        let env = generate(
            &Model::Triangular {
                law: RateLaw::Constant { value: 1.0 },
            },
            2,
            6,
            4,
            Norm::Two,
        )
        .unwrap();
        assert!(corrector_solve(&env, &[1.0, 0.0], 1e-8).is_err());
    }

    #[test]
    fn zero_directions_are_rejected() {
        let env = generate(&nn_model(RateLaw::Constant { value: 1.0 }), 2, 6, 4, Norm::Two)
            .unwrap();
        assert!(corrector_solve(&env, &[0.0, 0.0], 1e-8).is_err());
        assert!(corrector_solve(&env, &[1.0], 1e-8).is_err());
    }

    #[test]
    fn deterministic_ensembles_have_zero_spread() {
        let out = ensemble_effective_matrix(
            &nn_model(RateLaw::Constant { value: 2.0 }),
            2,
            6,
            Norm::Two,
            3,
            1e-10,
            99,
        )
        .unwrap();
        assert_eq!(out.samples.len(), 3);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(out.stderr[(i, j)], 0.0);
            }
        }
        assert!((out.mean[(0, 0)] - 2.0).abs() < ORACLE_TOL);
    }

    #[test]
    fn uniform_chains_approach_the_law_harmonic_mean() {
        let out = ensemble_effective_matrix(
            &nn_model(RateLaw::Uniform { lo: 1.0, hi: 2.0 }),
            1,
            512,
            Norm::Two,
            8,
            1e-10,
            2024,
        )
        .unwrap();
        let target = 1.0 / std::f64::consts::LN_2;
        let gap = (out.mean[(0, 0)] - target).abs();
        assert!(
            gap <= 3.0 * out.stderr[(0, 0)].max(1e-4),
            "mean {} vs 1/ln2 = {target} (stderr {})",
            out.mean[(0, 0)],
            out.stderr[(0, 0)]
        );
    }

    #[test]
    fn isotropy_suppresses_the_ensemble_off_diagonal() {
        for side in [16i64, 32] {
            let out = ensemble_effective_matrix(
                &nn_model(RateLaw::Uniform { lo: 0.5, hi: 2.5 }),
                2,
                side,
                Norm::Two,
                6,
                1e-8,
                55,
            )
            .unwrap();
            let bound = 1e-2 * out.mean.trace() / 2.0;
            assert!(
                out.mean[(0, 1)].abs() <= bound.max(3.0 * out.stderr[(0, 1)]),
                "off-diagonal {} at L = {side}",
                out.mean[(0, 1)]
            );
        }
    }

    #[test]
    fn msd_slope_matches_twice_the_trace() {
        let model = nn_model(RateLaw::Uniform { lo: 1.0, hi: 2.0 });
        let env = generate(&model, 2, 16, 31, Norm::Two).unwrap();
        let em = effective_matrix(&env, 1e-9).unwrap();
        let est = operator::msd_estimate(&env, 0.125, 0.5, 3_000, 0x6d74).unwrap();
        let target = 2.0 * em.trace();
        let rel = (est.msd_over_t - target).abs() / target;
        assert!(
            rel < 0.10,
            "msd/t {} vs 2 tr(D) = {target} (rel {rel})",
            est.msd_over_t
        );
    }
}
