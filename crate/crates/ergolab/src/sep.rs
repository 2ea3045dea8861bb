//! Symmetric simple exclusion on a point-process environment, run as a
//! stirring process, with empirical-measure profiles and the full
//! hydrodynamic-limit pipeline check.
//!
//! # Stirring instead of jump-with-exclusion
//!
//! The exclusion generator moves a particle from `x` to an empty `y` at
//! rate `r_{x,y} η(x)(1 − η(y))`. For **symmetric** rates this agrees in
//! law with the stirring process, which simply exchanges the occupations
//! of the unordered pair `{x, y}` at rate `r_{x,y}`: when exactly one
//! endpoint is occupied the two dynamics perform the same move at the same
//! rate, and when both or neither are occupied the exchange is invisible.
//! Stirring is what this module simulates, for two structural payoffs:
//!
//! * the event rates do not depend on the configuration, so one exact
//!   Gillespie schedule (exponential waiting times against a fixed total
//!   rate, pair selection by cumulative-rate lookup) drives the whole
//!   trajectory with no rate updates;
//! * two initial conditions driven by the same event sequence stay
//!   coupled: `η ≤ η'` is preserved by every exchange, which the
//!   monotonicity tests assert exactly.
//!
//! Symmetry is not optional. Conductance environments carry one number
//! per unordered pair, so rates are symmetric exactly when every atom has
//! unit multiplicity (`r_{x,y} = c_{x,y}/n_x`); [`ExclusionState::new`]
//! rejects anything else.
//!
//! # Clocks and scaling
//!
//! Time is macroscopic throughout: advancing a state to time `t` at scale
//! `ε` runs the exchange clocks at rates `ε^{-2} r_{x,y}`, i.e. physical
//! time `ε^{-2} t` — the diffusive rescaling under which the empirical
//! measure
//!
//! ```text
//! ⟨π^ε_t, φ⟩ = ε^d Σ_x η_t(x) φ(εx)
//! ```
//!
//! converges to `∫ ρ(t, x) φ(x) m dx`, where `ρ` solves the heat equation
//! `∂_t ρ = ∇·(D̂∇ρ)` with the effective matrix of the environment and
//! `m` is the atom intensity. [`hydro_check`] wires the entire chain
//! together: quenched environment → `D̂` from the corrector module →
//! spectral reference solve on the unit torus → seed-averaged empirical
//! profiles with Monte Carlo error bars.
//!
//! The limit profile is reported as `m̂·∫ρφ` — the intensity multiplies
//! the reference, not the pointwise empirical values.

use crate::env::{generate, Environment, Model};
use crate::ergodic::Kahan;
use crate::error::{Error, Result};
use crate::geom::Norm;
use crate::homog;
use crate::refpde;
use crate::rng::{self, Stream};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[cfg(test)]
mod tests;

/// An exclusion configuration on an environment with unit multiplicities
/// and (therefore) symmetric exchange rates.
#[derive(Debug, Clone)]
pub struct ExclusionState<'e> {
    env: &'e Environment,
    eta: Vec<u8>,
    time: f64,
}

impl<'e> ExclusionState<'e> {
    /// Wraps an occupation vector, checking the environment is admissible.
    ///
    /// Every atom must carry multiplicity exactly one — this is what makes
    /// the directed rates `r_{x,y} = c_{x,y}/n_x` symmetric, and it is the
    /// setting in which site exclusion is meaningful.
    pub fn new(env: &'e Environment, eta: Vec<u8>) -> Result<Self> {
        if let Some(x) = env.multiplicity.iter().position(|&n| n != 1.0) {
            return Err(Error::InvalidParameter(format!(
                "exclusion needs unit multiplicities for symmetric exchange rates; \
                 atom {x} carries {}",
                env.multiplicity[x]
            )));
        }
        if eta.len() != env.atom_count() {
            return Err(Error::InvalidParameter(format!(
                "occupation vector has {} entries for {} atoms",
                eta.len(),
                env.atom_count()
            )));
        }
        if let Some(x) = eta.iter().position(|&v| v > 1) {
            return Err(Error::InvalidParameter(format!(
                "occupations are bits; atom {x} holds {}",
                eta[x]
            )));
        }
        Ok(ExclusionState { env, eta, time: 0.0 })
    }

    /// Occupation bits, indexed like the environment's atoms.
    #[must_use]
    pub fn occupations(&self) -> &[u8] {
        &self.eta
    }

    /// Current macroscopic time.
    #[must_use]
    pub fn time(&self) -> f64 {
        self.time
    }

    /// Number of particles; conserved exactly by the dynamics.
    #[must_use]
    pub fn particle_count(&self) -> usize {
        self.eta.iter().map(|&v| v as usize).sum()
    }

    /// The underlying environment.
    #[must_use]
    pub fn environment(&self) -> &Environment {
        self.env
    }
}

/// Independent Bernoulli occupations with site-dependent density
/// `ρ0(ε·position)` — the local-equilibrium initial data of the
/// hydrodynamic limit.
pub fn bernoulli_field(
    env: &Environment,
    rho0: &Profile,
    epsilon: f64,
    stream: &mut Stream,
) -> Result<Vec<u8>> {
    rho0.validate()?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale epsilon = {epsilon}")));
    }
    let d = env.torus.d;
    let mut scaled = vec![0.0; d];
    let mut eta = Vec::with_capacity(env.atom_count());
    for x in 0..env.atom_count() {
        for (s, &c) in scaled.iter_mut().zip(env.position(x)) {
            *s = epsilon * c;
        }
        let p = rho0.eval(&scaled);
        eta.push(u8::from(stream.bernoulli(p)));
    }
    Ok(eta)
}

/// Advances a state to macroscopic time `t_final` at scale `epsilon`.
///
/// Exact Gillespie simulation of the stirring process: the unordered pair
/// `{x, y}` exchanges occupations at rate `ε^{-2} r_{x,y}`. Because the
/// rates never depend on the configuration, the cumulative-rate table is
/// built once and every event costs one exponential draw plus one
/// logarithmic lookup. Each event consumes exactly two RNG draws, so
/// trajectories replay bit-identically from the same stream.
pub fn sep_run(
    state: &mut ExclusionState<'_>,
    t_final: f64,
    epsilon: f64,
    stream: &mut Stream,
) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scale epsilon = {epsilon} must lie in (0, 1]"
        )));
    }
    if !(t_final.is_finite() && t_final >= state.time) {
        return Err(Error::InvalidParameter(format!(
            "target time {t_final} precedes the state clock {}",
            state.time
        )));
    }
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    let env = state.env;
    let mut pairs = Vec::new();
    let mut prefix = Vec::new();
    let mut acc = Kahan::new();
    for e in &env.edges {
        if e.conductance > 0.0 {
            pairs.push((e.a, e.b));
            acc.add(inv_eps2 * e.conductance);
            prefix.push(acc.total());
        }
    }
    let total = prefix.last().copied().unwrap_or(0.0);
    if total <= 0.0 {
        state.time = t_final;
        return Ok(());
    }
    let mut t = state.time;
    loop {
        t += stream.exponential(total);
        if t > t_final {
            break;
        }
        let (a, b) = pairs[stream.pick_by_prefix(&prefix)];
        state.eta.swap(a, b);
    }
    state.time = t_final;
    Ok(())
}

/// Pairs the empirical measure against a test function:
/// `⟨π^ε, φ⟩ = ε^d Σ_x η(x) φ(ε·position(x))`.
#[must_use]
pub fn empirical_profile<F: Fn(&[f64]) -> f64>(
    state: &ExclusionState<'_>,
    epsilon: f64,
    phi: F,
) -> f64 {
    let env = state.env;
    let d = env.torus.d;
    let eps_d = epsilon.powi(d as i32);
    let mut scaled = vec![0.0; d];
    let mut acc = Kahan::new();
    for (x, &occupied) in state.eta.iter().enumerate() {
        if occupied == 1 {
            for (s, &c) in scaled.iter_mut().zip(env.position(x)) {
                *s = epsilon * c;
            }
            acc.add(phi(&scaled));
        }
    }
    eps_d * acc.total()
}

/// A smooth density profile on the unit torus, used both as initial data
/// and as the reference's initial grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    /// Flat density.
    Constant {
        /// Density value in `[0, 1]`.
        value: f64,
    },
    /// `base + amplitude · sin(2π · freq · x₁)`.
    SineWave {
        /// Mean density.
        base: f64,
        /// Perturbation amplitude.
        amplitude: f64,
        /// Integer mode along the first axis.
        freq: u32,
    },
}

impl Profile {
    /// Checks the profile stays inside `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Profile::Constant { value } => (0.0..=1.0).contains(&value),
            Profile::SineWave { base, amplitude, freq } => {
                freq > 0
                    && amplitude >= 0.0
                    && base - amplitude >= 0.0
                    && base + amplitude <= 1.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "density profile {self:?} leaves [0, 1]"
            )))
        }
    }

    /// Density at a unit-torus coordinate.
    #[must_use]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Profile::Constant { value } => value,
            Profile::SineWave { base, amplitude, freq } => {
                base + amplitude * (2.0 * std::f64::consts::PI * f64::from(freq) * x[0]).sin()
            }
        }
    }
}

/// Test functions on the unit torus paired against empirical measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TorusTest {
    /// The constant one (total mass).
    One,
    /// `sin(2π · freq · x₁)`.
    Sin {
        /// Integer mode along the first axis.
        freq: u32,
    },
    /// `cos(2π · freq · x₁)`.
    Cos {
        /// Integer mode along the first axis.
        freq: u32,
    },
}

impl TorusTest {
    /// Evaluates the test function at a unit-torus coordinate.
    #[must_use]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            TorusTest::One => 1.0,
            TorusTest::Sin { freq } => {
                (2.0 * std::f64::consts::PI * f64::from(freq) * x[0]).sin()
            }
            TorusTest::Cos { freq } => {
                (2.0 * std::f64::consts::PI * f64::from(freq) * x[0]).cos()
            }
        }
    }

    /// Stable identifier used in report rows and CSV columns.
    #[must_use]
    pub fn label(&self) -> String {
        match *self {
            TorusTest::One => "one".into(),
            TorusTest::Sin { freq } => format!("sin{freq}"),
            TorusTest::Cos { freq } => format!("cos{freq}"),
        }
    }
}

/// One `(time, test function)` cell of a hydrodynamic comparison.
#[derive(Debug, Clone)]
pub struct HydroRow {
    /// Macroscopic time of the snapshot.
    pub t: f64,
    /// Which test function was paired.
    pub phi: TorusTest,
    /// Seed-averaged empirical pairing `⟨π^ε_t, φ⟩`.
    pub empirical: f64,
    /// Hydrodynamic prediction `m̂ ∫ ρ(t, x) φ(x) dx`.
    pub reference: f64,
    /// `|empirical − reference|`.
    pub gap: f64,
    /// Monte Carlo standard error of the seed average.
    pub stderr: f64,
    /// Number of seeds averaged.
    pub n_seeds: usize,
}

/// Full output of [`hydro_check`].
#[derive(Debug, Clone)]
pub struct HydroReport {
    /// One row per `(t, φ)` pair, times outermost.
    pub rows: Vec<HydroRow>,
    /// Intensity `m̂` of the quenched environment.
    pub intensity: f64,
    /// Effective diffusion matrix used by the reference solve.
    pub diffusion: DMatrix<f64>,
    /// Corrector solver residual bound behind the matrix.
    pub corrector_residual: f64,
}

/// Runs the hydrodynamic-limit comparison end to end on one quenched
/// environment.
///
/// The environment is generated from `master_seed`; per-replica streams
/// drive the Bernoulli initial data and the stirring dynamics. The
/// reference profile solves `∂_t ρ = ∇·(D̂∇ρ)` spectrally on the unit
/// torus (so `ε · side` must equal one) with `D̂` estimated from the same
/// environment, and its pairing with `φ` is the lattice Riemann sum —
/// exact for the band-limited profiles and test functions offered here.
#[allow(clippy::too_many_arguments)]
pub fn hydro_check(
    model: &Model,
    d: usize,
    side: i64,
    norm: Norm,
    rho0: &Profile,
    t_grid: &[f64],
    phis: &[TorusTest],
    epsilon: f64,
    n_seeds: usize,
    master_seed: u64,
    corrector_tol: f64,
) -> Result<HydroReport> {
    rho0.validate()?;
    if t_grid.is_empty() || phis.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one time and one test function".into(),
        ));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid.iter().any(|&t| !(t >= 0.0) || !t.is_finite())
    {
        return Err(Error::InvalidParameter(
            "time grid must be finite, nonnegative, strictly increasing".into(),
        ));
    }
    if n_seeds < 2 {
        return Err(Error::InvalidParameter(
            "need at least two seeds for a standard error".into(),
        ));
    }
    if epsilon * side as f64 != 1.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon * side = {} but the pairing lives on the unit torus; use epsilon = 1/side",
            epsilon * side as f64
        )));
    }

    let env = generate(model, d, side, master_seed, norm)?;
    ExclusionState::new(&env, vec![0; env.atom_count()])?;
    let intensity = env.sample_intensity();
    let effective = homog::effective_matrix(&env, corrector_tol)?;

    // Reference: spectral heat solve on the atom grid (atoms are indexed
    // in the same row-major site order the solver assumes), paired by
    // lattice Riemann sums, which are exact for trigonometric data.
    let dims = vec![side as usize; d];
    let total: usize = dims.iter().product();
    if total != env.atom_count() {
        return Err(Error::InvalidParameter(
            "hydrodynamic references need one atom per lattice site".into(),
        ));
    }
    let mut scaled = vec![0.0; d];
    let mut rho_grid = Vec::with_capacity(total);
    for x in 0..total {
        for (s, &c) in scaled.iter_mut().zip(env.position(x)) {
            *s = epsilon * c;
        }
        rho_grid.push(rho0.eval(&scaled));
    }
    let cell = 1.0 / total as f64;
    let mut references = Vec::with_capacity(t_grid.len() * phis.len());
    for &t in t_grid {
        let rho_t = refpde::heat_pde_torus(&effective.matrix, &rho_grid, &dims, t)?;
        for phi in phis {
            let mut acc = Kahan::new();
            for x in 0..total {
                for (s, &c) in scaled.iter_mut().zip(env.position(x)) {
                    *s = epsilon * c;
                }
                acc.add(rho_t[x] * phi.eval(&scaled));
            }
            references.push(intensity * cell * acc.total());
        }
    }

    // Replicas: independent initial data and dynamics on the shared
    // quenched environment; one trajectory visits every snapshot time.
    let per_seed: Vec<Vec<f64>> = (0..n_seeds)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let replica = rng::replica_seed(master_seed, k as u64);
            let mut init = Stream::keyed(&[replica, rng::tag::OCCUPATION]);
            let eta0 = bernoulli_field(&env, rho0, epsilon, &mut init)?;
            let mut state = ExclusionState::new(&env, eta0)?;
            let mut dynamics = Stream::keyed(&[replica, rng::tag::PATH]);
            let mut values = Vec::with_capacity(t_grid.len() * phis.len());
            for &t in t_grid {
                sep_run(&mut state, t, epsilon, &mut dynamics)?;
                for phi in phis {
                    values.push(empirical_profile(&state, epsilon, |x| phi.eval(x)));
                }
            }
            Ok(values)
        })
        .collect::<Result<_>>()?;

    let cells = t_grid.len() * phis.len();
    let mut rows = Vec::with_capacity(cells);
    for (cell_idx, &reference) in references.iter().enumerate() {
        let mut mean = Kahan::new();
        for seed_vals in &per_seed {
            mean.add(seed_vals[cell_idx]);
        }
        let mean = mean.total() / n_seeds as f64;
        let mut var = Kahan::new();
        for seed_vals in &per_seed {
            let dev = seed_vals[cell_idx] - mean;
            var.add(dev * dev);
        }
        let stderr = (var.total() / (n_seeds as f64 * (n_seeds as f64 - 1.0))).sqrt();
        rows.push(HydroRow {
            t: t_grid[cell_idx / phis.len()],
            phi: phis[cell_idx % phis.len()],
            empirical: mean,
            reference,
            gap: (mean - reference).abs(),
            stderr,
            n_seeds,
        });
    }
    Ok(HydroReport {
        rows,
        intensity,
        diffusion: effective.matrix.clone(),
        corrector_residual: effective.max_residual(),
    })
}
