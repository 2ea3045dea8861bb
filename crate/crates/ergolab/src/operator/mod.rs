//! The rescaled random-walk generator and its semigroup, resolvent, and
//! kinetic Monte Carlo side.
//!
//! On an environment with atoms `x`, multiplicities `n_x`, and symmetric
//! jump rates `r_{x,y} = c_{x,y} / n_x`, the diffusively rescaled generator
//! acts on functions of the rescaled positions `εx` by
//!
//! ```text
//! (L^ε f)(εx) = ε^{-2} Σ_y r_{x,y} ( f(εy) - f(εx) ).
//! ```
//!
//! The natural geometry is the weighted inner product
//! `⟨u, v⟩_{μ^ε} = Σ_x ε^d n_x u_x v_x`: detailed balance
//! `n_x r_{x,y} = n_y r_{y,x}` makes `L^ε` self-adjoint there, and
//! `λ - L^ε` symmetric positive definite for every `λ > 0`.
//!
//! # Exactness of the assembled matrix
//!
//! Multiplicities are powers of two, so `c / n_x` and every rescaling by
//! `ε^{-2}` or `ε^d` involves at most one rounding of the shared conductance
//! `c`. Concretely `mass_x · rate_{x,y}` evaluates to
//! `fl(ε^d · fl(ε^{-2} c))` for both orientations of an edge, which makes
//! the self-adjointness identity `mass_x L_{xy} = mass_y L_{yx}` hold
//! *bitwise*, not just approximately. Row sums vanish exactly because the
//! diagonal is stored as the negated sum of the off-diagonal entries in row
//! order, and [`SparseGenerator::apply`] uses the difference form
//! `Σ r (f_y - f_x)`, which maps constants to zero with no cancellation
//! error at all.
//!
//! # Semigroup by uniformization
//!
//! With `Λ = max_x` exit rate and `Q = I + L/Λ` (a stochastic matrix),
//!
//! ```text
//! P_t f = e^{-Λt} Σ_{k≥0} (Λt)^k / k! · Q^k f.
//! ```
//!
//! The series is truncated once the Poisson tail drops below the tolerance
//! and the kept weights are renormalized; the update is accumulated as
//! `f + Σ_k w_k (Q^k f - f)` so constants are conserved exactly and the
//! result stays inside `[min f, max f]` up to a few ulps. When `Λt` exceeds
//! an internal cap the time interval is halved (up to twenty levels, each
//! half inheriting half the error budget) before the cap is reported as an
//! error. Uniformization keeps the stochastic interpretation — positivity
//! and conservation hold structurally rather than by accident of a Krylov
//! basis.
//!
//! # Resolvent by preconditioned conjugate gradients
//!
//! `R_λ f = (λ - L^ε)^{-1} f` is computed by CG in the `μ^ε` inner product
//! with the diagonal (Jacobi) preconditioner `λ + exit rate`. Convergence is
//! declared on the recurrence residual and then re-verified against the true
//! residual `f - (λ - L^ε)u`; the reported residual is always the true one.
//!
//! # Path sampling
//!
//! [`simulate_path`] runs the classical Gillespie loop for the sped-up walk:
//! wait an exponential time with rate `ε^{-2} r_x`, then jump to a neighbor
//! chosen proportionally to its rate. Ensemble estimators fan paths out over
//! a thread pool with one counter-mode stream per path derived from the
//! master seed, so results are reproducible bit for bit regardless of thread
//! scheduling. [`msd_estimate`] tracks the *unwrapped* displacement (sums of
//! minimal-image edge displacements), which is the right notion on a torus
//! as long as the horizon stays within a few crossing times.

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use rayon::prelude::*;

#[cfg(test)]
mod tests;

/// Default relative tolerance for the resolvent and semigroup solvers.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-8;

/// Largest `Λ·t` handled by a single uniformization pass; longer horizons
/// are split into halves first.
const MAX_RATE_TIME: f64 = 256.0;

/// Maximum number of time-halving levels before `semigroup` gives up.
const MAX_SPLIT_LEVELS: u32 = 20;

/// Hard cap on conjugate-gradient iterations per solve.
const MAX_CG_ITERATIONS: usize = 200_000;

/// The operator `L^ε` on a fixed environment, stored row-compressed
/// together with the `μ^ε` masses.
///
/// Immutable after assembly; the diagonal is implicit (negated row sum).
#[derive(Debug, Clone)]
pub struct SparseGenerator {
    d: usize,
    epsilon: f64,
    /// Rescaled atom positions `εx`, `d` coordinates per state.
    positions: Vec<f64>,
    /// Weights `ε^d n_x` of the empirical measure `μ^ε`.
    masses: Vec<f64>,
    /// CSR row offsets into `cols` / `rates`.
    offsets: Vec<usize>,
    cols: Vec<usize>,
    /// Off-diagonal entries `ε^{-2} r_{x,y}`, non-negative.
    rates: Vec<f64>,
    /// Row sums of `rates`; the diagonal is `-exit[x]`.
    exit: Vec<f64>,
}

impl SparseGenerator {
    /// Number of states (atoms of the environment).
    #[must_use]
    pub fn state_count(&self) -> usize {
        self.masses.len()
    }

    /// Ambient dimension.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.d
    }

    /// The scale the generator was built at.
    #[must_use]
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Rescaled position `εx` of a state.
    #[must_use]
    pub fn position(&self, x: usize) -> &[f64] {
        &self.positions[x * self.d..(x + 1) * self.d]
    }

    /// Mass `ε^d n_x` of a state.
    #[must_use]
    pub fn mass(&self, x: usize) -> f64 {
        self.masses[x]
    }

    /// All state masses.
    #[must_use]
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Off-diagonal entries `(y, ε^{-2} r_{x,y})` of row `x`.
    pub fn row(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.offsets[x]..self.offsets[x + 1]).map(move |k| (self.cols[k], self.rates[k]))
    }

    /// Diagonal entry of row `x` (the negated exit rate).
    #[must_use]
    pub fn diagonal(&self, x: usize) -> f64 {
        -self.exit[x]
    }

    /// Total jump rate out of state `x`.
    #[must_use]
    pub fn exit_rate(&self, x: usize) -> f64 {
        self.exit[x]
    }

    /// Largest exit rate, the uniformization constant `Λ`.
    #[must_use]
    pub fn max_exit_rate(&self) -> f64 {
        self.exit.iter().fold(0.0f64, |m, &e| m.max(e))
    }

    /// Applies the generator in difference form, `(Lf)_x = Σ_y rate·(f_y - f_x)`.
    ///
    /// Constants map to exact zero.
    #[must_use]
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.apply_into(f, &mut out);
        out
    }

    fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        assert_eq!(f.len(), self.state_count(), "field length mismatch");
        for x in 0..self.state_count() {
            let fx = f[x];
            let mut acc = 0.0;
            for k in self.offsets[x]..self.offsets[x + 1] {
                acc += self.rates[k] * (f[self.cols[k]] - fx);
            }
            out[x] = acc;
        }
    }

    /// `out = λ f - L f`, the operator inverted by [`resolvent`].
    fn apply_shifted_into(&self, lambda: f64, f: &[f64], out: &mut [f64]) {
        self.apply_into(f, out);
        for (o, &v) in out.iter_mut().zip(f) {
            *o = lambda * v - *o;
        }
    }

    /// Weighted inner product `Σ mass_x u_x v_x` (compensated summation).
    #[must_use]
    pub fn mu_dot(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut acc = crate::ergodic::Kahan::new();
        for x in 0..self.state_count() {
            acc.add(self.masses[x] * u[x] * v[x]);
        }
        acc.total()
    }

    /// Weighted norm `‖u‖_{μ^ε}`.
    #[must_use]
    pub fn mu_norm(&self, u: &[f64]) -> f64 {
        self.mu_dot(u, u).max(0.0).sqrt()
    }
}

/// Assembles `L^ε` from an environment.
///
/// The environment must be connected; `ε` must lie in `(0, 1]`. Off-diagonal
/// entries are `ε^{-2} r_{x,y}`, masses are `ε^d n_x`, positions are `εx`.
pub fn build_generator(env: &Environment, epsilon: f64) -> Result<SparseGenerator> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "generator scale epsilon = {epsilon} must lie in (0, 1]"
        )));
    }
    if !env.connected {
        return Err(Error::InvalidParameter(
            "generator requires a connected environment".into(),
        ));
    }
    let d = env.torus.d;
    let n = env.atom_count();
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    let eps_d = epsilon.powi(d as i32);

    let mut positions = Vec::with_capacity(n * d);
    for x in 0..n {
        positions.extend(env.position(x).iter().map(|&c| epsilon * c));
    }
    let masses: Vec<f64> = env.multiplicity.iter().map(|&m| eps_d * m).collect();

    let adj = env.adjacency();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(adj.entry_count());
    let mut rates = Vec::with_capacity(adj.entry_count());
    let mut exit = Vec::with_capacity(n);
    offsets.push(0);
    for x in 0..n {
        let mut row_sum = 0.0;
        for (y, r, _) in adj.row(x) {
            let scaled = inv_eps2 * r;
            cols.push(y);
            rates.push(scaled);
            row_sum += scaled;
        }
        exit.push(row_sum);
        offsets.push(cols.len());
    }

    Ok(SparseGenerator {
        d,
        epsilon,
        positions,
        masses,
        offsets,
        cols,
        rates,
        exit,
    })
}

/// Outcome of a resolvent solve.
#[derive(Debug, Clone)]
pub struct ResolventSolution {
    /// The solution `u = (λ - L^ε)^{-1} f` on the states.
    pub values: Vec<f64>,
    /// Conjugate-gradient iterations spent.
    pub iterations: usize,
    /// True `μ^ε`-weighted residual norm `‖f - (λ - L^ε)u‖_{μ^ε}`.
    pub residual: f64,
}

/// Solves `(λ - L^ε) u = f` by Jacobi-preconditioned conjugate gradients in
/// the `μ^ε` inner product.
///
/// Converges when the residual norm drops below `tol · ‖f‖_{μ^ε}`; the
/// stopping test is confirmed against the explicitly recomputed residual, so
/// the reported [`ResolventSolution::residual`] is trustworthy.
pub fn resolvent(
    gen: &SparseGenerator,
    lambda: f64,
    f: &[f64],
    tol: f64,
) -> Result<ResolventSolution> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "resolvent shift lambda = {lambda} must be positive and finite"
        )));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter(format!("solver tolerance {tol}")));
    }
    let n = gen.state_count();
    if f.len() != n {
        return Err(Error::InvalidParameter(format!(
            "field has {} entries for {} states",
            f.len(),
            n
        )));
    }

    let b_norm = gen.mu_norm(f);
    if b_norm == 0.0 {
        return Ok(ResolventSolution {
            values: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let target = tol * b_norm;
    // Diagonal of λ - L in the unweighted sense; diagonal operators are
    // self-adjoint in the weighted product too, so plain PCG applies.
    let precond: Vec<f64> = gen.exit.iter().map(|&e| lambda + e).collect();

    let mut x = vec![0.0; n];
    let mut r = f.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(&ri, &m)| ri / m).collect();
    let mut p = z.clone();
    let mut rz = gen.mu_dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0usize;

    loop {
        if iterations >= MAX_CG_ITERATIONS {
            return Err(Error::SolverFailure {
                context: format!("resolvent CG at lambda = {lambda}"),
                residual: gen.mu_norm(&r) / b_norm,
                iterations,
            });
        }
        iterations += 1;
        gen.apply_shifted_into(lambda, &p, &mut ap);
        let pap = gen.mu_dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SolverFailure {
                context: format!("resolvent CG lost positive definiteness at lambda = {lambda}"),
                residual: gen.mu_norm(&r) / b_norm,
                iterations,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if gen.mu_norm(&r) <= target {
            // Confirm on the true residual; the recurrence can drift.
            gen.apply_shifted_into(lambda, &x, &mut ap);
            let true_r: Vec<f64> = f.iter().zip(&ap).map(|(&fi, &ai)| fi - ai).collect();
            let true_norm = gen.mu_norm(&true_r);
            if true_norm <= target {
                return Ok(ResolventSolution {
                    values: x,
                    iterations,
                    residual: true_norm,
                });
            }
            // Restart from the true residual and keep iterating.
            r = true_r;
            z.iter_mut()
                .zip(r.iter().zip(&precond))
                .for_each(|(zi, (&ri, &m))| *zi = ri / m);
            p.copy_from_slice(&z);
            rz = gen.mu_dot(&r, &z);
            continue;
        }
        let rz_next = {
            z.iter_mut()
                .zip(r.iter().zip(&precond))
                .for_each(|(zi, (&ri, &m))| *zi = ri / m);
            gen.mu_dot(&r, &z)
        };
        let beta = rz_next / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_next;
    }
}

/// Applies the semigroup, `P^ε_t f`, by uniformization.
///
/// The truncation error is at most `tol · ‖f‖_∞`. Horizons with `Λ·t`
/// beyond an internal cap are split into halves automatically (up to twenty
/// levels); beyond that the call fails with a suggestion to split further.
pub fn semigroup(gen: &SparseGenerator, t: f64, f: &[f64], tol: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "semigroup time {t} must be finite and nonnegative"
        )));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter(format!("solver tolerance {tol}")));
    }
    if f.len() != gen.state_count() {
        return Err(Error::InvalidParameter(format!(
            "field has {} entries for {} states",
            f.len(),
            gen.state_count()
        )));
    }

    let lambda = gen.max_exit_rate();
    if t == 0.0 || lambda * t == 0.0 {
        return Ok(f.to_vec());
    }
    let mut levels = 0u32;
    while lambda * t / f64::from(1u32 << levels) > MAX_RATE_TIME {
        levels += 1;
        if levels > MAX_SPLIT_LEVELS {
            return Err(Error::InvalidParameter(format!(
                "uniformization horizon rate*t = {} still too long after {MAX_SPLIT_LEVELS} \
                 halvings; split the time interval externally",
                lambda * t
            )));
        }
    }
    let steps = 1u64 << levels;
    let t_sub = t / steps as f64;
    let tol_sub = tol / steps as f64;

    let mut v = f.to_vec();
    for _ in 0..steps {
        v = uniformization_step(gen, lambda, t_sub, &v, tol_sub)?;
    }
    Ok(v)
}

/// One uniformization pass with `Λ · t ≤ MAX_RATE_TIME`.
///
/// Accumulates `f + Σ_k w_k (Q^k f - f)` with renormalized Poisson weights
/// `w_k`; a constant input passes through bit-identically.
fn uniformization_step(
    gen: &SparseGenerator,
    lambda: f64,
    t: f64,
    f: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let a = lambda * t;
    // Half the budget covers the dropped tail, half the renormalization
    // shift (both are bounded by the tail mass).
    let tail_target = 0.5 * tol;
    let mut weights = Vec::with_capacity(64);
    let mut term = (-a).exp();
    let mut cumulative = term;
    weights.push(term);
    let mut k = 0u64;
    while 1.0 - cumulative > tail_target {
        k += 1;
        if k > 20_000 {
            return Err(Error::InvalidParameter(format!(
                "Poisson series for rate*t = {a} failed to reach tolerance {tol}"
            )));
        }
        term *= a / k as f64;
        cumulative += term;
        weights.push(term);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }

    let n = gen.state_count();
    let inv_lambda = 1.0 / lambda;
    let mut delta = vec![0.0; n]; // Σ_k w_k (Q^k f - f); the k = 0 term vanishes.
    let mut v = f.to_vec();
    let mut next = vec![0.0; n];
    for &w in &weights[1..] {
        // next = Q v = v + L v / Λ, in difference form.
        for x in 0..n {
            let vx = v[x];
            let mut acc = 0.0;
            for kk in gen.offsets[x]..gen.offsets[x + 1] {
                acc += gen.rates[kk] * (v[gen.cols[kk]] - vx);
            }
            next[x] = vx + inv_lambda * acc;
        }
        std::mem::swap(&mut v, &mut next);
        for x in 0..n {
            delta[x] += w * (v[x] - f[x]);
        }
    }
    Ok(f.iter().zip(&delta).map(|(&fx, &dx)| fx + dx).collect())
}

/// A sampled continuous-time walk.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Jump times, starting at `0`.
    pub times: Vec<f64>,
    /// Atom occupied from the matching time onward.
    pub atoms: Vec<usize>,
    /// Horizon the walk was run to.
    pub end_time: f64,
}

impl Trajectory {
    /// Atom occupied at the horizon.
    #[must_use]
    pub fn final_atom(&self) -> usize {
        *self.atoms.last().expect("trajectory has a start state")
    }

    /// Number of jumps taken.
    #[must_use]
    pub fn jump_count(&self) -> usize {
        self.atoms.len() - 1
    }
}

/// Sampling tables for the embedded jump chain: per-row cumulative rate
/// prefixes plus displacement data for unwrapped tracking.
struct WalkTables {
    d: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    /// Cumulative unscaled rates within each row; the row total is last.
    prefix: Vec<f64>,
    /// Minimal-image displacements, `d` entries per edge.
    disps: Vec<f64>,
    /// Unscaled exit rates `r_x`.
    exit: Vec<f64>,
}

impl WalkTables {
    fn build(env: &Environment) -> WalkTables {
        let d = env.torus.d;
        let n = env.atom_count();
        let adj = env.adjacency();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(adj.entry_count());
        let mut prefix = Vec::with_capacity(adj.entry_count());
        let mut disps = Vec::with_capacity(adj.entry_count() * d);
        let mut exit = Vec::with_capacity(n);
        offsets.push(0);
        for x in 0..n {
            let mut cum = 0.0;
            for (y, r, disp) in adj.row(x) {
                cum += r;
                targets.push(y);
                prefix.push(cum);
                disps.extend_from_slice(disp);
            }
            exit.push(cum);
            offsets.push(targets.len());
        }
        WalkTables {
            d,
            offsets,
            targets,
            prefix,
            disps,
            exit,
        }
    }

    /// Runs one walk until `t_final`, reporting each jump as
    /// `(jump_time, new_atom, edge_displacement)`. Holding times use the
    /// sped-up rates `inv_eps2 · r_x`.
    fn walk<F: FnMut(f64, usize, &[f64])>(
        &self,
        inv_eps2: f64,
        start: usize,
        t_final: f64,
        stream: &mut Stream,
        mut jump: F,
    ) {
        let mut atom = start;
        let mut t = 0.0;
        loop {
            let rate = inv_eps2 * self.exit[atom];
            if rate <= 0.0 {
                return; // isolated state: the walk never moves again
            }
            t += stream.exponential(rate);
            if t > t_final {
                return;
            }
            let lo = self.offsets[atom];
            let hi = self.offsets[atom + 1];
            let local = stream.pick_by_prefix(&self.prefix[lo..hi]);
            let edge = lo + local;
            atom = self.targets[edge];
            jump(t, atom, &self.disps[edge * self.d..(edge + 1) * self.d]);
        }
    }
}

/// Samples one Gillespie trajectory of the sped-up walk (rates `ε^{-2} r_x`).
///
/// Reproducible: the seed fully determines the path.
pub fn simulate_path(
    env: &Environment,
    epsilon: f64,
    start: usize,
    t_final: f64,
    seed: u64,
) -> Result<Trajectory> {
    validate_walk_inputs(env, epsilon, t_final)?;
    if start >= env.atom_count() {
        return Err(Error::InvalidParameter(format!(
            "start atom {start} out of range ({} atoms)",
            env.atom_count()
        )));
    }
    let tables = WalkTables::build(env);
    let mut stream = Stream::keyed(&[seed, rng::tag::PATH]);
    let mut times = vec![0.0];
    let mut atoms = vec![start];
    tables.walk(
        1.0 / (epsilon * epsilon),
        start,
        t_final,
        &mut stream,
        |t, atom, _| {
            times.push(t);
            atoms.push(atom);
        },
    );
    Ok(Trajectory {
        times,
        atoms,
        end_time: t_final,
    })
}

/// Monte Carlo estimate of the occupation law at a fixed time.
#[derive(Debug, Clone)]
pub struct OccupancyEstimate {
    /// Fraction of paths ending at each atom.
    pub probabilities: Vec<f64>,
    /// Number of sampled paths.
    pub n_paths: u64,
}

/// Estimates `P(X_{t} = ·)` for the sped-up walk started at `start` by
/// sampling `n_paths` independent trajectories.
///
/// Path `k` draws from a stream keyed by the `k`-th replica seed, so the
/// estimate is independent of thread scheduling.
pub fn path_occupancy(
    env: &Environment,
    epsilon: f64,
    start: usize,
    t_final: f64,
    n_paths: u64,
    master_seed: u64,
) -> Result<OccupancyEstimate> {
    validate_walk_inputs(env, epsilon, t_final)?;
    if start >= env.atom_count() {
        return Err(Error::InvalidParameter(format!(
            "start atom {start} out of range ({} atoms)",
            env.atom_count()
        )));
    }
    if n_paths == 0 {
        return Err(Error::InvalidParameter("occupancy needs paths".into()));
    }
    let tables = WalkTables::build(env);
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    let finals: Vec<usize> = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            let mut stream = Stream::keyed(&[rng::replica_seed(master_seed, k), rng::tag::PATH]);
            let mut atom = start;
            tables.walk(inv_eps2, start, t_final, &mut stream, |_, a, _| atom = a);
            atom
        })
        .collect();
    let mut counts = vec![0u64; env.atom_count()];
    for a in finals {
        counts[a] += 1;
    }
    Ok(OccupancyEstimate {
        probabilities: counts
            .into_iter()
            .map(|c| c as f64 / n_paths as f64)
            .collect(),
        n_paths,
    })
}

/// Mean squared displacement estimate over an ensemble of walks.
#[derive(Debug, Clone)]
pub struct MsdEstimate {
    /// `E |εX_{t}|² / t` averaged over paths and the checkpoint window.
    pub msd_over_t: f64,
    /// Standard error of the path average.
    pub stderr: f64,
    /// Mean number of jumps per path.
    pub mean_jumps: f64,
    /// Standard error of the jump count.
    pub jumps_stderr: f64,
    /// Per-checkpoint `(time, mean |εX_t|²/t)` diagnostics.
    pub checkpoints: Vec<(f64, f64)>,
}

/// Estimates the diffusive rate `E|εX_t|²/t` of the sped-up walk.
///
/// Starts are drawn from the stationary law (mass-proportional); the
/// squared unwrapped displacement is sampled at the four checkpoint times
/// `T/4, T/2, 3T/4, T` and averaged, which damps the per-path noise without
/// biasing the diffusive slope.
pub fn msd_estimate(
    env: &Environment,
    epsilon: f64,
    t_final: f64,
    n_paths: u64,
    master_seed: u64,
) -> Result<MsdEstimate> {
    validate_walk_inputs(env, epsilon, t_final)?;
    if !(t_final > 0.0) {
        return Err(Error::InvalidParameter(
            "displacement estimate needs a positive horizon".into(),
        ));
    }
    if n_paths < 2 {
        return Err(Error::InvalidParameter(
            "displacement estimate needs at least two paths".into(),
        ));
    }
    let d = env.torus.d;
    let tables = WalkTables::build(env);
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    let eps2 = epsilon * epsilon;
    let mass_prefix: Vec<f64> = env
        .multiplicity
        .iter()
        .scan(0.0, |cum, &m| {
            *cum += m;
            Some(*cum)
        })
        .collect();
    let checkpoint_times: Vec<f64> = (1..=4).map(|j| t_final * j as f64 / 4.0).collect();

    // Per path: the checkpoint-averaged |εX|²/t and the jump count.
    let samples: Vec<(Vec<f64>, f64)> = (0..n_paths)
        .into_par_iter()
        .map(|k| {
            let mut stream = Stream::keyed(&[rng::replica_seed(master_seed, k), rng::tag::PATH]);
            let start = stream.pick_by_prefix(&mass_prefix);
            let mut pos = vec![0.0f64; d];
            let mut at_checkpoints = vec![0.0f64; checkpoint_times.len()];
            let mut next_cp = 0usize;
            let mut jumps = 0u64;
            tables.walk(inv_eps2, start, t_final, &mut stream, |t, _, disp| {
                while next_cp < checkpoint_times.len() && checkpoint_times[next_cp] < t {
                    at_checkpoints[next_cp] = sq_norm(&pos);
                    next_cp += 1;
                }
                for (p, &dx) in pos.iter_mut().zip(disp) {
                    *p += dx;
                }
                jumps += 1;
            });
            let tail = sq_norm(&pos);
            for slot in &mut at_checkpoints[next_cp..] {
                *slot = tail;
            }
            let per_cp: Vec<f64> = at_checkpoints
                .iter()
                .zip(&checkpoint_times)
                .map(|(&sq, &tc)| eps2 * sq / tc)
                .collect();
            (per_cp, jumps as f64)
        })
        .collect();

    let n = n_paths as f64;
    let mut cp_means = vec![crate::ergodic::Kahan::new(); checkpoint_times.len()];
    let mut mean_acc = crate::ergodic::Kahan::new();
    let mut jump_acc = crate::ergodic::Kahan::new();
    for (per_cp, jumps) in &samples {
        for (acc, &v) in cp_means.iter_mut().zip(per_cp) {
            acc.add(v);
        }
        mean_acc.add(per_cp.iter().sum::<f64>() / per_cp.len() as f64);
        jump_acc.add(*jumps);
    }
    let msd_over_t = mean_acc.total() / n;
    let mean_jumps = jump_acc.total() / n;
    let mut var_acc = crate::ergodic::Kahan::new();
    let mut jump_var_acc = crate::ergodic::Kahan::new();
    for (per_cp, jumps) in &samples {
        let avg = per_cp.iter().sum::<f64>() / per_cp.len() as f64;
        var_acc.add((avg - msd_over_t).powi(2));
        jump_var_acc.add((jumps - mean_jumps).powi(2));
    }
    let stderr = (var_acc.total() / (n * (n - 1.0))).sqrt();
    let jumps_stderr = (jump_var_acc.total() / (n * (n - 1.0))).sqrt();
    let checkpoints = checkpoint_times
        .iter()
        .zip(&cp_means)
        .map(|(&tc, acc)| (tc, acc.total() / n))
        .collect();
    Ok(MsdEstimate {
        msd_over_t,
        stderr,
        mean_jumps,
        jumps_stderr,
        checkpoints,
    })
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|&x| x * x).sum()
}

fn validate_walk_inputs(env: &Environment, epsilon: f64, t_final: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "walk scale epsilon = {epsilon} must lie in (0, 1]"
        )));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "walk horizon {t_final} must be finite and nonnegative"
        )));
    }
    if env.atom_count() == 0 {
        return Err(Error::InvalidParameter("environment has no atoms".into()));
    }
    Ok(())
}
