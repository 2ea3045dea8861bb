//! Weighted multidimensional lattice averages and their maximal function.
//!
//! The central object is the weighted average of a scalar field `f` over the
//! integer lattice,
//!
//! ```text
//!     W_n(f) = n^{-d} · Σ_{j ∈ Z^d}  ψ(j/n) · f(j),
//! ```
//!
//! where the weight `ψ : R^d → R` is dominated by a radially non-increasing
//! envelope, `|ψ(x)| ≤ ϑ(|x|_κ)`. For a summability witness
//! `ρ(m) = (1+m)^{-1-δ}` the envelope is *d-good* when
//!
//! ```text
//!     Σ_{m ≥ 0}  m^{2d} · ϑ(m) / ρ(m)  <  ∞,
//! ```
//!
//! which for the power family `ϑ(r) = c(1+r)^{-β}` amounts to `β > 2d + 2`
//! (with any `0 < δ < β - 2d - 2`). Under that condition, together with the
//! vanishing of the discrete smoothness defect
//! `n^{-d} Σ_j |ψ(j/n) - ψ((j+e_i)/n)| → 0` and the convergence of the pure
//! weight sum `c_ψ(n) = n^{-d} Σ_j ψ(j/n)`, the averages of a stationary
//! field converge to `c_ψ · E[f | invariant σ-field]`, and the associated
//! maximal function `sup_n W_n(f)` (for `f ≥ 0`) satisfies a weak (1,1)
//! bound `P(sup_n W_n > α) ≤ C ‖f‖₁ / α`.
//!
//! Everything here is fully deterministic: the infinite sums are truncated
//! at a radius derived from a closed-form envelope tail bound, the bound is
//! reported next to every value, and summation order is a fixed
//! lexicographic sweep of the truncation ball with Kahan compensation.
//!
//! The greedy disjoint-translate covering construction that underlies the
//! maximal inequality lives in the [`covering`] types re-exported below.

mod covering;

pub use covering::{
    covering_random_trials, covering_select, CoveringCertificate, CoveringTrial, InstanceRecord,
    NestedSets, Selection,
};

use crate::env::{FieldLaw, ScalarField};
use crate::error::{Error, Result};
use crate::geom::{for_each_lattice_ball, BallBudget, Norm};
use crate::rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Tail mass target for the pure weight sums `c_ψ(n)` and the smoothness
/// defect: the neglected part of the sum is certified below this.
pub const WEIGHT_TAIL_TARGET: f64 = 1e-10;

/// Tail target for field averages: the truncation radius is chosen so that
/// `M · (envelope tail) < FIELD_TAIL_TARGET` where `M` bounds `|f|`.
pub const FIELD_TAIL_TARGET: f64 = 1e-8;

/// Default exponent offset for the summability witness `ρ(m) = (1+m)^{-1-δ}`.
pub const DEFAULT_DELTA: f64 = 0.1;

/// Weight functions `ψ : R^d → R`, each with a closed-form envelope.
///
/// All families are non-negative, so the `|ψ|`-weighted sums used by the
/// maximal function coincide with the plain ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Psi {
    /// `ψ(x) = (1 + |x|_κ)^{-β}` — the norm is the one carried by the
    /// enclosing [`WeightSpec`].
    InversePower {
        /// Decay exponent; must exceed `2d + 2` for a d-good envelope.
        beta: f64,
    },
    /// `ψ(x) = exp(-α |x|₂²)`.
    GaussExp {
        /// Quadratic decay rate, `α > 0`.
        alpha: f64,
    },
    /// Indicator of the half-open unit box `[0,1)^d`.
    UnitBoxIndicator,
    /// `ψ(x) = cos²(π |x|_κ / (2r))` for `|x|_κ ≤ r`, zero outside —
    /// a smooth compactly supported bump with Lipschitz constant `π/(2r)·…`
    /// bounded by `π/r`.
    CosineBump {
        /// Support radius `r > 0`.
        radius: f64,
    },
    /// The zero weight (degenerate checks).
    Zero,
}

impl Psi {
    /// Evaluates `ψ(x)` with the norm `κ` used for radial families.
    #[must_use]
    pub fn eval(&self, x: &[f64], norm: Norm) -> f64 {
        match self {
            Psi::InversePower { beta } => {
                let t = 1.0 + norm.eval(x);
                power_decay(t, *beta)
            }
            Psi::GaussExp { alpha } => {
                let s2: f64 = x.iter().map(|a| a * a).sum();
                (-alpha * s2).exp()
            }
            Psi::UnitBoxIndicator => {
                if x.iter().all(|&a| (0.0..1.0).contains(&a)) {
                    1.0
                } else {
                    0.0
                }
            }
            Psi::CosineBump { radius } => {
                let r = norm.eval(x);
                if r >= *radius {
                    0.0
                } else {
                    let c = (std::f64::consts::FRAC_PI_2 * r / radius).cos();
                    c * c
                }
            }
            Psi::Zero => 0.0,
        }
    }

    /// Hot-path evaluation of `ψ(j/n)` straight from lattice coordinates.
    #[inline]
    fn eval_scaled(&self, j: &[i64], inv_n: f64, norm: Norm) -> f64 {
        match self {
            Psi::InversePower { beta } => {
                let t = 1.0 + norm.eval_int(j) * inv_n;
                power_decay(t, *beta)
            }
            Psi::GaussExp { alpha } => {
                let s2: f64 = j.iter().map(|&a| (a * a) as f64).sum();
                (-alpha * s2 * inv_n * inv_n).exp()
            }
            Psi::UnitBoxIndicator => {
                if j.iter().all(|&a| {
                    let x = a as f64 * inv_n;
                    (0.0..1.0).contains(&x)
                }) {
                    1.0
                } else {
                    0.0
                }
            }
            Psi::CosineBump { radius } => {
                let r = norm.eval_int(j) * inv_n;
                if r >= *radius {
                    0.0
                } else {
                    let c = (std::f64::consts::FRAC_PI_2 * r / radius).cos();
                    c * c
                }
            }
            Psi::Zero => 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Psi::InversePower { beta } => beta.is_finite() && *beta > 0.0,
            Psi::GaussExp { alpha } => alpha.is_finite() && *alpha > 0.0,
            Psi::CosineBump { radius } => radius.is_finite() && *radius > 0.0,
            Psi::UnitBoxIndicator | Psi::Zero => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("weight family {self:?}")))
        }
    }
}

/// `t^{-beta}` with a fast path for integer exponents.
#[inline]
fn power_decay(t: f64, beta: f64) -> f64 {
    if beta.fract() == 0.0 && beta.abs() <= 64.0 {
        t.powi(beta as i32).recip()
    } else {
        t.powf(-beta)
    }
}

/// Radially non-increasing envelope `ϑ : R₊ → R₊` with closed-form tail
/// integrals, derived from the weight family at [`WeightSpec`] build time.
#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    /// `ϑ(r) = c (1+r)^{-β}`.
    Power {
        /// Scale in front of the power law.
        c: f64,
        /// Decay exponent.
        beta: f64,
    },
    /// `ϑ(r) = c exp(-r² / (2σ²))`.
    Gaussian {
        /// Scale in front of the Gaussian.
        c: f64,
        /// Variance parameter `σ²`.
        sigma2: f64,
    },
    /// `ϑ(r) = c` for `r ≤ radius`, zero beyond.
    Compact {
        /// Plateau height.
        c: f64,
        /// Support radius.
        radius: f64,
    },
}

impl Envelope {
    /// Evaluates `ϑ(r)`.
    #[must_use]
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Envelope::Power { c, beta } => c * power_decay(1.0 + r, *beta),
            Envelope::Gaussian { c, sigma2 } => c * (-r * r / (2.0 * sigma2)).exp(),
            Envelope::Compact { c, radius } => {
                if r <= *radius {
                    *c
                } else {
                    0.0
                }
            }
        }
    }

    /// Upper bound on the lattice tail `n^{-d} Σ_{|j|_κ > R} ϑ(|j|_κ / n)`.
    ///
    /// Each lattice point beyond radius `R` owns a unit cube whose points sit
    /// within norm-distance `Δ ≤ d` of it, so the sum is dominated by
    /// `S_κ(d) ∫_a^∞ (u+d)^{d-1} ϑ(u) du` with `a = (R - 2d)/n` and
    /// `S_κ(d) = d · vol(unit κ-ball)`. For the power family the integral is
    /// elementary; for the Gaussian it is bounded through
    /// `exp(-u²/2σ²) ≤ exp(-au/2σ²)` and an incomplete-gamma closed form.
    /// Returns `+∞` when `R` is too small for the bound to apply.
    #[must_use]
    pub fn lattice_tail_bound(&self, d: usize, norm: Norm, n: u32, radius: i64) -> f64 {
        let surface = d as f64 * norm.unit_ball_volume(d);
        let delta = d as f64;
        let a = (radius as f64 - 2.0 * delta) / f64::from(n);
        match self {
            Envelope::Compact { c, radius: rho } => {
                if *c == 0.0 || radius as f64 > rho * f64::from(n) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Envelope::Power { c, beta } => {
                if a <= 0.0 {
                    return f64::INFINITY;
                }
                let db = d as f64 - beta;
                surface * c * delta.powi(d as i32 - 1) * (1.0 + a).powf(db) / (beta - d as f64)
            }
            Envelope::Gaussian { c, sigma2 } => {
                if a <= 0.0 {
                    return f64::INFINITY;
                }
                // S c (d-1)! λ^{-d} e^{-λa} Σ_{k<d} (λ(a+Δ))^k / k!,  λ = a/(2σ²)
                let lambda = a / (2.0 * sigma2);
                let x = lambda * (a + delta);
                let mut poly = 0.0;
                let mut term = 1.0;
                for k in 0..d {
                    if k > 0 {
                        term *= x / k as f64;
                    }
                    poly += term;
                }
                let factorial: f64 = (1..d).map(|k| k as f64).product();
                surface * c * factorial * lambda.powi(-(d as i32)) * (-lambda * a).exp() * poly
            }
        }
    }

    /// Certified finite upper bound for `Σ_{m≥0} m^{2d} ϑ(m) (1+m)^{1+δ}`,
    /// the d-good series with witness `ρ(m) = (1+m)^{-1-δ}`.
    fn dgood_series_bound(&self, d: usize, delta: f64) -> Result<f64> {
        let p = 2 * d; // m^{2d}
        let term = |m: f64| -> f64 { m.powi(p as i32) * self.eval(m) * (1.0 + m).powf(1.0 + delta) };
        match self {
            Envelope::Compact { radius, .. } => {
                let top = radius.ceil() as i64;
                Ok((0..=top).map(|m| term(m as f64)).sum())
            }
            Envelope::Power { c, beta } => {
                // terms ≤ c (1+m)^{2d+1+δ-β}; need β > 2d + 2 + δ … remainder
                // past M is an integral of (1+t)^{-s}, s = β - 2d - 1 - δ.
                let s = beta - (p as f64 + 1.0 + delta);
                if s <= 1.0 {
                    return Err(Error::MomentCondition(format!(
                        "power envelope beta={beta} is not {d}-good with delta={delta} \
                         (needs beta > {})",
                        p as f64 + 2.0 + delta
                    )));
                }
                let cap = 4000i64;
                let partial: f64 = (0..=cap).map(|m| term(m as f64)).sum();
                let remainder = c * (1.0 + cap as f64).powf(1.0 - s) / (s - 1.0);
                Ok(partial + remainder)
            }
            Envelope::Gaussian { sigma2, .. } => {
                // grow M until the term ratio is ≤ 1/2, then sum a geometric tail
                let mut cap = (10.0 + 4.0 * sigma2 * (p as f64 + 2.0)).ceil() as i64;
                loop {
                    let m = cap as f64;
                    let ratio = ((m + 2.0) / (m + 1.0)).powi(p as i32)
                        * ((m + 3.0) / (m + 2.0)).powf(1.0 + delta)
                        * (-(2.0 * m + 3.0) / (2.0 * sigma2)).exp();
                    if ratio <= 0.5 {
                        break;
                    }
                    cap *= 2;
                }
                let partial: f64 = (0..=cap).map(|m| term(m as f64)).sum();
                Ok(partial + 2.0 * term(cap as f64 + 1.0))
            }
        }
    }
}

/// A weight function together with its certified d-good envelope.
///
/// Construction fails unless the envelope's d-good series is certifiably
/// finite for the witness exponent `δ`; for power envelopes with
/// `β ≤ 2d + 2` no `δ > 0` works and a moment-condition error is returned.
/// When the default `δ` is too large for a given `β` it is shrunk to
/// `(β - 2d - 2)/2`, and the value actually certified is reported by
/// [`WeightSpec::delta`].
#[derive(Debug, Clone)]
pub struct WeightSpec {
    psi: Psi,
    envelope: Envelope,
    norm: Norm,
    d: usize,
    delta: f64,
    dgood_bound: f64,
}

impl WeightSpec {
    /// Builds a weight spec with the default witness exponent.
    pub fn new(psi: Psi, norm: Norm, d: usize) -> Result<Self> {
        WeightSpec::with_delta(psi, norm, d, DEFAULT_DELTA)
    }

    /// Builds a weight spec with an explicit witness exponent `δ > 0`.
    pub fn with_delta(psi: Psi, norm: Norm, d: usize, delta: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!("witness exponent delta={delta}")));
        }
        psi.validate()?;
        let envelope = derive_envelope(&psi, norm, d);
        let mut delta = delta;
        if let Envelope::Power { beta, .. } = envelope {
            let slack = beta - (2 * d) as f64 - 2.0;
            if slack <= 0.0 {
                return Err(Error::MomentCondition(format!(
                    "power weight beta={beta} needs beta > {} in dimension {d}",
                    (2 * d) as f64 + 2.0
                )));
            }
            if delta >= slack {
                delta = slack / 2.0;
            }
        }
        let dgood_bound = envelope.dgood_series_bound(d, delta)?;
        Ok(WeightSpec { psi, envelope, norm, d, delta, dgood_bound })
    }

    /// The weight function.
    #[must_use]
    pub fn psi(&self) -> &Psi {
        &self.psi
    }

    /// The derived envelope.
    #[must_use]
    pub fn envelope(&self) -> &Envelope {
        &self.envelope
    }

    /// Norm used for radial evaluation and truncation balls.
    #[must_use]
    pub fn norm(&self) -> Norm {
        self.norm
    }

    /// Lattice dimension.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Witness exponent actually certified (possibly shrunk from the request).
    #[must_use]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Certified finite bound on the d-good series `Σ m^{2d} ϑ(m)/ρ(m)`.
    #[must_use]
    pub fn dgood_bound(&self) -> f64 {
        self.dgood_bound
    }

    /// Closed-form limit `c_ψ = ∫ ψ(x) dx` where one exists for the family.
    #[must_use]
    pub fn c_limit(&self) -> Option<f64> {
        match &self.psi {
            Psi::InversePower { beta } => {
                // ∫ (1+|x|)^{-β} dx = S_κ(d) ∫₀^∞ r^{d-1} (1+r)^{-β} dr
                //                   = S_κ(d) · (d-1)! / ((β-d)(β-d+1)⋯(β-1))
                let d = self.d as f64;
                if *beta <= d {
                    return None;
                }
                let surface = d * self.norm.unit_ball_volume(self.d);
                let num: f64 = (1..self.d).map(|k| k as f64).product();
                let den: f64 = (0..self.d).map(|i| beta - d + i as f64).product();
                Some(surface * num / den)
            }
            Psi::GaussExp { alpha } => Some((std::f64::consts::PI / alpha).powf(self.d as f64 / 2.0)),
            Psi::UnitBoxIndicator => Some(1.0),
            Psi::CosineBump { radius } if self.d == 1 => Some(*radius),
            Psi::CosineBump { .. } => None,
            Psi::Zero => Some(0.0),
        }
    }

    /// Smallest truncation radius whose certified tail bound is below
    /// `target`, together with that bound. The radius is found by doubling
    /// then bisecting on the monotone closed-form bound.
    pub fn truncation_radius(&self, n: u32, target: f64) -> Result<(i64, f64)> {
        if n == 0 {
            return Err(Error::InvalidParameter("scale n must be positive".into()));
        }
        if let Envelope::Compact { radius, c } = self.envelope {
            if c == 0.0 {
                return Ok((0, 0.0));
            }
            // cover the whole support: every |j| ≤ n·radius contributes
            let r = (radius * f64::from(n)).floor() as i64 + 1;
            return Ok((r, 0.0));
        }
        let bound = |r: i64| self.envelope.lattice_tail_bound(self.d, self.norm, n, r);
        let mut hi = (2 * self.d + 1) as i64;
        let mut guard = 0;
        while bound(hi) > target {
            hi *= 2;
            guard += 1;
            if guard > 60 {
                return Err(Error::EnvelopeTail(format!(
                    "tail target {target:.3e} unattainable for {:?}",
                    self.envelope
                )));
            }
        }
        let mut lo = (hi / 2).max((2 * self.d) as i64);
        while lo + 1 < hi {
            let mid = lo + (hi - lo) / 2;
            if bound(mid) <= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok((hi, bound(hi)))
    }

    /// Randomized check that the envelope dominates `|ψ|` on sample points.
    ///
    /// Draws `samples` uniform points from `[-range, range]^d` and verifies
    /// `|ψ(x)| ≤ ϑ(|x|) + 1e-15`; returns `false` on the first violation.
    #[must_use]
    pub fn envelope_dominates(&self, samples: usize, range: f64, seed: u64) -> bool {
        let mut stream = rng::Stream::keyed(&[seed, 0x656e76]);
        let mut x = vec![0.0; self.d];
        for _ in 0..samples {
            for xi in x.iter_mut() {
                *xi = stream.uniform(-range, range);
            }
            let psi = self.psi.eval(&x, self.norm).abs();
            let theta = self.envelope.eval(self.norm.eval(&x));
            if psi > theta + 1e-15 {
                return false;
            }
        }
        true
    }
}

/// Envelope selection per weight family; the norm enters through
/// norm-comparison constants so the radial bound stays valid.
fn derive_envelope(psi: &Psi, norm: Norm, d: usize) -> Envelope {
    match psi {
        Psi::InversePower { beta } => Envelope::Power { c: 1.0, beta: *beta },
        Psi::GaussExp { alpha } => {
            // |x|₂ ≥ |x|_κ / t where t = 1 for κ ∈ {2, ∞} and √d for κ = 1
            let t2 = match norm {
                Norm::One => d as f64,
                Norm::Two | Norm::Inf => 1.0,
            };
            Envelope::Gaussian { c: 1.0, sigma2: t2 / (2.0 * alpha) }
        }
        Psi::UnitBoxIndicator => {
            let radius = match norm {
                Norm::One => d as f64,
                Norm::Two => (d as f64).sqrt(),
                Norm::Inf => 1.0,
            };
            Envelope::Compact { c: 1.0, radius }
        }
        Psi::CosineBump { radius } => Envelope::Compact { c: 1.0, radius: *radius },
        Psi::Zero => Envelope::Compact { c: 0.0, radius: 0.0 },
    }
}

/// A truncated lattice sum together with its certified truncation error.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedSum {
    /// The truncated value.
    pub value: f64,
    /// Upper bound on the neglected tail.
    pub truncation_bound: f64,
    /// Truncation radius actually used.
    pub radius: i64,
}

/// The pure weight sum `c_ψ(n) = n^{-d} Σ_j ψ(j/n)`, truncated so the
/// neglected envelope mass is below [`WEIGHT_TAIL_TARGET`].
///
/// For compactly supported weights the truncation ball contains the whole
/// support and the value is the exact finite lattice sum.
pub fn c_psi(w: &WeightSpec, n: u32) -> Result<TruncatedSum> {
    let (radius, bound) = w.truncation_radius(n, WEIGHT_TAIL_TARGET)?;
    let value = weight_sum_at_radius(w, n, radius);
    Ok(TruncatedSum { value, truncation_bound: bound, radius })
}

/// `c_ψ(n)` at an explicit truncation radius (for bound-verification tests).
pub(crate) fn weight_sum_at_radius(w: &WeightSpec, n: u32, radius: i64) -> f64 {
    let inv_n = 1.0 / f64::from(n);
    let mut acc = Kahan::new();
    for_each_lattice_ball(w.d, BallBudget::closed(w.norm, radius), |j| {
        acc.add(w.psi.eval_scaled(j, inv_n, w.norm));
    });
    acc.total() / f64::from(n).powi(w.d as i32)
}

/// Discrete smoothness defect along axis `i` (1-based):
/// `n^{-d} Σ_j |ψ(j/n) - ψ((j+e_i)/n)|`, with the same truncation
/// discipline as [`c_psi`]. The reported bound covers both shifted copies.
pub fn smoothness_defect(w: &WeightSpec, n: u32, axis: usize) -> Result<TruncatedSum> {
    if axis == 0 || axis > w.d {
        return Err(Error::InvalidParameter(format!(
            "axis {axis} out of range 1..={}",
            w.d
        )));
    }
    let (r0, b0) = w.truncation_radius(n, WEIGHT_TAIL_TARGET / 2.0)?;
    let radius = r0 + 1;
    let inv_n = 1.0 / f64::from(n);
    let mut acc = Kahan::new();
    let mut shifted = vec![0i64; w.d];
    for_each_lattice_ball(w.d, BallBudget::closed(w.norm, radius), |j| {
        shifted.copy_from_slice(j);
        shifted[axis - 1] += 1;
        let a = w.psi.eval_scaled(j, inv_n, w.norm);
        let b = w.psi.eval_scaled(&shifted, inv_n, w.norm);
        acc.add((a - b).abs());
    });
    Ok(TruncatedSum {
        value: acc.total() / f64::from(n).powi(w.d as i32),
        truncation_bound: 2.0 * b0,
        radius,
    })
}

/// A truncated weighted field average and how its field bound was obtained.
#[derive(Debug, Clone, Copy)]
pub struct AverageReport {
    /// The truncated average `W_n(f)`.
    pub value: f64,
    /// Certified bound on the neglected tail, `M ·` (envelope tail).
    pub truncation_bound: f64,
    /// Truncation radius actually used.
    pub radius: i64,
    /// Field bound `M` used for the radius choice.
    pub field_bound: f64,
    /// True when `M` was measured as the realized maximum over the
    /// truncation window rather than supplied or implied by the law — a
    /// heuristic for unbounded marginals such as Exp(1).
    pub bound_measured: bool,
}

/// Weighted average `W_n(f) = n^{-d} Σ_j ψ(j/n) f(j)` of a scalar field.
///
/// The radius satisfies `M · tail <` [`FIELD_TAIL_TARGET`] where `M` bounds
/// `|f|` on the window: supplied by the caller, implied by a bounded
/// marginal law, or — for unbounded laws — measured as the realized maximum
/// over the window via a fixed-point loop (flagged in the report).
///
/// Constant fields reduce analytically: the result is exactly
/// `value · c_ψ(n)`, sharing every property of [`c_psi`].
pub fn weighted_average(
    field: &ScalarField,
    w: &WeightSpec,
    n: u32,
    bound: Option<f64>,
) -> Result<AverageReport> {
    weighted_average_with_tail(field, w, n, bound, FIELD_TAIL_TARGET)
}

/// [`weighted_average`] with an explicit tail target.
///
/// Callers chasing a statistical tolerance far above [`FIELD_TAIL_TARGET`]
/// can relax the truncation to match and skip most of the window: the
/// radius scales like `target^{-1/(β-d)}`, so each decade of slack shrinks
/// the window volume by `10^{d/(β-d)}`.  The certified bound in the report
/// always states what was actually neglected.
pub fn weighted_average_with_tail(
    field: &ScalarField,
    w: &WeightSpec,
    n: u32,
    bound: Option<f64>,
    tail_target: f64,
) -> Result<AverageReport> {
    if !(tail_target > 0.0) || !tail_target.is_finite() {
        return Err(Error::InvalidParameter(format!("tail target {tail_target}")));
    }
    if field.dim() != w.d {
        return Err(Error::InvalidParameter(format!(
            "field dimension {} does not match weight dimension {}",
            field.dim(),
            w.d
        )));
    }
    if let Some(v) = constant_field_value(field) {
        let base = c_psi(w, n)?;
        return Ok(AverageReport {
            value: v * base.value,
            truncation_bound: v.abs() * base.truncation_bound,
            radius: base.radius,
            field_bound: v.abs(),
            bound_measured: false,
        });
    }
    let (m, measured) = match bound {
        Some(m) => {
            if !(m >= 0.0) {
                return Err(Error::InvalidParameter(format!("field bound {m}")));
            }
            (m, false)
        }
        None => match field.law().and_then(FieldLaw::sup_bound) {
            Some(m) => (m, false),
            None => (measure_field_bound(field, w, n)?, true),
        },
    };
    let (radius, tail) = w.truncation_radius(n, tail_target / m.max(1e-300))?;
    field.check_box(radius)?;
    let value = field_sum_at_radius(field, w, n, radius);
    Ok(AverageReport {
        value,
        truncation_bound: m * tail,
        radius,
        field_bound: m,
        bound_measured: measured,
    })
}

/// Detects fields that are constant by construction.
fn constant_field_value(field: &ScalarField) -> Option<f64> {
    match field.law() {
        Some(FieldLaw::Constant { value }) => Some(*value),
        _ => None,
    }
}

/// Realized maximum of `|f|` over the truncation window, iterated to a
/// fixed point: a larger measured bound can enlarge the window, which is
/// rescanned until the radius stabilizes.
fn measure_field_bound(field: &ScalarField, w: &WeightSpec, n: u32) -> Result<f64> {
    let mut m = 1.0f64;
    let mut radius = 0i64;
    for _ in 0..12 {
        let (r, _) = w.truncation_radius(n, FIELD_TAIL_TARGET / m)?;
        if r <= radius {
            return Ok(m);
        }
        radius = r;
        field.check_box(radius)?;
        let mut observed = 0.0f64;
        for_each_lattice_ball(w.d, BallBudget::closed(w.norm, radius), |j| {
            observed = observed.max(field.value(j).abs());
        });
        m = m.max(observed);
    }
    Ok(m)
}

fn field_sum_at_radius(field: &ScalarField, w: &WeightSpec, n: u32, radius: i64) -> f64 {
    let inv_n = 1.0 / f64::from(n);
    let mut acc = Kahan::new();
    for_each_lattice_ball(w.d, BallBudget::closed(w.norm, radius), |j| {
        let psi = w.psi.eval_scaled(j, inv_n, w.norm);
        if psi != 0.0 {
            acc.add(psi * field.value(j));
        }
    });
    acc.total() / f64::from(n).powi(w.d as i32)
}

/// One seed's outcome in a mixture conditional-limit experiment.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalOutcome {
    /// Replica index.
    pub seed_index: u64,
    /// Mixture component selected for this seed.
    pub label: usize,
    /// The weighted average `W_n(f)`.
    pub value: f64,
    /// Certified truncation bound of the average.
    pub truncation_bound: f64,
    /// This component's target `c_ψ(n) · E f`.
    pub own_target: f64,
    /// Relative distance from the own-component target.
    pub own_rel_err: f64,
    /// True when the value is strictly nearer some other component's target.
    pub nearer_wrong: bool,
}

/// Summary of per-seed clustering around component-wise limits.
#[derive(Debug, Clone)]
pub struct ConditionalReport {
    /// Per-seed outcomes in replica order.
    pub outcomes: Vec<ConditionalOutcome>,
    /// Fraction of seeds within the relative tolerance of their own target.
    pub fraction_within: f64,
    /// Seeds strictly nearer a wrong component's target.
    pub wrong_nearer: usize,
    /// The weight sum `c_ψ(n)` used to form the targets.
    pub c_psi_n: f64,
    /// Component target values `c_ψ(n) · E f_k`.
    pub targets: Vec<f64>,
}

/// Runs weighted averages over an equal-weight mixture ensemble and checks
/// that each seed's average lands at its own component's limit.
///
/// The ensemble is non-ergodic: a fair label per seed selects one of the
/// component laws, and the conditional limit is `c_ψ · E[f | label]`, so the
/// per-seed averages cluster at the component targets instead of a single
/// value.
pub fn conditional_limit_check(
    w: &WeightSpec,
    n: u32,
    laws: &[FieldLaw],
    master_seed: u64,
    n_seeds: u64,
    rel_tol: f64,
) -> Result<ConditionalReport> {
    if laws.len() < 2 {
        return Err(Error::InvalidParameter("mixture needs at least two components".into()));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidParameter(format!("relative tolerance {rel_tol}")));
    }
    let base = c_psi(w, n)?;
    let targets: Vec<f64> = laws.iter().map(|l| base.value * l.mean()).collect();
    let components: Vec<(f64, FieldLaw)> = laws.iter().map(|l| (1.0, l.clone())).collect();
    let outcomes: Vec<ConditionalOutcome> = (0..n_seeds)
        .into_par_iter()
        .map(|k| {
            let seed = rng::replica_seed(master_seed, k);
            let field = ScalarField::mixture(w.d, seed, &components)?;
            let label = field.mixture_label().expect("mixture field has a label");
            let rep = weighted_average(&field, w, n, None)?;
            let value = rep.value;
            let own = targets[label];
            let own_dist = (value - own).abs();
            let nearer_wrong = targets
                .iter()
                .enumerate()
                .any(|(i, t)| i != label && (value - t).abs() < own_dist);
            Ok(ConditionalOutcome {
                seed_index: k,
                label,
                value,
                truncation_bound: rep.truncation_bound,
                own_target: own,
                own_rel_err: if own == 0.0 { own_dist } else { own_dist / own.abs() },
                nearer_wrong,
            })
        })
        .collect::<Result<_>>()?;
    let within = outcomes.iter().filter(|o| o.own_rel_err <= rel_tol).count();
    let wrong = outcomes.iter().filter(|o| o.nearer_wrong).count();
    Ok(ConditionalReport {
        fraction_within: within as f64 / n_seeds as f64,
        wrong_nearer: wrong,
        c_psi_n: base.value,
        targets,
        outcomes,
    })
}

/// The maximal function `max_{1 ≤ n ≤ N} W_n(f)` of a non-negative field.
#[derive(Debug, Clone)]
pub struct MaximalReport {
    /// The maximum over scales.
    pub value: f64,
    /// Scale achieving the maximum.
    pub argmax_n: u32,
    /// Field bound used for every scale's truncation radius.
    pub field_bound: f64,
    /// Whether the bound was measured rather than supplied/implied.
    pub bound_measured: bool,
    /// Per-scale values `(n, W_n, truncation bound)`.
    pub per_scale: Vec<(u32, f64, f64)>,
}

/// Evaluates `sup_{1 ≤ n ≤ N} W_n(f)` for a non-negative field.
///
/// All weight families here are non-negative, so the `|ψ|`-weighted sums in
/// the maximal function coincide with the plain weighted averages. A single
/// field bound — measured once over the largest window when not supplied —
/// is shared by every scale, keeping the family of truncation radii
/// consistent so the supremum is monotone in `N` by construction.
pub fn maximal_function(
    field: &ScalarField,
    w: &WeightSpec,
    n_max: u32,
    bound: Option<f64>,
) -> Result<MaximalReport> {
    if n_max == 0 {
        return Err(Error::InvalidParameter("n_max must be positive".into()));
    }
    check_nonnegative(field)?;
    let (m, measured) = match bound {
        Some(m) if m >= 0.0 => (m, false),
        Some(m) => return Err(Error::InvalidParameter(format!("field bound {m}"))),
        None => match field.law().and_then(FieldLaw::sup_bound) {
            Some(m) => (m, false),
            None => (measure_field_bound(field, w, n_max)?, true),
        },
    };
    let mut per_scale = Vec::with_capacity(n_max as usize);
    let mut best = f64::NEG_INFINITY;
    let mut argmax = 1u32;
    for n in 1..=n_max {
        let rep = weighted_average(field, w, n, Some(m))?;
        per_scale.push((n, rep.value, rep.truncation_bound));
        if rep.value > best {
            best = rep.value;
            argmax = n;
        }
    }
    Ok(MaximalReport {
        value: best,
        argmax_n: argmax,
        field_bound: m,
        bound_measured: measured,
        per_scale,
    })
}

fn check_nonnegative(field: &ScalarField) -> Result<()> {
    let ok = match field.law() {
        Some(law) => law.nonnegative(),
        None => true, // stored fields are scanned lazily below
    };
    if !ok {
        return Err(Error::InvalidParameter(
            "maximal function requires a non-negative field".into(),
        ));
    }
    Ok(())
}

/// One row of an empirical weak-(1,1) table.
#[derive(Debug, Clone, Copy)]
pub struct TailRow {
    /// Threshold `α`.
    pub alpha: f64,
    /// Empirical exceedance probability `P̂(sup_n W_n > α)`.
    pub exceed_prob: f64,
    /// The product `α · P̂`.
    pub alpha_p: f64,
    /// `α · P̂ / ‖f‖₁` — the empirically bounded column.
    pub normalized: f64,
}

/// Empirical maximal-inequality table over an ensemble of i.i.d. fields.
#[derive(Debug, Clone)]
pub struct TailReport {
    /// One row per threshold, in input order.
    pub rows: Vec<TailRow>,
    /// `max_α α · P̂ / ‖f‖₁` — the empirical weak-(1,1) constant.
    pub c_hat: f64,
    /// Mean of the field law (`‖f‖₁` for non-negative laws).
    pub mean: f64,
    /// Number of seeds in the ensemble.
    pub n_seeds: u64,
    /// Realized suprema, one per seed, in replica order.
    pub sups: Vec<f64>,
}

/// Estimates `P(sup_{n ≤ N} W_n(f) > α)` over i.i.d.-field replicas and
/// reports the weak-(1,1) combination `α · P̂ / ‖f‖₁` per threshold.
pub fn maximal_tail_estimate(
    law: &FieldLaw,
    w: &WeightSpec,
    n_max: u32,
    alphas: &[f64],
    master_seed: u64,
    n_seeds: u64,
) -> Result<TailReport> {
    if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::InvalidParameter("thresholds must be positive".into()));
    }
    if n_seeds == 0 {
        return Err(Error::InvalidParameter("need at least one seed".into()));
    }
    if !law.nonnegative() {
        return Err(Error::InvalidParameter(
            "maximal inequality applies to non-negative laws".into(),
        ));
    }
    let sups: Vec<f64> = (0..n_seeds)
        .into_par_iter()
        .map(|k| {
            let field = ScalarField::iid(w.d, rng::replica_seed(master_seed, k), law.clone())?;
            Ok(maximal_function(&field, w, n_max, None)?.value)
        })
        .collect::<Result<_>>()?;
    let mean = law.mean();
    let rows: Vec<TailRow> = alphas
        .iter()
        .map(|&alpha| {
            let exceed = sups.iter().filter(|&&s| s > alpha).count() as f64 / n_seeds as f64;
            TailRow {
                alpha,
                exceed_prob: exceed,
                alpha_p: alpha * exceed,
                normalized: alpha * exceed / mean,
            }
        })
        .collect();
    let c_hat = rows.iter().map(|r| r.normalized).fold(0.0, f64::max);
    Ok(TailReport { rows, c_hat, mean, n_seeds, sups })
}

/// Compensated (Kahan) accumulator used by every truncated sum.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    pub(crate) fn new() -> Self {
        Kahan { sum: 0.0, carry: 0.0 }
    }

    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub(crate) fn total(self) -> f64 {
        self.sum
    }
}
