//! Environment generators.
//!
//! All lattice fields are hash-indexed: the value attached to a site or
//! edge is a pure function of `(seed, lattice key)`, so regenerating with a
//! shifted key base produces exactly the translated environment.

use super::{Environment, GenEdge, GenerationInfo};
use crate::error::{Error, Result};
use crate::geom::{BoxIter, LatticeMap, Norm, Torus};
use crate::rng::{self, coord_word, mix, tag, Stream};
use serde::{Deserialize, Serialize};

/// Marginal law of an i.i.d. conductance field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RateLaw {
    /// Deterministic positive value.
    Constant {
        /// The value.
        value: f64,
    },
    /// Uniform on `[lo, hi]`.
    Uniform {
        /// Lower endpoint, strictly positive.
        lo: f64,
        /// Upper endpoint.
        hi: f64,
    },
    /// Fair draw from `{lo, hi}`.
    TwoPoint {
        /// First value, strictly positive.
        lo: f64,
        /// Second value.
        hi: f64,
    },
}

impl RateLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            RateLaw::Constant { value } => value > 0.0 && value.is_finite(),
            RateLaw::Uniform { lo, hi } | RateLaw::TwoPoint { lo, hi } => {
                lo > 0.0 && hi >= lo && hi.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("rate law {self:?}")))
        }
    }

    fn draw(&self, word: u64) -> f64 {
        match *self {
            RateLaw::Constant { value } => value,
            RateLaw::Uniform { lo, hi } => lo + (hi - lo) * rng::to_unit(word),
            RateLaw::TwoPoint { lo, hi } => {
                if rng::to_unit(word) < 0.5 {
                    lo
                } else {
                    hi
                }
            }
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            RateLaw::Constant { value } => value,
            RateLaw::Uniform { lo, hi } | RateLaw::TwoPoint { lo, hi } => 0.5 * (lo + hi),
        }
    }
}

/// Marginal law of atom multiplicities. Values are powers of two so that
/// detailed balance stays bit-exact through the stored conductances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplicityLaw {
    /// Every atom has mass one.
    One,
    /// Fair draw from `{1, 2}`.
    TwoPointFair,
}

impl MultiplicityLaw {
    /// Expected mass of a single atom.
    #[must_use]
    pub fn mean(self) -> f64 {
        match self {
            MultiplicityLaw::One => 1.0,
            MultiplicityLaw::TwoPointFair => 1.5,
        }
    }

    fn draw(self, word: u64) -> f64 {
        match self {
            MultiplicityLaw::One => 1.0,
            MultiplicityLaw::TwoPointFair => {
                if rng::to_unit(word) < 0.5 {
                    1.0
                } else {
                    2.0
                }
            }
        }
    }
}

/// Environment generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    /// Square lattice with i.i.d. nearest-neighbor conductances.
    ZdNearestNeighbor {
        /// Conductance law.
        law: RateLaw,
        /// Multiplicity law.
        multiplicity: MultiplicityLaw,
    },
    /// Square lattice with a constant conductance per axis; a zero entry
    /// drops that axis entirely (the degenerate stacked-chains case), which
    /// is the one sanctioned way to produce a disconnected rate graph.
    ZdAxes {
        /// Conductance per axis, each `>= 0`.
        rates: Vec<f64>,
    },
    /// Square lattice with long-range conductances `w |x - y|^{-decay}`
    /// truncated at half the torus, `w` i.i.d.
    ZdLongRange {
        /// Weight law.
        law: RateLaw,
        /// Polynomial decay exponent; needs `decay > d + 2` for a finite
        /// second displacement moment.
        decay: f64,
        /// Multiplicity law.
        multiplicity: MultiplicityLaw,
    },
    /// Planar triangular lattice (non-identity lattice map) with i.i.d.
    /// nearest-neighbor conductances.
    Triangular {
        /// Conductance law.
        law: RateLaw,
    },
    /// Homogeneous Poisson point process with rate kernel
    /// `w_x w_y exp(-|x - y|)`, marks i.i.d. uniform.
    #[serde(rename = "poisson-pp")]
    PoissonPP {
        /// Points per unit volume.
        intensity: f64,
        /// Lower mark bound, strictly positive.
        mark_lo: f64,
        /// Upper mark bound.
        mark_hi: f64,
    },
}

impl Model {
    /// Short tag stored in serialized environments.
    #[must_use]
    pub fn tag(&self) -> &'static str {
        match self {
            Model::ZdNearestNeighbor { .. } => "zdnn",
            Model::ZdAxes { .. } => "zdaxes",
            Model::ZdLongRange { .. } => "zdlr",
            Model::Triangular { .. } => "tri",
            Model::PoissonPP { .. } => "ppp",
        }
    }

    /// Expected mass per unit volume of the generated measure.
    ///
    /// Lattice models carry one atom per fundamental cell, so the intensity
    /// is the mean multiplicity over the cell volume.  Poisson marks scale
    /// rates, never masses, so there the intensity is the point rate itself.
    #[must_use]
    pub fn nominal_intensity(&self, d: usize) -> f64 {
        let per_atom = match self {
            Model::ZdNearestNeighbor { multiplicity, .. }
            | Model::ZdLongRange { multiplicity, .. } => multiplicity.mean(),
            Model::ZdAxes { .. } | Model::Triangular { .. } => 1.0,
            Model::PoissonPP { intensity, .. } => return *intensity,
        };
        per_atom / self.lattice_map(d).det_abs()
    }

    /// Lattice map used by the model.
    #[must_use]
    pub fn lattice_map(&self, d: usize) -> LatticeMap {
        match self {
            Model::Triangular { .. } => LatticeMap::triangular(),
            _ => LatticeMap::identity(d),
        }
    }

    fn validate(&self, d: usize, side: i64) -> Result<()> {
        if !(1..=4).contains(&d) {
            return Err(Error::InvalidParameter(format!("dimension {d}")));
        }
        if side < 2 {
            return Err(Error::InvalidParameter(format!("torus side {side}")));
        }
        match self {
            Model::ZdNearestNeighbor { law, .. } => law.validate(),
            Model::ZdAxes { rates } => {
                if rates.len() != d {
                    return Err(Error::InvalidParameter(
                        "axis rate count must equal dimension".into(),
                    ));
                }
                if rates.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
                    return Err(Error::InvalidParameter("axis rates must be >= 0".into()));
                }
                if rates.iter().all(|&r| r == 0.0) {
                    return Err(Error::InvalidParameter("all axis rates are zero".into()));
                }
                Ok(())
            }
            Model::ZdLongRange { law, decay, .. } => {
                law.validate()?;
                if *decay <= (d + 2) as f64 {
                    return Err(Error::MomentCondition(format!(
                        "long-range decay {decay} <= d + 2 = {}; second displacement moment diverges",
                        d + 2
                    )));
                }
                Ok(())
            }
            Model::Triangular { law } => {
                if d != 2 {
                    return Err(Error::InvalidParameter(
                        "triangular lattice is planar (d = 2)".into(),
                    ));
                }
                law.validate()
            }
            Model::PoissonPP {
                intensity,
                mark_lo,
                mark_hi,
            } => {
                if !(intensity.is_finite() && *intensity > 0.0) {
                    return Err(Error::InvalidParameter(format!("intensity {intensity}")));
                }
                if !(*mark_lo > 0.0 && mark_hi >= mark_lo && mark_hi.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "marks [{mark_lo}, {mark_hi}]"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Whether a disconnected rate graph is an intended outcome rather than
    /// an error.
    #[must_use]
    pub fn allows_disconnected(&self) -> bool {
        matches!(self, Model::ZdAxes { rates } if rates.iter().any(|&r| r == 0.0))
    }

    /// Generator displacements and the conductance attached to an edge keyed
    /// by `(delta, site)`, for lattice models.
    fn lattice_deltas(&self, d: usize, side: i64, norm: Norm) -> Option<Vec<Vec<i64>>> {
        match self {
            Model::ZdNearestNeighbor { .. } | Model::ZdAxes { .. } => Some(
                (0..d)
                    .map(|i| (0..d).map(|k| i64::from(k == i)).collect())
                    .collect(),
            ),
            Model::Triangular { .. } => Some(vec![vec![1, 0], vec![0, 1], vec![1, -1]]),
            Model::ZdLongRange { .. } => {
                let r = (side - 1) / 2;
                let mut out = Vec::new();
                for delta in BoxIter::cube(d, -r, r) {
                    let lex_positive = delta
                        .iter()
                        .find(|&&c| c != 0)
                        .map(|&c| c > 0)
                        .unwrap_or(false);
                    if lex_positive {
                        out.push(delta);
                    }
                }
                let _ = norm;
                Some(out)
            }
            Model::PoissonPP { .. } => None,
        }
    }

    fn edge_conductance(&self, delta: &[i64], norm: Norm, word: u64) -> f64 {
        match self {
            Model::ZdNearestNeighbor { law, .. } | Model::Triangular { law } => law.draw(word),
            Model::ZdAxes { rates } => {
                let axis = delta.iter().position(|&c| c != 0).expect("nonzero delta");
                rates[axis]
            }
            Model::ZdLongRange { law, decay, .. } => {
                law.draw(word) * norm.eval_int(delta).powf(-decay)
            }
            Model::PoissonPP { .. } => unreachable!("not a lattice model"),
        }
    }

    fn multiplicity_law(&self) -> MultiplicityLaw {
        match self {
            Model::ZdNearestNeighbor { multiplicity, .. }
            | Model::ZdLongRange { multiplicity, .. } => *multiplicity,
            _ => MultiplicityLaw::One,
        }
    }
}

/// Generates an environment.
pub fn generate(model: &Model, d: usize, side: i64, seed: u64, norm: Norm) -> Result<Environment> {
    generate_shifted(model, d, side, seed, norm, &vec![0; d])
}

/// Generates an environment with all hash-field keys shifted by `shift`:
/// the result equals the `shift`-translate of the unshifted environment,
/// bit for bit.
pub fn generate_shifted(
    model: &Model,
    d: usize,
    side: i64,
    seed: u64,
    norm: Norm,
    shift: &[i64],
) -> Result<Environment> {
    model.validate(d, side)?;
    match model {
        Model::PoissonPP { .. } => {
            if shift.iter().any(|&c| c != 0) {
                return Err(Error::InvalidParameter(
                    "key shifts are defined for lattice models only".into(),
                ));
            }
            generate_poisson(model, d, side, seed, norm, true)
        }
        _ => {
            let torus = Torus {
                d,
                side,
                map: model.lattice_map(d),
            };
            let deltas = model.lattice_deltas(d, side, norm).expect("lattice model");
            let mult_law = model.multiplicity_law();
            let sites = torus.site_count();
            let mut mult = vec![0.0; sites];
            let mut gen_edges = Vec::with_capacity(sites * deltas.len());
            let mut words: Vec<u64> = Vec::with_capacity(2 + 2 * d);
            for idx in 0..sites {
                let site = torus.site_of_index(idx);
                let keyed: Vec<i64> = site
                    .iter()
                    .zip(shift)
                    .map(|(a, b)| (a + b).rem_euclid(side))
                    .collect();
                words.clear();
                words.extend_from_slice(&[seed, tag::NODE]);
                words.extend(keyed.iter().map(|&c| coord_word(c)));
                mult[idx] = mult_law.draw(mix(&words));
                for delta in &deltas {
                    words.clear();
                    words.extend_from_slice(&[seed, tag::EDGE]);
                    words.extend(delta.iter().map(|&c| coord_word(c)));
                    words.extend(keyed.iter().map(|&c| coord_word(c)));
                    let c = model.edge_conductance(delta, norm, mix(&words));
                    gen_edges.push(GenEdge {
                        base: idx,
                        delta: delta.clone(),
                        conductance: c,
                    });
                }
            }
            let mut info = GenerationInfo::default();
            if let Model::ZdLongRange { law, decay, .. } = model {
                let r_lat = (side - 1) / 2;
                info.truncation_radius = Some(r_lat as f64);
                info.lambda2_tail_bound =
                    Some(law.mean() * lattice_moment_tail(d, r_lat as f64, *decay - 2.0));
            }
            let env = lattice_assemble(
                torus,
                norm,
                seed,
                model.tag().to_string(),
                mult,
                gen_edges,
                info,
            )?;
            if !env.connected && !model.allows_disconnected() {
                return Err(Error::Disconnected { attempts: 0 });
            }
            Ok(env)
        }
    }
}

/// Generates only the atomic measure of the model (atoms and
/// multiplicities, no rate graph, no connectivity requirement).
///
/// Lattice multiplicities use the same hash keys as [`generate`], and
/// Poisson points are drawn before marks, so the measure agrees with the
/// measure of the corresponding full environment on its first connectivity
/// attempt.
pub fn generate_measure(
    model: &Model,
    d: usize,
    side: i64,
    seed: u64,
    norm: Norm,
) -> Result<AtomicMeasureOut> {
    model.validate(d, side)?;
    match model {
        Model::PoissonPP { .. } => {
            let env = generate_poisson(model, d, side, seed, norm, false)?;
            Ok(env.measure())
        }
        _ => {
            let torus = Torus {
                d,
                side,
                map: model.lattice_map(d),
            };
            let mult_law = model.multiplicity_law();
            let sites = torus.site_count();
            let mut positions = Vec::with_capacity(sites * d);
            let mut mult = Vec::with_capacity(sites);
            let mut words: Vec<u64> = Vec::with_capacity(2 + d);
            for idx in 0..sites {
                let site = torus.site_of_index(idx);
                positions.extend(torus.map.apply(&site));
                words.clear();
                words.extend_from_slice(&[seed, tag::NODE]);
                words.extend(site.iter().map(|&c| coord_word(c)));
                mult.push(mult_law.draw(mix(&words)));
            }
            Ok(super::AtomicMeasure::from_parts(
                torus, norm, &positions, mult,
            ))
        }
    }
}

type AtomicMeasureOut = super::AtomicMeasure;

/// Builds a site-indexed lattice environment from multiplicities and
/// generation edges. Shared by the generators and by translation so both
/// take the identical code path.
pub(crate) fn lattice_assemble(
    torus: Torus,
    norm: Norm,
    seed: u64,
    model_tag: String,
    mult: Vec<f64>,
    gen_edges: Vec<GenEdge>,
    info: GenerationInfo,
) -> Result<Environment> {
    let d = torus.d;
    let sites = torus.site_count();
    let mut positions = Vec::with_capacity(sites * d);
    for idx in 0..sites {
        positions.extend(torus.map.apply(&torus.site_of_index(idx)));
    }
    let raw: Vec<(usize, usize, f64)> = gen_edges
        .iter()
        .map(|e| {
            let site = torus.site_of_index(e.base);
            let partner: Vec<i64> = site.iter().zip(&e.delta).map(|(a, b)| a + b).collect();
            (e.base, torus.site_index(&partner), e.conductance)
        })
        .collect();
    Environment::assemble(
        torus,
        norm,
        seed,
        model_tag,
        positions,
        mult,
        raw,
        Some(gen_edges),
        info,
    )
}

const CONNECTIVITY_ATTEMPTS: u32 = 32;

fn generate_poisson(
    model: &Model,
    d: usize,
    side: i64,
    seed: u64,
    norm: Norm,
    with_edges: bool,
) -> Result<Environment> {
    let Model::PoissonPP {
        intensity,
        mark_lo,
        mark_hi,
    } = model
    else {
        unreachable!()
    };
    let torus = Torus::square(d, side);
    let cutoff = side as f64 / 2.0;
    for attempt in 0..CONNECTIVITY_ATTEMPTS {
        let mut stream = Stream::keyed(&[seed, tag::POINT, u64::from(attempt)]);
        let n = stream.poisson(intensity * torus.volume()) as usize;
        let mut positions = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            positions.push(stream.uniform(0.0, side as f64));
        }
        let marks: Vec<f64> = (0..n).map(|_| stream.uniform(*mark_lo, *mark_hi)).collect();
        debug_assert!(distinct_positions(&positions, d), "atom positions collide");
        let mut raw = Vec::new();
        if with_edges {
            for a in 0..n {
                for b in (a + 1)..n {
                    let disp = torus.min_image_vec(
                        &positions[a * d..(a + 1) * d],
                        &positions[b * d..(b + 1) * d],
                        norm,
                    );
                    let r = norm.eval(&disp);
                    if r <= cutoff {
                        raw.push((a, b, marks[a] * marks[b] * (-r).exp()));
                    }
                }
            }
        }
        let mut info = GenerationInfo {
            truncation_radius: Some(cutoff),
            lambda2_tail_bound: Some(
                intensity * mark_hi * mark_hi * exp_moment_tail(d, norm, cutoff),
            ),
            attempts: attempt,
        };
        if !with_edges {
            info.truncation_radius = None;
            info.lambda2_tail_bound = None;
        }
        let env = Environment::assemble(
            torus.clone(),
            norm,
            seed,
            model.tag().to_string(),
            positions,
            vec![1.0; n],
            raw,
            None,
            info,
        )?;
        if !with_edges || (env.connected && env.atom_count() > 0) {
            return Ok(env);
        }
    }
    Err(Error::Disconnected {
        attempts: CONNECTIVITY_ATTEMPTS,
    })
}

fn distinct_positions(positions: &[f64], d: usize) -> bool {
    use std::collections::HashSet;
    let n = positions.len() / d;
    let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(n);
    for a in 0..n {
        let key: Vec<u64> = positions[a * d..(a + 1) * d]
            .iter()
            .map(|v| v.to_bits())
            .collect();
        if !seen.insert(key) {
            return false;
        }
    }
    true
}

/// Upper bound on `sum_{|x|_inf > r} |x|_kappa^{-p}` over the integer
/// lattice, `p > d`, via cube shells plus an integral remainder.
fn lattice_moment_tail(d: usize, r: f64, p: f64) -> f64 {
    let m0 = r.floor() as i64 + 1;
    let mut acc = 0.0;
    let mut m = m0;
    // |x|_kappa >= |x|_inf, so |x|^{-p} <= m^{-p} on the shell |x|_inf = m.
    let shell = |m: i64| -> f64 {
        let big = (2 * m + 1) as f64;
        let small = (2 * m - 1) as f64;
        big.powi(d as i32) - small.powi(d as i32)
    };
    loop {
        let term = shell(m) * (m as f64).powf(-p);
        acc += term;
        m += 1;
        if term < 1e-16 * acc.max(1e-300) || m > m0 + 100_000 {
            break;
        }
    }
    // remainder: terms bounded by 2d (3x)^{d-1} x^{-p}, integrable for p > d
    let x = m as f64 - 1.0;
    let c = 2.0 * d as f64 * 3f64.powi(d as i32 - 1);
    acc + c * x.powf(d as f64 - p) / (p - d as f64)
}

/// `integral_{|y|_kappa > r} e^{-|y|} |y|^2 dy` upper bound: surface measure
/// times the incomplete integral of `t^{d+1} e^{-t}` (closed form).
fn exp_moment_tail(d: usize, norm: Norm, r: f64) -> f64 {
    let surface = d as f64 * norm.unit_ball_volume(d);
    let k = d + 1;
    // integral_r^inf t^k e^-t dt = e^-r sum_{i<=k} k!/i! r^i
    let mut fact_ratio = 1.0; // k!/k!
    let mut sum = r.powi(k as i32);
    for i in (0..k).rev() {
        fact_ratio *= (i + 1) as f64;
        sum += fact_ratio * r.powi(i as i32);
    }
    surface * (-r).exp() * sum
}
