//! Random environments: marked point sets on a torus carrying symmetric
//! jump rates.
//!
//! An environment is a finite torus proxy for a stationary ergodic point
//! process with multiplicities `n_x` and rates `r_{x,y}` satisfying detailed
//! balance `n_x r_{x,y} = n_y r_{y,x}`. Rates are stored through the
//! symmetric edge conductance `c_{x,y} = n_x r_{x,y}`; multiplicities are
//! powers of two, so both directed rates reproduce the conductance
//! bit-exactly.

mod field;
pub mod io;
mod measure;
mod model;

pub use field::{FieldLaw, ScalarField};
pub use measure::AtomicMeasure;
pub use model::{generate, generate_measure, generate_shifted, Model, MultiplicityLaw, RateLaw};

use crate::error::{Error, Result};
use crate::geom::{Norm, Torus};
use std::collections::BTreeMap;

/// An undirected rate-carrying edge in canonical orientation `a < b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Lower atom index.
    pub a: usize,
    /// Higher atom index.
    pub b: usize,
    /// Symmetric conductance `c = n_a r_{a,b} = n_b r_{b,a}`.
    pub conductance: f64,
    /// Minimal-image physical displacement from `a` to `b`.
    pub disp: Vec<f64>,
}

/// Pre-canonical lattice edge as enumerated by a generator: a base site, a
/// generator displacement, and the drawn conductance. Kept so translated
/// environments can be rebuilt through the identical code path.
#[derive(Debug, Clone)]
pub struct GenEdge {
    /// Linear site index of the base endpoint.
    pub base: usize,
    /// Lattice displacement to the partner site.
    pub delta: Vec<i64>,
    /// Drawn conductance.
    pub conductance: f64,
}

/// Compressed adjacency of the rate graph.
#[derive(Debug, Clone, Default)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    /// Directed rate `r_{x,y} = c_{x,y} / n_x` per entry.
    rates: Vec<f64>,
    /// Flat minimal-image displacements, `d` entries per neighbor.
    disps: Vec<f64>,
}

impl Adjacency {
    /// Neighbor entries of atom `x`: `(neighbor, rate, displacement)`.
    pub fn row(&self, x: usize) -> impl Iterator<Item = (usize, f64, &[f64])> {
        let d = if self.offsets.len() > 1 && !self.disps.is_empty() {
            self.disps.len() / self.neighbors.len().max(1)
        } else {
            0
        };
        (self.offsets[x]..self.offsets[x + 1]).map(move |k| {
            (
                self.neighbors[k],
                self.rates[k],
                &self.disps[k * d..(k + 1) * d],
            )
        })
    }

    /// Number of directed entries.
    #[must_use]
    pub fn entry_count(&self) -> usize {
        self.neighbors.len()
    }
}

/// Diagnostics attached to a generated environment.
#[derive(Debug, Clone, Default)]
pub struct GenerationInfo {
    /// Interaction truncation radius in physical distance, if any.
    pub truncation_radius: Option<f64>,
    /// Certified upper bound on the per-atom second displacement moment
    /// discarded by the truncation.
    pub lambda2_tail_bound: Option<f64>,
    /// Resampling attempts spent restoring connectivity.
    pub attempts: u32,
}

/// A marked point set with symmetric jump rates on a torus.
#[derive(Debug, Clone)]
pub struct Environment {
    /// Torus geometry.
    pub torus: Torus,
    /// Distance norm used for kernels and moments.
    pub norm: Norm,
    /// Seed the sample was drawn from.
    pub seed: u64,
    /// Short model tag (also stored in serialized files).
    pub model_tag: String,
    /// Flat atom positions, `d` coordinates per atom.
    pub positions: Vec<f64>,
    /// Atom multiplicities (powers of two).
    pub multiplicity: Vec<f64>,
    /// Canonical undirected edges.
    pub edges: Vec<Edge>,
    /// Whether the rate graph is connected.
    pub connected: bool,
    /// Generation diagnostics.
    pub info: GenerationInfo,
    adjacency: Adjacency,
    gen_edges: Option<Vec<GenEdge>>,
}

impl Environment {
    /// Assembles an environment from parts, deriving the adjacency.
    ///
    /// `gen_edges` should be supplied by lattice generators so the
    /// environment supports exact translation.
    pub(crate) fn assemble(
        torus: Torus,
        norm: Norm,
        seed: u64,
        model_tag: String,
        positions: Vec<f64>,
        multiplicity: Vec<f64>,
        raw_edges: Vec<(usize, usize, f64)>,
        gen_edges: Option<Vec<GenEdge>>,
        info: GenerationInfo,
    ) -> Result<Self> {
        let d = torus.d;
        let n_atoms = multiplicity.len();
        if positions.len() != d * n_atoms {
            return Err(Error::Format("position/multiplicity length mismatch".into()));
        }
        for &m in &multiplicity {
            if !(m > 0.0 && m.log2().fract() == 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "multiplicity {m} is not a positive power of two"
                )));
            }
        }
        // Merge parallel edges: rates along distinct displacement vectors
        // between the same pair accumulate (the documented convention for
        // the two-cell torus).
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (x, y, c) in raw_edges {
            if x == y {
                return Err(Error::Format("self edge".into()));
            }
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidParameter(format!("conductance {c}")));
            }
            if c == 0.0 {
                continue;
            }
            let key = (x.min(y), x.max(y));
            *merged.entry(key).or_insert(0.0) += c;
        }
        let edges: Vec<Edge> = merged
            .into_iter()
            .map(|((a, b), conductance)| {
                let pa = &positions[a * d..(a + 1) * d];
                let pb = &positions[b * d..(b + 1) * d];
                let disp = torus.min_image_vec(pa, pb, norm);
                Edge {
                    a,
                    b,
                    conductance,
                    disp,
                }
            })
            .collect();
        let adjacency = build_adjacency(n_atoms, d, &multiplicity, &edges);
        let connected = connected_components(n_atoms, &edges) <= 1;
        Ok(Environment {
            torus,
            norm,
            seed,
            model_tag,
            positions,
            multiplicity,
            edges,
            connected,
            info,
            adjacency,
            gen_edges,
        })
    }

    /// Number of atoms.
    #[must_use]
    pub fn atom_count(&self) -> usize {
        self.multiplicity.len()
    }

    /// Position of an atom.
    #[must_use]
    pub fn position(&self, x: usize) -> &[f64] {
        let d = self.torus.d;
        &self.positions[x * d..(x + 1) * d]
    }

    /// Neighbor rows of the rate graph.
    #[must_use]
    pub fn adjacency(&self) -> &Adjacency {
        &self.adjacency
    }

    /// Directed rate `r_{x,y}`, zero if no edge.
    #[must_use]
    pub fn rate(&self, x: usize, y: usize) -> f64 {
        self.adjacency
            .row(x)
            .find(|&(nbr, _, _)| nbr == y)
            .map_or(0.0, |(_, r, _)| r)
    }

    /// Displacement moment `lambda_k(x) = sum_y r_{x,y} |y - x|^k` with
    /// minimal-image distances.
    #[must_use]
    pub fn lambda_k(&self, x: usize, k: u32) -> f64 {
        let norm = self.norm;
        self.adjacency
            .row(x)
            .map(|(_, r, disp)| r * norm.eval(disp).powi(k as i32))
            .sum()
    }

    /// Total mass `sum_x n_x`.
    #[must_use]
    pub fn total_mass(&self) -> f64 {
        self.multiplicity.iter().sum()
    }

    /// Exact intensity of this sample: total mass over physical volume.
    #[must_use]
    pub fn sample_intensity(&self) -> f64 {
        self.total_mass() / self.torus.volume()
    }

    /// Atom index of a lattice site, for site-indexed environments where
    /// atom order equals linear site order.
    #[must_use]
    pub fn atom_of_site(&self, j: &[i64]) -> usize {
        self.torus.site_index(j)
    }

    /// The atomic measure `sum_x n_x delta_x` carried by the environment,
    /// with positions re-centered so the torus center becomes the origin.
    #[must_use]
    pub fn measure(&self) -> AtomicMeasure {
        AtomicMeasure::from_parts(
            self.torus.clone(),
            self.norm,
            &self.positions,
            self.multiplicity.clone(),
        )
    }

    /// Environment with every conductance multiplied by `s > 0`.
    #[must_use]
    pub fn scale_rates(&self, s: f64) -> Environment {
        let mut out = self.clone();
        for e in &mut out.edges {
            e.conductance *= s;
        }
        if let Some(g) = &mut out.gen_edges {
            for e in g {
                e.conductance *= s;
            }
        }
        out.adjacency = build_adjacency(
            out.atom_count(),
            out.torus.d,
            &out.multiplicity,
            &out.edges,
        );
        out
    }

    /// Translate of the environment by lattice vector `g`: data at site `j`
    /// in the result is the original data at `j + g`.
    ///
    /// Only site-indexed lattice environments that kept their generation
    /// edges support this.
    pub fn translate(&self, g: &[i64]) -> Result<Environment> {
        let gen_edges = self.gen_edges.as_ref().ok_or_else(|| {
            Error::InvalidParameter("environment does not support translation".into())
        })?;
        let torus = &self.torus;
        if self.atom_count() != torus.site_count() {
            return Err(Error::InvalidParameter(
                "translation requires one atom per site".into(),
            ));
        }
        // Data of the translate at site j comes from site j + g, i.e. the
        // original edge based at b moves to base b - g.
        let mut new_gen = Vec::with_capacity(gen_edges.len());
        for e in gen_edges {
            let site = torus.site_of_index(e.base);
            let moved: Vec<i64> = site.iter().zip(g).map(|(a, b)| a - b).collect();
            new_gen.push(GenEdge {
                base: torus.site_index(&moved),
                delta: e.delta.clone(),
                conductance: e.conductance,
            });
        }
        let mut new_mult = vec![0.0; self.atom_count()];
        for idx in 0..self.atom_count() {
            let site = torus.site_of_index(idx);
            let src: Vec<i64> = site.iter().zip(g).map(|(a, b)| a + b).collect();
            new_mult[idx] = self.multiplicity[torus.site_index(&src)];
        }
        model::lattice_assemble(
            torus.clone(),
            self.norm,
            self.seed,
            self.model_tag.clone(),
            new_mult,
            new_gen,
            self.info.clone(),
        )
    }

    /// Verifies structural invariants, returning the first violation.
    ///
    /// Checks: positive finite conductances, bit-identical detailed-balance
    /// products, antisymmetric displacements, finite displacement moments.
    pub fn check_invariants(&self) -> Result<()> {
        for e in &self.edges {
            if !(e.conductance > 0.0 && e.conductance.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "edge ({}, {}) conductance {}",
                    e.a, e.b, e.conductance
                )));
            }
        }
        let n = self.atom_count();
        for x in 0..n {
            for (y, r, disp) in self.adjacency.row(x) {
                let fwd = self.multiplicity[x] * r;
                let back = self.multiplicity[y] * self.rate(y, x);
                if fwd.to_bits() != back.to_bits() {
                    return Err(Error::InvalidParameter(format!(
                        "detailed balance violated on ({x}, {y}): {fwd:e} vs {back:e}"
                    )));
                }
                let d = self.torus.d;
                let rev: Vec<f64> = self
                    .adjacency
                    .row(y)
                    .find(|&(nbr, _, _)| nbr == x)
                    .map(|(_, _, dd)| dd.to_vec())
                    .unwrap_or_else(|| vec![0.0; d]);
                for i in 0..d {
                    if disp[i] + rev[i] != 0.0 {
                        return Err(Error::InvalidParameter(format!(
                            "displacement not antisymmetric on ({x}, {y})"
                        )));
                    }
                }
            }
            for k in [0u32, 2] {
                let v = self.lambda_k(x, k);
                if !v.is_finite() {
                    return Err(Error::MomentCondition(format!("lambda_{k}({x}) = {v}")));
                }
            }
        }
        Ok(())
    }
}

fn build_adjacency(n_atoms: usize, d: usize, mult: &[f64], edges: &[Edge]) -> Adjacency {
    let mut deg = vec![0usize; n_atoms];
    for e in edges {
        deg[e.a] += 1;
        deg[e.b] += 1;
    }
    let mut offsets = vec![0usize; n_atoms + 1];
    for i in 0..n_atoms {
        offsets[i + 1] = offsets[i] + deg[i];
    }
    let total = offsets[n_atoms];
    let mut neighbors = vec![0usize; total];
    let mut rates = vec![0.0; total];
    let mut disps = vec![0.0; total * d];
    let mut cursor = offsets.clone();
    for e in edges {
        // rate = conductance / multiplicity; exact because multiplicities
        // are powers of two, so both directed products reproduce the
        // conductance bit-identically.
        let ka = cursor[e.a];
        neighbors[ka] = e.b;
        rates[ka] = e.conductance / mult[e.a];
        disps[ka * d..(ka + 1) * d].copy_from_slice(&e.disp);
        cursor[e.a] += 1;
        let kb = cursor[e.b];
        neighbors[kb] = e.a;
        rates[kb] = e.conductance / mult[e.b];
        for i in 0..d {
            disps[kb * d + i] = -e.disp[i];
        }
        cursor[e.b] += 1;
    }
    Adjacency {
        offsets,
        neighbors,
        rates,
        disps,
    }
}

fn connected_components(n: usize, edges: &[Edge]) -> usize {
    if n == 0 {
        return 0;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut comps = n;
    for e in edges {
        let ra = find(&mut parent, e.a);
        let rb = find(&mut parent, e.b);
        if ra != rb {
            parent[ra] = rb;
            comps -= 1;
        }
    }
    comps
}

/// Estimate of an expectation under the atom-weighted (size-biased) law:
/// averages `n_x obs(x)` over atoms and seeds, normalized by the average
/// multiplicity.
#[derive(Debug, Clone)]
pub struct PalmEstimate {
    /// Ratio-of-sums point estimate.
    pub mean: f64,
    /// Leave-one-seed-out jackknife standard error.
    pub stderr: f64,
    /// Per-seed ratio estimates.
    pub per_seed: Vec<f64>,
}

/// Estimates the atom-rooted expectation of `obs` under the given model.
///
/// For each seed an environment is generated and the spatially averaged,
/// multiplicity-weighted observable is recorded; seeds are combined as a
/// ratio of sums with a jackknife standard error.
pub fn palm_expectation<F>(
    model: &Model,
    d: usize,
    side: i64,
    norm: Norm,
    master_seed: u64,
    n_seeds: usize,
    obs: F,
) -> Result<PalmEstimate>
where
    F: Fn(&Environment, usize) -> f64 + Sync,
{
    if n_seeds < 2 {
        return Err(Error::InvalidParameter("need at least 2 seeds".into()));
    }
    let mut nums = Vec::with_capacity(n_seeds);
    let mut dens = Vec::with_capacity(n_seeds);
    let mut per_seed = Vec::with_capacity(n_seeds);
    for k in 0..n_seeds {
        let env = generate(model, d, side, crate::rng::replica_seed(master_seed, k as u64), norm)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for x in 0..env.atom_count() {
            num += env.multiplicity[x] * obs(&env, x);
            den += env.multiplicity[x];
        }
        nums.push(num);
        dens.push(den);
        per_seed.push(num / den);
    }
    let tot_num: f64 = nums.iter().sum();
    let tot_den: f64 = dens.iter().sum();
    let mean = tot_num / tot_den;
    let loo: Vec<f64> = (0..n_seeds)
        .map(|i| (tot_num - nums[i]) / (tot_den - dens[i]))
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / n_seeds as f64;
    let var = loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>() * (n_seeds as f64 - 1.0)
        / n_seeds as f64;
    Ok(PalmEstimate {
        mean,
        stderr: var.sqrt(),
        per_seed,
    })
}

/// Mean and standard error of the sample intensity (mass per unit physical
/// volume) over an ensemble of seeds.
pub fn intensity_estimate(
    model: &Model,
    d: usize,
    side: i64,
    norm: Norm,
    master_seed: u64,
    n_seeds: usize,
) -> Result<(f64, f64)> {
    if n_seeds == 0 {
        return Err(Error::InvalidParameter("need at least 1 seed".into()));
    }
    let mut vals = Vec::with_capacity(n_seeds);
    for k in 0..n_seeds {
        let m = generate_measure(
            model,
            d,
            side,
            crate::rng::replica_seed(master_seed, k as u64),
            norm,
        )?;
        vals.push(m.total_mass() / m.torus.volume());
    }
    let mean = vals.iter().sum::<f64>() / n_seeds as f64;
    let var = if n_seeds > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_seeds as f64 - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / n_seeds as f64).sqrt()))
}

#[cfg(test)]
mod tests;
