//! Greedy disjoint-translate coverings of finite lattice sets.
//!
//! Given a finite set `B ⊂ Z^d`, a level assignment `k : B → {1, …, N}`,
//! and a nested family `I_1 ⊆ I_2 ⊆ … ⊆ I_N` of finite sets, the
//! construction selects `B' ⊆ B` greedily from level `N` down to level `1`,
//! scanning candidates in lexicographic order and accepting `z` exactly when
//! the translate `z + I_{k(z)}` is disjoint from all previously accepted
//! translates. Maximality of the selection forces
//!
//! ```text
//!     B  ⊆  ∪_{z ∈ B'} ( z + I_{k(z)} − I_{k(z)} ),
//!     |B| ≤  Σ_{z ∈ B'} | I_{k(z)} − I_{k(z)} |,
//! ```
//!
//! because a rejected candidate `b` collides with an accepted `z` of level
//! `k(z) ≥ k(b)`, so `b − z ∈ I_{k(z)} − I_{k(b)} ⊆ I_{k(z)} − I_{k(z)}`.
//! Both conclusions hold for *any* maximal selection; the greedy
//! lexicographic scan is fixed purely so runs are reproducible.
//!
//! The standard instantiation takes `I_m = {x : |x|_κ < (m+1)·r}`; shell
//! balls are coordinate-convex, so difference sets are computed exactly by
//! the slice method: the slice of `I − I` over a prefix `y'` is the symmetric
//! integer interval of half-width `max_{a'−b' = y'} (h(a') + h(b'))`, where
//! `h` is the slice half-width of `I` itself.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};
use crate::geom::{for_each_lattice_ball, isqrt, BallBudget, Norm};
use crate::rng::{self, tag};
use rayon::prelude::*;

/// A nested family `I_1 ⊆ I_2 ⊆ … ⊆ I_N` of finite subsets of `Z^d`.
#[derive(Debug, Clone)]
pub struct NestedSets {
    d: usize,
    shape: Shape,
}

#[derive(Debug, Clone)]
enum Shape {
    /// `I_m = {x : |x|_norm < (m+1)·r}` for levels `m = 1..=levels`.
    ShellBalls { norm: Norm, r: i64, levels: usize },
    /// Explicit point lists per level, deduplicated and sorted.
    Explicit {
        levels: Vec<Vec<Vec<i64>>>,
        member: Vec<HashSet<Vec<i64>>>,
    },
}

impl NestedSets {
    /// Shell-ball family `I_m = {x ∈ Z^d : |x|_norm < (m+1)·r}`.
    pub fn shell_balls(d: usize, norm: Norm, r: i64, levels: usize) -> Result<Self> {
        if d == 0 || r < 1 || levels == 0 {
            return Err(Error::InvalidParameter(format!(
                "shell balls need d ≥ 1, r ≥ 1, levels ≥ 1 (got d={d}, r={r}, levels={levels})"
            )));
        }
        Ok(NestedSets { d, shape: Shape::ShellBalls { norm, r, levels } })
    }

    /// Explicit nested family from point lists (level 1 first). Each level
    /// must be non-empty (so that `0 ∈ I − I`) and contained in the next.
    pub fn explicit(d: usize, level_points: Vec<Vec<Vec<i64>>>) -> Result<Self> {
        if d == 0 || level_points.is_empty() {
            return Err(Error::InvalidParameter("need d ≥ 1 and at least one level".into()));
        }
        let mut levels = Vec::with_capacity(level_points.len());
        let mut member: Vec<HashSet<Vec<i64>>> = Vec::with_capacity(level_points.len());
        for (idx, pts) in level_points.into_iter().enumerate() {
            if pts.is_empty() {
                return Err(Error::InvalidParameter(format!("level {} is empty", idx + 1)));
            }
            let set: BTreeSet<Vec<i64>> = pts.into_iter().collect();
            for p in &set {
                if p.len() != d {
                    return Err(Error::InvalidParameter(format!(
                        "point {p:?} in level {} has wrong dimension",
                        idx + 1
                    )));
                }
            }
            if let Some(prev) = member.last() {
                let hash: HashSet<Vec<i64>> = set.iter().cloned().collect();
                if !prev.iter().all(|p| hash.contains(p)) {
                    return Err(Error::InvalidParameter(format!(
                        "level {} is not contained in level {}",
                        idx,
                        idx + 1
                    )));
                }
            }
            member.push(set.iter().cloned().collect());
            levels.push(set.into_iter().collect());
        }
        Ok(NestedSets { d, shape: Shape::Explicit { levels, member } })
    }

    /// Lattice dimension.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of levels `N`.
    #[must_use]
    pub fn n_levels(&self) -> usize {
        match &self.shape {
            Shape::ShellBalls { levels, .. } => *levels,
            Shape::Explicit { levels, .. } => levels.len(),
        }
    }

    /// Points of level `m` (1-based), in lexicographic order.
    #[must_use]
    pub fn points(&self, level: usize) -> Vec<Vec<i64>> {
        assert!(level >= 1 && level <= self.n_levels(), "level out of range");
        match &self.shape {
            Shape::ShellBalls { norm, r, .. } => {
                let mut out = Vec::new();
                for_each_lattice_ball(self.d, strict_ball_budget(*norm, (level as i64 + 1) * r), |p| {
                    out.push(p.to_vec());
                });
                out
            }
            Shape::Explicit { levels, .. } => levels[level - 1].clone(),
        }
    }

    /// Membership test `x ∈ I_level`.
    #[must_use]
    pub fn contains(&self, level: usize, x: &[i64]) -> bool {
        assert!(level >= 1 && level <= self.n_levels(), "level out of range");
        match &self.shape {
            Shape::ShellBalls { norm, r, .. } => {
                let s = (level as i64 + 1) * r;
                match norm {
                    Norm::Inf => x.iter().all(|c| c.abs() <= s - 1),
                    Norm::One => x.iter().map(|c| c.abs()).sum::<i64>() <= s - 1,
                    Norm::Two => x.iter().map(|c| c * c).sum::<i64>() <= s * s - 1,
                }
            }
            Shape::Explicit { member, .. } => member[level - 1].contains(x),
        }
    }

    /// The difference set `I_level − I_level`, exactly.
    fn difference(&self, level: usize) -> DiffSet {
        match &self.shape {
            Shape::ShellBalls { norm, r, .. } => {
                let s = (level as i64 + 1) * r;
                // slices of the strict ball over Z^{d-1} prefixes
                let mut prefixes: Vec<(Vec<i64>, i64)> = Vec::new();
                if self.d == 1 {
                    prefixes.push((Vec::new(), s - 1));
                } else {
                    let budget = match norm {
                        Norm::Inf => BallBudget::Linf(s - 1),
                        Norm::One => BallBudget::L1(s - 1),
                        Norm::Two => BallBudget::L2Sq(s * s - 1),
                    };
                    for_each_lattice_ball(self.d - 1, budget, |p| {
                        let h = match norm {
                            Norm::Inf => s - 1,
                            Norm::One => s - 1 - p.iter().map(|c| c.abs()).sum::<i64>(),
                            Norm::Two => isqrt(s * s - 1 - p.iter().map(|c| c * c).sum::<i64>()),
                        };
                        prefixes.push((p.to_vec(), h));
                    });
                }
                let mut slices: HashMap<Vec<i64>, i64> = HashMap::new();
                for (a, ha) in &prefixes {
                    for (b, hb) in &prefixes {
                        let key: Vec<i64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                        let width = ha + hb;
                        slices
                            .entry(key)
                            .and_modify(|w| *w = (*w).max(width))
                            .or_insert(width);
                    }
                }
                let size = slices.values().map(|h| (2 * h + 1) as u128).sum();
                DiffSet::Slices { slices, size }
            }
            Shape::Explicit { levels, .. } => {
                let pts = &levels[level - 1];
                let mut set = HashSet::new();
                for a in pts {
                    for b in pts {
                        set.insert(a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<i64>>());
                    }
                }
                DiffSet::Set(set)
            }
        }
    }
}

/// Strict ball `{x : |x|_norm < s}` as an enumeration budget.
fn strict_ball_budget(norm: Norm, s: i64) -> BallBudget {
    match norm {
        Norm::Inf => BallBudget::Linf(s - 1),
        Norm::One => BallBudget::L1(s - 1),
        Norm::Two => BallBudget::L2Sq(s * s - 1),
    }
}

/// Difference set of one level, in whichever exact form fits its shape.
enum DiffSet {
    Slices { slices: HashMap<Vec<i64>, i64>, size: u128 },
    Set(HashSet<Vec<i64>>),
}

impl DiffSet {
    fn contains(&self, v: &[i64]) -> bool {
        match self {
            DiffSet::Slices { slices, .. } => {
                let (last, prefix) = v.split_last().expect("nonempty vector");
                slices.get(prefix).is_some_and(|h| last.abs() <= *h)
            }
            DiffSet::Set(set) => set.contains(v),
        }
    }

    fn size(&self) -> u128 {
        match self {
            DiffSet::Slices { size, .. } => *size,
            DiffSet::Set(set) => set.len() as u128,
        }
    }
}

/// Exact outcome of the three covering-lemma conclusions for one selection.
#[derive(Debug, Clone, Copy)]
pub struct CoveringCertificate {
    /// Accepted translates are pairwise disjoint.
    pub disjoint: bool,
    /// `B ⊆ ∪_z (z + I_{k(z)} − I_{k(z)})`.
    pub covered: bool,
    /// `|B| ≤ Σ_z |I_{k(z)} − I_{k(z)}|`.
    pub cardinality_ok: bool,
    /// `|B|`.
    pub b_size: usize,
    /// `Σ_{z ∈ B'} |I_{k(z)} − I_{k(z)}|`.
    pub difference_size_sum: u128,
}

impl CoveringCertificate {
    /// All three conclusions hold.
    #[must_use]
    pub fn all_hold(&self) -> bool {
        self.disjoint && self.covered && self.cardinality_ok
    }
}

/// A greedy maximal selection together with its verified certificate.
#[derive(Debug, Clone)]
pub struct Selection {
    /// Accepted points with their levels, in acceptance order.
    pub chosen: Vec<(Vec<i64>, usize)>,
    /// Verified covering-lemma conclusions.
    pub certificate: CoveringCertificate,
}

/// Runs the greedy selection on `B` (as `points`) with level assignment
/// `levels` and verifies the covering conclusions exactly.
///
/// Candidates are taken level `N` down to `1`, each level scanned in
/// lexicographic point order; a candidate is accepted exactly when its
/// translate avoids every previously occupied site. `B` must consist of
/// distinct points of the family's dimension with levels in `1..=N`.
pub fn covering_select(
    points: &[Vec<i64>],
    levels: &[usize],
    sets: &NestedSets,
) -> Result<Selection> {
    if points.len() != levels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} points but {} level assignments",
            points.len(),
            levels.len()
        )));
    }
    let n_levels = sets.n_levels();
    let mut seen: HashSet<&[i64]> = HashSet::with_capacity(points.len());
    for (p, &l) in points.iter().zip(levels) {
        if p.len() != sets.dim() {
            return Err(Error::InvalidParameter(format!("point {p:?} has wrong dimension")));
        }
        if l == 0 || l > n_levels {
            return Err(Error::InvalidParameter(format!("level {l} outside 1..={n_levels}")));
        }
        if !seen.insert(p.as_slice()) {
            return Err(Error::InvalidParameter(format!("duplicate point {p:?}")));
        }
    }

    let mut level_points: HashMap<usize, Vec<Vec<i64>>> = HashMap::new();
    let mut occupied: HashSet<Vec<i64>> = HashSet::new();
    let mut chosen: Vec<(Vec<i64>, usize)> = Vec::new();
    let mut occupied_count: u128 = 0;

    for level in (1..=n_levels).rev() {
        let mut candidates: Vec<&Vec<i64>> = points
            .iter()
            .zip(levels)
            .filter(|(_, &l)| l == level)
            .map(|(p, _)| p)
            .collect();
        candidates.sort();
        let translate = level_points
            .entry(level)
            .or_insert_with(|| sets.points(level))
            .clone();
        for z in candidates {
            let free = translate.iter().all(|i| {
                let site: Vec<i64> = z.iter().zip(i).map(|(a, b)| a + b).collect();
                !occupied.contains(&site)
            });
            if free {
                for i in &translate {
                    occupied.insert(z.iter().zip(i).map(|(a, b)| a + b).collect());
                }
                occupied_count += translate.len() as u128;
                chosen.push((z.clone(), level));
            }
        }
    }

    // verify all three conclusions exactly
    let disjoint = occupied.len() as u128 == occupied_count;
    let mut differences: HashMap<usize, DiffSet> = HashMap::new();
    let covered = points.iter().all(|b| {
        chosen.iter().any(|(z, l)| {
            let diff = differences.entry(*l).or_insert_with(|| sets.difference(*l));
            let v: Vec<i64> = b.iter().zip(z).map(|(x, y)| x - y).collect();
            diff.contains(&v)
        })
    });
    let difference_size_sum: u128 = chosen
        .iter()
        .map(|(_, l)| {
            differences
                .entry(*l)
                .or_insert_with(|| sets.difference(*l))
                .size()
        })
        .sum();
    let certificate = CoveringCertificate {
        disjoint,
        covered,
        cardinality_ok: points.len() as u128 <= difference_size_sum,
        b_size: points.len(),
        difference_size_sum,
    };
    debug_assert!(certificate.all_hold(), "covering certificate failed: {certificate:?}");
    Ok(Selection { chosen, certificate })
}

/// One randomized covering instance's outcome.
#[derive(Debug, Clone, Copy)]
pub struct InstanceRecord {
    /// Instance index under the master seed.
    pub index: u64,
    /// Number of candidate points `|B|`.
    pub b_size: usize,
    /// Number of accepted points `|B'|`.
    pub chosen: usize,
    /// `Σ |I − I|` over accepted points.
    pub difference_size_sum: u128,
    /// All three covering conclusions held.
    pub ok: bool,
}

/// Outcome of a batch of randomized covering instances.
#[derive(Debug, Clone)]
pub struct CoveringTrial {
    /// Per-instance records in index order.
    pub records: Vec<InstanceRecord>,
    /// Number of instances whose certificate failed.
    pub failures: u64,
    /// All instances passed.
    pub all_hold: bool,
}

/// Runs `instances` randomized covering-selection instances in dimension
/// `d` and verifies the covering conclusions on each.
///
/// Per instance: a shell-ball family with `N ∈ {1..4}` levels, scale
/// `r ∈ {1..3}`, and a random norm; up to 50 distinct points drawn uniformly
/// from `[-20, 20]^d`; levels assigned uniformly. Instances derive
/// independent streams from the master seed, so the batch is reproducible
/// and insensitive to how it is parallelized.
pub fn covering_random_trials(instances: u64, master_seed: u64, d: usize) -> Result<CoveringTrial> {
    if d == 0 || d > 3 {
        return Err(Error::InvalidParameter(format!("dimension {d} outside 1..=3")));
    }
    let records: Vec<InstanceRecord> = (0..instances)
        .into_par_iter()
        .map(|k| {
            let mut stream = rng::Stream::keyed(&[rng::replica_seed(master_seed, k), tag::INSTANCE]);
            let n_levels = 1 + (stream.next_u64() % 4) as usize;
            let r = 1 + (stream.next_u64() % 3) as i64;
            let norm = match stream.next_u64() % 3 {
                0 => Norm::One,
                1 => Norm::Two,
                _ => Norm::Inf,
            };
            let b_size = 1 + (stream.next_u64() % 50) as usize;
            let mut points: BTreeSet<Vec<i64>> = BTreeSet::new();
            let mut attempts = 0;
            while points.len() < b_size && attempts < 2000 {
                let p: Vec<i64> = (0..d).map(|_| -20 + (stream.next_u64() % 41) as i64).collect();
                points.insert(p);
                attempts += 1;
            }
            let points: Vec<Vec<i64>> = points.into_iter().collect();
            let levels: Vec<usize> =
                points.iter().map(|_| 1 + (stream.next_u64() % n_levels as u64) as usize).collect();
            let sets = NestedSets::shell_balls(d, norm, r, n_levels)?;
            let sel = covering_select(&points, &levels, &sets)?;
            Ok(InstanceRecord {
                index: k,
                b_size: points.len(),
                chosen: sel.chosen.len(),
                difference_size_sum: sel.certificate.difference_size_sum,
                ok: sel.certificate.all_hold(),
            })
        })
        .collect::<Result<_>>()?;
    let failures = records.iter().filter(|r| !r.ok).count() as u64;
    Ok(CoveringTrial { failures, all_hold: failures == 0, records })
}
