//! Torus geometry: norms, lattice-to-physical maps, minimal-image
//! displacements, and box enumeration.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which `l^kappa` norm measures distances. All distance-dependent
/// quantities (rate kernels, envelopes, displacement moments) use one norm
/// consistently per environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Norm {
    /// Sum of absolute coordinates.
    One,
    /// Euclidean norm (the default).
    #[default]
    Two,
    /// Maximum absolute coordinate.
    Inf,
}

impl Norm {
    /// Norm of a physical vector.
    #[inline]
    #[must_use]
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            Norm::One => x.iter().map(|v| v.abs()).sum(),
            Norm::Two => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::Inf => x.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// Norm of a lattice vector.
    #[inline]
    #[must_use]
    pub fn eval_int(self, j: &[i64]) -> f64 {
        match self {
            Norm::One => j.iter().map(|v| v.abs() as f64).sum(),
            Norm::Two => j.iter().map(|v| (v * v) as f64).sum::<f64>().sqrt(),
            Norm::Inf => j.iter().fold(0, |m: i64, &v| m.max(v.abs())) as f64,
        }
    }

    /// Volume of the unit ball of this norm in dimension `d`.
    #[must_use]
    pub fn unit_ball_volume(self, d: usize) -> f64 {
        match self {
            Norm::Inf => 2f64.powi(d as i32),
            Norm::One => {
                let mut v = 2f64.powi(d as i32);
                for k in 2..=d {
                    v /= k as f64;
                }
                v
            }
            Norm::Two => {
                // v_d = v_{d-2} * 2 pi / d with v_0 = 1, v_1 = 2.
                if d == 0 {
                    return 1.0;
                }
                let mut v = if d % 2 == 0 { 1.0 } else { 2.0 };
                let mut k = if d % 2 == 0 { 2 } else { 3 };
                while k <= d {
                    v *= 2.0 * std::f64::consts::PI / k as f64;
                    k += 2;
                }
                v
            }
        }
    }

    /// `|x|_kappa <= scale * |x|_inf` with the smallest such scale.
    #[must_use]
    pub fn inf_comparison(self, d: usize) -> f64 {
        match self {
            Norm::One => d as f64,
            Norm::Two => (d as f64).sqrt(),
            Norm::Inf => 1.0,
        }
    }

    /// Text tag used in serialized environments and configs.
    #[must_use]
    pub fn tag(self) -> &'static str {
        match self {
            Norm::One => "1",
            Norm::Two => "2",
            Norm::Inf => "inf",
        }
    }

    /// Parses the text tag.
    pub fn from_tag(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Norm::One),
            "2" => Ok(Norm::Two),
            "inf" => Ok(Norm::Inf),
            other => Err(Error::Format(format!("unknown norm tag {other:?}"))),
        }
    }
}

/// Linear map sending lattice coordinates to physical positions.
///
/// The physical torus is the image of `[0, L)^d`; its fundamental cell has
/// volume `|det V|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeMap {
    /// Columns of the matrix, `columns[i]` is the image of the i-th basis
    /// vector.
    pub columns: Vec<Vec<f64>>,
}

impl LatticeMap {
    /// Identity map in dimension `d`.
    #[must_use]
    pub fn identity(d: usize) -> Self {
        let columns = (0..d)
            .map(|i| (0..d).map(|r| if r == i { 1.0 } else { 0.0 }).collect())
            .collect();
        LatticeMap { columns }
    }

    /// Planar triangular-lattice map used by the non-square demo model.
    #[must_use]
    pub fn triangular() -> Self {
        LatticeMap {
            columns: vec![vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]],
        }
    }

    /// Dimension of the map.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    /// Whether this is exactly the identity.
    #[must_use]
    pub fn is_identity(&self) -> bool {
        *self == LatticeMap::identity(self.dim())
    }

    /// Applies the map to integer lattice coordinates.
    #[must_use]
    pub fn apply(&self, j: &[i64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (i, col) in self.columns.iter().enumerate() {
            let c = j[i] as f64;
            for r in 0..d {
                out[r] += c * col[r];
            }
        }
        out
    }

    /// Absolute determinant, the fundamental-cell volume.
    #[must_use]
    pub fn det_abs(&self) -> f64 {
        let d = self.dim();
        let m = nalgebra::DMatrix::from_fn(d, d, |r, c| self.columns[c][r]);
        m.determinant().abs()
    }
}

/// Discrete torus geometry: `L` fundamental cells per axis under a lattice
/// map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Torus {
    /// Spatial dimension.
    pub d: usize,
    /// Cells per axis.
    pub side: i64,
    /// Lattice-to-physical map.
    pub map: LatticeMap,
}

impl Torus {
    /// Square torus with identity map.
    #[must_use]
    pub fn square(d: usize, side: i64) -> Self {
        Torus {
            d,
            side,
            map: LatticeMap::identity(d),
        }
    }

    /// Number of lattice sites.
    #[must_use]
    pub fn site_count(&self) -> usize {
        (self.side as usize).pow(self.d as u32)
    }

    /// Physical volume `L^d |det V|`.
    #[must_use]
    pub fn volume(&self) -> f64 {
        (self.side as f64).powi(self.d as i32) * self.map.det_abs()
    }

    /// Wraps lattice coordinates into `[0, L)^d`.
    #[must_use]
    pub fn wrap_site(&self, j: &[i64]) -> Vec<i64> {
        j.iter().map(|&c| c.rem_euclid(self.side)).collect()
    }

    /// Linear index of wrapped lattice coordinates (row-major).
    #[must_use]
    pub fn site_index(&self, j: &[i64]) -> usize {
        let mut idx = 0usize;
        for &c in j {
            idx = idx * self.side as usize + c.rem_euclid(self.side) as usize;
        }
        idx
    }

    /// Lattice coordinates of a linear index.
    #[must_use]
    pub fn site_of_index(&self, mut idx: usize) -> Vec<i64> {
        let mut j = vec![0i64; self.d];
        for a in (0..self.d).rev() {
            j[a] = (idx % self.side as usize) as i64;
            idx /= self.side as usize;
        }
        j
    }

    /// Minimal-image representative of a lattice displacement, componentwise
    /// in `(-L/2, L/2]`.
    #[must_use]
    pub fn min_image_lattice(&self, delta: &[i64]) -> Vec<i64> {
        delta
            .iter()
            .map(|&c| {
                let mut r = c.rem_euclid(self.side);
                if 2 * r > self.side {
                    r -= self.side;
                }
                r
            })
            .collect()
    }

    /// Minimal-image physical displacement from `a` to `b` (positions in
    /// physical coordinates).
    ///
    /// For the identity map this wraps componentwise; otherwise the nearest
    /// of the 3^d neighboring periodic images is taken, which is exact
    /// whenever the true image offset lies in `{-1, 0, 1}^d` (all supported
    /// maps are mildly skewed, so this holds for displacements shorter than
    /// half the torus).
    #[must_use]
    pub fn min_image_vec(&self, a: &[f64], b: &[f64], norm: Norm) -> Vec<f64> {
        let d = self.d;
        let s = self.side as f64;
        if self.map.is_identity() {
            return (0..d)
                .map(|i| {
                    let mut x = (b[i] - a[i]).rem_euclid(s);
                    if 2.0 * x > s {
                        x -= s;
                    }
                    x
                })
                .collect();
        }
        let raw: Vec<f64> = (0..d).map(|i| b[i] - a[i]).collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut offset = vec![-1i64; d];
        loop {
            let cand: Vec<f64> = {
                let shift = self.map.apply(&offset);
                (0..d).map(|i| raw[i] + s * shift[i]).collect()
            };
            let len = norm.eval(&cand);
            if best.as_ref().is_none_or(|(bl, _)| len < *bl) {
                best = Some((len, cand));
            }
            // odometer over {-1,0,1}^d
            let mut a_idx = 0;
            loop {
                if a_idx == d {
                    return best.unwrap().1;
                }
                offset[a_idx] += 1;
                if offset[a_idx] <= 1 {
                    break;
                }
                offset[a_idx] = -1;
                a_idx += 1;
            }
        }
    }
}

/// Exact integer square root of a non-negative `v` (largest `s` with `s*s <= v`).
pub(crate) fn isqrt(v: i64) -> i64 {
    debug_assert!(v >= 0);
    let mut s = (v as f64).sqrt() as i64;
    while s > 0 && s.checked_mul(s).is_none_or(|q| q > v) {
        s -= 1;
    }
    while (s + 1).checked_mul(s + 1).is_some_and(|q| q <= v) {
        s += 1;
    }
    s
}

/// Shape of a lattice ball handed to [`for_each_lattice_ball`].
///
/// The `L2Sq` variant carries the *squared* radius so that membership tests
/// stay in exact integer arithmetic; `Linf`/`L1` carry the radius itself.
#[derive(Debug, Clone, Copy)]
pub(crate) enum BallBudget {
    /// `max_i |j_i| <= r`.
    Linf(i64),
    /// `sum_i |j_i| <= r`.
    L1(i64),
    /// `sum_i j_i^2 <= s`.
    L2Sq(i64),
}

impl BallBudget {
    /// Budget describing the closed ball `|j|_norm <= radius`.
    pub(crate) fn closed(norm: Norm, radius: i64) -> BallBudget {
        match norm {
            Norm::Inf => BallBudget::Linf(radius),
            Norm::One => BallBudget::L1(radius),
            Norm::Two => BallBudget::L2Sq(radius.saturating_mul(radius)),
        }
    }
}

/// Visits every lattice point of the given ball in lexicographic order,
/// allocating nothing per point. An empty budget visits nothing.
pub(crate) fn for_each_lattice_ball<F: FnMut(&[i64])>(d: usize, budget: BallBudget, mut f: F) {
    assert!(d >= 1, "dimension must be positive");
    match (d, budget) {
        (1, b) => {
            let r = match b {
                BallBudget::Linf(r) | BallBudget::L1(r) => r,
                BallBudget::L2Sq(s) if s >= 0 => isqrt(s),
                BallBudget::L2Sq(_) => -1,
            };
            let mut p = [0i64; 1];
            for x in -r..=r {
                p[0] = x;
                f(&p);
            }
        }
        (2, BallBudget::L2Sq(s)) => {
            if s < 0 {
                return;
            }
            let r = isqrt(s);
            let mut p = [0i64; 2];
            for x in -r..=r {
                let h = isqrt(s - x * x);
                p[0] = x;
                for y in -h..=h {
                    p[1] = y;
                    f(&p);
                }
            }
        }
        (2, BallBudget::L1(r)) => {
            let mut p = [0i64; 2];
            for x in -r..=r {
                let h = r - x.abs();
                p[0] = x;
                for y in -h..=h {
                    p[1] = y;
                    f(&p);
                }
            }
        }
        (2, BallBudget::Linf(r)) => {
            let mut p = [0i64; 2];
            for x in -r..=r {
                p[0] = x;
                for y in -r..=r {
                    p[1] = y;
                    f(&p);
                }
            }
        }
        (d, b) => {
            let mut coords = vec![0i64; d];
            ball_rec(&mut coords, 0, b, &mut f);
        }
    }
}

fn ball_rec<F: FnMut(&[i64])>(coords: &mut [i64], level: usize, rem: BallBudget, f: &mut F) {
    let half = match rem {
        BallBudget::Linf(r) | BallBudget::L1(r) => r,
        BallBudget::L2Sq(s) => {
            if s < 0 {
                return;
            }
            isqrt(s)
        }
    };
    if half < 0 {
        return;
    }
    if level == coords.len() - 1 {
        for x in -half..=half {
            coords[level] = x;
            f(coords);
        }
        return;
    }
    for x in -half..=half {
        coords[level] = x;
        let next = match rem {
            BallBudget::Linf(r) => BallBudget::Linf(r),
            BallBudget::L1(r) => BallBudget::L1(r - x.abs()),
            BallBudget::L2Sq(s) => BallBudget::L2Sq(s - x * x),
        };
        ball_rec(coords, level + 1, next, f);
    }
}

/// Iterator over integer boxes `[lo_i, hi_i]` per axis (inclusive bounds).
#[derive(Debug, Clone)]
pub struct BoxIter {
    lo: Vec<i64>,
    hi: Vec<i64>,
    cur: Vec<i64>,
    done: bool,
}

impl BoxIter {
    /// Box with common bounds on every axis.
    #[must_use]
    pub fn cube(d: usize, lo: i64, hi: i64) -> Self {
        BoxIter::new(vec![lo; d], vec![hi; d])
    }

    /// General box; empty if any `lo_i > hi_i`.
    #[must_use]
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Self {
        let done = lo.iter().zip(&hi).any(|(a, b)| a > b);
        let cur = lo.clone();
        BoxIter { lo, hi, cur, done }
    }
}

impl Iterator for BoxIter {
    type Item = Vec<i64>;

    fn next(&mut self) -> Option<Vec<i64>> {
        if self.done {
            return None;
        }
        let out = self.cur.clone();
        // increment last axis fastest
        let d = self.lo.len();
        let mut a = d;
        loop {
            if a == 0 {
                self.done = true;
                break;
            }
            a -= 1;
            self.cur[a] += 1;
            if self.cur[a] <= self.hi[a] {
                break;
            }
            self.cur[a] = self.lo[a];
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_ball_enumeration_matches_brute_force() {
        for d in 1..=4usize {
            for norm in [Norm::One, Norm::Two, Norm::Inf] {
                for radius in 0..=5i64 {
                    let mut listed = Vec::new();
                    for_each_lattice_ball(d, BallBudget::closed(norm, radius), |p| {
                        listed.push(p.to_vec());
                    });
                    let brute: Vec<Vec<i64>> = BoxIter::cube(d, -radius, radius)
                        .filter(|p| norm.eval_int(p) <= radius as f64 + 1e-12)
                        .collect();
                    assert_eq!(listed, brute, "d={d} norm={norm:?} radius={radius}");
                }
            }
        }
        // squared-budget form picks up points between integer radii
        let mut count = 0usize;
        for_each_lattice_ball(2, BallBudget::L2Sq(2), |_| count += 1);
        assert_eq!(count, 9); // the 3x3 block: all |x|^2 <= 2
    }

    #[test]
    fn isqrt_is_exact() {
        for v in 0..2000i64 {
            let s = isqrt(v);
            assert!(s * s <= v && (s + 1) * (s + 1) > v, "v={v} s={s}");
        }
        assert_eq!(isqrt(i64::MAX), 3_037_000_499);
    }

    #[test]
    fn ball_volumes_match_closed_forms() {
        assert!((Norm::Two.unit_ball_volume(1) - 2.0).abs() < 1e-12);
        assert!((Norm::Two.unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-12);
        assert!(
            (Norm::Two.unit_ball_volume(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-12
        );
        assert!((Norm::One.unit_ball_volume(2) - 2.0).abs() < 1e-12);
        assert!((Norm::One.unit_ball_volume(3) - 4.0 / 3.0).abs() < 1e-12);
        assert!((Norm::Inf.unit_ball_volume(3) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn min_image_wraps_componentwise() {
        let t = Torus::square(2, 8);
        let delta = t.min_image_vec(&[0.0, 0.0], &[7.0, 5.0], Norm::Two);
        assert_eq!(delta, vec![-1.0, -3.0]);
        let dl = t.min_image_lattice(&[7, 5]);
        assert_eq!(dl, vec![-1, -3]);
        // half-torus convention: representative of L/2 is +L/2
        assert_eq!(t.min_image_lattice(&[4, -4]), vec![4, 4]);
    }

    #[test]
    fn triangular_map_cell_volume() {
        let map = LatticeMap::triangular();
        assert!((map.det_abs() - 3f64.sqrt() / 2.0).abs() < 1e-14);
        let t = Torus { d: 2, side: 4, map };
        assert!((t.volume() - 16.0 * 3f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn skewed_min_image_picks_nearest_candidate() {
        let t = Torus {
            d: 2,
            side: 4,
            map: LatticeMap::triangular(),
        };
        // neighbors across the wrap: site (3,0) to site (0,0) is one step
        let a = t.map.apply(&[3, 0]);
        let b = t.map.apply(&[0, 0]);
        let delta = t.min_image_vec(&a, &b, Norm::Two);
        assert!((Norm::Two.eval(&delta) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn box_iter_counts_points() {
        assert_eq!(BoxIter::cube(2, -2, 2).count(), 25);
        assert_eq!(BoxIter::new(vec![0, 0], vec![1, -1]).count(), 0);
        let pts: Vec<Vec<i64>> = BoxIter::cube(1, -1, 1).collect();
        assert_eq!(pts, vec![vec![-1], vec![0], vec![1]]);
    }

    #[test]
    fn site_indexing_round_trips() {
        let t = Torus::square(3, 5);
        for idx in 0..t.site_count() {
            let j = t.site_of_index(idx);
            assert_eq!(t.site_index(&j), idx);
        }
    }
}
