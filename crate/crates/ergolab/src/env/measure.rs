//! Atomic measures and their diffusive rescaling.

use crate::geom::{Norm, Torus};

/// A purely atomic measure `sum_x n_x delta_{scale * x}` on a rescaled
/// torus.
///
/// Base positions are stored once, re-centered so the torus center sits at
/// the origin; the scale enters only when positions and masses are read, so
/// `measure(A) = scale^d * base(A / scale)` holds bit-consistently for every
/// scale.
#[derive(Debug, Clone)]
pub struct AtomicMeasure {
    /// Geometry of the underlying unscaled torus.
    pub torus: Torus,
    /// Norm used for tail functionals.
    pub norm: Norm,
    /// Diffusive scale factor applied to positions (masses carry `scale^d`).
    pub scale: f64,
    base_positions: Vec<f64>,
    multiplicity: Vec<f64>,
}

impl AtomicMeasure {
    /// Builds the unit-scale measure from raw torus positions, re-centering
    /// them so the torus center becomes the origin (minimal-image
    /// representatives, each coordinate in `(-L/2, L/2]` cell units).
    #[must_use]
    pub fn from_parts(
        torus: Torus,
        norm: Norm,
        positions: &[f64],
        multiplicity: Vec<f64>,
    ) -> Self {
        let d = torus.d;
        let center = torus.map.apply(&vec![torus.side; d]);
        let center: Vec<f64> = center.iter().map(|c| c / 2.0).collect();
        let n = multiplicity.len();
        let mut base = Vec::with_capacity(n * d);
        for a in 0..n {
            let delta = torus.min_image_vec(&center, &positions[a * d..(a + 1) * d], norm);
            base.extend(delta);
        }
        AtomicMeasure {
            torus,
            norm,
            scale: 1.0,
            base_positions: base,
            multiplicity,
        }
    }

    /// The same measure at a different diffusive scale.
    #[must_use]
    pub fn rescaled(&self, scale: f64) -> AtomicMeasure {
        assert!(scale > 0.0 && scale.is_finite(), "scale must be positive");
        let mut out = self.clone();
        out.scale = scale;
        out
    }

    /// Number of atoms.
    #[must_use]
    pub fn atom_count(&self) -> usize {
        self.multiplicity.len()
    }

    /// Scaled position of atom `a`.
    #[must_use]
    pub fn position(&self, a: usize) -> Vec<f64> {
        let d = self.torus.d;
        self.base_positions[a * d..(a + 1) * d]
            .iter()
            .map(|c| c * self.scale)
            .collect()
    }

    /// Mass of atom `a`, `scale^d * n_a`.
    #[must_use]
    pub fn mass(&self, a: usize) -> f64 {
        self.scale.powi(self.torus.d as i32) * self.multiplicity[a]
    }

    /// Total mass.
    #[must_use]
    pub fn total_mass(&self) -> f64 {
        self.scale.powi(self.torus.d as i32) * self.multiplicity.iter().sum::<f64>()
    }

    /// Integral of `f` against the measure with compensated summation.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        let d = self.torus.d;
        let mut pos = vec![0.0; d];
        let mut sum = 0.0;
        let mut comp = 0.0;
        for a in 0..self.atom_count() {
            for i in 0..d {
                pos[i] = self.base_positions[a * d + i] * self.scale;
            }
            let term = self.multiplicity[a] * f(&pos);
            // Kahan update
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        self.scale.powi(d as i32) * sum
    }

    /// Tail functional: integral of `theta(|x|)` over atoms with
    /// `|x| >= cutoff`, distances from the origin in the measure's norm.
    ///
    /// Positions are already centered representatives, so `|x|` is the
    /// minimal-image distance from the torus center.
    pub fn tail_mass<F>(&self, theta: F, cutoff: f64) -> f64
    where
        F: Fn(f64) -> f64,
    {
        let d = self.torus.d;
        let mut pos = vec![0.0; d];
        let mut sum = 0.0;
        let mut comp = 0.0;
        for a in 0..self.atom_count() {
            for i in 0..d {
                pos[i] = self.base_positions[a * d + i] * self.scale;
            }
            let r = self.norm.eval(&pos);
            if r >= cutoff {
                let term = self.multiplicity[a] * theta(r);
                let y = term - comp;
                let t = sum + y;
                comp = (t - sum) - y;
                sum = t;
            }
        }
        self.scale.powi(d as i32) * sum
    }
}
