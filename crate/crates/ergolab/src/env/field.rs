//! Scalar observable fields on lattice sites.

use crate::error::{Error, Result};
use crate::rng::{self, coord_word, mix, tag};
use serde::{Deserialize, Serialize};

/// Marginal law of an i.i.d. scalar field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldLaw {
    /// Deterministic value.
    Constant {
        /// The value.
        value: f64,
    },
    /// Indicator draw with success probability `p`.
    Bernoulli {
        /// Success probability in `[0, 1]`.
        p: f64,
    },
    /// Uniform on `[lo, hi)`.
    Uniform {
        /// Lower endpoint.
        lo: f64,
        /// Upper endpoint.
        hi: f64,
    },
    /// Exponential with unit rate.
    Exponential,
}

impl FieldLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            FieldLaw::Constant { value } => value.is_finite(),
            FieldLaw::Bernoulli { p } => (0.0..=1.0).contains(&p),
            FieldLaw::Uniform { lo, hi } => lo.is_finite() && hi >= lo && hi.is_finite(),
            FieldLaw::Exponential => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("field law {self:?}")))
        }
    }

    #[inline]
    fn transform(&self, word: u64) -> f64 {
        match *self {
            FieldLaw::Constant { value } => value,
            FieldLaw::Bernoulli { p } => f64::from(rng::to_unit(word) < p),
            FieldLaw::Uniform { lo, hi } => lo + (hi - lo) * rng::to_unit(word),
            FieldLaw::Exponential => -(1.0 - rng::to_unit(word)).ln(),
        }
    }

    /// Expected value of the law.
    #[must_use]
    pub fn mean(&self) -> f64 {
        match *self {
            FieldLaw::Constant { value } => value,
            FieldLaw::Bernoulli { p } => p,
            FieldLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            FieldLaw::Exponential => 1.0,
        }
    }

    /// Deterministic upper bound on `|value|`, when one exists.
    #[must_use]
    pub fn sup_bound(&self) -> Option<f64> {
        match *self {
            FieldLaw::Constant { value } => Some(value.abs()),
            FieldLaw::Bernoulli { .. } => Some(1.0),
            FieldLaw::Uniform { lo, hi } => Some(lo.abs().max(hi.abs())),
            FieldLaw::Exponential => None,
        }
    }

    /// Whether all values are nonnegative.
    #[must_use]
    pub fn nonnegative(&self) -> bool {
        match *self {
            FieldLaw::Constant { value } => value >= 0.0,
            FieldLaw::Uniform { lo, .. } => lo >= 0.0,
            FieldLaw::Bernoulli { .. } | FieldLaw::Exponential => true,
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    /// i.i.d. values keyed by `(seed, site + base)`.
    Hash { law: FieldLaw },
    /// One of several laws, chosen once per seed with the given weights.
    Mixture {
        laws: Vec<FieldLaw>,
        label: usize,
    },
    /// Values stored on an inclusive box; evaluation outside errors.
    Stored {
        lo: Vec<i64>,
        hi: Vec<i64>,
        values: Vec<f64>,
    },
}

/// A scalar observable field over lattice sites.
///
/// Hash-backed fields are defined on all of the integer lattice: the value
/// at `j` is a pure function of `(seed, j + base)`, so shifting the base
/// point by `g` is exactly translation by `g`.
#[derive(Debug, Clone)]
pub struct ScalarField {
    d: usize,
    seed: u64,
    base: Vec<i64>,
    kind: Kind,
}

impl ScalarField {
    /// i.i.d. field with the given marginal law.
    pub fn iid(d: usize, seed: u64, law: FieldLaw) -> Result<Self> {
        law.validate()?;
        Ok(ScalarField {
            d,
            seed,
            base: vec![0; d],
            kind: Kind::Hash { law },
        })
    }

    /// Mixture field: one component law is selected per seed with the given
    /// weights, then the field is i.i.d. from that component. The selected
    /// label is exposed through [`ScalarField::mixture_label`].
    pub fn mixture(d: usize, seed: u64, components: &[(f64, FieldLaw)]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("empty mixture".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| *w).sum();
        if !(total > 0.0) || components.iter().any(|(w, _)| *w < 0.0) {
            return Err(Error::InvalidParameter("mixture weights".into()));
        }
        for (_, law) in components {
            law.validate()?;
        }
        let u = rng::to_unit(mix(&[seed, tag::COMPONENT]));
        let mut acc = 0.0;
        let mut label = components.len() - 1;
        for (i, (w, _)) in components.iter().enumerate() {
            acc += w / total;
            if u < acc {
                label = i;
                break;
            }
        }
        Ok(ScalarField {
            d,
            seed,
            base: vec![0; d],
            kind: Kind::Mixture {
                laws: components.iter().map(|(_, l)| l.clone()).collect(),
                label,
            },
        })
    }

    /// Field stored on the inclusive box `[lo, hi]^d` in row-major order.
    pub fn stored(lo: Vec<i64>, hi: Vec<i64>, values: Vec<f64>) -> Result<Self> {
        let d = lo.len();
        if hi.len() != d {
            return Err(Error::InvalidParameter("box bound dimensions differ".into()));
        }
        let mut count = 1usize;
        for i in 0..d {
            if hi[i] < lo[i] {
                return Err(Error::InvalidParameter("empty stored box".into()));
            }
            count *= (hi[i] - lo[i] + 1) as usize;
        }
        if values.len() != count {
            return Err(Error::InvalidParameter(format!(
                "stored box holds {count} sites, got {} values",
                values.len()
            )));
        }
        Ok(ScalarField {
            d,
            seed: 0,
            base: vec![0; d],
            kind: Kind::Stored { lo, hi, values },
        })
    }

    /// Dimension of the index lattice.
    #[must_use]
    pub fn dim(&self) -> usize {
        self.d
    }

    /// The field translated by `g`: `shifted.value(j) == self.value(j + g)`.
    #[must_use]
    pub fn shifted(&self, g: &[i64]) -> ScalarField {
        let mut out = self.clone();
        match &mut out.kind {
            Kind::Hash { .. } | Kind::Mixture { .. } => {
                for i in 0..self.d {
                    out.base[i] += g[i];
                }
            }
            Kind::Stored { lo, hi, .. } => {
                for i in 0..self.d {
                    lo[i] -= g[i];
                    hi[i] -= g[i];
                }
            }
        }
        out
    }

    /// Selected mixture component, if this is a mixture field.
    #[must_use]
    pub fn mixture_label(&self) -> Option<usize> {
        match &self.kind {
            Kind::Mixture { label, .. } => Some(*label),
            _ => None,
        }
    }

    /// Marginal law of the field values, when i.i.d.
    #[must_use]
    pub fn law(&self) -> Option<&FieldLaw> {
        match &self.kind {
            Kind::Hash { law } => Some(law),
            Kind::Mixture { laws, label } => Some(&laws[*label]),
            Kind::Stored { .. } => None,
        }
    }

    /// Checks that the whole cube `|j|_inf <= radius` is evaluable.
    pub fn check_box(&self, radius: i64) -> Result<()> {
        if let Kind::Stored { lo, hi, .. } = &self.kind {
            for i in 0..self.d {
                if lo[i] > -radius || hi[i] < radius {
                    return Err(Error::FieldDomain(format!(
                        "need |j| <= {radius}, stored box is [{:?}, {:?}]",
                        lo, hi
                    )));
                }
            }
        }
        Ok(())
    }

    /// Field value at lattice site `j`.
    ///
    /// Panics on stored fields outside their box; call
    /// [`ScalarField::check_box`] first.
    #[inline]
    #[must_use]
    pub fn value(&self, j: &[i64]) -> f64 {
        match &self.kind {
            Kind::Hash { law } => law.transform(self.site_word(j)),
            Kind::Mixture { laws, label } => laws[*label].transform(self.site_word(j)),
            Kind::Stored { lo, hi, values } => {
                let mut idx = 0usize;
                for i in 0..self.d {
                    let c = j[i];
                    assert!(c >= lo[i] && c <= hi[i], "field evaluated outside stored box");
                    idx = idx * (hi[i] - lo[i] + 1) as usize + (c - lo[i]) as usize;
                }
                values[idx]
            }
        }
    }

    #[inline]
    fn site_word(&self, j: &[i64]) -> u64 {
        // fixed-arity fast paths keep the hot loops free of allocation
        match self.d {
            1 => mix(&[self.seed, tag::FIELD, coord_word(j[0] + self.base[0])]),
            2 => mix(&[
                self.seed,
                tag::FIELD,
                coord_word(j[0] + self.base[0]),
                coord_word(j[1] + self.base[1]),
            ]),
            3 => mix(&[
                self.seed,
                tag::FIELD,
                coord_word(j[0] + self.base[0]),
                coord_word(j[1] + self.base[1]),
                coord_word(j[2] + self.base[2]),
            ]),
            _ => {
                let mut words = Vec::with_capacity(2 + self.d);
                words.extend_from_slice(&[self.seed, tag::FIELD]);
                words.extend(
                    j.iter()
                        .zip(&self.base)
                        .map(|(a, b)| coord_word(a + b)),
                );
                mix(&words)
            }
        }
    }
}
