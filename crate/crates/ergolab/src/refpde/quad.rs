//! Gaussian quadrature rules from the Golub–Welsch eigenvalue method.
//!
//! The nodes of an `n`-point rule for a weight function with three-term
//! recurrence coefficients `(a_k, b_k)` are the eigenvalues of the symmetric
//! tridiagonal Jacobi matrix with diagonal `a_k` and off-diagonal `b_k`; the
//! weight of node `k` is `μ₀ · v_k(0)²`, where `v_k` is the normalized
//! eigenvector and `μ₀` the total mass of the weight.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Nodes and weights of a Gaussian rule, nodes ascending.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Quadrature nodes.
    pub nodes: Vec<f64>,
    /// Matching positive weights.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Applies the rule to `f`: `Σ_k w_k f(x_k)`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Number of points.
    #[must_use]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True for the degenerate empty rule (never produced by constructors).
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Builds the rule from Jacobi recurrence coefficients.
///
/// `diag` holds `a_0..a_{n-1}`, `offdiag` holds `b_1..b_{n-1}`, and `mu0`
/// is the weight's total mass.
fn golub_welsch(diag: &[f64], offdiag: &[f64], mu0: f64) -> Result<QuadratureRule> {
    let n = diag.len();
    if n == 0 {
        return Err(Error::QuadratureOrder("order must be at least 1".into()));
    }
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for (i, &a) in diag.iter().enumerate() {
        jacobi[(i, i)] = a;
    }
    for (i, &b) in offdiag.iter().enumerate() {
        jacobi[(i, i + 1)] = b;
        jacobi[(i + 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let node = eig.eigenvalues[k];
            let first = eig.eigenvectors[(0, k)];
            (node, mu0 * first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    })
}

/// `n`-point Gauss–Hermite rule for the weight `e^{-x²}` on the real line.
///
/// Exact for polynomials of degree `2n-1`; total mass `√π`.
pub fn gauss_hermite(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > 512 {
        return Err(Error::QuadratureOrder(format!("Gauss-Hermite order {order}")));
    }
    let diag = vec![0.0; order];
    let offdiag: Vec<f64> = (1..order).map(|k| (k as f64 / 2.0).sqrt()).collect();
    golub_welsch(&diag, &offdiag, std::f64::consts::PI.sqrt())
}

/// `n`-point Gauss–Laguerre rule for the weight `e^{-x}` on `[0, ∞)`.
///
/// Exact for polynomials of degree `2n-1`; total mass `1`.
pub fn gauss_laguerre(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > 512 {
        return Err(Error::QuadratureOrder(format!("Gauss-Laguerre order {order}")));
    }
    let diag: Vec<f64> = (0..order).map(|k| (2 * k + 1) as f64).collect();
    let offdiag: Vec<f64> = (1..order).map(|k| k as f64).collect();
    golub_welsch(&diag, &offdiag, 1.0)
}

/// `n`-point Gauss–Legendre rule for the unit weight on `[-1, 1]`.
///
/// Exact for polynomials of degree `2n-1`; total mass `2`.
pub fn gauss_legendre(order: usize) -> Result<QuadratureRule> {
    if order == 0 || order > 512 {
        return Err(Error::QuadratureOrder(format!("Gauss-Legendre order {order}")));
    }
    let diag = vec![0.0; order];
    let offdiag: Vec<f64> = (1..order)
        .map(|k| {
            let kf = k as f64;
            kf / (4.0 * kf * kf - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&diag, &offdiag, 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn hermite_rule_reproduces_gaussian_moments() {
        let rule = gauss_hermite(12).unwrap();
        assert!((rule.integrate(|_| 1.0) - PI.sqrt()).abs() < 1e-13);
        assert!((rule.integrate(|x| x * x) - PI.sqrt() / 2.0).abs() < 1e-13);
        assert!(rule.integrate(|x| x * x * x).abs() < 1e-13);
        // ∫ e^{-x²} cos x dx = √π e^{-1/4}
        let hi = gauss_hermite(64).unwrap();
        let target = PI.sqrt() * (-0.25f64).exp();
        assert!((hi.integrate(f64::cos) - target).abs() < 1e-12);
    }

    #[test]
    fn laguerre_rule_reproduces_exponential_moments() {
        let rule = gauss_laguerre(10).unwrap();
        assert!((rule.integrate(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!((rule.integrate(|x| x) - 1.0).abs() < 1e-12);
        assert!((rule.integrate(|x| x * x * x) - 6.0).abs() < 1e-10);
        // Laplace transform of e^{-t}: ∫ e^{-x} e^{-x} dx = 1/2
        let hi = gauss_laguerre(48).unwrap();
        assert!((hi.integrate(|x| (-x).exp()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn legendre_rule_reproduces_interval_moments() {
        let rule = gauss_legendre(16).unwrap();
        assert!((rule.integrate(|_| 1.0) - 2.0).abs() < 1e-14);
        assert!(rule.integrate(|x| x).abs() < 1e-14);
        assert!((rule.integrate(|x| x * x) - 2.0 / 3.0).abs() < 1e-13);
        // ∫_{-1}^{1} cos x dx = 2 sin 1
        assert!((rule.integrate(f64::cos) - 2.0 * 1.0f64.sin()).abs() < 1e-13);
    }

    #[test]
    fn weights_are_positive_and_nodes_sorted() {
        for rule in [
            gauss_hermite(33).unwrap(),
            gauss_laguerre(33).unwrap(),
            gauss_legendre(33).unwrap(),
        ] {
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            assert!(rule.nodes.windows(2).all(|p| p[0] < p[1]));
            assert_eq!(rule.len(), 33);
        }
        assert!(gauss_hermite(0).is_err());
    }
}
