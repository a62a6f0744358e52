//! Charts, Lorentzian metric fields and diffeomorphisms acting on them.
//!
//! Every manifold is modelled as `R^D` with a single global chart, `D = 2`
//! (the default 1+1 setting) or `D = 4`. Signature convention is `(-, +, ..., +)`
//! and units are geometric with `c = 1`.

mod bump;
mod diffeo;
mod metric;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bump::{bump_weight, bump_weight_derivative, localized_shift, make_bump_localized};
pub use diffeo::{DiffeoMap, Diffeomorphism, NEWTON_MAX_ITER, NEWTON_TOL};
pub use metric::{
    minkowski_matrix, LocalizedPerturbation, MetricField, MetricFn, PointMass, WeakField,
};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Step used for central finite differences of maps and curves.
pub const FD_STEP: f64 = 1e-6;

/// A point of the chart `R^D`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SpacetimePoint {
    coords: Vector,
}

impl SpacetimePoint {
    pub fn new(coords: impl Into<Vec<f64>>) -> Result<Self> {
        let coords: Vec<f64> = coords.into();
        if coords.is_empty() {
            return Err(Error::Config(
                "a spacetime point needs at least one coordinate".into(),
            ));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::Config(format!("non-finite coordinate {bad}")));
        }
        Ok(Self {
            coords: Vector::from_vec(coords),
        })
    }

    /// Wraps an already validated coordinate vector.
    pub(crate) fn from_vector(coords: Vector) -> Self {
        debug_assert!(coords.iter().all(|c| c.is_finite()));
        Self { coords }
    }

    pub fn origin(dim: usize) -> Self {
        Self {
            coords: Vector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        self.coords.as_slice()
    }

    pub fn as_vector(&self) -> &Vector {
        &self.coords
    }

    pub fn time(&self) -> f64 {
        self.coords[0]
    }

    /// Euclidean distance in chart coordinates.
    pub fn chart_distance(&self, other: &SpacetimePoint) -> f64 {
        (&self.coords - &other.coords).norm()
    }

    pub fn translated(&self, offset: &Vector) -> Self {
        Self::from_vector(&self.coords + offset)
    }
}

impl fmt::Debug for SpacetimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.coords.iter()).finish()
    }
}

impl TryFrom<Vec<f64>> for SpacetimePoint {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<SpacetimePoint> for Vec<f64> {
    fn from(value: SpacetimePoint) -> Self {
        value.coords.as_slice().to_vec()
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Signature of a symmetric matrix as `(negative, zero, positive)` eigenvalue counts.
pub fn signature(m: &Matrix, zero_tol: f64) -> (usize, usize, usize) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    eig.iter().fold((0, 0, 0), |(n, z, p), &l| {
        if l < -zero_tol {
            (n + 1, z, p)
        } else if l > zero_tol {
            (n, z, p + 1)
        } else {
            (n, z + 1, p)
        }
    })
}

/// True when `m` is symmetric to `1e-12` and has exactly one negative eigenvalue.
pub fn is_lorentzian(m: &Matrix) -> bool {
    if !m.is_square() || m.nrows() < 2 {
        return false;
    }
    let asym = (m - m.transpose()).amax();
    let (neg, zero, pos) = signature(m, 1e-12);
    asym <= 1e-12 && neg == 1 && zero == 0 && pos == m.nrows() - 1
}

/// Pushes the metric forward: `g'(x') = J^{-T} g(phi^{-1}(x')) J^{-1}` with
/// `J` the Jacobian of `phi` at `phi^{-1}(x')`.
pub fn pushforward_metric(phi: &Diffeomorphism, g: &MetricField) -> Result<MetricField> {
    check_dim(g.dim(), phi.dim())?;
    Ok(MetricField::pushforward(phi.clone(), g.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_rejects_non_finite() {
        assert!(SpacetimePoint::new(vec![0.0, f64::NAN]).is_err());
        assert!(SpacetimePoint::new(Vec::<f64>::new()).is_err());
        assert_eq!(SpacetimePoint::new(vec![1.0, 2.0]).unwrap().dim(), 2);
    }

    #[test]
    fn point_serde_is_a_plain_array() {
        let p = SpacetimePoint::new(vec![1.5, -2.0]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[1.5,-2.0]");
        let q: SpacetimePoint = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn lorentzian_detection() {
        assert!(is_lorentzian(&minkowski_matrix(2)));
        assert!(is_lorentzian(&minkowski_matrix(4)));
        assert!(!is_lorentzian(&Matrix::identity(2, 2)));
        let mut m = minkowski_matrix(2);
        m[(0, 1)] = 0.1;
        assert!(!is_lorentzian(&m), "asymmetric matrices are rejected");
    }
}
