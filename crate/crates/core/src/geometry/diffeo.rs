use std::fmt;
use std::sync::Arc;

use super::{check_dim, Matrix, SpacetimePoint, Vector, FD_STEP};
use crate::error::{Error, Result};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 100;

/// A smooth invertible map of `R^D`.
///
/// Implementors supply `forward`; `inverse` defaults to damped Newton on
/// `forward` and `jacobian` to central differences with step [`FD_STEP`].
pub trait DiffeoMap: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn forward(&self, x: &Vector) -> Vector;

    fn inverse(&self, y: &Vector) -> Vector {
        newton_inverse(self, y, y.clone())
    }

    /// `d forward^mu / d x^nu`.
    fn jacobian(&self, x: &Vector) -> Matrix {
        finite_difference_jacobian(|v| self.forward(v), x)
    }
}

pub(crate) fn finite_difference_jacobian(f: impl Fn(&Vector) -> Vector, x: &Vector) -> Matrix {
    let n = x.len();
    let mut jac = Matrix::zeros(n, n);
    for col in 0..n {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[col] += FD_STEP;
        minus[col] -= FD_STEP;
        let d = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        jac.set_column(col, &d);
    }
    jac
}

/// Solves `forward(x) = y` by damped Newton iteration from `x0`.
///
/// Returns the best iterate; callers validate round trips separately.
pub(crate) fn newton_inverse<M: DiffeoMap + ?Sized>(map: &M, y: &Vector, x0: Vector) -> Vector {
    let mut x = x0;
    let mut residual = map.forward(&x) - y;
    let mut res_norm = residual.amax();
    for _ in 0..NEWTON_MAX_ITER {
        if res_norm <= NEWTON_TOL * 1e-3 {
            break;
        }
        let Some(step) = map.jacobian(&x).lu().solve(&residual) else {
            break;
        };
        let mut damping = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let candidate = &x - &step * damping;
            let cand_res = map.forward(&candidate) - y;
            let cand_norm = cand_res.amax();
            if cand_norm < res_norm {
                x = candidate;
                residual = cand_res;
                res_norm = cand_norm;
                improved = true;
                break;
            }
            damping *= 0.5;
        }
        if !improved {
            break;
        }
    }
    x
}

/// Shared handle to a diffeomorphism of the chart.
#[derive(Clone)]
pub struct Diffeomorphism {
    inner: Arc<dyn DiffeoMap>,
}

impl fmt::Debug for Diffeomorphism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.inner.fmt(f)
    }
}

impl Diffeomorphism {
    pub fn new(inner: impl DiffeoMap + 'static) -> Self {
        Self {
            inner: Arc::new(inner),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(Affine {
            matrix: Matrix::identity(dim, dim),
            inv: Matrix::identity(dim, dim),
            offset: Vector::zeros(dim),
        })
    }

    pub fn translation(offset: &[f64]) -> Self {
        let n = offset.len();
        Self::new(Affine {
            matrix: Matrix::identity(n, n),
            inv: Matrix::identity(n, n),
            offset: Vector::from_column_slice(offset),
        })
    }

    /// `x -> A x + b`.
    pub fn affine(matrix: Matrix, offset: &[f64]) -> Result<Self> {
        check_dim(matrix.nrows(), offset.len())?;
        if !matrix.is_square() {
            return Err(Error::Construction(
                "affine map needs a square matrix".into(),
            ));
        }
        let det = matrix.determinant();
        if !(det.abs() > 1e-12) {
            return Err(Error::Construction(format!(
                "affine map is singular (det = {det})"
            )));
        }
        let inv = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Construction("affine map could not be inverted".into()))?;
        Ok(Self::new(Affine {
            matrix,
            inv,
            offset: Vector::from_column_slice(offset),
        }))
    }

    /// `x -> A (x - c) + c`.
    pub fn linear_about(matrix: Matrix, center: &SpacetimePoint) -> Result<Self> {
        check_dim(matrix.nrows(), center.dim())?;
        let c = center.as_vector();
        let offset = c - &matrix * c;
        Self::affine(matrix, offset.as_slice())
    }

    /// Lorentz boost with velocity `v` along spatial `axis`.
    pub fn boost(dim: usize, axis: usize, v: f64) -> Result<Self> {
        if axis == 0 || axis >= dim {
            return Err(Error::Construction(format!(
                "boost axis {axis} must be spatial"
            )));
        }
        if !(v.abs() < 1.0) {
            return Err(Error::Construction(format!(
                "boost velocity {v} is not subluminal"
            )));
        }
        Self::affine(boost_matrix(dim, axis, v), &vec![0.0; dim])
    }

    /// `x^target -> x^target + amplitude * sin(wavenumber * x^source + phase)`;
    /// all other coordinates unchanged. Exactly invertible for any amplitude.
    pub fn shear_wave(
        dim: usize,
        target: usize,
        source: usize,
        amplitude: f64,
        wavenumber: f64,
        phase: f64,
    ) -> Result<Self> {
        if target >= dim || source >= dim || target == source {
            return Err(Error::Construction(format!(
                "shear wave needs distinct axes below {dim}, got {target} <- {source}"
            )));
        }
        if ![amplitude, wavenumber, phase].iter().all(|v| v.is_finite()) {
            return Err(Error::Construction("non-finite shear parameters".into()));
        }
        Ok(Self::new(ShearWave {
            dim,
            target,
            source,
            amplitude,
            wavenumber,
            phase,
        }))
    }

    /// General map from closures. Without an inverse, Newton iteration is used;
    /// without a Jacobian, central differences.
    pub fn from_fns(
        dim: usize,
        forward: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        inverse: Option<VecFn>,
    ) -> Self {
        Self::new(FnMap {
            dim,
            forward: Box::new(forward),
            inverse,
        })
    }

    /// `then ∘ self`.
    pub fn then(&self, then: &Diffeomorphism) -> Result<Self> {
        check_dim(self.dim(), then.dim())?;
        Ok(Self::new(Composition {
            first: self.clone(),
            second: then.clone(),
        }))
    }

    /// Composition of a sequence applied left to right.
    pub fn chain(maps: &[Diffeomorphism]) -> Result<Self> {
        let (first, rest) = maps
            .split_first()
            .ok_or_else(|| Error::Construction("empty diffeomorphism chain".into()))?;
        rest.iter().try_fold(first.clone(), |acc, m| acc.then(m))
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn forward(&self, p: &SpacetimePoint) -> SpacetimePoint {
        SpacetimePoint::from_vector(self.inner.forward(p.as_vector()))
    }

    pub fn inverse(&self, p: &SpacetimePoint) -> SpacetimePoint {
        SpacetimePoint::from_vector(self.inner.inverse(p.as_vector()))
    }

    pub fn jacobian(&self, p: &SpacetimePoint) -> Matrix {
        self.inner.jacobian(p.as_vector())
    }

    pub(crate) fn map(&self) -> &dyn DiffeoMap {
        self.inner.as_ref()
    }

    /// Checks `inverse(forward(p)) = p` to `1e-9` per coordinate and
    /// `|det J| > 1e-12` on every sample.
    pub fn validate(&self, samples: &[SpacetimePoint]) -> Result<()> {
        for p in samples {
            check_dim(self.dim(), p.dim())?;
            let image = self.inner.forward(p.as_vector());
            if image.iter().any(|c| !c.is_finite()) {
                return Err(Error::Construction(format!("non-finite image of {p:?}")));
            }
            let back = self.inner.inverse(&image);
            let err = (&back - p.as_vector()).amax();
            if err > 1e-9 {
                return Err(Error::Construction(format!(
                    "round trip error {err:e} at {p:?}"
                )));
            }
            let det = self.jacobian(p).determinant();
            if !(det.abs() > 1e-12) {
                return Err(Error::Construction(format!(
                    "singular Jacobian (det = {det}) at {p:?}"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn boost_matrix(dim: usize, axis: usize, v: f64) -> Matrix {
    let gamma = 1.0 / (1.0 - v * v).sqrt();
    let mut m = Matrix::identity(dim, dim);
    m[(0, 0)] = gamma;
    m[(axis, axis)] = gamma;
    m[(0, axis)] = -gamma * v;
    m[(axis, 0)] = -gamma * v;
    m
}

#[derive(Debug, Clone)]
struct Affine {
    matrix: Matrix,
    inv: Matrix,
    offset: Vector,
}

impl DiffeoMap for Affine {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn forward(&self, x: &Vector) -> Vector {
        &self.matrix * x + &self.offset
    }

    fn inverse(&self, y: &Vector) -> Vector {
        &self.inv * (y - &self.offset)
    }

    fn jacobian(&self, _x: &Vector) -> Matrix {
        self.matrix.clone()
    }
}

#[derive(Debug, Clone)]
struct ShearWave {
    dim: usize,
    target: usize,
    source: usize,
    amplitude: f64,
    wavenumber: f64,
    phase: f64,
}

impl ShearWave {
    fn displacement(&self, x: &Vector) -> f64 {
        self.amplitude * (self.wavenumber * x[self.source] + self.phase).sin()
    }
}

impl DiffeoMap for ShearWave {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, x: &Vector) -> Vector {
        let mut y = x.clone();
        y[self.target] += self.displacement(x);
        y
    }

    // the source coordinate is untouched, so the displacement can be read off the image
    fn inverse(&self, y: &Vector) -> Vector {
        let mut x = y.clone();
        x[self.target] -= self.displacement(y);
        x
    }

    fn jacobian(&self, x: &Vector) -> Matrix {
        let mut j = Matrix::identity(self.dim, self.dim);
        j[(self.target, self.source)] = self.amplitude
            * self.wavenumber
            * (self.wavenumber * x[self.source] + self.phase).cos();
        j
    }
}

#[derive(Debug, Clone)]
struct Composition {
    first: Diffeomorphism,
    second: Diffeomorphism,
}

impl DiffeoMap for Composition {
    fn dim(&self) -> usize {
        self.first.dim()
    }

    fn forward(&self, x: &Vector) -> Vector {
        self.second.map().forward(&self.first.map().forward(x))
    }

    fn inverse(&self, y: &Vector) -> Vector {
        self.first.map().inverse(&self.second.map().inverse(y))
    }

    fn jacobian(&self, x: &Vector) -> Matrix {
        let mid = self.first.map().forward(x);
        self.second.map().jacobian(&mid) * self.first.map().jacobian(x)
    }
}

type VecFn = Box<dyn Fn(&Vector) -> Vector + Send + Sync>;

struct FnMap {
    dim: usize,
    forward: VecFn,
    inverse: Option<VecFn>,
}

impl fmt::Debug for FnMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnMap")
            .field("dim", &self.dim)
            .field("closed_form_inverse", &self.inverse.is_some())
            .finish()
    }
}

impl DiffeoMap for FnMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn forward(&self, x: &Vector) -> Vector {
        (self.forward)(x)
    }

    fn inverse(&self, y: &Vector) -> Vector {
        match &self.inverse {
            Some(inv) => inv(y),
            None => newton_inverse(self, y, y.clone()),
        }
    }
}
