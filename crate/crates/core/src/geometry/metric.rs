use std::fmt;
use std::sync::Arc;

use super::{bump_weight, check_dim, is_lorentzian, Diffeomorphism, Matrix, SpacetimePoint};
use crate::error::{Error, Result};

/// Anything that can evaluate `g_{mu nu}` at a chart point.
pub trait MetricFn: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, p: &SpacetimePoint) -> Matrix;

    /// Scalars whose sign changes mark surfaces where the components are not
    /// smooth. Empty for smooth metrics.
    fn kink_levels(&self, _p: &SpacetimePoint) -> Vec<f64> {
        Vec::new()
    }
}

/// Shared handle to a Lorentzian metric field over `R^D`.
#[derive(Clone)]
pub struct MetricField {
    inner: Arc<dyn MetricFn>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.inner.fmt(f)
    }
}

pub fn minkowski_matrix(dim: usize) -> Matrix {
    let mut m = Matrix::identity(dim, dim);
    m[(0, 0)] = -1.0;
    m
}

impl MetricField {
    pub fn new(inner: impl MetricFn + 'static) -> Self {
        Self {
            inner: Arc::new(inner),
        }
    }

    pub fn minkowski(dim: usize) -> Self {
        Self::new(Minkowski { dim })
    }

    /// A metric with the same constant components everywhere.
    pub fn constant(m: Matrix) -> Result<Self> {
        if !is_lorentzian(&m) {
            return Err(Error::Config(format!(
                "constant metric is not Lorentzian: {m}"
            )));
        }
        Ok(Self::new(Constant { m }))
    }

    pub(crate) fn pushforward(phi: Diffeomorphism, g: MetricField) -> Self {
        Self::new(Pushforward { phi, g })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn eval(&self, p: &SpacetimePoint) -> Matrix {
        debug_assert_eq!(p.dim(), self.dim());
        self.inner.eval(p)
    }

    pub fn kink_levels(&self, p: &SpacetimePoint) -> Vec<f64> {
        self.inner.kink_levels(p)
    }

    /// `g(u, v)` at `p`.
    pub fn inner_product(&self, p: &SpacetimePoint, u: &super::Vector, v: &super::Vector) -> f64 {
        (u.transpose() * self.eval(p) * v)[(0, 0)]
    }

    /// Checks symmetry and signature at `p`.
    pub fn check_at(&self, p: &SpacetimePoint) -> Result<()> {
        check_dim(self.dim(), p.dim())?;
        let m = self.eval(p);
        if is_lorentzian(&m) {
            Ok(())
        } else {
            Err(Error::Numerical(format!(
                "metric not Lorentzian at {p:?}: {m}"
            )))
        }
    }
}

#[derive(Debug, Clone)]
struct Minkowski {
    dim: usize,
}

impl MetricFn for Minkowski {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _p: &SpacetimePoint) -> Matrix {
        minkowski_matrix(self.dim)
    }
}

#[derive(Debug, Clone)]
struct Constant {
    m: Matrix,
}

impl MetricFn for Constant {
    fn dim(&self) -> usize {
        self.m.nrows()
    }

    fn eval(&self, _p: &SpacetimePoint) -> Matrix {
        self.m.clone()
    }
}

/// Static point source for the weak-field potential.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    /// Spatial position (`D - 1` entries).
    pub position: Vec<f64>,
    pub mass: f64,
}

/// Isotropic weak-field metric `diag(-(1 + 2 Phi), 1 - 2 Phi, ...)` with the
/// softened potential `Phi(x) = -sum m / (|x - x_m| + softening)`.
#[derive(Debug, Clone)]
pub struct WeakField {
    dim: usize,
    sources: Vec<PointMass>,
    softening: f64,
}

impl WeakField {
    pub fn new(dim: usize, sources: Vec<PointMass>, softening: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config("weak-field metric needs D >= 2".into()));
        }
        if !(softening > 0.0) {
            return Err(Error::Config(format!(
                "softening must be positive, got {softening}"
            )));
        }
        for s in &sources {
            check_dim(dim - 1, s.position.len())?;
            if !(s.mass >= 0.0) || !s.mass.is_finite() {
                return Err(Error::Config(format!("invalid source mass {}", s.mass)));
            }
        }
        let field = Self {
            dim,
            sources,
            softening,
        };
        let worst = field.max_abs_potential();
        if worst >= 0.5 {
            return Err(Error::Config(format!(
                "|Phi| reaches {worst}, metric would lose its signature"
            )));
        }
        Ok(field)
    }

    /// Constant potential `Phi` everywhere (no sources).
    pub fn uniform(dim: usize, phi: f64) -> Result<MetricField> {
        if !(phi.abs() < 0.5) {
            return Err(Error::Config(format!(
                "uniform potential {phi} out of range"
            )));
        }
        let mut m = Matrix::identity(dim, dim) * (1.0 - 2.0 * phi);
        m[(0, 0)] = -(1.0 + 2.0 * phi);
        MetricField::constant(m)
    }

    pub fn potential(&self, p: &SpacetimePoint) -> f64 {
        let x = &p.coords()[1..];
        -self
            .sources
            .iter()
            .map(|s| {
                let r = x
                    .iter()
                    .zip(&s.position)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                s.mass / (r + self.softening)
            })
            .sum::<f64>()
    }

    /// Upper bound on `|Phi|` over the whole chart (attained at a source when
    /// there is a single one).
    pub fn max_abs_potential(&self) -> f64 {
        self.sources.iter().map(|s| s.mass).sum::<f64>() / self.softening
    }
}

impl MetricFn for WeakField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, p: &SpacetimePoint) -> Matrix {
        let phi = self.potential(p);
        let mut m = Matrix::identity(self.dim, self.dim) * (1.0 - 2.0 * phi);
        m[(0, 0)] = -(1.0 + 2.0 * phi);
        m
    }

    // |x - x_m| kinks across a hypersurface only with one spatial dimension
    fn kink_levels(&self, p: &SpacetimePoint) -> Vec<f64> {
        if self.dim != 2 {
            return Vec::new();
        }
        self.sources
            .iter()
            .map(|s| p.coords()[1] - s.position[0])
            .collect()
    }
}

/// `base + amplitude * w(|x - center| / radius) * e_k e_k^T` on one spatial
/// diagonal entry: a compactly supported bump in the metric.
#[derive(Debug, Clone)]
pub struct LocalizedPerturbation {
    base: MetricField,
    center: SpacetimePoint,
    radius: f64,
    amplitude: f64,
    axis: usize,
}

impl LocalizedPerturbation {
    pub fn new(
        base: MetricField,
        center: SpacetimePoint,
        radius: f64,
        amplitude: f64,
        axis: usize,
    ) -> Result<Self> {
        check_dim(base.dim(), center.dim())?;
        if axis == 0 || axis >= base.dim() {
            return Err(Error::Config(format!(
                "perturbation axis {axis} must be spatial"
            )));
        }
        if !(radius > 0.0) {
            return Err(Error::Config(format!(
                "radius must be positive, got {radius}"
            )));
        }
        if !(amplitude > -0.5 && amplitude < 10.0) {
            return Err(Error::Config(format!(
                "perturbation amplitude {amplitude} out of range"
            )));
        }
        Ok(Self {
            base,
            center,
            radius,
            amplitude,
            axis,
        })
    }
}

impl MetricFn for LocalizedPerturbation {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, p: &SpacetimePoint) -> Matrix {
        let mut m = self.base.eval(p);
        let rho = p.chart_distance(&self.center) / self.radius;
        m[(self.axis, self.axis)] += self.amplitude * bump_weight(rho);
        m
    }

    fn kink_levels(&self, p: &SpacetimePoint) -> Vec<f64> {
        self.base.kink_levels(p)
    }
}

#[derive(Debug, Clone)]
struct Pushforward {
    phi: Diffeomorphism,
    g: MetricField,
}

impl MetricFn for Pushforward {
    fn dim(&self) -> usize {
        self.g.dim()
    }

    fn eval(&self, p: &SpacetimePoint) -> Matrix {
        let source = self.phi.inverse(p);
        let jac = self.phi.jacobian(&source);
        let inv = jac
            .try_inverse()
            .expect("validated diffeomorphisms have invertible Jacobians");
        let m = inv.transpose() * self.g.eval(&source) * &inv;
        (&m + m.transpose()) * 0.5
    }

    fn kink_levels(&self, p: &SpacetimePoint) -> Vec<f64> {
        self.g.kink_levels(&self.phi.inverse(p))
    }
}
