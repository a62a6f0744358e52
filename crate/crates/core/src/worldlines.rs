//! Timelike curves, proper time along them, and worldline coincidences.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_dim, Diffeomorphism, MetricField, SpacetimePoint, Vector, FD_STEP};
use crate::quadrature;

/// Relative tolerance of the proper-time quadrature.
pub const PROPER_TIME_REL_TOL: f64 = 1e-9;
/// Default chart-distance threshold for a coincidence.
pub const CROSSING_TOL: f64 = 1e-8;
/// Minimum number of samples for the timelike check.
pub const TIMELIKE_SAMPLES: usize = 256;
/// Coarse scan resolution per curve for coincidence search.
pub const COARSE_GRID: usize = 160;

const MERGE_DISTANCE: f64 = 1e-6;
/// Samples per knot interval when bracketing metric kinks along a curve.
const KINK_SCAN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CurveLabel {
    #[serde(rename = "gamma0")]
    TestParticle,
    #[serde(rename = "gamma1")]
    System1,
    #[serde(rename = "gamma2")]
    System2,
}

impl CurveLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveLabel::TestParticle => "gamma0",
            CurveLabel::System1 => "gamma1",
            CurveLabel::System2 => "gamma2",
        }
    }
}

/// A parametrized curve in the chart. `velocity` may return `None`, in which
/// case central differences are used.
pub trait CurveFn: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, lambda: f64) -> Vector;

    fn velocity(&self, _lambda: f64) -> Option<Vector> {
        None
    }

    /// Parameter values where the velocity may jump.
    fn knots(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Clone)]
pub struct Worldline {
    curve: Arc<dyn CurveFn>,
    lambda_range: (f64, f64),
    label: CurveLabel,
}

impl fmt::Debug for Worldline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Worldline")
            .field("label", &self.label)
            .field("lambda_range", &self.lambda_range)
            .field("curve", &self.curve)
            .finish()
    }
}

impl Worldline {
    pub fn new(
        curve: impl CurveFn + 'static,
        lambda_range: (f64, f64),
        label: CurveLabel,
    ) -> Result<Self> {
        Self::from_arc(Arc::new(curve), lambda_range, label)
    }

    fn from_arc(
        curve: Arc<dyn CurveFn>,
        lambda_range: (f64, f64),
        label: CurveLabel,
    ) -> Result<Self> {
        let (a, b) = lambda_range;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Config(format!("invalid parameter range [{a}, {b}]")));
        }
        let w = Self {
            curve,
            lambda_range,
            label,
        };
        for lambda in w.sample_parameters(33) {
            if w.curve.eval(lambda).iter().any(|c| !c.is_finite()) {
                return Err(Error::Config(format!(
                    "curve not finite at lambda = {lambda}"
                )));
            }
        }
        Ok(w)
    }

    /// Worldline at fixed spatial position, parametrized by coordinate time.
    pub fn static_at(position: &[f64], t_range: (f64, f64), label: CurveLabel) -> Result<Self> {
        Self::uniform_velocity(position, &vec![0.0; position.len()], t_range, label)
    }

    /// `x(t) = x0 + v t`, parametrized by coordinate time.
    pub fn uniform_velocity(
        position_at_t0: &[f64],
        velocity: &[f64],
        t_range: (f64, f64),
        label: CurveLabel,
    ) -> Result<Self> {
        check_dim(position_at_t0.len(), velocity.len())?;
        let mut origin = vec![0.0];
        origin.extend_from_slice(position_at_t0);
        let mut v = vec![1.0];
        v.extend_from_slice(velocity);
        Self::new(
            Linear {
                origin: Vector::from_vec(origin),
                velocity: Vector::from_vec(v),
            },
            t_range,
            label,
        )
    }

    /// Straight segments through the waypoints, parametrized by coordinate time
    /// (the time coordinates of the waypoints must strictly increase).
    pub fn piecewise_linear(waypoints: &[SpacetimePoint], label: CurveLabel) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::Config(
                "piecewise-linear worldline needs at least two waypoints".into(),
            ));
        }
        let dim = waypoints[0].dim();
        for w in waypoints {
            check_dim(dim, w.dim())?;
        }
        if waypoints.windows(2).any(|w| !(w[1].time() > w[0].time())) {
            return Err(Error::Config(
                "waypoint times must strictly increase".into(),
            ));
        }
        let range = (waypoints[0].time(), waypoints[waypoints.len() - 1].time());
        let knots = waypoints.iter().map(|w| w.time()).collect();
        let points = waypoints.iter().map(|w| w.as_vector().clone()).collect();
        Self::new(PiecewiseLinear { knots, points }, range, label)
    }

    /// `x(t) = x0 + v t + a sin(omega t)` along spatial axis 1, other axes fixed.
    pub fn sinusoidal(
        position_at_t0: &[f64],
        drift: f64,
        amplitude: f64,
        omega: f64,
        t_range: (f64, f64),
        label: CurveLabel,
    ) -> Result<Self> {
        if position_at_t0.is_empty() {
            return Err(Error::Config(
                "sinusoidal worldline needs a spatial position".into(),
            ));
        }
        let mut origin = vec![0.0];
        origin.extend_from_slice(position_at_t0);
        Self::new(
            Sinusoidal {
                origin: Vector::from_vec(origin),
                drift,
                amplitude,
                omega,
            },
            t_range,
            label,
        )
    }

    pub fn label(&self) -> CurveLabel {
        self.label
    }

    pub fn with_label(&self, label: CurveLabel) -> Self {
        Self {
            label,
            ..self.clone()
        }
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        self.lambda_range
    }

    pub fn dim(&self) -> usize {
        self.curve.dim()
    }

    pub fn eval(&self, lambda: f64) -> SpacetimePoint {
        SpacetimePoint::from_vector(self.curve.eval(lambda))
    }

    pub fn initial_point(&self) -> SpacetimePoint {
        self.eval(self.lambda_range.0)
    }

    pub fn final_point(&self) -> SpacetimePoint {
        self.eval(self.lambda_range.1)
    }

    /// Tangent `d gamma / d lambda`.
    pub fn velocity(&self, lambda: f64) -> Vector {
        self.curve.velocity(lambda).unwrap_or_else(|| {
            (self.curve.eval(lambda + FD_STEP) - self.curve.eval(lambda - FD_STEP))
                / (2.0 * FD_STEP)
        })
    }

    pub fn knots(&self) -> Vec<f64> {
        self.curve.knots()
    }

    /// `n` evenly spaced parameters covering the closed range.
    pub fn sample_parameters(&self, n: usize) -> Vec<f64> {
        let (a, b) = self.lambda_range;
        let n = n.max(2);
        (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect()
    }

    /// Image under `phi`; parameter values are kept.
    pub fn pushforward(&self, phi: &Diffeomorphism) -> Result<Self> {
        check_dim(self.dim(), phi.dim())?;
        Ok(Self {
            curve: Arc::new(PushforwardCurve {
                phi: phi.clone(),
                base: self.clone(),
            }),
            lambda_range: self.lambda_range,
            label: self.label,
        })
    }

    /// Checks `g(v, v) < 0` on a uniform grid of at least [`TIMELIKE_SAMPLES`] parameters.
    pub fn check_timelike(&self, g: &MetricField) -> Result<()> {
        check_dim(g.dim(), self.dim())?;
        for lambda in self.sample_parameters(TIMELIKE_SAMPLES) {
            let v = self.velocity(lambda);
            let norm = g.inner_product(&self.eval(lambda), &v, &v);
            if !(norm < 0.0) {
                return Err(Error::TimelikeViolation { lambda, norm });
            }
        }
        Ok(())
    }
}

/// Image of a curve under a diffeomorphism. The pushed-forward curve lives on
/// the common manifold `M`.
pub fn pushforward_curve(phi: &Diffeomorphism, gamma: &Worldline) -> Result<Worldline> {
    gamma.pushforward(phi)
}

/// Shifts the parameter: the returned curve satisfies `eval'(l) = eval(l - delta)`.
pub fn reparametrize(gamma: &Worldline, delta: f64) -> Worldline {
    if delta == 0.0 {
        return gamma.clone();
    }
    let (a, b) = gamma.lambda_range;
    Worldline {
        curve: Arc::new(Shifted {
            base: gamma.clone(),
            delta,
        }),
        lambda_range: (a + delta, b + delta),
        label: gamma.label,
    }
}

/// `tau = integral of sqrt(-g(v, v)) d lambda` over `[lambda_a, lambda_b]`.
pub fn proper_time(
    gamma: &Worldline,
    g: &MetricField,
    lambda_a: f64,
    lambda_b: f64,
) -> Result<f64> {
    check_dim(g.dim(), gamma.dim())?;
    let (lo, hi) = gamma.lambda_range;
    let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    if !(lambda_a >= lo - slack && lambda_b <= hi + slack && lambda_a <= lambda_b) {
        return Err(Error::Config(format!(
            "proper-time interval [{lambda_a}, {lambda_b}] outside curve range [{lo}, {hi}]"
        )));
    }
    let integrand = |lambda: f64| {
        let v = gamma.velocity(lambda);
        let norm = g.inner_product(&gamma.eval(lambda), &v, &v);
        if norm < 0.0 {
            Ok((-norm).sqrt())
        } else {
            Err(Error::TimelikeViolation { lambda, norm })
        }
    };
    let mut breaks = gamma.knots();
    breaks.extend(kink_crossings(gamma, g, lambda_a, lambda_b, &breaks));
    quadrature::integrate(
        integrand,
        lambda_a,
        lambda_b,
        &breaks,
        PROPER_TIME_REL_TOL,
        1e-14,
    )
    .map(|r| r.value)
}

/// Parameters in `(lambda_a, lambda_b)` where the curve crosses a kink surface
/// of `g`, bracketed on a grid and refined by bisection.
fn kink_crossings(
    gamma: &Worldline,
    g: &MetricField,
    lambda_a: f64,
    lambda_b: f64,
    knots: &[f64],
) -> Vec<f64> {
    let level = |lambda: f64| g.kink_levels(&gamma.eval(lambda));
    if level(lambda_a).is_empty() {
        return Vec::new();
    }
    let mut nodes: Vec<f64> = knots
        .iter()
        .copied()
        .filter(|&k| k > lambda_a && k < lambda_b)
        .collect();
    nodes.push(lambda_a);
    nodes.push(lambda_b);
    nodes.sort_by(f64::total_cmp);
    let mut grid = Vec::with_capacity(nodes.len() * KINK_SCAN);
    for w in nodes.windows(2) {
        grid.extend((0..KINK_SCAN).map(|k| w[0] + (w[1] - w[0]) * k as f64 / KINK_SCAN as f64));
    }
    grid.push(lambda_b);

    let mut found = Vec::new();
    let mut prev = level(grid[0]);
    for w in grid.windows(2) {
        let next = level(w[1]);
        for (j, (&h0, &h1)) in prev.iter().zip(&next).enumerate() {
            if h0 == 0.0 || h0.signum() == h1.signum() {
                continue;
            }
            let (mut lo, mut hi, mut h_lo) = (w[0], w[1], h0);
            while hi - lo > 1e-15 * (1.0 + hi.abs()) {
                let mid = 0.5 * (lo + hi);
                let h = level(mid)[j];
                if h == 0.0 {
                    lo = mid;
                    hi = mid;
                } else if h.signum() == h_lo.signum() {
                    lo = mid;
                    h_lo = h;
                } else {
                    hi = mid;
                }
            }
            found.push(0.5 * (lo + hi));
        }
        prev = next;
    }
    found
}

/// `g(v0, vi) < 0`: `vi` is future pointing relative to `v0`.
pub fn orientation_sign(
    g: &MetricField,
    p: &SpacetimePoint,
    v0: &Vector,
    vi: &Vector,
) -> Result<bool> {
    check_dim(g.dim(), p.dim())?;
    check_dim(g.dim(), v0.len())?;
    check_dim(g.dim(), vi.len())?;
    for (name, v) in [("v0", v0), ("vi", vi)] {
        if v.amax() < 1e-14 {
            return Err(Error::Degeneracy(format!("{name} is the zero vector")));
        }
        let n = g.inner_product(p, v, v);
        if !(n < -1e-14) {
            return Err(Error::Degeneracy(format!(
                "{name} is not timelike (g(v, v) = {n})"
            )));
        }
    }
    Ok(g.inner_product(p, v0, vi) < 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coincidence {
    pub lambda0: f64,
    pub lambda_other: f64,
    pub point: SpacetimePoint,
    pub residual: f64,
    pub which_system: u8,
}

/// All parameter pairs where the two curves meet to within chart distance
/// `tol`, sorted by the test-particle parameter.
#[allow(clippy::needless_range_loop)]
pub fn detect_coincidences(
    gamma0: &Worldline,
    gamma_i: &Worldline,
    tol: f64,
) -> Result<Vec<Coincidence>> {
    check_dim(gamma0.dim(), gamma_i.dim())?;
    if !(tol > 0.0) {
        return Err(Error::Config(format!(
            "coincidence tolerance must be positive, got {tol}"
        )));
    }
    let which_system = match gamma_i.label {
        CurveLabel::System2 => 2,
        _ => 1,
    };
    let lam0 = grid_with_knots(gamma0);
    let lam1 = grid_with_knots(gamma_i);
    let pts0: Vec<Vector> = lam0.iter().map(|&l| gamma0.curve.eval(l)).collect();
    let pts1: Vec<Vector> = lam1.iter().map(|&l| gamma_i.curve.eval(l)).collect();
    let step = |pts: &[Vector]| {
        pts.windows(2)
            .map(|w| (&w[1] - &w[0]).norm())
            .fold(0.0, f64::max)
    };
    let coarse = 2.0 * (step(&pts0) + step(&pts1)) + tol;

    let (n0, n1) = (pts0.len(), pts1.len());
    let dist: Vec<f64> = pts0
        .iter()
        .flat_map(|a| pts1.iter().map(move |b| (a - b).norm()))
        .collect();
    let at = |i: usize, j: usize| dist[i * n1 + j];

    let mut found: Vec<Coincidence> = Vec::new();
    for i in 0..n0 {
        for j in 0..n1 {
            let d = at(i, j);
            if d > coarse {
                continue;
            }
            let is_local_min = (i.saturating_sub(1)..=(i + 1).min(n0 - 1))
                .flat_map(|a| (j.saturating_sub(1)..=(j + 1).min(n1 - 1)).map(move |b| (a, b)))
                .all(|(a, b)| at(a, b) >= d);
            if !is_local_min {
                continue;
            }
            let (l0, l1, residual) = refine(gamma0, gamma_i, lam0[i], lam1[j]);
            if residual > tol {
                continue;
            }
            let duplicate = found.iter().any(|c| {
                (c.lambda0 - l0).abs() < MERGE_DISTANCE
                    && (c.lambda_other - l1).abs() < MERGE_DISTANCE
            });
            if !duplicate {
                found.push(Coincidence {
                    lambda0: l0,
                    lambda_other: l1,
                    point: gamma0.eval(l0),
                    residual,
                    which_system,
                });
            }
        }
    }
    found.sort_by(|a, b| a.lambda0.total_cmp(&b.lambda0));
    Ok(found)
}

fn grid_with_knots(gamma: &Worldline) -> Vec<f64> {
    let (a, b) = gamma.lambda_range;
    let mut grid = gamma.sample_parameters(COARSE_GRID);
    grid.extend(gamma.knots().into_iter().filter(|&k| k > a && k < b));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Gauss–Newton on `r(l0, l1) = gamma0(l0) - gamma_i(l1)` with the parameters
/// clamped to their ranges.
fn refine(gamma0: &Worldline, gamma_i: &Worldline, mut l0: f64, mut l1: f64) -> (f64, f64, f64) {
    let clamp0 = |l: f64| l.clamp(gamma0.lambda_range.0, gamma0.lambda_range.1);
    let clamp1 = |l: f64| l.clamp(gamma_i.lambda_range.0, gamma_i.lambda_range.1);
    let residual = |a: f64, b: f64| gamma0.curve.eval(a) - gamma_i.curve.eval(b);
    let mut r = residual(l0, l1);
    let mut norm = r.norm();
    for _ in 0..60 {
        if norm < 1e-15 {
            break;
        }
        let mut jac = nalgebra::DMatrix::<f64>::zeros(r.len(), 2);
        jac.set_column(0, &gamma0.velocity(l0));
        jac.set_column(1, &(-gamma_i.velocity(l1)));
        let normal = jac.transpose() * &jac;
        let Some(step) = normal.lu().solve(&(jac.transpose() * &r)) else {
            break;
        };
        let mut damping = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let a = clamp0(l0 - damping * step[0]);
            let b = clamp1(l1 - damping * step[1]);
            let cand = residual(a, b);
            let cand_norm = cand.norm();
            if cand_norm < norm {
                l0 = a;
                l1 = b;
                r = cand;
                norm = cand_norm;
                improved = true;
                break;
            }
            damping *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (l0, l1, norm)
}

#[derive(Debug, Clone)]
struct Linear {
    origin: Vector,
    velocity: Vector,
}

impl CurveFn for Linear {
    fn dim(&self) -> usize {
        self.origin.len()
    }

    fn eval(&self, lambda: f64) -> Vector {
        &self.origin + &self.velocity * lambda
    }

    fn velocity(&self, _lambda: f64) -> Option<Vector> {
        Some(self.velocity.clone())
    }
}

#[derive(Debug, Clone)]
struct PiecewiseLinear {
    knots: Vec<f64>,
    points: Vec<Vector>,
}

impl PiecewiseLinear {
    /// Segment index for `lambda`; segments are closed on the left, and the
    /// outer segments extend linearly beyond the range.
    fn segment(&self, lambda: f64) -> usize {
        let last = self.knots.len() - 2;
        match self.knots.binary_search_by(|k| k.total_cmp(&lambda)) {
            Ok(i) => i.min(last),
            Err(i) => i.saturating_sub(1).min(last),
        }
    }

    fn slope(&self, seg: usize) -> Vector {
        (&self.points[seg + 1] - &self.points[seg]) / (self.knots[seg + 1] - self.knots[seg])
    }
}

impl CurveFn for PiecewiseLinear {
    fn dim(&self) -> usize {
        self.points[0].len()
    }

    fn eval(&self, lambda: f64) -> Vector {
        let seg = self.segment(lambda);
        &self.points[seg] + self.slope(seg) * (lambda - self.knots[seg])
    }

    fn velocity(&self, lambda: f64) -> Option<Vector> {
        Some(self.slope(self.segment(lambda)))
    }

    fn knots(&self) -> Vec<f64> {
        self.knots.clone()
    }
}

#[derive(Debug, Clone)]
struct Sinusoidal {
    origin: Vector,
    drift: f64,
    amplitude: f64,
    omega: f64,
}

impl CurveFn for Sinusoidal {
    fn dim(&self) -> usize {
        self.origin.len()
    }

    fn eval(&self, lambda: f64) -> Vector {
        let mut x = self.origin.clone();
        x[0] = lambda;
        x[1] += self.drift * lambda + self.amplitude * (self.omega * lambda).sin();
        x
    }

    fn velocity(&self, lambda: f64) -> Option<Vector> {
        let mut v = Vector::zeros(self.origin.len());
        v[0] = 1.0;
        v[1] = self.drift + self.amplitude * self.omega * (self.omega * lambda).cos();
        Some(v)
    }
}

#[derive(Debug, Clone)]
struct PushforwardCurve {
    phi: Diffeomorphism,
    base: Worldline,
}

impl CurveFn for PushforwardCurve {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, lambda: f64) -> Vector {
        self.phi.map().forward(&self.base.curve.eval(lambda))
    }

    fn velocity(&self, lambda: f64) -> Option<Vector> {
        let inner = self.base.curve.velocity(lambda)?;
        Some(self.phi.map().jacobian(&self.base.curve.eval(lambda)) * inner)
    }

    fn knots(&self) -> Vec<f64> {
        self.base.curve.knots()
    }
}

#[derive(Debug, Clone)]
struct Shifted {
    base: Worldline,
    delta: f64,
}

impl CurveFn for Shifted {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, lambda: f64) -> Vector {
        self.base.curve.eval(lambda - self.delta)
    }

    fn velocity(&self, lambda: f64) -> Option<Vector> {
        self.base.curve.velocity(lambda - self.delta)
    }

    fn knots(&self) -> Vec<f64> {
        self.base
            .curve
            .knots()
            .into_iter()
            .map(|k| k + self.delta)
            .collect()
    }
}
