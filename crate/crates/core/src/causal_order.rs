//! Events as worldline coincidences, the proper-time order sign of each
//! branch, and quantum-controlled diffeomorphisms acting branch by branch.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{
    check_dim, pushforward_metric, Diffeomorphism, Matrix, MetricField, SpacetimePoint, Vector,
};
use crate::worldlines::{
    detect_coincidences, orientation_sign, proper_time, reparametrize, CurveLabel, Worldline,
    CROSSING_TOL, PROPER_TIME_REL_TOL,
};

/// Events closer than this (chart distance) cannot be aligned independently.
pub const MIN_EVENT_SEPARATION: f64 = 1e-6;
/// Tolerance for event points to count as aligned across branches.
pub const ALIGNMENT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    /// 1 for the crossing with `gamma1`, 2 for `gamma2`.
    pub id: u8,
    /// Proper time of `gamma0` from its initial point to the crossing.
    pub tau: f64,
    pub lambda0: f64,
    pub point: SpacetimePoint,
}

/// One classical branch: metric, the three worldlines, and the derived order.
#[derive(Clone)]
pub struct BranchConfig {
    pub metric: MetricField,
    pub gamma0: Worldline,
    pub gamma1: Worldline,
    pub gamma2: Worldline,
    pub events: [EventRecord; 2],
    pub delta_tau: f64,
    pub s: i8,
    /// Reading of the `gamma0` clock at its initial point.
    pub clock_offset: f64,
}

impl fmt::Debug for BranchConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BranchConfig")
            .field("events", &self.events)
            .field("delta_tau", &self.delta_tau)
            .field("s", &self.s)
            .field("clock_offset", &self.clock_offset)
            .finish_non_exhaustive()
    }
}

/// Validates the three worldlines on `metric` and derives the events, their
/// proper times and the order sign.
pub fn build_branch(
    metric: MetricField,
    gamma0: Worldline,
    gamma1: Worldline,
    gamma2: Worldline,
) -> Result<BranchConfig> {
    let dim = metric.dim();
    for g in [&gamma0, &gamma1, &gamma2] {
        check_dim(dim, g.dim())?;
    }
    let gamma0 = gamma0.with_label(CurveLabel::TestParticle);
    let gamma1 = gamma1.with_label(CurveLabel::System1);
    let gamma2 = gamma2.with_label(CurveLabel::System2);
    for g in [&gamma0, &gamma1, &gamma2] {
        g.check_timelike(&metric)?;
    }

    let start = gamma0.lambda_range().0;
    let mut events = Vec::with_capacity(2);
    for (id, system) in [(1u8, &gamma1), (2u8, &gamma2)] {
        let hits = detect_coincidences(&gamma0, system, CROSSING_TOL)?;
        if hits.len() != 1 {
            return Err(Error::ScenarioInvalid(format!(
                "gamma0 meets gamma{id} {} times, expected exactly once",
                hits.len()
            )));
        }
        let hit = &hits[0];
        let v0 = gamma0.velocity(hit.lambda0);
        let vi = system.velocity(hit.lambda_other);
        if !orientation_sign(&metric, &hit.point, &v0, &vi)? {
            return Err(Error::Orientation {
                event: id,
                value: metric.inner_product(&hit.point, &v0, &vi),
            });
        }
        let tau = proper_time(&gamma0, &metric, start, hit.lambda0)?;
        events.push(EventRecord {
            id,
            tau,
            lambda0: hit.lambda0,
            point: hit.point.clone(),
        });
    }
    let [e1, e2]: [EventRecord; 2] = events.try_into().expect("two events");

    let delta_tau = e2.tau - e1.tau;
    let resolution = 10.0 * PROPER_TIME_REL_TOL * e1.tau.abs().max(e2.tau.abs()).max(1.0);
    if delta_tau.abs() < resolution {
        return Err(Error::DegenerateOrder {
            delta_tau: delta_tau.abs(),
            resolution,
        });
    }
    let s = if delta_tau > 0.0 { 1 } else { -1 };
    Ok(BranchConfig {
        metric,
        gamma0,
        gamma1,
        gamma2,
        events: [e1, e2],
        delta_tau,
        s,
        clock_offset: 0.0,
    })
}

impl BranchConfig {
    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn tau1(&self) -> f64 {
        self.events[0].tau
    }

    pub fn tau2(&self) -> f64 {
        self.events[1].tau
    }

    /// Clock readings at the two events, including the clock offset.
    pub fn clock_readings(&self) -> (f64, f64) {
        (
            self.clock_offset + self.tau1(),
            self.clock_offset + self.tau2(),
        )
    }

    /// Shifts the parameter value of the `gamma0` clock at its initial point.
    pub fn shift_clock(&self, delta: f64) -> Self {
        Self {
            clock_offset: self.clock_offset + delta,
            ..self.clone()
        }
    }

    /// Rebuilds the branch with `gamma0`'s parameter shifted by `delta`.
    pub fn reparametrize_test_particle(&self, delta: f64) -> Result<Self> {
        let rebuilt = build_branch(
            self.metric.clone(),
            reparametrize(&self.gamma0, delta),
            self.gamma1.clone(),
            self.gamma2.clone(),
        )?;
        Ok(Self {
            clock_offset: self.clock_offset,
            ..rebuilt
        })
    }

    /// Exchanges the roles of systems 1 and 2.
    pub fn swap_events(&self) -> Result<Self> {
        let rebuilt = build_branch(
            self.metric.clone(),
            self.gamma0.clone(),
            self.gamma2.clone(),
            self.gamma1.clone(),
        )?;
        Ok(Self {
            clock_offset: self.clock_offset,
            ..rebuilt
        })
    }

    /// Pushes metric and curves forward along `phi` and re-detects the events.
    pub fn transformed(&self, phi: &Diffeomorphism) -> Result<Self> {
        check_dim(self.dim(), phi.dim())?;
        let rebuilt = build_branch(
            pushforward_metric(phi, &self.metric)?,
            self.gamma0.pushforward(phi)?,
            self.gamma1.pushforward(phi)?,
            self.gamma2.pushforward(phi)?,
        )?;
        Ok(Self {
            clock_offset: self.clock_offset,
            ..rebuilt
        })
    }

    pub fn curves(&self) -> [&Worldline; 3] {
        [&self.gamma0, &self.gamma1, &self.gamma2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Definite,
    Indefinite,
}

/// `alpha |0>|g_A> + beta |1>|g_B>` with a classical configuration per branch.
#[derive(Debug, Clone)]
pub struct BranchedScenario {
    pub branch_a: BranchConfig,
    pub branch_b: BranchConfig,
    pub amp_a: Complex64,
    pub amp_b: Complex64,
}

impl BranchedScenario {
    pub fn new(
        branch_a: BranchConfig,
        branch_b: BranchConfig,
        amp_a: Complex64,
        amp_b: Complex64,
    ) -> Result<Self> {
        let norm = amp_a.norm_sqr() + amp_b.norm_sqr();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "|alpha|^2 + |beta|^2 = {norm}, expected 1"
            )));
        }
        if branch_a.dim() != branch_b.dim() {
            return Err(Error::DimensionMismatch {
                expected: branch_a.dim(),
                got: branch_b.dim(),
            });
        }
        Ok(Self {
            branch_a,
            branch_b,
            amp_a,
            amp_b,
        })
    }

    /// Equal-weight superposition `(|A> + |B>) / sqrt 2`.
    pub fn balanced(branch_a: BranchConfig, branch_b: BranchConfig) -> Result<Self> {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::new(branch_a, branch_b, h, h)
    }

    pub fn with_amplitudes(&self, amp_a: Complex64, amp_b: Complex64) -> Result<Self> {
        Self::new(self.branch_a.clone(), self.branch_b.clone(), amp_a, amp_b)
    }

    pub fn branches(&self) -> [&BranchConfig; 2] {
        [&self.branch_a, &self.branch_b]
    }

    pub fn swap_branches(&self) -> Self {
        Self {
            branch_a: self.branch_b.clone(),
            branch_b: self.branch_a.clone(),
            amp_a: self.amp_b,
            amp_b: self.amp_a,
        }
    }

    pub fn verdict(&self) -> Verdict {
        if order_product(self) == 1 {
            Verdict::Definite
        } else {
            Verdict::Indefinite
        }
    }
}

/// `s^A s^B`: `+1` for definite order, `-1` for indefinite.
pub fn order_product(scenario: &BranchedScenario) -> i8 {
    scenario.branch_a.s * scenario.branch_b.s
}

/// Applies `|0><0| (x) U_A + |1><1| (x) U_B` classically: each branch is pushed
/// forward along its own map and its events re-detected. Amplitudes are kept.
pub fn apply_quantum_diffeo(
    scenario: &BranchedScenario,
    phi_a: &Diffeomorphism,
    phi_b: &Diffeomorphism,
) -> Result<BranchedScenario> {
    Ok(BranchedScenario {
        branch_a: scenario.branch_a.transformed(phi_a)?,
        branch_b: scenario.branch_b.transformed(phi_b)?,
        amp_a: scenario.amp_a,
        amp_b: scenario.amp_b,
    })
}

/// Maps from each branch's manifold onto a common one so that both events sit
/// at shared chart points, namely branch A's original event points.
///
/// `phi_A` is the identity; `phi_B` is the affine map that sends branch B's
/// first event onto A's and rotates and rescales the event separation onto A's.
pub fn align_events(scenario: &BranchedScenario) -> Result<(Diffeomorphism, Diffeomorphism)> {
    let dim = scenario.branch_a.dim();
    let [a1, a2] = &scenario.branch_a.events;
    let [b1, b2] = &scenario.branch_b.events;
    let sep_a = a2.point.as_vector() - a1.point.as_vector();
    let sep_b = b2.point.as_vector() - b1.point.as_vector();
    for (name, sep) in [("A", &sep_a), ("B", &sep_b)] {
        if sep.norm() < MIN_EVENT_SEPARATION {
            return Err(Error::Construction(format!(
                "events of branch {name} are {:e} apart, below the alignment scale {MIN_EVENT_SEPARATION:e}",
                sep.norm()
            )));
        }
    }
    let phi_a = Diffeomorphism::identity(dim);
    if (&sep_a - &sep_b).amax() < 1e-12 {
        let shift = a1.point.as_vector() - b1.point.as_vector();
        return Ok((phi_a, Diffeomorphism::translation(shift.as_slice())));
    }
    let linear = rotation_scaling(&sep_b, &sep_a);
    let offset = a1.point.as_vector() - &linear * b1.point.as_vector();
    let phi_b = Diffeomorphism::affine(linear, offset.as_slice())?;
    Ok((phi_a, phi_b))
}

/// Orientation-preserving linear map sending `from` to `to`: a rotation in
/// the plane they span followed by a uniform rescaling.
pub(crate) fn rotation_scaling(from: &Vector, to: &Vector) -> Matrix {
    let n = from.len();
    let u = from.normalize();
    let t = to.normalize();
    let cos = u.dot(&t).clamp(-1.0, 1.0);
    let mut w = &t - &u * cos;
    if w.norm() < 1e-12 {
        if cos > 0.0 {
            return Matrix::identity(n, n) * (to.norm() / from.norm());
        }
        // antiparallel: any direction orthogonal to u spans the plane
        let k = (0..n)
            .min_by(|&i, &j| u[i].abs().total_cmp(&u[j].abs()))
            .expect("non-empty");
        let mut e = Vector::zeros(n);
        e[k] = 1.0;
        w = &e - &u * u.dot(&e);
    }
    // sin taken from the same residual so that R u reproduces t exactly
    let sin = if cos <= -1.0 + 1e-15 && (&t + &u).norm() < 1e-12 {
        0.0
    } else {
        w.norm().min(1.0)
    };
    let w = w.normalize();
    let rot = DMatrix::identity(n, n)
        + (&w * u.transpose() - &u * w.transpose()) * sin
        + (&u * u.transpose() + &w * w.transpose()) * (cos - 1.0);
    rot * (to.norm() / from.norm())
}

/// Outcome of aligning the `gamma0` clocks on the first event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoGoReport {
    /// Clock shift applied to branch B.
    pub delta: f64,
    /// Common reading at the first event.
    pub tau_star: f64,
    pub tau2_a: f64,
    /// Branch B's reading at the second event after the shift.
    pub tau2_b: f64,
    pub straddles: bool,
}

/// Pure arithmetic of the reparametrization argument on clock readings
/// `(tau1, tau2)` of each branch.
pub fn no_go_from_readings(tau_a: (f64, f64), tau_b: (f64, f64)) -> NoGoReport {
    let delta = tau_a.0 - tau_b.0;
    let tau_star = tau_a.0;
    let tau2_a = tau_a.1;
    let tau2_b = tau_b.1 + delta;
    let straddles = (tau2_a - tau_star) * (tau2_b - tau_star) < 0.0;
    NoGoReport {
        delta,
        tau_star,
        tau2_a,
        tau2_b,
        straddles,
    }
}

/// Shifts branch B's clock so both branches agree at the first event and
/// reports where the second event falls.
pub fn reparametrization_no_go_check(scenario: &BranchedScenario) -> Result<NoGoReport> {
    if order_product(scenario) != -1 {
        return Err(Error::NotApplicable(
            "reparametrization check needs indefinite order".into(),
        ));
    }
    let report = no_go_from_readings(
        scenario.branch_a.clock_readings(),
        scenario.branch_b.clock_readings(),
    );
    // the shifted branch must reproduce the arithmetic
    let shifted = scenario.branch_b.shift_clock(report.delta).clock_readings();
    debug_assert!((shifted.0 - report.tau_star).abs() <= 1e-9 * report.tau_star.abs().max(1.0));
    debug_assert!((shifted.1 - report.tau2_b).abs() <= 1e-9 * report.tau2_b.abs().max(1.0));
    Ok(report)
}

/// Checks that both branches see their events at the same chart points.
pub fn events_aligned(scenario: &BranchedScenario, tol: f64) -> bool {
    scenario
        .branch_a
        .events
        .iter()
        .zip(&scenario.branch_b.events)
        .all(|(a, b)| a.point.chart_distance(&b.point) < tol)
}
