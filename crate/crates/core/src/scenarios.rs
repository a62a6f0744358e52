//! Validated scenario constructors: the gravitational switch, the switch
//! with superposed paths on flat spacetime, and definite-order controls.

use serde::{Deserialize, Serialize};

use crate::causal_order::{
    apply_quantum_diffeo, build_branch, order_product, BranchConfig, BranchedScenario,
};
use crate::error::{Error, Result};
use crate::geometry::{
    Diffeomorphism, LocalizedPerturbation, MetricField, PointMass, SpacetimePoint, WeakField,
};
use crate::quantum::protocol_timing;
use crate::worldlines::{proper_time, CurveLabel, Worldline};

/// Weak-field validity bound on `|Phi|`.
pub const MAX_WEAK_POTENTIAL: f64 = 0.1;

const CALIBRATION_TOL: f64 = 1e-12;

/// Gravitational switch on `1+1` weak-field spacetime.
///
/// Two laboratories sit at `x = -L` (lab 1) and `x = +L` (lab 2); the test
/// particle rests at `x = 0`. When its own clock reads `emission_proper_time`,
/// each lab sends a system toward the particle at coordinate speed
/// `messenger_speed`. The mass sits `mass_offset` beyond lab 1 in branch A and
/// beyond lab 2 in branch B, so the lab near the mass emits later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GravitationalSwitchParams {
    pub mass: f64,
    pub softening: f64,
    pub lab_distance: f64,
    pub mass_offset: f64,
    pub emission_proper_time: f64,
    pub messenger_speed: f64,
    /// How far past the particle each system travels, as a fraction of `L`.
    pub overshoot: f64,
}

impl Default for GravitationalSwitchParams {
    fn default() -> Self {
        Self {
            mass: 0.004,
            softening: 0.05,
            lab_distance: 1.0,
            mass_offset: 0.05,
            emission_proper_time: 10.0,
            messenger_speed: 0.5,
            overshoot: 0.25,
        }
    }
}

impl GravitationalSwitchParams {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("softening", self.softening),
            ("lab_distance", self.lab_distance),
            ("emission_proper_time", self.emission_proper_time),
            ("overshoot", self.overshoot),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.mass >= 0.0 && self.mass.is_finite()) {
            return Err(Error::Config(format!(
                "mass must be non-negative, got {}",
                self.mass
            )));
        }
        if !(self.mass_offset >= 0.0) {
            return Err(Error::Config(format!(
                "mass_offset must be non-negative, got {}",
                self.mass_offset
            )));
        }
        if !(self.messenger_speed > 0.0 && self.messenger_speed < 0.9) {
            return Err(Error::Config(format!(
                "messenger_speed must lie in (0, 0.9), got {}",
                self.messenger_speed
            )));
        }
        let phi = self.mass / self.softening;
        if phi >= MAX_WEAK_POTENTIAL {
            return Err(Error::Config(format!(
                "weak-field potential reaches {phi}, above the validity bound {MAX_WEAK_POTENTIAL}"
            )));
        }
        Ok(())
    }

    fn lab_x(&self, lab: u8) -> f64 {
        if lab == 1 {
            -self.lab_distance
        } else {
            self.lab_distance
        }
    }

    /// Spatial position of the mass in the branch where it sits near `lab`.
    pub fn mass_x(&self, lab: u8) -> f64 {
        let side = if lab == 1 { -1.0 } else { 1.0 };
        side * (self.lab_distance + self.mass_offset)
    }

    pub fn metric(&self, near_lab: u8) -> Result<(WeakField, MetricField)> {
        let field = WeakField::new(
            2,
            vec![PointMass {
                position: vec![self.mass_x(near_lab)],
                mass: self.mass,
            }],
            self.softening,
        )?;
        Ok((field.clone(), MetricField::new(field)))
    }

    /// Closed-form crossing proper times `(tau1, tau2)` for the branch with the
    /// mass near `near_lab`.
    pub fn oracle(&self, near_lab: u8) -> Result<(f64, f64)> {
        let (field, _) = self.metric(near_lab)?;
        let rate = |x: f64| {
            (1.0 + 2.0 * field.potential(&SpacetimePoint::new(vec![0.0, x]).expect("finite")))
                .sqrt()
        };
        let travel = self.lab_distance / self.messenger_speed;
        let tau =
            |lab: u8| rate(0.0) * (self.emission_proper_time / rate(self.lab_x(lab)) + travel);
        Ok((tau(1), tau(2)))
    }
}

/// Coordinate time at which a lab clock, started at `t = 0`, reads `target`.
///
/// Newton iteration on the integrated proper time.
pub fn calibrate_emission(lab: &Worldline, metric: &MetricField, target: f64) -> Result<f64> {
    let (start, end) = lab.lambda_range();
    let mut t = start + target;
    for _ in 0..50 {
        let tau = proper_time(lab, metric, start, t)?;
        let residual = tau - target;
        if residual.abs() <= CALIBRATION_TOL * target.abs().max(1.0) {
            return Ok(t);
        }
        let v = lab.velocity(t);
        let rate = (-metric.inner_product(&lab.eval(t), &v, &v)).sqrt();
        t = (t - residual / rate).clamp(start, end);
    }
    Err(Error::Numerical(format!(
        "emission calibration for proper time {target} did not converge"
    )))
}

/// One branch of the gravitational switch with the mass near `near_lab`.
pub fn gravitational_branch(
    params: &GravitationalSwitchParams,
    near_lab: u8,
) -> Result<BranchConfig> {
    params.validate()?;
    let (_, metric) = params.metric(near_lab)?;
    let u = params.messenger_speed;
    let l = params.lab_distance;
    let horizon = 2.0 * params.emission_proper_time + 4.0 * l / u;

    let mut systems = Vec::with_capacity(2);
    for lab in [1u8, 2] {
        let x_lab = params.lab_x(lab);
        let lab_line = Worldline::static_at(&[x_lab], (0.0, horizon), CurveLabel::System1)?;
        let t_emit = calibrate_emission(&lab_line, &metric, params.emission_proper_time)?;
        let direction = -x_lab.signum();
        let t_end = t_emit + l * (1.0 + params.overshoot) / u;
        let label = if lab == 1 {
            CurveLabel::System1
        } else {
            CurveLabel::System2
        };
        // x(t) = x_lab + direction * u * (t - t_emit)
        let x_at_zero = x_lab - direction * u * t_emit;
        systems.push(Worldline::uniform_velocity(
            &[x_at_zero],
            &[direction * u],
            (t_emit, t_end),
            label,
        )?);
    }
    let gamma0 = Worldline::static_at(&[0.0], (0.0, horizon), CurveLabel::TestParticle)?;
    let gamma2 = systems.pop().expect("two systems");
    let gamma1 = systems.pop().expect("two systems");
    build_branch(metric, gamma0, gamma1, gamma2)
}

/// Mass in superposition of sitting near lab 1 (branch A) and near lab 2
/// (branch B), with equal amplitudes.
pub fn gravitational_switch(params: &GravitationalSwitchParams) -> Result<BranchedScenario> {
    let scenario = BranchedScenario::balanced(
        gravitational_branch(params, 1)?,
        gravitational_branch(params, 2)?,
    )?;
    validate_scenario(&scenario, Some(-1))?;
    Ok(scenario)
}

/// Flat-spacetime switch: labs rest at `x = -L` and `x = +L`; the particle
/// leaves `x = 0` at speed `speed`, turns around inside the first lab it
/// visits and passes through the other one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperposedPathsParams {
    pub lab_distance: f64,
    pub speed: f64,
    /// Both branches take the branch-A route.
    pub same_route: bool,
    /// Velocity of a global boost applied to both branches.
    pub boost: f64,
}

impl Default for SuperposedPathsParams {
    fn default() -> Self {
        Self {
            lab_distance: 1.0,
            speed: 0.5,
            same_route: false,
            boost: 0.0,
        }
    }
}

impl SuperposedPathsParams {
    fn validate(&self) -> Result<()> {
        if !(self.lab_distance > 0.0 && self.lab_distance.is_finite()) {
            return Err(Error::Config(format!(
                "lab_distance must be positive, got {}",
                self.lab_distance
            )));
        }
        if !(self.speed > 0.0 && self.speed < 0.95) {
            return Err(Error::Config(format!(
                "speed must lie in (0, 0.95), got {}",
                self.speed
            )));
        }
        if !(self.boost.abs() < 0.9) {
            return Err(Error::Config(format!(
                "boost must satisfy |v| < 0.9, got {}",
                self.boost
            )));
        }
        Ok(())
    }

    /// Closed-form `(tau1, tau2)` of the branch that visits `first_lab` first.
    pub fn oracle(&self, first_lab: u8) -> (f64, f64) {
        let first = self.lab_distance / self.speed * (1.0 - self.speed * self.speed).sqrt();
        if first_lab == 1 {
            (first, 3.0 * first)
        } else {
            (3.0 * first, first)
        }
    }

    fn route(&self, first_lab: u8) -> Result<Worldline> {
        let (l, v) = (self.lab_distance, self.speed);
        let side = if first_lab == 1 { -1.0 } else { 1.0 };
        let waypoints = [
            (0.0, 0.0),
            (l / v, side * l),
            (3.0 * l / v, -side * l),
            (4.0 * l / v, -side * 2.0 * l),
        ];
        let points = waypoints
            .iter()
            .map(|&(t, x)| SpacetimePoint::new(vec![t, x]))
            .collect::<Result<Vec<_>>>()?;
        Worldline::piecewise_linear(&points, CurveLabel::TestParticle)
    }

    fn labs(&self) -> Result<(Worldline, Worldline)> {
        let horizon = (-1.0, 4.0 * self.lab_distance / self.speed + 1.0);
        Ok((
            Worldline::static_at(&[-self.lab_distance], horizon, CurveLabel::System1)?,
            Worldline::static_at(&[self.lab_distance], horizon, CurveLabel::System2)?,
        ))
    }

    /// Flat branch whose particle visits `first_lab` first.
    pub fn branch(&self, first_lab: u8) -> Result<BranchConfig> {
        self.validate()?;
        let (lab1, lab2) = self.labs()?;
        build_branch(
            MetricField::minkowski(2),
            self.route(first_lab)?,
            lab1,
            lab2,
        )
    }
}

pub fn superposed_paths_switch(params: &SuperposedPathsParams) -> Result<BranchedScenario> {
    let second = if params.same_route { 1 } else { 2 };
    let mut scenario = BranchedScenario::balanced(params.branch(1)?, params.branch(second)?)?;
    if params.boost != 0.0 {
        let boost = Diffeomorphism::boost(2, 1, params.boost)?;
        scenario = apply_quantum_diffeo(&scenario, &boost, &boost)?;
    }
    validate_scenario(&scenario, Some(if params.same_route { 1 } else { -1 }))?;
    Ok(scenario)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefiniteVariant {
    /// The same classical configuration in both branches.
    Identical,
    /// Branch B carries a localized metric bump away from all worldlines.
    PerturbedMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefiniteControlParams {
    pub variant: DefiniteVariant,
    pub lab_distance: f64,
    pub speed: f64,
    pub perturbation_amplitude: f64,
    /// Spatial position of the bump centre in branch B.
    pub perturbation_x: f64,
    pub perturbation_radius: f64,
}

impl Default for DefiniteControlParams {
    fn default() -> Self {
        Self {
            variant: DefiniteVariant::PerturbedMetric,
            lab_distance: 1.0,
            speed: 0.5,
            perturbation_amplitude: 0.3,
            perturbation_x: 4.0,
            perturbation_radius: 1.0,
        }
    }
}

pub fn definite_control(params: &DefiniteControlParams) -> Result<BranchedScenario> {
    let paths = SuperposedPathsParams {
        lab_distance: params.lab_distance,
        speed: params.speed,
        ..Default::default()
    };
    let branch_a = paths.branch(1)?;
    let branch_b = match params.variant {
        DefiniteVariant::Identical => branch_a.clone(),
        DefiniteVariant::PerturbedMetric => {
            let t_mid = 2.0 * params.lab_distance / params.speed;
            let center = SpacetimePoint::new(vec![t_mid, params.perturbation_x])?;
            let metric = MetricField::new(LocalizedPerturbation::new(
                MetricField::minkowski(2),
                center,
                params.perturbation_radius,
                params.perturbation_amplitude,
                1,
            )?);
            build_branch(
                metric,
                branch_a.gamma0.clone(),
                branch_a.gamma1.clone(),
                branch_a.gamma2.clone(),
            )?
        }
    };
    let scenario = BranchedScenario::balanced(branch_a, branch_b)?;
    validate_scenario(&scenario, Some(1))?;
    Ok(scenario)
}

/// Checks the timing idealization shared by all constructors and, when given,
/// the expected order product.
pub fn validate_scenario(scenario: &BranchedScenario, expected_product: Option<i8>) -> Result<()> {
    if let Some(expected) = expected_product {
        let product = order_product(scenario);
        if product != expected {
            return Err(Error::ScenarioInvalid(format!(
                "order product is {product}, construction expects {expected}"
            )));
        }
    }
    protocol_timing(scenario)
        .map_err(|e| Error::ScenarioInvalid(format!("timing idealization violated: {e}")))?;
    Ok(())
}

/// Scenario selected by name in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum ScenarioSpec {
    GravitationalSwitch(#[serde(default)] GravitationalSwitchParams),
    SuperposedPathsSwitch(#[serde(default)] SuperposedPathsParams),
    DefiniteControl(#[serde(default)] DefiniteControlParams),
}

impl ScenarioSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioSpec::GravitationalSwitch(_) => "gravitational_switch",
            ScenarioSpec::SuperposedPathsSwitch(_) => "superposed_paths_switch",
            ScenarioSpec::DefiniteControl(_) => "definite_control",
        }
    }

    pub fn build(&self) -> Result<BranchedScenario> {
        match self {
            ScenarioSpec::GravitationalSwitch(p) => gravitational_switch(p),
            ScenarioSpec::SuperposedPathsSwitch(p) => superposed_paths_switch(p),
            ScenarioSpec::DefiniteControl(p) => definite_control(p),
        }
    }
}
