//! Randomized diffeomorphisms and the invariance sweep over quantum
//! diffeomorphisms drawn independently per branch.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::causal_order::{
    apply_quantum_diffeo, order_product, reparametrization_no_go_check, BranchConfig,
    BranchedScenario,
};
use crate::error::{Error, Result};
use crate::geometry::{localized_shift, Diffeomorphism, Matrix, SpacetimePoint, Vector};

/// Relative tolerance for proper-time invariance.
pub const TAU_REL_TOL: f64 = 1e-6;

const MAX_REDRAWS: usize = 50;

/// Axis-aligned bounding box of a branch's curves, used to place localized
/// deformations where they actually touch the worldlines.
#[derive(Debug, Clone)]
pub struct Region {
    pub center: Vector,
    pub half_extent: Vector,
}

impl Region {
    pub fn of_branch(branch: &BranchConfig) -> Self {
        let dim = branch.dim();
        let mut lo = Vector::from_element(dim, f64::INFINITY);
        let mut hi = Vector::from_element(dim, f64::NEG_INFINITY);
        for curve in branch.curves() {
            for lambda in curve.sample_parameters(64) {
                let p = curve.eval(lambda);
                lo = lo.inf(p.as_vector());
                hi = hi.sup(p.as_vector());
            }
        }
        let half_extent = ((&hi - &lo) * 0.5).map(|h| h.max(0.5));
        Self {
            center: (&hi + &lo) * 0.5,
            half_extent,
        }
    }

    fn scale(&self) -> f64 {
        self.half_extent.amax()
    }

    fn sample_point<R: Rng>(&self, rng: &mut R) -> Vector {
        Vector::from_iterator(
            self.center.len(),
            self.center
                .iter()
                .zip(self.half_extent.iter())
                .map(|(c, h)| c + h * rng.gen_range(-1.0..1.0)),
        )
    }

    fn cloud<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<SpacetimePoint> {
        (0..n)
            .map(|_| {
                let widened = Region {
                    center: self.center.clone(),
                    half_extent: &self.half_extent * 1.5,
                };
                SpacetimePoint::new(widened.sample_point(rng).as_slice().to_vec()).expect("finite")
            })
            .collect()
    }
}

/// Random smooth invertible maps: compositions of a translation, a near-identity
/// linear map or boost, global shear waves and localized shifts.
#[derive(Debug, Clone)]
pub struct DiffeoSampler {
    region: Region,
}

impl DiffeoSampler {
    pub fn new(region: Region) -> Self {
        Self { region }
    }

    pub fn for_branch(branch: &BranchConfig) -> Self {
        Self::new(Region::of_branch(branch))
    }

    /// Draws one map and certifies it on a random point cloud; redraws on failure.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Diffeomorphism> {
        let mut last = None;
        for _ in 0..MAX_REDRAWS {
            match self.draw(rng).and_then(|phi| {
                phi.validate(&self.region.cloud(rng, 24))?;
                Ok(phi)
            }) {
                Ok(phi) => return Ok(phi),
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::Construction("diffeomorphism sampler exhausted".into())))
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Result<Diffeomorphism> {
        let dim = self.region.center.len();
        let scale = self.region.scale();
        let mut maps = Vec::new();

        let shift: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0) * scale).collect();
        maps.push(Diffeomorphism::translation(&shift));

        if rng.gen_bool(0.5) {
            let axis = rng.gen_range(1..dim);
            maps.push(Diffeomorphism::boost(dim, axis, rng.gen_range(-0.7..0.7))?);
        } else {
            let mut m = Matrix::identity(dim, dim);
            for v in m.iter_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
            if m.determinant() < 0.2 {
                m = Matrix::identity(dim, dim);
            }
            maps.push(Diffeomorphism::affine(m, &vec![0.0; dim])?);
        }

        for _ in 0..rng.gen_range(1..=2) {
            let target = rng.gen_range(0..dim);
            let source = (target + rng.gen_range(1..dim)) % dim;
            let wavenumber = rng.gen_range(0.2..2.0) / scale;
            let amplitude = rng.gen_range(-0.5..0.5) * scale;
            maps.push(Diffeomorphism::shear_wave(
                dim,
                target,
                source,
                amplitude,
                wavenumber,
                rng.gen_range(0.0..std::f64::consts::TAU),
            )?);
        }

        // localized deformations act on the original chart so they hit the curves
        let mut local = Vec::new();
        for _ in 0..rng.gen_range(1..=2) {
            let center = SpacetimePoint::new(self.region.sample_point(rng).as_slice().to_vec())?;
            let radius = rng.gen_range(0.2..1.0) * scale;
            let max_shift = 0.45 * radius / 1.875;
            let direction = Vector::from_iterator(dim, (0..dim).map(|_| rng.gen_range(-1.0..1.0)));
            let displacement = direction.normalize() * (max_shift * rng.gen_range(0.1..1.0));
            local.push(localized_shift(&center, displacement.as_slice(), radius)?);
        }
        local.extend(maps);
        Diffeomorphism::chain(&local)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub passed: bool,
    pub product: Option<i8>,
    pub max_rel_tau_deviation: f64,
    /// For indefinite scenarios: whether aligning the first-event clocks
    /// leaves the second readings on opposite sides.
    pub no_go_straddles: Option<bool>,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub trials: usize,
    pub seed: u64,
    pub passes: usize,
    /// Trials in which the order product equalled the original one.
    pub product_preserved: usize,
    pub max_rel_tau_deviation: f64,
    /// Trials in which the reparametrization argument held (indefinite only).
    pub no_go_holds: Option<usize>,
    pub failures: Vec<TrialOutcome>,
}

impl SweepReport {
    pub fn all_passed(&self) -> bool {
        self.passes == self.trials
    }
}

/// Deterministic per-trial generator: same seed and trial index give the same maps.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    rng
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn branch_deviation(before: &BranchConfig, after: &BranchConfig) -> (bool, f64) {
    let dev = [
        rel_dev(before.tau1(), after.tau1()),
        rel_dev(before.tau2(), after.tau2()),
        rel_dev(before.delta_tau, after.delta_tau),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    (before.s == after.s && dev <= TAU_REL_TOL, dev)
}

/// Runs one trial: independent random maps per branch, then compares the
/// proper times, signs and order product against the original scenario.
pub fn run_trial(scenario: &BranchedScenario, seed: u64, trial: usize) -> TrialOutcome {
    let mut rng = trial_rng(seed, trial);
    let outcome = DiffeoSampler::for_branch(&scenario.branch_a)
        .sample(&mut rng)
        .and_then(|phi_a| {
            Ok((
                phi_a,
                DiffeoSampler::for_branch(&scenario.branch_b).sample(&mut rng)?,
            ))
        })
        .and_then(|(phi_a, phi_b)| apply_quantum_diffeo(scenario, &phi_a, &phi_b));
    match outcome {
        Ok(transformed) => {
            let (ok_a, dev_a) = branch_deviation(&scenario.branch_a, &transformed.branch_a);
            let (ok_b, dev_b) = branch_deviation(&scenario.branch_b, &transformed.branch_b);
            let product = order_product(&transformed);
            let no_go_straddles = (order_product(scenario) == -1).then(|| {
                reparametrization_no_go_check(&transformed)
                    .map(|r| r.straddles)
                    .unwrap_or(false)
            });
            TrialOutcome {
                trial,
                passed: ok_a
                    && ok_b
                    && product == order_product(scenario)
                    && no_go_straddles != Some(false),
                product: Some(product),
                max_rel_tau_deviation: dev_a.max(dev_b),
                no_go_straddles,
                message: None,
            }
        }
        Err(e) => TrialOutcome {
            trial,
            passed: false,
            product: None,
            max_rel_tau_deviation: f64::NAN,
            no_go_straddles: None,
            message: Some(e.to_string()),
        },
    }
}

/// Runs `trials` independent trials in parallel; the report does not depend
/// on thread scheduling.
pub fn invariance_sweep(scenario: &BranchedScenario, trials: usize, seed: u64) -> SweepReport {
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(scenario, seed, t))
        .collect();
    let original = order_product(scenario);
    SweepReport {
        trials,
        seed,
        passes: outcomes.iter().filter(|o| o.passed).count(),
        product_preserved: outcomes
            .iter()
            .filter(|o| o.product == Some(original))
            .count(),
        max_rel_tau_deviation: outcomes
            .iter()
            .map(|o| o.max_rel_tau_deviation)
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max),
        no_go_holds: (original == -1).then(|| {
            outcomes
                .iter()
                .filter(|o| o.no_go_straddles == Some(true))
                .count()
        }),
        failures: outcomes.into_iter().filter(|o| !o.passed).collect(),
    }
}
