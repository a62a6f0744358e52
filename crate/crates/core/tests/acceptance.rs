//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::f64::consts::FRAC_1_SQRT_2 as H;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use causal_order_lab::causal_order::{order_product, BranchedScenario};
use causal_order_lab::frames::minkowski_deviation;
use causal_order_lab::geometry::{MetricField, PointMass, SpacetimePoint, WeakField};
use causal_order_lab::invariance::{invariance_sweep, SweepReport};
use causal_order_lab::pipeline::{align, lightcone_stage};
use causal_order_lab::quantum::{
    classify_order, default_omega, encode_order, order_state, postselect_order_qubit,
    protocol_timing, referee_transform, run_protocol, spin_evolve, tomography, BlochVector,
    CVector, DensityMatrix, LabeledRegister, OrderClass, QuantumState, CLASSIFY_EPS,
};
use causal_order_lab::scenarios::{
    definite_control, gravitational_switch, superposed_paths_switch, DefiniteControlParams,
    GravitationalSwitchParams, SuperposedPathsParams,
};
use causal_order_lab::worldlines::{proper_time, CurveLabel, Worldline};
use num_complex::Complex64;

const TRIALS: usize = 200;
const SEED: u64 = 20_240_601;
const RUNTIME_BUDGET: Duration = Duration::from_secs(60);

type Outcome = Result<String, String>;

struct Sweep {
    name: &'static str,
    scenario: BranchedScenario,
    report: SweepReport,
    runtime: Duration,
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn scenarios() -> Vec<(&'static str, BranchedScenario)> {
    vec![
        (
            "gravitational_switch",
            gravitational_switch(&GravitationalSwitchParams::default()).expect("scenario"),
        ),
        (
            "superposed_paths_switch",
            superposed_paths_switch(&SuperposedPathsParams::default()).expect("scenario"),
        ),
        (
            "definite_control",
            definite_control(&DefiniteControlParams::default()).expect("scenario"),
        ),
    ]
}

fn sweeps() -> Vec<Sweep> {
    scenarios()
        .into_iter()
        .map(|(name, scenario)| {
            let start = Instant::now();
            let report = invariance_sweep(&scenario, TRIALS, SEED);
            Sweep {
                name,
                scenario,
                report,
                runtime: start.elapsed(),
            }
        })
        .collect()
}

fn criterion_1(sweeps: &[Sweep]) -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for s in sweeps {
        let r = &s.report;
        let pass = r.trials >= 200
            && r.all_passed()
            && r.max_rel_tau_deviation <= 1e-6
            && s.runtime <= RUNTIME_BUDGET;
        ok &= pass;
        detail.push(format!(
            "{} {}/{} max rel dev {:.1e} in {:.1}s",
            s.name,
            r.passes,
            r.trials,
            r.max_rel_tau_deviation,
            s.runtime.as_secs_f64()
        ));
    }
    if ok {
        Ok(detail.join("; "))
    } else {
        Err(detail.join("; "))
    }
}

fn criterion_2(sweeps: &[Sweep]) -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for s in sweeps.iter().filter(|s| order_product(&s.scenario) == -1) {
        let r = &s.report;
        let failures_with_product = r.failures.iter().filter(|f| f.product != Some(-1)).count();
        let pass = r.trials >= 200 && r.product_preserved == r.trials && failures_with_product == 0;
        ok &= pass;
        detail.push(format!(
            "{} product -1 in {}/{}",
            s.name, r.product_preserved, r.trials
        ));
    }
    if ok && !detail.is_empty() {
        Ok(detail.join("; "))
    } else {
        Err(detail.join("; "))
    }
}

fn criterion_3() -> Outcome {
    let scenario =
        gravitational_switch(&GravitationalSwitchParams::default()).map_err(|e| e.to_string())?;
    let aligned = align(&scenario).map_err(|e| e.to_string())?;
    let before = aligned
        .branch_a
        .events
        .iter()
        .flat_map(|e| {
            [&aligned.branch_a, &aligned.branch_b]
                .map(|b| minkowski_deviation(&b.metric.eval(&e.point)))
        })
        .fold(0.0, f64::max);
    let stage = lightcone_stage(&scenario, 1e-8).map_err(|e| e.to_string())?;
    let after = stage
        .points
        .iter()
        .map(|p| p.deviation_a.max(p.deviation_b))
        .fold(0.0, f64::max);
    let detail = format!(
        "max |g - eta| {before:.2e} before, {after:.2e} after at both events; product {}",
        stage.product
    );
    if after < 1e-8 && stage.product == -1 && before > 1e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4(sweeps: &[Sweep]) -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for s in sweeps.iter().filter(|s| order_product(&s.scenario) == -1) {
        let held = s.report.no_go_holds.unwrap_or(0);
        let original = causal_order_lab::causal_order::reparametrization_no_go_check(&s.scenario)
            .map(|r| r.straddles)
            .unwrap_or(false);
        ok &= held == s.report.trials && original;
        detail.push(format!(
            "{} straddles in {}/{} trials (original: {original})",
            s.name, held, s.report.trials
        ));
    }
    if ok && !detail.is_empty() {
        Ok(detail.join("; "))
    } else {
        Err(detail.join("; "))
    }
}

/// Basis-term template with the spin state appended.
fn template(
    registers: &[LabeledRegister],
    terms: &[(Complex64, [usize; 4])],
    spin: &CVector,
) -> QuantumState {
    let mut expanded = Vec::new();
    for (amp, idx) in terms {
        for (s, comp) in spin.iter().enumerate() {
            expanded.push((amp * comp, vec![idx[0], idx[1], idx[2], idx[3], s]));
        }
    }
    QuantumState::from_terms(registers.to_vec(), &expanded).expect("template state")
}

/// Worst deviation of `psi2`, `psi3` and the referee output from the
/// displayed states for a scenario whose branch A meets agent `first_a` first.
fn protocol_deviation(
    base: &BranchedScenario,
    alpha: Complex64,
    beta: Complex64,
    first_a: u8,
) -> Result<f64, String> {
    let scenario = base
        .with_amplitudes(alpha, beta)
        .map_err(|e| e.to_string())?;
    let timing = protocol_timing(&scenario).map_err(|e| e.to_string())?;
    let omega = default_omega(&timing);
    let run = run_protocol(&scenario, omega).map_err(|e| e.to_string())?;

    // b1 = |+x>, b2 = exp(-i pi sigma_z / 2) |+x> = (-i, i) / sqrt 2
    let b1 = CVector::from_vec(vec![c(H, 0.0), c(H, 0.0)]);
    let b2 = CVector::from_vec(vec![c(0.0, -H), c(0.0, H)]);
    let tau_post = 0.7;
    let theta = omega * tau_post;
    let b_f = CVector::from_vec(vec![
        Complex64::from_polar(1.0, -theta / 2.0) * b2[0],
        Complex64::from_polar(1.0, theta / 2.0) * b2[1],
    ]);

    // memory label indices: 0 -> 0, tau*_1 -> 1, tau*_2 -> 2
    let (mem_a2, mem_b2) = if first_a == 1 {
        ([1, 0], [0, 1])
    } else {
        ([0, 1], [1, 0])
    };
    let (mem_a3, mem_b3) = if first_a == 1 {
        ([1, 2], [2, 1])
    } else {
        ([2, 1], [1, 2])
    };
    let registers = run.psi3.registers().to_vec();
    let psi2 = template(
        &registers,
        &[
            (alpha, [0, 0, mem_a2[0], mem_a2[1]]),
            (beta, [1, 1, mem_b2[0], mem_b2[1]]),
        ],
        &b1,
    );
    let psi3 = template(
        &registers,
        &[
            (alpha, [0, 0, mem_a3[0], mem_a3[1]]),
            (beta, [1, 1, mem_b3[0], mem_b3[1]]),
        ],
        &b2,
    );
    let referee = referee_transform(
        &spin_evolve(&run.psi3, tau_post, omega).map_err(|e| e.to_string())?,
        &timing,
    )
    .map_err(|e| e.to_string())?;
    // memory 1 after the referee: [-(t2 - t1), 0, t2 - t1]; memory 2: [2 t1, t1 + t2, 2 t2]
    let (s_a, s_b) = if first_a == 1 { (2, 0) } else { (0, 2) };
    let referee_expected = template(
        referee.registers(),
        &[(alpha, [0, 0, s_a, 1]), (beta, [1, 1, s_b, 1])],
        &b_f,
    );

    let mut worst: f64 = 0.0;
    for (got, want) in [
        (&run.psi2, &psi2),
        (&run.psi3, &psi3),
        (&referee, &referee_expected),
    ] {
        worst = worst.max(got.max_deviation(want).map_err(|e| e.to_string())?);
    }
    Ok(worst)
}

fn criterion_5() -> Outcome {
    let cases = [
        (c(1.0, 0.0), c(0.0, 0.0)),
        (c(H, 0.0), c(H, 0.0)),
        (c(H, 0.0), c(0.0, H)),
    ];
    let paths =
        superposed_paths_switch(&SuperposedPathsParams::default()).map_err(|e| e.to_string())?;
    let gravity =
        gravitational_switch(&GravitationalSwitchParams::default()).map_err(|e| e.to_string())?;
    let mut worst_paths: f64 = 0.0;
    let mut worst_gravity: f64 = 0.0;
    for (alpha, beta) in cases {
        worst_paths = worst_paths.max(protocol_deviation(&paths, alpha, beta, 1)?);
        worst_gravity = worst_gravity.max(protocol_deviation(&gravity, alpha, beta, 2)?);
    }
    let detail = format!(
        "max entry deviation {worst_paths:.1e} (superposed paths, agent 1 first in A), {worst_gravity:.1e} (gravitational, agent 2 first in A)"
    );
    if worst_paths <= 1e-12 && worst_gravity <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6() -> Outcome {
    let cases = [
        (c(1.0, 0.0), c(0.0, 0.0)),
        (c(H, 0.0), c(H, 0.0)),
        (c(H, 0.0), c(0.0, H)),
        (c(0.6, 0.0), c(0.0, -0.8)),
        (c(0.3, 0.4), c(-0.5, 0.5 * 3f64.sqrt())),
    ];
    let mut worst_prob: f64 = 0.0;
    let mut worst_bloch: f64 = 0.0;
    for (alpha, beta) in cases {
        let norm = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        let (alpha, beta) = (alpha / norm, beta / norm);
        let ps = postselect_order_qubit(&order_state(alpha, beta).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        worst_prob = worst_prob.max((ps.probability - 0.5).abs());
        let measured = tomography(&ps.rho).map_err(|e| e.to_string())?;
        let z = alpha.conj() * beta;
        let expected = BlochVector::new(2.0 * z.re, 2.0 * z.im, alpha.norm_sqr() - beta.norm_sqr());
        worst_bloch = worst_bloch.max(measured.distance(&expected));
    }
    let canonical = [
        ((0.0, 0.0, 1.0), OrderClass::DefiniteOrder),
        ((0.0, 0.0, 0.3), OrderClass::ClassicalMixture),
        ((1.0, 0.0, 0.0), OrderClass::PureIndefinite),
        ((0.3, 0.0, 0.2), OrderClass::MixedIndefinite),
    ];
    let classes_ok = canonical.iter().all(|&((x, y, z), want)| {
        classify_order(&BlochVector::new(x, y, z), CLASSIFY_EPS).ok() == Some(want)
    });
    let detail = format!(
        "|p - 1/2| <= {worst_prob:.1e}, Bloch deviation <= {worst_bloch:.1e}, canonical classes {}",
        if classes_ok { "a/b/c/d" } else { "wrong" }
    );
    if worst_prob <= 1e-12 && worst_bloch <= 1e-10 && classes_ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Outcome {
    let plus = DensityMatrix::pure(&CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]))
        .map_err(|e| e.to_string())?;
    let minus = DensityMatrix::pure(&CVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]))
        .map_err(|e| e.to_string())?;
    let mixture =
        DensityMatrix::mixture(&[(0.5, plus), (0.5, minus)]).map_err(|e| e.to_string())?;
    let superposition = DensityMatrix::pure(&CVector::from_vec(vec![c(H, 0.0), c(H, 0.0)]))
        .map_err(|e| e.to_string())?;
    let (bm, bs) = (
        tomography(&mixture).map_err(|e| e.to_string())?,
        tomography(&superposition).map_err(|e| e.to_string())?,
    );
    let (cm, cs) = (
        classify_order(&bm, CLASSIFY_EPS).map_err(|e| e.to_string())?,
        classify_order(&bs, CLASSIFY_EPS).map_err(|e| e.to_string())?,
    );
    let detail = format!("z = {:.1e} vs {:.1e}; classes {cm} vs {cs}", bm.z, bs.z);
    if (bm.z - bs.z).abs() < 1e-12 && cm != cs {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_8() -> Outcome {
    let flat = MetricField::minkowski(2);
    let moving = Worldline::uniform_velocity(&[0.0], &[0.6], (0.0, 5.0), CurveLabel::TestParticle)
        .map_err(|e| e.to_string())?;
    let ratio_flat = proper_time(&moving, &flat, 0.0, 5.0).map_err(|e| e.to_string())? / 5.0;

    let field = WeakField::new(
        2,
        vec![PointMass {
            position: vec![0.3],
            mass: 0.004,
        }],
        0.05,
    )
    .map_err(|e| e.to_string())?;
    let x = 0.8;
    let phi = field.potential(&SpacetimePoint::new(vec![0.0, x]).map_err(|e| e.to_string())?);
    let resting = Worldline::static_at(&[x], (0.0, 5.0), CurveLabel::TestParticle)
        .map_err(|e| e.to_string())?;
    let ratio_weak =
        proper_time(&resting, &MetricField::new(field), 0.0, 5.0).map_err(|e| e.to_string())? / 5.0;
    let expected_weak = (1.0 + 2.0 * phi).sqrt();
    let detail = format!(
        "v = 0.6: tau/dt = {ratio_flat:.12} (err {:.1e}); static, Phi = {phi:.5}: err {:.1e}",
        (ratio_flat - 0.8).abs(),
        (ratio_weak - expected_weak).abs()
    );
    if (ratio_flat - 0.8).abs() <= 1e-9 && (ratio_weak - expected_weak).abs() <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9() -> Outcome {
    let gravity =
        gravitational_switch(&GravitationalSwitchParams::default()).map_err(|e| e.to_string())?;
    let paths =
        superposed_paths_switch(&SuperposedPathsParams::default()).map_err(|e| e.to_string())?;
    let cases = [
        (c(1.0, 0.0), c(0.0, 0.0)),
        (c(H, 0.0), c(H, 0.0)),
        (c(H, 0.0), c(0.0, H)),
        (c(0.6, 0.0), c(0.8, 0.0)),
    ];
    let mut classes = Vec::new();
    for (alpha, beta) in cases {
        let mut seen = Vec::new();
        for s in [&gravity, &paths] {
            let s = s.with_amplitudes(alpha, beta).map_err(|e| e.to_string())?;
            let timing = protocol_timing(&s).map_err(|e| e.to_string())?;
            let report = encode_order(&s, default_omega(&timing), 0.0, CLASSIFY_EPS)
                .map_err(|e| e.to_string())?;
            seen.push((order_product(&s), report.class));
        }
        if seen[0] != seen[1] {
            return Err(format!(
                "({alpha}, {beta}): gravitational {:?} vs paths {:?}",
                seen[0], seen[1]
            ));
        }
        classes.push(format!("{}", seen[0].1.letter()));
    }
    Ok(format!(
        "product -1 in both; classes agree for all amplitude pairs ({})",
        classes.join(",")
    ))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let sweeps = sweeps();
    let results: Vec<(usize, &str, Outcome)> = vec![
        (
            1,
            "classical diffeomorphism invariance",
            criterion_1(&sweeps),
        ),
        (
            2,
            "no-go under quantum diffeomorphisms",
            criterion_2(&sweeps),
        ),
        (3, "lightcones definite, order indefinite", criterion_3()),
        (4, "reparametrization no-go", criterion_4(&sweeps)),
        (5, "protocol states exact", criterion_5()),
        (6, "post-selection and Bloch classification", criterion_6()),
        (7, "z-only tomography insufficient", criterion_7()),
        (8, "proper-time oracles", criterion_8()),
        (9, "two-perspective equivalence", criterion_9()),
    ];
    let mut failed = 0;
    for (n, title, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n} PASS  {title}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL  {title}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
