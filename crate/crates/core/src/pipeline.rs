//! Run configuration and the staged pipeline behind the command-line tool.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::causal_order::{
    align_events, apply_quantum_diffeo, events_aligned, order_product,
    reparametrization_no_go_check, BranchConfig, BranchedScenario, EventRecord, NoGoReport,
    Verdict, ALIGNMENT_TOL,
};
use crate::error::{Error, Result};
use crate::frames::{make_lightcones_definite, LightconeOptions, LightconeReport, MINKOWSKI_TOL};
use crate::invariance::{invariance_sweep, trial_rng, SweepReport};
use crate::quantum::{
    default_omega, encode_order, protocol_timing, tomography_shots, BlochVector, QuantumState,
    CLASSIFY_EPS,
};
use crate::scenarios::ScenarioSpec;
use crate::worldlines::CurveLabel;

/// Amplitude normalization slack accepted (and corrected) in config files.
const AMPLITUDE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Verdict,
    Align,
    Lightcones,
    Sweep,
    Protocol,
    All,
}

impl Stage {
    pub const ORDERED: [Stage; 5] = [
        Stage::Verdict,
        Stage::Align,
        Stage::Lightcones,
        Stage::Sweep,
        Stage::Protocol,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Verdict => "verdict",
            Stage::Align => "align",
            Stage::Lightcones => "lightcones",
            Stage::Sweep => "sweep",
            Stage::Protocol => "protocol",
            Stage::All => "all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ORDERED
            .into_iter()
            .chain([Stage::All])
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage '{s}'")))
    }
}

/// Expands `all` and orders the stages; the verdict always runs.
pub fn resolve_stages(requested: &[Stage]) -> Vec<Stage> {
    let all = requested.is_empty() || requested.contains(&Stage::All);
    Stage::ORDERED
        .into_iter()
        .filter(|s| all || *s == Stage::Verdict || requested.contains(s))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Amplitudes {
    /// `[re, im]`
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
}

impl Default for Amplitudes {
    fn default() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            alpha: [h, 0.0],
            beta: [h, 0.0],
        }
    }
}

impl Amplitudes {
    /// Complex amplitudes, renormalized when within `1e-6` of unit norm.
    pub fn complex(&self) -> Result<(Complex64, Complex64)> {
        let a = Complex64::new(self.alpha[0], self.alpha[1]);
        let b = Complex64::new(self.beta[0], self.beta[1]);
        let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > AMPLITUDE_SLACK {
            return Err(Error::Config(format!(
                "amplitudes have norm {norm}, expected 1"
            )));
        }
        Ok((a / norm, b / norm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub eps_mink: f64,
    pub classify_eps: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_mink: MINKOWSKI_TOL,
            classify_eps: CLASSIFY_EPS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Numerics {
    pub seed: u64,
    pub trials: usize,
    pub tolerances: Tolerances,
    /// Spin precession rate; defaults to `pi / (tau*_2 - tau*_1)`.
    pub omega: Option<f64>,
    /// Extra precession time before the referee acts.
    pub tau_post: f64,
    /// Shot count for sampled tomography; exact expectations when absent.
    pub shots: Option<u64>,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            seed: 7,
            trials: 200,
            tolerances: Tolerances::default(),
            omega: None,
            tau_post: 0.0,
            shots: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub amplitudes: Amplitudes,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub stages: Vec<Stage>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))
    }

    pub fn build_scenario(&self) -> Result<BranchedScenario> {
        let (alpha, beta) = self.amplitudes.complex()?;
        self.scenario.build()?.with_amplitudes(alpha, beta)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchSummary {
    pub tau1: f64,
    pub tau2: f64,
    pub delta_tau: f64,
    pub s: i8,
    pub events: [EventRecord; 2],
}

impl From<&BranchConfig> for BranchSummary {
    fn from(b: &BranchConfig) -> Self {
        Self {
            tau1: b.tau1(),
            tau2: b.tau2(),
            delta_tau: b.delta_tau,
            s: b.s,
            events: b.events.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchPair {
    #[serde(rename = "A")]
    pub a: BranchSummary,
    #[serde(rename = "B")]
    pub b: BranchSummary,
}

impl BranchPair {
    pub fn of(s: &BranchedScenario) -> Self {
        Self {
            a: (&s.branch_a).into(),
            b: (&s.branch_b).into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignmentReport {
    pub aligned: bool,
    /// Largest chart distance between corresponding event points.
    pub max_event_offset: f64,
    pub branch: BranchPair,
    pub product: i8,
}

#[derive(Debug, Clone, Serialize)]
pub struct LightconeStage {
    pub points: [LightconeReport; 2],
    pub lightcone_definite: bool,
    pub branch: BranchPair,
    pub product: i8,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct Term {
    pub amplitude: [f64; 2],
    /// Basis labels per register, in register order.
    pub labels: Vec<f64>,
}

fn terms(state: &QuantumState) -> Vec<Term> {
    let mut out = Vec::new();
    for (flat, amp) in state.amplitudes().iter().enumerate() {
        if amp.norm() < 1e-14 {
            continue;
        }
        let mut rest = flat;
        let mut labels = vec![0.0; state.registers().len()];
        for (k, r) in state.registers().iter().enumerate().rev() {
            labels[k] = r.labels[rest % r.dim()];
            rest /= r.dim();
        }
        out.push(Term {
            amplitude: [amp.re, amp.im],
            labels,
        });
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolStage {
    pub tau_star: [f64; 2],
    pub omega: f64,
    pub registers: Vec<String>,
    pub psi2: Vec<Term>,
    pub psi3: Vec<Term>,
    pub referee: Vec<Term>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderQubit {
    pub bloch: [f64; 3],
    pub class: String,
    pub postselect_prob: f64,
    /// Exact Bloch vector when `bloch` is a finite-shot estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_bloch: Option<[f64; 3]>,
}

/// Everything the pipeline computed; serialized as `result.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub params: serde_json::Value,
    pub amplitudes: Amplitudes,
    pub stages: Vec<Stage>,
    pub branch: BranchPair,
    pub product: i8,
    pub verdict: Verdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reparametrization: Option<NoGoReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lightcones: Option<LightconeStage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<ProtocolStage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order_qubit: Option<OrderQubit>,
    /// Seconds since the Unix epoch; the only non-deterministic field.
    pub generated_at: u64,
}

/// Output of a pipeline run: the report plus the scenario for plot data.
pub struct RunOutput {
    pub report: RunReport,
    pub scenario: BranchedScenario,
}

/// Aligns the event points of both branches onto branch A's.
pub fn align(scenario: &BranchedScenario) -> Result<BranchedScenario> {
    let (phi_a, phi_b) = align_events(scenario)?;
    let aligned = apply_quantum_diffeo(scenario, &phi_a, &phi_b)?;
    if !events_aligned(&aligned, ALIGNMENT_TOL) {
        return Err(Error::Numerical(
            "aligned events drifted beyond tolerance".into(),
        ));
    }
    Ok(aligned)
}

fn max_event_offset(s: &BranchedScenario) -> f64 {
    s.branch_a
        .events
        .iter()
        .zip(&s.branch_b.events)
        .map(|(a, b)| a.point.chart_distance(&b.point))
        .fold(0.0, f64::max)
}

/// Alignment followed by localized normalizers at both event points.
pub fn lightcone_stage(scenario: &BranchedScenario, eps_mink: f64) -> Result<LightconeStage> {
    let aligned = align(scenario)?;
    let options = LightconeOptions {
        eps_mink,
        ..LightconeOptions::default()
    };
    let (out, points) = make_lightcones_definite(&aligned, options)?;
    Ok(LightconeStage {
        lightcone_definite: points.iter().all(|p| p.lightcone_definite),
        points,
        branch: BranchPair::of(&out),
        product: order_product(&out),
        verdict: out.verdict(),
    })
}

/// Runs the requested stages on the configured scenario.
pub fn run_pipeline(config: &RunConfig, stages: &[Stage]) -> Result<RunOutput> {
    let scenario = config.build_scenario()?;
    let stages = resolve_stages(stages);
    let numerics = &config.numerics;
    let product = order_product(&scenario);
    let mut report = RunReport {
        scenario: config.scenario.name().to_string(),
        params: serde_json::to_value(&config.scenario)
            .map_err(|e| Error::Config(e.to_string()))?
            .get("params")
            .cloned()
            .unwrap_or(serde_json::Value::Null),
        amplitudes: config.amplitudes,
        stages: stages.clone(),
        branch: BranchPair::of(&scenario),
        product,
        verdict: scenario.verdict(),
        reparametrization: (product == -1)
            .then(|| reparametrization_no_go_check(&scenario))
            .transpose()?,
        alignment: None,
        lightcones: None,
        sweep: None,
        protocol: None,
        order_qubit: None,
        generated_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };

    for stage in stages {
        match stage {
            Stage::Verdict | Stage::All => {}
            Stage::Align => {
                let aligned = align(&scenario)?;
                report.alignment = Some(AlignmentReport {
                    aligned: events_aligned(&aligned, ALIGNMENT_TOL),
                    max_event_offset: max_event_offset(&aligned),
                    branch: BranchPair::of(&aligned),
                    product: order_product(&aligned),
                });
            }
            Stage::Lightcones => {
                report.lightcones = Some(lightcone_stage(&scenario, numerics.tolerances.eps_mink)?);
            }
            Stage::Sweep => {
                if numerics.trials == 0 {
                    return Err(Error::Config("sweep needs at least one trial".into()));
                }
                report.sweep = Some(invariance_sweep(&scenario, numerics.trials, numerics.seed));
            }
            Stage::Protocol => {
                let timing = protocol_timing(&scenario)?;
                let omega = numerics.omega.unwrap_or_else(|| default_omega(&timing));
                let encoded = encode_order(
                    &scenario,
                    omega,
                    numerics.tau_post,
                    numerics.tolerances.classify_eps,
                )?;
                let (bloch, exact_bloch) = match numerics.shots {
                    Some(shots) => {
                        let mut rng = trial_rng(numerics.seed, usize::MAX - 1);
                        let sampled =
                            tomography_shots(&encoded.postselection.rho, shots, &mut rng)?;
                        (sampled, Some(encoded.bloch.as_array()))
                    }
                    None => (encoded.bloch, None),
                };
                let class = if exact_bloch.is_some() {
                    sampled_class(&bloch, numerics.tolerances.classify_eps)?
                } else {
                    encoded.class.name().to_string()
                };
                report.protocol = Some(ProtocolStage {
                    tau_star: [encoded.run.timing.tau_star_1, encoded.run.timing.tau_star_2],
                    omega,
                    registers: encoded
                        .run
                        .psi3
                        .registers()
                        .iter()
                        .map(|r| {
                            serde_json::to_value(r.role)
                                .ok()
                                .and_then(|v| v.as_str().map(String::from))
                                .unwrap_or_default()
                        })
                        .collect(),
                    psi2: terms(&encoded.run.psi2),
                    psi3: terms(&encoded.run.psi3),
                    referee: terms(&encoded.referee),
                });
                report.order_qubit = Some(OrderQubit {
                    bloch: bloch.as_array(),
                    class,
                    postselect_prob: encoded.postselection.probability,
                    exact_bloch,
                });
            }
        }
    }
    Ok(RunOutput { report, scenario })
}

fn sampled_class(b: &BlochVector, eps: f64) -> Result<String> {
    // shot noise can push an estimate slightly outside the ball
    let r = b.norm();
    let b = if r > 1.0 {
        BlochVector::new(b.x / r, b.y / r, b.z / r)
    } else {
        *b
    };
    Ok(crate::quantum::classify_order(&b, eps)?.name().to_string())
}

/// One row of `worldlines.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldlineSample {
    pub branch: &'static str,
    pub curve: &'static str,
    pub lambda: f64,
    pub coords: Vec<f64>,
}

/// Samples every curve of both branches at `n` parameter values.
pub fn worldline_samples(scenario: &BranchedScenario, n: usize) -> Vec<WorldlineSample> {
    let mut rows = Vec::new();
    for (name, branch) in [("A", &scenario.branch_a), ("B", &scenario.branch_b)] {
        for curve in branch.curves() {
            let label: CurveLabel = curve.label();
            for lambda in curve.sample_parameters(n) {
                rows.push(WorldlineSample {
                    branch: name,
                    curve: label.as_str(),
                    lambda,
                    coords: curve.eval(lambda).coords().to_vec(),
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_resolution() {
        assert_eq!(resolve_stages(&[Stage::All]), Stage::ORDERED.to_vec());
        assert_eq!(
            resolve_stages(&[Stage::Protocol]),
            vec![Stage::Verdict, Stage::Protocol]
        );
        assert_eq!("sweep".parse::<Stage>().unwrap(), Stage::Sweep);
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn amplitudes_are_checked() {
        let a = Amplitudes {
            alpha: [0.70710678, 0.0],
            beta: [0.0, 0.70710678],
        };
        let (x, y) = a.complex().unwrap();
        assert!((x.norm_sqr() + y.norm_sqr() - 1.0).abs() < 1e-15);
        assert!(Amplitudes {
            alpha: [1.0, 0.0],
            beta: [1.0, 0.0]
        }
        .complex()
        .is_err());
    }

    #[test]
    fn config_parsing() {
        let cfg = RunConfig::from_json(
            r#"{"scenario":{"name":"definite_control","params":{}},"numerics":{"seed":3},"stages":["verdict"]}"#,
        )
        .unwrap();
        assert_eq!(cfg.numerics.seed, 3);
        assert_eq!(cfg.numerics.trials, 200);
        assert!(RunConfig::from_json(r#"{"scenario":{"name":"nope","params":{}}}"#).is_err());
        assert!(RunConfig::from_json(
            r#"{"scenario":{"name":"definite_control","params":{}},"extra":1}"#
        )
        .is_err());
    }

    #[test]
    fn verdict_stage_on_definite_control() {
        let cfg = RunConfig::from_json(r#"{"scenario":{"name":"definite_control","params":{}}}"#)
            .unwrap();
        let out = run_pipeline(&cfg, &[Stage::Verdict]).unwrap();
        assert_eq!(out.report.product, 1);
        assert!(out.report.reparametrization.is_none());
        assert!(out.report.sweep.is_none());
    }

    #[test]
    fn worldline_rows_cover_both_branches() {
        let cfg =
            RunConfig::from_json(r#"{"scenario":{"name":"superposed_paths_switch","params":{}}}"#)
                .unwrap();
        let rows = worldline_samples(&cfg.build_scenario().unwrap(), 10);
        assert_eq!(rows.len(), 2 * 3 * 10);
        assert!(rows.iter().all(|r| r.coords.len() == 2));
    }
}
