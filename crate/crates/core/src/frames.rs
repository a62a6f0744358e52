//! Local inertial frames: coordinate changes that bring both branch metrics to
//! `eta` at the (aligned) event points without touching the order of events.

use serde::Serialize;

use crate::causal_order::{apply_quantum_diffeo, events_aligned, BranchedScenario, ALIGNMENT_TOL};
use crate::error::{Error, Result};
use crate::geometry::{
    check_dim, make_bump_localized, minkowski_matrix, DiffeoMap, Diffeomorphism, Matrix,
    MetricField, SpacetimePoint, Vector,
};

/// Default tolerance for a metric to count as Minkowskian at a point.
pub const MINKOWSKI_TOL: f64 = 1e-8;

const DERIVATIVE_STEP: f64 = 1e-5;

/// `L` with `L^{-T} g L^{-1} = eta`, built from the eigendecomposition
/// `g = Q diag(l) Q^T` as `L = diag(sqrt|l|) Q^T`.
///
/// The timelike eigenvector comes first with a positive time component; the
/// spacelike ones are ordered by the coordinate axis they lean on most, each
/// with a positive component along it.
pub fn normalizer_matrix(g_at_p: &Matrix, point: &SpacetimePoint) -> Result<Matrix> {
    let n = g_at_p.nrows();
    let sym = (g_at_p + g_at_p.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if let Some(&bad) = eig.eigenvalues.iter().find(|l| l.abs() < 1e-12) {
        return Err(Error::SingularMetric {
            eigenvalue: bad,
            point: point.coords().to_vec(),
        });
    }
    let negative: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] < 0.0).collect();
    if negative.len() != 1 {
        return Err(Error::Numerical(format!(
            "metric at {point:?} has {} negative eigenvalues",
            negative.len()
        )));
    }
    let time_idx = negative[0];
    let mut spatial: Vec<usize> = (0..n).filter(|&i| i != time_idx).collect();
    let lean = |i: usize| {
        let col = eig.eigenvectors.column(i);
        (1..n)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
            .unwrap_or(1)
    };
    spatial.sort_by_key(|&i| lean(i));

    let mut l = Matrix::zeros(n, n);
    for (row, &i) in std::iter::once(&time_idx).chain(spatial.iter()).enumerate() {
        let mut q: Vector = eig.eigenvectors.column(i).into_owned();
        let axis = if row == 0 { 0 } else { lean(i) };
        if q[axis] < 0.0 {
            q = -q;
        }
        l.set_row(row, &(q.transpose() * eig.eigenvalues[i].abs().sqrt()));
    }
    Ok(l)
}

/// Christoffel symbols `Gamma^mu_{ab}` at `p` by central differences,
/// indexed `[mu][a][b]`.
pub fn christoffel_symbols(g: &MetricField, p: &SpacetimePoint) -> Result<Vec<Matrix>> {
    let n = g.dim();
    let inv = g
        .eval(p)
        .try_inverse()
        .ok_or_else(|| Error::SingularMetric {
            eigenvalue: 0.0,
            point: p.coords().to_vec(),
        })?;
    let dg: Vec<Matrix> = (0..n)
        .map(|c| {
            let mut e = Vector::zeros(n);
            e[c] = DERIVATIVE_STEP;
            (g.eval(&p.translated(&e)) - g.eval(&p.translated(&-e))) / (2.0 * DERIVATIVE_STEP)
        })
        .collect();
    let mut gamma = vec![Matrix::zeros(n, n); n];
    for (mu, out) in gamma.iter_mut().enumerate() {
        for a in 0..n {
            for b in 0..n {
                out[(a, b)] = 0.5
                    * (0..n)
                        .map(|nu| {
                            inv[(mu, nu)] * (dg[a][(nu, b)] + dg[b][(nu, a)] - dg[nu][(a, b)])
                        })
                        .sum::<f64>();
            }
        }
    }
    Ok(gamma)
}

/// `y = p + L [(x - p) + 1/2 Gamma (x - p)(x - p)]`: normal-coordinate-style
/// map that also cancels the first derivatives of the metric at `p`.
#[derive(Debug, Clone)]
struct QuadraticNormalizer {
    center: Vector,
    linear: Matrix,
    gamma: Vec<Matrix>,
}

impl DiffeoMap for QuadraticNormalizer {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn forward(&self, x: &Vector) -> Vector {
        let d = x - &self.center;
        let quad =
            Vector::from_iterator(d.len(), self.gamma.iter().map(|gm| 0.5 * d.dot(&(gm * &d))));
        &self.center + &self.linear * (&d + quad)
    }

    fn jacobian(&self, x: &Vector) -> Matrix {
        let d = x - &self.center;
        let n = d.len();
        let mut inner = Matrix::identity(n, n);
        for (mu, gm) in self.gamma.iter().enumerate() {
            // Gamma symmetric in its lower indices
            inner.set_row(mu, &(inner.row(mu) + (gm * &d).transpose()));
        }
        &self.linear * inner
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizerOptions {
    /// Also make the first derivatives of the metric vanish at the point.
    pub flatten_first_derivatives: bool,
}

/// Coordinate change that makes `g` equal to `eta` at `p` and fixes `p`.
pub fn minkowski_normalizer_at(g: &MetricField, p: &SpacetimePoint) -> Result<Diffeomorphism> {
    minkowski_normalizer_with(g, p, NormalizerOptions::default())
}

pub fn minkowski_normalizer_with(
    g: &MetricField,
    p: &SpacetimePoint,
    options: NormalizerOptions,
) -> Result<Diffeomorphism> {
    check_dim(g.dim(), p.dim())?;
    let linear = normalizer_matrix(&g.eval(p), p)?;
    if options.flatten_first_derivatives {
        Ok(Diffeomorphism::new(QuadraticNormalizer {
            center: p.as_vector().clone(),
            linear,
            gamma: christoffel_symbols(g, p)?,
        }))
    } else {
        Diffeomorphism::linear_about(linear, p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LightconeReport {
    pub point: SpacetimePoint,
    pub metric_at_point_a: Vec<Vec<f64>>,
    pub metric_at_point_b: Vec<Vec<f64>>,
    pub deviation_a: f64,
    pub deviation_b: f64,
    pub lightcone_definite: bool,
}

/// Max-abs entry of `g - eta`.
pub fn minkowski_deviation(m: &Matrix) -> f64 {
    (m - minkowski_matrix(m.nrows())).amax()
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl LightconeReport {
    pub fn at(point: &SpacetimePoint, scenario: &BranchedScenario, eps: f64) -> Self {
        let ga = scenario.branch_a.metric.eval(point);
        let gb = scenario.branch_b.metric.eval(point);
        let (deviation_a, deviation_b) = (minkowski_deviation(&ga), minkowski_deviation(&gb));
        Self {
            point: point.clone(),
            metric_at_point_a: rows(&ga),
            metric_at_point_b: rows(&gb),
            deviation_a,
            deviation_b,
            lightcone_definite: deviation_a < eps && deviation_b < eps,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LightconeOptions {
    /// Chart radius of the localization balls; default is a quarter of the
    /// distance between the two event points.
    pub radius: Option<f64>,
    pub eps_mink: f64,
    pub normalizer: NormalizerOptions,
}

impl Default for LightconeOptions {
    fn default() -> Self {
        Self {
            radius: None,
            eps_mink: MINKOWSKI_TOL,
            normalizer: NormalizerOptions::default(),
        }
    }
}

/// Applies localized normalizers around both (aligned) event points in each
/// branch and reports the metric there.
pub fn make_lightcones_definite(
    scenario: &BranchedScenario,
    options: LightconeOptions,
) -> Result<(BranchedScenario, [LightconeReport; 2])> {
    if !events_aligned(scenario, ALIGNMENT_TOL) {
        return Err(Error::NotApplicable(
            "event points must be aligned across branches first".into(),
        ));
    }
    let p1 = scenario.branch_a.events[0].point.clone();
    let p2 = scenario.branch_a.events[1].point.clone();
    let distance = p1.chart_distance(&p2);
    let radius = options.radius.unwrap_or(0.25 * distance);
    if !(radius > 0.0) || distance <= 2.0 * radius {
        return Err(Error::Construction(format!(
            "localization balls of radius {radius} around events {distance} apart would overlap"
        )));
    }

    let localize = |metric: &MetricField| -> Result<Diffeomorphism> {
        let phi1 = make_bump_localized(
            &minkowski_normalizer_with(metric, &p1, options.normalizer)?,
            &p1,
            radius,
        )?;
        let phi2 = make_bump_localized(
            &minkowski_normalizer_with(metric, &p2, options.normalizer)?,
            &p2,
            radius,
        )?;
        phi1.then(&phi2)
    };
    let phi_a = localize(&scenario.branch_a.metric)?;
    let phi_b = localize(&scenario.branch_b.metric)?;
    let out = apply_quantum_diffeo(scenario, &phi_a, &phi_b)?;
    let reports = [
        LightconeReport::at(&p1, &out, options.eps_mink),
        LightconeReport::at(&p2, &out, options.eps_mink),
    ];
    Ok((out, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pushforward_metric, WeakField};

    fn origin() -> SpacetimePoint {
        SpacetimePoint::origin(2)
    }

    #[test]
    fn minkowski_is_already_normal() {
        for dim in [2, 4] {
            let p = SpacetimePoint::origin(dim);
            let l = normalizer_matrix(&minkowski_matrix(dim), &p).unwrap();
            assert!((l - Matrix::identity(dim, dim)).amax() < 1e-14);
        }
    }

    #[test]
    fn diagonal_weak_field_rescaling() {
        let g = WeakField::uniform(2, -0.01).unwrap();
        let l = normalizer_matrix(&g.eval(&origin()), &origin()).unwrap();
        let expected =
            Matrix::from_diagonal(&Vector::from_vec(vec![0.98f64.sqrt(), 1.02f64.sqrt()]));
        assert!((&l - expected).amax() < 1e-14);
        let phi = minkowski_normalizer_at(&g, &origin()).unwrap();
        let pushed = pushforward_metric(&phi, &g).unwrap().eval(&origin());
        assert!(minkowski_deviation(&pushed) < 1e-12);
    }

    #[test]
    fn off_diagonal_congruence() {
        let m = Matrix::from_row_slice(2, 2, &[-1.0, 0.1, 0.1, 1.0]);
        let g = MetricField::constant(m.clone()).unwrap();
        let l = normalizer_matrix(&m, &origin()).unwrap();
        // brute-force congruence: sum_{mu nu} (L^-1)^mu_a (L^-1)^nu_b g_{mu nu}
        let inv = l.clone().try_inverse().unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let mut s = 0.0;
                for mu in 0..2 {
                    for nu in 0..2 {
                        s += inv[(mu, a)] * inv[(nu, b)] * m[(mu, nu)];
                    }
                }
                assert!((s - minkowski_matrix(2)[(a, b)]).abs() < 1e-12);
            }
        }
        assert!(l[(0, 0)] > 0.0, "no time reflection");
        let phi = minkowski_normalizer_at(&g, &origin()).unwrap();
        assert!(
            minkowski_deviation(&pushforward_metric(&phi, &g).unwrap().eval(&origin())) < 1e-10
        );
    }

    #[test]
    fn singular_metric_rejected() {
        let m = Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            normalizer_matrix(&m, &origin()),
            Err(Error::SingularMetric { .. })
        ));
    }

    #[test]
    fn localized_normalizer_matches_point_value_and_leaves_exterior() {
        let field = WeakField::new(
            2,
            vec![crate::geometry::PointMass {
                position: vec![0.4],
                mass: 0.003,
            }],
            0.05,
        )
        .unwrap();
        let g = MetricField::new(field);
        let p = SpacetimePoint::new(vec![1.0, 0.2]).unwrap();
        let core = minkowski_normalizer_at(&g, &p).unwrap();
        let local = make_bump_localized(&core, &p, 0.5).unwrap();
        let pushed_local = pushforward_metric(&local, &g).unwrap();
        let pushed_core = pushforward_metric(&core, &g).unwrap();
        assert!(minkowski_deviation(&pushed_local.eval(&p)) < 1e-8);
        assert!((pushed_local.eval(&p) - pushed_core.eval(&p)).amax() < 1e-12);
        for k in 0..12 {
            let a = k as f64 * std::f64::consts::PI / 6.0;
            let q = SpacetimePoint::new(vec![1.0 + 0.8 * a.cos(), 0.2 + 0.8 * a.sin()]).unwrap();
            assert!((pushed_local.eval(&q) - g.eval(&q)).amax() < 1e-12);
        }
    }

    #[test]
    fn first_derivative_flattening() {
        let field = WeakField::new(
            2,
            vec![crate::geometry::PointMass {
                position: vec![0.5],
                mass: 0.01,
            }],
            0.05,
        )
        .unwrap();
        let g = MetricField::new(field);
        let p = SpacetimePoint::new(vec![0.0, 0.1]).unwrap();
        let opts = NormalizerOptions {
            flatten_first_derivatives: true,
        };
        let phi = minkowski_normalizer_with(&g, &p, opts).unwrap();
        let pushed = pushforward_metric(&phi, &g).unwrap();
        assert!(minkowski_deviation(&pushed.eval(&p)) < 1e-10);
        let h = 1e-4;
        let plain = pushforward_metric(&minkowski_normalizer_at(&g, &p).unwrap(), &g).unwrap();
        for c in 0..2 {
            let mut e = Vector::zeros(2);
            e[c] = h;
            let d = |m: &MetricField| {
                (m.eval(&p.translated(&e)) - m.eval(&p.translated(&(-&e)))).amax() / (2.0 * h)
            };
            let flat = d(&pushed);
            assert!(flat < 1e-6, "flattened derivative {flat}");
            if c == 1 {
                assert!(
                    d(&plain) > 1e-3,
                    "spatial gradient is present without flattening"
                );
            }
        }
    }
}
