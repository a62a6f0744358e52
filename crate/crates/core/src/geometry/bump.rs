use super::{check_dim, DiffeoMap, Diffeomorphism, Matrix, SpacetimePoint, Vector};
use crate::error::{Error, Result};
use crate::geometry::diffeo::newton_inverse;

/// Quintic smootherstep falloff: `w(0) = 1`, `w(rho >= 1) = 0`, with first and
/// second derivatives vanishing at both ends (so the blend is C^2).
pub fn bump_weight(rho: f64) -> f64 {
    if rho >= 1.0 {
        0.0
    } else {
        let r = rho.max(0.0);
        1.0 - r * r * r * (10.0 - 15.0 * r + 6.0 * r * r)
    }
}

pub fn bump_weight_derivative(rho: f64) -> f64 {
    if rho >= 1.0 || rho <= 0.0 {
        0.0
    } else {
        -30.0 * rho * rho * (1.0 - rho) * (1.0 - rho)
    }
}

/// `max |w'|`, attained at `rho = 1/2`.
const MAX_WEIGHT_SLOPE: f64 = 30.0 / 16.0;

/// `p -> p + w(|p - c| / R) (core(p) - p)`.
#[derive(Debug, Clone)]
struct BumpBlend {
    core: Diffeomorphism,
    center: Vector,
    radius: f64,
}

impl BumpBlend {
    fn rho(&self, x: &Vector) -> f64 {
        (x - &self.center).norm() / self.radius
    }
}

impl DiffeoMap for BumpBlend {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn forward(&self, x: &Vector) -> Vector {
        let rho = self.rho(x);
        if rho >= 1.0 {
            return x.clone();
        }
        let w = bump_weight(rho);
        x + (self.core.map().forward(x) - x) * w
    }

    // the ball is mapped onto itself, so exterior points are fixed
    fn inverse(&self, y: &Vector) -> Vector {
        if self.rho(y) >= 1.0 {
            return y.clone();
        }
        newton_inverse(self, y, y.clone())
    }

    fn jacobian(&self, x: &Vector) -> Matrix {
        let n = self.dim();
        let rho = self.rho(x);
        if rho >= 1.0 {
            return Matrix::identity(n, n);
        }
        let w = bump_weight(rho);
        let id = Matrix::identity(n, n);
        let mut jac = &id + (self.core.map().jacobian(x) - &id) * w;
        if rho > 0.0 {
            let offset = x - &self.center;
            let grad_w = &offset * (bump_weight_derivative(rho) / (self.radius * offset.norm()));
            let displacement = self.core.map().forward(x) - x;
            jac += displacement * grad_w.transpose();
        }
        jac
    }
}

/// Grid of chart points inside the ball `S(center, radius)` used to certify
/// invertibility of a localized map.
pub(crate) fn ball_samples(center: &SpacetimePoint, radius: f64) -> Vec<SpacetimePoint> {
    let dim = center.dim();
    let per_axis: usize = match dim {
        0..=2 => 41,
        3 => 15,
        _ => 9,
    };
    let mut out = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        let offset: Vec<f64> = idx
            .iter()
            .map(|&i| radius * (2.0 * i as f64 / (per_axis - 1) as f64 - 1.0) * 0.999)
            .collect();
        let r2: f64 = offset.iter().map(|o| o * o).sum();
        if r2 < radius * radius {
            let v = center.as_vector() + Vector::from_vec(offset);
            out.push(SpacetimePoint::from_vector(v));
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == dim {
                return out;
            }
            idx[k] += 1;
            if idx[k] < per_axis {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn certify(map: Diffeomorphism, center: &SpacetimePoint, radius: f64) -> Result<Diffeomorphism> {
    for p in ball_samples(center, radius) {
        let det = map.jacobian(&p).determinant();
        if !(det > 1e-12) {
            return Err(Error::Construction(format!(
                "localized map folds over at {p:?} (det J = {det})"
            )));
        }
    }
    map.validate(&ball_samples(center, radius * 0.5))
        .map_err(|e| Error::Construction(format!("localized map not invertible: {e}")))?;
    Ok(map)
}

/// Localizes `phi_core` (which must fix `center`) to the open ball of the
/// given chart radius: identity outside, smooth interpolation inside.
pub fn make_bump_localized(
    phi_core: &Diffeomorphism,
    center: &SpacetimePoint,
    radius: f64,
) -> Result<Diffeomorphism> {
    check_dim(phi_core.dim(), center.dim())?;
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Construction(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let drift = phi_core.forward(center).chart_distance(center);
    if drift > 1e-9 {
        return Err(Error::Construction(format!(
            "core map moves the center by {drift:e}"
        )));
    }
    let map = Diffeomorphism::new(BumpBlend {
        core: phi_core.clone(),
        center: center.as_vector().clone(),
        radius,
    });
    certify(map, center, radius)
}

/// Moves `center` by `displacement` while leaving everything outside the
/// ball of the given radius fixed.
pub fn localized_shift(
    center: &SpacetimePoint,
    displacement: &[f64],
    radius: f64,
) -> Result<Diffeomorphism> {
    check_dim(center.dim(), displacement.len())?;
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Construction(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let shift = Vector::from_column_slice(displacement).norm();
    // det J = 1 + displacement . grad w stays positive below this bound
    if shift * MAX_WEIGHT_SLOPE >= radius {
        return Err(Error::Construction(format!(
            "shift {shift} too large for a localized deformation of radius {radius}"
        )));
    }
    let map = Diffeomorphism::new(BumpBlend {
        core: Diffeomorphism::translation(displacement),
        center: center.as_vector().clone(),
        radius,
    });
    certify(map, center, radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::diffeo::finite_difference_jacobian;

    fn p(c: &[f64]) -> SpacetimePoint {
        SpacetimePoint::new(c.to_vec()).unwrap()
    }

    #[test]
    fn weight_profile() {
        assert_eq!(bump_weight(0.0), 1.0);
        assert_eq!(bump_weight(1.0), 0.0);
        assert_eq!(bump_weight(3.0), 0.0);
        assert!((bump_weight(0.5) - 0.5).abs() < 1e-15);
        // derivative against finite differences
        for &r in &[0.1, 0.3, 0.5, 0.77, 0.95] {
            let fd = (bump_weight(r + 1e-6) - bump_weight(r - 1e-6)) / 2e-6;
            assert!((fd - bump_weight_derivative(r)).abs() < 1e-8);
        }
        let max = (1..1000)
            .map(|i| bump_weight_derivative(i as f64 / 1000.0).abs())
            .fold(0.0, f64::max);
        assert!((max - MAX_WEIGHT_SLOPE).abs() < 1e-9);
    }

    #[test]
    fn identity_core_gives_identity() {
        let c = p(&[0.0, 0.0]);
        let f = make_bump_localized(&Diffeomorphism::identity(2), &c, 1.0).unwrap();
        for x in ball_samples(&c, 1.5) {
            assert!(f.forward(&x).chart_distance(&x) < 1e-15);
        }
    }

    #[test]
    fn linear_core_is_identity_outside_the_ball() {
        let c = p(&[0.3, -0.2]);
        let core = Diffeomorphism::linear_about(
            Matrix::from_diagonal(&Vector::from_vec(vec![1.1, 1.0])),
            &c,
        )
        .unwrap();
        let f = make_bump_localized(&core, &c, 1.0).unwrap();
        for k in 0..16 {
            let a = k as f64 * std::f64::consts::PI / 8.0;
            let x = p(&[0.3 + 2.0 * a.cos(), -0.2 + 2.0 * a.sin()]);
            assert_eq!(f.forward(&x), x);
        }
        let inside = p(&[0.6, -0.2]);
        assert!(f.forward(&inside).chart_distance(&inside) > 1e-6);
    }

    #[test]
    fn closed_form_jacobian_matches_finite_differences() {
        let c = p(&[0.0, 0.0]);
        let core = Diffeomorphism::linear_about(
            Matrix::from_row_slice(2, 2, &[1.05, 0.1, -0.05, 0.97]),
            &c,
        )
        .unwrap();
        let f = make_bump_localized(&core, &c, 0.8).unwrap();
        for x in [p(&[0.2, 0.1]), p(&[-0.5, 0.3]), p(&[0.0, 0.7])] {
            let fd = finite_difference_jacobian(|v| f.map().forward(v), x.as_vector());
            assert!((f.jacobian(&x) - fd).amax() < 1e-8);
        }
    }

    #[test]
    fn folding_cores_are_rejected() {
        let c = p(&[0.0, 0.0]);
        let reflect = Diffeomorphism::linear_about(-Matrix::identity(2, 2), &c).unwrap();
        assert!(make_bump_localized(&reflect, &c, 1.0).is_err());
        let shifted = Diffeomorphism::translation(&[0.1, 0.0]);
        assert!(
            make_bump_localized(&shifted, &c, 1.0).is_err(),
            "core must fix the center"
        );
        assert!(make_bump_localized(&Diffeomorphism::identity(2), &c, 0.0).is_err());
    }

    #[test]
    fn localized_shift_moves_center_only() {
        let c = p(&[1.0, 1.0]);
        let f = localized_shift(&c, &[0.2, -0.1], 1.0).unwrap();
        assert!(f.forward(&c).chart_distance(&p(&[1.2, 0.9])) < 1e-15);
        assert_eq!(f.forward(&p(&[3.0, 1.0])), p(&[3.0, 1.0]));
        assert!(localized_shift(&c, &[0.6, 0.0], 1.0).is_err());
    }

    #[test]
    fn four_dimensional_localization() {
        let c = p(&[0.0, 0.0, 0.0, 0.0]);
        let mut m = Matrix::identity(4, 4);
        m[(0, 0)] = 1.05;
        m[(3, 1)] = 0.05;
        let core = Diffeomorphism::linear_about(m, &c).unwrap();
        let f = make_bump_localized(&core, &c, 1.0).unwrap();
        let x = p(&[0.1, 0.2, -0.3, 0.1]);
        assert!(f.inverse(&f.forward(&x)).chart_distance(&x) < 1e-9);
    }
}
