use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::flowcalc::{advance_state, StepControl};
use crate::linalg::dominant_subspace;
use crate::models::{refine_equilibrium, VectorFieldModel};

/// Residual above which a candidate singularity is rejected.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;
/// Default arc length spent growing each manifold branch.
pub const DEFAULT_ARC_BUDGET: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Activity {
    Yes,
    No,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularityAnalysis {
    pub location: Vec<f64>,
    #[serde(serialize_with = "complex_pairs")]
    pub eigenvalues: Vec<Complex64>,
    pub is_hyperbolic: bool,
    pub index: usize,
    pub lorenz_like: bool,
    /// Selected central eigenvalue when Lorenz-like.
    pub center: Option<f64>,
    /// Other admissible central eigenvalues.
    pub alternates: Vec<f64>,
    pub active: Activity,
    /// `(dim E^ss, dim E^c, dim E^uu)` when Lorenz-like.
    pub splitting_dims: Option<(usize, usize, usize)>,
}

fn complex_pairs<S: Serializer>(v: &[Complex64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let pairs: Vec<[f64; 2]> = v.iter().map(|c| [c.re, c.im]).collect();
    pairs.serialize(s)
}

/// Eigenvalues sorted by real part, then imaginary part.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    let mut ev: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    ev
}

fn is_real(z: &Complex64) -> bool {
    z.im.abs() <= 1e-9 * z.norm().max(1.0)
}

/// Admissible central eigenvalues: real, simple in real part, with a
/// nonempty contracting block strictly below and a nonempty expanding block
/// strictly above, both dominating it in modulus.
fn center_candidates(ev: &[Complex64]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (i, z) in ev.iter().enumerate() {
        if !is_real(z) {
            continue;
        }
        let c = z.re;
        let below: Vec<f64> = ev.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, w)| w.re).filter(|&r| r < c).collect();
        let above: Vec<f64> = ev.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, w)| w.re).filter(|&r| r > c).collect();
        if below.len() + above.len() + 1 != ev.len() || below.is_empty() || above.is_empty() {
            continue;
        }
        let weakest_stable = below.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weakest_unstable = above.iter().cloned().fold(f64::INFINITY, f64::min);
        if weakest_stable < 0.0 && weakest_unstable > 0.0 && c.abs() < (-weakest_stable).min(weakest_unstable) {
            out.push((i, c));
        }
    }
    out
}

pub fn classify_singularity(model: &VectorFieldModel, sigma: &DVector<f64>) -> Result<SingularityAnalysis> {
    classify_with_budget(model, sigma, DEFAULT_ARC_BUDGET)
}

pub fn classify_with_budget(model: &VectorFieldModel, sigma: &DVector<f64>, budget: f64) -> Result<SingularityAnalysis> {
    let residual = model.eval(sigma).norm();
    let location = if residual <= EQUILIBRIUM_TOL {
        sigma.clone()
    } else {
        let refined = refine_equilibrium(model, sigma).map_err(|_| Error::NotAnEquilibrium { residual })?;
        let r = model.eval(&refined).norm();
        if r > EQUILIBRIUM_TOL {
            return Err(Error::NotAnEquilibrium { residual: r });
        }
        refined
    };
    let j = model.jacobian(&location);
    let eigenvalues = sorted_eigenvalues(&j);
    let min_re = eigenvalues.iter().map(|z| z.re.abs()).fold(f64::INFINITY, f64::min);
    let index = eigenvalues.iter().filter(|z| z.re < 0.0).count();
    let mut candidates = center_candidates(&eigenvalues);
    candidates.sort_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
    let (lorenz_like, center, alternates, splitting_dims) = match candidates.first() {
        Some(&(_, c)) => {
            let ss = eigenvalues.iter().filter(|z| z.re < c).count();
            let uu = eigenvalues.iter().filter(|z| z.re > c).count();
            (true, Some(c), candidates[1..].iter().map(|p| p.1).collect(), Some((ss, 1, uu)))
        }
        None => (false, None, Vec::new(), None),
    };
    let active = probe_activity(model, &location, &j, index, budget);
    Ok(SingularityAnalysis {
        location: location.iter().copied().collect(),
        eigenvalues,
        is_hyperbolic: min_re > 1e-8,
        index,
        lorenz_like,
        center,
        alternates,
        active,
        splitting_dims,
    })
}

/// Grow the unstable manifold from both sides of the leading unstable
/// direction. `Yes` when a branch leaves a small ball around the singularity,
/// stays in the trapping region, and later passes close to the local stable
/// manifold (small unstable coordinate in the eigen-splitting, inside a
/// larger ball).
fn probe_activity(model: &VectorFieldModel, sigma: &DVector<f64>, j: &DMatrix<f64>, index: usize, budget: f64) -> Activity {
    let n = sigma.len();
    let unstable = n - index;
    if index == 0 || unstable == 0 {
        return Activity::No;
    }
    let Some(region) = model.trapping_region() else {
        return Activity::Undetermined;
    };
    if !region.contains(sigma) {
        return Activity::Undetermined;
    }
    let diag: f64 = region
        .lower
        .iter()
        .zip(&region.upper)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let (inner, outer) = (0.02 * diag, 0.15 * diag);
    let scale = sorted_eigenvalues(j).iter().map(|z| z.re.abs()).fold(0.0, f64::max).max(1e-3);
    let forward = (j / scale).exp();
    let eu = dominant_subspace(&forward, unstable, 2000);
    let backward = (j / -scale).exp();
    let es = dominant_subspace(&backward, index, 2000);
    let mut cols: Vec<DVector<f64>> = es.column_iter().map(|c| c.into_owned()).collect();
    cols.extend(eu.column_iter().map(|c| c.into_owned()));
    let Some(to_eigen) = DMatrix::from_columns(&cols).try_inverse() else {
        return Activity::Undetermined;
    };
    let u = eu.column(0).into_owned();
    let eps = 1e-6 * sigma.norm().max(1.0);
    let ctrl = StepControl::default();
    let dt = 0.1 / scale.max(1.0);
    for sign in [1.0, -1.0] {
        let mut x = sigma + &u * (sign * eps);
        let mut arc = 0.0;
        let mut left = false;
        let mut near_stable = false;
        let mut escaped = false;
        while arc < budget {
            let Ok(next) = advance_state(model, &x, dt, &ctrl) else {
                escaped = true;
                break;
            };
            arc += (&next - &x).norm();
            x = next;
            let offset = &x - sigma;
            let d = offset.norm();
            if d > inner {
                left = true;
            }
            if left && !region.contains(&x) {
                escaped = true;
                break;
            }
            if left && d < outer {
                let c = &to_eigen * &offset;
                if c.rows(index, unstable).norm() < 0.05 * d {
                    near_stable = true;
                }
            }
        }
        if left && near_stable && !escaped {
            return Activity::Yes;
        }
    }
    Activity::Undetermined
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_linear_saddle, make_lorenz, make_polynomial, PolynomialTable, PolynomialTerm};
    use approx::assert_relative_eq;

    #[test]
    fn lorenz_origin_is_lorenz_like() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        let a = classify_singularity(&m, &DVector::zeros(3)).unwrap();
        let r = 1201f64.sqrt();
        assert_relative_eq!(a.eigenvalues[0].re, (-11.0 - r) / 2.0, epsilon = 1e-8);
        assert_relative_eq!(a.eigenvalues[1].re, -8.0 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(a.eigenvalues[2].re, (-11.0 + r) / 2.0, epsilon = 1e-8);
        assert!(a.lorenz_like && a.is_hyperbolic);
        assert_eq!(a.index, 2);
        assert_eq!(a.splitting_dims, Some((1, 1, 1)));
        assert_eq!(a.active, Activity::Yes);
    }

    #[test]
    fn lorenz_off_origin_equilibria_are_not_lorenz_like() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        for s in &m.singularities()[1..] {
            let a = classify_singularity(&m, s).unwrap();
            assert!(!a.lorenz_like);
            assert!(a.eigenvalues.iter().any(|z| z.im.abs() > 1.0 && z.re > 0.0));
            assert_eq!(a.index, 1);
        }
    }

    #[test]
    fn planar_saddle_is_not_lorenz_like() {
        let m = make_linear_saddle(&[1.0, -2.0]).unwrap();
        let a = classify_singularity(&m, &DVector::zeros(2)).unwrap();
        assert!(a.is_hyperbolic && !a.lorenz_like);
        assert_eq!(a.index, 1);
    }

    #[test]
    fn seeds_are_refined_or_rejected() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        let near = DVector::from_vec(vec![8.4, 8.6, 26.9]);
        let a = classify_singularity(&m, &near).unwrap();
        assert_relative_eq!(a.location[2], 27.0, epsilon = 1e-10);
        let table = PolynomialTable {
            name: "no-equilibrium".into(),
            dim: 2,
            terms: vec![
                PolynomialTerm { component: 0, exponents: vec![0, 0], coeff: 1.0 },
                PolynomialTerm { component: 0, exponents: vec![2, 0], coeff: 1.0 },
                PolynomialTerm { component: 1, exponents: vec![0, 1], coeff: -1.0 },
            ],
            singularities: Vec::new(),
            trapping_region: None,
        };
        let m = make_polynomial(&table).unwrap();
        assert!(matches!(
            classify_singularity(&m, &DVector::from_vec(vec![0.0, 0.0])),
            Err(Error::NotAnEquilibrium { .. })
        ));
    }

    #[test]
    fn center_candidates_on_four_eigenvalues() {
        let real = |v: &[f64]| v.iter().map(|&r| Complex64::new(r, 0.0)).collect::<Vec<_>>();
        let c = center_candidates(&real(&[-10.0, -1.0, 0.5, 20.0]));
        assert_eq!(c, vec![(2, 0.5)]);
        assert_eq!(center_candidates(&real(&[-10.0, -1.0, 2.0, 20.0])), vec![(1, -1.0)]);
        assert!(center_candidates(&real(&[-2.0, -1.0, 1.0, 2.0])).is_empty());
        // a repeated real part is never a simple centre
        assert!(center_candidates(&real(&[-10.0, 0.5, 0.5, 20.0])).is_empty());
    }
}
