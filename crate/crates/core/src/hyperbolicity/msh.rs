//! Finite-time multisingular hyperbolicity estimate on the linear Poincaré flow.

use nalgebra::DVector;
use serde::Serialize;

use super::singular::{Activity, SingularityAnalysis};
use super::Verdict;
use crate::error::{Error, Result};
use crate::flowcalc::OrbitSegment;
use crate::lpf::LPFCocycle;
use crate::splitting::{base_points, domination_rate, estimate_bundle_splitting, growth_fit, window_steps, Growth, RateFit};

#[derive(Debug, Clone, Serialize)]
pub struct MshOptions {
    pub d_s: usize,
    /// Radius of the excluded ball around each singularity.
    pub radius: f64,
    /// Length of the forward segment that must avoid the excluded balls.
    pub horizon: f64,
    /// Rate fit window.
    pub window: f64,
    /// Warmup of the normal splitting estimator.
    pub warmup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MshEstimate {
    pub domination: Option<RateFit>,
    pub stable: Option<RateFit>,
    pub unstable: Option<RateFit>,
    /// `min(-slope)` over both restricted fits.
    pub rate: Option<f64>,
    pub base_points: usize,
    pub excluded_points: usize,
    pub singularities_ok: bool,
    /// Singularities whose activity could not be decided.
    pub undetermined: usize,
    pub horizon: f64,
    pub window: f64,
    pub verdict: Verdict,
}

fn far_from(state: &DVector<f64>, centres: &[DVector<f64>], radius: f64) -> bool {
    centres.iter().all(|c| (state - c).norm() > radius)
}

/// Item 3: every active singularity is Lorenz-like with a strong stable
/// bundle of the orbit's stable dimension.
fn singular_condition(singularities: &[SingularityAnalysis], d_s: usize) -> (bool, usize) {
    let mut ok = true;
    let mut undetermined = 0;
    for s in singularities {
        match s.active {
            Activity::Yes => {
                ok &= s.lorenz_like && s.splitting_dims.map(|d| d.0) == Some(d_s);
            }
            Activity::Undetermined => undetermined += 1,
            Activity::No => {}
        }
    }
    (ok, undetermined)
}

pub fn msh_estimate(
    orbit: &OrbitSegment,
    lpf: &LPFCocycle,
    singularities: &[SingularityAnalysis],
    opts: &MshOptions,
) -> Result<MshEstimate> {
    let cocycle = lpf.cocycle();
    if opts.d_s == 0 || opts.d_s >= cocycle.dim() {
        return Err(Error::InvalidParameter(format!(
            "stable dimension {} must leave a nonzero normal unstable part",
            opts.d_s
        )));
    }
    let normal = estimate_bundle_splitting(&cocycle, opts.d_s, opts.warmup)?;
    let (singularities_ok, undetermined) = singular_condition(singularities, opts.d_s);
    let domination = domination_rate(&cocycle, &normal.es, &normal.ecu, opts.window).ok();

    let centres: Vec<DVector<f64>> = singularities.iter().map(|s| DVector::from_vec(s.location.clone())).collect();
    let fit_steps = window_steps(&cocycle, opts.window);
    let guard = fit_steps.max(cocycle.steps_for(opts.horizon));
    let first = normal.es.start;
    let last = normal.es.end();
    let candidates = base_points(&cocycle, first, last, fit_steps, opts.window / 10.0);
    let total = candidates.len();
    let bases: Vec<usize> = candidates
        .into_iter()
        .filter(|&k| k + guard <= last && (k..=k + guard).all(|j| far_from(&orbit.states[j], &centres, opts.radius)))
        .collect();

    let (stable, unstable) = if bases.is_empty() {
        (None, None)
    } else {
        (
            Some(growth_fit(&cocycle, &normal.es, opts.window, &bases, Growth::Norm)?),
            Some(growth_fit(&cocycle, &normal.ecu, opts.window, &bases, Growth::InverseConorm)?),
        )
    };
    let rate = match (&stable, &unstable) {
        (Some(a), Some(b)) => Some((-a.slope).min(-b.slope)),
        _ => None,
    };

    let item1 = match &domination {
        Some(d) => Verdict::from_bool(d.verdict),
        None => Verdict::Inconclusive,
    };
    let item2 = match (&stable, &unstable) {
        (Some(a), Some(b)) => Verdict::from_bool(a.verdict && b.verdict),
        _ => Verdict::Inconclusive,
    };
    let item3 = Verdict::from_bool(singularities_ok);
    Ok(MshEstimate {
        domination,
        stable,
        unstable,
        rate,
        base_points: bases.len(),
        excluded_points: total - bases.len(),
        singularities_ok,
        undetermined,
        horizon: opts.horizon,
        window: opts.window,
        verdict: item1.and(item2).and(item3),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcalc::{integrate, StepControl};
    use crate::lpf::lpf_along;
    use crate::models::{make_lorenz, make_polynomial, PolynomialTable, PolynomialTerm};
    use crate::hyperbolicity::classify_singularity;
    use approx::assert_relative_eq;

    fn opts(horizon: f64) -> MshOptions {
        MshOptions {
            d_s: 1,
            radius: 1.0,
            horizon,
            window: 5.0,
            warmup: 8.0,
        }
    }

    fn drifting_saddle() -> crate::models::VectorFieldModel {
        let term = |component, exponents: Vec<u32>, coeff| PolynomialTerm { component, exponents, coeff };
        make_polynomial(&PolynomialTable {
            name: "drifting-saddle".into(),
            dim: 3,
            terms: vec![term(0, vec![1, 0, 0], 1.0), term(1, vec![0, 1, 0], -1.0), term(2, vec![0, 0, 0], 1.0)],
            singularities: Vec::new(),
            trapping_region: None,
        })
        .unwrap()
    }

    #[test]
    fn nonsingular_saddle_passes_with_unit_rate() {
        let m = drifting_saddle();
        let o = integrate(&m, &DVector::from_vec(vec![0.0, 1.0, 0.0]), 30.0, &StepControl::default().with_dt(0.05)).unwrap();
        let lpf = lpf_along(&o).unwrap();
        let e = msh_estimate(&o, &lpf, &[], &opts(5.0)).unwrap();
        assert_eq!(e.verdict, Verdict::Pass);
        assert_relative_eq!(e.rate.unwrap(), 1.0, epsilon = 1e-6);
        assert_eq!(e.excluded_points, 0);
    }

    #[test]
    fn inactive_or_lorenz_like_singularities() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        let origin = classify_singularity(&m, &DVector::zeros(3)).unwrap();
        assert_eq!(singular_condition(&[origin.clone()], 1), (true, 0));
        assert!(!singular_condition(&[origin.clone()], 2).0);
        let mut focus = classify_singularity(&m, &m.singularities()[1]).unwrap();
        focus.active = Activity::Yes;
        assert!(!singular_condition(&[origin, focus], 1).0);
    }

    #[test]
    fn excluded_segments_leave_no_base_points() {
        let m = drifting_saddle();
        let o = integrate(&m, &DVector::from_vec(vec![0.0, 1.0, 0.0]), 30.0, &StepControl::default().with_dt(0.05)).unwrap();
        let lpf = lpf_along(&o).unwrap();
        let mut fake = classify_singularity(&make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap(), &DVector::zeros(3)).unwrap();
        fake.location = vec![0.0, 0.0, 15.0];
        let mut o2 = opts(5.0);
        o2.radius = 100.0;
        let e = msh_estimate(&o, &lpf, &[fake], &o2).unwrap();
        assert_eq!(e.base_points, 0);
        assert_eq!(e.verdict, Verdict::Inconclusive);
    }
}
