//! Finite-time area, volume and wedge functionals on the centre-unstable
//! bundle, and their linear-Poincaré-flow counterparts.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flowcalc::{wedge2_of, Cocycle, OrbitSegment};
use crate::linalg::{self, halton, plane_sample};
use crate::lpf::LPFCocycle;
use crate::splitting::SubspaceSeq;

/// Minimal number of sampled 2-planes when `dim E^cu > 2`.
pub const PLANE_SAMPLE: usize = 64;
/// Minimal angle between a sampled NNE direction and the flow.
pub const FLOW_CONE: f64 = 1e-2;

/// Summary of a per-base-point functional.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalValue {
    pub rate: f64,
    pub mean: f64,
    pub max: f64,
    #[serde(skip)]
    pub per_point: Vec<f64>,
    pub window: f64,
}

impl FunctionalValue {
    fn from_points(per_point: Vec<f64>, window: f64) -> Result<Self> {
        if per_point.is_empty() {
            return Err(Error::InvalidInput("no base point admits the requested window".into()));
        }
        let rate = per_point.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = per_point.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = per_point.iter().sum::<f64>() / per_point.len() as f64;
        Ok(FunctionalValue {
            rate,
            mean,
            max,
            per_point,
            window,
        })
    }
}

/// Cocycle restricted to a transported subspace field, in its own frames.
#[derive(Debug, Clone)]
pub struct BundleCocycle {
    pub start: usize,
    pub dt: f64,
    pub bases: Vec<DMatrix<f64>>,
    pub factors: Vec<DMatrix<f64>>,
    /// `log|det C_k|`.
    pub log_dets: Vec<f64>,
    /// `∧²C_k` and `∧²(C_k^{-1})`; empty when the bundle is a line.
    pub wedges: Vec<DMatrix<f64>>,
    pub inverse_wedges: Vec<DMatrix<f64>>,
}

impl BundleCocycle {
    pub fn new(cocycle: &Cocycle<'_>, seq: &SubspaceSeq) -> Result<Self> {
        if cocycle.times.len() < 2 || seq.bases.len() < 2 {
            return Err(Error::InvalidInput("bundle needs at least one step".into()));
        }
        let factors = seq.restricted(cocycle)?;
        let log_dets = factors.iter().map(|c| c.determinant().abs().ln()).collect();
        let (wedges, inverse_wedges) = if seq.dim() < 2 {
            (Vec::new(), Vec::new())
        } else if seq.dim() == 2 {
            // on a plane the wedge is the determinant; keep its inverse exact
            factors
                .iter()
                .map(|c| {
                    let det = c.determinant();
                    (DMatrix::from_element(1, 1, det), DMatrix::from_element(1, 1, 1.0 / det))
                })
                .unzip()
        } else {
            factors
                .iter()
                .map(|c| {
                    let inv = c.clone().try_inverse().ok_or(Error::DegenerateBasis { cond: f64::INFINITY })?;
                    Ok((wedge2_of(c), wedge2_of(&inv)))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip()
        };
        Ok(BundleCocycle {
            start: seq.start,
            dt: cocycle.times[1] - cocycle.times[0],
            bases: seq.bases.clone(),
            factors,
            log_dets,
            wedges,
            inverse_wedges,
        })
    }

    pub fn dim(&self) -> usize {
        self.bases[0].ncols()
    }

    /// Last grid index with a basis.
    pub fn end(&self) -> usize {
        self.start + self.factors.len()
    }

    pub fn steps_for(&self, span: f64) -> usize {
        (span / self.dt).round().max(0.0) as usize
    }

    /// Rescaled product over `steps` steps from grid index `k`, with the log
    /// of the removed scale.
    pub fn product(&self, k: usize, steps: usize) -> (DMatrix<f64>, f64) {
        let d = self.dim();
        let mut acc = DMatrix::<f64>::identity(d, d);
        let mut log = 0.0;
        for f in &self.factors[k - self.start..k - self.start + steps] {
            acc = f * acc;
            log += rescale(&mut acc);
        }
        (acc, log)
    }

    /// `log|det|` of the product over `steps` steps from `k`.
    pub fn log_volume(&self, k: usize, steps: usize) -> f64 {
        self.log_dets[k - self.start..k - self.start + steps].iter().sum()
    }

    /// `log` of the smallest area factor over 2-planes of the bundle, i.e.
    /// `-log ‖∧²(P^{-1})‖` for the product `P` over `steps` steps from `k`.
    pub fn log_min_area(&self, k: usize, steps: usize) -> f64 {
        let mut acc = MinArea::new(self);
        for j in k..k + steps {
            acc.step(self, j);
        }
        acc.value()
    }

    fn base_points(&self, steps: usize) -> Vec<usize> {
        // base points every tenth of the window
        let stride = (steps / 10).max(1);
        (self.start..=self.end().saturating_sub(steps)).step_by(stride).collect()
    }
}

fn rescale(m: &mut DMatrix<f64>) -> f64 {
    let s = m.amax();
    if s > 0.0 && s.is_finite() {
        *m /= s;
        s.ln()
    } else {
        0.0
    }
}

/// Incremental `∧²(C_k^{-1}) ∧²(C_{k+1}^{-1}) ⋯`.
struct MinArea {
    acc: DMatrix<f64>,
    log: f64,
}

impl MinArea {
    fn new(bundle: &BundleCocycle) -> Self {
        let p = bundle.inverse_wedges[0].nrows();
        MinArea {
            acc: DMatrix::identity(p, p),
            log: 0.0,
        }
    }

    fn step(&mut self, bundle: &BundleCocycle, j: usize) {
        self.acc *= &bundle.inverse_wedges[j - bundle.start];
        self.log += rescale(&mut self.acc);
    }

    fn value(&self) -> f64 {
        -(self.log + linalg::op_norm(&self.acc).ln())
    }
}

/// Unit bivectors of the sampled 2-planes, pushed step by step through `∧²C`.
struct PlaneSample {
    vectors: Vec<DVector<f64>>,
    logs: Vec<f64>,
}

impl PlaneSample {
    /// Empty for planar bundles, where the single plane is the exact minimiser.
    fn new(d: usize) -> Self {
        let vectors = if d > 2 {
            let pairs = linalg::wedge_pairs(d);
            plane_sample(d, PLANE_SAMPLE)
                .iter()
                .map(|c| {
                    let w = DVector::from_iterator(
                        pairs.len(),
                        pairs.iter().map(|&(i, j)| c[(i, 0)] * c[(j, 1)] - c[(j, 0)] * c[(i, 1)]),
                    );
                    let n = w.norm();
                    w / n
                })
                .collect()
        } else {
            Vec::new()
        };
        let logs = vec![0.0; vectors.len()];
        PlaneSample { vectors, logs }
    }

    fn step(&mut self, bundle: &BundleCocycle, j: usize) {
        let w = &bundle.wedges[j - bundle.start];
        for (v, l) in self.vectors.iter_mut().zip(&mut self.logs) {
            *v = w * &*v;
            let n = v.norm();
            if n > 0.0 && n.is_finite() {
                *v /= n;
                *l += n.ln();
            }
        }
    }

    fn min_log(&self) -> f64 {
        self.logs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Smallest log area factor over `steps` steps from `k`: the exact minimum
/// compared against the fixed plane sample.
fn min_plane_log(bundle: &BundleCocycle, k: usize, steps: usize) -> f64 {
    let mut exact = MinArea::new(bundle);
    let mut sample = PlaneSample::new(bundle.dim());
    for j in k..k + steps {
        exact.step(bundle, j);
        sample.step(bundle, j);
    }
    exact.value().min(sample.min_log())
}

fn require_plane(bundle: &BundleCocycle) -> Result<()> {
    if bundle.dim() < 2 {
        return Err(Error::InvalidParameter("centre-unstable bundle must be at least 2-dimensional".into()));
    }
    Ok(())
}

/// Minimum over 2-planes `L ⊂ E^cu` of `(1/T) log|det DX_T|_L|`, per base point.
pub fn sectional_expansion_functional(cocycle: &Cocycle<'_>, ecu: &SubspaceSeq, window: f64) -> Result<FunctionalValue> {
    let bundle = BundleCocycle::new(cocycle, ecu)?;
    sectional_on(&bundle, window)
}

pub fn sectional_on(bundle: &BundleCocycle, window: f64) -> Result<FunctionalValue> {
    require_plane(bundle)?;
    let steps = bundle.steps_for(window).max(1);
    let t = steps as f64 * bundle.dt;
    let per: Vec<f64> = bundle
        .base_points(steps)
        .into_iter()
        .map(|k| min_plane_log(bundle, k, steps) / t)
        .collect();
    FunctionalValue::from_points(per, t)
}

/// `(1/T) log|det DX_T|_{E^cu}|`, per base point.
pub fn volume_expansion_functional(cocycle: &Cocycle<'_>, ecu: &SubspaceSeq, window: f64) -> Result<FunctionalValue> {
    let bundle = BundleCocycle::new(cocycle, ecu)?;
    volume_on(&bundle, window)
}

pub fn volume_on(bundle: &BundleCocycle, window: f64) -> Result<FunctionalValue> {
    let steps = bundle.steps_for(window).max(1);
    let t = steps as f64 * bundle.dt;
    let per: Vec<f64> = bundle
        .base_points(steps)
        .into_iter()
        .map(|k| bundle.log_volume(k, steps) / t)
        .collect();
    FunctionalValue::from_points(per, t)
}

/// Running statistic of a rate over the tail `[T/2, T]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRate {
    pub tail: f64,
    pub final_rate: f64,
    pub window: f64,
    #[serde(skip)]
    pub series: Vec<(f64, f64)>,
}

const TAIL_CHECKPOINTS: usize = 32;

/// Running maximum over the tail of the min-plane area rate from the first
/// point of `ecu`.
pub fn ash_functional(cocycle: &Cocycle<'_>, ecu: &SubspaceSeq, window: f64) -> Result<TailRate> {
    let bundle = BundleCocycle::new(cocycle, ecu)?;
    ash_on(&bundle, window)
}

pub fn ash_on(bundle: &BundleCocycle, window: f64) -> Result<TailRate> {
    require_plane(bundle)?;
    let total = bundle.steps_for(window).min(bundle.factors.len());
    if total < 2 {
        return Err(Error::InvalidInput("window too short for a tail statistic".into()));
    }
    let checkpoints = tail_checkpoints(total);
    let mut exact = MinArea::new(bundle);
    let mut sample = PlaneSample::new(bundle.dim());
    let mut series = Vec::with_capacity(checkpoints.len());
    let mut next = 0;
    for s in 0..total {
        exact.step(bundle, bundle.start + s);
        sample.step(bundle, bundle.start + s);
        if next < checkpoints.len() && checkpoints[next] == s + 1 {
            let t = (s + 1) as f64 * bundle.dt;
            series.push((t, exact.value().min(sample.min_log()) / t));
            next += 1;
        }
    }
    let tail = series.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(TailRate {
        tail,
        final_rate: series.last().unwrap().1,
        window: total as f64 * bundle.dt,
        series,
    })
}

fn tail_checkpoints(total: usize) -> Vec<usize> {
    let lo = total / 2;
    let mut c: Vec<usize> = (0..=TAIL_CHECKPOINTS)
        .map(|j| (lo + (total - lo) * j / TAIL_CHECKPOINTS).max(1))
        .collect();
    c.dedup();
    c
}

/// `log ‖[∧²(DX_τ|E^cu)]^{-1}‖` at grid index `k`.
pub fn mnuse_integrand(bundle: &BundleCocycle, k: usize, tau_steps: usize) -> f64 {
    -bundle.log_min_area(k, tau_steps)
}

/// Time average of the MNUSE integrand with `f = X_τ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AveragedRate {
    /// `(1/T) ∫ integrand ds` exactly as defined for `f = X_τ`.
    pub rate: f64,
    /// `rate / τ`, comparable across different `τ`.
    pub per_unit_time: f64,
    pub tau: f64,
    pub window: f64,
}

pub fn mnuse_functional(cocycle: &Cocycle<'_>, ecu: &SubspaceSeq, tau: f64, window: f64) -> Result<AveragedRate> {
    let bundle = BundleCocycle::new(cocycle, ecu)?;
    mnuse_on(&bundle, tau, window)
}

pub fn mnuse_on(bundle: &BundleCocycle, tau: f64, window: f64) -> Result<AveragedRate> {
    require_plane(bundle)?;
    let tau_steps = bundle.steps_for(tau).max(1);
    let steps = bundle.steps_for(window).max(1);
    if bundle.start + steps + tau_steps > bundle.end() {
        return Err(Error::InvalidInput("orbit too short for the MNUSE window".into()));
    }
    let sum: f64 = (bundle.start..bundle.start + steps)
        .map(|k| mnuse_integrand(bundle, k, tau_steps))
        .sum();
    let rate = sum / steps as f64;
    let tau_eff = tau_steps as f64 * bundle.dt;
    Ok(AveragedRate {
        rate,
        per_unit_time: rate / tau_eff,
        tau: tau_eff,
        window: steps as f64 * bundle.dt,
    })
}

/// Orthonormal normal-coordinate basis of `N^cu = E^cu ∩ X^⊥`.
pub fn normal_cu_basis(normal_basis: &DMatrix<f64>, ecu: &DMatrix<f64>) -> DMatrix<f64> {
    let projected = normal_basis.transpose() * ecu;
    let k = ecu.ncols() - 1;
    let svd = projected.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<DVector<f64>> = order[..k].iter().map(|&j| u.column(j).into_owned()).collect();
    DMatrix::from_columns(&cols)
}

/// `(1/n) Σ log ‖(P^τ|N^cu_{f^i x})^{-1}‖` along the LPF from the first point of `ecu`.
pub fn nuse_functional(lpf: &LPFCocycle, ecu: &SubspaceSeq, tau: f64, n: usize) -> Result<AveragedRate> {
    if ecu.dim() < 2 {
        return Err(Error::InvalidParameter("N^cu needs dim E^cu >= 2".into()));
    }
    let cocycle = lpf.cocycle();
    let tau_steps = cocycle.steps_for(tau).max(1);
    let start = ecu.start;
    if n == 0 || start + n * tau_steps > cocycle.steps() || start + (n - 1) * tau_steps > ecu.end() {
        return Err(Error::InvalidInput("orbit too short for the requested returns".into()));
    }
    let mut sum = 0.0;
    for i in 0..n {
        let k = start + i * tau_steps;
        let v = normal_cu_basis(&lpf.frames[k].normal_basis, ecu.at(k));
        let mut img = v;
        let mut log = 0.0;
        for f in &cocycle.factors[k..k + tau_steps] {
            img = f * img;
            let m = img.amax();
            if m > 0.0 && m.is_finite() {
                img /= m;
                log += m.ln();
            }
        }
        sum -= log + linalg::min_singular_value(&img).ln();
    }
    let rate = sum / n as f64;
    let dt = cocycle.times[1] - cocycle.times[0];
    let tau_eff = tau_steps as f64 * dt;
    Ok(AveragedRate {
        rate,
        per_unit_time: rate / tau_eff,
        tau: tau_eff,
        window: (n * tau_steps) as f64 * dt,
    })
}

/// NNE result: minimum over sampled directions of the tail infimum rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NneValue {
    pub rate: f64,
    pub directions: usize,
    pub window: f64,
    pub interpretation: &'static str,
}

pub const NNE_INTERPRETATION: &str =
    "growth of v transverse to the flow: log(area(X ∧ DX_t v) / |X|), plain log|DX_t v| at singular points";

/// Unit directions in frame coordinates of a `d`-dimensional bundle.
fn direction_sample(d: usize) -> Vec<DVector<f64>> {
    if d == 1 {
        return vec![DVector::from_element(1, 1.0)];
    }
    if d == 2 {
        return (0..16)
            .map(|j| {
                let a = std::f64::consts::PI * j as f64 / 16.0;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect();
    }
    let mut out: Vec<DVector<f64>> = (0..d)
        .map(|i| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            e
        })
        .collect();
    let primes = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    let mut idx = 1;
    while out.len() < 64 {
        let v = DVector::from_fn(d, |r, _| 2.0 * halton(idx, primes[r % primes.len()]) - 1.0);
        idx += 1;
        let n = v.norm();
        if n > 1e-3 {
            out.push(v / n);
        }
    }
    out
}

fn transverse_log(w: &DVector<f64>, flow: &DVector<f64>) -> f64 {
    let speed = flow.norm();
    if speed > 1e-8 {
        let x = flow / speed;
        (w - &x * x.dot(w)).norm().ln()
    } else {
        w.norm().ln()
    }
}

pub fn nne_functional(orbit: &OrbitSegment, ecu: &SubspaceSeq, window: f64) -> Result<NneValue> {
    let cocycle = orbit.cocycle();
    let bundle = BundleCocycle::new(&cocycle, ecu)?;
    let total = bundle.steps_for(window).min(bundle.factors.len());
    if total < 2 {
        return Err(Error::InvalidInput("window too short for a tail statistic".into()));
    }
    let k0 = bundle.start;
    let b0 = &bundle.bases[0];
    let x0 = &orbit.velocities[k0];
    let checkpoints = tail_checkpoints(total);
    let mut worst = f64::INFINITY;
    let mut used = 0;
    for c in direction_sample(bundle.dim()) {
        let v = b0 * &c;
        if x0.norm() > 1e-8 && linalg::angle_to_subspace(x0, &DMatrix::from_column_slice(v.len(), 1, v.as_slice())) < FLOW_CONE {
            continue;
        }
        used += 1;
        let g0 = transverse_log(&v, x0);
        let mut coords = c.clone();
        let mut log = 0.0;
        let mut next = 0;
        let mut tail = f64::INFINITY;
        for (s, f) in bundle.factors[..total].iter().enumerate() {
            coords = f * coords;
            let m = coords.amax();
            if m > 0.0 && m.is_finite() {
                coords /= m;
                log += m.ln();
            }
            if next < checkpoints.len() && checkpoints[next] == s + 1 {
                let k = k0 + s + 1;
                let w = &bundle.bases[s + 1] * &coords;
                let t = (s + 1) as f64 * bundle.dt;
                let g = log + transverse_log(&w, &orbit.velocities[k]) - g0;
                tail = tail.min(g / t);
                next += 1;
            }
        }
        worst = worst.min(tail);
    }
    if used == 0 {
        return Err(Error::InvalidInput("every sampled direction lies in the flow cone".into()));
    }
    Ok(NneValue {
        rate: worst,
        directions: used,
        window: total as f64 * bundle.dt,
        interpretation: NNE_INTERPRETATION,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcalc::{integrate, StepControl};
    use crate::lpf::lpf_along;
    use crate::models::*;
    use approx::assert_relative_eq;

    fn axes(n: usize, idx: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, idx.len());
        for (c, &i) in idx.iter().enumerate() {
            m[(i, c)] = 1.0;
        }
        m
    }

    fn linear(eigs: &[f64], t: f64) -> OrbitSegment {
        let m = make_linear_saddle(eigs).unwrap();
        integrate(&m, &DVector::zeros(eigs.len()), t, &StepControl::default().with_dt(0.1)).unwrap()
    }

    fn constant(orbit: &OrbitSegment, idx: &[usize]) -> SubspaceSeq {
        SubspaceSeq::constant(axes(orbit.dim(), idx), 0, orbit.steps() + 1)
    }

    #[test]
    fn unique_plane_rates() {
        let o = linear(&[2.0, 1.0, -5.0], 5.0);
        let ecu = constant(&o, &[0, 1]);
        let s = sectional_expansion_functional(&o.cocycle(), &ecu, 2.0).unwrap();
        let v = volume_expansion_functional(&o.cocycle(), &ecu, 2.0).unwrap();
        assert_relative_eq!(s.rate, 3.0, epsilon = 1e-8);
        assert_relative_eq!(v.rate, 3.0, epsilon = 1e-8);
        let a = ash_functional(&o.cocycle(), &ecu, 4.0).unwrap();
        assert_relative_eq!(a.tail, 3.0, epsilon = 1e-8);
    }

    #[test]
    fn volume_without_area_expansion() {
        let o = linear(&[3.0, 1.0, -1.0, -5.0], 5.0);
        let ecu = constant(&o, &[0, 1, 2]);
        let s = sectional_expansion_functional(&o.cocycle(), &ecu, 2.0).unwrap();
        let v = volume_expansion_functional(&o.cocycle(), &ecu, 2.0).unwrap();
        assert!(s.rate.abs() < 1e-8);
        assert_relative_eq!(v.rate, 3.0, epsilon = 1e-8);
        let m = mnuse_functional(&o.cocycle(), &ecu, 1.0, 2.0).unwrap();
        assert!(m.rate.abs() < 1e-8);
    }

    #[test]
    fn identity_dynamics_has_zero_mnuse() {
        let o = linear(&[0.0, 0.0, -1.0], 5.0);
        let ecu = constant(&o, &[0, 1]);
        let m = mnuse_functional(&o.cocycle(), &ecu, 1.0, 2.0).unwrap();
        assert!(m.rate.abs() < 1e-12);
    }

    #[test]
    fn mnuse_integrand_is_minus_log_det_for_planes() {
        let o = linear(&[2.0, 0.5, -3.0], 5.0);
        let ecu = constant(&o, &[0, 1]);
        let b = BundleCocycle::new(&o.cocycle(), &ecu).unwrap();
        let v = volume_on(&b, 1.0).unwrap();
        for (i, k) in b.base_points(10).into_iter().enumerate() {
            assert_relative_eq!(mnuse_integrand(&b, k, 10), -v.per_point[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn nne_linear_examples() {
        let o = linear(&[2.0, 0.5, -5.0], 6.0);
        let n = nne_functional(&o, &constant(&o, &[0, 1]), 6.0).unwrap();
        assert!(n.rate >= -1e-9, "{}", n.rate);
        let o = linear(&[2.0, -0.5, -5.0], 6.0);
        let n = nne_functional(&o, &constant(&o, &[0, 1]), 6.0).unwrap();
        assert_relative_eq!(n.rate, -0.5, epsilon = 1e-8);
    }

    #[test]
    fn nuse_scales_linearly_with_tau() {
        // rotation in the plane with a contracting vertical direction: N^cu is
        // the radial direction, which is neutral; add radial expansion
        let a = DMatrix::from_row_slice(3, 3, &[0.3, -1.0, 0.0, 1.0, 0.3, 0.0, 0.0, 0.0, -1.0]);
        let m = make_linear("spiral", a).unwrap();
        let o = integrate(&m, &DVector::from_vec(vec![1.0, 0.0, 0.0]), 12.0, &StepControl::default().with_dt(0.05)).unwrap();
        let lpf = lpf_along(&o).unwrap();
        let ecu = constant(&o, &[0, 1]);
        let r1 = nuse_functional(&lpf, &ecu, 1.0, 10).unwrap();
        let r2 = nuse_functional(&lpf, &ecu, 0.5, 20).unwrap();
        assert_relative_eq!(r1.per_unit_time, -0.3, epsilon = 1e-8);
        assert_relative_eq!(r1.per_unit_time, r2.per_unit_time, epsilon = 1e-8);
        assert_relative_eq!(r2.rate, 0.5 * r1.rate, epsilon = 1e-8);
    }
}
