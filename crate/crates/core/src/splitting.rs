//! Finite-time estimates of the invariant splitting `E^s ⊕ E^cu` and fitted
//! domination / contraction rates.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flowcalc::{restrict_cocycle, Cocycle, OrbitSegment, Transport};
use crate::linalg::{self, generic_frame, qr_positive};

/// Minimal singular-value ratio at the cut for the estimator to lock on.
pub const MIN_GAP_RATIO: f64 = 1.0 + 1e-3;
/// Pass margin on fitted rates, per unit time.
pub const RATE_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Splitting {
    pub point: DVector<f64>,
    pub es: DMatrix<f64>,
    pub ecu: DMatrix<f64>,
    pub angle: f64,
}

/// Orthonormal bases of a subspace field on consecutive grid points
/// `start, start + 1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceSeq {
    pub start: usize,
    pub bases: Vec<DMatrix<f64>>,
}

impl SubspaceSeq {
    pub fn constant(basis: DMatrix<f64>, start: usize, len: usize) -> Self {
        SubspaceSeq {
            start,
            bases: vec![basis; len],
        }
    }

    /// Last grid index covered.
    pub fn end(&self) -> usize {
        self.start + self.bases.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.bases.first().map(|b| b.ncols()).unwrap_or(0)
    }

    pub fn at(&self, index: usize) -> &DMatrix<f64> {
        &self.bases[index - self.start]
    }

    /// Restricted factors over the covered range, in the stored frames.
    pub fn restricted(&self, cocycle: &Cocycle<'_>) -> Result<Vec<DMatrix<f64>>> {
        if self.bases.len() < 2 {
            return Ok(Vec::new());
        }
        let factors = &cocycle.factors[self.start..self.end()];
        let r = restrict_cocycle(factors, &self.bases[0], &Transport::Frames(self.bases.clone()))?;
        Ok(r.factors)
    }
}

/// Splitting estimated on every grid point of `[start, start + len)`.
#[derive(Debug, Clone)]
pub struct SplittingSeries {
    pub warmup: f64,
    pub es: SubspaceSeq,
    pub ecu: SubspaceSeq,
    pub angles: Vec<f64>,
    /// One-step invariance defects, per grid point except the last.
    pub es_defects: Vec<f64>,
    pub ecu_defects: Vec<f64>,
    pub min_gap_ratio: f64,
}

impl SplittingSeries {
    pub fn start(&self) -> usize {
        self.es.start
    }

    pub fn len(&self) -> usize {
        self.es.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.es.bases.is_empty()
    }

    pub fn max_defect(&self) -> f64 {
        self.es_defects
            .iter()
            .chain(&self.ecu_defects)
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn splitting_at(&self, orbit: &OrbitSegment, index: usize) -> Splitting {
        let i = index - self.start();
        Splitting {
            point: orbit.states[index].clone(),
            es: self.es.bases[i].clone(),
            ecu: self.ecu.bases[i].clone(),
            angle: self.angles[i],
        }
    }

    pub fn splittings(&self, orbit: &OrbitSegment) -> Vec<Splitting> {
        (self.start()..self.start() + self.len())
            .map(|k| self.splitting_at(orbit, k))
            .collect()
    }
}

fn leak_ratio(image: &DMatrix<f64>, next: &DMatrix<f64>) -> f64 {
    let leak = image - next * (next.transpose() * image);
    let s = linalg::op_norm(image);
    if s > 0.0 {
        linalg::op_norm(&leak) / s
    } else {
        0.0
    }
}

/// Splitting of an arbitrary cocycle with a stable part of dimension `d_s`.
///
/// A generic full frame is pushed forward with QR; its leading `n - d_s`
/// columns approximate `E^cu`. A second frame is pulled back through the
/// inverse factors; its leading `d_s` columns approximate `E^s`. Both are
/// used only on grid points at least `warmup` away from the orbit ends.
pub fn estimate_bundle_splitting(cocycle: &Cocycle<'_>, d_s: usize, warmup: f64) -> Result<SplittingSeries> {
    let n = cocycle.dim();
    let steps = cocycle.steps();
    if d_s == 0 || d_s >= n {
        return Err(Error::InvalidParameter(format!("stable dimension {d_s} must lie in [1, {})", n)));
    }
    let w = cocycle.steps_for(warmup);
    if steps <= 2 * w || steps == 0 {
        return Err(Error::InvalidInput(format!(
            "orbit of {steps} steps is too short for a warmup of {w} steps"
        )));
    }
    let d_cu = n - d_s;
    let start = w;
    let end = steps - w;

    // forward sweep
    let mut q = generic_frame(n, n);
    let mut fwd_log = vec![0.0; n];
    let mut ecu = Vec::with_capacity(end - start + 1);
    for k in 0..=end {
        if k >= start {
            ecu.push(q.columns(0, d_cu).into_owned());
        }
        if k == end {
            break;
        }
        let (nq, r) = qr_positive(&cocycle.factors[k] * &q);
        for j in 0..n {
            fwd_log[j] += r[(j, j)].ln();
        }
        if !fwd_log.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateBasis { cond: f64::INFINITY });
        }
        q = nq;
    }

    // backward sweep
    let mut p = generic_frame(n, n);
    let mut bwd_log = vec![0.0; n];
    let mut es_rev = Vec::with_capacity(end - start + 1);
    for k in (start..=steps).rev() {
        if k <= end {
            es_rev.push(p.columns(0, d_s).into_owned());
        }
        if k == start {
            break;
        }
        let inv = cocycle.factors[k - 1]
            .clone()
            .try_inverse()
            .ok_or(Error::DegenerateBasis { cond: f64::INFINITY })?;
        let (np, r) = qr_positive(inv * &p);
        for j in 0..n {
            bwd_log[j] += r[(j, j)].ln();
        }
        if !bwd_log.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateBasis { cond: f64::INFINITY });
        }
        p = np;
    }
    es_rev.reverse();

    let per_window = |logs: &[f64], cut: usize, count: usize| {
        ((logs[cut - 1] - logs[cut]) / count as f64 * w.max(1) as f64).exp()
    };
    let fwd_gap = per_window(&fwd_log, d_cu, end);
    let bwd_gap = per_window(&bwd_log, d_s, steps - start);
    let min_gap_ratio = fwd_gap.min(bwd_gap);
    if !(min_gap_ratio >= MIN_GAP_RATIO) {
        let index = if fwd_gap <= bwd_gap { d_cu } else { d_s };
        return Err(Error::SpectralGapFailure {
            index,
            ratio: min_gap_ratio,
        });
    }

    let len = ecu.len();
    let mut angles = Vec::with_capacity(len);
    let mut es_defects = Vec::with_capacity(len.saturating_sub(1));
    let mut ecu_defects = Vec::with_capacity(len.saturating_sub(1));
    for i in 0..len {
        angles.push(linalg::smallest_principal_angle(&es_rev[i], &ecu[i]));
        if i + 1 < len {
            let a = &cocycle.factors[start + i];
            es_defects.push(leak_ratio(&(a * &es_rev[i]), &es_rev[i + 1]));
            ecu_defects.push(leak_ratio(&(a * &ecu[i]), &ecu[i + 1]));
        }
    }
    Ok(SplittingSeries {
        warmup,
        es: SubspaceSeq { start, bases: es_rev },
        ecu: SubspaceSeq { start, bases: ecu },
        angles,
        es_defects,
        ecu_defects,
        min_gap_ratio,
    })
}

/// Splitting along an orbit's tangent cocycle; requires `dim E^cu >= 2`.
pub fn estimate_splitting(orbit: &OrbitSegment, d_s: usize, warmup: f64) -> Result<SplittingSeries> {
    let n = orbit.dim();
    if d_s == 0 || d_s + 2 > n {
        return Err(Error::InvalidParameter(format!(
            "stable dimension {d_s} leaves no centre-unstable plane in dimension {n}"
        )));
    }
    estimate_bundle_splitting(&orbit.cocycle(), d_s, warmup)
}

/// Least-squares fit of `log D(t)` against span length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    /// Worst (largest) per-base-point slope.
    pub slope: f64,
    /// Uniform offset `c` with `log D(t) <= slope * t + c` on every sample.
    pub intercept: f64,
    pub max_residual: f64,
    pub window: f64,
    pub base_points: usize,
    pub verdict: bool,
}

const SPAN_COUNT: usize = 20;

fn span_steps(cocycle: &Cocycle<'_>, window: f64) -> Vec<usize> {
    let lo = window / 10.0;
    let mut spans: Vec<usize> = (0..SPAN_COUNT)
        .map(|j| cocycle.steps_for(lo + (window - lo) * j as f64 / (SPAN_COUNT - 1) as f64).max(1))
        .collect();
    spans.dedup();
    spans
}

/// Base grid indices spaced by `spacing` time units whose `window_steps`
/// segment lies inside `[first, last]`.
pub fn base_points(cocycle: &Cocycle<'_>, first: usize, last: usize, window_steps: usize, spacing: f64) -> Vec<usize> {
    let stride = cocycle.steps_for(spacing).max(1);
    let mut out = Vec::new();
    let mut k = first;
    while k + window_steps <= last {
        out.push(k);
        k += stride;
    }
    out
}

/// Which growth of a restricted cocycle is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    /// `log ‖A|E‖`
    Norm,
    /// `log ‖(A|E)^{-1}‖ = -log m(A|E)`
    InverseConorm,
}

/// Rate fit of one restricted growth over explicit base points.
pub fn growth_fit(cocycle: &Cocycle<'_>, seq: &SubspaceSeq, window: f64, bases: &[usize], growth: Growth) -> Result<RateFit> {
    if bases.is_empty() {
        return Err(Error::InvalidInput("no base points for the rate fit".into()));
    }
    let spans = span_steps(cocycle, window);
    let ws = *spans.last().unwrap();
    if bases.iter().any(|&k| k < seq.start || k + ws > seq.end()) {
        return Err(Error::InvalidInput("base point window outside the subspace range".into()));
    }
    let restricted = Factors::new(seq.restricted(cocycle)?, growth == Growth::InverseConorm);
    let t = spans_in_time(cocycle, &spans);
    let samples: Vec<(Vec<f64>, Vec<f64>)> = bases
        .iter()
        .map(|&k| {
            let g = log_growth(&restricted, k - seq.start, &spans);
            let g = match growth {
                Growth::Norm => g,
                Growth::InverseConorm => g.into_iter().map(|v| -v).collect(),
            };
            (t.clone(), g)
        })
        .collect();
    Ok(fit_samples(&samples, window))
}

/// Grid span of a fit window.
pub fn window_steps(cocycle: &Cocycle<'_>, window: f64) -> usize {
    *span_steps(cocycle, window).last().unwrap()
}

/// Restricted factors, or their inverses when the smallest singular value
/// of the product is wanted.
enum Factors {
    Forward(Vec<DMatrix<f64>>),
    Inverse(Vec<DMatrix<f64>>),
}

impl Factors {
    fn new(factors: Vec<DMatrix<f64>>, smallest: bool) -> Self {
        if !smallest {
            return Factors::Forward(factors);
        }
        let d = factors.first().map(|f| f.nrows()).unwrap_or(0);
        Factors::Inverse(
            factors
                .into_iter()
                .map(|f| f.try_inverse().unwrap_or_else(|| DMatrix::from_element(d, d, f64::INFINITY)))
                .collect(),
        )
    }
}

/// Running log of `‖∏ C‖` (or of its smallest singular value) at the given
/// spans. The smallest singular value is read off the inverse product
/// `C_0^{-1} C_1^{-1} ⋯`, whose norm is computed accurately however
/// ill-conditioned the forward product is.
fn log_growth(factors: &Factors, from: usize, spans: &[usize]) -> Vec<f64> {
    let smallest = matches!(factors, Factors::Inverse(_));
    let (Factors::Forward(list) | Factors::Inverse(list)) = factors;
    let d = list[0].nrows();
    let mut acc = DMatrix::<f64>::identity(d, d);
    let mut log = 0.0;
    let mut out = Vec::with_capacity(spans.len());
    let mut next = 0;
    for s in 1..=*spans.last().unwrap() {
        let f = &list[from + s - 1];
        if smallest {
            acc *= f;
        } else {
            acc = f * acc;
        }
        let m = acc.amax();
        if m > 0.0 && m.is_finite() {
            acc /= m;
            log += m.ln();
        }
        while next < spans.len() && spans[next] == s {
            let top = log + linalg::op_norm(&acc).ln();
            out.push(if smallest { -top } else { top });
            next += 1;
        }
    }
    out
}

fn fit_samples(samples: &[(Vec<f64>, Vec<f64>)], window: f64) -> RateFit {
    let mut slope = f64::NEG_INFINITY;
    let mut max_residual: f64 = 0.0;
    let mut fits = Vec::with_capacity(samples.len());
    for (t, y) in samples {
        let (s, c) = linalg::fit_line(t, y);
        for (a, b) in t.iter().zip(y) {
            max_residual = max_residual.max((b - (s * a + c)).abs());
        }
        slope = slope.max(s);
        fits.push(s);
    }
    let intercept = samples
        .iter()
        .flat_map(|(t, y)| t.iter().zip(y).map(|(a, b)| b - slope * a))
        .fold(f64::NEG_INFINITY, f64::max);
    RateFit {
        slope,
        intercept,
        max_residual,
        window,
        base_points: samples.len(),
        verdict: slope <= -RATE_MARGIN && intercept.is_finite(),
    }
}

fn spans_in_time(cocycle: &Cocycle<'_>, spans: &[usize]) -> Vec<f64> {
    let dt = cocycle.times[1] - cocycle.times[0];
    spans.iter().map(|&s| s as f64 * dt).collect()
}

fn covered_range(a: &SubspaceSeq, b: Option<&SubspaceSeq>) -> (usize, usize) {
    match b {
        Some(b) => (a.start.max(b.start), a.end().min(b.end())),
        None => (a.start, a.end()),
    }
}

/// Domination fit of `D(t) = ‖DX_t|E^s‖ · ‖DX_{-t}|E^cu(X_t x)‖` with base
/// points every `spacing` time units.
pub fn domination_rate_with(
    cocycle: &Cocycle<'_>,
    es: &SubspaceSeq,
    ecu: &SubspaceSeq,
    window: f64,
    spacing: f64,
) -> Result<RateFit> {
    let (first, last) = covered_range(es, Some(ecu));
    let spans = span_steps(cocycle, window);
    let ws = *spans.last().unwrap();
    let bases = base_points(cocycle, first, last, ws, spacing);
    if bases.is_empty() {
        return Err(Error::InvalidInput("splitting range shorter than the fit window".into()));
    }
    let rs = Factors::new(es.restricted(cocycle)?, false);
    let rcu = Factors::new(ecu.restricted(cocycle)?, true);
    let t = spans_in_time(cocycle, &spans);
    let samples: Vec<(Vec<f64>, Vec<f64>)> = bases
        .iter()
        .map(|&k| {
            let a = log_growth(&rs, k - es.start, &spans);
            let b = log_growth(&rcu, k - ecu.start, &spans);
            (t.clone(), a.iter().zip(&b).map(|(x, y)| x - y).collect())
        })
        .collect();
    Ok(fit_samples(&samples, window))
}

/// Base points every tenth of the window.
pub fn domination_rate(cocycle: &Cocycle<'_>, es: &SubspaceSeq, ecu: &SubspaceSeq, window: f64) -> Result<RateFit> {
    domination_rate_with(cocycle, es, ecu, window, window / 10.0)
}

/// Contraction fit of `D(t) = ‖DX_t|E^s‖`.
pub fn contraction_rate_with(cocycle: &Cocycle<'_>, es: &SubspaceSeq, window: f64, spacing: f64) -> Result<RateFit> {
    let ws = window_steps(cocycle, window);
    let bases = base_points(cocycle, es.start, es.end(), ws, spacing);
    if bases.is_empty() {
        return Err(Error::InvalidInput("subspace range shorter than the fit window".into()));
    }
    growth_fit(cocycle, es, window, &bases, Growth::Norm)
}

pub fn contraction_rate(cocycle: &Cocycle<'_>, es: &SubspaceSeq, window: f64) -> Result<RateFit> {
    contraction_rate_with(cocycle, es, window, window / 10.0)
}

/// Largest angle between the flow direction and `E^cu` over the covered range.
pub fn flow_containment(orbit: &OrbitSegment, ecu: &SubspaceSeq) -> f64 {
    (ecu.start..=ecu.end())
        .map(|k| linalg::angle_to_subspace(&orbit.velocities[k], ecu.at(k)))
        .fold(0.0, f64::max)
}
