//! Lyapunov spectra, Birkhoff averages, empirical measures, basin sampling
//! and the entropy-versus-expansion check on a suspension's quotient map.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcalc::{integrate_suspension, trajectory, OrbitSegment, StepControl};
use crate::hyperbolicity::functionals::BundleCocycle;
use crate::linalg::{generic_frame, qr_positive};
use crate::models::{FieldKind, IntervalMap, SuspensionModel, VectorFieldModel};
use crate::splitting::estimate_splitting;

pub const BOOTSTRAP_BLOCKS: usize = 50;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const BOOTSTRAP_SEED: u64 = 0x5eed_b007;

/// Half-width of the central 95% interval of the resampled mean of
/// `block_means`. Zero for fewer than two blocks.
pub fn bootstrap_half_width(block_means: &[f64]) -> f64 {
    let b = block_means.len();
    if b < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..b).map(|_| block_means[rng.gen_range(0..b)]).sum::<f64>() / b as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (means.len() - 1) as f64).round()) as usize];
    0.5 * (at(0.975) - at(0.025))
}

/// Splits `0..n` into at most `BOOTSTRAP_BLOCKS` contiguous blocks.
fn block_of(i: usize, n: usize) -> usize {
    let blocks = BOOTSTRAP_BLOCKS.min(n.max(1));
    (i * blocks / n.max(1)).min(blocks - 1)
}

/// Top Lyapunov exponents of an orbit's cocycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// Descending, per unit time.
    pub exponents: Vec<f64>,
    /// 95% block-bootstrap half-widths, in the order of `exponents`.
    pub half_widths: Vec<f64>,
    /// Averaging time after the discarded transient.
    pub window: f64,
    pub transient: f64,
    pub reorthonormalizations: usize,
    /// `(1/T) Σ log|det C_j|` over the averaging window.
    pub volume_rate: f64,
    /// Bootstrap half-width of the exponent sum.
    pub sum_half_width: f64,
}

impl SpectrumEstimate {
    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }
}

/// Fraction of the orbit discarded before averaging.
pub const SPECTRUM_TRANSIENT: f64 = 0.1;

pub fn benettin_spectrum(orbit: &OrbitSegment, k: usize) -> Result<SpectrumEstimate> {
    benettin_spectrum_with(orbit, k, SPECTRUM_TRANSIENT)
}

/// QR-reorthonormalized iteration of a generic `k`-frame along the orbit's
/// step cocycles; the first `transient` fraction of the steps only aligns
/// the frame.
pub fn benettin_spectrum_with(orbit: &OrbitSegment, k: usize, transient: f64) -> Result<SpectrumEstimate> {
    let n = orbit.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("cannot estimate {k} exponents in dimension {n}")));
    }
    if !(0.0..1.0).contains(&transient) {
        return Err(Error::InvalidParameter(format!("transient fraction {transient} outside [0, 1)")));
    }
    let steps = orbit.steps();
    let skip = (transient * steps as f64).floor() as usize;
    let used = steps - skip;
    if used == 0 {
        return Err(Error::InvalidInput("orbit has no steps to average".into()));
    }
    let blocks = BOOTSTRAP_BLOCKS.min(used);
    let mut block_logs = vec![vec![0.0; k]; blocks];
    let mut block_time = vec![0.0; blocks];
    let mut block_vol = vec![0.0; blocks];
    let mut q = generic_frame(n, k);
    for (j, c) in orbit.step_cocycles.iter().enumerate() {
        let (nq, r) = qr_positive(c * &q);
        q = nq;
        if j < skip {
            continue;
        }
        let b = block_of(j - skip, used);
        for i in 0..k {
            block_logs[b][i] += r[(i, i)].ln();
        }
        block_time[b] += orbit.times[j + 1] - orbit.times[j];
        block_vol[b] += c.determinant().abs().ln();
    }
    let window = orbit.times[steps] - orbit.times[skip];
    let raw: Vec<f64> = (0..k).map(|i| block_logs.iter().map(|b| b[i]).sum::<f64>() / window).collect();
    let widths: Vec<f64> = (0..k)
        .map(|i| {
            let means: Vec<f64> = (0..blocks).map(|b| block_logs[b][i] / block_time[b]).collect();
            bootstrap_half_width(&means)
        })
        .collect();
    let sums: Vec<f64> = (0..blocks).map(|b| block_logs[b].iter().sum::<f64>() / block_time[b]).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]));
    Ok(SpectrumEstimate {
        exponents: order.iter().map(|&i| raw[i]).collect(),
        half_widths: order.iter().map(|&i| widths[i]).collect(),
        window,
        transient: orbit.times[skip] - orbit.times[0],
        reorthonormalizations: steps,
        volume_rate: block_vol.iter().sum::<f64>() / window,
        sum_half_width: bootstrap_half_width(&sums),
    })
}

/// Trapezoidal time average of the divergence over grid points `from..`.
pub fn divergence_average(model: &VectorFieldModel, orbit: &OrbitSegment, from: usize) -> f64 {
    let mut total = 0.0;
    for j in from..orbit.steps() {
        let h = orbit.times[j + 1] - orbit.times[j];
        total += 0.5 * h * (model.divergence(&orbit.states[j]) + model.divergence(&orbit.states[j + 1]));
    }
    total / (orbit.times[orbit.steps()] - orbit.times[from])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub time: f64,
    pub average: f64,
}

/// Running means of one observable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BirkhoffSeries {
    pub observable: String,
    /// Geometrically spaced, always ending at the final sample.
    pub checkpoints: Vec<Checkpoint>,
    pub average: f64,
    pub samples: usize,
    /// `max − min` of the running mean over the final quarter.
    pub tail_oscillation: f64,
    pub half_width: f64,
}

struct Running {
    total: usize,
    dt: f64,
    count: usize,
    sum: f64,
    next_checkpoint: usize,
    checkpoints: Vec<Checkpoint>,
    tail: (f64, f64),
    blocks: Vec<(f64, usize)>,
}

impl Running {
    fn new(total: usize, dt: f64) -> Self {
        Running {
            total,
            dt,
            count: 0,
            sum: 0.0,
            next_checkpoint: 1,
            checkpoints: Vec::new(),
            tail: (f64::INFINITY, f64::NEG_INFINITY),
            blocks: vec![(0.0, 0); BOOTSTRAP_BLOCKS.min(total.max(1))],
        }
    }

    fn push(&mut self, v: f64) {
        let b = block_of(self.count, self.total);
        self.blocks[b].0 += v;
        self.blocks[b].1 += 1;
        self.count += 1;
        self.sum += v;
        let mean = self.sum / self.count as f64;
        if 4 * self.count >= 3 * self.total {
            self.tail = (self.tail.0.min(mean), self.tail.1.max(mean));
        }
        if self.count == self.next_checkpoint || self.count == self.total {
            self.checkpoints.push(Checkpoint {
                time: self.count as f64 * self.dt,
                average: mean,
            });
            self.next_checkpoint = ((self.next_checkpoint as f64 * 1.25).ceil() as usize).max(self.next_checkpoint + 1);
        }
    }

    fn finish(self, observable: String) -> BirkhoffSeries {
        let means: Vec<f64> = self.blocks.iter().filter(|b| b.1 > 0).map(|b| b.0 / b.1 as f64).collect();
        BirkhoffSeries {
            observable,
            checkpoints: self.checkpoints,
            average: self.sum / self.count.max(1) as f64,
            samples: self.count,
            tail_oscillation: if self.tail.1 >= self.tail.0 { self.tail.1 - self.tail.0 } else { 0.0 },
            half_width: bootstrap_half_width(&means),
        }
    }
}

/// State observable used for Birkhoff averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    Constant { value: f64 },
    Coordinate { index: usize },
    Square { index: usize },
    Abs { index: usize },
}

impl Observable {
    pub fn eval(&self, s: &DVector<f64>) -> f64 {
        match *self {
            Observable::Constant { value } => value,
            Observable::Coordinate { index } => s[index],
            Observable::Square { index } => s[index] * s[index],
            Observable::Abs { index } => s[index].abs(),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Observable::Constant { value } => format!("{value}"),
            Observable::Coordinate { index } => format!("x{index}"),
            Observable::Square { index } => format!("x{index}^2"),
            Observable::Abs { index } => format!("|x{index}|"),
        }
    }

    pub fn check(&self, dim: usize) -> Result<()> {
        match *self {
            Observable::Constant { .. } => Ok(()),
            Observable::Coordinate { index } | Observable::Square { index } | Observable::Abs { index } => {
                if index < dim {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("observable index {index} exceeds dimension {dim}")))
                }
            }
        }
    }
}

/// Observables separating the ergodic components of a shipped model. The
/// Lorenz panel is symmetric under `(x, y, z) ↦ (−x, −y, z)`, whose odd
/// averages vanish only slowly.
pub fn default_panel(model: &VectorFieldModel) -> Vec<Observable> {
    match model.kind() {
        FieldKind::Lorenz { .. } => vec![Observable::Coordinate { index: 2 }, Observable::Square { index: 0 }],
        _ => (0..model.dim()).map(|index| Observable::Coordinate { index }).collect(),
    }
}

/// Running means of `observable` over the orbit's grid samples (the final
/// grid point is excluded so that samples and steps pair up).
pub fn birkhoff_orbit(orbit: &OrbitSegment, observable: &Observable) -> Result<BirkhoffSeries> {
    observable.check(orbit.dim())?;
    let steps = orbit.steps();
    if steps == 0 {
        return Err(Error::InvalidInput("orbit has no steps".into()));
    }
    let mut run = Running::new(steps, orbit.times[1] - orbit.times[0]);
    for s in &orbit.states[..steps] {
        run.push(observable.eval(s));
    }
    Ok(run.finish(observable.label()))
}

/// Running means of `observable(x_k)` along `n` iterates of `map` from `x0`.
pub fn birkhoff_map<F>(map: &IntervalMap, x0: f64, n: usize, name: &str, mut observable: F) -> Result<BirkhoffSeries>
where
    F: FnMut(f64) -> Result<f64>,
{
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one iterate".into()));
    }
    let mut run = Running::new(n, 1.0);
    let mut x = x0;
    for k in 0..n {
        run.push(observable(x)?);
        if k + 1 < n {
            x = map.eval(x)?;
        }
    }
    Ok(run.finish(name.to_string()))
}

/// `log|f'(x)|` as a map observable.
pub fn log_derivative(map: &IntervalMap) -> impl FnMut(f64) -> Result<f64> + '_ {
    move |x| Ok(map.derivative(x)?.abs().ln())
}

/// `n` iterates of `map` starting with `x0` itself.
pub fn map_iterates(map: &IntervalMap, x0: f64, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut x = x0;
    for k in 0..n {
        out.push(x);
        if k + 1 < n {
            x = map.eval(x)?;
        }
    }
    Ok(out)
}

/// `f^depth(x)` for every seed. For Lebesgue-random seeds these are i.i.d.
/// with law `f^depth_* Leb`, so a KS test against the uniform law tests
/// invariance without the serial correlation of a single orbit.
pub fn pushforward_sample(map: &IntervalMap, seeds: &[f64], depth: usize) -> Result<Vec<f64>> {
    seeds
        .par_iter()
        .map(|&x0| (0..depth).try_fold(x0, |x, _| map.eval(x)))
        .collect()
}

/// Fixed-bin histogram on `[lo, hi]`; `hi` itself falls in the last bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    /// Samples outside `[lo, hi]`.
    pub outside: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("bad histogram range [{lo}, {hi}] with {bins} bins")));
        }
        Ok(Histogram {
            lo,
            hi,
            counts: vec![0; bins],
            outside: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn bin_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        Some((((x - self.lo) / self.width()) as usize).min(self.bins() - 1))
    }

    pub fn add(&mut self, x: f64) {
        match self.bin_of(x) {
            Some(b) => self.counts[b] += 1,
            None => self.outside += 1,
        }
    }

    pub fn extend(&mut self, xs: &[f64]) {
        xs.iter().for_each(|&x| self.add(x));
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin-wise sum; associative and order independent.
    pub fn merge(&mut self, other: &Histogram) -> Result<()> {
        if self.lo != other.lo || self.hi != other.hi || self.bins() != other.bins() {
            return Err(Error::InvalidInput("histograms have different bins".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.outside += other.outside;
        Ok(())
    }

    /// Probability mass per bin.
    pub fn masses(&self) -> Vec<f64> {
        let t = self.total().max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    pub fn densities(&self) -> Vec<f64> {
        let w = self.width();
        self.masses().into_iter().map(|m| m / w).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        let w = self.width();
        (0..self.bins()).map(|i| self.lo + (i as f64 + 0.5) * w).collect()
    }

    pub fn tv_distance(&self, other: &Histogram) -> Result<f64> {
        if self.bins() != other.bins() || self.lo != other.lo || self.hi != other.hi {
            return Err(Error::InvalidInput("histograms have different bins".into()));
        }
        Ok(tv_distance(&self.masses(), &other.masses()))
    }

    /// Total variation to the reference law with distribution function `cdf`.
    pub fn tv_to_cdf(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        let w = self.width();
        let reference: Vec<f64> = (0..self.bins())
            .map(|i| cdf(self.lo + (i + 1) as f64 * w) - cdf(self.lo + i as f64 * w))
            .collect();
        tv_distance(&self.masses(), &reference)
    }

    /// Bin masses of the image measure under `map`, treating each bin as
    /// uniformly filled (midpoint rule with `sub` points per bin).
    pub fn pushforward(&self, map: &IntervalMap, sub: usize) -> Result<Vec<f64>> {
        let sub = sub.max(1);
        let w = self.width();
        let mut out = vec![0.0; self.bins()];
        for (i, m) in self.masses().into_iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for j in 0..sub {
                let x = self.lo + (i as f64 + (j as f64 + 0.5) / sub as f64) * w;
                if let Some(b) = self.bin_of(map.eval(x)?) {
                    out[b] += m / sub as f64;
                }
            }
        }
        Ok(out)
    }
}

pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Exact Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Histogram statistics of a sample of section iterates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub histogram: Histogram,
    pub samples: usize,
    /// KS distance to the uniform law on the histogram range.
    pub ks_uniform: f64,
    /// TV distance between the histograms of the two halves of the sample.
    pub tv_halves: f64,
    pub tv_uniform: f64,
}

pub fn empirical_measure(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<EmpiricalMeasure> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let mut histogram = Histogram::new(lo, hi, bins)?;
    histogram.extend(samples);
    let half = samples.len() / 2;
    let mut first = Histogram::new(lo, hi, bins)?;
    first.extend(&samples[..half]);
    let mut second = Histogram::new(lo, hi, bins)?;
    second.extend(&samples[half..]);
    let uniform = |x: f64| ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    Ok(EmpiricalMeasure {
        ks_uniform: ks_statistic(samples, uniform),
        tv_halves: first.tv_distance(&second)?,
        tv_uniform: histogram.tv_to_cdf(uniform),
        samples: samples.len(),
        histogram,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasinOptions {
    pub transient: f64,
    pub window: f64,
    /// Match when `|A − ref| ≤ tol · max(1, |ref|)` for every observable.
    pub tol: f64,
    pub ctrl: StepControl,
}

impl Default for BasinOptions {
    fn default() -> Self {
        BasinOptions {
            transient: 50.0,
            window: 500.0,
            tol: 0.05,
            ctrl: StepControl::default().with_tol(1e-7, 1e-10).with_dt(0.05),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasinSample {
    pub panel: Vec<String>,
    pub reference: Vec<f64>,
    pub matched: usize,
    /// Grid points whose orbit failed to integrate (counted as unmatched).
    pub failed: usize,
    pub total: usize,
    pub fraction: f64,
}

/// Panel averages over `window` after discarding `transient`.
pub fn panel_averages(
    model: &VectorFieldModel,
    x0: &DVector<f64>,
    panel: &[Observable],
    transient: f64,
    window: f64,
    ctrl: &StepControl,
) -> Result<Vec<f64>> {
    for o in panel {
        o.check(model.dim())?;
    }
    let (_, states) = trajectory(model, x0, transient + window, ctrl)?;
    let skip = ((transient / ctrl.dt_out).round() as usize).min(states.len() - 1);
    let used = &states[skip..states.len() - 1];
    if used.is_empty() {
        return Err(Error::InvalidParameter("averaging window shorter than one grid step".into()));
    }
    Ok(panel
        .iter()
        .map(|o| used.iter().map(|s| o.eval(s)).sum::<f64>() / used.len() as f64)
        .collect())
}

/// Fraction of `grid` whose panel averages match `reference`.
pub fn basin_sample(
    model: &VectorFieldModel,
    reference: &[f64],
    panel: &[Observable],
    grid: &[DVector<f64>],
    opts: &BasinOptions,
) -> Result<BasinSample> {
    if reference.len() != panel.len() {
        return Err(Error::InvalidParameter("reference and panel lengths differ".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty initial-condition grid".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    for o in panel {
        o.check(model.dim())?;
    }
    let outcomes: Vec<Option<bool>> = grid
        .par_iter()
        .map(|x0| {
            panel_averages(model, x0, panel, opts.transient, opts.window, &opts.ctrl)
                .ok()
                .map(|avg| avg.iter().zip(reference).all(|(a, r)| (a - r).abs() <= opts.tol * r.abs().max(1.0)))
        })
        .collect();
    let matched = outcomes.iter().filter(|o| **o == Some(true)).count();
    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    Ok(BasinSample {
        panel: panel.iter().map(Observable::label).collect(),
        reference: reference.to_vec(),
        matched,
        failed,
        total: grid.len(),
        fraction: matched as f64 / grid.len() as f64,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PesinOptions {
    /// Base-map iterates (and returns of the flow orbit).
    pub n: usize,
    pub seed: u64,
    pub tol: f64,
    /// Grid step of the flow orbit.
    pub dt: f64,
}

impl Default for PesinOptions {
    fn default() -> Self {
        PesinOptions {
            n: 10_000,
            seed: 0,
            tol: 0.05,
            dt: 0.25,
        }
    }
}

/// Numerical sides of the entropy chain
/// `flow E^cu expansion ≥ h(flow) = h(R)/mean τ ≥ h_Leb(f)/mean τ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PesinReport {
    /// Entropy of the base map from the log-derivative average.
    pub base_entropy: f64,
    pub base_entropy_half_width: f64,
    /// Birkhoff average of the roof.
    pub roof_mean: f64,
    pub roof_mean_half_width: f64,
    pub quotient: f64,
    /// Time average of `log|det Dφ|` on the flow's center-unstable bundle.
    pub flow_side: f64,
    pub flow_window: f64,
    /// Error bound of the truncated roof integral.
    pub truncation_bound: f64,
    pub tol: f64,
    pub holds: bool,
    /// Every expansion quantity is zero within tolerance.
    pub degenerate: bool,
}

pub fn pesin_check_1d(map: &IntervalMap, suspension: &SuspensionModel, opts: &PesinOptions) -> Result<PesinReport> {
    if *map != suspension.section_map.base {
        return Err(Error::InvalidParameter("suspension is not built over the given map".into()));
    }
    if opts.n < 2 || !(opts.tol > 0.0) || !(opts.dt > 0.0) {
        return Err(Error::InvalidParameter("pesin check needs n ≥ 2, tol > 0 and dt > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let x0 = suspension.sample_section(&mut rng);
    let entropy = birkhoff_map(map, x0[0], opts.n, "log|f'|", log_derivative(map))?;
    let roof = birkhoff_map(map, x0[0], opts.n, "roof", |x| Ok(suspension.return_time(x)))?;
    let quotient = entropy.average / roof.average;

    let span = opts.n as f64 * roof.average;
    let orbit = integrate_suspension(suspension, &x0, span, &StepControl::default().with_dt(opts.dt))?;
    let warmup = (0.1 * span).min(50.0 * suspension.roof.floor().max(roof.average));
    let split = estimate_splitting(&orbit, 1, warmup)?;
    let bundle = BundleCocycle::new(&orbit.cocycle(), &split.ecu)?;
    let steps = bundle.factors.len();
    let flow_window = steps as f64 * bundle.dt;
    let flow_side = bundle.log_volume(bundle.start, steps) / flow_window;

    let degenerate = [entropy.average, quotient, flow_side].iter().all(|v| v.abs() <= opts.tol);
    Ok(PesinReport {
        base_entropy: entropy.average,
        base_entropy_half_width: entropy.half_width,
        roof_mean: roof.average,
        roof_mean_half_width: roof.half_width,
        quotient,
        flow_side,
        flow_window,
        truncation_bound: suspension.roof.truncation_error_bound(),
        tol: opts.tol,
        holds: flow_side >= quotient - opts.tol,
        degenerate,
    })
}

/// Lebesgue-random seeds on `[lo, hi)`.
pub fn uniform_seeds(lo: f64, hi: f64, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Cocycle of a constant matrix exponential, for spectrum sanity checks.
pub fn constant_orbit(step: DMatrix<f64>, dt: f64, steps: usize) -> OrbitSegment {
    let n = step.nrows();
    let state = DVector::zeros(n);
    OrbitSegment {
        model: "constant".into(),
        times: (0..=steps).map(|k| k as f64 * dt).collect(),
        states: vec![state.clone(); steps + 1],
        velocities: vec![state; steps + 1],
        step_cocycles: vec![step; steps],
        renorm_log: vec![0.0; steps + 1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcalc::integrate;
    use crate::models::{make_geometric_lorenz_suspension, make_intermittent_lorenz_map, make_linear_saddle, make_lorenz, make_power_lorenz_map, make_double_sink, SuspensionConfig, Roof, make_circle_rotation};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn linear_saddle_spectrum_is_exact() {
        let m = make_linear_saddle(&[2.0, -3.0, -0.5]).unwrap();
        let o = integrate(&m, &DVector::zeros(3), 40.0, &StepControl::default().with_dt(0.05)).unwrap();
        let s = benettin_spectrum(&o, 3).unwrap();
        for (got, want) in s.exponents.iter().zip([2.0, -0.5, -3.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-8);
        }
        assert_abs_diff_eq!(s.sum(), s.volume_rate, epsilon = 1e-9);
    }

    #[test]
    fn lorenz_origin_spectrum_is_real_parts() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        let o = integrate(&m, &DVector::zeros(3), 50.0, &StepControl::default().with_dt(0.01)).unwrap();
        let s = benettin_spectrum(&o, 3).unwrap();
        let root = 1201f64.sqrt();
        for (got, want) in s.exponents.iter().zip([(-11.0 + root) / 2.0, -8.0 / 3.0, (-11.0 - root) / 2.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-6);
        }
    }

    #[test]
    fn spectrum_rejects_too_many_exponents() {
        let o = constant_orbit(DMatrix::identity(2, 2), 0.1, 10);
        assert!(benettin_spectrum(&o, 3).is_err());
        assert!(benettin_spectrum(&o, 0).is_err());
    }

    #[test]
    fn bootstrap_of_constant_blocks_is_zero() {
        assert_eq!(bootstrap_half_width(&[1.5; 50]), 0.0);
        assert!(bootstrap_half_width(&(0..50).map(f64::from).collect::<Vec<_>>()) > 0.0);
    }

    #[test]
    fn constant_observable_average() {
        let o = constant_orbit(DMatrix::identity(2, 2), 0.1, 100);
        let b = birkhoff_orbit(&o, &Observable::Constant { value: 2.5 }).unwrap();
        assert!(b.checkpoints.iter().all(|c| c.average == 2.5));
        assert_eq!(b.tail_oscillation, 0.0);
        assert_eq!(b.samples, 100);
        assert_abs_diff_eq!(b.checkpoints.last().unwrap().time, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn neutral_seed_has_zero_log_derivative() {
        let f = make_intermittent_lorenz_map();
        let b = birkhoff_map(&f, 1.0, 10_000, "log|f'|", log_derivative(&f)).unwrap();
        assert!(b.checkpoints.iter().all(|c| c.average == 0.0));
    }

    #[test]
    fn doubling_entropy_is_log_two() {
        let f = make_power_lorenz_map(1.0).unwrap();
        let b = birkhoff_map(&f, 0.3, 40, "log|f'|", log_derivative(&f)).unwrap();
        assert_abs_diff_eq!(b.average, 2f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn fixed_point_histogram_is_a_point_mass() {
        let f = make_intermittent_lorenz_map();
        let xs = map_iterates(&f, 1.0, 1000).unwrap();
        let e = empirical_measure(&xs, -1.0, 1.0, 20).unwrap();
        assert_eq!(e.histogram.counts[19], 1000);
        assert_eq!(e.histogram.total(), 1000);
        assert_eq!(e.tv_halves, 0.0);
    }

    #[test]
    fn ks_of_a_regular_grid() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert_abs_diff_eq!(ks_statistic(&xs, |x| x), 0.0005, epsilon = 1e-12);
    }

    #[test]
    fn rotation_pushes_uniform_to_uniform() {
        let mut h = Histogram::new(-1.0, 1.0, 10).unwrap();
        h.extend(&(0..1000).map(|i| -1.0 + (i as f64 + 0.5) / 500.0).collect::<Vec<_>>());
        let pushed = h.pushforward(&make_circle_rotation(0.2), 100).unwrap();
        assert!(tv_distance(&pushed, &h.masses()) < 1e-12);
    }

    #[test]
    fn histogram_rejects_bad_ranges() {
        assert!(Histogram::new(1.0, 1.0, 3).is_err());
        assert!(Histogram::new(0.0, 1.0, 0).is_err());
        let a = Histogram::new(0.0, 1.0, 3).unwrap();
        let mut b = Histogram::new(0.0, 2.0, 3).unwrap();
        assert!(b.merge(&a).is_err());
    }

    proptest! {
        #[test]
        fn histogram_merge_is_order_independent(xs in prop::collection::vec(-1.2f64..1.2, 0..200), cut in 0usize..200) {
            let cut = cut.min(xs.len());
            let mut whole = Histogram::new(-1.0, 1.0, 7).unwrap();
            whole.extend(&xs);
            let mut a = Histogram::new(-1.0, 1.0, 7).unwrap();
            a.extend(&xs[..cut]);
            let mut b = Histogram::new(-1.0, 1.0, 7).unwrap();
            b.extend(&xs[cut..]);
            let mut ab = a.clone();
            ab.merge(&b).unwrap();
            b.merge(&a).unwrap();
            prop_assert_eq!(&ab, &whole);
            prop_assert_eq!(&b, &whole);
        }

        #[test]
        fn running_mean_is_exact(xs in prop::collection::vec(-5.0f64..5.0, 1..300)) {
            let f = make_circle_rotation(0.0);
            let mut it = xs.iter();
            let b = birkhoff_map(&f, 0.0, xs.len(), "sample", |_| Ok(*it.next().unwrap())).unwrap();
            for c in &b.checkpoints {
                let k = c.time as usize;
                let want = xs[..k].iter().sum::<f64>() / k as f64;
                prop_assert!((c.average - want).abs() <= 1e-12);
            }
            prop_assert_eq!(b.checkpoints.last().unwrap().time as usize, xs.len());
        }
    }

    #[test]
    fn linear_sink_basin_is_everything() {
        let m = make_linear_saddle(&[-1.0, -2.0, -3.0]).unwrap();
        let panel = default_panel(&m);
        let opts = BasinOptions {
            transient: 20.0,
            window: 20.0,
            ..BasinOptions::default()
        };
        let grid = m.trapping_region().unwrap().grid(3);
        let s = basin_sample(&m, &[0.0; 3], &panel, &grid, &opts).unwrap();
        assert_eq!(s.fraction, 1.0);
    }

    #[test]
    fn double_sink_basin_is_a_half() {
        let m = make_double_sink();
        let panel = default_panel(&m);
        let opts = BasinOptions {
            transient: 20.0,
            window: 20.0,
            ..BasinOptions::default()
        };
        let grid = m.trapping_region().unwrap().grid(4);
        let s = basin_sample(&m, &[1.0, 0.0, 0.0], &panel, &grid, &opts).unwrap();
        assert!(s.fraction > 0.0 && s.fraction < 1.0);
        assert_abs_diff_eq!(s.fraction, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn isometry_suspension_is_degenerate() {
        let base = make_circle_rotation(0.3);
        let cfg = SuspensionConfig {
            roof: Roof::Constant { height: 1.0 },
            ..SuspensionConfig::default()
        };
        let s = make_geometric_lorenz_suspension(base.clone(), &cfg).unwrap();
        let r = pesin_check_1d(&base, &s, &PesinOptions { n: 2000, ..PesinOptions::default() }).unwrap();
        assert_abs_diff_eq!(r.base_entropy, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.flow_side, 0.0, epsilon = 1e-9);
        assert!(r.degenerate && r.holds);
    }

    #[test]
    fn pesin_needs_matching_map() {
        let s = make_geometric_lorenz_suspension(make_intermittent_lorenz_map(), &SuspensionConfig::default()).unwrap();
        assert!(pesin_check_1d(&make_circle_rotation(0.1), &s, &PesinOptions::default()).is_err());
    }
}
