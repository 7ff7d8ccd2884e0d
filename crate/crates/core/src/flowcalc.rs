//! Orbit integration with co-integrated tangent cocycle, exterior squares
//! and cocycle restriction to transported subspaces.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, wedge_pairs, FrameTrack};
use crate::models::{Model, SuspensionModel, VectorFieldModel};

/// Integrator tolerances and output grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// Blowup threshold on the state norm.
    pub bound: f64,
    /// Output grid spacing; each step cocycle spans one grid interval.
    pub dt_out: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-9,
            atol: 1e-12,
            bound: 1e6,
            dt_out: 0.01,
            h_init: 1e-3,
            h_min: 1e-14,
            max_steps: 500_000_000,
        }
    }
}

impl StepControl {
    pub fn with_dt(mut self, dt_out: f64) -> Self {
        self.dt_out = dt_out;
        self
    }

    pub fn with_tol(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }
}

/// Time-gridded orbit with per-step tangent cocycle factors.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitSegment {
    pub model: String,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub velocities: Vec<DVector<f64>>,
    /// `step_cocycles[k] ≈ DX_{t_{k+1} − t_k}(states[k])`.
    pub step_cocycles: Vec<DMatrix<f64>>,
    /// Accumulated log rescaling of the running cocycle product, per grid point.
    pub renorm_log: Vec<f64>,
}

/// Borrowed view of a cocycle over a time grid.
#[derive(Debug, Clone, Copy)]
pub struct Cocycle<'a> {
    pub times: &'a [f64],
    pub factors: &'a [DMatrix<f64>],
}

impl<'a> Cocycle<'a> {
    pub fn steps(&self) -> usize {
        self.factors.len()
    }

    pub fn dim(&self) -> usize {
        self.factors.first().map(|m| m.nrows()).unwrap_or(0)
    }

    /// Number of grid steps closest to a time span, assuming a uniform grid.
    pub fn steps_for(&self, span: f64) -> usize {
        if self.times.len() < 2 {
            return 0;
        }
        let dt = self.times[1] - self.times[0];
        (span / dt).round().max(0.0) as usize
    }

    /// Plain product `A_{b-1} ⋯ A_a`.
    pub fn compose(&self, a: usize, b: usize) -> DMatrix<f64> {
        let n = self.dim();
        let mut acc = DMatrix::identity(n, n);
        for f in &self.factors[a..b] {
            acc = f * acc;
        }
        acc
    }

    /// Product over `[a, b)` with column-norm renormalization; returns the
    /// rescaled product and the log factor removed from it.
    pub fn compose_scaled(&self, a: usize, b: usize) -> (DMatrix<f64>, f64) {
        let n = self.dim();
        let mut acc = DMatrix::identity(n, n);
        let mut log = 0.0;
        for f in &self.factors[a..b] {
            acc = f * acc;
            log += renormalize(&mut acc);
        }
        (acc, log)
    }
}

/// Rescale the matrix by its largest column norm when any column norm leaves
/// `[1e-6, 1e6]`; returns the log of the removed factor.
fn renormalize(m: &mut DMatrix<f64>) -> f64 {
    let norms: Vec<f64> = m.column_iter().map(|c| c.norm()).collect();
    let out = norms.iter().any(|&c| !(1e-6..=1e6).contains(&c));
    if !out {
        return 0.0;
    }
    let s = norms.iter().cloned().fold(0.0, f64::max);
    if s > 0.0 && s.is_finite() {
        *m /= s;
        s.ln()
    } else {
        0.0
    }
}

fn accumulate_renorm(factors: &[DMatrix<f64>], n: usize) -> Vec<f64> {
    let mut acc = DMatrix::<f64>::identity(n, n);
    let mut out = Vec::with_capacity(factors.len() + 1);
    let mut log = 0.0;
    out.push(0.0);
    for f in factors {
        acc = f * acc;
        log += renormalize(&mut acc);
        out.push(log);
    }
    out
}

impl OrbitSegment {
    pub fn steps(&self) -> usize {
        self.step_cocycles.len()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map(|s| s.len()).unwrap_or(0)
    }

    pub fn duration(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0) - self.times.first().copied().unwrap_or(0.0)
    }

    pub fn cocycle(&self) -> Cocycle<'_> {
        Cocycle {
            times: &self.times,
            factors: &self.step_cocycles,
        }
    }
}

/// Anything that can produce orbit segments with tangent cocycles.
pub trait Flow: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn velocity(&self, state: &DVector<f64>) -> DVector<f64>;
    fn singularities(&self) -> Vec<DVector<f64>>;
    fn orbit(&self, x0: &DVector<f64>, t_span: f64, ctrl: &StepControl) -> Result<OrbitSegment>;
    /// State after time `t`, without the cocycle.
    fn advance(&self, x0: &DVector<f64>, t: f64, ctrl: &StepControl) -> Result<DVector<f64>>;
    fn sample_initial(&self, rng: &mut dyn RngCore) -> Result<DVector<f64>>;
    /// Pointwise divergence when the flow is generated by a smooth field.
    fn divergence(&self, _state: &DVector<f64>) -> Option<f64> {
        None
    }
}

impl Flow for VectorFieldModel {
    fn name(&self) -> &str {
        VectorFieldModel::name(self)
    }

    fn dim(&self) -> usize {
        VectorFieldModel::dim(self)
    }

    fn velocity(&self, state: &DVector<f64>) -> DVector<f64> {
        self.eval(state)
    }

    fn singularities(&self) -> Vec<DVector<f64>> {
        VectorFieldModel::singularities(self).to_vec()
    }

    fn orbit(&self, x0: &DVector<f64>, t_span: f64, ctrl: &StepControl) -> Result<OrbitSegment> {
        integrate(self, x0, t_span, ctrl)
    }

    fn advance(&self, x0: &DVector<f64>, t: f64, ctrl: &StepControl) -> Result<DVector<f64>> {
        advance_state(self, x0, t, ctrl)
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        self.trapping_region()
            .map(|b| b.sample(rng))
            .ok_or_else(|| Error::InvalidInput(format!("model `{}` has no trapping region", self.name())))
    }

    fn divergence(&self, state: &DVector<f64>) -> Option<f64> {
        Some(VectorFieldModel::divergence(self, state))
    }
}

impl Flow for SuspensionModel {
    fn name(&self) -> &str {
        SuspensionModel::name(self)
    }

    fn dim(&self) -> usize {
        3
    }

    fn velocity(&self, _state: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![0.0, 0.0, 1.0])
    }

    fn singularities(&self) -> Vec<DVector<f64>> {
        Vec::new()
    }

    fn orbit(&self, x0: &DVector<f64>, t_span: f64, ctrl: &StepControl) -> Result<OrbitSegment> {
        integrate_suspension(self, x0, t_span, ctrl)
    }

    fn advance(&self, x0: &DVector<f64>, t: f64, _ctrl: &StepControl) -> Result<DVector<f64>> {
        let (mut x, mut y, mut s) = unpack_suspension(x0)?;
        s += t;
        loop {
            let tau = self.return_time(x);
            if s < tau {
                break;
            }
            s -= tau;
            let (nx, ny) = self.section_map.eval(x, y)?;
            x = nx;
            y = ny;
        }
        Ok(DVector::from_vec(vec![x, y, s]))
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        Ok(self.sample_section(rng))
    }
}

impl Flow for Model {
    fn name(&self) -> &str {
        match self {
            Model::Field(m) => Flow::name(m),
            Model::Suspension(m) => Flow::name(m),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Model::Field(m) => Flow::dim(m),
            Model::Suspension(m) => Flow::dim(m),
        }
    }

    fn velocity(&self, state: &DVector<f64>) -> DVector<f64> {
        match self {
            Model::Field(m) => m.velocity(state),
            Model::Suspension(m) => m.velocity(state),
        }
    }

    fn singularities(&self) -> Vec<DVector<f64>> {
        match self {
            Model::Field(m) => Flow::singularities(m),
            Model::Suspension(m) => Flow::singularities(m),
        }
    }

    fn orbit(&self, x0: &DVector<f64>, t_span: f64, ctrl: &StepControl) -> Result<OrbitSegment> {
        match self {
            Model::Field(m) => m.orbit(x0, t_span, ctrl),
            Model::Suspension(m) => m.orbit(x0, t_span, ctrl),
        }
    }

    fn advance(&self, x0: &DVector<f64>, t: f64, ctrl: &StepControl) -> Result<DVector<f64>> {
        match self {
            Model::Field(m) => m.advance(x0, t, ctrl),
            Model::Suspension(m) => m.advance(x0, t, ctrl),
        }
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        match self {
            Model::Field(m) => m.sample_initial(rng),
            Model::Suspension(m) => m.sample_initial(rng),
        }
    }

    fn divergence(&self, state: &DVector<f64>) -> Option<f64> {
        match self {
            Model::Field(m) => Flow::divergence(m, state),
            Model::Suspension(m) => Flow::divergence(m, state),
        }
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince stepper over a flat state vector.
struct Stepper<'a> {
    rhs: &'a dyn Fn(&[f64], &mut [f64]),
    n: usize,
    /// Leading components checked against the blowup bound.
    state_dim: usize,
    ctrl: StepControl,
    h: f64,
    steps: usize,
    k: Vec<Vec<f64>>,
    tmp: Vec<f64>,
    ynew: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(rhs: &'a dyn Fn(&[f64], &mut [f64]), n: usize, state_dim: usize, ctrl: &StepControl) -> Self {
        Stepper {
            rhs,
            n,
            state_dim,
            ctrl: *ctrl,
            h: ctrl.h_init,
            steps: 0,
            k: vec![vec![0.0; n]; 7],
            tmp: vec![0.0; n],
            ynew: vec![0.0; n],
        }
    }

    /// Integrate `y` from `t0` to exactly `t1`.
    fn advance(&mut self, y: &mut [f64], t0: f64, t1: f64) -> Result<()> {
        let mut t = t0;
        while t < t1 {
            let remaining = t1 - t;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            let err = self.attempt(y, h);
            if err <= 1.0 {
                y.copy_from_slice(&self.ynew);
                t = if last { t1 } else { t + h };
                let norm = y[..self.state_dim].iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(norm <= self.ctrl.bound) {
                    return Err(Error::Blowup { t, norm });
                }
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // a clipped final step should not shrink the proposal
                if !last || h >= self.h {
                    self.h = h * fac;
                } else {
                    self.h = self.h.max(h * fac);
                }
            } else {
                let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                self.h = h * fac;
            }
            self.steps += 1;
            if self.h < self.ctrl.h_min * t.abs().max(1.0) || !self.h.is_finite() {
                return Err(Error::StiffnessFailure { t, h: self.h });
            }
            if self.steps > self.ctrl.max_steps {
                return Err(Error::StiffnessFailure { t, h: self.h });
            }
        }
        Ok(())
    }

    /// One trial step; fills `ynew` and returns the scaled error norm.
    fn attempt(&mut self, y: &[f64], h: f64) -> f64 {
        let n = self.n;
        (self.rhs)(y, &mut self.k[0]);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * self.k[j][i];
                }
                self.tmp[i] = y[i] + h * acc;
            }
            let (head, tail) = self.k.split_at_mut(s);
            let _ = head;
            (self.rhs)(&self.tmp, &mut tail[0]);
        }
        let _ = C;
        let mut err2 = 0.0;
        for i in 0..n {
            let mut acc = 0.0;
            let mut e = 0.0;
            for s in 0..7 {
                acc += B[s] * self.k[s][i];
                e += E[s] * self.k[s][i];
            }
            self.ynew[i] = y[i] + h * acc;
            let sc = self.ctrl.atol + self.ctrl.rtol * y[i].abs().max(self.ynew[i].abs());
            let r = h * e / sc;
            err2 += r * r;
        }
        let err = (err2 / n as f64).sqrt();
        if err.is_finite() {
            err
        } else {
            f64::INFINITY
        }
    }
}

fn output_grid(t_span: f64, dt: f64) -> Vec<f64> {
    let n = (t_span / dt).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
    let last = *grid.last().unwrap();
    if t_span - last > 1e-9 * dt {
        grid.push(t_span);
    } else if let Some(l) = grid.last_mut() {
        *l = t_span;
    }
    grid
}

fn check_start(x0: &DVector<f64>, dim: usize, t_span: f64) -> Result<()> {
    if x0.len() != dim {
        return Err(Error::InvalidInput(format!("initial state has dimension {}, expected {dim}", x0.len())));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("initial state is not finite".into()));
    }
    if !(t_span >= 0.0 && t_span.is_finite()) {
        return Err(Error::InvalidInput(format!("time span {t_span} must be nonnegative")));
    }
    Ok(())
}

/// Integrate `model` from `x0` over `t_span`, co-integrating the variational
/// equation `Ṁ = DX(x(t)) M` (reset to the identity at every grid point).
pub fn integrate(
    model: &VectorFieldModel,
    x0: &DVector<f64>,
    t_span: f64,
    ctrl: &StepControl,
) -> Result<OrbitSegment> {
    let n = model.dim();
    check_start(x0, n, t_span)?;
    let rhs = |y: &[f64], dy: &mut [f64]| {
        let x = DVector::from_column_slice(&y[..n]);
        let f = model.eval(&x);
        dy[..n].copy_from_slice(f.as_slice());
        let j = model.jacobian(&x);
        let m = DMatrix::from_column_slice(n, n, &y[n..]);
        let jm = j * m;
        dy[n..].copy_from_slice(jm.as_slice());
    };
    let mut stepper = Stepper::new(&rhs, n + n * n, n, ctrl);
    let grid = if t_span > 0.0 { output_grid(t_span, ctrl.dt_out) } else { vec![0.0] };
    let mut y = vec![0.0; n + n * n];
    let mut states = Vec::with_capacity(grid.len());
    let mut step_cocycles = Vec::with_capacity(grid.len());
    states.push(x0.clone());
    for w in grid.windows(2) {
        let last = states.last().unwrap();
        y[..n].copy_from_slice(last.as_slice());
        y[n..].fill(0.0);
        for i in 0..n {
            y[n + i * n + i] = 1.0;
        }
        stepper.advance(&mut y, w[0], w[1])?;
        states.push(DVector::from_column_slice(&y[..n]));
        step_cocycles.push(DMatrix::from_column_slice(n, n, &y[n..]));
    }
    let velocities = states.iter().map(|s| model.eval(s)).collect();
    let renorm_log = accumulate_renorm(&step_cocycles, n);
    Ok(OrbitSegment {
        model: model.name().to_string(),
        times: grid,
        states,
        velocities,
        step_cocycles,
        renorm_log,
    })
}

/// State-only integration over `t`.
pub fn advance_state(
    model: &VectorFieldModel,
    x0: &DVector<f64>,
    t: f64,
    ctrl: &StepControl,
) -> Result<DVector<f64>> {
    let n = model.dim();
    check_start(x0, n, t)?;
    let rhs = |y: &[f64], dy: &mut [f64]| {
        let f = model.eval(&DVector::from_column_slice(y));
        dy.copy_from_slice(f.as_slice());
    };
    let mut stepper = Stepper::new(&rhs, n, n, ctrl);
    let mut y = x0.as_slice().to_vec();
    stepper.advance(&mut y, 0.0, t)?;
    Ok(DVector::from_vec(y))
}

/// Sampled state-only trajectory on the output grid.
pub fn trajectory(
    model: &VectorFieldModel,
    x0: &DVector<f64>,
    t_span: f64,
    ctrl: &StepControl,
) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    let n = model.dim();
    check_start(x0, n, t_span)?;
    let rhs = |y: &[f64], dy: &mut [f64]| {
        let f = model.eval(&DVector::from_column_slice(y));
        dy.copy_from_slice(f.as_slice());
    };
    let mut stepper = Stepper::new(&rhs, n, n, ctrl);
    let grid = if t_span > 0.0 { output_grid(t_span, ctrl.dt_out) } else { vec![0.0] };
    let mut y = x0.as_slice().to_vec();
    let mut states = vec![x0.clone()];
    for w in grid.windows(2) {
        stepper.advance(&mut y, w[0], w[1])?;
        states.push(DVector::from_column_slice(&y));
    }
    Ok((grid, states))
}

fn unpack_suspension(x0: &DVector<f64>) -> Result<(f64, f64, f64)> {
    if x0.len() != 3 {
        return Err(Error::InvalidInput("suspension states are (x, y, s)".into()));
    }
    Ok((x0[0], x0[1], x0[2]))
}

/// Suspension semiflow orbit: move along the fiber and apply the section map
/// at every roof crossing. The crossing time solves the (linear) roof
/// residual `s + θ − τ(x) = 0` exactly.
pub fn integrate_suspension(
    model: &SuspensionModel,
    x0: &DVector<f64>,
    t_span: f64,
    ctrl: &StepControl,
) -> Result<OrbitSegment> {
    check_start(x0, 3, t_span)?;
    let (mut x, mut y, mut s) = unpack_suspension(x0)?;
    let tau0 = model.return_time(x);
    if !(s >= 0.0 && s < tau0) {
        return Err(Error::InvalidInput(format!("fiber coordinate {s} outside [0, τ(x) = {tau0})")));
    }
    let grid = if t_span > 0.0 { output_grid(t_span, ctrl.dt_out) } else { vec![0.0] };
    let mut states = Vec::with_capacity(grid.len());
    let mut step_cocycles = Vec::with_capacity(grid.len());
    states.push(x0.clone());
    for w in grid.windows(2) {
        let mut remaining = w[1] - w[0];
        let mut d = DMatrix::<f64>::identity(3, 3);
        loop {
            let tau = model.return_time(x);
            let to_cross = tau - s;
            if remaining < to_cross {
                s += remaining;
                break;
            }
            remaining -= to_cross;
            let (nx, ny, _, jac) = model.section_step(x, y)?;
            d = jac * d;
            x = nx;
            y = ny;
            s = 0.0;
        }
        states.push(DVector::from_vec(vec![x, y, s]));
        step_cocycles.push(d);
    }
    let velocities = states.iter().map(|_| DVector::from_vec(vec![0.0, 0.0, 1.0])).collect();
    let renorm_log = accumulate_renorm(&step_cocycles, 3);
    Ok(OrbitSegment {
        model: model.name().to_string(),
        times: grid,
        states,
        velocities,
        step_cocycles,
        renorm_log,
    })
}

/// Second exterior power: entry `((i<j), (k<l))` is the 2×2 minor
/// `M[i,k]M[j,l] − M[i,l]M[j,k]`.
pub fn wedge2_of(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert!(n >= 2 && m.is_square(), "wedge2_of needs a square matrix of size >= 2");
    let pairs = wedge_pairs(n);
    let p = pairs.len();
    DMatrix::from_fn(p, p, |r, c| {
        let (i, j) = pairs[r];
        let (k, l) = pairs[c];
        m[(i, k)] * m[(j, l)] - m[(i, l)] * m[(j, k)]
    })
}

/// Per-step exterior squares of an orbit's tangent cocycle.
#[derive(Debug, Clone)]
pub struct WedgeCocycle {
    pub wedge_factors: Vec<DMatrix<f64>>,
    pub renorm_log: Vec<f64>,
}

pub fn wedge_cocycle(orbit: &OrbitSegment) -> WedgeCocycle {
    let wedge_factors: Vec<DMatrix<f64>> = orbit.step_cocycles.iter().map(wedge2_of).collect();
    let p = wedge_factors.first().map(|m| m.nrows()).unwrap_or(0);
    let renorm_log = if p == 0 {
        vec![0.0]
    } else {
        accumulate_renorm(&wedge_factors, p)
    };
    WedgeCocycle {
        wedge_factors,
        renorm_log,
    }
}

/// How the restricted subspace is carried from one grid point to the next.
#[derive(Debug, Clone)]
pub enum Transport {
    /// Push the basis forward and re-orthonormalize (invariant by construction).
    Pushed,
    /// Use externally supplied orthonormal bases at every grid point.
    Frames(Vec<DMatrix<f64>>),
}

/// Cocycle restricted to a transported subspace.
#[derive(Debug, Clone)]
pub struct RestrictedCocycle {
    pub factors: Vec<DMatrix<f64>>,
    pub bases: Vec<DMatrix<f64>>,
    /// Relative norm of the image component leaking out of the next basis.
    pub defects: Vec<f64>,
    pub max_defect: f64,
}

pub fn restrict_cocycle(
    factors: &[DMatrix<f64>],
    basis: &DMatrix<f64>,
    transport: &Transport,
) -> Result<RestrictedCocycle> {
    let d = basis.ncols();
    let gram = basis.transpose() * basis;
    if (gram - DMatrix::<f64>::identity(d, d)).amax() > 1e-10 {
        return Err(Error::InvalidInput("subspace basis columns are not orthonormal".into()));
    }
    let mut out = RestrictedCocycle {
        factors: Vec::with_capacity(factors.len()),
        bases: vec![basis.clone()],
        defects: Vec::with_capacity(factors.len()),
        max_defect: 0.0,
    };
    match transport {
        Transport::Pushed => {
            let mut track = FrameTrack::new(basis);
            for a in factors {
                let r = track.push(a)?;
                out.factors.push(r);
                out.bases.push(track.basis.clone());
                out.defects.push(0.0);
            }
        }
        Transport::Frames(frames) => {
            if frames.len() != factors.len() + 1 {
                return Err(Error::InvalidInput("need one frame per grid point".into()));
            }
            for (k, a) in factors.iter().enumerate() {
                let image = a * &frames[k];
                let next = &frames[k + 1];
                let c = next.transpose() * &image;
                let leak = &image - next * &c;
                let scale = linalg::op_norm(&image);
                let defect = if scale > 0.0 { linalg::op_norm(&leak) / scale } else { 0.0 };
                // strong but finite expansion is legitimate here; only a
                // collapsed image is rejected
                if !c.determinant().is_normal() {
                    return Err(Error::DegenerateBasis { cond: f64::INFINITY });
                }
                out.factors.push(c);
                out.bases.push(next.clone());
                out.defects.push(defect);
                out.max_defect = out.max_defect.max(defect);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{make_lorenz, make_linear_saddle};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn linear_saddle_closed_form_flow() {
        let m = make_linear_saddle(&[1.0, -2.0]).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0]);
        let orbit = integrate(&m, &x0, 1.0, &StepControl::default().with_dt(0.1)).unwrap();
        let end = orbit.states.last().unwrap();
        assert_relative_eq!(end[0], 1f64.exp(), max_relative = 1e-8);
        assert_relative_eq!(end[1], (-2f64).exp(), max_relative = 1e-8);
        let total = orbit.cocycle().compose(0, orbit.steps());
        let exact = diag(&[1f64.exp(), (-2f64).exp()]);
        assert!((&total - &exact).norm() / exact.norm() < 1e-8);
    }

    #[test]
    fn equilibrium_orbit_is_constant() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        let sigma = m.singularities()[1].clone();
        let orbit = integrate(&m, &sigma, 1.0, &StepControl::default().with_dt(0.5)).unwrap();
        for s in &orbit.states {
            assert!((s - &sigma).norm() < 1e-12);
        }
        let expected = (m.jacobian(&sigma) * 0.5).exp();
        let got = &orbit.step_cocycles[0];
        assert!((got - &expected).norm() / expected.norm() < 1e-8);
    }

    #[test]
    fn lorenz_orbit_stays_in_box() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        let ctrl = StepControl::default().with_tol(1e-12, 1e-14);
        let (_, states) = trajectory(&m, &DVector::from_vec(vec![1.0, 1.0, 1.0]), 50.0, &ctrl).unwrap();
        for s in &states {
            assert!(s[0].abs() <= 30.0 && s[1].abs() <= 30.0 && s[2] >= 0.0 && s[2] <= 60.0);
        }
    }

    #[test]
    fn blowup_and_bad_input() {
        let m = make_linear_saddle(&[5.0]).unwrap();
        let err = integrate(&m, &DVector::from_vec(vec![1.0]), 10.0, &StepControl::default()).unwrap_err();
        assert!(matches!(err, Error::Blowup { .. }));
        assert!(integrate(&m, &DVector::from_vec(vec![f64::NAN]), 1.0, &StepControl::default()).is_err());
        assert!(integrate(&m, &DVector::from_vec(vec![1.0]), -1.0, &StepControl::default()).is_err());
    }

    #[test]
    fn cocycle_composition_on_lorenz() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0, 20.0]);
        let ctrl = StepControl::default();
        let orbit = integrate(&m, &x0, 2.0, &ctrl).unwrap();
        let direct = integrate(&m, &x0, 2.0, &StepControl { dt_out: 2.0, ..ctrl }).unwrap();
        let composed = orbit.cocycle().compose(0, orbit.steps());
        let d = &direct.step_cocycles[0];
        assert!((&composed - d).norm() / d.norm() < 1e-6);
    }

    #[test]
    fn liouville_identity_on_lorenz() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        let orbit = integrate(&m, &DVector::from_vec(vec![1.0, 1.0, 1.0]), 5.0, &StepControl::default()).unwrap();
        let log_det: f64 = orbit.step_cocycles.iter().map(|a| a.determinant().abs().ln()).sum();
        assert_relative_eq!(log_det, -41.0 / 3.0 * 5.0, max_relative = 1e-6);
    }

    #[test]
    fn integration_is_deterministic() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        let x0 = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let a = integrate(&m, &x0, 3.0, &StepControl::default()).unwrap();
        let b = integrate(&m, &x0, 3.0, &StepControl::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wedge_of_diagonal_and_identity() {
        assert_eq!(wedge2_of(&diag(&[2.0, 3.0, 5.0])), diag(&[6.0, 10.0, 15.0]));
        assert_eq!(wedge2_of(&DMatrix::identity(4, 4)), DMatrix::identity(6, 6));
    }

    #[test]
    fn wedge_determinant_is_square_of_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let m = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-2.0..2.0));
            let d = m.determinant();
            // brute force: det of the 3x3 wedge matrix by cofactor expansion
            let w = wedge2_of(&m);
            let dw = w[(0, 0)] * (w[(1, 1)] * w[(2, 2)] - w[(1, 2)] * w[(2, 1)])
                - w[(0, 1)] * (w[(1, 0)] * w[(2, 2)] - w[(1, 2)] * w[(2, 0)])
                + w[(0, 2)] * (w[(1, 0)] * w[(2, 1)] - w[(1, 1)] * w[(2, 0)]);
            assert_relative_eq!(dw, d * d, max_relative = 1e-10);
        }
    }

    #[test]
    fn wedge_cocycle_of_linear_saddle() {
        let m = make_linear_saddle(&[2.0, -3.0, -0.5]).unwrap();
        let orbit = integrate(&m, &DVector::zeros(3), 1.0, &StepControl::default().with_dt(1.0)).unwrap();
        let w = wedge_cocycle(&orbit);
        let expected = diag(&[(-1f64).exp(), 1.5f64.exp(), (-3.5f64).exp()]);
        assert!((&w.wedge_factors[0] - &expected).norm() / expected.norm() < 1e-8);
        let empty = integrate(&m, &DVector::zeros(3), 0.0, &StepControl::default()).unwrap();
        assert!(wedge_cocycle(&empty).wedge_factors.is_empty());
    }

    #[test]
    fn restrict_to_invariant_axis() {
        let m = make_linear_saddle(&[2.0, -3.0, -0.5]).unwrap();
        let orbit = integrate(&m, &DVector::zeros(3), 1.0, &StepControl::default().with_dt(0.25)).unwrap();
        let e2 = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0]);
        let r = restrict_cocycle(&orbit.step_cocycles, &e2, &Transport::Pushed).unwrap();
        for f in &r.factors {
            assert_relative_eq!(f[(0, 0)], (-0.75f64).exp(), max_relative = 1e-9);
        }
        let frames = vec![e2.clone(); orbit.steps() + 1];
        let r2 = restrict_cocycle(&orbit.step_cocycles, &e2, &Transport::Frames(frames)).unwrap();
        assert!(r2.max_defect < 1e-12);
    }

    #[test]
    fn restrict_to_full_space_preserves_singular_values() {
        let m = make_lorenz(10.0, 28.0, 8.0 / 3.0).unwrap();
        let orbit = integrate(&m, &DVector::from_vec(vec![1.0, 2.0, 20.0]), 0.5, &StepControl::default()).unwrap();
        let r = restrict_cocycle(&orbit.step_cocycles, &DMatrix::identity(3, 3), &Transport::Pushed).unwrap();
        let mut acc = DMatrix::identity(3, 3);
        for f in &r.factors {
            acc = f * acc;
        }
        let a = linalg::singular_values(&acc);
        let b = linalg::singular_values(&orbit.cocycle().compose(0, orbit.steps()));
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-10);
        }
    }

    #[test]
    fn restrict_rejects_non_orthonormal_basis() {
        let f = vec![DMatrix::identity(2, 2)];
        let b = DMatrix::from_column_slice(2, 1, &[2.0, 0.0]);
        assert!(restrict_cocycle(&f, &b, &Transport::Pushed).is_err());
    }

    #[test]
    fn suspension_orbit_matches_section_map() {
        use crate::models::*;
        let s = make_geometric_lorenz_suspension(make_intermittent_lorenz_map(), &SuspensionConfig::default()).unwrap();
        let x0 = DVector::from_vec(vec![0.6, 0.1, 0.0]);
        let tau = s.return_time(0.6);
        let orbit = integrate_suspension(&s, &x0, tau + 0.05, &StepControl::default().with_dt(0.05)).unwrap();
        let end = orbit.states.last().unwrap();
        let (fx, gy) = s.section_map.eval(0.6, 0.1).unwrap();
        assert_relative_eq!(end[0], fx, epsilon = 1e-15);
        assert_relative_eq!(end[1], gy, epsilon = 1e-15);
        assert!((end[2] - 0.05).abs() < 1e-9);
        // flow direction is invariant under every step cocycle
        let e3 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        for a in &orbit.step_cocycles {
            assert!((a * &e3 - &e3).norm() < 1e-15);
        }
    }
}
