//! Period averages of the contraction and wedge-inverse integrands over a
//! closed orbit or an equilibrium.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::Verdict;
use crate::error::{Error, Result};
use crate::flowcalc::{integrate, wedge2_of, StepControl};
use crate::linalg::{self, dominant_subspace, qr_positive};
use crate::models::{refine_equilibrium, Model, SuspensionModel, VectorFieldModel};

/// Closing residual accepted by the shooting method.
pub const CLOSING_TOL: f64 = 1e-10;
const NEWTON_ITERS: usize = 40;
const SUBSPACE_ITERS: usize = 5000;

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicOptions {
    pub d_s: usize,
    /// Time of the map `f = X_τ`.
    pub tau: f64,
    pub eta: f64,
    /// Grid points per period.
    pub grid: usize,
}

impl Default for PeriodicOptions {
    fn default() -> Self {
        PeriodicOptions {
            d_s: 1,
            tau: 1.0,
            eta: -0.05,
            grid: 400,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicCheck {
    pub state: Vec<f64>,
    /// Zero for an equilibrium.
    pub period: f64,
    pub residual: f64,
    pub equilibrium: bool,
    /// Period average of `log ‖Df|E‖`.
    pub e_average: f64,
    /// Period average of `log ‖(∧²Df|F)^{-1}‖`.
    pub f_average: f64,
    /// Both averages divided by the effective `τ`.
    pub e_rate: f64,
    pub f_rate: f64,
    pub tau_effective: f64,
    pub verdict: Verdict,
}

/// Checks a closed orbit through `seed`. A nonpositive `period_guess`
/// selects the equilibrium variant.
pub fn nush_periodic_check(model: &Model, seed: &DVector<f64>, period_guess: f64, opts: &PeriodicOptions) -> Result<PeriodicCheck> {
    if !(opts.tau > 0.0) || opts.grid < 2 {
        return Err(Error::InvalidParameter("tau must be positive and the grid at least 2".into()));
    }
    match model {
        Model::Field(m) if period_guess <= 0.0 => equilibrium_check(m, seed, opts),
        Model::Field(m) => cycle_check(m, seed, period_guess, opts),
        Model::Suspension(m) => suspension_check(m, seed, opts),
    }
}

fn check_dims(n: usize, d_s: usize) -> Result<usize> {
    if d_s == 0 || d_s + 2 > n {
        return Err(Error::InvalidParameter(format!("need 1 <= d_s and d_s + 2 <= {n}, got d_s = {d_s}")));
    }
    Ok(n - d_s)
}

fn wedge_inverse_log(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 2 {
        -m.determinant().abs().ln()
    } else {
        -linalg::min_singular_value(&wedge2_of(m)).ln()
    }
}

fn finish(state: DVector<f64>, period: f64, residual: f64, e: f64, f: f64, tau: f64, eta: f64) -> PeriodicCheck {
    let (e_rate, f_rate) = (e / tau, f / tau);
    PeriodicCheck {
        state: state.iter().copied().collect(),
        period,
        residual,
        equilibrium: period == 0.0,
        e_average: e,
        f_average: f,
        e_rate,
        f_rate,
        tau_effective: tau,
        verdict: Verdict::from_bool(e_rate <= eta && f_rate <= eta),
    }
}

fn equilibrium_check(model: &VectorFieldModel, seed: &DVector<f64>, opts: &PeriodicOptions) -> Result<PeriodicCheck> {
    let d_cu = check_dims(model.dim(), opts.d_s)?;
    let sigma = refine_equilibrium(model, seed)?;
    let residual = model.eval(&sigma).norm();
    if residual > CLOSING_TOL {
        return Err(Error::NotAnEquilibrium { residual });
    }
    let j = model.jacobian(&sigma);
    let m = (&j * opts.tau).exp();
    let back = (&j * -opts.tau).exp();
    let e = dominant_subspace(&back, opts.d_s, SUBSPACE_ITERS);
    let f = dominant_subspace(&m, d_cu, SUBSPACE_ITERS);
    // restrict the generator to the invariant subspaces: exp(τJ)·E loses the
    // contracting part to cancellation
    let je = e.transpose() * &j * &e;
    let jf = f.transpose() * &j * &f;
    let e_avg = linalg::op_norm(&(je * opts.tau).exp()).ln();
    let f_avg = wedge_inverse_log(&(jf * opts.tau).exp());
    Ok(finish(sigma, 0.0, residual, e_avg, f_avg, opts.tau, opts.eta))
}

/// Shooting Newton on `(x, T)` with the phase condition `X(x)·δx = 0`.
fn shoot(model: &VectorFieldModel, seed: &DVector<f64>, guess: f64, ctrl: &StepControl) -> Result<(DVector<f64>, f64, f64)> {
    let n = model.dim();
    let mut x = seed.clone();
    let mut period = guess;
    let mut residual = f64::INFINITY;
    for _ in 0..NEWTON_ITERS {
        if !(period > 0.0) || model.eval(&x).norm() < 1e-8 {
            break;
        }
        let orbit = integrate(model, &x, period, &ctrl.clone().with_dt(period))?;
        let end = orbit.states.last().unwrap();
        let g = end - &x;
        residual = g.norm();
        if residual < CLOSING_TOL {
            return Ok((x, period, residual));
        }
        let monodromy = orbit.cocycle().compose(0, orbit.steps());
        let fx = model.eval(&x);
        let fend = model.eval(end);
        let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
        a.view_mut((0, 0), (n, n)).copy_from(&(monodromy - DMatrix::identity(n, n)));
        a.view_mut((0, n), (n, 1)).copy_from(&fend);
        a.view_mut((n, 0), (1, n)).copy_from(&fx.transpose());
        let mut rhs = DVector::<f64>::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&(-g));
        let Some(delta) = a.lu().solve(&rhs) else {
            break;
        };
        x += delta.rows(0, n);
        period += delta[n];
    }
    Err(Error::NotPeriodic { residual })
}

/// Averages over a periodic cocycle given by its one-step factors on a
/// uniform grid of `factors.len()` points per period.
fn periodic_averages(factors: &[DMatrix<f64>], d_s: usize, tau_steps: usize) -> (f64, f64) {
    let n = factors[0].nrows();
    let len = factors.len();
    let mut monodromy = DMatrix::<f64>::identity(n, n);
    for a in factors {
        monodromy = a * monodromy;
        let s = monodromy.amax();
        monodromy /= s;
    }
    let inverse = monodromy.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(n, n));
    let mut fk = dominant_subspace(&monodromy, n - d_s, SUBSPACE_ITERS);
    let mut ek = dominant_subspace(&inverse, d_s, SUBSPACE_ITERS);

    let mut f_bases = Vec::with_capacity(len + 1);
    f_bases.push(fk.clone());
    for a in factors {
        fk = qr_positive(a * &fk).0;
        f_bases.push(fk.clone());
    }
    let mut e_bases = vec![DMatrix::zeros(0, 0); len + 1];
    e_bases[len] = ek.clone();
    for k in (0..len).rev() {
        let inv = factors[k].clone().try_inverse().unwrap_or_else(|| DMatrix::identity(n, n));
        ek = qr_positive(inv * &ek).0;
        e_bases[k] = ek.clone();
    }

    let mut e_sum = 0.0;
    let mut f_sum = 0.0;
    for k in 0..len {
        let mut eimg = e_bases[k].clone();
        let mut fimg = f_bases[k].clone();
        let (mut le, mut lf) = (0.0, 0.0);
        for s in 0..tau_steps {
            let a = &factors[(k + s) % len];
            eimg = a * eimg;
            fimg = a * fimg;
            let (me, mf) = (eimg.amax(), fimg.amax());
            eimg /= me;
            fimg /= mf;
            le += me.ln();
            lf += mf.ln();
        }
        e_sum += le + linalg::op_norm(&eimg).ln();
        let target = &f_bases[(k + tau_steps) % len];
        let restricted = target.transpose() * fimg;
        f_sum += wedge_inverse_log(&restricted) - 2.0 * lf;
    }
    (e_sum / len as f64, f_sum / len as f64)
}

fn cycle_check(model: &VectorFieldModel, seed: &DVector<f64>, guess: f64, opts: &PeriodicOptions) -> Result<PeriodicCheck> {
    check_dims(model.dim(), opts.d_s)?;
    let ctrl = StepControl::default().with_tol(1e-12, 1e-14);
    let (x, period, residual) = shoot(model, seed, guess, &ctrl)?;
    let orbit = integrate(model, &x, period, &ctrl.with_dt(period / opts.grid as f64))?;
    let mut factors = orbit.step_cocycles.clone();
    // a trailing sliver of the grid belongs to the last step
    if factors.len() > opts.grid {
        let tail = factors.pop().unwrap();
        let last = factors.pop().unwrap();
        factors.push(tail * last);
    }
    let dt = period / factors.len() as f64;
    let tau_steps = ((opts.tau / dt).round() as usize).max(1);
    let (e, f) = periodic_averages(&factors, opts.d_s, tau_steps);
    Ok(finish(x, period, residual, e, f, tau_steps as f64 * dt, opts.eta))
}

fn suspension_check(model: &SuspensionModel, seed: &DVector<f64>, opts: &PeriodicOptions) -> Result<PeriodicCheck> {
    check_dims(3, opts.d_s)?;
    if seed.len() < 2 {
        return Err(Error::InvalidInput("suspension seed needs (x, y[, s])".into()));
    }
    let (mut x, mut y) = (seed[0], seed[1]);
    let mut residual = f64::INFINITY;
    for _ in 0..NEWTON_ITERS {
        let (nx, ny, _, jac) = model.section_step(x, y)?;
        let g = DVector::from_vec(vec![nx - x, ny - y]);
        residual = g.norm();
        if residual < CLOSING_TOL {
            break;
        }
        let a = jac.view((0, 0), (2, 2)).into_owned() - DMatrix::<f64>::identity(2, 2);
        // pseudo-inverse: the base derivative is 1 on neutral fibers
        let Ok(delta) = a.svd(true, true).solve(&(-g), 1e-12) else {
            break;
        };
        x += delta[0];
        y += delta[1];
    }
    if residual >= CLOSING_TOL {
        return Err(Error::NotPeriodic { residual });
    }
    let (_, _, period, jac) = model.section_step(x, y)?;
    let mut factors = vec![DMatrix::<f64>::identity(3, 3); opts.grid];
    factors[opts.grid - 1] = jac;
    let dt = period / opts.grid as f64;
    let tau_steps = ((opts.tau / dt).round() as usize).max(1);
    let (e, f) = periodic_averages(&factors, opts.d_s, tau_steps);
    Ok(finish(DVector::from_vec(vec![x, y, 0.0]), period, residual, e, f, tau_steps as f64 * dt, opts.eta))
}
