//! Linear Poincaré flow on normal bundles and section return maps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcalc::{advance_state, Cocycle, OrbitSegment, StepControl};
use crate::linalg::{orthogonal_complement, qr_positive};
use crate::models::{SuspensionModel, VectorFieldModel};

/// Flow speed below which a grid point counts as singular.
pub const MIN_SPEED: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NormalFrame {
    pub point: DVector<f64>,
    pub flow_dir: DVector<f64>,
    pub speed: f64,
    /// `n x (n-1)` orthonormal columns spanning the normal space.
    pub normal_basis: DMatrix<f64>,
}

impl NormalFrame {
    /// Frame with a canonical normal basis.
    pub fn at(point: DVector<f64>, velocity: &DVector<f64>) -> Result<Self> {
        let speed = velocity.norm();
        if !(speed > MIN_SPEED) {
            return Err(Error::NearSingularity { index: 0, speed });
        }
        let flow_dir = velocity / speed;
        let normal_basis = orthogonal_complement(&DMatrix::from_column_slice(flow_dir.len(), 1, flow_dir.as_slice()));
        Ok(NormalFrame {
            point,
            flow_dir,
            speed,
            normal_basis,
        })
    }

    /// Frame whose normal basis is the re-orthonormalized projection of `previous`.
    fn transported(point: DVector<f64>, velocity: &DVector<f64>, previous: &DMatrix<f64>) -> Result<Self> {
        let speed = velocity.norm();
        if !(speed > MIN_SPEED) {
            return Err(Error::NearSingularity { index: 0, speed });
        }
        let flow_dir = velocity / speed;
        let projected = previous - &flow_dir * (flow_dir.transpose() * previous);
        let (q, r) = qr_positive(projected);
        let weakest = (0..r.ncols()).map(|j| r[(j, j)]).fold(f64::INFINITY, f64::min);
        let normal_basis = if weakest > 1e-6 {
            q
        } else {
            // the flow turned into the previous normal space within one step
            orthogonal_complement(&DMatrix::from_column_slice(flow_dir.len(), 1, flow_dir.as_slice()))
        };
        Ok(NormalFrame {
            point,
            flow_dir,
            speed,
            normal_basis,
        })
    }

    pub fn normal_dim(&self) -> usize {
        self.normal_basis.ncols()
    }

    /// Ambient vector for normal coordinates.
    pub fn ambient(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.normal_basis * coords
    }
}

/// Coordinates of the orthogonal projection of `v` onto the normal space.
pub fn project_normal(frame: &NormalFrame, v: &DVector<f64>) -> DVector<f64> {
    let perp = v - &frame.flow_dir * frame.flow_dir.dot(v);
    frame.normal_basis.transpose() * perp
}

/// One LPF factor: `N_toᵀ · A · N_from`.
pub fn lpf_factor(step: &DMatrix<f64>, from: &NormalFrame, to: &NormalFrame) -> DMatrix<f64> {
    to.normal_basis.transpose() * step * &from.normal_basis
}

#[derive(Debug, Clone)]
pub struct LPFCocycle {
    pub times: Vec<f64>,
    pub frames: Vec<NormalFrame>,
    pub lpf_factors: Vec<DMatrix<f64>>,
}

impl LPFCocycle {
    pub fn cocycle(&self) -> Cocycle<'_> {
        Cocycle {
            times: &self.times,
            factors: &self.lpf_factors,
        }
    }

    pub fn normal_bases(&self) -> Vec<DMatrix<f64>> {
        self.frames.iter().map(|f| f.normal_basis.clone()).collect()
    }
}

/// Linear Poincaré flow factors along a regular orbit.
pub fn lpf_along(orbit: &OrbitSegment) -> Result<LPFCocycle> {
    let with_index = |index: usize, e: Error| match e {
        Error::NearSingularity { speed, .. } => Error::NearSingularity { index, speed },
        other => other,
    };
    let mut frames = Vec::with_capacity(orbit.states.len());
    let first = NormalFrame::at(orbit.states[0].clone(), &orbit.velocities[0]).map_err(|e| with_index(0, e))?;
    frames.push(first);
    let mut lpf_factors = Vec::with_capacity(orbit.steps());
    for k in 0..orbit.steps() {
        let next = NormalFrame::transported(
            orbit.states[k + 1].clone(),
            &orbit.velocities[k + 1],
            &frames[k].normal_basis,
        )
        .map_err(|e| with_index(k + 1, e))?;
        lpf_factors.push(lpf_factor(&orbit.step_cocycles[k], &frames[k], &next));
        frames.push(next);
    }
    Ok(LPFCocycle {
        times: orbit.times.clone(),
        frames,
        lpf_factors,
    })
}

/// Cross-section description as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SectionSpec {
    Affine { point: Vec<f64>, normal: Vec<f64> },
    Named(String),
}

impl SectionSpec {
    pub const CANONICAL: &'static str = "suspension-canonical";

    pub fn canonical() -> Self {
        SectionSpec::Named(Self::CANONICAL.to_string())
    }

    pub fn is_canonical(&self) -> bool {
        matches!(self, SectionSpec::Named(s) if s == Self::CANONICAL)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            SectionSpec::Named(s) if s == Self::CANONICAL => Ok(()),
            SectionSpec::Named(s) => Err(Error::InvalidInput(format!("unknown section `{s}`"))),
            SectionSpec::Affine { point, normal } => {
                if point.len() != dim || normal.len() != dim {
                    return Err(Error::InvalidInput(format!("section point and normal must have dimension {dim}")));
                }
                let n: f64 = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !(n > 0.0 && n.is_finite()) {
                    return Err(Error::InvalidInput("section normal must be nonzero".into()));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Crossing {
    pub state: Vec<f64>,
    /// Time since the previous crossing (or since the start for the first).
    pub return_time: f64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TangencyWarning {
    pub time: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReturnSequence {
    pub crossings: Vec<Crossing>,
    pub warnings: Vec<TangencyWarning>,
}

/// Transversality below this is an error, below `TANGENCY_WARN` a warning.
pub const TANGENCY_FAIL: f64 = 1e-6;
pub const TANGENCY_WARN: f64 = 1e-3;
const CROSSING_TIME_TOL: f64 = 1e-12;

/// Orbit model accepted by [`return_map`].
#[derive(Debug, Clone, Copy)]
pub enum ReturnModel<'a> {
    Field(&'a VectorFieldModel),
    Suspension(&'a SuspensionModel),
}

/// Successive crossings of `section`; `budget` bounds the flow time spent
/// looking for each return.
pub fn return_map(
    model: ReturnModel<'_>,
    section: &SectionSpec,
    x0: &DVector<f64>,
    n_returns: usize,
    budget: f64,
    ctrl: &StepControl,
) -> Result<ReturnSequence> {
    match model {
        ReturnModel::Suspension(m) => {
            if !section.is_canonical() {
                return Err(Error::InvalidInput(
                    "suspension models only support the canonical section".into(),
                ));
            }
            suspension_returns(m, x0, n_returns, budget)
        }
        ReturnModel::Field(m) => {
            section.validate(m.dim())?;
            match section {
                SectionSpec::Affine { point, normal } => {
                    field_returns(m, point, normal, x0, n_returns, budget, ctrl)
                }
                _ => Err(Error::InvalidInput("the canonical section needs a suspension model".into())),
            }
        }
    }
}

fn suspension_returns(m: &SuspensionModel, x0: &DVector<f64>, n: usize, budget: f64) -> Result<ReturnSequence> {
    let (mut x, mut y, s) = match x0.len() {
        2 => (x0[0], x0[1], 0.0),
        3 => (x0[0], x0[1], x0[2]),
        _ => return Err(Error::InvalidInput("suspension start is (x, y) or (x, y, s)".into())),
    };
    let mut out = ReturnSequence::default();
    let mut time = 0.0;
    let mut elapsed = s;
    for _ in 0..n {
        let tau = m.return_time(x);
        let rt = tau - elapsed;
        if rt > budget {
            return Err(Error::NoReturn { budget });
        }
        let (nx, ny) = m.section_map.eval(x, y)?;
        time += rt;
        out.crossings.push(Crossing {
            state: vec![nx, ny],
            return_time: rt,
            time,
        });
        x = nx;
        y = ny;
        elapsed = 0.0;
    }
    Ok(out)
}

fn field_returns(
    m: &VectorFieldModel,
    point: &[f64],
    normal: &[f64],
    x0: &DVector<f64>,
    n: usize,
    budget: f64,
    ctrl: &StepControl,
) -> Result<ReturnSequence> {
    let p = DVector::from_column_slice(point);
    let mut nv = DVector::from_column_slice(normal);
    nv /= nv.norm();
    let phi = |x: &DVector<f64>| (x - &p).dot(&nv);
    let dt = ctrl.dt_out;
    let mut out = ReturnSequence::default();
    let mut state = x0.clone();
    let mut time = 0.0;
    let mut last_crossing = 0.0;
    while out.crossings.len() < n {
        let next = advance_state(m, &state, dt, ctrl)?;
        let (a, b) = (phi(&state), phi(&next));
        if a < 0.0 && b >= 0.0 {
            // bisection in time from the left state
            let (mut lo, mut hi) = (0.0, dt);
            let mut hit = next.clone();
            while hi - lo > CROSSING_TIME_TOL {
                let mid = 0.5 * (lo + hi);
                let xm = advance_state(m, &state, mid, ctrl)?;
                if phi(&xm) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                    hit = xm;
                }
            }
            let tc = time + hi;
            let v = m.eval(&hit);
            let speed = v.norm();
            let margin = if speed > 0.0 { v.dot(&nv).abs() / speed } else { 0.0 };
            if margin < TANGENCY_FAIL {
                return Err(Error::Tangency { t: tc, margin });
            }
            if margin < TANGENCY_WARN {
                out.warnings.push(TangencyWarning { time: tc, margin });
            }
            out.crossings.push(Crossing {
                state: hit.iter().copied().collect(),
                return_time: tc - last_crossing,
                time: tc,
            });
            last_crossing = tc;
        }
        state = next;
        time += dt;
        if time - last_crossing > budget && out.crossings.len() < n {
            return Err(Error::NoReturn { budget });
        }
    }
    Ok(out)
}
