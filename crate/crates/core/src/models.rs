//! Vector fields, interval maps, skew products and suspension semiflows.
//!
//! Every model is an immutable value: parameter changes build a new model.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Residual below which a declared singularity counts as an equilibrium.
pub const SINGULARITY_RESIDUAL: f64 = 1e-10;

/// Axis-aligned box in state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameter(
                "box bounds must have equal length and lower < upper".into(),
            ));
        }
        Ok(BoxRegion { lower, upper })
    }

    pub fn cube(dim: usize, half_width: f64) -> Self {
        BoxRegion {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, s: &DVector<f64>) -> bool {
        s.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| rng.gen_range(*lo..*hi)),
        )
    }

    /// Cell centers of a regular grid with `per_axis` cells along every axis.
    pub fn grid(&self, per_axis: usize) -> Vec<DVector<f64>> {
        let d = self.dim();
        let total = per_axis.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                let mut v = DVector::zeros(d);
                for k in 0..d {
                    let i = idx % per_axis;
                    idx /= per_axis;
                    let w = (self.upper[k] - self.lower[k]) / per_axis as f64;
                    v[k] = self.lower[k] + (i as f64 + 0.5) * w;
                }
                v
            })
            .collect()
    }
}

/// One monomial `coeff * prod x_i^{e_i}` in component `component` of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialTerm {
    pub component: usize,
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

/// JSON coefficient table describing a polynomial vector field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialTable {
    pub name: String,
    pub dim: usize,
    pub terms: Vec<PolynomialTerm>,
    /// Equilibrium seeds; each is refined by damped Newton.
    #[serde(default)]
    pub singularities: Vec<Vec<f64>>,
    #[serde(default)]
    pub trapping_region: Option<BoxRegion>,
}

#[derive(Debug, Clone)]
pub enum FieldKind {
    Lorenz { sigma: f64, rho: f64, beta: f64 },
    Linear { matrix: DMatrix<f64> },
    Polynomial { terms: Vec<PolynomialTerm> },
    /// `x ↦ Q X(Qᵀ x)` for an orthogonal `Q`.
    Conjugated {
        inner: Box<VectorFieldModel>,
        rotation: DMatrix<f64>,
    },
}

/// Autonomous vector field on R^n with exact Jacobian.
#[derive(Debug, Clone)]
pub struct VectorFieldModel {
    name: String,
    dim: usize,
    params: BTreeMap<String, f64>,
    kind: FieldKind,
    singularities: Vec<DVector<f64>>,
    trapping_region: Option<BoxRegion>,
}

impl VectorFieldModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn singularities(&self) -> &[DVector<f64>] {
        &self.singularities
    }

    pub fn trapping_region(&self) -> Option<&BoxRegion> {
        self.trapping_region.as_ref()
    }

    /// True when the tangent cocycle does not depend on the base point.
    pub fn is_linear(&self) -> bool {
        match &self.kind {
            FieldKind::Linear { .. } => true,
            FieldKind::Conjugated { inner, .. } => inner.is_linear(),
            _ => false,
        }
    }

    pub fn eval(&self, s: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            FieldKind::Lorenz { sigma, rho, beta } => DVector::from_vec(vec![
                sigma * (s[1] - s[0]),
                s[0] * (rho - s[2]) - s[1],
                s[0] * s[1] - beta * s[2],
            ]),
            FieldKind::Linear { matrix } => matrix * s,
            FieldKind::Polynomial { terms } => {
                let mut out = DVector::zeros(self.dim);
                for t in terms {
                    out[t.component] += t.coeff * monomial(&t.exponents, s);
                }
                out
            }
            FieldKind::Conjugated { inner, rotation } => {
                rotation * inner.eval(&(rotation.transpose() * s))
            }
        }
    }

    pub fn jacobian(&self, s: &DVector<f64>) -> DMatrix<f64> {
        match &self.kind {
            FieldKind::Lorenz { sigma, rho, beta } => DMatrix::from_row_slice(
                3,
                3,
                &[
                    -sigma, *sigma, 0.0,
                    rho - s[2], -1.0, -s[0],
                    s[1], s[0], -beta,
                ],
            ),
            FieldKind::Linear { matrix } => matrix.clone(),
            FieldKind::Polynomial { terms } => {
                let mut j = DMatrix::zeros(self.dim, self.dim);
                for t in terms {
                    for (var, &e) in t.exponents.iter().enumerate() {
                        if e == 0 {
                            continue;
                        }
                        let mut ex = t.exponents.clone();
                        ex[var] -= 1;
                        j[(t.component, var)] += t.coeff * e as f64 * monomial(&ex, s);
                    }
                }
                j
            }
            FieldKind::Conjugated { inner, rotation } => {
                rotation * inner.jacobian(&(rotation.transpose() * s)) * rotation.transpose()
            }
        }
    }

    pub fn divergence(&self, s: &DVector<f64>) -> f64 {
        self.jacobian(s).trace()
    }
}

fn monomial(exponents: &[u32], s: &DVector<f64>) -> f64 {
    exponents
        .iter()
        .zip(s.iter())
        .map(|(&e, &x)| if e == 0 { 1.0 } else { x.powi(e as i32) })
        .product()
}

/// Classical Lorenz field `(σ(y−x), x(ρ−z)−y, xy−βz)`.
pub fn make_lorenz(sigma: f64, rho: f64, beta: f64) -> Result<VectorFieldModel> {
    if !(sigma > 0.0 && beta > 0.0) {
        return Err(Error::InvalidParameter("lorenz requires sigma, beta > 0".into()));
    }
    let mut singularities = vec![DVector::zeros(3)];
    if rho > 1.0 {
        let c = (beta * (rho - 1.0)).sqrt();
        singularities.push(DVector::from_vec(vec![c, c, rho - 1.0]));
        singularities.push(DVector::from_vec(vec![-c, -c, rho - 1.0]));
    }
    let params = BTreeMap::from([
        ("sigma".to_string(), sigma),
        ("rho".to_string(), rho),
        ("beta".to_string(), beta),
    ]);
    Ok(VectorFieldModel {
        name: "lorenz".into(),
        dim: 3,
        params,
        kind: FieldKind::Lorenz { sigma, rho, beta },
        singularities,
        trapping_region: Some(BoxRegion {
            lower: vec![-30.0, -30.0, 0.0],
            upper: vec![30.0, 30.0, 60.0],
        }),
    })
}

/// Diagonal linear field with the given eigenvalues; equilibrium at the origin.
pub fn make_linear_saddle(eigs: &[f64]) -> Result<VectorFieldModel> {
    if eigs.is_empty() {
        return Err(Error::InvalidParameter("linear saddle needs at least one eigenvalue".into()));
    }
    let matrix = DMatrix::from_diagonal(&DVector::from_column_slice(eigs));
    let params = eigs
        .iter()
        .enumerate()
        .map(|(i, e)| (format!("eig{i}"), *e))
        .collect();
    Ok(VectorFieldModel {
        name: "linear".into(),
        dim: eigs.len(),
        params,
        kind: FieldKind::Linear { matrix },
        singularities: vec![DVector::zeros(eigs.len())],
        trapping_region: Some(BoxRegion::cube(eigs.len(), 1.0)),
    })
}

/// General linear field `ẋ = A x`.
pub fn make_linear(name: &str, matrix: DMatrix<f64>) -> Result<VectorFieldModel> {
    if !matrix.is_square() || matrix.nrows() == 0 {
        return Err(Error::InvalidParameter("linear field needs a nonempty square matrix".into()));
    }
    let n = matrix.nrows();
    Ok(VectorFieldModel {
        name: name.into(),
        dim: n,
        params: BTreeMap::new(),
        kind: FieldKind::Linear { matrix },
        singularities: vec![DVector::zeros(n)],
        trapping_region: Some(BoxRegion::cube(n, 1.0)),
    })
}

/// Polynomial field from a coefficient table; singularity seeds are refined.
pub fn make_polynomial(table: &PolynomialTable) -> Result<VectorFieldModel> {
    if table.dim == 0 {
        return Err(Error::InvalidParameter("polynomial field dimension must be positive".into()));
    }
    for t in &table.terms {
        if t.component >= table.dim || t.exponents.len() != table.dim {
            return Err(Error::InvalidParameter(format!(
                "term {:?} does not match dimension {}",
                t, table.dim
            )));
        }
    }
    if let Some(b) = &table.trapping_region {
        BoxRegion::new(b.lower.clone(), b.upper.clone())?;
        if b.dim() != table.dim {
            return Err(Error::InvalidParameter("trapping region dimension mismatch".into()));
        }
    }
    let mut model = VectorFieldModel {
        name: table.name.clone(),
        dim: table.dim,
        params: BTreeMap::new(),
        kind: FieldKind::Polynomial {
            terms: table.terms.clone(),
        },
        singularities: Vec::new(),
        trapping_region: table.trapping_region.clone(),
    };
    let mut refined = Vec::new();
    for seed in &table.singularities {
        if seed.len() != table.dim {
            return Err(Error::InvalidParameter("singularity seed dimension mismatch".into()));
        }
        refined.push(refine_equilibrium(&model, &DVector::from_column_slice(seed))?);
    }
    model.singularities = refined;
    Ok(model)
}

/// Bistable field `(x − x³, −y, −z)` with sinks at `(±1, 0, 0)`.
pub fn make_double_sink() -> VectorFieldModel {
    let table = PolynomialTable {
        name: "double_sink".into(),
        dim: 3,
        terms: vec![
            PolynomialTerm { component: 0, exponents: vec![1, 0, 0], coeff: 1.0 },
            PolynomialTerm { component: 0, exponents: vec![3, 0, 0], coeff: -1.0 },
            PolynomialTerm { component: 1, exponents: vec![0, 1, 0], coeff: -1.0 },
            PolynomialTerm { component: 2, exponents: vec![0, 0, 1], coeff: -1.0 },
        ],
        singularities: vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
        trapping_region: Some(BoxRegion::cube(3, 2.0)),
    };
    make_polynomial(&table).expect("static table is valid")
}

/// Orthogonally conjugated copy `x ↦ Q X(Qᵀ x)` of a model.
pub fn conjugate(model: &VectorFieldModel, rotation: &DMatrix<f64>) -> Result<VectorFieldModel> {
    let n = model.dim();
    if rotation.nrows() != n || rotation.ncols() != n {
        return Err(Error::InvalidParameter("rotation dimension mismatch".into()));
    }
    let defect = (rotation.transpose() * rotation - DMatrix::<f64>::identity(n, n)).amax();
    if defect > 1e-10 {
        return Err(Error::InvalidParameter(format!("matrix is not orthogonal (defect {defect:e})")));
    }
    let singularities = model.singularities.iter().map(|s| rotation * s).collect();
    // bounding box of the rotated trapping box
    let trapping_region = model.trapping_region.as_ref().map(|b| {
        let center = DVector::from_iterator(n, b.lower.iter().zip(&b.upper).map(|(l, u)| 0.5 * (l + u)));
        let half = DVector::from_iterator(n, b.lower.iter().zip(&b.upper).map(|(l, u)| 0.5 * (u - l)));
        let c = rotation * center;
        let h = rotation.abs() * half;
        BoxRegion {
            lower: (0..n).map(|i| c[i] - h[i]).collect(),
            upper: (0..n).map(|i| c[i] + h[i]).collect(),
        }
    });
    Ok(VectorFieldModel {
        name: format!("{}-conjugated", model.name),
        dim: n,
        params: model.params.clone(),
        kind: FieldKind::Conjugated {
            inner: Box::new(model.clone()),
            rotation: rotation.clone(),
        },
        singularities,
        trapping_region,
    })
}

/// Damped Newton refinement of an equilibrium seed to residual < 1e-12.
pub fn refine_equilibrium(model: &VectorFieldModel, seed: &DVector<f64>) -> Result<DVector<f64>> {
    let mut x = seed.clone();
    let mut res = model.eval(&x).norm();
    for _ in 0..100 {
        if res < 1e-12 {
            return Ok(x);
        }
        let j = model.jacobian(&x);
        let step = match j.clone().lu().solve(&(-model.eval(&x))) {
            Some(s) => s,
            None => j.svd(true, true).solve(&(-model.eval(&x)), 1e-14).map_err(|_| {
                Error::NotAnEquilibrium { residual: res }
            })?,
        };
        let mut lambda = 1.0;
        loop {
            let trial = &x + &step * lambda;
            let r = model.eval(&trial).norm();
            if r < res || lambda < 1e-6 {
                x = trial;
                res = r;
                break;
            }
            lambda *= 0.5;
        }
    }
    if res < 1e-12 {
        Ok(x)
    } else {
        Err(Error::NotAnEquilibrium { residual: res })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapKind {
    /// `2x^θ − 1` on `x > 0`, `1 − 2|x|^θ` on `x < 0`; θ = 1/2 is the
    /// intermittent map, θ = 1 the doubling-type map.
    PowerLorenz { exponent: f64 },
    /// Rigid rotation of the circle `[-1, 1)`.
    Rotation { shift: f64 },
}

/// Map of the interval `[-1, 1]` with finitely many singular points.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMap {
    name: String,
    kind: MapKind,
    domain: (f64, f64),
    singular_points: Vec<f64>,
}

impl IntervalMap {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &MapKind {
        &self.kind
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn singular_points(&self) -> &[f64] {
        &self.singular_points
    }

    fn check(&self, x: f64) -> Result<()> {
        if !(x >= self.domain.0 && x <= self.domain.1) {
            return Err(Error::InvalidInput(format!("x = {x} outside map domain")));
        }
        if self.singular_points.contains(&x) {
            return Err(Error::SingularPoint { x });
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match self.kind {
            MapKind::PowerLorenz { exponent } => {
                if x > 0.0 {
                    2.0 * x.powf(exponent) - 1.0
                } else {
                    1.0 - 2.0 * (-x).powf(exponent)
                }
            }
            MapKind::Rotation { shift } => (x + shift + 1.0).rem_euclid(2.0) - 1.0,
        })
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(match self.kind {
            MapKind::PowerLorenz { exponent } => 2.0 * exponent * x.abs().powf(exponent - 1.0),
            MapKind::Rotation { .. } => 1.0,
        })
    }

    /// Preimages of `y` with the derivative of the inverse branch at `y`.
    pub fn inverse_branches(&self, y: f64) -> Vec<(f64, f64)> {
        match self.kind {
            MapKind::PowerLorenz { exponent } => {
                let inv = 1.0 / exponent;
                let up = (y + 1.0) / 2.0;
                let down = (1.0 - y) / 2.0;
                vec![
                    (up.powf(inv), 0.5 * inv * up.powf(inv - 1.0)),
                    (-down.powf(inv), 0.5 * inv * down.powf(inv - 1.0)),
                ]
            }
            MapKind::Rotation { shift } => {
                vec![((y - shift + 1.0).rem_euclid(2.0) - 1.0, 1.0)]
            }
        }
    }

    /// Fixed points that bound the interval (the neutral or repelling ends).
    pub fn boundary_fixed_points(&self) -> Vec<f64> {
        match self.kind {
            MapKind::PowerLorenz { .. } => vec![1.0, -1.0],
            MapKind::Rotation { .. } => Vec::new(),
        }
    }
}

/// The intermittent Lorenz-like quotient map (`θ = 1/2`).
pub fn make_intermittent_lorenz_map() -> IntervalMap {
    make_power_lorenz_map(0.5).expect("exponent 1/2 is valid")
}

/// Lorenz-like power map with branch exponent `θ ∈ (0, 1]`.
pub fn make_power_lorenz_map(exponent: f64) -> Result<IntervalMap> {
    if !(exponent > 0.0 && exponent <= 1.0) {
        return Err(Error::InvalidParameter("branch exponent must lie in (0, 1]".into()));
    }
    let name = if exponent == 0.5 {
        "intermittent".to_string()
    } else {
        format!("power-lorenz-{exponent}")
    };
    Ok(IntervalMap {
        name,
        kind: MapKind::PowerLorenz { exponent },
        domain: (-1.0, 1.0),
        singular_points: vec![0.0],
    })
}

/// Isometric circle rotation used as a neutral control model.
pub fn make_circle_rotation(shift: f64) -> IntervalMap {
    IntervalMap {
        name: "rotation".into(),
        kind: MapKind::Rotation { shift },
        domain: (-1.0, 1.0),
        singular_points: Vec::new(),
    }
}

/// Skew product `R(x, y) = (f(x), g(x, y))` with
/// `g(x, y) = c1·y·|x|^c2 + c3·sign(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewProductMap {
    pub base: IntervalMap,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl SkewProductMap {
    pub fn fiber(&self, x: f64, y: f64) -> f64 {
        self.c1 * y * x.abs().powf(self.c2) + self.c3 * sign(x)
    }

    pub fn fiber_dx(&self, x: f64, y: f64) -> f64 {
        if self.c2 == 0.0 || x == 0.0 {
            return 0.0;
        }
        self.c1 * self.c2 * y * x.abs().powf(self.c2 - 1.0) * sign(x)
    }

    pub fn fiber_dy(&self, x: f64) -> f64 {
        self.c1 * x.abs().powf(self.c2)
    }

    pub fn fiber_contraction_rate(&self) -> f64 {
        self.c1
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        Ok((self.base.eval(x)?, self.fiber(x, y)))
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Return-time function of a suspension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Roof {
    /// `−log|x| + τ0`, truncated at `|x| = delta`.
    Log { tau0: f64, delta: f64 },
    Constant { height: f64 },
}

impl Roof {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Roof::Log { tau0, delta } => -x.abs().max(delta).ln() + tau0,
            Roof::Constant { height } => height,
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Roof::Log { delta, .. } => {
                if x.abs() <= delta {
                    0.0
                } else {
                    -1.0 / x
                }
            }
            Roof::Constant { .. } => 0.0,
        }
    }

    pub fn floor(&self) -> f64 {
        match *self {
            Roof::Log { tau0, .. } => tau0,
            Roof::Constant { height } => height,
        }
    }

    /// Longest return time.
    pub fn ceiling(&self) -> f64 {
        match *self {
            Roof::Log { tau0, delta } => tau0 - delta.ln(),
            Roof::Constant { height } => height,
        }
    }

    /// Mean over normalized Lebesgue measure on `[-1, 1]`.
    pub fn mean(&self) -> f64 {
        match *self {
            Roof::Log { tau0, delta } => tau0 + 1.0 - delta,
            Roof::Constant { height } => height,
        }
    }

    /// Bound on the Lebesgue-mean error introduced by the truncation.
    pub fn truncation_error_bound(&self) -> f64 {
        match *self {
            Roof::Log { delta, .. } => delta * (1.0 + delta.ln().abs()),
            Roof::Constant { .. } => 0.0,
        }
    }
}

/// Fiber and roof constants of the geometric Lorenz suspension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuspensionConfig {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub roof: Roof,
}

impl Default for SuspensionConfig {
    fn default() -> Self {
        SuspensionConfig {
            c1: 0.25,
            c2: 0.5,
            c3: 0.5,
            roof: Roof::Log {
                tau0: 1.0,
                delta: 1e-12,
            },
        }
    }
}

/// Suspension semiflow over a skew product. States live in suspension
/// coordinates `(x, y, s)` with `0 ≤ s < τ(x)`; the flow is `ṡ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuspensionModel {
    name: String,
    pub section_map: SkewProductMap,
    pub roof: Roof,
    pub roof_floor: f64,
}

impl SuspensionModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn return_time(&self, x: f64) -> f64 {
        self.roof.value(x)
    }

    /// One application of the section map with its suspension-coordinate
    /// Jacobian `[[f', 0, 0], [g_x, g_y, 0], [−τ', 0, 1]]`.
    pub fn section_step(&self, x: f64, y: f64) -> Result<(f64, f64, f64, DMatrix<f64>)> {
        let map = &self.section_map;
        let (nx, ny) = map.eval(x, y)?;
        let fp = map.base.derivative(x)?;
        let jac = DMatrix::from_row_slice(
            3,
            3,
            &[
                fp, 0.0, 0.0,
                map.fiber_dx(x, y), map.fiber_dy(x), 0.0,
                -self.roof.derivative(x), 0.0, 1.0,
            ],
        );
        Ok((nx, ny, self.return_time(x), jac))
    }

    /// Suspension states sitting on the periodic orbits over the boundary
    /// fixed points of the base map.
    pub fn boundary_periodic_states(&self) -> Vec<DVector<f64>> {
        let map = &self.section_map;
        map.base
            .boundary_fixed_points()
            .into_iter()
            .map(|x| {
                let y = map.c3 * sign(x) / (1.0 - map.fiber_dy(x));
                DVector::from_vec(vec![x, y, 0.0])
            })
            .collect()
    }

    /// Lebesgue-random point on the section `s = 0`.
    pub fn sample_section<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        loop {
            let x: f64 = rng.gen_range(-1.0..1.0);
            if self.section_map.base.singular_points().contains(&x) {
                continue;
            }
            let y: f64 = rng.gen_range(-1.0..1.0);
            return DVector::from_vec(vec![x, y, 0.0]);
        }
    }
}

/// Either kind of model, as selected by a run configuration.
#[derive(Debug, Clone)]
pub enum Model {
    Field(VectorFieldModel),
    Suspension(SuspensionModel),
}

impl Model {
    pub fn as_field(&self) -> Option<&VectorFieldModel> {
        match self {
            Model::Field(m) => Some(m),
            Model::Suspension(_) => None,
        }
    }

    pub fn as_suspension(&self) -> Option<&SuspensionModel> {
        match self {
            Model::Suspension(m) => Some(m),
            Model::Field(_) => None,
        }
    }
}

impl From<VectorFieldModel> for Model {
    fn from(m: VectorFieldModel) -> Self {
        Model::Field(m)
    }
}

impl From<SuspensionModel> for Model {
    fn from(m: SuspensionModel) -> Self {
        Model::Suspension(m)
    }
}

/// Geometric Lorenz suspension of `base` with the given fiber/roof constants.
pub fn make_geometric_lorenz_suspension(
    base: IntervalMap,
    cfg: &SuspensionConfig,
) -> Result<SuspensionModel> {
    if base.domain() != (-1.0, 1.0) {
        return Err(Error::InvalidParameter("base map domain must be [-1, 1]".into()));
    }
    if !(cfg.c1 > 0.0 && cfg.c1 < 1.0) || cfg.c2 < 0.0 || cfg.c3 < 0.0 {
        return Err(Error::InvalidParameter("need 0 < c1 < 1, c2 >= 0, c3 >= 0".into()));
    }
    if cfg.c1 + cfg.c3 >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "c1 + c3 = {} >= 1: fiber map leaves the interval",
            cfg.c1 + cfg.c3
        )));
    }
    match cfg.roof {
        Roof::Log { tau0, delta } if !(tau0 > 0.0 && delta > 0.0 && delta < 1.0) => {
            return Err(Error::InvalidParameter("log roof needs tau0 > 0 and 0 < delta < 1".into()))
        }
        Roof::Constant { height } if !(height > 0.0) => {
            return Err(Error::InvalidParameter("constant roof must be positive".into()))
        }
        _ => {}
    }
    let name = format!("suspension-{}", base.name());
    Ok(SuspensionModel {
        name,
        section_map: SkewProductMap {
            base,
            c1: cfg.c1,
            c2: cfg.c2,
            c3: cfg.c3,
        },
        roof: cfg.roof,
        roof_floor: cfg.roof.floor(),
    })
}
