//! Small dense linear-algebra helpers shared by the cocycle code.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Condition number beyond which a transported basis is considered degenerate.
pub const DEGENERATE_COND: f64 = 1e8;

/// Thin QR factorization with a nonnegative diagonal in `R`.
pub fn qr_positive(m: DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = m.ncols().min(m.nrows());
    let qr = m.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            r.row_mut(j).neg_mut();
            q.column_mut(j).neg_mut();
        }
    }
    (q, r)
}

/// Orthonormal basis for the column span of `m` (Gram process via QR).
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    qr_positive(m.clone()).0
}

/// Ratio of the extreme diagonal magnitudes of a triangular factor.
pub fn triangular_condition(r: &DMatrix<f64>) -> f64 {
    let k = r.nrows().min(r.ncols());
    let mut hi = 0.0_f64;
    let mut lo = f64::INFINITY;
    for j in 0..k {
        let v = r[(j, j)].abs();
        hi = hi.max(v);
        lo = lo.min(v);
    }
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Largest singular value; closed form for one or two columns (or rows).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    if c == 1 || r == 1 {
        return m.norm();
    }
    if c == 2 || r == 2 {
        let g = if c == 2 { m.transpose() * m } else { m * m.transpose() };
        let (a, b, d) = (g[(0, 0)], g[(0, 1)], g[(1, 1)]);
        let half = 0.5 * (a - d);
        return (0.5 * (a + d) + half.hypot(b)).max(0.0).sqrt();
    }
    singular_values(m)[0]
}

/// Smallest singular value; closed form for square 2×2 matrices.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    match m.shape() {
        (1, 1) => m[(0, 0)].abs(),
        (2, 2) => {
            let top = op_norm(m);
            if top > 0.0 {
                (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).abs() / top
            } else {
                0.0
            }
        }
        _ => singular_values(m).last().copied().unwrap_or(0.0),
    }
}

/// Sine of the largest principal angle between two equal-dimensional subspaces.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    let leak = &qa - &qb * (qb.transpose() * &qa);
    op_norm(&leak).min(1.0)
}

/// Smallest principal angle between two subspaces, in radians.
pub fn smallest_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orthonormalize(a);
    let qb = orthonormalize(b);
    let cos = op_norm(&(qa.transpose() * qb)).min(1.0);
    cos.acos()
}

/// Angle between a vector and its orthogonal projection onto `span(basis)`.
pub fn angle_to_subspace(v: &DVector<f64>, basis: &DMatrix<f64>) -> f64 {
    let k = basis.ncols();
    let q = if (basis.transpose() * basis - DMatrix::<f64>::identity(k, k)).amax() <= 1e-15 {
        basis.clone()
    } else {
        orthonormalize(basis)
    };
    let proj = &q * (q.transpose() * v);
    let perp = v - &proj;
    perp.norm().atan2(proj.norm())
}

/// Orthonormal complement of `span(basis)` in R^n.
pub fn orthogonal_complement(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let q = orthonormalize(basis);
    let k = q.ncols();
    let proj = DMatrix::<f64>::identity(n, n) - &q * q.transpose();
    // pick the n-k columns of the projector with the largest norms, then clean up
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| proj.column(j).norm().total_cmp(&proj.column(i).norm()));
    let mut cols = Vec::with_capacity(n - k);
    let mut acc = q.clone();
    for &i in &idx {
        if cols.len() == n - k {
            break;
        }
        let mut v = proj.column(i).into_owned();
        v -= &acc * (acc.transpose() * &v);
        let nv = v.norm();
        if nv > 1e-8 {
            v /= nv;
            acc = DMatrix::from_columns(
                &acc.column_iter()
                    .map(|c| c.into_owned())
                    .chain(std::iter::once(v.clone()))
                    .collect::<Vec<_>>(),
            );
            cols.push(v);
        }
    }
    DMatrix::from_columns(&cols)
}

/// Deterministic generic orthonormal `n x k` frame (fixed-seed uniform draw).
pub fn generic_frame(n: usize, k: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ec_4a9 + n as u64);
    let m = DMatrix::from_fn(n, k, |_, _| rng.gen_range(-1.0..1.0));
    orthonormalize(&m)
}

/// Dominant `k`-dimensional invariant subspace of `m` by orthogonal iteration.
pub fn dominant_subspace(m: &DMatrix<f64>, k: usize, max_iter: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut q = generic_frame(n, k);
    for _ in 0..max_iter {
        let next = orthonormalize(&(m * &q));
        let moved = subspace_distance(&next, &q);
        q = next;
        if moved < 1e-15 {
            break;
        }
    }
    q
}

/// Orthonormal basis that is pushed through a cocycle while tracking the
/// accumulated triangular factor with an explicit log scale.
#[derive(Debug, Clone)]
pub struct FrameTrack {
    pub basis: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub log_scale: f64,
}

impl FrameTrack {
    pub fn new(basis: &DMatrix<f64>) -> Self {
        let (q, r) = qr_positive(basis.clone());
        // fold the initial non-orthonormality into r so norms are relative to `basis`
        let mut track = FrameTrack {
            basis: q,
            r,
            log_scale: 0.0,
        };
        track.rescale();
        track
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Push through one step; returns the step's triangular factor.
    pub fn push(&mut self, step: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let w = step * &self.basis;
        let (q, r) = qr_positive(w);
        let cond = triangular_condition(&r);
        if !(cond <= DEGENERATE_COND) {
            return Err(Error::DegenerateBasis { cond });
        }
        self.basis = q;
        self.r = &r * &self.r;
        self.rescale();
        Ok(r)
    }

    fn rescale(&mut self) {
        let s = self.r.amax();
        if s > 0.0 && s.is_finite() {
            self.r /= s;
            self.log_scale += s.ln();
        }
    }

    /// log of the operator norm of the accumulated map on the initial subspace.
    pub fn log_norm(&self) -> f64 {
        self.log_scale + op_norm(&self.r).ln()
    }

    /// log of the smallest singular value of the accumulated map.
    pub fn log_min_sv(&self) -> f64 {
        self.log_scale + min_singular_value(&self.r).ln()
    }

    pub fn log_abs_det(&self) -> f64 {
        let d = self.dim();
        let mut acc = d as f64 * self.log_scale;
        for j in 0..d {
            acc += self.r[(j, j)].abs().ln();
        }
        acc
    }

    /// log of the sorted singular values of the accumulated map.
    pub fn log_singular_values(&self) -> Vec<f64> {
        singular_values(&self.r)
            .into_iter()
            .map(|s| self.log_scale + s.ln())
            .collect()
    }
}

/// Halton radical inverse in the given prime base.
pub fn halton(index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let mut i = index;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [usize; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Deterministic sample of 2-planes in R^d, each as an orthonormal `d x 2`
/// coefficient matrix. `d == 2` yields the single plane; otherwise all
/// coordinate planes plus low-discrepancy planes up to at least `min_count`.
pub fn plane_sample(d: usize, min_count: usize) -> Vec<DMatrix<f64>> {
    assert!(d >= 2);
    if d == 2 {
        return vec![DMatrix::identity(2, 2)];
    }
    let mut planes = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            let mut c = DMatrix::zeros(d, 2);
            c[(i, 0)] = 1.0;
            c[(j, 1)] = 1.0;
            planes.push(c);
        }
    }
    let mut index = 1;
    while planes.len() < min_count {
        let m = DMatrix::from_fn(d, 2, |r, c| {
            let p = PRIMES[(c * d + r) % PRIMES.len()];
            2.0 * halton(index, p) - 1.0
        });
        index += 1;
        let q = orthonormalize(&m);
        if q.ncols() == 2 && (m.column(0).norm() > 1e-6) && min_singular_value(&m) > 1e-6 {
            planes.push(q);
        }
    }
    planes
}

/// Ordered index pairs `(i, j)`, `i < j`, labelling the basis of `∧²R^n`.
pub fn wedge_pairs(n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn qr_has_nonnegative_diagonal() {
        let m = DMatrix::from_row_slice(3, 2, &[-1.0, 2.0, 0.5, -3.0, 2.0, 1.0]);
        let (q, r) = qr_positive(m.clone());
        assert!(r[(0, 0)] >= 0.0 && r[(1, 1)] >= 0.0);
        assert_relative_eq!(&q * &r, m, epsilon = 1e-12);
    }

    #[test]
    fn complement_is_orthogonal() {
        let b = DMatrix::from_column_slice(4, 1, &[1.0, 1.0, 0.0, 0.0]);
        let c = orthogonal_complement(&b);
        assert_eq!(c.ncols(), 3);
        assert!((b.transpose() * &c).amax() < 1e-12);
        assert_relative_eq!(c.transpose() * &c, DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn plane_sample_counts() {
        assert_eq!(plane_sample(2, 64).len(), 1);
        let p = plane_sample(3, 64);
        assert!(p.len() >= 64);
        for c in &p {
            assert_relative_eq!(c.transpose() * c, DMatrix::identity(2, 2), epsilon = 1e-12);
        }
    }

    #[test]
    fn frame_track_log_det_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5, 3.0]));
        let mut t = FrameTrack::new(&DMatrix::identity(3, 3));
        for _ in 0..100 {
            t.push(&a).unwrap();
        }
        assert_relative_eq!(t.log_abs_det(), 100.0 * 3.0_f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(t.log_norm(), 100.0 * 3.0_f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn dominant_subspace_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 3.0, 1.0, 2.0]));
        let q = dominant_subspace(&m, 2, 1000);
        let mut e = DMatrix::zeros(4, 2);
        e[(1, 0)] = 1.0;
        e[(3, 1)] = 1.0;
        assert!(subspace_distance(&q, &e) < 1e-12);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| -2.5 * v + 1.0).collect();
        let (s, c) = fit_line(&x, &y);
        assert_relative_eq!(s, -2.5, epsilon = 1e-12);
        assert_relative_eq!(c, 1.0, epsilon = 1e-12);
    }
}
