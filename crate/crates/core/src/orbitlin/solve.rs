use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frames::OrbitFrame;
use crate::error::{Error, Result};
use crate::flowcore::Tangent;

/// Residual above which a solve or reduction is rejected.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// Components of a normal inhomogeneity outside `V_k` larger than this are
/// projected away and reported.
const NORMAL_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InhomKind {
    /// `z_k ∈ ℝⁿ`, the right-hand side of the system with time shifts.
    FullSpace,
    /// `b_k ∈ V_k = X_k⊥`.
    Normal,
}

/// Named inhomogeneity patterns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InhomPattern {
    Zero,
    /// First normal basis vector `E_k e_1` at every `k`.
    ConstantNormal,
    /// Uniform directions with uniform lengths in `[0, 1]`.
    Random { seed: u64 },
}

/// Inhomogeneity `{z_k}` or `{b_k}` for `k = -N..=N`, stored at `k + N`, in
/// ambient coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct InhomSeq {
    pub kind: InhomKind,
    pub vectors: Vec<Tangent>,
}

impl InhomSeq {
    pub fn new(kind: InhomKind, vectors: Vec<Tangent>) -> Result<Self> {
        for (j, v) in vectors.iter().enumerate() {
            if !(v.norm() <= 1.0 + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "inhomogeneity entry {j} has norm {} > 1",
                    v.norm()
                )));
            }
        }
        Ok(InhomSeq { kind, vectors })
    }

    pub fn zero(kind: InhomKind, len: usize, dim: usize) -> Self {
        InhomSeq {
            kind,
            vectors: vec![Tangent::zeros(dim); len],
        }
    }

    pub fn constant_normal(kind: InhomKind, frames: &[OrbitFrame]) -> Self {
        InhomSeq {
            kind,
            vectors: frames.iter().map(|f| f.e.column(0).into_owned()).collect(),
        }
    }

    /// Random entries; with `kind = Normal` they are drawn inside `V_k`.
    pub fn random(kind: InhomKind, frames: &[OrbitFrame], rng: &mut ChaCha8Rng) -> Self {
        let vectors = frames
            .iter()
            .map(|f| {
                let n = f.x.len();
                let m = match kind {
                    InhomKind::FullSpace => n,
                    InhomKind::Normal => n - 1,
                };
                let dir = loop {
                    let g = DVector::<f64>::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
                    let norm = g.norm();
                    if norm > 1e-3 && norm <= 1.0 {
                        break g / norm;
                    }
                };
                let len: f64 = rng.gen_range(0.0..=1.0);
                match kind {
                    InhomKind::FullSpace => dir * len,
                    InhomKind::Normal => &f.e * dir * len,
                }
            })
            .collect();
        InhomSeq { kind, vectors }
    }

    /// Random entries of unit length inside `V_k`.
    pub fn random_unit_normal(frames: &[OrbitFrame], rng: &mut ChaCha8Rng) -> Self {
        let mut seq = Self::random(InhomKind::Normal, frames, rng);
        for v in &mut seq.vectors {
            let n = v.norm();
            if n > 0.0 {
                *v /= n;
            }
        }
        seq
    }

    pub fn from_pattern(pattern: InhomPattern, kind: InhomKind, frames: &[OrbitFrame]) -> Self {
        match pattern {
            InhomPattern::Zero => Self::zero(kind, frames.len(), frames.first().map_or(0, |f| f.x.len())),
            InhomPattern::ConstantNormal => Self::constant_normal(kind, frames),
            InhomPattern::Random { seed } => Self::random(kind, frames, &mut ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    LeastSquares,
    ExhaustiveOracle,
}

/// A bounded solution on the window `[-N, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundedSolveResult {
    /// `x_k` in ambient coordinates for the system with time shifts, `v_k` in `E_k`
    /// coordinates for the reduced system; index `k + N`.
    pub x: Vec<DVector<f64>>,
    /// `s_k` for `k = -N..=N-1`; empty for the reduced system.
    pub s: Vec<f64>,
    /// `max_k |x_k|`, Euclidean.
    pub sup_norm: f64,
    /// `max_k max_i |x_k,i|`.
    pub sup_norm_max: f64,
    /// Largest constraint violation.
    pub residual: f64,
    pub solver: SolverKind,
    pub warnings: Vec<String>,
}

fn sup_norms(x: &[DVector<f64>]) -> (f64, f64) {
    x.iter().fold((0.0, 0.0), |(e, m), v| (f64::max(e, v.norm()), f64::max(m, v.amax())))
}

/// Minimum-norm solution of the full-row-rank system `C u = rhs` by a QR
/// factorization of `Cᵀ`.
pub fn min_norm_solve(c: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let (rows, cols) = c.shape();
    if rows > cols {
        return Err(Error::RankDeficient {
            expected: rows,
            got: cols,
        });
    }
    let qr = c.transpose().qr();
    let r = qr.r();
    let diag_max = (0..rows).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let tol = diag_max * (cols as f64) * f64::EPSILON * 16.0;
    let rank = (0..rows).filter(|&i| r[(i, i)].abs() > tol).count();
    if rank < rows {
        return Err(Error::RankDeficient { expected: rows, got: rank });
    }
    let y = r
        .transpose()
        .solve_lower_triangular(rhs)
        .ok_or(Error::RankDeficient { expected: rows, got: rank })?;
    Ok(qr.q() * y)
}

fn check_window(frames: &[OrbitFrame], inhom: &InhomSeq) -> Result<usize> {
    if frames.is_empty() || frames.len().is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "expected 2N+1 frames, got {}",
            frames.len()
        )));
    }
    if inhom.len() != frames.len() {
        return Err(Error::InvalidParameter(format!(
            "{} frames but {} inhomogeneity entries",
            frames.len(),
            inhom.len()
        )));
    }
    let n = frames[0].x.len();
    if let Some(v) = inhom.vectors.iter().find(|v| v.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            got: v.len(),
        });
    }
    Ok(n)
}

/// `x_{k+1} = A_k x_k + X(p_{k+1}) s_k + z_{k+1}`, `k ∈ [-N, N-1]`, minimizing
/// `Σ|x_k|² + Σs_k²`.
pub fn solve_eq_4_2(frames: &[OrbitFrame], z: &InhomSeq) -> Result<BoundedSolveResult> {
    let n = check_window(frames, z)?;
    let m = frames.len() - 1;
    let xcols = (m + 1) * n;
    let mut c = DMatrix::<f64>::zeros(m * n, xcols + m);
    let mut rhs = DVector::<f64>::zeros(m * n);
    for k in 0..m {
        let row = k * n;
        c.view_mut((row, (k + 1) * n), (n, n)).fill_with_identity();
        c.view_mut((row, k * n), (n, n)).copy_from(&(-&frames[k].a));
        c.view_mut((row, xcols + k), (n, 1)).copy_from(&(-&frames[k + 1].x));
        rhs.rows_mut(row, n).copy_from(&z.vectors[k + 1]);
    }
    let u = min_norm_solve(&c, &rhs)?;
    let residual = (&c * &u - &rhs).amax();
    let x: Vec<DVector<f64>> = (0..=m).map(|k| u.rows(k * n, n).into_owned()).collect();
    let s: Vec<f64> = (0..m).map(|k| u[xcols + k]).collect();
    let (sup_norm, sup_norm_max) = sup_norms(&x);
    accept(BoundedSolveResult {
        x,
        s,
        sup_norm,
        sup_norm_max,
        residual,
        solver: SolverKind::LeastSquares,
        warnings: Vec::new(),
    })
}

fn accept(res: BoundedSolveResult) -> Result<BoundedSolveResult> {
    if !(res.residual <= RESIDUAL_TOL) {
        return Err(Error::ReductionIdentity {
            residual: res.residual,
            tol: RESIDUAL_TOL,
        });
    }
    Ok(res)
}

/// Normal coordinates `E_kᵀ b_k`, with a warning when `b_k` leaves `V_k`.
fn normal_coordinates(frames: &[OrbitFrame], b: &InhomSeq, warnings: &mut Vec<String>) -> Vec<DVector<f64>> {
    frames
        .iter()
        .zip(&b.vectors)
        .map(|(f, bk)| {
            let coords = f.e.transpose() * bk;
            let off = (bk - &f.e * &coords).norm();
            if off > NORMAL_TOL {
                warnings.push(format!("b_{} has a component {off:e} along X and was projected", f.k));
            }
            coords
        })
        .collect()
}

/// `v_{k+1} = B_k v_k + b_{k+1}` in `E_k` coordinates, minimizing `Σ|v_k|²`.
pub fn solve_eq_4_1(frames: &[OrbitFrame], b: &InhomSeq) -> Result<BoundedSolveResult> {
    let n = check_window(frames, b)?;
    let q = n - 1;
    let m = frames.len() - 1;
    let mut warnings = Vec::new();
    let coords = normal_coordinates(frames, b, &mut warnings);
    if q == 0 {
        return Err(Error::InvalidParameter("one-dimensional flows have no normal space".into()));
    }
    let mut c = DMatrix::<f64>::zeros(m * q, (m + 1) * q);
    let mut rhs = DVector::<f64>::zeros(m * q);
    for k in 0..m {
        let row = k * q;
        c.view_mut((row, (k + 1) * q), (q, q)).fill_with_identity();
        c.view_mut((row, k * q), (q, q)).copy_from(&(-&frames[k].b));
        rhs.rows_mut(row, q).copy_from(&coords[k + 1]);
    }
    let u = min_norm_solve(&c, &rhs)?;
    let residual = (&c * &u - &rhs).amax();
    let x: Vec<DVector<f64>> = (0..=m).map(|k| u.rows(k * q, q).into_owned()).collect();
    let (sup_norm, sup_norm_max) = sup_norms(&x);
    accept(BoundedSolveResult {
        x,
        s: Vec::new(),
        sup_norm,
        sup_norm_max,
        residual,
        solver: SolverKind::LeastSquares,
        warnings,
    })
}

/// Scalar version of the reduced system with arbitrary `B_k` and `b_k`,
/// `k = -N..=N` at index `k + N` (`B_N` and `b_{-N}` unused).
pub fn solve_scalar_4_1(bk: &[f64], b: &[f64]) -> Result<BoundedSolveResult> {
    if bk.len() != b.len() || bk.len().is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "scalar system needs 2N+1 coefficients and entries, got {} and {}",
            bk.len(),
            b.len()
        )));
    }
    let m = b.len() - 1;
    let mut c = DMatrix::<f64>::zeros(m, m + 1);
    let mut rhs = DVector::<f64>::zeros(m);
    for k in 0..m {
        c[(k, k + 1)] = 1.0;
        c[(k, k)] = -bk[k];
        rhs[k] = b[k + 1];
    }
    let u = min_norm_solve(&c, &rhs)?;
    let residual = (&c * &u - &rhs).amax();
    let x: Vec<DVector<f64>> = u.iter().map(|&v| DVector::from_element(1, v)).collect();
    let (sup_norm, sup_norm_max) = sup_norms(&x);
    accept(BoundedSolveResult {
        x,
        s: Vec::new(),
        sup_norm,
        sup_norm_max,
        residual,
        solver: SolverKind::LeastSquares,
        warnings: Vec::new(),
    })
}

/// Projects a solution of the system with time shifts (taken with `z = b`,
/// `b_k ∈ V_k`) to `v_k = E_kᵀ P_k x_k` and checks it solves the reduced system.
pub fn reduce_4_2_to_4_1(
    frames: &[OrbitFrame],
    result: &BoundedSolveResult,
    b: &InhomSeq,
) -> Result<BoundedSolveResult> {
    check_window(frames, b)?;
    if result.x.len() != frames.len() {
        return Err(Error::InvalidParameter(format!(
            "{} frames but a solution of length {}",
            frames.len(),
            result.x.len()
        )));
    }
    let mut warnings = Vec::new();
    let coords = normal_coordinates(frames, b, &mut warnings);
    let v: Vec<DVector<f64>> = frames
        .iter()
        .zip(&result.x)
        .map(|(f, x)| f.e.transpose() * (&f.proj * x))
        .collect();
    let mut residual = 0.0f64;
    for k in 0..frames.len() - 1 {
        let r = &v[k + 1] - &frames[k].b * &v[k] - &coords[k + 1];
        residual = residual.max(r.amax());
    }
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::ReductionIdentity {
            residual,
            tol: RESIDUAL_TOL,
        });
    }
    let (sup_norm, sup_norm_max) = sup_norms(&v);
    Ok(BoundedSolveResult {
        x: v,
        s: Vec::new(),
        sup_norm,
        sup_norm_max,
        residual,
        solver: result.solver,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::FlowEngine;
    use crate::orbitlin::frames::sample_orbit_frames;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;
    use std::f64::consts::PI;

    fn frames(name: &str, p: DVector<f64>, n: usize) -> Vec<OrbitFrame> {
        sample_orbit_frames(&FlowEngine::builtin(name).unwrap(), &p, n).unwrap()
    }

    #[test]
    fn zero_inhomogeneity_gives_zero() {
        let f = frames("plane-shear", dvector![0.0, 0.3], 5);
        let z = InhomSeq::zero(InhomKind::FullSpace, f.len(), 2);
        let r = solve_eq_4_2(&f, &z).unwrap();
        assert_eq!(r.sup_norm, 0.0);
        assert!(r.s.iter().all(|&s| s == 0.0));
        let r = solve_eq_4_1(&f, &InhomSeq::zero(InhomKind::Normal, f.len(), 2)).unwrap();
        assert_eq!(r.sup_norm, 0.0);
    }

    #[test]
    fn plane_shear_geometric_series() {
        let f = frames("plane-shear", dvector![0.0, 0.0], 20);
        let z = InhomSeq::new(InhomKind::FullSpace, vec![dvector![0.0, 1.0]; f.len()]).unwrap();
        let r = solve_eq_4_2(&f, &z).unwrap();
        assert_eq!(r.s.len(), 40);
        assert_abs_diff_eq!(r.sup_norm, 1.0 / (1.0 - (-1.0f64).exp()), epsilon = 1e-3);
        let b = InhomSeq::constant_normal(InhomKind::Normal, &f);
        let v = solve_eq_4_1(&f, &b).unwrap();
        let reduced = reduce_4_2_to_4_1(&f, &solve_eq_4_2(&f, &b).unwrap(), &b).unwrap();
        assert_abs_diff_eq!(reduced.sup_norm, v.sup_norm, epsilon = 1e-6);
    }

    #[test]
    fn plane_shear_min_norm_solution_closed_form() {
        // y_k = y* + c e^{-(k+N)} with c = -y*(1 + e^{-1}) minimizing the sum of squares.
        let n = 6;
        let f = frames("plane-shear", dvector![0.0, 0.0], n);
        let b = InhomSeq::constant_normal(InhomKind::Normal, &f);
        let v = solve_eq_4_1(&f, &b).unwrap();
        let q = (-1.0f64).exp();
        let ystar = 1.0 / (1.0 - q);
        let pw: Vec<f64> = (0..=2 * n).map(|j| q.powi(j as i32)).collect();
        let c = -ystar * pw.iter().sum::<f64>() / pw.iter().map(|p| p * p).sum::<f64>();
        for (j, vk) in v.x.iter().enumerate() {
            assert_abs_diff_eq!(vk[0], ystar + c * pw[j], epsilon = 1e-9);
        }
    }

    #[test]
    fn torus_irr_linear_growth() {
        for n in [10usize, 20, 40] {
            let f = frames("torus-irr", dvector![0.1, 0.2], n);
            let b = InhomSeq::constant_normal(InhomKind::FullSpace, &f);
            let r = solve_eq_4_2(&f, &b).unwrap();
            assert_abs_diff_eq!(r.sup_norm, n as f64, epsilon = 1e-6);
            let bn = InhomSeq::constant_normal(InhomKind::Normal, &f);
            let v = solve_eq_4_1(&f, &bn).unwrap();
            assert_abs_diff_eq!(v.sup_norm, n as f64, epsilon = 1e-6);
            let red = reduce_4_2_to_4_1(&f, &r, &bn).unwrap();
            assert_abs_diff_eq!(red.sup_norm, n as f64, epsilon = 1e-6);
        }
    }

    #[test]
    fn torus_ms_attracting_circle() {
        let f = frames("torus-ms", dvector![0.0, 0.0], 20);
        let b = InhomSeq::constant_normal(InhomKind::Normal, &f);
        let v = solve_eq_4_1(&f, &b).unwrap();
        assert_abs_diff_eq!(v.sup_norm, 1.0 / (1.0 - (-2.0 * PI).exp()), epsilon = 1e-3);
    }

    #[test]
    fn expanding_scalar_backward_series() {
        // v_k = -1 + c 2^{k+N}, c = 3 / (2^21 + 1) minimizes the sum of squares.
        let n = 10;
        let r = solve_scalar_4_1(&vec![2.0; 2 * n + 1], &vec![1.0; 2 * n + 1]).unwrap();
        let exact = 1.0 - 3.0 / (2f64.powi(21) + 1.0);
        assert_abs_diff_eq!(r.sup_norm, exact, epsilon = 1e-12);
        assert!((r.sup_norm - 1.0).abs() < 2e-6);
    }

    #[test]
    fn off_normal_entries_are_projected_with_warning() {
        let f = frames("plane-shear", dvector![0.0, 0.0], 3);
        let b = InhomSeq::new(InhomKind::Normal, vec![dvector![0.6, 0.8]; f.len()]).unwrap();
        let v = solve_eq_4_1(&f, &b).unwrap();
        assert!(!v.warnings.is_empty());
        let bn = InhomSeq::new(InhomKind::Normal, vec![dvector![0.0, 0.8]; f.len()]).unwrap();
        assert_abs_diff_eq!(v.sup_norm, solve_eq_4_1(&f, &bn).unwrap().sup_norm, epsilon = 1e-12);
    }

    #[test]
    fn reduction_of_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for name in ["torus-ms", "torus-irr", "plane-shear"] {
            for _ in 0..3 {
                let p = dvector![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                let f = frames(name, p, rng.gen_range(2..8));
                let b = InhomSeq::random(InhomKind::Normal, &f, &mut rng);
                let full = solve_eq_4_2(&f, &b).unwrap();
                let red = reduce_4_2_to_4_1(&f, &full, &b).unwrap();
                assert!(red.residual <= RESIDUAL_TOL);
                assert!(red.sup_norm <= full.sup_norm + 1e-12);
            }
        }
    }

    #[test]
    fn rejects_oversized_entries() {
        assert!(InhomSeq::new(InhomKind::FullSpace, vec![dvector![1.0, 1.0]]).is_err());
    }
}
