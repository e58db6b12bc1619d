use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::{FlowEngine, Point, Tangent};

/// Linearized data at `p_k = f^k(p)`, `f = Φ(1, ·)`.
#[derive(Clone, Debug)]
pub struct OrbitFrame {
    pub k: i64,
    pub p: Point,
    /// `X(p_k)`.
    pub x: Tangent,
    /// `A_k = ∂Φ(1, ·)/∂x` at `p_k`.
    pub a: DMatrix<f64>,
    /// Orthogonal projection with kernel `span{X_k}`.
    pub proj: DMatrix<f64>,
    /// Orthonormal basis of `X_k⊥`, `n × (n-1)`.
    pub e: DMatrix<f64>,
    /// `E_{k+1}ᵀ P_{k+1} A_k E_k`.
    pub b: DMatrix<f64>,
}

/// Householder completion of `X/|X|`: the reflection sending `u` to `-sign(u_m) e_m`,
/// `m` the largest-magnitude component, with column `m` dropped.
pub fn normal_basis(x: &Tangent) -> DMatrix<f64> {
    let n = x.len();
    let u = x / x.norm();
    let m = u.iamax();
    let sigma = if u[m] < 0.0 { -1.0 } else { 1.0 };
    let mut w = u.clone();
    w[m] += sigma;
    let h = DMatrix::<f64>::identity(n, n) - (&w * w.transpose()) * (2.0 / w.norm_squared());
    let cols: Vec<usize> = (0..n).filter(|&i| i != m).collect();
    h.select_columns(&cols)
}

pub fn projection(x: &Tangent) -> DMatrix<f64> {
    let n = x.len();
    let u = x / x.norm();
    DMatrix::<f64>::identity(n, n) - &u * u.transpose()
}

/// Frames for `k = -N..=N`. The backward half is found by integrating `Φ(-1, ·)`,
/// every `A_k` by the forward variational equation.
pub fn sample_orbit_frames(engine: &FlowEngine, p: &Point, n: usize) -> Result<Vec<OrbitFrame>> {
    engine.space().check_dim(p)?;
    let space = engine.space();
    let m = 2 * n + 2;
    let mut points = vec![space.canonical(p); m];
    // points[i] = p_{i - N}, i = 0..=2N+1
    for i in (0..n).rev() {
        points[i] = engine.flow_map(-1.0, &points[i + 1])?;
    }
    let mut jacobians = Vec::with_capacity(m - 1);
    for i in 0..m - 1 {
        let (next, a) = engine.flow_with_jacobian(1.0, &points[i])?;
        if i >= n {
            points[i + 1] = next;
        }
        jacobians.push(a);
    }
    let margin = engine.field().nonsingular_margin;
    let mut fields = Vec::with_capacity(m);
    for (i, q) in points.iter().enumerate() {
        let x = engine.vector_field(q);
        let norm = x.norm();
        if !(norm >= 0.5 * margin) {
            return Err(Error::NearSingular {
                k: i as i64 - n as i64,
                norm,
                margin,
            });
        }
        fields.push(x);
    }
    let bases: Vec<DMatrix<f64>> = fields.iter().map(normal_basis).collect();
    let projs: Vec<DMatrix<f64>> = fields.iter().map(projection).collect();
    let mut frames = Vec::with_capacity(2 * n + 1);
    for i in 0..=2 * n {
        let b = bases[i + 1].transpose() * &projs[i + 1] * &jacobians[i] * &bases[i];
        frames.push(OrbitFrame {
            k: i as i64 - n as i64,
            p: points[i].clone(),
            x: fields[i].clone(),
            a: jacobians[i].clone(),
            proj: projs[i].clone(),
            e: bases[i].clone(),
            b,
        });
    }
    Ok(frames)
}

/// Worst relative errors of the frame identities over consecutive frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameIdentityReport {
    /// `max |A_k X_k - X_{k+1}| / |X_{k+1}|`.
    pub flow_invariance: f64,
    /// `max ‖P_{k+1}A_k - P_{k+1}A_kP_k‖ / ‖A_k‖`.
    pub projection: f64,
    /// `max ‖B_k - E_{k+1}ᵀA_kE_k‖`.
    pub reduced_form: f64,
    /// Largest `|P_k X_k|`, `‖P_k² - P_k‖`, `‖P_k - P_kᵀ‖`, `‖E_kᵀE_k - I‖`, `|E_kᵀX_k|/|X_k|`.
    pub frame_shape: f64,
}

pub fn check_frame_identities(frames: &[OrbitFrame]) -> FrameIdentityReport {
    let mut rep = FrameIdentityReport::default();
    for f in frames {
        let n = f.x.len();
        let shape = [
            (&f.proj * &f.x).norm() / f.x.norm(),
            (&f.proj * &f.proj - &f.proj).norm(),
            (&f.proj - f.proj.transpose()).norm(),
            (f.e.transpose() * &f.e - DMatrix::<f64>::identity(n - 1, n - 1)).norm(),
            (f.e.transpose() * &f.x).norm() / f.x.norm(),
        ];
        rep.frame_shape = shape.iter().fold(rep.frame_shape, |a, &b| a.max(b));
    }
    for w in frames.windows(2) {
        let (f, g) = (&w[0], &w[1]);
        let ax = &f.a * &f.x;
        rep.flow_invariance = rep.flow_invariance.max((&ax - &g.x).norm() / g.x.norm());
        let pa = &g.proj * &f.a;
        let diff = &pa - &pa * &f.proj;
        rep.projection = rep.projection.max(diff.norm() / f.a.norm());
        let reduced = g.e.transpose() * &f.a * &f.e;
        rep.reduced_form = rep.reduced_form.max((&f.b - reduced).norm());
    }
    rep
}
