use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::solve::{BoundedSolveResult, SolverKind};
use crate::error::{Error, Result};

/// Grid size of the dense search over the free initial value.
pub const ORACLE_GRID: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleObjective {
    /// `Σ v_k²`, the objective of the least-squares solver.
    Quadratic,
    /// `max |v_k|`.
    Sup,
}

fn trajectory(bk: &[f64], b: &[f64], c: f64, out: &mut [f64]) {
    out[0] = c;
    for k in 0..out.len() - 1 {
        out[k + 1] = bk[k] * out[k] + b[k + 1];
    }
}

fn objective(v: &[f64], obj: OracleObjective) -> f64 {
    match obj {
        OracleObjective::Quadratic => v.iter().map(|x| x * x).sum(),
        OracleObjective::Sup => v.iter().fold(0.0, |m, x| f64::max(m, x.abs())),
    }
}

/// Brute-force minimizer of the scalar system `v_{k+1} = B_k v_k + b_{k+1}` over
/// its only free parameter `v_{-N}`: a dense grid on the interval that must contain
/// the minimizer, then golden-section refinement of the bracketing cell.
pub fn scalar_oracle(bk: &[f64], b: &[f64], obj: OracleObjective) -> Result<BoundedSolveResult> {
    if bk.len() != b.len() || b.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "scalar system needs matching coefficient and entry lists, got {} and {}",
            bk.len(),
            b.len()
        )));
    }
    let mut v = vec![0.0; b.len()];
    let mut f = |c: f64| {
        trajectory(bk, b, c, &mut v);
        objective(&v, obj)
    };
    // |v_{-N}|² ≤ Q(c*) ≤ Q(0), and |v_{-N}| ≤ sup(c*) ≤ sup(0).
    let radius = match obj {
        OracleObjective::Quadratic => f(0.0).sqrt(),
        OracleObjective::Sup => f(0.0),
    };
    let mut best = 0.0;
    if radius > 0.0 {
        let h = 2.0 * radius / (ORACLE_GRID - 1) as f64;
        let mut best_i = 0;
        let mut best_f = f64::INFINITY;
        for i in 0..ORACLE_GRID {
            let fi = f(-radius + h * i as f64);
            if fi < best_f {
                best_f = fi;
                best_i = i;
            }
        }
        let mut lo = -radius + h * best_i.saturating_sub(1) as f64;
        let mut hi = -radius + h * (best_i + 1).min(ORACLE_GRID - 1) as f64;
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = hi - g * (hi - lo);
        let mut x2 = lo + g * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..200 {
            if hi - lo <= 1e-17 * (1.0 + lo.abs().max(hi.abs())) {
                break;
            }
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = f(x2);
            }
        }
        best = if f1 <= f2 { x1 } else { x2 };
        if best_f < f(best) {
            best = -radius + h * best_i as f64;
        }
    }
    trajectory(bk, b, best, &mut v);
    let residual = (0..v.len() - 1)
        .map(|k| (v[k + 1] - bk[k] * v[k] - b[k + 1]).abs())
        .fold(0.0, f64::max);
    let sup = objective(&v, OracleObjective::Sup);
    Ok(BoundedSolveResult {
        x: v.iter().map(|&x| DVector::from_element(1, x)).collect(),
        s: Vec::new(),
        sup_norm: sup,
        sup_norm_max: sup,
        residual,
        solver: SolverKind::ExhaustiveOracle,
        warnings: Vec::new(),
    })
}
