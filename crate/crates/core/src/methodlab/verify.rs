use rayon::prelude::*;

use super::construct::DMethodInstance;
use crate::error::Result;
use crate::flowcore::{FlowEngine, Point};

/// A family of trajectories `t ↦ Ψ(t, x)`.
pub trait Method: Sync {
    fn eval(&self, t: f64, x: &Point) -> Result<Point>;
}

impl Method for FlowEngine {
    fn eval(&self, t: f64, x: &Point) -> Result<Point> {
        self.flow_map(t, x)
    }
}

/// The constructed method is tested in its shifted form `Θ`, the one with `Θ(0, ·) = Id`.
impl Method for DMethodInstance {
    fn eval(&self, t: f64, x: &Point) -> Result<Point> {
        self.theta(t, x)
    }
}

/// Adapter for closures.
pub struct FnMethod<F>(pub F);

impl<F> Method for FnMethod<F>
where
    F: Fn(f64, &Point) -> Result<Point> + Sync,
{
    fn eval(&self, t: f64, x: &Point) -> Result<Point> {
        (self.0)(t, x)
    }
}

/// Base times `t`, offsets `s ∈ [-1, 1]` and starting points to test.
#[derive(Clone, Debug)]
pub struct VerifyGrid {
    pub times: Vec<f64>,
    pub offsets: Vec<f64>,
    pub points: Vec<Point>,
}

impl VerifyGrid {
    pub fn uniform(t_lo: f64, t_hi: f64, t_count: usize, s_count: usize, points: Vec<Point>) -> Self {
        let grid = |a: f64, b: f64, n: usize| -> Vec<f64> {
            if n < 2 {
                return vec![a];
            }
            (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
        };
        VerifyGrid {
            times: grid(t_lo, t_hi, t_count),
            offsets: grid(-1.0, 1.0, s_count),
            points,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VerifyOutcome {
    Pass { max_defect: f64 },
    Fail { t: f64, s: f64, x: Point, defect: f64 },
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, VerifyOutcome::Pass { .. })
    }
}

/// Checks `Ψ(0, x) = x` and `dist(Ψ(t+s, x), Φ(s, Ψ(t, x))) < d` on the grid,
/// reporting the first violation in grid order.
pub fn verify_dmethod(method: &dyn Method, engine: &FlowEngine, d: f64, grid: &VerifyGrid) -> Result<VerifyOutcome> {
    let space = engine.space();
    for x in &grid.points {
        let x0 = method.eval(0.0, x)?;
        let defect = space.distance(&x0, x);
        if defect > 1e-12 {
            return Ok(VerifyOutcome::Fail {
                t: 0.0,
                s: 0.0,
                x: x.clone(),
                defect,
            });
        }
    }
    let jobs: Vec<(usize, f64)> = (0..grid.points.len())
        .flat_map(|i| grid.times.iter().map(move |&t| (i, t)))
        .collect();
    let rows: Vec<Vec<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(i, t)| -> Result<Vec<(f64, f64)>> {
            let x = &grid.points[i];
            let at_t = method.eval(t, x)?;
            grid.offsets
                .iter()
                .map(|&s| {
                    let lhs = method.eval(t + s, x)?;
                    let rhs = engine.flow_map(s, &at_t)?;
                    Ok((s, space.distance(&lhs, &rhs)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut max_defect = 0.0f64;
    for (&(i, t), row) in jobs.iter().zip(&rows) {
        for &(s, defect) in row {
            if !(defect < d) {
                return Ok(VerifyOutcome::Fail {
                    t,
                    s,
                    x: grid.points[i].clone(),
                    defect,
                });
            }
            max_defect = max_defect.max(defect);
        }
    }
    Ok(VerifyOutcome::Pass { max_defect })
}
