use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::FlowEngine;
use super::field::SampleBox;
use super::space::Point;
use crate::error::{Error, Result};

/// Where and how densely the uniform-bound constants are sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub boxes: Vec<SampleBox>,
    pub points_per_axis: usize,
    /// Number of equispaced times in `[-1, 1]`.
    pub time_samples: usize,
    /// Separation of the point pairs used for the Lipschitz ratio.
    pub lipschitz_offset: f64,
    /// Radii `|h₁| + |h₂|` at which the Taylor remainder is measured.
    pub g1_radii: Vec<f64>,
    pub g1_points_per_axis: usize,
    pub g1_times: Vec<f64>,
}

impl SampleSpec {
    pub fn for_engine(engine: &FlowEngine) -> Self {
        SampleSpec {
            boxes: engine.field().domain.clone(),
            points_per_axis: 7,
            time_samples: 9,
            lipschitz_offset: 1e-3,
            g1_radii: vec![1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1],
            g1_points_per_axis: 3,
            g1_times: vec![-1.0, 0.0, 1.0],
        }
    }

    fn points(&self, per_axis: usize) -> Vec<Point> {
        self.boxes.iter().flat_map(|b| b.grid(per_axis)).collect()
    }
}

/// Sampled constants of the uniform-bound condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UbConstants {
    /// sup ‖∂Φ(s,x)/∂x‖ over the sample, `s ∈ [-1, 1]`.
    pub q1: f64,
    /// sup |X(x)|.
    pub q2: f64,
    /// sup |Φ(u,x) − x| / |u|.
    pub q3: f64,
    /// sup Lipschitz ratio of Φ(s, ·).
    pub q4: f64,
    /// `(radius, worst remainder)` after isotonic post-processing.
    pub g1_samples: Vec<(f64, f64)>,
    /// Remainders as measured, before the monotone envelope.
    pub g1_raw: Vec<(f64, f64)>,
    pub sample: SampleSpec,
}

/// Value of the interpolated modulus, flagged when extrapolated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct G1Value {
    pub value: f64,
    pub extrapolated: bool,
}

fn time_grid(count: usize) -> Vec<f64> {
    let count = count.max(2);
    (0..count)
        .map(|i| -1.0 + 2.0 * i as f64 / (count - 1) as f64)
        .collect()
}

fn spectral_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
}

/// Unit directions used to probe `h₂`: ± coordinate axes and, in the plane,
/// the four diagonals.
fn probe_directions(n: usize) -> Vec<Point> {
    let mut dirs = Vec::new();
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut e = Point::zeros(n);
            e[i] = sign;
            dirs.push(e);
        }
    }
    if n == 2 {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in [(r, r), (r, -r), (-r, r), (-r, -r)] {
            dirs.push(Point::from_vec(vec![a, b]));
        }
    }
    dirs
}

/// Running maximum: the smallest nondecreasing majorant of the samples.
fn isotonic_envelope(raw: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = raw.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut running = 0.0f64;
    sorted
        .into_iter()
        .map(|(r, g)| {
            running = running.max(g);
            (r, running)
        })
        .collect()
}

/// Samples Q₁–Q₄ and the Taylor-remainder table on the boxes of `sample`.
pub fn estimate_ub_constants(engine: &FlowEngine, sample: &SampleSpec) -> Result<UbConstants> {
    let points = sample.points(sample.points_per_axis);
    if points.is_empty() || sample.time_samples == 0 {
        return Err(Error::EmptySample("no sample points for the uniform bounds".into()));
    }
    let space = engine.space();
    let n = engine.dim();
    let times = time_grid(sample.time_samples);
    let dirs = probe_directions(n);

    let per_point: Vec<(f64, f64, f64, f64)> = points
        .par_iter()
        .map(|x| -> Result<(f64, f64, f64, f64)> {
            let q2 = engine.vector_field(x).norm();
            let (mut q1, mut q3, mut q4) = (0.0f64, 0.0f64, 0.0f64);
            for &s in &times {
                let (y, jac) = engine.flow_with_jacobian_lifted(s, x)?;
                q1 = q1.max(spectral_norm(&jac));
                if s != 0.0 {
                    q3 = q3.max((&y - x).norm() / s.abs());
                }
                for dir in &dirs {
                    let other = x + dir * sample.lipschitz_offset;
                    let y2 = engine.flow_map_lifted(s, &other)?;
                    q4 = q4.max(space.displacement(&y, &y2).norm() / sample.lipschitz_offset);
                }
            }
            Ok((q1, q2, q3, q4))
        })
        .collect::<Result<_>>()?;

    let (mut q1, mut q2, mut q3, mut q4) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (a, b, c, d) in per_point {
        q1 = q1.max(a);
        q2 = q2.max(b);
        q3 = q3.max(c);
        q4 = q4.max(d);
    }

    let g1_raw = sample_taylor_remainder(engine, sample)?;
    let g1_samples = isotonic_envelope(&g1_raw);
    Ok(UbConstants {
        q1,
        q2,
        q3,
        q4,
        g1_samples,
        g1_raw,
        sample: sample.clone(),
    })
}

fn sample_taylor_remainder(engine: &FlowEngine, sample: &SampleSpec) -> Result<Vec<(f64, f64)>> {
    let points = sample.points(sample.g1_points_per_axis);
    if points.is_empty() || sample.g1_radii.is_empty() {
        return Err(Error::EmptySample("no sample points for the Taylor remainder".into()));
    }
    let n = engine.dim();
    let dirs = probe_directions(n);
    let mut bases = Vec::new();
    for x in &points {
        for &t in &sample.g1_times {
            bases.push((x.clone(), t));
        }
    }
    let worst: Vec<Vec<f64>> = bases
        .par_iter()
        .map(|(x, t)| -> Result<Vec<f64>> {
            let (y, jac) = engine.flow_with_jacobian_lifted(*t, x)?;
            let xf = engine.vector_field(&y);
            let mut out = Vec::with_capacity(sample.g1_radii.len());
            for &r in &sample.g1_radii {
                let mut offsets: Vec<(f64, Point)> = vec![(r, Point::zeros(n)), (-r, Point::zeros(n))];
                for d in &dirs {
                    offsets.push((0.0, d * r));
                    offsets.push((0.5 * r, d * (0.5 * r)));
                    offsets.push((-0.5 * r, d * (0.5 * r)));
                }
                let mut worst = 0.0f64;
                for (h1, h2) in offsets {
                    let moved = engine.flow_map_lifted(t + h1, &(x + &h2))?;
                    let rem = moved - &y - &xf * h1 - &jac * &h2;
                    worst = worst.max(rem.norm());
                }
                out.push(worst);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(sample
        .g1_radii
        .iter()
        .enumerate()
        .map(|(i, &r)| (r, worst.iter().map(|w| w[i]).fold(0.0f64, f64::max)))
        .collect())
}

impl UbConstants {
    /// Monotone piecewise-linear interpolation of the remainder table,
    /// anchored at `g₁(0) = 0`; extrapolates with the last slope.
    pub fn g1_modulus(&self, s: f64) -> G1Value {
        let s = s.max(0.0);
        if s == 0.0 || self.g1_samples.is_empty() {
            return G1Value {
                value: 0.0,
                extrapolated: s > 0.0,
            };
        }
        let mut prev = (0.0, 0.0);
        for &(r, g) in &self.g1_samples {
            if s <= r {
                let w = (s - prev.0) / (r - prev.0);
                return G1Value {
                    value: prev.1 + w * (g - prev.1),
                    extrapolated: false,
                };
            }
            prev = (r, g);
        }
        let slope = match self.g1_samples.len() {
            1 => prev.1 / prev.0,
            k => {
                let (r0, g0) = self.g1_samples[k - 2];
                (prev.1 - g0) / (prev.0 - r0)
            }
        };
        G1Value {
            value: prev.1 + slope.max(0.0) * (s - prev.0),
            extrapolated: true,
        }
    }
}
