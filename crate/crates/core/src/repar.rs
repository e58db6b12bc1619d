//! Piecewise-linear time reparametrizations and the classes `Rep(δ)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack allowed on slope bands so exact boundary cases survive rounding.
pub const SLOPE_TOL: f64 = 1e-12;

/// Increasing piecewise-linear homeomorphism `α` of the line with `α(0) = 0`.
///
/// Outside the knot range `α` continues with the terminal slopes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reparam {
    knots: Vec<f64>,
    values: Vec<f64>,
}

/// Result of a `Rep(δ)` check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Membership {
    Member,
    /// First segment `[t, s]` whose slope leaves `[1-δ, 1+δ]`.
    Violated { t: f64, s: f64, slope: f64 },
}

impl Membership {
    pub fn is_member(&self) -> bool {
        matches!(self, Membership::Member)
    }
}

impl Reparam {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() || knots.len() < 2 {
            return Err(Error::InvalidParameter(
                "a reparametrization needs at least two knots with matching values".into(),
            ));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) || values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("knots and values must be strictly increasing".into()));
        }
        match knots.iter().position(|&k| k == 0.0) {
            Some(i) if values[i] == 0.0 => {}
            _ => {
                return Err(Error::InvalidParameter("0 must be a knot with value 0".into()));
            }
        }
        Ok(Reparam { knots, values })
    }

    pub fn identity() -> Self {
        Reparam {
            knots: vec![-1.0, 0.0, 1.0],
            values: vec![-1.0, 0.0, 1.0],
        }
    }

    /// `t ↦ c·t`.
    pub fn linear(c: f64) -> Result<Self> {
        Reparam::new(vec![-1.0, 0.0, 1.0], vec![-c, 0.0, c])
    }

    /// Integer knots on `[-horizon, horizon]` with the given slopes, left to right.
    pub fn from_slopes(horizon: usize, slopes: &[f64]) -> Result<Self> {
        let h = horizon as i64;
        if slopes.len() != 2 * horizon {
            return Err(Error::InvalidParameter(format!(
                "expected {} slopes, got {}",
                2 * horizon,
                slopes.len()
            )));
        }
        let knots: Vec<f64> = (-h..=h).map(|k| k as f64).collect();
        let mut values = vec![0.0; knots.len()];
        let zero = horizon;
        for i in zero..2 * horizon {
            values[i + 1] = values[i] + slopes[i];
        }
        for i in (0..zero).rev() {
            values[i] = values[i + 1] - slopes[i];
        }
        Reparam::new(knots, values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(k, v)| (v[1] - v[0]) / (k[1] - k[0]))
            .collect()
    }

    fn segment(&self, t: f64) -> usize {
        let last = self.knots.len() - 2;
        match self.knots.partition_point(|&k| k <= t) {
            0 => 0,
            i => (i - 1).min(last),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let (k0, k1) = (self.knots[i], self.knots[i + 1]);
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        v0 + (v1 - v0) * (t - k0) / (k1 - k0)
    }

    /// Slope-band test: a piecewise-linear `α` lies in `Rep(δ)` iff every
    /// segment slope lies in `[1-δ, 1+δ]`.
    pub fn membership(&self, delta: f64) -> Membership {
        for (i, slope) in self.slopes().into_iter().enumerate() {
            if (slope - 1.0).abs() > delta + SLOPE_TOL {
                return Membership::Violated {
                    t: self.knots[i],
                    s: self.knots[i + 1],
                    slope,
                };
            }
        }
        Membership::Member
    }

    /// Smallest `δ` with `α ∈ Rep(δ)`.
    pub fn deviation(&self) -> f64 {
        self.slopes()
            .into_iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Functional inverse, obtained by swapping knots and values.
    pub fn invert(&self) -> Reparam {
        Reparam {
            knots: self.values.clone(),
            values: self.knots.clone(),
        }
    }

    /// `self ∘ other`, i.e. `t ↦ self(other(t))`.
    pub fn compose(&self, other: &Reparam) -> Reparam {
        let inner_range = (other.values[0], *other.values.last().unwrap());
        let mut knots: Vec<f64> = other.knots.clone();
        for &k in &self.knots {
            if k > inner_range.0 && k < inner_range.1 {
                knots.push(other.invert().eval(k));
            }
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * (1.0 + b.abs()));
        // Keep 0 exact so α(0) = 0 survives.
        for k in knots.iter_mut() {
            if k.abs() <= 1e-15 {
                *k = 0.0;
            }
        }
        let values = knots
            .iter()
            .map(|&t| if t == 0.0 { 0.0 } else { self.eval(other.eval(t)) })
            .collect();
        Reparam { knots, values }
    }

    /// Integer knots on `[-horizon, horizon]` with i.i.d. slopes uniform in `[1-δ, 1+δ]`.
    pub fn random(delta: f64, horizon: usize, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidParameter(format!("delta {delta} outside [0, 1)")));
        }
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slopes: Vec<f64> = (0..2 * horizon)
            .map(|_| {
                if delta == 0.0 {
                    1.0
                } else {
                    rng.gen_range(1.0 - delta..=1.0 + delta)
                }
            })
            .collect();
        Reparam::from_slopes(horizon, &slopes)
    }
}

/// Class radius guaranteed for `α⁻¹` when `α ∈ Rep(δ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseBound {
    pub delta: f64,
    /// False when `δ > 1/2`, where the `2δ` bound is not claimed.
    pub within_range: bool,
}

pub fn inverse_rep_bound(delta: f64) -> InverseBound {
    InverseBound {
        delta: 2.0 * delta,
        within_range: delta <= 0.5,
    }
}

/// Class radius of `α ∘ β` for `α ∈ Rep(δ₁)`, `β ∈ Rep(δ₂)`.
pub fn compose_rep_bound(d1: f64, d2: f64) -> f64 {
    d1 + d2 + d1 * d2
}
