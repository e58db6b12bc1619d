use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::Tangent;

/// Quintic smoothstep `u³(10 - 15u + 6u²)`, clamped to `[0, 1]`.
pub fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// Section bump `γ : [-τ, τ] × [0, r] → [0, 1]`.
///
/// `γ(t, s) = S((t+τ)/(τ/2)) · S((r-s)/(r/2))`: zero on `t = -τ` and on
/// `s = r`, one on `[-τ/2, τ] × [0, r/2]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpGamma {
    pub tau: f64,
    pub r: f64,
}

const DOMAIN_SLACK: f64 = 1e-12;

impl BumpGamma {
    pub fn new(tau: f64, r: f64) -> Result<Self> {
        if !(tau > 0.0 && r > 0.0 && tau.is_finite() && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau = {tau}, r = {r}")));
        }
        if !(100.0 * tau < 1.0 - tau) {
            return Err(Error::InvalidParameter(format!(
                "tau = {tau} violates 100 tau < 1 - tau"
            )));
        }
        Ok(BumpGamma { tau, r })
    }

    /// Checked evaluation on the closed domain.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        let tol_t = DOMAIN_SLACK * self.tau.max(1.0);
        let tol_s = DOMAIN_SLACK * self.r.max(1.0);
        if t < -self.tau - tol_t || t > self.tau + tol_t || s < -tol_s || s > self.r + tol_s {
            return Err(Error::InvalidParameter(format!(
                "gamma argument ({t}, {s}) outside [-{}, {}] x [0, {}]",
                self.tau, self.tau, self.r
            )));
        }
        Ok(self.weight(t, s))
    }

    /// Unchecked evaluation; arguments beyond the domain are clamped.
    pub fn weight(&self, t: f64, s: f64) -> f64 {
        smoothstep((t + self.tau) / (0.5 * self.tau)) * smoothstep((self.r - s) / (0.5 * self.r))
    }
}

/// `Γ(x, y, v, s) = γ(s, |v|)·x + (1 - γ(s, |v|))·y`.
pub fn interp_gamma(x: &Tangent, y: &Tangent, v: &Tangent, s: f64, b: &BumpGamma) -> Tangent {
    let g = b.weight(s, v.norm());
    blend(g, x, y)
}

pub(crate) fn blend(g: f64, x: &Tangent, y: &Tangent) -> Tangent {
    if g == 1.0 {
        x.clone()
    } else if g == 0.0 {
        y.clone()
    } else {
        x * g + y * (1.0 - g)
    }
}
