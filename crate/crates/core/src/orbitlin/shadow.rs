use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::{Point, Tangent};
use crate::methodlab::DMethodInstance;
use crate::repar::Reparam;

pub const SCHEMA_VERSION: u32 = 1;

/// Largest relative spread of the ratio ladder that still counts as flat.
pub const FLATNESS_TOL: f64 = 0.2;

/// Effort limits of [`shadow_search`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowBudget {
    /// Objective evaluations, each one full method trajectory.
    pub max_evals: usize,
    /// Samples of `t` per unit time on `[-1, 2N+1]`.
    pub samples_per_unit: usize,
    /// Smallest step of the point search, relative to `d`.
    pub min_step: f64,
}

impl Default for ShadowBudget {
    fn default() -> Self {
        ShadowBudget {
            max_evals: 160,
            samples_per_unit: 16,
            min_step: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShadowStatus {
    /// `sup ≤ L·d` was reached.
    Found,
    /// Budget spent above `L·d`. Says nothing about the absence of a shadow.
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowResult {
    pub status: ShadowStatus,
    pub p_hat: Vec<f64>,
    pub beta: Reparam,
    /// Sampled `sup_t dist(Φ(t, p), Θ(β(t), p̂))`.
    pub sup: f64,
    /// `L·d`.
    pub target: f64,
    pub evaluations: usize,
}

struct Objective<'a> {
    inst: &'a DMethodInstance,
    p: Point,
    times: Vec<f64>,
    exact: Vec<Point>,
    horizon: usize,
}

impl<'a> Objective<'a> {
    fn new(inst: &'a DMethodInstance, p: &Point, samples_per_unit: usize) -> Result<Self> {
        let engine = inst.engine();
        let m = 2 * inst.n();
        let count = (m + 2) * samples_per_unit.max(1);
        let dt = 1.0 / samples_per_unit.max(1) as f64;
        let times: Vec<f64> = (0..=count).map(|i| -1.0 + i as f64 * dt).collect();
        let mut exact = Vec::with_capacity(times.len());
        let mut cur = engine.flow_map(-1.0, p)?;
        for _ in &times {
            exact.push(cur.clone());
            cur = engine.flow_map(dt, &cur)?;
        }
        Ok(Objective {
            inst,
            p: engine.space().canonical(p),
            times,
            exact,
            horizon: m + 2,
        })
    }

    fn point(&self, v: &Tangent) -> Point {
        self.inst.engine().space().exp(&self.p, v)
    }

    fn eval(&self, v: &Tangent, beta: &Reparam) -> Result<f64> {
        let x = self.point(v);
        let track = self.inst.track(&x)?;
        let mut cursor = self.inst.cursor(&track);
        let space = self.inst.engine().space();
        let mut sup = 0.0f64;
        for (t, e) in self.times.iter().zip(&self.exact) {
            let y = cursor.at(beta.eval(*t))?;
            sup = sup.max(space.distance(e, &y));
        }
        Ok(sup)
    }
}

/// Best-effort search for a shadow `(p̂, β)` of `t ↦ Φ(t, p)` among trajectories of
/// `Θ`: `p̂` ranges over `B_r(p)` and `β` over piecewise-linear reparametrizations
/// with unit knots and slopes in `[1 - L·d, 1 + L·d]`.
///
/// The point is improved first by per-axis three-point quadratic fits with step
/// halving. Slopes are tuned only if that leaves the sup above `L·d`.
pub fn shadow_search(inst: &DMethodInstance, p: &Point, l: f64, budget: &ShadowBudget) -> Result<ShadowResult> {
    if !(l > 0.0) {
        return Err(Error::InvalidParameter(format!("shadowing constant L = {l} must be positive")));
    }
    let d = inst.d();
    let r = inst.config().r;
    let target = l * d;
    let obj = Objective::new(inst, p, budget.samples_per_unit)?;
    let dim = p.len();
    let mut evals = 0usize;
    let mut v = Tangent::zeros(dim);
    let mut beta = Reparam::identity();
    let mut best = obj.eval(&v, &beta)?;
    evals += 1;

    let clamp = |w: Tangent| -> Tangent {
        let n = w.norm();
        if n >= r {
            w * (0.999 * r / n)
        } else {
            w
        }
    };

    let point_search = |v: &mut Tangent, best: &mut f64, beta: &Reparam, evals: &mut usize| -> Result<()> {
        let mut h = d;
        while h > budget.min_step * d && *evals + 2 * dim < budget.max_evals {
            let probes: Vec<Tangent> = (0..dim)
                .flat_map(|i| {
                    [-1.0, 1.0].map(|sgn| {
                        let mut w = v.clone();
                        w[i] += sgn * h;
                        clamp(w)
                    })
                })
                .collect();
            let vals: Vec<f64> = probes
                .par_iter()
                .map(|w| obj.eval(w, beta))
                .collect::<Result<_>>()?;
            *evals += probes.len();
            let mut step = Tangent::zeros(dim);
            for i in 0..dim {
                let (fm, fp) = (vals[2 * i], vals[2 * i + 1]);
                let curv = fp - 2.0 * *best + fm;
                if curv > 0.0 {
                    step[i] = (0.5 * h * (fm - fp) / curv).clamp(-2.0 * h, 2.0 * h);
                }
            }
            let mut cand_v = None;
            let mut cand_f = *best;
            if step.norm() > 0.0 {
                let w = clamp(&*v + &step);
                let f = obj.eval(&w, beta)?;
                *evals += 1;
                if f < cand_f {
                    cand_f = f;
                    cand_v = Some(w);
                }
            }
            for (w, &f) in probes.iter().zip(&vals) {
                if f < cand_f {
                    cand_f = f;
                    cand_v = Some(w.clone());
                }
            }
            match cand_v {
                Some(w) => {
                    *v = w;
                    *best = cand_f;
                }
                None => h *= 0.5,
            }
        }
        Ok(())
    };

    point_search(&mut v, &mut best, &beta, &mut evals)?;

    if best > target {
        let horizon = obj.horizon;
        let mut slopes = vec![1.0; 2 * horizon];
        let band = l * d;
        let mut eta = 0.5 * band;
        // Only segments met by the sampled times t ∈ [-1, 2N+1] matter.
        let active: Vec<usize> = (horizon - 1..2 * horizon - 1).collect();
        while eta > band / 64.0 && evals + 2 < budget.max_evals && best > target {
            let mut improved = false;
            for &i in &active {
                if evals + 2 > budget.max_evals {
                    break;
                }
                let cands: Vec<Reparam> = [-eta, eta]
                    .iter()
                    .map(|&e| {
                        let mut s = slopes.clone();
                        s[i] = (s[i] + e).clamp(1.0 - band, 1.0 + band);
                        Reparam::from_slopes(horizon, &s)
                    })
                    .collect::<Result<_>>()?;
                let vals: Vec<f64> = cands
                    .par_iter()
                    .map(|b| obj.eval(&v, b))
                    .collect::<Result<_>>()?;
                evals += 2;
                let (k, &f) = vals
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                if f < best {
                    best = f;
                    beta = cands[k].clone();
                    slopes = beta.slopes();
                    improved = true;
                }
            }
            if !improved {
                eta *= 0.5;
            }
        }
        if best > target {
            point_search(&mut v, &mut best, &beta, &mut evals)?;
        }
    }

    Ok(ShadowResult {
        status: if best <= target {
            ShadowStatus::Found
        } else {
            ShadowStatus::Inconclusive
        },
        p_hat: obj.point(&v).iter().copied().collect(),
        beta,
        sup: best,
        target,
        evaluations: evals,
    })
}

/// Whether the replayed times sit on the `γ = 1` plateaus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub passed: bool,
    /// `max_j |σ_j|`, `j = 1..=2N`.
    pub worst_offset: f64,
    /// `τ/2`.
    pub limit: f64,
    /// `|v| ≤ r/2`.
    pub radius_ok: bool,
    /// First index `k = j - N` with `|σ_j| > τ/2`.
    pub first_failure: Option<i64>,
}

/// Replay of a shadow of `Φ(·, p₋N)` by `Θ₁`. Sequences are indexed by
/// `j = k + N ∈ [0, 2N]` and vectors are chart coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowReplayReport {
    pub d: f64,
    pub tau: f64,
    pub n: usize,
    pub kappa: u8,
    pub l: f64,
    pub shadow: ShadowResult,
    /// `v = log_{p₋N}(p̂)`.
    pub v: Vec<f64>,
    /// `σ_j = β(j) - j`.
    pub sigma: Vec<f64>,
    /// `s_j = σ_j / d`.
    pub s: Vec<f64>,
    /// `y_j = Θ(β(j), p̂)`.
    pub y: Vec<Vec<f64>>,
    /// `c_j = Θ(j, p̂)`.
    pub centers: Vec<Vec<f64>>,
    /// `W_j = log_{p̂_j}(c_j)`.
    pub big_w: Vec<Vec<f64>>,
    /// `w_j = log_{p̂_j}(y_j) / d`.
    pub w: Vec<Vec<f64>>,
    pub regime: RegimeSummary,
    /// Identity residual, `None` when the regime check failed.
    pub residual: Option<f64>,
    /// Method constant `C₁(d)` used for the diagnostics below.
    pub c1: f64,
    /// `L·C₁(d) ≤ τ/(4N)`.
    pub lc1_within_section: bool,
    /// `L·C₁(d) < r/2`.
    pub lc1_below_half_radius: bool,
    /// `|β(j) - j| ≤ δ_β·j` with `δ_β` the slope deviation of `β`.
    pub rep_bound_ok: bool,
}

fn coords(p: &Point) -> Vec<f64> {
    p.iter().copied().collect()
}

/// Runs [`shadow_search`] for the base orbit and records the replay sequences.
pub fn shadow_replay(inst: &DMethodInstance, l: f64, c1: f64, budget: &ShadowBudget) -> Result<ShadowReplayReport> {
    let base = inst.config().base.clone();
    let shadow = shadow_search(inst, &base, l, budget)?;
    replay_from_shadow(inst, shadow, l, c1)
}

pub fn replay_from_shadow(inst: &DMethodInstance, shadow: ShadowResult, l: f64, c1: f64) -> Result<ShadowReplayReport> {
    let space = inst.engine().space();
    let cfg = inst.config();
    let (d, tau, n) = (cfg.d, cfg.tau, cfg.n);
    let m = 2 * n;
    let x = Point::from_vec(shadow.p_hat.clone());
    let v = space.log(&cfg.base, &x)?;
    let track = inst.track(&x)?;
    let anchors = inst.anchors();
    let mut cursor = inst.cursor(&track);
    let mut sigma = Vec::with_capacity(m + 1);
    let mut y = Vec::with_capacity(m + 1);
    let mut centers = Vec::with_capacity(m + 1);
    let mut big_w = Vec::with_capacity(m + 1);
    let mut w = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let bj = shadow.beta.eval(j as f64);
        sigma.push(bj - j as f64);
        let yj = cursor.at(bj)?;
        let cj = if track.c.is_empty() {
            inst.theta_on(&track, j as f64)?
        } else {
            track.c[j].clone()
        };
        big_w.push(coords(&space.log(&anchors.p_hat[j], &cj)?));
        w.push(coords(&(space.log(&anchors.p_hat[j], &yj)? / d)));
        y.push(coords(&yj));
        centers.push(coords(&cj));
    }
    let s: Vec<f64> = sigma.iter().map(|x| x / d).collect();
    let limit = 0.5 * tau;
    let worst_offset = sigma[1..].iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let first_failure = sigma
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, x)| x.abs() > limit)
        .map(|(j, _)| j as i64 - n as i64);
    let radius_ok = v.norm() <= 0.5 * cfg.r;
    let regime = RegimeSummary {
        passed: first_failure.is_none() && radius_ok && track.v.is_some(),
        worst_offset,
        limit,
        radius_ok,
        first_failure,
    };
    let dev = shadow.beta.deviation();
    let rep_bound_ok = sigma
        .iter()
        .enumerate()
        .all(|(j, s)| s.abs() <= dev * j as f64 + 1e-12);
    let mut report = ShadowReplayReport {
        d,
        tau,
        n,
        kappa: cfg.kappa,
        l,
        shadow,
        v: coords(&v),
        sigma,
        s,
        y,
        centers,
        big_w,
        w,
        regime,
        residual: None,
        c1,
        lc1_within_section: l * c1 <= tau / (4.0 * n as f64),
        lc1_below_half_radius: l * c1 < 0.5 * cfg.r,
        rep_bound_ok,
    };
    report.residual = match verify_5_6(inst, &report) {
        Ok(r) => Some(r),
        Err(Error::RegimeCheck { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(report)
}

/// Residual of the linear recursion satisfied by the replayed sequences,
///
/// `log_{p̂_{j+1}}(y_{j+1})/d = Ã_j (w°_j - ζ_j) + X(p̂_{j+1}) s_{j+1} + z_{j+1}`,
///
/// with `w°_j = log_{p̂_j}(c_j)/d` and `ζ_j = log_{p̂_j}(p̃_j)/d`. The left side is
/// the rescaled deviation `w_{j+1}` read off the evaluator.
pub fn verify_5_6(inst: &DMethodInstance, report: &ShadowReplayReport) -> Result<f64> {
    let cfg = inst.config();
    let n = cfg.n as i64;
    if !report.regime.radius_ok {
        return Err(Error::RegimeCheck {
            k: -n,
            offset: Tangent::from_vec(report.v.clone()).norm(),
            limit: 0.5 * cfg.r,
        });
    }
    if let Some(k) = report.regime.first_failure {
        return Err(Error::RegimeCheck {
            k,
            offset: report.sigma[(k + n) as usize].abs(),
            limit: report.regime.limit,
        });
    }
    let space = inst.engine().space();
    let a = inst.anchors();
    let d = cfg.d;
    let m = 2 * cfg.n;
    let mut residual = 0.0f64;
    for j in 0..m {
        let y_next = Point::from_vec(report.y[j + 1].clone());
        let c_j = Point::from_vec(report.centers[j].clone());
        let lhs = space.log(&a.p_hat[j + 1], &y_next)? / d;
        let w_center = space.log(&a.p_hat[j], &c_j)? / d;
        let zeta = space.log(&a.p_hat[j], &a.p_tilde[j])? / d;
        let rhs = &a.a_tilde[j] * (w_center - zeta) + &a.x_hat[j + 1] * report.s[j + 1] + &cfg.z[j + 1];
        residual = residual.max((lhs - rhs).norm());
    }
    Ok(residual)
}

/// `max_j dist(p̃_j, Φ(j, p₋N)) / d`.
pub fn anchor_deviation_ratio(inst: &DMethodInstance) -> Result<f64> {
    let engine = inst.engine();
    let space = engine.space();
    let a = inst.anchors();
    let mut p = inst.config().base.clone();
    let mut worst = 0.0f64;
    for (j, pt) in a.p_tilde.iter().enumerate() {
        if j > 0 {
            p = engine.flow_map(1.0, &p)?;
        }
        worst = worst.max(space.distance(pt, &p));
    }
    Ok(worst / inst.d())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct K5Entry {
    pub d: f64,
    pub ratio: f64,
    pub shadow_status: ShadowStatus,
    pub shadow_sup: f64,
    /// Excluded from the fit because no shadow was found.
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct K5Fit {
    pub entries: Vec<K5Entry>,
    /// Largest ratio over the retained entries; `None` if none was retained.
    pub k5: Option<f64>,
    /// `(max - min) / min` over the retained entries; `None` below two entries.
    pub variation: Option<f64>,
    pub flat: bool,
}

/// Ratio ladder of `max_j |p̃_j - p_j| / d` for `Θ₀` instances with their shadows.
pub fn verify_5_4(ladder: &[(&DMethodInstance, &ShadowResult)]) -> Result<K5Fit> {
    let mut entries = Vec::with_capacity(ladder.len());
    for (inst, shadow) in ladder {
        let skipped = shadow.status != ShadowStatus::Found;
        entries.push(K5Entry {
            d: inst.d(),
            ratio: anchor_deviation_ratio(inst)?,
            shadow_status: shadow.status,
            shadow_sup: shadow.sup,
            skipped,
        });
    }
    let kept: Vec<f64> = entries.iter().filter(|e| !e.skipped).map(|e| e.ratio).collect();
    let (lo, hi) = kept
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    let variation = match kept.len() {
        0 | 1 => None,
        _ if hi == 0.0 => Some(0.0),
        _ => Some((hi - lo) / lo),
    };
    Ok(K5Fit {
        entries,
        k5: (!kept.is_empty()).then_some(hi),
        variation,
        flat: variation.is_some_and(|v| v <= FLATNESS_TOL),
    })
}

/// `max_j |w_j^{(d_i)} - w_j^{(d_{i+1})}|` for consecutive entries of a ladder.
pub fn cauchy_differences(reports: &[ShadowReplayReport]) -> Vec<f64> {
    reports
        .windows(2)
        .map(|pair| {
            pair[0]
                .w
                .iter()
                .zip(&pair[1].w)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
                .fold(0.0, f64::max)
        })
        .collect()
}
