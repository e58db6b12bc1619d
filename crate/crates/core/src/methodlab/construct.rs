use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::gamma::{blend, BumpGamma};
use crate::error::{Error, Result};
use crate::flowcore::{estimate_ub_constants, FlowEngine, Point, SampleSpec, Tangent, UbConstants};

/// Largest admissible defect scale.
pub const D_MAX: f64 = 0.04;

/// `ĝ(d) = d^{3/2}`, restricted to `0 < d ≤ D_MAX` so that `100τ < 1 - τ`
/// holds with room to spare.
pub fn choose_g_tilde(d: f64) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidParameter(format!("defect scale d = {d} must be positive")));
    }
    if d > D_MAX {
        return Err(Error::InvalidParameter(format!(
            "d = {d} exceeds the cap {D_MAX} of the section-width rule tau = d^1.5"
        )));
    }
    let tau = d.powf(1.5);
    if !(100.0 * tau < 1.0 - tau) {
        return Err(Error::InvalidParameter(format!("tau = {tau} violates 100 tau < 1 - tau")));
    }
    Ok(tau)
}

/// How the chart-radius precondition is checked on tori.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartCheck {
    /// A priori bound `10·Q₁^{2N}(d + r + τQ₂) < r₁`.
    #[default]
    Bound,
    /// Realized chart distances on a sample of starting points.
    Direct,
}

/// Parameters of the perturbation methods `Ψ₀`, `Ψ₁`.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodConfig {
    pub d: f64,
    pub tau: f64,
    pub r: f64,
    /// Window half-length `N`.
    pub n: usize,
    pub kappa: u8,
    /// Base point `p₋N`.
    pub base: Point,
    /// `z_k` for `k = -N..=N`, stored at index `k + N`.
    pub z: Vec<Tangent>,
    pub chart_check: ChartCheck,
}

impl MethodConfig {
    pub fn new(d: f64, r: f64, n: usize, kappa: u8, base: Point, z: Vec<Tangent>) -> Result<Self> {
        let cfg = MethodConfig {
            d,
            tau: choose_g_tilde(d)?,
            r,
            n,
            kappa,
            base,
            z,
            chart_check: ChartCheck::default(),
        };
        cfg.validate(cfg.base.len())?;
        Ok(cfg)
    }

    pub fn with_chart_check(mut self, check: ChartCheck) -> Self {
        self.chart_check = check;
        self
    }

    /// Same parameters with the other value of `ϰ`.
    pub fn with_kappa(mut self, kappa: u8) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        BumpGamma::new(self.tau, self.r)?;
        if self.n == 0 {
            return Err(Error::InvalidParameter("window half-length N must be positive".into()));
        }
        if self.kappa > 1 {
            return Err(Error::InvalidParameter(format!("kappa = {} is not 0 or 1", self.kappa)));
        }
        if self.base.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: self.base.len(),
            });
        }
        if self.z.len() != 2 * self.n + 1 {
            return Err(Error::InvalidParameter(format!(
                "expected {} inhomogeneity vectors, got {}",
                2 * self.n + 1,
                self.z.len()
            )));
        }
        for (j, z) in self.z.iter().enumerate() {
            if z.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: z.len(),
                });
            }
            if z.norm() > 1.0 + 1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "|z_{}| = {} exceeds 1",
                    j as i64 - self.n as i64,
                    z.norm()
                )));
            }
        }
        Ok(())
    }
}

/// Memoized anchors, indexed by `j = k + N ∈ [0, 2N]`.
///
/// They come from the `ϰ = 1` recursion along `p₋N` and are shared by both
/// values of `ϰ`.
#[derive(Clone, Debug)]
pub struct Anchors {
    pub p_tilde: Vec<Point>,
    pub p_hat: Vec<Point>,
    /// `X(p̂_j)`.
    pub x_hat: Vec<Tangent>,
    /// `Ã_j = ∂Φ(1-τ, ·)` at `Θ₁(j+τ, p₋N)`, for `j = 0..2N-1`.
    pub a_tilde: Vec<DMatrix<f64>>,
    /// `d·z_j`.
    pub dz: Vec<Tangent>,
}

/// Section states of one method trajectory `Θ(·, x)`.
#[derive(Clone, Debug)]
pub struct Track {
    pub x: Point,
    /// `log_{p₋N}(x)`, or `None` outside `B_r(p₋N)` where the method is the flow.
    pub v: Option<Tangent>,
    /// `q_j = Θ(j + τ, x)`.
    pub q: Vec<Point>,
    /// `c_j = Θ(j, x)`.
    pub c: Vec<Point>,
}

/// A constructed method `Ψ_ϰ` together with its shifted form `Θ_ϰ(T, x) = Ψ_ϰ(T - N, x)`.
#[derive(Clone, Debug)]
pub struct DMethodInstance {
    engine: FlowEngine,
    config: MethodConfig,
    gamma: BumpGamma,
    anchors: Anchors,
    base_track: Track,
}

pub fn build_method(engine: &FlowEngine, config: MethodConfig) -> Result<DMethodInstance> {
    build_method_with_ub(engine, config, None)
}

/// As [`build_method`], reusing precomputed uniform-bound constants for the chart check.
pub fn build_method_with_ub(
    engine: &FlowEngine,
    config: MethodConfig,
    ub: Option<&UbConstants>,
) -> Result<DMethodInstance> {
    let space = engine.space();
    config.validate(engine.dim())?;
    if config.r >= space.injectivity_radius() {
        return Err(Error::InvalidParameter(format!(
            "r = {} must be below the injectivity radius {}",
            config.r,
            space.injectivity_radius()
        )));
    }
    if space.is_torus() && config.chart_check == ChartCheck::Bound {
        let owned;
        let ub = match ub {
            Some(u) => u,
            None => {
                owned = estimate_ub_constants(engine, &SampleSpec::for_engine(engine))?;
                &owned
            }
        };
        let bound = 10.0
            * ub.q1.powi(2 * config.n as i32)
            * (config.d + config.r + config.tau * ub.q2);
        if !(bound < space.injectivity_radius()) {
            return Err(Error::ChartPrecondition {
                what: "10 Q1^(2N) (d + r + tau Q2)".into(),
                bound,
                radius: space.injectivity_radius(),
            });
        }
    }

    let gamma = BumpGamma::new(config.tau, config.r)?;
    let anchors = build_anchors(engine, &config)?;
    let mut inst = DMethodInstance {
        engine: engine.clone(),
        gamma,
        anchors,
        base_track: Track {
            x: config.base.clone(),
            v: None,
            q: Vec::new(),
            c: Vec::new(),
        },
        config,
    };
    inst.base_track = inst.track(&inst.config.base.clone())?;
    if space.is_torus() && inst.config.chart_check == ChartCheck::Direct {
        inst.direct_chart_check()?;
    }
    Ok(inst)
}

fn build_anchors(engine: &FlowEngine, cfg: &MethodConfig) -> Result<Anchors> {
    let space = engine.space();
    let m = 2 * cfg.n;
    let tau = cfg.tau;
    let dz: Vec<Tangent> = cfg.z.iter().map(|z| z * cfg.d).collect();
    let mut p_hat = vec![cfg.base.clone()];
    let mut p_tilde = vec![cfg.base.clone()];
    let mut x_hat = vec![engine.vector_field(&cfg.base)];
    let mut a_tilde = Vec::with_capacity(m);
    let mut q = engine.flow_map(tau, &cfg.base)?;
    for dzj in &dz[1..=m] {
        let (a, jac) = engine.flow_with_jacobian(1.0 - tau, &q)?;
        let xa = engine.vector_field(&a);
        p_tilde.push(space.exp(&a, dzj));
        q = space.exp(&a, &(dzj + &xa * tau));
        a_tilde.push(jac);
        x_hat.push(xa);
        p_hat.push(a);
    }
    Ok(Anchors {
        p_tilde,
        p_hat,
        x_hat,
        a_tilde,
        dz,
    })
}

impl DMethodInstance {
    pub fn engine(&self) -> &FlowEngine {
        &self.engine
    }

    pub fn config(&self) -> &MethodConfig {
        &self.config
    }

    pub fn gamma(&self) -> &BumpGamma {
        &self.gamma
    }

    pub fn anchors(&self) -> &Anchors {
        &self.anchors
    }

    pub fn base_track(&self) -> &Track {
        &self.base_track
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    pub fn d(&self) -> f64 {
        self.config.d
    }

    pub fn kappa(&self) -> u8 {
        self.config.kappa
    }

    /// Section `(j, s)` with `T = j + s`, `|s| ≤ τ`, `1 ≤ j ≤ 2N`, if any.
    pub fn section_of(&self, big_t: f64) -> Option<(usize, f64)> {
        let j = big_t.round();
        let s = big_t - j;
        if j >= 1.0 && j <= (2 * self.config.n) as f64 && s.abs() <= self.config.tau {
            Some((j as usize, s))
        } else {
            None
        }
    }

    /// `Ω_j(s, ·)` as a tangent vector at `p̂_j`, given `c_{j-1} = Θ(j-1, x)`.
    pub fn omega(&self, j: usize, s: f64, c_prev: &Point) -> Result<Tangent> {
        let a = &self.anchors;
        let mut w = a.dz[j].clone();
        if self.config.kappa == 1 {
            let dev = self.engine.space().log(&a.p_tilde[j - 1], c_prev)?;
            w += &a.a_tilde[j - 1] * dev + &a.x_hat[j] * s;
        }
        Ok(w)
    }

    fn section_value(&self, j: usize, s: f64, v_norm: f64, flowed: Point, c_prev: &Point) -> Result<Point> {
        let g = self.gamma.weight(s, v_norm);
        if g == 0.0 {
            return Ok(flowed);
        }
        let space = self.engine.space();
        let p_hat = &self.anchors.p_hat[j];
        let omega = self.omega(j, s, c_prev)?;
        let tangent = if g == 1.0 {
            omega
        } else {
            blend(g, &omega, &space.log(p_hat, &flowed)?)
        };
        Ok(space.exp(p_hat, &tangent))
    }

    /// Section states of `Θ(·, x)` for all `2N` sections.
    pub fn track(&self, x: &Point) -> Result<Track> {
        self.track_upto(x, 2 * self.config.n)
    }

    fn track_upto(&self, x: &Point, m: usize) -> Result<Track> {
        let space = self.engine.space();
        let base = &self.config.base;
        let x = space.canonical(x);
        if space.distance(base, &x) >= self.config.r {
            return Ok(Track {
                x,
                v: None,
                q: Vec::new(),
                c: Vec::new(),
            });
        }
        let v = space.log(base, &x)?;
        let vn = v.norm();
        let tau = self.config.tau;
        let mut q = vec![self.engine.flow_map(tau, &x)?];
        let mut c = vec![x.clone()];
        for j in 1..=m.min(2 * self.config.n) {
            let at_center = self.engine.flow_map(1.0 - tau, &q[j - 1])?;
            let at_exit = self.engine.flow_map(1.0 - tau + tau, &q[j - 1])?;
            let cj = self.section_value(j, 0.0, vn, at_center, &c[j - 1])?;
            let qj = self.section_value(j, tau, vn, at_exit, &c[j - 1])?;
            c.push(cj);
            q.push(qj);
        }
        Ok(Track { x, v: Some(v), q, c })
    }

    /// `Θ(T, x)` read off a precomputed track.
    pub fn theta_on(&self, track: &Track, big_t: f64) -> Result<Point> {
        let tau = self.config.tau;
        let Some(v) = &track.v else {
            return self.engine.flow_map(big_t, &track.x);
        };
        if big_t <= 1.0 - tau {
            return self.engine.flow_map(big_t, &track.x);
        }
        let (m, section) = self.segment(big_t);
        if m >= track.q.len() {
            return Err(Error::InvalidParameter(format!(
                "track covers {} sections, time {big_t} needs {}",
                track.q.len() - 1,
                m + 1
            )));
        }
        let flowed = self.engine.flow_map(big_t - m as f64 - tau, &track.q[m])?;
        match section {
            Some((j, s)) => self.section_value(j, s, v.norm(), flowed, &track.c[j - 1]),
            None => Ok(flowed),
        }
    }

    /// Index `m` of the state `q_m` the flow component starts from, plus the
    /// active section. Only meaningful for `T > 1 - τ`.
    fn segment(&self, big_t: f64) -> (usize, Option<(usize, f64)>) {
        match self.section_of(big_t) {
            Some((j, s)) => (j - 1, Some((j, s))),
            None => {
                let m = (big_t - self.config.tau).floor().max(0.0) as usize;
                (m.min(2 * self.config.n), None)
            }
        }
    }

    /// `Θ_ϰ(T, x) = Ψ_ϰ(T - N, x)`.
    pub fn theta(&self, big_t: f64, x: &Point) -> Result<Point> {
        let needed = if big_t <= 1.0 - self.config.tau {
            0
        } else {
            big_t.ceil().max(1.0) as usize
        };
        let track = self.track_upto(x, needed)?;
        self.theta_on(&track, big_t)
    }

    /// `Ψ_ϰ(t, x)`.
    pub fn psi(&self, t: f64, x: &Point) -> Result<Point> {
        self.theta(t + self.config.n as f64, x)
    }

    /// Evaluator for nondecreasing times along one track, reusing the last
    /// flow state within a segment.
    pub fn cursor<'a>(&'a self, track: &'a Track) -> Cursor<'a> {
        Cursor {
            inst: self,
            track,
            last: None,
        }
    }

    fn direct_chart_check(&self) -> Result<()> {
        let n = self.engine.dim();
        let r = self.config.r;
        let mut starts = vec![self.config.base.clone()];
        for rho in [0.5, 0.99] {
            for i in 0..n {
                for sign in [1.0, -1.0] {
                    let mut v = Tangent::zeros(n);
                    v[i] = sign * rho * r;
                    starts.push(self.engine.space().exp(&self.config.base, &v));
                }
            }
        }
        let tau = self.config.tau;
        let check = |x: &Point| -> Result<()> {
            let track = self.track(x)?;
            for j in 1..=2 * self.config.n {
                for s in [-0.75 * tau, -0.5 * tau, 0.5 * tau] {
                    self.theta_on(&track, j as f64 + s)?;
                }
            }
            Ok(())
        };
        for x in &starts {
            if let Err(e) = check(x) {
                return Err(match e {
                    Error::InjectivityRadius { dist, radius } => Error::ChartPrecondition {
                        what: "realized chart distance".into(),
                        bound: dist,
                        radius,
                    },
                    other => other,
                });
            }
        }
        Ok(())
    }
}

/// `Ω_{ϰ,k+1}(s, v)` as a tangent vector at `p̂_{k+1}`, for `k ∈ [-N, N-1]`.
pub fn omega_eval(inst: &DMethodInstance, k: i64, s: f64, v: &Tangent) -> Result<Tangent> {
    let n = inst.n() as i64;
    if k < -n || k >= n {
        return Err(Error::InvalidParameter(format!("k = {k} outside [-{n}, {}]", n - 1)));
    }
    if s.abs() > inst.tau() || v.norm() > inst.config.r {
        return Err(Error::InvalidParameter(format!("(s, |v|) = ({s}, {}) outside the domain", v.norm())));
    }
    let j = (k + n) as usize + 1;
    let space = inst.engine.space();
    let x = space.exp(&inst.config.base, v);
    let c_prev = if j == 1 {
        x
    } else {
        inst.track_upto(&x, j - 1)?.c[j - 1].clone()
    };
    inst.omega(j, s, &c_prev)
}

/// See [`DMethodInstance::cursor`].
pub struct Cursor<'a> {
    inst: &'a DMethodInstance,
    track: &'a Track,
    last: Option<(usize, f64, Point)>,
}

const PRE_SECTION: usize = usize::MAX;

impl Cursor<'_> {
    pub fn at(&mut self, big_t: f64) -> Result<Point> {
        let inst = self.inst;
        let tau = inst.config.tau;
        let (key, origin_t, section) = match &self.track.v {
            Some(_) if big_t > 1.0 - tau => {
                let (m, section) = inst.segment(big_t);
                (m, m as f64 + tau, section)
            }
            _ => (PRE_SECTION, 0.0, None),
        };
        let flowed = match &self.last {
            Some((k, t0, p)) if *k == key && big_t >= *t0 => inst.engine.flow_map(big_t - t0, p)?,
            _ => {
                let origin = if key == PRE_SECTION {
                    &self.track.x
                } else {
                    &self.track.q[key]
                };
                inst.engine.flow_map(big_t - origin_t, origin)?
            }
        };
        self.last = Some((key, big_t, flowed.clone()));
        match section {
            Some((j, s)) => {
                let vn = self.track.v.as_ref().map_or(0.0, |v| v.norm());
                inst.section_value(j, s, vn, flowed, &self.track.c[j - 1])
            }
            None => Ok(flowed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shear_config(kappa: u8, d: f64, z: Option<Tangent>) -> (FlowEngine, MethodConfig) {
        let e = FlowEngine::builtin("plane-shear").unwrap();
        let n = 3;
        let z = vec![z.unwrap_or_else(|| dvector![0.0, 1.0]); 2 * n + 1];
        let cfg = MethodConfig::new(d, 0.1, n, kappa, dvector![0.0, 0.0], z).unwrap();
        (e, cfg)
    }

    #[test]
    fn g_tilde_values() {
        assert!((choose_g_tilde(0.04).unwrap() - 0.008).abs() < 1e-15);
        assert!((choose_g_tilde(0.01).unwrap() - 0.001).abs() < 1e-15);
        assert!(choose_g_tilde(0.05).is_err());
        assert!(choose_g_tilde(0.0).is_err());
    }

    #[test]
    fn flow_outside_the_ball() {
        for kappa in [0, 1] {
            let (e, cfg) = shear_config(kappa, 0.01, None);
            let inst = build_method(&e, cfg).unwrap();
            let x = dvector![0.05, 0.2];
            for t in [-1.3, 0.0, 0.4, 2.0, 3.5] {
                let a = inst.psi(t, &x).unwrap();
                let b = e.flow_map(t + 3.0, &x).unwrap();
                assert!((a - b).norm() <= 1e-12);
            }
        }
    }

    #[test]
    fn flow_before_the_first_section() {
        let (e, cfg) = shear_config(1, 0.01, None);
        let inst = build_method(&e, cfg).unwrap();
        let x = dvector![0.01, 0.02];
        for big_t in [-2.0, 0.0, 0.5, 1.0 - inst.tau()] {
            let a = inst.theta(big_t, &x).unwrap();
            assert!((a - e.flow_map(big_t, &x).unwrap()).norm() <= 1e-12);
        }
    }

    #[test]
    fn theta_at_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (e, cfg) = shear_config(1, 0.01, None);
        let inst = build_method(&e, cfg).unwrap();
        for _ in 0..100 {
            let x = dvector![rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
            assert_eq!(inst.theta(0.0, &x).unwrap(), x);
        }
    }

    #[test]
    fn zero_inhomogeneity_anchors_coincide() {
        let (e, cfg) = shear_config(1, 0.01, Some(dvector![0.0, 0.0]));
        let inst = build_method(&e, cfg).unwrap();
        let a = inst.anchors();
        for j in 0..a.p_hat.len() {
            assert_eq!(a.p_tilde[j], a.p_hat[j]);
        }
    }

    #[test]
    fn anchors_are_shifted_hats() {
        let (e, cfg) = shear_config(1, 0.02, Some(dvector![0.6, 0.8]));
        let inst = build_method(&e, cfg).unwrap();
        let a = inst.anchors();
        for j in 1..a.p_hat.len() {
            let diff = &a.p_tilde[j] - &a.p_hat[j] - dvector![0.6, 0.8] * 0.02;
            assert!(diff.norm() <= 1e-15);
        }
    }

    #[test]
    fn anchors_do_not_depend_on_kappa() {
        let (e, cfg) = shear_config(0, 0.01, None);
        let i0 = build_method(&e, cfg.clone()).unwrap();
        let i1 = build_method(&e, cfg.with_kappa(1)).unwrap();
        let base = i0.config().base.clone();
        for j in 0..=6 {
            let k = j as f64 - 3.0;
            let p0 = i0.psi(k, &base).unwrap();
            let p1 = i1.psi(k, &base).unwrap();
            assert!((&p0 - &i0.anchors().p_tilde[j]).norm() <= 1e-12);
            assert!((&p1 - &i1.anchors().p_tilde[j]).norm() <= 1e-12);
        }
    }

    #[test]
    fn omega_examples() {
        let (e, cfg) = shear_config(0, 0.01, Some(dvector![0.0, 1.0]));
        let i0 = build_method(&e, cfg.clone()).unwrap();
        let v = dvector![0.03, -0.02];
        let w = omega_eval(&i0, -3, 0.5 * i0.tau(), &v).unwrap();
        assert_eq!(w, dvector![0.0, 0.01]);

        let (e, cfg) = shear_config(1, 0.01, Some(dvector![0.0, 0.0]));
        let i1 = build_method(&e, cfg).unwrap();
        let s = 0.7 * i1.tau();
        for k in -3..3 {
            let w = omega_eval(&i1, k, s, &dvector![0.0, 0.0]).unwrap();
            let x = &i1.anchors().x_hat[(k + 3) as usize + 1];
            assert!((w - x * s).norm() <= 1e-15);
        }

        let (e, cfg) = shear_config(1, 0.01, Some(dvector![0.6, -0.8]));
        let i1 = build_method(&e, cfg).unwrap();
        for k in -3..3 {
            let j = (k + 3) as usize + 1;
            let w = omega_eval(&i1, k, 0.0, &dvector![0.0, 0.0]).unwrap();
            let a = i1.anchors();
            let point = &a.p_hat[j] + w;
            assert!((point - &a.p_tilde[j]).norm() <= 1e-15);
        }
    }

    /// Hand-unrolled first section: `Ω₁(s, v) = p̂₁ + Ã₀v + X(p̂₁)s + d·z₁`.
    #[test]
    fn first_section_unrolled() {
        let (e, cfg) = shear_config(1, 0.01, Some(dvector![0.0, 1.0]));
        let inst = build_method(&e, cfg).unwrap();
        let tau = inst.tau();
        let base = dvector![0.0, 0.0];
        let q0 = e.flow_map(tau, &base).unwrap();
        let (p1, a0) = e.flow_with_jacobian(1.0 - tau, &q0).unwrap();
        let v = dvector![0.01, 0.02];
        let s = 0.3 * tau;
        let expected = &a0 * &v + e.vector_field(&p1) * s + dvector![0.0, 0.01];
        let w = omega_eval(&inst, -3, s, &v).unwrap();
        assert!((w - expected).norm() <= 1e-14);
    }

    #[test]
    fn cursor_matches_direct_evaluation() {
        let (e, cfg) = shear_config(1, 0.01, None);
        let inst = build_method(&e, cfg).unwrap();
        let track = inst.track(&dvector![0.01, -0.02]).unwrap();
        let mut cur = inst.cursor(&track);
        let tau = inst.tau();
        let mut times: Vec<f64> = (0..140).map(|i| -1.0 + i as f64 * 0.05).collect();
        for j in 1..=6 {
            times.extend([j as f64 - tau, j as f64 - 0.3 * tau, j as f64, j as f64 + tau]);
        }
        times.sort_by(f64::total_cmp);
        for t in times {
            let a = cur.at(t).unwrap();
            let b = inst.theta_on(&track, t).unwrap();
            assert!((a - b).norm() <= 1e-10, "t = {t}");
        }
    }

    fn fd_time(inst: &DMethodInstance, track: &Track, t: f64, h: f64) -> (Point, Point) {
        let left = (inst.theta_on(track, t).unwrap() - inst.theta_on(track, t - h).unwrap()) / h;
        let right = (inst.theta_on(track, t + h).unwrap() - inst.theta_on(track, t).unwrap()) / h;
        (left, right)
    }

    #[test]
    fn continuous_across_section_boundaries() {
        for kappa in [0, 1] {
            let (e, cfg) = shear_config(kappa, 0.01, None);
            let inst = build_method(&e, cfg).unwrap();
            let tau = inst.tau();
            let track = inst.track(&dvector![0.004, 0.003]).unwrap();
            for j in 1..=6 {
                for edge in [j as f64 - tau, j as f64 + tau] {
                    let a = inst.theta_on(&track, edge - 1e-9).unwrap();
                    let b = inst.theta_on(&track, edge + 1e-9).unwrap();
                    assert!((a - b).norm() <= 1e-7, "kappa {kappa}, T = {edge}");
                }
            }
        }
    }

    #[test]
    fn derivatives_continuous_at_section_entry() {
        for kappa in [0, 1] {
            let (e, cfg) = shear_config(kappa, 0.01, None);
            let inst = build_method(&e, cfg).unwrap();
            let tau = inst.tau();
            let x = dvector![0.004, 0.003];
            let track = inst.track(&x).unwrap();
            let h = 1e-7;
            for j in 1..=6 {
                let entry = j as f64 - tau;
                let (l, r) = fd_time(&inst, &track, entry, h);
                assert!((l - r).norm() <= 1e-4, "time derivative, j = {j}");
                let sl = inst.theta(entry - 1e-7, &x).unwrap();
                let sr = inst.theta(entry + 1e-7, &x).unwrap();
                let jl = spatial_jacobian(&inst, entry - 1e-7, &x);
                let jr = spatial_jacobian(&inst, entry + 1e-7, &x);
                assert!((sl - sr).norm() <= 1e-6);
                assert!((jl - jr).norm() <= 1e-4, "space derivative, j = {j}");
            }
        }
    }

    fn spatial_jacobian(inst: &DMethodInstance, t: f64, x: &Point) -> DMatrix<f64> {
        let n = x.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let col = (inst.theta(t, &xp).unwrap() - inst.theta(t, &xm).unwrap()) / 2e-6;
            m.set_column(i, &col);
        }
        m
    }

    /// At the section exit the time derivative jumps from `ϰ·X(p̂_j)` to `X(q_j)`.
    #[test]
    fn exit_boundary_derivative_jump_is_documented() {
        let (e, cfg) = shear_config(0, 0.01, None);
        let inst = build_method(&e, cfg).unwrap();
        let track = inst.track(&inst.config().base.clone()).unwrap();
        let (l, r) = fd_time(&inst, &track, 1.0 + inst.tau(), 1e-6);
        assert!(l.norm() < 1e-3);
        assert!((r.norm() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn torus_bound_rejects_large_radius() {
        let e = FlowEngine::builtin("torus-irr").unwrap();
        let n = 2;
        let z = vec![dvector![0.0, 1.0]; 2 * n + 1];
        let cfg = MethodConfig::new(0.01, 0.02, n, 1, dvector![0.1, 0.1], z.clone()).unwrap();
        assert!(build_method(&e, cfg).is_ok());
        let cfg = MethodConfig::new(0.01, 0.45, n, 1, dvector![0.1, 0.1], z).unwrap();
        match build_method(&e, cfg) {
            Err(Error::ChartPrecondition { bound, .. }) => assert!(bound >= 0.5),
            other => panic!("expected a chart rejection, got {other:?}"),
        }
    }

    #[test]
    fn torus_direct_check_admits_morse_smale() {
        let e = FlowEngine::builtin("torus-ms").unwrap();
        let n = 3;
        let z = vec![dvector![0.0, 1.0]; 2 * n + 1];
        let cfg = MethodConfig::new(0.01, 0.05, n, 1, dvector![0.0, 0.0], z).unwrap();
        assert!(matches!(
            build_method(&e, cfg.clone()),
            Err(Error::ChartPrecondition { .. })
        ));
        assert!(build_method(&e, cfg.with_chart_check(ChartCheck::Direct)).is_ok());
    }

    #[test]
    fn config_validation() {
        let base = dvector![0.0, 0.0];
        assert!(MethodConfig::new(0.01, 0.1, 1, 2, base.clone(), vec![dvector![0.0, 0.0]; 3]).is_err());
        assert!(MethodConfig::new(0.01, 0.1, 1, 0, base.clone(), vec![dvector![0.0, 2.0]; 3]).is_err());
        assert!(MethodConfig::new(0.01, 0.1, 1, 0, base, vec![dvector![0.0, 0.0]; 2]).is_err());
    }
}
