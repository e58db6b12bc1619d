use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::construct::DMethodInstance;
use crate::error::Result;
use crate::flowcore::UbConstants;

pub const SCHEMA_VERSION: u32 = 1;

/// Slack granted to samples whose defect vanishes in exact arithmetic.
pub const EXACT_CASE_SLACK: f64 = 1e-8;

/// Position of `t` and `t + s` relative to the sections `[j-τ, j+τ]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefectCase {
    /// Both outside, `s < 2τ`: no section in between.
    OutsideShort,
    /// `t` outside, `t + s` inside.
    Enter,
    /// Both outside, `s ≥ 2τ`.
    OutsideLong,
    /// `t` inside, `s < 2τ`.
    InsideShort,
    /// `t` inside, `t + s` outside, `s ≥ 2τ`.
    Leave,
    /// Both inside, `s ≥ 2τ`.
    InsideLong,
}

impl DefectCase {
    pub const ALL: [DefectCase; 6] = [
        DefectCase::OutsideShort,
        DefectCase::Enter,
        DefectCase::OutsideLong,
        DefectCase::InsideShort,
        DefectCase::Leave,
        DefectCase::InsideLong,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            DefectCase::OutsideShort => "outside-short",
            DefectCase::Enter => "enter",
            DefectCase::OutsideLong => "outside-long",
            DefectCase::InsideShort => "inside-short",
            DefectCase::Leave => "leave",
            DefectCase::InsideLong => "inside-long",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

/// Closed-section membership in the shifted frame, sections `j = 1..=2N`.
pub fn in_section(t: f64, tau: f64, n: usize) -> bool {
    let j = t.round();
    j >= 1.0 && j <= (2 * n) as f64 && (t - j).abs() <= tau
}

/// Case label for `t, t + s ≥ 1 - τ` and `s ∈ [0, 1]`.
pub fn classify_case(t: f64, s: f64, tau: f64, n: usize) -> DefectCase {
    let long = s >= 2.0 * tau;
    match (in_section(t, tau, n), in_section(t + s, tau, n)) {
        (false, true) => DefectCase::Enter,
        (false, false) if long => DefectCase::OutsideLong,
        (false, false) => DefectCase::OutsideShort,
        (true, _) if !long => DefectCase::InsideShort,
        (true, true) => DefectCase::InsideLong,
        (true, false) => DefectCase::Leave,
    }
}

/// Per-case defect bounds built from the section jump `E`.
///
/// `E₁ = g₁(τ) + Q₁d + d` for `ϰ = 1` and `E₀ = (Q₃ + Q₄Q₂)τ + d` for `ϰ = 0`.
/// Summing the worst case gives `C_ϰ(d) = (1 + Q₄ + Q₄²)·E`, which is
/// `K₁d + K₂g₁(τ)` or `K₃d + K₄τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseBounds {
    pub kappa: u8,
    pub d: f64,
    pub tau: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
    pub g1_tau: f64,
    pub g1_extrapolated: bool,
    pub jump: f64,
    /// Indexed by [`DefectCase::index`].
    pub per_case: [f64; 6],
    /// `C_ϰ(d)`.
    pub total: f64,
    /// `(K₁, K₂)` for `ϰ = 1`, `(K₃, K₄)` for `ϰ = 0`.
    pub k_linear: f64,
    pub k_nonlinear: f64,
}

pub fn case_bounds(ub: &UbConstants, d: f64, tau: f64, kappa: u8) -> CaseBounds {
    let (q1, q2, q3, q4) = (ub.q1, ub.q2, ub.q3, ub.q4);
    let g = ub.g1_modulus(tau);
    let jump = if kappa == 1 {
        g.value + q1 * d + d
    } else {
        (q3 + q4 * q2) * tau + d
    };
    let carried = q4 * (1.0 + q4) * jump;
    let per_case = [
        EXACT_CASE_SLACK,
        jump,
        q4 * jump,
        ((1.0 + q4) * jump).max(carried),
        carried,
        jump + carried,
    ];
    let growth = 1.0 + q4 + q4 * q4;
    let (k_linear, k_nonlinear) = if kappa == 1 {
        (growth * (1.0 + q1), growth)
    } else {
        (growth, growth * (q3 + q4 * q2))
    };
    CaseBounds {
        kappa,
        d,
        tau,
        q1,
        q2,
        q3,
        q4,
        g1_tau: g.value,
        g1_extrapolated: g.extrapolated,
        jump,
        per_case,
        total: growth * jump,
        k_linear,
        k_nonlinear,
    }
}

/// Sampling density of the defect grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectGrid {
    /// Uniform `t` samples per unit time on `[1-τ, 2N+1]`.
    pub t_per_unit: usize,
    /// Uniform `s` samples on `[2τ, 1]`.
    pub s_long: usize,
    /// Every `k`-th sample is mirrored to `-s` as a spot check; 0 disables.
    pub negative_stride: usize,
}

impl Default for DefectGrid {
    fn default() -> Self {
        DefectGrid {
            t_per_unit: 16,
            s_long: 12,
            negative_stride: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSample {
    pub t: f64,
    pub s: f64,
    pub case: DefectCase,
    pub delta: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case: DefectCase,
    pub count: usize,
    pub sup: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub schema_version: u32,
    pub flow: String,
    pub d: f64,
    pub tau: f64,
    pub r: f64,
    pub n: usize,
    pub kappa: u8,
    /// Convention used by the classifier.
    pub sections: String,
    pub grid: DefectGrid,
    pub per_case: Vec<CaseSummary>,
    /// Supremum over the `s ≥ 0` samples.
    pub sup: f64,
    /// Supremum over the mirrored `s < 0` spot checks.
    pub sup_negative: f64,
    pub negative_checks: usize,
    pub violations: usize,
    pub bounds: CaseBounds,
    #[serde(skip)]
    pub samples: Vec<DefectSample>,
}

fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect(),
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
    v
}

/// The `(t, s)` grid in the shifted frame.
fn sample_grid(tau: f64, n: usize, grid: &DefectGrid) -> Vec<(f64, Vec<f64>)> {
    let start = 1.0 - tau;
    let end = (2 * n) as f64 + 1.0;
    let count = ((end - start) * grid.t_per_unit as f64).ceil() as usize + 1;
    let offsets = [-tau, -0.5 * tau, 0.0, 0.5 * tau, tau];
    let mut times = linspace(start, end, count);
    for j in 1..=2 * n {
        times.extend(offsets.iter().map(|o| j as f64 + o));
    }
    let times = sorted_unique(times);
    let mut short = vec![0.5 * tau, tau, 1.5 * tau];
    short.extend(linspace(2.0 * tau, 1.0, grid.s_long));
    times
        .into_iter()
        .map(|t| {
            let mut ss = short.clone();
            for j in 1..=2 * n + 1 {
                for o in offsets {
                    let s = j as f64 + o - t;
                    if s > 0.0 && s <= 1.0 {
                        ss.push(s);
                    }
                }
            }
            (t, sorted_unique(ss))
        })
        .collect()
}

/// Samples `δ_{t,s} = |Θ(t+s, p₋N) - Φ(s, Θ(t, p₋N))|` over the active window
/// and compares each sample with its case bound.
pub fn measure_defect(inst: &DMethodInstance, grid: &DefectGrid, ub: &UbConstants) -> Result<DefectReport> {
    let cfg = inst.config();
    let (tau, n) = (cfg.tau, cfg.n);
    let bounds = case_bounds(ub, cfg.d, tau, cfg.kappa);
    let engine = inst.engine();
    let space = engine.space();
    let track = inst.base_track();
    let rows = sample_grid(tau, n, grid);

    let evaluated: Vec<Vec<(f64, f64, f64)>> = rows
        .par_iter()
        .map(|(t, ss)| -> Result<Vec<(f64, f64, f64)>> {
            let at_t = inst.theta_on(track, *t)?;
            ss.iter()
                .map(|&s| {
                    let lhs = inst.theta_on(track, t + s)?;
                    let rhs = engine.flow_map(s, &at_t)?;
                    Ok((*t, s, space.distance(&lhs, &rhs)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut samples = Vec::new();
    for (t, s, delta) in evaluated.into_iter().flatten() {
        let case = classify_case(t, s, tau, n);
        samples.push(DefectSample {
            t,
            s,
            case,
            delta,
            bound: bounds.per_case[case.index()],
        });
    }

    // Mirrored spot checks: δ_{t,-s} ≤ Q₄·δ_{t-s,s}, so the label and bound
    // come from the pair (t - s, s).
    let mirrored: Vec<(f64, f64)> = if grid.negative_stride == 0 {
        Vec::new()
    } else {
        samples
            .iter()
            .step_by(grid.negative_stride)
            .filter(|p| p.t - p.s >= 1.0 - tau)
            .map(|p| (p.t, p.s))
            .collect()
    };
    let negative: Vec<DefectSample> = mirrored
        .par_iter()
        .map(|&(t, s)| -> Result<DefectSample> {
            let at_t = inst.theta_on(track, t)?;
            let lhs = inst.theta_on(track, t - s)?;
            let rhs = engine.flow_map(-s, &at_t)?;
            let case = classify_case(t - s, s, tau, n);
            Ok(DefectSample {
                t,
                s: -s,
                case,
                delta: space.distance(&lhs, &rhs),
                bound: bounds.q4 * bounds.per_case[case.index()],
            })
        })
        .collect::<Result<_>>()?;

    let per_case = DefectCase::ALL
        .iter()
        .map(|&case| {
            let hits = samples.iter().filter(|p| p.case == case);
            CaseSummary {
                case,
                count: hits.clone().count(),
                sup: hits.map(|p| p.delta).fold(0.0, f64::max),
                bound: bounds.per_case[case.index()],
            }
        })
        .collect();
    let sup = samples.iter().map(|p| p.delta).fold(0.0, f64::max);
    let sup_negative = negative.iter().map(|p| p.delta).fold(0.0, f64::max);
    let violations = samples
        .iter()
        .chain(&negative)
        .filter(|p| p.delta > p.bound)
        .count();
    let negative_checks = negative.len();
    samples.extend(negative);

    Ok(DefectReport {
        schema_version: SCHEMA_VERSION,
        flow: engine.field().name.clone(),
        d: cfg.d,
        tau,
        r: cfg.r,
        n,
        kappa: cfg.kappa,
        sections: "closed intervals [j - tau, j + tau], j = 1..2N, shifted time T = t + N".into(),
        grid: grid.clone(),
        per_case,
        sup,
        sup_negative,
        negative_checks,
        violations,
        bounds,
        samples,
    })
}

impl DefectReport {
    pub fn case_sup(&self, case: DefectCase) -> f64 {
        self.per_case[case.index()].sup
    }

    /// CSV with columns `t,s,case,delta,bound`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(["t", "s", "case", "delta", "bound"])?;
        for p in &self.samples {
            w.write_record([
                p.t.to_string(),
                p.s.to_string(),
                p.case.label().to_string(),
                p.delta.to_string(),
                p.bound.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Nonnegative least-squares fit of `sup(d) ≈ a·d + b·f(d)` across a ladder,
/// with rows weighted by `1/sup`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub d: Vec<f64>,
    /// `f(d)`: `τ` for `ϰ = 0`, `g₁(τ)` for `ϰ = 1`.
    pub basis: Vec<f64>,
    pub sup: Vec<f64>,
    pub k_linear: f64,
    pub k_nonlinear: f64,
    pub max_rel_residual: f64,
}

pub fn fit_envelope(d: &[f64], basis: &[f64], sup: &[f64]) -> EnvelopeFit {
    let rows: Vec<(f64, f64, f64)> = d
        .iter()
        .zip(basis)
        .zip(sup)
        .map(|((&d, &f), &y)| {
            let w = if y > 0.0 { 1.0 / y } else { 1.0 };
            (d * w, f * w, y * w)
        })
        .collect();
    let sse = |a: f64, b: f64| rows.iter().map(|(x1, x2, y)| (y - a * x1 - b * x2).powi(2)).sum::<f64>();
    let one_dim = |col: usize| {
        let (num, den) = rows.iter().fold((0.0, 0.0), |(n, m), r| {
            let x = if col == 0 { r.0 } else { r.1 };
            (n + x * r.2, m + x * x)
        });
        if den > 0.0 {
            (num / den).max(0.0)
        } else {
            0.0
        }
    };
    let mut candidates = vec![(0.0, 0.0), (one_dim(0), 0.0), (0.0, one_dim(1))];
    let (s11, s12, s22, t1, t2) = rows.iter().fold((0.0, 0.0, 0.0, 0.0, 0.0), |acc, r| {
        (
            acc.0 + r.0 * r.0,
            acc.1 + r.0 * r.1,
            acc.2 + r.1 * r.1,
            acc.3 + r.0 * r.2,
            acc.4 + r.1 * r.2,
        )
    });
    let det = s11 * s22 - s12 * s12;
    if det.abs() > 1e-14 * (s11 * s22).max(f64::MIN_POSITIVE) {
        let a = (t1 * s22 - t2 * s12) / det;
        let b = (s11 * t2 - s12 * t1) / det;
        if a >= 0.0 && b >= 0.0 {
            candidates.push((a, b));
        }
    }
    let (a, b) = candidates
        .into_iter()
        .min_by(|x, y| sse(x.0, x.1).total_cmp(&sse(y.0, y.1)))
        .unwrap();
    let max_rel_residual = d
        .iter()
        .zip(basis)
        .zip(sup)
        .map(|((&d, &f), &y)| {
            let fit = a * d + b * f;
            if y > 0.0 {
                (fit - y).abs() / y
            } else {
                fit.abs()
            }
        })
        .fold(0.0, f64::max);
    EnvelopeFit {
        d: d.to_vec(),
        basis: basis.to_vec(),
        sup: sup.to_vec(),
        k_linear: a,
        k_nonlinear: b,
        max_rel_residual,
    }
}

/// Envelope fit over a ladder of reports sharing `ϰ`.
pub fn fit_reports(reports: &[DefectReport]) -> EnvelopeFit {
    let d: Vec<f64> = reports.iter().map(|r| r.d).collect();
    let basis: Vec<f64> = reports
        .iter()
        .map(|r| if r.kappa == 1 { r.bounds.g1_tau } else { r.tau })
        .collect();
    let sup: Vec<f64> = reports.iter().map(|r| r.sup).collect();
    fit_envelope(&d, &basis, &sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::{estimate_ub_constants, FlowEngine, SampleSpec};
    use crate::methodlab::{build_method, MethodConfig};
    use nalgebra::dvector;

    const TAU: f64 = 0.001;

    #[test]
    fn classifier_examples() {
        let n = 3;
        let k = 2.0;
        assert_eq!(classify_case(k + 1.5 * TAU, TAU, TAU, n), DefectCase::OutsideShort);
        assert_eq!(classify_case(k + 0.5, 0.5, TAU, n), DefectCase::Enter);
        assert_eq!(classify_case(k, 0.9, TAU, n), DefectCase::Leave);
        assert_eq!(classify_case(k, 1.0, TAU, n), DefectCase::InsideLong);
        assert_eq!(classify_case(k, 1.5 * TAU, TAU, n), DefectCase::InsideShort);
        assert_eq!(classify_case(k + 0.2, 0.5, TAU, n), DefectCase::OutsideLong);
    }

    #[test]
    fn section_endpoints_belong_to_the_section() {
        assert!(in_section(0.5 + 0.5, 0.25, 1));
        assert!(in_section(1.25, 0.25, 1));
        assert!(in_section(0.75, 0.25, 1));
        assert!(!in_section(0.74, 0.25, 1));
        // Sections stop at j = 2N.
        assert!(!in_section(3.0, 0.25, 1));
    }

    #[test]
    fn every_sample_gets_one_label() {
        let rows = sample_grid(TAU, 2, &DefectGrid::default());
        let mut seen = [false; 6];
        for (t, ss) in rows {
            for s in ss {
                seen[classify_case(t, s, TAU, 2).index()] = true;
            }
        }
        assert!(seen.iter().all(|&b| b), "{seen:?}");
    }

    #[test]
    fn envelope_fit_recovers_exact_forms() {
        let d = [1e-2, 5e-3, 2.5e-3];
        let f: Vec<f64> = d.iter().map(|d: &f64| d.powf(1.5)).collect();
        let y: Vec<f64> = d.iter().zip(&f).map(|(d, f)| 2.0 * d + 3.0 * f).collect();
        let fit = fit_envelope(&d, &f, &y);
        assert!((fit.k_linear - 2.0).abs() < 1e-9);
        assert!((fit.k_nonlinear - 3.0).abs() < 1e-9);
        assert!(fit.max_rel_residual < 1e-9);
        // A negative coefficient is clamped and the residual reported.
        let y: Vec<f64> = d.iter().zip(&f).map(|(d, f)| 2.0 * d - 3.0 * f).collect();
        let fit = fit_envelope(&d, &f, &y);
        assert!(fit.k_linear >= 0.0 && fit.k_nonlinear >= 0.0);
    }

    #[test]
    fn plane_shear_defects_respect_case_bounds() {
        let e = FlowEngine::builtin("plane-shear").unwrap();
        let ub = estimate_ub_constants(&e, &SampleSpec::for_engine(&e)).unwrap();
        let n = 2;
        let z = vec![dvector![0.0, 1.0]; 2 * n + 1];
        for kappa in [0, 1] {
            let cfg = MethodConfig::new(0.01, 0.1, n, kappa, dvector![0.0, 0.0], z.clone()).unwrap();
            let inst = build_method(&e, cfg).unwrap();
            let grid = DefectGrid {
                t_per_unit: 6,
                s_long: 5,
                negative_stride: 10,
            };
            let rep = measure_defect(&inst, &grid, &ub).unwrap();
            assert_eq!(rep.violations, 0, "kappa {kappa}");
            assert!(rep.case_sup(DefectCase::OutsideShort) <= 1e-8);
            assert!(rep.per_case.iter().all(|c| c.count > 0));
            assert!(rep.sup > 0.0 && rep.sup <= rep.bounds.total);
            assert!(rep.negative_checks > 0);
        }
    }
}
