use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::frames::{sample_orbit_frames, OrbitFrame};
use super::solve::{solve_eq_4_1, InhomKind, InhomPattern, InhomSeq};
use crate::error::{Error, Result};
use crate::flowcore::{FlowEngine, Point};

pub const SCHEMA_VERSION: u32 = 1;

/// Relative change between the last two window sizes below which the sup norm
/// counts as settled.
pub const PLATEAU_TOL: f64 = 0.01;
/// Log-log slope from which the sup norm counts as growing.
pub const GROWTH_SLOPE: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthVerdict {
    Bounded,
    Growing,
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub n: usize,
    /// `0` is the named pattern, `1..` the random unit trials.
    pub trial: usize,
    pub sup_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub schema_version: u32,
    pub flow: String,
    pub base: Vec<f64>,
    pub pattern: InhomPattern,
    pub trials: usize,
    pub seed: u64,
    pub n_list: Vec<usize>,
    /// Worst sup norm over all trials, per `N`.
    pub sup_by_n: Vec<f64>,
    /// Least-squares slope of `log sup` against `log N`.
    pub slope: f64,
    /// Relative change between the last two entries of `sup_by_n`.
    pub last_change: f64,
    /// Last entry of `sup_by_n`.
    pub limit: f64,
    pub verdict: GrowthVerdict,
    pub rows: Vec<GrowthRow>,
}

impl GrowthReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["N", "trial", "sup_norm"])?;
        for r in &self.rows {
            w.write_record([r.n.to_string(), r.trial.to_string(), format!("{:.17e}", r.sup_norm)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn window(frames: &[OrbitFrame], n_max: usize, n: usize) -> &[OrbitFrame] {
    &frames[n_max - n..=n_max + n]
}

/// Trial inhomogeneity: the named pattern for trial 0, otherwise random unit
/// normals on a per-`(N, trial)` stream.
fn trial_inhom(frames: &[OrbitFrame], pattern: InhomPattern, n: usize, trial: usize, seed: u64) -> InhomSeq {
    if trial == 0 {
        return InhomSeq::from_pattern(pattern, InhomKind::Normal, frames);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | trial as u64);
    InhomSeq::random_unit_normal(frames, &mut rng)
}

fn fit_slope(n_list: &[usize], sup: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = n_list
        .iter()
        .zip(sup)
        .filter(|(_, &s)| s > 0.0)
        .map(|(&n, &s)| ((n as f64).ln(), s.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let m = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// [`estimate_l1_growth_with`] for the constant-normal pattern.
pub fn estimate_l1_growth(
    engine: &FlowEngine,
    p: &Point,
    n_list: &[usize],
    trials: usize,
    seed: u64,
) -> Result<GrowthReport> {
    estimate_l1_growth_with(engine, p, n_list, InhomPattern::ConstantNormal, trials, seed)
}

/// Sup norms of the reduced system's least-squares solutions over nested windows,
/// for the pattern plus `trials` random unit normal inhomogeneities.
pub fn estimate_l1_growth_with(
    engine: &FlowEngine,
    p: &Point,
    n_list: &[usize],
    pattern: InhomPattern,
    trials: usize,
    seed: u64,
) -> Result<GrowthReport> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::InvalidParameter(format!(
            "N list must be positive and strictly increasing, got {n_list:?}"
        )));
    }
    let n_max = *n_list.last().unwrap();
    let frames = sample_orbit_frames(engine, p, n_max)?;
    let jobs: Vec<(usize, usize)> = n_list
        .iter()
        .flat_map(|&n| (0..=trials).map(move |t| (n, t)))
        .collect();
    let rows: Vec<GrowthRow> = jobs
        .par_iter()
        .map(|&(n, trial)| {
            let w = window(&frames, n_max, n);
            let b = trial_inhom(w, pattern, n, trial, seed);
            let r = solve_eq_4_1(w, &b)?;
            Ok(GrowthRow {
                n,
                trial,
                sup_norm: r.sup_norm,
            })
        })
        .collect::<Result<_>>()?;
    let sup_by_n: Vec<f64> = n_list
        .iter()
        .map(|&n| {
            rows.iter()
                .filter(|r| r.n == n)
                .map(|r| r.sup_norm)
                .fold(0.0, f64::max)
        })
        .collect();
    let slope = fit_slope(n_list, &sup_by_n);
    let limit = *sup_by_n.last().unwrap();
    let last_change = match sup_by_n.len() {
        0 | 1 => f64::NAN,
        m => {
            let (a, b) = (sup_by_n[m - 2], sup_by_n[m - 1]);
            if a == b {
                0.0
            } else {
                (b - a).abs() / a.abs().max(b.abs())
            }
        }
    };
    let verdict = if slope >= GROWTH_SLOPE {
        GrowthVerdict::Growing
    } else if last_change <= PLATEAU_TOL {
        GrowthVerdict::Bounded
    } else {
        GrowthVerdict::Undetermined
    };
    Ok(GrowthReport {
        schema_version: SCHEMA_VERSION,
        flow: engine.field().name.clone(),
        base: p.iter().copied().collect(),
        pattern,
        trials,
        seed,
        n_list: n_list.to_vec(),
        sup_by_n,
        slope,
        last_change,
        limit,
        verdict,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dvector;

    #[test]
    fn plane_shear_plateaus() {
        let e = FlowEngine::builtin("plane-shear").unwrap();
        let r = estimate_l1_growth(&e, &dvector![0.0, 0.0], &[10, 20, 40], 2, 5).unwrap();
        assert_eq!(r.verdict, GrowthVerdict::Bounded);
        assert_abs_diff_eq!(r.limit, 1.0 / (1.0 - (-1.0f64).exp()), epsilon = 1e-3);
        assert_eq!(r.rows.len(), 9);
    }

    #[test]
    fn torus_irr_grows_linearly() {
        let e = FlowEngine::builtin("torus-irr").unwrap();
        let r = estimate_l1_growth(&e, &dvector![0.0, 0.0], &[10, 20, 40], 0, 0).unwrap();
        assert_eq!(r.verdict, GrowthVerdict::Growing);
        assert_abs_diff_eq!(r.slope, 1.0, epsilon = 1e-6);
        for (n, s) in r.n_list.iter().zip(&r.sup_by_n) {
            assert_abs_diff_eq!(*s, *n as f64, epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_pattern_is_all_zero() {
        let e = FlowEngine::builtin("torus-ms").unwrap();
        let r = estimate_l1_growth_with(&e, &dvector![0.0, 0.0], &[5, 10], InhomPattern::Zero, 0, 0).unwrap();
        assert!(r.rows.iter().all(|row| row.sup_norm == 0.0));
        assert_eq!(r.verdict, GrowthVerdict::Bounded);
    }

    #[test]
    fn deterministic_per_seed() {
        let e = FlowEngine::builtin("torus-ms").unwrap();
        let a = estimate_l1_growth(&e, &dvector![0.0, 0.1], &[4, 8], 3, 9).unwrap();
        let b = estimate_l1_growth(&e, &dvector![0.0, 0.1], &[4, 8], 3, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_unsorted_windows() {
        let e = FlowEngine::builtin("torus-ms").unwrap();
        assert!(estimate_l1_growth(&e, &dvector![0.0, 0.0], &[10, 5], 0, 0).is_err());
    }
}
