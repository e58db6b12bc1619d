use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{Command, ExperimentConfig};
use crate::error::Result;
use crate::flowcore::{estimate_ub_constants, FlowEngine, SampleSpec, UbConstants};
use crate::methodlab::{
    build_method_with_ub, case_bounds, fit_reports, measure_defect, CaseBounds, CaseSummary, DMethodInstance,
    DefectGrid, EnvelopeFit,
};
use crate::orbitlin::{
    cauchy_differences, check_frame_identities, estimate_l1_growth_with, sample_orbit_frames, shadow_replay,
    verify_5_4, FrameIdentityReport, GrowthReport, K5Fit, OrbitFrame, ShadowReplayReport,
};

pub const SCHEMA_VERSION: u32 = 1;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn prepare(config: &ExperimentConfig, cmd: Command, out: &Path) -> Result<FlowEngine> {
    config.validate(cmd)?;
    std::fs::create_dir_all(out)?;
    config.engine()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub k: i64,
    pub p: Vec<f64>,
    pub x: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub proj: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl From<&OrbitFrame> for FrameRow {
    fn from(f: &OrbitFrame) -> Self {
        FrameRow {
            k: f.k,
            p: f.p.iter().copied().collect(),
            x: f.x.iter().copied().collect(),
            a: rows(&f.a),
            proj: rows(&f.proj),
            e: rows(&f.e),
            b: rows(&f.b),
        }
    }
}

/// Contents of `frames.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitOutput {
    pub schema_version: u32,
    pub flow: String,
    pub base: Vec<f64>,
    pub n: usize,
    pub identities: FrameIdentityReport,
    pub frames: Vec<FrameRow>,
}

/// Frames `k = -N..=N` around `base` plus their identity check, to `frames.json`.
pub fn cmd_orbit(config: &ExperimentConfig, out: &Path) -> Result<OrbitOutput> {
    let engine = prepare(config, Command::Orbit, out)?;
    let n = config.n.unwrap_or_default();
    let frames = sample_orbit_frames(&engine, &config.base_point(), n)?;
    let output = OrbitOutput {
        schema_version: SCHEMA_VERSION,
        flow: config.flow_label(),
        base: config.base.clone(),
        n,
        identities: check_frame_identities(&frames),
        frames: frames.iter().map(FrameRow::from).collect(),
    };
    write_json(&out.join("frames.json"), &output)?;
    Ok(output)
}

/// One `d` of `defect_summary.json`; the samples live in `csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectEntry {
    pub d: f64,
    pub tau: f64,
    pub csv: String,
    pub sup: f64,
    pub sup_negative: f64,
    pub bounds: CaseBounds,
    pub per_case: Vec<CaseSummary>,
}

/// Contents of `defect_summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectOutput {
    pub schema_version: u32,
    pub flow: String,
    pub base: Vec<f64>,
    pub n: usize,
    pub kappa: u8,
    pub r: f64,
    pub grid: DefectGrid,
    pub ub: UbConstants,
    pub entries: Vec<DefectEntry>,
    /// Present for ladders of two or more `d`.
    pub fit: Option<EnvelopeFit>,
}

pub fn defect_csv_name(d: f64) -> String {
    format!("defect_{d:e}.csv")
}

fn build(
    config: &ExperimentConfig,
    engine: &FlowEngine,
    ub: &UbConstants,
    d: f64,
) -> Result<DMethodInstance> {
    let z = config.inhomogeneity_vectors(engine, config.n.unwrap_or_default())?;
    let cfg = config.method_config(engine, d, z)?;
    build_method_with_ub(engine, cfg, Some(ub))
}

/// Builds the method for each `d`, measures its defect on the grid and writes
/// `defect_<d>.csv` per `d` plus `defect_summary.json`.
pub fn cmd_defect(config: &ExperimentConfig, out: &Path) -> Result<DefectOutput> {
    let engine = prepare(config, Command::Defect, out)?;
    let ub = estimate_ub_constants(&engine, &SampleSpec::for_engine(&engine))?;
    let grid = config.defect_grid();
    let mut reports = Vec::new();
    let mut entries = Vec::new();
    for d in config.d_values() {
        let inst = build(config, &engine, &ub, d)?;
        let rep = measure_defect(&inst, &grid, &ub)?;
        let csv = defect_csv_name(d);
        rep.write_csv(&out.join(&csv))?;
        entries.push(DefectEntry {
            d,
            tau: rep.tau,
            csv,
            sup: rep.sup,
            sup_negative: rep.sup_negative,
            bounds: rep.bounds.clone(),
            per_case: rep.per_case.clone(),
        });
        reports.push(rep);
    }
    let output = DefectOutput {
        schema_version: SCHEMA_VERSION,
        flow: config.flow_label(),
        base: config.base.clone(),
        n: config.n.unwrap_or_default(),
        kappa: config.kappa.unwrap_or_default(),
        r: config.r.unwrap_or_default(),
        grid,
        ub,
        entries,
        fit: (reports.len() >= 2).then(|| fit_reports(&reports)),
    };
    write_json(&out.join("defect_summary.json"), &output)?;
    Ok(output)
}

/// Growth probe over `n_list`, to `growth.csv` and `growth.json`.
pub fn cmd_probe(config: &ExperimentConfig, out: &Path) -> Result<GrowthReport> {
    let engine = prepare(config, Command::Probe, out)?;
    let n_list = config.n_list.clone().unwrap_or_default();
    let report = estimate_l1_growth_with(
        &engine,
        &config.base_point(),
        &n_list,
        config.inhomogeneity,
        config.trials.unwrap_or(0),
        config.seed.unwrap_or(0),
    )?;
    report.write_csv(&out.join("growth.csv"))?;
    write_json(&out.join("growth.json"), &report)?;
    Ok(report)
}

/// Replays for one `L` across the `d` ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRun {
    pub l: f64,
    pub replays: Vec<ShadowReplayReport>,
    pub k5: K5Fit,
    /// Sup distance between consecutive rescaled sequences `w` along the ladder.
    pub cauchy: Vec<f64>,
    pub inconclusive: usize,
}

/// Contents of `replay.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutput {
    pub schema_version: u32,
    pub flow: String,
    pub base: Vec<f64>,
    pub n: usize,
    pub kappa: u8,
    pub r: f64,
    pub d_ladder: Vec<f64>,
    pub runs: Vec<ReplayRun>,
}

/// Shadow search and replay of the base orbit for every `(L, d)`, with the
/// anchor ratio ladder per `L`, to `replay.json`. Inconclusive searches are
/// recorded, not raised.
pub fn cmd_replay(config: &ExperimentConfig, out: &Path) -> Result<ReplayOutput> {
    let engine = prepare(config, Command::Replay, out)?;
    let ub = estimate_ub_constants(&engine, &SampleSpec::for_engine(&engine))?;
    let budget = config.shadow_budget();
    let ds = config.d_values();
    let insts: Vec<DMethodInstance> = ds.iter().map(|&d| build(config, &engine, &ub, d)).collect::<Result<_>>()?;
    let mut runs = Vec::new();
    for &l in config.l_sweep.as_deref().unwrap_or_default() {
        let replays: Vec<ShadowReplayReport> = insts
            .iter()
            .map(|inst| {
                let cfg = inst.config();
                let c1 = case_bounds(&ub, cfg.d, cfg.tau, cfg.kappa).total;
                shadow_replay(inst, l, c1, &budget)
            })
            .collect::<Result<_>>()?;
        let pairs: Vec<_> = insts.iter().zip(replays.iter().map(|r| &r.shadow)).collect();
        let k5 = verify_5_4(&pairs)?;
        let inconclusive = replays
            .iter()
            .filter(|r| r.shadow.status != crate::orbitlin::ShadowStatus::Found)
            .count();
        runs.push(ReplayRun {
            l,
            cauchy: cauchy_differences(&replays),
            replays,
            k5,
            inconclusive,
        });
    }
    let output = ReplayOutput {
        schema_version: SCHEMA_VERSION,
        flow: config.flow_label(),
        base: config.base.clone(),
        n: config.n.unwrap_or_default(),
        kappa: config.kappa.unwrap_or_default(),
        r: config.r.unwrap_or_default(),
        d_ladder: ds,
        runs,
    };
    write_json(&out.join("replay.json"), &output)?;
    Ok(output)
}

/// Output directory: the command line wins over the config's `out`.
pub fn resolve_out(config: &ExperimentConfig, cli: Option<PathBuf>) -> Result<PathBuf> {
    match (cli, &config.out) {
        (Some(p), _) => Ok(p),
        (None, Some(p)) => Ok(PathBuf::from(p)),
        (None, None) => Err(crate::error::Error::config("out", "no output directory given")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::orbitlin::{GrowthVerdict, InhomPattern};

    #[test]
    fn orbit_torus_irr_unit_multipliers() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::for_flow("torus-irr", vec![0.0, 0.0]);
        c.n = Some(10);
        let o = cmd_orbit(&c, dir.path()).unwrap();
        assert_eq!(o.frames.len(), 21);
        assert!(o.frames.iter().all(|f| (f.b[0][0] - 1.0).abs() < 1e-12));
        let back: OrbitOutput =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("frames.json")).unwrap()).unwrap();
        assert_eq!(back, o);
    }

    #[test]
    fn orbit_plane_shear_contracting_normal() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::for_flow("plane-shear", vec![0.0, 0.0]);
        c.n = Some(5);
        let o = cmd_orbit(&c, dir.path()).unwrap();
        assert_eq!(o.frames.len(), 11);
        for f in &o.frames {
            assert!((f.b[0][0] - (-1.0f64).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn orbit_unknown_flow() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::for_flow("saddle", vec![0.0, 0.0]);
        c.n = Some(3);
        let err = cmd_orbit(&c, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, ref message } if field == "flow" && message.contains("saddle")));
    }

    #[test]
    fn defect_plane_shear_kappa0_flat_cases() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::for_flow("plane-shear", vec![0.0, 0.3]);
        c.n = Some(3);
        c.d = Some(1e-2);
        c.kappa = Some(0);
        c.r = Some(0.1);
        c.defect_grid = Some(DefectGrid {
            t_per_unit: 8,
            s_long: 6,
            negative_stride: 0,
        });
        let o = cmd_defect(&c, dir.path()).unwrap();
        assert_eq!(o.entries.len(), 1);
        assert!(o.entries[0].per_case[0].sup <= 1e-8, "{:?}", o.entries[0].per_case[0]);
        assert!(dir.path().join(defect_csv_name(1e-2)).exists());
        assert!(o.fit.is_none());
    }

    #[test]
    fn defect_oversized_torus_radius() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::for_flow("torus-ms", vec![0.0, 0.0]);
        c.n = Some(3);
        c.d = Some(1e-2);
        c.kappa = Some(1);
        c.r = Some(0.3);
        match cmd_defect(&c, dir.path()) {
            Err(Error::ChartPrecondition { bound, radius, .. }) => assert!(bound >= radius),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn probe_verdicts() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::for_flow("torus-ms", vec![0.0, 0.0]);
        c.n_list = Some(vec![10, 20, 40]);
        assert_eq!(cmd_probe(&c, dir.path()).unwrap().verdict, GrowthVerdict::Bounded);
        c.flow = Some("torus-irr".into());
        assert_eq!(cmd_probe(&c, dir.path()).unwrap().verdict, GrowthVerdict::Growing);
        c.inhomogeneity = InhomPattern::Zero;
        let r = cmd_probe(&c, dir.path()).unwrap();
        assert!(r.rows.iter().all(|row| row.sup_norm == 0.0));
        let csv = std::fs::read_to_string(dir.path().join("growth.csv")).unwrap();
        assert!(csv.starts_with("N,trial,sup_norm\n"));
    }

    #[test]
    fn replay_zero_inhomogeneity_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::for_flow("plane-shear", vec![0.0, 0.3]);
        c.n = Some(3);
        c.d = Some(1e-2);
        c.kappa = Some(1);
        c.r = Some(0.1);
        c.l_sweep = Some(vec![3.0]);
        c.inhomogeneity = InhomPattern::Zero;
        let o = cmd_replay(&c, dir.path()).unwrap();
        let rep = &o.runs[0].replays[0];
        // Exact up to the integrator: the unshifted start already meets the target.
        assert_eq!(rep.shadow.status, crate::orbitlin::ShadowStatus::Found);
        assert!(rep.shadow.sup <= 1e-6, "{}", rep.shadow.sup);
        assert!(rep.residual.unwrap() <= 1e-12);
    }

    #[test]
    fn out_resolution() {
        let mut c = ExperimentConfig::for_flow("torus-ms", vec![0.0, 0.0]);
        assert!(resolve_out(&c, None).is_err());
        c.out = Some("runs/a".into());
        assert_eq!(resolve_out(&c, None).unwrap(), PathBuf::from("runs/a"));
        assert_eq!(resolve_out(&c, Some("b".into())).unwrap(), PathBuf::from("b"));
    }
}
