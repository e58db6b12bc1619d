use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcore::{FieldDef, FlowEngine, Point, Tangent, VectorFieldSpec};
use crate::methodlab::{ChartCheck, DefectGrid, MethodConfig};
use crate::orbitlin::{sample_orbit_frames, InhomKind, InhomPattern, InhomSeq, ShadowBudget};

/// Subcommand a config is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Orbit,
    Defect,
    Probe,
    Replay,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Orbit => "orbit",
            Command::Defect => "defect",
            Command::Probe => "probe",
            Command::Replay => "replay",
        }
    }
}

fn default_pattern() -> InhomPattern {
    InhomPattern::ConstantNormal
}

fn is_default_pattern(p: &InhomPattern) -> bool {
    *p == InhomPattern::ConstantNormal
}

/// Experiment description read from TOML.
///
/// Exactly one of `flow` (a built-in name) and `[field]` (an expression field)
/// must be given. Which of the optional entries are required depends on the
/// subcommand, see [`ExperimentConfig::validate`]. When both `d` and `d_ladder`
/// are present the ladder is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldDef>,
    pub base: Vec<f64>,
    /// Window half-length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_ladder: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<u8>,
    /// Radius of the bump `γ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default = "default_pattern", skip_serializing_if = "is_default_pattern")]
    pub inhomogeneity: InhomPattern,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart_check: Option<ChartCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect_grid: Option<DefectGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadow: Option<ShadowBudget>,
    /// Shadowing constants `L` tried by `replay`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_sweep: Option<Vec<f64>>,
    /// Random unit trials of `probe`, on top of the pattern.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory used when none is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl ExperimentConfig {
    /// Minimal config for a named flow; everything else unset.
    pub fn for_flow(flow: &str, base: Vec<f64>) -> Self {
        ExperimentConfig {
            flow: Some(flow.to_string()),
            field: None,
            base,
            n: None,
            n_list: None,
            d: None,
            d_ladder: None,
            kappa: None,
            r: None,
            inhomogeneity: default_pattern(),
            chart_check: None,
            defect_grid: None,
            shadow: None,
            l_sweep: None,
            trials: None,
            seed: None,
            out: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn engine(&self) -> Result<FlowEngine> {
        match (&self.flow, &self.field) {
            (Some(name), None) => FlowEngine::builtin(name).map_err(|e| Error::config("flow", e.to_string())),
            (None, Some(def)) => Ok(FlowEngine::new(
                VectorFieldSpec::from_def(def).map_err(|e| Error::config("field", e.to_string()))?,
            )),
            (Some(_), Some(_)) => Err(Error::config("flow", "give either `flow` or `[field]`, not both")),
            (None, None) => Err(Error::config("flow", "one of `flow` or `[field]` is required")),
        }
    }

    pub fn flow_label(&self) -> String {
        match (&self.flow, &self.field) {
            (Some(name), _) => name.clone(),
            (None, Some(def)) => def.name.clone().unwrap_or_else(|| "custom".into()),
            _ => String::new(),
        }
    }

    pub fn base_point(&self) -> Point {
        Point::from_vec(self.base.clone())
    }

    /// `d_ladder` if given, else `[d]`.
    pub fn d_values(&self) -> Vec<f64> {
        match (&self.d_ladder, self.d) {
            (Some(l), _) => l.clone(),
            (None, Some(d)) => vec![d],
            (None, None) => Vec::new(),
        }
    }

    pub fn defect_grid(&self) -> DefectGrid {
        self.defect_grid.clone().unwrap_or_default()
    }

    pub fn shadow_budget(&self) -> ShadowBudget {
        self.shadow.unwrap_or_default()
    }

    fn require<T>(&self, v: &Option<T>, field: &str, cmd: Command) -> Result<()> {
        if v.is_none() {
            return Err(Error::config(field, format!("required by `{}`", cmd.name())));
        }
        Ok(())
    }

    /// Checks the entries `cmd` needs, without building anything expensive.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        let engine = self.engine()?;
        if self.base.len() != engine.dim() {
            return Err(Error::config(
                "base",
                format!("expected {} coordinates, got {}", engine.dim(), self.base.len()),
            ));
        }
        if self.base.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("base", "coordinates must be finite"));
        }
        if let Some(0) = self.n {
            return Err(Error::config("n", "must be positive"));
        }
        if let Some(list) = &self.n_list {
            if list.is_empty() || list[0] == 0 || list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config("n_list", "must be positive and strictly increasing"));
            }
        }
        for d in self.d_values() {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::config(
                    if self.d_ladder.is_some() { "d_ladder" } else { "d" },
                    format!("d = {d} must be positive"),
                ));
            }
        }
        if let Some(k) = self.kappa {
            if k > 1 {
                return Err(Error::config("kappa", format!("must be 0 or 1, got {k}")));
            }
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::config("r", format!("must be positive, got {r}")));
            }
        }
        if let Some(l) = &self.l_sweep {
            if l.is_empty() || l.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::config("l_sweep", "needs at least one positive value"));
            }
        }
        if let Some(g) = &self.defect_grid {
            if g.t_per_unit == 0 || g.s_long == 0 {
                return Err(Error::config("defect_grid", "sample counts must be positive"));
            }
        }
        if let Some(b) = &self.shadow {
            if b.max_evals == 0 || b.samples_per_unit == 0 || !(b.min_step > 0.0 && b.min_step < 1.0) {
                return Err(Error::config(
                    "shadow",
                    "max_evals and samples_per_unit must be positive, min_step in (0, 1)",
                ));
            }
        }
        match cmd {
            Command::Orbit => self.require(&self.n, "n", cmd)?,
            Command::Probe => {
                self.require(&self.n_list, "n_list", cmd)?;
                if self.trials.unwrap_or(0) > 0 && self.seed.is_none() {
                    return Err(Error::config("seed", "random trials need an explicit seed"));
                }
            }
            Command::Defect | Command::Replay => {
                self.require(&self.n, "n", cmd)?;
                self.require(&self.kappa, "kappa", cmd)?;
                self.require(&self.r, "r", cmd)?;
                if self.d_values().is_empty() {
                    return Err(Error::config("d", format!("`d` or `d_ladder` is required by `{}`", cmd.name())));
                }
                if cmd == Command::Replay {
                    self.require(&self.l_sweep, "l_sweep", cmd)?;
                }
            }
        }
        Ok(())
    }

    /// `z_k`, `k = -N..=N`, along the orbit of `base` (`z_k` sits at `Φ(k+N, base)`).
    pub fn inhomogeneity_vectors(&self, engine: &FlowEngine, n: usize) -> Result<Vec<Tangent>> {
        let base = self.base_point();
        let center = engine.flow_map(n as f64, &base)?;
        let frames = sample_orbit_frames(engine, &center, n)?;
        Ok(InhomSeq::from_pattern(self.inhomogeneity, InhomKind::FullSpace, &frames).vectors)
    }

    /// Method parameters for one `d` of the ladder.
    pub fn method_config(&self, engine: &FlowEngine, d: f64, z: Vec<Tangent>) -> Result<MethodConfig> {
        let n = self.n.ok_or_else(|| Error::config("n", "missing"))?;
        let kappa = self.kappa.ok_or_else(|| Error::config("kappa", "missing"))?;
        let r = self.r.ok_or_else(|| Error::config("r", "missing"))?;
        if z.len() != 2 * n + 1 || self.base.len() != engine.dim() {
            return Err(Error::config("base", "does not match the flow dimension"));
        }
        let cfg = MethodConfig::new(d, r, n, kappa, self.base_point(), z)?;
        Ok(cfg.with_chart_check(self.chart_check.unwrap_or_default()))
    }
}
