//! JSON run configuration: model selection, condition list, windows,
//! tolerances and output settings, validated with field-level diagnostics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowcalc::StepControl;
use crate::hyperbolicity::{Condition, ReportConfig};
use crate::models::{
    make_circle_rotation, make_double_sink, make_geometric_lorenz_suspension, make_intermittent_lorenz_map,
    make_linear, make_linear_saddle, make_lorenz, make_polynomial, make_power_lorenz_map, IntervalMap, Model,
    PolynomialTable, SuspensionConfig,
};

/// Names accepted in the `model` field.
pub const MODEL_NAMES: &[&str] = &[
    "lorenz",
    "linear_saddle",
    "linear",
    "polynomial",
    "double_sink",
    "intermittent",
    "power_lorenz",
    "rotation",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Windows {
    /// Averaging time of flows.
    pub t: Option<f64>,
    /// Number of returns; sets `t` on suspensions from the roof mean.
    pub n: Option<usize>,
    pub tau: Option<f64>,
    pub transient: Option<f64>,
    pub warmup: Option<f64>,
    pub uniform: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub eta: Option<f64>,
    pub min_fraction: Option<f64>,
    pub singular_radius: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    /// Output grid step of every orbit.
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: PathBuf,
    pub csv: bool,
    /// Also write binary orbit caches.
    pub binary: bool,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings {
            dir: PathBuf::from("out"),
            csv: true,
            binary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub orbits: usize,
    /// Orbit length; defaults to the flow averaging window.
    pub t: Option<f64>,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings { orbits: 1, t: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSettings {
    /// Number of exponents; defaults to the full dimension.
    pub k: Option<usize>,
    pub t: f64,
    /// Fraction of the orbit discarded before averaging.
    pub transient: f64,
}

impl Default for SpectrumSettings {
    fn default() -> Self {
        SpectrumSettings {
            k: None,
            t: 2000.0,
            transient: crate::measures::SPECTRUM_TRANSIENT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureSettings {
    pub bins: usize,
    /// Base-map samples for the histogram and Birkhoff averages.
    pub samples: usize,
    /// Iterates applied to each Lebesgue-random seed in the invariance test.
    pub depth: usize,
    /// Cells per axis of the basin grid; 0 skips basin sampling.
    pub basin_per_axis: usize,
    pub basin_tol: f64,
    /// Returns used by the entropy chain check.
    pub pesin_n: usize,
}

impl Default for MeasureSettings {
    fn default() -> Self {
        MeasureSettings {
            bins: 50,
            samples: 1_000_000,
            depth: 10,
            basin_per_axis: 0,
            basin_tol: 0.05,
            pesin_n: 10_000,
        }
    }
}

/// Complete description of a batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Diagonal of a `linear_saddle`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    /// Row-major matrix of a `linear` field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PolynomialTable>,
    /// Coefficient table file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_path: Option<PathBuf>,
    /// Fiber and roof constants of suspension models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suspension: Option<SuspensionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub windows: Windows,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSettings,
    #[serde(default)]
    pub simulate: SimulateSettings,
    #[serde(default)]
    pub spectrum: SpectrumSettings,
    #[serde(default)]
    pub measure: MeasureSettings,
}

fn positive(field: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::config(field, format!("must be positive and finite, got {x}"))),
        _ => Ok(()),
    }
}

fn nonnegative(field: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x >= 0.0 && x.is_finite()) => Err(Error::config(field, format!("must be nonnegative and finite, got {x}"))),
        _ => Ok(()),
    }
}

impl RunConfig {
    /// Parse and validate; errors name the offending field.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let field = if path == "." { "<root>".to_string() } else { path };
            Error::config(field, format!("{inner} (line {}, column {})", inner.line(), inner.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !MODEL_NAMES.contains(&self.model.as_str()) {
            return Err(Error::config(
                "model",
                format!("unknown model `{}`; expected one of {}", self.model, MODEL_NAMES.join(", ")),
            ));
        }
        self.conditions()?;
        let w = &self.windows;
        positive("windows.t", w.t)?;
        positive("windows.tau", w.tau)?;
        positive("windows.uniform", w.uniform)?;
        nonnegative("windows.transient", w.transient)?;
        nonnegative("windows.warmup", w.warmup)?;
        if w.n == Some(0) {
            return Err(Error::config("windows.n", "must be at least 1"));
        }
        let t = &self.tolerances;
        positive("tolerances.rtol", t.rtol)?;
        positive("tolerances.atol", t.atol)?;
        positive("tolerances.dt", t.dt)?;
        positive("tolerances.singular_radius", t.singular_radius)?;
        if let Some(eta) = t.eta {
            if !(eta < 0.0) {
                return Err(Error::config("tolerances.eta", format!("must be negative, got {eta}")));
            }
        }
        if let Some(f) = t.min_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config("tolerances.min_fraction", format!("must lie in (0, 1], got {f}")));
            }
        }
        if self.ensemble == Some(0) {
            return Err(Error::config("ensemble", "must be at least 1"));
        }
        if self.simulate.orbits == 0 {
            return Err(Error::config("simulate.orbits", "must be at least 1"));
        }
        positive("simulate.t", self.simulate.t)?;
        positive("spectrum.t", Some(self.spectrum.t))?;
        if !(0.0..1.0).contains(&self.spectrum.transient) {
            return Err(Error::config("spectrum.transient", "must lie in [0, 1)"));
        }
        let m = &self.measure;
        if m.bins == 0 {
            return Err(Error::config("measure.bins", "must be at least 1"));
        }
        if m.samples < 2 {
            return Err(Error::config("measure.samples", "must be at least 2"));
        }
        if m.pesin_n < 2 {
            return Err(Error::config("measure.pesin_n", "must be at least 2"));
        }
        positive("measure.basin_tol", Some(m.basin_tol))?;
        for (k, v) in &self.params {
            if !v.is_finite() {
                return Err(Error::config(format!("params.{k}"), "must be finite"));
            }
        }
        Ok(())
    }

    /// Requested conditions; all of them when the list is absent.
    pub fn conditions(&self) -> Result<Vec<Condition>> {
        match &self.conditions {
            None => Ok(Condition::ALL.to_vec()),
            Some(list) if list.is_empty() => Err(Error::config("conditions", "list is empty")),
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    Condition::parse(s).ok_or_else(|| Error::config(format!("conditions[{i}]"), format!("unknown condition `{s}`")))
                })
                .collect(),
        }
    }

    fn param(&self, name: &str, default: f64) -> f64 {
        self.params.get(name).copied().unwrap_or(default)
    }

    fn check_params(&self, allowed: &[&str]) -> Result<()> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::config(
                format!("params.{k}"),
                format!("not a parameter of `{}` (expected {})", self.model, if allowed.is_empty() { "none".to_string() } else { allowed.join(", ") }),
            )),
            None => Ok(()),
        }
    }

    fn base_map(&self) -> Result<Option<IntervalMap>> {
        Ok(match self.model.as_str() {
            "intermittent" => {
                self.check_params(&[])?;
                Some(make_intermittent_lorenz_map())
            }
            "power_lorenz" => {
                self.check_params(&["exponent"])?;
                Some(make_power_lorenz_map(self.param("exponent", 0.5)).map_err(|e| Error::config("params.exponent", e.to_string()))?)
            }
            "rotation" => {
                self.check_params(&["shift"])?;
                Some(make_circle_rotation(self.param("shift", 0.5f64.sqrt())))
            }
            _ => None,
        })
    }

    /// Instantiate the model; relative table paths resolve against `base_dir`.
    pub fn build_model(&self, base_dir: &Path) -> Result<Model> {
        if let Some(map) = self.base_map()? {
            let cfg = self.suspension.unwrap_or_default();
            return Ok(make_geometric_lorenz_suspension(map, &cfg).map_err(|e| Error::config("suspension", e.to_string()))?.into());
        }
        let field = match self.model.as_str() {
            "lorenz" => {
                self.check_params(&["sigma", "rho", "beta"])?;
                make_lorenz(self.param("sigma", 10.0), self.param("rho", 28.0), self.param("beta", 8.0 / 3.0))
                    .map_err(|e| Error::config("params", e.to_string()))?
            }
            "linear_saddle" => {
                self.check_params(&[])?;
                let eigs = self.eigenvalues.as_ref().ok_or_else(|| Error::config("eigenvalues", "required by `linear_saddle`"))?;
                make_linear_saddle(eigs).map_err(|e| Error::config("eigenvalues", e.to_string()))?
            }
            "linear" => {
                self.check_params(&[])?;
                let rows = self.matrix.as_ref().ok_or_else(|| Error::config("matrix", "required by `linear`"))?;
                let n = rows.len();
                if n == 0 || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::config("matrix", "must be a nonempty square matrix"));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                make_linear("linear", DMatrix::from_row_slice(n, n, &flat)).map_err(|e| Error::config("matrix", e.to_string()))?
            }
            "polynomial" => {
                self.check_params(&[])?;
                let table = match (&self.table, &self.table_path) {
                    (Some(t), None) => t.clone(),
                    (None, Some(p)) => {
                        let path = base_dir.join(p);
                        let text = std::fs::read_to_string(&path)
                            .map_err(|e| Error::config("table_path", format!("{}: {e}", path.display())))?;
                        serde_json::from_str(&text).map_err(|e| Error::config("table_path", e.to_string()))?
                    }
                    _ => return Err(Error::config("table", "exactly one of `table` and `table_path` is required")),
                };
                make_polynomial(&table).map_err(|e| Error::config("table", e.to_string()))?
            }
            "double_sink" => {
                self.check_params(&[])?;
                make_double_sink()
            }
            other => unreachable!("model `{other}` passed validation"),
        };
        Ok(field.into())
    }

    /// Integrator settings with the configured overrides.
    pub fn step_control(&self, model: &Model) -> StepControl {
        let mut ctrl = ReportConfig::for_model(model).ctrl;
        let t = &self.tolerances;
        if let Some(v) = t.rtol {
            ctrl.rtol = v;
        }
        if let Some(v) = t.atol {
            ctrl.atol = v;
        }
        if let Some(v) = t.dt {
            ctrl.dt_out = v;
        }
        ctrl
    }

    /// Report settings: model defaults overridden by the configured values.
    pub fn report_config(&self, model: &Model) -> Result<ReportConfig> {
        let mut rc = ReportConfig::for_model(model);
        rc.conditions = self.conditions()?;
        rc.seed = self.seed;
        rc.workers = self.workers;
        rc.ctrl = self.step_control(model);
        if let Some(v) = self.d_s {
            rc.d_s = v;
        }
        if let Some(v) = self.ensemble {
            rc.ensemble = v;
        }
        let w = &self.windows;
        if let Some(v) = w.t {
            rc.window = v;
        }
        if let (Some(n), Model::Suspension(s)) = (w.n, model) {
            rc.window = n as f64 * s.roof.mean();
        }
        if let Some(v) = w.tau {
            rc.tau = v;
        }
        if let Some(v) = w.transient {
            rc.transient = v;
        }
        if let Some(v) = w.warmup {
            rc.warmup = v;
        }
        if let Some(v) = w.uniform {
            rc.uniform_window = v;
        }
        let t = &self.tolerances;
        if let Some(v) = t.eta {
            rc.eta = v;
        }
        if let Some(v) = t.min_fraction {
            rc.min_fraction = v;
        }
        if let Some(v) = t.singular_radius {
            rc.singular_radius = v;
        }
        rc.validate()?;
        Ok(rc)
    }

    /// Canonical JSON used for hashing and for embedding in artifacts.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
