use std::path::{Path, PathBuf};

use ffgap::ltqo::OmegaModel;
use ffgap::models::PerturbationParams;
use ffgap::FFunctionSpec;
use serde::Deserialize;

/// A rejected configuration, with the offending field.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

fn reject<T>(field: &str, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { field: field.into(), message: message.into() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Orbital,
    Aklt,
    Custom,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// JSON interaction file for `kind = "custom"`, relative to the config file.
    pub file: Option<PathBuf>,
    /// Left endpoint of every volume.
    #[serde(default)]
    pub offset: i64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum DSchedule {
    One(u64),
    Many(Vec<u64>),
}

impl DSchedule {
    pub fn values(&self) -> Vec<u64> {
        match self {
            DSchedule::One(d) => vec![*d],
            DSchedule::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsGrid {
    pub start: f64,
    pub stop: f64,
    /// Number of intervals; the grid has `steps + 1` points.
    pub steps: usize,
}

impl EpsGrid {
    pub fn points(&self) -> Vec<f64> {
        let h = (self.stop - self.start) / self.steps as f64;
        (0..=self.steps).map(|i| if i == self.steps { self.stop } else { self.start + i as f64 * h }).collect()
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    #[serde(rename = "A")]
    pub amplitude: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    pub s: Option<f64>,
    pub kappa: Option<f64>,
    pub max_radius: Option<u64>,
}

impl PerturbationConfig {
    pub fn params(&self) -> PerturbationParams {
        let d = PerturbationParams::default();
        PerturbationParams {
            amplitude: self.amplitude.unwrap_or(d.amplitude),
            k: self.k.unwrap_or(d.k),
            s: self.s.unwrap_or(d.s),
            kappa: self.kappa.unwrap_or(d.kappa),
            max_radius: self.max_radius.unwrap_or(d.max_radius),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    /// Decomposition constant; calibrated from the flow when absent.
    #[serde(rename = "C")]
    pub c: Option<f64>,
    /// Unperturbed gap; taken from `validate` when absent.
    pub gamma0: Option<f64>,
    /// LTQO decay; defaults to the model's known profile.
    pub omega: Option<OmegaModel>,
    /// Auxiliary F-function for the sp₀ envelope; the envelope is skipped when absent.
    pub f_tilde: Option<FFunctionSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LtqoConfig {
    pub max_k: u64,
    /// Restrict to even observables; defaults to true for fermions.
    pub even_only: Option<bool>,
}

impl Default for LtqoConfig {
    fn default() -> Self {
        LtqoConfig { max_k: 2, even_only: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub lengths: Vec<usize>,
    pub gamma: f64,
    /// Flow grid is the main ε grid truncated at this value.
    pub max_eps: f64,
    /// Random vectors per ε in the form-bound check.
    pub trials: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { lengths: vec![8], gamma: 0.5, max_eps: 0.02, trials: 1000 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HigherGapConfig {
    pub nu: f64,
    pub mu: f64,
}

impl Default for HigherGapConfig {
    fn default() -> Self {
        HigherGapConfig { nu: 1.0, mu: 2.0 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sp0Config {
    pub eps: f64,
}

impl Default for Sp0Config {
    fn default() -> Self {
        Sp0Config { eps: 0.02 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: PathBuf::from("ffgap-out"), formats: vec![Format::Csv, Format::Json] }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub lengths: Vec<usize>,
    #[serde(rename = "D", default = "default_d")]
    pub d: DSchedule,
    pub eps_grid: EpsGrid,
    /// Floor the measured gaps must stay above.
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub ltqo: LtqoConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub higher_gaps: HigherGapConfig,
    #[serde(default)]
    pub sp0scan: Sp0Config,
    #[serde(default)]
    pub outputs: OutputConfig,
    /// Directory of the config file, for resolving relative paths.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_d() -> DSchedule {
    DSchedule::One(2)
}

fn default_seeds() -> Vec<u64> {
    vec![7]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { field: String::new(), message: format!("cannot read {}: {e}", path.display()) })?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Parses and checks the parts of the schema that do not depend on the
    /// requested pipelines.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError { field: String::new(), message: e.to_string() })?;
        cfg.check_common()?;
        Ok(cfg)
    }

    pub fn perturbation(&self) -> PerturbationParams {
        self.perturbation.as_ref().map_or_else(PerturbationParams::default, PerturbationConfig::params)
    }

    pub fn custom_file(&self) -> Option<PathBuf> {
        self.model.file.as_ref().map(|f| if f.is_absolute() { f.clone() } else { self.base_dir.join(f) })
    }

    fn check_common(&self) -> Result<(), ConfigError> {
        match (self.model.kind, &self.model.file) {
            (ModelKind::Custom, None) => return reject("model.file", "custom models need an interaction file"),
            (ModelKind::Orbital | ModelKind::Aklt, Some(_)) => {
                return reject("model.file", "only custom models read an interaction file")
            }
            _ => {}
        }
        if self.lengths.is_empty() {
            return reject("lengths", "at least one length is required");
        }
        if let Some(l) = self.lengths.iter().find(|&&l| l < 2) {
            return reject("lengths", format!("length {l} is below 2"));
        }
        if self.d.values().is_empty() {
            return reject("D", "the schedule is empty");
        }
        let g = &self.eps_grid;
        if g.start != 0.0 {
            return reject("eps_grid.start", format!("the ε grid must start at 0, got {}", g.start));
        }
        if !(g.stop.is_finite() && g.stop > 0.0) {
            return reject("eps_grid.stop", "must be positive and finite");
        }
        if g.steps == 0 {
            return reject("eps_grid.steps", "must be at least 1");
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return reject("gamma", "the tracking floor must be a nonnegative number");
        }
        if self.seeds.is_empty() {
            return reject("seeds", "at least one seed is required");
        }
        if let Some(c) = self.constants.c {
            if !(c.is_finite() && c > 0.0) {
                return reject("constants.C", "must be positive");
            }
        }
        if let Some(g0) = self.constants.gamma0 {
            if !(g0.is_finite() && g0 > 0.0) {
                return reject("constants.gamma0", "must be positive");
            }
        }
        if self.flow.lengths.is_empty() {
            return reject("flow.lengths", "at least one length is required");
        }
        if !(self.flow.gamma > 0.0) {
            return reject("flow.gamma", "the filter bandwidth must be positive");
        }
        if !(self.flow.max_eps > 0.0) {
            return reject("flow.max_eps", "must be positive");
        }
        if !(self.higher_gaps.nu < self.higher_gaps.mu) {
            return reject("higher_gaps", "need nu < mu");
        }
        if !(self.sp0scan.eps.is_finite() && self.sp0scan.eps > 0.0) {
            return reject("sp0scan.eps", "must be positive");
        }
        Ok(())
    }

    /// Stability pipelines need `diam Λ > max{2D, R}` for every length and D.
    pub fn check_stability_lengths(field: &str, lengths: &[usize], range: u64, ds: &[u64]) -> Result<(), ConfigError> {
        for &d in ds {
            let need = (2 * d).max(range);
            if let Some(l) = lengths.iter().find(|&&l| (l as u64).saturating_sub(1) <= need) {
                return reject(field, format!("length {l} has diameter ≤ max(2D, R) = {need} for D = {d}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
lengths = [8, 10]
[model]
kind = "orbital"
[eps_grid]
start = 0.0
stop = 0.05
steps = 5
"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(c.d.values(), vec![2]);
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.eps_grid.points().len(), 6);
        assert_eq!(*c.eps_grid.points().last().unwrap(), 0.05);
        assert_eq!(c.perturbation(), PerturbationParams::default());
        ExperimentConfig::check_stability_lengths("lengths", &c.lengths, 1, &c.d.values()).unwrap();
    }

    #[test]
    fn nonzero_start_is_rejected() {
        let e = ExperimentConfig::parse(&BASE.replace("start = 0.0", "start = 0.01")).unwrap_err();
        assert_eq!(e.field, "eps_grid.start");
    }

    #[test]
    fn unknown_keys_report_their_line() {
        let e = ExperimentConfig::parse(&format!("{BASE}bogus = 1\n")).unwrap_err();
        assert!(e.message.contains("bogus") && e.message.contains("line"), "{e}");
    }

    #[test]
    fn short_lengths_are_rejected_for_stability_runs() {
        let check = |c: &ExperimentConfig| ExperimentConfig::check_stability_lengths("lengths", &c.lengths, 1, &c.d.values());
        let c = ExperimentConfig::parse(&BASE.replace("[8, 10]", "[5, 10]")).unwrap();
        assert_eq!(check(&c).unwrap_err().field, "lengths");
        let c = ExperimentConfig::parse(&BASE.replace("lengths = [8, 10]", "lengths = [12]\nD = [2, 5]")).unwrap();
        assert!(check(&c).is_ok());
        let c = ExperimentConfig::parse(&BASE.replace("lengths = [8, 10]", "lengths = [12]\nD = [6]")).unwrap();
        assert!(check(&c).is_err());
    }

    #[test]
    fn omega_and_perturbation_sections_parse() {
        let text = format!(
            "{BASE}[perturbation]\nA = 0.5\nmax_radius = 2\n[constants]\nC = 0.4\nomega = {{ family = \"step\", cutoff = 3, height = 2.0 }}\n"
        );
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.perturbation().amplitude, 0.5);
        assert_eq!(c.perturbation().max_radius, 2);
        assert_eq!(c.constants.omega, Some(OmegaModel::Step { cutoff: 3, height: 2.0 }));
    }
}
