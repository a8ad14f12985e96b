//! JSON experiment configuration: strict schema, validation, canonical hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::model::{CoefficientMatrix, DetailedBalanceWeights, ModelParams, SpeciesField};
use crate::noise::NoiseSpec;
use crate::scheme::{initial_data, TimeSpec};

/// Relative slack when checking that one step size is an integer multiple of another.
const DIVISIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n: usize,
    pub delta: f64,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub noise: NoiseSpec,
    /// Explicit detailed-balance weights; derived from `A` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<Vec<f64>>,
    #[serde(default)]
    pub clamp_positive_part: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "J")]
    pub cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Simulate,
    ConvergenceTime,
    ConvergenceSpace,
    Longtime,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::Simulate => "simulate",
            StudyKind::ConvergenceTime => "convergence_time",
            StudyKind::ConvergenceSpace => "convergence_space",
            StudyKind::Longtime => "longtime",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub kind: StudyKind,
    /// `dt` values for time studies, `J` values for space studies.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<f64>,
    /// Reference `dt` (time) or `J` (space).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    #[serde(default)]
    pub record_every: usize,
    /// Fraction of the horizon dropped before decay-rate fits.
    #[serde(default = "default_transient", skip_serializing_if = "is_default_transient")]
    pub transient_fraction: f64,
}

fn default_transient() -> f64 {
    0.05
}

fn is_default_transient(v: &f64) -> bool {
    *v == default_transient()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSection {
    #[default]
    /// Indicator of `[0, 1/2]` and `10x²(1/2 - x/3)`, extended by cosines for extra species.
    Default,
    /// `mean_i + amplitude cos(πx)` per species.
    Cosine { mean: Vec<f64>, amplitude: f64 },
    Constant { values: Vec<f64> },
}

fn is_default_initial(v: &InitialSection) -> bool {
    *v == InitialSection::Default
}

/// On-disk layout of a configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub ensemble: EnsembleSection,
    pub study: StudySection,
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "is_default_initial")]
    pub initial: InitialSection,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = extract_field(&msg).unwrap_or_else(|| "document".to_string());
            Error::config(field, msg)
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON with the output directory blanked, so
    /// that identical physics hashes identically wherever it is written.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output.dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn extract_field(msg: &str) -> Option<String> {
    let start = msg.find('`')?;
    let rest = &msg[start + 1..];
    let end = rest.find('`')?;
    Some(rest[..end].to_string())
}

/// Validated experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub raw: ConfigFile,
    pub params: ModelParams,
    pub grid: GridSpec,
    pub time: TimeSpec,
    pub samples: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_file(raw: ConfigFile) -> Result<Self> {
        let m = &raw.model;
        if m.n == 0 {
            return Err(Error::config("model.n", "need at least one species"));
        }
        if m.a.len() != m.n || m.a.iter().any(|r| r.len() != m.n) {
            return Err(Error::config("model.A", format!("must be {0}x{0}", m.n)));
        }
        let a = CoefficientMatrix::from_rows(&m.a).map_err(|e| Error::config("model.A", e.to_string()))?;
        if !(m.delta > 0.0 && m.delta.is_finite()) {
            return Err(Error::config("model.delta", format!("must be positive, got {}", m.delta)));
        }
        m.noise.validate().map_err(|e| Error::config("model.noise", e.to_string()))?;
        let mut params = ModelParams::new(m.delta, a, m.noise).map_err(|e| Error::config("model", e.to_string()))?;
        params.clamp_positive_part = m.clamp_positive_part;
        if let Some(pi) = &m.pi {
            let w = DetailedBalanceWeights::new(pi.clone(), &params.a)
                .map_err(|e| Error::config("model.pi", e.to_string()))?;
            params.pi = Some(w);
        }

        let grid = GridSpec::new(raw.grid.cells).map_err(|e| Error::config("grid.J", e.to_string()))?;
        if !(raw.time.dt > 0.0 && raw.time.dt.is_finite()) {
            return Err(Error::config("time.dt", format!("must be positive, got {}", raw.time.dt)));
        }
        let time = TimeSpec::with_horizon(raw.time.dt, raw.time.horizon)
            .map_err(|e| Error::config("time", e.to_string()))?;
        if raw.ensemble.samples == 0 {
            return Err(Error::config("ensemble.samples", "need at least one sample"));
        }

        match &raw.initial {
            InitialSection::Default => {}
            InitialSection::Cosine { mean, .. } if mean.len() != m.n => {
                return Err(Error::config("initial.mean", format!("need {} values", m.n)));
            }
            InitialSection::Constant { values } if values.len() != m.n => {
                return Err(Error::config("initial.values", format!("need {} values", m.n)));
            }
            _ => {}
        }

        let cfg = ExperimentConfig {
            samples: raw.ensemble.samples,
            seed: raw.ensemble.seed,
            raw,
            params,
            grid,
            time,
        };
        cfg.validate_study()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_file(ConfigFile::from_json(&text)?)
    }

    pub fn study(&self) -> &StudySection {
        &self.raw.study
    }

    pub fn output_dir(&self) -> &Path {
        &self.raw.output.dir
    }

    pub fn hash(&self) -> String {
        self.raw.hash()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.raw.ensemble.seed = seed;
        self
    }

    pub fn with_samples(mut self, samples: usize) -> Result<Self> {
        if samples == 0 {
            return Err(Error::config("ensemble.samples", "need at least one sample"));
        }
        self.samples = samples;
        self.raw.ensemble.samples = samples;
        Ok(self)
    }

    pub fn with_output_dir(mut self, dir: PathBuf) -> Self {
        self.raw.output.dir = dir;
        self
    }

    pub fn with_study_kind(mut self, kind: StudyKind) -> Result<Self> {
        self.raw.study.kind = kind;
        self.validate_study()?;
        Ok(self)
    }

    /// Initial state on `grid`.
    pub fn initial_state(&self, grid: &GridSpec) -> SpeciesField {
        let n = self.params.n();
        match &self.raw.initial {
            InitialSection::Default => initial_data(n, grid),
            InitialSection::Cosine { mean, amplitude } => SpeciesField::from_fn(n, grid, |i, x| {
                mean[i] + amplitude * (std::f64::consts::PI * x).cos()
            }),
            InitialSection::Constant { values } => SpeciesField::constant(values, grid),
        }
    }

    /// Time-study levels and reference as step sizes, with coupling factors.
    pub fn time_levels(&self) -> Result<(f64, Vec<(f64, usize)>)> {
        let study = &self.raw.study;
        let reference = study.reference.unwrap_or(self.time.dt);
        let horizon = self.raw.time.horizon;
        TimeSpec::with_horizon(reference, horizon).map_err(|_| {
            Error::config("study.reference", format!("{reference} does not divide T = {horizon}"))
        })?;
        let mut out = Vec::with_capacity(study.levels.len());
        for (k, &dt) in study.levels.iter().enumerate() {
            let field = format!("study.levels[{k}]");
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::config(field, format!("step {dt} must be positive")));
            }
            let ratio = dt / reference;
            let factor = ratio.round();
            if factor < 1.0 || (ratio - factor).abs() > DIVISIBILITY_TOL * ratio {
                return Err(Error::config(
                    field,
                    format!("dt = {dt} is not an integer multiple of the reference {reference}"),
                ));
            }
            TimeSpec::with_horizon(dt, horizon)
                .map_err(|_| Error::config(format!("study.levels[{k}]"), format!("{dt} does not divide T = {horizon}")))?;
            out.push((dt, factor as usize));
        }
        Ok((reference, out))
    }

    /// Space-study levels and reference as cell counts, with restriction strides.
    pub fn space_levels(&self) -> Result<(usize, Vec<(usize, usize)>)> {
        let study = &self.raw.study;
        let as_count = |v: f64, field: String| -> Result<usize> {
            if v.fract() != 0.0 || v < 2.0 {
                return Err(Error::config(field, format!("{v} is not a cell count >= 2")));
            }
            Ok(v as usize)
        };
        let reference = match study.reference {
            Some(r) => as_count(r, "study.reference".into())?,
            None => self.grid.cells(),
        };
        let mut out = Vec::with_capacity(study.levels.len());
        for (k, &v) in study.levels.iter().enumerate() {
            let cells = as_count(v, format!("study.levels[{k}]"))?;
            if reference % cells != 0 {
                return Err(Error::config(
                    format!("study.levels[{k}]"),
                    format!("J = {cells} does not divide the reference J = {reference}"),
                ));
            }
            out.push((cells, reference / cells));
        }
        Ok((reference, out))
    }

    fn validate_study(&self) -> Result<()> {
        match self.raw.study.kind {
            StudyKind::ConvergenceTime => {
                if self.raw.study.levels.len() < 2 {
                    return Err(Error::config("study.levels", "an order fit needs at least 2 levels"));
                }
                self.time_levels().map(|_| ())
            }
            StudyKind::ConvergenceSpace => {
                if self.raw.study.levels.len() < 2 {
                    return Err(Error::config("study.levels", "an order fit needs at least 2 levels"));
                }
                self.space_levels().map(|_| ())
            }
            StudyKind::Simulate | StudyKind::Longtime => {
                let f = self.raw.study.transient_fraction;
                if !(0.0..1.0).contains(&f) {
                    return Err(Error::config("study.transient_fraction", format!("{f} not in [0, 1)")));
                }
                Ok(())
            }
        }
    }
}

/// Read and validate a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}
