use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

use super::experiments::registry;
use crate::error::{LabError, Result};

/// Configuration of one experiment run.
///
/// A user file only needs the `experiment` key: everything else is merged
/// over the bundled default of that experiment (objects key by key, arrays
/// and scalars replaced), and the merged document is checked strictly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Experiment-specific parameters and pass/fail thresholds.
    #[serde(default)]
    pub params: Map<String, Value>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    /// Lattice half-width M (modes −M..M−1, 2M grid points per side);
    /// `null` means the smallest admissible value 2⌈N⌉.
    #[serde(default, rename = "M")]
    pub m: Option<usize>,
    /// Cutoff(s) N.
    #[serde(default, rename = "N", deserialize_with = "one_or_many")]
    pub n: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, deserialize_with = "one_or_many")]
    pub beta2: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub window: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub directory: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: None,
            formats: default_formats(),
        }
    }
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Json, OutputFormat::Csv]
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<f64>>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match Option::<OneOrMany>::deserialize(d)? {
        None => None,
        Some(OneOrMany::One(x)) => Some(vec![x]),
        Some(OneOrMany::Many(v)) => Some(v),
    })
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn config_error(context: &str, e: serde_json::Error) -> LabError {
    LabError::Config(format!("{context}: {e}"))
}

impl ExperimentConfig {
    /// Parse a user config, merge it over the bundled default of its
    /// experiment and validate the common sections.
    pub fn resolve(text: &str) -> Result<Self> {
        // Syntax and unknown top-level/section fields, with line and column.
        let user: Value = serde_json::from_str(text).map_err(|e| config_error("invalid JSON", e))?;
        let _: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| config_error("invalid config", e))?;
        let name = user
            .get("experiment")
            .and_then(Value::as_str)
            .ok_or_else(|| LabError::Config("missing string field `experiment`".into()))?
            .to_string();
        let def = registry()
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| LabError::Config(format!("unknown experiment `{name}`")))?;
        let mut merged: Value = serde_json::from_str(def.default_config)
            .map_err(|e| config_error(&format!("bundled default of `{name}`"), e))?;
        merge(&mut merged, user);
        let cfg: ExperimentConfig =
            serde_json::from_value(merged).map_err(|e| config_error("invalid config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(LabError::Config(format!("field `{field}`: {why}")));
        if let Some(ns) = &self.lattice.n {
            if ns.is_empty() {
                return bad("lattice.N", "must not be empty");
            }
            if ns.iter().any(|n| !(n.is_finite() && *n >= 1.0)) {
                return bad("lattice.N", "cutoffs must be finite and ≥ 1");
            }
        }
        if let Some(b) = &self.model.beta2 {
            if b.is_empty() || b.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return bad("model.beta2", "values must be finite and positive");
            }
        }
        if let Some(g) = self.model.gamma {
            if !g.is_finite() {
                return bad("model.gamma", "must be finite");
            }
        }
        if self.mc.samples == Some(0) {
            return bad("mc.samples", "must be at least 1");
        }
        for (name, v) in [
            ("time.dt", self.time.dt),
            ("time.horizon", self.time.horizon),
            ("time.window", self.time.window),
        ] {
            if let Some(x) = v {
                if !(x.is_finite() && x > 0.0) {
                    return bad(name, "must be finite and positive");
                }
            }
        }
        if self.output.formats.is_empty() {
            return bad("output.formats", "must list at least one format");
        }
        Ok(())
    }

    /// Typed experiment parameters (strict: unknown keys are errors).
    pub fn params<P: DeserializeOwned>(&self) -> Result<P> {
        serde_json::from_value(Value::Object(self.params.clone()))
            .map_err(|e| config_error("field `params`", e))
    }

    pub fn n_list(&self) -> Result<Vec<f64>> {
        self.lattice
            .n
            .clone()
            .ok_or_else(|| LabError::Config("field `lattice.N` is required".into()))
    }

    pub fn single_n(&self) -> Result<f64> {
        match self.n_list()?.as_slice() {
            [n] => Ok(*n),
            _ => Err(LabError::Config(
                "field `lattice.N`: this experiment takes a single cutoff".into(),
            )),
        }
    }

    pub fn beta2_list(&self) -> Result<Vec<f64>> {
        self.model
            .beta2
            .clone()
            .ok_or_else(|| LabError::Config("field `model.beta2` is required".into()))
    }

    pub fn single_beta2(&self) -> Result<f64> {
        match self.beta2_list()?.as_slice() {
            [b] => Ok(*b),
            _ => Err(LabError::Config(
                "field `model.beta2`: this experiment takes a single value".into(),
            )),
        }
    }

    pub fn gamma(&self) -> Result<f64> {
        self.model
            .gamma
            .ok_or_else(|| LabError::Config("field `model.gamma` is required".into()))
    }

    pub fn samples(&self) -> Result<usize> {
        self.mc
            .samples
            .ok_or_else(|| LabError::Config("field `mc.samples` is required".into()))
    }

    pub fn seed(&self) -> u64 {
        self.mc.seed.unwrap_or(0)
    }

    pub fn require<T: Copy>(&self, field: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| LabError::Config(format!("field `{field}` is required")))
    }

    /// Experiments that always use the minimal lattice M = 2⌈N⌉ reject
    /// other values of M.
    pub fn check_default_m(&self) -> Result<()> {
        match (self.lattice.m, &self.lattice.n) {
            (None, _) => Ok(()),
            (Some(m), Some(ns)) if ns.iter().all(|n| 2 * (n.ceil() as usize) == m) => Ok(()),
            (Some(_), _) => Err(LabError::Config(
                "field `lattice.M`: this experiment runs on M = 2⌈N⌉; leave M null".into(),
            )),
        }
    }

    /// The lattice for cutoff `n`, honouring an explicit M.
    pub fn lattice_for(&self, n: f64) -> Result<crate::spectral_torus::FrequencyLattice> {
        use crate::spectral_torus::FrequencyLattice;
        match self.lattice.m {
            None => FrequencyLattice::for_cutoff(n),
            Some(m) => FrequencyLattice::new(m, n).map_err(|e| {
                LabError::Config(format!("field `lattice.M`: {e}"))
            }),
        }
    }

    pub fn reject(&self, fields: &[(&str, bool)]) -> Result<()> {
        for (name, present) in fields {
            if *present {
                return Err(LabError::Config(format!(
                    "field `{name}` is not used by experiment `{}`",
                    self.experiment
                )));
            }
        }
        Ok(())
    }
}
