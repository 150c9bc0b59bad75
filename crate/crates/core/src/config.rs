//! Structured text configuration (TOML) for model specifications, data
//! schemas and estimation settings, plus dotted-path overrides.

use serde::{Deserialize, Serialize};

use crate::analytics::{CostSpec, TimeUnit};
use crate::data::ColumnSchema;
use crate::em::EstimationConfig;
use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Willingness-to-pay reporting settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WtpConfig {
    pub cost_attribute: String,
    #[serde(default)]
    pub income_attribute: Option<String>,
    /// Household income in the units of the interaction column.
    #[serde(default)]
    pub income: f64,
    /// Random time dimensions to report values of time for.
    pub time_attributes: Vec<String>,
    #[serde(default)]
    pub time_unit: TimeUnit,
}

impl WtpConfig {
    pub fn cost_spec(&self) -> CostSpec {
        CostSpec {
            cost_attribute: self.cost_attribute.clone(),
            income_attribute: self.income_attribute.clone(),
            income: self.income,
        }
    }
}

/// Top-level model configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub wtp: Option<WtpConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub variant: crate::model::SupportVariant,
    #[serde(default)]
    pub classes: usize,
    #[serde(rename = "coefficient")]
    pub coefficients: Vec<crate::model::CoefficientSpec>,
}

impl ModelConfig {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            variant: self.model.variant,
            classes: self.model.classes,
            coefficients: self.model.coefficients.clone(),
        }
    }
}

/// Parses a model configuration from TOML text.
pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    let config: ModelConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("model config: {e}")))?;
    config.spec().validate()?;
    Ok(config)
}

/// Schema configuration file: a single `[data]` table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaConfig {
    pub data: ColumnSchema,
}

pub fn parse_schema_config(text: &str) -> Result<ColumnSchema> {
    let config: SchemaConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("schema config: {e}")))?;
    Ok(config.data)
}

/// Applies `key.path=value` overrides to a TOML document before parsing.
/// Values are interpreted as TOML (numbers, booleans, strings, arrays);
/// anything unparseable is taken as a bare string.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String> {
    if overrides.is_empty() {
        return Ok(text.to_string());
    }
    let mut doc: toml::Table =
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
    for entry in overrides {
        let (path, raw_value) = entry.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{entry}' is not of the form key.path=value"))
        })?;
        let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw_value}")) {
            Ok(t) => t["v"].clone(),
            Err(_) => toml::Value::String(raw_value.to_string()),
        };
        let keys: Vec<&str> = path.trim().split('.').collect();
        let mut table = &mut doc;
        for key in &keys[..keys.len() - 1] {
            table = table
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| {
                    Error::Config(format!("override path '{path}' crosses a non-table value"))
                })?;
        }
        table.insert(keys[keys.len() - 1].to_string(), value);
    }
    toml::to_string(&doc).map_err(|e| Error::Config(format!("config: {e}")))
}

/// A documented default model configuration, printed by `config --dump`.
pub fn default_model_config() -> String {
    r#"# Model configuration.
#
# variant: "unstructured" | "equal" | "unequal"
# classes: class count (unstructured variant only; grids derive theirs
#          from the per-dimension point counts)

[model]
variant = "unequal"

# One block per utility coefficient, in order. role "fixed" coefficients
# are shared across classes; role "random" coefficients get `points` mass
# points along their dimension. `sign` is "free", "nonpositive" or
# "nonnegative" and bounds the estimated locations.

[[model.coefficient]]
attribute = "asc_bike"
role = "fixed"

[[model.coefficient]]
attribute = "asc_car"
role = "fixed"

[[model.coefficient]]
attribute = "asc_transit"
role = "fixed"

[[model.coefficient]]
attribute = "tt_min"
role = "random"
points = 9

[[model.coefficient]]
attribute = "cost"
role = "fixed"

[estimation]
tolerance = 1e-6
paper_convergence = false
max_iterations = 2000
seed = 42
standard_errors = false
empty_class_threshold = 1e-8
inner_gradient_tolerance = 1e-6
inner_max_iterations = 500

# Optional: value-of-time reporting (used by `report` and `restarts`).

[wtp]
cost_attribute = "cost"
income = 0.0
time_attributes = ["tt_min"]
time_unit = "minutes"
"#
    .to_string()
}

/// A documented default schema configuration.
pub fn default_schema_config() -> String {
    r#"# Long-format CSV schema: one row per person x observation x
# alternative. `availability` may name a column absent from the file, in
# which case every listed alternative is treated as available. Omitting
# `attributes` uses every remaining column.

[data]
person = "person_id"
observation = "obs_id"
alternative = "alt_id"
chosen = "chosen"
availability = "avail"
"#
    .to_string()
}
