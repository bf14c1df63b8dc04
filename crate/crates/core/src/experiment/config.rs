use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boosting::{GbtConfig, DEFAULT_SENSITIVITY_SAMPLE};
use crate::clustering::{DbiVariant, Metric};
use crate::dataset::{
    Schema, SyntheticSpec, DEFAULT_CORRELATION_THRESHOLD, DEFAULT_P_THRESHOLD, DEFAULT_TOP_K,
};
use crate::error::{Error, Result};
use crate::evaluation::Method;
use crate::federation::RoundPlan;
use crate::forecaster::ForecasterConfig;
use crate::privacy::PrivacyBudget;

/// Tabular input: one CSV file, its column schema and the key columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// Column kinds, given inline or as a path to a JSON schema file.
    pub schema: SchemaSource,
    pub region_column: String,
    pub target_column: String,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSource {
    Inline(Schema),
    File(PathBuf),
}

/// Encoding and feature-selection knobs for CSV input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocessing {
    /// Categoricals with more distinct values are label-coded.
    pub cardinality_threshold: usize,
    pub correlation_threshold: f64,
    pub p_threshold: f64,
    pub top_k: usize,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing {
            cardinality_threshold: 16,
            correlation_threshold: DEFAULT_CORRELATION_THRESHOLD,
            p_threshold: DEFAULT_P_THRESHOLD,
            top_k: DEFAULT_TOP_K,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub metric: Metric,
    pub dbi: DbiVariant,
    /// Smallest and largest bubble count scanned; defaults to `2..=n−1`.
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
}

/// Everything needed to run one experiment; every field except the data
/// source and `epsilon` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synthetic: Option<SyntheticSpec>,
    pub csv: Option<CsvSource>,
    pub epsilon: Option<PrivacyBudget>,
    pub k_override: Option<usize>,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub out_dir: PathBuf,
    pub gbt: GbtConfig,
    pub forecaster: ForecasterConfig,
    pub rounds: RoundPlan,
    /// Epochs for the local-only baseline.
    pub local_epochs: usize,
    pub clustering: ClusteringConfig,
    pub preprocessing: Preprocessing,
    /// Rows left out when estimating sensitivity; `null` means every row.
    pub sensitivity_sample: Option<usize>,
    /// Also write the pre-noise importance vectors. Debug only.
    pub export_clean_importance: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synthetic: None,
            csv: None,
            epsilon: None,
            k_override: None,
            seed: 0,
            methods: Method::ALL.to_vec(),
            out_dir: PathBuf::from("bubblefl-out"),
            gbt: GbtConfig::default(),
            forecaster: ForecasterConfig::default(),
            rounds: RoundPlan::default(),
            local_epochs: 50,
            clustering: ClusteringConfig::default(),
            preprocessing: Preprocessing::default(),
            sensitivity_sample: Some(DEFAULT_SENSITIVITY_SAMPLE),
            export_clean_importance: false,
        }
    }
}

impl ExperimentConfig {
    pub fn budget(&self) -> Result<PrivacyBudget> {
        self.epsilon.ok_or_else(|| Error::config("epsilon", "required (number or high|moderate|low)"))
    }

    /// Checks every invariant; call after applying overrides.
    pub fn validate(&self) -> Result<()> {
        match (&self.synthetic, &self.csv) {
            (Some(_), Some(_)) => {
                return Err(Error::config("synthetic/csv", "give exactly one data source, not both"))
            }
            (None, None) => return Err(Error::config("synthetic/csv", "a data source is required")),
            (Some(s), None) => {
                s.resolved_regimes()?;
            }
            (None, Some(c)) => {
                if !c.path.is_file() {
                    return Err(Error::config("csv.path", format!("{} does not exist", c.path.display())));
                }
                if let SchemaSource::File(p) = &c.schema {
                    if !p.is_file() {
                        return Err(Error::config("csv.schema", format!("{} does not exist", p.display())));
                    }
                }
                if !(c.test_fraction > 0.0 && c.test_fraction < 1.0) {
                    return Err(Error::config("csv.test_fraction", "must be in (0,1)"));
                }
            }
        }
        self.budget()?;
        if self.methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        if self.k_override == Some(0) {
            return Err(Error::config("k_override", "must be at least 1"));
        }
        if let (Some(lo), Some(hi)) = (self.clustering.k_min, self.clustering.k_max) {
            if lo > hi {
                return Err(Error::config("clustering.k_min", "exceeds k_max"));
            }
        }
        if self.clustering.k_min.is_some_and(|k| k < 2) {
            return Err(Error::config("clustering.k_min", "must be at least 2"));
        }
        let p = &self.preprocessing;
        if !(p.correlation_threshold > 0.0 && p.correlation_threshold <= 1.0) {
            return Err(Error::config("preprocessing.correlation_threshold", "must be in (0,1]"));
        }
        if !(p.p_threshold > 0.0 && p.p_threshold <= 1.0) {
            return Err(Error::config("preprocessing.p_threshold", "must be in (0,1]"));
        }
        if p.top_k == 0 {
            return Err(Error::config("preprocessing.top_k", "must be positive"));
        }
        if self.sensitivity_sample == Some(0) {
            return Err(Error::config("sensitivity_sample", "must be positive or null"));
        }
        self.gbt.validate()?;
        self.forecaster.validate()?;
        self.rounds.validate()?;
        Ok(())
    }

    /// Parses a JSON document without validating it.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigParse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Makes relative data paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(c) = &mut self.csv {
            if c.path.is_relative() {
                c.path = base.join(&c.path);
            }
            if let SchemaSource::File(p) = &mut c.schema {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

/// Reads, path-resolves and validates a config file. Relative data paths are
/// taken relative to the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let config = read_config(path)?;
    config.validate()?;
    Ok(config)
}

/// Like [`load_config`] but without validation, so overrides can be applied
/// first.
pub fn read_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = ExperimentConfig::from_json(&text, path)?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(s, Path::new("test.json"))
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse(r#"{"synthetic": {}, "epsilon": 10}"#).unwrap();
        c.validate().unwrap();
        assert_eq!(c.budget().unwrap().epsilon(), 10.0);
        assert_eq!(c.methods, Method::ALL.to_vec());
        assert_eq!(c.local_epochs, 50);
        assert_eq!(c.rounds, RoundPlan::default());
        assert_eq!(c.forecaster, ForecasterConfig::default());
        assert_eq!(c.synthetic.unwrap(), SyntheticSpec::default());
    }

    #[test]
    fn zero_epsilon_rejected() {
        let err = parse(r#"{"synthetic": {}, "epsilon": 0}"#).unwrap_err();
        assert!(err.to_string().contains("epsilon"), "{err}");
    }

    #[test]
    fn presets_parse() {
        for (name, v) in [("high", 0.1), ("moderate", 1.0), ("low", 10.0)] {
            let c = parse(&format!(r#"{{"synthetic": {{}}, "epsilon": "{name}"}}"#)).unwrap();
            assert_eq!(c.budget().unwrap().epsilon(), v);
        }
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let err = parse("{\n  \"synthetic\": {},\n  \"epsilon\": 1,\n  \"epsilom\": 2\n}").unwrap_err();
        match err {
            Error::ConfigParse { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("epsilom"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn source_must_be_unique() {
        let c = parse(r#"{"epsilon": 1}"#).unwrap();
        assert!(c.validate().is_err());
        let c = parse(
            r#"{"epsilon": 1, "synthetic": {}, "csv": {"path": "x.csv", "schema": {}, "region_column": "r", "target_column": "y"}}"#,
        )
        .unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_csv_path_named() {
        let c = parse(
            r#"{"epsilon": 1, "csv": {"path": "/nonexistent/x.csv", "schema": {"a": "numeric"}, "region_column": "r", "target_column": "y"}}"#,
        )
        .unwrap();
        match c.validate().unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "csv.path"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
