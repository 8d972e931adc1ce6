//! Registration config file: flat TOML, missing keys take the documented
//! defaults, unknown keys are a hard error.

use crate::engine::RegistrationConfig;
use crate::error::{Error, Result};
use crate::weight_map::WeightMapParams;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ConfigFile {
    mu_r: f64,
    delta: f64,
    gamma: f64,
    pyramid_factors: Vec<usize>,
    iters_per_level: Vec<usize>,
    step_size: f64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    label_sample_count: usize,
    seed: u64,
    convergence_tol: f64,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let c = RegistrationConfig::default();
        Self {
            mu_r: c.weight_params.mu_r,
            delta: c.weight_params.delta,
            gamma: c.weight_params.gamma,
            pyramid_factors: c.pyramid_factors,
            iters_per_level: c.iters_per_level,
            step_size: c.step_size,
            adam_beta1: c.adam_beta1,
            adam_beta2: c.adam_beta2,
            adam_eps: c.adam_eps,
            label_sample_count: c.label_sample_count,
            seed: c.seed,
            convergence_tol: c.convergence_tol,
        }
    }
}

/// Parse a config from TOML text.
pub fn parse_config_str(text: &str) -> Result<RegistrationConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let msg = e.to_string();
        if msg.contains("unknown field") {
            Error::InvalidParams(msg)
        } else {
            Error::MalformedFile(format!("config: {msg}"))
        }
    })?;
    let config = RegistrationConfig {
        weight_params: WeightMapParams { mu_r: file.mu_r, delta: file.delta, gamma: file.gamma },
        pyramid_factors: file.pyramid_factors,
        iters_per_level: file.iters_per_level,
        step_size: file.step_size,
        adam_beta1: file.adam_beta1,
        adam_beta2: file.adam_beta2,
        adam_eps: file.adam_eps,
        label_sample_count: file.label_sample_count,
        seed: file.seed,
        convergence_tol: file.convergence_tol,
    };
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RegistrationConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let config = parse_config_str("").unwrap();
        assert_eq!(config, RegistrationConfig::default());
        assert_eq!(config.weight_params.mu_r, 4500.0);
        assert_eq!(config.weight_params.delta, 3000.0);
        assert_eq!(config.weight_params.gamma, 2.0);
        assert_eq!(config.pyramid_factors, vec![4, 2, 1]);
        assert_eq!(config.iters_per_level, vec![150, 100, 80]);
        assert_eq!(config.step_size, 0.25);
        assert_eq!(config.label_sample_count, 10);
    }

    #[test]
    fn single_override() {
        let config = parse_config_str("gamma = 1.0\n").unwrap();
        let mut expected = RegistrationConfig::default();
        expected.weight_params.gamma = 1.0;
        assert_eq!(config, expected);
    }

    #[test]
    fn constraint_violation_names_keys() {
        let err = parse_config_str("mu_r = 2000.0\ndelta = 3000.0\n").unwrap_err();
        match err {
            Error::InvalidParams(msg) => {
                assert!(msg.contains("mu_r"), "{msg}");
                assert!(msg.contains("delta"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_hard_error() {
        assert!(matches!(
            parse_config_str("mu_rr = 4500.0\n"),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn syntax_error_is_malformed() {
        assert!(matches!(parse_config_str("mu_r = = 1"), Err(Error::MalformedFile(_))));
    }
}
