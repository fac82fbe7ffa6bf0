//! Experiment configuration: one flat struct shared by the library, the CLI,
//! and the on-disk JSON config format. Unknown keys are rejected on load so a
//! typo in a config file fails loudly instead of silently using a default.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct ExperimentConfig {
    pub num_agents_N: usize,
    pub num_categories_M: usize,
    pub history_len_T_h: usize,
    pub future_len_T_f: usize,
    pub edge_types_L: usize,
    pub mixture_K: usize,
    pub sigma: f64,
    pub gumbel_temp: f64,
    pub reencode_gap: usize,
    pub encoding_horizon: usize,
    pub num_decode_runs_d: usize,
    pub passing_rounds: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Train on the standard log-of-mixture NLL instead of the default
    /// weighted sum of per-component log-densities.
    #[serde(default)]
    pub mixture_nll: bool,
}

impl ExperimentConfig {
    /// Reference profile: hidden size 128, matching the full-scale setup.
    pub fn paper() -> Self {
        ExperimentConfig { hidden_dim: 128, ..Self::desk() }
    }

    /// Small profile for laptop-speed runs: hidden size 32, everything else
    /// identical to the reference profile.
    pub fn desk() -> Self {
        ExperimentConfig {
            num_agents_N: 5,
            num_categories_M: 1,
            history_len_T_h: 20,
            future_len_T_f: 50,
            edge_types_L: 2,
            mixture_K: 1,
            sigma: 0.05,
            gumbel_temp: 0.5,
            reencode_gap: 1,
            encoding_horizon: 20,
            num_decode_runs_d: 1,
            passing_rounds: 2,
            hidden_dim: 32,
            learning_rate: 0.001,
            batch_size: 32,
            seed: 42,
            mixture_nll: false,
        }
    }

    /// Checks every invariant; returns one human-readable violation per
    /// offending field. An empty list means the config is usable.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.num_agents_N == 0 {
            v.push("num_agents_N must be positive".into());
        }
        if self.num_categories_M == 0 {
            v.push("num_categories_M must be positive".into());
        }
        if self.history_len_T_h == 0 {
            v.push("history_len_T_h must be positive".into());
        }
        if self.future_len_T_f == 0 {
            v.push("future_len_T_f must be positive".into());
        }
        if self.edge_types_L < 2 {
            v.push(format!(
                "edge_types_L below minimum: {} < 2 (one no-edge type plus at least one interacting type)",
                self.edge_types_L
            ));
        }
        if self.mixture_K == 0 {
            v.push("mixture_K must be positive".into());
        }
        if !(self.sigma > 0.0) {
            v.push(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.gumbel_temp > 0.0) {
            v.push(format!("gumbel_temp must be positive, got {}", self.gumbel_temp));
        }
        if self.reencode_gap == 0 {
            v.push("reencode_gap must be positive".into());
        } else if self.reencode_gap > self.future_len_T_f {
            v.push(format!(
                "reencode_gap exceeds future_len_T_f ({} > {})",
                self.reencode_gap, self.future_len_T_f
            ));
        }
        if self.encoding_horizon == 0 {
            v.push("encoding_horizon must be positive".into());
        } else if self.encoding_horizon > self.history_len_T_h {
            v.push(format!(
                "encoding_horizon exceeds history_len_T_h ({} > {})",
                self.encoding_horizon, self.history_len_T_h
            ));
        }
        if self.num_decode_runs_d == 0 {
            v.push("num_decode_runs_d must be positive".into());
        }
        if self.passing_rounds < 2 {
            v.push(format!(
                "passing_rounds below minimum: {} < 2 (one social update plus one edge re-update)",
                self.passing_rounds
            ));
        }
        if self.hidden_dim == 0 {
            v.push("hidden_dim must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            v.push(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be positive".into());
        }
        v
    }

    /// Loads and validates a JSON config file.
    pub fn from_path(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(vec![format!("cannot parse {}: {e}", path.display())]))?;
        let violations = cfg.validate();
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(violations))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_profile_passes_validation() {
        assert!(ExperimentConfig::desk().validate().is_empty());
        assert!(ExperimentConfig::paper().validate().is_empty());
    }

    #[test]
    fn reference_hyperparameters() {
        let cfg = ExperimentConfig::paper();
        assert_eq!(cfg.edge_types_L, 2);
        assert_eq!(cfg.mixture_K, 1);
        assert_eq!(cfg.history_len_T_h, 20);
        assert_eq!(cfg.future_len_T_f, 50);
        assert_eq!(cfg.encoding_horizon, 20);
        assert_eq!(cfg.reencode_gap, 1);
        assert_eq!(cfg.hidden_dim, 128);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.learning_rate, 0.001);
        assert!(cfg.validate().is_empty());
    }

    #[test]
    fn horizon_longer_than_history_rejected() {
        let cfg = ExperimentConfig { encoding_horizon: 25, ..ExperimentConfig::desk() };
        let v = cfg.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("encoding_horizon exceeds history"), "{}", v[0]);
    }

    #[test]
    fn single_edge_type_rejected() {
        let cfg = ExperimentConfig { edge_types_L: 1, ..ExperimentConfig::desk() };
        let v = cfg.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("edge_types_L below minimum"), "{}", v[0]);
    }

    #[test]
    fn nan_sigma_rejected_not_panicked() {
        let cfg = ExperimentConfig { sigma: f64::NAN, ..ExperimentConfig::desk() };
        let v = cfg.validate();
        assert!(v.iter().any(|m| m.contains("sigma")));
    }

    #[test]
    fn gap_beyond_future_rejected() {
        let cfg = ExperimentConfig { reencode_gap: 51, ..ExperimentConfig::desk() };
        let v = cfg.validate();
        assert!(v.iter().any(|m| m.contains("reencode_gap exceeds future_len_T_f")));
    }

    #[test]
    fn json_round_trip_and_unknown_key_rejection() {
        let cfg = ExperimentConfig::desk();
        let text = cfg.to_json();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);

        let with_unknown = text.replace("\"seed\"", "\"sede_typo\": 1, \"seed\"");
        let err = serde_json::from_str::<ExperimentConfig>(&with_unknown);
        assert!(err.is_err());
    }
}
