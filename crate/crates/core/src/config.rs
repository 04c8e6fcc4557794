//! Problem configuration files.

use serde::{Deserialize, Serialize};

use crate::classify::ClassifyParams;
use crate::error::{Error, Result};
use crate::expression::SymmetricExpression;
use crate::integrate::{IntegrationParams, Tolerances as OdeTolerances};
use crate::linalg::C64;
use crate::subspace::SubspaceParams;

fn default_x_max() -> f64 {
    100.0
}
fn default_checkpoints() -> usize {
    64
}
fn default_probes() -> Vec<[f64; 2]> {
    vec![[0.0, 1.0], [0.0, -1.0]]
}
fn default_samples() -> usize {
    8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    pub ode_rel: f64,
    pub ode_abs: f64,
    pub gram_growth: f64,
    pub det_rank_rel: f64,
    pub bracket_tol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self { ode_rel: 1e-9, ode_abs: 1e-12, gram_growth: 0.02, det_rank_rel: 1e-6, bracket_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    pub order: usize,
    pub s: Vec<String>,
    #[serde(default)]
    pub q: Vec<String>,
    #[serde(default)]
    pub origin: f64,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    #[serde(default = "default_probes")]
    pub lambda_probes: Vec<[f64; 2]>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), message: message.into() }
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    let s = path.to_string();
    if s == "." {
        "/".into()
    } else {
        format!("/{}", s.replace('.', "/").replace('[', "/").replace(']', ""))
    }
}

impl ProblemConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = pointer(e.path());
            config_err(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Length rules: `s` has 1 to `h+1` entries and `q` at most `k`, with the
    /// leading coefficient present (`s_k` at even order, `q_{k-1}` at odd
    /// order). Missing lower entries are zero.
    pub fn validate(&self) -> Result<()> {
        let m = self.order;
        if m < 2 {
            return Err(config_err("/order", format!("order must be at least 2, got {m}")));
        }
        let k = m.div_ceil(2);
        let h = if m % 2 == 0 { k } else { k - 1 };
        if self.s.is_empty() || self.s.len() > h + 1 {
            return Err(config_err(
                "/s",
                format!("length rule: order {m} takes 1 to h+1 = {} entries in s, got {}", h + 1, self.s.len()),
            ));
        }
        if self.q.len() > k {
            return Err(config_err(
                "/q",
                format!("length rule: order {m} takes at most k = {k} entries in q, got {}", self.q.len()),
            ));
        }
        if m % 2 == 0 && self.s.len() != k + 1 {
            return Err(config_err(
                "/s",
                format!("length rule: even order {m} needs s_{k}, so s must have k+1 = {} entries", k + 1),
            ));
        }
        if m % 2 == 1 && self.q.len() != k {
            return Err(config_err(
                "/q",
                format!("length rule: odd order {m} needs q_{}, so q must have k = {k} entries", k - 1),
            ));
        }
        for (i, e) in self.s.iter().enumerate() {
            crate::coeffdsl::parse(e).map_err(|err| config_err(&format!("/s/{i}"), err.to_string()))?;
        }
        for (i, e) in self.q.iter().enumerate() {
            crate::coeffdsl::parse(e).map_err(|err| config_err(&format!("/q/{i}"), err.to_string()))?;
        }
        if !(self.x_max.is_finite() && self.x_max > 0.0) {
            return Err(config_err("/x_max", "must be positive"));
        }
        if !self.origin.is_finite() {
            return Err(config_err("/origin", "must be finite"));
        }
        if self.checkpoints < 8 {
            return Err(config_err("/checkpoints", "must be at least 8"));
        }
        if self.lambda_probes.is_empty() {
            return Err(config_err("/lambda_probes", "must not be empty"));
        }
        for (i, p) in self.lambda_probes.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) || p[1] == 0.0 {
                return Err(config_err(&format!("/lambda_probes/{i}"), "probe must be finite and non-real"));
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("ode_rel", t.ode_rel),
            ("ode_abs", t.ode_abs),
            ("gram_growth", t.gram_growth),
            ("det_rank_rel", t.det_rank_rel),
            ("bracket_tol", t.bracket_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(&format!("/tolerances/{name}"), "must be positive"));
            }
        }
        Ok(())
    }

    pub fn expression(&self) -> Result<SymmetricExpression> {
        let s: Vec<&str> = self.s.iter().map(String::as_str).collect();
        let q: Vec<&str> = self.q.iter().map(String::as_str).collect();
        SymmetricExpression::from_strings(self.order, &s, &q, self.origin)
    }

    pub fn probes(&self) -> Vec<C64> {
        self.lambda_probes.iter().map(|p| C64::new(p[0], p[1])).collect()
    }

    pub fn classify_params(&self) -> ClassifyParams {
        let mut integration = IntegrationParams::new(self.x_max, self.checkpoints);
        integration.tol = OdeTolerances { rel: self.tolerances.ode_rel, abs: self.tolerances.ode_abs };
        let subspace =
            SubspaceParams { integration, growth_threshold: self.tolerances.gram_growth, ..SubspaceParams::default() };
        ClassifyParams {
            subspace,
            det_rank_rel: self.tolerances.det_rank_rel,
            bracket_tol: self.tolerances.bracket_tol,
            samples: self.samples,
            seed: self.seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_in() {
        let c = ProblemConfig::from_json(r#"{"name":"P1","order":2,"s":["0","1"]}"#).unwrap();
        assert_eq!(c.x_max, 100.0);
        assert_eq!(c.checkpoints, 64);
        assert_eq!(c.lambda_probes, vec![[0.0, 1.0], [0.0, -1.0]]);
        assert_eq!(c.tolerances, ToleranceConfig::default());
        assert_eq!((c.seed, c.samples), (0, 8));
    }

    #[test]
    fn odd_order_with_three_s_entries_names_rule() {
        let err = ProblemConfig::from_json(r#"{"name":"x","order":3,"s":["0","0","1"],"q":["0","1"]}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("/s:"), "{msg}");
        assert!(msg.contains("length rule"), "{msg}");
    }

    #[test]
    fn serde_errors_carry_pointer() {
        let err = ProblemConfig::from_json(r#"{"name":"x","order":2,"s":["0","1"],"tolerances":{"ode_rel":"a"}}"#)
            .unwrap_err();
        assert!(err.to_string().starts_with("/tolerances/ode_rel:"), "{err}");
        let err = ProblemConfig::from_json(r#"{"name":"x","order":2,"s":["0","1"],"lambda_probes":[[0,1],[0]]}"#)
            .unwrap_err();
        assert!(err.to_string().starts_with("/lambda_probes/1"), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ProblemConfig::from_json(r#"{"name":"x","order":2,"s":["0","1"],"speed":1}"#).is_err());
    }

    #[test]
    fn nonpositive_tolerance_rejected() {
        let err =
            ProblemConfig::from_json(r#"{"name":"x","order":2,"s":["0","1"],"tolerances":{"gram_growth":0}}"#).unwrap_err();
        assert!(err.to_string().starts_with("/tolerances/gram_growth"), "{err}");
    }

    #[test]
    fn bad_expression_points_at_entry() {
        let err = ProblemConfig::from_json(r#"{"name":"x","order":2,"s":["0","1+"]}"#).unwrap_err();
        assert!(err.to_string().starts_with("/s/1:"), "{err}");
    }

    #[test]
    fn round_trip_is_idempotent() {
        let c = ProblemConfig::from_json(r#"{"name":"P3","order":3,"s":["0"],"q":["0","1"],"x_max":60}"#).unwrap();
        let once = c.to_json();
        let twice = ProblemConfig::from_json(&once).unwrap().to_json();
        assert_eq!(once, twice);
    }

    #[test]
    fn params_follow_config() {
        let c = ProblemConfig::from_json(
            r#"{"name":"x","order":2,"s":["0","1"],"x_max":40,"checkpoints":32,"tolerances":{"ode_rel":1e-8}}"#,
        )
        .unwrap();
        let p = c.classify_params();
        assert_eq!(p.subspace.integration.x_max, 40.0);
        assert_eq!(p.subspace.integration.n_checkpoints, 32);
        assert_eq!(p.subspace.integration.tol.rel, 1e-8);
        assert_eq!(p.subspace.integration.tol.abs, 1e-12);
    }
}
