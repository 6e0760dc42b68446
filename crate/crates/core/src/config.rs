//! Training configuration, named presets and dotted-key overrides.
//!
//! The loss-weight presets carry the published hyperparameter table verbatim
//! (skew, ramp endpoints and ramp shape). Iteration count, batch size, sample
//! counts and learning rates are desk-scale substitutions shared by all
//! presets.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::loss::{LossWeights, ShadowRegMode};
use crate::model::ModelSpec;
use crate::schedule::Schedule;

/// Learning-rate endpoints of the original 100k-iteration network schedule.
pub const NETWORK_LR: (f64, f64) = (1e-3, 1e-5);

pub const PRESETS: &[&str] = &[
    "real_mixed",
    "real_novel_view",
    "real_decoupling",
    "real_pick",
    "real_shadow",
    "syn_default",
    "syn_car",
    "syn_chairs",
    "syn_bag",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: String,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub samples_coarse: usize,
    pub samples_fine: usize,
    pub seed: u64,
    pub skew: f64,
    pub lambda_s: Schedule,
    pub lambda_r: Schedule,
    pub lambda_sigma_s: Schedule,
    pub lambda_rho: Schedule,
    pub shadow_reg_mode: ShadowRegMode,
    pub checkpoint_interval: usize,
    pub log_interval: usize,
    pub model: ModelSpec,
    pub adam: AdamConfig,
}

struct Row {
    name: &'static str,
    skew: f64,
    lambda_s: Schedule,
    lambda_r: f64,
    lambda_sigma_s: f64,
    /// `None`: no shadow field.
    lambda_rho: Option<f64>,
}

fn exp_ramp(start: f64, end: f64) -> Schedule {
    Schedule::exponential(start, end, 1.0).expect("positive endpoints")
}

fn table() -> [Row; 9] {
    let row = |name, skew, lambda_s, lambda_r, lambda_sigma_s, lambda_rho| Row {
        name,
        skew,
        lambda_s,
        lambda_r,
        lambda_sigma_s,
        lambda_rho,
    };
    [
        row("real_mixed", 1.75, Schedule::linear(1e-4, 1e-2, 1.0).expect("valid"), 1e-3, 0.0, Some(0.1)),
        row("real_novel_view", 3.0, exp_ramp(1e-4, 1.0), 1e-3, 0.0, Some(0.1)),
        row("real_decoupling", 2.75, exp_ramp(1e-5, 1.0), 1e-3, 0.0, None),
        row("real_pick", 2.875, exp_ramp(5e-4, 1.0), 0.0, 0.0, None),
        row("real_shadow", 1.5, exp_ramp(1e-3, 1.0), 0.1, 1e-2, Some(1e-2)),
        row("syn_default", 2.0, exp_ramp(1e-5, 1.0), 1e-5, 1e-4, None),
        row("syn_car", 1.75, exp_ramp(1e-5, 0.1), 1e-4, 0.0, None),
        row("syn_chairs", 2.5, exp_ramp(1e-5, 1.0), 1e-5, 1e-3, None),
        row("syn_bag", 2.75, exp_ramp(1e-4, 1.0), 2e-4, 1e-4, None),
    ]
}

impl TrainConfig {
    pub fn preset(name: &str) -> Result<TrainConfig> {
        let row = table()
            .into_iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::UnknownPreset {
                name: name.to_string(),
                known: PRESETS.join(", "),
            })?;
        Ok(TrainConfig {
            preset: name.to_string(),
            iterations: 5000,
            batch_size: 256,
            lr_start: 0.1,
            lr_end: 2e-3,
            samples_coarse: 32,
            samples_fine: 32,
            seed: 0,
            skew: row.skew,
            lambda_s: row.lambda_s,
            lambda_r: Schedule::constant(row.lambda_r),
            lambda_sigma_s: Schedule::constant(row.lambda_sigma_s),
            lambda_rho: Schedule::constant(row.lambda_rho.unwrap_or(0.0)),
            shadow_reg_mode: ShadowRegMode::Squared,
            checkpoint_interval: 1000,
            log_interval: 100,
            model: ModelSpec {
                shadow_field: row.lambda_rho.is_some(),
                ..ModelSpec::default()
            },
            adam: AdamConfig::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return fail(format!("need lr_start >= lr_end > 0, got {} and {}", self.lr_start, self.lr_end));
        }
        if self.iterations == 0 || self.batch_size == 0 || self.samples_coarse == 0 {
            return fail("iterations, batch_size and samples_coarse must be positive".into());
        }
        if !(self.skew > 0.0 && self.skew.is_finite()) {
            return fail(format!("skew must be positive, got {}", self.skew));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return fail("adam needs beta1, beta2 in [0, 1) and eps > 0".into());
        }
        if self.model.static_res < 2 || self.model.dynamic_res < 2 || self.model.shadow_res < 2 {
            return fail("lattice resolutions must be at least 2".into());
        }
        for s in [&self.lambda_s, &self.lambda_r, &self.lambda_sigma_s, &self.lambda_rho] {
            s.validate()?;
        }
        Ok(())
    }

    /// Learning rate at `iteration`: `lr_start` at 0, `lr_end` at the final iteration.
    pub fn learning_rate(&self, iteration: usize) -> f64 {
        self.lr_start * (self.lr_end / self.lr_start).powf(self.progress(iteration))
    }

    /// Training progress in [0, 1]; the final iteration maps to exactly 1.
    pub fn progress(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 {
            return 1.0;
        }
        (iteration as f64 / (self.iterations - 1) as f64).min(1.0)
    }

    pub fn weights(&self, iteration: usize) -> LossWeights {
        let p = self.progress(iteration);
        LossWeights {
            lambda_s: self.lambda_s.value(p),
            lambda_r: self.lambda_r.value(p),
            lambda_sigma_s: self.lambda_sigma_s.value(p),
            lambda_rho: self.lambda_rho.value(p),
            skew: self.skew,
            shadow_reg_mode: self.shadow_reg_mode,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Every settable dotted key.
    pub fn keys(&self) -> Vec<String> {
        let mut out = Vec::new();
        collect_keys(&serde_json::to_value(self).expect("config serializes"), "", &mut out);
        out
    }

    /// Applies `key=value`. Values parse as JSON, falling back to a bare
    /// string; a number assigned to a schedule makes it constant.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let parsed: Value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
        let unknown = || {
            Error::Config(format!(
                "unknown config key `{key}`; valid keys: {}",
                self.keys().join(", ")
            ))
        };
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot.as_object_mut().and_then(|m| m.get_mut(part)).ok_or_else(unknown)?;
        }
        let is_schedule = slot.as_object().is_some_and(|m| m.contains_key("mode"));
        *slot = match (&parsed, is_schedule) {
            (Value::Number(n), true) => {
                serde_json::to_value(Schedule::constant(n.as_f64().expect("finite"))).expect("schedule serializes")
            }
            _ => parsed,
        };
        let cfg: TrainConfig =
            serde_json::from_value(root).map_err(|e| Error::Config(format!("cannot set `{key}` to `{value}`: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    /// Applies a list of `key=value` strings in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not of the form key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

fn collect_keys(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            if !prefix.is_empty() {
                out.push(prefix.to_string());
            }
            for (k, child) in m {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                collect_keys(child, &p, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleMode;

    #[test]
    fn syn_default_matches_row_six() {
        let c = TrainConfig::preset("syn_default").unwrap();
        assert_eq!(c.skew, 2.0);
        assert_eq!(c.lambda_s, Schedule::exponential(1e-5, 1.0, 1.0).unwrap());
        assert_eq!(c.lambda_r.value(0.3), 1e-5);
        assert_eq!(c.lambda_sigma_s.value(0.9), 1e-4);
        assert!(!c.model.shadow_field);
        c.validate().unwrap();
    }

    #[test]
    fn real_mixed_matches_row_one() {
        let c = TrainConfig::preset("real_mixed").unwrap();
        let w0 = c.weights(0);
        assert_eq!((w0.skew, w0.lambda_s, w0.lambda_r, w0.lambda_sigma_s, w0.lambda_rho), (1.75, 1e-4, 1e-3, 0.0, 0.1));
        assert_eq!(c.lambda_s.mode, ScheduleMode::Linear);
        assert_eq!(c.weights(c.iterations - 1).lambda_s, 1e-2);
        assert!(c.model.shadow_field);
    }

    #[test]
    fn all_presets_build() {
        for p in PRESETS {
            TrainConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(matches!(TrainConfig::preset("syn_nope"), Err(Error::UnknownPreset { .. })));
        assert_eq!(TrainConfig::preset("real_shadow").unwrap().lambda_rho.value(0.0), 1e-2);
    }

    #[test]
    fn network_lr_schedule_endpoints() {
        let mut c = TrainConfig::preset("syn_default").unwrap();
        (c.lr_start, c.lr_end) = NETWORK_LR;
        c.iterations = 100_000;
        assert_eq!(c.learning_rate(0), 1e-3);
        assert!((c.learning_rate(c.iterations - 1) - 1e-5).abs() < 1e-20);
        assert!((c.learning_rate(49_999) - 1e-4).abs() < 1e-8);
    }

    #[test]
    fn ablation_overrides() {
        let mut c = TrainConfig::preset("syn_default").unwrap();
        c.apply_overrides(&["skew=1.0", "lambda_r=0", "model.shadow_field=true", "lambda_s.end=0.5"]).unwrap();
        assert_eq!(c.skew, 1.0);
        assert_eq!(c.lambda_r, Schedule::constant(0.0));
        assert!(c.model.shadow_field);
        assert_eq!(c.lambda_s.end, 0.5);
    }

    #[test]
    fn unknown_and_invalid_overrides_are_rejected() {
        let mut c = TrainConfig::preset("syn_default").unwrap();
        let err = c.set("lambda_q", "1").unwrap_err().to_string();
        assert!(err.contains("lambda_sigma_s") && err.contains("model.static_res"), "{err}");
        assert!(c.set("lr_end", "1.0").is_err());
        assert!(c.set("iterations", "\"many\"").is_err());
        assert!(c.apply_overrides(&["iterations"]).is_err());
        assert_eq!(c, TrainConfig::preset("syn_default").unwrap());
    }

    #[test]
    fn json_round_trip() {
        let mut c = TrainConfig::preset("real_shadow").unwrap();
        c.seed = 99;
        let back = TrainConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert!(TrainConfig::from_json(&c.to_json().replacen("\"seed\"", "\"sed\"", 1)).is_err());
    }
}
