//! Run configuration and its flat `key = value` file format.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distill::DistillConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub embed_dim: usize,
    pub hidden: usize,
    pub vocab_cap: usize,
    /// Passages longer than this many tokens are dropped.
    pub max_passage_len: usize,
    /// Keep the epoch with the best dev F1 instead of the last one.
    pub keep_best: bool,
    /// Use only soft targets for augmented examples even when they carry gold answers.
    pub augment_soft_only: bool,
    pub distill: DistillConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            teacher_epochs: 30,
            student_epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            embed_dim: 32,
            hidden: 32,
            vocab_cap: 5000,
            max_passage_len: 400,
            keep_best: true,
            augment_soft_only: false,
            distill: DistillConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.distill;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "teacher_epochs" => self.teacher_epochs = parse(key, value)?,
            "student_epochs" => self.student_epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "vocab_cap" => self.vocab_cap = parse(key, value)?,
            "max_passage_len" => self.max_passage_len = parse(key, value)?,
            "keep_best" => self.keep_best = parse_bool(key, value)?,
            "augment_soft_only" => self.augment_soft_only = parse_bool(key, value)?,
            "tau" => d.tau = parse(key, value)?,
            "lambda" => {
                d.lambda = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "gamma" => d.gamma = parse(key, value)?,
            "delta" => d.delta = parse(key, value)?,
            "top_k" => d.top_k = parse(key, value)?,
            "ensemble_size" => d.ensemble_size = parse(key, value)?,
            "margin" => d.margin = parse(key, value)?,
            "max_span_len" => d.max_span_len = parse(key, value)?,
            "use_kd" => d.use_kd = parse_bool(key, value)?,
            "use_ans" => d.use_ans = parse_bool(key, value)?,
            "use_att" => d.use_att = parse_bool(key, value)?,
            "stagewise" => d.stagewise = parse_bool(key, value)?,
            "warmup_epochs" => d.warmup_epochs = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key=value` override strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("max_passage_len", self.max_passage_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.teacher_epochs == 0 || self.student_epochs == 0 {
            return Err(Error::Config("epoch counts must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam parameters out of range".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.vocab_cap < 3 {
            return Err(Error::Config("vocab_cap must leave room for regular tokens".into()));
        }
        self.distill.validate()
    }

    /// `key = value` rendering that [`TrainConfig::apply_text`] reads back.
    pub fn to_text(&self) -> String {
        let d = &self.distill;
        let lambda = d.lambda.map_or_else(|| "auto".to_string(), |l| l.to_string());
        let rows: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("teacher_epochs", self.teacher_epochs.to_string()),
            ("student_epochs", self.student_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("vocab_cap", self.vocab_cap.to_string()),
            ("max_passage_len", self.max_passage_len.to_string()),
            ("keep_best", self.keep_best.to_string()),
            ("augment_soft_only", self.augment_soft_only.to_string()),
            ("tau", d.tau.to_string()),
            ("lambda", lambda),
            ("gamma", d.gamma.to_string()),
            ("delta", d.delta.to_string()),
            ("top_k", d.top_k.to_string()),
            ("ensemble_size", d.ensemble_size.to_string()),
            ("margin", d.margin.to_string()),
            ("max_span_len", d.max_span_len.to_string()),
            ("use_kd", d.use_kd.to_string()),
            ("use_ans", d.use_ans.to_string()),
            ("use_att", d.use_att.to_string()),
            ("stagewise", d.stagewise.to_string()),
            ("warmup_epochs", d.warmup_epochs.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_text_with_comments() {
        let mut c = TrainConfig::default();
        c.apply_text("# run\nseed = 7\n\ntau=3 # sharper\nuse_ans = false\nlambda = 2.5\n")
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.distill.tau, 3.0);
        assert!(!c.distill.use_ans);
        assert_eq!(c.distill.lambda(), 2.5);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_and_malformed_keys_are_config_errors() {
        let mut c = TrainConfig::default();
        assert!(matches!(c.apply_text("colour = red"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("seed"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("seed = -1"), Err(Error::Config(_))));
        assert!(matches!(c.apply_overrides(&["use_kd=maybe"]), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_win_and_text_round_trips() {
        let mut c = TrainConfig::default();
        c.apply_text("seed = 1\ngamma = 0.5").unwrap();
        c.apply_overrides(&["seed=9", "stagewise = true"]).unwrap();
        assert_eq!(c.seed, 9);
        assert!(c.distill.stagewise);
        let mut back = TrainConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.distill.gamma = -1.0;
        assert!(c.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }
}
