//! `key = value` run configuration.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Every key is checked against [`KEYS`] and unknown keys are rejected.

use std::path::Path;

use lga_core::data::TaskConfig;
use lga_core::model::LgaConfig;
use lga_core::parallel::Execution;
use lga_core::training::{AdamConfig, TrainConfig};

use crate::CliError;

/// Every accepted key, in the order `describe` prints them.
pub const KEYS: &[&str] = &[
    "channels",
    "classes",
    "patch",
    "strength",
    "noise",
    "distractors",
    "masks",
    "down_channels",
    "hidden",
    "lambda_reg",
    "lambda_lga",
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "seed",
    "lga",
    "track_metrics",
    "parallel",
    "n_train",
    "n_val",
    "seeds",
];

/// Merged task, model and training settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub masks: usize,
    /// `None` means a quarter of the channels (at least 1).
    pub down_channels: Option<usize>,
    pub hidden: usize,
    pub lambda_reg: f64,
    pub lambda_lga: f64,
    pub train: TrainConfig,
    pub n_train: usize,
    pub n_val: usize,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = LgaConfig::default();
        Self {
            task: TaskConfig::default(),
            masks: model.masks,
            down_channels: None,
            hidden: model.hidden,
            lambda_reg: model.lambda_reg,
            lambda_lga: model.lambda_lga,
            train: TrainConfig::default(),
            n_train: 2000,
            n_val: 500,
            seeds: vec![1, 2, 3, 4, 5],
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| bad(key, format!("cannot parse {value:?}")))
}

fn positive_usize(key: &str, value: &str) -> Result<usize, CliError> {
    match parse::<usize>(key, value)? {
        0 => Err(bad(key, "must be at least 1")),
        v => Ok(v),
    }
}

fn float(key: &str, value: &str, ok: impl Fn(f64) -> bool, what: &str) -> Result<f64, CliError> {
    let v: f64 = parse(key, value)?;
    if v.is_finite() && ok(v) {
        Ok(v)
    } else {
        Err(bad(key, format!("must be {what}, got {value}")))
    }
}

fn boolean(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, format!("expected true or false, got {value:?}"))),
    }
}

/// Parses `1,2,3`.
pub fn parse_seeds(key: &str, value: &str) -> Result<Vec<u64>, CliError> {
    let seeds = value
        .split(',')
        .map(|s| parse::<u64>(key, s.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(bad(key, "seeds must be distinct"));
    }
    if seeds.len() < 2 {
        return Err(bad(key, "need at least 2 seeds"));
    }
    Ok(seeds)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.merge_text(&text)?;
        Ok(cfg)
    }

    /// Defaults, then the file (if any), then `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        for o in overrides {
            cfg.set_pair(o)?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line).map_err(|e| match e {
                CliError::Usage(msg) => CliError::Usage(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got {pair:?}")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let t = &mut self.train;
        match key {
            "channels" => self.task.channels = positive_usize(key, value)?,
            "classes" => {
                self.task.classes = parse(key, value)?;
                if self.task.classes < 2 {
                    return Err(bad(key, "must be at least 2"));
                }
            }
            "patch" => {
                self.task.patch = positive_usize(key, value)?;
                if self.task.patch > self.task.height {
                    return Err(bad(key, format!("must be at most {}", self.task.height)));
                }
            }
            "strength" => self.task.strength = float(key, value, |v| v > 0.0, "positive")?,
            "noise" => self.task.noise = float(key, value, |v| v >= 0.0, ">= 0")?,
            "distractors" => self.task.distractors = parse(key, value)?,
            "masks" => self.masks = positive_usize(key, value)?,
            "down_channels" => self.down_channels = Some(positive_usize(key, value)?),
            "hidden" => self.hidden = positive_usize(key, value)?,
            "lambda_reg" => self.lambda_reg = float(key, value, |v| v >= 0.0, ">= 0")?,
            "lambda_lga" => self.lambda_lga = float(key, value, |v| v >= 0.0, ">= 0")?,
            "epochs" => t.epochs = positive_usize(key, value)?,
            "batch_size" => t.batch_size = positive_usize(key, value)?,
            "lr" => t.adam.lr = float(key, value, |v| v > 0.0, "positive")?,
            "beta1" => t.adam.beta1 = float(key, value, |v| (0.0..1.0).contains(&v), "in [0, 1)")?,
            "beta2" => t.adam.beta2 = float(key, value, |v| (0.0..1.0).contains(&v), "in [0, 1)")?,
            "eps" => t.adam.eps = float(key, value, |v| v > 0.0, "positive")?,
            "seed" => t.seed = parse(key, value)?,
            "lga" => t.lga_enabled = boolean(key, value)?,
            "track_metrics" => t.track_metrics = boolean(key, value)?,
            "parallel" => {
                t.exec = if boolean(key, value)? {
                    Execution::Parallel
                } else {
                    Execution::Sequential
                }
            }
            "n_train" => self.n_train = positive_usize(key, value)?,
            "n_val" => self.n_val = positive_usize(key, value)?,
            "seeds" => self.seeds = parse_seeds(key, value)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    /// Cross-key checks that single assignments cannot catch.
    pub fn check(&self) -> Result<(), CliError> {
        if self.task.classes > self.task.channels {
            return Err(bad(
                "classes",
                format!("must not exceed channels ({})", self.task.channels),
            ));
        }
        self.task
            .validate()
            .map_err(|e| bad("task", e.to_string()))?;
        self.model_config()
            .validate()
            .map_err(|e| bad("model", e.to_string()))?;
        Ok(())
    }

    pub fn model_config(&self) -> LgaConfig {
        let mut m = LgaConfig::new(self.task.channels, self.task.classes);
        m.masks = self.masks;
        if let Some(d) = self.down_channels {
            m.down_channels = d;
        }
        m.hidden = self.hidden;
        m.lambda_reg = self.lambda_reg;
        m.lambda_lga = self.lambda_lga;
        m
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone()
    }

    pub fn exec(&self) -> Execution {
        self.train.exec
    }

    /// The effective value of every key, as a config file.
    pub fn describe(&self) -> String {
        let t = &self.train;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = t.adam;
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let values: Vec<String> = vec![
            self.task.channels.to_string(),
            self.task.classes.to_string(),
            self.task.patch.to_string(),
            self.task.strength.to_string(),
            self.task.noise.to_string(),
            self.task.distractors.to_string(),
            self.masks.to_string(),
            self.model_config().down_channels.to_string(),
            self.hidden.to_string(),
            self.lambda_reg.to_string(),
            self.lambda_lga.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            lr.to_string(),
            beta1.to_string(),
            beta2.to_string(),
            eps.to_string(),
            t.seed.to_string(),
            t.lga_enabled.to_string(),
            t.track_metrics.to_string(),
            t.exec.is_parallel().to_string(),
            self.n_train.to_string(),
            self.n_val.to_string(),
            seeds.join(","),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let mut c = RunConfig::default();
        c.merge_text("# header\n\nepochs = 3  # short\nlga=false\nseeds = 4, 5\n")
            .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert!(!c.train.lga_enabled);
        assert_eq!(c.seeds, vec![4, 5]);
    }

    #[test]
    fn unknown_and_bad_values_name_the_key() {
        let mut c = RunConfig::default();
        let e = c.set("epoch", "3").unwrap_err();
        assert!(e.to_string().contains("epoch"), "{e}");
        let e = c.set("lr", "-1").unwrap_err();
        assert!(e.to_string().contains("lr"));
        let e = c.set_pair("noequals").unwrap_err();
        assert!(matches!(e, CliError::Usage(_)));
    }

    #[test]
    fn describe_roundtrips() {
        let mut c = RunConfig::default();
        c.set("channels", "16").unwrap();
        c.set("lr", "0.002").unwrap();
        c.set("parallel", "false").unwrap();
        let mut d = RunConfig::default();
        d.merge_text(&c.describe()).unwrap();
        assert_eq!(c.model_config(), d.model_config());
        assert_eq!(c.train, d.train);
        assert_eq!(c.task, d.task);
        assert_eq!(c.describe().lines().count(), KEYS.len());
    }

    #[test]
    fn down_channels_follow_channels() {
        let mut c = RunConfig::default();
        c.set("channels", "16").unwrap();
        assert_eq!(c.model_config().down_channels, 4);
        c.set("down_channels", "2").unwrap();
        assert_eq!(c.model_config().down_channels, 2);
    }

    #[test]
    fn cross_key_check() {
        let mut c = RunConfig::default();
        c.set("channels", "3").unwrap();
        let e = c.check().unwrap_err();
        assert!(e.to_string().contains("classes"));
    }
}
