//! Settings from defaults, an optional `key = value` file and
//! `WARNTRIAGE_*` environment variables, in increasing precedence.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use warntriage_core::embedder::Dims;
use warntriage_core::ensemble::EnsembleHyper;
use warntriage_core::learners::Optimizer;
use warntriage_core::pipeline::PretrainConfig;

use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "WARNTRIAGE_";

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub host: String,
    pub port: u16,
    pub seed: u64,
    pub split_ratio: f64,
    pub retrain_threshold: usize,
    /// Start a retrain in the background when a verdict crosses the threshold.
    pub auto_retrain: bool,
    pub static_dir: Option<PathBuf>,
    pub pretrain: PretrainConfig,
    pub hyper: EnsembleHyper,
    /// Tune member triples jointly by ensemble F1 instead of one learner at a time.
    pub joint_tuning: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            data_dir: PathBuf::from("data"),
            host: "127.0.0.1".into(),
            port: 8080,
            seed: 42,
            split_ratio: 0.8,
            retrain_threshold: 50,
            auto_retrain: true,
            static_dir: None,
            pretrain: PretrainConfig::default(),
            hyper: EnsembleHyper::default(),
            joint_tuning: false,
        }
    }
}

/// Every key accepted in a config file. The environment variable for a key
/// is the prefix plus the key upper-cased with `.` replaced by `_`.
pub const KEYS: [&str; 32] = [
    "data_dir",
    "host",
    "port",
    "seed",
    "split_ratio",
    "retrain_threshold",
    "auto_retrain",
    "static_dir",
    "embed.d_emb",
    "embed.d_code",
    "embed.epochs",
    "embed.learning_rate",
    "embed.min_count",
    "embed.max_path_length",
    "embed.max_path_width",
    "embed.max_contexts",
    "gbt.n_rounds",
    "gbt.eta",
    "gbt.max_depth",
    "gbt.min_child_weight",
    "gbt.l2_lambda",
    "forest.n_estimators",
    "forest.max_depth",
    "forest.min_samples_split",
    "net.n_hidden",
    "net.units",
    "net.max_epochs",
    "net.patience",
    "net.optimizer",
    "net.lr_decay_factor",
    "net.learning_rate",
    "tune.joint",
];

pub fn env_var_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('.', "_"))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("bad value {value:?} for {key}"))),
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let p = &mut self.pretrain;
        let h = &mut self.hyper;
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "host" => self.host = value.to_string(),
            "port" => self.port = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "split_ratio" => self.split_ratio = parse(key, value)?,
            "retrain_threshold" => self.retrain_threshold = parse(key, value)?,
            "auto_retrain" => self.auto_retrain = parse_bool(key, value)?,
            "static_dir" => self.static_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "embed.d_emb" => p.dims = Dims { d_emb: parse(key, value)?, ..p.dims },
            "embed.d_code" => p.dims = Dims { d_code: parse(key, value)?, ..p.dims },
            "embed.epochs" => p.epochs = parse(key, value)?,
            "embed.learning_rate" => p.learning_rate = parse(key, value)?,
            "embed.min_count" => p.min_count = parse(key, value)?,
            "embed.max_path_length" => p.extract.max_path_length = parse(key, value)?,
            "embed.max_path_width" => p.extract.max_path_width = parse(key, value)?,
            "embed.max_contexts" => p.extract.max_contexts = parse(key, value)?,
            "gbt.n_rounds" => h.gbt.n_rounds = parse(key, value)?,
            "gbt.eta" => h.gbt.eta = parse(key, value)?,
            "gbt.max_depth" => h.gbt.max_depth = parse(key, value)?,
            "gbt.min_child_weight" => h.gbt.min_child_weight = parse(key, value)?,
            "gbt.l2_lambda" => h.gbt.l2_lambda = parse(key, value)?,
            "forest.n_estimators" => h.forest.n_estimators = parse(key, value)?,
            "forest.max_depth" => h.forest.max_depth = parse(key, value)?,
            "forest.min_samples_split" => h.forest.min_samples_split = parse(key, value)?,
            "net.n_hidden" => h.net.n_hidden = parse(key, value)?,
            "net.units" => h.net.units = parse(key, value)?,
            "net.max_epochs" => h.net.max_epochs = parse(key, value)?,
            "net.patience" => h.net.patience = parse(key, value)?,
            "net.optimizer" => {
                h.net.optimizer = Optimizer::parse(value)
                    .ok_or_else(|| Error::config(format!("unknown optimizer {value:?}")))?
            }
            "net.lr_decay_factor" => h.net.lr_decay_factor = parse(key, value)?,
            "net.learning_rate" => h.net.initial_lr = Some(parse(key, value)?),
            "tune.joint" => self.joint_tuning = parse_bool(key, value)?,
            _ => return Err(Error::config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. `#` starts a comment line.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value).map_err(|e| match e {
                Error::Config(msg) => Error::config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        for key in KEYS {
            if let Some(value) = lookup(&env_var_name(key)) {
                self.set(key, &value)?;
            }
        }
        Ok(())
    }

    /// Defaults, then `config` (or the file named by `WARNTRIAGE_CONFIG`),
    /// then the process environment.
    pub fn load(config: Option<&Path>) -> Result<Self> {
        let mut settings = Settings::default();
        let from_env = std::env::var_os(format!("{ENV_PREFIX}CONFIG")).map(PathBuf::from);
        if let Some(path) = config.map(Path::to_path_buf).or(from_env) {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            settings.apply_file_text(&text)?;
        }
        settings.apply_env(|name| std::env::var(name).ok())?;
        Ok(settings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_env() {
        let mut s = Settings::default();
        s.apply_file_text("# comment\nport = 9000\nseed=7\nembed.d_code = 48\nnet.optimizer = sgd\n")
            .unwrap();
        s.apply_env(|name| (name == "WARNTRIAGE_PORT").then(|| "9100".to_string()))
            .unwrap();
        assert_eq!((s.port, s.seed, s.pretrain.dims.d_code), (9100, 7, 48));
        assert_eq!(s.hyper.net.optimizer, Optimizer::Sgd);
        assert_eq!(env_var_name("embed.d_code"), "WARNTRIAGE_EMBED_D_CODE");
    }

    #[test]
    fn bad_lines_name_the_line() {
        let mut s = Settings::default();
        let err = s.apply_file_text("port = 1\nnope = 2\n").unwrap_err().to_string();
        assert_eq!(err, "config: line 2: unknown key \"nope\"");
        assert!(s.apply_file_text("port = x").is_err());
        assert!(s.apply_file_text("port").is_err());
    }
}
