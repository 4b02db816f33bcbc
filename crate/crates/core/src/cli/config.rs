use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataio::synthetic::BUNDLED_SEED;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Variant};
use crate::optim::AdamConfig;
use crate::real::FloatWidth;
use crate::reprogram::{ReprogramConfig, TransformMode};
use crate::train::{LossKind, TrainConfig};

/// Every accepted key with its default. An empty default means "derived" or "unset".
pub const DEFAULTS: &[(&str, &str)] = &[
    ("data_dir", "data"),
    ("out_dir", "run"),
    ("manifest", ""),
    ("model", ""),
    ("image", ""),
    ("output", ""),
    ("report", ""),
    ("variant", "gac-unet"),
    ("input_size", "256"),
    ("out_channels", "1"),
    ("widths", "16,32,64"),
    ("connectivity", "4"),
    ("gat_out", ""),
    ("cheb_order", "2"),
    ("cheb_out", ""),
    ("center_of_mass", "true"),
    ("loss", "dice"),
    ("lr", "0.001"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("eps", "1e-8"),
    ("epochs", "10"),
    ("batch_size", "4"),
    ("seed", "0"),
    ("float_width", "32"),
    ("freeze", ""),
    ("train_data", "augmented"),
    ("validation", "test"),
    ("stop_at_dice", ""),
    ("pred_threshold", "0.5"),
    ("base_model", ""),
    ("steps", "100"),
    ("transform", "shared"),
    ("reprogram_channels", "1"),
    ("base_channels", "8"),
    ("base_widths", "8,16"),
    ("base_epochs", "20"),
    ("count", "20"),
    ("size", "64"),
    ("synth_seed", ""),
    ("deterministic", "false"),
];

/// Where training images come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainData {
    /// The five-crop/flip corpus written by `prepare`.
    Augmented,
    /// Train-split originals resized to the input size.
    Resized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validation {
    Test,
    Train,
    None,
}

/// Flat `key=value` settings; file values first, then command-line overrides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS
                .iter()
                .map(|&(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key {key:?}"))),
        }
    }

    /// Applies `key=value` lines; `#` starts a comment line.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{origin}:{}: expected key=value, got {line:?}",
                    i + 1
                ))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_text(&text, &path.display().to_string())
    }

    /// Parses `--config PATH`, `--deterministic` and `--key value` / `--key=value`.
    /// The config file is applied before any override regardless of position.
    pub fn from_args(args: &[String]) -> Result<Self> {
        let mut config_path = None;
        let mut overrides = Vec::new();
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(flag) = arg.strip_prefix("--") else {
                return Err(Error::Config(format!("unexpected argument {arg:?}")));
            };
            let (key, inline) = match flag.split_once('=') {
                Some((k, v)) => (k, Some(v.to_string())),
                None => (flag, None),
            };
            let key = key.replace('-', "_");
            if key == "deterministic" && inline.is_none() {
                overrides.push((key, "true".to_string()));
                continue;
            }
            let value = match inline {
                Some(v) => v,
                None => it
                    .next()
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("--{key} needs a value")))?,
            };
            if key == "config" {
                config_path = Some(PathBuf::from(value));
            } else {
                overrides.push((key, value));
            }
        }
        let mut cfg = RunConfig::default();
        if let Some(p) = config_path {
            cfg.merge_file(&p)?;
        }
        for (k, v) in overrides {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)
            .parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse {:?}", self.get(key))))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.get(key).is_empty() {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    /// The fully resolved settings, one `key=value` per line.
    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn data_dir(&self) -> PathBuf {
        PathBuf::from(self.get("data_dir"))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    fn path_or(&self, key: &str, default: &str) -> PathBuf {
        match self.get(key) {
            "" => self.out_dir().join(default),
            p => PathBuf::from(p),
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.path_or("manifest", "manifest.tsv")
    }

    pub fn model_path(&self) -> PathBuf {
        self.path_or("model", "model.gacm")
    }

    pub fn augmented_dir(&self) -> PathBuf {
        self.out_dir().join("augmented")
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn float_width(&self) -> Result<FloatWidth> {
        let bits: u32 = self.parse("float_width")?;
        FloatWidth::from_bits(bits)
            .ok_or_else(|| Error::Config(format!("float_width must be 32 or 64, got {bits}")))
    }

    pub fn pred_threshold(&self) -> Result<f64> {
        self.parse("pred_threshold")
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(self.get("variant").parse::<Variant>()?, 0, Vec::new());
        for key in [
            "input_size",
            "out_channels",
            "widths",
            "connectivity",
            "cheb_order",
            "center_of_mass",
        ] {
            spec.apply(key, self.get(key))?;
        }
        let deepest = spec.widths.last().copied().unwrap_or(0);
        spec.gat_out = self.optional("gat_out")?.unwrap_or(deepest);
        spec.cheb_out = self.optional("cheb_out")?.unwrap_or(deepest);
        spec.seed = self.seed()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn adam(&self) -> Result<AdamConfig> {
        Ok(AdamConfig {
            lr: self.parse("lr")?,
            beta1: self.parse("beta1")?,
            beta2: self.parse("beta2")?,
            eps: self.parse("eps")?,
        })
    }

    pub fn loss(&self) -> Result<LossKind> {
        self.get("loss").parse()
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let batch_size = self.parse("batch_size")?;
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(TrainConfig {
            epochs: self.parse("epochs")?,
            batch_size,
            loss: self.loss()?,
            adam: self.adam()?,
            seed: self.seed()?,
            freeze: self
                .get("freeze")
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
            stop_at_dice: self.optional("stop_at_dice")?,
        })
    }

    pub fn train_data(&self) -> Result<TrainData> {
        match self.get("train_data") {
            "augmented" => Ok(TrainData::Augmented),
            "resized" => Ok(TrainData::Resized),
            other => Err(Error::Config(format!(
                "train_data must be augmented or resized, got {other:?}"
            ))),
        }
    }

    pub fn validation(&self) -> Result<Validation> {
        match self.get("validation") {
            "test" => Ok(Validation::Test),
            "train" => Ok(Validation::Train),
            "none" => Ok(Validation::None),
            other => Err(Error::Config(format!(
                "validation must be test, train or none, got {other:?}"
            ))),
        }
    }

    pub fn reprogram_config(&self) -> Result<ReprogramConfig> {
        Ok(ReprogramConfig {
            steps: self.parse("steps")?,
            batch_size: self.parse("batch_size")?,
            loss: self.loss()?,
            adam: self.adam()?,
            seed: self.seed()?,
        })
    }

    pub fn transform_mode(&self) -> Result<TransformMode> {
        self.get("transform").parse()
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn widths(&self, key: &str) -> Result<Vec<usize>> {
        self.get(key)
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: bad width {s:?}")))
            })
            .collect()
    }

    pub fn synth_seed(&self) -> Result<u64> {
        Ok(self.optional("synth_seed")?.unwrap_or(BUNDLED_SEED))
    }
}
