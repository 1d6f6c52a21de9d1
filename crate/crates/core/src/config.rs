//! Flat configuration files.
//!
//! A config file is a TOML document of top-level `key = value` lines whose
//! values are strings, numbers or booleans. Every key is also a CLI flag of
//! the same name (underscores become dashes), and a flag given on the command
//! line wins over the file, which wins over the default.

use std::collections::BTreeMap;
use std::path::Path;

use crate::env::{AnnotatorKind, EnvConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::model::{AlphaMode, LossKind, ReplayMode, RoundConfig};

pub type Table = BTreeMap<String, toml::Value>;

/// Every recognised key with its meaning and default.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed for the environment, offline data and every round (0)"),
    ("prompts", "number of prompts (50)"),
    ("candidates", "candidates per prompt (8)"),
    ("min_length", "shortest candidate length (5)"),
    ("max_length", "longest candidate length (50)"),
    ("verbosity_bias", "annotator length bias b (0.1)"),
    ("reference_scale", "std. dev. of the initial reference logits (1.0)"),
    ("annotator", "exact_bt | biased_bt | coarse_judge (biased_bt)"),
    ("num_bins", "levels for coarse_judge (5)"),
    ("offline_pairs", "offline preference pairs to sample (600)"),
    ("beta", "KL strength (0.1)"),
    ("gamma", "offline share of each mixed dataset (0.5)"),
    ("k_samples", "samples per prompt and round (16)"),
    ("alpha_mode", "auto | off | fixed (auto)"),
    ("alpha", "length penalty when alpha_mode = fixed; setting it implies fixed"),
    ("alpha_search_budget", "random-search probes including alpha = 0 (16384)"),
    ("alpha_max", "upper end of the search range (derived from data)"),
    ("loss", "dpo | ipo | hinge | dpo_length_penalized (dpo)"),
    ("ipo_tau", "IPO tau (beta)"),
    ("lambda", "length-penalized DPO weight (0.02)"),
    ("steps", "gradient steps per round (300)"),
    ("base_steps", "steps for the base policy (steps)"),
    ("learning_rate", "gradient-descent step size (5.0)"),
    ("batch_size", "minibatch size (full batch)"),
    ("temperature", "sampling temperature (1.0)"),
    ("mix_size", "mixed dataset size N (largest feasible)"),
    ("replay", "stratified | bernoulli (stratified)"),
    ("rotate_reference", "use the previous policy as reference (true)"),
    ("rounds", "rounds T for run (2)"),
    ("parallel", "worker threads for sampling and scoring (1)"),
];

pub fn is_known_key(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Parses a flat TOML file, rejecting nested values and unknown keys.
pub fn load_table(path: &Path) -> Result<Table> {
    let text = io::read_to_string(path)?;
    parse_table(&text).map_err(|e| match e {
        Error::ConfigParse { key, message } => Error::ConfigParse {
            key,
            message: format!("{message} (in {})", path.display()),
        },
        other => other,
    })
}

pub fn parse_table(text: &str) -> Result<Table> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_owned()))?;
    let mut out = Table::new();
    for (key, value) in doc {
        if matches!(value, toml::Value::Table(_) | toml::Value::Array(_)) {
            return Err(Error::config(key, "nested values are not allowed"));
        }
        if !is_known_key(&key) {
            return Err(Error::config(key, "unknown key"));
        }
        out.insert(key, value);
    }
    Ok(out)
}

fn type_error(key: &str, want: &str, got: &toml::Value) -> Error {
    Error::config(key, format!("expected {want}, got {}", got.type_str()))
}

struct Reader<'a>(&'a Table);

impl Reader<'_> {
    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Float(f)) => Ok(Some(*f)),
            Some(toml::Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(type_error(key, "a number", v)),
        }
    }

    fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(toml::Value::Integer(i)) => Err(Error::config(key, format!("must be >= 0, got {i}"))),
            Some(v) => Err(type_error(key, "an integer", v)),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::Boolean(b)) => Ok(Some(*b)),
            Some(v) => Err(type_error(key, "a boolean", v)),
        }
    }

    fn str(&self, key: &str) -> Result<Option<&str>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.as_str())),
            Some(v) => Err(type_error(key, "a string", v)),
        }
    }
}

/// Annotator named in a config, resolved against the bias setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnnotatorName {
    ExactBt,
    BiasedBt,
    CoarseJudge,
}

/// Fully resolved settings for any subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub env: EnvConfig,
    pub round: RoundConfig,
    pub annotator: AnnotatorName,
    pub num_bins: u32,
    pub offline_pairs: usize,
    pub rounds: usize,
    pub parallel: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            round: RoundConfig::default(),
            annotator: AnnotatorName::BiasedBt,
            num_bins: 5,
            offline_pairs: 600,
            rounds: 2,
            parallel: 1,
        }
    }
}

impl Settings {
    /// Applies `overrides` on top of `file` on top of the defaults.
    pub fn layered(file: Option<&Table>, overrides: &Table) -> Result<Self> {
        let mut merged = file.cloned().unwrap_or_default();
        for (k, v) in overrides {
            merged.insert(k.clone(), v.clone());
        }
        Self::from_table(&merged)
    }

    pub fn from_table(table: &Table) -> Result<Self> {
        if let Some(key) = table.keys().find(|k| !is_known_key(k)) {
            return Err(Error::config(key.clone(), "unknown key"));
        }
        let r = Reader(table);
        let mut s = Settings::default();
        let env = &mut s.env;
        let round = &mut s.round;

        if let Some(seed) = r.u64("seed")? {
            env.seed = seed;
            round.seed = seed;
        }
        set(&mut env.num_prompts, r.usize("prompts")?);
        set(&mut env.candidates_per_prompt, r.usize("candidates")?);
        set(&mut env.min_length, r.u64("min_length")?.map(|v| v as u32));
        set(&mut env.max_length, r.u64("max_length")?.map(|v| v as u32));
        set(&mut env.verbosity_bias, r.f64("verbosity_bias")?);
        set(&mut env.reference_scale, r.f64("reference_scale")?);
        if let Some(name) = r.str("annotator")? {
            s.annotator = match name {
                "exact_bt" => AnnotatorName::ExactBt,
                "biased_bt" => AnnotatorName::BiasedBt,
                "coarse_judge" => AnnotatorName::CoarseJudge,
                other => {
                    return Err(Error::config(
                        "annotator",
                        format!("expected exact_bt, biased_bt or coarse_judge, got {other:?}"),
                    ))
                }
            };
        }
        set(&mut s.num_bins, r.u64("num_bins")?.map(|v| v as u32));
        set(&mut s.offline_pairs, r.usize("offline_pairs")?);

        set(&mut round.beta, r.f64("beta")?);
        set(&mut round.gamma, r.f64("gamma")?);
        set(&mut round.k_samples, r.usize("k_samples")?);
        let alpha = r.f64("alpha")?;
        round.alpha_mode = match (r.str("alpha_mode")?, alpha) {
            (None | Some("auto"), None) => AlphaMode::Auto,
            (Some("off"), None) => AlphaMode::Off,
            (None | Some("fixed"), Some(a)) => AlphaMode::Fixed(a),
            (Some("fixed"), None) => return Err(Error::config("alpha", "required when alpha_mode = fixed")),
            (Some(m @ ("auto" | "off")), Some(_)) => {
                return Err(Error::config("alpha", format!("not allowed with alpha_mode = {m}")))
            }
            (Some(other), _) => {
                return Err(Error::config(
                    "alpha_mode",
                    format!("expected auto, off or fixed, got {other:?}"),
                ))
            }
        };
        set(&mut round.alpha_search_budget, r.usize("alpha_search_budget")?);
        round.alpha_max = r.f64("alpha_max")?.or(round.alpha_max);
        let tau = r.f64("ipo_tau")?;
        let lambda = r.f64("lambda")?;
        round.loss_kind = match r.str("loss")?.unwrap_or("dpo") {
            "dpo" => LossKind::Dpo,
            "ipo" => LossKind::Ipo { tau },
            "hinge" => LossKind::Hinge,
            "dpo_length_penalized" => LossKind::DpoLengthPenalized {
                lambda: lambda.unwrap_or(0.02),
            },
            other => {
                return Err(Error::config(
                    "loss",
                    format!("expected dpo, ipo, hinge or dpo_length_penalized, got {other:?}"),
                ))
            }
        };
        set(&mut round.steps, r.usize("steps")?);
        round.base_steps = r.usize("base_steps")?.or(round.base_steps);
        set(&mut round.learning_rate, r.f64("learning_rate")?);
        round.batch_size = r.usize("batch_size")?.or(round.batch_size);
        set(&mut round.temperature, r.f64("temperature")?);
        round.mix_size = r.usize("mix_size")?.or(round.mix_size);
        if let Some(mode) = r.str("replay")? {
            round.replay = match mode {
                "stratified" => ReplayMode::Stratified,
                "bernoulli" => ReplayMode::Bernoulli,
                other => {
                    return Err(Error::config(
                        "replay",
                        format!("expected stratified or bernoulli, got {other:?}"),
                    ))
                }
            };
        }
        set(&mut round.rotate_reference, r.bool("rotate_reference")?);
        set(&mut s.rounds, r.usize("rounds")?);
        set(&mut s.parallel, r.usize("parallel")?);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.round.validate()?;
        if self.env.num_prompts < 1 {
            return Err(Error::config("prompts", "must be >= 1"));
        }
        if self.env.candidates_per_prompt < 2 {
            return Err(Error::config("candidates", "must be >= 2"));
        }
        if self.env.min_length < 1 || self.env.max_length <= self.env.min_length {
            return Err(Error::config(
                "max_length",
                format!(
                    "need 1 <= min_length < max_length, got {}..{}",
                    self.env.min_length, self.env.max_length
                ),
            ));
        }
        if !(self.env.verbosity_bias.is_finite() && self.env.verbosity_bias >= 0.0) {
            return Err(Error::config(
                "verbosity_bias",
                format!("must be >= 0, got {}", self.env.verbosity_bias),
            ));
        }
        if !(self.env.reference_scale.is_finite() && self.env.reference_scale >= 0.0) {
            return Err(Error::config(
                "reference_scale",
                format!("must be >= 0, got {}", self.env.reference_scale),
            ));
        }
        if self.parallel < 1 {
            return Err(Error::config("parallel", "must be >= 1"));
        }
        self.annotator_kind().validate()
    }

    pub fn annotator_kind(&self) -> AnnotatorKind {
        match self.annotator {
            AnnotatorName::ExactBt => AnnotatorKind::ExactBt,
            AnnotatorName::BiasedBt => AnnotatorKind::BiasedBt {
                bias: self.env.verbosity_bias,
            },
            AnnotatorName::CoarseJudge => AnnotatorKind::CoarseJudge {
                num_bins: self.num_bins,
            },
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
