//! Flat `key = value` run configuration.
//!
//! ```text
//! # comment
//! variant = 3
//! learning_rate = 0.03
//! tie_pairs = 0:1:0.8:cooccur, 2:3:1.0:entail
//! ```
//!
//! Blank lines and `#` comments are ignored. Keys are the names listed in
//! [`KEYS`]; unknown keys are an error. Command-line flags are applied after
//! the file and win.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use classtie_core::eval::{EvalMode, DEFAULT_CURVE_LIMIT};
use classtie_core::synthgen::{SynthConfig, TieKind, TiePair};
use classtie_core::{TrainConfig, Variant};

/// Every recognised key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "threads",
    "variant",
    "mode",
    "relieve_nr",
    "separated",
    "batch_size",
    "learning_rate",
    "epochs",
    "keep_prob",
    "word_dim",
    "position_dim",
    "kernels",
    "window",
    "clip",
    "shared_position",
    "rho",
    "sigma_plus",
    "sigma_minus",
    "attention_bias",
    "min_count",
    "pretrained",
    "curve_limit",
    "multi_sentence_only",
    "gradcheck_instances",
    "num_classes",
    "tie_pairs",
    "triggers_per_class",
    "vocab_size",
    "bag_size_min",
    "bag_size_max",
    "sentence_len_min",
    "sentence_len_max",
    "num_train",
    "num_test",
    "nr_fraction",
    "test_nr_fraction",
    "noise_rate",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Test-time aggregation; follows the variant when unset.
    pub mode: Option<EvalMode>,
    pub separated: bool,
    pub min_count: usize,
    pub pretrained: Option<PathBuf>,
    pub curve_limit: usize,
    pub multi_sentence_only: bool,
    pub gradcheck_instances: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            mode: None,
            separated: false,
            min_count: 100,
            pretrained: None,
            curve_limit: DEFAULT_CURVE_LIMIT,
            multi_sentence_only: false,
            gradcheck_instances: 20,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => bail!("{key}: expected true or false, got {value:?}"),
    }
}

/// `a:b:prob:kind` items separated by commas; `kind` defaults to cooccur.
pub fn parse_tie_pairs(value: &str) -> Result<Vec<TiePair>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.split(':').map(str::trim).collect();
            if !(3..=4).contains(&parts.len()) {
                bail!("tie pair {item:?} must look like a:b:prob[:cooccur|entail]");
            }
            let kind = match parts.get(3).copied().unwrap_or("cooccur") {
                "cooccur" => TieKind::Cooccur,
                "entail" => TieKind::Entail,
                k => bail!("unknown tie kind {k:?}"),
            };
            Ok(TiePair {
                a: num("tie_pairs", parts[0])?,
                b: num("tie_pairs", parts[1])?,
                prob: num("tie_pairs", parts[2])?,
                kind,
            })
        })
        .collect()
}

fn format_tie_pairs(pairs: &[TiePair]) -> String {
    pairs
        .iter()
        .map(|t| {
            let kind = match t.kind {
                TieKind::Cooccur => "cooccur",
                TieKind::Entail => "entail",
            };
            format!("{}:{}:{}:{kind}", t.a, t.b, t.prob)
        })
        .collect::<Vec<_>>()
        .join(", ")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            self.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let e = &mut t.model.encoder;
        let r = &mut t.model.ranking;
        let s = &mut self.synth;
        match key {
            "seed" => {
                t.seed = num(key, value)?;
                s.seed = t.seed;
            }
            "threads" => t.threads = num(key, value)?,
            "variant" => t.variant = value.parse::<Variant>()?,
            "mode" => self.mode = (!value.is_empty()).then(|| value.parse::<EvalMode>()).transpose()?,
            "relieve_nr" => r.relieve_nr = flag(key, value)?,
            "separated" => self.separated = flag(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "learning_rate" => t.learning_rate = num(key, value)?,
            "epochs" => t.epochs = num(key, value)?,
            "keep_prob" => t.model.keep_prob = num(key, value)?,
            "word_dim" => e.word_dim = num(key, value)?,
            "position_dim" => e.position_dim = num(key, value)?,
            "kernels" => e.kernels = num(key, value)?,
            "window" => e.window = num(key, value)?,
            "clip" => e.clip = num(key, value)?,
            "shared_position" => e.shared_position = flag(key, value)?,
            "rho" => r.rho = num(key, value)?,
            "sigma_plus" => r.sigma_plus = num(key, value)?,
            "sigma_minus" => r.sigma_minus = num(key, value)?,
            "attention_bias" => r.attention_bias = num(key, value)?,
            "min_count" => self.min_count = num(key, value)?,
            "pretrained" => self.pretrained = (!value.is_empty()).then(|| PathBuf::from(value)),
            "curve_limit" => self.curve_limit = num(key, value)?,
            "multi_sentence_only" => self.multi_sentence_only = flag(key, value)?,
            "gradcheck_instances" => self.gradcheck_instances = num(key, value)?,
            "num_classes" => s.num_classes = num(key, value)?,
            "tie_pairs" => s.tie_pairs = parse_tie_pairs(value)?,
            "triggers_per_class" => s.triggers_per_class = num(key, value)?,
            "vocab_size" => s.vocab_size = num(key, value)?,
            "bag_size_min" => s.bag_size.0 = num(key, value)?,
            "bag_size_max" => s.bag_size.1 = num(key, value)?,
            "sentence_len_min" => s.sentence_len.0 = num(key, value)?,
            "sentence_len_max" => s.sentence_len.1 = num(key, value)?,
            "num_train" => s.num_train = num(key, value)?,
            "num_test" => s.num_test = num(key, value)?,
            "nr_fraction" => s.nr_fraction = num(key, value)?,
            "test_nr_fraction" => s.test_nr_fraction = (!value.is_empty()).then(|| num(key, value)).transpose()?,
            "noise_rate" => s.noise_rate = num(key, value)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Serialises every key; reading the result back gives the same config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let e = &t.model.encoder;
        let r = &t.model.ranking;
        let s = &self.synth;
        let opt = |v: Option<String>| v.unwrap_or_default();
        let values: Vec<String> = vec![
            t.seed.to_string(),
            t.threads.to_string(),
            t.variant.number().to_string(),
            opt(self.mode.map(|m| m.to_string())),
            r.relieve_nr.to_string(),
            self.separated.to_string(),
            t.batch_size.to_string(),
            t.learning_rate.to_string(),
            t.epochs.to_string(),
            t.model.keep_prob.to_string(),
            e.word_dim.to_string(),
            e.position_dim.to_string(),
            e.kernels.to_string(),
            e.window.to_string(),
            e.clip.to_string(),
            e.shared_position.to_string(),
            r.rho.to_string(),
            r.sigma_plus.to_string(),
            r.sigma_minus.to_string(),
            r.attention_bias.to_string(),
            self.min_count.to_string(),
            opt(self.pretrained.as_ref().map(|p| p.display().to_string())),
            self.curve_limit.to_string(),
            self.multi_sentence_only.to_string(),
            self.gradcheck_instances.to_string(),
            s.num_classes.to_string(),
            format_tie_pairs(&s.tie_pairs),
            s.triggers_per_class.to_string(),
            s.vocab_size.to_string(),
            s.bag_size.0.to_string(),
            s.bag_size.1.to_string(),
            s.sentence_len.0.to_string(),
            s.sentence_len.1.to_string(),
            s.num_train.to_string(),
            s.num_test.to_string(),
            s.nr_fraction.to_string(),
            opt(s.test_nr_fraction.map(|f| f.to_string())),
            s.noise_rate.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = RunConfig::default();
        assert_eq!(c.train.batch_size, 160);
        assert_eq!(c.train.learning_rate, 0.03);
        assert_eq!(c.train.epochs, 15);
        assert_eq!(c.train.model.keep_prob, 0.5);
        assert_eq!(c.train.model.encoder.word_dim, 50);
        assert_eq!(c.train.model.encoder.position_dim, 5);
        assert_eq!(c.train.model.encoder.kernels, 230);
        assert_eq!(c.train.model.encoder.window, 3);
        assert_eq!(c.min_count, 100);
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("variant = 2\n# note\n\nmode = ave\ntie_pairs = 0:1:1.0:entail, 2:3:0.5\ntest_nr_fraction = 0.96 # trailing\n")
            .unwrap();
        assert_eq!(c.train.variant, Variant::Att);
        assert_eq!(c.synth.tie_pairs[0].kind, TieKind::Entail);
        assert_eq!(c.synth.tie_pairs[1].kind, TieKind::Cooccur);
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        let mut plain = RunConfig::default();
        plain.apply_text(&RunConfig::default().to_text()).unwrap();
        assert_eq!(plain, RunConfig::default());
        assert_eq!(KEYS.len(), c.to_text().lines().count());
    }

    #[test]
    fn errors_name_the_problem() {
        let mut c = RunConfig::default();
        let err = c.apply_text("epochs = 3\nbogus = 1\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 2"));
        assert!(c.set("epochs", "x").is_err());
        assert!(c.set("relieve_nr", "maybe").is_err());
        assert!(parse_tie_pairs("0:1").is_err());
    }
}
