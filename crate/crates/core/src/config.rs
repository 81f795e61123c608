//! Run configuration: a flat UTF-8 key=value file covering the model shape,
//! tokenizer, noising strategy, optimizer, decoding, and artifact paths.
//! Unknown and duplicate keys are rejected so a typo cannot silently fall
//! back to a default, and parse -> serialize -> parse is the identity, which
//! lets every artifact embed the full effective config for provenance.

use std::collections::HashSet;
use std::path::Path;

use crate::dataset::LogFormat;
use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::noising::{default_schedule, validate_schedule, NoisingStrategy};

/// View schedule selection: the default 1..=n ramp or an explicit list of
/// mask counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleSpec {
    Default,
    Explicit(Vec<usize>),
}

impl ScheduleSpec {
    /// Concrete mask counts for an n-digit model.
    pub fn mask_counts(&self, n: usize) -> Vec<usize> {
        match self {
            ScheduleSpec::Default => default_schedule(n),
            ScheduleSpec::Explicit(counts) => counts.clone(),
        }
    }
}

impl std::fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScheduleSpec::Default => write!(f, "default"),
            ScheduleSpec::Explicit(counts) => {
                let parts: Vec<String> = counts.iter().map(ToString::to_string).collect();
                write!(f, "{}", parts.join(","))
            }
        }
    }
}

impl std::str::FromStr for ScheduleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "default" {
            return Ok(ScheduleSpec::Default);
        }
        let mut counts = Vec::new();
        for part in s.split(',') {
            let count: usize = part
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad mask count {part:?} in schedule")))?;
            counts.push(count);
        }
        Ok(ScheduleSpec::Explicit(counts))
    }
}

/// Tokenizer family used to assign semantic ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenizeMethod {
    /// Product quantization with a learned orthogonal rotation.
    Pse,
    /// Residual k-means baseline.
    Rq,
    /// Uniform random codes baseline.
    Random,
}

impl std::fmt::Display for TokenizeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TokenizeMethod::Pse => write!(f, "pse"),
            TokenizeMethod::Rq => write!(f, "rq"),
            TokenizeMethod::Random => write!(f, "random"),
        }
    }
}

impl std::str::FromStr for TokenizeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pse" => Ok(TokenizeMethod::Pse),
            "rq" => Ok(TokenizeMethod::Rq),
            "random" => Ok(TokenizeMethod::Random),
            other => Err(Error::Config(format!(
                "unknown tokenize method {other:?} (expected pse, rq, or random)"
            ))),
        }
    }
}

/// Every knob a run can turn. Defaults mirror the published hyperparameters;
/// desk-scale runs override them via file or command line.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d_m: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub n: usize,
    pub m: usize,
    pub l_input: usize,
    pub dropout: f64,
    pub lr: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub alpha: f64,
    pub strategy: NoisingStrategy,
    pub schedule: ScheduleSpec,
    pub b_act: usize,
    pub k: usize,
    pub seed: u64,
    pub tok_method: TokenizeMethod,
    pub tok_iters: usize,
    pub tok_seed: u64,
    pub embeddings_path: String,
    pub log_path: String,
    pub log_format: LogFormat,
    pub codebooks_path: String,
    pub sid_map_path: String,
    pub checkpoint_path: String,
    pub report_path: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d_m: 256,
            d_ff: 1024,
            heads: 4,
            encoder_layers: 1,
            decoder_layers: 4,
            n: 4,
            m: 256,
            l_input: 50,
            dropout: 0.1,
            lr: 0.003,
            warmup: 10000,
            weight_decay: 0.01,
            batch_size: 16,
            epochs: 100,
            patience: 15,
            alpha: 0.1,
            strategy: "ocn-ls".parse().expect("builtin strategy"),
            schedule: ScheduleSpec::Default,
            b_act: 128,
            k: 10,
            seed: 0,
            tok_method: TokenizeMethod::Pse,
            tok_iters: 20,
            tok_seed: 0,
            embeddings_path: "embeddings.side".into(),
            log_path: "interactions.tsv".into(),
            log_format: LogFormat::Tsv,
            codebooks_path: "codebooks.sidc".into(),
            sid_map_path: "sid_map.tsv".into(),
            checkpoint_path: "checkpoint.sidm".into(),
            report_path: String::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl RunConfig {
    /// Applies one key=value assignment. Later assignments overwrite earlier
    /// ones; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d_m" => self.d_m = parse_num(key, value)?,
            "d_ff" => self.d_ff = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "encoder_layers" => self.encoder_layers = parse_num(key, value)?,
            "decoder_layers" => self.decoder_layers = parse_num(key, value)?,
            "n" => self.n = parse_num(key, value)?,
            "m" => self.m = parse_num(key, value)?,
            "l_input" => self.l_input = parse_num(key, value)?,
            "dropout" => self.dropout = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "warmup" => self.warmup = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "patience" => self.patience = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "strategy" => self.strategy = value.parse()?,
            "schedule" => self.schedule = value.parse()?,
            "b_act" => self.b_act = parse_num(key, value)?,
            "k" => self.k = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "tok_method" => self.tok_method = value.parse()?,
            "tok_iters" => self.tok_iters = parse_num(key, value)?,
            "tok_seed" => self.tok_seed = parse_num(key, value)?,
            "embeddings_path" => self.embeddings_path = value.into(),
            "log_path" => self.log_path = value.into(),
            "log_format" => self.log_format = value.parse()?,
            "codebooks_path" => self.codebooks_path = value.into(),
            "sid_map_path" => self.sid_map_path = value.into(),
            "checkpoint_path" => self.checkpoint_path = value.into(),
            "report_path" => self.report_path = value.into(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults. Blank lines and
    /// `#` comments are skipped; a key may appear at most once.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: HashSet<String> = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = idx + 1;
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {lineno}: expected key=value, got {line:?}"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {lineno}: duplicate key {key:?}"
                )));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {lineno}: {msg}")),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    /// Serializes every key in a fixed order. `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("d_m", self.d_m.to_string());
        kv("d_ff", self.d_ff.to_string());
        kv("heads", self.heads.to_string());
        kv("encoder_layers", self.encoder_layers.to_string());
        kv("decoder_layers", self.decoder_layers.to_string());
        kv("n", self.n.to_string());
        kv("m", self.m.to_string());
        kv("l_input", self.l_input.to_string());
        kv("dropout", self.dropout.to_string());
        kv("lr", self.lr.to_string());
        kv("warmup", self.warmup.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("alpha", self.alpha.to_string());
        kv("strategy", self.strategy.to_string());
        kv("schedule", self.schedule.to_string());
        kv("b_act", self.b_act.to_string());
        kv("k", self.k.to_string());
        kv("seed", self.seed.to_string());
        kv("tok_method", self.tok_method.to_string());
        kv("tok_iters", self.tok_iters.to_string());
        kv("tok_seed", self.tok_seed.to_string());
        kv("embeddings_path", self.embeddings_path.clone());
        kv("log_path", self.log_path.clone());
        kv("log_format", self.log_format.to_string());
        kv("codebooks_path", self.codebooks_path.clone());
        kv("sid_map_path", self.sid_map_path.clone());
        kv("checkpoint_path", self.checkpoint_path.clone());
        kv("report_path", self.report_path.clone());
        out
    }

    /// Checks every numeric range and the schedule before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} out of range",
                self.lr
            )));
        }
        if !(self.alpha.is_finite() && (0.0..1.0).contains(&self.alpha)) {
            return Err(Error::Config(format!(
                "smoothing {} outside [0, 1)",
                self.alpha
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay {} out of range",
                self.weight_decay
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("patience", self.patience),
            ("b_act", self.b_act),
            ("k", self.k),
            ("tok_iters", self.tok_iters),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        validate_schedule(&self.schedule.mask_counts(self.n), self.n)?;
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_m: self.d_m,
            d_ff: self.d_ff,
            heads: self.heads,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            n: self.n,
            m: self.m,
            l_input: self.l_input,
            dropout: self.dropout,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_published_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!(
            (c.d_m, c.d_ff, c.heads, c.encoder_layers, c.decoder_layers),
            (256, 1024, 4, 1, 4)
        );
        assert_eq!((c.n, c.m, c.l_input), (4, 256, 50));
        assert_eq!((c.lr, c.dropout, c.alpha), (0.003, 0.1, 0.1));
        assert_eq!((c.warmup, c.b_act, c.k), (10000, 128, 10));
        assert_eq!((c.epochs, c.patience), (100, 15));
        c.validate().unwrap();
    }

    #[test]
    fn parse_serialize_parse_is_identity() {
        let text = "\
# desk-scale run
d_m = 32
n=3
m=4
strategy=coherent-2
schedule=1,3
warmup=200
report_path=out/report.txt

seed=7
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.d_m, 32);
        assert_eq!(cfg.strategy, NoisingStrategy::Coherent(2));
        assert_eq!(cfg.schedule, ScheduleSpec::Explicit(vec![1, 3]));
        assert_eq!(cfg.report_path, "out/report.txt");
        let round = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(round, cfg);
        assert_eq!(round.to_text(), cfg.to_text());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let err = RunConfig::parse("d_mm=12\n").unwrap_err();
        assert!(err.to_string().contains("unknown config key"), "{err}");
        let err = RunConfig::parse("d_m=12\nd_m=13\n").unwrap_err();
        assert!(err.to_string().contains("line 2: duplicate key"), "{err}");
        let err = RunConfig::parse("d_m\n").unwrap_err();
        assert!(err.to_string().contains("expected key=value"), "{err}");
    }

    #[test]
    fn bad_values_name_the_offending_key() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("dropout", "high").unwrap_err();
        assert!(err.to_string().contains("dropout"), "{err}");
        assert!(cfg.set("strategy", "ocn-xx").is_err());
        assert!(cfg.set("schedule", "1,,2").is_err());
        assert!(cfg.set("log_format", "csv").is_err());
        assert!(cfg.set("tok_method", "opq").is_err());
    }

    #[test]
    fn validate_checks_ranges_and_schedule() {
        let mut cfg = RunConfig::default();
        cfg.set("alpha", "1.0").unwrap();
        assert!(cfg.validate().is_err());
        cfg.set("alpha", "0.1").unwrap();
        cfg.validate().unwrap();

        cfg.schedule = ScheduleSpec::Explicit(vec![2, 1]);
        assert!(cfg.validate().is_err());
        cfg.schedule = ScheduleSpec::Explicit(vec![1, 2, 5]);
        assert!(cfg.validate().is_err(), "peak above n must fail");
        cfg.schedule = ScheduleSpec::Explicit(vec![1, 4]);
        cfg.validate().unwrap();

        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        cfg.batch_size = 16;
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn schedule_spec_expands_the_default_ramp() {
        assert_eq!(ScheduleSpec::Default.mask_counts(4), vec![1, 2, 3, 4]);
        assert_eq!(
            ScheduleSpec::Explicit(vec![2, 3]).mask_counts(4),
            vec![2, 3]
        );
        assert_eq!(
            "default".parse::<ScheduleSpec>().unwrap(),
            ScheduleSpec::Default
        );
        assert_eq!(
            "1, 2,4".parse::<ScheduleSpec>().unwrap(),
            ScheduleSpec::Explicit(vec![1, 2, 4])
        );
    }
}
