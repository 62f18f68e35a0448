//! Run configuration: a line-oriented `key = value` text format with
//! per-dataset presets.
//!
//! Precedence, highest first: command-line flags, config file, preset,
//! built-in defaults. Unknown keys are rejected with the key named.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DataConfig, Schema};
use crate::error::{Error, Result};
use crate::seq_encoder::{EncoderSettings, Pooling};

/// Published per-dataset loss and decoder weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Yelp2023,
    Movielens,
    Recipes,
    Books,
    Beauty,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Yelp2023,
        Preset::Movielens,
        Preset::Recipes,
        Preset::Books,
        Preset::Beauty,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Yelp2023 => "yelp2023",
            Preset::Movielens => "movielens",
            Preset::Recipes => "recipes",
            Preset::Books => "books",
            Preset::Beauty => "beauty",
        }
    }

    /// `(beta1, beta2, delta, delta2)`.
    pub fn weights(self) -> (f64, f64, f64, f64) {
        match self {
            Preset::Yelp2023 => (0.12, 1.49, 1.2, 1e-3),
            Preset::Movielens => (1.47, 3.99, 1.2, 0.5),
            Preset::Recipes => (0.12, 3.81, 1.0, 1e-5),
            Preset::Books => (0.25, 3.53, 1.2, 1e-5),
            Preset::Beauty => (0.62, 3.74, 1.2, 1e-3),
        }
    }

    /// Minimum interactions per user and item used for the dataset.
    pub fn min_interactions(self) -> Option<usize> {
        match self {
            Preset::Yelp2023 => Some(15),
            Preset::Recipes => Some(10),
            Preset::Books => Some(25),
            Preset::Beauty => Some(5),
            Preset::Movielens => None,
        }
    }

    pub fn apply(self, cfg: &mut RunConfig) {
        let (b1, b2, d, d2) = self.weights();
        cfg.model.beta1 = b1;
        cfg.model.beta2 = b2;
        cfg.model.delta = d;
        cfg.model.delta2 = d2;
        if let Some(n) = self.min_interactions() {
            cfg.data.min_interactions = n;
        }
        cfg.preset = Some(self);
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// Decoder terms that can be removed for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_seq: bool,
    pub no_gra1: bool,
    pub no_gra2: bool,
}

impl Ablation {
    pub fn label(self) -> &'static str {
        match (self.no_seq, self.no_gra1, self.no_gra2) {
            (false, false, false) => "full",
            (true, false, false) => "w/o Seq",
            (false, true, false) => "w/o Gra1",
            (false, false, true) => "w/o Gra2",
            _ => "custom",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub seq_layers: usize,
    pub hgc_layers: usize,
    /// Number of feedback-correlation orders summed into `x_hat`.
    pub order: usize,
    pub self_loops: bool,
    pub encoder: EncoderSettings,
    /// Width of the optional hidden layer in the intensity head; 0 disables it.
    pub intensity_hidden: usize,
    pub strict_hgc: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub delta: f64,
    pub delta2: f64,
    pub n_mci: usize,
    pub strict_paper_loss: bool,
    pub ablation: Ablation,
    /// Share of each training sequence held out as next-item targets.
    pub target_fraction: f64,
    /// Half-width of the uniform initialization of the item table.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            seq_layers: 1,
            hgc_layers: 1,
            order: 2,
            self_loops: true,
            encoder: EncoderSettings::default(),
            intensity_hidden: 0,
            strict_hgc: false,
            beta1: 1.0,
            beta2: 1.0,
            delta: 1.0,
            delta2: 1e-3,
            n_mci: 20,
            strict_paper_loss: false,
            ablation: Ablation::default(),
            target_fraction: 0.2,
            init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 {
            return bad("d_model must be >= 1".into());
        }
        if self.seq_layers == 0 {
            return bad("seq_layers must be >= 1".into());
        }
        if self.order == 0 {
            return bad("order must be >= 1".into());
        }
        if self.n_mci == 0 {
            return bad("n_mci must be >= 1".into());
        }
        for (name, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("delta", self.delta),
            ("delta2", self.delta2),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.target_fraction > 0.0 && self.target_fraction < 1.0) {
            return bad(format!("target_fraction must be in (0, 1), got {}", self.target_fraction));
        }
        if !(self.init_scale > 0.0) {
            return bad("init_scale must be > 0".into());
        }
        let a = self.ablation;
        if a.no_seq && a.no_gra1 && a.no_gra2 {
            return bad("cannot remove every decoder term".into());
        }
        if let Pooling::Window(0) = self.encoder.pooling {
            return bad("pooling window must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Users per gradient step; 0 means full batch.
    pub batch_users: usize,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    /// Worker threads for scoring; 0 lets the pool decide.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 50,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_users: 0,
            eval_every: 1,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be > 0".into()));
        }
        Ok(())
    }
}

/// How candidate items and relevance are chosen during evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalPolicy {
    /// Drop the user's history items from the ranking.
    pub exclude_history: bool,
    /// Count only positively rated split items as relevant.
    pub positive_only: bool,
}

impl Default for EvalPolicy {
    fn default() -> Self {
        EvalPolicy {
            exclude_history: true,
            positive_only: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            bundle: None,
            preset: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalPolicy::default(),
        }
    }
}

/// One `key = value` entry with its 1-based line number.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits config text into entries; `#` starts a comment.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                idx + 1
            )));
        };
        out.push(Entry {
            line: idx + 1,
            key: k.trim().to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn encode_delimiter(d: &str) -> String {
    match d {
        "\t" => "tab".into(),
        " " => "space".into(),
        other => other.into(),
    }
}

fn decode_delimiter(d: &str) -> String {
    match d {
        "tab" | "\\t" => "\t".into(),
        "space" => " ".into(),
        other => other.into(),
    }
}

fn parse_pooling(value: &str) -> Result<Pooling> {
    if value == "layer_mean" {
        return Ok(Pooling::LayerMean);
    }
    if let Some(w) = value.strip_prefix("window:") {
        return Ok(Pooling::Window(parse_num("pooling", w)?));
    }
    Err(Error::Config(format!(
        "invalid pooling `{value}` (expected `layer_mean` or `window:N`)"
    )))
}

fn pooling_text(p: Pooling) -> String {
    match p {
        Pooling::LayerMean => "layer_mean".into(),
        Pooling::Window(w) => format!("window:{w}"),
    }
}

impl RunConfig {
    /// Sets one key. `preset` is handled by [`RunConfig::from_entries`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "input" => self.input = Some(PathBuf::from(value)),
            "bundle" => self.bundle = Some(PathBuf::from(value)),
            "preset" => Preset::from_str(value)?.apply(self),
            "delimiter" => d.schema.delimiter = decode_delimiter(value),
            "columns" => d.schema.columns = Schema::parse_columns(value)?,
            "header" => d.schema.header = parse_bool(key, value)?,
            "rating_min" => d.schema.rating_min = parse_num(key, value)?,
            "rating_max" => d.schema.rating_max = parse_num(key, value)?,
            "threshold" => d.threshold = parse_num(key, value)?,
            "min_interactions" => d.min_interactions = parse_num(key, value)?,
            "split_train" => d.ratios.train = parse_num(key, value)?,
            "split_validation" => d.ratios.validation = parse_num(key, value)?,
            "split_test" => d.ratios.test = parse_num(key, value)?,
            "lenient" => d.lenient = parse_bool(key, value)?,
            "d_model" => m.d_model = parse_num(key, value)?,
            "seq_layers" => m.seq_layers = parse_num(key, value)?,
            "hgc_layers" => m.hgc_layers = parse_num(key, value)?,
            "order" => m.order = parse_num(key, value)?,
            "self_loops" => m.self_loops = parse_bool(key, value)?,
            "masking" => m.encoder.masking = parse_bool(key, value)?,
            "attention_only" => m.encoder.attention_only = parse_bool(key, value)?,
            "pooling" => m.encoder.pooling = parse_pooling(value)?,
            "time_embedding" => m.encoder.time_embedding = parse_bool(key, value)?,
            "intensity_hidden" => m.intensity_hidden = parse_num(key, value)?,
            "strict_hgc" => m.strict_hgc = parse_bool(key, value)?,
            "beta1" => m.beta1 = parse_num(key, value)?,
            "beta2" => m.beta2 = parse_num(key, value)?,
            "delta" => m.delta = parse_num(key, value)?,
            "delta2" => m.delta2 = parse_num(key, value)?,
            "n_mci" => m.n_mci = parse_num(key, value)?,
            "strict_paper_loss" => m.strict_paper_loss = parse_bool(key, value)?,
            "no_seq" => m.ablation.no_seq = parse_bool(key, value)?,
            "no_gra1" => m.ablation.no_gra1 = parse_bool(key, value)?,
            "no_gra2" => m.ablation.no_gra2 = parse_bool(key, value)?,
            "target_fraction" => m.target_fraction = parse_num(key, value)?,
            "init_scale" => m.init_scale = parse_num(key, value)?,
            "lr" => t.lr = parse_num(key, value)?,
            "epochs" => t.epochs = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "adam_beta1" => t.adam_beta1 = parse_num(key, value)?,
            "adam_beta2" => t.adam_beta2 = parse_num(key, value)?,
            "adam_eps" => t.adam_eps = parse_num(key, value)?,
            "batch_users" => t.batch_users = parse_num(key, value)?,
            "eval_every" => t.eval_every = parse_num(key, value)?,
            "threads" => t.threads = parse_num(key, value)?,
            "exclude_history" => self.eval.exclude_history = parse_bool(key, value)?,
            "positive_only" => self.eval.positive_only = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Defaults, then the preset (an explicit `preset_override` wins over the
    /// file's own `preset` line), then every other entry in file order.
    pub fn from_entries(entries: &[Entry], preset_override: Option<Preset>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let file_preset = entries
            .iter()
            .rev()
            .find(|e| e.key == "preset")
            .map(|e| Preset::from_str(&e.value))
            .transpose()?;
        if let Some(p) = preset_override.or(file_preset) {
            p.apply(&mut cfg);
        }
        for e in entries.iter().filter(|e| e.key != "preset") {
            cfg.set(&e.key, &e.value)
                .map_err(|err| match err {
                    Error::Config(msg) => Error::Config(format!("line {}: {msg}", e.line)),
                    other => other,
                })?;
        }
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_entries(&parse_entries(text)?, None)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.ratios.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// Every key with its current value; parsing the result reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(p) = self.preset {
            put("preset", p.name().into());
        }
        if let Some(p) = &self.input {
            put("input", p.display().to_string());
        }
        if let Some(p) = &self.bundle {
            put("bundle", p.display().to_string());
        }
        let d = &self.data;
        put("delimiter", encode_delimiter(&d.schema.delimiter));
        put("columns", d.schema.columns_string());
        put("header", d.schema.header.to_string());
        put("rating_min", format!("{:?}", d.schema.rating_min));
        put("rating_max", format!("{:?}", d.schema.rating_max));
        put("threshold", format!("{:?}", d.threshold));
        put("min_interactions", d.min_interactions.to_string());
        put("split_train", format!("{:?}", d.ratios.train));
        put("split_validation", format!("{:?}", d.ratios.validation));
        put("split_test", format!("{:?}", d.ratios.test));
        put("lenient", d.lenient.to_string());
        let m = &self.model;
        put("d_model", m.d_model.to_string());
        put("seq_layers", m.seq_layers.to_string());
        put("hgc_layers", m.hgc_layers.to_string());
        put("order", m.order.to_string());
        put("self_loops", m.self_loops.to_string());
        put("masking", m.encoder.masking.to_string());
        put("attention_only", m.encoder.attention_only.to_string());
        put("pooling", pooling_text(m.encoder.pooling));
        put("time_embedding", m.encoder.time_embedding.to_string());
        put("intensity_hidden", m.intensity_hidden.to_string());
        put("strict_hgc", m.strict_hgc.to_string());
        put("beta1", format!("{:?}", m.beta1));
        put("beta2", format!("{:?}", m.beta2));
        put("delta", format!("{:?}", m.delta));
        put("delta2", format!("{:?}", m.delta2));
        put("n_mci", m.n_mci.to_string());
        put("strict_paper_loss", m.strict_paper_loss.to_string());
        put("no_seq", m.ablation.no_seq.to_string());
        put("no_gra1", m.ablation.no_gra1.to_string());
        put("no_gra2", m.ablation.no_gra2.to_string());
        put("target_fraction", format!("{:?}", m.target_fraction));
        put("init_scale", format!("{:?}", m.init_scale));
        let t = &self.train;
        put("lr", format!("{:?}", t.lr));
        put("epochs", t.epochs.to_string());
        put("seed", t.seed.to_string());
        put("adam_beta1", format!("{:?}", t.adam_beta1));
        put("adam_beta2", format!("{:?}", t.adam_beta2));
        put("adam_eps", format!("{:?}", t.adam_eps));
        put("batch_users", t.batch_users.to_string());
        put("eval_every", t.eval_every.to_string());
        put("threads", t.threads.to_string());
        put("exclude_history", self.eval.exclude_history.to_string());
        put("positive_only", self.eval.positive_only.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn presets_carry_published_weights() {
        let mut cfg = RunConfig::default();
        Preset::Yelp2023.apply(&mut cfg);
        assert_eq!(
            (cfg.model.beta1, cfg.model.beta2, cfg.model.delta, cfg.model.delta2),
            (0.12, 1.49, 1.2, 1e-3)
        );
        assert_eq!(cfg.data.min_interactions, 15);
        assert_eq!(Preset::Movielens.weights(), (1.47, 3.99, 1.2, 0.5));
        assert_eq!(Preset::Recipes.weights(), (0.12, 3.81, 1.0, 1e-5));
        assert_eq!(Preset::Books.weights(), (0.25, 3.53, 1.2, 1e-5));
        assert_eq!(Preset::Beauty.weights(), (0.62, 3.74, 1.2, 1e-3));
        assert!("netflix".parse::<Preset>().is_err());
    }

    #[test]
    fn file_values_override_preset() {
        let cfg = RunConfig::from_text("beta1 = 0.5\npreset = yelp2023\n").unwrap();
        assert_eq!(cfg.model.beta1, 0.5);
        assert_eq!(cfg.model.beta2, 1.49);
        let cfg = RunConfig::from_entries(
            &parse_entries("preset = yelp2023\n").unwrap(),
            Some(Preset::Books),
        )
        .unwrap();
        assert_eq!(cfg.preset, Some(Preset::Books));
        assert_eq!(cfg.model.beta2, 3.53);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_text("d_model = 8\nlearning_rate = 1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rate") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn malformed_lines_and_values_rejected() {
        assert!(RunConfig::from_text("d_model 8").is_err());
        assert!(RunConfig::from_text("d_model = eight").is_err());
        assert!(RunConfig::from_text("masking = maybe").is_err());
        assert!(RunConfig::from_text("pooling = max").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::from_text("# header\n\norder = 3 # trailing\n").unwrap();
        assert_eq!(cfg.model.order, 3);
    }

    #[test]
    fn round_trip_of_defaults_and_preset() {
        for cfg in [RunConfig::default(), {
            let mut c = RunConfig::default();
            Preset::Beauty.apply(&mut c);
            c.data.schema = Schema::tab();
            c.model.encoder.pooling = Pooling::Window(3);
            c.input = Some("data/u.data".into());
            c
        }] {
            let text = cfg.to_text();
            let back = RunConfig::from_text(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.model.n_mci = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.model.ablation = Ablation {
            no_seq: true,
            no_gra1: true,
            no_gra2: true,
        };
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.model.delta2 = -1.0;
        assert!(cfg.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn round_trip_is_idempotent(
            d in 1usize..256,
            order in 1usize..6,
            b1 in 0.0f64..5.0,
            d2 in 0.0f64..1.0,
            lr in 1e-6f64..1.0,
            seed in any::<u64>(),
            mask in any::<bool>(),
            no_gra2 in any::<bool>(),
        ) {
            let mut cfg = RunConfig::default();
            cfg.model.d_model = d;
            cfg.model.order = order;
            cfg.model.beta1 = b1;
            cfg.model.delta2 = d2;
            cfg.model.encoder.masking = mask;
            cfg.model.ablation.no_gra2 = no_gra2;
            cfg.train.lr = lr;
            cfg.train.seed = seed;
            let back = RunConfig::from_text(&cfg.to_text()).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_text(), cfg.to_text());
        }
    }
}
