//! Plain-text run configuration: `key = value` lines, `#` comments, unknown
//! keys rejected. Command-line `--key value` overrides win over the file.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::eval::Metric;
use crate::graphs::{DegreeMode, GraphConfig};
use crate::jacobi::FilterConfig;
use crate::model::{AugmentationMode, ClDenominator, L2Mode, LossConfig};
use crate::trainer::{EvalSplit, TrainConfig, Variant};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for key `{key}`")]
    BadValue { key: String, value: String },
    #[error("malformed config line {0}: expected `key = value`")]
    MalformedLine(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Every tunable of the engine plus IO paths. Defaults follow the tuned
/// values documented in the README.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: String,
    pub corpus_file: String,
    pub out: String,
    pub checkpoint: String,
    pub vectors_file: String,
    pub seed: u64,
    pub threads: usize,
    pub embedding_dim: usize,
    pub mu: f64,
    pub variant: Variant,
    pub symmetrize_qq: bool,
    pub degree_mode: DegreeMode,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub layers: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub tau: f64,
    pub contrast_layer: usize,
    pub noise_scale: f64,
    pub augmentation_mode: AugmentationMode,
    pub cl_denominator: ClDenominator,
    pub l2_mode: L2Mode,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub indicator: Metric,
    pub topk: usize,
    pub eval_split: EvalSplit,
    pub dump_graph: bool,
    pub max_nodes: usize,
    pub analysis_samples: usize,
    pub min_exposures: usize,
    pub min_answers: usize,
    pub analysis_bins: usize,
    pub ablate_variants: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: String::new(),
            corpus_file: String::new(),
            out: "out".to_string(),
            checkpoint: String::new(),
            vectors_file: String::new(),
            seed: 42,
            threads: 0,
            embedding_dim: 64,
            mu: 1e-4,
            variant: Variant::Full,
            symmetrize_qq: true,
            degree_mode: DegreeMode::Count,
            alpha: 1.0,
            beta: 1.5,
            gamma: 0.1,
            layers: 3,
            lambda1: 0.1,
            lambda2: 0.1,
            lambda3: 1e-4,
            tau: 0.2,
            contrast_layer: 1,
            noise_scale: 0.2,
            augmentation_mode: AugmentationMode::Literal,
            cl_denominator: ClDenominator::IncludePositive,
            l2_mode: L2Mode::BatchRows,
            batch_size: 2048,
            learning_rate: 1e-3,
            max_epochs: 500,
            eval_every: 10,
            patience: 10,
            indicator: Metric::Mrr,
            topk: 10,
            eval_split: EvalSplit::Test,
            dump_graph: false,
            max_nodes: 2000,
            analysis_samples: 10000,
            min_exposures: 10,
            min_answers: 10,
            analysis_bins: 20,
            ablate_variants: "full,ua_only,ua_uq,no_pbgf,no_cl,merged_uaq".to_string(),
        }
    }
}

fn parse_or<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl RunConfig {
    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        match key {
            "data" => self.data = value.to_string(),
            "corpus_file" => self.corpus_file = value.to_string(),
            "out" => self.out = value.to_string(),
            "checkpoint" => self.checkpoint = value.to_string(),
            "vectors_file" => self.vectors_file = value.to_string(),
            "seed" => self.seed = parse_or(key, value)?,
            "threads" => self.threads = parse_or(key, value)?,
            "embedding_dim" => self.embedding_dim = parse_or(key, value)?,
            "mu" => self.mu = parse_or(key, value)?,
            "variant" => self.variant = Variant::parse(value).ok_or_else(bad)?,
            "symmetrize_qq" => self.symmetrize_qq = parse_or(key, value)?,
            "degree_mode" => {
                self.degree_mode = match value {
                    "count" => DegreeMode::Count,
                    "weighted" => DegreeMode::Weighted,
                    _ => return Err(bad()),
                }
            }
            "alpha" => self.alpha = parse_or(key, value)?,
            "beta" => self.beta = parse_or(key, value)?,
            "gamma" => self.gamma = parse_or(key, value)?,
            "layers" => self.layers = parse_or(key, value)?,
            "lambda1" => self.lambda1 = parse_or(key, value)?,
            "lambda2" => self.lambda2 = parse_or(key, value)?,
            "lambda3" => self.lambda3 = parse_or(key, value)?,
            "tau" => self.tau = parse_or(key, value)?,
            "contrast_layer" => self.contrast_layer = parse_or(key, value)?,
            "noise_scale" => self.noise_scale = parse_or(key, value)?,
            "augmentation_mode" => {
                self.augmentation_mode = match value {
                    "literal" => AugmentationMode::Literal,
                    "single_delta" => AugmentationMode::SingleDelta,
                    _ => return Err(bad()),
                }
            }
            "cl_denominator" => {
                self.cl_denominator = match value {
                    "include_positive" => ClDenominator::IncludePositive,
                    "negatives_only" => ClDenominator::NegativesOnly,
                    _ => return Err(bad()),
                }
            }
            "l2_mode" => {
                self.l2_mode = match value {
                    "batch" => L2Mode::BatchRows,
                    "full" => L2Mode::FullTable,
                    _ => return Err(bad()),
                }
            }
            "batch_size" => self.batch_size = parse_or(key, value)?,
            "learning_rate" => self.learning_rate = parse_or(key, value)?,
            "max_epochs" => self.max_epochs = parse_or(key, value)?,
            "eval_every" => self.eval_every = parse_or(key, value)?,
            "patience" => self.patience = parse_or(key, value)?,
            "indicator" => self.indicator = Metric::parse(value).ok_or_else(bad)?,
            "topk" => self.topk = parse_or(key, value)?,
            "eval_split" => {
                self.eval_split = match value {
                    "validation" => EvalSplit::Validation,
                    "test" => EvalSplit::Test,
                    _ => return Err(bad()),
                }
            }
            "dump_graph" => self.dump_graph = parse_or(key, value)?,
            "max_nodes" => self.max_nodes = parse_or(key, value)?,
            "analysis_samples" => self.analysis_samples = parse_or(key, value)?,
            "min_exposures" => self.min_exposures = parse_or(key, value)?,
            "min_answers" => self.min_answers = parse_or(key, value)?,
            "analysis_bins" => self.analysis_bins = parse_or(key, value)?,
            "ablate_variants" => self.ablate_variants = value.to_string(),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Parse a config file body. Fails on the first offending line or key.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::MalformedLine(lineno + 1))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Emit the full effective configuration; reparsing this text yields an
    /// identical config.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let degree_mode = match self.degree_mode {
            DegreeMode::Count => "count",
            DegreeMode::Weighted => "weighted",
        };
        let augmentation_mode = match self.augmentation_mode {
            AugmentationMode::Literal => "literal",
            AugmentationMode::SingleDelta => "single_delta",
        };
        let cl_denominator = match self.cl_denominator {
            ClDenominator::IncludePositive => "include_positive",
            ClDenominator::NegativesOnly => "negatives_only",
        };
        let l2_mode = match self.l2_mode {
            L2Mode::BatchRows => "batch",
            L2Mode::FullTable => "full",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("data", self.data.clone()),
            ("corpus_file", self.corpus_file.clone()),
            ("out", self.out.clone()),
            ("checkpoint", self.checkpoint.clone()),
            ("vectors_file", self.vectors_file.clone()),
            ("seed", self.seed.to_string()),
            ("threads", self.threads.to_string()),
            ("embedding_dim", self.embedding_dim.to_string()),
            ("mu", format!("{:e}", self.mu)),
            ("variant", self.variant.name().to_string()),
            ("symmetrize_qq", self.symmetrize_qq.to_string()),
            ("degree_mode", degree_mode.to_string()),
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("layers", self.layers.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("lambda3", format!("{:e}", self.lambda3)),
            ("tau", self.tau.to_string()),
            ("contrast_layer", self.contrast_layer.to_string()),
            ("noise_scale", self.noise_scale.to_string()),
            ("augmentation_mode", augmentation_mode.to_string()),
            ("cl_denominator", cl_denominator.to_string()),
            ("l2_mode", l2_mode.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", format!("{:e}", self.learning_rate)),
            ("max_epochs", self.max_epochs.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("patience", self.patience.to_string()),
            ("indicator", self.indicator.name().to_string()),
            ("topk", self.topk.to_string()),
            ("eval_split", self.eval_split.name().to_string()),
            ("dump_graph", self.dump_graph.to_string()),
            ("max_nodes", self.max_nodes.to_string()),
            ("analysis_samples", self.analysis_samples.to_string()),
            ("min_exposures", self.min_exposures.to_string()),
            ("min_answers", self.min_answers.to_string()),
            ("analysis_bins", self.analysis_bins.to_string()),
            ("ablate_variants", self.ablate_variants.clone()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            mu: self.mu,
            variant: self.variant.graph_variant(),
            symmetrize_qq: self.symmetrize_qq,
            degree_mode: self.degree_mode,
        }
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            layers: self.layers,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            tau: self.tau,
            contrast_layer: self.contrast_layer,
            noise_scale: self.noise_scale,
            augmentation_mode: self.augmentation_mode,
            cl_denominator: self.cl_denominator,
            l2_mode: self.l2_mode,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            embedding_dim: self.embedding_dim,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            eval_every: self.eval_every,
            patience: self.patience,
            indicator: self.indicator,
            topk: self.topk,
            seed: self.seed,
        }
    }

    pub fn ablate_variant_list(&self) -> Result<Vec<Variant>, ConfigError> {
        self.ablate_variants
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                Variant::parse(s).ok_or_else(|| ConfigError::BadValue {
                    key: "ablate_variants".to_string(),
                    value: s.to_string(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_emit() {
        let cfg = RunConfig::default();
        let mut reparsed = RunConfig::default();
        reparsed.apply_text(&cfg.emit()).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn modified_config_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("variant", "no_cl").unwrap();
        cfg.set("mu", "0.01").unwrap();
        cfg.set("l2_mode", "full").unwrap();
        cfg.set("indicator", "ndcg").unwrap();
        cfg.set("data", "some/file.tsv").unwrap();
        let mut reparsed = RunConfig::default();
        reparsed.apply_text(&cfg.emit()).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn unknown_key_is_error() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("no_such_key", "1").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "no_such_key"));
    }

    #[test]
    fn bad_value_names_the_key() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("layers", "three").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { key, .. } if key == "layers"));
        let err = cfg.apply_text("mu 0.1\n").unwrap_err();
        assert!(matches!(err, ConfigError::MalformedLine(1)));
    }

    #[test]
    fn tuned_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.embedding_dim, 64);
        assert_eq!(cfg.batch_size, 2048);
        assert_eq!(cfg.mu, 1e-4);
        assert_eq!(cfg.alpha, 1.0);
        assert_eq!(cfg.beta, 1.5);
        assert_eq!(cfg.gamma, 0.1);
        assert_eq!(cfg.lambda1, 0.1);
        assert_eq!(cfg.lambda2, 0.1);
        assert_eq!(cfg.noise_scale, 0.2);
        assert_eq!(cfg.tau, 0.2);
        assert_eq!(cfg.contrast_layer, 1);
        assert_eq!(cfg.topk, 10);
    }
}
