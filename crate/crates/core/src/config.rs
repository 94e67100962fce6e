//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown and repeated
//! keys are errors. Every key has a default, so an empty file is valid.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::data::{DatasetSpec, FlipMode, StreamSpec};
use crate::disambiguation::{ArgmaxSpace, EmOptions, SeparationConfig};
use crate::error::{Error, Result};
use crate::memory::MemoryConfig;
use crate::model::{Activation, LossWeights, Objective};
use crate::prototypes::DEFAULT_GAMMA;
use crate::trainer::{EvalMode, VariantTag};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "IPLL_SEED";

/// `(line number, key, value)` triples in file order.
fn parse_pairs(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut out: Vec<(usize, &str, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::parse(i + 1, "empty key"));
        }
        if out.iter().any(|(_, k, _)| *k == key) {
            return Err(Error::parse(i + 1, format!("duplicate key `{key}`")));
        }
        out.push((i + 1, key, value));
    }
    Ok(out)
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::parse(line, format!("bad value `{raw}` for `{key}`")))
}

fn parse_bool(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::parse(line, format!("`{key}` expects true or false"))),
    }
}

/// Every training and evaluation setting of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdrConfig {
    pub seed: u64,
    pub variant: VariantTag,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sgd_momentum: f64,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub loss_weights: LossWeights,
    pub kd_temperature: f64,
    pub separation: SeparationConfig,
    pub argmax_space: ArgmaxSpace,
    pub gamma: f64,
    pub memory: MemoryConfig,
    pub freeze_memory_labels: bool,
    pub eval: EvalMode,
    /// Weak-view jitter as a multiple of the stream's cluster stddev.
    pub sigma_weak: f64,
    /// Strong-view jitter as a multiple of the stream's cluster stddev.
    pub sigma_strong: f64,
}

impl Default for PgdrConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            variant: VariantTag::Pgdr,
            epochs: 30,
            batch_size: 64,
            lr: 0.05,
            sgd_momentum: 0.9,
            hidden_dim: 32,
            activation: Activation::Tanh,
            loss_weights: LossWeights::default(),
            kd_temperature: 1.0,
            separation: SeparationConfig::default(),
            argmax_space: ArgmaxSpace::Original,
            gamma: DEFAULT_GAMMA,
            memory: MemoryConfig::default(),
            freeze_memory_labels: false,
            eval: EvalMode::Prototype,
            sigma_weak: 0.05,
            sigma_strong: 0.2,
        }
    }
}

/// Keys accepted in a run config, with what they control.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    (
        "seed",
        "root seed for initialisation, shuffling and augmentation",
    ),
    (
        "variant",
        "PGDR, MP, PP, NO_MEMORY, RANDOM_MEMORY, DISTANCE_MEMORY, LINEAR_EVAL, NO_CR or NO_KD",
    ),
    ("epochs", "epochs per task"),
    ("batch_size", "mini-batch size"),
    ("lr", "SGD learning rate"),
    ("sgd_momentum", "SGD momentum"),
    ("hidden_dim", "feature dimension of the encoder"),
    ("activation", "encoder activation: tanh, relu or identity"),
    ("w_ce", "weight of the classification loss"),
    ("w_kd", "weight of the distillation loss"),
    ("w_cr", "weight of the consistency loss"),
    ("kd_temperature", "distillation softmax temperature"),
    ("alpha", "posterior threshold for old-class separation"),
    ("beta_start", "pseudo-label momentum at the first epoch"),
    ("beta_end", "pseudo-label momentum at the last epoch"),
    (
        "em_tolerance",
        "EM stopping tolerance on the log-likelihood gain",
    ),
    ("em_max_iter", "EM iteration cap"),
    (
        "argmax_space",
        "candidate set of the pseudo-label arg-max: original or reallocated",
    ),
    ("gamma", "prototype momentum"),
    ("memory_budget", "total memory size"),
    ("knn_k", "neighbourhood size for diverse selection"),
    (
        "diverse_fraction",
        "share of each class budget for diverse samples",
    ),
    (
        "freeze_memory_labels",
        "keep stored pseudo-labels fixed in later tasks",
    ),
    (
        "eval_classifier",
        "test-time classifier: prototype or linear",
    ),
    ("sigma_weak", "weak jitter, in units of the cluster stddev"),
    (
        "sigma_strong",
        "strong jitter, in units of the cluster stddev",
    ),
];

impl PgdrConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (line, key, raw) in parse_pairs(text)? {
            match key {
                "seed" => c.seed = value(line, key, raw)?,
                "variant" => c.variant = value(line, key, raw)?,
                "epochs" => c.epochs = value(line, key, raw)?,
                "batch_size" => c.batch_size = value(line, key, raw)?,
                "lr" => c.lr = value(line, key, raw)?,
                "sgd_momentum" => c.sgd_momentum = value(line, key, raw)?,
                "hidden_dim" => c.hidden_dim = value(line, key, raw)?,
                "activation" => c.activation = value(line, key, raw)?,
                "w_ce" => c.loss_weights.ce = value(line, key, raw)?,
                "w_kd" => c.loss_weights.kd = value(line, key, raw)?,
                "w_cr" => c.loss_weights.cr = value(line, key, raw)?,
                "kd_temperature" => c.kd_temperature = value(line, key, raw)?,
                "alpha" => c.separation.alpha = value(line, key, raw)?,
                "beta_start" => c.separation.beta_start = value(line, key, raw)?,
                "beta_end" => c.separation.beta_end = value(line, key, raw)?,
                "em_tolerance" => c.separation.em.tolerance = value(line, key, raw)?,
                "em_max_iter" => c.separation.em.max_iterations = value(line, key, raw)?,
                "argmax_space" => c.argmax_space = value(line, key, raw)?,
                "gamma" => c.gamma = value(line, key, raw)?,
                "memory_budget" => c.memory.budget = value(line, key, raw)?,
                "knn_k" => c.memory.neighbors = value(line, key, raw)?,
                "diverse_fraction" => c.memory.diverse_fraction = value(line, key, raw)?,
                "freeze_memory_labels" => c.freeze_memory_labels = parse_bool(line, key, raw)?,
                "eval_classifier" => c.eval = value(line, key, raw)?,
                "sigma_weak" => c.sigma_weak = value(line, key, raw)?,
                "sigma_strong" => c.sigma_strong = value(line, key, raw)?,
                other => return Err(Error::parse(line, format!("unknown key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Replaces the seed when `raw` (the value of [`SEED_ENV`]) is present.
    pub fn with_seed_override(mut self, raw: Option<&str>) -> Result<Self> {
        if let Some(raw) = raw {
            self.seed = raw.trim().parse().map_err(|_| {
                Error::config(format!("{SEED_ENV}=`{raw}` is not an unsigned integer"))
            })?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden_dim == 0 {
            return Err(Error::config("batch_size and hidden_dim must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr = {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(Error::config("sgd_momentum must lie in [0, 1)"));
        }
        if !(self.kd_temperature > 0.0 && self.kd_temperature.is_finite()) {
            return Err(Error::config("kd_temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma must lie in [0, 1]"));
        }
        for s in [self.sigma_weak, self.sigma_strong] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::config("jitter scales must be non-negative"));
            }
        }
        self.loss_weights.validate()?;
        self.separation.validate()?;
        self.memory.validate()?;
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        Objective {
            weights: self.loss_weights,
            temperature: self.kd_temperature,
        }
    }
}

/// Canonical form: every key, one per line, in [`CONFIG_KEYS`] order.
/// Parsing the output yields the same config.
impl fmt::Display for PgdrConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let em: EmOptions = self.separation.em;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "variant = {}", self.variant)?;
        writeln!(f, "epochs = {}", self.epochs)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "lr = {:?}", self.lr)?;
        writeln!(f, "sgd_momentum = {:?}", self.sgd_momentum)?;
        writeln!(f, "hidden_dim = {}", self.hidden_dim)?;
        writeln!(f, "activation = {}", self.activation)?;
        writeln!(f, "w_ce = {:?}", self.loss_weights.ce)?;
        writeln!(f, "w_kd = {:?}", self.loss_weights.kd)?;
        writeln!(f, "w_cr = {:?}", self.loss_weights.cr)?;
        writeln!(f, "kd_temperature = {:?}", self.kd_temperature)?;
        writeln!(f, "alpha = {:?}", self.separation.alpha)?;
        writeln!(f, "beta_start = {:?}", self.separation.beta_start)?;
        writeln!(f, "beta_end = {:?}", self.separation.beta_end)?;
        writeln!(f, "em_tolerance = {:?}", em.tolerance)?;
        writeln!(f, "em_max_iter = {}", em.max_iterations)?;
        writeln!(f, "argmax_space = {}", self.argmax_space)?;
        writeln!(f, "gamma = {:?}", self.gamma)?;
        writeln!(f, "memory_budget = {}", self.memory.budget)?;
        writeln!(f, "knn_k = {}", self.memory.neighbors)?;
        writeln!(f, "diverse_fraction = {:?}", self.memory.diverse_fraction)?;
        writeln!(f, "freeze_memory_labels = {}", self.freeze_memory_labels)?;
        writeln!(f, "eval_classifier = {}", self.eval)?;
        writeln!(f, "sigma_weak = {:?}", self.sigma_weak)?;
        writeln!(f, "sigma_strong = {:?}", self.sigma_strong)
    }
}

/// Generation parameters for `gen`: a dataset plus the stream built from it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenSpec {
    pub dataset: DatasetSpec,
    pub stream: StreamSpec,
}

pub const GEN_KEYS: &[(&str, &str)] = &[
    ("num_classes", "number of classes C"),
    ("feature_dim", "feature dimension d"),
    ("samples_per_class", "training samples per class"),
    ("test_per_class", "test samples per class"),
    ("cluster_separation", "minimum distance between class means"),
    (
        "cluster_stddev",
        "per-coordinate stddev around each class mean",
    ),
    ("tasks", "number of tasks T"),
    ("w", "percent of a class's samples kept in its first task"),
    ("q", "negative-label flip probability"),
    ("flip_mode", "uniform or nonuniform"),
    ("seed", "seed for both the dataset and the stream"),
];

impl GenSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut g = Self::default();
        for (line, key, raw) in parse_pairs(text)? {
            match key {
                "num_classes" => g.dataset.num_classes = value(line, key, raw)?,
                "feature_dim" => g.dataset.feature_dim = value(line, key, raw)?,
                "samples_per_class" => g.dataset.samples_per_class = value(line, key, raw)?,
                "test_per_class" => g.dataset.test_per_class = value(line, key, raw)?,
                "cluster_separation" => g.dataset.cluster_separation = value(line, key, raw)?,
                "cluster_stddev" => g.dataset.cluster_stddev = value(line, key, raw)?,
                "tasks" => g.stream.tasks = value(line, key, raw)?,
                "w" => g.stream.w = value(line, key, raw)?,
                "q" => g.stream.q = value(line, key, raw)?,
                "flip_mode" => g.stream.flip_mode = value::<FlipMode>(line, key, raw)?,
                "seed" => {
                    let seed = value(line, key, raw)?;
                    g.dataset.seed = seed;
                    g.stream.seed = seed;
                }
                other => return Err(Error::parse(line, format!("unknown key `{other}`"))),
            }
        }
        g.dataset.validate()?;
        g.stream.validate(g.dataset.num_classes)?;
        Ok(g)
    }

    pub fn to_text(&self) -> String {
        let (d, s) = (&self.dataset, &self.stream);
        let mut out = String::new();
        let _ = writeln!(out, "num_classes = {}", d.num_classes);
        let _ = writeln!(out, "feature_dim = {}", d.feature_dim);
        let _ = writeln!(out, "samples_per_class = {}", d.samples_per_class);
        let _ = writeln!(out, "test_per_class = {}", d.test_per_class);
        let _ = writeln!(out, "cluster_separation = {:?}", d.cluster_separation);
        let _ = writeln!(out, "cluster_stddev = {:?}", d.cluster_stddev);
        let _ = writeln!(out, "tasks = {}", s.tasks);
        let _ = writeln!(out, "w = {}", s.w);
        let _ = writeln!(out, "q = {:?}", s.q);
        let _ = writeln!(out, "flip_mode = {}", s.flip_mode);
        let _ = writeln!(out, "seed = {}", d.seed);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PgdrConfig::parse("").unwrap();
        assert_eq!(c, PgdrConfig::default());
        assert_eq!(c.epochs, 30);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.sgd_momentum, 0.9);
        assert_eq!(c.memory.budget, 2000);
    }

    #[test]
    fn canonical_form_round_trips_and_covers_every_key() {
        let mut c = PgdrConfig {
            variant: VariantTag::NoKd,
            lr: 0.1 + 0.2,
            ..Default::default()
        };
        c.separation.beta_end = 0.55;
        c.freeze_memory_labels = true;
        let text = c.to_string();
        assert_eq!(PgdrConfig::parse(&text).unwrap(), c);
        let keys: Vec<&str> = text
            .lines()
            .map(|l| l.split(" = ").next().unwrap())
            .collect();
        let documented: Vec<&str> = CONFIG_KEYS.iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, documented);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(matches!(
            PgdrConfig::parse("epochs = 3\nlearning_rate = 0.1"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(PgdrConfig::parse("epochs = 3\nepochs = 4").is_err());
        assert!(PgdrConfig::parse("epochs 3").is_err());
        assert!(PgdrConfig::parse("epochs = three").is_err());
        assert!(PgdrConfig::parse("variant = PGDR_PLUS").is_err());
        assert!(PgdrConfig::parse("alpha = 1.5").is_err());
        assert!(PgdrConfig::parse("freeze_memory_labels = yes").is_err());
    }

    #[test]
    fn comments_and_spacing() {
        let c = PgdrConfig::parse("# desk run\n\n  epochs=5  \nvariant = NO_MEMORY\n").unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.variant, VariantTag::NoMemory);
    }

    #[test]
    fn seed_override() {
        let c = PgdrConfig::default()
            .with_seed_override(Some("99"))
            .unwrap();
        assert_eq!(c.seed, 99);
        assert_eq!(
            PgdrConfig::default().with_seed_override(None).unwrap().seed,
            7
        );
        assert!(PgdrConfig::default()
            .with_seed_override(Some("-1"))
            .is_err());
    }

    #[test]
    fn gen_spec_round_trip() {
        let g = GenSpec::parse("num_classes = 6\ntasks = 3\nw = 70\nseed = 11\nq = 0.1\n").unwrap();
        assert_eq!(g.dataset.num_classes, 6);
        assert_eq!(g.dataset.seed, 11);
        assert_eq!(g.stream.seed, 11);
        assert_eq!(GenSpec::parse(&g.to_text()).unwrap(), g);
        assert!(GenSpec::parse("tasks = 20").is_err());
        assert!(GenSpec::parse("colour = red").is_err());
    }
}
