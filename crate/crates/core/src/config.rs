//! Run configuration with flat `key = value` overrides.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::augment::{FillMode, GeoAugConfig, PkSpec, RandomErasingConfig};
use crate::error::{Error, Result};
use crate::kv;
use crate::losses::{LossConfig, MseMode};
use crate::model::SgdConfig;
use crate::sampling::{BankOrder, SamplingConfig};

/// Shipped configuration for the synthetic benchmark.
pub const SYNTHETIC_CONFIG_TEXT: &str = include_str!("../../../configs/synthetic.cfg");

/// Which training components are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AblationConfig {
    pub pixel_sampling: bool,
    pub mse: bool,
    pub random_erasing: bool,
}

impl AblationConfig {
    pub const BASELINE: Self = Self::new(false, false, false);
    pub const PS: Self = Self::new(true, false, false);
    pub const PS_MSE: Self = Self::new(true, true, false);
    pub const PS_MSE_RE: Self = Self::new(true, true, true);

    pub const fn new(pixel_sampling: bool, mse: bool, random_erasing: bool) -> Self {
        Self {
            pixel_sampling,
            mse,
            random_erasing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mse && !self.pixel_sampling {
            return Err(Error::Config(
                "the consistency loss needs generated samples: mse requires pixel_sampling".into(),
            ));
        }
        Ok(())
    }

    /// Row label used for result files.
    pub fn row_name(&self) -> String {
        let mut s = String::from("baseline");
        if self.pixel_sampling {
            s.push_str("+ps");
        }
        if self.mse {
            s.push_str("+mse");
        }
        if self.random_erasing {
            s.push_str("+re");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: vec![8, 16, 32],
            embed_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub ablation: AblationConfig,
    pub pk: PkSpec,
    pub geo: GeoAugConfig,
    pub erasing: RandomErasingConfig,
    pub sampling: SamplingConfig,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub sgd: SgdConfig,
    pub steps: usize,
    pub seed: u64,
    /// Evaluate every this many steps (0: only at the end).
    pub eval_every: usize,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            ablation: AblationConfig::PS_MSE,
            pk: PkSpec::default(),
            geo: GeoAugConfig::default(),
            erasing: RandomErasingConfig::default(),
            sampling: SamplingConfig::default(),
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            sgd: SgdConfig::default(),
            steps: 1000,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// The shipped synthetic-benchmark configuration.
    pub fn synthetic() -> Self {
        let mut cfg = Self::default();
        cfg.apply_text(SYNTHETIC_CONFIG_TEXT, Path::new("<synthetic.cfg>"))
            .expect("shipped config is valid");
        cfg
    }

    pub const KEYS: [&'static str; 34] = [
        "seed",
        "steps",
        "eval_every",
        "checkpoint_every",
        "ablation.pixel_sampling",
        "ablation.mse",
        "ablation.random_erasing",
        "pk.identities",
        "pk.instances",
        "geo.height",
        "geo.width",
        "geo.padding",
        "geo.flip_prob",
        "erase.probability",
        "erase.area_min",
        "erase.area_max",
        "erase.aspect_min",
        "erase.aspect_max",
        "erase.fill",
        "sampling.swap_upper",
        "sampling.swap_pants",
        "sampling.independent_permutations",
        "sampling.bank_order",
        "loss.margin",
        "loss.mse_mode",
        "model.widths",
        "model.embed_dim",
        "sgd.lr",
        "sgd.momentum",
        "sgd.weight_decay",
        "sgd.milestones",
        "sgd.gamma",
        "sgd.warmup",
        "erase.max_attempts",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "ablation.pixel_sampling" => self.ablation.pixel_sampling = parse(key, v)?,
            "ablation.mse" => self.ablation.mse = parse(key, v)?,
            "ablation.random_erasing" => self.ablation.random_erasing = parse(key, v)?,
            "pk.identities" => self.pk.identities = parse(key, v)?,
            "pk.instances" => self.pk.instances = parse(key, v)?,
            "geo.height" => self.geo.height = parse(key, v)?,
            "geo.width" => self.geo.width = parse(key, v)?,
            "geo.padding" => self.geo.padding = parse(key, v)?,
            "geo.flip_prob" => self.geo.flip_prob = parse(key, v)?,
            "erase.probability" => self.erasing.probability = parse(key, v)?,
            "erase.area_min" => self.erasing.area_min = parse(key, v)?,
            "erase.area_max" => self.erasing.area_max = parse(key, v)?,
            "erase.aspect_min" => self.erasing.aspect_min = parse(key, v)?,
            "erase.aspect_max" => self.erasing.aspect_max = parse(key, v)?,
            "erase.max_attempts" => self.erasing.max_attempts = parse(key, v)?,
            "erase.fill" => {
                self.erasing.fill = match v {
                    "random" => FillMode::Random,
                    other => match other.strip_prefix("constant:") {
                        Some(byte) => FillMode::Constant(parse(key, byte)?),
                        None => {
                            return Err(Error::Config(format!(
                                "erase.fill must be `random` or `constant:<0-255>`, got {other:?}"
                            )))
                        }
                    },
                }
            }
            "sampling.swap_upper" => self.sampling.swap_upper = parse(key, v)?,
            "sampling.swap_pants" => self.sampling.swap_pants = parse(key, v)?,
            "sampling.independent_permutations" => self.sampling.independent_permutations = parse(key, v)?,
            "sampling.bank_order" => self.sampling.bank_order = v.parse::<BankOrder>()?,
            "loss.margin" => self.loss.margin = parse(key, v)?,
            "loss.mse_mode" => self.loss.mse_mode = v.parse::<MseMode>()?,
            "model.widths" => self.model.widths = parse_list(key, v)?,
            "model.embed_dim" => self.model.embed_dim = parse(key, v)?,
            "sgd.lr" => self.sgd.base_lr = parse(key, v)?,
            "sgd.momentum" => self.sgd.momentum = parse(key, v)?,
            "sgd.weight_decay" => self.sgd.weight_decay = parse(key, v)?,
            "sgd.milestones" => self.sgd.milestones = parse_list(key, v)?,
            "sgd.gamma" => self.sgd.gamma = parse(key, v)?,
            "sgd.warmup" => self.sgd.warmup = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file body.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for e in kv::parse(text, path)? {
            self.set(&e.key, &e.value)
                .map_err(|err| Error::Config(format!("{} line {}: {err}", path.display(), e.line)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.ablation.validate()?;
        self.pk.validate(None)?;
        self.geo.validate()?;
        self.erasing.validate()?;
        if self.ablation.pixel_sampling {
            self.sampling.validate()?;
        }
        self.loss.validate()?;
        self.sgd.validate()?;
        if self.pk.instances < 2 && !self.ablation.pixel_sampling {
            return Err(Error::Config(
                "triplet loss needs a positive per anchor: use K >= 2 or enable pixel sampling".into(),
            ));
        }
        if self.pk.identities < 2 {
            return Err(Error::Config("triplet loss needs at least two identities per batch".into()));
        }
        Ok(())
    }

    /// Resolved configuration, one `key = value` per line, in [`Self::KEYS`] order.
    pub fn to_kv_string(&self) -> String {
        let fill = match self.erasing.fill {
            FillMode::Random => "random".to_string(),
            FillMode::Constant(v) => format!("constant:{v}"),
        };
        let values: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("steps", self.steps.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("ablation.pixel_sampling", self.ablation.pixel_sampling.to_string()),
            ("ablation.mse", self.ablation.mse.to_string()),
            ("ablation.random_erasing", self.ablation.random_erasing.to_string()),
            ("pk.identities", self.pk.identities.to_string()),
            ("pk.instances", self.pk.instances.to_string()),
            ("geo.height", self.geo.height.to_string()),
            ("geo.width", self.geo.width.to_string()),
            ("geo.padding", self.geo.padding.to_string()),
            ("geo.flip_prob", self.geo.flip_prob.to_string()),
            ("erase.probability", self.erasing.probability.to_string()),
            ("erase.area_min", self.erasing.area_min.to_string()),
            ("erase.area_max", self.erasing.area_max.to_string()),
            ("erase.aspect_min", self.erasing.aspect_min.to_string()),
            ("erase.aspect_max", self.erasing.aspect_max.to_string()),
            ("erase.fill", fill),
            ("sampling.swap_upper", self.sampling.swap_upper.to_string()),
            ("sampling.swap_pants", self.sampling.swap_pants.to_string()),
            (
                "sampling.independent_permutations",
                self.sampling.independent_permutations.to_string(),
            ),
            (
                "sampling.bank_order",
                match self.sampling.bank_order {
                    BankOrder::Raster => "raster".into(),
                    BankOrder::Shuffled => "shuffled".into(),
                },
            ),
            ("loss.margin", self.loss.margin.to_string()),
            (
                "loss.mse_mode",
                match self.loss.mse_mode {
                    MseMode::L2Norm => "l2_norm".into(),
                    MseMode::SquaredL2 => "squared_l2".into(),
                },
            ),
            ("model.widths", join(&self.model.widths)),
            ("model.embed_dim", self.model.embed_dim.to_string()),
            ("sgd.lr", self.sgd.base_lr.to_string()),
            ("sgd.momentum", self.sgd.momentum.to_string()),
            ("sgd.weight_decay", self.sgd.weight_decay.to_string()),
            ("sgd.milestones", join(&self.sgd.milestones)),
            ("sgd.gamma", self.sgd.gamma.to_string()),
            ("sgd.warmup", self.sgd.warmup.to_string()),
            ("erase.max_attempts", self.erasing.max_attempts.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
