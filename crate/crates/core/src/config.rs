//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! rejected. [`RunConfig::documented`] renders every key with its default.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{AugmentPolicy, ChannelStats, Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::masks::{Granularity, PrunableOptions, Scope};
use crate::models::LeNetVariant;
use crate::schedule::Schedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PruneMode {
    Random,
    AntiRandomPairs,
    AntiRandomPartition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Parent, masked children, tuning.
    Pat,
    /// One model trained for the whole budget.
    Independent,
    /// `n` models trained from scratch on subsets, budget split evenly.
    Bagged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParentScheduleKind {
    Constant,
    StepLinear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TuneScheduleKind {
    Constant,
    OneCycle,
}

macro_rules! keyword_enum {
    ($ty:ident { $($var:ident => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$var),)+
                    _ => Err(Error::Config(format!(
                        "unknown {} '{s}' (expected one of: {})",
                        stringify!($ty),
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(OptimizerKind { Sgd => "sgd", Adam => "adam" });
keyword_enum!(PruneMode {
    Random => "random",
    AntiRandomPairs => "anti-random-pairs",
    AntiRandomPartition => "anti-random-partition",
});
keyword_enum!(Method { Pat => "pat", Independent => "independent", Bagged => "bagged" });
keyword_enum!(ParentScheduleKind { Constant => "constant", StepLinear => "step-linear" });
keyword_enum!(TuneScheduleKind { Constant => "constant", OneCycle => "one-cycle" });

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: LeNetVariant,
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub train_subset: usize,
    pub test_subset: usize,
    pub seed: u64,
    pub method: Method,
    pub parent_epochs: usize,
    pub num_children: usize,
    pub child_epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub parent_schedule: ParentScheduleKind,
    pub parent_lr: f64,
    pub parent_lr_high: f64,
    pub parent_lr_low: f64,
    pub prune_mode: PruneMode,
    pub sparsity: f64,
    pub scope: Scope,
    pub granularity: Granularity,
    pub prune_output_layer: bool,
    pub prune_biases: bool,
    pub tune_schedule: TuneScheduleKind,
    pub tune_lr: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub lr_final: f64,
    pub warmup_frac: f64,
    pub bagging: f64,
    pub bagging_replacement: bool,
    pub bagged_fraction: f64,
    pub augment_crop: bool,
    pub augment_flip: bool,
    pub normalize: bool,
    pub workers: usize,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: LeNetVariant::L,
            dataset: DatasetKind::Cifar10,
            data_dir: PathBuf::from("data/cifar10"),
            train_subset: 0,
            test_subset: 0,
            seed: 0,
            method: Method::Pat,
            parent_epochs: 8,
            num_children: 8,
            child_epochs: 1,
            batch_size: 128,
            eval_batch_size: 500,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            weight_decay: 5e-4,
            parent_schedule: ParentScheduleKind::Constant,
            parent_lr: 1e-3,
            parent_lr_high: 0.1,
            parent_lr_low: 1e-3,
            prune_mode: PruneMode::Random,
            sparsity: 0.5,
            scope: Scope::Global,
            granularity: Granularity::Connection,
            prune_output_layer: false,
            prune_biases: false,
            tune_schedule: TuneScheduleKind::Constant,
            tune_lr: 1e-3,
            lr_min: 1e-3,
            lr_max: 0.1,
            lr_final: 1e-7,
            warmup_frac: 0.1,
            bagging: 0.0,
            bagging_replacement: false,
            bagged_fraction: 0.9,
            augment_crop: false,
            augment_flip: false,
            normalize: false,
            workers: 1,
            report: None,
        }
    }
}

/// `(key, description)` for every accepted key, in file order.
pub const KEYS: &[(&str, &str)] = &[
    ("model", "lenet-s | lenet-m | lenet-l"),
    ("dataset", "cifar10 | cifar100 | mnist"),
    ("data_dir", "directory holding the dataset files"),
    ("train_subset", "use only the first N training samples (0 = all)"),
    ("test_subset", "use only the first N test samples (0 = all)"),
    ("seed", "run seed; every random stream derives from it"),
    ("method", "pat | independent | bagged"),
    ("parent_epochs", "epochs of parent training"),
    ("num_children", "ensemble size (children, or bagged members)"),
    ("child_epochs", "tuning epochs per child"),
    ("batch_size", "training mini-batch size"),
    ("eval_batch_size", "batch size for evaluation passes"),
    ("optimizer", "adam | sgd (Nesterov)"),
    ("momentum", "SGD momentum"),
    ("weight_decay", "SGD weight decay on weights (biases exempt)"),
    ("parent_schedule", "constant | step-linear"),
    ("parent_lr", "parent learning rate for the constant schedule"),
    ("parent_lr_high", "step-linear rate for the first half"),
    ("parent_lr_low", "step-linear rate from 90% of training on"),
    ("prune_mode", "random | anti-random-pairs | anti-random-partition"),
    ("sparsity", "fraction of prunable parameters removed per child"),
    ("scope", "global | layerwise"),
    ("granularity", "connection | neuron"),
    ("prune_output_layer", "include the output layer's weights in the prunable set"),
    ("prune_biases", "include biases in the prunable set"),
    ("tune_schedule", "constant | one-cycle"),
    ("tune_lr", "child learning rate for the constant schedule"),
    ("lr_min", "one-cycle starting rate"),
    ("lr_max", "one-cycle peak rate"),
    ("lr_final", "one-cycle terminal rate"),
    ("warmup_frac", "one-cycle warmup fraction of the tuning iterations"),
    ("bagging", "per-child training fraction for pat (0 = off)"),
    ("bagging_replacement", "draw bagging subsets with replacement"),
    ("bagged_fraction", "training fraction per member of the bagged baseline"),
    ("augment_crop", "random 4 px padded crop during training"),
    ("augment_flip", "random horizontal flip during training"),
    ("normalize", "per-channel standardisation with training-split statistics"),
    ("workers", "threads used to tune children"),
    ("report", "JSON-lines report path (empty = none)"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for {key}"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "model" => self.model = v.parse()?,
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "train_subset" => self.train_subset = parse(key, v)?,
            "test_subset" => self.test_subset = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "method" => self.method = v.parse()?,
            "parent_epochs" => self.parent_epochs = parse(key, v)?,
            "num_children" => self.num_children = parse(key, v)?,
            "child_epochs" => self.child_epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "eval_batch_size" => self.eval_batch_size = parse(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "parent_schedule" => self.parent_schedule = v.parse()?,
            "parent_lr" => self.parent_lr = parse(key, v)?,
            "parent_lr_high" => self.parent_lr_high = parse(key, v)?,
            "parent_lr_low" => self.parent_lr_low = parse(key, v)?,
            "prune_mode" => self.prune_mode = v.parse()?,
            "sparsity" => self.sparsity = parse(key, v)?,
            "scope" => self.scope = v.parse()?,
            "granularity" => self.granularity = v.parse()?,
            "prune_output_layer" => self.prune_output_layer = parse_bool(key, v)?,
            "prune_biases" => self.prune_biases = parse_bool(key, v)?,
            "tune_schedule" => self.tune_schedule = v.parse()?,
            "tune_lr" => self.tune_lr = parse(key, v)?,
            "lr_min" => self.lr_min = parse(key, v)?,
            "lr_max" => self.lr_max = parse(key, v)?,
            "lr_final" => self.lr_final = parse(key, v)?,
            "warmup_frac" => self.warmup_frac = parse(key, v)?,
            "bagging" => self.bagging = parse(key, v)?,
            "bagging_replacement" => self.bagging_replacement = parse_bool(key, v)?,
            "bagged_fraction" => self.bagged_fraction = parse(key, v)?,
            "augment_crop" => self.augment_crop = parse_bool(key, v)?,
            "augment_flip" => self.augment_flip = parse_bool(key, v)?,
            "normalize" => self.normalize = parse_bool(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "report" => self.report = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k, v)
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key '{k}'", n + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.num_children == 0 {
            return bad("num_children must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return bad(format!("sparsity must lie in [0, 1), got {}", self.sparsity));
        }
        if !(0.0..=1.0).contains(&self.bagging) {
            return bad(format!("bagging must lie in [0, 1], got {}", self.bagging));
        }
        if !(self.bagged_fraction > 0.0 && self.bagged_fraction <= 1.0) {
            return bad(format!("bagged_fraction must lie in (0, 1], got {}", self.bagged_fraction));
        }
        if self.prune_mode == PruneMode::AntiRandomPairs
            && (!self.num_children.is_multiple_of(2) || self.sparsity != 0.5)
        {
            return bad("anti-random-pairs needs an even num_children and sparsity 0.5".into());
        }
        if self.method == Method::Bagged && self.total_epochs() < self.num_children {
            return bad(format!(
                "a {}-epoch budget cannot give each of {} bagged members an epoch",
                self.total_epochs(),
                self.num_children
            ));
        }
        self.parent_schedule()?.validate()?;
        self.tune_schedule()?.validate()?;
        Ok(())
    }

    /// Total budget in epochs: parent plus every child's tuning.
    pub fn total_epochs(&self) -> usize {
        self.parent_epochs + self.num_children * self.child_epochs
    }

    pub fn parent_schedule(&self) -> Result<Schedule> {
        Ok(match self.parent_schedule {
            ParentScheduleKind::Constant => Schedule::Constant { lr: self.parent_lr },
            ParentScheduleKind::StepLinear => Schedule::StepLinear {
                lr_high: self.parent_lr_high,
                lr_low: self.parent_lr_low,
            },
        })
    }

    pub fn tune_schedule(&self) -> Result<Schedule> {
        Ok(match self.tune_schedule {
            TuneScheduleKind::Constant => Schedule::Constant { lr: self.tune_lr },
            TuneScheduleKind::OneCycle => Schedule::OneCycle {
                lr_min: self.lr_min,
                lr_max: self.lr_max,
                lr_final: self.lr_final,
                warmup: self.warmup_frac,
            },
        })
    }

    pub fn prunable_options(&self) -> PrunableOptions {
        PrunableOptions {
            include_output_layer: self.prune_output_layer,
            include_biases: self.prune_biases,
        }
    }

    /// Training-time augmentation; normalisation statistics come from `train`.
    pub fn augment_policy(&self, train: &Dataset) -> AugmentPolicy {
        AugmentPolicy {
            crop_pad: if self.augment_crop { 4 } else { 0 },
            hflip: self.augment_flip,
            normalize: self.normalize.then(|| ChannelStats::from_dataset(train)),
        }
    }

    /// Loads the configured dataset and trims it to the configured subsets.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = self.dataset.load(&self.data_dir)?;
        let trim = |d: Dataset, n: usize| if n == 0 { d } else { d.head(n) };
        Ok((trim(train, self.train_subset), trim(test, self.test_subset)))
    }

    /// Every key with its current value and description.
    pub fn documented(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            out.push_str(&format!("# {doc}\n{key} = {}\n", self.value_of(key)));
        }
        out
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "model" => self.model.to_string(),
            "dataset" => self.dataset.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "train_subset" => self.train_subset.to_string(),
            "test_subset" => self.test_subset.to_string(),
            "seed" => self.seed.to_string(),
            "method" => self.method.to_string(),
            "parent_epochs" => self.parent_epochs.to_string(),
            "num_children" => self.num_children.to_string(),
            "child_epochs" => self.child_epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "eval_batch_size" => self.eval_batch_size.to_string(),
            "optimizer" => self.optimizer.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "parent_schedule" => self.parent_schedule.to_string(),
            "parent_lr" => self.parent_lr.to_string(),
            "parent_lr_high" => self.parent_lr_high.to_string(),
            "parent_lr_low" => self.parent_lr_low.to_string(),
            "prune_mode" => self.prune_mode.to_string(),
            "sparsity" => self.sparsity.to_string(),
            "scope" => self.scope.to_string(),
            "granularity" => self.granularity.to_string(),
            "prune_output_layer" => self.prune_output_layer.to_string(),
            "prune_biases" => self.prune_biases.to_string(),
            "tune_schedule" => self.tune_schedule.to_string(),
            "tune_lr" => self.tune_lr.to_string(),
            "lr_min" => self.lr_min.to_string(),
            "lr_max" => self.lr_max.to_string(),
            "lr_final" => self.lr_final.to_string(),
            "warmup_frac" => self.warmup_frac.to_string(),
            "bagging" => self.bagging.to_string(),
            "bagging_replacement" => self.bagging_replacement.to_string(),
            "bagged_fraction" => self.bagged_fraction.to_string(),
            "augment_crop" => self.augment_crop.to_string(),
            "augment_flip" => self.augment_flip.to_string(),
            "normalize" => self.normalize.to_string(),
            "workers" => self.workers.to_string(),
            "report" => self
                .report
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            _ => unreachable!("KEYS lists only known keys"),
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_text(s)
    }
}
