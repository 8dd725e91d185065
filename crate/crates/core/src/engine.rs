//! Parent training, child spawning and tuning, ensemble prediction, and the
//! experiment / ablation runners.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::bitset::BitSet;
use crate::config::{Method, OptimizerKind, PruneMode, RunConfig};
use crate::data::{augment, bootstrap_indices, AugmentPolicy, Dataset, MaskRecord};
use crate::error::{Error, Result};
use crate::masks::{self, Granularity, PrunableOptions, PrunableSet, Scope};
use crate::metrics::{self, Diversity, PredictionSet};
use crate::models::build_lenet;
use crate::nn::{softmax, NetworkGraph};
use crate::optim::{AdamState, Optimizer, SgdState};
use crate::schedule::Schedule;
use crate::seed::{self, derive_seed, Stream};
use crate::tensor::Tensor;

/// How one network is trained for one phase.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub augment: AugmentPolicy,
}

impl TrainSpec {
    /// ADAM at a constant rate, no augmentation.
    pub fn adam(epochs: usize, batch_size: usize, lr: f64) -> Self {
        TrainSpec {
            epochs,
            batch_size,
            optimizer: OptimizerKind::Adam,
            momentum: SgdState::DEFAULT_MOMENTUM as f64,
            weight_decay: SgdState::DEFAULT_WEIGHT_DECAY as f64,
            schedule: Schedule::Constant { lr },
            augment: AugmentPolicy::none(),
        }
    }

    fn optimizer_for(&self, net: &NetworkGraph<f32>) -> Optimizer {
        let layout = std::sync::Arc::clone(net.params().layout());
        match self.optimizer {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(layout)),
            OptimizerKind::Sgd => Optimizer::Sgd(SgdState::new(
                layout,
                self.momentum as f32,
                self.weight_decay as f32,
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub last_lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub samples: usize,
    pub wall_time: f64,
}

/// Shuffled mini-batch training over `subset` (all samples when `None`).
///
/// With a keep map, pruned parameters are zeroed before the first step and
/// stay zero. The learning rate is queried once per batch.
pub fn train(
    net: &mut NetworkGraph<f32>,
    data: &Dataset,
    subset: Option<&[usize]>,
    spec: &TrainSpec,
    keep: Option<&BitSet>,
    seed: u64,
) -> Result<TrainLog> {
    let start = Instant::now();
    let mut order: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..data.len()).collect(),
    };
    if order.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if spec.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if net.num_outputs() != data.num_classes() {
        return Err(Error::Structure(format!(
            "network has {} outputs, dataset has {} classes",
            net.num_outputs(),
            data.num_classes()
        )));
    }
    if let Some(k) = keep {
        if k.len() != net.param_count() {
            return Err(Error::Structure(format!(
                "keep map has {} flags for {} parameters",
                k.len(),
                net.param_count()
            )));
        }
        masks::zero_pruned(net.params_mut().values_mut(), k);
    }
    let mut log = TrainLog {
        samples: order.len(),
        ..TrainLog::default()
    };
    if spec.epochs == 0 {
        return Ok(log);
    }
    let mut opt = spec.optimizer_for(net);
    let mut rng = seed::rng(seed);
    let per_epoch = order.len().div_ceil(spec.batch_size);
    let total = spec.epochs * per_epoch;
    let mut step = 0usize;
    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for idx in order.chunks(spec.batch_size) {
            let (mut x, y) = data.batch(idx)?;
            augment(&mut x, derive_seed(seed, Stream::Augment, step as u64), &spec.augment)?;
            let (loss, grads) = net.backward(&x, &y)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, step {step}"
                )));
            }
            lr = spec.schedule.lr(step, total);
            opt.step(net.params_mut(), &grads, keep, lr)?;
            loss_sum += loss * idx.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / order.len() as f64;
        log::debug!("epoch {epoch}: loss {train_loss:.5}, lr {lr:.3e}");
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            last_lr: lr,
        });
    }
    if !net.params().values().iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("parameters became non-finite".into()));
    }
    log.wall_time = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Trains the parent on the full training set.
pub fn train_parent(
    net: &mut NetworkGraph<f32>,
    data: &Dataset,
    spec: &TrainSpec,
    run_seed: u64,
) -> Result<TrainLog> {
    if spec.epochs == 0 {
        return Err(Error::InvalidArgument("parent training needs at least one epoch".into()));
    }
    train(net, data, None, spec, None, derive_seed(run_seed, Stream::ParentShuffle, 0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneSpec {
    pub mode: PruneMode,
    pub n: usize,
    pub sparsity: f64,
    pub scope: Scope,
    pub granularity: Granularity,
    pub options: PrunableOptions,
}

impl PruneSpec {
    pub fn random(n: usize, sparsity: f64) -> Self {
        PruneSpec {
            mode: PruneMode::Random,
            n,
            sparsity,
            scope: Scope::Global,
            granularity: Granularity::Connection,
            options: PrunableOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Child {
    pub id: usize,
    pub mask: MaskRecord,
    pub net: NetworkGraph<f32>,
    pub log: Option<TrainLog>,
}

impl Child {
    pub fn keep_flags(&self) -> Result<BitSet> {
        self.mask.keep_flags(&self.net)
    }
}

/// Clones the parent `n` times and prunes each copy. Mask `i` draws from the
/// mask stream at index `i` (pairs mode: pair `j` draws at index `j` and the
/// odd child takes the complement).
pub fn spawn_children(parent: &NetworkGraph<f32>, spec: &PruneSpec, run_seed: u64) -> Result<Vec<Child>> {
    if spec.n == 0 {
        return Err(Error::InvalidArgument("need at least one child".into()));
    }
    let prunable = PrunableSet::new(parent, spec.options);
    let mask_seed = |i: usize| derive_seed(run_seed, Stream::Mask, i as u64);
    let masks = match spec.mode {
        PruneMode::Random => (0..spec.n)
            .map(|i| masks::random_mask(mask_seed(i), &prunable, spec.sparsity, spec.scope, spec.granularity))
            .collect::<Result<Vec<_>>>()?,
        PruneMode::AntiRandomPairs => {
            if !spec.n.is_multiple_of(2) || spec.sparsity != 0.5 {
                return Err(Error::InvalidArgument(format!(
                    "anti-random pairs need an even child count and sparsity 0.5 (got n={}, sparsity={})",
                    spec.n, spec.sparsity
                )));
            }
            let mut out = Vec::with_capacity(spec.n);
            for j in 0..spec.n / 2 {
                let m = masks::random_mask(mask_seed(j), &prunable, 0.5, spec.scope, spec.granularity)?;
                let anti = masks::complement(&m);
                out.push(m);
                out.push(anti);
            }
            out
        }
        PruneMode::AntiRandomPartition => {
            if spec.granularity != Granularity::Connection {
                return Err(Error::InvalidArgument(
                    "anti-random partitions are defined over connections only".into(),
                ));
            }
            masks::partition(mask_seed(0), &prunable, spec.n)?
        }
    };
    masks
        .into_iter()
        .enumerate()
        .map(|(id, mask)| {
            let net = masks::apply_mask(parent, &prunable, &mask)?;
            Ok(Child {
                id,
                mask: MaskRecord {
                    mask,
                    options: spec.options,
                },
                net,
                log: None,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneSpec {
    pub train: TrainSpec,
    /// Fraction of the training set drawn per child; `None` uses all of it.
    pub bagging: Option<f64>,
    pub with_replacement: bool,
}

/// Tunes one child under its mask. Batch order and bagging subset come from
/// streams indexed by the child id.
pub fn tune_child(child: &mut Child, data: &Dataset, spec: &TuneSpec, run_seed: u64) -> Result<()> {
    if spec.train.epochs == 0 {
        return Ok(());
    }
    let subset = match spec.bagging {
        Some(f) => Some(bootstrap_indices(
            data.len(),
            f,
            derive_seed(run_seed, Stream::Bagging, child.id as u64),
            spec.with_replacement,
        )?),
        None => None,
    };
    let keep = child.keep_flags()?;
    let log = train(
        &mut child.net,
        data,
        subset.as_deref(),
        &spec.train,
        Some(&keep),
        derive_seed(run_seed, Stream::ChildShuffle, child.id as u64),
    )?;
    log::info!(
        "child {} tuned: loss {:.4}, {:.1}s",
        child.id,
        log.epochs.last().map_or(f64::NAN, |e| e.train_loss),
        log.wall_time
    );
    child.log = Some(log);
    Ok(())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {workers} workers: {e}")))
}

/// Tunes all children on `workers` threads. Results do not depend on the
/// worker count or scheduling order.
pub fn tune_children(
    children: &mut [Child],
    data: &Dataset,
    spec: &TuneSpec,
    run_seed: u64,
    workers: usize,
) -> Result<()> {
    if workers <= 1 {
        return children.iter_mut().try_for_each(|c| tune_child(c, data, spec, run_seed));
    }
    pool(workers)?.install(|| {
        children
            .par_iter_mut()
            .try_for_each(|c| tune_child(c, data, spec, run_seed))
    })
}

#[derive(Clone, Debug)]
pub struct EnsembleState {
    pub parent: NetworkGraph<f32>,
    pub parent_log: Option<TrainLog>,
    pub children: Vec<Child>,
}

impl EnsembleState {
    pub fn size(&self) -> usize {
        self.children.len()
    }

    pub fn members(&self) -> Vec<&NetworkGraph<f32>> {
        self.children.iter().map(|c| &c.net).collect()
    }
}

/// Budget in epochs: `parent + children × child_epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BudgetSplit {
    pub parent_epochs: usize,
    pub child_epochs: usize,
    pub num_children: usize,
}

impl BudgetSplit {
    pub fn new(parent_epochs: usize, child_epochs: usize, num_children: usize) -> Result<Self> {
        if parent_epochs == 0 || num_children == 0 {
            return Err(Error::InvalidArgument(
                "budget needs at least one parent epoch and one child".into(),
            ));
        }
        Ok(BudgetSplit {
            parent_epochs,
            child_epochs,
            num_children,
        })
    }

    pub fn total(&self) -> usize {
        self.parent_epochs + self.num_children * self.child_epochs
    }
}

/// Softmax probabilities (in `f64`) of `net` on every sample of `data`.
pub fn predict_probs(
    net: &NetworkGraph<f32>,
    data: &Dataset,
    transform: &AugmentPolicy,
    batch_size: usize,
) -> Result<PredictionSet> {
    let k = net.num_outputs();
    if k != data.num_classes() {
        return Err(Error::Structure(format!(
            "network has {k} outputs, dataset has {} classes",
            data.num_classes()
        )));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let mut probs = Vec::with_capacity(data.len() * k);
    for idx in all.chunks(batch_size.max(1)) {
        let (mut x, _) = data.batch(idx)?;
        augment(&mut x, 0, transform)?;
        let logits = net.forward(&x)?;
        if !logits.all_finite() {
            return Err(Error::Numeric("non-finite logits during evaluation".into()));
        }
        probs.extend_from_slice(softmax(&logits.cast::<f64>())?.data());
    }
    PredictionSet::new(probs, data.labels().to_vec(), k)
}

/// Member-wise mean of probability rows, summed in member order.
pub fn average_predictions(sets: &[&PredictionSet]) -> Result<PredictionSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::InvalidArgument("ensemble has no members".into()))?;
    let mut sum = vec![0.0f64; first.probs().len()];
    for s in sets {
        if s.len() != first.len() || s.classes() != first.classes() || s.labels() != first.labels() {
            return Err(Error::Shape("ensemble members predict different shapes".into()));
        }
        for (a, b) in sum.iter_mut().zip(s.probs()) {
            *a += b;
        }
    }
    let n = sets.len() as f64;
    for v in &mut sum {
        *v /= n;
    }
    PredictionSet::new(sum, first.labels().to_vec(), first.classes())
}

/// Averaged member softmax on one batch and its per-sample argmax (ties go
/// to the lowest class).
pub fn predict_ensemble(members: &[&NetworkGraph<f32>], batch: &Tensor<f32>) -> Result<(Vec<usize>, Tensor<f64>)> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("ensemble has no members".into()));
    }
    let mut acc: Option<Tensor<f64>> = None;
    for m in members {
        let p = softmax(&m.forward(batch)?.cast::<f64>())?;
        match &mut acc {
            None => acc = Some(p),
            Some(a) => {
                if a.shape() != p.shape() {
                    return Err(Error::Shape(format!(
                        "member outputs differ: {:?} vs {:?}",
                        a.shape(),
                        p.shape()
                    )));
                }
                for (x, y) in a.data_mut().iter_mut().zip(p.data()) {
                    *x += y;
                }
            }
        }
    }
    let mut probs = acc.expect("at least one member");
    let n = members.len() as f64;
    for v in probs.data_mut() {
        *v /= n;
    }
    let k = probs.shape()[1];
    let labels = probs.data().chunks_exact(k).map(metrics::argmax).collect();
    Ok((labels, probs))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
}

impl EvalMetrics {
    pub fn of(p: &PredictionSet) -> Result<Self> {
        Ok(EvalMetrics {
            accuracy: metrics::accuracy(p),
            nll: metrics::nll(p),
            ece: metrics::ece(p, metrics::DEFAULT_ECE_BINS)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiversitySummary {
    pub d_corr: f64,
    pub d_dis: f64,
    pub d_kl: f64,
}

impl DiversitySummary {
    /// Mean pairwise measures; `None` for fewer than two members.
    pub fn of(members: &[PredictionSet]) -> Result<Option<Self>> {
        if members.len() < 2 {
            return Ok(None);
        }
        let mean = |m| metrics::pairwise_matrix(members, m).map(|x| x.mean);
        Ok(Some(DiversitySummary {
            d_corr: mean(Diversity::Corr)?,
            d_dis: mean(Diversity::Dis)?,
            d_kl: mean(Diversity::Kl)?,
        }))
    }
}

/// One line of a JSON-lines report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record {
    pub phase: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub member_id: Option<usize>,
    pub seed: u64,
    pub accuracy: f64,
    pub nll: f64,
    pub ece: f64,
    pub wall_time: f64,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Record {
    pub fn new(phase: &str, member_id: Option<usize>, seed: u64, m: EvalMetrics, wall_time: f64) -> Self {
        Record {
            phase: phase.to_string(),
            member_id,
            seed,
            accuracy: m.accuracy,
            nll: m.nll,
            ece: m.ece,
            wall_time,
            extra: serde_json::Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.extra.insert(
            key.to_string(),
            serde_json::to_value(value).expect("report values serialise"),
        );
        self
    }

    pub fn metrics(&self) -> EvalMetrics {
        EvalMetrics {
            accuracy: self.accuracy,
            nll: self.nll,
            ece: self.ece,
        }
    }
}

/// Collects records and appends each to an optional JSON-lines file as it
/// arrives.
#[derive(Debug, Default)]
pub struct Report {
    pub records: Vec<Record>,
    sink: Option<(std::path::PathBuf, BufWriter<File>)>,
}

impl Report {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> Result<Self> {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Report {
            records: Vec::new(),
            sink: Some((path.to_path_buf(), BufWriter::new(f))),
        })
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        if let Some((path, w)) = &mut self.sink {
            let line = serde_json::to_string(&record).expect("records serialise");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.clone(), e))?;
        }
        self.records.push(record);
        Ok(())
    }

    pub fn find(&self, phase: &str) -> impl Iterator<Item = &Record> {
        let phase = phase.to_string();
        self.records.iter().filter(move |r| r.phase == phase)
    }
}

impl RunConfig {
    pub fn budget(&self) -> Result<BudgetSplit> {
        BudgetSplit::new(self.parent_epochs, self.child_epochs, self.num_children)
    }

    pub fn parent_spec(&self, train: &Dataset) -> Result<TrainSpec> {
        Ok(TrainSpec {
            epochs: self.parent_epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule: self.parent_schedule()?,
            augment: self.augment_policy(train),
        })
    }

    pub fn tune_spec(&self, train: &Dataset) -> Result<TuneSpec> {
        Ok(TuneSpec {
            train: TrainSpec {
                epochs: self.child_epochs,
                schedule: self.tune_schedule()?,
                ..self.parent_spec(train)?
            },
            bagging: (self.bagging > 0.0).then_some(self.bagging),
            with_replacement: self.bagging_replacement,
        })
    }

    pub fn prune_spec(&self) -> PruneSpec {
        PruneSpec {
            mode: self.prune_mode,
            n: self.num_children,
            sparsity: self.sparsity,
            scope: self.scope,
            granularity: self.granularity,
            options: self.prunable_options(),
        }
    }

    pub fn new_network(&self, init_seed: u64, num_classes: usize) -> Result<NetworkGraph<f32>> {
        let mut net = build_lenet::<f32>(self.model, num_classes)?;
        net.init_he(init_seed);
        Ok(net)
    }
}

/// Headline numbers of one experiment run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub method: Method,
    /// Ensemble metrics for `pat` / `bagged`, the single model for `independent`.
    pub final_metrics: EvalMetrics,
    pub parent: Option<EvalMetrics>,
    pub members: Vec<EvalMetrics>,
    pub diversity: Option<DiversitySummary>,
}

fn eval_set(net: &NetworkGraph<f32>, test: &Dataset, transform: &AugmentPolicy, cfg: &RunConfig) -> Result<(PredictionSet, EvalMetrics)> {
    let p = predict_probs(net, test, transform, cfg.eval_batch_size)?;
    let m = EvalMetrics::of(&p)?;
    Ok((p, m))
}

/// Trains and evaluates the parent, returning it with its test predictions.
pub fn parent_phase(
    cfg: &RunConfig,
    train_set: &Dataset,
    test: &Dataset,
    report: &mut Report,
) -> Result<(NetworkGraph<f32>, TrainLog, EvalMetrics)> {
    let transform = cfg.augment_policy(train_set).eval_only();
    let mut parent = cfg.new_network(derive_seed(cfg.seed, Stream::ParentInit, 0), train_set.num_classes())?;
    let log = train_parent(&mut parent, train_set, &cfg.parent_spec(train_set)?, cfg.seed)?;
    let (_, m) = eval_set(&parent, test, &transform, cfg)?;
    log::info!("parent: accuracy {:.4}", m.accuracy);
    report.push(
        Record::new("parent", None, cfg.seed, m, log.wall_time)
            .with("epochs", cfg.parent_epochs)
            .with("train_loss", log.epochs.last().map(|e| e.train_loss)),
    )?;
    Ok((parent, log, m))
}

/// Spawns, tunes and evaluates children of `parent`; returns the tuned
/// children and their test predictions.
#[allow(clippy::too_many_arguments)]
pub fn children_phase(
    cfg: &RunConfig,
    parent: &NetworkGraph<f32>,
    prune: &PruneSpec,
    tune: &TuneSpec,
    train_set: &Dataset,
    test: &Dataset,
    report: &mut Report,
    label: &str,
) -> Result<(Vec<Child>, Vec<PredictionSet>)> {
    let transform = cfg.augment_policy(train_set).eval_only();
    let mut children = spawn_children(parent, prune, cfg.seed)?;
    tune_children(&mut children, train_set, tune, cfg.seed, cfg.workers)?;
    let mut preds = Vec::with_capacity(children.len());
    for c in &children {
        let (p, m) = eval_set(&c.net, test, &transform, cfg)?;
        report.push(
            Record::new("child", Some(c.id), cfg.seed, m, c.log.as_ref().map_or(0.0, |l| l.wall_time))
                .with("cell", label)
                .with("sparsity", c.mask.mask.sparsity())
                .with("samples", c.log.as_ref().map_or(0, |l| l.samples)),
        )?;
        preds.push(p);
    }
    Ok((children, preds))
}

fn ensemble_record(
    phase: &str,
    cfg: &RunConfig,
    preds: &[PredictionSet],
    wall_time: f64,
) -> Result<(Record, EvalMetrics, Option<DiversitySummary>)> {
    let refs: Vec<&PredictionSet> = preds.iter().collect();
    let m = EvalMetrics::of(&average_predictions(&refs)?)?;
    let div = DiversitySummary::of(preds)?;
    let mut r = Record::new(phase, None, cfg.seed, m, wall_time).with("size", preds.len());
    if let Some(d) = div {
        r = r.with("d_corr", d.d_corr).with("d_dis", d.d_dis).with("d_kl", d.d_kl);
    }
    Ok((r, m, div))
}

/// Runs the configured method end to end and appends its records.
pub fn run_experiment(
    cfg: &RunConfig,
    train_set: &Dataset,
    test: &Dataset,
    report: &mut Report,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let transform = cfg.augment_policy(train_set).eval_only();
    match cfg.method {
        Method::Pat => {
            let (parent, _, parent_m) = parent_phase(cfg, train_set, test, report)?;
            let (_, preds) = children_phase(
                cfg,
                &parent,
                &cfg.prune_spec(),
                &cfg.tune_spec(train_set)?,
                train_set,
                test,
                report,
                "pat",
            )?;
            let (r, m, diversity) = ensemble_record("ensemble", cfg, &preds, start.elapsed().as_secs_f64())?;
            report.push(r.with("method", "pat").with("budget_epochs", cfg.total_epochs()))?;
            Ok(ExperimentOutcome {
                method: Method::Pat,
                final_metrics: m,
                parent: Some(parent_m),
                members: preds.iter().map(EvalMetrics::of).collect::<Result<_>>()?,
                diversity,
            })
        }
        Method::Independent => {
            let mut net = cfg.new_network(derive_seed(cfg.seed, Stream::Baseline, 0), train_set.num_classes())?;
            let spec = TrainSpec {
                epochs: cfg.total_epochs(),
                ..cfg.parent_spec(train_set)?
            };
            let log = train(&mut net, train_set, None, &spec, None, derive_seed(cfg.seed, Stream::Baseline, 1))?;
            let (_, m) = eval_set(&net, test, &transform, cfg)?;
            report.push(
                Record::new("independent", None, cfg.seed, m, log.wall_time)
                    .with("method", "independent")
                    .with("budget_epochs", spec.epochs),
            )?;
            Ok(ExperimentOutcome {
                method: Method::Independent,
                final_metrics: m,
                parent: None,
                members: vec![m],
                diversity: None,
            })
        }
        Method::Bagged => {
            let n = cfg.num_children;
            let spec = TrainSpec {
                epochs: cfg.total_epochs() / n,
                ..cfg.parent_spec(train_set)?
            };
            let members: Vec<(NetworkGraph<f32>, TrainLog)> = {
                let one = |i: usize| -> Result<(NetworkGraph<f32>, TrainLog)> {
                    let mut net = cfg.new_network(
                        derive_seed(cfg.seed, Stream::Baseline, 2 * i as u64),
                        train_set.num_classes(),
                    )?;
                    let subset = bootstrap_indices(
                        train_set.len(),
                        cfg.bagged_fraction,
                        derive_seed(cfg.seed, Stream::Bagging, i as u64),
                        cfg.bagging_replacement,
                    )?;
                    let seed = derive_seed(cfg.seed, Stream::Baseline, 2 * i as u64 + 1);
                    let log = train(&mut net, train_set, Some(&subset), &spec, None, seed)?;
                    Ok((net, log))
                };
                if cfg.workers <= 1 {
                    (0..n).map(one).collect::<Result<_>>()?
                } else {
                    pool(cfg.workers)?.install(|| (0..n).into_par_iter().map(one).collect::<Result<_>>())?
                }
            };
            let mut preds = Vec::with_capacity(n);
            for (i, (net, log)) in members.iter().enumerate() {
                let (p, m) = eval_set(net, test, &transform, cfg)?;
                report.push(
                    Record::new("bagged-member", Some(i), cfg.seed, m, log.wall_time)
                        .with("samples", log.samples)
                        .with("epochs", spec.epochs),
                )?;
                preds.push(p);
            }
            let (r, m, diversity) = ensemble_record("bagged", cfg, &preds, start.elapsed().as_secs_f64())?;
            report.push(r.with("method", "bagged").with("budget_epochs", spec.epochs * n))?;
            Ok(ExperimentOutcome {
                method: Method::Bagged,
                final_metrics: m,
                parent: None,
                members: preds.iter().map(EvalMetrics::of).collect::<Result<_>>()?,
                diversity,
            })
        }
    }
}

/// One hyperparameter sweep; every cell reuses a single trained parent.
#[derive(Clone, Debug, PartialEq)]
pub enum AblationAxis {
    Sparsity(Vec<f64>),
    /// Connection and neuron pruning at each listed sparsity.
    Granularity(Vec<f64>),
    /// Prefix ensembles of `max(sizes)` tuned children.
    EnsembleSize(Vec<usize>),
    /// {random, anti-random pairs} × {constant, one-cycle} tuning.
    PruneTuneGrid,
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::Sparsity(_) => "sparsity",
            AblationAxis::Granularity(_) => "granularity",
            AblationAxis::EnsembleSize(_) => "ensemble-size",
            AblationAxis::PruneTuneGrid => "prune-tune",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub label: String,
    pub metrics: EvalMetrics,
    pub diversity: Option<DiversitySummary>,
}

pub fn run_ablation(
    cfg: &RunConfig,
    axis: &AblationAxis,
    train_set: &Dataset,
    test: &Dataset,
    report: &mut Report,
) -> Result<Vec<AblationCell>> {
    cfg.validate()?;
    let (parent, _, _) = parent_phase(cfg, train_set, test, report)?;
    let base_prune = cfg.prune_spec();
    let base_tune = cfg.tune_spec(train_set)?;
    let mut cells = Vec::new();
    let mut cell = |label: String, preds: &[PredictionSet], report: &mut Report, t: f64| -> Result<()> {
        let (r, m, diversity) = ensemble_record("ablation", cfg, preds, t)?;
        report.push(r.with("axis", axis.name()).with("cell", &label))?;
        cells.push(AblationCell {
            label,
            metrics: m,
            diversity,
        });
        Ok(())
    };
    match axis {
        AblationAxis::Sparsity(values) => {
            for &s in values {
                let t = Instant::now();
                let prune = PruneSpec { sparsity: s, ..base_prune };
                let label = format!("sparsity={s}");
                let (_, preds) = children_phase(cfg, &parent, &prune, &base_tune, train_set, test, report, &label)?;
                cell(label, &preds, report, t.elapsed().as_secs_f64())?;
            }
        }
        AblationAxis::Granularity(values) => {
            for g in [Granularity::Connection, Granularity::Neuron] {
                for &s in values {
                    let t = Instant::now();
                    let prune = PruneSpec {
                        sparsity: s,
                        granularity: g,
                        ..base_prune
                    };
                    let label = format!("granularity={g},sparsity={s}");
                    let (_, preds) = children_phase(cfg, &parent, &prune, &base_tune, train_set, test, report, &label)?;
                    cell(label, &preds, report, t.elapsed().as_secs_f64())?;
                }
            }
        }
        AblationAxis::EnsembleSize(sizes) => {
            let max = sizes.iter().copied().max().unwrap_or(0);
            if max == 0 || sizes.contains(&0) {
                return Err(Error::Config("ensemble sizes must be positive".into()));
            }
            let t = Instant::now();
            let prune = PruneSpec { n: max, ..base_prune };
            let (_, preds) = children_phase(cfg, &parent, &prune, &base_tune, train_set, test, report, "pool")?;
            let shared = t.elapsed().as_secs_f64();
            for &k in sizes {
                cell(format!("size={k}"), &preds[..k], report, shared)?;
            }
        }
        AblationAxis::PruneTuneGrid => {
            let constant = Schedule::Constant { lr: cfg.tune_lr };
            let one_cycle = Schedule::OneCycle {
                lr_min: cfg.lr_min,
                lr_max: cfg.lr_max,
                lr_final: cfg.lr_final,
                warmup: cfg.warmup_frac,
            };
            for (pname, mode, sparsity) in [
                ("R", PruneMode::Random, cfg.sparsity),
                ("AR", PruneMode::AntiRandomPairs, 0.5),
            ] {
                for (tname, schedule) in [("FT", constant), ("1C", one_cycle)] {
                    let t = Instant::now();
                    let prune = PruneSpec {
                        mode,
                        sparsity,
                        ..base_prune
                    };
                    let tune = TuneSpec {
                        train: TrainSpec {
                            schedule,
                            ..base_tune.train.clone()
                        },
                        ..base_tune.clone()
                    };
                    let label = format!("{pname}+{tname}");
                    let (_, preds) = children_phase(cfg, &parent, &prune, &tune, train_set, test, report, &label)?;
                    cell(label, &preds, report, t.elapsed().as_secs_f64())?;
                }
            }
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::masks::PruneMask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Tiny 3×8×8 dataset where the class is the brightest channel.
    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::with_capacity(n * 192);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = rng.random_range(0..3usize);
            for c in 0..3 {
                for _ in 0..64 {
                    let base = if c == y { 140 } else { 40 };
                    images.push(base + rng.random_range(0..100u8));
                }
            }
            labels.push(y);
        }
        Dataset::new(images, labels, [3, 8, 8], 3, Split::Train).unwrap()
    }

    fn small_net(seed: u64) -> NetworkGraph<f32> {
        let mut net =
            NetworkGraph::from_arch_descriptor("3x8x8|conv2d(3,4,3)|relu|maxpool2d|flatten|linear(36,16)|relu|linear(16,3)")
                .unwrap();
        net.init_he(seed);
        net
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let data = toy(40, 1);
        let mut net = small_net(2);
        let before = net.params().values().to_vec();
        let spec = TrainSpec::adam(3, 8, 0.0);
        let log = train_parent(&mut net, &data, &spec, 5).unwrap();
        assert_eq!(net.params().values(), &before[..]);
        let first = log.epochs[0].train_loss;
        assert!(log.epochs.iter().all(|e| (e.train_loss - first).abs() < 1e-9));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let data = toy(120, 3);
        let spec = TrainSpec::adam(4, 16, 5e-3);
        let run = || {
            let mut net = small_net(4);
            train_parent(&mut net, &data, &spec, 9).unwrap();
            net
        };
        let (a, b) = (run(), run());
        assert_eq!(a.params().values(), b.params().values());
        let acc = EvalMetrics::of(&predict_probs(&a, &data, &AugmentPolicy::none(), 50).unwrap())
            .unwrap()
            .accuracy;
        assert!(acc > 0.9, "train accuracy {acc}");
    }

    #[test]
    fn empty_or_mismatched_data_rejected() {
        let data = toy(10, 1);
        let mut net = small_net(1);
        let spec = TrainSpec::adam(1, 4, 1e-3);
        assert!(train(&mut net, &data, Some(&[]), &spec, None, 0).is_err());
        let wide = NetworkGraph::<f32>::from_arch_descriptor("3x8x8|flatten|linear(192,5)").unwrap();
        assert!(matches!(
            train(&mut wide.clone(), &data, None, &spec, None, 0),
            Err(Error::Structure(_))
        ));
        assert!(train_parent(&mut net, &data, &TrainSpec::adam(0, 4, 1e-3), 0).is_err());
    }

    #[test]
    fn spawn_modes() {
        let parent = small_net(7);
        let prunable = PrunableSet::hidden_weights(&parent);
        let pairs = spawn_children(
            &parent,
            &PruneSpec {
                mode: PruneMode::AntiRandomPairs,
                ..PruneSpec::random(4, 0.5)
            },
            1,
        )
        .unwrap();
        for pair in pairs.chunks(2) {
            let (a, b) = (pair[0].mask.mask.bits(), pair[1].mask.mask.bits());
            assert_eq!(a.not(), *b);
        }
        assert_ne!(pairs[0].mask, pairs[2].mask);

        let part = spawn_children(
            &parent,
            &PruneSpec {
                mode: PruneMode::AntiRandomPartition,
                ..PruneSpec::random(4, 0.0)
            },
            1,
        )
        .unwrap();
        let mut union = BitSet::zeros(prunable.len());
        for c in &part {
            assert_eq!(union.and(c.mask.mask.bits()).count_ones(), 0);
            union = union.or(c.mask.mask.bits());
            assert!((c.mask.mask.density() - 0.25).abs() < 0.01);
        }
        assert_eq!(union.count_ones(), prunable.len());
        // Union of retained weights equals the parent's prunable weights.
        let mut sum = vec![0.0f32; parent.param_count()];
        for c in &part {
            for i in prunable.indices() {
                sum[i] += c.net.params().values()[i];
            }
        }
        for i in prunable.indices() {
            assert_eq!(sum[i], parent.params().values()[i]);
        }

        let random = spawn_children(&parent, &PruneSpec::random(8, 0.5), 1).unwrap();
        assert_eq!(random.len(), 8);
        for c in &random {
            assert_eq!(c.mask.mask.bits().count_zeros(), prunable.len() / 2);
        }

        let odd = PruneSpec {
            mode: PruneMode::AntiRandomPairs,
            ..PruneSpec::random(3, 0.5)
        };
        assert!(spawn_children(&parent, &odd, 1).is_err());
        let off = PruneSpec {
            mode: PruneMode::AntiRandomPairs,
            ..PruneSpec::random(4, 0.3)
        };
        assert!(spawn_children(&parent, &off, 1).is_err());
    }

    #[test]
    fn tuning_respects_masks_and_budget() {
        let data = toy(60, 2);
        let parent = small_net(3);
        let snapshot = parent.params().values().to_vec();
        let mut children = spawn_children(&parent, &PruneSpec::random(2, 0.5), 4).unwrap();
        let untouched = children[0].net.params().values().to_vec();
        let none = TuneSpec {
            train: TrainSpec::adam(0, 8, 1e-3),
            bagging: None,
            with_replacement: false,
        };
        tune_child(&mut children[0], &data, &none, 4).unwrap();
        assert_eq!(children[0].net.params().values(), &untouched[..]);

        let spec = TuneSpec {
            train: TrainSpec::adam(1, 8, 1e-3),
            bagging: Some(0.9),
            with_replacement: false,
        };
        tune_children(&mut children, &data, &spec, 4, 1).unwrap();
        for c in &children {
            let keep = c.keep_flags().unwrap();
            for (i, v) in c.net.params().values().iter().enumerate() {
                if !keep.get(i) {
                    assert_eq!(v.to_bits(), 0);
                }
            }
            assert_eq!(c.log.as_ref().unwrap().samples, 54);
        }
        assert_eq!(parent.params().values(), &snapshot[..]);

        let mut again = spawn_children(&parent, &PruneSpec::random(2, 0.5), 4).unwrap();
        tune_children(&mut again, &data, &spec, 4, 2).unwrap();
        for (a, b) in children.iter().zip(&again) {
            assert_eq!(a.net.params().values(), b.net.params().values());
        }
    }

    #[test]
    fn ensemble_prediction() {
        let data = toy(16, 5);
        let (x, _) = data.batch(&(0..16).collect::<Vec<_>>()).unwrap();
        let a = small_net(1);
        let (labels, probs) = predict_ensemble(&[&a, &a, &a, &a], &x).unwrap();
        let single = softmax(&a.forward(&x).unwrap().cast::<f64>()).unwrap();
        for (p, q) in probs.data().iter().zip(single.data()) {
            assert!((p - q).abs() < 1e-15);
        }
        for (i, row) in single.data().chunks_exact(3).enumerate() {
            assert_eq!(labels[i], metrics::argmax(row));
        }

        let members: Vec<NetworkGraph<f32>> = (10..13).map(small_net).collect();
        let refs: Vec<&NetworkGraph<f32>> = members.iter().collect();
        let (_, probs) = predict_ensemble(&refs, &x).unwrap();
        let outs: Vec<Tensor<f64>> =
            members.iter().map(|m| softmax(&m.forward(&x).unwrap().cast::<f64>()).unwrap()).collect();
        for i in 0..probs.len() {
            let mean = (outs[0].data()[i] + outs[1].data()[i] + outs[2].data()[i]) / 3.0;
            assert!((probs.data()[i] - mean).abs() < 1e-15);
        }
        for row in probs.data().chunks_exact(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let reversed: Vec<&NetworkGraph<f32>> = refs.iter().rev().copied().collect();
        let (_, rev) = predict_ensemble(&reversed, &x).unwrap();
        for (p, q) in probs.data().iter().zip(rev.data()) {
            assert!((p - q).abs() < 1e-15);
        }

        let other = NetworkGraph::<f32>::from_arch_descriptor("3x8x8|flatten|linear(192,4)").unwrap();
        assert!(predict_ensemble(&[&a, &other], &x).is_err());
        assert!(predict_ensemble(&[], &x).is_err());
    }

    #[test]
    fn averaged_tie_goes_to_lowest_class() {
        let a = PredictionSet::new(vec![1.0, 0.0], vec![1], 2).unwrap();
        let b = PredictionSet::new(vec![0.0, 1.0], vec![1], 2).unwrap();
        let avg = average_predictions(&[&a, &b]).unwrap();
        assert_eq!(avg.probs(), &[0.5, 0.5]);
        assert_eq!(avg.predictions(), vec![0]);
    }

    #[test]
    fn budget_arithmetic() {
        assert_eq!(BudgetSplit::new(8, 1, 8).unwrap().total(), 16);
        assert!(BudgetSplit::new(0, 1, 8).is_err());
        assert!(BudgetSplit::new(8, 1, 0).is_err());
    }

    #[test]
    fn report_writes_json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let mut r = Report::to_file(&path).unwrap();
        let m = EvalMetrics {
            accuracy: 0.5,
            nll: 1.0,
            ece: 0.1,
        };
        r.push(Record::new("parent", None, 3, m, 1.5)).unwrap();
        r.push(Record::new("child", Some(2), 3, m, 0.5).with("sparsity", 0.5)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["phase"], "parent");
        assert!(lines[0].get("member_id").is_none());
        assert_eq!(lines[1]["member_id"], 2);
        assert_eq!(lines[1]["sparsity"], 0.5);
        assert_eq!(lines[1]["wall_time"], 0.5);
    }

    #[test]
    fn mask_record_matches_children() {
        let parent = small_net(1);
        let kids = spawn_children(&parent, &PruneSpec::random(1, 0.0), 0).unwrap();
        let prunable = PrunableSet::hidden_weights(&parent);
        assert_eq!(kids[0].mask.mask, PruneMask::all_ones(prunable.len()));
        assert_eq!(kids[0].net.params().values(), parent.params().values());
    }
}
