use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prune_tune::config::{PruneMode, RunConfig};
use prune_tune::data::{load_checkpoint, save_checkpoint, Checkpoint, Dataset};
use prune_tune::engine::{
    self, AblationAxis, Child, DiversitySummary, EvalMetrics, PruneSpec, Record, Report,
};
use prune_tune::landscape::{self, GridSpec};
use prune_tune::masks::{Granularity, Scope};
use prune_tune::metrics::{self, Diversity, PredictionSet};
use prune_tune::seed::{derive_seed, Stream};
use prune_tune::Error;

#[derive(Parser, Debug)]
#[command(name = "prune-tune", version, about = "Prune-and-tune ensemble experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration file (flat key = value).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (overrides the `workers` key).
    #[arg(long)]
    workers: Option<usize>,
    /// JSON-lines report file (overrides the `report` key).
    #[arg(long)]
    report: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(r) = &self.report {
            cfg.report = Some(r.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a parent network and save it.
    TrainParent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clone and prune a parent into child checkpoints `child_<i>.ckpt`.
    Spawn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        parent: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sparsity: Option<f64>,
        #[arg(long)]
        scope: Option<String>,
        #[arg(long)]
        granularity: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Tune one child checkpoint under its mask.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        child: PathBuf,
        /// Child index; selects the child's shuffle and bagging streams.
        #[arg(long, default_value_t = 0)]
        id: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Evaluate the averaged-softmax ensemble of several checkpoints.
    EnsembleEval {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1.., required = true)]
        members: Vec<PathBuf>,
    },
    /// Pairwise diversity matrix of several checkpoints.
    Diversity {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 2.., required = true)]
        members: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = MeasureArg::All)]
        measure: MeasureArg,
    },
    /// Loss surface around a checkpoint along two filter-normalised directions.
    Landscape {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 11)]
        resolution: usize,
        /// Half-width of the symmetric α and β ranges.
        #[arg(long, default_value_t = 1.0)]
        range: f64,
        #[arg(long, default_value_t = landscape::DEFAULT_SUBSET)]
        subset: usize,
    },
    /// Run the configured method end to end.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Print the resolved configuration and exit.
        #[arg(long)]
        dry_run: bool,
    },
    /// Sweep one hyperparameter axis around a single parent.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated sparsities or ensemble sizes.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MeasureArg {
    Corr,
    Dis,
    Kl,
    All,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AxisArg {
    Sparsity,
    Granularity,
    EnsembleSize,
    PruneTune,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::Numeric(_) => 4,
        Error::Shape(_) | Error::Structure(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn open_report(cfg: &RunConfig) -> Result<Report, Error> {
    match &cfg.report {
        Some(p) => Report::to_file(p),
        None => Ok(Report::in_memory()),
    }
}

fn append_json(path: Option<&Path>, value: &serde_json::Value) -> Result<(), Error> {
    let Some(path) = path else { return Ok(()) };
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    writeln!(f, "{value}").map_err(io)
}

fn print_metrics(label: &str, m: &EvalMetrics) {
    println!(
        "{label}: accuracy {:.4}  nll {:.4}  ece {:.4}",
        m.accuracy, m.nll, m.ece
    );
}

fn test_predictions(cfg: &RunConfig, ck: &Checkpoint, train: &Dataset, test: &Dataset) -> Result<PredictionSet, Error> {
    let transform = cfg.augment_policy(train).eval_only();
    engine::predict_probs(&ck.net, test, &transform, cfg.eval_batch_size)
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Checkpoint>, Error> {
    paths.iter().map(|p| load_checkpoint(p)).collect()
}

fn parse_list<T: std::str::FromStr>(values: &[String], what: &str) -> Result<Vec<T>, Error> {
    values
        .iter()
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid {what} '{v}'")))
        })
        .collect()
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::TrainParent { common, out } => {
            let cfg = common.load()?;
            let (train, test) = cfg.load_data()?;
            let mut report = open_report(&cfg)?;
            let (parent, log, m) = engine::parent_phase(&cfg, &train, &test, &mut report)?;
            save_checkpoint(&out, &parent, None, cfg.seed)?;
            print_metrics("parent", &m);
            println!("trained {} epochs in {:.1}s, saved {}", log.epochs.len(), log.wall_time, out.display());
        }
        Command::Spawn {
            common,
            parent,
            mode,
            n,
            sparsity,
            scope,
            granularity,
            out_dir,
        } => {
            let mut cfg = common.load()?;
            if let Some(m) = mode {
                cfg.prune_mode = m.parse()?;
            }
            if let Some(n) = n {
                cfg.num_children = n;
            }
            if let Some(s) = sparsity {
                cfg.sparsity = s;
            }
            if let Some(s) = scope {
                cfg.scope = s.parse::<Scope>()?;
            }
            if let Some(g) = granularity {
                cfg.granularity = g.parse::<Granularity>()?;
            }
            let ck = load_checkpoint(&parent)?;
            let spec: PruneSpec = cfg.prune_spec();
            let children: Vec<Child> = engine::spawn_children(&ck.net, &spec, cfg.seed)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            for c in &children {
                let path = out_dir.join(format!("child_{}.ckpt", c.id));
                save_checkpoint(&path, &c.net, Some(&c.mask), cfg.seed)?;
                println!(
                    "child {}: sparsity {:.4}, kept {} of {} prunable -> {}",
                    c.id,
                    c.mask.mask.sparsity(),
                    c.mask.mask.kept(),
                    c.mask.mask.len(),
                    path.display()
                );
            }
            if cfg.prune_mode == PruneMode::AntiRandomPairs {
                println!("{} complement pairs", children.len() / 2);
            }
        }
        Command::Tune { common, child, id, out } => {
            let cfg = common.load()?;
            let (train, test) = cfg.load_data()?;
            let ck = load_checkpoint(&child)?;
            let mask = ck
                .mask
                .clone()
                .ok_or_else(|| Error::InvalidArgument(format!("{} carries no mask", child.display())))?;
            let mut c = Child {
                id,
                mask,
                net: ck.net,
                log: None,
            };
            engine::tune_child(&mut c, &train, &cfg.tune_spec(&train)?, cfg.seed)?;
            save_checkpoint(&out, &c.net, Some(&c.mask), cfg.seed)?;
            let p = engine::predict_probs(&c.net, &test, &cfg.augment_policy(&train).eval_only(), cfg.eval_batch_size)?;
            let m = EvalMetrics::of(&p)?;
            let mut report = open_report(&cfg)?;
            report.push(Record::new("child", Some(id), cfg.seed, m, c.log.as_ref().map_or(0.0, |l| l.wall_time)))?;
            print_metrics(&format!("child {id}"), &m);
        }
        Command::Eval { common, model } => {
            let cfg = common.load()?;
            let (train, test) = cfg.load_data()?;
            let ck = load_checkpoint(&model)?;
            let m = EvalMetrics::of(&test_predictions(&cfg, &ck, &train, &test)?)?;
            let mut report = open_report(&cfg)?;
            report.push(Record::new("eval", None, cfg.seed, m, 0.0).with("model", model.display().to_string()))?;
            print_metrics(&model.display().to_string(), &m);
        }
        Command::EnsembleEval { common, members } => {
            let cfg = common.load()?;
            let (train, test) = cfg.load_data()?;
            let cks = load_all(&members)?;
            let preds = cks
                .iter()
                .map(|ck| test_predictions(&cfg, ck, &train, &test))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&PredictionSet> = preds.iter().collect();
            let m = EvalMetrics::of(&engine::average_predictions(&refs)?)?;
            let mut report = open_report(&cfg)?;
            let mut rec = Record::new("ensemble", None, cfg.seed, m, 0.0).with("size", preds.len());
            if let Some(d) = DiversitySummary::of(&preds)? {
                rec = rec.with("d_corr", d.d_corr).with("d_dis", d.d_dis).with("d_kl", d.d_kl);
                println!("diversity: d_corr {:.4}  d_dis {:.4}  d_kl {:.4}", d.d_corr, d.d_dis, d.d_kl);
            }
            report.push(rec)?;
            print_metrics(&format!("ensemble of {}", preds.len()), &m);
        }
        Command::Diversity { common, members, measure } => {
            let cfg = common.load()?;
            let (train, test) = cfg.load_data()?;
            let cks = load_all(&members)?;
            let preds = cks
                .iter()
                .map(|ck| test_predictions(&cfg, ck, &train, &test))
                .collect::<Result<Vec<_>, _>>()?;
            let measures: Vec<Diversity> = match measure {
                MeasureArg::Corr => vec![Diversity::Corr],
                MeasureArg::Dis => vec![Diversity::Dis],
                MeasureArg::Kl => vec![Diversity::Kl],
                MeasureArg::All => Diversity::ALL.to_vec(),
            };
            for d in measures {
                let m = metrics::pairwise_matrix(&preds, d)?;
                println!("{} (mean over pairs {:.6})", d.name(), m.mean);
                let rows: Vec<Vec<f64>> = (0..m.size).map(|i| (0..m.size).map(|j| m.get(i, j)).collect()).collect();
                for row in &rows {
                    let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
                    println!("  {}", cells.join("  "));
                }
                append_json(
                    cfg.report.as_deref(),
                    &serde_json::json!({
                        "phase": "diversity",
                        "measure": d.name(),
                        "seed": cfg.seed,
                        "members": members.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
                        "matrix": rows,
                        "mean": m.mean,
                    }),
                )?;
            }
        }
        Command::Landscape {
            common,
            model,
            out,
            resolution,
            range,
            subset,
        } => {
            let cfg = common.load()?;
            let (train, test) = cfg.load_data()?;
            let ck = load_checkpoint(&model)?;
            let keep = match &ck.mask {
                Some(m) => Some(m.keep_flags(&ck.net)?),
                None => None,
            };
            let delta = landscape::filter_normalized_direction(&ck.net, derive_seed(cfg.seed, Stream::Landscape, 0), keep.as_ref())?;
            let rho = landscape::filter_normalized_direction(&ck.net, derive_seed(cfg.seed, Stream::Landscape, 1), keep.as_ref())?;
            let idx = landscape::eval_subset(test.len(), subset, cfg.seed);
            let spec = GridSpec {
                alpha: (-range, range),
                beta: (-range, range),
                resolution,
                batch_size: cfg.eval_batch_size,
                workers: cfg.workers,
            };
            let transform = cfg.augment_policy(&train).eval_only();
            let grid = landscape::loss_grid(&ck.net, &test, &idx, &transform, &delta, &rho, &spec)?;
            let meta = [
                ("model", model.display().to_string()),
                ("seed", cfg.seed.to_string()),
                ("alpha_range", format!("{},{}", -range, range)),
                ("beta_range", format!("{},{}", -range, range)),
                ("resolution", resolution.to_string()),
                ("subset", idx.len().to_string()),
            ];
            grid.write_csv(&out, &meta)?;
            let min = grid.values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = grid.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            println!(
                "{0}x{0} grid on {1} samples: loss range [{min:.4}, {max:.4}], written to {2}",
                resolution,
                idx.len(),
                out.display()
            );
        }
        Command::Experiment { common, dry_run } => {
            let cfg = common.load()?;
            if dry_run {
                print!("{}", cfg.documented());
                return Ok(());
            }
            let (train, test) = cfg.load_data()?;
            let mut report = open_report(&cfg)?;
            let out = engine::run_experiment(&cfg, &train, &test, &mut report)?;
            if let Some(p) = &out.parent {
                print_metrics("parent", p);
            }
            for (i, m) in out.members.iter().enumerate() {
                print_metrics(&format!("member {i}"), m);
            }
            print_metrics(&format!("{} (budget {} epochs)", cfg.method, cfg.total_epochs()), &out.final_metrics);
            if let Some(d) = out.diversity {
                println!("diversity: d_corr {:.4}  d_dis {:.4}  d_kl {:.4}", d.d_corr, d.d_dis, d.d_kl);
            }
        }
        Command::Ablation { common, axis, values } => {
            let cfg = common.load()?;
            let axis = match axis {
                AxisArg::Sparsity => AblationAxis::Sparsity(parse_list(&values, "sparsity")?),
                AxisArg::Granularity => AblationAxis::Granularity(parse_list(&values, "sparsity")?),
                AxisArg::EnsembleSize => AblationAxis::EnsembleSize(parse_list(&values, "ensemble size")?),
                AxisArg::PruneTune => AblationAxis::PruneTuneGrid,
            };
            if values.is_empty() && !matches!(axis, AblationAxis::PruneTuneGrid) {
                return Err(Error::Config(format!("--values is required for the {} axis", axis.name())));
            }
            let (train, test) = cfg.load_data()?;
            let mut report = open_report(&cfg)?;
            for cell in engine::run_ablation(&cfg, &axis, &train, &test, &mut report)? {
                print_metrics(&cell.label, &cell.metrics);
            }
        }
    }
    Ok(())
}
