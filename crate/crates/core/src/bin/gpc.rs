//! Command-line driver: generate synthetic datasets, fit the estimation
//! loop, evaluate saved assignments, probe the class-number estimator on
//! labelled data, and convert dataset files between formats.

use clap::{Args, Parser, Subcommand};
use gpc_core::config::RunConfig;
use gpc_core::dataset::{self, FeatureDataset, FileFormat, SynthSpec};
use gpc_core::mixture::{probe_counts, probe_k_on_labelled};
use gpc_core::pipeline::{self, run_fit};
use gpc_core::{Error, Result};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Prints a line to stdout, exiting quietly when the consumer of a pipe
/// has gone away (`gpc eval | head` must not panic on EPIPE).
macro_rules! emit {
    ($($arg:tt)*) => {{
        let mut out = std::io::stdout().lock();
        if let Err(e) = writeln!(out, $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            eprintln!("error[data]: stdout: {e}");
            std::process::exit(2);
        }
    }};
}

#[derive(Parser, Debug)]
#[command(
    name = "gpc",
    version,
    about = "Semi-supervised mixture clustering with automatic class-number estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset plus its ground-truth sidecar.
    Gen(GenArgs),
    /// Fit the estimation loop to a dataset.
    Fit(FitArgs),
    /// Score saved assignments against a ground-truth sidecar.
    Eval(EvalArgs),
    /// Hold out labelled classes and check the class-number estimate.
    ProbeK(ProbeKArgs),
    /// Convert a dataset (and its truth sidecar) between formats.
    Export(ExportArgs),
}

/// Run configuration as CLI flags. Every flag maps 1:1 to a config-file
/// key; flags override the file, the file overrides defaults.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// Flat `key = value` config file applied before any flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Initial component count, or `auto` for the labelled-count rule.
    #[arg(long, value_name = "K|auto")]
    k_init: Option<String>,
    #[arg(long, value_name = "N")]
    epochs: Option<String>,
    /// Epochs with unchanged K before the loop stops early.
    #[arg(long, value_name = "N")]
    patience: Option<String>,
    #[arg(long, value_name = "U64")]
    seed: Option<String>,
    /// `factorial` or `gamma`.
    #[arg(long, value_name = "CONV")]
    gamma_convention: Option<String>,
    /// `full` or `diag`.
    #[arg(long, value_name = "MODE")]
    covariance_mode: Option<String>,
    /// `any-labelled` or `class-breaking`.
    #[arg(long, value_name = "MODE")]
    split_veto: Option<String>,
    #[arg(long, value_name = "F64")]
    prior_kappa: Option<String>,
    /// Prior degrees of freedom, or `auto` for d + 2.
    #[arg(long, value_name = "F64|auto")]
    prior_nu: Option<String>,
    #[arg(long, value_name = "F64")]
    prior_psi_scale: Option<String>,
    /// Force representation refinement on.
    #[arg(long, conflicts_with = "no_replearn")]
    replearn: bool,
    /// Skip representation refinement (mixture runs on raw features).
    #[arg(long)]
    no_replearn: bool,
    /// Contrastive temperature.
    #[arg(long, value_name = "F64")]
    tau: Option<String>,
    /// Epochs over which the prototype-loss weight ramps from 0 to 1.
    #[arg(long, value_name = "N")]
    warmup_epochs: Option<String>,
    /// View-noise scale relative to per-feature standard deviation.
    #[arg(long, value_name = "F64")]
    sigma_aug: Option<String>,
    #[arg(long, value_name = "F64")]
    lr: Option<String>,
    #[arg(long, value_name = "N")]
    batch_labelled: Option<String>,
    #[arg(long, value_name = "N")]
    batch_unlabelled: Option<String>,
    /// Encoder output width, or `auto` to keep the input width.
    #[arg(long, value_name = "N|auto")]
    encoder_dim: Option<String>,
    /// Projection width, or `auto` for min(encoder width, 128).
    #[arg(long, value_name = "N|auto")]
    pca_q: Option<String>,
    /// `epoch` or `batch`.
    #[arg(long, value_name = "WHEN")]
    pca_refresh: Option<String>,
    /// Worker threads, or `auto` (GPC_THREADS, then core count).
    #[arg(long, value_name = "N|auto")]
    threads: Option<String>,
}

impl ConfigFlags {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        let pairs: [(&str, &Option<String>); 20] = [
            ("k-init", &self.k_init),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("gamma-convention", &self.gamma_convention),
            ("covariance-mode", &self.covariance_mode),
            ("split-veto", &self.split_veto),
            ("prior-kappa", &self.prior_kappa),
            ("prior-nu", &self.prior_nu),
            ("prior-psi-scale", &self.prior_psi_scale),
            ("tau", &self.tau),
            ("warmup-epochs", &self.warmup_epochs),
            ("sigma-aug", &self.sigma_aug),
            ("lr", &self.lr),
            ("batch-labelled", &self.batch_labelled),
            ("batch-unlabelled", &self.batch_unlabelled),
            ("encoder-dim", &self.encoder_dim),
            ("pca-q", &self.pca_q),
            ("pca-refresh", &self.pca_refresh),
            ("threads", &self.threads),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.replearn {
            cfg.replearn = true;
        }
        if self.no_replearn {
            cfg.replearn = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Output dataset path (`.csv` or `.gpcf`); the ground-truth sidecar
    /// is written next to it as `<stem>.truth.<ext>`.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// True number of classes.
    #[arg(long)]
    k_true: usize,
    /// Feature dimension.
    #[arg(long)]
    d: usize,
    /// Instances per class.
    #[arg(long)]
    per_class: usize,
    /// Number of classes whose labels stay (partially) visible.
    #[arg(long)]
    kl: usize,
    /// Share of each labelled class that keeps its label.
    #[arg(long, default_value_t = 0.5)]
    labelled_fraction: f64,
    /// Class centers are uniform in [-center-scale, center-scale]^d.
    #[arg(long, default_value_t = 10.0)]
    center_scale: f64,
    /// Within-class standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Dataset file (`.csv` or `.gpcf`).
    dataset: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
    /// Write the results JSON here instead of stdout.
    #[arg(long, value_name = "FILE")]
    results: Option<PathBuf>,
    /// Write per-instance assignments as `id,cluster` CSV.
    #[arg(long, value_name = "FILE")]
    assignments: Option<PathBuf>,
    /// Write the split/merge trace as line-delimited JSON.
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
    /// Ground-truth sidecar for evaluation; defaults to the dataset's
    /// own sidecar when that file exists.
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
    /// Skip evaluation even when a truth sidecar exists.
    #[arg(long)]
    no_eval: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset the assignments were fit on.
    #[arg(long, value_name = "FILE")]
    dataset: PathBuf,
    /// `id,cluster` CSV produced by `fit --assignments`.
    #[arg(long, value_name = "FILE")]
    assignments: PathBuf,
    /// Ground-truth sidecar; defaults to the dataset's own sidecar.
    #[arg(long, value_name = "FILE")]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ProbeKArgs {
    /// Dataset file; only its labelled instances are used.
    dataset: PathBuf,
    /// Share of labelled classes whose labels are held out.
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    #[command(flatten)]
    flags: ConfigFlags,
    /// Initial novel-component counts to sweep; prints a table of
    /// the estimated novel-class count for each.
    #[arg(long, value_name = "N,N,...", value_delimiter = ',', num_args = 1..)]
    sweep: Vec<usize>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Input dataset (`.csv` or `.gpcf`).
    input: PathBuf,
    /// Output dataset; format inferred from the extension.
    output: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dispatch(cli) {
        let class = match e.exit_code() {
            1 => "usage",
            3 => "numerical",
            _ => "data",
        };
        eprintln!("error[{class}]: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Eval(args) => cmd_eval(args),
        Command::ProbeK(args) => cmd_probe_k(args),
        Command::Export(args) => cmd_export(args),
    }
}

fn load(path: &Path) -> Result<FeatureDataset> {
    dataset::load_features(path, FileFormat::from_path(path)?)
}

fn save(ds: &FeatureDataset, path: &Path) -> Result<()> {
    dataset::save_features(ds, path, FileFormat::from_path(path)?)
}

/// Caps the global worker pool: explicit config wins, then GPC_THREADS,
/// otherwise the library defaults to the machine's core count.
fn init_threads(cfg: &RunConfig) -> Result<()> {
    let n = match cfg.threads {
        Some(n) => Some(n),
        None => match std::env::var("GPC_THREADS") {
            Ok(s) => Some(s.trim().parse().map_err(|_| {
                Error::Config(format!("GPC_THREADS: cannot parse `{s}` as a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let spec = SynthSpec {
        k_true: args.k_true,
        d: args.d,
        per_class: args.per_class,
        center_scale: args.center_scale,
        sigma: args.sigma,
        k_labelled: args.kl,
        labelled_fraction: args.labelled_fraction,
        seed: args.seed,
    };
    let (visible, truth) = dataset::gen_synth(&spec)?;
    let truth_out = dataset::truth_path(&args.out);
    save(&visible, &args.out)?;
    save(&truth, &truth_out)?;
    emit!(
        "wrote {} instances (d={}, {} of {} classes labelled) to {} and truth to {}",
        visible.n(),
        visible.d(),
        args.kl,
        args.k_true,
        args.out.display(),
        truth_out.display()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let cfg = args.flags.build()?;
    init_threads(&cfg)?;
    let ds = load(&args.dataset)?;
    let truth = if args.no_eval {
        None
    } else {
        match &args.truth {
            Some(p) => Some(load(p)?),
            None => {
                let side = dataset::truth_path(&args.dataset);
                if side.exists() {
                    Some(load(&side)?)
                } else {
                    None
                }
            }
        }
    };
    let art = run_fit(&ds, truth.as_ref(), &cfg)?;

    if let Some(path) = &args.trace {
        let mut buf = Vec::new();
        pipeline::write_trace(&mut buf, &art.logs)?;
        std::fs::write(path, buf)?;
    }
    if let Some(path) = &args.assignments {
        let mut buf = Vec::new();
        pipeline::write_assignments(&mut buf, &art.assignments)?;
        std::fs::write(path, buf)?;
    }
    let json = serde_json::to_string_pretty(&art.result)
        .map_err(|e| Error::Parse(format!("results serialization: {e}")))?;
    match &args.results {
        Some(path) => {
            std::fs::write(path, json + "\n")?;
            emit!(
                "fit done: K={} after {} epochs; results in {}",
                art.result.k_final,
                art.result.epochs_run,
                path.display()
            );
        }
        None => emit!("{json}"),
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ds = load(&args.dataset)?;
    let truth_file = args
        .truth
        .clone()
        .unwrap_or_else(|| dataset::truth_path(&args.dataset));
    if !truth_file.exists() {
        return Err(Error::Parse(format!(
            "no ground truth at {}; pass --truth",
            truth_file.display()
        )));
    }
    let truth = load(&truth_file)?;
    let pairs = pipeline::read_assignments(&args.assignments)?;
    let mut by_id = std::collections::HashMap::with_capacity(pairs.len());
    for (id, c) in &pairs {
        if by_id.insert(*id, *c).is_some() {
            return Err(Error::Parse(format!("duplicate assignment for instance {id}")));
        }
    }
    let mut assignment = Vec::with_capacity(ds.n());
    for &id in &ds.ids {
        let c = by_id.remove(&id).ok_or_else(|| {
            Error::Parse(format!("instance {id} has no assignment"))
        })?;
        assignment.push(c);
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(Error::Parse(format!(
            "assignment for instance {extra} not in the dataset"
        )));
    }
    let report = pipeline::eval_assignments(&ds, &truth, &assignment)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
    emit!("{json}");
    Ok(())
}

fn cmd_probe_k(args: ProbeKArgs) -> Result<()> {
    let cfg = args.flags.build()?;
    init_threads(&cfg)?;
    let ds = load(&args.dataset)?;
    if args.sweep.is_empty() {
        let report = probe_k_on_labelled(&ds.x, &ds.labels, args.ratio, &cfg)?;
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
        emit!("{json}");
        return Ok(());
    }
    let kl = ds.labelled_classes().len();
    let (k_retained, k_probe) = probe_counts(kl, args.ratio);
    emit!("probe: {kl} labelled classes, {k_retained} retained, {k_probe} held out");
    emit!("{:>8} {:>8} {:>8} {:>8} {:>8}", "kn_init", "k_init", "k_final", "est_kn", "error");
    for &kn_init in &args.sweep {
        let mut run_cfg = cfg.clone();
        run_cfg.k_init = Some(k_retained + kn_init);
        let report = probe_k_on_labelled(&ds.x, &ds.labels, args.ratio, &run_cfg)?;
        emit!(
            "{:>8} {:>8} {:>8} {:>8} {:>8}",
            kn_init,
            k_retained + kn_init,
            report.k_final,
            report.novel_estimate,
            report.novel_error
        );
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let ds = load(&args.input)?;
    save(&ds, &args.output)?;
    let truth_in = dataset::truth_path(&args.input);
    let mut note = String::new();
    if truth_in.exists() {
        let truth = load(&truth_in)?;
        let truth_out = dataset::truth_path(&args.output);
        save(&truth, &truth_out)?;
        note = format!(" (with truth sidecar {})", truth_out.display());
    }
    emit!(
        "exported {} instances to {}{note}",
        ds.n(),
        args.output.display()
    );
    Ok(())
}
