//! Command-line frontend. Exit codes: 0 success, 1 configuration error,
//! 2 diverged run.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bench::{self, ExperimentConfig, OptimizerKind, RunStatus};
use crate::data;
use crate::landscape::{self, ScanSpec};
use crate::net;
use crate::optim::{self, Rule};
use crate::{EagleError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "eagle",
    about = "Secant-curvature optimizer benchmark suite",
    long_about = "Train small MLPs with the switched secant/Adam optimizer, compare \
                  optimizers across seeds, sweep loss landscapes, and study the \
                  update-rule usage rate.\n\nFlag overrides beat config-file values; \
                  the effective configuration is echoed to effective_config.json in \
                  the output directory. EAGLE_OUT_DIR serves as the output-dir \
                  fallback when neither --out nor the config sets one."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one (optimizer, seed) run and write its metrics CSV.
    Train(TrainArgs),
    /// Train all configured optimizers across all seeds and aggregate.
    Compare(CompareArgs),
    /// Sweep sampled parameters of a trained checkpoint.
    Landscape(LandscapeArgs),
    /// Usage-rate study across gradient-difference thresholds.
    Usage(UsageArgs),
    /// Run the embedded verification suite.
    Selftest,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset name ("iris" or "wine").
    #[arg(long)]
    pub dataset: Option<String>,
    /// Epoch budget.
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Gradient-difference threshold ("inf" accepted).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mini-batch size; omit for the configured value.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Output directory (overrides config and EAGLE_OUT_DIR).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for seed fan-out.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Optimizer: eagle, adam, or sgd_momentum.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Run seed (defaults to the first configured seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained network checkpoint to sweep around.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split seed for selecting the evaluation batch (defaults to the
    /// first configured seed).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct UsageArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated threshold list, e.g. "1e-3,7e-4,4e-4,1e-4".
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind> {
    match s {
        "eagle" => Ok(OptimizerKind::Eagle),
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" | "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
        other => Err(EagleError::Config(format!(
            "unknown optimizer '{other}' (expected eagle, adam, or sgd_momentum)"
        ))),
    }
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| EagleError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| EagleError::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &args.dataset {
        config.dataset = d.clone();
        // a dataset override invalidates any architecture from the file
        if args.config.is_some() {
            config.architecture = None;
        }
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(t) = args.threshold {
        config.eagle.threshold = t;
    }
    if let Some(lr) = args.lr {
        config.eagle.alpha = lr;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = Some(b);
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    } else if config.output_dir.as_os_str().is_empty() {
        if let Ok(env_out) = std::env::var("EAGLE_OUT_DIR") {
            config.output_dir = PathBuf::from(env_out);
        } else {
            config.output_dir = PathBuf::from("runs");
        }
    }
    if let Some(j) = args.jobs {
        config.jobs = Some(j);
    }
    config.validate()?;
    Ok(config)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_run_metadata(dir: &Path, config: &ExperimentConfig, started: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let effective = serde_json::to_string_pretty(config)?;
    std::fs::write(dir.join("effective_config.json"), effective)?;
    let manifest = json!({
        "command_line": std::env::args().collect::<Vec<_>>(),
        "config_hash": config.hash(),
        "started_unix": started,
        "finished_unix": unix_now(),
    });
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Landscape(args) => cmd_landscape(args),
        Command::Usage(args) => cmd_usage(args),
        Command::Selftest => cmd_selftest(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let started = unix_now();
    let mut config = load_config(&args.common)?;
    if let Some(opt) = &args.optimizer {
        config.optimizer = parse_optimizer(opt)?;
    }
    let seed = args.seed.unwrap_or(config.seeds[0]);
    config.seeds = vec![seed];
    let out = config.output_dir.clone();
    let record = bench::run_one(&config, config.optimizer, seed, Some(&out))?;
    write_run_metadata(&out, &config, started)?;
    match record.status {
        RunStatus::Completed => {
            println!(
                "completed: {} seed {} ({} epochs, final train loss {:.6})",
                config.optimizer.name(),
                seed,
                record.metrics.len(),
                record.metrics.last().map_or(f64::NAN, |m| m.train_loss)
            );
            Ok(0)
        }
        RunStatus::Diverged { epoch } => {
            eprintln!(
                "diverged: {} seed {} at epoch {epoch} (record written)",
                config.optimizer.name(),
                seed
            );
            Ok(2)
        }
    }
}

fn cmd_compare(args: CompareArgs) -> Result<i32> {
    let started = unix_now();
    let config = load_config(&args.common)?;
    let out = config.output_dir.clone();
    let result = bench::run_suite(&config, Some(&out))?;
    write_run_metadata(&out, &config, started)?;
    let diverged = result
        .records
        .iter()
        .filter(|r| matches!(r.status, RunStatus::Diverged { .. }))
        .count();
    println!(
        "compare: {} runs, {} diverged; tables in {}",
        result.records.len(),
        diverged,
        out.display()
    );
    Ok(if diverged > 0 { 2 } else { 0 })
}

fn cmd_landscape(args: LandscapeArgs) -> Result<i32> {
    let started = unix_now();
    let config = load_config(&args.common)?;
    let mut net = net::load_checkpoint(&args.checkpoint)?;
    let ds = config.load_dataset()?;
    if ds.features.cols != net.layers[0].in_dim {
        return Err(EagleError::Checkpoint(format!(
            "checkpoint expects {} input features but dataset '{}' has {}",
            net.layers[0].in_dim, ds.name, ds.features.cols
        )));
    }
    // the sweep evaluates on the full training split
    let seed = args.seed.unwrap_or(config.seeds[0]);
    let (train, _) = data::split_standardize(&ds, &{
        let mut s = config.split.clone();
        if s.seed.is_none() {
            s.seed = Some(seed);
        }
        s.resolve(seed)
    })?;
    let spec = ScanSpec {
        samples_per_layer: config.landscape_samples(net.layers.len()),
        sweep_half_width: config.landscape.sweep_half_width,
        n_points: config.landscape.n_points,
        seed: config.landscape.scan_seed,
    };
    let profiles = landscape::scan(&mut net, &spec, &train)?;
    let out = config.output_dir.clone();
    landscape::write_profiles(&out, &profiles)?;
    write_run_metadata(&out, &config, started)?;
    let convex = profiles
        .iter()
        .filter(|p| p.shape_class == landscape::ShapeClass::Convex)
        .count();
    println!(
        "landscape: {} profiles ({} convex); CSVs in {}",
        profiles.len(),
        convex,
        out.display()
    );
    Ok(0)
}

fn cmd_usage(args: UsageArgs) -> Result<i32> {
    let started = unix_now();
    let mut config = load_config(&args.common)?;
    if let Some(t) = args.thresholds {
        if t.is_empty() {
            return Err(EagleError::Config("thresholds list is empty".into()));
        }
        config.thresholds = t;
    }
    let out = config.output_dir.clone();
    let table = bench::usage_suite(&config, Some(&out))?;
    write_run_metadata(&out, &config, started)?;
    println!(
        "usage: {} thresholds x {} seeds; usage.csv in {}",
        table.rows.len(),
        table.seeds.len(),
        out.display()
    );
    Ok(0)
}

struct SelfTest {
    failures: usize,
}

impl SelfTest {
    fn check(&mut self, name: &str, ok: bool) {
        if ok {
            println!("PASS {name}");
        } else {
            println!("FAIL {name}");
            self.failures += 1;
        }
    }
}

/// Embedded verification suite: the worked secant examples, the
/// transition-pattern table, and the first-step rule.
fn cmd_selftest() -> Result<i32> {
    let mut t = SelfTest { failures: 0 };

    // worked quadratic examples
    t.check(
        "secant worked example (10 -> 8 lands on 2)",
        8.0 - optim::eagle_delta(8.0, 10.0, 12.0, 16.0) == 2.0,
    );
    t.check(
        "secant worked example (-8 -> -3 lands on 2)",
        -3.0 - optim::eagle_delta(-3.0, -8.0, -10.0, -20.0) == 2.0,
    );
    t.check(
        "secant worked example (-1 -> 5 lands on 2)",
        5.0 - optim::eagle_delta(5.0, -1.0, 6.0, -6.0) == 2.0,
    );
    let quad = data::AnalyticFn::Quadratic {
        a: 1.0,
        c: 2.0,
        d: 2.0,
    };
    t.check(
        "quadratic gradient at 10 is 16",
        quad.grad(&[10.0])[0] == 16.0,
    );
    t.check(
        "quadratic gradient at 8 is 12",
        quad.grad(&[8.0])[0] == 12.0,
    );

    // transition-pattern table over the signed-magnitude grid
    let grid = [-10.0, -0.5, 0.0, 0.5, 10.0];
    let threshold = 0.0005;
    let mut table_ok = true;
    for &gp in &grid {
        for &gc in &grid {
            let expected_eagle = transition_table_eagle(gp, gc, threshold);
            let got = optim::select_rule(gp, gc, threshold).rule == Rule::Eagle;
            if got != expected_eagle {
                table_ok = false;
            }
        }
    }
    t.check("transition table agreement (25-point grid)", table_ok);

    // first-step rule: zero previous gradient forces Adam for any k
    let mut first_ok = true;
    for i in 0..1000 {
        let k = (i as f64 - 500.0) * 0.137;
        if optim::select_rule(0.0, k, threshold).rule != Rule::Adam {
            first_ok = false;
        }
    }
    t.check("first-step rule (zero previous gradient -> Adam)", first_ok);

    t.check(
        "guard fires below threshold",
        optim::select_rule(5.0, 5.0001, threshold).rule == Rule::Adam,
    );

    if t.failures == 0 {
        println!("selftest: all checks passed");
        Ok(0)
    } else {
        eprintln!("selftest: {} check(s) failed", t.failures);
        Ok(1)
    }
}

/// Literal transcription of the transition-pattern table: the secant rule
/// is effective when the gradient magnitude shrinks within one sign, or
/// when the sign flips; zeros and magnitude growth route to Adam. The
/// |Δg| guard applies on top.
fn transition_table_eagle(gp: f64, gc: f64, threshold: f64) -> bool {
    if (gc - gp).abs() < threshold {
        return false;
    }
    if gp == 0.0 || gc == 0.0 {
        return false;
    }
    if gp.signum() != gc.signum() {
        return true; // Transition 1-3: sign flip
    }
    gc.abs() < gp.abs() // 1-1 / 1-2 effective; 2-1 / 2-2 ineffective
}
