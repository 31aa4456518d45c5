//! Multi-seed experiment harness: trains a model with a chosen optimizer,
//! records per-epoch metrics including the switched-rule usage rate, and
//! aggregates across seeds into the CSV tables the CLI emits.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, CsvSchema, Dataset, SplitSpec};
use crate::net::{self, Activation, LayerSpec};
use crate::optim::{self, AdamOptimizer, EagleConfig, MomentumState, OptimizerState, Rule};
use crate::{EagleError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Eagle,
    Adam,
    #[serde(alias = "sgd")]
    SgdMomentum,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Eagle => "eagle",
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd_momentum",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub mu: f64,
    pub lr: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { mu: 0.9, lr: 0.01 }
    }
}

/// Train/test split options; `seed: null` means "reuse the run seed" so
/// each seeded run draws its own split.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    pub standardize: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: None,
            standardize: true,
        }
    }
}

impl SplitConfig {
    pub fn resolve(&self, run_seed: u64) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            seed: self.seed.unwrap_or(run_seed),
            standardize: self.standardize,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSourceConfig {
    pub path: PathBuf,
    #[serde(flatten)]
    pub schema: CsvSchema,
}

/// Landscape-scan options carried in the experiment config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LandscapeConfig {
    /// Parameters to sample per layer; defaults depend on the dataset
    /// (iris: [50, 40], wine: [60, 30]).
    #[serde(default)]
    pub samples_per_layer: Option<Vec<usize>>,
    pub sweep_half_width: f64,
    pub n_points: usize,
    pub scan_seed: u64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            samples_per_layer: None,
            sweep_half_width: 5.0,
            n_points: 1000,
            scan_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: String,
    /// External CSV source; used when `dataset` is not a builtin name.
    #[serde(default)]
    pub csv: Option<CsvSourceConfig>,
    /// Layer chain; derived from the dataset when absent.
    #[serde(default)]
    pub architecture: Option<Vec<LayerSpec>>,
    pub optimizer: OptimizerKind,
    /// Optimizers for `compare`; defaults to all three.
    #[serde(default)]
    pub optimizers: Option<Vec<OptimizerKind>>,
    pub eagle: EagleConfig,
    pub sgd: SgdConfig,
    pub epochs: u32,
    pub seeds: Vec<u64>,
    pub split: SplitConfig,
    /// Mini-batch size; `null` trains full-batch (one step per epoch).
    #[serde(default)]
    pub batch_size: Option<usize>,
    pub output_dir: PathBuf,
    /// Thresholds for the usage-rate study.
    pub thresholds: Vec<f64>,
    /// Epoch grid for the early-loss table.
    pub metric3_epochs: Vec<u32>,
    pub landscape: LandscapeConfig,
    /// Worker count for seed fan-out; defaults to the logical core count.
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "iris".into(),
            csv: None,
            architecture: None,
            optimizer: OptimizerKind::Eagle,
            optimizers: None,
            eagle: EagleConfig::default(),
            sgd: SgdConfig::default(),
            epochs: 100,
            seeds: (1..=10).collect(),
            split: SplitConfig::default(),
            batch_size: Some(16),
            output_dir: PathBuf::from("runs"),
            thresholds: vec![1e-3, 7e-4, 4e-4, 1e-4],
            metric3_epochs: vec![2, 4, 6, 8, 10],
            landscape: LandscapeConfig::default(),
            jobs: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(EagleError::Config("epochs must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(EagleError::Config("seeds must be nonempty".into()));
        }
        if self.csv.is_none() && !matches!(self.dataset.as_str(), "iris" | "wine") {
            return Err(EagleError::Config(format!(
                "unknown dataset '{}' and no csv source given",
                self.dataset
            )));
        }
        if let Some(b) = self.batch_size {
            if b == 0 {
                return Err(EagleError::Config("batch_size must be >= 1".into()));
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(EagleError::Config(
                "split.train_fraction must be in (0, 1)".into(),
            ));
        }
        self.eagle.validate()?;
        if let Some(arch) = &self.architecture {
            net::validate_chain(arch)?;
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.csv {
            Some(src) => data::load_csv(&src.path, &src.schema),
            None => data::builtin(&self.dataset),
        }
    }

    /// The layer chain to train: explicit, or the per-dataset default
    /// (iris 4-25-3, wine 13-15-3, ReLU hidden).
    pub fn architecture_for(&self, ds: &Dataset) -> Vec<LayerSpec> {
        if let Some(arch) = &self.architecture {
            return arch.clone();
        }
        let hidden = match self.dataset.as_str() {
            "wine" => 15,
            _ => 25,
        };
        vec![
            LayerSpec {
                in_dim: ds.features.cols,
                out_dim: hidden,
                activation: Activation::ReLU,
            },
            LayerSpec {
                in_dim: hidden,
                out_dim: ds.n_classes,
                activation: Activation::Identity,
            },
        ]
    }

    /// Default per-layer sampling counts for the landscape scan.
    pub fn landscape_samples(&self, n_layers: usize) -> Vec<usize> {
        if let Some(s) = &self.landscape.samples_per_layer {
            return s.clone();
        }
        match (self.dataset.as_str(), n_layers) {
            ("wine", 2) => vec![60, 30],
            (_, 2) => vec![50, 40],
            (_, n) => vec![20; n],
        }
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// Fraction of scalar updates this epoch that took the secant branch;
    /// 0 for non-switched optimizers.
    pub eagle_usage_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    /// Training loss went non-finite at this epoch; the run halted there.
    Diverged {
        epoch: u32,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub status: RunStatus,
    pub metrics: Vec<EpochMetrics>,
    pub wall_secs: f64,
    pub checkpoint_path: Option<PathBuf>,
}

impl RunRecord {
    /// Train loss at a 1-based epoch; NaN if the run halted before it.
    pub fn train_loss_at(&self, epoch: u32) -> f64 {
        self.metrics
            .iter()
            .find(|m| m.epoch == epoch)
            .map_or(f64::NAN, |m| m.train_loss)
    }

    pub fn usage_at(&self, epoch: u32) -> f64 {
        self.metrics
            .iter()
            .find(|m| m.epoch == epoch)
            .map_or(f64::NAN, |m| m.eagle_usage_rate)
    }

    pub fn usage_average(&self) -> f64 {
        if self.metrics.is_empty() {
            return f64::NAN;
        }
        self.metrics.iter().map(|m| m.eagle_usage_rate).sum::<f64>() / self.metrics.len() as f64
    }
}

enum Driver {
    Eagle(OptimizerState),
    Adam(AdamOptimizer),
    Sgd(MomentumState),
}

impl Driver {
    fn step(&mut self, params: &mut [f64], grads: &[f64], cfg: &ExperimentConfig) -> usize {
        match self {
            Driver::Eagle(state) => optim::eagle_step(state, params, grads, &cfg.eagle),
            Driver::Adam(adam) => {
                adam.step(params, grads);
                0
            }
            Driver::Sgd(state) => {
                optim::sgd_momentum_step(state, params, grads);
                0
            }
        }
    }
}

fn epoch_rng(seed: u64, epoch: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Train one (optimizer, seed) pair for the configured epoch budget.
///
/// Writes `metrics_<optimizer>_<seed>.csv` and a final checkpoint when
/// `out_dir` is given. A non-finite train loss marks the run DIVERGED and
/// halts it; the record is still returned.
pub fn run_one(
    config: &ExperimentConfig,
    optimizer: OptimizerKind,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<RunRecord> {
    config.validate()?;
    let started = Instant::now();

    let ds = config.load_dataset()?;
    let (train, test) = data::split_standardize(&ds, &config.split.resolve(seed))?;
    let arch = config.architecture_for(&ds);
    let mut net = net::init(&arch, seed)?;
    let mut params = net.flatten();

    let mut driver = match optimizer {
        OptimizerKind::Eagle => Driver::Eagle(OptimizerState::new(params.len(), &params)),
        OptimizerKind::Adam => Driver::Adam(AdamOptimizer::new(params.len(), config.eagle)),
        OptimizerKind::SgdMomentum => Driver::Sgd(MomentumState::new(
            params.len(),
            config.sgd.mu,
            config.sgd.lr,
        )),
    };

    let n_train = train.len();
    let batch_size = config.batch_size.unwrap_or(n_train).min(n_train);
    let mut metrics = Vec::with_capacity(config.epochs as usize);
    let mut status = RunStatus::Completed;

    'epochs: for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        if batch_size < n_train {
            order.shuffle(&mut epoch_rng(seed, epoch));
        }
        let mut eagle_updates = 0usize;
        let mut steps = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch = train.select(chunk);
            net.unflatten(&params)?;
            let (loss, grads) = net.loss_and_grad(&batch)?;
            if !loss.is_finite() {
                status = RunStatus::Diverged { epoch };
                metrics.push(EpochMetrics {
                    epoch,
                    train_loss: loss,
                    train_acc: f64::NAN,
                    test_loss: f64::NAN,
                    test_acc: f64::NAN,
                    eagle_usage_rate: f64::NAN,
                });
                break 'epochs;
            }
            eagle_updates += driver.step(&mut params, &grads, config);
            steps += 1;
        }
        net.unflatten(&params)?;
        let (train_loss, train_acc) = net.evaluate(&train)?;
        let (test_loss, test_acc) = net.evaluate(&test)?;
        let usage = eagle_updates as f64 / (params.len() * steps) as f64;
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
            eagle_usage_rate: usage,
        });
        if !train_loss.is_finite() {
            status = RunStatus::Diverged { epoch };
            break;
        }
    }

    net.unflatten(&params)?;
    let mut checkpoint_path = None;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let metrics_path = dir.join(format!("metrics_{}_{}.csv", optimizer.name(), seed));
        let record_tmp = RunRecord {
            config_hash: config.hash(),
            optimizer,
            seed,
            status,
            metrics: metrics.clone(),
            wall_secs: 0.0,
            checkpoint_path: None,
        };
        write_metrics_csv(&metrics_path, &record_tmp)?;
        let ckpt = dir.join(format!("checkpoint_{}_{}.bin", optimizer.name(), seed));
        net::save_checkpoint(&net, &ckpt)?;
        checkpoint_path = Some(ckpt);
    }

    Ok(RunRecord {
        config_hash: config.hash(),
        optimizer,
        seed,
        status,
        metrics,
        wall_secs: started.elapsed().as_secs_f64(),
        checkpoint_path,
    })
}

/// Run `f` over `items` on up to `jobs` worker threads, preserving the
/// input order in the output.
fn map_parallel<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<Result<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

fn default_jobs(config: &ExperimentConfig) -> usize {
    config.jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub optimizer: OptimizerKind,
    pub epoch: u32,
    /// Seeds contributing to the means (diverged seeds are excluded).
    pub n: usize,
    pub train_loss_mean: f64,
    pub train_loss_std: f64,
    pub train_acc_mean: f64,
    pub train_acc_std: f64,
    pub test_loss_mean: f64,
    pub test_loss_std: f64,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
    pub eagle_usage_rate_mean: f64,
    pub eagle_usage_rate_std: f64,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub records: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
    /// Per optimizer: mean train loss at each `metric3_epochs` entry.
    pub metric3: Vec<(OptimizerKind, Vec<f64>)>,
}

/// Mean and population standard deviation over the finite entries.
pub fn mean_std(values: &[f64]) -> (f64, f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (f64::NAN, f64::NAN, 0);
    }
    let n = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / n;
    let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt(), finite.len())
}

/// Train every (optimizer, seed) pair and aggregate. Writes per-run
/// metrics CSVs plus `summary.csv` and `metric3.csv` when `out_dir` is
/// given.
pub fn run_suite(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<SuiteResult> {
    config.validate()?;
    let optimizers = config.optimizers.clone().unwrap_or_else(|| {
        vec![
            OptimizerKind::Eagle,
            OptimizerKind::Adam,
            OptimizerKind::SgdMomentum,
        ]
    });

    let mut pairs = Vec::new();
    for &opt in &optimizers {
        for &seed in &config.seeds {
            pairs.push((opt, seed));
        }
    }
    let results = map_parallel(default_jobs(config), &pairs, |&(opt, seed)| {
        run_one(config, opt, seed, out_dir)
    });
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(r?);
    }
    // Aggregation must not depend on completion order.
    records.sort_by_key(|r| (r.optimizer.name(), r.seed));

    let mut summary = Vec::new();
    let mut metric3 = Vec::new();
    for &opt in &optimizers {
        let group: Vec<&RunRecord> = records.iter().filter(|r| r.optimizer == opt).collect();
        for epoch in 1..=config.epochs {
            let col = |f: &dyn Fn(&EpochMetrics) -> f64| -> Vec<f64> {
                group
                    .iter()
                    .map(|r| {
                        r.metrics
                            .iter()
                            .find(|m| m.epoch == epoch)
                            .map_or(f64::NAN, f)
                    })
                    .collect()
            };
            let (tl_m, tl_s, n) = mean_std(&col(&|m| m.train_loss));
            let (ta_m, ta_s, _) = mean_std(&col(&|m| m.train_acc));
            let (el_m, el_s, _) = mean_std(&col(&|m| m.test_loss));
            let (ea_m, ea_s, _) = mean_std(&col(&|m| m.test_acc));
            let (u_m, u_s, _) = mean_std(&col(&|m| m.eagle_usage_rate));
            summary.push(SummaryRow {
                optimizer: opt,
                epoch,
                n,
                train_loss_mean: tl_m,
                train_loss_std: tl_s,
                train_acc_mean: ta_m,
                train_acc_std: ta_s,
                test_loss_mean: el_m,
                test_loss_std: el_s,
                test_acc_mean: ea_m,
                test_acc_std: ea_s,
                eagle_usage_rate_mean: u_m,
                eagle_usage_rate_std: u_s,
            });
        }
        let row: Vec<f64> = config
            .metric3_epochs
            .iter()
            .map(|&e| {
                let losses: Vec<f64> = group.iter().map(|r| r.train_loss_at(e)).collect();
                mean_std(&losses).0
            })
            .collect();
        metric3.push((opt, row));
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_summary_csv(&dir.join("summary.csv"), &summary)?;
        write_metric3_csv(&dir.join("metric3.csv"), &config.metric3_epochs, &metric3)?;
    }
    Ok(SuiteResult {
        records,
        summary,
        metric3,
    })
}

/// One threshold's usage-rate rows in the study table.
#[derive(Debug, Clone)]
pub struct UsageRow {
    pub threshold: f64,
    /// Per-seed usage at the early probe epoch (10, or the last epoch if
    /// the run is shorter), at the final epoch, and averaged over all
    /// epochs; each with a trailing cross-seed average.
    pub early: Vec<f64>,
    pub final_: Vec<f64>,
    pub average: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct UsageTable {
    pub seeds: Vec<u64>,
    pub early_epoch: u32,
    pub final_epoch: u32,
    pub rows: Vec<UsageRow>,
}

fn with_mean(mut per_seed: Vec<f64>) -> Vec<f64> {
    let (mean, _, _) = mean_std(&per_seed);
    per_seed.push(mean);
    per_seed
}

/// The threshold study: trains the switched optimizer once per
/// (threshold, seed) and tabulates usage rates. Writes `usage.csv` when
/// `out_dir` is given.
pub fn usage_suite(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<UsageTable> {
    config.validate()?;
    let early_epoch = 10.min(config.epochs);
    let final_epoch = config.epochs;
    let mut pairs = Vec::new();
    for &t in &config.thresholds {
        for &seed in &config.seeds {
            pairs.push((t, seed));
        }
    }
    let results = map_parallel(default_jobs(config), &pairs, |&(t, seed)| {
        let mut cfg = config.clone();
        cfg.eagle.threshold = t;
        run_one(&cfg, OptimizerKind::Eagle, seed, None)
    });
    let mut records = Vec::new();
    for r in results {
        records.push(r?);
    }

    let mut rows = Vec::new();
    for (ti, &t) in config.thresholds.iter().enumerate() {
        let group = &records[ti * config.seeds.len()..(ti + 1) * config.seeds.len()];
        rows.push(UsageRow {
            threshold: t,
            early: with_mean(group.iter().map(|r| r.usage_at(early_epoch)).collect()),
            final_: with_mean(group.iter().map(|r| r.usage_at(final_epoch)).collect()),
            average: with_mean(group.iter().map(|r| r.usage_average()).collect()),
        });
    }
    let table = UsageTable {
        seeds: config.seeds.clone(),
        early_epoch,
        final_epoch,
        rows,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_usage_csv(&dir.join("usage.csv"), &table)?;
    }
    Ok(table)
}

/// Evaluate the rule choice per scalar per threshold against a frozen
/// state, without stepping. Returns the secant-branch count per threshold.
pub fn usage_probe(state: &OptimizerState, grads: &[f64], thresholds: &[f64]) -> Vec<usize> {
    assert_eq!(state.len(), grads.len(), "grads length mismatch");
    thresholds
        .iter()
        .map(|&t| {
            grads
                .iter()
                .zip(&state.grad_prev)
                .filter(|&(&g, &gp)| optim::select_rule(gp, g, t).rule == Rule::Eagle)
                .count()
        })
        .collect()
}

/// Scalar-function training record for divergence observability tests.
#[derive(Debug, Clone)]
pub struct ScalarRunRecord {
    pub status: RunStatus,
    pub losses: Vec<f64>,
    pub thetas: Vec<f64>,
}

/// Drive the switched optimizer on a scalar analytic loss. With
/// `guard_enabled = false` the condition1 guard is bypassed so the
/// divergence it prevents becomes observable; a non-finite loss yields a
/// DIVERGED record instead of an error.
pub fn run_scalar(
    eval: &dyn Fn(f64) -> f64,
    grad: &dyn Fn(f64) -> f64,
    theta0: f64,
    steps: u32,
    config: &EagleConfig,
    guard_enabled: bool,
) -> ScalarRunRecord {
    let mut params = vec![theta0];
    let mut state = OptimizerState::new(1, &params);
    let mut losses = Vec::new();
    let mut thetas = vec![theta0];
    let mut status = RunStatus::Completed;
    for step in 1..=steps {
        let g = vec![grad(params[0])];
        if guard_enabled {
            optim::eagle_step(&mut state, &mut params, &g, config);
        } else {
            optim::eagle_step_unguarded(&mut state, &mut params, &g, config);
        }
        let loss = eval(params[0]);
        losses.push(loss);
        thetas.push(params[0]);
        if !loss.is_finite() {
            status = RunStatus::Diverged { epoch: step };
            break;
        }
    }
    ScalarRunRecord {
        status,
        losses,
        thetas,
    }
}

/// 17-significant-digit float formatting for the CSV outputs.
pub fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn write_metrics_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let mut out = String::from("epoch,train_loss,train_acc,test_loss,test_acc,eagle_usage_rate\n");
    for m in &record.metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch,
            fmt_float(m.train_loss),
            fmt_float(m.train_acc),
            fmt_float(m.test_loss),
            fmt_float(m.test_acc),
            fmt_float(m.eagle_usage_rate)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut out = String::from(
        "optimizer,epoch,n,train_loss_mean,train_loss_std,train_acc_mean,train_acc_std,\
         test_loss_mean,test_loss_std,test_acc_mean,test_acc_std,\
         eagle_usage_rate_mean,eagle_usage_rate_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.optimizer.name(),
            r.epoch,
            r.n,
            fmt_float(r.train_loss_mean),
            fmt_float(r.train_loss_std),
            fmt_float(r.train_acc_mean),
            fmt_float(r.train_acc_std),
            fmt_float(r.test_loss_mean),
            fmt_float(r.test_loss_std),
            fmt_float(r.test_acc_mean),
            fmt_float(r.test_acc_std),
            fmt_float(r.eagle_usage_rate_mean),
            fmt_float(r.eagle_usage_rate_std)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_metric3_csv(
    path: &Path,
    epochs: &[u32],
    rows: &[(OptimizerKind, Vec<f64>)],
) -> Result<()> {
    let mut out = String::from("optimizer");
    for e in epochs {
        out.push_str(&format!(",epoch_{e}"));
    }
    out.push('\n');
    for (opt, losses) in rows {
        out.push_str(opt.name());
        for l in losses {
            out.push(',');
            out.push_str(&fmt_float(*l));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn write_usage_csv(path: &Path, table: &UsageTable) -> Result<()> {
    let mut out = String::from("threshold,stat");
    for s in &table.seeds {
        out.push_str(&format!(",seed_{s}"));
    }
    out.push_str(",average\n");
    for row in &table.rows {
        for (stat, vals) in [
            (format!("epoch_{}", table.early_epoch), &row.early),
            (format!("epoch_{}", table.final_epoch), &row.final_),
            ("average".to_string(), &row.average),
        ] {
            out.push_str(&fmt_float(row.threshold));
            out.push(',');
            out.push_str(&stat);
            for v in vals {
                out.push(',');
                out.push_str(&fmt_float(*v));
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim;
    use proptest::prelude::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            epochs: 3,
            seeds: vec![1, 2],
            jobs: Some(2),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = ExperimentConfig {
            epochs: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_dataset_rejected() {
        let cfg = ExperimentConfig {
            dataset: "cifar".into(),
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_round_trip_preserves_hash() {
        let cfg = tiny_config();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg.hash(), back.hash());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let json = r#"{"dataset":"iris","optimizre":"eagle"}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(json).is_err());
    }

    #[test]
    fn run_one_is_deterministic() {
        let cfg = tiny_config();
        let a = run_one(&cfg, OptimizerKind::Eagle, 5, None).unwrap();
        let b = run_one(&cfg, OptimizerKind::Eagle, 5, None).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.metrics.len(), 3);
        assert!(a.metrics.iter().all(|m| m.train_loss.is_finite()));
    }

    #[test]
    fn first_epoch_full_batch_usage_is_zero() {
        // Full batch => one step in epoch 1, which is always the fallback rule.
        let cfg = ExperimentConfig {
            epochs: 1,
            batch_size: None,
            ..tiny_config()
        };
        let rec = run_one(&cfg, OptimizerKind::Eagle, 3, None).unwrap();
        assert_eq!(rec.metrics[0].eagle_usage_rate, 0.0);
    }

    #[test]
    fn infinite_threshold_matches_adam_exactly() {
        let mut cfg = tiny_config();
        cfg.eagle.threshold = f64::INFINITY;
        let switched = run_one(&cfg, OptimizerKind::Eagle, 9, None).unwrap();
        let adam = run_one(&cfg, OptimizerKind::Adam, 9, None).unwrap();
        for (s, a) in switched.metrics.iter().zip(&adam.metrics) {
            assert_eq!(s.train_loss.to_bits(), a.train_loss.to_bits());
            assert_eq!(s.test_loss.to_bits(), a.test_loss.to_bits());
            assert_eq!(s.eagle_usage_rate, 0.0);
        }
    }

    #[test]
    fn suite_aggregation_matches_direct_recomputation() {
        let mut cfg = tiny_config();
        cfg.optimizers = Some(vec![OptimizerKind::Eagle, OptimizerKind::Adam]);
        let suite = run_suite(&cfg, None).unwrap();
        assert_eq!(suite.summary.len(), 2 * 3);
        for row in &suite.summary {
            let losses: Vec<f64> = suite
                .records
                .iter()
                .filter(|r| r.optimizer == row.optimizer)
                .map(|r| r.train_loss_at(row.epoch))
                .collect();
            let (mean, std, n) = mean_std(&losses);
            assert_eq!(row.train_loss_mean, mean);
            assert_eq!(row.train_loss_std, std);
            assert_eq!(row.n, n);
        }
        // metric3 rows come from the same records
        for (opt, vals) in &suite.metric3 {
            for (e, v) in cfg.metric3_epochs.iter().zip(vals) {
                let losses: Vec<f64> = suite
                    .records
                    .iter()
                    .filter(|r| r.optimizer == *opt)
                    .map(|r| r.train_loss_at(*e))
                    .collect();
                let expect = mean_std(&losses).0;
                if v.is_nan() {
                    assert!(expect.is_nan());
                } else {
                    assert_eq!(*v, expect);
                }
            }
        }
    }

    #[test]
    fn suite_writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.optimizers = Some(vec![OptimizerKind::Adam]);
        cfg.seeds = vec![4];
        run_suite(&cfg, Some(dir.path())).unwrap();
        for f in [
            "summary.csv",
            "metric3.csv",
            "metrics_adam_4.csv",
            "checkpoint_adam_4.bin",
        ] {
            assert!(dir.path().join(f).exists(), "{f} missing");
        }
        let metrics = std::fs::read_to_string(dir.path().join("metrics_adam_4.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 1 + 3);
        assert!(metrics.starts_with("epoch,train_loss,"));
    }

    #[test]
    fn usage_probe_counts_match_manual_scan() {
        let params = vec![0.0; 4];
        let mut state = OptimizerState::new(4, &params);
        state.grad_prev = vec![0.5, -0.2, 0.1, 0.3];
        let grads = vec![0.4, 0.2, 0.1, -0.3];
        let thresholds = [1e-3, 0.15, f64::INFINITY];
        let counts = usage_probe(&state, &grads, &thresholds);
        for (&t, &c) in thresholds.iter().zip(&counts) {
            let manual = grads
                .iter()
                .zip(&state.grad_prev)
                .filter(|&(&g, &gp)| optim::select_rule(gp, g, t).rule == optim::Rule::Eagle)
                .count();
            assert_eq!(c, manual, "threshold {t}");
        }
        assert_eq!(*counts.last().unwrap(), 0);
    }

    #[test]
    fn scalar_run_diverges_without_guard_on_plateau() {
        // A near-flat gradient makes the secant step enormous; the loss is
        // defined to overflow away from the plateau.
        let eval = |theta: f64| (theta.abs()).exp();
        let grad = |theta: f64| 1e-3 + 1e-12 * theta;
        let config = EagleConfig::default();
        let rec = run_scalar(&eval, &grad, 0.0, 50, &config, false);
        assert!(matches!(rec.status, RunStatus::Diverged { .. }));
        assert!(!rec.losses.last().unwrap().is_finite());

        let guarded = run_scalar(&eval, &grad, 0.0, 50, &config, true);
        assert_eq!(guarded.status, RunStatus::Completed);
        assert!(guarded.losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn fmt_float_is_17_significant_digits_and_round_trips() {
        let v = std::f64::consts::PI;
        let s = fmt_float(v);
        let back: f64 = s.parse().unwrap();
        assert_eq!(back.to_bits(), v.to_bits());
        assert_eq!(fmt_float(f64::NAN), "NaN");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Lowering the threshold can only move scalars from the fallback
        /// branch to the secant branch.
        #[test]
        fn usage_probe_monotone_in_threshold(
            grads in prop::collection::vec(-1.0f64..1.0, 1..20),
            prevs in prop::collection::vec(-1.0f64..1.0, 1..20),
            mut ts in prop::collection::vec(1e-6f64..1e-1, 2..5),
        ) {
            let n = grads.len().min(prevs.len());
            let params = vec![0.0; n];
            let mut state = OptimizerState::new(n, &params);
            state.grad_prev = prevs[..n].to_vec();
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let counts = usage_probe(&state, &grads[..n], &ts);
            for w in counts.windows(2) {
                prop_assert!(w[0] >= w[1], "counts not monotone: {counts:?}");
            }
        }
    }
}
