//! Dataset ingestion and preprocessing, plus analytic functions used to
//! verify the optimizers in isolation.
//!
//! The two UCI datasets the experiments use are embedded in the binary so
//! nothing here touches the network.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::net::{Batch, Matrix};
use crate::{EagleError, Result};

const IRIS_CSV: &str = include_str!("../data/iris.csv");
const WINE_CSV: &str = include_str!("../data/wine.csv");

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Label column by name (requires a header) or by index.
    pub label_column: ColumnRef,
    pub has_header: bool,
    /// Class names in label order; classes are assigned by first
    /// appearance when absent.
    #[serde(default)]
    pub classes: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl CsvSchema {
    pub fn label_named(name: &str) -> Self {
        Self {
            label_column: ColumnRef::Name(name.to_string()),
            has_header: true,
            classes: None,
        }
    }
}

/// Deterministic train/test split parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            standardize: true,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(EagleError::Config(
                "train_fraction must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Load one of the embedded datasets by name ("iris" or "wine").
pub fn builtin(name: &str) -> Result<Dataset> {
    let (csv, label) = match name {
        "iris" => (IRIS_CSV, "class"),
        "wine" => (WINE_CSV, "class"),
        other => {
            return Err(EagleError::Data(format!(
                "unknown builtin dataset '{other}' (expected 'iris' or 'wine')"
            )))
        }
    };
    parse_csv(csv, &CsvSchema::label_named(label), name)
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| EagleError::Data(format!("{}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_csv(&content, schema, &name)
}

fn parse_csv(content: &str, schema: &CsvSchema, name: &str) -> Result<Dataset> {
    let mut lines = content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());

    let mut feature_names = Vec::new();
    let label_idx;
    if schema.has_header {
        let (_, header) = lines
            .next()
            .ok_or_else(|| EagleError::Data(format!("{name}: empty file")))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        label_idx = match &schema.label_column {
            ColumnRef::Index(i) => *i,
            ColumnRef::Name(n) => cols
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| EagleError::Data(format!("{name}: no column named '{n}'")))?,
        };
        if label_idx >= cols.len() {
            return Err(EagleError::Data(format!(
                "{name}: label column {label_idx} out of range"
            )));
        }
        feature_names = cols
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_idx)
            .map(|(_, c)| c.to_string())
            .collect();
    } else {
        label_idx = match &schema.label_column {
            ColumnRef::Index(i) => *i,
            ColumnRef::Name(_) => {
                return Err(EagleError::Data(format!(
                    "{name}: label column by name requires a header row"
                )))
            }
        };
    }

    let mut class_map: HashMap<String, usize> = HashMap::new();
    if let Some(classes) = &schema.classes {
        for (i, c) in classes.iter().enumerate() {
            class_map.insert(c.clone(), i);
        }
    }
    let fixed_classes = schema.classes.is_some();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(EagleError::Data(format!(
                    "{name} line {}: expected {w} columns, found {}",
                    line_no + 1,
                    cells.len()
                )))
            }
            _ => {}
        }
        if label_idx >= cells.len() {
            return Err(EagleError::Data(format!(
                "{name} line {}: label column {label_idx} out of range",
                line_no + 1
            )));
        }
        let mut row = Vec::with_capacity(cells.len() - 1);
        for (i, cell) in cells.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                EagleError::Data(format!(
                    "{name} line {}: non-numeric feature value '{cell}'",
                    line_no + 1
                ))
            })?;
            row.push(v);
        }
        let class = cells[label_idx];
        let label = match class_map.get(class) {
            Some(&l) => l,
            None if fixed_classes => {
                return Err(EagleError::Data(format!(
                    "{name} line {}: unknown class label '{class}'",
                    line_no + 1
                )))
            }
            None => {
                let l = class_map.len();
                class_map.insert(class.to_string(), l);
                l
            }
        };
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(EagleError::Data(format!("{name}: no data rows")));
    }
    if feature_names.is_empty() {
        feature_names = (0..rows[0].len()).map(|i| format!("f{i}")).collect();
    }
    Ok(Dataset {
        name: name.to_string(),
        features: Matrix::from_rows(&rows),
        labels,
        feature_names,
        n_classes: class_map.len(),
    })
}

/// Shuffled split by seed; standardization statistics come from the train
/// portion only.
pub fn split_standardize(ds: &Dataset, spec: &SplitSpec) -> Result<(Batch, Batch)> {
    spec.validate()?;
    let n = ds.labels.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    idx.shuffle(&mut rng);
    let n_train = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let all = Batch::new(ds.features.clone(), ds.labels.clone())?;
    let mut train = all.select(&idx[..n_train]);
    let mut test = all.select(&idx[n_train..]);

    if spec.standardize {
        let cols = train.inputs.cols;
        for c in 0..cols {
            let mut mean = 0.0;
            for r in 0..train.inputs.rows {
                mean += train.inputs.get(r, c);
            }
            mean /= train.inputs.rows as f64;
            let mut var = 0.0;
            for r in 0..train.inputs.rows {
                let d = train.inputs.get(r, c) - mean;
                var += d * d;
            }
            var /= train.inputs.rows as f64;
            let mut std = var.sqrt();
            if std < 1e-12 {
                eprintln!(
                    "warning: feature '{}' has zero variance on the train split; stddev clamped to 1",
                    ds.feature_names.get(c).map(String::as_str).unwrap_or("?")
                );
                std = 1.0;
            }
            for r in 0..train.inputs.rows {
                let v = (train.inputs.get(r, c) - mean) / std;
                train.inputs.set(r, c, v);
            }
            for r in 0..test.inputs.rows {
                let v = (test.inputs.get(r, c) - mean) / std;
                test.inputs.set(r, c, v);
            }
        }
    }
    Ok((train, test))
}

/// Analytic test functions with closed-form gradients.
#[derive(Debug, Clone, Copy)]
pub enum AnalyticFn {
    /// a(θ − c)² + d
    Quadratic { a: f64, c: f64, d: f64 },
    /// (1 − x)² + 100(y − x²)²
    Rosenbrock2D,
    /// |θ − c|
    AbsVal { c: f64 },
}

impl AnalyticFn {
    pub fn dim(&self) -> usize {
        match self {
            AnalyticFn::Rosenbrock2D => 2,
            _ => 1,
        }
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        match *self {
            AnalyticFn::Quadratic { a, c, d } => {
                let t = theta[0] - c;
                a * t * t + d
            }
            AnalyticFn::Rosenbrock2D => {
                let (x, y) = (theta[0], theta[1]);
                (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
            }
            AnalyticFn::AbsVal { c } => (theta[0] - c).abs(),
        }
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        match *self {
            AnalyticFn::Quadratic { a, c, .. } => vec![2.0 * a * (theta[0] - c)],
            AnalyticFn::Rosenbrock2D => {
                let (x, y) = (theta[0], theta[1]);
                vec![
                    -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
                    200.0 * (y - x * x),
                ]
            }
            AnalyticFn::AbsVal { c } => vec![(theta[0] - c).signum()],
        }
    }
}
