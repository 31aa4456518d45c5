//! Minimal fully connected feedforward network with softmax cross-entropy
//! loss and hand-written backpropagation. Parameters are exposed to the
//! optimizers as one flat `f64` vector.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{EagleError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    ReLU,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// A batch of samples: feature rows plus integer class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows != labels.len() {
            return Err(EagleError::Shape(format!(
                "batch has {} input rows but {} labels",
                inputs.rows,
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row-subset of this batch, in the given order.
    pub fn select(&self, idx: &[usize]) -> Batch {
        let mut inputs = Matrix::zeros(idx.len(), self.inputs.cols);
        let mut labels = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            inputs.data[r * inputs.cols..(r + 1) * inputs.cols].copy_from_slice(self.inputs.row(i));
            labels.push(self.labels[i]);
        }
        Batch { inputs, labels }
    }
}

/// Layered feedforward model. Weight matrices are row-major `(out, in)`.
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<LayerSpec>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub rng_seed: u64,
}

/// Per-layer activations retained by the forward pass for backprop.
pub struct ForwardCache {
    /// `activations[l]` is the input to layer `l`; last entry is the logits.
    pub activations: Vec<Matrix>,
    /// Pre-activation values per layer.
    pub pre_activations: Vec<Matrix>,
}

pub fn validate_chain(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(EagleError::Config("architecture has no layers".into()));
    }
    for spec in layers {
        if spec.in_dim == 0 || spec.out_dim == 0 {
            return Err(EagleError::Config("layer dims must be positive".into()));
        }
    }
    for w in layers.windows(2) {
        if w[0].out_dim != w[1].in_dim {
            return Err(EagleError::Config(format!(
                "layer dims do not chain: {} -> {}",
                w[0].out_dim, w[1].in_dim
            )));
        }
    }
    if layers.last().unwrap().activation != Activation::Identity {
        return Err(EagleError::Config(
            "last layer must use identity activation (logits feed softmax)".into(),
        ));
    }
    Ok(())
}

/// Glorot-uniform initialization, fully determined by the seed. Biases
/// start at zero.
pub fn init(layers: &[LayerSpec], seed: u64) -> Result<Network> {
    validate_chain(layers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(layers.len());
    let mut biases = Vec::with_capacity(layers.len());
    for spec in layers {
        let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
        let mut w = Matrix::zeros(spec.out_dim, spec.in_dim);
        for v in w.data.iter_mut() {
            *v = rng.random_range(-limit..limit);
        }
        weights.push(w);
        biases.push(vec![0.0; spec.out_dim]);
    }
    Ok(Network {
        layers: layers.to_vec(),
        weights,
        biases,
        rng_seed: seed,
    })
}

impl Network {
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.in_dim * l.out_dim + l.out_dim)
            .sum()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Flat parameter vector: per layer, weights row-major then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(EagleError::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let wlen = w.data.len();
            w.data.copy_from_slice(&flat[off..off + wlen]);
            off += wlen;
            let blen = b.len();
            b.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
        Ok(())
    }

    #[allow(clippy::needless_range_loop)]
    pub fn forward(&self, batch: &Batch) -> Result<(Matrix, ForwardCache)> {
        if batch.inputs.cols != self.layers[0].in_dim {
            return Err(EagleError::Shape(format!(
                "input width {} != first layer in_dim {}",
                batch.inputs.cols, self.layers[0].in_dim
            )));
        }
        let mut activations = vec![batch.inputs.clone()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for (l, spec) in self.layers.iter().enumerate() {
            let a_in = activations.last().unwrap();
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut z = Matrix::zeros(a_in.rows, spec.out_dim);
            for r in 0..a_in.rows {
                let x = a_in.row(r);
                for o in 0..spec.out_dim {
                    let wrow = w.row(o);
                    let mut acc = b[o];
                    for (xi, wi) in x.iter().zip(wrow) {
                        acc += xi * wi;
                    }
                    z.set(r, o, acc);
                }
            }
            let mut a = z.clone();
            if spec.activation == Activation::ReLU {
                for v in a.data.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            pre_activations.push(z);
            activations.push(a);
        }
        let logits = activations.last().unwrap().clone();
        Ok((
            logits,
            ForwardCache {
                activations,
                pre_activations,
            },
        ))
    }

    /// Mean softmax cross-entropy over the batch plus the flat gradient.
    #[allow(clippy::needless_range_loop)]
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let (logits, cache) = self.forward(batch)?;
        let n = batch.len();
        let classes = self.n_classes();

        // softmax with max-subtraction; d_logits = (p - onehot) / n
        let mut loss = 0.0;
        let mut d_logits = Matrix::zeros(n, classes);
        for r in 0..n {
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - max).exp();
            }
            let y = batch.labels[r];
            loss += denom.ln() - (row[y] - max);
            for c in 0..classes {
                let p = (row[c] - max).exp() / denom;
                let target = if c == y { 1.0 } else { 0.0 };
                d_logits.set(r, c, (p - target) / n as f64);
            }
        }
        loss /= n as f64;

        // backward through the layers
        let mut grads_w: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        let mut grads_b: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut dz = d_logits;
        for (l, spec) in self.layers.iter().enumerate().rev() {
            if spec.activation == Activation::ReLU {
                let z = &cache.pre_activations[l];
                for (d, &zv) in dz.data.iter_mut().zip(&z.data) {
                    if zv <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let a_in = &cache.activations[l];
            let mut dw = Matrix::zeros(spec.out_dim, spec.in_dim);
            let mut db = vec![0.0; spec.out_dim];
            for r in 0..dz.rows {
                let drow = dz.row(r);
                let arow = a_in.row(r);
                for o in 0..spec.out_dim {
                    let d = drow[o];
                    db[o] += d;
                    let wr = &mut dw.data[o * spec.in_dim..(o + 1) * spec.in_dim];
                    for (wv, &av) in wr.iter_mut().zip(arow) {
                        *wv += d * av;
                    }
                }
            }
            if l > 0 {
                let w = &self.weights[l];
                let mut da = Matrix::zeros(dz.rows, spec.in_dim);
                for r in 0..dz.rows {
                    let drow = dz.row(r);
                    for o in 0..spec.out_dim {
                        let d = drow[o];
                        let wrow = w.row(o);
                        let arow = &mut da.data[r * spec.in_dim..(r + 1) * spec.in_dim];
                        for (av, &wv) in arow.iter_mut().zip(wrow) {
                            *av += d * wv;
                        }
                    }
                }
                dz = da;
            }
            grads_w.push(dw);
            grads_b.push(db);
        }
        grads_w.reverse();
        grads_b.reverse();

        let mut flat = Vec::with_capacity(self.param_count());
        for (dw, db) in grads_w.iter().zip(&grads_b) {
            flat.extend_from_slice(&dw.data);
            flat.extend_from_slice(db);
        }
        Ok((loss, flat))
    }

    /// Loss and accuracy with parameters frozen.
    pub fn evaluate(&self, batch: &Batch) -> Result<(f64, f64)> {
        let (logits, _) = self.forward(batch)?;
        let n = batch.len();
        let mut loss = 0.0;
        let mut correct = 0usize;
        for r in 0..n {
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &v in row {
                denom += (v - max).exp();
            }
            let y = batch.labels[r];
            loss += denom.ln() - (row[y] - max);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if pred == y {
                correct += 1;
            }
        }
        Ok((loss / n as f64, correct as f64 / n as f64))
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"EAGL";
const CHECKPOINT_VERSION: u32 = 1;

/// Write the flat parameter vector as little-endian f64 with a small
/// header carrying the layer dims.
pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(net.layers.len() as u32).to_le_bytes())?;
    for l in &net.layers {
        w.write_all(&(l.in_dim as u32).to_le_bytes())?;
        w.write_all(&(l.out_dim as u32).to_le_bytes())?;
        let act = match l.activation {
            Activation::ReLU => 0u8,
            Activation::Identity => 1u8,
        };
        w.write_all(&[act])?;
    }
    for v in net.flatten() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(EagleError::Checkpoint(format!(
            "{}: bad magic bytes",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != CHECKPOINT_VERSION {
        return Err(EagleError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    r.read_exact(&mut u32buf)?;
    let n_layers = u32::from_le_bytes(u32buf) as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        r.read_exact(&mut u32buf)?;
        let in_dim = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf)?;
        let out_dim = u32::from_le_bytes(u32buf) as usize;
        let mut act = [0u8; 1];
        r.read_exact(&mut act)?;
        let activation = match act[0] {
            0 => Activation::ReLU,
            1 => Activation::Identity,
            x => {
                return Err(EagleError::Checkpoint(format!(
                    "unknown activation tag {x}"
                )))
            }
        };
        layers.push(LayerSpec {
            in_dim,
            out_dim,
            activation,
        });
    }
    let mut net = init(&layers, 0)?;
    let mut flat = vec![0.0; net.param_count()];
    let mut f64buf = [0u8; 8];
    for v in flat.iter_mut() {
        r.read_exact(&mut f64buf)?;
        *v = f64::from_le_bytes(f64buf);
    }
    net.unflatten(&flat)?;
    Ok(net)
}
