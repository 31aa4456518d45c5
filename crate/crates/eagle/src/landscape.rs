//! One-parameter loss sweeps around a trained reference point, with a
//! deterministic shape classifier for the resulting profiles.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::fmt_float;
use crate::net::{Batch, Network};
use crate::{EagleError, Result};

#[derive(Debug, Clone)]
pub struct ScanSpec {
    /// Parameters to sample from each layer's flat range (weights then
    /// biases), uniform without replacement.
    pub samples_per_layer: Vec<usize>,
    pub sweep_half_width: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl ScanSpec {
    // `!(x > 0)` deliberately rejects NaN as well
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.n_points < 3 {
            return Err(EagleError::Config("n_points must be >= 3".into()));
        }
        if !(self.sweep_half_width > 0.0) {
            return Err(EagleError::Config("sweep_half_width must be > 0".into()));
        }
        if self.samples_per_layer.len() != n_layers {
            return Err(EagleError::Config(format!(
                "samples_per_layer has {} entries for {} layers",
                self.samples_per_layer.len(),
                n_layers
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.sweep_half_width / self.n_points as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeClass {
    Convex,
    Oscillatory,
    FlatOrLinear,
    SignChanging,
    Other,
}

impl ShapeClass {
    pub fn name(&self) -> &'static str {
        match self {
            ShapeClass::Convex => "convex",
            ShapeClass::Oscillatory => "oscillatory",
            ShapeClass::FlatOrLinear => "flat_or_linear",
            ShapeClass::SignChanging => "sign_changing",
            ShapeClass::Other => "other",
        }
    }
}

/// One parameter's 1-D loss sweep.
#[derive(Debug, Clone)]
pub struct LandscapeProfile {
    /// (layer index, flat offset within that layer's weights+biases).
    pub param_id: (usize, usize),
    pub reference_value: f64,
    pub reference_loss: f64,
    pub sweep_values: Vec<f64>,
    pub losses: Vec<f64>,
    pub shape_class: ShapeClass,
}

impl LandscapeProfile {
    pub fn loss_range(&self) -> f64 {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &l in &self.losses {
            min = min.min(l);
            max = max.max(l);
        }
        max - min
    }
}

fn layer_offsets(net: &Network) -> Vec<(usize, usize)> {
    // flat range [start, start+len) per layer
    let mut out = Vec::with_capacity(net.layers.len());
    let mut start = 0;
    for l in &net.layers {
        let len = l.in_dim * l.out_dim + l.out_dim;
        out.push((start, len));
        start += len;
    }
    out
}

/// Sweep each sampled parameter across the uniform grid, evaluating the
/// full-batch loss at every point. The network is restored bitwise.
pub fn scan(net: &mut Network, spec: &ScanSpec, batch: &Batch) -> Result<Vec<LandscapeProfile>> {
    spec.validate(net.layers.len())?;
    let reference = net.flatten();
    let (reference_loss, _) = net.evaluate(batch)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offsets = layer_offsets(net);
    let mut targets: Vec<(usize, usize, usize)> = Vec::new(); // (layer, offset, flat index)
    for (layer, (&count, &(start, len))) in spec.samples_per_layer.iter().zip(&offsets).enumerate()
    {
        let mut pool: Vec<usize> = (0..len).collect();
        pool.shuffle(&mut rng);
        for &off in pool.iter().take(count.min(len)) {
            targets.push((layer, off, start + off));
        }
    }

    let spacing = spec.spacing();
    let mut profiles = Vec::with_capacity(targets.len());
    let mut working = reference.clone();
    for (layer, off, flat_idx) in targets {
        let ref_value = reference[flat_idx];
        let mut sweep_values = Vec::with_capacity(spec.n_points);
        let mut losses = Vec::with_capacity(spec.n_points);
        for k in 0..spec.n_points {
            let theta = ref_value - spec.sweep_half_width + k as f64 * spacing;
            working[flat_idx] = theta;
            net.unflatten(&working)?;
            let (loss, _) = net.evaluate(batch)?;
            sweep_values.push(theta);
            losses.push(loss);
        }
        working[flat_idx] = ref_value;
        net.unflatten(&working)?;

        let shape_class = classify_values(&losses, reference_loss);
        profiles.push(LandscapeProfile {
            param_id: (layer, off),
            reference_value: ref_value,
            reference_loss,
            sweep_values,
            losses,
            shape_class,
        });
    }
    net.unflatten(&reference)?;
    Ok(profiles)
}

pub fn classify(profile: &LandscapeProfile) -> ShapeClass {
    classify_values(&profile.losses, profile.reference_loss)
}

/// Deterministic rules on the discrete profile:
/// - Convex: second differences >= -tol everywhere and the loss range
///   clears the flatness floor
/// - FlatOrLinear: loss range below the floor, or all second differences
///   within +-tol
/// - Oscillatory: first-difference sign changes more than 4 times
/// - SignChanging: second differences change sign, few oscillations
///
/// with tol = 1e-9 * max|loss| and floor = 1e-4 * reference_loss
/// (floored at 1e-12).
fn classify_values(losses: &[f64], reference_loss: f64) -> ShapeClass {
    const OSC_COUNT: usize = 4;
    let max_abs = losses.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let tol = 1e-9 * max_abs;
    let range_floor = (1e-4 * reference_loss).max(1e-12);

    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &l in losses {
        min = min.min(l);
        max = max.max(l);
    }
    let range = max - min;

    let first: Vec<f64> = losses.windows(2).map(|w| w[1] - w[0]).collect();
    let second: Vec<f64> = losses
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .collect();

    let convex = second.iter().all(|&d| d >= -tol);
    if convex && range > range_floor {
        return ShapeClass::Convex;
    }
    let second_flat = second.iter().all(|&d| d.abs() <= tol);
    if range <= range_floor || second_flat {
        return ShapeClass::FlatOrLinear;
    }

    let mut flips = 0usize;
    let mut last_sign = 0i8;
    for &d in &first {
        let s = if d > 0.0 {
            1i8
        } else if d < 0.0 {
            -1i8
        } else {
            0i8
        };
        if s != 0 {
            if last_sign != 0 && s != last_sign {
                flips += 1;
            }
            last_sign = s;
        }
    }
    if flips > OSC_COUNT {
        return ShapeClass::Oscillatory;
    }

    let has_pos = second.iter().any(|&d| d > tol);
    let has_neg = second.iter().any(|&d| d < -tol);
    if has_pos && has_neg {
        return ShapeClass::SignChanging;
    }
    ShapeClass::Other
}

/// Write `profile_L<layer>_P<offset>.csv` per profile plus `shapes.csv`.
pub fn write_profiles(dir: &Path, profiles: &[LandscapeProfile]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut shapes =
        String::from("layer,offset,reference_value,reference_loss,shape_class,loss_range\n");
    for p in profiles {
        let mut out = String::from("theta,loss\n");
        for (t, l) in p.sweep_values.iter().zip(&p.losses) {
            out.push_str(&format!("{},{}\n", fmt_float(*t), fmt_float(*l)));
        }
        let name = format!("profile_L{}_P{}.csv", p.param_id.0, p.param_id.1);
        std::fs::write(dir.join(name), out)?;
        shapes.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.param_id.0,
            p.param_id.1,
            fmt_float(p.reference_value),
            fmt_float(p.reference_loss),
            p.shape_class.name(),
            fmt_float(p.loss_range())
        ));
    }
    std::fs::write(dir.join("shapes.csv"), shapes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{self, Activation, LayerSpec, Matrix};

    fn tiny_net() -> (Network, Batch) {
        let arch = [
            LayerSpec {
                in_dim: 2,
                out_dim: 4,
                activation: Activation::ReLU,
            },
            LayerSpec {
                in_dim: 4,
                out_dim: 2,
                activation: Activation::Identity,
            },
        ];
        let net = net::init(&arch, 11).unwrap();
        let batch = Batch {
            inputs: Matrix::from_rows(&[
                vec![0.5, -1.0],
                vec![-0.3, 0.8],
                vec![1.2, 0.1],
                vec![-0.9, -0.4],
            ]),
            labels: vec![0, 1, 0, 1],
        };
        (net, batch)
    }

    fn spec(samples: Vec<usize>) -> ScanSpec {
        ScanSpec {
            samples_per_layer: samples,
            sweep_half_width: 5.0,
            n_points: 1000,
            seed: 42,
        }
    }

    #[test]
    fn grid_spacing_is_exact() {
        let s = spec(vec![1, 1]);
        assert_eq!(s.spacing(), 0.01);
        let (mut net, batch) = tiny_net();
        let profiles = scan(&mut net, &s, &batch).unwrap();
        for p in &profiles {
            assert_eq!(p.sweep_values.len(), 1000);
            assert_eq!(p.sweep_values[0], p.reference_value - 5.0);
            for (k, w) in p.sweep_values.windows(2).enumerate() {
                let d = w[1] - w[0];
                assert!((d - 0.01).abs() < 1e-12, "point {k}: spacing {d}");
            }
        }
    }

    #[test]
    fn scan_restores_network_bitwise() {
        let (mut net, batch) = tiny_net();
        let before = net.flatten();
        scan(&mut net, &spec(vec![3, 2]), &batch).unwrap();
        let after = net.flatten();
        assert_eq!(before.len(), after.len());
        for (b, a) in before.iter().zip(&after) {
            assert_eq!(b.to_bits(), a.to_bits());
        }
    }

    #[test]
    fn scan_is_deterministic_and_respects_counts() {
        let (mut net, batch) = tiny_net();
        let a = scan(&mut net, &spec(vec![3, 2]), &batch).unwrap();
        let b = scan(&mut net, &spec(vec![3, 2]), &batch).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.param_id, y.param_id);
            assert_eq!(x.losses, y.losses);
        }
        assert_eq!(a.iter().filter(|p| p.param_id.0 == 0).count(), 3);
        assert_eq!(a.iter().filter(|p| p.param_id.0 == 1).count(), 2);
    }

    #[test]
    fn sample_count_clamps_to_layer_size() {
        let (mut net, batch) = tiny_net();
        // layer 1 has 4*2 + 2 = 10 parameters
        let profiles = scan(&mut net, &spec(vec![0, 999]), &batch).unwrap();
        assert_eq!(profiles.len(), 10);
    }

    #[test]
    fn spec_validation() {
        let (net, _) = tiny_net();
        assert!(spec(vec![1]).validate(net.layers.len()).is_err());
        let mut s = spec(vec![1, 1]);
        s.n_points = 2;
        assert!(s.validate(2).is_err());
        s = spec(vec![1, 1]);
        s.sweep_half_width = 0.0;
        assert!(s.validate(2).is_err());
    }

    fn grid(f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..1000).map(|k| f(-5.0 + 0.01 * k as f64)).collect()
    }

    #[test]
    fn classifier_quadratic_is_convex() {
        let losses = grid(|t| (t - 0.3).powi(2) + 1.0);
        assert_eq!(classify_values(&losses, 1.0), ShapeClass::Convex);
    }

    #[test]
    fn classifier_constant_and_near_flat_are_flat() {
        assert_eq!(
            classify_values(&grid(|_| 2.5), 2.5),
            ShapeClass::FlatOrLinear
        );
        // a ramp whose total range stays under the flatness floor
        assert_eq!(
            classify_values(&grid(|t| 10.0 + 1e-6 * t), 10.0),
            ShapeClass::FlatOrLinear
        );
        // a steep ramp has zero curvature everywhere, which the convex
        // rule admits; it wins by precedence
        assert_eq!(
            classify_values(&grid(|t| 10.0 + 0.5 * t), 10.0),
            ShapeClass::Convex
        );
    }

    #[test]
    fn classifier_sine_is_oscillatory() {
        // sin(10 t) over [-5, 5) has far more than 4 slope sign changes
        let losses = grid(|t| 2.0 + (10.0 * t).sin());
        assert_eq!(classify_values(&losses, 2.0), ShapeClass::Oscillatory);
        // oracle: count the flips directly
        let losses2 = grid(|t| 2.0 + (10.0 * t).sin());
        let mut flips = 0;
        let mut last = 0i8;
        for w in losses2.windows(2) {
            let s = (w[1] - w[0]).signum() as i8;
            if s != 0 {
                if last != 0 && s != last {
                    flips += 1;
                }
                last = s;
            }
        }
        assert!(flips > 4, "flip oracle: {flips}");
    }

    #[test]
    fn classifier_sigmoid_like_changes_sign() {
        // tanh has one inflection: curvature positive then negative,
        // only one slope-sign regime, so it lands in SignChanging.
        let losses = grid(|t| 1.0 + t.tanh());
        assert_eq!(classify_values(&losses, 1.0), ShapeClass::SignChanging);
    }

    #[test]
    fn write_profiles_emits_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let (mut net, batch) = tiny_net();
        let profiles = scan(&mut net, &spec(vec![1, 1]), &batch).unwrap();
        write_profiles(dir.path(), &profiles).unwrap();
        assert!(dir.path().join("shapes.csv").exists());
        let shapes = std::fs::read_to_string(dir.path().join("shapes.csv")).unwrap();
        assert_eq!(shapes.lines().count(), 1 + profiles.len());
        for p in &profiles {
            let f = dir
                .path()
                .join(format!("profile_L{}_P{}.csv", p.param_id.0, p.param_id.1));
            let content = std::fs::read_to_string(f).unwrap();
            assert_eq!(content.lines().count(), 1 + 1000);
        }
    }
}
