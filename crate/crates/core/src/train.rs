//! Minibatch regression shared by the NBF and DeepONet trainers.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, MeanSquaredError, MlpNetwork};
use crate::error::{Error, Result};

/// Floor added to every sampling weight so that constant targets still give
/// a proper distribution.
pub const IMPORTANCE_FLOOR: f64 = 1e-12;

/// Mixes a base seed with a stream of identifiers (splitmix64 steps).
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    let mut x = base;
    for &s in stream.iter().chain(std::iter::once(&0x5eed)) {
        x ^= s
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(x << 6)
            .wrapping_add(x >> 2);
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}

/// Sampling probabilities proportional to `|U − Ū| + ε`.
pub fn importance_probs(targets: &[f64], mean: f64) -> Vec<f64> {
    let raw: Vec<f64> = targets
        .iter()
        .map(|u| (u - mean).abs() + IMPORTANCE_FLOOR)
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

/// Epoch budget and minibatching of one regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSchedule {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Every `importance_period`-th epoch draws its samples from the
    /// importance distribution instead of a plain shuffle.
    pub importance_period: usize,
}

impl FitSchedule {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.importance_period == 0 {
            return Err(Error::Argument(
                "batch size and importance period must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn is_importance_epoch(&self, epoch: usize) -> bool {
        (epoch + 1) % self.importance_period == 0
    }
}

/// Sample order for one epoch of `n` items.
pub fn epoch_order(
    n: usize,
    importance: Option<&WeightedIndex<f64>>,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    match importance {
        Some(dist) => (0..n).map(|_| dist.sample(rng)).collect(),
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            idx
        }
    }
}

pub fn weighted_index(probs: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(probs).map_err(|e| Error::Argument(format!("bad sampling weights: {e}")))
}

pub fn gather_rows(data: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    data.select(Axis(0), idx)
}

/// Fits `net` to `targets` (one scalar per input row) by minibatch Adam on
/// the mean squared error. Returns the final full-data MSE.
pub fn fit_regression(
    net: &mut MlpNetwork,
    name: &str,
    inputs: ArrayView2<f64>,
    targets: ArrayView1<f64>,
    probs: Option<&[f64]>,
    schedule: &FitSchedule,
    seed: u64,
) -> Result<f64> {
    schedule.validate()?;
    let n = inputs.nrows();
    if targets.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: targets.len(),
        });
    }
    let targets2 = targets.insert_axis(Axis(1));
    let dist = probs.map(weighted_index).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(schedule.adam, net.num_params())?;
    for epoch in 0..schedule.epochs {
        adam.begin_epoch(epoch);
        let use_is = dist
            .as_ref()
            .filter(|_| schedule.is_importance_epoch(epoch));
        let order = epoch_order(n, use_is, &mut rng);
        for chunk in order.chunks(schedule.batch_size) {
            let x = gather_rows(inputs, chunk);
            let t = gather_rows(targets2, chunk);
            let (_, grad) = net
                .param_grad(&MeanSquaredError, x.view(), t.view())
                .map_err(|_| Error::Training {
                    network: name.to_string(),
                    epoch,
                })?;
            adam.step(net.params_mut(), &grad)
                .map_err(|_| Error::Training {
                    network: name.to_string(),
                    epoch,
                })?;
        }
    }
    let pred = net.forward_batch(inputs)?;
    let mse = pred
        .column(0)
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n.max(1) as f64;
    if !mse.is_finite() {
        return Err(Error::Training {
            network: name.to_string(),
            epoch: schedule.epochs,
        });
    }
    Ok(mse)
}
