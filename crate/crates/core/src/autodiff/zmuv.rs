use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STD_FLOOR: f64 = 1e-12;

/// Per-feature affine map to zero mean and unit (population) variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZmuvTransform {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon_floor: f64,
}

impl ZmuvTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            epsilon_floor: DEFAULT_STD_FLOOR,
        }
    }

    /// Fits on `data` whose columns are features. Constant features get
    /// their std clamped to `epsilon_floor`.
    pub fn fit(data: ArrayView2<f64>, epsilon_floor: f64) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Argument(
                "cannot fit a normalization to empty data".into(),
            ));
        }
        if !(epsilon_floor > 0.0) {
            return Err(Error::Argument("std floor must be positive".into()));
        }
        let n = data.nrows() as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for col in data.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt().max(epsilon_floor));
        }
        Ok(Self {
            mean,
            std,
            epsilon_floor,
        })
    }

    /// Fit to a single feature given as a slice.
    pub fn fit_column(values: &[f64], epsilon_floor: f64) -> Result<Self> {
        let view = ArrayView2::from_shape((values.len(), 1), values)
            .map_err(|e| Error::Argument(e.to_string()))?;
        Self::fit(view, epsilon_floor)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn apply_scalar(&self, k: usize, x: f64) -> f64 {
        (x - self.mean[k]) / self.std[k]
    }

    #[inline]
    pub fn invert_scalar(&self, k: usize, y: f64) -> f64 {
        y * self.std[k] + self.mean[k]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| self.apply_scalar(k, v))
            .collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(k, &v)| self.invert_scalar(k, v))
            .collect()
    }

    /// Row-wise application to a sample matrix.
    pub fn apply_rows(&self, data: ArrayView2<f64>) -> Array2<f64> {
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = self.apply_scalar(k, *v);
            }
        }
        out
    }

    pub fn invert_rows(&self, data: ArrayView2<f64>) -> Array2<f64> {
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = self.invert_scalar(k, *v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_point_column() {
        let t = ZmuvTransform::fit(array![[0.0], [2.0]].view(), DEFAULT_STD_FLOOR).unwrap();
        assert_eq!(t.mean, vec![1.0]);
        assert_eq!(t.std, vec![1.0]);
        assert_eq!(t.apply(&[0.0]), vec![-1.0]);
        assert_eq!(t.apply(&[2.0]), vec![1.0]);
    }

    #[test]
    fn constant_feature_is_floored() {
        let t = ZmuvTransform::fit(array![[3.0, 1.0], [3.0, 2.0]].view(), 1e-9).unwrap();
        assert_eq!(t.std[0], 1e-9);
        assert_eq!(t.apply(&[3.0, 1.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn already_normalized_is_identity() {
        let data = array![[-1.0, 1.0], [1.0, -1.0]];
        let t = ZmuvTransform::fit(data.view(), DEFAULT_STD_FLOOR).unwrap();
        let out = t.apply_rows(data.view());
        for (a, b) in out.iter().zip(data.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_data_rejected() {
        let data = Array2::<f64>::zeros((0, 3));
        assert!(ZmuvTransform::fit(data.view(), DEFAULT_STD_FLOOR).is_err());
    }
}
