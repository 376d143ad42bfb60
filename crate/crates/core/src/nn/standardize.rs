use crate::error::{Error, Result};

/// Per-feature and output z-scoring with population (1/N) statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: f64,
    pub output_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Standardizer {
    /// Fits on row-major `inputs` (`n_features` per row) and `outputs`.
    ///
    /// An input feature with zero spread is an error. A constant output
    /// keeps its mean and uses unit scale: there is nothing to rescale and
    /// the network simply learns zero.
    pub fn fit(inputs: &[f64], n_features: usize, outputs: &[f64]) -> Result<Self> {
        let n = outputs.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if inputs.len() != n * n_features {
            return Err(Error::LengthMismatch {
                left: inputs.len(),
                right: n * n_features,
            });
        }
        let mut input_mean = Vec::with_capacity(n_features);
        let mut input_std = Vec::with_capacity(n_features);
        for j in 0..n_features {
            let (m, s) = mean_std((0..n).map(|r| inputs[r * n_features + j]));
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::DegenerateFeature { index: j });
            }
            input_mean.push(m);
            input_std.push(s);
        }
        let (output_mean, s) = mean_std(outputs.iter().copied());
        let output_std = if s > 0.0 { s } else { 1.0 };
        Ok(Self {
            input_mean,
            input_std,
            output_mean,
            output_std,
        })
    }

    pub fn identity(n_features: usize) -> Self {
        Self {
            input_mean: vec![0.0; n_features],
            input_std: vec![1.0; n_features],
            output_mean: 0.0,
            output_std: 1.0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.input_mean.len()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn destandardize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn standardize_rows(&self, rows: &[f64]) -> Vec<f64> {
        rows.chunks(self.n_features()).flat_map(|r| self.standardize(r)).collect()
    }

    pub fn standardize_output(&self, y: f64) -> f64 {
        (y - self.output_mean) / self.output_std
    }

    pub fn destandardize_output(&self, z: f64) -> f64 {
        z * self.output_std + self.output_mean
    }
}
