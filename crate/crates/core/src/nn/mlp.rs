//! Affine → batch-norm → tanh → dropout stack with a plain affine output
//! layer, with hand-written backprop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const DEFAULT_DIMS: [usize; 6] = [5, 64, 64, 64, 64, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which statistics batch norm normalizes with during a gradient pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnStats {
    Batch,
    /// Running statistics, treated as constants.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassConfig {
    pub bn: BnStats,
    pub dropout: bool,
}

impl PassConfig {
    pub const TRAIN: PassConfig = PassConfig {
        bn: BnStats::Batch,
        dropout: true,
    };
    pub const FROZEN: PassConfig = PassConfig {
        bn: BnStats::Frozen,
        dropout: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            scale: vec![1.0; width],
            shift: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    dims: Vec<usize>,
    /// Row-major `out × in` per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// One per hidden layer.
    pub bn: Vec<BatchNorm>,
    pub dropout_p: f64,
    pub mode: Mode,
}

/// Gradient blocks in [`MlpModel::param_blocks`] order.
pub type Gradients = Vec<Vec<f64>>;

struct HiddenCache {
    input: Vec<f64>,
    /// Batch mean and biased variance when normalizing with batch statistics.
    batch_moments: Option<(Vec<f64>, Vec<f64>)>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    act: Vec<f64>,
    mask: Option<Vec<f64>>,
}

impl MlpModel {
    /// All parameters zero, BN identity-initialized.
    pub fn zeros(dims: &[usize], dropout_p: f64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("layer_dims", "need at least two positive widths"));
        }
        if *dims.last().unwrap() != 1 {
            return Err(Error::invalid("layer_dims", "output width must be 1"));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::invalid("dropout_p", "must lie in [0, 1)"));
        }
        let layers = dims.len() - 1;
        Ok(Self {
            dims: dims.to_vec(),
            weights: (0..layers).map(|l| vec![0.0; dims[l] * dims[l + 1]]).collect(),
            biases: (0..layers).map(|l| vec![0.0; dims[l + 1]]).collect(),
            bn: (1..layers).map(|l| BatchNorm::new(dims[l])).collect(),
            dropout_p,
            mode: Mode::Train,
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new(dims: &[usize], dropout_p: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut m = Self::zeros(dims, dropout_p)?;
        for (l, w) in m.weights.iter_mut().enumerate() {
            let limit = (6.0 / (dims[l] + dims[l + 1]) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(m)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_inputs(&self) -> usize {
        self.dims[0]
    }

    fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Every trainable tensor, in a fixed order: `W0, b0, …, WL, bL`, then
    /// `scale, shift` of each batch-norm layer.
    pub fn param_blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w);
            out.push(b);
        }
        for bn in &self.bn {
            out.push(&bn.scale);
            out.push(&bn.shift);
        }
        out
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        for bn in self.bn.iter_mut() {
            out.push(&mut bn.scale);
            out.push(&mut bn.shift);
        }
        out
    }

    /// Whether block `i` is a weight matrix (the only tensors under L2 decay).
    pub fn block_is_weight(&self, i: usize) -> bool {
        i < 2 * self.n_layers() && i.is_multiple_of(2)
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().flatten().map(|w| w * w).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.param_blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
            && self
                .bn
                .iter()
                .all(|bn| bn.running_mean.iter().chain(&bn.running_var).all(|v| v.is_finite()))
    }

    /// Single-sample forward in the model's current mode. Train mode with a
    /// batch of one would make batch norm degenerate, so it evaluates like
    /// Eval mode; use the batch APIs for training.
    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        assert_eq!(input.len(), self.n_inputs());
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for l in 0..self.n_layers() {
            affine(&self.weights[l], &self.biases[l], &cur, 1, self.dims[l], self.dims[l + 1], &mut next);
            if l + 1 < self.n_layers() {
                let bn = &self.bn[l];
                for (j, z) in next.iter_mut().enumerate() {
                    let xhat = (*z - bn.running_mean[j]) * (1.0 / (bn.running_var[j] + BN_EPS).sqrt());
                    *z = (bn.scale[j] * xhat + bn.shift[j]).tanh();
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur[0])
    }

    /// Eval-mode forward over `n` row-major samples.
    pub fn predict_batch(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        let (out, _) = self.forward_pass(inputs, n, PassConfig::FROZEN, None)?;
        Ok(out)
    }

    fn forward_pass(
        &self,
        inputs: &[f64],
        n: usize,
        pass: PassConfig,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, Vec<HiddenCache>)> {
        assert_eq!(inputs.len(), n * self.n_inputs());
        let mut caches = Vec::with_capacity(self.n_layers() - 1);
        let mut cur = inputs.to_vec();
        let keep = 1.0 - self.dropout_p;
        for l in 0..self.n_layers() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let mut z = Vec::new();
            affine(&self.weights[l], &self.biases[l], &cur, n, din, dout, &mut z);
            if l + 1 == self.n_layers() {
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteActivation { layer: l });
                }
                return Ok((z, caches));
            }
            let bn = &self.bn[l];
            let (mean, var, batch_moments) = match pass.bn {
                BnStats::Batch => {
                    let (mean, var) = column_moments(&z, n, dout);
                    (mean.clone(), var.clone(), Some((mean, var)))
                }
                BnStats::Frozen => (bn.running_mean.clone(), bn.running_var.clone(), None),
            };
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let mut xhat = z;
            let mut act = vec![0.0; n * dout];
            for r in 0..n {
                for j in 0..dout {
                    let i = r * dout + j;
                    xhat[i] = (xhat[i] - mean[j]) * inv_std[j];
                    act[i] = (bn.scale[j] * xhat[i] + bn.shift[j]).tanh();
                }
            }
            let mut out = act.clone();
            let mask = if pass.dropout && self.dropout_p > 0.0 {
                let rng = rng.as_deref_mut().expect("dropout pass needs an rng");
                let m: Vec<f64> = (0..n * dout)
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                for (o, k) in out.iter_mut().zip(&m) {
                    *o *= k;
                }
                Some(m)
            } else {
                None
            };
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: l });
            }
            caches.push(HiddenCache {
                input: std::mem::replace(&mut cur, out),
                batch_moments,
                xhat,
                inv_std,
                act,
                mask,
            });
        }
        unreachable!("loop returns at the output layer")
    }

    /// Mean-squared-error loss and its gradient over one batch. No parameter
    /// or running-statistic changes.
    pub fn loss_and_gradients(
        &self,
        inputs: &[f64],
        targets: &[f64],
        pass: PassConfig,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients)> {
        let (loss, grads, _) = self.backprop(inputs, targets, pass, rng)?;
        Ok((loss, grads))
    }

    /// Train-mode loss and gradients for one batch; the batch statistics are
    /// folded into the running statistics with momentum [`BN_MOMENTUM`]
    /// (unbiased variance).
    pub fn train_batch(&mut self, inputs: &[f64], targets: &[f64], rng: &mut ChaCha8Rng) -> Result<(f64, Gradients)> {
        let (loss, grads, moments) = self.backprop(inputs, targets, PassConfig::TRAIN, Some(rng))?;
        let n = targets.len();
        if n >= 2 {
            let unbias = n as f64 / (n - 1) as f64;
            for (bn, (mean, var)) in self.bn.iter_mut().zip(moments) {
                for j in 0..mean.len() {
                    bn.running_mean[j] = (1.0 - BN_MOMENTUM) * bn.running_mean[j] + BN_MOMENTUM * mean[j];
                    bn.running_var[j] = (1.0 - BN_MOMENTUM) * bn.running_var[j] + BN_MOMENTUM * var[j] * unbias;
                }
            }
        }
        Ok((loss, grads))
    }

    #[allow(clippy::type_complexity)]
    fn backprop(
        &self,
        inputs: &[f64],
        targets: &[f64],
        pass: PassConfig,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, Gradients, Vec<(Vec<f64>, Vec<f64>)>)> {
        let n = targets.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let (out, caches) = self.forward_pass(inputs, n, pass, rng)?;
        let loss = out.iter().zip(targets).map(|(o, t)| (o - t) * (o - t)).sum::<f64>() / n as f64;
        let mut grad_out: Vec<f64> = out.iter().zip(targets).map(|(o, t)| 2.0 * (o - t) / n as f64).collect();

        let layers = self.n_layers();
        let mut gw: Vec<Vec<f64>> = vec![Vec::new(); layers];
        let mut gb: Vec<Vec<f64>> = vec![Vec::new(); layers];
        let mut gscale: Vec<Vec<f64>> = vec![Vec::new(); layers - 1];
        let mut gshift: Vec<Vec<f64>> = vec![Vec::new(); layers - 1];

        let final_input = match caches.last() {
            Some(c) => hidden_output(c),
            None => inputs.to_vec(),
        };
        for l in (0..layers).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let x_in: &[f64] = if l == layers - 1 { &final_input } else { &caches[l].input };
            let mut dz = grad_out;
            if l < layers - 1 {
                let c = &caches[l];
                let bn = &self.bn[l];
                if let Some(mask) = &c.mask {
                    for (d, m) in dz.iter_mut().zip(mask) {
                        *d *= m;
                    }
                }
                for (d, a) in dz.iter_mut().zip(&c.act) {
                    *d *= 1.0 - a * a;
                }
                let mut g_scale = vec![0.0; dout];
                let mut g_shift = vec![0.0; dout];
                for r in 0..n {
                    for j in 0..dout {
                        let i = r * dout + j;
                        g_scale[j] += dz[i] * c.xhat[i];
                        g_shift[j] += dz[i];
                    }
                }
                for r in 0..n {
                    for j in 0..dout {
                        dz[r * dout + j] *= bn.scale[j];
                    }
                }
                match pass.bn {
                    BnStats::Frozen => {
                        for r in 0..n {
                            for j in 0..dout {
                                dz[r * dout + j] *= c.inv_std[j];
                            }
                        }
                    }
                    BnStats::Batch => {
                        let mut sum = vec![0.0; dout];
                        let mut sum_x = vec![0.0; dout];
                        for r in 0..n {
                            for j in 0..dout {
                                let i = r * dout + j;
                                sum[j] += dz[i];
                                sum_x[j] += dz[i] * c.xhat[i];
                            }
                        }
                        let nf = n as f64;
                        for r in 0..n {
                            for j in 0..dout {
                                let i = r * dout + j;
                                dz[i] = c.inv_std[j] / nf * (nf * dz[i] - sum[j] - c.xhat[i] * sum_x[j]);
                            }
                        }
                    }
                }
                gscale[l] = g_scale;
                gshift[l] = g_shift;
            }
            let w = &self.weights[l];
            let mut g_w = vec![0.0; dout * din];
            let mut g_b = vec![0.0; dout];
            for r in 0..n {
                let xr = &x_in[r * din..(r + 1) * din];
                for o in 0..dout {
                    let d = dz[r * dout + o];
                    g_b[o] += d;
                    let row = &mut g_w[o * din..(o + 1) * din];
                    for (g, x) in row.iter_mut().zip(xr) {
                        *g += d * x;
                    }
                }
            }
            if l > 0 {
                let mut dx = vec![0.0; n * din];
                for r in 0..n {
                    let dxr = &mut dx[r * din..(r + 1) * din];
                    for o in 0..dout {
                        let d = dz[r * dout + o];
                        for (g, wv) in dxr.iter_mut().zip(&w[o * din..(o + 1) * din]) {
                            *g += d * wv;
                        }
                    }
                }
                grad_out = dx;
            } else {
                grad_out = Vec::new();
            }
            gw[l] = g_w;
            gb[l] = g_b;
        }

        let mut grads = Vec::with_capacity(2 * layers + 2 * (layers - 1));
        for (w, b) in gw.into_iter().zip(gb) {
            grads.push(w);
            grads.push(b);
        }
        for (s, b) in gscale.into_iter().zip(gshift) {
            grads.push(s);
            grads.push(b);
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        let moments = caches.into_iter().filter_map(|c| c.batch_moments).collect();
        Ok((loss, grads, moments))
    }

    /// Post-batch-norm, pre-scale activations of every hidden layer in a
    /// Train-mode pass (no dropout). Exposed for normalization checks.
    pub fn normalized_activations(&self, inputs: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
        let (_, caches) = self.forward_pass(inputs, n, PassConfig { bn: BnStats::Batch, dropout: false }, None)?;
        Ok(caches.into_iter().map(|c| c.xhat).collect())
    }

    /// Train-mode batch output: batch statistics, dropout drawn from `rng`.
    pub fn forward_train_batch(&self, inputs: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.forward_pass(inputs, n, PassConfig::TRAIN, Some(rng))?.0)
    }
}

fn hidden_output(c: &HiddenCache) -> Vec<f64> {
    match &c.mask {
        Some(m) => c.act.iter().zip(m).map(|(a, k)| a * k).collect(),
        None => c.act.clone(),
    }
}

/// `out[r] = W x[r] + b` for `n` row-major samples.
fn affine(w: &[f64], b: &[f64], x: &[f64], n: usize, din: usize, dout: usize, out: &mut Vec<f64>) {
    out.clear();
    out.resize(n * dout, 0.0);
    for r in 0..n {
        let xr = &x[r * din..(r + 1) * din];
        for o in 0..dout {
            let row = &w[o * din..(o + 1) * din];
            let mut acc = b[o];
            for (wv, xv) in row.iter().zip(xr) {
                acc += wv * xv;
            }
            out[r * dout + o] = acc;
        }
    }
}

/// Per-column mean and biased variance.
fn column_moments(z: &[f64], n: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let nf = n as f64;
    let mut mean = vec![0.0; width];
    for r in 0..n {
        for j in 0..width {
            mean[j] += z[r * width + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![0.0; width];
    for r in 0..n {
        for j in 0..width {
            let d = z[r * width + j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= nf);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_model_outputs_zero() {
        let m = MlpModel::zeros(&DEFAULT_DIMS, 0.2).unwrap();
        assert_eq!(m.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), 0.0);
    }

    #[test]
    fn constant_path() {
        let mut m = MlpModel::zeros(&DEFAULT_DIMS, 0.2).unwrap();
        *m.biases.last_mut().unwrap() = vec![0.75];
        assert_eq!(m.forward(&[3.0, 1.0, 4.0, 1.0, 5.0]).unwrap(), 0.75);
    }

    #[test]
    fn small_model_matches_hand_evaluation() {
        let mut m = MlpModel::zeros(&[2, 3, 1], 0.0).unwrap();
        m.weights[0] = vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        m.biases[0] = vec![0.01, 0.02, -0.03];
        m.weights[1] = vec![0.7, -0.8, 0.9];
        m.biases[1] = vec![0.05];
        // Batch norm reduced to the identity.
        m.bn[0].running_var = vec![1.0 - BN_EPS; 3];
        let x = [0.3, -1.2];
        let h = [
            (0.1 * x[0] - 0.2 * x[1] + 0.01f64).tanh(),
            (0.3 * x[0] + 0.4 * x[1] + 0.02f64).tanh(),
            (-0.5 * x[0] + 0.6 * x[1] - 0.03f64).tanh(),
        ];
        let expected = 0.7 * h[0] - 0.8 * h[1] + 0.9 * h[2] + 0.05;
        assert!((m.forward(&x).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn predict_batch_matches_forward() {
        let mut r = rng::stream(1, rng::NN_INIT);
        let m = MlpModel::new(&[3, 8, 8, 1], 0.2, &mut r).unwrap();
        let xs = [0.1, 0.2, 0.3, -1.0, 0.5, 2.0];
        let b = m.predict_batch(&xs, 2).unwrap();
        assert_eq!(b[0], m.forward(&xs[..3]).unwrap());
        assert_eq!(b[1], m.forward(&xs[3..]).unwrap());
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(MlpModel::zeros(&[3], 0.0).is_err());
        assert!(MlpModel::zeros(&[3, 4, 2], 0.0).is_err());
        assert!(MlpModel::zeros(&[3, 4, 1], 1.0).is_err());
    }
}
