//! Learned steering compensation: features `[e_y, ė_y, e_ψ, ė_ψ, δ_LQR]`,
//! labels `δ_d − δ_LQR`, and the clamped runtime correction added to the LQR
//! command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Checkpoint, Dataset, MlpModel, Mode, Standardizer, TrainConfig, TrainReport};
use crate::rng;
use crate::vehicle::ErrorState;

pub const N_FEATURES: usize = 5;
pub const DEFAULT_EPSILON1: f64 = 0.1;
pub const DEFAULT_STEER_LIMIT: f64 = 0.6;
/// Labels further than this many standard deviations from their mean are
/// discarded as outliers.
pub const OUTLIER_SIGMAS: f64 = 6.0;
pub const DATASET_CSV_HEADER: &str = "t_s,e_y,e_y_dot,e_psi,e_psi_dot,delta_lqr,delta_d";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub e_y: f64,
    pub e_y_dot: f64,
    pub e_psi: f64,
    pub e_psi_dot: f64,
    pub delta_lqr: f64,
}

impl FeatureVector {
    pub fn new(x: &ErrorState, delta_lqr: f64) -> Self {
        Self {
            e_y: x.e_y,
            e_y_dot: x.e_y_dot,
            e_psi: x.e_psi,
            e_psi_dot: x.e_psi_dot,
            delta_lqr,
        }
    }

    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [self.e_y, self.e_y_dot, self.e_psi, self.e_psi_dot, self.delta_lqr]
    }

    pub fn from_array(a: [f64; N_FEATURES]) -> Self {
        Self {
            e_y: a[0],
            e_y_dot: a[1],
            e_psi: a[2],
            e_psi_dot: a[3],
            delta_lqr: a[4],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensationLimits {
    pub epsilon1: f64,
}

impl Default for CompensationLimits {
    fn default() -> Self {
        Self {
            epsilon1: DEFAULT_EPSILON1,
        }
    }
}

impl CompensationLimits {
    pub fn new(epsilon1: f64) -> Result<Self> {
        if !(epsilon1 > 0.0 && epsilon1.is_finite()) {
            return Err(Error::invalid("epsilon1", "must be finite and > 0"));
        }
        Ok(Self { epsilon1 })
    }
}

/// One synchronously logged control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub state: ErrorState,
    pub delta_lqr: f64,
    pub delta_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub features: FeatureVector,
    pub label: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub samples: Vec<TrainingSample>,
    pub outliers_dropped: usize,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_dataset(&self) -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(self.len() * N_FEATURES);
        let mut targets = Vec::with_capacity(self.len());
        for s in &self.samples {
            inputs.extend(s.features.to_array());
            targets.push(s.label);
        }
        Dataset::new(N_FEATURES, inputs, targets)
    }

    pub fn label_variance(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.samples.iter().map(|s| s.label).sum::<f64>() / n;
        self.samples.iter().map(|s| (s.label - mean).powi(2)).sum::<f64>() / n
    }

    pub fn extend(&mut self, other: TrainingSet) {
        self.samples.extend(other.samples);
        self.outliers_dropped += other.outliers_dropped;
    }
}

/// Labels `δ_d − δ_LQR` for every row, then drops label outliers beyond
/// [`OUTLIER_SIGMAS`].
pub fn build_dataset(rows: &[LogRow]) -> Result<TrainingSet> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (i, r) in rows.iter().enumerate() {
        if !(r.t.is_finite() && r.state.is_finite() && r.delta_lqr.is_finite() && r.delta_d.is_finite()) {
            return Err(Error::MisalignedLog(format!("row {i} has a non-finite value")));
        }
        if i > 0 && !(r.t > rows[i - 1].t) {
            return Err(Error::MisalignedLog(format!(
                "timestamps not strictly increasing at row {i} ({} after {})",
                r.t,
                rows[i - 1].t
            )));
        }
    }
    let labels: Vec<f64> = rows.iter().map(|r| r.delta_d - r.delta_lqr).collect();
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let std = (labels.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut samples = Vec::with_capacity(rows.len());
    let mut dropped = 0;
    for (r, &label) in rows.iter().zip(&labels) {
        if std > 0.0 && (label - mean).abs() > OUTLIER_SIGMAS * std {
            dropped += 1;
            continue;
        }
        samples.push(TrainingSample {
            features: FeatureVector::new(&r.state, r.delta_lqr),
            label,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyAfterFiltering);
    }
    Ok(TrainingSet {
        samples,
        outliers_dropped: dropped,
    })
}

pub fn rows_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::with_capacity(rows.len() * 96);
    s.push_str(DATASET_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.t, r.state.e_y, r.state.e_y_dot, r.state.e_psi, r.state.e_psi_dot, r.delta_lqr, r.delta_d
        ));
    }
    s
}

/// Parses the dataset CSV. Columns are located by header name, so logs with
/// extra columns (such as full simulation logs) are accepted.
pub fn rows_from_csv(text: &str) -> Result<Vec<LogRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("dataset csv", "empty file"))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| {
        names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::parse("dataset csv", format!("missing column `{name}`")))
    };
    let idx = [
        col("t_s")?,
        col("e_y")?,
        col("e_y_dot")?,
        col("e_psi")?,
        col("e_psi_dot")?,
        col("delta_lqr")?,
        col("delta_d")?,
    ];
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() {
            return Err(Error::parse(
                "dataset csv",
                format!("line {}: expected {} fields, found {}", ln + 2, names.len(), fields.len()),
            ));
        }
        let mut v = [0.0; 7];
        for (k, &i) in idx.iter().enumerate() {
            v[k] = fields[i]
                .trim()
                .parse()
                .map_err(|e| Error::parse("dataset csv", format!("line {}: {e}", ln + 2)))?;
        }
        rows.push(LogRow {
            t: v[0],
            state: ErrorState::new(v[1], v[2], v[3], v[4]),
            delta_lqr: v[5],
            delta_d: v[6],
        });
    }
    Ok(rows)
}

/// Resamples irregular or multi-rate rows onto a uniform grid of step `ts`,
/// holding each row's values until the next row arrives.
pub fn zoh_resample(rows: &[LogRow], ts: f64) -> Result<Vec<LogRow>> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(ts > 0.0) {
        return Err(Error::invalid("ts", "must be > 0"));
    }
    let t0 = rows[0].t;
    let t_end = rows.last().unwrap().t;
    let steps = ((t_end - t0) / ts + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut j = 0;
    for k in 0..=steps {
        let t = t0 + k as f64 * ts;
        while j + 1 < rows.len() && rows[j + 1].t <= t + 1e-12 {
            j += 1;
        }
        out.push(LogRow { t, ..rows[j] });
    }
    Ok(out)
}

/// Trained compensator: network plus the scaling it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuroDob {
    pub checkpoint: Checkpoint,
    pub limits: CompensationLimits,
}

impl NeuroDob {
    pub fn new(model: MlpModel, standardizer: Standardizer, limits: CompensationLimits) -> Self {
        let mut model = model;
        model.set_mode(Mode::Eval);
        Self {
            checkpoint: Checkpoint { model, standardizer },
            limits,
        }
    }

    pub fn load(path: &Path, limits: CompensationLimits) -> Result<Self> {
        Ok(Self {
            checkpoint: Checkpoint::load(path)?,
            limits,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.checkpoint.save(path)
    }

    /// Unclamped network output in radians.
    pub fn raw(&self, features: &FeatureVector) -> Result<f64> {
        let st = &self.checkpoint.standardizer;
        let z = st.standardize(&features.to_array());
        let y = self.checkpoint.model.forward(&z)?;
        Ok(st.destandardize_output(y))
    }

    pub fn compensate(&self, features: &FeatureVector) -> f64 {
        compensate(&self.checkpoint.model, &self.checkpoint.standardizer, &self.limits, features)
    }
}

/// `clamp(destandardize(f_θ(standardize(s))), ±ε1)`. A non-finite network
/// output yields no compensation.
pub fn compensate(
    model: &MlpModel,
    standardizer: &Standardizer,
    limits: &CompensationLimits,
    features: &FeatureVector,
) -> f64 {
    let z = standardizer.standardize(&features.to_array());
    match model.forward(&z) {
        Ok(y) => clamp_compensation(standardizer.destandardize_output(y), limits.epsilon1),
        Err(_) => 0.0,
    }
}

pub fn clamp_compensation(raw: f64, epsilon1: f64) -> f64 {
    if raw.is_nan() {
        0.0
    } else {
        raw.clamp(-epsilon1, epsilon1)
    }
}

/// `δ_f = δ_LQR + δ_c`, limited to the actuator range. Returns the command
/// and whether the limit engaged.
pub fn final_command(delta_lqr: f64, delta_c: f64, steer_limit: f64) -> (f64, bool) {
    let sum = delta_lqr + delta_c;
    let clamped = sum.clamp(-steer_limit, steer_limit);
    (clamped, clamped != sum)
}

/// Architecture of the compensator network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64; 4],
            dropout: nn::DEFAULT_DROPOUT,
        }
    }
}

impl NetworkConfig {
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![N_FEATURES];
        d.extend(&self.hidden);
        d.push(1);
        d
    }
}

/// Standardizes features and labels with the whole set's statistics, fits
/// a freshly initialized network and returns it in Eval mode.
pub fn train_neurodob(
    set: &TrainingSet,
    net: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<(MlpModel, Standardizer, TrainReport)> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let raw = set.to_dataset()?;
    let st = Standardizer::fit(&raw.inputs, N_FEATURES, &raw.targets)?;
    let data = Dataset::new(
        N_FEATURES,
        st.standardize_rows(&raw.inputs),
        raw.targets.iter().map(|&y| st.standardize_output(y)).collect(),
    )?;
    let mut init = rng::stream(cfg.seed, rng::NN_INIT);
    let mut model = MlpModel::new(&net.dims(), net.dropout, &mut init)?;
    let report = nn::fit(&mut model, &data, cfg)?;
    Ok((model, st, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize, f: impl Fn(usize) -> (ErrorState, f64, f64)) -> Vec<LogRow> {
        (0..n)
            .map(|i| {
                let (state, delta_lqr, delta_d) = f(i);
                LogRow {
                    t: i as f64 * 0.01,
                    state,
                    delta_lqr,
                    delta_d,
                }
            })
            .collect()
    }

    fn wiggle(i: usize) -> ErrorState {
        let t = i as f64;
        ErrorState::new((t * 0.13).sin(), (t * 0.07).cos(), (t * 0.05).sin() * 0.1, (t * 0.031).cos() * 0.1)
    }

    #[test]
    fn equal_commands_give_zero_labels() {
        let set = build_dataset(&rows(50, |i| (wiggle(i), 0.01 * i as f64, 0.01 * i as f64))).unwrap();
        assert!(set.samples.iter().all(|s| s.label == 0.0));
    }

    #[test]
    fn label_arithmetic() {
        let set = build_dataset(&rows(1, |_| (ErrorState::ZERO, 0.02, 0.05))).unwrap();
        assert!((set.samples[0].label - 0.03).abs() < 1e-15);
    }

    #[test]
    fn spike_is_dropped() {
        let mut r = rows(1000, |i| (wiggle(i), 0.0, 0.001 * ((i as f64) * 0.3).sin()));
        let sigma = 0.001 / 2f64.sqrt();
        r[500].delta_d = 100.0 * sigma;
        let set = build_dataset(&r).unwrap();
        assert_eq!(set.outliers_dropped, 1);
        assert_eq!(set.len(), 999);
    }

    #[test]
    fn labels_reconstruct_driver_command() {
        let r = rows(200, |i| (wiggle(i), 0.1 * wiggle(i).e_y, 0.07 * wiggle(i + 3).e_psi));
        let set = build_dataset(&r).unwrap();
        for (s, row) in set.samples.iter().zip(&r) {
            assert_eq!(s.label + s.features.delta_lqr, row.delta_d - row.delta_lqr + row.delta_lqr);
        }
    }

    #[test]
    fn non_monotone_time_rejected() {
        let mut r = rows(10, |i| (wiggle(i), 0.0, 0.0));
        r[4].t = r[3].t;
        assert!(matches!(build_dataset(&r), Err(Error::MisalignedLog(_))));
    }

    #[test]
    fn zero_model_gives_label_mean() {
        let model = MlpModel::zeros(&NetworkConfig::default().dims(), 0.2).unwrap();
        let mut st = Standardizer::identity(N_FEATURES);
        let f = FeatureVector::new(&wiggle(3), 0.2);
        let lim = CompensationLimits::default();
        assert_eq!(compensate(&model, &st, &lim, &f), 0.0);
        st.output_mean = 0.04;
        assert_eq!(compensate(&model, &st, &lim, &f), 0.04);
    }

    #[test]
    fn clamp_bounds_output() {
        let mut model = MlpModel::zeros(&NetworkConfig::default().dims(), 0.2).unwrap();
        *model.biases.last_mut().unwrap() = vec![10.0];
        let st = Standardizer::identity(N_FEATURES);
        let f = FeatureVector::new(&ErrorState::ZERO, 0.0);
        assert_eq!(compensate(&model, &st, &CompensationLimits { epsilon1: 0.1 }, &f), 0.1);
        assert_eq!(clamp_compensation(f64::NAN, 0.1), 0.0);
    }

    #[test]
    fn final_command_cases() {
        assert_eq!(final_command(0.02, 0.0, 0.6), (0.02, false));
        assert!((final_command(0.02, 0.01, 0.6).0 - 0.03).abs() < 1e-15);
        assert_eq!(final_command(0.55, 0.1, 0.6), (0.6, true));
    }

    #[test]
    fn csv_round_trip() {
        let r = rows(20, |i| (wiggle(i), 0.1 / 3.0 * i as f64, -1e-7 * i as f64));
        let back = rows_from_csv(&rows_to_csv(&r)).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn zoh_holds_slow_channel() {
        let r: Vec<LogRow> = [0.0, 0.05, 0.10]
            .iter()
            .enumerate()
            .map(|(i, &t)| LogRow {
                t,
                state: ErrorState::new(i as f64, 0.0, 0.0, 0.0),
                delta_lqr: 0.0,
                delta_d: 0.0,
            })
            .collect();
        let out = zoh_resample(&r, 0.01).unwrap();
        assert_eq!(out.len(), 11);
        assert_eq!(out[4].state.e_y, 0.0);
        assert_eq!(out[5].state.e_y, 1.0);
        assert_eq!(out[10].state.e_y, 2.0);
    }
}
