//! Closed-loop runs along a road map under one of the controller stacks.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dob::{dob_compensate, dob_update, DobDesign, DobState};
use crate::driver::{driver_command, DriverParams, DriverState};
use crate::error::{Error, Result};
use crate::exec;
use crate::lqr::LqrDesign;
use crate::neurodob::{final_command, FeatureVector, LogRow, NeuroDob, DATASET_CSV_HEADER, DEFAULT_STEER_LIMIT};
use crate::rng;
use crate::road::RoadMap;
use crate::vehicle::{ErrorState, Plant, PlantConfig, PlantInternalState, VehicleParams};

pub const DEFAULT_DURATION: f64 = 100.0;
/// `|e_y|` beyond this (m) counts as leaving the road.
pub const DIVERGENCE_EY: f64 = 10.0;
pub const SIM_CSV_EXTRA: &str = "kappa,psi_dot_des,delta_c,delta_f,d_hat";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerStack {
    /// Surrogate driver steers; LQR runs in shadow.
    Driver,
    Lqr,
    LqrDob,
    LqrNeuroDob,
}

impl ControllerStack {
    pub const ALL: [ControllerStack; 4] = [
        ControllerStack::Driver,
        ControllerStack::Lqr,
        ControllerStack::LqrDob,
        ControllerStack::LqrNeuroDob,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ControllerStack::Driver => "driver",
            ControllerStack::Lqr => "lqr",
            ControllerStack::LqrDob => "lqr-dob",
            ControllerStack::LqrNeuroDob => "lqr-neurodob",
        }
    }
}

impl FromStr for ControllerStack {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown controller stack `{s}` (driver, lqr, lqr-dob, lqr-neurodob)")))
    }
}

impl std::fmt::Display for ControllerStack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ornstein–Uhlenbeck steering excitation added to the driver's command
/// during collection, so the logged states cover the neighbourhood of the
/// driver's own trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    /// Stationary standard deviation (rad).
    pub sigma: f64,
    /// Correlation time (s).
    pub tau: f64,
}

impl Excitation {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("excitation.sigma", "must be finite and >= 0"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("excitation.tau", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Disturbance added to the steering command at the plant input.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InputDisturbance {
    #[default]
    None,
    Constant(f64),
    /// Per-step values; steps past the end see zero.
    Series(Vec<f64>),
}

impl InputDisturbance {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            InputDisturbance::None => 0.0,
            InputDisturbance::Constant(d) => *d,
            InputDisturbance::Series(v) => v.get(k).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub map: String,
    pub stack: ControllerStack,
    pub duration: f64,
    pub plant: PlantConfig,
    pub driver_profile: String,
    pub driver: DriverParams,
    pub seed: u64,
    /// Distinguishes repeated runs sharing a seed (selects the random stream).
    pub run_index: usize,
    pub steer_limit: f64,
    pub initial_state: ErrorState,
    pub excitation: Option<Excitation>,
    pub disturbance: InputDisturbance,
}

impl ScenarioConfig {
    pub fn new(map: impl Into<String>, stack: ControllerStack) -> Self {
        Self {
            map: map.into(),
            stack,
            duration: DEFAULT_DURATION,
            plant: PlantConfig::nominal(),
            driver_profile: "smooth".into(),
            driver: DriverParams::smooth(),
            seed: 0,
            run_index: 0,
            steer_limit: DEFAULT_STEER_LIMIT,
            initial_state: ErrorState::ZERO,
            excitation: None,
            disturbance: InputDisturbance::None,
        }
    }

    pub fn steps(&self, ts: f64) -> usize {
        (self.duration / ts).round() as usize
    }

    /// Stable text form used for metadata and the parameter fingerprint.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "map = \"{}\"", self.map);
        let _ = writeln!(s, "stack = \"{}\"", self.stack);
        let _ = writeln!(s, "duration_s = {}", self.duration);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "run_index = {}", self.run_index);
        let _ = writeln!(s, "steer_limit = {}", self.steer_limit);
        let _ = writeln!(s, "driver_profile = \"{}\"", self.driver_profile);
        let d = &self.driver;
        let _ = writeln!(
            s,
            "driver = [{}, {}, {}, {}]",
            d.preview_time, d.feedback_gain_ey, d.feedback_gain_epsi, d.smoothing_tau
        );
        let p = &self.plant;
        let _ = writeln!(
            s,
            "plant = [\"{:?}\", {}, {}, {}, {}, {}]",
            p.variant, p.stiffness_scale, p.mass_scale, p.input_bias, p.input_lag_tau, p.tire_sat_alpha
        );
        let x = &self.initial_state;
        let _ = writeln!(s, "initial_state = [{}, {}, {}, {}]", x.e_y, x.e_y_dot, x.e_psi, x.e_psi_dot);
        match &self.excitation {
            Some(e) => {
                let _ = writeln!(s, "excitation = [{}, {}]", e.sigma, e.tau);
            }
            None => {
                let _ = writeln!(s, "excitation = []");
            }
        }
        let dist = match &self.disturbance {
            InputDisturbance::None => "none".to_string(),
            InputDisturbance::Constant(d) => format!("constant {d}"),
            InputDisturbance::Series(v) => format!("series of {} (fingerprint {:016x})", v.len(), series_fingerprint(v)),
        };
        let _ = writeln!(s, "disturbance = \"{dist}\"");
        s
    }
}

fn series_fingerprint(v: &[f64]) -> u64 {
    let text: String = v.iter().map(|x| format!("{x};")).collect();
    rng::fingerprint(&text)
}

/// Supplies `δ_c` for the learned-compensation stack.
pub trait Compensator {
    fn compensation(&mut self, step: usize, features: &FeatureVector) -> f64;
}

impl Compensator for &NeuroDob {
    fn compensation(&mut self, _step: usize, features: &FeatureVector) -> f64 {
        self.compensate(features)
    }
}

/// Precomputed `δ_c[k]` sequence.
pub struct SequenceCompensator(pub Vec<f64>);

impl Compensator for SequenceCompensator {
    fn compensation(&mut self, step: usize, _features: &FeatureVector) -> f64 {
        self.0.get(step).copied().unwrap_or(0.0)
    }
}

/// Everything a run needs besides its configuration.
#[derive(Debug, Clone, Copy)]
pub struct Assets<'a> {
    pub vehicle: &'a VehicleParams,
    pub lqr: &'a LqrDesign,
    pub dob: Option<&'a DobDesign>,
    pub neurodob: Option<&'a NeuroDob>,
    pub map: &'a RoadMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimRecord {
    pub t: f64,
    pub s: f64,
    pub kappa: f64,
    pub psi_dot_des: f64,
    pub state: ErrorState,
    pub delta_lqr: f64,
    pub delta_c: f64,
    pub delta_f: f64,
    pub delta_d: f64,
    pub d_hat: f64,
    /// Injected input disturbance at this step.
    pub disturbance: f64,
    /// The actuator limit changed the command.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMeta {
    pub scenario: String,
    pub params_hash: u64,
    pub diverged: Option<Divergence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub ts: f64,
    pub vx: f64,
    pub records: Vec<SimRecord>,
    pub meta: SimMeta,
}

impl SimLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_diverged(&self) -> bool {
        self.meta.diverged.is_some()
    }

    pub fn column(&self, f: impl Fn(&SimRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(f).collect()
    }

    pub fn training_rows(&self) -> Vec<LogRow> {
        self.records
            .iter()
            .map(|r| LogRow {
                t: r.t,
                state: r.state,
                delta_lqr: r.delta_lqr,
                delta_d: r.delta_d,
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.records.len() * 180);
        s.push_str(DATASET_CSV_HEADER);
        s.push(',');
        s.push_str(SIM_CSV_EXTRA);
        s.push('\n');
        for r in &self.records {
            let x = &r.state;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t, x.e_y, x.e_y_dot, x.e_psi, x.e_psi_dot, r.delta_lqr, r.delta_d, r.kappa, r.psi_dot_des, r.delta_c, r.delta_f, r.d_hat
            );
        }
        s
    }

    /// Sidecar metadata as TOML.
    pub fn metadata_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "params_hash = \"{:016x}\"", self.meta.params_hash);
        let _ = writeln!(s, "ts = {}", self.ts);
        let _ = writeln!(s, "vx = {}", self.vx);
        let _ = writeln!(s, "records = {}", self.records.len());
        let _ = writeln!(s, "clamped_rows = {}", self.records.iter().filter(|r| r.clamped).count());
        match &self.meta.diverged {
            Some(d) => {
                let _ = writeln!(s, "diverged = true\ndiverged_step = {}\ndiverged_reason = \"{}\"", d.step, d.reason);
            }
            None => {
                let _ = writeln!(s, "diverged = false");
            }
        }
        s.push_str("\n[scenario]\n");
        s.push_str(&self.meta.scenario);
        s
    }

    /// Reads back [`SimLog::to_csv`] output. Station, disturbance and clamp
    /// flags are not exported; stations are rebuilt from `vx`.
    pub fn from_csv(text: &str, vx: f64) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse("log csv", "empty file"))?;
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        let wanted = [
            "t_s", "e_y", "e_y_dot", "e_psi", "e_psi_dot", "delta_lqr", "delta_d", "kappa", "psi_dot_des", "delta_c",
            "delta_f", "d_hat",
        ];
        let mut idx = [0; 12];
        for (k, w) in wanted.iter().enumerate() {
            idx[k] = names
                .iter()
                .position(|n| n == w)
                .ok_or_else(|| Error::parse("log csv", format!("missing column `{w}`")))?;
        }
        let mut records = Vec::new();
        for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            let mut v = [0.0; 12];
            for (k, &i) in idx.iter().enumerate() {
                v[k] = fields
                    .get(i)
                    .ok_or_else(|| Error::parse("log csv", format!("line {}: too few fields", ln + 2)))?
                    .trim()
                    .parse()
                    .map_err(|e| Error::parse("log csv", format!("line {}: {e}", ln + 2)))?;
            }
            records.push(SimRecord {
                t: v[0],
                s: v[0] * vx,
                kappa: v[7],
                psi_dot_des: v[8],
                state: ErrorState::new(v[1], v[2], v[3], v[4]),
                delta_lqr: v[5],
                delta_c: v[9],
                delta_f: v[10],
                delta_d: v[6],
                d_hat: v[11],
                disturbance: 0.0,
                clamped: false,
            });
        }
        let ts = match records.as_slice() {
            [a, b, ..] => b.t - a.t,
            _ => 0.0,
        };
        Ok(Self {
            ts,
            vx,
            records,
            meta: SimMeta {
                scenario: String::new(),
                params_hash: 0,
                diverged: None,
            },
        })
    }

    /// Writes `<stem>.csv` and `<stem>.meta.toml` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let meta = dir.join(format!("{stem}.meta.toml"));
        std::fs::write(&meta, self.metadata_text()).map_err(|e| Error::io(&meta, e))
    }
}

fn params_hash(cfg: &ScenarioConfig, assets: &Assets<'_>) -> u64 {
    let v = assets.vehicle;
    let k = assets.lqr.k;
    let mut text = cfg.describe();
    let _ = write!(
        text,
        "{} {} {} {} {} {} {} {}|{} {} {} {}|{}",
        v.mass, v.yaw_inertia, v.lf, v.lr, v.caf, v.car, v.vx, v.ts, k[0], k[1], k[2], k[3], assets.map.name
    );
    if let Some(d) = assets.dob {
        let _ = write!(text, "|dob {}", d.q_cutoff_hz);
    }
    if let Some(n) = assets.neurodob {
        let _ = write!(text, "|nd {:016x}", rng::fingerprint(&n.checkpoint.to_text()));
    }
    rng::fingerprint(&text)
}

fn check_fits(cfg: &ScenarioConfig, assets: &Assets<'_>) -> Result<usize> {
    let v = assets.vehicle;
    if !(cfg.duration > 0.0 && cfg.duration.is_finite()) {
        return Err(Error::invalid("duration", "must be finite and > 0"));
    }
    if cfg.duration * v.vx > assets.map.total_length() + 1e-9 {
        return Err(Error::invalid(
            "duration",
            format!(
                "{} s at {} m/s needs {} m but map `{}` is {} m long",
                cfg.duration,
                v.vx,
                cfg.duration * v.vx,
                assets.map.name,
                assets.map.total_length()
            ),
        ));
    }
    if !(cfg.steer_limit > 0.0) {
        return Err(Error::invalid("steer_limit", "must be > 0"));
    }
    if let Some(e) = &cfg.excitation {
        e.validate()?;
    }
    cfg.driver.validate()?;
    Ok(cfg.steps(v.ts))
}

/// Runs a scenario to completion or divergence; divergence is recorded in the
/// log metadata and the partial log is returned.
pub fn simulate(
    cfg: &ScenarioConfig,
    assets: &Assets<'_>,
    compensator: Option<&mut dyn Compensator>,
) -> Result<SimLog> {
    let steps = check_fits(cfg, assets)?;
    let v = assets.vehicle;
    let plant = Plant::new(v, cfg.plant)?;
    let (ts, vx) = (v.ts, v.vx);

    let mut own_nd;
    let compensator: Option<&mut dyn Compensator> = match (cfg.stack, compensator) {
        (ControllerStack::LqrNeuroDob, Some(c)) => Some(c),
        (ControllerStack::LqrNeuroDob, None) => {
            own_nd = assets
                .neurodob
                .ok_or_else(|| Error::MissingAsset("the lqr-neurodob stack needs a trained checkpoint".into()))?;
            Some(&mut own_nd)
        }
        _ => None,
    };
    let mut compensator = compensator;
    let dob = match cfg.stack {
        ControllerStack::LqrDob => Some(
            assets
                .dob
                .ok_or_else(|| Error::MissingAsset("the lqr-dob stack needs an observer design".into()))?,
        ),
        _ => None,
    };

    let mut excitation_rng: Option<(ChaCha8Rng, Excitation)> = match (cfg.stack, cfg.excitation) {
        (ControllerStack::Driver, Some(e)) if e.sigma > 0.0 => {
            Some((rng::stream(cfg.seed, &rng::excitation_stream(cfg.run_index)), e))
        }
        _ => None,
    };
    let mut noise = 0.0;

    let mut x = cfg.initial_state;
    let mut plant_state = PlantInternalState::default();
    let mut driver_state = DriverState::default();
    let mut dob_state = DobState::default();
    let mut records = Vec::with_capacity(steps);
    let mut diverged = None;

    for k in 0..steps {
        let t = k as f64 * ts;
        let s = k as f64 * vx * ts;
        let kappa = assets.map.curvature_at(s)?;
        let psi_dot_des = vx * kappa;
        let delta_lqr = assets.lqr.command(&x);
        let (delta_d, ds) = driver_command(&cfg.driver, &x, assets.map, s, vx, v, driver_state)?;
        driver_state = ds;
        let d_hat = match dob {
            Some(d) => dob_update(d, &mut dob_state, &x),
            None => 0.0,
        };
        let (delta_c, (delta_f, clamped)) = match cfg.stack {
            ControllerStack::Driver => {
                if let Some((rng, e)) = excitation_rng.as_mut() {
                    let a = ts / e.tau;
                    let xi: f64 = rng.sample(StandardNormal);
                    noise += -a * noise + e.sigma * (2.0 * a).sqrt() * xi;
                }
                (0.0, final_command(delta_d + noise, 0.0, cfg.steer_limit))
            }
            ControllerStack::Lqr => (0.0, final_command(delta_lqr, 0.0, cfg.steer_limit)),
            ControllerStack::LqrDob => {
                let u = dob_compensate(delta_lqr, d_hat);
                (-d_hat, final_command(u, 0.0, cfg.steer_limit))
            }
            ControllerStack::LqrNeuroDob => {
                let c = compensator.as_mut().expect("checked above");
                let delta_c = c.compensation(k, &FeatureVector::new(&x, delta_lqr));
                (delta_c, final_command(delta_lqr, delta_c, cfg.steer_limit))
            }
        };
        let disturbance = cfg.disturbance.at(k);
        records.push(SimRecord {
            t,
            s,
            kappa,
            psi_dot_des,
            state: x,
            delta_lqr,
            delta_c,
            delta_f,
            delta_d,
            d_hat,
            disturbance,
            clamped,
        });
        dob_state.record_applied(delta_f, psi_dot_des);
        match plant.step(&x, delta_f + disturbance, psi_dot_des, plant_state) {
            Ok((next, ps)) => {
                if next.e_y.abs() > DIVERGENCE_EY {
                    diverged = Some(Divergence {
                        step: k + 1,
                        reason: format!("|e_y| = {} m exceeds {DIVERGENCE_EY} m", next.e_y.abs()),
                    });
                    break;
                }
                x = next;
                plant_state = ps;
            }
            Err(_) => {
                diverged = Some(Divergence {
                    step: k + 1,
                    reason: "plant state became non-finite".into(),
                });
                break;
            }
        }
    }

    Ok(SimLog {
        ts,
        vx,
        records,
        meta: SimMeta {
            scenario: cfg.describe(),
            params_hash: params_hash(cfg, assets),
            diverged,
        },
    })
}

/// [`simulate`], with divergence reported as an error.
pub fn run_scenario(cfg: &ScenarioConfig, assets: &Assets<'_>) -> Result<SimLog> {
    let log = simulate(cfg, assets, None)?;
    if let Some(d) = &log.meta.diverged {
        return Err(Error::Diverged {
            step: d.step,
            reason: d.reason.clone(),
        });
    }
    Ok(log)
}

/// Independent scenarios on the parallel executor, results in input order.
pub fn run_scenarios(cfgs: &[ScenarioConfig], assets: &Assets<'_>) -> Vec<Result<SimLog>> {
    exec::map(cfgs, |c| run_scenario(c, assets))
}

/// Driver-in-the-loop collection with the LQR as a passive shadow.
#[allow(clippy::too_many_arguments)]
pub fn collect_training_run(
    map: &RoadMap,
    driver_profile: &str,
    driver: &DriverParams,
    plant: &PlantConfig,
    vehicle: &VehicleParams,
    lqr: &LqrDesign,
    excitation: Option<Excitation>,
    seed: u64,
    run_index: usize,
) -> Result<SimLog> {
    let mut cfg = ScenarioConfig::new(map.name.clone(), ControllerStack::Driver);
    cfg.plant = *plant;
    cfg.driver_profile = driver_profile.to_string();
    cfg.driver = *driver;
    cfg.excitation = excitation;
    cfg.seed = seed;
    cfg.run_index = run_index;
    let assets = Assets {
        vehicle,
        lqr,
        dob: None,
        neurodob: None,
        map,
    };
    run_scenario(&cfg, &assets)
}
