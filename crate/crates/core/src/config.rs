//! Experiment configuration: one sectioned TOML file, every key optional.
//!
//! ```toml
//! seed = 0
//!
//! [vehicle]        # m, iz, lf, lr, caf, car, vx_kmh, ts
//! [lqr]            # q_diag = [1, 0, 1, 0], r = 10
//! [dob]            # q_cutoff_hz = 2
//! [nn]             # lr, weight_decay, batch_size, max_epochs, plateau_*, early_stop_*,
//!                  # val_fraction, hidden = [64, 64, 64, 64], dropout, epsilon1
//! [driver]         # profile = "smooth", optional preview_time, feedback_gain_ey,
//!                  # feedback_gain_epsi, smoothing_tau overrides
//! [sim]            # duration, steer_limit, excitation_sigma, excitation_tau,
//!                  # collection_runs
//! [sim.plant]      # variant, stiffness_scale, mass_scale, input_bias,
//!                  # input_lag_tau, tire_sat_alpha (inf disables)
//! [case.1]         # train_map, validate_map, driver_profile, plant = "perturbed"
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dob::{DobConfig, DobDesign};
use crate::driver::DriverParams;
use crate::error::{Error, Result};
use crate::lqr::{design, LqrDesign, LqrWeights};
use crate::neurodob::{CompensationLimits, NetworkConfig, DEFAULT_EPSILON1, DEFAULT_STEER_LIMIT};
use crate::nn::TrainConfig;
use crate::road::{builtin_map, RoadMap};
use crate::sim::{Excitation, DEFAULT_DURATION};
use crate::vehicle::{discrete_model, kmh_to_ms, DiscreteModel, PlantConfig, PlantVariant, VehicleParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleSection {
    pub m: f64,
    pub iz: f64,
    pub lf: f64,
    pub lr: f64,
    pub caf: f64,
    pub car: f64,
    pub vx_kmh: f64,
    pub ts: f64,
}

impl Default for VehicleSection {
    fn default() -> Self {
        let v = VehicleParams::default();
        Self {
            m: v.mass,
            iz: v.yaw_inertia,
            lf: v.lf,
            lr: v.lr,
            caf: v.caf,
            car: v.car,
            vx_kmh: 50.0,
            ts: v.ts,
        }
    }
}

impl VehicleSection {
    pub fn params(&self) -> VehicleParams {
        VehicleParams {
            mass: self.m,
            yaw_inertia: self.iz,
            lf: self.lf,
            lr: self.lr,
            caf: self.caf,
            car: self.car,
            vx: kmh_to_ms(self.vx_kmh),
            ts: self.ts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrSection {
    pub q_diag: [f64; 4],
    pub r: f64,
}

impl Default for LqrSection {
    fn default() -> Self {
        let w = LqrWeights::default();
        Self { q_diag: w.q_diag, r: w.r }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DobSection {
    pub q_cutoff_hz: f64,
}

impl Default for DobSection {
    fn default() -> Self {
        Self {
            q_cutoff_hz: DobConfig::default().q_cutoff_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_delta: f64,
    pub early_stop_patience: usize,
    pub val_fraction: f64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epsilon1: f64,
}

impl Default for NnSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let n = NetworkConfig::default();
        Self {
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            plateau_factor: t.plateau_factor,
            plateau_patience: t.plateau_patience,
            early_stop_delta: t.early_stop_delta,
            early_stop_patience: t.early_stop_patience,
            val_fraction: t.val_fraction,
            hidden: n.hidden,
            dropout: n.dropout,
            epsilon1: DEFAULT_EPSILON1,
        }
    }
}

impl NnSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            plateau_factor: self.plateau_factor,
            plateau_patience: self.plateau_patience,
            early_stop_delta: self.early_stop_delta,
            early_stop_patience: self.early_stop_patience,
            val_fraction: self.val_fraction,
            seed,
        }
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            hidden: self.hidden.clone(),
            dropout: self.dropout,
        }
    }

    pub fn limits(&self) -> Result<CompensationLimits> {
        CompensationLimits::new(self.epsilon1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverSection {
    pub profile: String,
    pub preview_time: Option<f64>,
    pub feedback_gain_ey: Option<f64>,
    pub feedback_gain_epsi: Option<f64>,
    pub smoothing_tau: Option<f64>,
}

impl Default for DriverSection {
    fn default() -> Self {
        Self {
            profile: "smooth".into(),
            preview_time: None,
            feedback_gain_ey: None,
            feedback_gain_epsi: None,
            smoothing_tau: None,
        }
    }
}

impl DriverSection {
    /// Named profile with this section's overrides applied on top.
    pub fn params_for(&self, profile: &str) -> Result<DriverParams> {
        let mut p = DriverParams::profile(profile).ok_or_else(|| {
            Error::Config(format!(
                "unknown driver profile `{profile}` (expected one of {:?})",
                DriverParams::PROFILES
            ))
        })?;
        if let Some(v) = self.preview_time {
            p.preview_time = v;
        }
        if let Some(v) = self.feedback_gain_ey {
            p.feedback_gain_ey = v;
        }
        if let Some(v) = self.feedback_gain_epsi {
            p.feedback_gain_epsi = v;
        }
        if let Some(v) = self.smoothing_tau {
            p.smoothing_tau = v;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub duration: f64,
    pub steer_limit: f64,
    /// Stationary std of the collection-time steering excitation (rad); 0 disables it.
    pub excitation_sigma: f64,
    pub excitation_tau: f64,
    /// Independent excitation realizations collected per training map.
    pub collection_runs: usize,
    pub plant: PlantConfig,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            duration: DEFAULT_DURATION,
            steer_limit: DEFAULT_STEER_LIMIT,
            excitation_sigma: 0.03,
            excitation_tau: 1.0,
            collection_runs: 2,
            plant: PlantConfig::perturbed(),
        }
    }
}

impl SimSection {
    pub fn excitation(&self) -> Option<Excitation> {
        (self.excitation_sigma > 0.0).then_some(Excitation {
            sigma: self.excitation_sigma,
            tau: self.excitation_tau,
        })
    }
}

/// Plant selection inside a case: a variant name takes the preset, a table
/// gives every field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlantChoice {
    Variant(PlantVariant),
    Custom(PlantConfig),
}

impl PlantChoice {
    pub fn resolve(&self) -> PlantConfig {
        match self {
            PlantChoice::Variant(PlantVariant::Nominal) => PlantConfig::nominal(),
            PlantChoice::Variant(PlantVariant::Perturbed) => PlantConfig::perturbed(),
            PlantChoice::Custom(c) => *c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSection {
    pub train_map: String,
    pub validate_map: String,
    pub driver_profile: Option<String>,
    pub plant: Option<PlantChoice>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub vehicle: VehicleSection,
    pub lqr: LqrSection,
    pub dob: DobSection,
    pub nn: NnSection,
    pub driver: DriverSection,
    pub sim: SimSection,
    pub case: BTreeMap<String, CaseSection>,
}

/// Designs derived from a configuration.
#[derive(Debug, Clone)]
pub struct Designs {
    pub vehicle: VehicleParams,
    pub model: DiscreteModel,
    pub lqr: LqrDesign,
    pub dob: DobDesign,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.params().validate()?;
        LqrWeights {
            q_diag: self.lqr.q_diag,
            r: self.lqr.r,
        }
        .validate()?;
        self.nn.train_config(self.seed).validate()?;
        self.nn.limits()?;
        if self.nn.hidden.is_empty() || self.nn.hidden.contains(&0) {
            return Err(Error::invalid("nn.hidden", "needs at least one layer, all widths > 0"));
        }
        self.driver.params_for(&self.driver.profile)?;
        self.sim.plant.validate()?;
        if let Some(e) = self.sim.excitation() {
            e.validate()?;
        }
        if !(self.sim.duration > 0.0 && self.sim.duration.is_finite()) {
            return Err(Error::invalid("sim.duration", "must be finite and > 0"));
        }
        if !(self.sim.steer_limit > 0.0) {
            return Err(Error::invalid("sim.steer_limit", "must be > 0"));
        }
        if self.sim.collection_runs == 0 {
            return Err(Error::invalid("sim.collection_runs", "must be > 0"));
        }
        for c in self.case.values() {
            if let Some(p) = &c.driver_profile {
                self.driver.params_for(p)?;
            }
            if let Some(p) = &c.plant {
                p.resolve().validate()?;
            }
        }
        Ok(())
    }

    pub fn designs(&self) -> Result<Designs> {
        let vehicle = self.vehicle.params();
        let model = discrete_model(&vehicle)?;
        let lqr = design(
            &model,
            &LqrWeights {
                q_diag: self.lqr.q_diag,
                r: self.lqr.r,
            },
        )?;
        let dob = DobDesign::new(&model, self.dob.q_cutoff_hz)?;
        Ok(Designs {
            vehicle,
            model,
            lqr,
            dob,
        })
    }
}

/// A builtin map name, or a path to a map CSV.
pub fn resolve_map(name: &str) -> Result<RoadMap> {
    if let Some(m) = builtin_map(name) {
        return Ok(m);
    }
    let path = Path::new(name);
    if path.exists() {
        return RoadMap::load_csv(path);
    }
    Err(Error::Config(format!(
        "unknown map `{name}` (builtin: map1, map2, map3, or a CSV path)"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn defaults_round_trip_through_text() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(Config::from_toml("[lqr]\nqq = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_and_cases() {
        let c = Config::from_toml(
            "seed = 9\n[vehicle]\nvx_kmh = 36.0\n[driver]\nsmoothing_tau = 0.05\n\
             [sim.plant]\nvariant = \"nominal\"\ntire_sat_alpha = inf\n\
             [case.4]\ntrain_map = \"map2\"\nvalidate_map = \"map3\"\nplant = \"nominal\"\n",
        )
        .unwrap();
        assert_eq!(c.seed, 9);
        assert!((c.vehicle.params().vx - 10.0).abs() < 1e-12);
        assert_eq!(c.driver.params_for("smooth").unwrap().smoothing_tau, 0.05);
        assert!(c.sim.plant.tire_sat_alpha.is_infinite());
        assert_eq!(c.case["4"].plant.as_ref().unwrap().resolve(), PlantConfig::nominal());
    }

    #[test]
    fn bad_values_rejected() {
        assert!(Config::from_toml("[nn]\nbatch_size = 0\n").is_err());
        assert!(Config::from_toml("[driver]\nprofile = \"sleepy\"\n").is_err());
        assert!(Config::from_toml("[vehicle]\nvx_kmh = 0.0\n").is_err());
    }
}
