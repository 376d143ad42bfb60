//! Case studies: collect → train → compare stacks on a validation map.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{resolve_map, Config, Designs};
use crate::error::{Error, Result};
use crate::exec;
use crate::neurodob::{build_dataset, train_neurodob, NeuroDob, TrainingSet};
use crate::nn::TrainReport;
use crate::road::RoadMap;
use crate::sim::{collect_training_run, run_scenarios, Assets, ControllerStack, ScenarioConfig, SimLog};
use crate::vehicle::PlantConfig;

pub fn rmse(series: &[f64], reference: &[f64]) -> Result<f64> {
    if series.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: series.len(),
            right: reference.len(),
        });
    }
    if series.is_empty() {
        return Err(Error::Empty);
    }
    let sum: f64 = series.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / series.len() as f64).sqrt())
}

/// Reduction relative to `base`, in percent; positive means `new` is smaller.
pub fn percent_change(base: f64, new: f64) -> f64 {
    (base - new) / base * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackRmse {
    pub stack: ControllerStack,
    pub e_y: f64,
    pub e_psi: f64,
    /// Applied steering against the driver's command on the same states.
    pub delta_vs_driver: f64,
}

impl StackRmse {
    pub fn from_log(stack: ControllerStack, log: &SimLog) -> Result<Self> {
        let zeros = vec![0.0; log.len()];
        Ok(Self {
            stack,
            e_y: rmse(&log.column(|r| r.state.e_y), &zeros)?,
            e_psi: rmse(&log.column(|r| r.state.e_psi), &zeros)?,
            delta_vs_driver: rmse(&log.column(|r| r.delta_f), &log.column(|r| r.delta_d))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub title: String,
    pub baseline: ControllerStack,
    pub rows: Vec<StackRmse>,
}

impl RmseReport {
    pub fn get(&self, stack: ControllerStack) -> Option<&StackRmse> {
        self.rows.iter().find(|r| r.stack == stack)
    }

    /// (e_y, e_ψ) percent change of `stack` against the baseline.
    pub fn change(&self, stack: ControllerStack) -> Option<(f64, f64)> {
        let b = self.get(self.baseline)?;
        let r = self.get(stack)?;
        Some((percent_change(b.e_y, r.e_y), percent_change(b.e_psi, r.e_psi)))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.title);
        let _ = writeln!(
            s,
            "{:<14} {:>12} {:>9} {:>14} {:>9} {:>12}",
            "stack", "e_y [m]", "change", "e_psi [rad]", "change", "delta-d [rad]"
        );
        for r in &self.rows {
            let (cy, cp) = self.change(r.stack).unwrap_or((0.0, 0.0));
            let _ = writeln!(
                s,
                "{:<14} {:>12.6} {:>8.2}% {:>14.6} {:>8.2}% {:>12.6}",
                r.stack.name(),
                r.e_y,
                cy,
                r.e_psi,
                cp,
                r.delta_vs_driver
            );
        }
        let _ = writeln!(s, "change = (baseline - stack) / baseline, baseline = {}", self.baseline);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stack,e_y_rmse_m,e_y_change_pct,e_psi_rmse_rad,e_psi_change_pct,delta_vs_driver_rmse_rad\n");
        for r in &self.rows {
            let (cy, cp) = self.change(r.stack).unwrap_or((0.0, 0.0));
            let _ = writeln!(s, "{},{},{},{},{},{}", r.stack.name(), r.e_y, cy, r.e_psi, cp, r.delta_vs_driver);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSpec {
    pub id: String,
    pub train_map: String,
    pub validate_map: String,
    pub driver_profile: String,
    pub plant: PlantConfig,
}

impl CaseSpec {
    /// Builtin cases: 1 trains and validates on map1, 2 validates the map1
    /// model on map2, 3 trains on map3 and validates on map2. All use the
    /// perturbed plant and the smooth driver.
    pub fn builtin(id: u32) -> Option<Self> {
        let (train, validate) = match id {
            1 => ("map1", "map1"),
            2 => ("map1", "map2"),
            3 => ("map3", "map2"),
            _ => return None,
        };
        Some(Self {
            id: id.to_string(),
            train_map: train.into(),
            validate_map: validate.into(),
            driver_profile: "smooth".into(),
            plant: PlantConfig::perturbed(),
        })
    }

    /// `[case.<id>]` from the config, falling back to the builtin case and
    /// then to the `[driver]` / `[sim.plant]` defaults.
    pub fn from_config(id: &str, cfg: &Config) -> Result<Self> {
        let builtin = id.parse().ok().and_then(Self::builtin);
        match (cfg.case.get(id), builtin) {
            (Some(c), _) => Ok(Self {
                id: id.into(),
                train_map: c.train_map.clone(),
                validate_map: c.validate_map.clone(),
                driver_profile: c.driver_profile.clone().unwrap_or_else(|| cfg.driver.profile.clone()),
                plant: c.plant.as_ref().map(|p| p.resolve()).unwrap_or(cfg.sim.plant),
            }),
            (None, Some(b)) => Ok(Self {
                driver_profile: cfg.driver.profile.clone(),
                plant: cfg.sim.plant,
                ..b
            }),
            (None, None) => Err(Error::Config(format!("no case `{id}` (builtin: 1, 2, 3)"))),
        }
    }
}

/// Trained compensator and the data behind it.
#[derive(Debug, Clone)]
pub struct TrainedCase {
    pub neurodob: NeuroDob,
    pub report: TrainReport,
    pub training_logs: Vec<SimLog>,
    pub samples: usize,
    pub outliers_dropped: usize,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: RmseReport,
    /// One log per stack, in [`EVAL_STACKS`] order.
    pub logs: Vec<SimLog>,
}

#[derive(Debug, Clone)]
pub struct CaseOutput {
    pub spec: CaseSpec,
    pub trained: TrainedCase,
    pub evaluation: Evaluation,
}

pub const EVAL_STACKS: [ControllerStack; 4] = [
    ControllerStack::Driver,
    ControllerStack::Lqr,
    ControllerStack::LqrDob,
    ControllerStack::LqrNeuroDob,
];

/// Driver-in-the-loop runs on `map`, one per excitation realization.
pub fn collect(spec: &CaseSpec, cfg: &Config, d: &Designs, map: &RoadMap) -> Result<Vec<SimLog>> {
    let driver = cfg.driver.params_for(&spec.driver_profile)?;
    let runs: Vec<usize> = (0..cfg.sim.collection_runs).collect();
    exec::map(&runs, |&run| {
        collect_training_run(
            map,
            &spec.driver_profile,
            &driver,
            &spec.plant,
            &d.vehicle,
            &d.lqr,
            cfg.sim.excitation(),
            cfg.seed,
            run,
        )
    })
    .into_iter()
    .collect()
}

/// One filtered set per run, concatenated in run order.
pub fn training_set(logs: &[SimLog]) -> Result<TrainingSet> {
    let mut set = TrainingSet::default();
    for l in logs {
        set.extend(build_dataset(&l.training_rows())?);
    }
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(set)
}

pub fn train_case(spec: &CaseSpec, cfg: &Config, d: &Designs) -> Result<TrainedCase> {
    let map = resolve_map(&spec.train_map)?;
    let training_logs = collect(spec, cfg, d, &map)?;
    let set = training_set(&training_logs)?;
    let (model, st, report) = train_neurodob(&set, &cfg.nn.network(), &cfg.nn.train_config(cfg.seed))?;
    Ok(TrainedCase {
        neurodob: NeuroDob::new(model, st, cfg.nn.limits()?),
        report,
        training_logs,
        samples: set.len(),
        outliers_dropped: set.outliers_dropped,
    })
}

pub fn evaluate(spec: &CaseSpec, cfg: &Config, d: &Designs, neurodob: &NeuroDob) -> Result<Evaluation> {
    let map = resolve_map(&spec.validate_map)?;
    let driver = cfg.driver.params_for(&spec.driver_profile)?;
    let scenarios: Vec<ScenarioConfig> = EVAL_STACKS
        .iter()
        .map(|&stack| {
            let mut s = ScenarioConfig::new(map.name.clone(), stack);
            s.duration = cfg.sim.duration;
            s.plant = spec.plant;
            s.driver_profile = spec.driver_profile.clone();
            s.driver = driver;
            s.seed = cfg.seed;
            s.steer_limit = cfg.sim.steer_limit;
            s
        })
        .collect();
    let assets = Assets {
        vehicle: &d.vehicle,
        lqr: &d.lqr,
        dob: Some(&d.dob),
        neurodob: Some(neurodob),
        map: &map,
    };
    let logs = run_scenarios(&scenarios, &assets).into_iter().collect::<Result<Vec<_>>>()?;
    let rows = EVAL_STACKS
        .iter()
        .zip(&logs)
        .map(|(&s, l)| StackRmse::from_log(s, l))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        report: RmseReport {
            title: format!(
                "case {}: trained on {}, validated on {}",
                spec.id, spec.train_map, spec.validate_map
            ),
            baseline: ControllerStack::Lqr,
            rows,
        },
        logs,
    })
}

pub fn run_case(spec: &CaseSpec, cfg: &Config) -> Result<CaseOutput> {
    let d = cfg.designs()?;
    let trained = train_case(spec, cfg, &d)?;
    let evaluation = evaluate(spec, cfg, &d, &trained.neurodob)?;
    Ok(CaseOutput {
        spec: spec.clone(),
        trained,
        evaluation,
    })
}

impl CaseOutput {
    /// Writes the report, checkpoint, training curve, every log and the
    /// plots under `dir`, with fixed file names.
    pub fn save(&self, dir: &Path, maps: &[&RoadMap]) -> Result<()> {
        write(&dir.join("report.txt"), &self.evaluation.report.to_text())?;
        write(&dir.join("report.csv"), &self.evaluation.report.to_csv())?;
        write(&dir.join("train_loss.csv"), &self.trained.report.to_csv())?;
        self.trained.neurodob.save(&dir.join("checkpoint.txt"))?;
        let logs = dir.join("logs");
        for (i, l) in self.trained.training_logs.iter().enumerate() {
            l.save(&logs, &format!("collect_{i}"))?;
        }
        for (s, l) in EVAL_STACKS.iter().zip(&self.evaluation.logs) {
            l.save(&logs, &format!("validate_{}", s.name()))?;
        }
        let runs: Vec<(&str, &SimLog)> = EVAL_STACKS
            .iter()
            .map(|s| s.name())
            .zip(&self.evaluation.logs)
            .collect();
        crate::plot::emit_plots(
            &crate::plot::PlotInputs {
                maps,
                runs: &runs,
                train_report: Some(&self.trained.report),
            },
            &dir.join("plots"),
        )?;
        Ok(())
    }
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_hand_values() {
        assert_eq!(rmse(&[1.0, -2.0], &[1.0, -2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[1.0], &[]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(rmse(&[], &[]), Err(Error::Empty)));
    }

    #[test]
    fn percent_change_matches_published_table() {
        // 0.1096 m → 0.0150 m is reported as an 86.31 % decrease.
        let p = percent_change(0.1096, 0.0150);
        assert_eq!(format!("{p:.2}"), "86.31");
    }

    #[test]
    fn builtin_case_roles() {
        let c: Vec<_> = (1..=3).map(|i| CaseSpec::builtin(i).unwrap()).collect();
        assert_eq!((c[0].train_map.as_str(), c[0].validate_map.as_str()), ("map1", "map1"));
        assert_eq!((c[1].train_map.as_str(), c[1].validate_map.as_str()), ("map1", "map2"));
        assert_eq!((c[2].train_map.as_str(), c[2].validate_map.as_str()), ("map3", "map2"));
        assert!(CaseSpec::builtin(4).is_none());
    }

    #[test]
    fn report_change_and_csv() {
        let row = |stack, e_y| StackRmse {
            stack,
            e_y,
            e_psi: 0.01,
            delta_vs_driver: 0.0,
        };
        let r = RmseReport {
            title: "t".into(),
            baseline: ControllerStack::Lqr,
            rows: vec![row(ControllerStack::Lqr, 0.2), row(ControllerStack::LqrNeuroDob, 0.05)],
        };
        let (cy, cp) = r.change(ControllerStack::LqrNeuroDob).unwrap();
        assert!((cy - 75.0).abs() < 1e-12);
        assert_eq!(cp, 0.0);
        assert_eq!(r.to_csv().lines().count(), 3);
        assert!(r.to_text().contains("lqr-neurodob"));
    }
}
