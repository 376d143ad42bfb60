use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use neurodob::config::{resolve_map, Config};
use neurodob::eval::{self, CaseOutput, CaseSpec, EVAL_STACKS};
use neurodob::neurodob::{build_dataset, rows_from_csv, rows_to_csv, train_neurodob, zoh_resample, NeuroDob, TrainingSet};
use neurodob::nn::{StopReason, TrainReport};
use neurodob::plot::{emit_plots, PlotInputs, HISTOGRAM_BINS};
use neurodob::road::curvature_histogram;
use neurodob::sim::{Assets, ControllerStack, ScenarioConfig, SimLog};
use neurodob::stability::certify;
use neurodob::Error;

const CONFIG_HELP: &str = "\
Configuration file (TOML; every key optional, defaults shown):

  seed = 0
  [vehicle]  m = 1274  iz = 1523  lf = 1.016  lr = 1.562
             caf = 118800  car = 165300  vx_kmh = 50  ts = 0.01
  [lqr]      q_diag = [1, 0, 1, 0]  r = 10
  [dob]      q_cutoff_hz = 2
  [nn]       lr = 1e-3  weight_decay = 1e-4  batch_size = 64  max_epochs = 2000
             plateau_factor = 0.5  plateau_patience = 10
             early_stop_delta = 1e-5  early_stop_patience = 50  val_fraction = 0.2
             hidden = [64, 64, 64, 64]  dropout = 0.2  epsilon1 = 0.1
  [driver]   profile = \"smooth\" | \"aggressive\"; optional overrides
             preview_time, feedback_gain_ey, feedback_gain_epsi, smoothing_tau
  [sim]      duration = 100  steer_limit = 0.6
             excitation_sigma = 0.03  excitation_tau = 1  collection_runs = 2
  [sim.plant] variant = \"perturbed\"  stiffness_scale = 0.85  mass_scale = 1.1
             input_bias = 0.003  input_lag_tau = 0.04  tire_sat_alpha = 0.05
  [case.N]   train_map, validate_map (map1|map2|map3 or a map CSV path),
             optional driver_profile, plant = \"nominal\" | \"perturbed\" | {table}

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 acceptance check failed.";

#[derive(Parser)]
#[command(name = "neurodob", version, about = "Lane-keeping LQR with a learned steering compensator", after_help = CONFIG_HELP)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a builtin road map and its curvature histogram as CSV.
    GenRoad {
        map: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = HISTOGRAM_BINS)]
        bins: usize,
    },
    /// Drive a map with the surrogate driver and log training data.
    Collect {
        #[arg(long, default_value = "map1")]
        map: String,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value = "out/collect")]
        out: PathBuf,
    },
    /// Train a compensator from dataset CSVs.
    Train {
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long, default_value = "out/train")]
        out: PathBuf,
    },
    /// Run one controller stack on a map.
    Simulate {
        #[arg(long, default_value = "map1")]
        map: String,
        /// driver | lqr | lqr-dob | lqr-neurodob
        #[arg(long, default_value = "lqr")]
        stack: ControllerStack,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value = "out/simulate")]
        out: PathBuf,
    },
    /// Compare every stack on a map using a trained checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "map2")]
        map: String,
        #[arg(long, default_value = "out/evaluate")]
        out: PathBuf,
    },
    /// Run a case study end to end: 1, 2, 3, `all`, or a `[case.N]` key.
    Case {
        id: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Exit with code 4 when the case misses its acceptance threshold.
        #[arg(long)]
        check: bool,
    },
    /// Print the practical-stability certificate of the LQR loop.
    Stability {
        /// Compensation bound; defaults to nn.epsilon1.
        #[arg(long)]
        epsilon1: Option<f64>,
        /// Map whose peak curvature sets the feedforward bound.
        #[arg(long, default_value = "map1")]
        map: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert an external log (dataset columns, any rate) to a uniform dataset CSV.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target step; defaults to vehicle.ts.
        #[arg(long)]
        ts: Option<f64>,
    },
    /// Render figures from saved logs, maps and a training curve.
    Plot {
        #[arg(long)]
        map: Vec<String>,
        /// label=path.csv, repeatable; the last one is used for the steering plot.
        #[arg(long)]
        log: Vec<String>,
        #[arg(long)]
        loss: Option<PathBuf>,
        #[arg(long, default_value = "out/plots")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Diverged { .. }) => 3,
        Some(
            Error::Config(_)
            | Error::InvalidParameter { .. }
            | Error::Parse { .. }
            | Error::InvalidMap(_)
            | Error::CurvatureBoundExceeded { .. }
            | Error::MissingAsset(_),
        ) => 2,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::GenRoad { map, out, bins } => {
            let m = resolve_map(&map)?;
            write(&out.join(format!("{}.csv", m.name)), &m.to_csv())?;
            write(
                &out.join(format!("{}_histogram.csv", m.name)),
                &curvature_histogram(&m, bins)?.to_csv(),
            )?;
            println!("{}: {} stations, {:.1} m", m.name, m.len(), m.total_length());
        }
        Command::Collect { map, profile, runs, out } => {
            let mut cfg = cfg;
            if let Some(r) = runs {
                cfg.sim.collection_runs = r;
            }
            let d = cfg.designs()?;
            let m = resolve_map(&map)?;
            let spec = CaseSpec {
                id: "collect".into(),
                train_map: map.clone(),
                validate_map: map,
                driver_profile: profile.unwrap_or_else(|| cfg.driver.profile.clone()),
                plant: cfg.sim.plant,
            };
            let logs = eval::collect(&spec, &cfg, &d, &m)?;
            for (i, l) in logs.iter().enumerate() {
                l.save(&out, &format!("collect_{i}"))?;
                write(&out.join(format!("dataset_{i}.csv")), &rows_to_csv(&l.training_rows()))?;
            }
            println!("{} runs of {} rows -> {}", logs.len(), logs[0].len(), out.display());
        }
        Command::Train { data, out } => {
            let mut set = TrainingSet::default();
            for p in &data {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                set.extend(build_dataset(&rows_from_csv(&text)?)?);
            }
            let (model, st, report) = train_neurodob(&set, &cfg.nn.network(), &cfg.nn.train_config(cfg.seed))?;
            let nd = NeuroDob::new(model, st, cfg.nn.limits()?);
            nd.save(&out.join("checkpoint.txt"))?;
            write(&out.join("train_loss.csv"), &report.to_csv())?;
            println!(
                "{} samples ({} outliers dropped), {} epochs, best val {:.3e} at epoch {}",
                set.len(),
                set.outliers_dropped,
                report.epochs_run,
                report.best_val_loss,
                report.best_epoch
            );
        }
        Command::Simulate {
            map,
            stack,
            checkpoint,
            duration,
            out,
        } => {
            let d = cfg.designs()?;
            let m = resolve_map(&map)?;
            let nd = checkpoint
                .map(|p| NeuroDob::load(&p, cfg.nn.limits()?))
                .transpose()?;
            let mut s = ScenarioConfig::new(m.name.clone(), stack);
            s.duration = duration.unwrap_or(cfg.sim.duration);
            s.plant = cfg.sim.plant;
            s.driver_profile = cfg.driver.profile.clone();
            s.driver = cfg.driver.params_for(&cfg.driver.profile)?;
            s.seed = cfg.seed;
            s.steer_limit = cfg.sim.steer_limit;
            let assets = Assets {
                vehicle: &d.vehicle,
                lqr: &d.lqr,
                dob: Some(&d.dob),
                neurodob: nd.as_ref(),
                map: &m,
            };
            let log = neurodob::sim::simulate(&s, &assets, None)?;
            log.save(&out, stack.name())?;
            if let Some(div) = &log.meta.diverged {
                return Err(Error::Diverged {
                    step: div.step,
                    reason: div.reason.clone(),
                }
                .into());
            }
            let r = eval::StackRmse::from_log(stack, &log)?;
            println!("{stack} on {}: e_y RMSE {:.6} m, e_psi RMSE {:.6} rad", m.name, r.e_y, r.e_psi);
        }
        Command::Evaluate { checkpoint, map, out } => {
            let d = cfg.designs()?;
            let nd = NeuroDob::load(&checkpoint, cfg.nn.limits()?)?;
            let spec = CaseSpec {
                id: "evaluate".into(),
                train_map: checkpoint.display().to_string(),
                validate_map: map.clone(),
                driver_profile: cfg.driver.profile.clone(),
                plant: cfg.sim.plant,
            };
            let ev = eval::evaluate(&spec, &cfg, &d, &nd)?;
            write(&out.join("report.txt"), &ev.report.to_text())?;
            write(&out.join("report.csv"), &ev.report.to_csv())?;
            for (s, l) in EVAL_STACKS.iter().zip(&ev.logs) {
                l.save(&out.join("logs"), &format!("validate_{}", s.name()))?;
            }
            let m = resolve_map(&map)?;
            let runs: Vec<(&str, &SimLog)> = EVAL_STACKS.iter().map(|s| s.name()).zip(&ev.logs).collect();
            emit_plots(
                &PlotInputs {
                    maps: &[&m],
                    runs: &runs,
                    train_report: None,
                },
                &out.join("plots"),
            )?;
            print!("{}", ev.report.to_text());
        }
        Command::Case { id, out, check } => return run_cases(&cfg, &id, &out, check),
        Command::Stability { epsilon1, map, out } => {
            let d = cfg.designs()?;
            let m = resolve_map(&map)?;
            let eps1 = epsilon1.unwrap_or(cfg.nn.epsilon1);
            let eps2 = d.vehicle.vx * m.max_abs_curvature();
            let q0 = nalgebra::Matrix4::identity();
            let cert = certify(&d.model, &d.lqr, eps1, eps2, &q0)?;
            let text = cert.to_text();
            if let Some(p) = out {
                write(&p, &text)?;
            }
            print!("{text}");
        }
        Command::Ingest { input, out, ts } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let rows = rows_from_csv(&text)?;
            let resampled = zoh_resample(&rows, ts.unwrap_or(cfg.vehicle.ts))?;
            write(&out, &rows_to_csv(&resampled))?;
            println!("{} rows -> {} rows", rows.len(), resampled.len());
        }
        Command::Plot { map, log, loss, out } => {
            let maps = map.iter().map(|m| resolve_map(m)).collect::<neurodob::Result<Vec<_>>>()?;
            let vx = cfg.vehicle.params().vx;
            let mut logs = Vec::new();
            for spec in &log {
                let (label, path) = spec
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("--log expects label=path, got `{spec}`")))?;
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
                logs.push((label.to_string(), SimLog::from_csv(&text, vx)?));
            }
            let report = loss
                .map(|p| -> anyhow::Result<TrainReport> {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    parse_loss_csv(&text)
                })
                .transpose()?;
            let map_refs: Vec<_> = maps.iter().collect();
            let runs: Vec<(&str, &SimLog)> = logs.iter().map(|(l, g)| (l.as_str(), g)).collect();
            let files = emit_plots(
                &PlotInputs {
                    maps: &map_refs,
                    runs: &runs,
                    train_report: report.as_ref(),
                },
                &out,
            )?;
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_loss_csv(text: &str) -> anyhow::Result<TrainReport> {
    let mut r = TrainReport {
        epochs_run: 0,
        train_loss: vec![],
        val_loss: vec![],
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        lr_trace: vec![],
        stop_reason: StopReason::MaxEpochs,
    };
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Error::parse("loss csv", e.to_string()))?;
        if f.len() != 4 {
            bail!(Error::parse("loss csv", format!("expected 4 fields, got {}", f.len())));
        }
        r.train_loss.push(f[1]);
        r.val_loss.push(f[2]);
        r.lr_trace.push(f[3]);
        if f[2] < r.best_val_loss {
            r.best_val_loss = f[2];
            r.best_epoch = r.epochs_run;
        }
        r.epochs_run += 1;
    }
    Ok(r)
}

/// Minimum e_y improvement per builtin case.
fn threshold(id: &str) -> Option<f64> {
    match id {
        "1" => Some(50.0),
        "2" => Some(15.0),
        _ => None,
    }
}

fn run_cases(cfg: &Config, id: &str, out: &Path, check: bool) -> anyhow::Result<ExitCode> {
    let ids: Vec<String> = if id == "all" {
        vec!["1".into(), "2".into(), "3".into()]
    } else {
        vec![id.to_string()]
    };
    let d = cfg.designs()?;
    let mut trained: Vec<(String, eval::TrainedCase)> = Vec::new();
    let mut improvements: Vec<(String, f64, f64)> = Vec::new();
    for id in &ids {
        let spec = CaseSpec::from_config(id, cfg)?;
        // Cases sharing a training setup reuse the trained compensator.
        let t = match trained.iter().find(|(m, _)| *m == spec.train_map) {
            Some((_, t)) => t.clone(),
            None => {
                let t = eval::train_case(&spec, cfg, &d)?;
                trained.push((spec.train_map.clone(), t.clone()));
                t
            }
        };
        let evaluation = eval::evaluate(&spec, cfg, &d, &t.neurodob)?;
        let output = CaseOutput {
            spec: spec.clone(),
            trained: t,
            evaluation,
        };
        let maps: Vec<_> = [&spec.train_map, &spec.validate_map]
            .into_iter()
            .map(|m| resolve_map(m))
            .collect::<neurodob::Result<_>>()?;
        let map_refs: Vec<_> = if spec.train_map == spec.validate_map {
            vec![&maps[0]]
        } else {
            maps.iter().collect()
        };
        output.save(&out.join(format!("case{id}")), &map_refs)?;
        print!("{}", output.evaluation.report.to_text());
        let (ey, epsi) = output
            .evaluation
            .report
            .change(ControllerStack::LqrNeuroDob)
            .expect("report has both stacks");
        println!(
            "training: {} samples, {} epochs, best val {:.3e}\n",
            output.trained.samples, output.trained.report.epochs_run, output.trained.report.best_val_loss
        );
        improvements.push((id.clone(), ey, epsi));
    }
    if !check {
        return Ok(ExitCode::SUCCESS);
    }
    let get = |k: &str| improvements.iter().find(|(i, _, _)| i == k).map(|(_, ey, _)| *ey);
    let mut ok = true;
    for (id, ey, epsi) in &improvements {
        let mut pass = threshold(id).is_none_or(|t| *ey >= t);
        match id.as_str() {
            "1" => pass &= epsi.abs() <= 5.0,
            "2" => pass &= get("1").is_none_or(|c1| *ey < c1),
            "3" => pass &= get("2").is_none_or(|c2| *ey > c2),
            _ => {}
        }
        println!(
            "case {id}: e_y {ey:.2}% e_psi {epsi:.2}% -> {}",
            if pass { "PASS" } else { "FAIL" }
        );
        ok &= pass;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(4) })
}
