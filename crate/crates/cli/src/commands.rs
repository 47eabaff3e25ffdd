//! The five pipeline commands. Progress goes to `log`; results go to files.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rtmix_core::config::simulation_from_key_values;
use rtmix_core::evaluation::{error_map, interface_mask, threshold_report, ErrorMap, ThresholdReport};
use rtmix_core::rtmx::{FIRST_STEP_KEY, TRUNCATED_KEY};
use rtmix_core::transport::StepReport;
use rtmix_core::{parse_simulation_config, run_with, Channel, StructuredTriMesh};
use rtmix_surrogate::train::EpochReport;
use rtmix_surrogate::{make_training_samples, new_model, rollout, train as train_model, ModelConfig};

use crate::error::CliError;
use crate::files::{read_dataset, read_model, read_rtmx, write_bytes, write_dataset, write_model, write_rtmx, write_text};
use crate::pgm::Graymap;
use crate::prediction::Prediction;

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Skip the per-step lines.
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub steps: usize,
    pub total: Duration,
    pub step_times: Vec<Duration>,
    /// Steps on which neither QP had an active bound.
    pub inactive_steps: usize,
}

impl SimulateSummary {
    pub fn mean_step(&self) -> Duration {
        mean(&self.step_times)
    }
}

fn mean(times: &[Duration]) -> Duration {
    if times.is_empty() {
        Duration::ZERO
    } else {
        times.iter().sum::<Duration>() / times.len() as u32
    }
}

pub fn simulate(args: &SimulateArgs, log: &mut dyn Write) -> Result<SimulateSummary, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let cfg = parse_simulation_config(&text)?;
    cfg.validate()?;
    let total = cfg.step_count();
    writeln!(log, "simulating {}x{} grid, {} steps of dt = {}", cfg.nx, cfg.ny, total, cfg.dt)?;
    let started = Instant::now();
    let mut step_times = Vec::with_capacity(total);
    let mut inactive_steps = 0;
    let mut log_error = None;
    let quiet = args.quiet;
    let outcome = run_with(cfg, |r: &StepReport| {
        step_times.push(r.elapsed);
        inactive_steps += usize::from(r.active_set_empty());
        if !quiet && log_error.is_none() {
            let line = writeln!(
                log,
                "step {} t = {:.6} wall {:.3} ms qp iterations {}/{} active {}/{}",
                r.step,
                r.time,
                r.elapsed.as_secs_f64() * 1e3,
                r.iterations[0],
                r.iterations[1],
                r.active[0],
                r.active[1]
            );
            log_error = line.err();
        }
    });
    if let Some(e) = log_error {
        return Err(e.into());
    }
    let elapsed = started.elapsed();
    match outcome {
        Ok(ds) => {
            write_dataset(&args.out, &ds)?;
            let summary = SimulateSummary { steps: ds.steps(), total: elapsed, step_times, inactive_steps };
            writeln!(
                log,
                "total wall {:.3} s, mean {:.3} ms per step, {} of {} steps with no active bound",
                elapsed.as_secs_f64(),
                summary.mean_step().as_secs_f64() * 1e3,
                inactive_steps,
                summary.steps
            )?;
            writeln!(log, "wrote {}", args.out.display())?;
            Ok(summary)
        }
        Err(failure) => {
            write_dataset(&args.out, &failure.partial)?;
            writeln!(
                log,
                "stopped after {} steps; partial dataset written to {} with {} = {}",
                failure.partial.steps(),
                args.out.display(),
                TRUNCATED_KEY,
                failure.partial.steps()
            )?;
            Err(failure.error.into())
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub fraction: f64,
    pub out: PathBuf,
    pub window: Option<usize>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub train_steps: usize,
    pub samples: usize,
    pub loss_history: Vec<f64>,
    pub twct: Duration,
}

pub fn train(args: &TrainArgs, log: &mut dyn Write) -> Result<TrainSummary, CliError> {
    let (ds, _) = read_dataset(&args.data)?;
    let reference = ModelConfig::reference(ds.nx(), ds.ny());
    let cfg = ModelConfig {
        window: args.window.unwrap_or(reference.window),
        epochs: args.epochs.unwrap_or(reference.epochs),
        batch_size: args.batch.unwrap_or(reference.batch_size),
        seed: args.seed.unwrap_or(reference.seed),
        learning_rate: args.learning_rate.unwrap_or(reference.learning_rate),
        ..reference
    };
    cfg.validate()?;
    let set = make_training_samples(&ds, args.fraction, cfg.window)?;
    let mut model = new_model(cfg, &set)?;
    writeln!(
        log,
        "training on steps 1..={} ({} samples, window {}), {} parameters",
        set.train_steps,
        set.len(),
        set.window,
        model.network.param_count()
    )?;
    let started = Instant::now();
    let mut log_error = None;
    let result = train_model(&mut model, &set, |r: &EpochReport| {
        if log_error.is_none() {
            log_error =
                writeln!(log, "epoch {} loss {:.6e} wall {:.3} s", r.epoch, r.loss, r.elapsed.as_secs_f64()).err();
        }
    });
    let twct = started.elapsed();
    if let Some(e) = log_error {
        return Err(e.into());
    }
    result?;
    writeln!(log, "TWCT {:.3} s", twct.as_secs_f64())?;
    write_model(&args.out, &model)?;
    writeln!(log, "wrote {}", args.out.display())?;
    Ok(TrainSummary { train_steps: set.train_steps, samples: set.len(), loss_history: model.loss_history, twct })
}

#[derive(Debug, Clone)]
pub struct ForecastArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSummary {
    pub first_step: usize,
    pub last_step: usize,
    pub pwct: Duration,
    pub step_times: Vec<Duration>,
}

pub fn forecast(args: &ForecastArgs, log: &mut dyn Write) -> Result<ForecastSummary, CliError> {
    let model = read_model(&args.model)?;
    let (ds, _) = read_dataset(&args.data)?;
    let r = rollout(&model, &ds, ds.steps())?;
    let prediction = Prediction { config: ds.config().clone(), first_step: r.first_step, frames: r.frames };
    write_rtmx(&args.out, &prediction.to_rtmx())?;
    let summary = ForecastSummary {
        first_step: prediction.first_step,
        last_step: prediction.last_step(),
        pwct: mean(&r.step_times),
        step_times: r.step_times,
    };
    writeln!(
        log,
        "predicted steps {}..={}; PWCT {:.6} s (mean over {} steps)",
        summary.first_step,
        summary.last_step,
        summary.pwct.as_secs_f64(),
        summary.step_times.len()
    )?;
    writeln!(log, "wrote {}", args.out.display())?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub truth: PathBuf,
    pub pred: PathBuf,
    pub out: PathBuf,
    /// Percent threshold for the pass/fail report.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub maps: Vec<ErrorMap>,
    pub report: ThresholdReport,
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const FINAL_IMAGE: &str = "final_error.pgm";

pub fn error_csv_name(step: usize) -> String {
    format!("error_step_{step:05}.csv")
}

pub fn evaluate(args: &EvaluateArgs, log: &mut dyn Write) -> Result<EvaluateSummary, CliError> {
    let (truth, _) = read_dataset(&args.truth)?;
    let pred = Prediction::from_rtmx(&read_rtmx(&args.pred)?)?;
    if (pred.config.nx, pred.config.ny) != (truth.nx(), truth.ny()) {
        return Err(CliError::Config(format!(
            "prediction grid {}x{} differs from truth grid {}x{}",
            pred.config.nx,
            pred.config.ny,
            truth.nx(),
            truth.ny()
        )));
    }
    if pred.last_step() > truth.steps() {
        return Err(CliError::Config(format!(
            "prediction reaches step {}, truth has {} steps",
            pred.last_step(),
            truth.steps()
        )));
    }
    let mesh = StructuredTriMesh::new(truth.nx(), truth.ny(), truth.config().domain_length())
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mask = interface_mask(&mesh);
    let mut maps = Vec::with_capacity(pred.frames.len());
    for (i, frame) in pred.frames.iter().enumerate() {
        let step = pred.first_step + i;
        maps.push(error_map(truth.frame(step, Channel::Product), frame, step).map_err(|e| CliError::Config(e.to_string()))?);
    }
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::io(&args.out, e))?;
    let mut summary_csv = String::from(
        "step,time,inf_norm,max_under,max_over,worst_x,worst_y,interface_inf_norm,interface_max_under,interface_max_over\n",
    );
    for m in &maps {
        let band = m.region_summary(&mask).map_err(|e| CliError::Config(e.to_string()))?;
        let [wx, wy] = mesh.node_coords(m.summary.worst_node);
        let s = &m.summary;
        let _ = writeln!(
            summary_csv,
            "{},{},{},{},{},{},{},{},{},{}",
            m.step,
            truth.time_of(m.step),
            s.inf_norm,
            s.max_under,
            s.max_over,
            wx,
            wy,
            band.inf_norm,
            band.max_under,
            band.max_over
        );
        let mut csv = String::from("node,ix,iy,x,y,error_percent\n");
        for (node, v) in m.values.iter().enumerate() {
            let (ix, iy) = mesh.node_grid_position(node);
            let [x, y] = mesh.node_coords(node);
            let _ = writeln!(csv, "{node},{ix},{iy},{x},{y},{v}");
        }
        write_text(&args.out.join(error_csv_name(m.step)), &csv)?;
    }
    write_text(&args.out.join(SUMMARY_FILE), &summary_csv)?;
    let report = threshold_report(&maps, &mesh, args.threshold).map_err(|e| CliError::Config(e.to_string()))?;
    let last = maps.last().expect("prediction has at least one frame");
    let image = Graymap::symmetric(truth.nx(), truth.ny(), &last.values, last.summary.inf_norm);
    write_bytes(&args.out.join(FINAL_IMAGE), &image.to_bytes())?;
    let verdict = |pass: bool| if pass { "within" } else { "above" };
    writeln!(
        log,
        "step {}: global inf-norm {:.4}% ({} {}%), worst at ({:.4}, {:.4})",
        report.final_step,
        report.global.summary.inf_norm,
        verdict(report.global.pass),
        report.threshold,
        report.global.worst_position[0],
        report.global.worst_position[1]
    )?;
    writeln!(
        log,
        "step {}: interface inf-norm {:.4}% ({} {}%)",
        report.final_step,
        report.interface.summary.inf_norm,
        verdict(report.interface.pass),
        report.threshold
    )?;
    writeln!(log, "wrote {} maps to {}", maps.len(), args.out.display())?;
    Ok(EvaluateSummary { maps, report })
}

#[derive(Debug, Clone)]
pub struct ExportArgs {
    pub data: PathBuf,
    pub channel: String,
    /// 0-based frame index.
    pub step: usize,
    pub out: PathBuf,
}

/// Channel names of an RTMX file, in storage order.
fn channel_names(path: &Path, file: &rtmix_core::rtmx::RtmxFile) -> Result<Vec<&'static str>, CliError> {
    let mut kv = file.key_values().map_err(|e| CliError::rtmx(path, e))?;
    if kv.get(FIRST_STEP_KEY).is_some() {
        return Ok(vec![Channel::Product.name()]);
    }
    kv.remove(TRUNCATED_KEY);
    let cfg = simulation_from_key_values(&kv)?;
    Ok(Channel::layout(cfg.store_invariants).iter().map(|c| c.name()).collect())
}

pub fn export(args: &ExportArgs, log: &mut dyn Write) -> Result<Graymap, CliError> {
    let file = read_rtmx(&args.data)?;
    let names = channel_names(&args.data, &file)?;
    if names.len() != file.channels as usize {
        return Err(CliError::Config(format!("{}: header has {} channels", args.data.display(), file.channels)));
    }
    let channel = names.iter().position(|n| *n == args.channel).ok_or_else(|| {
        CliError::Config(format!("no channel `{}` in {} (have {})", args.channel, args.data.display(), names.join(", ")))
    })?;
    let steps = file.steps as usize;
    if args.step >= steps {
        return Err(CliError::Config(format!("step {} out of range: file has {} frames (0-based)", args.step, steps)));
    }
    let max = (0..steps).flat_map(|s| file.frame(s, channel).iter().copied()).fold(0.0f64, f64::max);
    let image = Graymap::linear(file.nx as usize, file.ny as usize, file.frame(args.step, channel), 0.0, max);
    write_bytes(&args.out, &image.to_bytes())?;
    writeln!(log, "wrote {} ({} frame {}, scale 0..{})", args.out.display(), args.channel, args.step, max)?;
    Ok(image)
}
