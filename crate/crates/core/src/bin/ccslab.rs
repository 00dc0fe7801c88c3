//! Command-line front end for the lab.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ccslab::ccs::{controller_tune, BoundMechanism, ControllerTrace, Mechanism};
use ccslab::config::LabConfig;
use ccslab::error::{LabError, Result};
use ccslab::experiments::{compare_baselines, linearity_protocol};
use ccslab::geometry::{concentration_bound, concentration_frequency};
use ccslab::report::{batch_to_csv, compare_to_csv, linearity_to_csv, BatchTable, ExperimentReport};
use ccslab::rng::derive_seed;
use ccslab::verify::{verify_suite_with, VerifyLedger};

const TARGET_STREAM: u64 = 1;
const EXIT_VERIFY_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "ccslab", version, about = "Controlled sampling experiments on analytic diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a batch around one target with the configured mechanism.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Which experiment target to perturb.
        #[arg(long, default_value_t = 0)]
        target: usize,
        /// Overrides the configured mechanism.
        #[arg(long)]
        mechanism: Option<Mechanism>,
        /// Overrides the configured scale.
        #[arg(long)]
        scale: Option<f64>,
        /// Overrides the configured batch size.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Invert one target to the noise level `t_stop`.
    Invert {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        target: usize,
        /// Defaults to the last step.
        #[arg(long)]
        t_stop: Option<usize>,
    },
    /// Residual norm against sin(c0) across targets.
    Linearity {
        #[command(flatten)]
        common: Common,
    },
    /// Bisect the configured mechanism's scale to the controller target.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        target: usize,
        #[arg(long)]
        mechanism: Option<Mechanism>,
    },
    /// Tune and evaluate every configured mechanism on every target.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Norm concentration bound and its Monte-Carlo frequency.
    Concentration {
        #[command(flatten)]
        common: Common,
    },
    /// Run the property suite; exits 3 when any check fails.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Sample { common, .. }
            | Command::Invert { common, .. }
            | Command::Linearity { common }
            | Command::Tune { common, .. }
            | Command::Compare { common }
            | Command::Concentration { common }
            | Command::Verify { common } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Sample { .. } => "sample",
            Command::Invert { .. } => "invert",
            Command::Linearity { .. } => "linearity",
            Command::Tune { .. } => "tune",
            Command::Compare { .. } => "compare",
            Command::Concentration { .. } => "concentration",
            Command::Verify { .. } => "verify",
        }
    }
}

struct Context {
    config: LabConfig,
    seed: u64,
    format: Format,
    out: Option<PathBuf>,
    started: Instant,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let mut config = match &common.config {
            Some(path) => LabConfig::load(path)?,
            None => LabConfig::default(),
        };
        let seed = common.seed.or(config.seed).unwrap_or(0);
        config.seed = Some(seed);
        Ok(Context {
            config,
            seed,
            format: common.format,
            out: common.out.clone(),
            started: Instant::now(),
        })
    }

    fn report(&self, command: &str) -> Result<ExperimentReport> {
        let snapshot = serde_json::to_value(&self.config)?;
        let mut r = ExperimentReport::new(command, self.seed, snapshot);
        r.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        Ok(r)
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(path) => std::fs::write(path, text)?,
            None => std::io::stdout().lock().write_all(text.as_bytes())?,
        }
        Ok(())
    }

    fn target(&self, lab: &ccslab::ccs::Lab, index: usize) -> Result<ccslab::State> {
        let targets = self.config.targets(&lab.model, derive_seed(self.seed, &[TARGET_STREAM]))?;
        let n = targets.len();
        targets
            .into_iter()
            .nth(index)
            .ok_or_else(|| LabError::Input(format!("target index {index} out of range, {n} targets configured")))
    }
}

#[derive(Serialize)]
struct InvertOutput {
    t_stop: usize,
    target: Vec<f64>,
    noise: Vec<f64>,
    /// `||regenerate(noise) - target||`.
    round_trip_error: f64,
}

#[derive(Serialize)]
struct ConcentrationOutput {
    dim: usize,
    delta: f64,
    draws: usize,
    bound: f64,
    frequency: f64,
}

fn controller_csv(trace: &ControllerTrace, scale: f64) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "c_low", "c_high", "scale", "measured"])?;
    for (k, s) in trace.iterations.iter().enumerate() {
        w.write_record([k.to_string(), s.c_low.to_string(), s.c_high.to_string(), s.c0.to_string(), s.measured.to_string()])?;
    }
    let mut text = String::from_utf8(w.into_inner().map_err(|e| LabError::Io(e.into_error()))?)
        .map_err(|e| LabError::Input(e.to_string()))?;
    text.push_str(&format!("# converged,{}\n# final_scale,{scale}\n", trace.converged));
    Ok(text)
}

fn verify_csv(ledger: &VerifyLedger) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["module", "name", "measured", "relation", "threshold", "pass", "note"])?;
    for r in &ledger.rows {
        w.write_record([
            r.module.clone(),
            r.name.clone(),
            r.measured.to_string(),
            r.relation.clone(),
            r.threshold.to_string(),
            r.pass.to_string(),
            r.note.clone().unwrap_or_default(),
        ])?;
    }
    String::from_utf8(w.into_inner().map_err(|e| LabError::Io(e.into_error()))?).map_err(|e| LabError::Input(e.to_string()))
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn run(command: &Command) -> Result<u8> {
    let ctx = Context::new(command.common())?;
    let cfg = &ctx.config;
    match command {
        Command::Sample {
            target,
            mechanism,
            scale,
            n,
            ..
        } => {
            let lab = cfg.lab()?;
            let x0 = ctx.target(&lab, *target)?;
            let mut spec = cfg.mechanism.spec(derive_seed(ctx.seed, &[*target as u64]));
            if let Some(m) = mechanism {
                spec.mechanism = *m;
            }
            if let Some(s) = scale {
                spec.scale = *s;
            }
            let mut batch = lab.run(&spec, &x0, n.unwrap_or(cfg.mechanism.n))?;
            batch.target_id = target.to_string();
            let table = BatchTable::from(&batch);
            match ctx.format {
                Format::Csv => ctx.emit(&batch_to_csv(&table)?)?,
                Format::Json => {
                    let mut r = ctx.report(command.name())?;
                    r.batch = Some(table);
                    ctx.emit(&r.to_json()?)?
                }
            }
        }
        Command::Invert { target, t_stop, .. } => {
            let lab = cfg.lab()?;
            let x0 = ctx.target(&lab, *target)?;
            let t_stop = t_stop.unwrap_or(lab.schedule.steps());
            let noise = lab.invert(&x0, t_stop, &cfg.mechanism.cfg_invert)?;
            let back = ccslab::sampler::ddim_endpoint(
                &lab.schedule,
                &lab.model.guided(&cfg.mechanism.cfg_invert)?,
                &noise,
                t_stop,
            )?;
            let out = InvertOutput {
                t_stop,
                round_trip_error: (&back - &x0).norm(),
                target: x0.iter().copied().collect(),
                noise: noise.iter().copied().collect(),
            };
            match ctx.format {
                Format::Csv => {
                    let mut text = format!("# t_stop,{}\n# round_trip_error,{}\nindex,target,noise\n", out.t_stop, out.round_trip_error);
                    for (i, (a, b)) in out.target.iter().zip(&out.noise).enumerate() {
                        text.push_str(&format!("{i},{a},{b}\n"));
                    }
                    ctx.emit(&text)?
                }
                Format::Json => ctx.emit(&json(&out)?)?,
            }
        }
        Command::Linearity { .. } => {
            let lab = cfg.lab()?;
            let targets = cfg.targets(&lab.model, derive_seed(ctx.seed, &[TARGET_STREAM]))?;
            let report = linearity_protocol(&lab, &targets, &cfg.experiment.linearity, ctx.seed, &cfg.experiment.cfg)?;
            match ctx.format {
                Format::Csv => ctx.emit(&linearity_to_csv(&report)?)?,
                Format::Json => {
                    let mut r = ctx.report(command.name())?;
                    r.linearity = Some(report);
                    ctx.emit(&r.to_json()?)?
                }
            }
        }
        Command::Tune { target, mechanism, .. } => {
            let lab = cfg.lab()?;
            let x0 = ctx.target(&lab, *target)?;
            let mut bound = BoundMechanism::new(&lab, &x0, mechanism.unwrap_or(cfg.mechanism.mechanism));
            bound.cfg_invert = cfg.mechanism.cfg_invert.clone();
            bound.cfg_sample = cfg.mechanism.cfg_sample.clone();
            if let Some(t0) = cfg.mechanism.t0 {
                bound.t0 = t0;
            }
            if let Some(s) = cfg.mechanism.gp_scale_max {
                bound.gp_scale_max = s;
            }
            let mut controller = cfg.controller.clone();
            controller.seed = ctx.seed;
            let (scale, trace) = controller_tune(&bound, &controller)?;
            match ctx.format {
                Format::Csv => ctx.emit(&controller_csv(&trace, scale)?)?,
                Format::Json => {
                    let mut r = ctx.report(command.name())?;
                    r.controller = Some(trace);
                    ctx.emit(&r.to_json()?)?
                }
            }
        }
        Command::Compare { .. } => {
            let lab = cfg.lab()?;
            let targets = cfg.targets(&lab.model, derive_seed(ctx.seed, &[TARGET_STREAM]))?;
            let report = compare_baselines(&lab, &targets, &cfg.experiment.compare, ctx.seed, &cfg.experiment.cfg)?;
            for f in &report.failures {
                eprintln!("target {} {}: {}", f.target_id, f.mechanism, f.error);
            }
            match ctx.format {
                Format::Csv => ctx.emit(&compare_to_csv(&report.rows)?)?,
                Format::Json => ctx.emit(&ctx.report(command.name())?.with_compare(report).to_json()?)?,
            }
        }
        Command::Concentration { .. } => {
            let e = &cfg.experiment;
            let out = ConcentrationOutput {
                dim: e.concentration_dim,
                delta: e.concentration_delta,
                draws: e.concentration_draws,
                bound: concentration_bound(e.concentration_dim, e.concentration_delta),
                frequency: concentration_frequency(e.concentration_dim, e.concentration_delta, e.concentration_draws, ctx.seed),
            };
            match ctx.format {
                Format::Csv => ctx.emit(&format!(
                    "dim,delta,draws,bound,frequency\n{},{},{},{},{}\n",
                    out.dim, out.delta, out.draws, out.bound, out.frequency
                ))?,
                Format::Json => ctx.emit(&json(&out)?)?,
            }
        }
        Command::Verify { .. } => {
            let schedule = cfg.schedule.build_unchecked()?;
            let ledger = verify_suite_with(&schedule, ctx.seed);
            match ctx.format {
                Format::Csv => ctx.emit(&verify_csv(&ledger)?)?,
                Format::Json => ctx.emit(&json(&ledger)?)?,
            }
            for r in ledger.failures() {
                eprintln!("FAIL {} measured {} {} {}", r.name, r.measured, r.relation, r.threshold);
            }
            if !ledger.all_pass() {
                return Ok(EXIT_VERIFY_FAILED);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
