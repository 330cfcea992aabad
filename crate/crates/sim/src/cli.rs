//! Command-line front end.
//!
//! Every flag writes into the corresponding config field before the command
//! runs, so `--dump-config` prints exactly the experiment that would run.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use multisense_core::evaluation::trace_f1;
use multisense_core::models::TrainingSet;
use multisense_core::orchestrator::InferenceTrace;
use multisense_core::synth::{Dataset, SensorSource, World};
use multisense_core::translation::diagnose;
use multisense_core::{fit_alignment, fit_classifier, seed, AlignmentMode, DeviceId, ModelId, SensorWindow, Strategy, Variant};

use crate::config::ExperimentConfig;
use crate::error::{Result, SimError};
use crate::{archive, artifacts, experiment, report, trace};

/// Seed tag of the recording written by `gen`.
const GEN_TAG: u64 = 0x20;

#[derive(Debug, Parser)]
#[command(name = "multisense", version, about = "Multi-device sensing runtime simulator")]
pub struct Cli {
    /// Experiment config (TOML). Defaults to the bundled configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Replace the seed list with this single seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output path of the command's artifact.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled multi-device recording.
    Gen,
    /// Train a classifier on one device of a dataset.
    Fit {
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        device: Option<u16>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Fit a translation operator between two devices of a dataset.
    FitTranslation {
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        src: Option<u16>,
        #[arg(long)]
        tgt: Option<u16>,
        #[arg(long)]
        mode: Option<AlignmentMode>,
    },
    /// Run one strategy on one scenario and write its trace.
    Simulate {
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Availability probability.
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        #[arg(long = "operator", value_name = "PATH")]
        operators: Vec<PathBuf>,
    },
    /// Run the strategy x availability x seed grid and write a CSV report.
    Evaluate,
    /// Summarize a CSV report.
    Report {
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
}

/// Loads the config and folds the command line into it.
pub fn effective_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::bundled()?,
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
        cfg.simulate.seed = s;
    }
    let out = cli.out.clone();
    match &cli.command {
        None => {}
        Some(Command::Gen) => set(&mut cfg.output.dataset, out),
        Some(Command::Fit { dataset, device, variant }) => {
            set(&mut cfg.output.dataset, dataset.clone());
            set(&mut cfg.output.model, out);
            if let Some(d) = device {
                cfg.fit.device = Some(DeviceId(*d));
            }
            if let Some(v) = variant {
                cfg.fit.variant = Some(*v);
            }
        }
        Some(Command::FitTranslation { dataset, src, tgt, mode }) => {
            set(&mut cfg.output.dataset, dataset.clone());
            set(&mut cfg.output.operator, out);
            if let Some(d) = src {
                cfg.translation.source = Some(DeviceId(*d));
            }
            if let Some(d) = tgt {
                cfg.translation.target = Some(DeviceId(*d));
            }
            if let Some(m) = mode {
                cfg.translation.mode = Some(*m);
            }
        }
        Some(Command::Simulate { strategy, p, model, operators }) => {
            set(&mut cfg.output.trace, out);
            if let Some(s) = strategy {
                cfg.simulate.strategy = *s;
            }
            if let Some(p) = p {
                cfg.simulate.availability = *p;
            }
            if model.is_some() {
                cfg.simulate.model = model.clone();
            }
            if !operators.is_empty() {
                cfg.simulate.operators = operators.clone();
            }
        }
        Some(Command::Evaluate) => set(&mut cfg.output.report, out),
        Some(Command::Report { input }) => set(&mut cfg.output.report, input.clone()),
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set(slot: &mut PathBuf, value: Option<PathBuf>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable output to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            write!(stdout, "{e}").map_err(|e| SimError::io("<stdout>".as_ref(), e))?;
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return Err(SimError::Usage(first.to_string()));
        }
    };
    let cfg = effective_config(&cli)?;
    let mut say = |s: String| writeln!(stdout, "{s}").map_err(|e| SimError::io("<stdout>".as_ref(), e));
    if cli.dump_config {
        return say(cfg.to_toml()?.trim_end().to_string());
    }
    let Some(command) = &cli.command else {
        return Err(SimError::Usage("no command given; try --help".into()));
    };
    match command {
        Command::Gen => {
            let ds = generate(&cfg)?;
            archive::save(&ds, &cfg.output.dataset)?;
            say(format!(
                "wrote {} ({} devices, {} windows, {} classes)",
                cfg.output.dataset.display(),
                ds.profiles.len(),
                ds.labels.len(),
                ds.classes
            ))
        }
        Command::Fit { .. } => {
            let ds = archive::load(&cfg.output.dataset)?;
            let device = cfg.fit.device.unwrap_or(cfg.scenario.training_device);
            let variant = cfg.fit.variant.unwrap_or(cfg.scenario.variant);
            let (windows, labels): (Vec<SensorWindow>, Vec<usize>) = ds.labeled_windows(device)?.into_iter().unzip();
            let set = TrainingSet::new(ds.classes, windows, labels)?;
            let c = fit_classifier(ModelId(0), &set, variant, &cfg.scenario.hyper)?;
            let correct = set
                .windows()
                .iter()
                .zip(set.labels())
                .map(|(w, &y)| c.infer(w).map(|p| p.argmax() == y))
                .try_fold(0usize, |n, ok| -> Result<usize> { Ok(n + usize::from(ok?)) })?;
            artifacts::save_model(&c, &cfg.output.model)?;
            say(format!(
                "wrote {} ({variant:?} on {device}, training accuracy {:.4})",
                cfg.output.model.display(),
                correct as f64 / set.len() as f64
            ))
        }
        Command::FitTranslation { .. } => {
            let ds = archive::load(&cfg.output.dataset)?;
            let (source, target) = cfg.translation_pair()?;
            let mode = cfg.translation.mode.unwrap_or(cfg.scenario.alignment);
            let src = unlabeled(&ds, source)?;
            let tgt = unlabeled(&ds, target)?;
            let op = fit_alignment(&src, &tgt, mode, &cfg.scenario.fit)?;
            let diag = diagnose(&op, &src, &tgt)?;
            artifacts::save_operator(&op, &cfg.output.operator)?;
            say(format!(
                "wrote {} ({source} -> {target}, {mode:?}; distance {:.4} -> {:.4})",
                cfg.output.operator.display(),
                diag.pre_distance,
                diag.post_distance
            ))
        }
        Command::Simulate { .. } => {
            let model = cfg.simulate.model.as_deref().map(artifacts::load_model).transpose()?;
            let operators = cfg.simulate.operators.iter().map(|p| artifacts::load_operator(p)).collect::<Result<Vec<_>>>()?;
            let traces = experiment::simulate(&cfg, model, operators)?;
            trace::save(&traces, &cfg.output.trace)?;
            for t in &traces {
                say(summary(t)?)?;
            }
            say(format!("wrote {}", cfg.output.trace.display()))
        }
        Command::Evaluate => {
            let rows = experiment::evaluate(&cfg)?;
            report::save(&rows, &cfg.output.report)?;
            say(report::format_table(&rows))?;
            say(format!("wrote {} ({} rows)", cfg.output.report.display(), rows.len()))
        }
        Command::Report { .. } => {
            let rows = report::load(&cfg.output.report)?;
            if rows.is_empty() {
                return Err(SimError::Usage(format!("{} has no rows", cfg.output.report.display())));
            }
            say(report::format_table(&rows).trim_end().to_string())
        }
    }
}

/// The labeled recording written by `gen`: `scenario.train_secs` long,
/// seeded from the first configured seed.
pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let base = cfg.seeds[0];
    let world = World::new(cfg.scenario.world.clone(), base)?;
    let latent = world.generate_latent(cfg.scenario.train_secs, seed::derive(base, &[GEN_TAG]))?;
    Ok(Dataset::render(&latent, &cfg.scenario.profiles)?)
}

fn unlabeled(ds: &Dataset, device: DeviceId) -> Result<Vec<SensorWindow>> {
    Ok((0..ds.n_windows()).map(|i| ds.window(device, i)).collect::<Result<Vec<_>, _>>()?)
}

fn summary(t: &InferenceTrace) -> Result<String> {
    let f1 = trace_f1(t)?;
    Ok(format!("{}: micro_f1 {f1:.4}, {} assessments, {} model executions", t.strategy, t.assessments(), t.executions()))
}
