//! `defectsim` command line: batch orchestration of the simulation and
//! analysis pipeline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime/model error.
//! The `DEFECTSIM_SEED`/`TOOL_SEED` environment variables override the
//! config seed; the `--seed` flag overrides both.

pub mod artifacts;
pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "defectsim",
    version,
    about = "Simulate and analyze focused-ion-beam defect arrays"
)]
pub struct Cli {
    /// Experiment config JSON; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan an implantation layout, sample ions, convert to defects.
    Implant {
        /// Ions per spot for the array layout.
        #[arg(long)]
        dose: Option<u32>,
    },
    /// Simulate the HBT experiment and fit the corrected g2 curve.
    Hbt {
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long)]
        power_mw: Option<f64>,
        #[arg(long)]
        k_emitters: Option<u32>,
    },
    /// Measure detected rate vs power and fit the saturation law.
    Saturation {
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Simulate a modulated ODMR sweep and fit the resonance line.
    Odmr,
    /// Run the implant/scan/classify chain over a dose ladder.
    DoseSweep {
        /// Restrict the sweep to a single dose.
        #[arg(long)]
        dose: Option<u32>,
    },
    /// Compare recovered quantities against their reference targets.
    Report {
        /// Run all experiments before tabulating.
        #[arg(long)]
        run: bool,
    },
    /// Write the built-in default config to the given path.
    WriteConfig { path: PathBuf },
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for var in ["DEFECTSIM_SEED", "TOOL_SEED"] {
        if let Ok(text) = std::env::var(var) {
            cfg.seed = text
                .parse()
                .map_err(|_| anyhow::anyhow!("{var} must be an integer, got '{text}'"))?;
            break;
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, command: &Command) {
    match command {
        Command::Implant { dose: Some(d) } => cfg.implantation.dose = *d,
        Command::Hbt {
            duration_s,
            power_mw,
            k_emitters,
        } => {
            if let Some(d) = duration_s {
                cfg.emitter.duration_s = *d;
            }
            if let Some(p) = power_mw {
                cfg.emitter.power_mw = *p;
            }
            if let Some(k) = k_emitters {
                cfg.emitter.k_emitters = *k;
            }
        }
        Command::Saturation {
            duration_s: Some(d),
        } => cfg.emitter.saturation.duration_s = *d,
        Command::DoseSweep { dose: Some(d) } => cfg.scanner.doses = vec![*d],
        _ => {}
    }
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();

    if let Command::WriteConfig { path } = &cli.command {
        return match commands::cmd_write_config(path) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(3)
            }
        };
    }

    let mut cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return ExitCode::from(2);
        }
    };
    apply_overrides(&mut cfg, &cli.command);
    if let Err(e) = cfg.validate() {
        eprintln!("config error: {e:#}");
        return ExitCode::from(2);
    }

    let result = match &cli.command {
        Command::Implant { .. } => commands::cmd_implant(&cfg).map(|s| {
            println!(
                "implant: {} spots, {} defects (lambda = {:.3})",
                s.n_spots, s.total_defects, s.lambda_hat
            );
        }),
        Command::Hbt { .. } => commands::cmd_hbt(&cfg).map(|h| match h.g2_zero {
            Some(g) => println!("hbt: g2(0) = {g:.3} (rho = {:.3})", h.rho),
            None => println!(
                "hbt: fit failed ({})",
                h.fit_error.unwrap_or_else(|| "unknown".into())
            ),
        }),
        Command::Saturation { .. } => commands::cmd_saturation(&cfg).map(|s| {
            println!(
                "saturation: i_s = {:.2} kcps, p_0 = {:.3} mW",
                s.fit.value("i_s").unwrap_or(f64::NAN),
                s.fit.value("p_0").unwrap_or(f64::NAN)
            );
        }),
        Command::Odmr => commands::cmd_odmr(&cfg).map(|o| {
            println!(
                "odmr: center = {:.2} MHz, fwhm = {:.2} MHz",
                o.fit.value("center").unwrap_or(f64::NAN),
                o.fit.value("fwhm").unwrap_or(f64::NAN)
            );
        }),
        Command::DoseSweep { .. } => commands::cmd_dose_sweep(&cfg).map(|d| {
            for r in &d.rows {
                println!(
                    "dose {:>4}: mean {:.2} kcps, lambda {:.3}, yield {:.4}",
                    r.dose, r.mean_counts_kcps, r.lambda_hat, r.conversion_yield
                );
            }
        }),
        Command::Report { run } => commands::cmd_report(&cfg, *run).map(|rep| {
            for r in &rep.rows {
                let value = r.value.map_or("missing".into(), |v| format!("{v:.4}"));
                println!(
                    "{:<32} {:>10}  target {:<8} [{}]",
                    r.quantity, value, r.target, r.status
                );
            }
        }),
        Command::WriteConfig { .. } => unreachable!("handled above"),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
