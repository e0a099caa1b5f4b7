use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rffsb_core::artifacts::{self, dataset_dir};
use rffsb_core::attack::{build_dataset, run_scenario, train_attack, train_classifier, ScenarioConfig};
use rffsb_core::config::{Overrides, RunConfig, Scale};
use rffsb_core::dataset::Dataset;
use rffsb_core::eval::{self, EvalReport};
use rffsb_core::CoreError;

#[derive(Parser)]
#[command(name = "rffsb", version, about = "Collusion-driven RF-fingerprint impersonation simulator")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration and RFFSB_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    scale: Option<ScaleArg>,
    /// Worker threads. 1 gives bit-exact reproducibility.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Ebn0,
    K,
    Channel,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the legitimate dataset and store it.
    GenDataset,
    /// Train the legitimate classifier.
    TrainClassifier,
    /// Train the spoofing VAE for one target or all of them.
    TrainAttack {
        #[arg(long, default_value = "all")]
        target: String,
    },
    /// Score legitimate traffic and spoofed traffic at the receiver.
    Evaluate,
    /// Sweep receiver Eb/N0, Rician K, or the train/test channel pair.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
    },
    /// Regenerate the CSV and plot tables from a report.json.
    Report {
        /// Report directory; defaults to `<out>/report`.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Run the acceptance suite.
    Check,
}

/// A `check` whose criteria did not all pass.
#[derive(Debug)]
struct FailedCheck(usize);

impl std::fmt::Display for FailedCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} acceptance criteria failed", self.0)
    }
}

impl std::error::Error for FailedCheck {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<FailedCheck>() {
                ExitCode::from(3)
            } else if matches!(e.downcast_ref::<CoreError>(), Some(CoreError::Config(_))) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rffsb_nn::par::set_threads(n).map_err(|e| CoreError::config(format!("--threads {n}: {e}")))?;
    }
    let ov = Overrides {
        scale: cli.scale.map(|s| match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Paper => Scale::Paper,
        }),
        seed: cli.seed,
        out: cli.out,
    };
    let run = RunConfig::load(cli.config.as_deref(), &ov)?;
    let out = run.out_dir.clone();
    run.write_resolved(&out)?;
    let cfg = &run.scenario;
    log::info!("output directory {}", out.display());

    match cli.cmd {
        Cmd::GenDataset => {
            let data = build_dataset(cfg)?;
            data.save(&dataset_dir(&out))?;
            println!(
                "dataset: {} train rows, {} test rows -> {}",
                data.train.len(),
                data.test.len(),
                dataset_dir(&out).display()
            );
        }
        Cmd::TrainClassifier => {
            let data = dataset(cfg, &out)?;
            let c = train_classifier(&data, &cfg.classifier_config()?, &cfg.classifier_train, cfg.master_seed)?;
            artifacts::save_classifier(&out, &c)?;
            println!("classifier test accuracy {:.4}", c.confusion.accuracy());
        }
        Cmd::TrainAttack { target } => {
            let classifier = artifacts::load_classifier(&out).context("run train-classifier first")?;
            let targets = if target == "all" {
                cfg.resolved_targets()
            } else {
                vec![target
                    .parse::<u32>()
                    .map_err(|_| CoreError::config(format!("--target expects a device id or `all`, got `{target}`")))?]
            };
            for t in targets {
                let a = train_attack(&classifier.model, cfg, t)?;
                artifacts::save_attack(&out, &a)?;
                println!(
                    "target {t}: colluder ASR {:.3} -> {:.3} (epoch {})",
                    a.baseline_asr, a.best_asr, a.best_epoch
                );
            }
        }
        Cmd::Evaluate => {
            let art = artifacts::load_artifacts(&out, cfg)?;
            let (report, _) = eval::evaluate(&art, cfg)?;
            summarize(&report);
            eval::emit_report(&report, &out.join("report"))?;
        }
        Cmd::Sweep { axis } => sweep(&run, axis)?,
        Cmd::Report { dir } => {
            let dir = dir.unwrap_or_else(|| out.join("report"));
            let path = dir.join("report.json");
            let text = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let report: EvalReport = serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))?;
            eval::emit_report(&report, &dir)?;
            summarize(&report);
        }
        Cmd::Check => {
            let res = rffsb_core::check::run_check(&run)?;
            for c in &res.criteria {
                println!("{}", c.line());
            }
            let failed = res.criteria.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                bail!(FailedCheck(failed));
            }
        }
    }
    Ok(())
}

/// The stored dataset when it matches the scenario, otherwise a fresh one.
fn dataset(cfg: &ScenarioConfig, out: &Path) -> anyhow::Result<Dataset> {
    let dir = dataset_dir(out);
    if dir.join("manifest.json").exists() {
        let d = Dataset::load(&dir)?;
        if d.spec == cfg.dataset_spec()? {
            return Ok(d);
        }
        log::warn!("stored dataset in {} does not match the configuration; regenerating", dir.display());
    }
    let d = build_dataset(cfg)?;
    d.save(&dir)?;
    Ok(d)
}

fn summarize(r: &EvalReport) {
    if let Some(a) = r.classifier_accuracy {
        println!("classifier accuracy {a:.4}");
    }
    if let Some(m) = &r.matched_asr {
        println!("mean receiver ASR {:.4}", m.mean_asr);
        for (t, c) in &m.per_target {
            println!("  target {t}: {:.4} [{:.3}, {:.3}] over {}", c.asr, c.ci_low, c.ci_high, c.n);
        }
    }
    for c in &r.cross_channel {
        let v = c.result.as_ref().map_or("NA".into(), |m| format!("{:.4}", m.mean_asr));
        println!("train {} / test {}: {v}", c.train_profile, c.test_profile);
    }
    for s in r.sweep_ebn0.iter().chain(&r.sweep_k) {
        let rho = s.spearman.map_or("undefined".into(), |v| format!("{v:.3}"));
        println!("sweep {}: rho {rho}", s.profile);
    }
}

fn sweep(run: &RunConfig, axis: Axis) -> anyhow::Result<()> {
    let cfg = &run.scenario;
    let sw = &run.sweep;
    let out = &run.out_dir;
    let mut report = EvalReport::new(cfg);
    let name = match axis {
        Axis::Ebn0 => "ebn0",
        Axis::K => "k",
        Axis::Channel => "channel",
    };
    match axis {
        Axis::Ebn0 | Axis::K if sw.retrain => {
            let series = match axis {
                Axis::Ebn0 => eval::retrained_sweep(cfg, &sw.ebn0_profiles, &sw.ebn0_db, "ebn0", |p, v| p.with_ebn0(v))?,
                _ => eval::retrained_sweep(cfg, &sw.k_profiles, &sw.k_factors, "k", |p, v| p.with_k(v))?,
            };
            match axis {
                Axis::Ebn0 => report.sweep_ebn0 = series,
                _ => report.sweep_k = series,
            }
        }
        Axis::Ebn0 | Axis::K => {
            let art = artifacts::load_artifacts(out, cfg).context("run train-classifier and train-attack first")?;
            let banks = eval::spoof_banks(&art, cfg)?;
            let model = &art.classifier.model;
            match axis {
                Axis::Ebn0 => report.sweep_ebn0 = eval::sweep_ebn0(model, &banks, &sw.ebn0_profiles, &sw.ebn0_db, cfg)?,
                _ => report.sweep_k = eval::sweep_kfactor(model, &banks, &sw.k_profiles, &sw.k_factors, cfg)?,
            }
        }
        Axis::Channel => {
            let mut by_train = BTreeMap::new();
            for tr in &sw.train_profiles {
                let dir = out.join("channel").join(tr);
                let c = ScenarioConfig {
                    train_profile: tr.clone(),
                    ..cfg.clone()
                };
                let art = if dir.join("classifier.rfnn").exists() {
                    artifacts::load_artifacts(&dir, &c)?
                } else {
                    let (_, art) = run_scenario(&c)?;
                    artifacts::save_artifacts(&dir, &art)?;
                    art
                };
                let banks = eval::spoof_banks(&art, &c)?;
                by_train.insert(tr.clone(), (art, banks));
            }
            report.cross_channel = eval::cross_channel_matrix(&by_train, &sw.train_profiles, &sw.test_profiles, cfg)?;
        }
    }
    summarize(&report);
    eval::emit_report(&report, &out.join(format!("sweep_{name}")))?;
    Ok(())
}
