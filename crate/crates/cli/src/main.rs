//! Experiment harness command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use satmec::harness::{
    self, alpha_tradeoff, evaluate_scheduler, run_sweep, write_curves_csv, write_sweep_csv,
    write_trajectory_csv, ExperimentConfig, Manifest, Profile, SchedulerKind, SweepAxis,
};
use satmec::mappo;
use satmec::model::generate_scenario;
use satmec::rng;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Test,
    Paper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchedulerArg {
    Comappo,
    Ccppo,
    Woa,
    Random,
}

impl From<SchedulerArg> for SchedulerKind {
    fn from(s: SchedulerArg) -> Self {
        match s {
            SchedulerArg::Comappo => SchedulerKind::CoMappo,
            SchedulerArg::Ccppo => SchedulerKind::CcPpo,
            SchedulerArg::Woa => SchedulerKind::Woa,
            SchedulerArg::Random => SchedulerKind::Random,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "satmec",
    version,
    about = "Seeded simulator and optimizer for satellite edge-computing task offloading"
)]
struct Cli {
    /// TOML experiment config; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Network/episode profile override.
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Scheduler override for train/evaluate.
    #[arg(long, global = true, value_enum)]
    scheduler: Option<SchedulerArg>,
    /// Learn the resource allocations instead of the closed forms.
    #[arg(long, global = true)]
    ablation_no_convex: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scenario file from the config and seed.
    Generate,
    /// Train the selected learned scheduler; writes checkpoint and curves.
    Train,
    /// Train if needed, then evaluate the selected scheduler greedily.
    Evaluate,
    /// Run the configured sweep axis over schedulers × seeds.
    Sweep,
    /// The α-weight trade-off experiment over α₁ ∈ {0.3, 0.5, 0.7}.
    AlphaSweep,
    /// Sub-task sweep with learned allocations (no convex stage).
    Ablation,
    /// Run the allocator-vs-oracle verification suite.
    VerifyAllocator {
        /// Random instances per subproblem family.
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                satmec::Error::Config(_) | satmec::Error::Serde(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn load_config(cli: &Cli) -> satmec::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(profile) = cli.profile {
        cfg.profile = match profile {
            ProfileArg::Test => Profile::Test,
            ProfileArg::Paper => Profile::Paper,
        };
    }
    if let Some(s) = cli.scheduler {
        cfg.scheduler = s.into();
    }
    if cli.ablation_no_convex {
        cfg.ablation_no_convex = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn ensure_out(dir: &Path) -> satmec::Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn run(cli: Cli) -> satmec::Result<ExitCode> {
    let cfg = load_config(&cli)?;
    ensure_out(&cli.out)?;
    let out = cli.out.clone();
    let mut outputs: Vec<String> = Vec::new();
    let command_name;

    match cli.command {
        Command::Generate => {
            command_name = "generate";
            for &seed in &cfg.seeds {
                let scenario = generate_scenario(&cfg.scenario, seed)?;
                let path = out.join(format!("scenario_seed{seed}.json"));
                harness::save_scenario(&path, &scenario)?;
                println!(
                    "generate seed {seed}: {} satellites, {} CTEs, {} sub-tasks -> {}",
                    scenario.satellites.len(),
                    scenario.ctes.len(),
                    scenario.subtask_count(),
                    path.display()
                );
                outputs.push(file_name(&path));
            }
        }
        Command::Train => {
            command_name = "train";
            let sched = cfg.scheduler;
            if !matches!(sched, SchedulerKind::CoMappo | SchedulerKind::CcPpo) {
                return Err(satmec::Error::Config(format!(
                    "{} is not a trainable scheduler",
                    sched.as_str()
                )));
            }
            for &seed in &cfg.seeds {
                let tc = cfg.train_config(sched, rng::derive_seed(seed, "train"));
                let result = mappo::train(tc)?;
                if let Some(msg) = &result.aborted {
                    eprintln!("warning: training aborted early: {msg}");
                }
                let ckpt = out.join(format!("checkpoint_{}_seed{seed}.json", sched.as_str()));
                satmec::neural::save_checkpoint(&ckpt, &result.trainer)?;
                let curves = out.join(format!("curves_{}_seed{seed}.csv", sched.as_str()));
                write_curves_csv(&result.report, &curves)?;
                let last = result.report.last();
                println!(
                    "train {} seed {seed}: {} episodes, final reward {:.4} -> {}",
                    sched.as_str(),
                    result.report.len(),
                    last.map(|s| s.total_reward).unwrap_or(0.0),
                    ckpt.display()
                );
                outputs.push(file_name(&ckpt));
                outputs.push(file_name(&curves));
            }
        }
        Command::Evaluate => {
            command_name = "evaluate";
            let sched = cfg.scheduler;
            for &seed in &cfg.seeds {
                let run = evaluate_scheduler(&cfg, sched, seed)?;
                let traj = out.join(format!("trajectory_{}_seed{seed}.csv", sched.as_str()));
                write_trajectory_csv(&run.records, &traj)?;
                let metrics = out.join(format!("metrics_{}_seed{seed}.json", sched.as_str()));
                std::fs::write(&metrics, serde_json::to_vec_pretty(&run.metrics)?)?;
                println!(
                    "evaluate {} seed {seed}: objective {:.6}, mst {:.6}, msp {:.6}, success {:.3}",
                    sched.as_str(),
                    run.metrics.objective,
                    run.metrics.mst,
                    run.metrics.msp,
                    run.metrics.success_rate
                );
                outputs.push(file_name(&traj));
                outputs.push(file_name(&metrics));
            }
        }
        Command::Sweep => {
            command_name = "sweep";
            let mut cfg = cfg.clone();
            if cfg.sweep.is_none() {
                cfg.sweep = Some(SweepAxis::SubtaskCount { values: vec![500, 1000, 1500, 2000] });
            }
            let result = run_sweep(&cfg)?;
            let path = out.join(format!("sweep_{}.csv", result.axis.name()));
            write_sweep_csv(&result, &path)?;
            println!(
                "sweep {}: {} rows -> {}",
                result.axis.name(),
                result.points.len(),
                path.display()
            );
            outputs.push(file_name(&path));
        }
        Command::AlphaSweep => {
            command_name = "alpha-sweep";
            let result = alpha_tradeoff(&cfg)?;
            let path = out.join("sweep_alpha1.csv");
            write_sweep_csv(&result, &path)?;
            println!("alpha-sweep: {} rows -> {}", result.points.len(), path.display());
            outputs.push(file_name(&path));
        }
        Command::Ablation => {
            command_name = "ablation";
            let mut cfg = cfg.clone();
            cfg.ablation_no_convex = true;
            if cfg.sweep.is_none() {
                cfg.sweep = Some(SweepAxis::SubtaskCount { values: vec![500, 1000, 1500, 2000] });
            }
            let result = run_sweep(&cfg)?;
            let path = out.join("sweep_ablation.csv");
            write_sweep_csv(&result, &path)?;
            println!("ablation sweep: {} rows -> {}", result.points.len(), path.display());
            outputs.push(file_name(&path));
        }
        Command::VerifyAllocator { instances } => {
            command_name = "verify-allocator";
            let seed = cfg.seeds.first().copied().unwrap_or(1);
            let report = harness::verify_allocator(instances, seed)?;
            println!(
                "bandwidth: {} pass / {} fail",
                report.bandwidth_pass, report.bandwidth_fail
            );
            println!("compute:   {} pass / {} fail", report.compute_pass, report.compute_fail);
            println!("cns power: {} pass / {} fail", report.cns_pass, report.cns_fail);
            println!(
                "max KKT residual {:.3e}, max objective gap {:.3e}, {:.2}s",
                report.max_kkt_residual, report.max_objective_gap, report.elapsed_s
            );
            let path = out.join("verify_allocator.json");
            std::fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
            outputs.push(file_name(&path));
            let manifest = Manifest::new(command_name, &cfg, &outputs)?;
            manifest.write(&out.join("manifest_verify-allocator.json"))?;
            return Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
    }

    let manifest = Manifest::new(command_name, &cfg, &outputs)?;
    manifest.write(&out.join(format!("manifest_{command_name}.json")))?;
    Ok(ExitCode::SUCCESS)
}
