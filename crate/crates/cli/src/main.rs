use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mfrs::agent::{evaluate, evaluate_with, straight_line_action, Ablations};
use mfrs::baselines::ShaperKind;
use mfrs::env::{sample_layout, TaskVariant};
use mfrs::harness::{dump_field_grid, dump_reward_grid, grid_stats, run_experiment, verify, ExperimentReport, Lattice, RunConfig, Suite, OUTPUT_DIR_ENV};
use mfrs::magnet::FieldSettings;
use mfrs::nn::Mlp;
use mfrs::reward::FieldStats;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Magnetic field-based reward shaping workbench.
#[derive(Parser)]
#[command(name = "mfrs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one shaper over several seeds and write metrics.
    Train(TrainArgs),
    /// Run a saved actor (or the straight-line script) without noise.
    Eval(EvalArgs),
    /// Write field intensity or magnetic reward over a lattice.
    Field(FieldArgs),
    /// Run the verification suites and write a JSON report.
    Verify(VerifyArgs),
    /// Train the magnetic shaper and its three ablations.
    Ablate(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskVariant>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Output directory.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// ns, pbrs, dpba or mfrs.
    #[arg(long)]
    shaper: Option<ShaperKind>,
    /// Negative distances in place of field intensities.
    #[arg(long)]
    no_mf: bool,
    /// Raw intensities, no standardization or Softsign.
    #[arg(long)]
    no_nt: bool,
    /// Magnetic reward used directly as a state potential.
    #[arg(long)]
    no_srt: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Saved actor network.
    #[arg(long, required_unless_present = "scripted")]
    actor: Option<PathBuf>,
    /// Use the straight-line policy instead of a network.
    #[arg(long)]
    scripted: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskVariant>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    horizon: Option<usize>,
    /// Also write the summary to this JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldKind {
    /// `x,y,z,H`
    Intensity,
    /// `x,y,z,Rm`
    Reward,
}

#[derive(Args)]
struct FieldArgs {
    #[arg(long, default_value = "II")]
    task: TaskVariant,
    /// Seed of the sampled layout.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "intensity")]
    kind: FieldKind,
    /// Points per axis as `nx,ny,nz`; the box is the workspace (the z = 0 plane when nz = 1).
    #[arg(long, value_delimiter = ',', default_value = "61,61,1")]
    lattice: Vec<usize>,
    /// Quadrature nodes per angle for spheres.
    #[arg(long, default_value_t = 64)]
    nodes: usize,
    /// Standardize with the initial statistics (mean 0, std 1) instead of the grid's own.
    #[arg(long)]
    initial_stats: bool,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suites to run; all when omitted.
    #[arg(long = "suite")]
    suites: Vec<Suite>,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(t) = self.task {
            cfg.task = t;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(e) = self.episodes {
            cfg.episodes = e;
        }
        if let Some(h) = self.horizon {
            cfg.env.horizon = h;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn summarize(report: &ExperimentReport) -> bool {
    for o in &report.outcomes {
        let m = &o.metrics;
        match &o.error {
            None => println!(
                "{} seed {}: success {:.3} (last 10%: {:.3}), average timesteps {:.1}",
                report.label,
                m.seed,
                m.success_rate().unwrap_or(f64::NAN),
                m.final_success_rate(0.1).unwrap_or(f64::NAN),
                m.average_timesteps().unwrap_or(f64::NAN)
            ),
            Some(e) => eprintln!("{} seed {}: stopped after {} episodes: {e}", report.label, m.seed, m.episodes.len()),
        }
    }
    !report.diverged()
}

fn train(args: TrainArgs) -> Result<bool> {
    let mut cfg = args.run.resolve()?;
    if let Some(s) = args.shaper {
        cfg.shaper = s;
    }
    if args.no_mf || args.no_nt || args.no_srt {
        cfg.ablations = Ablations { no_mf: args.no_mf, no_nt: args.no_nt, no_srt: args.no_srt };
    }
    let out = cfg.resolve_output_dir();
    let report = run_experiment(&cfg, &out)?;
    Ok(summarize(&report))
}

fn ablate(args: RunArgs) -> Result<bool> {
    let base = RunConfig { shaper: ShaperKind::Mfrs, ..args.resolve()? };
    let out = base.resolve_output_dir();
    let variants = [
        Ablations::default(),
        Ablations { no_mf: true, ..Default::default() },
        Ablations { no_nt: true, ..Default::default() },
        Ablations { no_srt: true, ..Default::default() },
    ];
    let mut ok = true;
    for ablations in variants {
        let cfg = RunConfig { ablations, ..base.clone() };
        let report = run_experiment(&cfg, &out)?;
        ok &= summarize(&report);
        println!("{}: mean final success {:.3}", report.label, report.mean_final_success(0.1).unwrap_or(f64::NAN));
    }
    Ok(ok)
}

fn eval(args: EvalArgs) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = args.task {
        cfg.task = t;
    }
    if let Some(h) = args.horizon {
        cfg.env.horizon = h;
    }
    let env = cfg.env_config();
    let summary = match (&args.actor, args.scripted) {
        (_, true) => evaluate_with(env, args.episodes, args.seed, &mut |e| Ok(straight_line_action(e)))?,
        (Some(path), false) => {
            let actor = Mlp::load(path).with_context(|| format!("loading {}", path.display()))?;
            evaluate(env, &actor, args.episodes, args.seed)?
        }
        (None, false) => bail!("either --actor or --scripted is required"),
    };
    let text = serde_json::to_string_pretty(&summary)?;
    println!("{text}");
    if let Some(out) = &args.out {
        write_file(out, text.as_bytes())?;
    }
    Ok(true)
}

fn field(args: FieldArgs) -> Result<bool> {
    let [nx, ny, nz] = <[usize; 3]>::try_from(args.lattice.as_slice()).map_err(|_| anyhow::anyhow!("--lattice needs three counts"))?;
    let cfg = RunConfig { task: args.task, ..RunConfig::default() }.env_config();
    let layout = sample_layout(&cfg, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    let (mut min, mut max) = (cfg.workspace_min, cfg.workspace_max);
    if nz == 1 {
        min[2] = 0.0;
        max[2] = 0.0;
    }
    let lattice = Lattice { min, max, counts: [nx, ny, nz] };
    let settings = FieldSettings::with_nodes(args.nodes)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = std::io::BufWriter::new(fs::File::create(&args.out)?);
    match args.kind {
        FieldKind::Intensity => {
            let magnets: Vec<_> = std::iter::once(&layout.target).chain(&layout.obstacles).map(|s| s.magnet).collect();
            dump_field_grid(&magnets, &lattice, &settings, file)?;
        }
        FieldKind::Reward => {
            let stats = if args.initial_stats {
                FieldStats::new(layout.obstacles.len(), 1)
            } else {
                grid_stats(&layout, &lattice, &settings)?
            };
            dump_reward_grid(&layout, &stats, &lattice, &settings, file)?;
        }
    }
    println!("wrote {} points to {}", lattice.len(), args.out.display());
    Ok(true)
}

fn verify_cmd(args: VerifyArgs) -> Result<bool> {
    let suites = if args.suites.is_empty() { Suite::ALL.to_vec() } else { args.suites };
    let report = verify(&suites);
    for p in &report.properties {
        println!("{} {}/{}: {:e} (bound {:e}) {}", if p.passed { "PASS" } else { "FAIL" }, p.suite.name(), p.name, p.measured, p.threshold, p.detail);
    }
    let out = args.out.unwrap_or_else(|| RunConfig::default().resolve_output_dir().join("verify.json"));
    write_file(&out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(report.passed)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Field(a) => field(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
