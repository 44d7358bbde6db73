use clap::{Args, Parser, Subcommand};
use splatover::pipeline::{
    artifact_checksums, build_scene, eval_policy, gen_demos, sample_grasps, train_policy, PipelineConfig,
    PipelineError, RunPaths,
};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

/// Synthetic handover pipeline: scene, grasps, demonstrations, policy, evaluation.
#[derive(Parser)]
#[command(name = "splatover", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or import the scene and write scene.ply + scene.labels
    BuildScene(Common),
    /// Sample antipodal grasps, drop unsafe ones, write grasps.tsv
    SampleGrasps(Common),
    /// Render demonstration episodes into dataset/
    GenDemos(Common),
    /// Train the policy, write policy.bin and train_log.tsv
    Train(Common),
    /// Closed-loop rollouts, write eval/report.json
    Eval(Common),
    /// All stages in order, then print artifact checksums
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// TOML pipeline config
    #[arg(long)]
    config: PathBuf,
    /// overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// run directory (overrides out_dir in the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// also write a rendered strip per evaluation episode
    #[arg(long)]
    strips: bool,
}

fn setup(c: &Common) -> Result<(PipelineConfig, RunPaths), PipelineError> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let out = c
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| PipelineError::Config("no run directory: pass --out or set out_dir".into()))?;
    Ok((cfg, RunPaths::new(out)))
}

fn run(cmd: &Command) -> Result<(), PipelineError> {
    let c = match cmd {
        Command::BuildScene(c)
        | Command::SampleGrasps(c)
        | Command::GenDemos(c)
        | Command::Train(c)
        | Command::Eval(c)
        | Command::Run(c) => c,
    };
    let (cfg, paths) = setup(c)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = c.threads {
        if n == 0 {
            return Err(PipelineError::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        let stage = |name: &str, f: &dyn Fn() -> Result<String, PipelineError>| {
            let t = Instant::now();
            let line = f()?;
            println!("{line}");
            log::info!("{name} finished in {:.2?}", t.elapsed());
            Ok::<_, PipelineError>(())
        };
        let scene = || build_scene(&cfg, &paths).map(|s| s.to_string());
        let grasps = || sample_grasps(&cfg, &paths).map(|s| s.to_string());
        let demos = || gen_demos(&cfg, &paths).map(|s| s.to_string());
        let train = || train_policy(&cfg, &paths).map(|s| s.to_string());
        let eval = || {
            eval_policy(&cfg, &paths, c.strips).map(|r| {
                let s = &r.summary;
                format!(
                    "eval: {} episodes, success {:.3}, declared {:.3}, collisions {:.3}, median error {:.4} m / {:.4} rad",
                    s.episodes, s.success_rate, s.declaration_rate, s.collision_rate, s.median_pos_err, s.median_rot_err
                )
            })
        };
        match cmd {
            Command::BuildScene(_) => stage("build-scene", &scene),
            Command::SampleGrasps(_) => stage("sample-grasps", &grasps),
            Command::GenDemos(_) => stage("gen-demos", &demos),
            Command::Train(_) => stage("train", &train),
            Command::Eval(_) => stage("eval", &eval),
            Command::Run(_) => {
                stage("build-scene", &scene)?;
                stage("sample-grasps", &grasps)?;
                stage("gen-demos", &demos)?;
                stage("train", &train)?;
                stage("eval", &eval)?;
                for (name, sum) in artifact_checksums(&paths)? {
                    println!("sha256 {name} {sum}");
                }
                Ok(())
            }
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPLATOVER_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
