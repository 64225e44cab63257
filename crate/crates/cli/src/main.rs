use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use holescope::pipeline::{
    run_stages, Algo, PipelineConfig, PipelineError, RunOptions, Runner, Stage, StageResult, DATASET_FILE,
};
use holescope::Error;

/// Coverage-hole detection on simulated mmWave channels.
#[derive(Parser)]
#[command(name = "holescope", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scenario generation.
    Scene {
        #[command(subcommand)]
        action: SceneAction,
    },
    /// Featurize the persisted dataset and write embeddings.
    Embed(StageArgs),
    /// Trustworthiness of persisted embeddings.
    Eval(StageArgs),
    /// Raster hole detection on persisted embeddings.
    Detect(StageArgs),
    /// SVG scatter plots of persisted embeddings.
    Render(StageArgs),
    /// Every stage in sequence.
    All(StageArgs),
}

#[derive(Subcommand)]
enum SceneAction {
    /// Simulate the scenario and write dataset.chds.
    Gen(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Pipeline config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded, bitwise reproducible numerics.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args, Clone)]
struct StageArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Restrict to one algorithm; default is umap plus the configured baselines.
    #[arg(long, value_parser = parse_algo)]
    algo: Option<Algo>,
    /// Sweep `key=v1,v2,...`; repeat for a Cartesian grid of runs in subdirectories.
    #[arg(long = "param", value_parser = parse_sweep)]
    params: Vec<(String, Vec<String>)>,
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_sweep(s: &str) -> Result<(String, Vec<String>), String> {
    let (key, values) = s.split_once('=').ok_or_else(|| format!("expected key=v[,v...], got {s:?}"))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if key.trim().is_empty() || values.is_empty() {
        return Err(format!("expected key=v[,v...], got {s:?}"));
    }
    Ok((key.trim().to_string(), values))
}

#[derive(Clone, Copy, PartialEq)]
enum Job {
    Embed,
    Eval,
    Detect,
    Render,
    All,
}

fn config_error(e: Error) -> PipelineError {
    PipelineError { stage: Stage::Config, error: e }
}

fn load_config(args: &CommonArgs) -> StageResult<(PipelineConfig, serde_json::Value)> {
    let (mut cfg, raw) = PipelineConfig::load(&args.config).map_err(config_error)?;
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok((cfg, raw))
}

fn init_threads(deterministic: bool) -> StageResult<()> {
    let cap = match std::env::var("HOLESCOPE_THREADS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| config_error(Error::Config(format!("HOLESCOPE_THREADS must be a positive integer, got {v:?}"))))?,
        ),
        Err(_) => None,
    };
    let threads = if deterministic { Some(1) } else { cap };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_error(Error::Config(e.to_string())))?;
    }
    Ok(())
}

/// Every combination of the sweep values, in command-line order.
fn combinations(params: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    params.iter().fold(vec![vec![]], |acc, (key, values)| {
        acc.iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push((key.clone(), v.clone()));
                    next
                })
            })
            .collect()
    })
}

fn run_job(runner: &mut Runner, job: Job, algos: &[Algo], fresh_scene: bool) -> StageResult<()> {
    let stage = match job {
        Job::All => return run_stages(runner, algos, fresh_scene),
        Job::Embed => Stage::Embed,
        Job::Eval => Stage::Eval,
        Job::Detect => Stage::Detect,
        Job::Render => Stage::Render,
    };
    let ds = runner.load_dataset(stage)?;
    match job {
        Job::Embed => {
            let f = runner.features(&ds)?;
            for &algo in algos {
                runner.embed(algo, &f)?;
            }
        }
        Job::Eval => {
            let f = runner.features(&ds)?;
            for &algo in algos {
                let emb = runner.load_embedding(algo, stage)?;
                runner.evaluate(algo, &f, &emb)?;
            }
        }
        Job::Detect => {
            for &algo in algos {
                let emb = runner.load_embedding(algo, stage)?;
                runner.detect(algo, &emb, Some(&ds))?;
            }
        }
        Job::Render => {
            let truth = ds.ground_truth();
            for &algo in algos {
                let emb = runner.load_embedding(algo, stage)?;
                runner.render(algo, &emb, truth.as_ref())?;
            }
        }
        Job::All => unreachable!(),
    }
    Ok(())
}

fn run_stage_command(job: Job, args: &StageArgs) -> StageResult<()> {
    let (cfg, raw) = load_config(&args.common)?;
    let opts = RunOptions { deterministic: args.common.deterministic };
    let base = cfg.output_dir.clone();
    let combos = combinations(&args.params);
    let sweeping = !args.params.is_empty();
    // a seed sweep needs a dataset per run; otherwise runs share the base one
    let shared = !args.params.iter().any(|(k, _)| k == "seed");

    let mut runs = Vec::with_capacity(combos.len());
    for combo in &combos {
        let mut run_cfg = cfg.clone();
        for (k, v) in combo {
            run_cfg.apply_param(k, v).map_err(config_error)?;
        }
        run_cfg.output_dir = if sweeping { base.join(sweep_dir_name(combo)) } else { base.clone() };
        runs.push(run_cfg);
    }

    if job == Job::All && sweeping && shared {
        let mut runner = Runner::new(cfg.clone(), Some(raw.clone()), opts)?;
        let outcome = runner.scene();
        runner.conclude(outcome)?;
    }

    for run_cfg in runs {
        let dir = run_cfg.output_dir.clone();
        let mut runner = Runner::new(run_cfg, Some(raw.clone()), opts)?;
        // sweep runs read the base dataset unless they generated their own
        let fresh_scene = job == Job::All && !(sweeping && shared);
        if sweeping && !fresh_scene && !dir.join(DATASET_FILE).exists() {
            runner = runner.with_dataset_path(base.join(DATASET_FILE));
        }
        let algos = match args.algo {
            Some(a) => vec![a],
            None => runner.algos(),
        };
        let outcome = run_job(&mut runner, job, &algos, fresh_scene);
        runner.conclude(outcome)?;
        if sweeping {
            eprintln!("finished {}", dir.display());
        }
    }
    Ok(())
}

fn sweep_dir_name(combo: &[(String, String)]) -> String {
    combo.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join("_")
}

fn run_scene(args: &CommonArgs) -> StageResult<()> {
    let (cfg, raw) = load_config(args)?;
    let mut runner = Runner::new(cfg, Some(raw), RunOptions { deterministic: args.deterministic })?;
    let outcome = runner.scene();
    runner.conclude(outcome)?;
    Ok(())
}

fn deterministic(cmd: &Command) -> bool {
    match cmd {
        Command::Scene { action: SceneAction::Gen(c) } => c.deterministic,
        Command::Embed(a) | Command::Eval(a) | Command::Detect(a) | Command::Render(a) | Command::All(a) => {
            a.common.deterministic
        }
    }
}

fn dispatch(cli: &Cli) -> StageResult<()> {
    init_threads(deterministic(&cli.command))?;
    match &cli.command {
        Command::Scene { action: SceneAction::Gen(args) } => run_scene(args),
        Command::Embed(a) => run_stage_command(Job::Embed, a),
        Command::Eval(a) => run_stage_command(Job::Eval, a),
        Command::Detect(a) => run_stage_command(Job::Detect, a),
        Command::Render(a) => run_stage_command(Job::Render, a),
        Command::All(a) => run_stage_command(Job::All, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("holescope: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
