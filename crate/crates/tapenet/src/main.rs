//! Command-line surface: train, eval, gen-eval-set, oracle-check, trace,
//! gradcheck. Exit 0 on success, 1 with a diagnostic on failure (clap's own
//! exit 2 covers usage errors).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tapenet::config::{parse_checkpoint_header, CheckpointMeta, Dtype, TrainConfig};
use tapenet::eval::{dataset_seed, evaluate_policy, write_report};
use tapenet::rollout::{run_episode, PolicyController};
use tapenet_core::dataset::{build_eval_set, EvalDataset};
use tapenet_core::machine::{apply_action, check_halt, init_machine, render_trace, HeadConfig};
use tapenet_core::modules::pool_for_task;
use tapenet_core::oracle::verify_environment;
use tapenet_core::task::{generate, TaskKind};
use tapenet_nn::gradcheck::run_suite;
use tapenet_nn::{load_checkpoint, ContextSpec, ParamStore, Scalar};

#[derive(Parser)]
#[command(
    name = "tapenet",
    version,
    about = "Modular tape machine with a learned controller"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a controller from a TOML config file.
    Train {
        /// Path to the config (TOML; missing keys take defaults).
        config: PathBuf,
        /// Output directory for logs and checkpoints.
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a precomputed dataset file.
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Act greedily instead of sampling from the policy.
        #[arg(long)]
        greedy: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Episode cap multiplier (T_max = ceil(multiplier * L)).
        #[arg(long, default_value_t = 8.0)]
        t_max_multiplier: f64,
        /// Also write a newline-delimited report file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate and save a 100-instance evaluation dataset.
    GenEvalSet {
        #[arg(long)]
        task: String,
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive every task (or one) with the hand-written oracle across lengths.
    OracleCheck {
        /// Task name or `all`.
        task: String,
        #[arg(long, default_value_t = 100)]
        max_len: usize,
    },
    /// Roll one episode with a checkpoint and dump the rendered tape states.
    Trace {
        checkpoint: PathBuf,
        task: String,
        #[arg(short = 'n', long)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        greedy: bool,
        #[arg(long, default_value_t = 8.0)]
        t_max_multiplier: f64,
    },
    /// Run the finite-difference gradient suite at both precisions.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        rounds: usize,
        #[arg(long, default_value_t = 0x5eed)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, out } => cmd_train(&config, &out),
        Command::Eval {
            checkpoint,
            dataset,
            greedy,
            seed,
            t_max_multiplier,
            out,
        } => cmd_eval(
            &checkpoint,
            &dataset,
            greedy,
            seed,
            t_max_multiplier,
            out.as_deref(),
        ),
        Command::GenEvalSet {
            task,
            length,
            seed,
            out,
        } => cmd_gen_eval_set(&task, length, seed, &out),
        Command::OracleCheck { task, max_len } => cmd_oracle_check(&task, max_len),
        Command::Trace {
            checkpoint,
            task,
            length,
            seed,
            greedy,
            t_max_multiplier,
        } => cmd_trace(&checkpoint, &task, length, seed, greedy, t_max_multiplier),
        Command::Gradcheck { rounds, seed } => cmd_gradcheck(rounds, seed),
    }
}

fn cmd_train(config_path: &std::path::Path, out_dir: &std::path::Path) -> anyhow::Result<()> {
    let config = TrainConfig::load(config_path)
        .with_context(|| format!("loading config {}", config_path.display()))?;
    let outcome = tapenet::train::train(&config, out_dir)?;
    println!(
        "trained {} env steps over {} updates ({} episodes); final checkpoint {}",
        outcome.env_steps,
        outcome.updates,
        outcome.episodes,
        outcome.final_checkpoint.display()
    );
    for (length, best) in &outcome.best_rates {
        match best {
            Some(rate) => println!("best success rate at length {length}: {rate:.2}"),
            None => println!("best success rate at length {length}: no evaluations ran"),
        }
    }
    Ok(())
}

fn load_meta(path: &std::path::Path) -> anyhow::Result<(CheckpointMeta, ParamStore<f64>)> {
    let (store, header) =
        load_checkpoint::<f64>(path).with_context(|| format!("loading {}", path.display()))?;
    let meta = parse_checkpoint_header(&header)?;
    meta.net
        .validate_store(&store)
        .map_err(|e| anyhow!("shape mismatch: {e}"))?;
    Ok((meta, store))
}

fn cmd_eval(
    ckpt_path: &std::path::Path,
    dataset_path: &std::path::Path,
    greedy: bool,
    seed: u64,
    t_max_multiplier: f64,
    out: Option<&std::path::Path>,
) -> anyhow::Result<()> {
    let dataset = EvalDataset::load(dataset_path)
        .with_context(|| format!("loading dataset {}", dataset_path.display()))?;
    let (meta, store) = load_meta(ckpt_path)?;
    if meta.task != dataset.kind {
        bail!(
            "shape mismatch: checkpoint was trained on task `{}` but the dataset is `{}`",
            meta.task.name(),
            dataset.kind.name()
        );
    }
    let report = match meta.dtype {
        Dtype::F64 => run_eval::<f64>(&meta, &store, &dataset, greedy, seed, t_max_multiplier),
        Dtype::F32 => {
            let store32 = convert_store::<f32>(&store);
            run_eval::<f32>(&meta, &store32, &dataset, greedy, seed, t_max_multiplier)
        }
    };
    println!(
        "{} length {}: {}/{} = {:.2}",
        report.task,
        report.length,
        report.pass_count(),
        report.passes.len(),
        report.rate
    );
    if let Some(path) = out {
        write_report(&report, path)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

fn convert_store<S: Scalar>(store: &ParamStore<f64>) -> ParamStore<S> {
    let mut out = ParamStore::new();
    for (name, value, _) in store.iter() {
        out.insert(
            name,
            tapenet_nn::Tensor::from_f64(value.shape().to_vec(), value.data()),
        );
    }
    out
}

fn run_eval<S: Scalar>(
    meta: &CheckpointMeta,
    store: &ParamStore<S>,
    dataset: &EvalDataset,
    greedy: bool,
    seed: u64,
    t_max_multiplier: f64,
) -> tapenet::EvalReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    evaluate_policy(
        &meta.net,
        store,
        dataset,
        meta.flags,
        t_max_multiplier,
        greedy,
        &mut rng,
        meta.version,
    )
}

fn cmd_gen_eval_set(
    task: &str,
    length: usize,
    seed: u64,
    out: &std::path::Path,
) -> anyhow::Result<()> {
    let kind: TaskKind = task.parse().map_err(|e| anyhow!("{e}"))?;
    let dataset = build_eval_set(kind, length, dataset_seed(seed, length))?;
    dataset.save(out)?;
    println!(
        "wrote {} instances of {} at length {} to {}",
        dataset.instances.len(),
        kind.name(),
        length,
        out.display()
    );
    Ok(())
}

fn cmd_oracle_check(task: &str, max_len: usize) -> anyhow::Result<()> {
    let kinds: Vec<TaskKind> = if task == "all" {
        TaskKind::ALL.to_vec()
    } else {
        vec![task.parse().map_err(|e| anyhow!("{e}"))?]
    };
    let mut failed = false;
    for kind in kinds {
        let report = verify_environment(kind, max_len);
        println!("{}", report.summary_line());
        println!("  max episode steps: {} (bound 3*L)", report.max_steps);
        if let Some(failure) = &report.failure {
            eprintln!("{failure}");
            failed = true;
        }
    }
    if failed {
        bail!("oracle check failed");
    }
    Ok(())
}

fn cmd_trace(
    ckpt_path: &std::path::Path,
    task: &str,
    length: usize,
    seed: u64,
    greedy: bool,
    t_max_multiplier: f64,
) -> anyhow::Result<()> {
    let kind: TaskKind = task.parse().map_err(|e| anyhow!("{e}"))?;
    let (meta, store) = load_meta(ckpt_path)?;
    if meta.task != kind {
        bail!(
            "shape mismatch: checkpoint was trained on task `{}` but `{}` was requested",
            meta.task.name(),
            kind.name()
        );
    }
    let mut task_rng = ChaCha8Rng::seed_from_u64(seed);
    let instance = generate(kind, length, &mut task_rng)?;
    let spec = ContextSpec::for_task(kind, HeadConfig::DEFAULT);
    let pool = pool_for_task(kind);

    // Re-run the episode state by state so every intermediate tape is shown.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ace);
    let mut ctrl = PolicyController::new(&meta.net, &store, &mut rng, greedy);
    let trace = run_episode::<f64, _>(&mut ctrl, &instance, &spec, meta.flags, t_max_multiplier)?;

    let mut state = init_machine(&instance, spec.heads)?;
    print!("{}", render_trace(&state, kind.name()));
    for step in &trace.steps {
        state = apply_action(&state, &step.action, &pool, spec.heads)
            .map_err(|e| anyhow!("recorded action rejected: {e}"))?;
        print!("{}", render_trace(&state, kind.name()));
    }
    let halted = check_halt(&state, &instance);
    println!(
        "result: {} after {} steps (targets {})",
        if trace.success { "success" } else { "failure" },
        trace.len(),
        if halted { "match" } else { "differ" }
    );
    Ok(())
}

fn cmd_gradcheck(rounds: usize, seed: u64) -> anyhow::Result<()> {
    let f64_suite = run_suite::<f64>(seed, rounds);
    let f32_suite = run_suite::<f32>(seed ^ 0x32, rounds);
    println!(
        "{:<22} {:>12} {:>10} {:>12} {:>10}",
        "op", "f64 max err", "f64 tol", "f32 max err", "f32 tol"
    );
    let mut ok = true;
    for (a, b) in f64_suite.iter().zip(&f32_suite) {
        assert_eq!(a.op, b.op);
        println!(
            "{:<22} {:>12.3e} {:>10.0e} {:>12.3e} {:>10.0e}{}",
            a.op,
            a.max_rel_err,
            a.tol,
            b.max_rel_err,
            b.tol,
            if a.passed() && b.passed() {
                ""
            } else {
                "  FAIL"
            }
        );
        ok &= a.passed() && b.passed();
    }
    if !ok {
        bail!("gradient checks failed");
    }
    println!(
        "all {} ops within tolerance ({} rounds each)",
        f64_suite.len(),
        rounds
    );
    Ok(())
}
