//! Command-line workbench for the minimum cost multicut problem.
//!
//! Subcommands: `generate` synthetic datasets, `solve` single instances
//! with any solver, `train` the learned solver, `eval` a solver over a
//! dataset into a benchmark CSV, and `scale` for runtime tables over
//! growing instances. Exit codes: 0 success, 1 runtime error, 2 usage
//! error.

use clap::{Parser, Subcommand};
use multicut::bench::{
    bench_instance, records_to_csv, run_solver, scale_point, scale_records_to_csv, BenchRecord,
    SolverKind,
};
use multicut::cycles::{count_cycle_violations, enumerate_chordless_cycles};
use multicut::datasets::{
    generate, generate_scaling_graph, read_dataset, write_dataset, DatasetSpec, GeneratorKind,
    LabelMode,
};
use multicut::gnn::{load_model_file, save_model_file, train, ModelParams, TrainConfig};
use multicut::graph::{read_mcg_file, write_sol};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::PathBuf;
use std::time::Duration;

/// Minimum cost multicut workbench.
#[derive(Parser)]
#[command(name = "multicut", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        /// Instance family: irismp, irismp-s, randommp, randommp-s, scaling.
        #[arg(long)]
        kind: String,
        /// Number of instances.
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Dataset seed; defaults to MULTICUT_LAB_SEED or 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Labeling: exact, gaec, or none.
        #[arg(long, default_value = "none")]
        label: String,
        /// Node count for --kind scaling.
        #[arg(long)]
        nodes: Option<usize>,
        /// Node cap for exact labeling.
        #[arg(long, default_value_t = 12)]
        exact_cap: usize,
    },
    /// Solve one instance and write its solution file.
    Solve {
        /// Solver: exact, gaec, or gnn.
        #[arg(long)]
        solver: SolverKind,
        /// Model checkpoint (gnn only).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Instance file (.mcg).
        #[arg(long)]
        graph: PathBuf,
        /// Solution output path; defaults to the instance path with a .sol
        /// extension.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Time budget in seconds (gaec only).
        #[arg(long)]
        budget: Option<f64>,
        /// Report cycle violations of the thresholded output up to this
        /// cycle length (gnn only).
        #[arg(long)]
        l: Option<usize>,
        /// Export node embeddings as CSV (gnn only).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Train the learned solver from a JSON config.
    Train {
        /// Training configuration (JSON, schema of TrainConfig).
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Training-curve CSV path; defaults to `<out>.curves.csv`.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Evaluate a solver over a dataset into a benchmark CSV.
    Eval {
        #[arg(long)]
        solver: SolverKind,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        /// Benchmark CSV output path.
        #[arg(long)]
        out: PathBuf,
        /// Parallel workers (records stay in instance order).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Time budget in seconds per instance (gaec only).
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Wall-clock scaling study over growing random graphs.
    Scale {
        #[arg(long)]
        solver: SolverKind,
        /// Comma-separated node counts, e.g. 100,1000,10000.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Timed repetitions per size; the median is reported.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(message) = dispatch(cli) {
        eprintln!("error: {message}");
        std::process::exit(1);
    }
}

fn env_seed() -> u64 {
    std::env::var("MULTICUT_LAB_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

fn parse_kind(kind: &str, nodes: Option<usize>) -> Result<GeneratorKind, String> {
    match kind {
        "irismp" => Ok(GeneratorKind::irismp()),
        "irismp-s" => Ok(GeneratorKind::irismp_s()),
        "randommp" => Ok(GeneratorKind::randommp()),
        "randommp-s" => Ok(GeneratorKind::randommp_s()),
        "scaling" => {
            let nodes = nodes.ok_or("--kind scaling needs --nodes")?;
            Ok(GeneratorKind::Scaling { nodes })
        }
        other => Err(format!(
            "unknown kind '{other}' (irismp|irismp-s|randommp|randommp-s|scaling)"
        )),
    }
}

fn parse_label(label: &str) -> Result<LabelMode, String> {
    match label {
        "exact" => Ok(LabelMode::Exact),
        "gaec" => Ok(LabelMode::Gaec),
        "none" => Ok(LabelMode::None),
        other => Err(format!("unknown label mode '{other}' (exact|gaec|none)")),
    }
}

fn load_model_arg(
    solver: SolverKind,
    model: &Option<PathBuf>,
) -> Result<Option<ModelParams>, String> {
    match (solver, model) {
        (SolverKind::Gnn, Some(path)) => Ok(Some(
            load_model_file(path).map_err(|e| format!("{}: {e}", path.display()))?,
        )),
        (SolverKind::Gnn, None) => Err("solver 'gnn' needs --model".into()),
        _ => Ok(None),
    }
}

fn dispatch(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Generate {
            kind,
            count,
            seed,
            out,
            label,
            nodes,
            exact_cap,
        } => {
            let spec = DatasetSpec {
                kind: parse_kind(&kind, nodes)?,
                count,
                seed: seed.unwrap_or_else(env_seed),
                label_mode: parse_label(&label)?,
                exact_cap,
            };
            let instances = generate(&spec).map_err(|e| e.to_string())?;
            let manifest = write_dataset(&out, &instances, &spec).map_err(|e| e.to_string())?;
            eprintln!(
                "wrote {} {} instances to {} (mean nodes {:.1}, mean edges {:.1})",
                manifest.count,
                manifest.kind,
                out.display(),
                manifest.stats.mean_nodes,
                manifest.stats.mean_edges
            );
            Ok(())
        }
        Command::Solve {
            solver,
            model,
            graph,
            out,
            budget,
            l,
            embeddings,
        } => {
            let instance = read_mcg_file(&graph).map_err(|e| format!("{}: {e}", graph.display()))?;
            let model = load_model_arg(solver, &model)?;
            let budget = budget.map(Duration::from_secs_f64);
            let (result, feasible_before) =
                run_solver(solver, &instance, model.as_ref(), budget).map_err(|e| e.to_string())?;
            let out = out.unwrap_or_else(|| graph.with_extension("sol"));
            std::fs::write(&out, write_sol(result.objective, &result.labeling))
                .map_err(|e| format!("{}: {e}", out.display()))?;
            let mut line = serde_json::json!({
                "solver": solver.name(),
                "objective": result.objective,
                "wall_time_s": result.wall_time,
                "status": result.status,
                "solution": out.display().to_string(),
            });
            if let Some(feasible) = feasible_before {
                line["feasible_before_rounding"] = feasible.into();
                if l.is_some() || embeddings.is_some() {
                    let model = model.as_ref().expect("gnn path");
                    let prediction =
                        multicut::gnn::predict(model, &instance).map_err(|e| e.to_string())?;
                    if let Some(l) = l {
                        // diagnostic: how many cycle inequalities the raw
                        // thresholded output violated
                        let cycles =
                            enumerate_chordless_cycles(&instance, l).map_err(|e| e.to_string())?;
                        let violations = count_cycle_violations(
                            &instance,
                            &prediction.probs.threshold(),
                            &cycles,
                        )
                        .map_err(|e| e.to_string())?;
                        line["cycle_violations"] = violations.into();
                    }
                    if let Some(path) = embeddings {
                        std::fs::write(
                            &path,
                            multicut::gnn::embeddings_to_csv(&prediction.node_embeddings),
                        )
                        .map_err(|e| format!("{}: {e}", path.display()))?;
                        line["embeddings"] = path.display().to_string().into();
                    }
                }
            }
            println!("{line}");
            Ok(())
        }
        Command::Train { config, out, curves } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| format!("{}: {e}", config.display()))?;
            let config = TrainConfig::from_json(&text).map_err(|e| e.to_string())?;
            let outcome = train(&config).map_err(|e| e.to_string())?;
            save_model_file(&outcome.model, &out).map_err(|e| e.to_string())?;
            let curves_path = curves.unwrap_or_else(|| {
                let mut name = out.as_os_str().to_owned();
                name.push(".curves.csv");
                PathBuf::from(name)
            });
            std::fs::write(&curves_path, outcome.curves.to_csv())
                .map_err(|e| format!("{}: {e}", curves_path.display()))?;
            if let Some(row) = outcome.curves.rows.last() {
                eprintln!(
                    "trained to step {}: bce {:.4}, mean ratio {:.4}, feasible ratio {:.3}",
                    row.step, row.bce, row.mean_ratio, row.feasible_ratio
                );
            }
            Ok(())
        }
        Command::Eval {
            solver,
            model,
            dataset,
            out,
            jobs,
            budget,
        } => {
            let (instances, _) = read_dataset(&dataset).map_err(|e| e.to_string())?;
            let model = load_model_arg(solver, &model)?;
            let budget = budget.map(Duration::from_secs_f64);
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| e.to_string())?;
            let mut records: Vec<(usize, BenchRecord)> = pool.install(|| {
                instances
                    .par_iter()
                    .enumerate()
                    .map(|(index, inst)| {
                        bench_instance(
                            solver,
                            inst,
                            format!("{index:06}"),
                            model.as_ref(),
                            budget,
                        )
                        .map(|record| (index, record))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .map_err(|e| e.to_string())?;
            records.sort_by_key(|(index, _)| *index);
            let records: Vec<BenchRecord> = records.into_iter().map(|(_, r)| r).collect();
            std::fs::write(&out, records_to_csv(&records))
                .map_err(|e| format!("{}: {e}", out.display()))?;
            eprintln!("evaluated {} instances into {}", records.len(), out.display());
            Ok(())
        }
        Command::Scale {
            solver,
            sizes,
            seed,
            out,
            repeats,
            model,
        } => {
            if sizes.is_empty() {
                return Err("--sizes must list at least one node count".into());
            }
            let model = load_model_arg(solver, &model)?;
            let seed = seed.unwrap_or_else(env_seed);
            let records: Vec<_> = sizes
                .iter()
                .map(|&n| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let graph = generate_scaling_graph(n, &mut rng);
                    let record = scale_point(solver, &graph, model.as_ref(), repeats);
                    eprintln!(
                        "n={n}: {} {}",
                        record.status,
                        record
                            .wall_time
                            .map_or("-".into(), |t| format!("{:.6}s", t))
                    );
                    record
                })
                .collect();
            std::fs::write(&out, scale_records_to_csv(&records))
                .map_err(|e| format!("{}: {e}", out.display()))?;
            Ok(())
        }
    }
}
