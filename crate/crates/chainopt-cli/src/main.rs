use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use chainopt::instance::{generate_synthetic, load_instance_from, GeneratorParams};
use chainopt::pareto::{hypervolume, pareto_filter, DEFAULT_REFERENCE};
use chainopt::qubo::Weights;

use chainopt_cli::experiment::{
    build_model, plan_runs, run_experiment, run_from_manifest, solve_model, write_results_csv,
    ExperimentSpec, InstanceSource, Mode, RowResult, SolverSpec, SubSolverSpec,
};
use chainopt_cli::plots::emit_plots;

#[derive(Parser)]
#[command(name = "chainopt", about = "Supply-chain assignment optimization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 20)]
    parts: usize,
    #[arg(long, default_value_t = 6)]
    sites: usize,
    #[arg(long, default_value_t = 4)]
    suppliers: usize,
    #[arg(long, default_value_t = 2)]
    warehouses: usize,
    #[arg(long, default_value_t = 3)]
    regions: usize,
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl GenArgs {
    fn params(&self) -> GeneratorParams {
        GeneratorParams {
            n_parts: self.parts,
            n_sites: self.sites,
            n_suppliers: self.suppliers,
            n_warehouses: self.warehouses,
            n_regions: self.regions,
            edge_density: self.density,
            alpha: self.alpha,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Instance JSON path.
    #[arg(long)]
    instance: PathBuf,
    /// Objective weights, comma separated, summing to 1.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [0.25, 0.25, 0.25, 0.25])]
    weights: Vec<f64>,
    /// Penalty multipliers, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 6, default_values_t = [2.0, 2.0, 2.0, 2.0, 2.0, 2.0])]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    r: i64,
    #[arg(long = "r-bar", default_value_t = 5)]
    r_bar: i64,
}

impl ModelArgs {
    fn spec_stub(&self, out_dir: String, seed: u64, solver: SolverSpec) -> ExperimentSpec {
        ExperimentSpec {
            instance: InstanceSource::Path {
                path: self.instance.to_string_lossy().into_owned(),
            },
            mode: Mode::Single {
                weights: [self.weights[0], self.weights[1], self.weights[2], self.weights[3]],
            },
            solver,
            lambda: [
                self.lambda[0],
                self.lambda[1],
                self.lambda[2],
                self.lambda[3],
                self.lambda[4],
                self.lambda[5],
            ],
            r: self.r,
            r_bar: self.r_bar,
            reference: DEFAULT_REFERENCE,
            out_dir,
            seed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic problem instance as JSON.
    Generate {
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compile an instance to its quadratic model and export it.
    Compile {
        #[command(flatten)]
        model: ModelArgs,
        /// Sparse matrix in coordinate format.
        #[arg(long = "out-coo")]
        out_coo: PathBuf,
        /// Variable metadata JSON.
        #[arg(long = "out-meta")]
        out_meta: PathBuf,
    },
    /// Solve a single instance and write a result bundle.
    Solve {
        #[command(flatten)]
        model: ModelArgs,
        /// Solver: iqts or hbs.
        #[arg(long, default_value = "iqts")]
        solver: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
    /// Run an experiment sweep from a spec or re-run a manifest.
    Sweep {
        /// Experiment spec JSON.
        #[arg(long, conflicts_with = "manifest")]
        spec: Option<PathBuf>,
        /// Manifest of a previous run to reproduce.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Overrides the output directory.
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
    },
    /// Pareto front and hypervolume of a results table.
    Pareto {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, value_delimiter = ',', num_args = 4)]
        reference: Option<Vec<f64>>,
        /// Optional JSON output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG plots for a result bundle.
    Plot {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_solver(name: &str) -> Result<SolverSpec> {
    match name {
        "iqts" => Ok(SolverSpec::Iqts {
            m: 4,
            n: 15,
            kappa: 50,
            sub_solver: SubSolverSpec::BruteForce,
        }),
        "hbs" => Ok(SolverSpec::Hbs {
            solvers: vec!["cacm".into(), "ibp".into()],
            population: 4,
            max_iters: 250,
        }),
        other => bail!("unknown solver {other:?} (expected iqts or hbs)"),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { gen, out } => {
            let instance = generate_synthetic(&gen.params())?;
            instance.save_to(fs::File::create(&out)?)?;
            println!(
                "wrote {} ({} parts, {} feasible options)",
                out.display(),
                instance.num_parts(),
                instance.feasible.len()
            );
        }
        Command::Compile {
            model: args,
            out_coo,
            out_meta,
        } => {
            let spec = args.spec_stub(String::new(), 0, parse_solver("iqts")?);
            let instance = Arc::new(load_instance_from(fs::File::open(&args.instance)?)?);
            let weights = Weights::new([
                args.weights[0],
                args.weights[1],
                args.weights[2],
                args.weights[3],
            ])?;
            let model = build_model(instance, weights, &spec)?;
            model.export_coo(fs::File::create(&out_coo)?)?;
            model.export_metadata(fs::File::create(&out_meta)?)?;
            println!(
                "compiled {} variables, {} nonzeros",
                model.num_vars(),
                model.matrix.q.len()
            );
        }
        Command::Solve {
            model: args,
            solver,
            seed,
            out_dir,
        } => {
            fs::create_dir_all(&out_dir)?;
            let spec = args.spec_stub(
                out_dir.to_string_lossy().into_owned(),
                seed,
                parse_solver(&solver)?,
            );
            let instance = Arc::new(load_instance_from(fs::File::open(&args.instance)?)?);
            let weights = Weights::new([
                args.weights[0],
                args.weights[1],
                args.weights[2],
                args.weights[3],
            ])?;
            let model = build_model(instance, weights, &spec)?;
            let plan = plan_runs(&spec)?.remove(0);
            let started = std::time::Instant::now();
            let (solution, trace, _) = solve_model(&model, &spec.solver, plan.seed)?;
            let row = RowResult {
                plan,
                feasible: solution.evaluation.feasible,
                kpis: solution.evaluation.kpis,
                objective: solution.evaluation.objective,
                wall_ms: started.elapsed().as_millis(),
                error: None,
                solution: Some(solution.clone()),
                trace: Some(trace.clone()),
                tuning: Vec::new(),
            };
            write_results_csv(&spec, &[row], fs::File::create(out_dir.join("results.csv"))?)?;
            trace.write_csv(fs::File::create(out_dir.join("trace.csv"))?)?;
            println!(
                "objective {} feasible {}",
                solution.evaluation.objective, solution.evaluation.feasible
            );
        }
        Command::Sweep {
            spec,
            manifest,
            out_dir,
        } => {
            let outcome = match (spec, manifest) {
                (Some(spec_path), None) => {
                    let mut spec: ExperimentSpec =
                        serde_json::from_reader(fs::File::open(&spec_path)?)
                            .with_context(|| format!("parsing {}", spec_path.display()))?;
                    if let Some(dir) = out_dir {
                        spec.out_dir = dir.to_string_lossy().into_owned();
                    }
                    run_experiment(&spec)?
                }
                (None, Some(manifest_path)) => {
                    run_from_manifest(&manifest_path, out_dir.as_deref())?
                }
                _ => bail!("pass exactly one of --spec or --manifest"),
            };
            println!(
                "{} rows ({} feasible), front size {}, hypervolume {:.4} -> {}",
                outcome.rows,
                outcome.feasible_rows,
                outcome.front.len(),
                outcome.hypervolume,
                outcome.out_dir.display()
            );
        }
        Command::Pareto {
            results,
            reference,
            out,
        } => {
            let points = read_kpi_points(&results)?;
            let front = pareto_filter(&points);
            let reference = match reference {
                Some(r) => [r[0], r[1], r[2], r[3]],
                None => DEFAULT_REFERENCE,
            };
            let hv = hypervolume(&front, &reference);
            if let Some(w) = &hv.warning {
                eprintln!("warning: {w}");
            }
            println!("front size {}, hypervolume {:.6}", front.len(), hv.value);
            for p in &front {
                println!("  [{}, {}, {}, {}]", p[0], p[1], p[2], p[3]);
            }
            if let Some(out) = out {
                serde_json::to_writer_pretty(
                    fs::File::create(&out)?,
                    &serde_json::json!({
                        "reference": reference,
                        "front": front,
                        "hypervolume": hv.value,
                        "dropped": hv.dropped,
                    }),
                )?;
            }
        }
        Command::Plot { dir } => {
            let files = emit_plots(&dir)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn read_kpi_points(path: &PathBuf) -> Result<Vec<[f64; 4]>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.get(9) == Some("true") {
            let mut p = [0.0; 4];
            for (k, item) in p.iter_mut().enumerate() {
                *item = record.get(10 + k).context("short row")?.parse()?;
            }
            points.push(p);
        }
    }
    Ok(points)
}
