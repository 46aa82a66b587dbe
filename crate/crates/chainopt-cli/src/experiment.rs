//! Batch experiment runner: expands an experiment specification into seeded
//! runs, executes them in a worker pool, and writes a reproducible result
//! bundle (results.csv, per-run traces, manifest, Pareto summary).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use chainopt::instance::{generate_synthetic, load_instance_from, GeneratorParams, ProblemInstance};
use chainopt::meta::{
    hbs_solve, iqts_solve, HbsConfig, IqtsConfig, SolverKind, SubSolver,
};
use chainopt::pareto::{hypervolume, pareto_filter, KpiPoint, DEFAULT_REFERENCE};
use chainopt::preprocess::ReducedInstance;
use chainopt::qubo::{
    compile, CompileOptions, Multipliers, QuboModel, Solution, Weights,
};
use chainopt::solvers::{QaoaParams, SaParams, Trace};
use chainopt::tuning::TuningTrace;

// ---------------------------------------------------------------------------
// Specification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstanceSource {
    Path { path: String },
    Generate { params: GeneratorParams },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// Uniform grid over the weight simplex with the given spacing.
    WeightGrid { resolution: f64 },
    /// Uniformly sampled weight vectors on the simplex.
    WeightRandom { count: usize },
    /// Fixed uniform weights, random primary source shares.
    AlphaSweep { count: usize, lo: f64, hi: f64 },
    Single { weights: [f64; 4] },
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::WeightGrid { .. } => "weight_grid",
            Mode::WeightRandom { .. } => "weight_random",
            Mode::AlphaSweep { .. } => "alpha_sweep",
            Mode::Single { .. } => "single",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubSolverSpec {
    BruteForce,
    Sa { steps: usize },
    Qaoa { depth: usize, shots: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverSpec {
    Iqts {
        #[serde(default = "default_iqts_m")]
        m: usize,
        #[serde(default = "default_iqts_n")]
        n: usize,
        #[serde(default = "default_iqts_kappa")]
        kappa: usize,
        #[serde(default = "default_sub_solver")]
        sub_solver: SubSolverSpec,
    },
    Hbs {
        #[serde(default = "default_hbs_solvers")]
        solvers: Vec<String>,
        #[serde(default = "default_hbs_population")]
        population: usize,
        #[serde(default = "default_hbs_iters")]
        max_iters: usize,
    },
}

fn default_iqts_m() -> usize {
    4
}
fn default_iqts_n() -> usize {
    15
}
fn default_iqts_kappa() -> usize {
    50
}
fn default_sub_solver() -> SubSolverSpec {
    SubSolverSpec::BruteForce
}
fn default_hbs_solvers() -> Vec<String> {
    vec!["cacm".into(), "ibp".into()]
}
fn default_hbs_population() -> usize {
    4
}
fn default_hbs_iters() -> usize {
    250
}

impl SolverSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SolverSpec::Iqts { .. } => "iqts",
            SolverSpec::Hbs { .. } => "hbs",
        }
    }
}

fn default_lambda() -> [f64; 6] {
    [2.0; 6]
}
fn default_r() -> i64 {
    10
}
fn default_r_bar() -> i64 {
    5
}
fn default_reference() -> [f64; 4] {
    DEFAULT_REFERENCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub instance: InstanceSource,
    pub mode: Mode,
    pub solver: SolverSpec,
    #[serde(default = "default_lambda")]
    pub lambda: [f64; 6],
    #[serde(default = "default_r")]
    pub r: i64,
    #[serde(default = "default_r_bar")]
    pub r_bar: i64,
    #[serde(default = "default_reference")]
    pub reference: [f64; 4],
    pub out_dir: String,
    pub seed: u64,
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

/// All weight vectors on the simplex grid with the given spacing, in
/// lexicographic order. The spacing must divide 1 exactly so membership is
/// a rational composition, not a float accumulation.
pub fn weight_grid(resolution: f64) -> Result<Vec<[f64; 4]>> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        bail!("grid resolution must be in (0, 1]");
    }
    let q = (1.0 / resolution).round();
    if (1.0 / resolution - q).abs() > 1e-9 {
        bail!("grid resolution must divide 1 exactly");
    }
    let q = q as i64;
    let mut grid = Vec::new();
    for a in 0..=q {
        for b in 0..=q - a {
            for c in 0..=q - a - b {
                let d = q - a - b - c;
                grid.push([
                    a as f64 / q as f64,
                    b as f64 / q as f64,
                    c as f64 / q as f64,
                    d as f64 / q as f64,
                ]);
            }
        }
    }
    Ok(grid)
}

/// Uniform sample from the open weight simplex.
fn simplex_sample<R: Rng>(rng: &mut R) -> [f64; 4] {
    let e: [f64; 4] = std::array::from_fn(|_| -(1.0 - rng.random::<f64>()).ln());
    let total: f64 = e.iter().sum();
    std::array::from_fn(|k| e[k] / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub run_id: usize,
    pub weights: [f64; 4],
    /// Overrides the generator's primary source share (alpha sweep only).
    pub alpha: Option<f64>,
    pub seed: u64,
}

fn mix_seed(master: u64, run_id: usize) -> u64 {
    let mut z = master ^ (run_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn plan_runs(spec: &ExperimentSpec) -> Result<Vec<RunPlan>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rows: Vec<([f64; 4], Option<f64>)> = match &spec.mode {
        Mode::WeightGrid { resolution } => weight_grid(*resolution)?
            .into_iter()
            .map(|w| (w, None))
            .collect(),
        Mode::WeightRandom { count } => (0..*count)
            .map(|_| (simplex_sample(&mut rng), None))
            .collect(),
        Mode::AlphaSweep { count, lo, hi } => {
            if !(0.5..=1.0).contains(lo) || !(0.5..=1.0).contains(hi) || lo > hi {
                bail!("alpha range must satisfy 0.5 <= lo <= hi <= 1");
            }
            if !matches!(spec.instance, InstanceSource::Generate { .. }) {
                bail!("alpha sweeps need a generated instance");
            }
            (0..*count)
                .map(|_| ([0.25; 4], Some(rng.random_range(*lo..=*hi))))
                .collect()
        }
        Mode::Single { weights } => vec![(*weights, None)],
    };
    if rows.is_empty() {
        bail!("the experiment plan is empty");
    }
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (weights, alpha))| RunPlan {
            run_id: i,
            weights,
            alpha,
            seed: mix_seed(spec.seed, i),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RowResult {
    pub plan: RunPlan,
    pub feasible: bool,
    pub kpis: [f64; 4],
    pub objective: f64,
    pub wall_ms: u128,
    pub error: Option<String>,
    pub solution: Option<Solution>,
    pub trace: Option<Trace>,
    pub tuning: Vec<(SolverKind, TuningTrace)>,
}

pub fn build_model(
    instance: Arc<ProblemInstance>,
    weights: Weights,
    spec: &ExperimentSpec,
) -> Result<QuboModel> {
    let reduced = Arc::new(ReducedInstance::build(instance, weights.transport())?);
    let options = CompileOptions {
        r: spec.r,
        r_bar: spec.r_bar,
        ..CompileOptions::default()
    };
    Ok(compile(
        reduced,
        weights,
        Multipliers::new(spec.lambda)?,
        options,
    )?)
}

pub fn solve_model(
    model: &QuboModel,
    solver: &SolverSpec,
    seed: u64,
) -> Result<(Solution, Trace, Vec<(SolverKind, TuningTrace)>)> {
    match solver {
        SolverSpec::Iqts {
            m,
            n,
            kappa,
            sub_solver,
        } => {
            let sub = match sub_solver {
                SubSolverSpec::BruteForce => SubSolver::BruteForce,
                SubSolverSpec::Sa { steps } => SubSolver::Sa(SaParams {
                    steps: *steps,
                    ..SaParams::default()
                }),
                SubSolverSpec::Qaoa { depth, shots } => SubSolver::Qaoa(QaoaParams {
                    depth: *depth,
                    shots: *shots,
                    ..QaoaParams::default()
                }),
            };
            let config = IqtsConfig {
                m: *m,
                n: *n,
                kappa: *kappa,
                sub_solver: sub,
                seed,
                ..IqtsConfig::default()
            };
            let (solution, trace) = iqts_solve(model, &config)?;
            Ok((solution, trace, Vec::new()))
        }
        SolverSpec::Hbs {
            solvers,
            population,
            max_iters,
        } => {
            let enabled = solvers
                .iter()
                .map(|s| match s.as_str() {
                    "cacm" => Ok(SolverKind::Cacm),
                    "ibp" => Ok(SolverKind::Ibp),
                    "qaoa" => Ok(SolverKind::Qaoa),
                    other => bail!("unknown portfolio solver {other:?}"),
                })
                .collect::<Result<Vec<_>>>()?;
            let config = HbsConfig {
                enabled,
                population: *population,
                max_iters: *max_iters,
                seed,
                ..HbsConfig::default()
            };
            let out = hbs_solve(model, &config)?;
            Ok((out.solution, out.trace, out.tuning))
        }
    }
}

fn run_row(spec: &ExperimentSpec, base: &Arc<ProblemInstance>, plan: &RunPlan) -> RowResult {
    let start = Instant::now();
    let outcome = (|| -> Result<(Solution, Trace, Vec<(SolverKind, TuningTrace)>)> {
        let instance = match (&spec.instance, plan.alpha) {
            (InstanceSource::Generate { params }, Some(alpha)) => {
                let mut p = params.clone();
                p.alpha = alpha;
                Arc::new(generate_synthetic(&p)?)
            }
            _ => Arc::clone(base),
        };
        let weights = Weights::new(plan.weights)?;
        let model = build_model(instance, weights, spec)?;
        solve_model(&model, &spec.solver, plan.seed)
    })();
    let wall_ms = start.elapsed().as_millis();
    match outcome {
        Ok((solution, trace, tuning)) => RowResult {
            plan: plan.clone(),
            feasible: solution.evaluation.feasible,
            kpis: solution.evaluation.kpis,
            objective: solution.evaluation.objective,
            wall_ms,
            error: None,
            solution: Some(solution),
            trace: Some(trace),
            tuning,
        },
        Err(e) => RowResult {
            plan: plan.clone(),
            feasible: false,
            kpis: [f64::NAN; 4],
            objective: f64::NAN,
            wall_ms,
            error: Some(e.to_string()),
            solution: None,
            trace: None,
            tuning: Vec::new(),
        },
    }
}

fn resolve_instance(source: &InstanceSource) -> Result<Arc<ProblemInstance>> {
    match source {
        InstanceSource::Path { path } => {
            let file = fs::File::open(path).with_context(|| format!("opening {path}"))?;
            Ok(Arc::new(load_instance_from(file)?))
        }
        InstanceSource::Generate { params } => Ok(Arc::new(generate_synthetic(params)?)),
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("CHAINOPT_THREADS") {
        let n: usize = v
            .parse()
            .context("CHAINOPT_THREADS must be a positive integer")?;
        builder = builder.num_threads(n.max(1));
    }
    Ok(builder.build()?)
}

// ---------------------------------------------------------------------------
// Output bundle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRow {
    pub run_id: usize,
    pub seed: u64,
    pub weights: [f64; 4],
    pub alpha: Option<f64>,
    pub trace_file: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub rows: Vec<ManifestRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParetoSummary {
    pub reference: [f64; 4],
    pub front: Vec<KpiPoint>,
    pub hypervolume: f64,
    pub dropped: usize,
    pub warning: Option<String>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub rows: usize,
    pub feasible_rows: usize,
    pub front: Vec<KpiPoint>,
    pub hypervolume: f64,
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

pub fn write_results_csv<W: Write>(spec: &ExperimentSpec, results: &[RowResult], mut out: W) -> Result<()> {
    writeln!(
        out,
        "run_id,mode,w1,w2,w3,w4,alpha_spec,solver,seed,feasible,C1,C2,C3,C4,objective,wall_ms"
    )?;
    for row in results {
        let alpha = row
            .plan
            .alpha
            .map_or_else(|| "-".to_string(), |a| format!("{a}"));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.plan.run_id,
            spec.mode.name(),
            fmt_f64(row.plan.weights[0]),
            fmt_f64(row.plan.weights[1]),
            fmt_f64(row.plan.weights[2]),
            fmt_f64(row.plan.weights[3]),
            alpha,
            spec.solver.name(),
            row.plan.seed,
            row.feasible,
            fmt_f64(row.kpis[0]),
            fmt_f64(row.kpis[1]),
            fmt_f64(row.kpis[2]),
            fmt_f64(row.kpis[3]),
            fmt_f64(row.objective),
            row.wall_ms,
        )?;
    }
    Ok(())
}

/// Workshare of the best solution per site and supplier, in percent, with
/// the window bounds and (for suppliers) the target.
fn write_workshare_csv(model: &QuboModel, solution: &Solution, path: &Path) -> Result<()> {
    let rational = &model.rational;
    let inst = &model.reduced.instance;
    let total: i64 = rational.p.iter().map(|p| p * rational.r_bar).sum();
    let mut out = fs::File::create(path)?;
    writeln!(out, "kind,entity,share_pct,ws_min,ws_max,ws_target")?;
    let assignment = chainopt::qubo::decode(model, &solution.x)
        .ok_or_else(|| anyhow::anyhow!("best solution does not decode"))?;
    let mut site_units = vec![0i64; inst.sites.len()];
    let mut supplier_units = vec![0i64; inst.suppliers.len()];
    for (part, sources) in assignment.iter().enumerate() {
        for (source, &pos) in sources.iter().enumerate() {
            let option = &inst.feasible[model.reduced.g[part][pos]];
            let units = rational.p[part] * rational.share_units(part, source);
            site_units[option.site] += units;
            supplier_units[option.supplier] += units;
        }
    }
    for (i, site) in inst.sites.iter().enumerate() {
        writeln!(
            out,
            "site,{},{:.4},{},{},",
            site.id,
            100.0 * site_units[i] as f64 / total as f64,
            site.ws_min,
            site.ws_max,
        )?;
    }
    for (i, s) in inst.suppliers.iter().enumerate() {
        writeln!(
            out,
            "supplier,{},{:.4},{},{},{}",
            s.id,
            100.0 * supplier_units[i] as f64 / total as f64,
            s.ws_min,
            s.ws_max,
            s.ws_target,
        )?;
    }
    Ok(())
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let out_dir = PathBuf::from(&spec.out_dir);
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir)?;

    let base = resolve_instance(&spec.instance)?;
    let plans = plan_runs(spec)?;
    let pool = thread_pool()?;
    let results: Vec<RowResult> = pool.install(|| {
        use rayon::prelude::*;
        plans.par_iter().map(|p| run_row(spec, &base, p)).collect()
    });

    // Results table, ordered by run id regardless of worker completion order.
    let mut csv_out = fs::File::create(out_dir.join("results.csv"))?;
    write_results_csv(spec, &results, &mut csv_out)?;

    // Per-run traces and the manifest.
    let mut manifest_rows = Vec::with_capacity(results.len());
    for row in &results {
        let trace_file = match &row.trace {
            Some(trace) => {
                let rel = format!("runs/run_{:03}_trace.csv", row.plan.run_id);
                trace.write_csv(fs::File::create(out_dir.join(&rel))?)?;
                for (kind, tt) in &row.tuning {
                    let names: Vec<String> = chainopt::meta::default_specs(*kind)
                        .iter()
                        .map(|s| s.name.clone())
                        .collect();
                    let trel = format!(
                        "runs/run_{:03}_tuning_{}.csv",
                        row.plan.run_id,
                        kind.name()
                    );
                    tt.write_csv(&names, fs::File::create(out_dir.join(&trel))?)?;
                }
                Some(rel)
            }
            None => None,
        };
        manifest_rows.push(ManifestRow {
            run_id: row.plan.run_id,
            seed: row.plan.seed,
            weights: row.plan.weights,
            alpha: row.plan.alpha,
            trace_file,
            error: row.error.clone(),
        });
    }
    let manifest = Manifest {
        spec: spec.clone(),
        rows: manifest_rows,
    };
    serde_json::to_writer_pretty(fs::File::create(out_dir.join("manifest.json"))?, &manifest)?;

    // Pareto summary over feasible rows.
    let points: Vec<KpiPoint> = results
        .iter()
        .filter(|r| r.feasible)
        .map(|r| r.kpis)
        .collect();
    let front = pareto_filter(&points);
    let hv = hypervolume(&front, &spec.reference);
    let summary = ParetoSummary {
        reference: spec.reference,
        front: front.clone(),
        hypervolume: hv.value,
        dropped: hv.dropped,
        warning: hv.warning,
    };
    serde_json::to_writer_pretty(fs::File::create(out_dir.join("pareto.json"))?, &summary)?;

    // Best feasible solution and its workshare table, for the bar chart.
    let best = results
        .iter()
        .filter(|r| r.feasible)
        .min_by(|a, b| a.objective.total_cmp(&b.objective));
    if let Some(best) = best {
        let solution = best.solution.as_ref().unwrap();
        serde_json::to_writer_pretty(
            fs::File::create(out_dir.join("solution.json"))?,
            &serde_json::json!({
                "run_id": best.plan.run_id,
                "x": solution.x,
                "objective": solution.evaluation.objective,
                "kpis": solution.evaluation.kpis,
                "penalties": solution.evaluation.penalties,
                "feasible": solution.evaluation.feasible,
            }),
        )?;
        let weights = Weights::new(best.plan.weights)?;
        let instance = match (&spec.instance, best.plan.alpha) {
            (InstanceSource::Generate { params }, Some(alpha)) => {
                let mut p = params.clone();
                p.alpha = alpha;
                Arc::new(generate_synthetic(&p)?)
            }
            _ => Arc::clone(&base),
        };
        let model = build_model(instance, weights, spec)?;
        write_workshare_csv(&model, solution, &out_dir.join("workshare.csv"))?;
    }

    Ok(ExperimentOutcome {
        out_dir,
        rows: results.len(),
        feasible_rows: points.len(),
        front,
        hypervolume: hv.value,
    })
}

/// Re-runs the experiment recorded in a manifest, optionally into a fresh
/// output directory.
pub fn run_from_manifest(path: &Path, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    let manifest: Manifest = serde_json::from_reader(fs::File::open(path)?)?;
    let mut spec = manifest.spec;
    if let Some(dir) = out_dir {
        spec.out_dir = dir.to_string_lossy().into_owned();
    }
    run_experiment(&spec)
}
