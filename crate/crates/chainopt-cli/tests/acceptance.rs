//! End-to-end acceptance checks for the whole workspace. Each test covers
//! one release criterion and prints a single PASS line with its measured
//! numbers when it succeeds.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chainopt::informed::{isf, isg, isi};
use chainopt::instance::{generate_synthetic, GeneratorParams, ProblemInstance};
use chainopt::meta::{hbs_solve, iqts_solve, HbsConfig, IqtsConfig};
use chainopt::pareto::{hypervolume, DEFAULT_REFERENCE};
use chainopt::preprocess::{optimal_routes, rescale_factors, edge_cost, ReducedInstance};
use chainopt::qubo::{
    bits_to_spins, compile, evaluate, CompileOptions, Multipliers, QuboModel, SparseQubo, Weights,
};
use chainopt::solvers::{
    brute_force, ibp_solve, qaoa_angles, qaoa_leakage, IbpParams, QaoaParams,
};
use chainopt::tuning::{das_sample, das_update, DasState, ParamSpec};

use chainopt_cli::experiment::{
    run_experiment, run_from_manifest, ExperimentSpec, InstanceSource, Mode, SolverSpec,
    SubSolverSpec,
};

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

/// Ten small instances whose exhaustive optimum is feasible, at most 22
/// QUBO variables each.
const ORACLE_SEEDS: [u64; 10] = [0, 1, 2, 8, 10, 11, 12, 13, 14, 15];

fn oracle_model(seed: u64) -> QuboModel {
    let params = GeneratorParams {
        n_parts: 3,
        n_sites: 2,
        n_suppliers: 2,
        n_warehouses: if seed % 2 == 0 { 0 } else { 1 },
        n_regions: 2,
        edge_density: 1.0,
        alpha: 0.8,
        seed,
    };
    build_model(&params, [3.0, 3.0, 3.0, 3.0, 0.0, 0.0])
}

fn build_model(params: &GeneratorParams, lambda: [f64; 6]) -> QuboModel {
    let inst = Arc::new(generate_synthetic(params).unwrap());
    let weights = Weights::new([0.25; 4]).unwrap();
    let reduced = Arc::new(ReducedInstance::build(inst, weights.transport()).unwrap());
    compile(
        reduced,
        weights,
        Multipliers::new(lambda).unwrap(),
        CompileOptions::default(),
    )
    .unwrap()
}

fn mid_model() -> QuboModel {
    build_model(
        &GeneratorParams {
            n_parts: 8,
            n_sites: 4,
            n_suppliers: 3,
            n_warehouses: 2,
            n_regions: 2,
            edge_density: 0.5,
            alpha: 0.8,
            seed: 42,
        },
        [2.0; 6],
    )
}

// ---------------------------------------------------------------------------
// 1. Oracle optimality of both top-level solvers
// ---------------------------------------------------------------------------

#[test]
fn oracle_optimality_on_small_instances() {
    let mut iqts_hits = 0;
    let mut hbs_hits = 0;
    for &seed in &ORACLE_SEEDS {
        let model = oracle_model(seed);
        assert!(model.num_vars() <= 22, "instance too large");
        let (_, opt) = brute_force(&model.matrix).unwrap();

        let started = Instant::now();
        let (sol, _) = iqts_solve(
            &model,
            &IqtsConfig {
                kappa: 50,
                seed: 1,
                ..IqtsConfig::default()
            },
        )
        .unwrap();
        assert!(started.elapsed().as_secs() < 60, "IQTS over time budget");
        if (sol.evaluation.objective - opt).abs() <= 1e-9 {
            iqts_hits += 1;
        }

        let started = Instant::now();
        let out = hbs_solve(
            &model,
            &HbsConfig {
                max_iters: 250,
                window: 250,
                cacm_steps: 400,
                ibp_sweeps: 30,
                population: 6,
                seed: 1,
                ..HbsConfig::default()
            },
        )
        .unwrap();
        assert!(started.elapsed().as_secs() < 60, "HBS over time budget");
        if (out.solution.evaluation.objective - opt).abs() <= 1e-9 {
            hbs_hits += 1;
        }
    }
    assert!(iqts_hits >= 9, "IQTS matched the optimum on {iqts_hits}/10");
    assert!(hbs_hits >= 9, "HBS matched the optimum on {hbs_hits}/10");
    println!("PASS oracle optimality: IQTS {iqts_hits}/10, HBS {hbs_hits}/10 within 1e-9");
}

// ---------------------------------------------------------------------------
// 2. Feasibility suite: generation, repair, local improvement
// ---------------------------------------------------------------------------

#[test]
fn feasibility_generation_repair_improvement() {
    let model = mid_model();

    // Generation: penalty-zero on every seeded run.
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sol = isg(&model, &mut rng, 200).unwrap();
        assert!(sol.evaluation.feasible, "seed {seed} infeasible");
        for (k, p) in sol.evaluation.penalties.iter().enumerate() {
            assert!(p.abs() <= 1e-12, "seed {seed}: penalty {k} = {p}");
        }
    }

    // Repair: single-violation perturbations fixed within budget 20.
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    let base = isg(&model, &mut rng, 200).unwrap();
    let group_vars: Vec<usize> = model
        .layout
        .groups
        .iter()
        .flat_map(|g| g.vars.iter().copied())
        .collect();
    let mut repaired = 0;
    let trials = 100;
    for t in 0..trials {
        let mut x = base.x.clone();
        let v = group_vars[usize::try_from(t).unwrap() % group_vars.len()];
        x[v] ^= 1;
        let mut trial_rng = ChaCha8Rng::seed_from_u64(5000 + t);
        if let Ok(sol) = isf(&model, &x, 20, &mut trial_rng) {
            assert!(sol.evaluation.feasible);
            repaired += 1;
        }
    }
    assert!(
        repaired * 100 >= trials * 95,
        "only {repaired}/{trials} perturbations repaired"
    );

    // Improvement: objective never increases across chained passes.
    let mut current = base;
    let mut improve_rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let next = isi(&model, &current.x, 30, 0.3, &mut improve_rng).unwrap();
        assert!(
            next.evaluation.objective <= current.evaluation.objective + 1e-12,
            "local improvement increased the objective"
        );
        current = next;
    }
    println!(
        "PASS feasibility suite: 100/100 penalty-zero generations, {repaired}/{trials} repairs, non-increasing improvement"
    );
}

// ---------------------------------------------------------------------------
// 3. Model equivalence: dual-path evaluation and spin transform
// ---------------------------------------------------------------------------

#[test]
fn model_equivalence_dual_path_and_ising() {
    let model = mid_model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x: Vec<u8> = (0..model.num_vars()).map(|_| rng.random_range(0..2)).collect();
        let eval = evaluate(&model, &x).unwrap();
        let gap = (eval.objective - model.matrix_value(&x)).abs();
        worst = worst.max(gap);
        assert!(gap <= 1e-9, "dual-path gap {gap}");
    }

    let small = oracle_model(0);
    let n = small.num_vars();
    assert!(n <= 14);
    let ising = small.to_ising();
    for idx in 0..(1usize << n) {
        let x: Vec<u8> = (0..n).map(|q| ((idx >> q) & 1) as u8).collect();
        let q_val = small.matrix_value(&x);
        let i_val = ising.energy(&bits_to_spins(&x)) + ising.offset;
        assert!((q_val - i_val).abs() <= 1e-9, "spin transform gap at {idx}");
    }
    println!(
        "PASS model equivalence: dual-path worst gap {worst:.2e} over 1000 x, spin identity exhaustive on {n} vars"
    );
}

// ---------------------------------------------------------------------------
// 4. Route search vs simple-path enumeration
// ---------------------------------------------------------------------------

fn all_path_costs(
    instance: &ProblemInstance,
    part: usize,
    w: [f64; 3],
    d: &[f64; 4],
) -> HashMap<(usize, usize), f64> {
    let n_nodes = instance.num_nodes();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes];
    for &m in &instance.methods_of_part[part] {
        let e = &instance.transport[m];
        adj[e.from].push((e.to, m));
    }
    let mut best: HashMap<(usize, usize), f64> = HashMap::new();
    for start in 0..instance.sites.len() {
        // Depth-first enumeration of every simple path from this site.
        let mut stack = vec![(start, vec![false; n_nodes], 0.0f64)];
        stack[0].1[start] = true;
        best.insert((start, start), 0.0);
        while let Some((node, visited, cost)) = stack.pop() {
            for &(to, m) in &adj[node] {
                if visited[to] {
                    continue;
                }
                let next_cost = cost + edge_cost(instance, m, w, d);
                let entry = best.entry((start, to)).or_insert(f64::INFINITY);
                if next_cost < *entry {
                    *entry = next_cost;
                }
                let mut v = visited.clone();
                v[to] = true;
                stack.push((to, v, next_cost));
            }
        }
    }
    best
}

#[test]
fn route_search_matches_path_enumeration() {
    let w = Weights::new([0.25; 4]).unwrap().transport();
    let mut graphs = 0;
    let mut checked = 0;
    for seed in 0..50u64 {
        let params = GeneratorParams {
            n_parts: 3,
            n_sites: 3 + (seed % 4) as usize,
            n_suppliers: 2,
            n_warehouses: (seed % 3) as usize,
            n_regions: 2,
            edge_density: 0.4 + 0.15 * (seed % 4) as f64,
            alpha: 0.8,
            seed: 100 + seed,
        };
        let instance = generate_synthetic(&params).unwrap();
        assert!(instance.num_nodes() <= 8);
        graphs += 1;
        let d = rescale_factors(&instance);
        for part in 0..instance.num_parts() {
            let routes = optimal_routes(&instance, part, w, &d);
            let brute = all_path_costs(&instance, part, w, &d);
            for (&(from, to), entry) in &routes {
                let found: f64 = entry
                    .route
                    .iter()
                    .fold(0.0, |acc, &m| acc + edge_cost(&instance, m, w, &d));
                let oracle = brute
                    .get(&(from, to))
                    .unwrap_or_else(|| panic!("route ({from},{to}) unreachable by enumeration"));
                assert!(
                    found == *oracle,
                    "part {part} ({from},{to}): {found} vs {oracle}"
                );
                checked += 1;
            }
            // Site pairs reachable by enumeration must be in the table too.
            for (&(from, to), _) in &brute {
                if to < instance.sites.len() {
                    assert!(routes.contains_key(&(from, to)), "missing route ({from},{to})");
                }
            }
        }
    }
    println!("PASS route search: {checked} routes exact across {graphs} graphs");
}

// ---------------------------------------------------------------------------
// 5. Belief propagation exact on trees
// ---------------------------------------------------------------------------

#[test]
fn tree_bp_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut hits = 0;
    for _ in 0..25 {
        let n = 10;
        let mut q = SparseQubo::new(n);
        for i in 0..n {
            q.add(i, i, rng.random_range(-1.0..1.0));
        }
        for i in 1..n {
            let parent = rng.random_range(0..i);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            q.add(parent, i, sign * rng.random_range(0.5..2.0));
        }
        let (_, opt) = brute_force(&q).unwrap();
        let params = IbpParams {
            beta: 20.0,
            sweeps: 100,
            seed: rng.random(),
            ..IbpParams::default()
        };
        let (x, _) = ibp_solve(&q, &params, &vec![0u8; n]).unwrap();
        if (q.value(&x) - opt).abs() <= 1e-9 {
            hits += 1;
        }
    }
    assert_eq!(hits, 25, "tree ground state found on {hits}/25");
    println!("PASS tree belief propagation: 25/25 exact ground states at beta 20");
}

// ---------------------------------------------------------------------------
// 6. QAOA invariants: sector leakage and the depth-1 schedule
// ---------------------------------------------------------------------------

#[test]
fn qaoa_sector_leakage_and_schedule() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let n = rng.random_range(6..=12);
        let mut q = SparseQubo::new(n);
        for i in 0..n {
            for j in i..n {
                if i == j || rng.random::<f64>() < 0.4 {
                    q.add(i, j, rng.random_range(-2.0..2.0));
                }
            }
        }
        // Partition a prefix into one-hot groups of size 2..4.
        let mut groups = Vec::new();
        let mut next = 0;
        while next + 2 <= n.min(next + 4) && next < n - 1 {
            let size = rng.random_range(2..=4).min(n - next);
            if size < 2 {
                break;
            }
            groups.push((next..next + size).collect::<Vec<_>>());
            next += size;
            if groups.len() == 2 {
                break;
            }
        }
        let params = QaoaParams {
            depth: 1 + (trial % 3),
            shots: 64,
            seed: trial as u64,
        };
        let leaked = qaoa_leakage(&q, &groups, &params).unwrap();
        worst = worst.max(leaked);
        assert!(leaked <= 1e-10, "leakage {leaked} on trial {trial}");
    }
    assert_eq!(qaoa_angles(1), vec![(0.5, 0.5)]);
    println!("PASS QAOA invariants: worst leakage {worst:.2e} over 20 sub-problems, depth-1 schedule (1/2, 1/2)");
}

// ---------------------------------------------------------------------------
// 7. Hyperparameter smoother convergence on the quadratic benchmark
// ---------------------------------------------------------------------------

#[test]
fn smoother_shrinks_quadratic_distance() {
    let target = [3.0, -2.0, 5.0];
    let specs = vec![
        ParamSpec::new("a", -10.0, 10.0, false).unwrap(),
        ParamSpec::new("b", -10.0, 10.0, false).unwrap(),
        ParamSpec::new("c", -10.0, 10.0, false).unwrap(),
    ];
    let dist = |c: &[f64]| -> f64 {
        c.iter()
            .zip(&target)
            .map(|(x, t)| (x - t) * (x - t))
            .sum::<f64>()
            .sqrt()
    };
    let mut successes = 0;
    for seed in 0..20u64 {
        let mut state = DasState::new(specs.clone(), 8, seed).unwrap();
        let d0 = dist(&state.center());
        let mut best = d0;
        for _ in 0..200 {
            let samples = das_sample(&state).unwrap();
            let costs: Vec<f64> = samples
                .iter()
                .map(|s| s.iter().zip(&target).map(|(x, t)| (x - t) * (x - t)).sum())
                .collect();
            state = das_update(&state, &samples, &costs).unwrap();
            best = best.min(dist(&state.center()));
        }
        if best <= d0 / 10.0 {
            successes += 1;
        }
    }
    assert!(successes >= 18, "ten-fold shrink on {successes}/20 seeds");
    println!("PASS smoother convergence: ten-fold shrink on {successes}/20 seeds within 200 steps");
}

// ---------------------------------------------------------------------------
// 8. Hypervolume: closed form and Monte Carlo agreement
// ---------------------------------------------------------------------------

#[test]
fn hypervolume_exact_and_monte_carlo() {
    let single = hypervolume(&[[1.0, 1.0, 1.0, 1.0]], &DEFAULT_REFERENCE);
    assert_eq!(single.value, 126.0);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_rel = 0.0f64;
    for _ in 0..2 {
        let points: Vec<[f64; 4]> = (0..20)
            .map(|_| {
                [
                    rng.random_range(0.3..2.7),
                    rng.random_range(0.3..4.5),
                    rng.random_range(0.3..4.0),
                    rng.random_range(0.3..5.0),
                ]
            })
            .collect();
        let exact = hypervolume(&points, &DEFAULT_REFERENCE).value;
        let cell: f64 = DEFAULT_REFERENCE.iter().product();
        let samples = 10_000_000usize;
        let mut hits = 0usize;
        for _ in 0..samples {
            let u: [f64; 4] = std::array::from_fn(|k| rng.random_range(0.0..DEFAULT_REFERENCE[k]));
            if points
                .iter()
                .any(|p| p.iter().zip(&u).all(|(x, y)| x <= y))
            {
                hits += 1;
            }
        }
        let mc = cell * hits as f64 / samples as f64;
        let rel = (mc - exact).abs() / exact;
        worst_rel = worst_rel.max(rel);
        assert!(rel < 0.01, "Monte Carlo {mc} vs exact {exact} ({rel:.4})");
    }
    println!(
        "PASS hypervolume: single point 126.0 exact, Monte Carlo within {:.3}% on 20-point sets",
        100.0 * worst_rel
    );
}

// ---------------------------------------------------------------------------
// 9. Weight-grid sweep: completion, front size, reproducibility
// ---------------------------------------------------------------------------

#[test]
fn weight_grid_sweep_reproduces_byte_identically() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec {
        instance: InstanceSource::Generate {
            params: GeneratorParams {
                n_parts: 20,
                n_sites: 6,
                n_suppliers: 4,
                n_warehouses: 2,
                n_regions: 3,
                edge_density: 0.5,
                alpha: 0.75,
                seed: 7,
            },
        },
        mode: Mode::WeightGrid { resolution: 0.5 },
        solver: SolverSpec::Iqts {
            m: 4,
            n: 12,
            kappa: 2,
            sub_solver: SubSolverSpec::BruteForce,
        },
        lambda: [2.0; 6],
        r: 10,
        r_bar: 5,
        reference: DEFAULT_REFERENCE,
        out_dir: dir_a.path().to_string_lossy().into_owned(),
        seed: 42,
    };
    let outcome = run_experiment(&spec).unwrap();
    assert_eq!(outcome.rows, 10, "grid at 0.5 spacing has 10 compositions");
    assert!(
        outcome.front.len() >= 3,
        "front has only {} points",
        outcome.front.len()
    );

    run_from_manifest(&dir_a.path().join("manifest.json"), Some(dir_b.path())).unwrap();
    // Wall-clock times are the only permitted difference between re-runs.
    let strip = |p: &Path| -> String {
        fs::read_to_string(p.join("results.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        strip(dir_a.path()),
        strip(dir_b.path()),
        "re-run from manifest diverged"
    );
    println!(
        "PASS sweep reproduction: 10 rows, {} non-dominated points, manifest re-run identical",
        outcome.front.len()
    );
}
