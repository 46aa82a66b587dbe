//! The two top-level hybrid solvers. IQTS walks the part tree, re-optimizing
//! small sub-problems with a configurable sub-solver and repairing the
//! result. HBS keeps a population of feasible solutions that a portfolio of
//! Ising solvers refines, with per-solver hyperparameters tuned online by
//! the anisotropic smoother on a success/failure cost signal.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::informed::{isf, isg, isi};
use crate::qubo::{bits_to_spins, spins_to_bits, QuboModel, Solution, SparseQubo, VarRef};
use crate::solvers::{
    brute_force, cacm_solve, ibp_solve, qaoa_solve, sa_solve, CacmParams, IbpParams, QaoaParams,
    SaParams, Trace, QAOA_QUBIT_CAP,
};
use crate::tuning::{das_sample, das_update, DasState, ParamSpec, TuningTrace};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Sub-problem construction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SubProblem {
    pub qubo: SparseQubo,
    /// Global variable index per local slot.
    pub vars: Vec<usize>,
    /// Local indices of the one-hot groups fully contained in the selection.
    pub groups: Vec<Vec<usize>>,
}

impl SubProblem {
    /// Writes a local solution back into a full-length assignment.
    pub fn patch(&self, full: &mut [u8], local: &[u8]) {
        for (&g, &v) in self.vars.iter().zip(local) {
            full[g] = v;
        }
    }

    pub fn restrict(&self, full: &[u8]) -> Vec<u8> {
        self.vars.iter().map(|&g| full[g]).collect()
    }
}

/// Restriction of the model to `selection` with every other variable clamped
/// to the incumbent (or to zero with `zero_clamp`): clamped couplings fold
/// into linear terms and the offset, so the restricted energy equals the full
/// energy of the patched assignment.
pub fn build_subproblem(
    model: &QuboModel,
    incumbent: &[u8],
    selection: &[usize],
    zero_clamp: bool,
) -> Result<SubProblem> {
    if selection.is_empty() {
        return Err(Error::Contract("empty sub-problem selection".into()));
    }
    if incumbent.len() != model.num_vars() {
        return Err(Error::Contract("incumbent length mismatch".into()));
    }
    let mut local_of = vec![usize::MAX; model.num_vars()];
    for (l, &g) in selection.iter().enumerate() {
        if g >= model.num_vars() || local_of[g] != usize::MAX {
            return Err(Error::Contract("selection must be distinct in-range variables".into()));
        }
        local_of[g] = l;
    }
    let clamp = |g: usize| -> f64 {
        if zero_clamp {
            0.0
        } else {
            incumbent[g] as f64
        }
    };
    let mut qubo = SparseQubo::new(selection.len());
    qubo.offset = model.matrix.offset;
    for (&(i, j), &c) in &model.matrix.q {
        match (local_of[i], local_of[j]) {
            (li, lj) if li != usize::MAX && lj != usize::MAX => qubo.add(li, lj, c),
            (li, _) if li != usize::MAX => {
                let v = clamp(j);
                if v != 0.0 {
                    qubo.add(li, li, c * v);
                }
            }
            (_, lj) if lj != usize::MAX => {
                let v = clamp(i);
                if v != 0.0 {
                    qubo.add(lj, lj, c * v);
                }
            }
            _ => qubo.offset += c * clamp(i) * clamp(j),
        }
    }
    let groups = model
        .layout
        .groups
        .iter()
        .filter(|g| g.vars.iter().all(|&v| local_of[v] != usize::MAX))
        .map(|g| g.vars.iter().map(|&v| local_of[v]).collect())
        .collect();
    Ok(SubProblem {
        qubo,
        vars: selection.to_vec(),
        groups,
    })
}

// ---------------------------------------------------------------------------
// IQTS
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum SubSolver {
    BruteForce,
    Sa(SaParams),
    Qaoa(QaoaParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IqtsConfig {
    /// Subtree size.
    pub m: usize,
    /// Sub-problem variable budget.
    pub n: usize,
    /// Repetition budget: full passes over all parts.
    pub kappa: usize,
    pub sub_solver: SubSolver,
    pub isf_budget: usize,
    pub isi_iterations: usize,
    pub isi_stop_prob: f64,
    /// Clamp outside variables to zero instead of the incumbent.
    pub zero_clamp: bool,
    pub seed: u64,
}

impl Default for IqtsConfig {
    fn default() -> Self {
        IqtsConfig {
            m: 4,
            n: 15,
            kappa: 50,
            sub_solver: SubSolver::BruteForce,
            isf_budget: 20,
            isi_iterations: 10,
            isi_stop_prob: 0.5,
            zero_clamp: false,
            seed: 0,
        }
    }
}

impl IqtsConfig {
    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.kappa == 0 {
            return Err(Error::Validation(
                "subtree size, variable budget and repetitions must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Random connected subtree of the part tree containing `part`.
fn random_subtree<R: Rng>(model: &QuboModel, part: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let inst = &model.reduced.instance;
    let mut subtree = vec![part];
    let mut chosen: HashSet<usize> = HashSet::from([part]);
    while subtree.len() < m {
        let mut frontier: Vec<usize> = Vec::new();
        for &p in &subtree {
            if let Some(parent) = inst.parts[p].parent {
                if !chosen.contains(&parent) {
                    frontier.push(parent);
                }
            }
            for &c in &inst.children[p] {
                if !chosen.contains(&c) {
                    frontier.push(c);
                }
            }
        }
        frontier.sort_unstable();
        frontier.dedup();
        match frontier.choose(rng) {
            Some(&next) => {
                chosen.insert(next);
                subtree.push(next);
            }
            None => break,
        }
    }
    subtree
}

/// Variable selection inside a subtree: whole one-hot groups of its parts,
/// shuffled, taken while they fit the budget; a truncated group when nothing
/// whole fits.
fn select_variables<R: Rng>(
    model: &QuboModel,
    subtree: &[usize],
    n: usize,
    rng: &mut R,
) -> Vec<usize> {
    let in_subtree: HashSet<usize> = subtree.iter().copied().collect();
    let mut groups: Vec<&Vec<usize>> = model
        .layout
        .groups
        .iter()
        .filter(|g| in_subtree.contains(&g.part))
        .map(|g| &g.vars)
        .collect();
    groups.shuffle(rng);
    let mut selection = Vec::new();
    for vars in &groups {
        if selection.len() + vars.len() <= n {
            selection.extend_from_slice(vars);
        }
    }
    if selection.is_empty() {
        if let Some(vars) = groups.first() {
            selection.extend(vars.iter().take(n));
        }
    }
    selection
}

fn solve_subproblem(
    sub: &SubProblem,
    solver: &SubSolver,
    init: &[u8],
    run_seed: u64,
) -> Result<Vec<u8>> {
    match solver {
        SubSolver::BruteForce => Ok(brute_force(&sub.qubo)?.0),
        SubSolver::Sa(params) => {
            let ising = sub.qubo.to_ising();
            let p = SaParams {
                seed: params.seed ^ run_seed,
                ..*params
            };
            let (s, _) = sa_solve(&ising, &p, &bits_to_spins(init))?;
            Ok(spins_to_bits(&s))
        }
        SubSolver::Qaoa(params) => {
            let p = QaoaParams {
                seed: params.seed ^ run_seed,
                ..*params
            };
            let (x, _) = qaoa_solve(&sub.qubo, &sub.groups, &p)?;
            Ok(x)
        }
    }
}

/// Tree-decomposed refinement: starts from a generated feasible solution and
/// repeatedly re-optimizes per-part subtree sub-problems, repairing and
/// locally improving every candidate; steps that do not improve the
/// incumbent objective are rejected.
pub fn iqts_solve(model: &QuboModel, config: &IqtsConfig) -> Result<(Solution, Trace)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut incumbent = isg(model, &mut rng, 200)?;
    let mut trace = Trace::default();
    let mut step = 0usize;
    push_best(&mut trace, &mut step, incumbent.evaluation.objective);

    let inst = &model.reduced.instance;
    let n_parts = inst.num_parts();
    for cycle in 0..config.kappa {
        // Highest level (deepest parts) first, random order within a level.
        let mut order: Vec<usize> = (0..n_parts).collect();
        order.shuffle(&mut rng);
        order.sort_by_key(|&p| std::cmp::Reverse(inst.levels[p]));
        for (pi, &part) in order.iter().enumerate() {
            let subtree = random_subtree(model, part, config.m, &mut rng);
            let selection = select_variables(model, &subtree, config.n, &mut rng);
            if selection.is_empty() {
                continue;
            }
            let sub = build_subproblem(model, &incumbent.x, &selection, config.zero_clamp)?;
            let init = sub.restrict(&incumbent.x);
            let run_seed = (cycle as u64) << 32 | pi as u64;
            let local = match solve_subproblem(&sub, &config.sub_solver, &init, run_seed) {
                Ok(local) => local,
                Err(_) => {
                    // Sub-solver failure falls back to annealing.
                    trace
                        .flags
                        .push(format!("cycle {cycle} part {part}: sub-solver fell back to SA"));
                    let fallback = SubSolver::Sa(SaParams::default());
                    solve_subproblem(&sub, &fallback, &init, run_seed)?
                }
            };
            let mut candidate_x = incumbent.x.clone();
            sub.patch(&mut candidate_x, &local);

            let repaired = match isf(model, &candidate_x, config.isf_budget, &mut rng) {
                Ok(sol) => sol,
                Err(_) => {
                    push_best(&mut trace, &mut step, incumbent.evaluation.objective);
                    continue;
                }
            };
            let improved = if config.isi_iterations > 0 {
                isi(
                    model,
                    &repaired.x,
                    config.isi_iterations,
                    config.isi_stop_prob,
                    &mut rng,
                )?
            } else {
                repaired
            };
            if improved.evaluation.objective < incumbent.evaluation.objective {
                incumbent = improved;
            }
            push_best(&mut trace, &mut step, incumbent.evaluation.objective);
        }
    }
    Ok((incumbent, trace))
}

fn push_best(trace: &mut Trace, step: &mut usize, objective: f64) {
    let best = trace
        .rows
        .last()
        .map_or(objective, |r| r.best_objective.min(objective));
    trace.rows.push(crate::solvers::TraceRow {
        step: *step,
        objective,
        best_objective: best,
    });
    *step += 1;
}

// ---------------------------------------------------------------------------
// HBS
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Cacm,
    Ibp,
    Qaoa,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Cacm => "cacm",
            SolverKind::Ibp => "ibp",
            SolverKind::Qaoa => "qaoa",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HbsConfig {
    pub enabled: Vec<SolverKind>,
    pub population: usize,
    pub max_iters: usize,
    /// Iterations without improvement before stopping.
    pub window: usize,
    pub isf_budget: usize,
    /// Hyperparameter samples per solver per iteration.
    pub das_r: usize,
    /// Fixed per-refinement budgets (not tuned).
    pub cacm_steps: usize,
    pub ibp_sweeps: usize,
    pub qaoa_shots: usize,
    pub seed: u64,
}

impl Default for HbsConfig {
    fn default() -> Self {
        HbsConfig {
            enabled: vec![SolverKind::Cacm, SolverKind::Ibp],
            population: 4,
            max_iters: 250,
            window: 25,
            isf_budget: 20,
            das_r: 4,
            cacm_steps: 200,
            ibp_sweeps: 10,
            qaoa_shots: 256,
            seed: 0,
        }
    }
}

impl HbsConfig {
    fn validate(&self) -> Result<()> {
        if self.enabled.is_empty() {
            return Err(Error::Validation("enable at least one portfolio solver".into()));
        }
        if self.population == 0 {
            return Err(Error::Validation("population must be at least 1".into()));
        }
        Ok(())
    }
}

/// Tunable hyperparameter space per portfolio solver.
pub fn default_specs(kind: SolverKind) -> Vec<ParamSpec> {
    match kind {
        SolverKind::Cacm => vec![
            ParamSpec::new("beta", 0.05, 10.0, true).unwrap(),
            ParamSpec::new("xi", 0.01, 10.0, true).unwrap(),
            ParamSpec::new("lambda1", 0.1, 5.0, true).unwrap(),
        ],
        SolverKind::Ibp => vec![
            ParamSpec::new("beta", 0.5, 50.0, true).unwrap(),
            ParamSpec::new("damping", 0.0, 0.9, false).unwrap(),
        ],
        SolverKind::Qaoa => vec![ParamSpec::new("depth", 1.0, 4.0, false).unwrap()],
    }
}

fn refine(
    kind: SolverKind,
    model: &QuboModel,
    ising: &crate::qubo::IsingModel,
    theta: &[f64],
    member: &[u8],
    config: &HbsConfig,
    run_seed: u64,
) -> Result<Vec<u8>> {
    match kind {
        SolverKind::Cacm => {
            let params = CacmParams {
                beta: theta[0],
                xi: theta[1],
                lambda1: theta[2],
                steps: config.cacm_steps,
                seed: run_seed,
                ..CacmParams::default()
            };
            let (s, _) = cacm_solve(ising, &params, &bits_to_spins(member))?;
            Ok(spins_to_bits(&s))
        }
        SolverKind::Ibp => {
            let params = IbpParams {
                beta: theta[0],
                damping: theta[1],
                sweeps: config.ibp_sweeps,
                seed: run_seed,
                ..IbpParams::default()
            };
            let (x, _) = ibp_solve(&model.matrix, &params, member)?;
            Ok(x)
        }
        SolverKind::Qaoa => {
            if model.num_vars() > QAOA_QUBIT_CAP {
                return Err(Error::Solver("model exceeds the statevector cap".into()));
            }
            let groups: Vec<Vec<usize>> = model
                .layout
                .groups
                .iter()
                .map(|g| g.vars.clone())
                .collect();
            let params = QaoaParams {
                depth: (theta[0].round() as usize).max(1),
                shots: config.qaoa_shots,
                seed: run_seed,
            };
            let (x, _) = qaoa_solve(&model.matrix, &groups, &params)?;
            Ok(x)
        }
    }
}

#[derive(Debug, Clone)]
pub struct HbsOutput {
    pub solution: Solution,
    pub trace: Trace,
    pub tuning: Vec<(SolverKind, TuningTrace)>,
}

/// Bilevel portfolio search: a population of feasible solutions is refined
/// by every enabled solver each iteration, candidates are repaired and the
/// lowest-energy `population` survive (uniformly sampled among ties). Each
/// solver's hyperparameters follow an online smoothing step on the binary
/// cost "the refinement failed to beat the best energy so far".
pub fn hbs_solve(model: &QuboModel, config: &HbsConfig) -> Result<HbsOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ising = model.to_ising();
    let energy_of = |x: &[u8]| ising.energy(&bits_to_spins(x));

    // Seed population from the feasibility generator, repaired for safety.
    let mut population: Vec<Solution> = Vec::with_capacity(config.population);
    for _ in 0..config.population {
        let seed_sol = isg(model, &mut rng, 200)?;
        let repaired = isf(model, &seed_sol.x, config.isf_budget, &mut rng)?;
        population.push(repaired);
    }
    let mut best = population
        .iter()
        .min_by(|a, b| a.evaluation.objective.total_cmp(&b.evaluation.objective))
        .unwrap()
        .clone();
    let mut h_star = population.iter().map(|s| energy_of(&s.x)).fold(f64::INFINITY, f64::min);

    let mut das: Vec<DasState> = config
        .enabled
        .iter()
        .enumerate()
        .map(|(i, &kind)| DasState::new(default_specs(kind), config.das_r, config.seed ^ (i as u64 + 1)))
        .collect::<Result<_>>()?;
    let mut tuning: Vec<(SolverKind, TuningTrace)> = config
        .enabled
        .iter()
        .map(|&k| (k, TuningTrace::default()))
        .collect();

    let mut trace = Trace::default();
    let mut step = 0usize;
    push_best(&mut trace, &mut step, best.evaluation.objective);
    let mut since_improvement = 0usize;

    for iter in 0..config.max_iters {
        let mut candidates: Vec<(f64, Solution)> = population
            .iter()
            .map(|s| (energy_of(&s.x), s.clone()))
            .collect();
        let mut any_solver_ok = false;

        for (si, &kind) in config.enabled.iter().enumerate() {
            let samples = das_sample(&das[si])?;
            let mut costs = Vec::with_capacity(samples.len());
            for (j, theta) in samples.iter().enumerate() {
                let member = &population[j % population.len()];
                let run_seed = (config.seed ^ 0x5bd1_e995)
                    .wrapping_add((iter as u64) << 24)
                    .wrapping_add((si as u64) << 16)
                    .wrapping_add(j as u64);
                match refine(kind, model, &ising, theta, &member.x, config, run_seed) {
                    Ok(refined) => {
                        any_solver_ok = true;
                        let h = energy_of(&refined);
                        // Heaviside success signal: 1 when the refinement
                        // failed to beat the best energy so far.
                        costs.push(if h >= h_star - 1e-12 { 1.0 } else { 0.0 });
                        if let Ok(repaired) = isf(model, &refined, config.isf_budget, &mut rng) {
                            candidates.push((energy_of(&repaired.x), repaired));
                        }
                    }
                    Err(_) => costs.push(f64::NAN),
                }
            }
            tuning[si].1.record(&das[si], &costs);
            das[si] = das_update(&das[si], &samples, &costs)?;
        }

        if !any_solver_ok {
            trace.flags.push(format!("iteration {iter}: every solver failed; skipped"));
            push_best(&mut trace, &mut step, best.evaluation.objective);
            continue;
        }

        // Merge: keep the `population` lowest energies, uniform among ties
        // at the cutoff.
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Distinct assignments first so the population keeps some diversity;
        // duplicates only pad when there are not enough unique candidates.
        let mut unique: Vec<(f64, Solution)> = Vec::new();
        let mut dupes: Vec<(f64, Solution)> = Vec::new();
        for (e, s) in candidates {
            if unique.iter().any(|(_, u)| u.x == s.x) {
                dupes.push((e, s));
            } else {
                unique.push((e, s));
            }
        }
        let cutoff_pos = config.population.min(unique.len()) - 1;
        let cutoff = unique[cutoff_pos].0;
        let mut survivors: Vec<(f64, Solution)> = Vec::with_capacity(config.population);
        let mut tied: Vec<(f64, Solution)> = Vec::new();
        for (e, s) in unique {
            if e < cutoff - 1e-12 {
                survivors.push((e, s));
            } else if (e - cutoff).abs() <= 1e-12 {
                tied.push((e, s));
            }
        }
        tied.shuffle(&mut rng);
        while survivors.len() < config.population {
            match tied.pop().or_else(|| dupes.pop()) {
                Some(t) => survivors.push(t),
                None => break,
            }
        }
        population = survivors.into_iter().map(|(_, s)| s).collect();

        let iter_best = population
            .iter()
            .min_by(|a, b| a.evaluation.objective.total_cmp(&b.evaluation.objective))
            .unwrap();
        let improved = iter_best.evaluation.objective < best.evaluation.objective - 1e-12;
        if improved {
            best = iter_best.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        h_star = h_star.min(population.iter().map(|s| energy_of(&s.x)).fold(f64::INFINITY, f64::min));
        push_best(&mut trace, &mut step, iter_best.evaluation.objective.max(best.evaluation.objective));
        if since_improvement >= config.window {
            break;
        }
    }

    Ok(HbsOutput {
        solution: best,
        trace,
        tuning,
    })
}

/// Variables that are real indices (not folded constants) of a model.
pub fn assignment_variables(model: &QuboModel) -> Vec<usize> {
    let mut vars = Vec::new();
    for rows in &model.layout.assign {
        for row in rows.iter() {
            for v in row {
                if let VarRef::Index(i) = v {
                    vars.push(*i);
                }
            }
        }
    }
    vars.sort_unstable();
    vars.dedup();
    vars
}
