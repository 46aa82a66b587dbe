//! The three structure-aware heuristics: randomized feasible-solution
//! generation (isg), repair of infeasible candidates (isf), and local
//! improvement of feasible solutions (isi).
//!
//! All three work on a partial assignment of (part, source) slots to reduced
//! options, with integer workshare accumulators in P_i * D̄^a_i units. They
//! are pure functions of (model, input, rng seed).

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::qubo::{
    ancilla_fill, check_assignment, decode, encode, evaluate, reduced_regions, reduced_sites,
    Assignment, QuboModel, Solution,
};
use crate::{Error, Result};

/// Partial assignment plus derived workshare accumulators.
struct Working<'m> {
    model: &'m QuboModel,
    /// chosen[part][source] = position into the part's reduced option list.
    /// Aliased parts only use source 0; source 1 mirrors it.
    chosen: Vec<[Option<usize>; 2]>,
    site_units: Vec<i64>,
    supplier_units: Vec<i64>,
    /// Distinct sites / regions per part, cached.
    sites_g: Vec<Vec<usize>>,
    regions_g: Vec<Vec<usize>>,
}

impl<'m> Working<'m> {
    fn empty(model: &'m QuboModel) -> Self {
        let reduced = &model.reduced;
        let inst = &reduced.instance;
        let n = inst.num_parts();
        let mut w = Working {
            model,
            chosen: vec![[None; 2]; n],
            site_units: vec![0; inst.sites.len()],
            supplier_units: vec![0; inst.suppliers.len()],
            sites_g: (0..n).map(|i| reduced_sites(reduced, i)).collect(),
            regions_g: (0..n).map(|i| reduced_regions(reduced, i)).collect(),
        };
        // Forced parts are permanently assigned to their only option.
        for i in 0..n {
            if model.layout.forced[i] {
                w.assign(i, 0, 0);
            }
        }
        w
    }

    fn n_sources(&self, part: usize) -> usize {
        self.model.layout.n_sources[part]
    }

    fn is_forced(&self, part: usize) -> bool {
        self.model.layout.forced[part]
    }

    /// Workshare units contributed by a slot; aliased slots carry both
    /// source shares on the single assignment.
    fn slot_units(&self, part: usize, source: usize) -> i64 {
        let r = &self.model.rational;
        if self.n_sources(part) == 1 {
            r.p[part] * r.r_bar
        } else {
            r.p[part] * r.share_units(part, source)
        }
    }

    fn option_site(&self, part: usize, pos: usize) -> usize {
        let opt = self.model.reduced.g[part][pos];
        self.model.reduced.instance.feasible[opt].site
    }

    fn option_supplier(&self, part: usize, pos: usize) -> usize {
        let opt = self.model.reduced.g[part][pos];
        self.model.reduced.instance.feasible[opt].supplier
    }

    fn assign(&mut self, part: usize, source: usize, pos: usize) {
        debug_assert!(self.chosen[part][source].is_none());
        self.chosen[part][source] = Some(pos);
        let units = self.slot_units(part, source);
        let (k, u) = (self.option_site(part, pos), self.option_supplier(part, pos));
        self.site_units[k] += units;
        self.supplier_units[u] += units;
    }

    fn unassign(&mut self, part: usize, source: usize) {
        if let Some(pos) = self.chosen[part][source].take() {
            let units = self.slot_units(part, source);
            let (k, u) = (self.option_site(part, pos), self.option_supplier(part, pos));
            self.site_units[k] -= units;
            self.supplier_units[u] -= units;
        }
    }

    /// Sites currently assigned to a part, over both effective sources.
    fn assigned_sites(&self, part: usize) -> Vec<usize> {
        (0..self.n_sources(part))
            .filter_map(|a| self.chosen[part][a].map(|pos| self.option_site(part, pos)))
            .collect()
    }

    /// Checks a candidate slot against distinctness, connectivity to the
    /// already-assigned neighbors, and upper workshare headroom.
    fn option_ok(&self, part: usize, source: usize, pos: usize) -> bool {
        let reduced = &self.model.reduced;
        let inst = &reduced.instance;
        let k = self.option_site(part, pos);

        // Distinct site/region versus the other source of the same part.
        if self.n_sources(part) == 2 {
            let other = 1 - source;
            if let Some(other_pos) = self.chosen[part][other] {
                let other_site = self.option_site(part, other_pos);
                if self.sites_g[part].len() >= 2 && other_site == k {
                    return false;
                }
                if self.regions_g[part].len() >= 2
                    && inst.sites[other_site].region == inst.sites[k].region
                {
                    return false;
                }
            }
        }

        // Routes to the parent and from the children, for every assigned
        // source of the neighbor.
        if let Some(j) = inst.parts[part].parent {
            for &l in &self.assigned_sites(j) {
                if !reduced.reachable(part, k, l) {
                    return false;
                }
            }
        }
        for &c in &inst.children[part] {
            for &s in &self.assigned_sites(c) {
                if !reduced.reachable(c, s, k) {
                    return false;
                }
            }
        }

        // Optimistic workshare: only the upper bounds can be checked before
        // the assignment is complete.
        let units = self.slot_units(part, source);
        let scale = self.model.rational.r * self.model.rational.r_bar;
        let site = &inst.sites[k];
        if self.site_units[k] + units > site.ws_max as i64 * scale {
            return false;
        }
        let u = self.option_supplier(part, pos);
        if self.supplier_units[u] + units > inst.suppliers[u].ws_max as i64 * scale {
            return false;
        }
        true
    }

    fn complete(&self) -> bool {
        (0..self.chosen.len()).all(|i| (0..self.n_sources(i)).all(|a| self.chosen[i][a].is_some()))
    }

    fn to_assignment(&self) -> Option<Assignment> {
        let mut assignment = Vec::with_capacity(self.chosen.len());
        for i in 0..self.chosen.len() {
            let primary = self.chosen[i][0]?;
            let secondary = if self.n_sources(i) == 1 {
                primary
            } else {
                self.chosen[i][1]?
            };
            assignment.push([primary, secondary]);
        }
        Some(assignment)
    }

    fn finish(&self) -> Result<Solution> {
        let assignment = self
            .to_assignment()
            .ok_or_else(|| Error::Internal("finish on incomplete assignment".into()))?;
        solution_from_assignment(self.model, &assignment)
    }
}

/// Encodes, fills ancillas and evaluates a complete assignment.
pub fn solution_from_assignment(model: &QuboModel, assignment: &Assignment) -> Result<Solution> {
    let mut x = encode(model, assignment)?;
    ancilla_fill(model, &mut x)?;
    let evaluation = evaluate(model, &x)?;
    Ok(Solution { x, evaluation })
}

// ---------------------------------------------------------------------------
// ISG
// ---------------------------------------------------------------------------

/// Generates a random feasible solution: parts are drawn from the lowest
/// still-unassigned PBS level, each source assigned uniformly among the
/// options that keep the partial assignment consistent. Dead ends restart
/// from scratch.
pub fn isg<R: Rng>(model: &QuboModel, rng: &mut R, max_restarts: usize) -> Result<Solution> {
    let inst = &model.reduced.instance;
    let n = inst.num_parts();

    'attempt: for _ in 0..=max_restarts {
        let mut w = Working::empty(model);
        let mut unassigned: Vec<usize> = (0..n).filter(|&i| !w.is_forced(i)).collect();
        while !unassigned.is_empty() {
            let lowest = unassigned.iter().map(|&i| inst.levels[i]).min().unwrap();
            let pool: Vec<usize> = unassigned
                .iter()
                .copied()
                .filter(|&i| inst.levels[i] == lowest)
                .collect();
            let part = *pool.choose(rng).unwrap();
            for a in 0..w.n_sources(part) {
                let feasible: Vec<usize> = (0..model.reduced.g[part].len())
                    .filter(|&pos| w.option_ok(part, a, pos))
                    .collect();
                match feasible.choose(rng) {
                    Some(&pos) => w.assign(part, a, pos),
                    None => continue 'attempt,
                }
            }
            unassigned.retain(|&i| i != part);
        }
        // Lower workshare bounds were only handled optimistically; verify the
        // full assignment before returning.
        let assignment = w.to_assignment().unwrap();
        if check_assignment(&model.reduced, &model.rational, &assignment).ok {
            return w.finish();
        }
    }
    Err(Error::Generation(format!(
        "no feasible solution found within {max_restarts} restarts"
    )))
}

// ---------------------------------------------------------------------------
// ISF
// ---------------------------------------------------------------------------

/// Projects a candidate x back into the feasible domain: unassign from
/// over-assigned sites/suppliers, then reassign unassigned or wrongfully
/// assigned parts in decreasing PBS level order, preferring under-assigned
/// entities. Gives up when the iteration budget runs out.
pub fn isf<R: Rng>(model: &QuboModel, x: &[u8], budget: usize, rng: &mut R) -> Result<Solution> {
    if x.len() != model.num_vars() {
        return Err(Error::Contract("solution length mismatch".into()));
    }
    let inst = &model.reduced.instance;
    let n = inst.num_parts();
    let scale = model.rational.r * model.rational.r_bar;

    // Initial slots from x: a slot keeps its value when exactly one option is
    // set; multiply-set groups keep one uniformly at random.
    let mut w = Working::empty(model);
    for i in 0..n {
        if w.is_forced(i) {
            continue;
        }
        for a in 0..w.n_sources(i) {
            let active: Vec<usize> = model.layout.assign[i][a]
                .iter()
                .enumerate()
                .filter(|&(_, v)| v.value(x) != 0)
                .map(|(pos, _)| pos)
                .collect();
            match active.len() {
                1 => w.assign(i, a, active[0]),
                0 => {}
                _ => w.assign(i, a, *active.choose(rng).unwrap()),
            }
        }
    }

    let mut by_level: Vec<usize> = (0..n).filter(|&i| !w.is_forced(i)).collect();
    by_level.sort_by_key(|&i| std::cmp::Reverse(inst.levels[i]));

    for _ in 0..budget {
        // Unassign from over-assigned entities, uniformly among contributors.
        loop {
            let mut over: Vec<(usize, usize)> = Vec::new();
            for i in 0..n {
                if w.is_forced(i) {
                    continue;
                }
                for a in 0..w.n_sources(i) {
                    if let Some(pos) = w.chosen[i][a] {
                        let k = w.option_site(i, pos);
                        let u = w.option_supplier(i, pos);
                        let site_over =
                            w.site_units[k] > inst.sites[k].ws_max as i64 * scale;
                        let sup_over =
                            w.supplier_units[u] > inst.suppliers[u].ws_max as i64 * scale;
                        if site_over || sup_over {
                            over.push((i, a));
                        }
                    }
                }
            }
            match over.choose(rng) {
                Some(&(i, a)) => w.unassign(i, a),
                None => break,
            }
        }

        // Reassign wrongful or missing slots, leaves first.
        for &i in &by_level {
            for a in 0..w.n_sources(i) {
                let wrongful = match w.chosen[i][a] {
                    None => true,
                    Some(pos) => {
                        w.unassign(i, a);
                        let ok = w.option_ok(i, a, pos);
                        if ok {
                            w.assign(i, a, pos);
                        }
                        !ok
                    }
                };
                if !wrongful {
                    continue;
                }
                let candidates: Vec<usize> = (0..model.reduced.g[i].len())
                    .filter(|&pos| w.option_ok(i, a, pos))
                    .collect();
                if candidates.is_empty() {
                    continue;
                }
                // Prefer options landing on under-assigned entities.
                let under: Vec<usize> = candidates
                    .iter()
                    .copied()
                    .filter(|&pos| {
                        let k = w.option_site(i, pos);
                        let u = w.option_supplier(i, pos);
                        w.site_units[k] < inst.sites[k].ws_min as i64 * scale
                            || w.supplier_units[u] < inst.suppliers[u].ws_min as i64 * scale
                    })
                    .collect();
                let pool = if under.is_empty() { &candidates } else { &under };
                w.assign(i, a, *pool.choose(rng).unwrap());
            }
        }

        if w.complete() {
            let assignment = w.to_assignment().unwrap();
            if check_assignment(&model.reduced, &model.rational, &assignment).ok {
                return w.finish();
            }
        }
    }
    Err(Error::Solver("repair budget exhausted".into()))
}

// ---------------------------------------------------------------------------
// ISI
// ---------------------------------------------------------------------------

/// Improves a feasible solution in place: pick a random part, enumerate its
/// feasible (primary, secondary) combinations in random order, and accept
/// strict improvements. After an accepted move, exploration of the remaining
/// combinations stops with probability `stop_prob`.
pub fn isi<R: Rng>(
    model: &QuboModel,
    x: &[u8],
    iterations: usize,
    stop_prob: f64,
    rng: &mut R,
) -> Result<Solution> {
    let assignment = decode(model, x)
        .ok_or_else(|| Error::Contract("isi requires a one-hot-satisfying input".into()))?;
    if !check_assignment(&model.reduced, &model.rational, &assignment).ok {
        return Err(Error::Contract("isi requires a feasible input".into()));
    }
    let inst = &model.reduced.instance;
    let n = inst.num_parts();

    let mut w = Working::empty(model);
    for i in 0..n {
        if w.is_forced(i) {
            continue;
        }
        for a in 0..w.n_sources(i) {
            w.assign(i, a, assignment[i][a]);
        }
    }
    let mut current = w.finish()?;

    let movable: Vec<usize> = (0..n)
        .filter(|&i| !w.is_forced(i) && model.reduced.g[i].len() > 1)
        .collect();
    if movable.is_empty() {
        return Ok(current);
    }

    for _ in 0..iterations {
        let part = *movable.choose(rng).unwrap();
        let g_len = model.reduced.g[part].len();
        let sources = w.n_sources(part);

        // Candidate (primary, secondary) combinations; aliased parts only
        // vary the primary.
        let mut combos: Vec<[usize; 2]> = Vec::new();
        for p1 in 0..g_len {
            if sources == 1 {
                combos.push([p1, p1]);
            } else {
                for p2 in 0..g_len {
                    combos.push([p1, p2]);
                }
            }
        }
        combos.shuffle(rng);

        for combo in combos {
            let previous: Vec<usize> =
                (0..sources).map(|a| w.chosen[part][a].unwrap()).collect();
            if (0..sources).all(|a| previous[a] == combo[a]) {
                continue;
            }
            for a in 0..sources {
                w.unassign(part, a);
            }
            let mut ok = true;
            for a in 0..sources {
                if w.option_ok(part, a, combo[a]) {
                    w.assign(part, a, combo[a]);
                } else {
                    ok = false;
                    for b in 0..a {
                        w.unassign(part, b);
                    }
                    break;
                }
            }
            if !ok {
                for (a, &pos) in previous.iter().enumerate() {
                    w.assign(part, a, pos);
                }
                continue;
            }
            let assignment = w.to_assignment().unwrap();
            if !check_assignment(&model.reduced, &model.rational, &assignment).ok {
                for a in 0..sources {
                    w.unassign(part, a);
                }
                for (a, &pos) in previous.iter().enumerate() {
                    w.assign(part, a, pos);
                }
                continue;
            }
            let candidate = solution_from_assignment(model, &assignment)?;
            if candidate.evaluation.objective < current.evaluation.objective {
                current = candidate;
                if rng.random::<f64>() < stop_prob {
                    break;
                }
            } else {
                for a in 0..sources {
                    w.unassign(part, a);
                }
                for (a, &pos) in previous.iter().enumerate() {
                    w.assign(part, a, pos);
                }
            }
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_synthetic, load_instance_from, GeneratorParams};
    use crate::preprocess::ReducedInstance;
    use crate::qubo::{compile, CompileOptions, Multipliers, Weights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn model_from_params(params: &GeneratorParams) -> QuboModel {
        let inst = Arc::new(generate_synthetic(params).unwrap());
        let weights = Weights::new([0.25; 4]).unwrap();
        let reduced = Arc::new(ReducedInstance::build(inst, weights.transport()).unwrap());
        compile(
            reduced,
            weights,
            Multipliers::uniform(2.0).unwrap(),
            CompileOptions::default(),
        )
        .unwrap()
    }

    fn seed42_model() -> QuboModel {
        model_from_params(&GeneratorParams {
            n_parts: 8,
            n_sites: 4,
            n_suppliers: 3,
            n_warehouses: 2,
            n_regions: 2,
            edge_density: 0.5,
            alpha: 0.8,
            seed: 42,
        })
    }

    #[test]
    fn isg_unique_assignment_for_single_option_instance() {
        let model = model_from_params(&GeneratorParams {
            n_parts: 3,
            n_sites: 1,
            n_suppliers: 1,
            n_warehouses: 0,
            n_regions: 1,
            edge_density: 0.9,
            alpha: 1.0,
            seed: 5,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sol = isg(&model, &mut rng, 10).unwrap();
        assert!(sol.evaluation.feasible);
        // One site, one supplier: every part has the single aliased option.
        let assignment = decode(&model, &sol.x).unwrap();
        for chosen in assignment {
            assert_eq!(chosen, [0, 0]);
        }
    }

    #[test]
    fn isg_outputs_are_feasible_across_seeds() {
        let model = seed42_model();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sol = isg(&model, &mut rng, 100).unwrap();
            assert!(sol.evaluation.feasible, "seed {seed}");
            let assignment = decode(&model, &sol.x).unwrap();
            assert!(check_assignment(&model.reduced, &model.rational, &assignment).ok);
        }
    }

    #[test]
    fn isg_fails_on_impossible_windows() {
        // All site windows forced to zero exclude every assignment.
        let params = GeneratorParams {
            n_parts: 4,
            n_sites: 2,
            n_suppliers: 2,
            n_warehouses: 1,
            n_regions: 2,
            edge_density: 0.8,
            alpha: 0.8,
            seed: 9,
        };
        let inst = generate_synthetic(&params).unwrap();
        let mut buf = Vec::new();
        inst.save_to(&mut buf).unwrap();
        let json = String::from_utf8(buf)
            .unwrap()
            .replace("\"ws_max\": 100", "\"ws_max\": 0")
            .replace("\"ws_max\": 90", "\"ws_max\": 0")
            .replace("\"ws_max\": 80", "\"ws_max\": 0")
            .replace("\"ws_max\": 70", "\"ws_max\": 0")
            .replace("\"ws_max\": 60", "\"ws_max\": 0");
        let inst = Arc::new(load_instance_from(json.as_bytes()).unwrap());
        let weights = Weights::new([0.25; 4]).unwrap();
        let reduced = Arc::new(ReducedInstance::build(inst, weights.transport()).unwrap());
        let model = compile(
            reduced,
            weights,
            Multipliers::uniform(2.0).unwrap(),
            CompileOptions::default(),
        );
        let model = match model {
            Ok(m) => m,
            // Zero windows may already be rejected at compile time.
            Err(_) => return,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(isg(&model, &mut rng, 20).is_err());
    }

    #[test]
    fn isf_returns_feasible_input_unchanged() {
        let model = seed42_model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sol = isg(&model, &mut rng, 100).unwrap();
        let fixed = isf(&model, &sol.x, 20, &mut rng).unwrap();
        assert_eq!(fixed.x, sol.x);
        assert_eq!(fixed.evaluation.objective, sol.evaluation.objective);
    }

    #[test]
    fn isf_repairs_single_unassignment() {
        let model = seed42_model();
        let mut repaired = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sol = isg(&model, &mut rng, 100).unwrap();
            // Clear one part's primary group.
            let group = model
                .layout
                .groups
                .iter()
                .find(|g| g.source == 0 && !g.vars.is_empty())
                .unwrap();
            let mut x = sol.x.clone();
            for &v in &group.vars {
                x[v] = 0;
            }
            if let Ok(fixed) = isf(&model, &x, 10, &mut rng) {
                assert!(fixed.evaluation.feasible);
                repaired += 1;
            }
        }
        assert!(repaired >= 19, "only {repaired}/20 single violations repaired");
    }

    #[test]
    fn isf_idempotent_on_feasible() {
        let model = seed42_model();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sol = isg(&model, &mut rng, 100).unwrap();
        let once = isf(&model, &sol.x, 20, &mut rng).unwrap();
        let twice = isf(&model, &once.x, 20, &mut rng).unwrap();
        assert_eq!(once.x, twice.x);
    }

    #[test]
    fn isf_never_reports_infeasible_success() {
        let model = seed42_model();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = vec![1u8; model.num_vars()];
        match isf(&model, &x, 20, &mut rng) {
            Ok(sol) => assert!(sol.evaluation.feasible),
            Err(_) => {}
        }
    }

    #[test]
    fn isi_zero_iterations_is_identity() {
        let model = seed42_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sol = isg(&model, &mut rng, 100).unwrap();
        let out = isi(&model, &sol.x, 0, 0.5, &mut rng).unwrap();
        assert_eq!(out.x, sol.x);
    }

    #[test]
    fn isi_no_moves_without_choices() {
        let model = model_from_params(&GeneratorParams {
            n_parts: 3,
            n_sites: 1,
            n_suppliers: 1,
            n_warehouses: 0,
            n_regions: 1,
            edge_density: 0.9,
            alpha: 1.0,
            seed: 5,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sol = isg(&model, &mut rng, 10).unwrap();
        let out = isi(&model, &sol.x, 50, 0.5, &mut rng).unwrap();
        assert_eq!(out.x, sol.x);
    }

    #[test]
    fn isi_rejects_infeasible_input() {
        let model = seed42_model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![0u8; model.num_vars()];
        assert!(isi(&model, &x, 10, 0.5, &mut rng).is_err());
    }

    #[test]
    fn isi_never_worsens() {
        let model = seed42_model();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sol = isg(&model, &mut rng, 100).unwrap();
            let out = isi(&model, &sol.x, 30, 0.5, &mut rng).unwrap();
            assert!(out.evaluation.feasible);
            assert!(
                out.evaluation.objective <= sol.evaluation.objective + 1e-12,
                "seed {seed}: {} -> {}",
                sol.evaluation.objective,
                out.evaluation.objective
            );
        }
    }

    #[test]
    fn isi_reaches_exhaustive_optimum_on_tiny_instance() {
        // Windows stay out of the QUBO so the model is small enough for
        // exhaustive enumeration; they are still enforced by the checker.
        let inst = Arc::new(
            generate_synthetic(&GeneratorParams {
                n_parts: 3,
                n_sites: 2,
                n_suppliers: 1,
                n_warehouses: 0,
                n_regions: 2,
                edge_density: 1.0,
                alpha: 0.8,
                seed: 21,
            })
            .unwrap(),
        );
        let weights = Weights::new([0.25; 4]).unwrap();
        let reduced = Arc::new(ReducedInstance::build(inst, weights.transport()).unwrap());
        let model = compile(
            reduced,
            weights,
            Multipliers::new([2.0, 2.0, 2.0, 2.0, 0.0, 0.0]).unwrap(),
            CompileOptions::default(),
        )
        .unwrap();
        let n = model.num_vars();
        assert!(n <= 20, "instance too large for enumeration: {n} vars");

        // Exhaustive feasible optimum by objective.
        let mut best: Option<f64> = None;
        for bits in 0..(1u64 << n) {
            let x: Vec<u8> = (0..n).map(|i| ((bits >> i) & 1) as u8).collect();
            let eval = evaluate(&model, &x).unwrap();
            if eval.feasible {
                best = Some(best.map_or(eval.objective, |b: f64| b.min(eval.objective)));
            }
        }
        let best = best.expect("no feasible state in enumeration");

        let mut reached = false;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sol = isg(&model, &mut rng, 100).unwrap();
            let out = isi(&model, &sol.x, 100, 0.5, &mut rng).unwrap();
            if (out.evaluation.objective - best).abs() <= 1e-9 {
                reached = true;
                break;
            }
        }
        assert!(reached, "no ISI run reached the exhaustive optimum {best}");
    }
}
