//! Instance preprocessing: weight-dependent optimal routes between sites via
//! Dijkstra on each part's transport graph, and the weight-independent
//! feasibility reduction that shrinks each part's option set to g_i.
//!
//! Same-site pairs (k, k) are treated as trivially connected by an empty route
//! with zero contributions: a part produced where its parent is assembled
//! needs no transport.

use std::collections::HashMap;
use std::io::Write;
use std::sync::Arc;

use crate::instance::ProblemInstance;
use crate::{Error, Result};

/// Scalarization weights for the three transport KPIs.
pub type Weights3 = [f64; 3];

/// Rescaling factors d_1..d_4 aligning the KPI magnitudes: the maximum
/// single-method contribution for emissions and costs, the maximum
/// contribution times the level mid-range for times, and 100 for workshare.
pub fn rescale_factors(instance: &ProblemInstance) -> [f64; 4] {
    let mut c_hat = [0.0f64; 3];
    for m in &instance.transport {
        for n in 0..3 {
            c_hat[n] = c_hat[n].max(m.c[n]);
        }
    }
    let level_mid = (instance.levels.iter().copied().min().unwrap_or(0)
        + instance.levels.iter().copied().max().unwrap_or(0)) as f64
        / 2.0;
    let guard = |d: f64| if d > 0.0 { d } else { 1.0 };
    [
        guard(c_hat[0]),
        guard(c_hat[1]),
        guard(c_hat[2] * level_mid),
        100.0,
    ]
}

/// Volume-share scaling for emissions/costs, PBS level for time.
pub fn kpi_scaling(instance: &ProblemInstance, method: usize, n: usize) -> f64 {
    let m = &instance.transport[method];
    if n < 2 {
        instance.parts[m.part].volume / m.cargo_volume
    } else {
        instance.levels[m.part] as f64
    }
}

/// Scalarized edge cost of one transport method under weights w̄.
pub fn edge_cost(instance: &ProblemInstance, method: usize, w: Weights3, d: &[f64; 4]) -> f64 {
    let m = &instance.transport[method];
    (0..3)
        .map(|n| w[n] / d[n] * m.c[n] * kpi_scaling(instance, method, n))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteEntry {
    /// Method indices along the path; empty for same-site pairs.
    pub route: Vec<usize>,
    /// Aggregated per-KPI contributions c^{i1..i3}, unweighted by w.
    pub contributions: [f64; 3],
}

/// Best routes for all connected (part, origin site, destination site)
/// triples under a fixed weight vector.
#[derive(Debug, Clone)]
pub struct RouteTable {
    pub weights: Weights3,
    entries: HashMap<(usize, usize, usize), RouteEntry>,
}

impl RouteTable {
    pub fn get(&self, part: usize, from: usize, to: usize) -> Option<&RouteEntry> {
        self.entries.get(&(part, from, to))
    }

    pub fn compute(instance: &ProblemInstance, w: Weights3, d: &[f64; 4]) -> Self {
        let mut entries = HashMap::new();
        for part in 0..instance.num_parts() {
            for ((from, to), entry) in optimal_routes(instance, part, w, d) {
                entries.insert((part, from, to), entry);
            }
        }
        RouteTable { weights: w, entries }
    }

    /// CSV export with columns part,origin,dest,c1,c2,c3,route.
    pub fn write_csv<W: Write>(&self, instance: &ProblemInstance, mut out: W) -> Result<()> {
        writeln!(out, "part,origin,dest,c1,c2,c3,route")?;
        let mut keys: Vec<_> = self.entries.keys().copied().collect();
        keys.sort_unstable();
        for (part, from, to) in keys {
            let e = &self.entries[&(part, from, to)];
            let route = e
                .route
                .iter()
                .map(|&m| instance.transport[m].id.as_str())
                .collect::<Vec<_>>()
                .join(";");
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                instance.parts[part].id,
                instance.sites[from].id,
                instance.sites[to].id,
                e.contributions[0],
                e.contributions[1],
                e.contributions[2],
                route
            )?;
        }
        Ok(())
    }
}

#[derive(Clone)]
struct Label {
    cost: f64,
    hops: usize,
    /// Method ranks along the path, for deterministic tie-breaking.
    key: Vec<u32>,
    path: Vec<usize>,
}

impl Label {
    fn better_than(&self, other: &Label) -> bool {
        match self.cost.total_cmp(&other.cost) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => (self.hops, &self.key) < (other.hops, &other.key),
        }
    }
}

/// Cheapest simple path from every site to every reachable site on one part's
/// transport graph. Ties break on hop count, then on the method-id sequence.
pub fn optimal_routes(
    instance: &ProblemInstance,
    part: usize,
    w: Weights3,
    d: &[f64; 4],
) -> HashMap<(usize, usize), RouteEntry> {
    let n_nodes = instance.num_nodes();
    let n_sites = instance.sites.len();

    // Rank methods by id so the tie-break is independent of input order.
    let mut by_id: Vec<usize> = instance.methods_of_part[part].clone();
    by_id.sort_by(|&a, &b| instance.transport[a].id.cmp(&instance.transport[b].id));
    let mut rank: HashMap<usize, u32> = HashMap::new();
    for (r, &m) in by_id.iter().enumerate() {
        rank.insert(m, r as u32);
    }

    let mut adj = vec![Vec::new(); n_nodes];
    for &m in &instance.methods_of_part[part] {
        let e = &instance.transport[m];
        adj[e.from].push((e.to, m, edge_cost(instance, m, w, d)));
    }
    for edges in &mut adj {
        edges.sort_by_key(|&(_, m, _)| rank[&m]);
    }

    let mut result = HashMap::new();
    for start in 0..n_sites {
        // Label-correcting search; the graphs are small enough that the
        // simple strict-improvement scheme is adequate and exact.
        let mut best: Vec<Option<Label>> = vec![None; n_nodes];
        best[start] = Some(Label {
            cost: 0.0,
            hops: 0,
            key: Vec::new(),
            path: Vec::new(),
        });
        let mut queue: Vec<usize> = vec![start];
        while let Some(node) = queue.pop() {
            let label = best[node].clone().unwrap();
            for &(to, m, cost) in &adj[node] {
                if label.path.contains(&m) {
                    continue;
                }
                let mut key = label.key.clone();
                key.push(rank[&m]);
                let mut path = label.path.clone();
                path.push(m);
                let candidate = Label {
                    cost: label.cost + cost,
                    hops: label.hops + 1,
                    key,
                    path,
                };
                let improves = match &best[to] {
                    None => true,
                    Some(existing) => candidate.better_than(existing),
                };
                if improves {
                    best[to] = Some(candidate);
                    queue.push(to);
                }
            }
        }
        for dest in 0..n_sites {
            if dest == start {
                result.insert(
                    (start, dest),
                    RouteEntry {
                        route: Vec::new(),
                        contributions: [0.0; 3],
                    },
                );
                continue;
            }
            if let Some(label) = &best[dest] {
                let mut contributions = [0.0f64; 3];
                for &m in &label.path {
                    for n in 0..3 {
                        contributions[n] += instance.transport[m].c[n] * kpi_scaling(instance, m, n);
                    }
                }
                result.insert(
                    (start, dest),
                    RouteEntry {
                        route: label.path.clone(),
                        contributions,
                    },
                );
            }
        }
    }
    result
}

/// Site-to-site reachability per part, independent of weights. Same-site
/// pairs are always reachable.
pub fn reachability(instance: &ProblemInstance) -> Vec<Vec<bool>> {
    let n_sites = instance.sites.len();
    let n_nodes = instance.num_nodes();
    let mut reach = Vec::with_capacity(instance.num_parts());
    for part in 0..instance.num_parts() {
        let mut adj = vec![Vec::new(); n_nodes];
        for &m in &instance.methods_of_part[part] {
            let e = &instance.transport[m];
            adj[e.from].push(e.to);
        }
        let mut table = vec![false; n_sites * n_sites];
        for start in 0..n_sites {
            let mut seen = vec![false; n_nodes];
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(node) = stack.pop() {
                for &to in &adj[node] {
                    if !seen[to] {
                        seen[to] = true;
                        stack.push(to);
                    }
                }
            }
            for dest in 0..n_sites {
                table[start * n_sites + dest] = seen[dest];
            }
        }
        reach.push(table);
    }
    reach
}

/// Reduced feasible sets g_i: fixed point of keeping only options whose site
/// connects to some surviving option of every child and of the parent.
pub fn feasibility_reduction(
    instance: &ProblemInstance,
    reach: &[Vec<bool>],
) -> Result<Vec<Vec<usize>>> {
    let n = instance.num_parts();
    let n_sites = instance.sites.len();
    let reachable = |part: usize, from: usize, to: usize| reach[part][from * n_sites + to];

    let mut g: Vec<Vec<usize>> = instance.options.clone();

    // Bottom-up then top-down passes over the PBS until stable.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(instance.levels[i]));
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let iter: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
                Box::new(order.iter())
            } else {
                Box::new(order.iter().rev())
            };
            for &i in iter {
                let before = g[i].len();
                let keep: Vec<usize> = g[i]
                    .iter()
                    .copied()
                    .filter(|&opt| {
                        let k = instance.feasible[opt].site;
                        let children_ok = instance.children[i].iter().all(|&c| {
                            g[c].iter()
                                .any(|&co| reachable(c, instance.feasible[co].site, k))
                        });
                        let parent_ok = match instance.parts[i].parent {
                            None => true,
                            Some(j) => g[j]
                                .iter()
                                .any(|&po| reachable(i, k, instance.feasible[po].site)),
                        };
                        children_ok && parent_ok
                    })
                    .collect();
                if keep.len() != before {
                    changed = true;
                }
                g[i] = keep;
            }
        }
        if !changed {
            break;
        }
    }

    for (i, set) in g.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::Infeasible(format!(
                "feasibility reduction empties the option set of part '{}'",
                instance.parts[i].id
            )));
        }
    }
    Ok(g)
}

/// A problem instance after preprocessing: reduced option sets, optimal
/// routes for the active weights, and site reachability flags.
#[derive(Debug, Clone)]
pub struct ReducedInstance {
    pub instance: Arc<ProblemInstance>,
    /// Per part: surviving option indices into `instance.feasible`, sorted.
    pub g: Vec<Vec<usize>>,
    pub routes: RouteTable,
    pub d: [f64; 4],
    reach: Vec<Vec<bool>>,
    /// Parts with exactly one surviving option (forced assignments).
    pub forced: Vec<usize>,
}

impl ReducedInstance {
    pub fn build(instance: Arc<ProblemInstance>, w: Weights3) -> Result<Self> {
        let d = rescale_factors(&instance);
        let reach = reachability(&instance);
        let g = feasibility_reduction(&instance, &reach)?;
        let routes = RouteTable::compute(&instance, w, &d);
        let forced = (0..instance.num_parts())
            .filter(|&i| g[i].len() == 1)
            .collect();
        Ok(ReducedInstance {
            instance,
            g,
            routes,
            d,
            reach,
            forced,
        })
    }

    pub fn reachable(&self, part: usize, from_site: usize, to_site: usize) -> bool {
        let n_sites = self.instance.sites.len();
        self.reach[part][from_site * n_sites + to_site]
    }

    /// Number of assignment variables: two per surviving option, one when the
    /// part cannot be double sourced (the secondary aliases the primary).
    pub fn num_assignment_vars(&self) -> usize {
        (0..self.instance.num_parts())
            .map(|i| {
                let per_source = self.g[i].len();
                if self.instance.double_sourceable(i) {
                    2 * per_source
                } else {
                    per_source
                }
            })
            .sum()
    }
}

/// Cache of reduced instances keyed by the transport weights rounded to
/// twelve decimals.
#[derive(Default)]
pub struct RouteCache {
    cache: HashMap<[i64; 3], Arc<ReducedInstance>>,
}

impl RouteCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(
        &mut self,
        instance: &Arc<ProblemInstance>,
        w: Weights3,
    ) -> Result<Arc<ReducedInstance>> {
        let key = [0, 1, 2].map(|n| (w[n] * 1e12).round() as i64);
        if let Some(reduced) = self.cache.get(&key) {
            return Ok(Arc::clone(reduced));
        }
        let reduced = Arc::new(ReducedInstance::build(Arc::clone(instance), w)?);
        self.cache.insert(key, Arc::clone(&reduced));
        Ok(reduced)
    }
}
