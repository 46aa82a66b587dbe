//! Sub-solver portfolio over QUBO/Ising models: exhaustive brute force,
//! simulated annealing, iterative belief propagation on random tree
//! subgraphs, chaotic amplitude control with momentum, and an exact
//! statevector QAOA with one-hot-preserving XY mixers.
//!
//! Every solver is deterministic given (params, seed, initial state) and
//! reports a trace whose best-seen objective is non-increasing.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::qubo::{IsingModel, SparseQubo};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub objective: f64,
    pub best_objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// Anomalies worth surfacing (clamped divergence, skipped updates).
    pub flags: Vec<String>,
}

impl Trace {
    fn push(&mut self, step: usize, objective: f64, best: f64) {
        debug_assert!(
            self.rows.last().map_or(true, |r| best <= r.best_objective),
            "best-seen objective increased"
        );
        self.rows.push(TraceRow {
            step,
            objective,
            best_objective: best,
        });
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,objective,best_objective")?;
        for row in &self.rows {
            writeln!(out, "{},{},{}", row.step, row.objective, row.best_objective)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Brute force
// ---------------------------------------------------------------------------

pub const BRUTE_FORCE_CAP: usize = 26;

/// Exhaustive minimum of Q(x); ties break to the lexicographically smallest
/// bit vector.
pub fn brute_force(qubo: &SparseQubo) -> Result<(Vec<u8>, f64)> {
    let n = qubo.n;
    if n > BRUTE_FORCE_CAP {
        return Err(Error::Solver(format!(
            "brute force capped at {BRUTE_FORCE_CAP} variables, got {n}"
        )));
    }
    let mut best_x = vec![0u8; n];
    let mut best_e = qubo.value(&best_x);
    let mut x = vec![0u8; n];
    for bits in 1u64..(1u64 << n) {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = ((bits >> i) & 1) as u8;
        }
        let e = qubo.value(&x);
        if e < best_e || (e == best_e && x < best_x) {
            best_e = e;
            best_x.copy_from_slice(&x);
        }
    }
    Ok((best_x, best_e))
}

// ---------------------------------------------------------------------------
// Simulated annealing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaParams {
    pub steps: usize,
    pub beta_init: f64,
    pub beta_final: f64,
    pub seed: u64,
}

impl Default for SaParams {
    fn default() -> Self {
        SaParams {
            steps: 1000,
            beta_init: 0.1,
            beta_final: 10.0,
            seed: 0,
        }
    }
}

impl SaParams {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Validation("annealing needs at least one step".into()));
        }
        if self.beta_init <= 0.0 || self.beta_final <= 0.0 {
            return Err(Error::Validation("inverse temperatures must be positive".into()));
        }
        Ok(())
    }
}

/// Symmetric adjacency with couplings, for local-field updates.
fn ising_neighbors(ising: &IsingModel) -> Vec<Vec<(usize, f64)>> {
    let mut nb = vec![Vec::new(); ising.n];
    for (&(a, b), &c) in &ising.j {
        nb[a].push((b, c));
        nb[b].push((a, c));
    }
    nb
}

/// Metropolis single-spin-flip annealing with a geometric temperature
/// schedule between the endpoint inverse temperatures.
pub fn sa_solve(ising: &IsingModel, params: &SaParams, initial: &[i8]) -> Result<(Vec<i8>, Trace)> {
    params.validate()?;
    if initial.len() != ising.n {
        return Err(Error::Contract("initial state length mismatch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let nb = ising_neighbors(ising);
    let mut s = initial.to_vec();
    let mut energy = ising.energy(&s);
    let mut best = s.clone();
    let mut best_e = energy;
    let mut trace = Trace::default();
    trace.push(0, energy, best_e);

    let ratio = if params.steps > 1 {
        (params.beta_final / params.beta_init).powf(1.0 / (params.steps - 1) as f64)
    } else {
        1.0
    };
    let mut beta = params.beta_init;
    for step in 1..=params.steps {
        let i = rng.random_range(0..ising.n);
        let local: f64 = nb[i].iter().map(|&(j, c)| c * s[j] as f64).sum::<f64>() + ising.h[i];
        let delta = -2.0 * s[i] as f64 * local;
        if delta <= 0.0 || rng.random::<f64>() < (-beta * delta).exp() {
            s[i] = -s[i];
            energy += delta;
            if energy < best_e {
                best_e = energy;
                best.copy_from_slice(&s);
            }
        }
        trace.push(step, energy, best_e);
        beta *= ratio;
    }
    Ok((best, trace))
}

// ---------------------------------------------------------------------------
// Iterative belief propagation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbpParams {
    pub beta: f64,
    /// Anneal start; `None` keeps beta constant across sweeps.
    pub beta_init: Option<f64>,
    pub sweeps: usize,
    pub damping: f64,
    /// Subgraph size budget; 0 means unbounded.
    pub max_tree: usize,
    pub seed: u64,
}

impl Default for IbpParams {
    fn default() -> Self {
        IbpParams {
            beta: 20.0,
            beta_init: None,
            sweeps: 100,
            damping: 0.1,
            max_tree: 0,
            seed: 0,
        }
    }
}

impl IbpParams {
    fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 || self.beta_init.is_some_and(|b| b <= 0.0) {
            return Err(Error::Validation("inverse temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::Validation("damping must lie in [0, 1)".into()));
        }
        if self.sweeps == 0 {
            return Err(Error::Validation("need at least one sweep".into()));
        }
        Ok(())
    }
}

/// Grows a random induced tree in the adjacency: BFS from a uniform root,
/// admitting a frontier node only when it has exactly one edge into the tree
/// (so the induced subgraph stays a tree).
fn random_tree_subgraph<R: Rng>(
    adj: &[Vec<usize>],
    budget: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = adj.len();
    let root = rng.random_range(0..n);
    let mut in_tree: HashSet<usize> = HashSet::from([root]);
    let mut order = vec![root];
    let mut frontier: Vec<usize> = adj[root].clone();
    let mut seen: HashSet<usize> = frontier.iter().copied().collect();
    seen.insert(root);
    while !frontier.is_empty() && (budget == 0 || order.len() < budget) {
        let idx = rng.random_range(0..frontier.len());
        let v = frontier.swap_remove(idx);
        let edges_in: usize = adj[v].iter().filter(|u| in_tree.contains(u)).count();
        if edges_in != 1 {
            continue;
        }
        in_tree.insert(v);
        order.push(v);
        for &u in &adj[v] {
            if seen.insert(u) {
                frontier.push(u);
            }
        }
    }
    order
}

/// Sum-product messages on the induced tree, log domain, damped, normalized.
/// Returns per-node log potentials and converged messages keyed (from, to).
struct TreeBp {
    nodes: Vec<usize>,
    /// Log unary potential per node and value.
    log_phi: Vec<[f64; 2]>,
    /// Coupling per tree edge (local indices), symmetric.
    edges: Vec<Vec<(usize, f64)>>,
    /// messages[from][slot for to] as probabilities over the target value.
    messages: BTreeMap<(usize, usize), [f64; 2]>,
}

fn symmetric_coupling(qubo: &SparseQubo, a: usize, b: usize) -> f64 {
    let key = if a <= b { (a, b) } else { (b, a) };
    qubo.q.get(&key).copied().unwrap_or(0.0)
}

impl TreeBp {
    fn build(qubo: &SparseQubo, nodes: &[usize], clamp: &[u8], beta: f64) -> Self {
        let pos: BTreeMap<usize, usize> =
            nodes.iter().enumerate().map(|(p, &v)| (v, p)).collect();
        let mut log_phi = Vec::with_capacity(nodes.len());
        for &v in nodes {
            // Diagonal plus the boundary fold-in from clamped neighbors.
            let mut field = symmetric_coupling(qubo, v, v);
            for (&(a, b), &c) in &qubo.q {
                if a == b {
                    continue;
                }
                let other = if a == v {
                    Some(b)
                } else if b == v {
                    Some(a)
                } else {
                    None
                };
                if let Some(o) = other {
                    if !pos.contains_key(&o) && clamp[o] != 0 {
                        field += c;
                    }
                }
            }
            log_phi.push([0.0, -beta * field]);
        }
        let mut edges = vec![Vec::new(); nodes.len()];
        for (i, &v) in nodes.iter().enumerate() {
            for (j, &u) in nodes.iter().enumerate() {
                if i < j {
                    let c = symmetric_coupling(qubo, v, u);
                    if c != 0.0 {
                        edges[i].push((j, c));
                        edges[j].push((i, c));
                    }
                }
            }
        }
        let mut messages = BTreeMap::new();
        for (i, nb) in edges.iter().enumerate() {
            for &(j, _) in nb {
                messages.insert((i, j), [0.5, 0.5]);
            }
        }
        TreeBp {
            nodes: nodes.to_vec(),
            log_phi,
            edges,
            messages,
        }
    }

    /// One damped synchronous update of all messages; returns the largest
    /// absolute change.
    fn sweep(&mut self, beta: f64, damping: f64) -> f64 {
        let old = self.messages.clone();
        let mut max_delta: f64 = 0.0;
        for (&(i, j), msg) in self.messages.iter_mut() {
            let c = self.edges[i]
                .iter()
                .find(|&&(k, _)| k == j)
                .map(|&(_, c)| c)
                .unwrap();
            let mut fresh = [0.0f64; 2];
            for (xj, f) in fresh.iter_mut().enumerate() {
                let mut terms = [0.0f64; 2];
                for (xi, t) in terms.iter_mut().enumerate() {
                    *t = self.log_phi[i][xi] - beta * c * (xi * xj) as f64;
                    for &(k, _) in &self.edges[i] {
                        if k != j {
                            *t += old[&(k, i)][xi].ln();
                        }
                    }
                }
                let m = terms[0].max(terms[1]);
                *f = ((terms[0] - m).exp() + (terms[1] - m).exp()).ln() + m;
            }
            let m = fresh[0].max(fresh[1]);
            let w = [(fresh[0] - m).exp(), (fresh[1] - m).exp()];
            let z = w[0] + w[1];
            if !z.is_finite() || z == 0.0 {
                // Leave the old message; the caller surfaces the guard.
                *msg = old[&(i, j)];
                continue;
            }
            let new = [
                damping * old[&(i, j)][0] + (1.0 - damping) * w[0] / z,
                damping * old[&(i, j)][1] + (1.0 - damping) * w[1] / z,
            ];
            debug_assert!((new[0] + new[1] - 1.0).abs() <= 1e-12, "message not normalized");
            max_delta = max_delta.max((new[0] - old[&(i, j)][0]).abs());
            *msg = new;
        }
        max_delta
    }

    fn marginal(&self, i: usize) -> [f64; 2] {
        let mut logs = [self.log_phi[i][0], self.log_phi[i][1]];
        for &(k, _) in &self.edges[i] {
            for (x, l) in logs.iter_mut().enumerate() {
                *l += self.messages[&(k, i)][x].ln();
            }
        }
        let m = logs[0].max(logs[1]);
        let w = [(logs[0] - m).exp(), (logs[1] - m).exp()];
        let z = w[0] + w[1];
        [w[0] / z, w[1] / z]
    }

    /// Conditional of node j given its tree neighbor i fixed to xi.
    fn conditional(&self, j: usize, i: usize, xi: usize, beta: f64) -> [f64; 2] {
        let c = self.edges[j]
            .iter()
            .find(|&&(k, _)| k == i)
            .map(|&(_, c)| c)
            .unwrap();
        let mut logs = [0.0f64; 2];
        for (xj, l) in logs.iter_mut().enumerate() {
            *l = self.log_phi[j][xj] - beta * c * (xi * xj) as f64;
            for &(k, _) in &self.edges[j] {
                if k != i {
                    *l += self.messages[&(k, j)][xj].ln();
                }
            }
        }
        let m = logs[0].max(logs[1]);
        let w = [(logs[0] - m).exp(), (logs[1] - m).exp()];
        let z = w[0] + w[1];
        [w[0] / z, w[1] / z]
    }

    /// Ancestral pass over the tree: sample when `rng` is given, otherwise
    /// take per-node argmax. Writes into the global assignment.
    fn decode<R: Rng>(&self, beta: f64, mut rng: Option<&mut R>, x: &mut [u8]) {
        let root = 0usize;
        let mut stack = vec![(root, None::<(usize, usize)>)];
        let mut visited = vec![false; self.nodes.len()];
        while let Some((i, from)) = stack.pop() {
            visited[i] = true;
            let probs = match from {
                None => self.marginal(i),
                Some((parent, xp)) => self.conditional(i, parent, xp, beta),
            };
            let xi = match rng.as_deref_mut() {
                Some(r) => usize::from(r.random::<f64>() < probs[1]),
                None => usize::from(probs[1] > probs[0]),
            };
            x[self.nodes[i]] = xi as u8;
            for &(k, _) in &self.edges[i] {
                if !visited[k] {
                    stack.push((k, Some((i, xi))));
                }
            }
        }
    }
}

/// Blocked Gibbs over random tree subgraphs: each sweep grows a random
/// induced tree, runs damped sum-product to convergence with the boundary
/// folded into local fields, and resamples the tree variables from the
/// resulting marginals at inverse temperature beta. Best-seen wins.
pub fn ibp_solve(qubo: &SparseQubo, params: &IbpParams, initial: &[u8]) -> Result<(Vec<u8>, Trace)> {
    params.validate()?;
    if initial.len() != qubo.n {
        return Err(Error::Contract("initial state length mismatch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let adj = qubo.adjacency();
    let mut x = initial.to_vec();
    let mut best = x.clone();
    let mut best_e = qubo.value(&best);
    let mut trace = Trace::default();
    trace.push(0, best_e, best_e);

    for sweep in 1..=params.sweeps {
        let beta = match params.beta_init {
            Some(b0) if params.sweeps > 1 => {
                let t = (sweep - 1) as f64 / (params.sweeps - 1) as f64;
                b0 * (params.beta / b0).powf(t)
            }
            _ => params.beta,
        };
        let nodes = random_tree_subgraph(&adj, params.max_tree, &mut rng);
        let mut bp = TreeBp::build(qubo, &nodes, &x, beta);
        let mut converged = false;
        for _ in 0..200 {
            let delta = bp.sweep(beta, params.damping);
            if !delta.is_finite() {
                return Err(Error::Solver("non-finite message in belief propagation".into()));
            }
            if delta <= 1e-12 {
                converged = true;
                break;
            }
        }
        if !converged {
            trace.flags.push(format!("sweep {sweep}: messages not fully converged"));
        }
        // Sampled state advances the chain; the argmax decode is an extra
        // candidate for the best-seen record.
        let mut greedy = x.clone();
        bp.decode::<ChaCha8Rng>(beta, None, &mut greedy);
        bp.decode(beta, Some(&mut rng), &mut x);
        let e_greedy = qubo.value(&greedy);
        if e_greedy < best_e {
            best_e = e_greedy;
            best = greedy;
        }
        let e = qubo.value(&x);
        if e < best_e {
            best_e = e;
            best.copy_from_slice(&x);
        }
        trace.push(sweep, e, best_e);
    }
    Ok((best, trace))
}

// ---------------------------------------------------------------------------
// Chaotic amplitude control with momentum
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacmParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub beta: f64,
    pub xi: f64,
    pub a: f64,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
}

impl Default for CacmParams {
    fn default() -> Self {
        CacmParams {
            lambda1: 1.0,
            lambda2: 0.1,
            gamma: 1.0,
            beta: 0.5,
            xi: 1.0,
            a: 1.0,
            steps: 400,
            dt: 0.05,
            seed: 0,
        }
    }
}

impl CacmParams {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Validation("need at least one integration step".into()));
        }
        if self.dt <= 0.0 {
            return Err(Error::Validation("integration step must be positive".into()));
        }
        if self.a <= 0.0 {
            return Err(Error::Validation("target amplitude must be positive".into()));
        }
        if self.gamma <= 0.0 {
            return Err(Error::Validation("momentum constant must be positive".into()));
        }
        Ok(())
    }
}

const CACM_U_GUARD: f64 = 20.0;

/// Sigmoid squashed to (-1, 1); the slope constant is fixed to 1, any other
/// choice rescales u and is absorbed by the hyperparameters.
fn squash(u: f64) -> f64 {
    2.0 / (1.0 + (-u).exp()) - 1.0
}

/// Explicit Euler integration of the momentum amplitude-control flow:
///   gamma u'' + u' = -lambda u - beta e . grad V(m),   e' = -xi (m.m - a) e
/// with m = squash(u), V the relaxed Ising energy and lambda annealed
/// linearly between its endpoints. Best sign(m) state across the trajectory
/// is returned.
pub fn cacm_solve(
    ising: &IsingModel,
    params: &CacmParams,
    initial: &[i8],
) -> Result<(Vec<i8>, Trace)> {
    params.validate()?;
    if initial.len() != ising.n {
        return Err(Error::Contract("initial state length mismatch".into()));
    }
    let n = ising.n;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let nb = ising_neighbors(ising);

    // Small seeded jitter breaks ties between symmetric trajectories.
    let mut u: Vec<f64> = initial
        .iter()
        .map(|&s| 0.1 * s as f64 + rng.random_range(-0.01..0.01))
        .collect();
    let mut v = vec![0.0f64; n];
    let mut e = vec![1.0f64; n];

    let spins = |u: &[f64]| -> Vec<i8> {
        u.iter().map(|&ui| if squash(ui) >= 0.0 { 1 } else { -1 }).collect()
    };
    let mut best = spins(&u);
    let mut best_e = ising.energy(&best);
    let mut trace = Trace::default();
    trace.push(0, best_e, best_e);
    let mut clamped = false;

    for step in 1..=params.steps {
        let t = if params.steps > 1 {
            (step - 1) as f64 / (params.steps - 1) as f64
        } else {
            0.0
        };
        let lambda = params.lambda1 + t * (params.lambda2 - params.lambda1);
        let m: Vec<f64> = u.iter().map(|&ui| squash(ui)).collect();
        // grad_m V = 2 J m + h.
        let grad: Vec<f64> = (0..n)
            .map(|i| {
                2.0 * nb[i].iter().map(|&(j, c)| c * m[j]).sum::<f64>() + ising.h[i]
            })
            .collect();
        for i in 0..n {
            u[i] += params.dt * v[i];
            v[i] += params.dt * (-lambda * u[i] - params.beta * e[i] * grad[i] - v[i])
                / params.gamma;
            e[i] += params.dt * (-params.xi * (m[i] * m[i] - params.a) * e[i]);
            if u[i].abs() > CACM_U_GUARD {
                u[i] = u[i].clamp(-CACM_U_GUARD, CACM_U_GUARD);
                v[i] = 0.0;
                clamped = true;
            }
            e[i] = e[i].clamp(1e-6, 1e6);
        }
        let s = spins(&u);
        let energy = ising.energy(&s);
        if energy < best_e {
            best_e = energy;
            best = s;
        }
        trace.push(step, energy, best_e);
    }
    if clamped {
        trace.flags.push("amplitude clamped at the divergence guard".into());
    }
    Ok((best, trace))
}

// ---------------------------------------------------------------------------
// QAOA (exact statevector, XY mixers)
// ---------------------------------------------------------------------------

pub const QAOA_QUBIT_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QaoaParams {
    pub depth: usize,
    pub shots: usize,
    pub seed: u64,
}

impl Default for QaoaParams {
    fn default() -> Self {
        QaoaParams {
            depth: 3,
            shots: 1024,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub bits: Vec<u8>,
    pub count: usize,
    pub energy: f64,
}

pub fn write_samples_csv<W: Write>(rows: &[SampleRow], mut out: W) -> Result<()> {
    writeln!(out, "bitstring,count,energy")?;
    for row in rows {
        let bits: String = row.bits.iter().map(|&b| if b == 0 { '0' } else { '1' }).collect();
        writeln!(out, "{bits},{},{}", row.count, row.energy)?;
    }
    Ok(())
}

/// Fixed linear-ramp schedule: gamma_i = (i-1)/(p-1), beta_i = 1 - gamma_i;
/// depth 1 uses (1/2, 1/2).
pub fn qaoa_angles(depth: usize) -> Vec<(f64, f64)> {
    if depth == 1 {
        return vec![(0.5, 0.5)];
    }
    (1..=depth)
        .map(|i| {
            let g = (i - 1) as f64 / (depth - 1) as f64;
            (g, 1.0 - g)
        })
        .collect()
}

/// Probability mass outside the per-group one-hot subspace.
fn leakage(state: &[Complex64], groups: &[Vec<usize>], n: usize) -> f64 {
    let masks: Vec<u64> = groups
        .iter()
        .map(|g| g.iter().fold(0u64, |m, &q| m | (1 << q)))
        .collect();
    let mut total = 0.0;
    for (idx, amp) in state.iter().enumerate() {
        let ok = masks
            .iter()
            .all(|&mask| ((idx as u64) & mask).count_ones() == 1);
        if !ok {
            total += amp.norm_sqr();
        }
    }
    let _ = n;
    total
}

/// Exact-statevector QAOA over a sub-QUBO whose variables are partitioned
/// into one-hot groups (W-state init, XY mixer) and free qubits (uniform
/// init, X mixer). No classical angle optimization: the schedule is the
/// fixed linear ramp. Returns the best sampled state and the sample table.
pub fn qaoa_solve(
    qubo: &SparseQubo,
    groups: &[Vec<usize>],
    params: &QaoaParams,
) -> Result<(Vec<u8>, Vec<SampleRow>)> {
    let n = qubo.n;
    let (state, energy) = qaoa_final_state(qubo, groups, params)?;
    let dim = 1usize << n;

    let leaked = leakage(&state, groups, n);
    if leaked > 1e-10 {
        return Err(Error::Internal(format!(
            "one-hot subspace leakage {leaked:.3e} exceeds 1e-10"
        )));
    }

    // Sampling from |amplitude|^2.
    let mut cumulative = Vec::with_capacity(dim);
    let mut total = 0.0;
    for amp in &state {
        total += amp.norm_sqr();
        cumulative.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for _ in 0..params.shots {
        let r = rng.random::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c <= r).min(dim - 1);
        *counts.entry(idx).or_insert(0) += 1;
    }

    let mut rows = Vec::with_capacity(counts.len());
    let mut best_idx = None;
    for (&idx, &count) in &counts {
        rows.push(SampleRow {
            bits: (0..n).map(|q| ((idx >> q) & 1) as u8).collect(),
            count,
            energy: energy[idx],
        });
        best_idx = match best_idx {
            None => Some(idx),
            Some(b) if energy[idx] < energy[b] => Some(idx),
            other => other,
        };
    }
    let best_idx = best_idx.ok_or_else(|| Error::Internal("no samples drawn".into()))?;
    let best = (0..n).map(|q| ((best_idx >> q) & 1) as u8).collect();
    Ok((best, rows))
}

/// Probability mass outside the one-hot product sector in the final state.
/// Zero up to rounding by construction; exposed so the invariant can be
/// measured rather than trusted.
pub fn qaoa_leakage(
    qubo: &SparseQubo,
    groups: &[Vec<usize>],
    params: &QaoaParams,
) -> Result<f64> {
    let (state, _) = qaoa_final_state(qubo, groups, params)?;
    Ok(leakage(&state, groups, qubo.n))
}

fn qaoa_final_state(
    qubo: &SparseQubo,
    groups: &[Vec<usize>],
    params: &QaoaParams,
) -> Result<(Vec<Complex64>, Vec<f64>)> {
    let n = qubo.n;
    if n > QAOA_QUBIT_CAP {
        return Err(Error::Solver(format!(
            "statevector cap is {QAOA_QUBIT_CAP} qubits, got {n}"
        )));
    }
    if params.depth == 0 {
        return Err(Error::Validation("depth must be at least 1".into()));
    }
    if params.shots == 0 {
        return Err(Error::Validation("need at least one shot".into()));
    }
    let mut grouped = vec![false; n];
    for g in groups {
        if g.is_empty() {
            return Err(Error::Contract("empty one-hot group".into()));
        }
        for &q in g {
            if q >= n || grouped[q] {
                return Err(Error::Contract("groups must partition distinct qubits".into()));
            }
            grouped[q] = true;
        }
    }
    let free: Vec<usize> = (0..n).filter(|&q| !grouped[q]).collect();
    let dim = 1usize << n;

    // Energies per basis state (bit q of the index is variable q).
    let mut energy = vec![qubo.offset; dim];
    for (&(i, j), &c) in &qubo.q {
        let mask = (1u64 << i) | (1u64 << j);
        for (idx, e) in energy.iter_mut().enumerate() {
            if (idx as u64) & mask == mask {
                *e += c;
            }
        }
    }

    // Initial state: W state per group, |+> on free qubits.
    let mut state = vec![Complex64::new(0.0, 0.0); dim];
    let group_amp: f64 = groups.iter().map(|g| 1.0 / (g.len() as f64).sqrt()).product();
    let free_amp = (1.0f64 / 2.0).sqrt().powi(free.len() as i32);
    let masks: Vec<u64> = groups
        .iter()
        .map(|g| g.iter().fold(0u64, |m, &q| m | (1 << q)))
        .collect();
    for (idx, amp) in state.iter_mut().enumerate() {
        if masks
            .iter()
            .all(|&mask| ((idx as u64) & mask).count_ones() == 1)
        {
            *amp = Complex64::new(group_amp * free_amp, 0.0);
        }
    }

    for (gamma, beta) in qaoa_angles(params.depth) {
        // Cost layer: diagonal phase.
        for (idx, amp) in state.iter_mut().enumerate() {
            *amp *= Complex64::from_polar(1.0, -gamma * energy[idx]);
        }
        // XY mixer per group: within the one-hot sector the pairwise
        // (XX+YY)/2 sum acts as the complete-graph adjacency, so
        // exp(-i beta A) v = e^{i beta} (v - (u.v) u) + e^{-i beta (g-1)} (u.v) u
        // with u the unit uniform vector over the g one-hot states.
        for g in groups {
            let gsize = g.len();
            let mask: usize = g.iter().fold(0, |m, &q| m | (1 << q));
            let canonical = 1usize << g[0];
            let phase_rest = Complex64::from_polar(1.0, beta);
            let phase_uni = Complex64::from_polar(1.0, -beta * (gsize as f64 - 1.0));
            let inv_sqrt = 1.0 / (gsize as f64).sqrt();
            for idx in 0..dim {
                if idx & mask != canonical {
                    continue;
                }
                let rest = idx & !mask;
                let slots: Vec<usize> = g.iter().map(|&q| rest | (1 << q)).collect();
                let dot: Complex64 =
                    slots.iter().map(|&s| state[s]).sum::<Complex64>() * inv_sqrt;
                for &s in &slots {
                    let uniform = dot * inv_sqrt;
                    state[s] = phase_rest * (state[s] - uniform) + phase_uni * uniform;
                }
            }
        }
        // X mixer on free qubits: exp(-i beta X) rotations.
        let (c, s) = (beta.cos(), beta.sin());
        for &q in &free {
            let bit = 1usize << q;
            for idx in 0..dim {
                if idx & bit != 0 {
                    continue;
                }
                let a0 = state[idx];
                let a1 = state[idx | bit];
                state[idx] = Complex64::new(c, 0.0) * a0 + Complex64::new(0.0, -s) * a1;
                state[idx | bit] = Complex64::new(0.0, -s) * a0 + Complex64::new(c, 0.0) * a1;
            }
        }
    }

    Ok((state, energy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubo::{bits_to_spins, spins_to_bits};

    fn random_qubo<R: Rng>(n: usize, density: f64, rng: &mut R) -> SparseQubo {
        let mut q = SparseQubo::new(n);
        q.offset = rng.random_range(-2.0..2.0);
        for i in 0..n {
            for j in i..n {
                if i == j || rng.random::<f64>() < density {
                    q.add(i, j, rng.random_range(-2.0..2.0));
                }
            }
        }
        q
    }

    /// Random tree QUBO with couplings bounded away from zero.
    fn random_tree_qubo<R: Rng>(n: usize, rng: &mut R) -> SparseQubo {
        let mut q = SparseQubo::new(n);
        for i in 0..n {
            q.add(i, i, rng.random_range(-2.0..2.0));
        }
        for v in 1..n {
            let parent = rng.random_range(0..v);
            let mag = rng.random_range(0.5..2.0);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            q.add(parent, v, sign * mag);
        }
        q
    }

    #[test]
    fn brute_force_single_variable() {
        let mut q = SparseQubo::new(1);
        q.add(0, 0, 1.0);
        let (x, e) = brute_force(&q).unwrap();
        assert_eq!(x, vec![0]);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn brute_force_tie_break_lexicographic() {
        // Ising coupling -1, zero fields: Q(x) = -1 + 2x0 + 2x1 - 4 x0 x1
        // has both aligned states at -1; the all-zeros image wins.
        let mut q = SparseQubo::new(2);
        q.offset = -1.0;
        q.add(0, 0, 2.0);
        q.add(1, 1, 2.0);
        q.add(0, 1, -4.0);
        let (x, e) = brute_force(&q).unwrap();
        assert_eq!(x, vec![0, 0]);
        assert_eq!(e, -1.0);
    }

    #[test]
    fn brute_force_stable_under_variable_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_qubo(16, 0.3, &mut rng);
        let (_, e) = brute_force(&q).unwrap();
        // Reverse the variable order and re-enumerate.
        let mut rev = SparseQubo::new(16);
        rev.offset = q.offset;
        for (&(i, j), &c) in &q.q {
            rev.add(15 - i, 15 - j, c);
        }
        let (_, e2) = brute_force(&rev).unwrap();
        assert!((e - e2).abs() < 1e-12);
    }

    #[test]
    fn brute_force_rejects_oversized() {
        let q = SparseQubo::new(27);
        assert!(brute_force(&q).is_err());
    }

    #[test]
    fn sa_independent_spins_follow_fields() {
        let ising = IsingModel {
            n: 4,
            j: BTreeMap::new(),
            h: vec![1.0, -2.0, 0.5, -0.25],
            offset: 0.0,
        };
        let params = SaParams {
            steps: 2000,
            ..SaParams::default()
        };
        let (s, trace) = sa_solve(&ising, &params, &[1, 1, 1, 1]).unwrap();
        assert_eq!(s, vec![-1, 1, -1, 1]);
        for pair in trace.rows.windows(2) {
            assert!(pair[1].best_objective <= pair[0].best_objective);
        }
    }

    #[test]
    fn sa_single_step_changes_at_most_one_spin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_qubo(8, 0.5, &mut rng);
        let ising = q.to_ising();
        let initial = vec![1i8; 8];
        let params = SaParams {
            steps: 1,
            ..SaParams::default()
        };
        let (s, _) = sa_solve(&ising, &params, &initial).unwrap();
        let diffs = s.iter().zip(&initial).filter(|(a, b)| a != b).count();
        assert!(diffs <= 1);
    }

    #[test]
    fn sa_reaches_oracle_on_tree_ising() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_tree_qubo(12, &mut rng);
        let (x_opt, _) = brute_force(&q).unwrap();
        let ising = q.to_ising();
        let opt = ising.energy(&bits_to_spins(&x_opt));
        let mut hits = 0;
        for seed in 0..20 {
            let params = SaParams {
                steps: 10_000,
                seed,
                ..SaParams::default()
            };
            let (s, _) = sa_solve(&ising, &params, &vec![1i8; 12]).unwrap();
            if (ising.energy(&s) - opt).abs() < 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 18, "only {hits}/20 seeds reached the optimum");
    }

    #[test]
    fn ibp_single_variable_matches_boltzmann() {
        // One variable with diagonal c: P(1) = e^{-beta c} / (1 + e^{-beta c}).
        let mut q = SparseQubo::new(1);
        let c = 0.7;
        q.add(0, 0, c);
        let beta = 1.5;
        let expect = (-beta * c).exp() / (1.0 + (-beta * c).exp());
        let params = IbpParams {
            beta,
            sweeps: 4000,
            ..IbpParams::default()
        };
        let (_, trace) = ibp_solve(&q, &params, &[0]).unwrap();
        // Count how often the sampled chain state was 1 via the trace
        // objective (objective c means x = 1).
        let ones = trace.rows[1..]
            .iter()
            .filter(|r| (r.objective - c).abs() < 1e-12)
            .count();
        let freq = ones as f64 / (trace.rows.len() - 1) as f64;
        assert!(
            (freq - expect).abs() < 0.03,
            "frequency {freq} vs Boltzmann {expect}"
        );
    }

    #[test]
    fn ibp_exact_on_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..25 {
            let q = random_tree_qubo(10, &mut rng);
            let (x_opt, e_opt) = brute_force(&q).unwrap();
            let params = IbpParams {
                beta: 20.0,
                sweeps: 40,
                seed: case,
                ..IbpParams::default()
            };
            let (x, _) = ibp_solve(&q, &params, &vec![0u8; 10]).unwrap();
            assert!(
                (q.value(&x) - e_opt).abs() < 1e-9,
                "case {case}: {} vs {e_opt} (opt {x_opt:?}, got {x:?})",
                q.value(&x)
            );
        }
    }

    #[test]
    fn ibp_fully_connected_small_subgraphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut q = SparseQubo::new(6);
        for i in 0..6 {
            for j in i..6 {
                q.add(i, j, rng.random_range(-2.0..2.0));
            }
        }
        // Induced trees in a complete graph cannot exceed two nodes.
        let adj = q.adjacency();
        for seed in 0..50 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let tree = random_tree_subgraph(&adj, 0, &mut r);
            assert!(tree.len() <= 2, "induced tree of size {}", tree.len());
        }
        let (_, e_opt) = brute_force(&q).unwrap();
        let mut hits = 0;
        for seed in 0..20 {
            let params = IbpParams {
                beta: 20.0,
                beta_init: Some(0.5),
                sweeps: 200,
                seed,
                ..IbpParams::default()
            };
            let (x, _) = ibp_solve(&q, &params, &vec![0u8; 6]).unwrap();
            if (q.value(&x) - e_opt).abs() < 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 15, "only {hits}/20 seeds reached the optimum");
    }

    #[test]
    fn cacm_independent_spins_follow_fields() {
        let ising = IsingModel {
            n: 3,
            j: BTreeMap::new(),
            h: vec![1.0, -0.5, 2.0],
            offset: 0.0,
        };
        let (s, _) = cacm_solve(&ising, &CacmParams::default(), &[1, 1, 1]).unwrap();
        assert_eq!(s, vec![-1, 1, -1]);
    }

    #[test]
    fn cacm_two_spin_ferromagnet_aligns() {
        let mut j = BTreeMap::new();
        j.insert((0, 1), -1.0);
        let ising = IsingModel {
            n: 2,
            j,
            h: vec![0.0, 0.0],
            offset: 0.0,
        };
        let (s, _) = cacm_solve(&ising, &CacmParams::default(), &[1, -1]).unwrap();
        assert_eq!(s[0], s[1]);
        assert!((ising.energy(&s) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cacm_trace_best_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_qubo(10, 0.4, &mut rng);
        let ising = q.to_ising();
        let (_, trace) = cacm_solve(&ising, &CacmParams::default(), &vec![1i8; 10]).unwrap();
        for pair in trace.rows.windows(2) {
            assert!(pair[1].best_objective <= pair[0].best_objective);
        }
    }

    #[test]
    fn qaoa_angles_schedule() {
        assert_eq!(qaoa_angles(1), vec![(0.5, 0.5)]);
        let a = qaoa_angles(4);
        assert_eq!(a[0], (0.0, 1.0));
        assert_eq!(a[3], (1.0, 0.0));
        for &(g, b) in &a {
            assert!((g + b - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn qaoa_preserves_one_hot_on_zero_hamiltonian() {
        let q = SparseQubo::new(3);
        let params = QaoaParams {
            depth: 3,
            shots: 500,
            seed: 1,
        };
        let (_, rows) = qaoa_solve(&q, &[vec![0, 1, 2]], &params).unwrap();
        for row in &rows {
            let weight: u8 = row.bits.iter().sum();
            assert_eq!(weight, 1, "non-one-hot sample {:?}", row.bits);
        }
    }

    #[test]
    fn qaoa_two_groups_find_planted_pair() {
        // Cost strongly favors (qubit 1 of group A, qubit 5 of group B).
        let mut q = SparseQubo::new(6);
        q.add(1, 5, -4.0);
        let params = QaoaParams {
            depth: 3,
            shots: 1024,
            seed: 7,
        };
        let (best, rows) = qaoa_solve(&q, &[vec![0, 1, 2], vec![3, 4, 5]], &params).unwrap();
        // Restricted exhaustive oracle over one-hot states.
        let mut oracle_best = f64::INFINITY;
        let mut oracle_x = Vec::new();
        for i in 0..3 {
            for j in 3..6 {
                let mut x = vec![0u8; 6];
                x[i] = 1;
                x[j] = 1;
                let e = q.value(&x);
                if e < oracle_best {
                    oracle_best = e;
                    oracle_x = x;
                }
            }
        }
        assert_eq!(best, oracle_x);
        let modal = rows.iter().max_by_key(|r| r.count).unwrap();
        assert_eq!(modal.bits, oracle_x);
    }

    #[test]
    fn qaoa_free_qubits_get_x_mixer() {
        // With a zero Hamiltonian the free qubit stays in |+> (an X-mixer
        // eigenstate up to phase), so its samples are uniform.
        let q = SparseQubo::new(3);
        let params = QaoaParams {
            depth: 3,
            shots: 2000,
            seed: 3,
        };
        let (_, rows) = qaoa_solve(&q, &[vec![0, 1]], &params).unwrap();
        let ones: usize = rows.iter().filter(|r| r.bits[2] == 1).map(|r| r.count).sum();
        let total: usize = rows.iter().map(|r| r.count).sum();
        assert_eq!(total, 2000);
        let freq = ones as f64 / total as f64;
        assert!((freq - 0.5).abs() < 0.05, "free qubit frequency {freq}");
    }

    #[test]
    fn qaoa_rejects_oversized_and_empty_group() {
        let q = SparseQubo::new(QAOA_QUBIT_CAP + 1);
        assert!(qaoa_solve(&q, &[], &QaoaParams::default()).is_err());
        let q = SparseQubo::new(2);
        assert!(qaoa_solve(&q, &[vec![]], &QaoaParams::default()).is_err());
    }

    #[test]
    fn determinism_across_repeat_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_qubo(10, 0.4, &mut rng);
        let ising = q.to_ising();
        let sa1 = sa_solve(&ising, &SaParams::default(), &vec![1i8; 10]).unwrap();
        let sa2 = sa_solve(&ising, &SaParams::default(), &vec![1i8; 10]).unwrap();
        assert_eq!(sa1, sa2);
        let ibp1 = ibp_solve(&q, &IbpParams::default(), &vec![0u8; 10]).unwrap();
        let ibp2 = ibp_solve(&q, &IbpParams::default(), &vec![0u8; 10]).unwrap();
        assert_eq!(ibp1, ibp2);
        let c1 = cacm_solve(&ising, &CacmParams::default(), &vec![1i8; 10]).unwrap();
        let c2 = cacm_solve(&ising, &CacmParams::default(), &vec![1i8; 10]).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn trace_csv_round_trip() {
        let mut trace = Trace::default();
        trace.push(0, 1.5, 1.5);
        trace.push(1, 2.0, 1.5);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,objective,best_objective\n"));
        assert!(text.contains("1,2,1.5"));
        let rows = vec![SampleRow {
            bits: vec![1, 0],
            count: 3,
            energy: -0.5,
        }];
        let mut buf = Vec::new();
        write_samples_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("10,3,-0.5"));
    }

    #[test]
    fn spins_bits_round_trip() {
        let x = vec![1u8, 0, 1, 1, 0];
        assert_eq!(spins_to_bits(&bits_to_spins(&x)), x);
    }
}
