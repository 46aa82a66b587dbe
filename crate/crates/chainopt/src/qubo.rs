//! Compiles a reduced instance plus weights and penalty multipliers into a
//! QUBO, with rational approximation of part values and source shares, ancilla
//! encoding of the workshare box constraints, the Ising transform, and
//! solution decoding/evaluation.
//!
//! Convention: Q(x) = sum_{i<=j} q[(i,j)] x_i x_j + offset with binary x, so
//! the diagonal carries the linear coefficients. Variables are ordered as
//! assignment variables (part-major, then source, then option) followed by
//! ancilla bits grouped by constraint family.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::preprocess::ReducedInstance;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Weights and multipliers
// ---------------------------------------------------------------------------

/// Scalarization weights w1..w4, convex (sum 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Weights(pub [f64; 4]);

impl Weights {
    pub fn new(w: [f64; 4]) -> Result<Self> {
        for (n, &wn) in w.iter().enumerate() {
            if !(0.0..=1.0).contains(&wn) {
                return Err(Error::Validation(format!(
                    "weight w{} = {wn} outside [0, 1]",
                    n + 1
                )));
            }
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("weights sum to {sum}, not 1")));
        }
        Ok(Weights(w))
    }

    /// The first three weights, used for route preprocessing.
    pub fn transport(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }
}

/// Penalty multipliers λ1..λ6. λ5 and λ6 may be zero, in which case the
/// corresponding workshare windows are left out of the QUBO (no ancillas) and
/// only enforced by the feasibility checker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Multipliers(pub [f64; 6]);

impl Multipliers {
    pub fn new(lambda: [f64; 6]) -> Result<Self> {
        for (n, &l) in lambda.iter().enumerate() {
            let ok = if n < 4 { l > 0.0 } else { l >= 0.0 };
            if !ok {
                return Err(Error::Validation(format!(
                    "multiplier lambda{} = {l} invalid",
                    n + 1
                )));
            }
        }
        Ok(Multipliers(lambda))
    }

    pub fn uniform(value: f64) -> Result<Self> {
        Self::new([value; 6])
    }
}

// ---------------------------------------------------------------------------
// Rational approximation
// ---------------------------------------------------------------------------

/// Nearest-integer numerators P with |v - P/r| <= 1/(2r); ties go to even.
pub fn rational_approx(values: &[f64], r: i64) -> Vec<i64> {
    values
        .iter()
        .map(|v| (v * r as f64).round_ties_even() as i64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RationalApprox {
    pub r: i64,
    /// Per-part numerators for the relative values (percent).
    pub p: Vec<i64>,
    pub r_bar: i64,
    /// Per-part numerators for the primary source shares.
    pub p_bar: Vec<i64>,
    pub eps: Vec<f64>,
    pub eps_bar: Vec<f64>,
}

impl RationalApprox {
    pub fn compute(
        reduced: &ReducedInstance,
        r: i64,
        r_bar: i64,
        p_bar_override: Option<i64>,
    ) -> Result<Self> {
        if r < 1 || r_bar < 1 {
            return Err(Error::Validation("denominators must be positive".into()));
        }
        let inst = &reduced.instance;
        let values: Vec<f64> = (0..inst.num_parts())
            .map(|i| inst.relative_value(i))
            .collect();
        let p = rational_approx(&values, r);
        let p_bar: Vec<i64> = (0..inst.num_parts())
            .map(|i| {
                let raw = match p_bar_override {
                    Some(v) => v,
                    None => (inst.parts[i].alpha * r_bar as f64).round_ties_even() as i64,
                };
                // The approximated share must stay a valid primary share.
                raw.clamp((r_bar + 1) / 2, r_bar)
            })
            .collect();
        let eps = values
            .iter()
            .zip(&p)
            .map(|(v, &pi)| v - pi as f64 / r as f64)
            .collect();
        let eps_bar = (0..inst.num_parts())
            .map(|i| inst.parts[i].alpha - p_bar[i] as f64 / r_bar as f64)
            .collect();
        Ok(RationalApprox {
            r,
            p,
            r_bar,
            p_bar,
            eps,
            eps_bar,
        })
    }

    /// Integer share numerator of source a: P̄_i for the primary, R̄ - P̄_i
    /// for the secondary.
    pub fn share_units(&self, part: usize, source: usize) -> i64 {
        if source == 0 {
            self.p_bar[part]
        } else {
            self.r_bar - self.p_bar[part]
        }
    }
}

// ---------------------------------------------------------------------------
// Variable layout
// ---------------------------------------------------------------------------

/// An assignment slot: either a real binary variable or a constant 1 from
/// forced-assignment folding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRef {
    Index(usize),
    One,
}

impl VarRef {
    pub fn value(&self, x: &[u8]) -> u8 {
        match *self {
            VarRef::Index(i) => x[i],
            VarRef::One => 1,
        }
    }

    pub fn index(&self) -> Option<usize> {
        match *self {
            VarRef::Index(i) => Some(i),
            VarRef::One => None,
        }
    }
}

/// One-hot group: the variables of one (part, source) assignment choice.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotGroup {
    pub part: usize,
    pub source: usize,
    pub vars: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VarInfo {
    Assign {
        part: usize,
        source: usize,
        /// Position within the part's reduced option list.
        position: usize,
    },
    Ancilla {
        constraint: usize,
        bit: usize,
    },
}

/// One workshare window (site or supplier) in rational units, together with
/// its ancilla bits when the window is part of the QUBO.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowConstraint {
    pub is_site: bool,
    pub entity: usize,
    /// Workshare contributions P_i * D̄^a_i per assignment slot.
    pub terms: Vec<(VarRef, i64)>,
    /// Bounds scaled by R * R̄.
    pub lo: i64,
    pub hi: i64,
    /// Ancilla variable indices, least significant first; empty when the
    /// window is not compiled into the QUBO.
    pub lo_bits: Vec<usize>,
    pub hi_bits: Vec<usize>,
    pub lo_scale: f64,
    pub hi_scale: f64,
    pub in_qubo: bool,
}

impl WindowConstraint {
    pub fn workshare_units(&self, x: &[u8]) -> i64 {
        self.terms
            .iter()
            .map(|&(v, c)| c * v.value(x) as i64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableLayout {
    pub n_y: usize,
    pub n_z: usize,
    /// assign[part][source][position]; aliased parts share both source rows.
    pub assign: Vec<[Vec<VarRef>; 2]>,
    /// 2, or 1 when the part cannot be double sourced after reduction.
    pub n_sources: Vec<usize>,
    pub forced: Vec<bool>,
    pub groups: Vec<OneHotGroup>,
    pub var_info: Vec<VarInfo>,
    pub windows: Vec<WindowConstraint>,
}

impl VariableLayout {
    pub fn num_vars(&self) -> usize {
        self.n_y + self.n_z
    }
}

fn ceil_log2(x: i64) -> u32 {
    debug_assert!(x >= 1);
    if x <= 1 {
        0
    } else {
        64 - ((x - 1) as u64).leading_zeros()
    }
}

/// Distinct sites of a part's reduced option set.
pub fn reduced_sites(reduced: &ReducedInstance, part: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = reduced.g[part]
        .iter()
        .map(|&o| reduced.instance.feasible[o].site)
        .collect();
    ks.sort_unstable();
    ks.dedup();
    ks
}

pub fn reduced_regions(reduced: &ReducedInstance, part: usize) -> Vec<usize> {
    let mut vs: Vec<usize> = reduced_sites(reduced, part)
        .iter()
        .map(|&k| reduced.instance.sites[k].region)
        .collect();
    vs.sort_unstable();
    vs.dedup();
    vs
}

pub fn build_layout(
    reduced: &ReducedInstance,
    rational: &RationalApprox,
    site_windows: bool,
    supplier_windows: bool,
    fold_forced: bool,
) -> Result<VariableLayout> {
    let inst = &reduced.instance;
    let n_parts = inst.num_parts();

    let mut assign: Vec<[Vec<VarRef>; 2]> = Vec::with_capacity(n_parts);
    let mut n_sources = Vec::with_capacity(n_parts);
    let mut forced = Vec::with_capacity(n_parts);
    let mut groups = Vec::new();
    let mut var_info = Vec::new();
    let mut next = 0usize;

    for i in 0..n_parts {
        let g_len = reduced.g[i].len();
        // Double sourcing requires at least two distinct sites after
        // reduction; otherwise the secondary aliases the primary.
        let aliased = reduced_sites(reduced, i).len() < 2;
        let sources = if aliased { 1 } else { 2 };
        let is_forced = fold_forced && g_len == 1;
        if is_forced {
            assign.push([vec![VarRef::One], vec![VarRef::One]]);
        } else {
            let mut rows: [Vec<VarRef>; 2] = [Vec::new(), Vec::new()];
            for a in 0..sources {
                let mut vars = Vec::with_capacity(g_len);
                for position in 0..g_len {
                    vars.push(next);
                    var_info.push(VarInfo::Assign {
                        part: i,
                        source: a,
                        position,
                    });
                    rows[a].push(VarRef::Index(next));
                    next += 1;
                }
                groups.push(OneHotGroup {
                    part: i,
                    source: a,
                    vars,
                });
            }
            if sources == 1 {
                rows[1] = rows[0].clone();
            }
            assign.push(rows);
        }
        n_sources.push(sources);
        forced.push(is_forced);
    }
    let n_y = next;

    // Workshare windows in rational units P_i * D̄^a_i; bounds scale by R*R̄.
    let scale = rational.r * rational.r_bar;
    let mut windows = Vec::new();
    let mut site_term_lists: Vec<Vec<(VarRef, i64)>> = vec![Vec::new(); inst.sites.len()];
    let mut supplier_term_lists: Vec<Vec<(VarRef, i64)>> = vec![Vec::new(); inst.suppliers.len()];
    for i in 0..n_parts {
        for (pos, &opt) in reduced.g[i].iter().enumerate() {
            let f = &inst.feasible[opt];
            for a in 0..2 {
                let units = rational.p[i] * rational.share_units(i, a);
                let v = assign[i][a][pos];
                site_term_lists[f.site].push((v, units));
                supplier_term_lists[f.supplier].push((v, units));
            }
        }
    }
    for (k, terms) in site_term_lists.into_iter().enumerate() {
        windows.push(WindowConstraint {
            is_site: true,
            entity: k,
            terms,
            lo: inst.sites[k].ws_min as i64 * scale,
            hi: inst.sites[k].ws_max as i64 * scale,
            lo_bits: Vec::new(),
            hi_bits: Vec::new(),
            lo_scale: 1.0,
            hi_scale: 1.0,
            in_qubo: site_windows,
        });
    }
    for (u, terms) in supplier_term_lists.into_iter().enumerate() {
        windows.push(WindowConstraint {
            is_site: false,
            entity: u,
            terms,
            lo: inst.suppliers[u].ws_min as i64 * scale,
            hi: inst.suppliers[u].ws_max as i64 * scale,
            lo_bits: Vec::new(),
            hi_bits: Vec::new(),
            lo_scale: 1.0,
            hi_scale: 1.0,
            in_qubo: supplier_windows,
        });
    }

    // Ancilla bits, family-major: site minima, site maxima, supplier minima,
    // supplier maxima. The counts follow the ceil-log2 counter formulas with
    // p(y=1) the all-ones workshare.
    let entity_name = |w: &WindowConstraint| {
        if w.is_site {
            format!("site '{}'", inst.sites[w.entity].id)
        } else {
            format!("supplier '{}'", inst.suppliers[w.entity].id)
        }
    };
    let mut constraint_counter = 0usize;
    for lower in [true, false] {
        for w in windows.iter_mut() {
            if !w.in_qubo {
                continue;
            }
            let bits = if lower {
                let p_max: i64 = w.terms.iter().map(|&(_, c)| c).sum();
                let arg = p_max - w.lo + 1;
                if arg < 1 {
                    return Err(Error::Infeasible(format!(
                        "{}: minimum workshare window exceeds the attainable maximum",
                        entity_name(w)
                    )));
                }
                ceil_log2(arg)
            } else {
                ceil_log2(w.hi + 1)
            };
            let scale = (2.0f64).powi(-(bits as i32));
            let mut indices = Vec::with_capacity(bits as usize);
            for bit in 0..bits as usize {
                indices.push(next);
                var_info.push(VarInfo::Ancilla {
                    constraint: constraint_counter,
                    bit,
                });
                next += 1;
            }
            if lower {
                w.lo_scale = scale;
                w.lo_bits = indices;
            } else {
                w.hi_scale = scale;
                w.hi_bits = indices;
            }
            constraint_counter += 1;
        }
    }
    let n_z = next - n_y;

    Ok(VariableLayout {
        n_y,
        n_z,
        assign,
        n_sources,
        forced,
        groups,
        var_info,
        windows,
    })
}

// ---------------------------------------------------------------------------
// Sparse QUBO and Ising forms
// ---------------------------------------------------------------------------

/// Upper-triangular sparse QUBO; the diagonal carries linear coefficients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseQubo {
    pub n: usize,
    pub q: BTreeMap<(usize, usize), f64>,
    pub offset: f64,
}

impl SparseQubo {
    pub fn new(n: usize) -> Self {
        SparseQubo {
            n,
            q: BTreeMap::new(),
            offset: 0.0,
        }
    }

    pub fn add(&mut self, i: usize, j: usize, c: f64) {
        if c == 0.0 {
            return;
        }
        let key = if i <= j { (i, j) } else { (j, i) };
        *self.q.entry(key).or_insert(0.0) += c;
    }

    pub fn value(&self, x: &[u8]) -> f64 {
        debug_assert_eq!(x.len(), self.n);
        let mut total = self.offset;
        for (&(i, j), &c) in &self.q {
            if x[i] != 0 && x[j] != 0 {
                total += c;
            }
        }
        total
    }

    /// Adjacency lists over off-diagonal couplings.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in self.q.keys() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Ising form under s = 2x - 1: H(s) + offset == Q(x).
    pub fn to_ising(&self) -> IsingModel {
        let mut j_mat = BTreeMap::new();
        let mut h = vec![0.0; self.n];
        let mut offset = self.offset;
        for (&(a, b), &c) in &self.q {
            if a == b {
                h[a] += c / 2.0;
                offset += c / 2.0;
            } else {
                *j_mat.entry((a, b)).or_insert(0.0) += c / 4.0;
                h[a] += c / 4.0;
                h[b] += c / 4.0;
                offset += c / 4.0;
            }
        }
        IsingModel {
            n: self.n,
            j: j_mat,
            h,
            offset,
        }
    }
}

/// H(s) = sum_{i<j} J_ij s_i s_j + sum_i h_i s_i over s in {-1, +1}^n.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    pub n: usize,
    pub j: BTreeMap<(usize, usize), f64>,
    pub h: Vec<f64>,
    pub offset: f64,
}

impl IsingModel {
    pub fn energy(&self, s: &[i8]) -> f64 {
        debug_assert_eq!(s.len(), self.n);
        let mut total = 0.0;
        for (&(a, b), &c) in &self.j {
            total += c * s[a] as f64 * s[b] as f64;
        }
        for (i, &hi) in self.h.iter().enumerate() {
            total += hi * s[i] as f64;
        }
        total
    }
}

pub fn spins_to_bits(s: &[i8]) -> Vec<u8> {
    s.iter().map(|&v| if v > 0 { 1 } else { 0 }).collect()
}

pub fn bits_to_spins(x: &[u8]) -> Vec<i8> {
    x.iter().map(|&v| if v != 0 { 1 } else { -1 }).collect()
}

// ---------------------------------------------------------------------------
// Analytic term sets (the non-matrix evaluation path)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct Analytic {
    /// (child slot, parent slot, per-KPI contributions already weighted by
    /// the child's source share).
    transport: Vec<(VarRef, VarRef, [f64; 3])>,
    /// Per supplier: real-valued workshare terms and the target.
    supplier_dev: Vec<(Vec<(VarRef, f64)>, f64)>,
    p1_pairs: Vec<(VarRef, VarRef)>,
    p2_groups: Vec<Vec<VarRef>>,
    /// Products of two indicator sums (site or region distinctness).
    p3_products: Vec<(Vec<VarRef>, Vec<VarRef>)>,
    p4_products: Vec<(Vec<VarRef>, Vec<VarRef>)>,
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompileOptions {
    pub r: i64,
    pub r_bar: i64,
    /// Overrides the per-part share numerators (the default derives them from
    /// each part's alpha).
    pub p_bar: Option<i64>,
    pub fold_forced: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            r: 10,
            r_bar: 5,
            p_bar: None,
            fold_forced: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuboModel {
    pub reduced: Arc<ReducedInstance>,
    pub weights: Weights,
    pub multipliers: Multipliers,
    pub rational: RationalApprox,
    pub layout: VariableLayout,
    pub matrix: SparseQubo,
    analytic: Analytic,
}

impl QuboModel {
    pub fn num_vars(&self) -> usize {
        self.layout.num_vars()
    }

    pub fn matrix_value(&self, x: &[u8]) -> f64 {
        self.matrix.value(x)
    }

    pub fn to_ising(&self) -> IsingModel {
        self.matrix.to_ising()
    }
}

struct Poly {
    qubo: SparseQubo,
}

impl Poly {
    fn new(n: usize) -> Self {
        Poly {
            qubo: SparseQubo::new(n),
        }
    }

    fn add_const(&mut self, c: f64) {
        self.qubo.offset += c;
    }

    fn add_lin(&mut self, v: VarRef, c: f64) {
        match v {
            VarRef::One => self.qubo.offset += c,
            VarRef::Index(i) => self.qubo.add(i, i, c),
        }
    }

    fn add_quad(&mut self, a: VarRef, b: VarRef, c: f64) {
        match (a, b) {
            (VarRef::One, VarRef::One) => self.qubo.offset += c,
            (VarRef::One, v) | (v, VarRef::One) => self.add_lin(v, c),
            (VarRef::Index(i), VarRef::Index(j)) => self.qubo.add(i, j, c),
        }
    }

    /// Adds scale * (sum_i c_i x_i + c0)^2 using x^2 = x.
    fn add_square(&mut self, terms: &[(VarRef, f64)], c0: f64, scale: f64) {
        if scale == 0.0 {
            return;
        }
        let mut constant = c0;
        let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
        for &(v, c) in terms {
            match v {
                VarRef::One => constant += c,
                VarRef::Index(i) => *merged.entry(i).or_insert(0.0) += c,
            }
        }
        self.add_const(scale * constant * constant);
        let entries: Vec<(usize, f64)> = merged.into_iter().collect();
        for (idx, &(i, ci)) in entries.iter().enumerate() {
            self.qubo.add(i, i, scale * (ci * ci + 2.0 * constant * ci));
            for &(j, cj) in &entries[idx + 1..] {
                self.qubo.add(i, j, scale * 2.0 * ci * cj);
            }
        }
    }
}

pub fn compile(
    reduced: Arc<ReducedInstance>,
    weights: Weights,
    multipliers: Multipliers,
    options: CompileOptions,
) -> Result<QuboModel> {
    let rational = RationalApprox::compute(&reduced, options.r, options.r_bar, options.p_bar)?;
    let lambda = multipliers.0;
    let layout = build_layout(
        &reduced,
        &rational,
        lambda[4] > 0.0,
        lambda[5] > 0.0,
        options.fold_forced,
    )?;
    let inst = Arc::clone(&reduced.instance);
    let d = reduced.d;
    let w = weights.0;

    let mut poly = Poly::new(layout.num_vars());
    let mut analytic = Analytic {
        transport: Vec::new(),
        supplier_dev: Vec::new(),
        p1_pairs: Vec::new(),
        p2_groups: Vec::new(),
        p3_products: Vec::new(),
        p4_products: Vec::new(),
    };

    // Transport KPIs and the unreachable-pair penalty P1. Each child-parent
    // option pair appears once per source combination (a, b); the per-KPI
    // coefficient carries the child's source share.
    for i in 0..inst.num_parts() {
        let Some(j) = inst.parts[i].parent else {
            continue;
        };
        for (pos_c, &opt_c) in reduced.g[i].iter().enumerate() {
            let k = inst.feasible[opt_c].site;
            for (pos_p, &opt_p) in reduced.g[j].iter().enumerate() {
                let l = inst.feasible[opt_p].site;
                let reachable = reduced.reachable(i, k, l);
                for a in 0..2 {
                    for b in 0..2 {
                        let va = layout.assign[i][a][pos_c];
                        let vb = layout.assign[j][b][pos_p];
                        if reachable {
                            let entry = reduced.routes.get(i, k, l).ok_or_else(|| {
                                Error::Internal(format!(
                                    "missing route for part '{}' between '{}' and '{}'",
                                    inst.parts[i].id, inst.sites[k].id, inst.sites[l].id
                                ))
                            })?;
                            let share = inst.source_share(i, a);
                            let contributions =
                                [0, 1, 2].map(|n| share * entry.contributions[n]);
                            let coeff: f64 =
                                (0..3).map(|n| w[n] / d[n] * contributions[n]).sum();
                            poly.add_quad(va, vb, coeff);
                            analytic.transport.push((va, vb, contributions));
                        } else {
                            // mu_i^{ab} taken as 1 for every source pair.
                            poly.add_quad(va, vb, lambda[0]);
                            analytic.p1_pairs.push((va, vb));
                        }
                    }
                }
            }
        }
    }

    // Supplier target deviation C4 on real values and shares.
    for u in 0..inst.suppliers.len() {
        let mut terms = Vec::new();
        for i in 0..inst.num_parts() {
            for (pos, &opt) in reduced.g[i].iter().enumerate() {
                if inst.feasible[opt].supplier != u {
                    continue;
                }
                for a in 0..2 {
                    terms.push((
                        layout.assign[i][a][pos],
                        inst.relative_value(i) * inst.source_share(i, a),
                    ));
                }
            }
        }
        let target = inst.suppliers[u].ws_target as f64;
        poly.add_square(&terms, -target, w[3] / d[3]);
        analytic.supplier_dev.push((terms, target));
    }

    // P2: one-hot per (part, source); the aliased secondary repeats the
    // primary group, matching the summation over both sources.
    for i in 0..inst.num_parts() {
        for a in 0..2 {
            let group: Vec<VarRef> = layout.assign[i][a].clone();
            let terms: Vec<(VarRef, f64)> = group.iter().map(|&v| (v, 1.0)).collect();
            poly.add_square(&terms, -1.0, lambda[1]);
            analytic.p2_groups.push(group);
        }
    }

    // P3 and P4: site/region distinctness between the two sources, only for
    // parts whose reduced set still offers a real choice.
    for i in 0..inst.num_parts() {
        let sites = reduced_sites(&reduced, i);
        if sites.len() >= 2 {
            for &k in &sites {
                let indicator = |a: usize| -> Vec<VarRef> {
                    reduced.g[i]
                        .iter()
                        .enumerate()
                        .filter(|&(_, &opt)| inst.feasible[opt].site == k)
                        .map(|(pos, _)| layout.assign[i][a][pos])
                        .collect()
                };
                let lhs = indicator(0);
                let rhs = indicator(1);
                for &va in &lhs {
                    for &vb in &rhs {
                        poly.add_quad(va, vb, lambda[2]);
                    }
                }
                analytic.p3_products.push((lhs, rhs));
            }
        }
        let regions = reduced_regions(&reduced, i);
        if regions.len() >= 2 {
            for &v in &regions {
                let indicator = |a: usize| -> Vec<VarRef> {
                    reduced.g[i]
                        .iter()
                        .enumerate()
                        .filter(|&(_, &opt)| inst.sites[inst.feasible[opt].site].region == v)
                        .map(|(pos, _)| layout.assign[i][a][pos])
                        .collect()
                };
                let lhs = indicator(0);
                let rhs = indicator(1);
                for &va in &lhs {
                    for &vb in &rhs {
                        poly.add_quad(va, vb, lambda[3]);
                    }
                }
                analytic.p4_products.push((lhs, rhs));
            }
        }
    }

    // P5/P6: workshare windows as squared integer slacks with ancilla bits.
    for window in &layout.windows {
        if !window.in_qubo {
            continue;
        }
        let lambda_w = if window.is_site { lambda[4] } else { lambda[5] };
        let mut lo_terms: Vec<(VarRef, f64)> = window
            .terms
            .iter()
            .map(|&(v, c)| (v, c as f64))
            .collect();
        for (bit, &z) in window.lo_bits.iter().enumerate() {
            lo_terms.push((VarRef::Index(z), -((1i64 << bit) as f64)));
        }
        poly.add_square(&lo_terms, -(window.lo as f64), lambda_w * window.lo_scale);

        let mut hi_terms: Vec<(VarRef, f64)> = window
            .terms
            .iter()
            .map(|&(v, c)| (v, -(c as f64)))
            .collect();
        for (bit, &z) in window.hi_bits.iter().enumerate() {
            hi_terms.push((VarRef::Index(z), -((1i64 << bit) as f64)));
        }
        poly.add_square(&hi_terms, window.hi as f64, lambda_w * window.hi_scale);
    }

    Ok(QuboModel {
        reduced,
        weights,
        multipliers,
        rational,
        layout,
        matrix: poly.qubo,
        analytic,
    })
}

// ---------------------------------------------------------------------------
// Evaluation and decoding
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// Scalarized objective: sum of w_n C_n plus lambda-weighted penalties.
    pub objective: f64,
    /// The four KPIs scaled by d_n only, independent of w.
    pub kpis: [f64; 4],
    pub penalties: [f64; 6],
    pub feasible: bool,
}

/// A binary solution together with its evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<u8>,
    pub evaluation: Evaluation,
}

pub fn evaluate(model: &QuboModel, x: &[u8]) -> Result<Evaluation> {
    if x.len() != model.num_vars() {
        return Err(Error::Contract(format!(
            "solution length {} does not match variable count {}",
            x.len(),
            model.num_vars()
        )));
    }
    let a = &model.analytic;
    let d = model.reduced.d;
    let w = model.weights.0;
    let lambda = model.multipliers.0;

    let mut kpis = [0.0f64; 4];
    for &(va, vb, contributions) in &a.transport {
        if va.value(x) != 0 && vb.value(x) != 0 {
            for n in 0..3 {
                kpis[n] += contributions[n] / d[n];
            }
        }
    }
    for (terms, target) in &a.supplier_dev {
        let total: f64 = terms
            .iter()
            .map(|&(v, c)| c * v.value(x) as f64)
            .sum();
        kpis[3] += (total - target) * (total - target) / d[3];
    }

    let mut penalties = [0.0f64; 6];
    let mut p1 = 0i64;
    for &(va, vb) in &a.p1_pairs {
        p1 += (va.value(x) & vb.value(x)) as i64;
    }
    penalties[0] = p1 as f64;

    let mut p2 = 0i64;
    for group in &a.p2_groups {
        let count: i64 = group.iter().map(|&v| v.value(x) as i64).sum();
        p2 += (count - 1) * (count - 1);
    }
    penalties[1] = p2 as f64;

    for (penalty, products) in [(2usize, &a.p3_products), (3, &a.p4_products)] {
        let mut total = 0i64;
        for (lhs, rhs) in products.iter() {
            let l: i64 = lhs.iter().map(|&v| v.value(x) as i64).sum();
            let r: i64 = rhs.iter().map(|&v| v.value(x) as i64).sum();
            total += l * r;
        }
        penalties[penalty] = total as f64;
    }

    // Workshare windows. With ancillas the penalty is the compiled squared
    // slack; without (lambda zero) it degrades to a direct violation measure
    // so the feasibility flag keeps its meaning.
    let mut windows_ok = true;
    for window in &model.layout.windows {
        let p = window.workshare_units(x);
        let idx = if window.is_site { 4 } else { 5 };
        if window.in_qubo {
            let z_lo: i64 = window
                .lo_bits
                .iter()
                .enumerate()
                .map(|(bit, &z)| (x[z] as i64) << bit)
                .sum();
            let z_hi: i64 = window
                .hi_bits
                .iter()
                .enumerate()
                .map(|(bit, &z)| (x[z] as i64) << bit)
                .sum();
            let lo_dev = p - window.lo - z_lo;
            let hi_dev = window.hi - p - z_hi;
            penalties[idx] += window.lo_scale * (lo_dev * lo_dev) as f64
                + window.hi_scale * (hi_dev * hi_dev) as f64;
        } else {
            let below = (window.lo - p).max(0);
            let above = (p - window.hi).max(0);
            penalties[idx] += (below * below + above * above) as f64;
        }
        if p < window.lo || p > window.hi {
            windows_ok = false;
        }
    }
    let _ = windows_ok;

    let objective: f64 = (0..4).map(|n| w[n] * kpis[n]).sum::<f64>()
        + (0..6).map(|n| lambda[n] * penalties[n]).sum::<f64>();
    let feasible = penalties.iter().all(|&p| p == 0.0);
    Ok(Evaluation {
        objective,
        kpis,
        penalties,
        feasible,
    })
}

/// Per part and source: the chosen position within the reduced option list.
pub type Assignment = Vec<[usize; 2]>;

/// Decodes a one-hot-satisfying x; `None` when some (part, source) group does
/// not have exactly one active slot.
pub fn decode(model: &QuboModel, x: &[u8]) -> Option<Assignment> {
    let layout = &model.layout;
    let mut assignment = Vec::with_capacity(layout.assign.len());
    for rows in &layout.assign {
        let mut chosen = [usize::MAX; 2];
        for a in 0..2 {
            let active: Vec<usize> = rows[a]
                .iter()
                .enumerate()
                .filter(|&(_, v)| v.value(x) != 0)
                .map(|(pos, _)| pos)
                .collect();
            if active.len() != 1 {
                return None;
            }
            chosen[a] = active[0];
        }
        assignment.push(chosen);
    }
    Some(assignment)
}

/// Builds the assignment part of x (ancillas zero) from chosen positions.
pub fn encode(model: &QuboModel, assignment: &Assignment) -> Result<Vec<u8>> {
    let layout = &model.layout;
    let mut x = vec![0u8; model.num_vars()];
    if assignment.len() != layout.assign.len() {
        return Err(Error::Contract("assignment length mismatch".into()));
    }
    for (i, chosen) in assignment.iter().enumerate() {
        for a in 0..layout.n_sources[i] {
            let pos = chosen[a];
            match layout.assign[i][a].get(pos) {
                Some(VarRef::Index(idx)) => x[*idx] = 1,
                Some(VarRef::One) => {}
                None => {
                    return Err(Error::Contract(format!(
                        "part {i} source {a}: position {pos} out of range"
                    )))
                }
            }
        }
    }
    Ok(x)
}

/// Chooses ancilla bits so every compiled window penalty vanishes. Fails,
/// naming the window, iff the assignment violates some workshare window.
pub fn ancilla_fill(model: &QuboModel, x: &mut [u8]) -> Result<()> {
    let inst = &model.reduced.instance;
    for window in &model.layout.windows {
        let p = window.workshare_units(x);
        let name = if window.is_site {
            format!("site '{}'", inst.sites[window.entity].id)
        } else {
            format!("supplier '{}'", inst.suppliers[window.entity].id)
        };
        if p < window.lo {
            return Err(Error::Infeasible(format!(
                "{name}: workshare {p} below the minimum window {}",
                window.lo
            )));
        }
        if p > window.hi {
            return Err(Error::Infeasible(format!(
                "{name}: workshare {p} above the maximum window {}",
                window.hi
            )));
        }
        if !window.in_qubo {
            continue;
        }
        for (slack, bits) in [(p - window.lo, &window.lo_bits), (window.hi - p, &window.hi_bits)] {
            if bits.len() < 64 && slack >= (1i64 << bits.len()) {
                return Err(Error::Internal(format!(
                    "{name}: slack {slack} not representable in {} ancilla bits",
                    bits.len()
                )));
            }
            for (bit, &z) in bits.iter().enumerate() {
                x[z] = ((slack >> bit) & 1) as u8;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Independent feasibility checker (reads only the reduced instance)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub ok: bool,
    pub violations: Vec<String>,
}

/// Checks an assignment against the six constraint families directly on the
/// reduced instance, never touching the compiled matrix.
pub fn check_assignment(
    reduced: &ReducedInstance,
    rational: &RationalApprox,
    assignment: &Assignment,
) -> FeasibilityReport {
    let inst = &reduced.instance;
    let mut violations = Vec::new();
    if assignment.len() != inst.num_parts() {
        return FeasibilityReport {
            ok: false,
            violations: vec!["assignment length mismatch".into()],
        };
    }

    let site_of = |i: usize, a: usize| -> Option<usize> {
        reduced.g[i]
            .get(assignment[i][a])
            .map(|&opt| inst.feasible[opt].site)
    };

    for i in 0..inst.num_parts() {
        for a in 0..2 {
            if assignment[i][a] >= reduced.g[i].len() {
                violations.push(format!(
                    "part '{}' source {}: option out of range",
                    inst.parts[i].id,
                    a + 1
                ));
            }
        }
    }
    if !violations.is_empty() {
        return FeasibilityReport {
            ok: false,
            violations,
        };
    }

    // Connectivity: every source combination of child and parent sites.
    for i in 0..inst.num_parts() {
        let Some(j) = inst.parts[i].parent else {
            continue;
        };
        for a in 0..2 {
            for b in 0..2 {
                let k = site_of(i, a).unwrap();
                let l = site_of(j, b).unwrap();
                if !reduced.reachable(i, k, l) {
                    violations.push(format!(
                        "part '{}' at '{}' cannot reach parent '{}' at '{}'",
                        inst.parts[i].id, inst.sites[k].id, inst.parts[j].id, inst.sites[l].id
                    ));
                }
            }
        }
    }

    // Distinct sites and regions for double-sourced parts.
    for i in 0..inst.num_parts() {
        let k1 = site_of(i, 0).unwrap();
        let k2 = site_of(i, 1).unwrap();
        if reduced_sites(reduced, i).len() >= 2 && k1 == k2 {
            violations.push(format!(
                "part '{}': both sources at site '{}'",
                inst.parts[i].id, inst.sites[k1].id
            ));
        }
        if reduced_regions(reduced, i).len() >= 2
            && inst.sites[k1].region == inst.sites[k2].region
        {
            violations.push(format!(
                "part '{}': both sources in region '{}'",
                inst.parts[i].id, inst.regions[inst.sites[k1].region]
            ));
        }
    }

    // Integer workshare windows.
    let scale = rational.r * rational.r_bar;
    let mut site_units = vec![0i64; inst.sites.len()];
    let mut supplier_units = vec![0i64; inst.suppliers.len()];
    for i in 0..inst.num_parts() {
        for a in 0..2 {
            let opt = reduced.g[i][assignment[i][a]];
            let units = rational.p[i] * rational.share_units(i, a);
            site_units[inst.feasible[opt].site] += units;
            supplier_units[inst.feasible[opt].supplier] += units;
        }
    }
    for (k, &units) in site_units.iter().enumerate() {
        let lo = inst.sites[k].ws_min as i64 * scale;
        let hi = inst.sites[k].ws_max as i64 * scale;
        if units < lo || units > hi {
            violations.push(format!(
                "site '{}': workshare {units} outside [{lo}, {hi}]",
                inst.sites[k].id
            ));
        }
    }
    for (u, &units) in supplier_units.iter().enumerate() {
        let lo = inst.suppliers[u].ws_min as i64 * scale;
        let hi = inst.suppliers[u].ws_max as i64 * scale;
        if units < lo || units > hi {
            violations.push(format!(
                "supplier '{}': workshare {units} outside [{lo}, {hi}]",
                inst.suppliers[u].id
            ));
        }
    }

    FeasibilityReport {
        ok: violations.is_empty(),
        violations,
    }
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ModelMetadata<'a> {
    n_x: usize,
    n_y: usize,
    n_z: usize,
    offset: f64,
    weights: &'a Weights,
    multipliers: &'a Multipliers,
    r: i64,
    r_bar: i64,
    variables: &'a [VarInfo],
}

impl QuboModel {
    /// COO text export: one "i j value" line per entry, row-major.
    pub fn export_coo<W: Write>(&self, mut out: W) -> Result<()> {
        for (&(i, j), &c) in &self.matrix.q {
            writeln!(out, "{i} {j} {c}")?;
        }
        Ok(())
    }

    pub fn export_metadata<W: Write>(&self, mut out: W) -> Result<()> {
        let meta = ModelMetadata {
            n_x: self.num_vars(),
            n_y: self.layout.n_y,
            n_z: self.layout.n_z,
            offset: self.matrix.offset,
            weights: &self.weights,
            multipliers: &self.multipliers,
            r: self.rational.r,
            r_bar: self.rational.r_bar,
            variables: &self.layout.var_info,
        };
        serde_json::to_writer_pretty(&mut out, &meta)
            .map_err(|e| Error::Parse(format!("serialize metadata: {e}")))?;
        writeln!(out)?;
        Ok(())
    }
}
