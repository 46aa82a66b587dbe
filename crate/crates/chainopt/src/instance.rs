//! Problem-instance data model: parts with a dependency tree (PBS), sites,
//! warehouses, suppliers, transport methods, feasible site-supplier options.
//!
//! Instances are loaded from a JSON file with string ids, validated, and kept
//! immutable afterwards. Internally all references are dense indices.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub id: String,
    /// Absolute value V_i (abstract currency), strictly positive.
    pub value: f64,
    /// Volume in cubic meters, strictly positive.
    pub volume: f64,
    /// Parent part index; `None` exactly for the root.
    pub parent: Option<usize>,
    /// Primary source share, in [0.5, 1].
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Site {
    pub id: String,
    pub region: usize,
    /// Minimum workshare in integer percent.
    pub ws_min: u32,
    /// Maximum workshare in integer percent.
    pub ws_max: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Supplier {
    pub id: String,
    pub ws_min: u32,
    pub ws_max: u32,
    pub ws_target: u32,
}

/// A directed transport edge for one part between two nodes of the combined
/// site/warehouse node space (sites first, then warehouses).
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMethod {
    pub id: String,
    pub part: usize,
    pub from: usize,
    pub to: usize,
    /// Emissions, cost, time contributions c^1..c^3.
    pub c: [f64; 3],
    pub cargo_volume: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleOption {
    pub part: usize,
    pub site: usize,
    pub supplier: usize,
    /// Parsed and stored, but never enters any objective.
    pub production_time: f64,
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub parts: Vec<Part>,
    pub sites: Vec<Site>,
    pub warehouses: Vec<String>,
    pub suppliers: Vec<Supplier>,
    pub regions: Vec<String>,
    pub transport: Vec<TransportMethod>,
    pub feasible: Vec<FeasibleOption>,

    // Derived at load time.
    pub root: usize,
    pub children: Vec<Vec<usize>>,
    pub levels: Vec<u32>,
    /// Per part: indices into `feasible` (the set f_i), sorted.
    pub options: Vec<Vec<usize>>,
    /// Per part: indices into `transport`, sorted.
    pub methods_of_part: Vec<Vec<usize>>,
    /// Per part: assignable sites K_i, sorted and deduplicated.
    pub assignable_sites: Vec<Vec<usize>>,
    /// Per part: assignable regions, sorted and deduplicated.
    pub assignable_regions: Vec<Vec<usize>>,
    /// True iff no site-to-site route exists for the part.
    pub immobile: Vec<bool>,
    pub total_value: f64,
}

impl ProblemInstance {
    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    /// Combined node count of the per-part transport graphs.
    pub fn num_nodes(&self) -> usize {
        self.sites.len() + self.warehouses.len()
    }

    /// Relative value v_i in percent; sums to 100 over all parts.
    pub fn relative_value(&self, part: usize) -> f64 {
        100.0 * self.parts[part].value / self.total_value
    }

    /// Primary (a=1) or secondary (a=2) source share of a part.
    pub fn source_share(&self, part: usize, source: usize) -> f64 {
        let alpha = self.parts[part].alpha;
        if source == 0 {
            alpha
        } else {
            1.0 - alpha
        }
    }

    /// A part can be double sourced iff it is assignable to at least two sites.
    pub fn double_sourceable(&self, part: usize) -> bool {
        self.assignable_sites[part].len() >= 2
    }

    pub fn max_level(&self) -> u32 {
        self.levels.iter().copied().max().unwrap_or(0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.save_to(file)
    }

    pub fn save_to<W: Write>(&self, mut writer: W) -> Result<()> {
        let raw = self.to_raw();
        serde_json::to_writer_pretty(&mut writer, &raw)
            .map_err(|e| Error::Parse(format!("serialize: {e}")))?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    fn to_raw(&self) -> RawInstance {
        RawInstance {
            parts: self
                .parts
                .iter()
                .map(|p| RawPart {
                    id: p.id.clone(),
                    value: p.value,
                    volume: p.volume,
                    parent: p.parent.map(|j| self.parts[j].id.clone()),
                    alpha: p.alpha,
                })
                .collect(),
            sites: self
                .sites
                .iter()
                .map(|s| RawSite {
                    id: s.id.clone(),
                    region: self.regions[s.region].clone(),
                    ws_min: s.ws_min,
                    ws_max: s.ws_max,
                })
                .collect(),
            warehouses: self.warehouses.clone(),
            suppliers: self
                .suppliers
                .iter()
                .map(|u| RawSupplier {
                    id: u.id.clone(),
                    ws_min: u.ws_min,
                    ws_max: u.ws_max,
                    ws_target: u.ws_target,
                })
                .collect(),
            regions: self.regions.clone(),
            transport: self
                .transport
                .iter()
                .map(|m| RawTransport {
                    id: m.id.clone(),
                    part: self.parts[m.part].id.clone(),
                    from: self.node_id(m.from),
                    to: self.node_id(m.to),
                    c1: m.c[0],
                    c2: m.c[1],
                    c3: m.c[2],
                    cargo_volume: m.cargo_volume,
                })
                .collect(),
            feasible: self
                .feasible
                .iter()
                .map(|f| RawFeasible {
                    part: self.parts[f.part].id.clone(),
                    site: self.sites[f.site].id.clone(),
                    supplier: self.suppliers[f.supplier].id.clone(),
                    production_time: f.production_time,
                })
                .collect(),
        }
    }

    fn node_id(&self, node: usize) -> String {
        if node < self.sites.len() {
            self.sites[node].id.clone()
        } else {
            self.warehouses[node - self.sites.len()].clone()
        }
    }
}

impl PartialEq for ProblemInstance {
    fn eq(&self, other: &Self) -> bool {
        self.parts == other.parts
            && self.sites == other.sites
            && self.warehouses == other.warehouses
            && self.suppliers == other.suppliers
            && self.regions == other.regions
            && self.transport == other.transport
            && self.feasible == other.feasible
    }
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RawInstance {
    parts: Vec<RawPart>,
    sites: Vec<RawSite>,
    warehouses: Vec<String>,
    suppliers: Vec<RawSupplier>,
    regions: Vec<String>,
    transport: Vec<RawTransport>,
    feasible: Vec<RawFeasible>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawPart {
    id: String,
    value: f64,
    volume: f64,
    #[serde(default)]
    parent: Option<String>,
    alpha: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSite {
    id: String,
    region: String,
    ws_min: u32,
    ws_max: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSupplier {
    id: String,
    ws_min: u32,
    ws_max: u32,
    ws_target: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawTransport {
    id: String,
    part: String,
    from: String,
    to: String,
    c1: f64,
    c2: f64,
    c3: f64,
    cargo_volume: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawFeasible {
    part: String,
    site: String,
    supplier: String,
    production_time: f64,
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance> {
    let file = std::fs::File::open(path)?;
    load_instance_from(file)
}

pub fn load_instance_from<R: Read>(reader: R) -> Result<ProblemInstance> {
    let raw: RawInstance = serde_json::from_reader(reader)
        .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    resolve(raw)
}

fn index_of<'a>(
    map: &HashMap<&'a str, usize>,
    id: &str,
    kind: &str,
    context: &str,
) -> Result<usize> {
    map.get(id).copied().ok_or_else(|| {
        Error::Validation(format!("unknown {kind} id '{id}' referenced by {context}"))
    })
}

fn unique_index<'a>(ids: impl Iterator<Item = &'a str>, kind: &str) -> Result<HashMap<&'a str, usize>> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        if map.insert(id, i).is_some() {
            return Err(Error::Validation(format!("duplicate {kind} id '{id}'")));
        }
    }
    Ok(map)
}

fn resolve(raw: RawInstance) -> Result<ProblemInstance> {
    let part_idx = unique_index(raw.parts.iter().map(|p| p.id.as_str()), "part")?;
    let site_idx = unique_index(raw.sites.iter().map(|s| s.id.as_str()), "site")?;
    let wh_idx = unique_index(raw.warehouses.iter().map(|w| w.as_str()), "warehouse")?;
    let supplier_idx = unique_index(raw.suppliers.iter().map(|u| u.id.as_str()), "supplier")?;
    let region_idx = unique_index(raw.regions.iter().map(|r| r.as_str()), "region")?;

    for id in site_idx.keys() {
        if wh_idx.contains_key(id) {
            return Err(Error::Validation(format!(
                "id '{id}' used for both a site and a warehouse"
            )));
        }
    }

    let n_sites = raw.sites.len();
    let node_of = |id: &str, context: &str| -> Result<usize> {
        if let Some(&k) = site_idx.get(id) {
            Ok(k)
        } else if let Some(&w) = wh_idx.get(id) {
            Ok(n_sites + w)
        } else {
            Err(Error::Validation(format!(
                "unknown site/warehouse id '{id}' referenced by {context}"
            )))
        }
    };

    let mut parts = Vec::with_capacity(raw.parts.len());
    for p in &raw.parts {
        if !(p.value > 0.0) {
            return Err(Error::Validation(format!(
                "part '{}': value must be positive",
                p.id
            )));
        }
        if !(p.volume > 0.0) {
            return Err(Error::Validation(format!(
                "part '{}': volume must be positive",
                p.id
            )));
        }
        if !(0.5..=1.0).contains(&p.alpha) {
            return Err(Error::Validation(format!(
                "part '{}': alpha must lie in [0.5, 1]",
                p.id
            )));
        }
        let parent = match &p.parent {
            Some(id) => Some(index_of(
                &part_idx,
                id,
                "parent",
                &format!("part '{}'", p.id),
            )?),
            None => None,
        };
        parts.push(Part {
            id: p.id.clone(),
            value: p.value,
            volume: p.volume,
            parent,
            alpha: p.alpha,
        });
    }

    let mut sites = Vec::with_capacity(raw.sites.len());
    for s in &raw.sites {
        if s.ws_min > s.ws_max {
            return Err(Error::Validation(format!(
                "site '{}': ws_min > ws_max",
                s.id
            )));
        }
        if s.ws_max > 100 {
            return Err(Error::Validation(format!(
                "site '{}': workshare percents must lie in [0, 100]",
                s.id
            )));
        }
        let region = index_of(&region_idx, &s.region, "region", &format!("site '{}'", s.id))?;
        sites.push(Site {
            id: s.id.clone(),
            region,
            ws_min: s.ws_min,
            ws_max: s.ws_max,
        });
    }

    let mut suppliers = Vec::with_capacity(raw.suppliers.len());
    for u in &raw.suppliers {
        if !(u.ws_min <= u.ws_target && u.ws_target <= u.ws_max) {
            return Err(Error::Validation(format!(
                "supplier '{}': requires ws_min <= ws_target <= ws_max",
                u.id
            )));
        }
        if u.ws_max > 100 {
            return Err(Error::Validation(format!(
                "supplier '{}': workshare percents must lie in [0, 100]",
                u.id
            )));
        }
        suppliers.push(Supplier {
            id: u.id.clone(),
            ws_min: u.ws_min,
            ws_max: u.ws_max,
            ws_target: u.ws_target,
        });
    }

    let mut transport = Vec::with_capacity(raw.transport.len());
    unique_index(raw.transport.iter().map(|m| m.id.as_str()), "transport")?;
    for m in &raw.transport {
        let part = index_of(&part_idx, &m.part, "part", &format!("transport '{}'", m.id))?;
        let from = node_of(&m.from, &format!("transport '{}'", m.id))?;
        let to = node_of(&m.to, &format!("transport '{}'", m.id))?;
        for (n, c) in [m.c1, m.c2, m.c3].iter().enumerate() {
            if !(*c >= 0.0) {
                return Err(Error::Validation(format!(
                    "transport '{}': c{} must be non-negative",
                    m.id,
                    n + 1
                )));
            }
        }
        if !(m.cargo_volume > 0.0) {
            return Err(Error::Validation(format!(
                "transport '{}': cargo_volume must be positive",
                m.id
            )));
        }
        if m.cargo_volume < parts[part].volume {
            return Err(Error::Validation(format!(
                "transport '{}': cargo_volume smaller than the volume of part '{}'",
                m.id, m.part
            )));
        }
        if from == to && m.c1 == 0.0 && m.c2 == 0.0 && m.c3 == 0.0 {
            return Err(Error::Validation(format!(
                "transport '{}': zero-cost self-loop",
                m.id
            )));
        }
        transport.push(TransportMethod {
            id: m.id.clone(),
            part,
            from,
            to,
            c: [m.c1, m.c2, m.c3],
            cargo_volume: m.cargo_volume,
        });
    }

    let mut feasible = Vec::with_capacity(raw.feasible.len());
    let mut seen = HashSet::new();
    for f in &raw.feasible {
        let part = index_of(&part_idx, &f.part, "part", "feasible option")?;
        let site = index_of(&site_idx, &f.site, "site", "feasible option")?;
        let supplier = index_of(&supplier_idx, &f.supplier, "supplier", "feasible option")?;
        if !(f.production_time >= 0.0) {
            return Err(Error::Validation(format!(
                "feasible option for part '{}': production_time must be non-negative",
                f.part
            )));
        }
        if !seen.insert((part, site, supplier)) {
            return Err(Error::Validation(format!(
                "duplicate feasible option (part '{}', site '{}', supplier '{}')",
                f.part, f.site, f.supplier
            )));
        }
        feasible.push(FeasibleOption {
            part,
            site,
            supplier,
            production_time: f.production_time,
        });
    }

    build(
        parts,
        sites,
        raw.warehouses,
        suppliers,
        raw.regions,
        transport,
        feasible,
    )
}

fn build(
    parts: Vec<Part>,
    sites: Vec<Site>,
    warehouses: Vec<String>,
    suppliers: Vec<Supplier>,
    regions: Vec<String>,
    transport: Vec<TransportMethod>,
    feasible: Vec<FeasibleOption>,
) -> Result<ProblemInstance> {
    let n = parts.len();
    if n == 0 {
        return Err(Error::Validation("instance has no parts".into()));
    }
    let roots: Vec<usize> = (0..n).filter(|&i| parts[i].parent.is_none()).collect();
    if roots.len() != 1 {
        return Err(Error::Structural(format!(
            "expected exactly one root part, found {}",
            roots.len()
        )));
    }
    let root = roots[0];

    let mut children = vec![Vec::new(); n];
    for (i, p) in parts.iter().enumerate() {
        if let Some(j) = p.parent {
            children[j].push(i);
        }
    }

    let levels = levels_from_tree(&parts, root, &children)?;

    let mut options = vec![Vec::new(); n];
    for (idx, f) in feasible.iter().enumerate() {
        options[f.part].push(idx);
    }
    for (i, opts) in options.iter().enumerate() {
        if opts.is_empty() {
            return Err(Error::Validation(format!(
                "part '{}' has no feasible site-supplier option",
                parts[i].id
            )));
        }
    }

    let mut methods_of_part = vec![Vec::new(); n];
    for (idx, m) in transport.iter().enumerate() {
        methods_of_part[m.part].push(idx);
    }

    let mut assignable_sites = vec![Vec::new(); n];
    let mut assignable_regions = vec![Vec::new(); n];
    for (i, opts) in options.iter().enumerate() {
        let mut ks: Vec<usize> = opts.iter().map(|&o| feasible[o].site).collect();
        ks.sort_unstable();
        ks.dedup();
        let mut vs: Vec<usize> = ks.iter().map(|&k| sites[k].region).collect();
        vs.sort_unstable();
        vs.dedup();
        assignable_sites[i] = ks;
        assignable_regions[i] = vs;
    }

    let num_nodes = sites.len() + warehouses.len();
    let n_sites = sites.len();
    let mut immobile = vec![true; n];
    for i in 0..n {
        // R^i is empty iff no site can reach another site (or itself over a
        // non-empty route) on the part's transport graph.
        let mut adj = vec![Vec::new(); num_nodes];
        for &m in &methods_of_part[i] {
            adj[transport[m].from].push(transport[m].to);
        }
        'outer: for start in 0..n_sites {
            let mut seen = vec![false; num_nodes];
            let mut stack: Vec<usize> = adj[start].clone();
            while let Some(node) = stack.pop() {
                if node < n_sites {
                    immobile[i] = false;
                    break 'outer;
                }
                if !seen[node] {
                    seen[node] = true;
                    stack.extend(adj[node].iter().copied());
                }
            }
        }
    }

    let total_value: f64 = parts.iter().map(|p| p.value).sum();

    Ok(ProblemInstance {
        parts,
        sites,
        warehouses,
        suppliers,
        regions,
        transport,
        feasible,
        root,
        children,
        levels,
        options,
        methods_of_part,
        assignable_sites,
        assignable_regions,
        immobile,
        total_value,
    })
}

/// Level of each part: root has level 0, children one more than their parent.
pub fn levels_from_tree(parts: &[Part], root: usize, children: &[Vec<usize>]) -> Result<Vec<u32>> {
    let n = parts.len();
    let mut levels = vec![u32::MAX; n];
    let mut stack = vec![(root, 0u32)];
    let mut visited = 0usize;
    while let Some((i, level)) = stack.pop() {
        if levels[i] != u32::MAX {
            return Err(Error::Structural(format!(
                "part '{}' reached twice; parent links do not form a tree",
                parts[i].id
            )));
        }
        levels[i] = level;
        visited += 1;
        for &c in &children[i] {
            stack.push((c, level + 1));
        }
    }
    if visited != n {
        let orphan = (0..n).find(|&i| levels[i] == u32::MAX).unwrap();
        return Err(Error::Structural(format!(
            "part '{}' is not connected to the root; cycle in parent links",
            parts[orphan].id
        )));
    }
    Ok(levels)
}

/// Map part id -> level, recomputed from the stored tree.
pub fn part_levels(instance: &ProblemInstance) -> Result<HashMap<String, u32>> {
    let levels = levels_from_tree(&instance.parts, instance.root, &instance.children)?;
    Ok(instance
        .parts
        .iter()
        .zip(levels)
        .map(|(p, l)| (p.id.clone(), l))
        .collect())
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorParams {
    pub n_parts: usize,
    pub n_sites: usize,
    pub n_suppliers: usize,
    pub n_warehouses: usize,
    pub n_regions: usize,
    /// Probability of extra transport edges beyond the planted ones, in (0, 1].
    pub edge_density: f64,
    /// Primary source share used for every part, in [0.5, 1].
    pub alpha: f64,
    pub seed: u64,
}

/// Generates a desk-scale instance with a planted feasible assignment.
///
/// The generator first plants a primary/secondary assignment for every part,
/// then emits transport edges connecting the planted sites along the PBS and
/// workshare windows wide enough to admit the planted solution. The output is
/// deterministic for a fixed seed and always passes load-time validation.
pub fn generate_synthetic(params: &GeneratorParams) -> Result<ProblemInstance> {
    if params.n_parts < 1 || params.n_sites < 1 || params.n_suppliers < 1 || params.n_regions < 1 {
        return Err(Error::Generation(
            "n_parts, n_sites, n_suppliers and n_regions must all be at least 1".into(),
        ));
    }
    if !(params.edge_density > 0.0 && params.edge_density <= 1.0) {
        return Err(Error::Generation("edge_density must lie in (0, 1]".into()));
    }
    if !(0.5..=1.0).contains(&params.alpha) {
        return Err(Error::Generation("alpha must lie in [0.5, 1]".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.n_parts;

    let regions: Vec<String> = (0..params.n_regions).map(|r| format!("R{r}")).collect();

    // Round-robin keeps the region distribution as even as possible, which
    // makes distinct-region double sourcing attainable.
    let mut parts = Vec::with_capacity(n);
    for i in 0..n {
        let parent = if i == 0 {
            None
        } else {
            Some(rng.random_range(0..i))
        };
        parts.push(Part {
            id: format!("P{i}"),
            value: (rng.random_range(10..100) as f64) / 10.0,
            volume: (rng.random_range(5..50) as f64) / 10.0,
            parent,
            alpha: params.alpha,
        });
    }

    let warehouses: Vec<String> = (0..params.n_warehouses).map(|w| format!("W{w}")).collect();

    // Plant an assignment: primary and secondary (site, supplier) per part.
    // Secondary differs in site, and in region when more than one region has a
    // site; single-site instances fall back to aliased sourcing.
    let site_region: Vec<usize> = (0..params.n_sites).map(|k| k % params.n_regions).collect();
    let mut planted: Vec<[(usize, usize); 2]> = Vec::with_capacity(n);
    for _ in 0..n {
        let k1 = rng.random_range(0..params.n_sites);
        let u1 = rng.random_range(0..params.n_suppliers);
        let (k2, u2) = if params.n_sites >= 2 {
            let other_region: Vec<usize> = (0..params.n_sites)
                .filter(|&k| k != k1 && site_region[k] != site_region[k1])
                .collect();
            let pool: Vec<usize> = if other_region.is_empty() {
                (0..params.n_sites).filter(|&k| k != k1).collect()
            } else {
                other_region
            };
            (
                *pool.choose(&mut rng).unwrap(),
                rng.random_range(0..params.n_suppliers),
            )
        } else {
            (k1, u1)
        };
        planted.push([(k1, u1), (k2, u2)]);
    }

    // Feasible options: the planted pairs plus random extras.
    let mut option_set: Vec<HashSet<(usize, usize)>> = vec![HashSet::new(); n];
    for i in 0..n {
        option_set[i].insert(planted[i][0]);
        option_set[i].insert(planted[i][1]);
        for k in 0..params.n_sites {
            for u in 0..params.n_suppliers {
                if rng.random::<f64>() < params.edge_density * 0.5 {
                    option_set[i].insert((k, u));
                }
            }
        }
    }

    // Transport: direct edges between every planted child/parent site pair,
    // then random extra edges (optionally via a warehouse) per edge_density.
    let n_sites = params.n_sites;
    let mut transport = Vec::new();
    let mut edge_set: HashSet<(usize, usize, usize)> = HashSet::new();
    let add_edge =
        |transport: &mut Vec<TransportMethod>,
         edge_set: &mut HashSet<(usize, usize, usize)>,
         rng: &mut ChaCha8Rng,
         part: usize,
         from: usize,
         to: usize,
         volume: f64| {
            if from == to || !edge_set.insert((part, from, to)) {
                return;
            }
            let id = format!("M{}", transport.len());
            transport.push(TransportMethod {
                id,
                part,
                from,
                to,
                c: [
                    (rng.random_range(1..100) as f64) / 10.0,
                    (rng.random_range(1..100) as f64) / 10.0,
                    (rng.random_range(1..100) as f64) / 10.0,
                ],
                cargo_volume: volume * (1.0 + rng.random_range(0..30) as f64 / 10.0),
            });
        };

    for i in 0..n {
        if let Some(j) = parts[i].parent {
            for &(k, _) in &planted[i] {
                for &(l, _) in &planted[j] {
                    add_edge(
                        &mut transport,
                        &mut edge_set,
                        &mut rng,
                        i,
                        k,
                        l,
                        parts[i].volume,
                    );
                }
            }
        }
        if params.n_sites >= 2 {
            for from in 0..n_sites {
                for to in 0..n_sites {
                    if from != to && rng.random::<f64>() < params.edge_density * 0.3 {
                        add_edge(
                            &mut transport,
                            &mut edge_set,
                            &mut rng,
                            i,
                            from,
                            to,
                            parts[i].volume,
                        );
                    }
                }
            }
            for w in 0..params.n_warehouses {
                let wh = n_sites + w;
                for k in 0..n_sites {
                    if rng.random::<f64>() < params.edge_density * 0.3 {
                        add_edge(
                            &mut transport,
                            &mut edge_set,
                            &mut rng,
                            i,
                            k,
                            wh,
                            parts[i].volume,
                        );
                    }
                    if rng.random::<f64>() < params.edge_density * 0.3 {
                        add_edge(
                            &mut transport,
                            &mut edge_set,
                            &mut rng,
                            i,
                            wh,
                            k,
                            parts[i].volume,
                        );
                    }
                }
            }
        }
    }

    // Workshare windows derived from the planted assignment: lower bounds stay
    // at zero, upper bounds leave headroom above the planted workshare.
    let total_value: f64 = parts.iter().map(|p| p.value).sum();
    let mut site_ws = vec![0.0f64; params.n_sites];
    let mut supplier_ws = vec![0.0f64; params.n_suppliers];
    for i in 0..n {
        let v = 100.0 * parts[i].value / total_value;
        let aliased = params.n_sites < 2;
        for (a, &(k, u)) in planted[i].iter().enumerate() {
            let share = if aliased {
                if a == 0 {
                    1.0
                } else {
                    0.0
                }
            } else if a == 0 {
                params.alpha
            } else {
                1.0 - params.alpha
            };
            site_ws[k] += v * share;
            supplier_ws[u] += v * share;
        }
    }

    let sites: Vec<Site> = (0..params.n_sites)
        .map(|k| Site {
            id: format!("K{k}"),
            region: site_region[k],
            ws_min: 0,
            ws_max: ((site_ws[k].ceil() as u32) + 30).min(100),
        })
        .collect();
    let suppliers: Vec<Supplier> = (0..params.n_suppliers)
        .map(|u| {
            let target = (supplier_ws[u].round() as u32).min(100);
            Supplier {
                id: format!("U{u}"),
                ws_min: 0,
                ws_max: ((supplier_ws[u].ceil() as u32) + 30).min(100),
                ws_target: target,
            }
        })
        .collect();
    for (k, s) in sites.iter().enumerate() {
        if (site_ws[k].ceil() as u32) > s.ws_max {
            return Err(Error::Generation(format!(
                "site workshare window cannot admit the planted solution at site {k}"
            )));
        }
    }

    let feasible: Vec<FeasibleOption> = (0..n)
        .flat_map(|i| {
            let mut opts: Vec<(usize, usize)> = option_set[i].iter().copied().collect();
            opts.sort_unstable();
            opts.into_iter().map(move |(site, supplier)| (i, site, supplier))
        })
        .map(|(part, site, supplier)| FeasibleOption {
            part,
            site,
            supplier,
            production_time: (rng.random_range(0..100) as f64) / 10.0,
        })
        .collect();

    build(
        parts,
        sites,
        warehouses,
        suppliers,
        regions,
        transport,
        feasible,
    )
}
