//! Pareto analysis over the four reported indicator values of a solution
//! set: non-dominated filtering, 2-D projections for plotting, and an exact
//! hypervolume with respect to a fixed reference point. All indicators are
//! minimized.

use crate::{Error, Result};

pub type KpiPoint = [f64; 4];

/// Reference point for hypervolume comparisons.
pub const DEFAULT_REFERENCE: KpiPoint = [3.0, 5.0, 4.5, 5.5];

/// `a` dominates `b` when it is no worse everywhere and strictly better
/// somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Non-dominated subset, in first-occurrence order. Exact duplicates are
/// kept once: they do not dominate each other, but repeating them adds no
/// information.
pub fn pareto_filter(points: &[KpiPoint]) -> Vec<KpiPoint> {
    let mut front: Vec<KpiPoint> = Vec::new();
    for p in points {
        if front.contains(p) {
            continue;
        }
        if points.iter().any(|q| dominates(q, p)) {
            continue;
        }
        front.push(*p);
    }
    front
}

/// Non-dominated front of the projection onto an indicator pair.
pub fn projected_pareto(points: &[KpiPoint], dims: (usize, usize)) -> Result<Vec<[f64; 2]>> {
    if dims.0 >= 4 || dims.1 >= 4 || dims.0 == dims.1 {
        return Err(Error::Contract("projection needs two distinct indicator axes".into()));
    }
    let projected: Vec<[f64; 2]> = points.iter().map(|p| [p[dims.0], p[dims.1]]).collect();
    let mut front: Vec<[f64; 2]> = Vec::new();
    for p in &projected {
        if front.contains(p) {
            continue;
        }
        if projected.iter().any(|q| dominates(q, p)) {
            continue;
        }
        front.push(*p);
    }
    Ok(front)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypervolumeResult {
    pub value: f64,
    /// Points outside the reference box, excluded from the measure.
    pub dropped: usize,
    pub warning: Option<String>,
}

/// Exact dominated hypervolume of the region between the front and the
/// reference point, by recursive dimension sweep. Points that do not
/// strictly dominate the reference are dropped with a warning; an empty
/// (or fully dropped) set measures zero.
pub fn hypervolume(points: &[KpiPoint], reference: &KpiPoint) -> HypervolumeResult {
    let inside: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(x, r)| x < r))
        .map(|p| p.to_vec())
        .collect();
    let dropped = points.len() - inside.len();
    let warning = if dropped > 0 {
        Some(format!("{dropped} point(s) outside the reference box were ignored"))
    } else {
        None
    };
    HypervolumeResult {
        value: hv_recursive(&inside, reference),
        dropped,
        warning,
    }
}

/// Sweep the first coordinate; each slab contributes its width times the
/// hypervolume of the points already passed, projected onto the remaining
/// coordinates.
fn hv_recursive(points: &[Vec<f64>], reference: &[f64]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    if reference.len() == 1 {
        let best = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        return (reference[0] - best).max(0.0);
    }
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut total = 0.0;
    for (i, p) in sorted.iter().enumerate() {
        let next = if i + 1 < sorted.len() {
            sorted[i + 1][0]
        } else {
            reference[0]
        };
        let width = next - p[0];
        if width <= 0.0 {
            continue;
        }
        let slab: Vec<Vec<f64>> = sorted[..=i].iter().map(|q| q[1..].to_vec()).collect();
        total += width * hv_recursive(&nd_subset(&slab), &reference[1..]);
    }
    total
}

fn nd_subset(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut front: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if front.contains(p) {
            continue;
        }
        if points.iter().any(|q| dominates(q, p)) {
            continue;
        }
        front.push(p.clone());
    }
    front
}
