//! Dynamic anisotropic smoothing: derivative-free online tuning of solver
//! hyperparameters with an adaptive Gaussian sample cloud. The cloud has
//! center theta and covariance L L^T; each step draws an antithetic batch,
//! scores it with the caller's cost function, and moves theta along the
//! LL^T-preconditioned descent estimate while adapting L with a curvature
//! estimate plus a shrinking regularizer.
//!
//! Positive scale-free parameters are tuned in log space via per-parameter
//! specs; all sampling is deterministic given (state, seed, step).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// One named hyperparameter dimension with its valid range.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    /// Tune ln(value) instead of the value itself.
    pub log_scale: bool,
}

impl ParamSpec {
    pub fn new(name: &str, lo: f64, hi: f64, log_scale: bool) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Validation(format!(
                "parameter '{name}': empty range [{lo}, {hi}]"
            )));
        }
        if log_scale && lo <= 0.0 {
            return Err(Error::Validation(format!(
                "parameter '{name}': log scale needs a positive range"
            )));
        }
        Ok(ParamSpec {
            name: name.into(),
            lo,
            hi,
            log_scale,
        })
    }

    fn to_internal(&self, v: f64) -> f64 {
        if self.log_scale {
            v.ln()
        } else {
            v
        }
    }

    fn to_external(&self, v: f64) -> f64 {
        // The exp of a clamped log can overshoot the bound by an ulp.
        if self.log_scale {
            v.exp().clamp(self.lo, self.hi)
        } else {
            v.clamp(self.lo, self.hi)
        }
    }

    fn internal_bounds(&self) -> (f64, f64) {
        (self.to_internal(self.lo), self.to_internal(self.hi))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DasState {
    pub specs: Vec<ParamSpec>,
    /// Cloud center, internal coordinates.
    pub theta: Vec<f64>,
    /// Lower-triangular shape factor; covariance is L L^T.
    pub l: Vec<Vec<f64>>,
    pub alpha_theta: f64,
    pub alpha_l: f64,
    /// Constant shrink regularizer on L.
    pub lambda: f64,
    pub eta_theta: f64,
    pub eta_l: f64,
    /// Samples per step.
    pub r: usize,
    pub seed: u64,
    pub step: usize,
    /// Set when an update had to be skipped.
    pub warning: Option<String>,
}

const MIN_DIAG: f64 = 1e-12;

impl DasState {
    /// Center starts mid-range with a diagonal L covering a fifth of each
    /// range.
    pub fn new(specs: Vec<ParamSpec>, r: usize, seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Validation("no parameters to tune".into()));
        }
        if r < 2 {
            return Err(Error::Validation("need at least two samples per step".into()));
        }
        let d = specs.len();
        let mut theta = Vec::with_capacity(d);
        let mut l = vec![vec![0.0; d]; d];
        for (i, spec) in specs.iter().enumerate() {
            let (lo, hi) = spec.internal_bounds();
            theta.push(0.5 * (lo + hi));
            l[i][i] = (hi - lo) / 5.0;
        }
        Ok(DasState {
            specs,
            theta,
            l,
            alpha_theta: 0.5,
            alpha_l: 0.2,
            lambda: 0.05,
            eta_theta: 0.0,
            eta_l: 0.0,
            r,
            seed,
            step: 0,
            warning: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.specs.len()
    }

    /// Current center in external (caller-facing) coordinates.
    pub fn center(&self) -> Vec<f64> {
        self.theta
            .iter()
            .zip(&self.specs)
            .map(|(&t, spec)| spec.to_external(t.clamp(spec.internal_bounds().0, spec.internal_bounds().1)))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.theta.len() != d || self.l.len() != d {
            return Err(Error::Contract("state dimensions disagree".into()));
        }
        for (i, row) in self.l.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Contract("shape factor is not square".into()));
            }
            if row[i] <= 0.0 {
                return Err(Error::Contract("shape factor diagonal must be positive".into()));
            }
            for (j, &v) in row.iter().enumerate() {
                if j > i && v != 0.0 {
                    return Err(Error::Contract("shape factor must be lower-triangular".into()));
                }
            }
        }
        Ok(())
    }

    fn step_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(
            self.seed ^ (self.step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )
    }
}

fn mat_vec_lower(l: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let d = z.len();
    (0..d)
        .map(|i| (0..=i).map(|j| l[i][j] * z[j]).sum())
        .collect()
}

/// Forward substitution: solves L z = d.
fn solve_lower(l: &[Vec<f64>], d: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut z = vec![0.0; n];
    for i in 0..n {
        let partial: f64 = (0..i).map(|j| l[i][j] * z[j]).sum();
        z[i] = (d[i] - partial) / l[i][i].max(MIN_DIAG);
    }
    z
}

/// Draws the R-sample antithetic cloud around the current center, clamped to
/// the parameter ranges and returned in external coordinates. Pure: the same
/// state always yields the same cloud.
pub fn das_sample(state: &DasState) -> Result<Vec<Vec<f64>>> {
    state.validate()?;
    let mut rng = state.step_rng();
    let d = state.dim();
    let mut out = Vec::with_capacity(state.r);
    while out.len() < state.r {
        let z: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let dir = mat_vec_lower(&state.l, &z);
        for sign in [1.0, -1.0] {
            if out.len() == state.r {
                break;
            }
            let sample: Vec<f64> = (0..d)
                .map(|i| {
                    let (lo, hi) = state.specs[i].internal_bounds();
                    state.specs[i].to_external((state.theta[i] + sign * dir[i]).clamp(lo, hi))
                })
                .collect();
            out.push(sample);
        }
    }
    Ok(out)
}

/// One explicit Euler step of the smoothing flow. The smoothed cost h is the
/// softmin-weighted cloud average; its theta-gradient comes from the
/// score-function estimator, which after LL^T preconditioning reduces to the
/// cost-weighted sample displacements. Non-finite costs drop their samples;
/// an empty batch leaves the distribution untouched with a warning.
pub fn das_update(state: &DasState, samples: &[Vec<f64>], costs: &[f64]) -> Result<DasState> {
    state.validate()?;
    if samples.len() != costs.len() {
        return Err(Error::Contract("one cost per sample required".into()));
    }
    let d = state.dim();
    let mut next = state.clone();
    next.step += 1;
    next.warning = None;

    // Displacements in internal coordinates, finite costs only.
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<f64> = Vec::new();
    for (sample, &cost) in samples.iter().zip(costs) {
        if !cost.is_finite() || sample.len() != d {
            continue;
        }
        let dir: Vec<f64> = sample
            .iter()
            .zip(&state.specs)
            .zip(&state.theta)
            .map(|((&v, spec), &t)| spec.to_internal(v) - t)
            .collect();
        dirs.push(dir);
        kept.push(cost);
    }
    if kept.is_empty() {
        next.warning = Some("all sample costs were non-finite; update skipped".into());
        return Ok(next);
    }
    let m = kept.len() as f64;
    let mean = kept.iter().sum::<f64>() / m;
    let var = kept.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / m;
    let spread = var.sqrt();

    // Softmin-smoothed cost over the cloud.
    let min_c = kept.iter().cloned().fold(f64::INFINITY, f64::min);
    let tau = spread.max(1e-12);
    let raw: Vec<f64> = kept.iter().map(|c| (-(c - min_c) / tau).exp()).collect();
    let z_w: f64 = raw.iter().sum();
    let h: f64 = kept
        .iter()
        .zip(&raw)
        .map(|(c, w)| c * w / z_w)
        .sum();

    let mut rng = {
        // Distinct stream from the sampling draw of the same step.
        ChaCha8Rng::seed_from_u64(
            state.seed ^ 0xD1B5_4A32_D192_ED03 ^ (state.step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        )
    };

    if spread > 1e-15 {
        // Preconditioned descent: (1/m) sum ((c - h)/spread) * d_k estimates
        // LL^T grad h up to a positive scale.
        let mut g = vec![0.0; d];
        for (dir, &c) in dirs.iter().zip(&kept) {
            let wgt = (c - h) / spread / m;
            for i in 0..d {
                g[i] += wgt * dir[i];
            }
        }
        for i in 0..d {
            let noise: f64 = if next.eta_theta > 0.0 {
                next.eta_theta * rng.sample::<f64, _>(StandardNormal) * state.l[i][i]
            } else {
                0.0
            };
            let (lo, hi) = state.specs[i].internal_bounds();
            next.theta[i] = (state.theta[i] - state.alpha_theta * g[i] + noise).clamp(lo, hi);
        }

        // Curvature estimate in whitened coordinates: G = (1/m) sum w (zz^T - I),
        // clamped so the multiplicative L update below can never flip the
        // diagonal sign.
        let mut curv = vec![vec![0.0; d]; d];
        for (dir, &c) in dirs.iter().zip(&kept) {
            let z = solve_lower(&state.l, dir);
            let wgt = (c - h) / spread / m;
            for i in 0..d {
                for j in 0..=i {
                    let outer = z[i] * z[j] - if i == j { 1.0 } else { 0.0 };
                    curv[i][j] += wgt * outer;
                }
            }
        }
        for row in curv.iter_mut() {
            for v in row.iter_mut() {
                *v = v.clamp(-1.0, 1.0);
            }
        }
        // L <- L (I - alpha_l (G + lambda I)), staying lower-triangular.
        let mut l_new = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..=i {
                let mut v = state.l[i][j] * (1.0 - state.alpha_l * state.lambda);
                for k in j..=i {
                    v -= state.alpha_l * state.l[i][k] * curv[k][j];
                }
                if next.eta_l > 0.0 {
                    v += next.eta_l * rng.sample::<f64, _>(StandardNormal);
                }
                l_new[i][j] = v;
            }
        }
        next.l = l_new;
    } else {
        // Flat batch: no direction information, only the regular shrink.
        for i in 0..d {
            for j in 0..=i {
                next.l[i][j] = state.l[i][j] * (1.0 - state.alpha_l * state.lambda);
            }
        }
    }

    // Re-factorization guard: positive diagonal, finite entries, bounded by
    // the parameter ranges.
    for i in 0..d {
        let (lo, hi) = state.specs[i].internal_bounds();
        let cap = hi - lo;
        let floor = (1e-9 * cap).max(MIN_DIAG);
        for j in 0..=i {
            if !next.l[i][j].is_finite() {
                next.l[i][j] = if i == j { floor } else { 0.0 };
                next.warning = Some("non-finite shape entry reset".into());
            }
            next.l[i][j] = next.l[i][j].clamp(-cap, cap);
        }
        if next.l[i][i] < floor {
            next.l[i][i] = floor;
        }
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TuningRow {
    pub step: usize,
    pub theta: Vec<f64>,
    pub mean_cost: f64,
    pub best_cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TuningTrace {
    pub rows: Vec<TuningRow>,
}

impl TuningTrace {
    pub fn record(&mut self, state: &DasState, costs: &[f64]) {
        let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
        let mean = if finite.is_empty() {
            f64::NAN
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let best = finite.iter().cloned().fold(f64::INFINITY, f64::min);
        self.rows.push(TuningRow {
            step: state.step,
            theta: state.center(),
            mean_cost: mean,
            best_cost: best,
        });
    }

    pub fn write_csv<W: Write>(&self, names: &[String], mut out: W) -> Result<()> {
        write!(out, "step")?;
        for name in names {
            write!(out, ",{name}")?;
        }
        writeln!(out, ",mean_cost,best_cost")?;
        for row in &self.rows {
            write!(out, "{}", row.step)?;
            for t in &row.theta {
                write!(out, ",{t}")?;
            }
            writeln!(out, ",{},{}", row.mean_cost, row.best_cost)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_specs(d: usize) -> Vec<ParamSpec> {
        (0..d)
            .map(|i| ParamSpec::new(&format!("p{i}"), -10.0, 10.0, false).unwrap())
            .collect()
    }

    #[test]
    fn sampling_is_deterministic() {
        let state = DasState::new(plain_specs(3), 4, 7).unwrap();
        let a = das_sample(&state).unwrap();
        let b = das_sample(&state).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn degenerate_covariance_collapses_to_center() {
        let mut state = DasState::new(plain_specs(2), 6, 1).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                state.l[i][j] = if i == j { 1e-12 } else { 0.0 };
            }
        }
        for sample in das_sample(&state).unwrap() {
            for (v, t) in sample.iter().zip(&state.theta) {
                assert!((v - t).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sample_covariance_matches_shape() {
        let mut state = DasState::new(plain_specs(2), 4, 3).unwrap();
        state.l[0][0] = 1.0;
        state.l[1][0] = 0.5;
        state.l[1][1] = 0.8;
        // Cov = LL^T = [[1, .5], [.5, .89]].
        let target = [[1.0, 0.5], [0.5, 0.89]];
        let mut acc = [[0.0f64; 2]; 2];
        let mut count = 0usize;
        for step in 0..2500 {
            state.step = step;
            for sample in das_sample(&state).unwrap() {
                let d0 = sample[0] - state.theta[0];
                let d1 = sample[1] - state.theta[1];
                acc[0][0] += d0 * d0;
                acc[0][1] += d0 * d1;
                acc[1][0] += d1 * d0;
                acc[1][1] += d1 * d1;
                count += 1;
            }
        }
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let est = acc[i][j] / count as f64;
                err += (est - target[i][j]) * (est - target[i][j]);
                norm += target[i][j] * target[i][j];
            }
        }
        assert!(
            (err.sqrt() / norm.sqrt()) < 0.05,
            "relative Frobenius error {}",
            err.sqrt() / norm.sqrt()
        );
    }

    #[test]
    fn flat_costs_leave_center_unchanged() {
        let state = DasState::new(plain_specs(3), 6, 5).unwrap();
        let samples = das_sample(&state).unwrap();
        let costs = vec![2.5; samples.len()];
        let next = das_update(&state, &samples, &costs).unwrap();
        assert_eq!(next.theta, state.theta);
    }

    #[test]
    fn moves_toward_clear_best_sample() {
        let state = DasState::new(plain_specs(3), 8, 9).unwrap();
        let samples = das_sample(&state).unwrap();
        let mut costs = vec![1.0; samples.len()];
        costs[2] = 0.0;
        let next = das_update(&state, &samples, &costs).unwrap();
        let toward: f64 = (0..3)
            .map(|i| (next.theta[i] - state.theta[i]) * (samples[2][i] - state.theta[i]))
            .sum();
        assert!(toward > 0.0, "inner product {toward}");
    }

    #[test]
    fn linear_cost_gives_preconditioned_gradient_direction() {
        let mut state = DasState::new(plain_specs(2), 8, 11).unwrap();
        state.l[0][0] = 2.0;
        state.l[1][0] = 1.0;
        state.l[1][1] = 0.5;
        let grad = [1.0, -2.0];
        let samples = das_sample(&state).unwrap();
        let costs: Vec<f64> = samples
            .iter()
            .map(|s| grad[0] * s[0] + grad[1] * s[1])
            .collect();
        let next = das_update(&state, &samples, &costs).unwrap();
        let delta = [
            next.theta[0] - state.theta[0],
            next.theta[1] - state.theta[1],
        ];
        // With antithetic symmetric samples the finite-sample update is
        // exactly -(sum d d^T) grad up to a positive scale: the empirical
        // preconditioner standing in for LL^T.
        let mut want = [0.0f64; 2];
        for s in &samples {
            let d = [s[0] - state.theta[0], s[1] - state.theta[1]];
            let gd = grad[0] * d[0] + grad[1] * d[1];
            want[0] -= gd * d[0];
            want[1] -= gd * d[1];
        }
        let dot = delta[0] * want[0] + delta[1] * want[1];
        let cos = dot
            / (delta[0].hypot(delta[1]) * want[0].hypot(want[1]));
        assert!(cos > 0.999, "cosine with preconditioned gradient: {cos}");
    }

    #[test]
    fn non_finite_costs_are_dropped() {
        let state = DasState::new(plain_specs(2), 4, 13).unwrap();
        let samples = das_sample(&state).unwrap();
        let costs = vec![f64::NAN; samples.len()];
        let next = das_update(&state, &samples, &costs).unwrap();
        assert_eq!(next.theta, state.theta);
        assert_eq!(next.l, state.l);
        assert!(next.warning.is_some());
        assert_eq!(next.step, state.step + 1);
    }

    #[test]
    fn shape_stays_lower_triangular_positive() {
        let mut state = DasState::new(plain_specs(3), 6, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..300 {
            let samples = das_sample(&state).unwrap();
            let costs: Vec<f64> = samples
                .iter()
                .map(|_| rng.random_range(-5.0..5.0))
                .collect();
            state = das_update(&state, &samples, &costs).unwrap();
            for i in 0..3 {
                assert!(state.l[i][i] > 0.0);
                for j in (i + 1)..3 {
                    assert_eq!(state.l[i][j], 0.0);
                }
            }
        }
    }

    fn run_quadratic(seed: u64, steps: usize) -> (f64, f64, Vec<f64>) {
        let target = [3.0, -2.0, 5.0];
        let mut state = DasState::new(plain_specs(3), 8, seed).unwrap();
        let dist = |theta: &[f64]| -> f64 {
            theta
                .iter()
                .zip(&target)
                .map(|(t, g)| (t - g) * (t - g))
                .sum::<f64>()
                .sqrt()
        };
        let start = dist(&state.theta);
        let mut means = Vec::new();
        for _ in 0..steps {
            let samples = das_sample(&state).unwrap();
            let costs: Vec<f64> = samples
                .iter()
                .map(|s| {
                    s.iter()
                        .zip(&target)
                        .map(|(v, g)| (v - g) * (v - g))
                        .sum()
                })
                .collect();
            means.push(costs.iter().sum::<f64>() / costs.len() as f64);
            state = das_update(&state, &samples, &costs).unwrap();
        }
        (start, dist(&state.theta), means)
    }

    #[test]
    fn quadratic_cost_converges_ten_fold() {
        let mut hits = 0;
        for seed in 0..20 {
            let (start, end, _) = run_quadratic(seed, 200);
            if end * 10.0 <= start {
                hits += 1;
            }
        }
        assert!(hits >= 18, "only {hits}/20 seeds shrank the distance 10x");
    }

    #[test]
    fn quadratic_cost_moving_average_decreases() {
        let (_, _, means) = run_quadratic(42, 200);
        let window = 20;
        let avg = |slice: &[f64]| slice.iter().sum::<f64>() / slice.len() as f64;
        let first = avg(&means[..window]);
        let last = avg(&means[means.len() - window..]);
        assert!(last < first, "moving average rose: {first} -> {last}");
    }

    #[test]
    fn log_scale_parameters_stay_in_range() {
        let specs = vec![
            ParamSpec::new("steps", 10.0, 10_000.0, true).unwrap(),
            ParamSpec::new("rate", 1e-4, 1.0, true).unwrap(),
        ];
        let mut state = DasState::new(specs, 4, 23).unwrap();
        for step in 0..50 {
            state.step = step;
            for sample in das_sample(&state).unwrap() {
                assert!((10.0..=10_000.0).contains(&sample[0]));
                assert!((1e-4..=1.0).contains(&sample[1]));
            }
        }
    }

    #[test]
    fn trace_csv_shape() {
        let state = DasState::new(plain_specs(2), 4, 1).unwrap();
        let mut trace = TuningTrace::default();
        trace.record(&state, &[1.0, 2.0, f64::NAN]);
        let mut buf = Vec::new();
        let names = vec!["a".to_string(), "b".to_string()];
        trace.write_csv(&names, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,a,b,mean_cost,best_cost\n"));
        assert!(text.contains("1.5,1"));
    }

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
}
