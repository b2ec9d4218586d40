//! Interacting-particle Euler-Maruyama discretization of the controlled
//! mean-field SDE, with law-restart support.
//!
//! Each step freezes the empirical law at the left endpoint, advances every
//! particle by the relaxed drift plus `sigma * dW`, and rebuilds the law at
//! the barrier. Brownian increments come from counter-based streams keyed by
//! `(seed, particle, step)`, so results are bit-identical for any worker
//! count. The empirical law includes all `N` particles; the `O(1/N)`
//! self-interaction bias is accepted.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controls::{policy_measure, FeedbackPolicy};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::linalg::{dist, mat_vec, mean_and_std_error};
use crate::measures::{optimal_coupling, EmpiricalMeasure};
use crate::model::ModelSpec;
use crate::rng::{derive, StreamRng, DOMAIN_INCREMENT, DOMAIN_INIT, DOMAIN_RESAMPLE};

/// A uniform grid of `steps` cells on `[s, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub s: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(s: f64, t_end: f64, steps: usize) -> Result<Self> {
        if s.is_nan() || t_end.is_nan() || s < 0.0 || s >= t_end || !t_end.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "grid needs 0 <= s < t_end, got s = {s}, t_end = {t_end}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidParameter("steps must be >= 1".into()));
        }
        Ok(TimeGrid { s, t_end, steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.s) / self.steps as f64
    }

    /// `t_i = s + i * dt`, with the final node pinned to `t_end` exactly.
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.t_end
        } else {
            self.s + i as f64 * self.dt()
        }
    }

    pub fn n_times(&self) -> usize {
        self.steps + 1
    }

    /// Grid index of `t`, within an absolute tolerance of `1e-9 * dt`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let dt = self.dt();
        let rel = (t - self.s) / dt;
        let idx = rel.round();
        if idx < 0.0 || idx > self.steps as f64 || (rel - idx).abs() * dt > 1e-9 * dt.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "time {t} is not on the grid [{}..{}] with {} steps",
                self.s, self.t_end, self.steps
            )));
        }
        Ok(idx as usize)
    }
}

/// The law of the initial condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Dirac { point: Vec<f64> },
    GaussianIso { mean: Vec<f64>, std_dev: f64 },
    UniformBox { bounds: BoundingBox },
    Empirical { measure: EmpiricalMeasure },
}

impl InitialLaw {
    pub fn dirac(point: &[f64]) -> Self {
        InitialLaw::Dirac {
            point: point.to_vec(),
        }
    }

    pub fn empirical(measure: EmpiricalMeasure) -> Self {
        InitialLaw::Empirical { measure }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::Dirac { point } => point.len(),
            InitialLaw::GaussianIso { mean, .. } => mean.len(),
            InitialLaw::UniformBox { bounds } => bounds.dim(),
            InitialLaw::Empirical { measure } => measure.dim(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            InitialLaw::Dirac { point } => {
                if point.is_empty() || point.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        what: "initial point",
                    });
                }
            }
            InitialLaw::GaussianIso { mean, std_dev } => {
                if mean.is_empty() || mean.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { what: "initial mean" });
                }
                if std_dev.is_nan() || *std_dev < 0.0 || !std_dev.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "initial std_dev {std_dev} must be nonnegative"
                    )));
                }
            }
            InitialLaw::UniformBox { .. } | InitialLaw::Empirical { .. } => {}
        }
        Ok(())
    }

    fn sample(&self, rng: &mut StreamRng, cumsum: Option<&[f64]>, out: &mut [f64]) {
        match self {
            InitialLaw::Dirac { point } => out.copy_from_slice(point),
            InitialLaw::GaussianIso { mean, std_dev } => {
                for (o, m) in out.iter_mut().zip(mean) {
                    *o = m + std_dev * rng.normal();
                }
            }
            InitialLaw::UniformBox { bounds } => {
                for ((o, l), h) in out.iter_mut().zip(&bounds.lo).zip(&bounds.hi) {
                    *o = rng.uniform_in(*l, *h);
                }
            }
            InitialLaw::Empirical { measure } => {
                let cumsum = cumsum.expect("empirical sampling needs a cumsum table");
                let idx = weighted_index(cumsum, rng.uniform());
                out.copy_from_slice(measure.atom(idx));
            }
        }
    }

    /// Quantile function for one-dimensional laws (used by the coupled
    /// sampler).
    fn quantile_1d(&self, v: f64, sorted: Option<&[(f64, f64)]>) -> f64 {
        match self {
            InitialLaw::Dirac { point } => point[0],
            InitialLaw::GaussianIso { mean, std_dev } => mean[0] + std_dev * inverse_normal_cdf(v),
            InitialLaw::UniformBox { bounds } => bounds.lo[0] + v * (bounds.hi[0] - bounds.lo[0]),
            InitialLaw::Empirical { .. } => {
                let sorted = sorted.expect("empirical quantile needs sorted atoms");
                let mut acc = 0.0;
                for &(x, w) in sorted {
                    acc += w;
                    if v <= acc {
                        return x;
                    }
                }
                sorted.last().expect("nonempty").0
            }
        }
    }
}

fn weighted_index(cumsum: &[f64], v: f64) -> usize {
    let target = v * cumsum.last().copied().unwrap_or(1.0);
    match cumsum.binary_search_by(|c| c.partial_cmp(&target).unwrap()) {
        Ok(i) => (i + 1).min(cumsum.len() - 1),
        Err(i) => i.min(cumsum.len() - 1),
    }
}

fn empirical_cumsum(measure: &EmpiricalMeasure) -> Vec<f64> {
    let mut acc = 0.0;
    measure
        .weights()
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Acklam's rational approximation of the standard normal quantile
/// (absolute error below 1.2e-8; plenty for coupling draws).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// `N` particle trajectories on a grid with full noise provenance.
/// Rebuilding from the same `(model, policy, grid, init, n, seed)` reproduces
/// the states bit-exactly.
#[derive(Debug, Clone)]
pub struct PathBundle {
    grid: TimeGrid,
    n_particles: usize,
    dim: usize,
    seed: u64,
    /// `[particle][time index][coordinate]`, flat.
    states: Vec<f64>,
    /// `[particle][step][coordinate]`, flat.
    noises: Vec<f64>,
    /// Derived stream identifier per particle.
    particle_streams: Vec<u64>,
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn particle_streams(&self) -> &[u64] {
        &self.particle_streams
    }

    pub fn state(&self, particle: usize, time_index: usize) -> &[f64] {
        let stride = self.grid.n_times() * self.dim;
        let base = particle * stride + time_index * self.dim;
        &self.states[base..base + self.dim]
    }

    pub fn noise(&self, particle: usize, step: usize) -> &[f64] {
        let stride = self.grid.steps * self.dim;
        let base = particle * stride + step * self.dim;
        &self.noises[base..base + self.dim]
    }

    pub fn raw_states(&self) -> &[f64] {
        &self.states
    }

    /// Empirical law of the ensemble at grid node `i` (uniform weights).
    pub fn empirical_at(&self, time_index: usize) -> EmpiricalMeasure {
        let mut flat = Vec::with_capacity(self.n_particles * self.dim);
        for p in 0..self.n_particles {
            flat.extend_from_slice(self.state(p, time_index));
        }
        EmpiricalMeasure::from_flat(self.dim, flat, None).expect("states are finite")
    }

    pub fn terminal_law(&self) -> EmpiricalMeasure {
        self.empirical_at(self.grid.steps)
    }

    /// Per-particle running supremum of `|X_t|` over the whole grid.
    pub fn sup_abs_per_particle(&self) -> Vec<f64> {
        (0..self.n_particles)
            .map(|p| {
                (0..self.grid.n_times())
                    .map(|i| crate::linalg::norm(self.state(p, i)))
                    .fold(0.0f64, f64::max)
            })
            .collect()
    }

    /// Columnar CSV: `step,particle,x0,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "step,particle")?;
        for c in 0..self.dim {
            write!(w, ",x{c}")?;
        }
        writeln!(w)?;
        for i in 0..self.grid.n_times() {
            for p in 0..self.n_particles {
                write!(w, "{i},{p}")?;
                for v in self.state(p, i) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Compact binary layout: header `N, M, d, seed` as little-endian u64,
    /// then the state array as little-endian f64 in storage (particle-major)
    /// order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for header in [
            self.n_particles as u64,
            self.grid.steps as u64,
            self.dim as u64,
            self.seed,
        ] {
            w.write_all(&header.to_le_bytes())?;
        }
        for v in &self.states {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

fn sample_initial_states(
    init: &InitialLaw,
    n: usize,
    dim: usize,
    seed: u64,
    domain: u64,
) -> Result<Vec<f64>> {
    init.validate()?;
    if init.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: init.dim(),
        });
    }
    let cumsum = match init {
        InitialLaw::Empirical { measure } => Some(empirical_cumsum(measure)),
        _ => None,
    };
    let mut states = vec![0.0; n * dim];
    for (p, chunk) in states.chunks_exact_mut(dim).enumerate() {
        let mut rng = StreamRng::new(seed, domain, p as u64, 0);
        init.sample(&mut rng, cumsum.as_deref(), chunk);
    }
    Ok(states)
}

/// Simulates the particle ensemble from explicitly provided initial states
/// (`initial.len() = n * d`). This is the entry point for coupled two-ensemble
/// experiments that need to share noise against custom initial pairings.
pub fn simulate_from_states(
    model: &ModelSpec,
    policy: &FeedbackPolicy,
    grid: &TimeGrid,
    initial: Vec<f64>,
    n: usize,
    seed: u64,
) -> Result<PathBundle> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 particles, got {n}"
        )));
    }
    let d = model.dim_state();
    if initial.len() != n * d {
        return Err(Error::LengthMismatch {
            what: "initial states",
            expected: n * d,
            got: initial.len(),
        });
    }
    if grid.t_end > model.horizon() + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "grid ends at {} beyond the model horizon {}",
            grid.t_end,
            model.horizon()
        )));
    }

    let m = grid.steps;
    let n_times = grid.n_times();
    let state_stride = n_times * d;
    let noise_stride = m * d;
    let mut states = vec![0.0; n * state_stride];
    let mut noises = vec![0.0; n * noise_stride];
    for (p, chunk) in initial.chunks_exact(d).enumerate() {
        states[p * state_stride..p * state_stride + d].copy_from_slice(chunk);
    }

    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut law_flat = vec![0.0; n * d];

    for step in 0..m {
        let t = grid.time(step);
        for p in 0..n {
            let base = p * state_stride + step * d;
            law_flat[p * d..(p + 1) * d].copy_from_slice(&states[base..base + d]);
        }
        let law = EmpiricalMeasure::from_flat(d, law_flat.clone(), None).map_err(|e| {
            Error::SimulationFailure {
                step,
                particle: 0,
                reason: format!("empirical law rebuild failed: {e}"),
            }
        })?;

        let results: Vec<Result<()>> = states
            .par_chunks_mut(state_stride)
            .zip(noises.par_chunks_mut(noise_stride))
            .enumerate()
            .map(|(p, (traj, noise))| -> Result<()> {
                let x: Vec<f64> = traj[step * d..(step + 1) * d].to_vec();
                let alpha = policy_measure(policy, t, &x)?;
                let drift = model.eval_drift_relaxed(t, &x, &law, &alpha)?;
                let sigma = model.eval_diffusion(t, &x, &law)?;
                let mut rng = StreamRng::new(seed, DOMAIN_INCREMENT, p as u64, step as u64);
                let dw = &mut noise[step * d..(step + 1) * d];
                for w in dw.iter_mut() {
                    *w = sqrt_dt * rng.normal();
                }
                let mut diffusion_term = vec![0.0; d];
                mat_vec(&sigma, dw, &mut diffusion_term);
                let next = &mut traj[(step + 1) * d..(step + 2) * d];
                for c in 0..d {
                    next[c] = x[c] + drift[c] * dt + diffusion_term[c];
                    if !next[c].is_finite() {
                        return Err(Error::SimulationFailure {
                            step,
                            particle: p,
                            reason: "state became non-finite".into(),
                        });
                    }
                }
                Ok(())
            })
            .collect();
        for (p, r) in results.into_iter().enumerate() {
            r.map_err(|e| match e {
                e @ Error::SimulationFailure { .. } => e,
                other => Error::SimulationFailure {
                    step,
                    particle: p,
                    reason: other.to_string(),
                },
            })?;
        }
    }

    let particle_streams = (0..n as u64).map(|p| derive(seed, &[p])).collect();
    Ok(PathBundle {
        grid: *grid,
        n_particles: n,
        dim: d,
        seed,
        states,
        noises,
        particle_streams,
    })
}

/// Simulates `n` interacting particles of the controlled mean-field dynamics
/// on `grid`, starting from `init` at `grid.s`.
pub fn simulate_ensemble(
    model: &ModelSpec,
    policy: &FeedbackPolicy,
    grid: &TimeGrid,
    init: &InitialLaw,
    n: usize,
    seed: u64,
) -> Result<PathBundle> {
    let initial = sample_initial_states(init, n, model.dim_state(), seed, DOMAIN_INIT)?;
    simulate_from_states(model, policy, grid, initial, n, seed)
}

/// Restarts the dynamics at `t_mid` from an empirical law: initial particles
/// are drawn from `law_at_t` with replacement, then the ensemble runs on
/// `grid2` (which must start at `t_mid`).
pub fn restart_from_empirical(
    model: &ModelSpec,
    policy: &FeedbackPolicy,
    t_mid: f64,
    law_at_t: &EmpiricalMeasure,
    grid2: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<PathBundle> {
    if (grid2.s - t_mid).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "restart grid starts at {}, expected t_mid = {t_mid}",
            grid2.s
        )));
    }
    let init = InitialLaw::empirical(law_at_t.clone());
    let initial = sample_initial_states(&init, n, model.dim_state(), seed, DOMAIN_RESAMPLE)?;
    simulate_from_states(model, policy, grid2, initial, n, seed)
}

/// Draws `n` coupled initial pairs `(xi, xi~)` whose mean distance realizes
/// (approximately, at Monte Carlo resolution) the `W1` distance of the two
/// laws: the quantile coupling in one dimension, the exact optimal transport
/// plan between empirical laws in higher dimension.
pub fn sample_coupled_initials(
    law_a: &InitialLaw,
    law_b: &InitialLaw,
    n: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    law_a.validate()?;
    law_b.validate()?;
    let d = law_a.dim();
    if law_b.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: law_b.dim(),
        });
    }
    let mut xs = vec![0.0; n * d];
    let mut ys = vec![0.0; n * d];

    if let (InitialLaw::Dirac { point: pa }, InitialLaw::Dirac { point: pb }) = (law_a, law_b) {
        for p in 0..n {
            xs[p * d..(p + 1) * d].copy_from_slice(pa);
            ys[p * d..(p + 1) * d].copy_from_slice(pb);
        }
        return Ok((xs, ys));
    }

    if d == 1 {
        let sort_1d = |law: &InitialLaw| -> Option<Vec<(f64, f64)>> {
            match law {
                InitialLaw::Empirical { measure } => {
                    let mut v: Vec<(f64, f64)> = measure
                        .atoms()
                        .zip(measure.weights())
                        .map(|(a, &w)| (a[0], w))
                        .collect();
                    v.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
                    Some(v)
                }
                _ => None,
            }
        };
        let sorted_a = sort_1d(law_a);
        let sorted_b = sort_1d(law_b);
        for p in 0..n {
            let mut rng = StreamRng::new(seed, DOMAIN_INIT, p as u64, 1);
            let v = rng.uniform();
            xs[p] = law_a.quantile_1d(v, sorted_a.as_deref());
            ys[p] = law_b.quantile_1d(v, sorted_b.as_deref());
        }
        return Ok((xs, ys));
    }

    match (law_a, law_b) {
        (InitialLaw::Empirical { measure: ma }, InitialLaw::Empirical { measure: mb }) => {
            let (_, plan) = optimal_coupling(ma, mb, 1)?;
            let mut cumsum = Vec::with_capacity(plan.plan().len());
            let mut acc = 0.0;
            for &mass in plan.plan() {
                acc += mass;
                cumsum.push(acc);
            }
            let n_col = plan.n_col();
            for p in 0..n {
                let mut rng = StreamRng::new(seed, DOMAIN_INIT, p as u64, 1);
                let flat_idx = weighted_index(&cumsum, rng.uniform());
                let (i, j) = (flat_idx / n_col, flat_idx % n_col);
                xs[p * d..(p + 1) * d].copy_from_slice(ma.atom(i));
                ys[p * d..(p + 1) * d].copy_from_slice(mb.atom(j));
            }
            Ok((xs, ys))
        }
        _ => Err(Error::InvalidParameter(
            "coupled sampling in d >= 2 requires two empirical laws".into(),
        )),
    }
}

/// One `E|X_t - X_s|` estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ModulusEstimate {
    pub t: f64,
    pub s: f64,
    pub mean: f64,
    pub std_error: f64,
}

/// Sample mean over particles of `|X_t - X_s|` for each requested pair, with
/// standard errors. Times must lie on the bundle's grid.
pub fn path_modulus(bundle: &PathBundle, time_pairs: &[(f64, f64)]) -> Result<Vec<ModulusEstimate>> {
    time_pairs
        .iter()
        .map(|&(t, s)| {
            let it = bundle.grid().index_of(t)?;
            let is = bundle.grid().index_of(s)?;
            let diffs: Vec<f64> = (0..bundle.n_particles())
                .map(|p| dist(bundle.state(p, it), bundle.state(p, is)))
                .collect();
            let (mean, std_error) = mean_and_std_error(&diffs);
            Ok(ModulusEstimate {
                t,
                s,
                mean,
                std_error,
            })
        })
        .collect()
}

/// One explicit-Euler run of `dx = -sgn(x) dt` (`sgn(0) = -1`) at step `h`.
#[derive(Debug, Clone, Serialize)]
pub struct ChatteringRun {
    pub step_size: f64,
    /// First grid time with `|x| <= h` (0 when starting inside).
    pub hitting_time: Option<f64>,
    /// Max `|x|` over the post-hitting trajectory.
    pub amplitude: f64,
    /// True when the post-hitting trajectory is 2-periodic.
    pub two_step_cycle: bool,
}

/// Chattering report for the no-solution drift: amplitude scales linearly in
/// the step size and never dies out.
#[derive(Debug, Clone, Serialize)]
pub struct ChatteringReport {
    pub x0: f64,
    pub t_end: f64,
    pub runs: Vec<ChatteringRun>,
    /// `amplitude / h` per run; constant (= 1 from `x0 = 0`) under the exact
    /// two-step cycle.
    pub amplitude_ratios: Vec<f64>,
}

/// Euler recursion `x_{k+1} = x_k - h * sgn(x_k)` per step size, reporting
/// the hitting time of the `h`-neighborhood of 0 and the post-hitting
/// oscillation amplitude.
pub fn counterexample_demo(step_sizes: &[f64], x0: f64, t_end: f64) -> Result<ChatteringReport> {
    if step_sizes.is_empty() {
        return Err(Error::EmptySamples);
    }
    if step_sizes.iter().any(|&h| h.is_nan() || h <= 0.0) {
        return Err(Error::InvalidParameter(
            "step sizes must be positive".into(),
        ));
    }
    if t_end.is_nan() || t_end <= 0.0 {
        return Err(Error::InvalidParameter("t_end must be positive".into()));
    }
    let sgn = crate::model::builtin::sgn_neg_at_zero;
    let mut runs = Vec::with_capacity(step_sizes.len());
    for &h in step_sizes {
        let n_steps = (t_end / h).ceil() as usize;
        let mut x = x0;
        let mut traj = Vec::with_capacity(n_steps + 1);
        traj.push(x);
        for _ in 0..n_steps {
            x -= h * sgn(x);
            traj.push(x);
        }
        let hit = traj.iter().position(|v| v.abs() <= h);
        let (amplitude, two_step_cycle) = match hit {
            None => (0.0, false),
            Some(k) => {
                let tail = &traj[k..];
                let amp = tail.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let cyc = tail.len() >= 4
                    && tail
                        .windows(3)
                        .skip(1)
                        .all(|w| (w[2] - w[0]).abs() <= f64::EPSILON * h.abs().max(1.0));
                (amp, cyc)
            }
        };
        runs.push(ChatteringRun {
            step_size: h,
            hitting_time: hit.map(|k| k as f64 * h),
            amplitude,
            two_step_cycle,
        });
    }
    let amplitude_ratios = runs.iter().map(|r| r.amplitude / r.step_size).collect();
    Ok(ChatteringReport {
        x0,
        t_end,
        runs,
        amplitude_ratios,
    })
}
