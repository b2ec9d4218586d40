//! Problem specification: coefficients `b, sigma, f, g`, the compact control
//! set `U`, declared regularity constants, and sampled spot-checkers for the
//! Lipschitz/growth/ellipticity hypotheses.
//!
//! The drift and running cost are specified on point controls `u in U` and
//! lifted to `P(U)` by integration against the control measure; the relaxed
//! form is the only one the simulator ever sees. The diffusion is
//! control-free.

pub(crate) mod builtin;
mod expr;

pub use builtin::{builtin_model, builtin_models, sgn_neg_at_zero};
pub use expr::JsonModel;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::linalg::{frobenius_norm, mat_mul_transpose, norm, rayleigh_quotient};
use crate::measures::{w1_truncated, wp_exact_small, ControlMeasure, EmpiricalMeasure};
use crate::rng::{StreamRng, DOMAIN_SAMPLER};

pub type DriftFn = dyn Fn(f64, &[f64], &EmpiricalMeasure, &[f64]) -> Vec<f64> + Send + Sync;
pub type DiffusionFn = dyn Fn(f64, &[f64], &EmpiricalMeasure) -> Vec<f64> + Send + Sync;
pub type RunningCostFn = dyn Fn(f64, &[f64], &EmpiricalMeasure, &[f64]) -> f64 + Send + Sync;
pub type TerminalCostFn = dyn Fn(&[f64], &EmpiricalMeasure) -> f64 + Send + Sync;

/// Constants declared by the model author, if any. Each mirrors one of the
/// regularity hypotheses: `k1` Lipschitz (drift and diffusion), `k2` linear
/// growth, `k3`/`k4` cost Lipschitz/growth, `lambda` two-sided ellipticity of
/// `sigma sigma^T`, `b_sup`/`sigma_sup` uniform coefficient bounds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeclaredConstants {
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub k3: Option<f64>,
    pub k4: Option<f64>,
    pub lambda: Option<f64>,
    pub b_sup: Option<f64>,
    pub sigma_sup: Option<f64>,
}

/// A controlled mean-field model: coefficients plus domain geometry.
///
/// Immutable after construction; coefficient closures must be re-entrant (they
/// are called concurrently from simulation workers).
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim_state: usize,
    dim_control: usize,
    control_box: BoundingBox,
    horizon: f64,
    /// True when `sigma` depends on `(t, x)` only -- the hypothesis under
    /// which the coupled-stability and value-continuity estimates are stated.
    sigma_state_time_only: bool,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    running_cost: Arc<RunningCostFn>,
    terminal_cost: Arc<TerminalCostFn>,
    constants: DeclaredConstants,
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim_state", &self.dim_state)
            .field("dim_control", &self.dim_control)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dim_state: usize,
        dim_control: usize,
        control_box: BoundingBox,
        horizon: f64,
        drift: Arc<DriftFn>,
        diffusion: Arc<DiffusionFn>,
        running_cost: Arc<RunningCostFn>,
        terminal_cost: Arc<TerminalCostFn>,
    ) -> Result<Self> {
        if dim_state == 0 || dim_control == 0 {
            return Err(Error::InvalidParameter(
                "state and control dimensions must be >= 1".into(),
            ));
        }
        if horizon.is_nan() || horizon <= 0.0 || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "horizon T = {horizon} must be positive and finite"
            )));
        }
        if control_box.dim() != dim_control {
            return Err(Error::DimensionMismatch {
                expected: dim_control,
                got: control_box.dim(),
            });
        }
        Ok(ModelSpec {
            name: name.into(),
            dim_state,
            dim_control,
            control_box,
            horizon,
            sigma_state_time_only: false,
            drift,
            diffusion,
            running_cost,
            terminal_cost,
            constants: DeclaredConstants::default(),
        })
    }

    pub fn with_constants(mut self, constants: DeclaredConstants) -> Self {
        self.constants = constants;
        self
    }

    pub fn with_sigma_state_time_only(mut self, flag: bool) -> Self {
        self.sigma_state_time_only = flag;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim_state(&self) -> usize {
        self.dim_state
    }

    pub fn dim_control(&self) -> usize {
        self.dim_control
    }

    pub fn control_box(&self) -> &BoundingBox {
        &self.control_box
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn sigma_state_time_only(&self) -> bool {
        self.sigma_state_time_only
    }

    pub fn constants(&self) -> &DeclaredConstants {
        &self.constants
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                lo: 0.0,
                hi: self.horizon,
            });
        }
        Ok(())
    }

    /// Drift on a point control `u in U`.
    pub fn drift_point(
        &self,
        t: f64,
        x: &[f64],
        mu: &EmpiricalMeasure,
        u: &[f64],
    ) -> Result<Vec<f64>> {
        let b = (self.drift)(t, x, mu, u);
        if b.len() != self.dim_state {
            return Err(Error::DimensionMismatch {
                expected: self.dim_state,
                got: b.len(),
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::CoefficientNaN {
                coefficient: "b",
                t,
                context: format!(", x = {x:?}"),
            });
        }
        Ok(b)
    }

    /// Relaxed drift `int_U b(t, x, mu, u) alpha(du)`: the drift integrated
    /// against the control measure, which is the form driving the dynamics.
    pub fn eval_drift_relaxed(
        &self,
        t: f64,
        x: &[f64],
        mu: &EmpiricalMeasure,
        alpha: &ControlMeasure,
    ) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let mut out = vec![0.0; self.dim_state];
        for (u, &w) in alpha.atoms().zip(alpha.weights()) {
            let b = self.drift_point(t, x, mu, u)?;
            for (o, bi) in out.iter_mut().zip(&b) {
                *o += w * bi;
            }
        }
        Ok(out)
    }

    /// The `d x d` diffusion matrix `sigma(t, x, mu)`, row-major.
    pub fn eval_diffusion(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let s = (self.diffusion)(t, x, mu);
        let d = self.dim_state;
        if s.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::CoefficientNaN {
                coefficient: "sigma",
                t,
                context: format!(", x = {x:?}"),
            });
        }
        Ok(s)
    }

    /// Running cost relaxed over the control measure, and the terminal cost:
    /// `(sum_j w_j f(t, x, mu, u_j), g(x, mu))`.
    pub fn eval_costs(
        &self,
        t: f64,
        x: &[f64],
        mu: &EmpiricalMeasure,
        alpha: &ControlMeasure,
    ) -> Result<(f64, f64)> {
        self.check_time(t)?;
        let running = self.running_cost_relaxed(t, x, mu, alpha)?;
        let terminal = self.terminal_cost(x, mu)?;
        Ok((running, terminal))
    }

    pub fn running_cost_relaxed(
        &self,
        t: f64,
        x: &[f64],
        mu: &EmpiricalMeasure,
        alpha: &ControlMeasure,
    ) -> Result<f64> {
        let mut running = 0.0;
        for (u, &w) in alpha.atoms().zip(alpha.weights()) {
            let v = (self.running_cost)(t, x, mu, u);
            if !v.is_finite() {
                return Err(Error::CoefficientNaN {
                    coefficient: "f",
                    t,
                    context: format!(", x = {x:?}, u = {u:?}"),
                });
            }
            running += w * v;
        }
        Ok(running)
    }

    pub fn running_cost_point(
        &self,
        t: f64,
        x: &[f64],
        mu: &EmpiricalMeasure,
        u: &[f64],
    ) -> Result<f64> {
        let v = (self.running_cost)(t, x, mu, u);
        if !v.is_finite() {
            return Err(Error::CoefficientNaN {
                coefficient: "f",
                t,
                context: format!(", x = {x:?}"),
            });
        }
        Ok(v)
    }

    pub fn terminal_cost(&self, x: &[f64], mu: &EmpiricalMeasure) -> Result<f64> {
        let v = (self.terminal_cost)(x, mu);
        if !v.is_finite() {
            return Err(Error::CoefficientNaN {
                coefficient: "g",
                t: self.horizon,
                context: format!(", x = {x:?}"),
            });
        }
        Ok(v)
    }
}

/// Which coefficient a regularity probe targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    /// Drift as a function of `(t, x, mu)` with the control atom held fixed.
    BInXMuT,
    Sigma,
    RunningCost,
    TerminalCost,
}

/// Inputs attaining the maximum sampled quotient.
#[derive(Debug, Clone, Serialize)]
pub struct MaxQuotientPair {
    pub t1: f64,
    pub t2: f64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub quotient: f64,
}

/// Sampled lower-bound estimate of a regularity constant. Not a proof: the
/// true constant is at least `empirical_estimate` on the sampled region.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub constant_name: String,
    pub empirical_estimate: f64,
    pub sample_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_pair: Option<MaxQuotientPair>,
    /// Same max quotient with the truncated distance in the denominator
    /// (relevant when the hypothesis is stated in the truncated metric).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secondary_estimate: Option<f64>,
    /// Smallest Rayleigh quotient of `sigma sigma^T` seen (ellipticity only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rayleigh_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rayleigh_max: Option<f64>,
    /// Set when the sampled inputs witness a hypothesis violation
    /// (degenerate ellipticity).
    pub violated: bool,
}

/// Bounded sampling region for the regularity probes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub state_box: BoundingBox,
    /// Max atoms per sampled empirical measure (kept small; exact transport
    /// in the denominator).
    pub max_atoms: usize,
}

impl SamplerConfig {
    pub fn new(state_box: BoundingBox, max_atoms: usize) -> Result<Self> {
        if max_atoms == 0 || max_atoms > 32 {
            return Err(Error::InvalidParameter(
                "sampler max_atoms must be in 1..=32".into(),
            ));
        }
        Ok(SamplerConfig {
            state_box,
            max_atoms,
        })
    }

    fn sample_measure(&self, rng: &mut StreamRng) -> EmpiricalMeasure {
        let n = 1 + rng.index(self.max_atoms);
        let dim = self.state_box.dim();
        let mut flat = Vec::with_capacity(n * dim);
        for _ in 0..n {
            flat.extend(self.state_box.sample_uniform(rng));
        }
        EmpiricalMeasure::from_flat(dim, flat, None).expect("sampled atoms are valid")
    }
}

/// Maximum sampled difference quotient
/// `|coefficient(t1, x1, mu1, u) - coefficient(t2, x2, mu2, u)| /
///  (|t1 - t2| + |x1 - x2| + W1(mu1, mu2))`
/// over `n_pairs` random input pairs (the control atom is held fixed within a
/// pair). Degenerate pairs are resampled. Pair sampling is prefix-stable in
/// `n_pairs`, so estimates can only grow as the budget grows.
pub fn estimate_lipschitz(
    model: &ModelSpec,
    which: CoefficientKind,
    sampler: &SamplerConfig,
    n_pairs: usize,
    seed: u64,
) -> Result<RegularityReport> {
    if n_pairs == 0 {
        return Err(Error::InvalidParameter("n_pairs must be >= 1".into()));
    }
    if sampler.state_box.dim() != model.dim_state() {
        return Err(Error::DimensionMismatch {
            expected: model.dim_state(),
            got: sampler.state_box.dim(),
        });
    }
    let mut best = 0.0f64;
    let mut best_secondary = 0.0f64;
    let mut best_pair: Option<MaxQuotientPair> = None;
    let mut evaluated = 0usize;

    for pair_idx in 0..n_pairs {
        for attempt in 0..16u64 {
            let mut rng = StreamRng::new(seed, DOMAIN_SAMPLER, pair_idx as u64, attempt);
            let t1 = rng.uniform_in(0.0, model.horizon());
            let t2 = rng.uniform_in(0.0, model.horizon());
            let x1 = sampler.state_box.sample_uniform(&mut rng);
            let x2 = sampler.state_box.sample_uniform(&mut rng);
            let mu1 = sampler.sample_measure(&mut rng);
            let mu2 = sampler.sample_measure(&mut rng);
            let u = model.control_box().sample_uniform(&mut rng);

            let w1 = wp_exact_small(&mu1, &mu2, 1)?;
            let w1_bar = w1_truncated(&mu1, &mu2)?;
            let dx = crate::linalg::dist(&x1, &x2);
            let (dt, t_a, t_b) = match which {
                CoefficientKind::TerminalCost => (0.0, 0.0, 0.0),
                _ => ((t1 - t2).abs(), t1, t2),
            };
            let denom = dt + dx + w1;
            let denom_bar = dt + dx + w1_bar;
            if denom < 1e-13 {
                continue;
            }

            let delta = match which {
                CoefficientKind::BInXMuT => {
                    let b1 = model.drift_point(t_a, &x1, &mu1, &u)?;
                    let b2 = model.drift_point(t_b, &x2, &mu2, &u)?;
                    let diff: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a - b).collect();
                    norm(&diff)
                }
                CoefficientKind::Sigma => {
                    let s1 = model.eval_diffusion(t_a, &x1, &mu1)?;
                    let s2 = model.eval_diffusion(t_b, &x2, &mu2)?;
                    let diff: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a - b).collect();
                    frobenius_norm(&diff)
                }
                CoefficientKind::RunningCost => {
                    let f1 = model.running_cost_point(t_a, &x1, &mu1, &u)?;
                    let f2 = model.running_cost_point(t_b, &x2, &mu2, &u)?;
                    (f1 - f2).abs()
                }
                CoefficientKind::TerminalCost => {
                    let g1 = model.terminal_cost(&x1, &mu1)?;
                    let g2 = model.terminal_cost(&x2, &mu2)?;
                    (g1 - g2).abs()
                }
            };

            let q = delta / denom;
            if q > best {
                best = q;
                best_pair = Some(MaxQuotientPair {
                    t1: t_a,
                    t2: t_b,
                    x1: x1.clone(),
                    x2: x2.clone(),
                    quotient: q,
                });
            }
            best_secondary = best_secondary.max(delta / denom_bar.max(1e-300));
            evaluated += 1;
            break;
        }
    }
    if evaluated == 0 {
        return Err(Error::AllPairsDegenerate);
    }
    Ok(RegularityReport {
        constant_name: format!("{which:?}"),
        empirical_estimate: best,
        sample_count: evaluated,
        max_pair: best_pair,
        secondary_estimate: Some(best_secondary),
        rayleigh_min: None,
        rayleigh_max: None,
        violated: false,
    })
}

/// Min/max Rayleigh quotients of `a = sigma sigma^T` over `n` sampled
/// `(t, x, mu, z)`, reporting the smallest ellipticity constant consistent
/// with the sample. `violated` is set (and the estimate is 0) when the
/// smallest quotient is numerically degenerate.
pub fn check_ellipticity(
    model: &ModelSpec,
    sampler: &SamplerConfig,
    n: usize,
    seed: u64,
) -> Result<RegularityReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be >= 1".into()));
    }
    let d = model.dim_state();
    let mut q_min = f64::INFINITY;
    let mut q_max = 0.0f64;
    for sample_idx in 0..n {
        let mut rng = StreamRng::new(seed, DOMAIN_SAMPLER, sample_idx as u64, u64::MAX);
        let t = rng.uniform_in(0.0, model.horizon());
        let x = sampler.state_box.sample_uniform(&mut rng);
        let mu = sampler.sample_measure(&mut rng);
        let mut z = vec![0.0; d];
        loop {
            rng.fill_normals(&mut z);
            if norm(&z) > 1e-8 {
                break;
            }
        }
        let sigma = model.eval_diffusion(t, &x, &mu)?;
        let a = mat_mul_transpose(&sigma, d);
        let q = rayleigh_quotient(&a, &z);
        q_min = q_min.min(q);
        q_max = q_max.max(q);
    }
    let violated = q_min <= 1e-12;
    let lambda = if violated { 0.0 } else { q_max.max(1.0 / q_min) };
    Ok(RegularityReport {
        constant_name: "lambda".into(),
        empirical_estimate: lambda,
        sample_count: n,
        max_pair: None,
        secondary_estimate: None,
        rayleigh_min: Some(q_min),
        rayleigh_max: Some(q_max),
        violated,
    })
}
