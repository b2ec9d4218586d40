//! Monte Carlo cost functional, derivative-free policy optimization of the
//! value function, and the dynamic-programming residual.
//!
//! Costs use left-endpoint Riemann quadrature against the same left-frozen
//! empirical law the simulator steps with. The optimizer is a cross-entropy
//! method over finite-dimensional policy families: the map from parameters to
//! cost is non-smooth (empirical measures, box lookups), so only evaluations
//! are used. Candidates within a generation share one simulation seed
//! (common random numbers); the winner is re-evaluated on a fresh seed to
//! strip selection bias.

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::controls::{
    constant_policy, FeedbackPolicy, GridPolicy, GridSkeleton, PolicyFile,
};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::linalg::mean_and_std_error;
use crate::measures::{ControlMeasure, EmpiricalMeasure};
use crate::model::ModelSpec;
use crate::rng::{derive, StreamRng, DOMAIN_CEM};
use crate::simulate::{simulate_ensemble, InitialLaw, PathBundle, TimeGrid};

/// A Monte Carlo estimate of the cost functional. Particles are exchangeable
/// but not independent (they interact through the empirical law), so the
/// plain-sample `std_error` is an approximation.
#[derive(Debug, Clone, Serialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub particles: usize,
    pub steps: usize,
    pub seed: u64,
}

/// Per-particle cost of a simulated bundle: left-endpoint Riemann sum of the
/// relaxed running cost plus (optionally) the terminal cost against the final
/// empirical law.
pub fn bundle_costs(
    model: &ModelSpec,
    policy: &FeedbackPolicy,
    bundle: &PathBundle,
    include_terminal: bool,
) -> Result<Vec<f64>> {
    let grid = bundle.grid();
    let m = grid.steps;
    let dt = grid.dt();
    let laws: Vec<EmpiricalMeasure> = (0..=m).map(|i| bundle.empirical_at(i)).collect();
    let costs: Vec<Result<f64>> = (0..bundle.n_particles())
        .into_par_iter()
        .map(|p| -> Result<f64> {
            let mut acc = 0.0;
            for (i, law) in laws[..m].iter().enumerate() {
                let t = grid.time(i);
                let x = bundle.state(p, i);
                let alpha = crate::controls::policy_measure(policy, t, x)?;
                acc += model.running_cost_relaxed(t, x, law, &alpha)? * dt;
            }
            if include_terminal {
                acc += model.terminal_cost(bundle.state(p, m), &laws[m])?;
            }
            Ok(acc)
        })
        .collect();
    costs.into_iter().collect()
}

/// Estimates `J = E[int f dt + g(X_T, law)]` by simulating the ensemble and
/// averaging per-particle costs.
pub fn estimate_cost(
    model: &ModelSpec,
    policy: &FeedbackPolicy,
    init: &InitialLaw,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<CostEstimate> {
    let bundle = simulate_ensemble(model, policy, grid, init, n, seed)?;
    let costs = bundle_costs(model, policy, &bundle, true)?;
    let (mean, std_error) = mean_and_std_error(&costs);
    Ok(CostEstimate {
        mean,
        std_error,
        particles: n,
        steps: grid.steps,
        seed,
    })
}

/// A finite-dimensional slice of the admissible feedback policies.
#[derive(Debug, Clone)]
pub enum PolicyFamily {
    /// A single fixed policy; the optimizer degenerates to one evaluation.
    Fixed(FeedbackPolicy),
    /// Constant Dirac policies `delta_u`; the parameters are the coordinates
    /// of `u`, clamped into the control box.
    ConstantAtom {
        control_box: BoundingBox,
        horizon: f64,
    },
    /// Grid policies over a fixed skeleton; the parameters are weight-table
    /// logits in `[-logit_bound, logit_bound]`, normalized row-wise by
    /// softmax, so every parameter vector is a valid policy.
    GridLogits {
        skeleton: GridSkeleton,
        logit_bound: f64,
    },
}

impl PolicyFamily {
    pub fn constant_atom(model: &ModelSpec) -> Self {
        PolicyFamily::ConstantAtom {
            control_box: model.control_box().clone(),
            horizon: model.horizon(),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            PolicyFamily::Fixed(_) => 0,
            PolicyFamily::ConstantAtom { control_box, .. } => control_box.dim(),
            PolicyFamily::GridLogits { skeleton, .. } => {
                skeleton.n_rows() * skeleton.atoms.len()
            }
        }
    }

    /// Per-parameter `(lo, hi)` clamp bounds.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            PolicyFamily::Fixed(_) => (Vec::new(), Vec::new()),
            PolicyFamily::ConstantAtom { control_box, .. } => {
                (control_box.lo.clone(), control_box.hi.clone())
            }
            PolicyFamily::GridLogits {
                skeleton,
                logit_bound,
            } => {
                let n = skeleton.n_rows() * skeleton.atoms.len();
                (vec![-logit_bound; n], vec![*logit_bound; n])
            }
        }
    }

    pub fn initial_params(&self) -> Vec<f64> {
        match self {
            PolicyFamily::Fixed(_) => Vec::new(),
            PolicyFamily::ConstantAtom { control_box, .. } => control_box.center(),
            PolicyFamily::GridLogits { skeleton, .. } => {
                vec![0.0; skeleton.n_rows() * skeleton.atoms.len()]
            }
        }
    }

    pub fn instantiate(&self, params: &[f64]) -> Result<FeedbackPolicy> {
        if params.len() != self.n_params() {
            return Err(Error::LengthMismatch {
                what: "family parameters",
                expected: self.n_params(),
                got: params.len(),
            });
        }
        match self {
            PolicyFamily::Fixed(p) => Ok(p.clone()),
            PolicyFamily::ConstantAtom {
                control_box,
                horizon,
            } => {
                let mut u = params.to_vec();
                control_box.clamp(&mut u);
                let alpha = ControlMeasure::dirac(&u, control_box)?;
                constant_policy(alpha, *horizon)
            }
            PolicyFamily::GridLogits {
                skeleton,
                logit_bound,
            } => {
                let n_atoms = skeleton.atoms.len();
                let logits: Vec<Vec<f64>> = params
                    .chunks_exact(n_atoms)
                    .map(|row| {
                        row.iter()
                            .map(|l| l.clamp(-logit_bound, *logit_bound))
                            .collect()
                    })
                    .collect();
                Ok(FeedbackPolicy::Parametric {
                    grid: GridPolicy::from_logits(skeleton.clone(), &logits)?,
                    logits,
                })
            }
        }
    }
}

/// Cross-entropy method configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CemConfig {
    pub generations: usize,
    pub population: usize,
    pub elite_frac: f64,
    /// Initial sampling spread as a fraction of each parameter's half-range.
    pub init_spread: f64,
    pub seed: u64,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            generations: 40,
            population: 32,
            elite_frac: 0.2,
            init_spread: 1.0,
            seed: 0,
        }
    }
}

impl CemConfig {
    fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::InvalidParameter(
                "population must be >= 4".into(),
            ));
        }
        if self.elite_frac.is_nan() || self.elite_frac <= 0.0 || self.elite_frac >= 1.0 {
            return Err(Error::InvalidParameter(
                "elite_frac must lie in (0, 1)".into(),
            ));
        }
        if self.generations == 0 {
            return Err(Error::InvalidParameter("generations must be >= 1".into()));
        }
        if self.init_spread.is_nan() || self.init_spread <= 0.0 {
            return Err(Error::InvalidParameter("init_spread must be > 0".into()));
        }
        Ok(())
    }
}

fn serialize_policy<S: Serializer>(
    policy: &FeedbackPolicy,
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    PolicyFile::from_policy(policy).serialize(serializer)
}

/// Outcome of a value-function optimization.
#[derive(Debug, Clone, Serialize)]
pub struct ValueEstimate {
    /// Fresh-seed re-evaluation of the winning policy (selection-bias free).
    pub cost: CostEstimate,
    #[serde(serialize_with = "serialize_policy")]
    pub best_policy: FeedbackPolicy,
    /// Best minus second-best elite mean in the final generation; a
    /// convergence diagnostic, 0 for a fully collapsed or single-member
    /// search.
    pub optimizer_gap: f64,
    pub evaluations: usize,
}

/// Minimizes the estimated cost over a policy family with the cross-entropy
/// method. All candidates inside a generation are simulated with the same
/// seed; the returned cost is re-estimated on a fresh seed at the same
/// particle count.
pub fn optimize_policy(
    model: &ModelSpec,
    family: &PolicyFamily,
    init: &InitialLaw,
    grid: &TimeGrid,
    n: usize,
    config: &CemConfig,
) -> Result<ValueEstimate> {
    optimize_with(model, family, config, |policy, eval_seed| {
        estimate_cost(model, policy, init, grid, n, eval_seed).map(|c| (c.mean, c))
    })
    .map(into_value_estimate)
}

/// CEM core over an arbitrary objective. `objective(policy, seed)` returns
/// the scalar to minimize plus a carrier payload returned for the winner.
fn optimize_with<T: Send, F>(
    model: &ModelSpec,
    family: &PolicyFamily,
    config: &CemConfig,
    objective: F,
) -> Result<ValueEstimateWith<T>>
where
    F: Fn(&FeedbackPolicy, u64) -> Result<(f64, T)> + Sync,
{
    config.validate()?;
    let n_params = family.n_params();
    let (lo, hi) = family.bounds();
    let fresh_seed = derive(config.seed, &[DOMAIN_CEM, u64::MAX]);

    if n_params == 0 {
        // Single-member family: one evaluation, gap 0.
        let policy = family.instantiate(&[])?;
        policy.validate_in_box(model.control_box())?;
        let (mean, payload) = objective(&policy, fresh_seed)?;
        return Ok(ValueEstimateWith {
            best_policy: policy,
            best_mean: mean,
            payload,
            optimizer_gap: 0.0,
            evaluations: 1,
        });
    }

    let mut center = family.initial_params();
    let mut spread: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| config.init_spread * 0.5 * (h - l).max(1e-12))
        .collect();

    let n_elite = ((config.elite_frac * config.population as f64).ceil() as usize)
        .clamp(2, config.population);
    let mut evaluations = 0usize;
    let mut final_best: Option<(Vec<f64>, f64)> = None;
    let mut final_gap = 0.0;

    for generation in 0..config.generations {
        let eval_seed = derive(config.seed, &[DOMAIN_CEM, generation as u64, 1]);
        let candidates: Vec<Vec<f64>> = (0..config.population)
            .map(|c| {
                let mut rng = StreamRng::new(
                    config.seed,
                    DOMAIN_CEM,
                    generation as u64,
                    c as u64,
                );
                center
                    .iter()
                    .zip(&spread)
                    .zip(lo.iter().zip(&hi))
                    .map(|((m, s), (l, h))| (m + s * rng.normal()).clamp(*l, *h))
                    .collect()
            })
            .collect();

        let scored: Vec<Result<f64>> = candidates
            .par_iter()
            .map(|params| {
                let policy = family.instantiate(params)?;
                objective(&policy, eval_seed).map(|(mean, _)| mean)
            })
            .collect();
        evaluations += config.population;

        let mut ranked: Vec<(usize, f64)> = Vec::with_capacity(config.population);
        for (idx, r) in scored.into_iter().enumerate() {
            let mean = r?;
            if mean.is_finite() {
                ranked.push((idx, mean));
            }
        }
        if ranked.is_empty() {
            return Err(Error::AllCandidatesNonFinite { generation });
        }
        // Stable rank: ties resolve by candidate index.
        ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        let elites: Vec<&(usize, f64)> = ranked.iter().take(n_elite).collect();

        for (p, (c, s)) in center.iter_mut().zip(spread.iter_mut()).enumerate() {
            let vals: Vec<f64> = elites.iter().map(|(idx, _)| candidates[*idx][p]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / vals.len() as f64;
            *c = mean;
            *s = var.sqrt();
        }

        if generation + 1 == config.generations {
            let (best_idx, best_mean) = ranked[0];
            final_gap = if ranked.len() > 1 {
                (ranked[1].1 - best_mean).max(0.0)
            } else {
                0.0
            };
            final_best = Some((candidates[best_idx].clone(), best_mean));
        }
    }

    let (best_params, _) = final_best.expect("at least one generation ran");
    let best_policy = family.instantiate(&best_params)?;
    best_policy.validate_in_box(model.control_box())?;
    let (best_mean, payload) = objective(&best_policy, fresh_seed)?;
    Ok(ValueEstimateWith {
        best_policy,
        best_mean,
        payload,
        optimizer_gap: final_gap,
        evaluations: evaluations + 1,
    })
}

struct ValueEstimateWith<T> {
    best_policy: FeedbackPolicy,
    best_mean: f64,
    payload: T,
    optimizer_gap: f64,
    evaluations: usize,
}

/// `optimize_policy` plus a final fresh-seed re-evaluation of the winner at
/// `4 n` particles.
pub fn estimate_value(
    model: &ModelSpec,
    family: &PolicyFamily,
    init: &InitialLaw,
    grid: &TimeGrid,
    n: usize,
    config: &CemConfig,
) -> Result<ValueEstimate> {
    let opt = optimize_with(model, family, config, |policy, eval_seed| {
        estimate_cost(model, policy, init, grid, n, eval_seed).map(|c| (c.mean, c))
    })?;
    let refine_seed = derive(config.seed, &[DOMAIN_CEM, u64::MAX, 4]);
    let cost = estimate_cost(model, &opt.best_policy, init, grid, 4 * n, refine_seed)?;
    Ok(ValueEstimate {
        cost,
        best_policy: opt.best_policy,
        optimizer_gap: opt.optimizer_gap,
        evaluations: opt.evaluations,
    })
}

/// Wraps `optimize_policy` output into the public estimate.
fn into_value_estimate(opt: ValueEstimateWith<CostEstimate>) -> ValueEstimate {
    ValueEstimate {
        cost: opt.payload,
        best_policy: opt.best_policy,
        optimizer_gap: opt.optimizer_gap,
        evaluations: opt.evaluations,
    }
}

/// Budgets for the two optimization layers of the dynamic-programming
/// residual.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DppConfig {
    /// Full-horizon (left-hand side) optimization.
    pub lhs: CemConfig,
    /// First-leg optimization over `[s, t_mid]`.
    pub outer: CemConfig,
    /// Restarted value optimization over `[t_mid, T]`, run once per outer
    /// candidate.
    pub inner: CemConfig,
}

impl Default for DppConfig {
    fn default() -> Self {
        let small = CemConfig {
            generations: 12,
            population: 12,
            ..CemConfig::default()
        };
        DppConfig {
            lhs: CemConfig::default(),
            outer: small,
            inner: small,
        }
    }
}

/// The two sides of the dynamic-programming identity and their difference.
#[derive(Debug, Clone, Serialize)]
pub struct DppReport {
    pub lhs: ValueEstimate,
    pub rhs_mean: f64,
    pub rhs_std_error: f64,
    pub rhs_outer_gap: f64,
    pub rhs_inner_gap: f64,
    /// `lhs - rhs`.
    pub residual: f64,
    /// Combined standard errors plus every optimizer gap. The inner
    /// optimization reuses the same family class restricted to the second
    /// leg, so the residual conflates family bias with the identity itself;
    /// this margin quantifies, not eliminates, that bias.
    pub tolerance: f64,
}

/// Estimates both sides of
/// `V(s, mu) = inf { E[int_s^t f dr] + V(t, Law(X_t)) }`:
/// the left side by a full-horizon optimization, the right side by an
/// optimization over the first leg whose objective adds the restarted value
/// of the intermediate empirical law.
pub fn dpp_residual(
    model: &ModelSpec,
    family: &PolicyFamily,
    t_mid: f64,
    init: &InitialLaw,
    grid: &TimeGrid,
    n: usize,
    config: &DppConfig,
) -> Result<DppReport> {
    let mid_index = grid.index_of(t_mid)?;
    if mid_index == 0 || mid_index == grid.steps {
        return Err(Error::InvalidParameter(format!(
            "t_mid = {t_mid} must lie strictly between {} and {}",
            grid.s, grid.t_end
        )));
    }
    let leg1 = TimeGrid::new(grid.s, t_mid, mid_index)?;
    let leg2 = TimeGrid::new(t_mid, grid.t_end, grid.steps - mid_index)?;

    let lhs = into_value_estimate(optimize_with(
        model,
        family,
        &config.lhs,
        |policy, eval_seed| {
            estimate_cost(model, policy, init, grid, n, eval_seed).map(|c| (c.mean, c))
        },
    )?);

    // Outer objective: running cost of the first leg plus the optimized
    // restarted value from its terminal law.
    let rhs_objective = |policy: &FeedbackPolicy, eval_seed: u64| -> Result<(f64, RhsParts)> {
        let bundle = simulate_ensemble(model, policy, &leg1, init, n, eval_seed)?;
        let runnings = bundle_costs(model, policy, &bundle, false)?;
        let (running_mean, running_se) = mean_and_std_error(&runnings);
        let mid_law = bundle.terminal_law();
        let inner_cfg = CemConfig {
            seed: derive(config.inner.seed, &[eval_seed]),
            ..config.inner
        };
        let inner_opt = optimize_with(
            model,
            family,
            &inner_cfg,
            |inner_policy, inner_seed| {
                let restarted = crate::simulate::restart_from_empirical(
                    model,
                    inner_policy,
                    t_mid,
                    &mid_law,
                    &leg2,
                    n,
                    inner_seed,
                )?;
                let costs = bundle_costs(model, inner_policy, &restarted, true)?;
                let (mean, se) = mean_and_std_error(&costs);
                Ok((
                    mean,
                    CostEstimate {
                        mean,
                        std_error: se,
                        particles: n,
                        steps: leg2.steps,
                        seed: inner_seed,
                    },
                ))
            },
        )?;
        let inner = into_value_estimate(inner_opt);
        let total = running_mean + inner.cost.mean;
        Ok((
            total,
            RhsParts {
                running_se,
                inner_se: inner.cost.std_error,
                inner_gap: inner.optimizer_gap,
            },
        ))
    };

    let rhs = optimize_with(model, family, &config.outer, rhs_objective)?;

    let rhs_std_error = rhs.payload.running_se + rhs.payload.inner_se;
    let residual = lhs.cost.mean - rhs.best_mean;
    let tolerance = lhs.cost.std_error
        + rhs_std_error
        + lhs.optimizer_gap
        + rhs.optimizer_gap
        + rhs.payload.inner_gap;
    Ok(DppReport {
        lhs,
        rhs_mean: rhs.best_mean,
        rhs_std_error,
        rhs_outer_gap: rhs.optimizer_gap,
        rhs_inner_gap: rhs.payload.inner_gap,
        residual,
        tolerance,
    })
}

struct RhsParts {
    running_se: f64,
    inner_se: f64,
    inner_gap: f64,
}

/// On-disk family description; geometry defaults come from the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyFile {
    Fixed {
        policy: PolicyFile,
    },
    ConstantAtom {},
    GridLogits {
        time_knots: Vec<f64>,
        boxes: Vec<BoundingBox>,
        atoms: Vec<Vec<f64>>,
        #[serde(default)]
        logit_bound: Option<f64>,
    },
}

pub const DEFAULT_LOGIT_BOUND: f64 = 8.0;

impl FamilyFile {
    pub fn into_family(self, model: &ModelSpec) -> Result<PolicyFamily> {
        match self {
            FamilyFile::Fixed { policy } => Ok(PolicyFamily::Fixed(
                policy.into_policy(model.horizon(), model.control_box())?,
            )),
            FamilyFile::ConstantAtom {} => Ok(PolicyFamily::constant_atom(model)),
            FamilyFile::GridLogits {
                time_knots,
                boxes,
                atoms,
                logit_bound,
            } => {
                for (i, atom) in atoms.iter().enumerate() {
                    if !model
                        .control_box()
                        .contains(atom, crate::measures::CONTROL_BOX_TOL)
                    {
                        return Err(Error::AtomOutsideBox { index: i });
                    }
                }
                let skeleton = GridSkeleton::new(time_knots, boxes, atoms)?;
                if (skeleton.horizon() - model.horizon()).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "family knots end at {}, model horizon is {}",
                        skeleton.horizon(),
                        model.horizon()
                    )));
                }
                Ok(PolicyFamily::GridLogits {
                    skeleton,
                    logit_bound: logit_bound.unwrap_or(DEFAULT_LOGIT_BOUND),
                })
            }
        }
    }
}
