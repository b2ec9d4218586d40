//! Numerical checks of the quantitative estimates: every check runs an
//! experiment, tests a list of inequalities with explicit margins, and
//! reports pass/fail. The verdict is exactly "all inequalities within
//! margin"; there are no hidden heuristics.
//!
//! Constants the estimates leave unnamed are fixed here, generously, and
//! documented: the L1 Burkholder-Davis-Gundy constant is taken as 2, the
//! Gronwall multiplier for the coupled-stability rate is `K5 = 8 K1`, and
//! the moment-growth envelope uses `C(T) = 4 K2 (1 + T + sqrt(T))`. All
//! checks are one-sided, so generosity never causes a false failure. Margins
//! of two-run comparisons are 3x a replicate-noise calibration at the same
//! `(model, N, M)`.

use serde::Serialize;
use serde_json::json;

use crate::controls::FeedbackPolicy;
use crate::error::{Error, Result};
use crate::linalg::{dist, mean_and_std_error, median, norm};
use crate::measures::{w1_exact_1d, wp_exact_small, EmpiricalMeasure, SUPPORT_CAP};
use crate::model::ModelSpec;
use crate::objective::{estimate_value, CemConfig, PolicyFamily};
use crate::rng::{derive, DOMAIN_CALIBRATE};
use crate::simulate::{
    restart_from_empirical, sample_coupled_initials, simulate_ensemble, simulate_from_states,
    InitialLaw, PathBundle, TimeGrid,
};

/// L1 Burkholder-Davis-Gundy constant used when assembling envelopes.
pub const BDG_L1: f64 = 2.0;
/// The coupled-stability rate is `K5 = GRONWALL_FACTOR * K1`, covering the
/// drift and stochastic-integral terms of the difference estimate.
pub const GRONWALL_FACTOR: f64 = 8.0;
/// Number of replicate pairs behind two-run noise calibrations.
pub const CALIBRATION_PAIRS: usize = 5;

/// Moment-growth envelope constant assembled from the growth bound `K2`, the
/// horizon span, and [`BDG_L1`].
pub fn moment_envelope_constant(k2: f64, t_span: f64) -> f64 {
    2.0 * BDG_L1 * k2 * (1.0 + t_span + t_span.sqrt())
}

/// One tested inequality: passes when `lhs <= rhs + margin`.
#[derive(Debug, Clone, Serialize)]
pub struct Inequality {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

impl Inequality {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + self.margin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Outcome of one check; reproducible bit-exactly from `(config, seed)`.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub check_name: String,
    pub inequalities: Vec<Inequality>,
    pub verdict: Verdict,
    pub config_echo: serde_json::Value,
    pub seed: u64,
}

impl CheckReport {
    fn new(
        name: &str,
        inequalities: Vec<Inequality>,
        config_echo: serde_json::Value,
        seed: u64,
    ) -> Self {
        let verdict = if inequalities.iter().all(Inequality::holds) {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        CheckReport {
            check_name: name.into(),
            inequalities,
            verdict,
            config_echo,
            seed,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

/// `W1` between ensemble laws: exact in one dimension for any size; exact
/// transport otherwise, with a deterministic stride subsample beyond the
/// solver cap (documented approximation for diagnostics only).
fn w1_between(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.dim() == 1 {
        return w1_exact_1d(a, b);
    }
    let shrink = |m: &EmpiricalMeasure| -> Result<EmpiricalMeasure> {
        if m.len() <= SUPPORT_CAP {
            return Ok(m.clone());
        }
        let stride = m.len().div_ceil(SUPPORT_CAP);
        let pts: Vec<Vec<f64>> = m
            .atoms()
            .step_by(stride)
            .map(<[f64]>::to_vec)
            .collect();
        EmpiricalMeasure::uniform(&pts)
    };
    wp_exact_small(&shrink(a)?, &shrink(b)?, 1)
}

fn require_sigma_state_time_only(model: &ModelSpec, check: &str) -> Result<()> {
    if !model.sigma_state_time_only() {
        return Err(Error::Config(format!(
            "{check} requires a diffusion depending on (t, x) only; model '{}' declares otherwise",
            model.name()
        )));
    }
    Ok(())
}

/// Coupled two-ensemble stability: simulate from `mu` and `mu_tilde` with the
/// same noise and coupled initial draws, then test at every grid time
///
/// 1. `W1(law, law~) <= mean sup |X - X~|` (zero margin: the paired coupling
///    witnesses the transport cost), and
/// 2. `mean sup |X - X~| <= mean|xi - xi~| * exp(K5 (r - s)) + 3 SE`.
pub fn check_stability(
    model: &ModelSpec,
    policy: &FeedbackPolicy,
    mu: &InitialLaw,
    mu_tilde: &InitialLaw,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<CheckReport> {
    require_sigma_state_time_only(model, "check_stability")?;
    let k1 = model.constants().k1.ok_or_else(|| {
        Error::Config(format!("model '{}' does not declare K1", model.name()))
    })?;
    let k5 = GRONWALL_FACTOR * k1;
    let (xs, ys) = sample_coupled_initials(mu, mu_tilde, n, seed)?;
    let bundle_a = simulate_from_states(model, policy, grid, xs, n, seed)?;
    let bundle_b = simulate_from_states(model, policy, grid, ys, n, seed)?;

    let initial_gap: f64 = (0..n)
        .map(|p| dist(bundle_a.state(p, 0), bundle_b.state(p, 0)))
        .sum::<f64>()
        / n as f64;

    let mut running_sup = vec![0.0f64; n];
    let mut inequalities = Vec::with_capacity(2 * grid.n_times());
    for i in 0..grid.n_times() {
        for (p, sup) in running_sup.iter_mut().enumerate() {
            let gap = dist(bundle_a.state(p, i), bundle_b.state(p, i));
            *sup = sup.max(gap);
        }
        let (mean_sup, se_sup) = mean_and_std_error(&running_sup);
        let w1 = w1_between(&bundle_a.empirical_at(i), &bundle_b.empirical_at(i))?;
        let r = grid.time(i);
        inequalities.push(Inequality {
            label: format!("W1(law, law~) <= mean sup |dX| at t = {r}"),
            lhs: w1,
            rhs: mean_sup,
            margin: 1e-12,
        });
        inequalities.push(Inequality {
            label: format!("mean sup |dX| <= E|dxi| exp(K5 (t - s)) at t = {r}"),
            lhs: mean_sup,
            rhs: initial_gap * (k5 * (r - grid.s)).exp(),
            margin: 3.0 * se_sup + 1e-12,
        });
    }
    Ok(CheckReport::new(
        "stability",
        inequalities,
        json!({
            "model": model.name(),
            "grid": grid,
            "particles": n,
            "k1": k1,
            "k5": k5,
            "gronwall_factor": GRONWALL_FACTOR,
        }),
        seed,
    ))
}

/// First-moment growth: `mean sup_t |X_t|` against the Gronwall envelope
/// `(E|xi| + C(T)) exp(C(T) (T - s))` with
/// [`moment_envelope_constant`] and a 3-standard-error margin.
pub fn check_moment(
    model: &ModelSpec,
    policy: &FeedbackPolicy,
    init: &InitialLaw,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<CheckReport> {
    let k2 = model.constants().k2.ok_or_else(|| {
        Error::Config(format!("model '{}' does not declare K2", model.name()))
    })?;
    let bundle = simulate_ensemble(model, policy, grid, init, n, seed)?;
    let sups = bundle.sup_abs_per_particle();
    let (mean_sup, se) = mean_and_std_error(&sups);
    let mean_init: f64 = (0..n)
        .map(|p| norm(bundle.state(p, 0)))
        .sum::<f64>()
        / n as f64;
    let t_span = grid.t_end - grid.s;
    let c_t = moment_envelope_constant(k2, t_span);
    let bound = (mean_init + c_t) * (c_t * t_span).exp();
    let inequalities = vec![Inequality {
        label: "mean sup_t |X_t| <= (E|xi| + C(T)) exp(C(T)(T - s))".into(),
        lhs: mean_sup,
        rhs: bound,
        margin: 3.0 * se,
    }];
    Ok(CheckReport::new(
        "moment",
        inequalities,
        json!({
            "model": model.name(),
            "grid": grid,
            "particles": n,
            "k2": k2,
            "c_t": c_t,
            "bdg_l1": BDG_L1,
        }),
        seed,
    ))
}

/// Tightness modulus: over all grid pairs `(t, s)`,
/// `mean |X_t - X_s| <= C (|t - s| + sqrt(|t - s|)) + 3 SE` with
/// `C = b_sup + 2 sigma_sup`. The report carries the worst pair; the verdict
/// covers every pair.
pub fn check_tightness_modulus(bundle: &PathBundle, model: &ModelSpec) -> Result<CheckReport> {
    let b_sup = model.constants().b_sup.ok_or_else(|| {
        Error::Config(format!("model '{}' does not declare b_sup", model.name()))
    })?;
    let sigma_sup = model.constants().sigma_sup.ok_or_else(|| {
        Error::Config(format!("model '{}' does not declare sigma_sup", model.name()))
    })?;
    let c = b_sup + 2.0 * sigma_sup;
    let grid = bundle.grid();
    let n = bundle.n_particles();

    let mut worst: Option<Inequality> = None;
    let mut worst_slack = f64::INFINITY;
    let mut pairs = 0usize;
    let mut diffs = vec![0.0f64; n];
    for i in 0..grid.n_times() {
        for j in (i + 1)..grid.n_times() {
            for (p, d) in diffs.iter_mut().enumerate() {
                *d = dist(bundle.state(p, j), bundle.state(p, i));
            }
            let (mean, se) = mean_and_std_error(&diffs);
            let dt = grid.time(j) - grid.time(i);
            let rhs = c * (dt + dt.sqrt());
            let margin = 3.0 * se;
            let slack = rhs + margin - mean;
            pairs += 1;
            if slack < worst_slack {
                worst_slack = slack;
                worst = Some(Inequality {
                    label: format!(
                        "mean |X_t - X_s| <= C(|t-s| + sqrt|t-s|), worst of {pairs_note} pairs at (t, s) = ({}, {})",
                        grid.time(j),
                        grid.time(i),
                        pairs_note = "all",
                    ),
                    lhs: mean,
                    rhs,
                    margin,
                });
            }
        }
    }
    let worst = worst.ok_or_else(|| Error::InvalidParameter("grid has no pairs".into()))?;
    Ok(CheckReport::new(
        "tightness_modulus",
        vec![worst],
        json!({
            "model": model.name(),
            "grid": grid,
            "particles": n,
            "c": c,
            "pairs_tested": pairs,
        }),
        bundle.seed(),
    ))
}

/// `W1` between two one-dimensional initial laws, where a closed form exists.
fn initial_law_w1(a: &InitialLaw, b: &InitialLaw) -> Result<f64> {
    match (a, b) {
        (InitialLaw::Dirac { point: pa }, InitialLaw::Dirac { point: pb }) => {
            Ok(dist(pa, pb))
        }
        (InitialLaw::Empirical { measure: ma }, InitialLaw::Empirical { measure: mb }) => {
            if ma.dim() == 1 {
                w1_exact_1d(ma, mb)
            } else {
                wp_exact_small(ma, mb, 1)
            }
        }
        (
            InitialLaw::GaussianIso {
                mean: m1,
                std_dev: s1,
            },
            InitialLaw::GaussianIso {
                mean: m2,
                std_dev: s2,
            },
        ) if (s1 - s2).abs() < 1e-15 => Ok(dist(m1, m2)),
        _ => Err(Error::InvalidParameter(
            "no exact W1 for this initial-law pair; use empirical laws".into(),
        )),
    }
}

/// Value continuity: estimates `V` at a base point and at perturbed
/// `(s', mu')`, and tests the max ratio
/// `|dV| / (sqrt|ds| + W1(mu, mu'))` against a declared `C_max` plus a
/// noise-over-denominator tolerance. Perturbations equal to the base are
/// degenerate and skipped; all-degenerate input is an error.
#[allow(clippy::too_many_arguments)]
pub fn check_value_continuity(
    model: &ModelSpec,
    family: &PolicyFamily,
    base_s: f64,
    base_init: &InitialLaw,
    perturbations: &[(f64, InitialLaw)],
    steps: usize,
    n: usize,
    cem: &CemConfig,
    c_max: f64,
) -> Result<CheckReport> {
    require_sigma_state_time_only(model, "check_value_continuity")?;
    let t_end = model.horizon();
    if base_s >= t_end {
        return Err(Error::InvalidParameter(format!(
            "base start {base_s} must precede the horizon {t_end}"
        )));
    }
    let base_grid = TimeGrid::new(base_s, t_end, steps)?;
    let base = estimate_value(model, family, base_init, &base_grid, n, cem)?;

    let mut inequalities = Vec::new();
    for (idx, (s_p, init_p)) in perturbations.iter().enumerate() {
        let denom = (s_p - base_s).abs().sqrt() + initial_law_w1(base_init, init_p)?;
        if denom <= 1e-12 {
            continue; // degenerate perturbation
        }
        let grid_p = TimeGrid::new(*s_p, t_end, steps)?;
        let v_p = estimate_value(model, family, init_p, &grid_p, n, cem)?;
        let ratio = (v_p.cost.mean - base.cost.mean).abs() / denom;
        let tolerance = (base.cost.std_error
            + v_p.cost.std_error
            + base.optimizer_gap
            + v_p.optimizer_gap)
            / denom;
        inequalities.push(Inequality {
            label: format!(
                "|dV| / (sqrt|ds| + W1) <= C_max for perturbation {idx} (s' = {s_p})"
            ),
            lhs: ratio,
            rhs: c_max,
            margin: tolerance,
        });
    }
    if inequalities.is_empty() {
        return Err(Error::InvalidParameter(
            "all perturbations are degenerate".into(),
        ));
    }
    Ok(CheckReport::new(
        "value_continuity",
        inequalities,
        json!({
            "model": model.name(),
            "base_s": base_s,
            "steps": steps,
            "particles": n,
            "c_max": c_max,
            "perturbations": perturbations.len(),
        }),
        cem.seed,
    ))
}

fn replicate_noise_level(
    model: &ModelSpec,
    policy: &FeedbackPolicy,
    init: &InitialLaw,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let mut levels = Vec::with_capacity(CALIBRATION_PAIRS);
    for r in 0..CALIBRATION_PAIRS as u64 {
        let sa = derive(seed, &[DOMAIN_CALIBRATE, r, 0]);
        let sb = derive(seed, &[DOMAIN_CALIBRATE, r, 1]);
        let a = simulate_ensemble(model, policy, grid, init, n, sa)?;
        let b = simulate_ensemble(model, policy, grid, init, n, sb)?;
        levels.push(w1_between(&a.terminal_law(), &b.terminal_law())?);
    }
    let (mean, _) = mean_and_std_error(&levels);
    Ok(mean)
}

/// Uniqueness-in-law surrogate: two runs from independent resamplings of the
/// same empirical initial law must produce terminal laws within 3x the
/// replicate noise of same-law seed pairs.
pub fn check_law_invariance(
    model: &ModelSpec,
    policy: &FeedbackPolicy,
    mu: &EmpiricalMeasure,
    grid: &TimeGrid,
    n: usize,
    seeds: (u64, u64),
) -> Result<CheckReport> {
    if seeds.0 == seeds.1 {
        return Err(Error::InvalidParameter(
            "law-invariance check needs two distinct seeds".into(),
        ));
    }
    let init = InitialLaw::empirical(mu.clone());
    let a = simulate_ensemble(model, policy, grid, &init, n, seeds.0)?;
    let b = simulate_ensemble(model, policy, grid, &init, n, seeds.1)?;
    let observed = w1_between(&a.terminal_law(), &b.terminal_law())?;
    let level = replicate_noise_level(model, policy, &init, grid, n, derive(seeds.0, &[seeds.1]))?;
    let inequalities = vec![Inequality {
        label: "W1(terminal laws across seeds) <= 3 x replicate noise".into(),
        lhs: observed,
        rhs: 3.0 * level,
        margin: 1e-12,
    }];
    Ok(CheckReport::new(
        "law_invariance",
        inequalities,
        json!({
            "model": model.name(),
            "grid": grid,
            "particles": n,
            "seeds": [seeds.0, seeds.1],
            "calibration_pairs": CALIBRATION_PAIRS,
            "noise_level": level,
        }),
        seeds.0,
    ))
}

/// Propagation-of-chaos sanity: the median `W1` between terminal laws at
/// consecutive ensemble sizes (over 5 replicates) must be nonincreasing.
/// Monotonicity only; no rate is asserted.
pub fn check_chaos_convergence(
    model: &ModelSpec,
    policy: &FeedbackPolicy,
    init: &InitialLaw,
    grid: &TimeGrid,
    n_schedule: &[usize],
    seed: u64,
) -> Result<CheckReport> {
    if n_schedule.len() < 3 {
        return Err(Error::InvalidParameter(
            "chaos schedule needs at least 3 entries".into(),
        ));
    }
    if n_schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "chaos schedule must be increasing".into(),
        ));
    }
    let reps = 5u64;
    let mut medians = Vec::with_capacity(n_schedule.len() - 1);
    for (level, pair) in n_schedule.windows(2).enumerate() {
        let mut dists = Vec::with_capacity(reps as usize);
        for r in 0..reps {
            let sa = derive(seed, &[level as u64, r, 0]);
            let sb = derive(seed, &[level as u64, r, 1]);
            let a = simulate_ensemble(model, policy, grid, init, pair[0], sa)?;
            let b = simulate_ensemble(model, policy, grid, init, pair[1], sb)?;
            dists.push(w1_between(&a.terminal_law(), &b.terminal_law())?);
        }
        medians.push(median(&dists));
    }
    let inequalities = medians
        .windows(2)
        .enumerate()
        .map(|(k, w)| Inequality {
            label: format!(
                "median W1 at sizes ({}, {}) <= median at ({}, {})",
                n_schedule[k + 1],
                n_schedule[k + 2],
                n_schedule[k],
                n_schedule[k + 1]
            ),
            lhs: w[1],
            rhs: w[0],
            margin: 1e-12,
        })
        .collect();
    Ok(CheckReport::new(
        "chaos_convergence",
        inequalities,
        json!({
            "model": model.name(),
            "grid": grid,
            "schedule": n_schedule,
            "replicates": reps,
            "medians": medians,
        }),
        seed,
    ))
}

/// Flow property: the terminal law of a direct run matches the terminal law
/// of a run restarted at `t_mid` from the intermediate empirical law, within
/// 3x replicate noise.
pub fn check_flow_property(
    model: &ModelSpec,
    policy: &FeedbackPolicy,
    t_mid: f64,
    init: &InitialLaw,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<CheckReport> {
    let mid_index = grid.index_of(t_mid)?;
    if mid_index >= grid.steps {
        return Err(Error::InvalidParameter(format!(
            "t_mid = {t_mid} must precede the grid end {}",
            grid.t_end
        )));
    }
    let direct = simulate_ensemble(model, policy, grid, init, n, seed)?;
    let mid_law = direct.empirical_at(mid_index);
    let restart_grid = if mid_index == 0 {
        *grid
    } else {
        TimeGrid::new(t_mid, grid.t_end, grid.steps - mid_index)?
    };
    let restarted = restart_from_empirical(
        model,
        policy,
        t_mid,
        &mid_law,
        &restart_grid,
        n,
        derive(seed, &[0x666c6f77]),
    )?;
    let observed = w1_between(&direct.terminal_law(), &restarted.terminal_law())?;
    let level = replicate_noise_level(model, policy, init, grid, n, seed)?;
    let inequalities = vec![Inequality {
        label: "W1(direct terminal law, restarted terminal law) <= 3 x replicate noise".into(),
        lhs: observed,
        rhs: 3.0 * level,
        margin: 1e-12,
    }];
    Ok(CheckReport::new(
        "flow_property",
        inequalities,
        json!({
            "model": model.name(),
            "grid": grid,
            "t_mid": t_mid,
            "particles": n,
            "noise_level": level,
        }),
        seed,
    ))
}
