//! Relaxed Markovian feedback policies and their canonical-space embedding.
//!
//! A policy maps `(t, x)` to a probability measure over the control set; a
//! strict (point) control is the Dirac special case. Policies here are
//! deterministic pure lookups, so equal queries always return identical
//! measures. A piecewise-constant control path embeds into a single measure
//! on `[0, T] x U` (time-averaged occupation of the control values), which is
//! where the compactness diagnostics live.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{lex_cmp_boxes, BoundingBox};
use crate::measures::{wp_exact_small, ControlMeasure, EmpiricalMeasure};

/// Time/space grid skeleton of a piecewise-constant policy: strictly
/// increasing time knots spanning `[0, T]`, state boxes with pairwise
/// disjoint interiors plus an implicit overflow cell, and a shared control
/// atom set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSkeleton {
    pub time_knots: Vec<f64>,
    pub boxes: Vec<BoundingBox>,
    pub atoms: Vec<Vec<f64>>,
}

impl GridSkeleton {
    pub fn new(time_knots: Vec<f64>, boxes: Vec<BoundingBox>, atoms: Vec<Vec<f64>>) -> Result<Self> {
        if time_knots.len() < 2 {
            return Err(Error::InvalidParameter(
                "need at least two time knots".into(),
            ));
        }
        if time_knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "time knots must be strictly increasing".into(),
            ));
        }
        if time_knots[0].abs() > 1e-9 {
            return Err(Error::InvalidParameter(
                "time knots must start at 0".into(),
            ));
        }
        for (i, a) in boxes.iter().enumerate() {
            for b in boxes.iter().skip(i + 1) {
                if a.interior_overlaps(b) {
                    return Err(Error::InvalidParameter(format!(
                        "state boxes {i} and a later box have overlapping interiors"
                    )));
                }
            }
        }
        if atoms.is_empty() {
            return Err(Error::EmptySamples);
        }
        let k = atoms[0].len();
        if atoms.iter().any(|a| a.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: atoms.iter().map(Vec::len).find(|&l| l != k).unwrap_or(k),
            });
        }
        Ok(GridSkeleton {
            time_knots,
            boxes,
            atoms,
        })
    }

    pub fn n_time_cells(&self) -> usize {
        self.time_knots.len() - 1
    }

    /// Boxes plus the overflow cell.
    pub fn n_space_cells(&self) -> usize {
        self.boxes.len() + 1
    }

    pub fn n_rows(&self) -> usize {
        self.n_time_cells() * self.n_space_cells()
    }

    pub fn horizon(&self) -> f64 {
        *self.time_knots.last().unwrap()
    }

    /// Left-closed time cell index: cell `i` covers `[k_i, k_{i+1})`, with the
    /// final cell closed at `T`.
    pub fn time_cell(&self, t: f64) -> Result<usize> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                lo: 0.0,
                hi: horizon,
            });
        }
        let idx = match self
            .time_knots
            .binary_search_by(|k| k.partial_cmp(&t).unwrap())
        {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        Ok(idx.min(self.n_time_cells() - 1))
    }

    /// Space cell of `x`: the lexicographically smallest containing box, or
    /// the overflow cell when no box contains `x`.
    pub fn space_cell(&self, x: &[f64]) -> usize {
        let mut chosen: Option<usize> = None;
        for (i, b) in self.boxes.iter().enumerate() {
            if b.contains(x, 0.0) {
                chosen = match chosen {
                    None => Some(i),
                    Some(c) => {
                        if lex_cmp_boxes(b, &self.boxes[c]) == std::cmp::Ordering::Less {
                            Some(i)
                        } else {
                            Some(c)
                        }
                    }
                };
            }
        }
        chosen.unwrap_or(self.boxes.len())
    }

    pub fn row_index(&self, time_cell: usize, space_cell: usize) -> usize {
        time_cell * self.n_space_cells() + space_cell
    }
}

/// Piecewise-constant-in-`(t, x)` relaxed feedback: one control measure per
/// (time cell, space cell) over the shared atom set.
#[derive(Debug, Clone)]
pub struct GridPolicy {
    skeleton: GridSkeleton,
    /// Row-major weight table: `n_rows x n_atoms`, each row summing to one.
    weights: Vec<Vec<f64>>,
    rows: Vec<ControlMeasure>,
}

impl GridPolicy {
    pub fn new(skeleton: GridSkeleton, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != skeleton.n_rows() {
            return Err(Error::LengthMismatch {
                what: "weight table rows",
                expected: skeleton.n_rows(),
                got: weights.len(),
            });
        }
        let mut rows = Vec::with_capacity(weights.len());
        for (r, row) in weights.iter().enumerate() {
            if row.len() != skeleton.atoms.len() {
                return Err(Error::LengthMismatch {
                    what: "weight table row",
                    expected: skeleton.atoms.len(),
                    got: row.len(),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "weight row {r} sums to {sum}, expected 1"
                )));
            }
            rows.push(ControlMeasure::new_unchecked_box(&skeleton.atoms, Some(row))?);
        }
        Ok(GridPolicy {
            skeleton,
            weights,
            rows,
        })
    }

    /// Rows from logits, normalized row-wise by softmax. Every parameter
    /// vector yields a valid policy.
    pub fn from_logits(skeleton: GridSkeleton, logits: &[Vec<f64>]) -> Result<Self> {
        let weights = logits.iter().map(|row| softmax(row)).collect::<Vec<_>>();
        Self::new(skeleton, weights)
    }

    pub fn skeleton(&self) -> &GridSkeleton {
        &self.skeleton
    }

    pub fn weight_table(&self) -> &[Vec<f64>] {
        &self.weights
    }

    fn lookup(&self, t: f64, x: &[f64]) -> Result<&ControlMeasure> {
        let tc = self.skeleton.time_cell(t)?;
        let sc = self.skeleton.space_cell(x);
        Ok(&self.rows[self.skeleton.row_index(tc, sc)])
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// A Markovian relaxed feedback rule `(t, x) -> alpha in P(U)`.
#[derive(Debug, Clone)]
pub enum FeedbackPolicy {
    /// The same control measure at every `(t, x)`.
    Constant {
        measure: ControlMeasure,
        horizon: f64,
    },
    Grid(GridPolicy),
    /// A grid policy remembering the logits it was normalized from.
    Parametric {
        grid: GridPolicy,
        logits: Vec<Vec<f64>>,
    },
}

/// Policy returning `alpha` at every `(t, x)` with `t` in `[0, horizon]`.
pub fn constant_policy(alpha: ControlMeasure, horizon: f64) -> Result<FeedbackPolicy> {
    if horizon.is_nan() || horizon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "policy horizon {horizon} must be positive"
        )));
    }
    Ok(FeedbackPolicy::Constant {
        measure: alpha,
        horizon,
    })
}

/// Piecewise-constant policy from a skeleton and a normalized weight table.
pub fn grid_policy(skeleton: GridSkeleton, weights: Vec<Vec<f64>>) -> Result<FeedbackPolicy> {
    Ok(FeedbackPolicy::Grid(GridPolicy::new(skeleton, weights)?))
}

/// The measure `F_t(x)`: a pure lookup with no side effects.
pub fn policy_measure(policy: &FeedbackPolicy, t: f64, x: &[f64]) -> Result<ControlMeasure> {
    match policy {
        FeedbackPolicy::Constant { measure, horizon } => {
            if !(0.0..=*horizon).contains(&t) {
                return Err(Error::TimeOutOfRange {
                    t,
                    lo: 0.0,
                    hi: *horizon,
                });
            }
            Ok(measure.clone())
        }
        FeedbackPolicy::Grid(g) | FeedbackPolicy::Parametric { grid: g, .. } => {
            Ok(g.lookup(t, x)?.clone())
        }
    }
}

impl FeedbackPolicy {
    pub fn horizon(&self) -> f64 {
        match self {
            FeedbackPolicy::Constant { horizon, .. } => *horizon,
            FeedbackPolicy::Grid(g) | FeedbackPolicy::Parametric { grid: g, .. } => {
                g.skeleton().horizon()
            }
        }
    }

    /// Validates every control atom the policy can return against a box.
    pub fn validate_in_box(&self, control_box: &BoundingBox) -> Result<()> {
        match self {
            FeedbackPolicy::Constant { measure, .. } => measure.validate_in_box(control_box),
            FeedbackPolicy::Grid(g) | FeedbackPolicy::Parametric { grid: g, .. } => {
                for (i, atom) in g.skeleton().atoms.iter().enumerate() {
                    if !control_box.contains(atom, crate::measures::CONTROL_BOX_TOL) {
                        return Err(Error::AtomOutsideBox { index: i });
                    }
                }
                Ok(())
            }
        }
    }
}

/// On-disk policy representation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyFile {
    Constant {
        measure: ControlMeasure,
    },
    Grid {
        time_knots: Vec<f64>,
        boxes: Vec<BoundingBox>,
        atoms: Vec<Vec<f64>>,
        weights: Vec<Vec<f64>>,
    },
    Parametric {
        time_knots: Vec<f64>,
        boxes: Vec<BoundingBox>,
        atoms: Vec<Vec<f64>>,
        logits: Vec<Vec<f64>>,
    },
}

impl PolicyFile {
    /// Builds the policy, checking atoms against the model's control box.
    pub fn into_policy(self, horizon: f64, control_box: &BoundingBox) -> Result<FeedbackPolicy> {
        let policy = match self {
            PolicyFile::Constant { measure } => constant_policy(measure, horizon)?,
            PolicyFile::Grid {
                time_knots,
                boxes,
                atoms,
                weights,
            } => {
                let skeleton = GridSkeleton::new(time_knots, boxes, atoms)?;
                check_span(&skeleton, horizon)?;
                grid_policy(skeleton, weights)?
            }
            PolicyFile::Parametric {
                time_knots,
                boxes,
                atoms,
                logits,
            } => {
                let skeleton = GridSkeleton::new(time_knots, boxes, atoms)?;
                check_span(&skeleton, horizon)?;
                FeedbackPolicy::Parametric {
                    grid: GridPolicy::from_logits(skeleton, &logits)?,
                    logits,
                }
            }
        };
        policy.validate_in_box(control_box)?;
        Ok(policy)
    }

    pub fn from_policy(policy: &FeedbackPolicy) -> PolicyFile {
        match policy {
            FeedbackPolicy::Constant { measure, .. } => PolicyFile::Constant {
                measure: measure.clone(),
            },
            FeedbackPolicy::Grid(g) => PolicyFile::Grid {
                time_knots: g.skeleton().time_knots.clone(),
                boxes: g.skeleton().boxes.clone(),
                atoms: g.skeleton().atoms.clone(),
                weights: g.weight_table().to_vec(),
            },
            FeedbackPolicy::Parametric { grid, logits } => PolicyFile::Parametric {
                time_knots: grid.skeleton().time_knots.clone(),
                boxes: grid.skeleton().boxes.clone(),
                atoms: grid.skeleton().atoms.clone(),
                logits: logits.clone(),
            },
        }
    }
}

fn check_span(skeleton: &GridSkeleton, horizon: f64) -> Result<()> {
    if (skeleton.horizon() - horizon).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "policy time knots end at {}, model horizon is {horizon}",
            skeleton.horizon()
        )));
    }
    Ok(())
}

/// A control path embedded as a single probability measure on `[0, T] x U`:
/// each grid cell contributes its control atoms at the cell midpoint with
/// weight `w / M`.
#[derive(Debug, Clone)]
pub struct CanonicalControl {
    dim_control: usize,
    measure: EmpiricalMeasure,
}

impl CanonicalControl {
    pub fn dim_control(&self) -> usize {
        self.dim_control
    }

    /// The embedded measure over `R^{1+k}`; atoms are `[time, control...]`.
    pub fn as_measure(&self) -> &EmpiricalMeasure {
        &self.measure
    }

    pub fn total_mass(&self) -> f64 {
        self.measure.weights().iter().sum()
    }

    /// First marginal (the time coordinate) as a one-dimensional measure.
    pub fn time_marginal(&self) -> EmpiricalMeasure {
        let atoms: Vec<f64> = self.measure.atoms().map(|a| a[0]).collect();
        EmpiricalMeasure::from_flat(1, atoms, Some(self.measure.weights().to_vec()))
            .expect("marginal of a valid embedding")
    }
}

/// Embeds a piecewise-constant control path on a uniform `M`-cell grid over
/// `[0, horizon]` as a measure on `[0, horizon] x U`. Entry `i` of the path
/// is `(t_i, alpha_i)` with `t_i = i * horizon / M` the left cell endpoint.
pub fn canonical_embed(
    control_path: &[(f64, ControlMeasure)],
    horizon: f64,
) -> Result<CanonicalControl> {
    if control_path.is_empty() {
        return Err(Error::EmptySamples);
    }
    if horizon.is_nan() || horizon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} must be positive"
        )));
    }
    let m = control_path.len();
    let dt = horizon / m as f64;
    let tol = 1e-9 * horizon.max(1.0);
    for (i, (t, _)) in control_path.iter().enumerate() {
        let expected = i as f64 * dt;
        if (t - expected).abs() > tol {
            return Err(Error::InvalidParameter(format!(
                "non-uniform grid: cell {i} starts at {t}, expected {expected}"
            )));
        }
    }
    let k = control_path[0].1.dim();
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (i, (_, alpha)) in control_path.iter().enumerate() {
        if alpha.dim() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: alpha.dim(),
            });
        }
        let midpoint = (i as f64 + 0.5) * dt;
        for (u, &w) in alpha.atoms().zip(alpha.weights()) {
            atoms.push(midpoint);
            atoms.extend_from_slice(u);
            weights.push(w / m as f64);
        }
    }
    Ok(CanonicalControl {
        dim_control: k,
        measure: EmpiricalMeasure::from_flat(1 + k, atoms, Some(weights))?,
    })
}

/// Exact `W1` between two embedded control paths, with the Euclidean metric
/// on the product space `[0, T] x U`. A metric for weak convergence on the
/// compact product.
pub fn relaxed_distance(a: &CanonicalControl, b: &CanonicalControl) -> Result<f64> {
    wp_exact_small(a.as_measure(), b.as_measure(), 1)
}

/// Samples the policy along a uniform grid (one lookup per cell at the cell's
/// left endpoint, state held fixed), yielding the path [`canonical_embed`]
/// consumes. Intended for policies that ignore the state.
pub fn policy_control_path(
    policy: &FeedbackPolicy,
    x: &[f64],
    cells: usize,
    horizon: f64,
) -> Result<Vec<(f64, ControlMeasure)>> {
    if cells == 0 {
        return Err(Error::InvalidParameter("need at least one cell".into()));
    }
    let dt = horizon / cells as f64;
    (0..cells)
        .map(|i| {
            let t = i as f64 * dt;
            policy_measure(policy, t, x).map(|m| (t, m))
        })
        .collect()
}
