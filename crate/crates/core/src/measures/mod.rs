//! Probability measures on `R^d` and on the control set `U`, represented as
//! weighted atom clouds.
//!
//! An [`EmpiricalMeasure`] stands in for a law `mu` over `R^d` (in particular
//! for the particle approximation of `Law(X_t)`); a [`ControlMeasure`] is a
//! finitely supported element of `P(U)` with `U` a compact box. Exact
//! transport distances live in [`transport`].

pub mod transport;

use std::sync::OnceLock;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::{lex_cmp_points, BoundingBox};
use crate::linalg::norm;

pub use transport::{
    optimal_coupling, w1_auto, w1_exact_1d, w1_truncated, wp_exact_small, Coupling, SUPPORT_CAP,
};

/// Tolerance for the weights-sum-to-one invariant.
pub const WEIGHT_TOL: f64 = 1e-12;
/// Coordinate tolerance when merging coinciding atoms.
pub const ATOM_MERGE_TOL: f64 = 1e-12;

/// A finitely supported probability measure on `R^d`: a weighted atom cloud.
///
/// Atoms are stored flat (`n * dim` coordinates); weights are nonnegative and
/// sum to one within [`WEIGHT_TOL`].
#[derive(Debug, Clone)]
pub struct EmpiricalMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
    mean_cache: OnceLock<Vec<f64>>,
}

impl PartialEq for EmpiricalMeasure {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.atoms == other.atoms && self.weights == other.weights
    }
}

impl EmpiricalMeasure {
    /// Builds a measure from sample points; `None` weights means uniform.
    /// Given weights are renormalized to sum to one.
    pub fn from_samples(samples: &[Vec<f64>], weights: Option<&[f64]>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        let dim = samples[0].len();
        let mut flat = Vec::with_capacity(samples.len() * dim);
        for s in samples {
            if s.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.len(),
                });
            }
            flat.extend_from_slice(s);
        }
        Self::from_flat(dim, flat, weights.map(|w| w.to_vec()))
    }

    /// Builds a measure from flat coordinate storage (`atoms.len() = n * dim`).
    pub fn from_flat(dim: usize, atoms: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        if atoms.is_empty() || !atoms.len().is_multiple_of(dim) {
            return Err(Error::LengthMismatch {
                what: "flat atom storage",
                expected: dim.max(1),
                got: atoms.len(),
            });
        }
        if atoms.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: "atom" });
        }
        let n = atoms.len() / dim;
        let weights = match weights {
            None => vec![1.0 / n as f64; n],
            Some(w) => {
                if w.len() != n {
                    return Err(Error::LengthMismatch {
                        what: "weights",
                        expected: n,
                        got: w.len(),
                    });
                }
                if let Some((i, &bad)) = w.iter().enumerate().find(|(_, x)| **x < 0.0) {
                    return Err(Error::NegativeWeight {
                        index: i,
                        value: bad,
                    });
                }
                if w.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { what: "weight" });
                }
                let sum: f64 = w.iter().sum();
                if sum <= 0.0 {
                    return Err(Error::ZeroMass { sum });
                }
                w.iter().map(|x| x / sum).collect()
            }
        };
        Ok(EmpiricalMeasure {
            dim,
            atoms,
            weights,
            mean_cache: OnceLock::new(),
        })
    }

    /// A point mass at `point`.
    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::from_flat(point.len(), point.to_vec(), None)
    }

    /// Uniform weights on the given points.
    pub fn uniform(points: &[Vec<f64>]) -> Result<Self> {
        Self::from_samples(points, None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false // at least one atom by construction
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn flat_atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Barycenter `int z mu(dz)`, cached after the first call.
    pub fn mean(&self) -> &[f64] {
        self.mean_cache.get_or_init(|| {
            let mut m = vec![0.0; self.dim];
            for (a, &w) in self.atoms().zip(&self.weights) {
                for (mi, ai) in m.iter_mut().zip(a) {
                    *mi += w * ai;
                }
            }
            m
        })
    }

    /// `int |x|^p mu(dx)` for `p >= 1` (Euclidean norm).
    pub fn abs_moment(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "moment order p = {p} must be >= 1"
            )));
        }
        Ok(self
            .atoms()
            .zip(&self.weights)
            .map(|(a, &w)| w * norm(a).powf(p))
            .sum())
    }

    /// True when all weights equal `1/n` exactly up to last-ulp noise.
    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - u).abs() <= 1e-15)
    }

    /// The convex combination `(1 - eps) * self + eps * other` as an atom cloud.
    pub fn mix(&self, other: &EmpiricalMeasure, eps: f64) -> Result<EmpiricalMeasure> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::InvalidParameter(format!(
                "mixture weight {eps} outside [0,1]"
            )));
        }
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        let mut weights: Vec<f64> = self.weights.iter().map(|w| (1.0 - eps) * w).collect();
        weights.extend(other.weights.iter().map(|w| eps * w));
        EmpiricalMeasure::from_flat(self.dim, atoms, Some(weights))
    }
}

fn serialize_measure<S: Serializer>(
    dim: usize,
    atoms: &[f64],
    weights: &[f64],
    uniform: bool,
    serializer: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeStruct;
    let nested: Vec<&[f64]> = atoms.chunks_exact(dim).collect();
    let n_fields = if uniform { 2 } else { 3 };
    let mut st = serializer.serialize_struct("Measure", n_fields)?;
    st.serialize_field("dim", &dim)?;
    st.serialize_field("atoms", &nested)?;
    if !uniform {
        st.serialize_field("weights", weights)?;
    }
    st.end()
}

#[derive(Deserialize)]
struct RawMeasure {
    dim: usize,
    atoms: Vec<Vec<f64>>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

impl Serialize for EmpiricalMeasure {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serialize_measure(
            self.dim,
            &self.atoms,
            &self.weights,
            self.is_uniform(),
            serializer,
        )
    }
}

impl<'de> Deserialize<'de> for EmpiricalMeasure {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = RawMeasure::deserialize(deserializer)?;
        for a in &raw.atoms {
            if a.len() != raw.dim {
                return Err(D::Error::custom(format!(
                    "atom of length {} does not match dim {}",
                    a.len(),
                    raw.dim
                )));
            }
        }
        EmpiricalMeasure::from_samples(&raw.atoms, raw.weights.as_deref())
            .map_err(D::Error::custom)
    }
}

/// A finitely supported probability measure on the compact control set `U`.
///
/// Membership in the control box is validated against the box declared by the
/// model; deserialized measures must be re-validated with
/// [`ControlMeasure::validate_in_box`] once the box is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

/// Face tolerance when checking control atoms against the box.
pub const CONTROL_BOX_TOL: f64 = 1e-9;

impl ControlMeasure {
    pub fn new(
        atoms: &[Vec<f64>],
        weights: Option<&[f64]>,
        control_box: &BoundingBox,
    ) -> Result<Self> {
        let m = EmpiricalMeasure::from_samples(atoms, weights)?;
        let cm = ControlMeasure {
            dim: m.dim,
            atoms: m.atoms,
            weights: m.weights,
        };
        cm.validate_in_box(control_box)?;
        Ok(cm)
    }

    /// Point control `u` embedded as the Dirac measure `delta_u`.
    pub fn dirac(point: &[f64], control_box: &BoundingBox) -> Result<Self> {
        Self::new(&[point.to_vec()], None, control_box)
    }

    /// Construction without a box (for deserialization); call
    /// [`validate_in_box`](Self::validate_in_box) before use with a model.
    pub fn new_unchecked_box(atoms: &[Vec<f64>], weights: Option<&[f64]>) -> Result<Self> {
        let m = EmpiricalMeasure::from_samples(atoms, weights)?;
        Ok(ControlMeasure {
            dim: m.dim,
            atoms: m.atoms,
            weights: m.weights,
        })
    }

    pub fn validate_in_box(&self, control_box: &BoundingBox) -> Result<()> {
        if control_box.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: control_box.dim(),
                got: self.dim,
            });
        }
        for (i, a) in self.atoms().enumerate() {
            if !control_box.contains(a, CONTROL_BOX_TOL) {
                return Err(Error::AtomOutsideBox { index: i });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mean control `int u alpha(du)`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (a, &w) in self.atoms().zip(&self.weights) {
            for (mi, ai) in m.iter_mut().zip(a) {
                *mi += w * ai;
            }
        }
        m
    }

    /// Convex combination `lambda * a + (1 - lambda) * b`.
    pub fn mixture(a: &ControlMeasure, b: &ControlMeasure, lambda: f64) -> Result<ControlMeasure> {
        if a.dim != b.dim {
            return Err(Error::DimensionMismatch {
                expected: a.dim,
                got: b.dim,
            });
        }
        let mut atoms = a.atoms.clone();
        atoms.extend_from_slice(&b.atoms);
        let mut weights: Vec<f64> = a.weights.iter().map(|w| lambda * w).collect();
        weights.extend(b.weights.iter().map(|w| (1.0 - lambda) * w));
        let m = EmpiricalMeasure::from_flat(a.dim, atoms, Some(weights))?;
        Ok(ControlMeasure {
            dim: m.dim,
            atoms: m.atoms,
            weights: m.weights,
        })
    }

    fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - u).abs() <= 1e-15)
    }
}

impl Serialize for ControlMeasure {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serialize_measure(
            self.dim,
            &self.atoms,
            &self.weights,
            self.is_uniform(),
            serializer,
        )
    }
}

impl<'de> Deserialize<'de> for ControlMeasure {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = RawMeasure::deserialize(deserializer)?;
        ControlMeasure::new_unchecked_box(&raw.atoms, raw.weights.as_deref())
            .map_err(D::Error::custom)
    }
}

/// Total variation `sum_x |mu({x}) - nu({x})|` over the union of supports,
/// with atoms merged when every coordinate agrees within [`ATOM_MERGE_TOL`].
/// The canonical representative of a merged group is its lexicographically
/// smallest member. On discrete measures this equals
/// `sup { |<f,mu> - <f,nu>| : |f| <= 1 }`.
pub fn tv_discrete(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    // (point, signed weight): +w from mu, -w from nu.
    let mut entries: Vec<(&[f64], f64)> = mu
        .atoms()
        .zip(mu.weights())
        .map(|(a, &w)| (a, w))
        .chain(nu.atoms().zip(nu.weights()).map(|(a, &w)| (a, -w)))
        .collect();
    entries.sort_by(|a, b| lex_cmp_points(a.0, b.0));

    let mut total = 0.0;
    let mut idx = 0;
    while idx < entries.len() {
        let rep = entries[idx].0;
        let mut net = 0.0;
        while idx < entries.len() {
            let (pt, w) = entries[idx];
            let same = pt
                .iter()
                .zip(rep)
                .all(|(x, y)| (x - y).abs() <= ATOM_MERGE_TOL);
            if !same {
                break;
            }
            net += w;
            idx += 1;
        }
        total += net.abs();
    }
    Ok(total)
}

/// Outcome of probing a functional `h : P(R^d) -> R` for a linear functional
/// derivative in the direction `nu - mu`.
#[derive(Debug, Clone, Serialize)]
pub struct LfdReport {
    /// `(eps, difference quotient)` for each schedule entry, in input order.
    pub quotients: Vec<(f64, f64)>,
    /// Polynomial extrapolation of the quotients to `eps = 0`.
    pub extrapolated: f64,
    /// Magnitude of the last extrapolation correction; a small value signals
    /// a stable numerical limit, a large one signals a dubious trend.
    pub last_correction: f64,
}

/// Difference quotients `[h((1-eps) mu + eps nu) - h(mu)] / eps` along a
/// strictly decreasing positive schedule, with the Richardson/Neville
/// extrapolation of the trend to `eps = 0`.
///
/// When `h` has a linear functional derivative `dh/dm`, this limit equals
/// `int dh/dm(mu)(y) d(nu - mu)(y)`; no existence claim is made, only the
/// numerical trend is reported.
pub fn lfd_directional<H>(
    h: H,
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    eps_schedule: &[f64],
) -> Result<LfdReport>
where
    H: Fn(&EmpiricalMeasure) -> f64,
{
    if eps_schedule.is_empty() {
        return Err(Error::InvalidParameter("empty eps schedule".into()));
    }
    for w in eps_schedule.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::InvalidParameter(
                "eps schedule must be strictly decreasing".into(),
            ));
        }
    }
    if eps_schedule[0] > 1.0 || *eps_schedule.last().unwrap() <= 0.0 {
        return Err(Error::InvalidParameter(
            "eps schedule must lie in (0, 1]".into(),
        ));
    }

    let h_mu = h(mu);
    if !h_mu.is_finite() {
        return Err(Error::NonFinite {
            what: "h(mu) evaluation",
        });
    }
    let mut quotients = Vec::with_capacity(eps_schedule.len());
    for &eps in eps_schedule {
        let mixed = mu.mix(nu, eps)?;
        let value = h(&mixed);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: "h evaluation on mixture",
            });
        }
        quotients.push((eps, (value - h_mu) / eps));
    }

    // Neville extrapolation of the quotient polynomial to eps = 0.
    let n = quotients.len();
    let mut tableau: Vec<f64> = quotients.iter().map(|q| q.1).collect();
    let eps: Vec<f64> = quotients.iter().map(|q| q.0).collect();
    let mut prev_diag = tableau[0];
    let mut last_correction = 0.0;
    for j in 1..n {
        for i in (j..n).rev() {
            tableau[i] =
                (eps[i] * tableau[i - 1] - eps[i - j] * tableau[i]) / (eps[i] - eps[i - j]);
        }
        last_correction = (tableau[n - 1] - prev_diag).abs();
        prev_diag = tableau[n - 1];
    }
    Ok(LfdReport {
        quotients,
        extrapolated: tableau[n - 1],
        last_correction,
    })
}
