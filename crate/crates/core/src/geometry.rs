//! Axis-aligned boxes: the compact control set `U` and state-space cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// A nonempty compact axis-aligned box `[lo_1, hi_1] x ... x [lo_n, hi_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::LengthMismatch {
                what: "box corners",
                expected: lo.len().max(1),
                got: hi.len(),
            });
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !l.is_finite() || !h.is_finite() {
                return Err(Error::NonFinite { what: "box corner" });
            }
            if l > h {
                return Err(Error::InvalidParameter(format!(
                    "box has lo {l} > hi {h}"
                )));
            }
        }
        Ok(BoundingBox { lo, hi })
    }

    /// A centered cube `[-half, half]^dim`.
    pub fn centered(dim: usize, half: f64) -> Self {
        BoundingBox {
            lo: vec![-half; dim],
            hi: vec![half; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Closed-box membership with an absolute tolerance on each face.
    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol)
    }

    /// True when the interiors intersect (shared faces do not count).
    pub fn interior_overlaps(&self, other: &BoundingBox) -> bool {
        self.dim() == other.dim()
            && self
                .lo
                .iter()
                .zip(&self.hi)
                .zip(other.lo.iter().zip(&other.hi))
                .all(|((al, ah), (bl, bh))| al < bh && bl < ah)
    }

    pub fn clamp(&self, point: &mut [f64]) {
        for ((x, l), h) in point.iter_mut().zip(&self.lo).zip(&self.hi) {
            *x = x.max(*l).min(*h);
        }
    }

    pub fn sample_uniform(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| rng.uniform_in(*l, *h))
            .collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }
}

/// Lexicographic order on the `(lo, hi)` corner pair; ties on shared faces
/// between boxes are broken by this order.
pub fn lex_cmp_boxes(a: &BoundingBox, b: &BoundingBox) -> std::cmp::Ordering {
    let key = |bx: &BoundingBox| -> Vec<f64> {
        bx.lo.iter().chain(bx.hi.iter()).copied().collect()
    };
    lex_cmp_points(&key(a), &key(b))
}

/// Lexicographic comparison of coordinate vectors (total order; NaN-free inputs).
pub fn lex_cmp_points(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Equal) | None => continue,
            Some(ord) => return ord,
        }
    }
    a.len().cmp(&b.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn membership_and_overlap() {
        let a = BoundingBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let b = BoundingBox::new(vec![1.0, 0.0], vec![2.0, 1.0]).unwrap();
        assert!(a.contains(&[0.5, 0.5], 0.0));
        assert!(a.contains(&[1.0, 1.0], 0.0));
        assert!(!a.contains(&[1.1, 0.5], 0.0));
        // Shared face is not an interior overlap.
        assert!(!a.interior_overlaps(&b));
        let c = BoundingBox::new(vec![0.9, 0.0], vec![2.0, 1.0]).unwrap();
        assert!(a.interior_overlaps(&c));
    }

    #[test]
    fn degenerate_box_is_allowed() {
        let b = BoundingBox::new(vec![1.0], vec![1.0]).unwrap();
        assert!(b.contains(&[1.0], 0.0));
        assert_eq!(b.diameter(), 0.0);
    }

    #[test]
    fn rejects_inverted_box() {
        assert!(BoundingBox::new(vec![1.0], vec![0.0]).is_err());
    }
}
