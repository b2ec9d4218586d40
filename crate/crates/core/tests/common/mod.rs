//! Shared test oracles, independent of the library's solver paths.

use mkv_core::measures::EmpiricalMeasure;
use mkv_core::rng::StreamRng;

/// Brute-force `W_p` for equal-weight supports of the same size: the minimum
/// over all `n!` permutation assignments of `(1/n sum d(x_i, y_pi(i))^p)^(1/p)`.
/// For equal-weight measures with equal support sizes, some optimal coupling
/// is a permutation (Birkhoff), so this is exact.
pub fn wp_brute_force(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: u32) -> f64 {
    assert_eq!(mu.len(), nu.len(), "oracle needs equal support sizes");
    assert!(mu.is_uniform() && nu.is_uniform(), "oracle needs uniform weights");
    let n = mu.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    permute(&mut perm, 0, &mut |assignment| {
        let total: f64 = assignment
            .iter()
            .enumerate()
            .map(|(i, &j)| euclid(mu.atom(i), nu.atom(j)).powi(p as i32))
            .sum();
        best = best.min(total / n as f64);
    });
    best.powf(1.0 / p as f64)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == perm.len() {
        visit(perm);
        return;
    }
    for i in k..perm.len() {
        perm.swap(k, i);
        permute(perm, k + 1, visit);
        perm.swap(k, i);
    }
}

/// Uniform random measure with `n` atoms in `[-half, half]^dim`.
pub fn random_measure(rng: &mut StreamRng, n: usize, dim: usize, half: f64) -> EmpiricalMeasure {
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.uniform_in(-half, half)).collect())
        .collect();
    EmpiricalMeasure::uniform(&pts).unwrap()
}

/// Random measure with random (positive) weights.
pub fn random_weighted_measure(
    rng: &mut StreamRng,
    n: usize,
    dim: usize,
    half: f64,
) -> EmpiricalMeasure {
    let pts: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.uniform_in(-half, half)).collect())
        .collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.05, 1.0)).collect();
    EmpiricalMeasure::from_samples(&pts, Some(&weights)).unwrap()
}
