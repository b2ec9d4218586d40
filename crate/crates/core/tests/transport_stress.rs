mod common;
use common::wp_brute_force;
use mkv_core::measures::{w1_exact_1d, wp_exact_small, EmpiricalMeasure};
use mkv_core::rng::StreamRng;
use std::time::Instant;

#[test]
fn degenerate_duplicate_atoms_match_brute_force() {
    let mut rng = StreamRng::new(0xDE6E, 0, 0, 0);
    for trial in 0..200 {
        let n = 2 + rng.index(4);
        // Atoms drawn from a tiny lattice so duplicates are common.
        let pts_a: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.index(3) as f64 * 0.5]).collect();
        let pts_b: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.index(3) as f64 * 0.5]).collect();
        let mu = EmpiricalMeasure::uniform(&pts_a).unwrap();
        let nu = EmpiricalMeasure::uniform(&pts_b).unwrap();
        for p in [1, 2] {
            let solver = wp_exact_small(&mu, &nu, p).unwrap();
            let brute = wp_brute_force(&mu, &nu, p);
            assert!((solver - brute).abs() < 1e-9, "trial {trial} p {p}: {solver} vs {brute}");
        }
    }
}

#[test]
fn near_cap_instances_solve_and_match_quantile_formula() {
    let mut rng = StreamRng::new(0xCAB, 0, 0, 0);
    for (na, nb) in [(200, 200), (256, 37), (150, 255)] {
        let pa: Vec<Vec<f64>> = (0..na).map(|_| vec![rng.uniform_in(-5.0, 5.0)]).collect();
        let pb: Vec<Vec<f64>> = (0..nb).map(|_| vec![rng.uniform_in(-5.0, 5.0)]).collect();
        let wa: Vec<f64> = (0..na).map(|_| rng.uniform_in(0.01, 1.0)).collect();
        let wb: Vec<f64> = (0..nb).map(|_| rng.uniform_in(0.01, 1.0)).collect();
        let mu = EmpiricalMeasure::from_samples(&pa, Some(&wa)).unwrap();
        let nu = EmpiricalMeasure::from_samples(&pb, Some(&wb)).unwrap();
        let t0 = Instant::now();
        let lp = wp_exact_small(&mu, &nu, 1).unwrap();
        let dt = t0.elapsed();
        let cdf = w1_exact_1d(&mu, &nu).unwrap();
        println!("{na}x{nb}: lp {lp:.12} cdf {cdf:.12} in {dt:?}");
        assert!((lp - cdf).abs() < 1e-8, "{na}x{nb}: {lp} vs {cdf}");
    }
}

#[test]
fn clustered_2d_instances_match_brute_force() {
    let mut rng = StreamRng::new(0xC1D5, 0, 0, 0);
    for trial in 0..100 {
        let n = 3 + rng.index(4);
        // Two tight clusters force many near-equal reduced costs.
        let cluster = |rng: &mut StreamRng, c: f64| -> Vec<f64> {
            vec![c + rng.uniform_in(-1e-6, 1e-6), c + rng.uniform_in(-1e-6, 1e-6)]
        };
        let pa: Vec<Vec<f64>> = (0..n)
            .map(|i| cluster(&mut rng, if i % 2 == 0 { 0.0 } else { 1.0 }))
            .collect();
        let pb: Vec<Vec<f64>> = (0..n)
            .map(|i| cluster(&mut rng, if i % 3 == 0 { 0.0 } else { 1.0 }))
            .collect();
        let mu = EmpiricalMeasure::uniform(&pa).unwrap();
        let nu = EmpiricalMeasure::uniform(&pb).unwrap();
        let solver = wp_exact_small(&mu, &nu, 1).unwrap();
        let brute = wp_brute_force(&mu, &nu, 1);
        assert!((solver - brute).abs() < 1e-9, "trial {trial}: {solver} vs {brute}");
    }
}
