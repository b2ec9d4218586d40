//! Small dense vector/matrix helpers (state dimensions here are tiny).

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean distance.
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `y += c * x`.
pub fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

/// Dense row-major `d x d` matrix-vector product, written into `out`.
pub fn mat_vec(mat: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    debug_assert_eq!(mat.len(), d * d);
    for (i, o) in out.iter_mut().enumerate() {
        *o = mat[i * d..(i + 1) * d].iter().zip(v).map(|(m, x)| m * x).sum();
    }
}

/// `a = m * m^T` for a row-major `d x d` matrix.
pub fn mat_mul_transpose(m: &[f64], d: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..d).map(|k| m[i * d + k] * m[j * d + k]).sum();
        }
    }
    a
}

/// Rayleigh quotient `<a z, z> / |z|^2` for a row-major matrix.
pub fn rayleigh_quotient(a: &[f64], z: &[f64]) -> f64 {
    let d = z.len();
    let mut az = vec![0.0; d];
    mat_vec(a, z, &mut az);
    let num: f64 = az.iter().zip(z).map(|(x, y)| x * y).sum();
    let den: f64 = z.iter().map(|x| x * x).sum();
    num / den
}

/// Frobenius norm of a row-major matrix.
pub fn frobenius_norm(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Identity matrix scaled by `c`, row-major.
pub fn scaled_identity(d: usize, c: f64) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = c;
    }
    m
}

/// Sample mean and standard error of a slice.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Median (by sorting a copy; fine at diagnostic sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_outer() {
        let m = vec![1.0, 2.0, 3.0, 4.0]; // [[1,2],[3,4]]
        let mut out = vec![0.0; 2];
        mat_vec(&m, &[1.0, 1.0], &mut out);
        assert_eq!(out, vec![3.0, 7.0]);
        let a = mat_mul_transpose(&m, 2); // [[5,11],[11,25]]
        assert_eq!(a, vec![5.0, 11.0, 11.0, 25.0]);
    }

    #[test]
    fn stats_helpers() {
        let (m, se) = mean_and_std_error(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
