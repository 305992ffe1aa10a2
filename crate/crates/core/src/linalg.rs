use nalgebra::DMatrix;

/// Numerical rank with the usual `max(rows, cols) * eps * sigma_max` cutoff.
/// Returns `(rank, tolerance)`.
pub fn numerical_rank(m: &DMatrix<f64>) -> (usize, f64) {
    if m.is_empty() {
        return (0, 0.0);
    }
    let sv = m.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * smax;
    (sv.iter().filter(|&&s| s > tol).count(), tol)
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().iter().cloned().fold(0.0, f64::max);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(squarings);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        result += &term;
        if term.abs().max() <= f64::EPSILON * result.abs().max() {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}
