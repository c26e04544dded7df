//! Small dense helpers for the least-squares fits used by VIF and the
//! univariate importance mode. Matrices are row-major `Vec<Vec<f64>>`.

/// Solves `a x = b` for symmetric positive definite `a` by Cholesky
/// factorisation. Returns `None` when a pivot is not strictly positive
/// relative to the matrix scale.
pub(crate) fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 1e-13 * scale {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * z[k];
        }
        z[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

/// Ordinary least squares of `y` on `columns` plus an intercept, through the
/// normal equations. Returns (coefficients with intercept first, R²), or
/// `None` when the normal matrix is singular or `y` is constant.
pub(crate) fn ols_r2(columns: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = y.len();
    let p = columns.len() + 1;
    let design = |i: usize, j: usize| if j == 0 { 1.0 } else { columns[j - 1][i] };
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for i in 0..n {
        for a in 0..p {
            let xa = design(i, a);
            xty[a] += xa * y[i];
            for b in 0..=a {
                xtx[a][b] += xa * design(i, b);
            }
        }
    }
    for a in 0..p {
        for b in a + 1..p {
            xtx[a][b] = xtx[b][a];
        }
    }
    let beta = cholesky_solve(&xtx, &xty)?;
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst <= 0.0 {
        return None;
    }
    let sse: f64 = (0..n)
        .map(|i| {
            let fit: f64 = (0..p).map(|j| beta[j] * design(i, j)).sum();
            (y[i] - fit).powi(2)
        })
        .sum();
    Some((beta, 1.0 - sse / sst))
}
