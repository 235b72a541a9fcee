//! Small dense linear-algebra helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Symmetry tolerance for inputs to the eigen routines (relative to the
/// largest entry).
pub const SYMMETRY_TOL: f64 = 1e-12;

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Eigenvalues (ascending) and matching eigenvectors of a symmetric matrix.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    check_symmetric(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok((vec![], DMatrix::zeros(0, 0)));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Smallest eigenvalue of a symmetric matrix (`+inf` for the empty matrix).
pub fn psd_min_eig(m: &DMatrix<f64>) -> Result<f64> {
    let (values, _) = sym_eigen(m)?;
    Ok(values.first().copied().unwrap_or(f64::INFINITY))
}

/// Least-squares solve through the SVD, truncating singular values below
/// `rcond * sigma_max`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * 1e-14).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).expect("u and v were computed")
}

/// Result of a nonnegative least-squares solve.
#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Lawson-Hanson active-set NNLS: `min ||A x - b||` subject to `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> NnlsSolution {
    nnls_constrained(a, b, None)
}

/// NNLS with an optional single equality `h . x = c`, solved by the same
/// active-set iteration with the equality carried on the passive set.
pub fn nnls_constrained(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    equality: Option<(&DVector<f64>, f64)>,
) -> NnlsSolution {
    let (m, n) = a.shape();
    assert_eq!(b.len(), m, "rhs length");
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    if n == 0 {
        return NnlsSolution {
            residual: b.norm(),
            x,
            iterations: 0,
        };
    }
    let col_max = a
        .column_iter()
        .map(|c| c.norm())
        .fold(f64::MIN_POSITIVE, f64::max);

    if let Some((h, c)) = equality {
        // Feasible start: the single column that best fits under the equality.
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if h[j] * c <= 0.0 || h[j] == 0.0 {
                continue;
            }
            let xj = c / h[j];
            let r = (a.column(j) * xj - b).norm();
            if best.map_or(true, |(_, br)| r < br) {
                best = Some((j, r));
            }
        }
        match best {
            Some((j, _)) => {
                x[j] = c / h[j];
                passive[j] = true;
            }
            None => {
                // Infeasible equality: report the unconstrained answer.
                return nnls_constrained(a, b, None);
            }
        }
    }

    let max_outer = 3 * n + 50;
    let mut iterations = 0;
    let mut stalls = 0;
    let mut last_residual = f64::INFINITY;
    for _ in 0..max_outer {
        iterations += 1;
        let r = b - a * &x;
        let r_norm = r.norm();
        // Near the optimum the dual gap is O(|r|^2) while rounding in A^T r is
        // O(eps |A| |r|); a tolerance relative to |r| lets the residual go to
        // rounding level.
        let tol = 1e-13 * col_max * r_norm * (m as f64).sqrt();
        if r_norm >= last_residual * (1.0 - 1e-15) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
        last_residual = r_norm;
        let grad = a.transpose() * r;
        let nu = match equality {
            Some((h, _)) => multiplier(&grad, h, &passive),
            None => 0.0,
        };
        // Most positive dual entry among inactive columns.
        let mut enter: Option<(usize, f64)> = None;
        for j in 0..n {
            if passive[j] {
                continue;
            }
            let hj = equality.map_or(0.0, |(h, _)| h[j]);
            let wj = grad[j] - nu * hj;
            if wj > tol && enter.map_or(true, |(_, bw)| wj > bw) {
                enter = Some((j, wj));
            }
        }
        let Some((j, _)) = enter else { break };
        passive[j] = true;

        for _ in 0..(3 * n + 10) {
            let z = solve_passive(a, b, &passive, equality);
            let bad: Vec<usize> = (0..n).filter(|&i| passive[i] && z[i] <= 0.0).collect();
            if bad.is_empty() {
                x = z;
                break;
            }
            let mut alpha = 1.0f64;
            for &i in &bad {
                let denom = x[i] - z[i];
                if denom > 0.0 {
                    alpha = alpha.min(x[i] / denom);
                }
            }
            x = &x + (&z - &x) * alpha;
            let mut dropped = false;
            for i in 0..n {
                if passive[i] && x[i] <= 1e-15 * (1.0 + x.amax()) {
                    passive[i] = false;
                    x[i] = 0.0;
                    dropped = true;
                }
            }
            if !dropped {
                // Guard against stalls from rounding: drop the worst offender.
                let worst = bad
                    .iter()
                    .copied()
                    .min_by(|&p, &q| z[p].total_cmp(&z[q]))
                    .expect("non-empty");
                passive[worst] = false;
                x[worst] = 0.0;
            }
            if passive.iter().all(|p| !p) {
                break;
            }
        }
    }
    if let Some((h, c)) = equality {
        // Remove rounding drift in the equality.
        let hx = h.dot(&x);
        if hx > 0.0 {
            x *= c / hx;
        }
    }
    let residual = (a * &x - b).norm();
    NnlsSolution {
        x,
        residual,
        iterations,
    }
}

fn multiplier(grad: &DVector<f64>, h: &DVector<f64>, passive: &[bool]) -> f64 {
    // On the passive set grad_j = nu h_j holds; take the least-squares fit.
    let (mut num, mut den) = (0.0, 0.0);
    for (j, &p) in passive.iter().enumerate() {
        if p {
            num += grad[j] * h[j];
            den += h[j] * h[j];
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn solve_passive(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    passive: &[bool],
    equality: Option<(&DVector<f64>, f64)>,
) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let ap = a.select_columns(&idx);
    let zp = match equality {
        None => lstsq(&ap, b),
        Some((h, c)) => {
            let hp = DVector::from_iterator(idx.len(), idx.iter().map(|&j| h[j]));
            let hn2 = hp.norm_squared();
            if hn2 == 0.0 {
                lstsq(&ap, b)
            } else {
                // z = z0 + N y with N spanning the complement of hp.
                let z0 = &hp * (c / hn2);
                let p = idx.len();
                if p == 1 {
                    z0
                } else {
                    let basis = complement_basis(&hp);
                    let rhs = b - &ap * &z0;
                    let y = lstsq(&(&ap * &basis), &rhs);
                    z0 + basis * y
                }
            }
        }
    };
    let mut z = DVector::zeros(passive.len());
    for (k, &j) in idx.iter().enumerate() {
        z[j] = zp[k];
    }
    z
}

/// Orthonormal basis (as columns) of the complement of a nonzero vector, via
/// a Householder reflection.
pub fn complement_basis(h: &DVector<f64>) -> DMatrix<f64> {
    let p = h.len();
    let norm = h.norm();
    let mut v = h.clone();
    let sign = if h[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += sign * norm;
    let vn2 = v.norm_squared();
    let mut q = DMatrix::<f64>::identity(p, p);
    if vn2 > 0.0 {
        q -= &v * v.transpose() * (2.0 / vn2);
    }
    q.columns(1, p - 1).into_owned()
}

/// Orthonormal basis of the null space of `a` (rows are constraints).
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad to square so the SVD returns a full V.
    let mut padded = DMatrix::zeros(m.max(n), n);
    padded.rows_mut(0, m).copy_from(a);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t computed");
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * n as f64;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= tol)
        .collect();
    DMatrix::from_fn(n, keep.len(), |r, c| vt[(keep[c], r)])
}

/// Real roots of `sum_i coeffs[i] x^i` via companion-matrix eigenvalues.
/// Returns `(real part, |imaginary part|)` pairs.
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<(f64, f64)> {
    let mut deg = coeffs.len();
    let cmax = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    while deg > 0 && coeffs[deg - 1].abs() <= 1e-14 * cmax {
        deg -= 1;
    }
    if deg <= 1 {
        return vec![];
    }
    let n = deg - 1;
    let lead = coeffs[n];
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        comp[(i, n - 1)] = -coeffs[i] / lead;
    }
    comp.complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im.abs()))
        .collect()
}

/// Evaluates `sum_i coeffs[i] x^i` and its derivative.
pub fn poly_eval(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut p = 0.0;
    let mut dp = 0.0;
    for &c in coeffs.iter().rev() {
        dp = dp * x + p;
        p = p * x + c;
    }
    (p, dp)
}

/// Renders a matrix as CSV rows with 17 significant digits.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format_float(m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Locale-independent float formatting with 17 significant digits.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{:.16e}", x)
}
