//! Hankel-pair description of full moment sequences on `[0, 1]`.
//!
//! A sequence `m_0, ..., m_d` is a moment sequence of a nonnegative measure
//! on `[0, 1]` iff two Hankel-type matrices are PSD:
//!
//! - `d = 2e`: `H1 = (m_{i+j})_{0<=i,j<=e}` and `H2 = (m_{i+j+1} - m_{i+j+2})_{0<=i,j<e}`,
//! - `d = 2e+1`: `H1 = (m_{i+j+1})_{0<=i,j<=e}` and `H2 = (m_{i+j} - m_{i+j+1})_{0<=i,j<=e}`.
//!
//! On the boundary of the cone the representing measure is atomic and unique;
//! [`extract_atoms`] recovers it from a kernel vector of a singular block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, nnls, poly_eval, polynomial_roots, sym_eigen};
use crate::moments::{moments_of_atoms, Atom, AtomicMeasure, ExponentSet, MomentVector};
use crate::{Error, Result};

/// Relative PSD tolerance: `psd_tol = PSD_REL_TOL * (1 + trace)`.
pub const PSD_REL_TOL: f64 = 1e-9;
/// Imaginary-part and interval slack for kernel-polynomial roots.
pub const ROOT_TOL: f64 = 1e-7;
/// Atoms this close to 0 or 1 count as endpoint atoms.
pub const END_TOL: f64 = 1e-9;
/// Weights above this negative threshold are clamped to zero.
pub const WEIGHT_CLAMP: f64 = -1e-10;
/// Relative reconstruction tolerance for [`extract_atoms`].
pub const RECONSTRUCTION_TOL: f64 = 1e-8;
/// Atoms lighter than this fraction of the total mass are dropped.
pub const NEGLIGIBLE_WEIGHT: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

/// The two symmetric matrices whose joint PSD-ness characterizes
/// `M({0, ..., d})`.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair {
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
    pub parity: Parity,
    pub degree: u32,
}

/// Which localizing weight a block carries: the measure `dmu`, `x dmu`,
/// `(1 - x) dmu` or `x (1 - x) dmu`. A kernel vector of the block forces
/// the support into the roots of its polynomial plus the weight's zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Localizer {
    One,
    X,
    OneMinusX,
    XOneMinusX,
}

impl Localizer {
    fn endpoints(self) -> &'static [f64] {
        match self {
            Localizer::One => &[],
            Localizer::X => &[0.0],
            Localizer::OneMinusX => &[1.0],
            Localizer::XOneMinusX => &[0.0, 1.0],
        }
    }
}

impl HankelPair {
    fn localizers(&self) -> [Localizer; 2] {
        match self.parity {
            Parity::Even => [Localizer::One, Localizer::XOneMinusX],
            Parity::Odd => [Localizer::X, Localizer::OneMinusX],
        }
    }

    pub fn block(&self, which: usize) -> &DMatrix<f64> {
        if which == 0 {
            &self.h1
        } else {
            &self.h2
        }
    }

    pub fn trace(&self) -> f64 {
        self.h1.trace() + self.h2.trace()
    }

    /// `1e-9 (1 + trace)`.
    pub fn psd_tol(&self) -> f64 {
        PSD_REL_TOL * (1.0 + self.trace().abs())
    }

    pub fn to_csv(&self) -> String {
        format!(
            "# H1\n{}# H2\n{}",
            linalg::matrix_to_csv(&self.h1),
            linalg::matrix_to_csv(&self.h2)
        )
    }
}

/// Builds the Hankel pair from raw consecutive moments `m_0..m_d`.
pub fn hankel_pair_from_values(m: &[f64]) -> Result<HankelPair> {
    if m.is_empty() {
        return Err(Error::InvalidInput("empty moment sequence".into()));
    }
    let d = m.len() - 1;
    let e = d / 2;
    let (h1, h2, parity) = if d % 2 == 0 {
        (
            DMatrix::from_fn(e + 1, e + 1, |i, j| m[i + j]),
            DMatrix::from_fn(e, e, |i, j| m[i + j + 1] - m[i + j + 2]),
            Parity::Even,
        )
    } else {
        (
            DMatrix::from_fn(e + 1, e + 1, |i, j| m[i + j + 1]),
            DMatrix::from_fn(e + 1, e + 1, |i, j| m[i + j] - m[i + j + 1]),
            Parity::Odd,
        )
    };
    Ok(HankelPair {
        h1,
        h2,
        parity,
        degree: d as u32,
    })
}

pub fn hankel_pair(m: &MomentVector) -> Result<HankelPair> {
    if !m.exponent_set().is_consecutive_from_zero() {
        return Err(Error::NotConsecutive);
    }
    hankel_pair_from_values(m.values())
}

/// Coefficient matrices `dH/dm_k` for `k = 0..=d`, one pair per `k`.
pub fn hankel_basis(degree: u32) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    let n = degree as usize + 1;
    (0..n)
        .map(|k| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let p = hankel_pair_from_values(&e).expect("non-empty");
            (p.h1, p.h2)
        })
        .collect()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn psd_min_eig(m: &DMatrix<f64>) -> Result<f64> {
    linalg::psd_min_eig(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Inside,
    Boundary,
    Outside,
}

/// Evidence attached to a membership decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// Representing measure of a boundary point.
    Atoms(AtomicMeasure),
    /// Linear functional `l(m) = sum_a coefficients[a] m_a`, nonnegative on
    /// the cone and negative at the tested point.
    Separator {
        exponents: Vec<u32>,
        coefficients: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MembershipResult {
    pub decision: Decision,
    /// Smallest eigenvalues of the two Hankel blocks (of the lifted witness
    /// for projected tests).
    pub min_eigenvalues: (f64, f64),
    /// Signed distance-like margin: positive inside, negative outside.
    pub margin: f64,
    pub certificate: Option<Certificate>,
}

/// Inside / boundary / outside test for a full sequence `m_0..m_d`.
pub fn full_membership(m: &MomentVector) -> Result<MembershipResult> {
    let pair = hankel_pair(m)?;
    let (e1, v1) = sym_eigen(&pair.h1)?;
    let (e2, v2) = sym_eigen(&pair.h2)?;
    let l1 = e1.first().copied().unwrap_or(f64::INFINITY);
    let l2 = e2.first().copied().unwrap_or(f64::INFINITY);
    let tol = pair.psd_tol();
    let margin = l1.min(l2);
    let mut result = MembershipResult {
        decision: Decision::Inside,
        min_eigenvalues: (l1, l2),
        margin,
        certificate: None,
    };
    if margin > tol {
        return Ok(result);
    }
    if margin < -tol {
        result.decision = Decision::Outside;
        let (which, vecs) = if l1 <= l2 { (0, &v1) } else { (1, &v2) };
        let u = vecs.column(0).into_owned();
        result.certificate = Some(Certificate::Separator {
            exponents: m.exponent_set().exponents().to_vec(),
            coefficients: separator_coefficients(pair.degree, which, &u),
        });
        return Ok(result);
    }
    result.decision = Decision::Boundary;
    result.certificate = extract_atoms(m).ok().map(Certificate::Atoms);
    Ok(result)
}

/// Coefficients of `m -> u^T H_which(m) u`.
fn separator_coefficients(degree: u32, which: usize, u: &DVector<f64>) -> Vec<f64> {
    hankel_basis(degree)
        .iter()
        .map(|(b1, b2)| {
            let b = if which == 0 { b1 } else { b2 };
            (u.transpose() * b * u)[(0, 0)]
        })
        .collect()
}

/// Recovers the atomic representing measure of a boundary point of
/// `M({0..d})`.
pub fn extract_atoms(m: &MomentVector) -> Result<AtomicMeasure> {
    let pair = hankel_pair(m)?;
    let values = m.values();
    let full = m.exponent_set().clone();
    let scale = 1.0 + DVector::from_column_slice(values).norm();
    let tol = pair.psd_tol();
    let locs = pair.localizers();

    let mut blocks = Vec::new();
    for which in 0..2 {
        let block = pair.block(which);
        if block.nrows() == 0 {
            continue;
        }
        let (ev, vecs) = sym_eigen(block)?;
        blocks.push((which, block.nrows(), ev, vecs));
    }
    // Larger block first (more root capacity), then the more singular one.
    blocks.sort_by(|a, b| b.1.cmp(&a.1).then(a.2[0].total_cmp(&b.2[0])));

    let mut best: Option<(f64, AtomicMeasure)> = None;
    for (which, size, ev, vecs) in &blocks {
        if ev[0] > tol {
            continue;
        }
        let detected = ev.iter().take_while(|&&l| l <= tol).count();
        for kd in (1..=detected).rev() {
            let kernel = vecs.columns(0, kd).into_owned();
            let Some(coeffs) = min_degree_kernel_vector(&kernel, *size) else {
                continue;
            };
            let Some(candidate) = atoms_from_kernel(&coeffs, locs[*which], values, &full) else {
                continue;
            };
            let res = moments_of_atoms(&candidate, &full).distance(values);
            if best.as_ref().map_or(true, |(r, _)| res < *r) {
                best = Some((res, candidate));
            }
            if res <= 1e-13 * scale {
                break;
            }
        }
    }
    match best {
        Some((res, mu)) if res <= RECONSTRUCTION_TOL * scale => Ok(mu),
        Some((res, _)) => Err(Error::AtomExtraction(format!(
            "reconstruction residual {res:e} exceeds {:e}",
            RECONSTRUCTION_TOL * scale
        ))),
        None => Err(Error::AtomExtraction(
            "no Hankel block is numerically singular".into(),
        )),
    }
}

/// Within the span of `kernel` (columns), the vector whose trailing
/// coordinates vanish, i.e. the kernel polynomial of least degree.
fn min_degree_kernel_vector(kernel: &DMatrix<f64>, size: usize) -> Option<Vec<f64>> {
    let kd = kernel.ncols();
    let coeffs = if kd == 1 {
        kernel.column(0).into_owned()
    } else {
        let tail = kernel.rows(size - (kd - 1), kd - 1).into_owned();
        let ns = linalg::null_space(&tail);
        if ns.ncols() == 0 {
            // Numerically full rank tail; take the last right singular vector.
            let mut padded = DMatrix::zeros(kd, kd);
            padded.rows_mut(0, kd - 1).copy_from(&tail);
            let svd = padded.svd(false, true);
            let vt = svd.v_t?;
            let (imin, _) = svd.singular_values.argmin();
            kernel * vt.row(imin).transpose()
        } else {
            kernel * ns.column(0)
        }
    };
    let norm = coeffs.norm();
    (norm > 0.0).then(|| coeffs.iter().map(|c| c / norm).collect())
}

fn atoms_from_kernel(
    coeffs: &[f64],
    localizer: Localizer,
    values: &[f64],
    full: &ExponentSet,
) -> Option<AtomicMeasure> {
    let mut candidates: Vec<f64> = localizer.endpoints().to_vec();
    for (re, im) in polynomial_roots(coeffs) {
        if im >= ROOT_TOL || re < -ROOT_TOL || re > 1.0 + ROOT_TOL {
            continue;
        }
        candidates.push(newton_polish(coeffs, re).clamp(0.0, 1.0));
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup_by(|a, b| (*a - *b).abs() <= END_TOL);
    if candidates.is_empty() {
        return None;
    }
    let target = DVector::from_column_slice(values);
    let cols = curve_matrix(full, &candidates);
    let sol = nnls(&cols, &target);
    let mut atoms: Vec<(f64, f64)> = candidates
        .iter()
        .zip(sol.x.iter())
        .filter(|(_, &w)| w > 0.0)
        .map(|(&r, &w)| (r, w))
        .collect();
    if atoms.is_empty() {
        return None;
    }
    polish_atoms(&mut atoms, full, values);
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    if atoms.iter().any(|a| a.1 <= NEGLIGIBLE_WEIGHT * total) {
        let mut pruned: Vec<(f64, f64)> = atoms
            .iter()
            .copied()
            .filter(|a| a.1 > NEGLIGIBLE_WEIGHT * total)
            .collect();
        polish_atoms(&mut pruned, full, values);
        let residual = |a: &[(f64, f64)]| {
            let mu = AtomicMeasure::from_pairs(a).ok()?;
            Some(moments_of_atoms(&mu, full).distance(values))
        };
        let before = residual(&atoms).unwrap_or(f64::INFINITY);
        let scale = 1.0 + target.norm();
        if residual(&pruned).is_some_and(|r| r <= (10.0 * before).max(1e-13 * scale)) {
            atoms = pruned;
        }
    }
    let atoms: Vec<Atom> = atoms
        .into_iter()
        .filter(|&(_, w)| w > 0.0)
        .map(|(location, weight)| Atom { location, weight })
        .collect();
    AtomicMeasure::new(atoms).ok()
}

fn newton_polish(coeffs: &[f64], mut x: f64) -> f64 {
    for _ in 0..8 {
        let (p, dp) = poly_eval(coeffs, x);
        if dp == 0.0 {
            break;
        }
        let step = p / dp;
        if !step.is_finite() || step.abs() > 1e-3 {
            break;
        }
        x -= step;
        if step.abs() <= 1e-16 {
            break;
        }
    }
    x
}

fn curve_matrix(full: &ExponentSet, locations: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(full.len(), locations.len(), |i, j| {
        locations[j].powi(full.exponents()[i] as i32)
    })
}

/// Gauss-Newton refinement of atom locations (interior atoms only) and
/// weights against the full moment vector. Keeps the input if no
/// improvement is found.
fn polish_atoms(atoms: &mut [(f64, f64)], full: &ExponentSet, values: &[f64]) {
    let target = DVector::from_column_slice(values);
    let residual_of = |atoms: &[(f64, f64)]| {
        let locs: Vec<f64> = atoms.iter().map(|a| a.0).collect();
        let w = DVector::from_iterator(atoms.len(), atoms.iter().map(|a| a.1));
        (curve_matrix(full, &locs) * w - &target).norm()
    };
    let mut current = residual_of(atoms);
    for _ in 0..20 {
        if current <= 1e-15 {
            break;
        }
        let free: Vec<usize> = (0..atoms.len())
            .filter(|&j| atoms[j].0 > END_TOL && atoms[j].0 < 1.0 - END_TOL)
            .collect();
        let ncols = atoms.len() + free.len();
        let mut jac = DMatrix::zeros(full.len(), ncols);
        let mut r = -target.clone();
        for (i, &a) in full.exponents().iter().enumerate() {
            for (j, &(loc, w)) in atoms.iter().enumerate() {
                let v = loc.powi(a as i32);
                r[i] += w * v;
                jac[(i, j)] = v;
            }
            for (c, &j) in free.iter().enumerate() {
                let (loc, w) = atoms[j];
                let dv = if a == 0 {
                    0.0
                } else {
                    a as f64 * loc.powi(a as i32 - 1)
                };
                jac[(i, atoms.len() + c)] = w * dv;
            }
        }
        let step = linalg::lstsq(&jac, &r);
        let mut trial: Vec<(f64, f64)> = atoms.to_vec();
        for (j, t) in trial.iter_mut().enumerate() {
            t.1 -= step[j];
        }
        for (c, &j) in free.iter().enumerate() {
            trial[j].0 = (trial[j].0 - step[atoms.len() + c]).clamp(0.0, 1.0);
        }
        if trial.iter().any(|t| t.1 < WEIGHT_CLAMP) {
            break;
        }
        for t in trial.iter_mut() {
            t.1 = t.1.max(0.0);
        }
        let sorted = trial.windows(2).all(|w| w[0].0 < w[1].0);
        let res = residual_of(&trial);
        if !sorted || !(res < current) {
            break;
        }
        atoms.copy_from_slice(&trial);
        current = res;
    }
}

/// Counts of endpoint and interior atoms of a boundary representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub atoms: AtomicMeasure,
    pub boundary_count: usize,
    pub interior_count: usize,
    /// `boundary_count + 2 * interior_count`.
    pub index: usize,
}

pub fn index_of(mu: &AtomicMeasure) -> IndexReport {
    let boundary_count = mu
        .atoms()
        .iter()
        .filter(|a| a.location <= END_TOL || a.location >= 1.0 - END_TOL)
        .count();
    let interior_count = mu.len() - boundary_count;
    IndexReport {
        atoms: mu.clone(),
        boundary_count,
        interior_count,
        index: boundary_count + 2 * interior_count,
    }
}

fn check_schur_input(exps: &ExponentSet, r: &[f64]) -> Result<()> {
    if exps.min_exp() != 0 {
        return Err(Error::InvalidExponents("min(A) must be 0".into()));
    }
    if r.len() != exps.len() {
        return Err(Error::DimensionMismatch {
            expected: exps.len(),
            got: r.len(),
        });
    }
    if let Some(&x) = r.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::OutsideUnitInterval(x));
    }
    if r.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "evaluation points must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `det (r_j^{a_i})_{i,j}`, strictly positive for valid input.
pub fn schur_det(exps: &ExponentSet, r: &[f64]) -> Result<f64> {
    check_schur_input(exps, r)?;
    let n = r.len();
    let m = DMatrix::from_fn(n, n, |i, j| r[j].powi(exps.exponents()[i] as i32));
    Ok(m.determinant())
}

/// Largest partition entry accepted by the tableau enumeration.
pub const MAX_PART: u32 = 10;
/// Largest number of variables accepted by the tableau enumeration.
pub const MAX_VARS: usize = 6;

/// `lambda = (a_n - (n-1), ..., a_2 - 1, a_1)`.
pub fn partition_of(exps: &ExponentSet) -> Vec<u32> {
    let n = exps.len();
    exps.exponents()
        .iter()
        .enumerate()
        .rev()
        .map(|(i, &a)| a - i as u32)
        .take(n)
        .collect()
}

/// Schur polynomial `s_lambda(x_1..x_n)` as a sum of monomials over
/// semistandard Young tableaux with entries in `1..=n`.
pub fn schur_polynomial(lambda: &[u32], x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n > MAX_VARS || lambda.iter().any(|&p| p > MAX_PART) {
        return Err(Error::TableauTooLarge(format!(
            "shape {lambda:?} in {n} variables exceeds {MAX_VARS} variables / parts <= {MAX_PART}"
        )));
    }
    let shape: Vec<usize> = lambda
        .iter()
        .filter(|&&p| p > 0)
        .map(|&p| p as usize)
        .collect();
    if shape.len() > n {
        return Ok(0.0);
    }
    let cells: Vec<(usize, usize)> = shape
        .iter()
        .enumerate()
        .flat_map(|(row, &len)| (0..len).map(move |col| (row, col)))
        .collect();
    let mut grid = vec![vec![0usize; shape.first().copied().unwrap_or(0)]; shape.len()];
    let mut total = 0.0;
    fill(&cells, 0, &mut grid, x, 1.0, &mut total);
    Ok(total)
}

fn fill(
    cells: &[(usize, usize)],
    pos: usize,
    grid: &mut [Vec<usize>],
    x: &[f64],
    product: f64,
    total: &mut f64,
) {
    let Some(&(row, col)) = cells.get(pos) else {
        *total += product;
        return;
    };
    let n = x.len();
    let lo_row = if col > 0 { grid[row][col - 1] } else { 0 };
    let lo_col = if row > 0 { grid[row - 1][col] + 1 } else { 0 };
    // A cell in row `row` needs room for the strictly increasing entries below it.
    let rows_below = cells.iter().filter(|&&(r, c)| c == col && r > row).count();
    let lo = lo_row.max(lo_col);
    if lo + rows_below >= n {
        return;
    }
    for v in lo..(n - rows_below) {
        grid[row][col] = v;
        fill(cells, pos + 1, grid, x, product * x[v], total);
    }
}

/// Both sides of the bialternant identity
/// `det S_A(r) = prod_{i<j} (r_j - r_i) * s_lambda(r)`.
pub fn bialternant_check(exps: &ExponentSet, r: &[f64]) -> Result<(f64, f64)> {
    check_schur_input(exps, r)?;
    let lambda = partition_of(exps);
    let schur = schur_polynomial(&lambda, r)?;
    let lhs = schur_det(exps, r)?;
    let mut vandermonde = 1.0;
    for j in 0..r.len() {
        for i in 0..j {
            vandermonde *= r[j] - r[i];
        }
    }
    Ok((lhs, vandermonde * schur))
}
