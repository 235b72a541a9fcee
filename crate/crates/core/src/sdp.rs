//! Dense semidefinite programming for small block LMIs, and the moment-cone
//! programs built on it.
//!
//! Problems are posed as
//!
//! ```text
//! minimize c.x  subject to  F_0^b + sum_i x_i F_i^b >= 0  (every block b),  E x = f.
//! ```
//!
//! Equalities are eliminated through a null-space parameterization; the
//! remaining LMI is solved with an infeasible-start primal-dual path-following
//! method using Nesterov-Todd scaling and a Mehrotra predictor-corrector.
//!
//! The moment programs ([`projected_membership`], [`monotone_membership`],
//! [`nearest_point`]) describe a measure on `[0, 1]` by its moments against the
//! orthonormal shifted Legendre polynomials rather than by power moments. The
//! Hankel blocks are then congruent to the power-moment Hankel pair (same
//! PSD-ness) but far better conditioned.

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::hankel::{Certificate, Decision, MembershipResult};
use crate::linalg::{lstsq, null_space, sym_eigen};
use crate::moments::{ExponentSet, MomentVector};
use crate::{Error, Result};

/// Relative duality-gap target: `gap <= GAP_TOL (1 + |objective|)`.
pub const GAP_TOL: f64 = 1e-9;
pub const MAX_ITER: usize = 200;
/// Residual block eigenvalues above `-PSD_TOL` count as PSD.
pub const PSD_TOL: f64 = 1e-9;
/// Margin separating inside/outside from boundary in membership programs.
pub const FEAS_TOL: f64 = 1e-7;

mod dense {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
            .collect()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>, String> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(n, cols, |r, c| rows[r][c]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        from_rows(Vec::deserialize(d)?).map_err(D::Error::custom)
    }

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
            ms.iter().map(rows).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
            Vec::<Vec<Vec<f64>>>::deserialize(d)?
                .into_iter()
                .map(|r| from_rows(r).map_err(D::Error::custom))
                .collect()
        }
    }
}

/// Affine symmetric-matrix map `x -> constant + sum_i x_i coefficients[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiBlock {
    #[serde(with = "dense")]
    pub constant: DMatrix<f64>,
    #[serde(with = "dense::list")]
    pub coefficients: Vec<DMatrix<f64>>,
}

impl LmiBlock {
    pub fn new(constant: DMatrix<f64>, coefficients: Vec<DMatrix<f64>>) -> Self {
        Self {
            constant,
            coefficients,
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (xi, f) in x.iter().zip(&self.coefficients) {
            if *xi != 0.0 {
                out += f * *xi;
            }
        }
        out
    }

    /// The same block over `total` variables, the new ones entering with
    /// zero coefficients.
    pub fn padded(mut self, total: usize) -> Self {
        let n = self.dim();
        self.coefficients.resize(total, DMatrix::zeros(n, n));
        self
    }
}

/// `a . x = b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEquality {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub blocks: Vec<LmiBlock>,
    #[serde(default)]
    pub equalities: Vec<LinearEquality>,
}

impl SdpProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        let mismatch = |expected, got| Err(Error::DimensionMismatch { expected, got });
        if self.objective.len() != n {
            return mismatch(n, self.objective.len());
        }
        for block in &self.blocks {
            let k = block.dim();
            if block.constant.ncols() != k {
                return mismatch(k, block.constant.ncols());
            }
            if block.coefficients.len() != n {
                return mismatch(n, block.coefficients.len());
            }
            for f in std::iter::once(&block.constant).chain(&block.coefficients) {
                if f.shape() != (k, k) {
                    return mismatch(k, f.nrows().max(f.ncols()));
                }
                let scale = f.amax().max(1.0);
                let asym = crate::linalg::max_asymmetry(f);
                if asym > crate::linalg::SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric(asym));
                }
            }
        }
        for eq in &self.equalities {
            if eq.a.len() != n {
                return mismatch(n, eq.a.len());
            }
        }
        if self
            .objective
            .iter()
            .chain(
                self.equalities
                    .iter()
                    .flat_map(|e| e.a.iter().chain(std::iter::once(&e.b))),
            )
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("non-finite problem data".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    /// Gap and residuals within tolerance.
    Optimal,
    /// Stopped early with an iterate that satisfies every constraint.
    Feasible,
    /// Certificate of infeasibility found (or inconsistent equalities).
    Infeasible,
    /// Iteration cap reached without a feasible iterate.
    MaxIter,
    /// Newton system or scaling failed before a feasible iterate was found.
    Breakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<f64>,
    pub objective_value: f64,
    pub dual_objective: f64,
    /// `objective_value - dual_objective`.
    pub duality_gap: f64,
    /// Smallest eigenvalue of each block evaluated at `x` (`null` for empty
    /// blocks).
    pub min_block_eigs: Vec<f64>,
    /// Largest violation of the equalities at `x`.
    pub equality_residual: f64,
    /// `max_i |<F_i, Z> - c_i|` over the reduced variables.
    pub dual_residual: f64,
    pub iterations: usize,
    /// Dual matrices `Z_b >= 0`, one per block.
    #[serde(with = "dense::list")]
    pub dual_blocks: Vec<DMatrix<f64>>,
}

impl SdpSolution {
    pub fn min_eig(&self) -> f64 {
        self.min_block_eigs
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Fraction of the distance to the boundary taken per step.
    pub step_fraction: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            gap_tol: GAP_TOL,
            max_iter: MAX_ITER,
            step_fraction: 0.98,
        }
    }
}

pub fn solve(p: &SdpProblem) -> Result<SdpSolution> {
    solve_with(p, &SolverOptions::default())
}

pub fn solve_with(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    p.validate()?;
    let n = p.num_vars;

    // Eliminate equalities: x = x0 + N z.
    let (x0, basis, consistent) = if p.equalities.is_empty() {
        (DVector::zeros(n), DMatrix::identity(n, n), true)
    } else {
        let e = DMatrix::from_fn(p.equalities.len(), n, |r, c| p.equalities[r].a[c]);
        let f = DVector::from_iterator(p.equalities.len(), p.equalities.iter().map(|q| q.b));
        let x0 = lstsq(&e, &f);
        let res = (&e * &x0 - &f).amax();
        let consistent = res <= 1e-10 * (1.0 + f.amax() + e.amax() * x0.amax());
        (x0, null_space(&e), consistent)
    };
    let m = basis.ncols();
    let c = DVector::from_column_slice(&p.objective);
    let offset = c.dot(&x0);
    let red_c = basis.transpose() * &c;

    let active: Vec<usize> = (0..p.blocks.len())
        .filter(|&b| p.blocks[b].dim() > 0)
        .collect();
    let g0: Vec<DMatrix<f64>> = active
        .iter()
        .map(|&b| p.blocks[b].evaluate(x0.as_slice()))
        .collect();
    let g: Vec<Vec<DMatrix<f64>>> = active
        .iter()
        .map(|&b| {
            let blk = &p.blocks[b];
            (0..m)
                .map(|j| {
                    let mut acc = DMatrix::zeros(blk.dim(), blk.dim());
                    for i in 0..n {
                        let w = basis[(i, j)];
                        if w != 0.0 {
                            acc += &blk.coefficients[i] * w;
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();

    let core = if !consistent {
        CoreOutcome::trivial(&g0, m, CoreStatus::Infeasible)
    } else if m == 0 || active.is_empty() {
        // Nothing to optimize: either x is pinned, or there is no conic part.
        let status = if m == 0 {
            CoreStatus::Converged
        } else {
            CoreStatus::Unbounded
        };
        let mut out = CoreOutcome::trivial(&g0, m, status);
        if m > 0 && red_c.amax() == 0.0 {
            out.status = CoreStatus::Converged;
        }
        out
    } else {
        interior_point(&red_c, &g0, &g, opts)
    };

    let x = &x0 + &basis * &core.z;
    let xs = x.as_slice();
    let mut min_block_eigs = Vec::with_capacity(p.blocks.len());
    let mut dual_blocks = Vec::with_capacity(p.blocks.len());
    let mut dual_objective = offset;
    let mut dual_residual = 0.0f64;
    let mut slot = 0;
    for (b, blk) in p.blocks.iter().enumerate() {
        if blk.dim() == 0 {
            min_block_eigs.push(f64::INFINITY);
            dual_blocks.push(DMatrix::zeros(0, 0));
            continue;
        }
        let (ev, _) = sym_eigen(&symmetrize(&blk.evaluate(xs)))?;
        min_block_eigs.push(ev[0]);
        debug_assert_eq!(active[slot], b);
        dual_objective -= inner(&g0[slot], &core.x[slot]);
        dual_blocks.push(core.x[slot].clone());
        slot += 1;
    }
    for j in 0..m {
        let aj: f64 = (0..active.len()).map(|s| inner(&g[s][j], &core.x[s])).sum();
        dual_residual = dual_residual.max((aj - red_c[j]).abs());
    }
    let equality_residual = p
        .equalities
        .iter()
        .map(|q| (q.a.iter().zip(xs).map(|(a, x)| a * x).sum::<f64>() - q.b).abs())
        .fold(0.0, f64::max);
    let objective_value = c.dot(&x);
    let duality_gap = objective_value - dual_objective;

    let scale = 1.0
        + p.blocks
            .iter()
            .map(|b| b.constant.amax())
            .fold(0.0, f64::max);
    let psd_ok = min_block_eigs.iter().all(|&l| l >= -PSD_TOL * scale);
    let eq_ok = equality_residual
        <= 1e-9 * (1.0 + p.equalities.iter().map(|q| q.b.abs()).fold(0.0, f64::max));
    let gap_ok = duality_gap.abs() <= opts.gap_tol * (1.0 + objective_value.abs());
    let dual_ok = dual_residual <= 1e-8 * (1.0 + red_c.amax());
    let status = match core.status {
        CoreStatus::Infeasible => SdpStatus::Infeasible,
        _ if psd_ok && eq_ok && gap_ok && dual_ok => SdpStatus::Optimal,
        CoreStatus::Converged if psd_ok && eq_ok && m == 0 => SdpStatus::Optimal,
        _ if psd_ok && eq_ok => SdpStatus::Feasible,
        CoreStatus::Converged if m == 0 => SdpStatus::Infeasible,
        CoreStatus::MaxIter => SdpStatus::MaxIter,
        _ => SdpStatus::Breakdown,
    };
    Ok(SdpSolution {
        status,
        x: x.iter().copied().collect(),
        objective_value,
        dual_objective,
        duality_gap,
        min_block_eigs,
        equality_residual,
        dual_residual,
        iterations: core.iterations,
        dual_blocks,
    })
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CoreStatus {
    Converged,
    Stalled,
    MaxIter,
    Infeasible,
    Unbounded,
}

struct CoreOutcome {
    status: CoreStatus,
    z: DVector<f64>,
    x: Vec<DMatrix<f64>>,
    iterations: usize,
}

impl CoreOutcome {
    fn trivial(g0: &[DMatrix<f64>], m: usize, status: CoreStatus) -> Self {
        Self {
            status,
            z: DVector::zeros(m),
            x: g0
                .iter()
                .map(|b| DMatrix::zeros(b.nrows(), b.ncols()))
                .collect(),
            iterations: 0,
        }
    }
}

/// Per-block Nesterov-Todd scaling: `W = G G^T` with `W S W = X` and
/// `G^T S G = G^{-1} X G^{-T} = diag(lambda)`.
struct NtScaling {
    g: DMatrix<f64>,
    w: DMatrix<f64>,
    lambda: DVector<f64>,
    lx: DMatrix<f64>,
    vt: DMatrix<f64>,
}

impl NtScaling {
    /// `G^{-1} A G^{-T} = L^{1/2} V^T Lx^{-1} A Lx^{-T} V L^{1/2}`.
    fn to_scaled(&self, a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let half = self.lx.solve_lower_triangular(a)?;
        let full = self.lx.solve_lower_triangular(&half.transpose())?;
        let mut out = &self.vt * full * self.vt.transpose();
        let n = self.lambda.len();
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] *= (self.lambda[i] * self.lambda[j]).sqrt();
            }
        }
        Some(symmetrize(&out))
    }
}

fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<NtScaling> {
    let lx = x.clone().cholesky()?.unpack();
    let ls = s.clone().cholesky()?.unpack();
    let svd = (ls.transpose() * &lx).svd(false, true);
    let vt = svd.v_t?;
    let lambda = svd.singular_values;
    if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return None;
    }
    let mut g = &lx * vt.transpose();
    for (j, &l) in lambda.iter().enumerate() {
        g.column_mut(j).scale_mut(1.0 / l.sqrt());
    }
    let w = &g * g.transpose();
    Some(NtScaling {
        g,
        w,
        lambda,
        lx,
        vt,
    })
}

/// Largest `alpha` with `diag(lambda) + alpha D >= 0`.
fn max_step(lambda: &DVector<f64>, d: &DMatrix<f64>) -> f64 {
    let n = lambda.len();
    let k = DMatrix::from_fn(n, n, |i, j| d[(i, j)] / (lambda[i] * lambda[j]).sqrt());
    let k = symmetrize(&k);
    let nu = k.symmetric_eigenvalues().min();
    if nu >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / nu
    }
}

/// Solves `min c.z s.t. S(z) = G0 + sum_j z_j G_j >= 0` together with its
/// dual `max -<G0, X> s.t. <G_j, X> = c_j, X >= 0`.
fn interior_point(
    c: &DVector<f64>,
    g0: &[DMatrix<f64>],
    g: &[Vec<DMatrix<f64>>],
    opts: &SolverOptions,
) -> CoreOutcome {
    let m = c.len();
    let nb = g0.len();
    let total: usize = g0.iter().map(|b| b.nrows()).sum();
    let norm_c0 = g0.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
    let norm_a: Vec<f64> = (0..m)
        .map(|j| (0..nb).map(|b| g[b][j].norm_squared()).sum::<f64>().sqrt())
        .collect();
    let sqrt_n = (total as f64).sqrt();
    let xi_x = (0..m)
        .map(|j| (1.0 + c[j].abs()) / (1.0 + norm_a[j]))
        .fold(10.0f64.max(sqrt_n), f64::max);
    let xi_s = norm_a
        .iter()
        .copied()
        .fold(10.0f64.max(sqrt_n).max(norm_c0), f64::max);

    let gram = DMatrix::from_fn(m, m, |i, j| {
        (0..nb).map(|b| inner(&g[b][i], &g[b][j])).sum::<f64>()
    });
    let gram = SchurSolver::new(gram);

    let mut x: Vec<DMatrix<f64>> = g0
        .iter()
        .map(|b| DMatrix::identity(b.nrows(), b.nrows()) * xi_x)
        .collect();
    let mut s: Vec<DMatrix<f64>> = g0
        .iter()
        .map(|b| DMatrix::identity(b.nrows(), b.nrows()) * xi_s)
        .collect();
    let mut z = DVector::zeros(m);
    let mut status = CoreStatus::MaxIter;
    let mut iterations = 0;
    let mut best: Option<(f64, DVector<f64>, Vec<DMatrix<f64>>)> = None;
    let c_scale = 1.0 + c.amax();
    let mut last_step = 1.0f64;

    for iter in 0..opts.max_iter {
        iterations = iter;
        // Residuals.
        let ax: DVector<f64> = DVector::from_iterator(
            m,
            (0..m).map(|j| (0..nb).map(|b| inner(&g[b][j], &x[b])).sum()),
        );
        let rp = c - &ax;
        let rd: Vec<DMatrix<f64>> = (0..nb)
            .map(|b| {
                let mut r = g0[b].clone() - &s[b];
                for j in 0..m {
                    if z[j] != 0.0 {
                        r += &g[b][j] * z[j];
                    }
                }
                r
            })
            .collect();
        let pobj = c.dot(&z);
        let dobj = -(0..nb).map(|b| inner(&g0[b], &x[b])).sum::<f64>();
        let rel_p = rp.amax() / c_scale;
        let rel_d = rd.iter().map(|r| r.amax()).fold(0.0, f64::max) / (1.0 + norm_c0);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs());

        // Error in the measured gap from the residuals: pobj - dobj equals
        // <S, X> up to sum_j z_j rp_j + <rd, X>.
        let gap_err = ((0..m).map(|j| z[j] * rp[j]).sum::<f64>().abs()
            + (0..nb).map(|b| inner(&rd[b], &x[b])).sum::<f64>().abs())
            / (1.0 + pobj.abs());
        let accurate = rel_p <= 1e-11 && rel_d <= 1e-12 && gap_err <= 1e-13;
        if accurate && gap <= 0.05 * opts.gap_tol {
            status = CoreStatus::Converged;
            break;
        }
        // Keep the best accurate iterate in case of a later stall.
        if accurate && best.as_ref().map_or(true, |(sc, _, _)| gap < *sc) {
            best = Some((gap, z.clone(), x.clone()));
        }
        // Farkas certificate for an infeasible LMI: X >= 0, <G_j, X> ~ 0, <G0, X> < 0.
        if dobj > 1e10 * (1.0 + pobj.abs()) && ax.amax() / dobj <= 1e-9 {
            status = CoreStatus::Infeasible;
            break;
        }
        if pobj < -1e12 * (1.0 + dobj.abs()) && rel_d <= 1e-8 {
            status = CoreStatus::Unbounded;
            break;
        }

        let Some(scal) = (0..nb)
            .map(|b| nt_scaling(&x[b], &s[b]))
            .collect::<Option<Vec<_>>>()
        else {
            status = CoreStatus::Stalled;
            break;
        };
        let mu = scal.iter().map(|sc| sc.lambda.norm_squared()).sum::<f64>() / total as f64;

        // M_ij = <G_i, W G_j W> = <G~_i, G~_j> with G~_j = G^T G_j G. Factoring
        // the stacked G~ by QR avoids squaring its condition number.
        let rows: usize = g0.iter().map(|b| b.len()).sum();
        let mut stacked = DMatrix::zeros(rows, m);
        for j in 0..m {
            let mut off = 0;
            for b in 0..nb {
                let gt = scal[b].g.transpose() * &g[b][j] * &scal[b].g;
                for (k, v) in gt.iter().enumerate() {
                    stacked[(off + k, j)] = *v;
                }
                off += gt.len();
            }
        }
        let Some(solver) = SchurSolver::from_stacked(stacked) else {
            status = CoreStatus::Stalled;
            break;
        };
        let wrdw: Vec<DMatrix<f64>> = (0..nb).map(|b| &scal[b].w * &rd[b] * &scal[b].w).collect();
        let base_rhs: DVector<f64> = DVector::from_iterator(
            m,
            (0..m).map(|i| -(0..nb).map(|b| inner(&g[b][i], &wrdw[b])).sum::<f64>() - rp[i]),
        );

        // Direction for a given scaled complementarity right-hand side.
        let direction = |rc: &[DMatrix<f64>]| {
            let t: Vec<DMatrix<f64>> = (0..nb)
                .map(|b| &scal[b].g * &rc[b] * scal[b].g.transpose())
                .collect();
            let mut rhs = base_rhs.clone();
            for i in 0..m {
                rhs[i] += (0..nb).map(|b| inner(&g[b][i], &t[b])).sum::<f64>();
            }
            let build = |dz: &DVector<f64>| {
                let mut dxt = Vec::with_capacity(nb);
                let mut dst = Vec::with_capacity(nb);
                let mut ds = Vec::with_capacity(nb);
                for b in 0..nb {
                    let mut dsb = rd[b].clone();
                    for j in 0..m {
                        if dz[j] != 0.0 {
                            dsb += &g[b][j] * dz[j];
                        }
                    }
                    let dsb = symmetrize(&dsb);
                    let st = symmetrize(&(scal[b].g.transpose() * &dsb * &scal[b].g));
                    dxt.push(symmetrize(&(&rc[b] - &st)));
                    dst.push(st);
                    ds.push(dsb);
                }
                (dxt, dst, ds)
            };
            let mut dz = solver.solve(&rhs);
            let (mut dxt, mut dst, mut ds) = build(&dz);
            // Iterative refinement against the primal equations <G_i, dX> = rp_i.
            for _ in 0..2 {
                let dx: Vec<DMatrix<f64>> = (0..nb)
                    .map(|b| &scal[b].g * &dxt[b] * scal[b].g.transpose())
                    .collect();
                let r = DVector::from_iterator(
                    m,
                    (0..m).map(|i| rp[i] - (0..nb).map(|b| inner(&g[b][i], &dx[b])).sum::<f64>()),
                );
                if r.amax() <= 1e-15 * c_scale {
                    break;
                }
                dz -= solver.solve(&r);
                (dxt, dst, ds) = build(&dz);
            }
            (dz, dxt, dst, ds)
        };
        let steps = |dxt: &[DMatrix<f64>], dst: &[DMatrix<f64>]| {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for b in 0..nb {
                ap = ap.min(max_step(&scal[b].lambda, &dxt[b]));
                ad = ad.min(max_step(&scal[b].lambda, &dst[b]));
            }
            (ap, ad)
        };

        // Predictor.
        let rc_aff: Vec<DMatrix<f64>> = scal
            .iter()
            .map(|sc| DMatrix::from_diagonal(&(-&sc.lambda)))
            .collect();
        let (_, dxa, dsa, _) = direction(&rc_aff);
        let (ap, ad) = steps(&dxa, &dsa);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mu_aff = (0..nb)
            .map(|b| {
                let lam = DMatrix::from_diagonal(&scal[b].lambda);
                inner(&(&lam + &dxa[b] * ap), &(&lam + &dsa[b] * ad))
            })
            .sum::<f64>()
            / total as f64;
        let mut sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        if last_step < 0.2 {
            // Recentre after a short step instead of pushing the gap down.
            sigma = sigma.max(1.0 - last_step);
        }

        // Corrector.
        let rc: Vec<DMatrix<f64>> = (0..nb)
            .map(|b| {
                let lam = &scal[b].lambda;
                let k = lam.len();
                let cross = symmetrize(&(&dxa[b] * &dsa[b]));
                DMatrix::from_fn(k, k, |i, j| {
                    let mut r = -cross[(i, j)];
                    if i == j {
                        r += sigma * mu - lam[i] * lam[i];
                    }
                    2.0 * r / (lam[i] + lam[j])
                })
            })
            .collect();
        let (dz, dxt_raw, dst, ds) = direction(&rc);
        // Restore <G_i, dX> = rp_i, which the Schur solve loses as W degenerates.
        let mut corr_t: Vec<DMatrix<f64>> = dxt_raw
            .iter()
            .map(|d| DMatrix::zeros(d.nrows(), d.ncols()))
            .collect();
        if let Some(gram) = &gram {
            let dx: Vec<DMatrix<f64>> = (0..nb)
                .map(|b| &scal[b].g * &dxt_raw[b] * scal[b].g.transpose())
                .collect();
            let r = DVector::from_iterator(
                m,
                (0..m).map(|i| rp[i] - (0..nb).map(|b| inner(&g[b][i], &dx[b])).sum::<f64>()),
            );
            let alpha = gram.solve(&r);
            for b in 0..nb {
                let mut corr = DMatrix::zeros(dx[b].nrows(), dx[b].ncols());
                for j in 0..m {
                    corr += &g[b][j] * alpha[j];
                }
                if let Some(ct) = scal[b].to_scaled(&corr) {
                    corr_t[b] = ct;
                }
            }
        }
        let dxt: Vec<DMatrix<f64>> = (0..nb).map(|b| &dxt_raw[b] + &corr_t[b]).collect();
        let (ap, ad) = steps(&dxt, &dst);
        let ap = (opts.step_fraction * ap).min(1.0);
        let ad = (opts.step_fraction * ad).min(1.0);
        last_step = ap.min(ad);
        if ap < 1e-12 && ad < 1e-12 {
            status = CoreStatus::Stalled;
            break;
        }
        for b in 0..nb {
            let dx = &scal[b].g * &dxt[b] * scal[b].g.transpose();
            x[b] = symmetrize(&(&x[b] + dx * ap));
            s[b] = symmetrize(&(&s[b] + &ds[b] * ad));
        }
        z += dz * ad;
        iterations = iter + 1;
    }

    if status != CoreStatus::Converged && status != CoreStatus::Infeasible {
        // A run that stopped early reports its best accurate iterate.
        if let Some((_, bz, bx)) = best {
            z = bz;
            x = bx;
        }
    }
    CoreOutcome {
        status,
        z,
        x,
        iterations,
    }
}

/// Solver for the Schur complement: QR of the stacked scaled constraints
/// when they have full column rank, otherwise Cholesky with diagonal
/// regularization and an LU fallback.
enum SchurSolver {
    /// `R` from `QR` of the stacked matrix, so that `M = R^T R`.
    Qr(DMatrix<f64>),
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl SchurSolver {
    fn from_stacked(a: DMatrix<f64>) -> Option<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return None;
        }
        if a.nrows() >= a.ncols() {
            let r = a.clone().qr().r();
            let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
            let max = diag.iter().copied().fold(0.0, f64::max);
            if max > 0.0 && diag.iter().all(|&d| d > 1e-14 * max) {
                return Some(SchurSolver::Qr(r));
            }
        }
        SchurSolver::new(a.transpose() * &a)
    }

    fn new(m: DMatrix<f64>) -> Option<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        if let Some(ch) = m.clone().cholesky() {
            return Some(SchurSolver::Chol(ch));
        }
        let n = m.nrows();
        let tr = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
        for delta in [1e-14, 1e-12, 1e-10] {
            let reg = &m + DMatrix::identity(n, n) * (delta * tr);
            if let Some(ch) = reg.cholesky() {
                return Some(SchurSolver::Chol(ch));
            }
        }
        let lu = m.lu();
        lu.is_invertible().then_some(SchurSolver::Lu(lu))
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            SchurSolver::Qr(r) => r
                .transpose()
                .solve_lower_triangular(rhs)
                .and_then(|y| r.solve_upper_triangular(&y))
                .unwrap_or_else(|| DVector::zeros(rhs.len())),
            SchurSolver::Chol(ch) => ch.solve(rhs),
            SchurSolver::Lu(lu) => lu.solve(rhs).unwrap_or_else(|| DVector::zeros(rhs.len())),
        }
    }
}

/// Linear functional separating the data of an infeasible program from the
/// feasible set: `offset + sum_i coefficients[i] b_i < 0` at the data, `>= 0`
/// for every `b` making the program feasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separator {
    pub coefficients: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    /// `-t*`: positive when the blocks admit a strictly positive definite
    /// point, negative when infeasible.
    pub margin: f64,
    /// The optimal `x` (without the shift variable).
    pub witness: Vec<f64>,
    pub separator: Option<Separator>,
    pub solution: SdpSolution,
}

/// Decides whether `{x : blocks(x) >= 0, equalities}` is nonempty by solving
/// `min t s.t. block_j(x) + t I >= 0, equalities`.
pub fn feasibility(
    num_vars: usize,
    blocks: &[LmiBlock],
    equalities: &[LinearEquality],
) -> Result<FeasibilityResult> {
    feasibility_impl(num_vars, blocks, equalities, true)
}

/// With `capped`, an inactive block `t + 1e3 (1 + scale) >= 0` keeps `min t`
/// bounded when the blocks can be made arbitrarily definite. Programs whose
/// equalities already bound the blocks skip it: its slack sits three orders
/// of magnitude above the others and costs accuracy near the optimum.
fn feasibility_impl(
    num_vars: usize,
    blocks: &[LmiBlock],
    equalities: &[LinearEquality],
    capped: bool,
) -> Result<FeasibilityResult> {
    let n = num_vars + 1;
    let mut sdp_blocks: Vec<LmiBlock> = blocks
        .iter()
        .map(|b| {
            let k = b.dim();
            let mut coefficients = b.coefficients.clone();
            if coefficients.len() != num_vars {
                return Err(Error::DimensionMismatch {
                    expected: num_vars,
                    got: coefficients.len(),
                });
            }
            coefficients.push(DMatrix::identity(k, k));
            Ok(LmiBlock::new(b.constant.clone(), coefficients))
        })
        .collect::<Result<_>>()?;
    if capped {
        let scale = 1.0
            + blocks.iter().map(|b| b.constant.amax()).fold(0.0, f64::max)
            + equalities.iter().map(|q| q.b.abs()).fold(0.0, f64::max);
        let mut cap_coeffs = vec![DMatrix::zeros(1, 1); n];
        cap_coeffs[num_vars] = DMatrix::identity(1, 1);
        sdp_blocks.push(LmiBlock::new(
            DMatrix::from_element(1, 1, 1e3 * scale),
            cap_coeffs,
        ));
    }

    let mut objective = vec![0.0; n];
    objective[num_vars] = 1.0;
    let problem = SdpProblem {
        num_vars: n,
        objective,
        blocks: sdp_blocks,
        equalities: equalities
            .iter()
            .map(|q| {
                let mut a = q.a.clone();
                a.push(0.0);
                LinearEquality { a, b: q.b }
            })
            .collect(),
    };
    let solution = solve(&problem)?;
    if solution.status == SdpStatus::Infeasible {
        // Only the equalities can be inconsistent here.
        return Ok(FeasibilityResult {
            feasible: false,
            margin: f64::NEG_INFINITY,
            witness: solution.x[..num_vars].to_vec(),
            separator: None,
            solution,
        });
    }
    let t = solution.x[num_vars];
    let margin = -t;
    let feasible = t <= FEAS_TOL;
    let separator = (!feasible).then(|| {
        let z = &solution.dual_blocks[..blocks.len()];
        let phi = DVector::from_iterator(
            num_vars,
            (0..num_vars).map(|i| {
                blocks
                    .iter()
                    .zip(z)
                    .map(|(b, zb)| inner(&b.coefficients[i], zb))
                    .sum::<f64>()
            }),
        );
        let offset: f64 = blocks
            .iter()
            .zip(z)
            .map(|(b, zb)| inner(&b.constant, zb))
            .sum();
        let coefficients = if equalities.is_empty() {
            vec![]
        } else {
            let et = DMatrix::from_fn(num_vars, equalities.len(), |r, c| equalities[c].a[r]);
            lstsq(&et, &phi).iter().copied().collect()
        };
        Separator {
            coefficients,
            offset,
        }
    });
    Ok(FeasibilityResult {
        feasible,
        margin,
        witness: solution.x[..num_vars].to_vec(),
        separator,
        solution,
    })
}

/// Orthonormal shifted Legendre polynomials on `[0, 1]` up to a degree, with
/// a Gauss-Legendre rule exact for products of three of them.
pub struct LegendreBasis {
    degree: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `values[(k, q)] = P_k(nodes[q])`.
    values: DMatrix<f64>,
}

impl LegendreBasis {
    pub fn new(degree: u32) -> Self {
        let degree = degree as usize;
        let rule = GaussLegendre::new(degree + 2).expect("at least two nodes");
        let (nodes, weights): (Vec<f64>, Vec<f64>) = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(t, w)| (0.5 * (t + 1.0), 0.5 * w))
            .unzip();
        let values = DMatrix::from_fn(degree + 1, nodes.len(), |k, q| 0.0 * (k + q) as f64);
        let mut basis = Self {
            degree,
            nodes,
            weights,
            values,
        };
        for q in 0..basis.nodes.len() {
            let col = Self::evaluate_all(degree, basis.nodes[q]);
            for k in 0..=degree {
                basis.values[(k, q)] = col[k];
            }
        }
        basis
    }

    /// `P_0(x), ..., P_d(x)` by the three-term recurrence.
    pub fn evaluate_all(degree: usize, x: f64) -> Vec<f64> {
        let t = 2.0 * x - 1.0;
        let mut p = vec![0.0; degree + 1];
        p[0] = 1.0;
        if degree >= 1 {
            p[1] = t;
        }
        for k in 1..degree {
            let kf = k as f64;
            p[k + 1] = ((2.0 * kf + 1.0) * t * p[k] - kf * p[k - 1]) / (kf + 1.0);
        }
        for (k, v) in p.iter_mut().enumerate() {
            *v *= (2.0 * k as f64 + 1.0).sqrt();
        }
        p
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Coefficients `g_k` with `int g dmu = sum_k g_k l_k` for a polynomial
    /// `g` of degree at most `d`, where `l_k = int P_k dmu`.
    pub fn coefficients(&self, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let gv: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * g(x))
            .collect();
        (0..=self.degree)
            .map(|k| (0..gv.len()).map(|q| gv[q] * self.values[(k, q)]).sum())
            .collect()
    }

    /// Coefficient rows converting Legendre moments to power moments
    /// `m_0..m_d`.
    pub fn power_moment_rows(&self) -> DMatrix<f64> {
        let d = self.degree;
        DMatrix::from_fn(d + 1, d + 1, |j, k| {
            (0..self.nodes.len())
                .map(|q| self.weights[q] * self.nodes[q].powi(j as i32) * self.values[(k, q)])
                .sum()
        })
    }

    fn localized_block(&self, size: usize, weight: impl Fn(f64) -> f64) -> LmiBlock {
        let d = self.degree;
        let nq = self.nodes.len();
        let wq: Vec<f64> = (0..nq)
            .map(|q| self.weights[q] * weight(self.nodes[q]))
            .collect();
        let coefficients = (0..=d)
            .map(|k| {
                let mut f = DMatrix::zeros(size, size);
                for i in 0..size {
                    for j in i..size {
                        let v: f64 = (0..nq)
                            .map(|q| {
                                wq[q]
                                    * self.values[(i, q)]
                                    * self.values[(j, q)]
                                    * self.values[(k, q)]
                            })
                            .sum();
                        f[(i, j)] = v;
                        f[(j, i)] = v;
                    }
                }
                f
            })
            .collect();
        LmiBlock::new(DMatrix::zeros(size, size), coefficients)
    }

    /// The Hankel pair in this basis, as blocks over `l_0..l_d`. The second
    /// block is omitted when it is empty (`d = 0`).
    pub fn hankel_blocks(&self) -> Vec<LmiBlock> {
        let d = self.degree;
        let e = d / 2;
        let mut out = Vec::with_capacity(2);
        if d % 2 == 0 {
            out.push(self.localized_block(e + 1, |_| 1.0));
            if e > 0 {
                out.push(self.localized_block(e, |x| x * (1.0 - x)));
            }
        } else {
            out.push(self.localized_block(e + 1, |x| x));
            out.push(self.localized_block(e + 1, |x| 1.0 - x));
        }
        out
    }
}

/// Moment-cone feasibility with `len(pins)` linear functionals pinned.
struct PinnedProgram {
    basis: LegendreBasis,
    blocks: Vec<LmiBlock>,
    pins: Vec<Vec<f64>>,
}

impl PinnedProgram {
    fn new(degree: u32, pins: impl IntoIterator<Item = Box<dyn Fn(f64) -> f64>>) -> Self {
        let basis = LegendreBasis::new(degree);
        let blocks = basis.hankel_blocks();
        let pins = pins.into_iter().map(|g| basis.coefficients(g)).collect();
        Self {
            basis,
            blocks,
            pins,
        }
    }

    fn membership(
        &self,
        exponents: &ExponentSet,
        values: &[f64],
    ) -> Result<(MembershipResult, SdpSolution)> {
        let n = self.basis.degree() + 1;
        let equalities: Vec<LinearEquality> = self
            .pins
            .iter()
            .zip(values)
            .map(|(a, &b)| LinearEquality { a: a.clone(), b })
            .collect();
        // The pins include the total mass, which bounds every moment.
        let res = feasibility_impl(n, &self.blocks, &equalities, false)?;
        let mut eigs = [f64::INFINITY; 2];
        for (slot, b) in self.blocks.iter().enumerate() {
            eigs[slot] = crate::linalg::psd_min_eig(&symmetrize(&b.evaluate(&res.witness)))?;
        }
        let decision = if res.margin > FEAS_TOL {
            Decision::Inside
        } else if res.margin < -FEAS_TOL {
            Decision::Outside
        } else {
            Decision::Boundary
        };
        let certificate = match (&decision, res.separator) {
            (Decision::Outside, Some(sep)) if !sep.coefficients.is_empty() => {
                Some(Certificate::Separator {
                    exponents: exponents.exponents().to_vec(),
                    coefficients: sep.coefficients,
                })
            }
            _ => None,
        };
        let result = MembershipResult {
            decision,
            min_eigenvalues: (eigs[0], eigs[1]),
            margin: res.margin,
            certificate,
        };
        Ok((result, res.solution))
    }
}

fn scalar_membership(value: f64) -> MembershipResult {
    let decision = if value > FEAS_TOL {
        Decision::Inside
    } else if value < -FEAS_TOL {
        Decision::Outside
    } else {
        Decision::Boundary
    };
    MembershipResult {
        decision,
        min_eigenvalues: (value, f64::INFINITY),
        margin: value,
        certificate: None,
    }
}

fn monomial(a: u32) -> Box<dyn Fn(f64) -> f64> {
    Box::new(move |x: f64| x.powi(a as i32))
}

/// Membership in `M(A)` for arbitrary `A`, by lifting to a full moment
/// sequence of degree `max(A) - min(A)`.
pub fn projected_membership(m: &MomentVector) -> Result<MembershipResult> {
    projected_membership_detailed(m).map(|(r, _)| r)
}

/// [`projected_membership`] together with the underlying solver run (absent
/// for single-exponent sets, which need no program).
pub fn projected_membership_detailed(
    m: &MomentVector,
) -> Result<(MembershipResult, Option<SdpSolution>)> {
    let exps = m.exponent_set();
    if exps.len() == 1 {
        return Ok((scalar_membership(m.values()[0]), None));
    }
    let b = exps.base_shift();
    let program = PinnedProgram::new(b.degree(), b.exponents().iter().map(|&a| monomial(a)));
    program
        .membership(exps, m.values())
        .map(|(r, sol)| (r, Some(sol)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

/// Membership in the cone of moments of nondecreasing (`Up`) or
/// nonincreasing (`Down`) densities.
pub fn monotone_membership(m: &MomentVector, direction: Direction) -> Result<MembershipResult> {
    let exps = m.exponent_set();
    let min = exps.min_exp();
    let (degree, pins): (u32, Vec<Box<dyn Fn(f64) -> f64>>) = match direction {
        Direction::Up => (
            exps.degree(),
            exps.exponents()
                .iter()
                .map(|&a| -> Box<dyn Fn(f64) -> f64> {
                    Box::new(move |x: f64| {
                        let mut acc = 0.0;
                        let mut p = 1.0;
                        for _ in 0..=a {
                            acc += p;
                            p *= x;
                        }
                        acc / (a as f64 + 1.0)
                    })
                })
                .collect(),
        ),
        Direction::Down => (
            exps.degree() - min,
            exps.exponents()
                .iter()
                .map(|&a| -> Box<dyn Fn(f64) -> f64> {
                    Box::new(move |x: f64| x.powi((a - min) as i32) / (a as f64 + 1.0))
                })
                .collect(),
        ),
    };
    if exps.len() == 1 {
        // The single pin is a positive multiple of the total mass.
        return Ok(scalar_membership(m.values()[0]));
    }
    PinnedProgram::new(degree, pins)
        .membership(exps, m.values())
        .map(|(r, _)| r)
}

/// Projection of a point onto `M(A)` (optionally intersected with the
/// hyperplane `sum_a m_a = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestPoint {
    pub x_star: MomentVector,
    /// `||x_star - p||`.
    pub distance: f64,
    /// Optimal value of the epigraph variable `tau >= ||x - p||`.
    pub tau: f64,
    /// Power moments `m_0..m_d` of a representing measure (after the base
    /// shift of `A`).
    pub lifted: Vec<f64>,
    pub solution: SdpSolution,
}

/// Minimizes `tau` subject to the Hankel blocks, the optional sum
/// constraint and the arrow block `[[tau, (x - p)^T], [x - p, tau I]] >= 0`,
/// which holds iff `||x - p|| <= tau`.
pub fn nearest_point(p: &MomentVector, sum_one: bool) -> Result<NearestPoint> {
    let exps = p.exponent_set();
    let b = exps.base_shift();
    let basis = LegendreBasis::new(b.degree());
    let d = basis.degree();
    let n = d + 2;
    let tau = d + 1;
    let q = exps.len();
    let rows: Vec<Vec<f64>> = b
        .exponents()
        .iter()
        .map(|&a| basis.coefficients(monomial(a)))
        .collect();

    let mut blocks: Vec<LmiBlock> = basis
        .hankel_blocks()
        .into_iter()
        .map(|blk| blk.padded(n))
        .collect();
    let mut constant = DMatrix::zeros(q + 1, q + 1);
    for (i, &pv) in p.values().iter().enumerate() {
        constant[(0, i + 1)] = -pv;
        constant[(i + 1, 0)] = -pv;
    }
    let mut coefficients = vec![DMatrix::zeros(q + 1, q + 1); n];
    for (k, coeff) in coefficients.iter_mut().enumerate().take(d + 1) {
        for (i, row) in rows.iter().enumerate() {
            coeff[(0, i + 1)] = row[k];
            coeff[(i + 1, 0)] = row[k];
        }
    }
    coefficients[tau] = DMatrix::identity(q + 1, q + 1);
    blocks.push(LmiBlock::new(constant, coefficients));

    let mut equalities = Vec::new();
    if sum_one {
        let mut a: Vec<f64> = (0..=d).map(|k| rows.iter().map(|r| r[k]).sum()).collect();
        a.push(0.0);
        equalities.push(LinearEquality { a, b: 1.0 });
    }
    let mut objective = vec![0.0; n];
    objective[tau] = 1.0;
    let solution = solve(&SdpProblem {
        num_vars: n,
        objective,
        blocks,
        equalities,
    })?;
    if matches!(
        solution.status,
        SdpStatus::Breakdown | SdpStatus::Infeasible
    ) {
        return Err(Error::NumericalBreakdown(format!(
            "nearest-point program ended with status {:?}",
            solution.status
        )));
    }
    let ell = &solution.x[..=d];
    let x_star: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(ell).map(|(a, l)| a * l).sum())
        .collect();
    let distance = x_star
        .iter()
        .zip(p.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let lifted = (basis.power_moment_rows() * DVector::from_column_slice(ell))
        .iter()
        .copied()
        .collect();
    Ok(NearestPoint {
        x_star: MomentVector::new(exps.clone(), x_star)?,
        distance,
        tau: solution.x[tau],
        lifted,
        solution,
    })
}
