//! Brute-force cross-checks: grid-discretized conic-hull membership, multi-start
//! best fits over the parameter polytope, randomized breakpoint-bound experiments and
//! fiber sampling.
//!
//! Fits use variable projection. For fixed breakpoints `s` the best weights
//! solve a nonnegative least-squares problem exactly (optionally with the
//! coordinate-sum equality), so the local search only moves `s`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{lstsq, nnls_constrained, NnlsSolution};
use crate::moments::{
    moment_curve, piece_average, ExponentSet, MomentVector, PolytopePoint, StepFunction,
};
use crate::{Error, Result};

pub const DEFAULT_GRID: usize = 2001;
pub const DEFAULT_STARTS: usize = 32;
/// Residual below which a fit counts as exact in the theorem experiments.
pub const FIT_TOL: f64 = 1e-6;
/// Residual above which a planted target counts as unreachable.
pub const TIGHTNESS_TOL: f64 = 1e-4;
pub const TIGHTNESS_STARTS: usize = 256;
/// Fiber points must reproduce the target to this distance.
pub const FIBER_TOL: f64 = 1e-6;
/// Largest `|A|` accepted by [`theorem_suite`].
pub const MAX_SUITE_SIZE: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub residual: f64,
    pub grid_size: usize,
    /// Weight of `v_A(i / (N - 1))`.
    pub weights: Vec<f64>,
}

impl GridResult {
    /// Grid points carrying positive weight, as `(t, weight)`.
    pub fn support(&self) -> Vec<(f64, f64)> {
        let n = self.grid_size;
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| (i as f64 / (n - 1) as f64, w))
            .collect()
    }
}

fn column_sums(v: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(v.ncols(), v.column_iter().map(|c| c.sum()))
}

fn nnls_fit(v: &DMatrix<f64>, target: &DVector<f64>, sum_one: bool) -> NnlsSolution {
    if sum_one {
        let h = column_sums(v);
        nnls_constrained(v, target, Some((&h, 1.0)))
    } else {
        nnls_constrained(v, target, None)
    }
}

/// `min || sum_i w_i v_A(t_i) - m ||` over `w >= 0` on the uniform grid
/// `t_i = i / (N - 1)`; with `sum_one` the fitted point must have coordinate
/// sum 1.
pub fn grid_membership(m: &MomentVector, grid_size: usize, sum_one: bool) -> Result<GridResult> {
    if grid_size < 2 {
        return Err(Error::InvalidInput("grid size must be at least 2".into()));
    }
    let exps = m.exponent_set();
    let v = DMatrix::from_fn(exps.len(), grid_size, |r, c| {
        let t = c as f64 / (grid_size - 1) as f64;
        t.powi(exps.exponents()[r] as i32)
    });
    let target = DVector::from_column_slice(m.values());
    let sol = nnls_fit(&v, &target, sum_one);
    Ok(GridResult {
        residual: (&v * &sol.x - &target).norm(),
        grid_size,
        weights: sol.x.iter().copied().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monotone {
    #[default]
    None,
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub k: usize,
    pub monotone: Monotone,
    /// Restrict fitted moments to coordinate sum 1.
    pub sum_one: bool,
    pub random_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl FitOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            monotone: Monotone::None,
            sum_one: false,
            random_starts: DEFAULT_STARTS,
            seed: 42,
            max_iter: 200,
        }
    }

    pub fn monotone(mut self, monotone: Monotone) -> Self {
        self.monotone = monotone;
        self
    }

    pub fn sum_one(mut self, sum_one: bool) -> Self {
        self.sum_one = sum_one;
        self
    }

    pub fn starts(mut self, random_starts: usize) -> Self {
        self.random_starts = random_starts;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub best: PolytopePoint,
    /// Euclidean distance between the fitted and target moments.
    pub residual: f64,
    pub starts_tried: usize,
    pub converged: bool,
    pub fitted: Vec<f64>,
    /// Piece heights when every piece has positive width.
    pub heights: Option<Vec<f64>>,
}

impl FitResult {
    pub fn step_function(&self) -> Option<StepFunction> {
        self.best.to_step_function()
    }
}

struct Model<'a> {
    exps: &'a ExponentSet,
    target: DVector<f64>,
    monotone: Monotone,
    sum_one: bool,
}

struct Evaluation {
    residual: DVector<f64>,
    coeffs: DVector<f64>,
}

impl Evaluation {
    fn norm(&self) -> f64 {
        self.residual.norm()
    }
}

impl<'a> Model<'a> {
    fn columns(&self, s: &[f64]) -> DMatrix<f64> {
        let exps = self.exps.exponents();
        let k = s.len();
        match self.monotone {
            Monotone::None => {
                let mut edges = Vec::with_capacity(k + 2);
                edges.push(0.0);
                edges.extend_from_slice(s);
                edges.push(1.0);
                DMatrix::from_fn(exps.len(), k + 1, |r, c| {
                    piece_average(exps[r], edges[c], edges[c + 1])
                })
            }
            Monotone::Up => DMatrix::from_fn(exps.len(), k + 1, |r, c| {
                let a1 = exps[r] as f64 + 1.0;
                if c == 0 {
                    1.0 / a1
                } else {
                    (1.0 - s[c - 1].powi(exps[r] as i32 + 1)) / a1
                }
            }),
            Monotone::Down => DMatrix::from_fn(exps.len(), k + 1, |r, c| {
                let a1 = exps[r] as f64 + 1.0;
                if c == 0 {
                    1.0 / a1
                } else {
                    s[c - 1].powi(exps[r] as i32 + 1) / a1
                }
            }),
        }
    }

    fn evaluate(&self, s: &[f64]) -> Evaluation {
        let v = self.columns(s);
        let sol = nnls_fit(&v, &self.target, self.sum_one);
        Evaluation {
            residual: &v * &sol.x - &self.target,
            coeffs: sol.x,
        }
    }

    /// Heights of the fitted step function, in piece order.
    fn heights(&self, s: &[f64], coeffs: &DVector<f64>) -> Vec<f64> {
        let k = s.len();
        match self.monotone {
            Monotone::None => {
                let mut edges = vec![0.0];
                edges.extend_from_slice(s);
                edges.push(1.0);
                (0..=k)
                    .map(|i| {
                        let width = edges[i + 1] - edges[i];
                        if width > 0.0 {
                            coeffs[i] / width
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
            // y_1 = c, y_{i+1} = y_i + beta_i.
            Monotone::Up => {
                let mut y = Vec::with_capacity(k + 1);
                let mut acc = coeffs[0];
                y.push(acc);
                for j in 0..k {
                    acc += coeffs[j + 1];
                    y.push(acc);
                }
                y
            }
            // y_{k+1} = c, y_i = y_{i+1} + beta_i.
            Monotone::Down => {
                let mut y = vec![0.0; k + 1];
                let mut acc = coeffs[0];
                y[k] = acc;
                for j in (0..k).rev() {
                    acc += coeffs[j + 1];
                    y[j] = acc;
                }
                y
            }
        }
    }

    fn polytope_point(
        &self,
        s: &[f64],
        coeffs: &DVector<f64>,
    ) -> Result<(PolytopePoint, Option<Vec<f64>>)> {
        let mut edges = vec![0.0];
        edges.extend_from_slice(s);
        edges.push(1.0);
        let widths: Vec<f64> = edges.windows(2).map(|e| e[1] - e[0]).collect();
        let (w, heights) = match self.monotone {
            Monotone::None => {
                let w: Vec<f64> = coeffs.iter().map(|c| c.max(0.0)).collect();
                let h = widths
                    .iter()
                    .all(|&d| d > 0.0)
                    .then(|| self.heights(s, coeffs));
                (w, h)
            }
            _ => {
                let y = self.heights(s, coeffs);
                let w = y
                    .iter()
                    .zip(&widths)
                    .map(|(y, d)| (y * d).max(0.0))
                    .collect();
                (w, Some(y))
            }
        };
        Ok((PolytopePoint::new(s.to_vec(), w)?, heights))
    }
}

fn normalize_s(s: &mut [f64]) {
    for x in s.iter_mut() {
        *x = x.clamp(0.0, 1.0);
    }
    s.sort_by(f64::total_cmp);
}

struct Local {
    s: Vec<f64>,
    residual: f64,
    converged: bool,
}

/// Projected Levenberg-Marquardt on the breakpoints with a forward-difference
/// Jacobian of the variable-projection residual.
fn local_solve(model: &Model, s0: &[f64], max_iter: usize) -> Local {
    let mut s = s0.to_vec();
    normalize_s(&mut s);
    let mut current = model.evaluate(&s);
    let k = s.len();
    let scale = 1.0 + model.target.norm();
    if k == 0 {
        return Local {
            s,
            residual: current.norm(),
            converged: true,
        };
    }
    let mut lambda = 1e-3;
    let mut converged = false;
    let n = model.target.len();
    for _ in 0..max_iter {
        let r = current.norm();
        if r <= 1e-15 * scale {
            converged = true;
            break;
        }
        let mut jac = DMatrix::zeros(n, k);
        for i in 0..k {
            let h = 1e-7 * (1.0 + s[i].abs());
            let mut sp = s.clone();
            let step = if s[i] + h <= 1.0 { h } else { -h };
            sp[i] += step;
            normalize_s(&mut sp);
            let ev = model.evaluate(&sp);
            jac.set_column(i, &((&ev.residual - &current.residual) / step));
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &current.residual;
        if grad.amax() <= 1e-16 * scale {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda <= 1e10 {
            let mut sys = jtj.clone();
            for i in 0..k {
                sys[(i, i)] += lambda * (jtj[(i, i)] + 1e-12);
            }
            let delta = lstsq(&sys, &(-&grad));
            let mut trial: Vec<f64> = s.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            normalize_s(&mut trial);
            let ev = model.evaluate(&trial);
            if ev.norm() < r {
                let gain = r - ev.norm();
                let moved = trial
                    .iter()
                    .zip(&s)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                s = trial;
                current = ev;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if gain <= 1e-14 * r || moved <= 1e-15 {
                    converged = true;
                }
                break;
            }
            lambda *= 5.0;
        }
        if !accepted {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Local {
        residual: current.norm(),
        s,
        converged,
    }
}

/// Breakpoint vectors placing degenerate pieces on the atoms of a coarse grid
/// fit: one breakpoint for an endpoint atom, a coincident pair for an interior
/// one.
fn atom_seeded_start(m: &MomentVector, k: usize, sum_one: bool) -> Option<Vec<f64>> {
    let grid = grid_membership(m, 201, sum_one).ok()?;
    let mut atoms = grid.support();
    atoms.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut s = Vec::with_capacity(k);
    for (t, _) in atoms {
        if s.len() >= k {
            break;
        }
        if t <= 1e-12 {
            s.push(0.0);
        } else if t >= 1.0 - 1e-12 {
            s.push(1.0);
        } else if s.len() + 2 <= k {
            s.push(t);
            s.push(t);
        } else {
            s.push(t);
        }
    }
    let fill = k - s.len();
    for i in 0..fill {
        s.push((i + 1) as f64 / (fill + 1) as f64);
    }
    normalize_s(&mut s);
    Some(s)
}

fn random_start(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut s: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
    normalize_s(&mut s);
    s
}

/// Multi-start best fit of `m` by `k`-breakpoint step functions (optionally
/// monotone). Starts are generated up front from `opts.seed`, solved in
/// parallel and merged by `(residual, s)` so results do not depend on the
/// thread count.
pub fn best_fit_step(m: &MomentVector, opts: &FitOptions) -> Result<FitResult> {
    Ok(fit_candidates(m, opts)?.swap_remove(0))
}

/// Every local solution of the multi-start search, best first, with
/// duplicates (same `s` to 1e-9) removed.
pub fn fit_candidates(m: &MomentVector, opts: &FitOptions) -> Result<Vec<FitResult>> {
    let model = Model {
        exps: m.exponent_set(),
        target: DVector::from_column_slice(m.values()),
        monotone: opts.monotone,
        sum_one: opts.sum_one,
    };
    let k = opts.k;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    starts.push((1..=k).map(|i| i as f64 / (k + 1) as f64).collect());
    if k > 0 && opts.monotone == Monotone::None {
        if let Some(s) = atom_seeded_start(m, k, opts.sum_one) {
            starts.push(s);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    if k > 0 {
        for _ in 0..opts.random_starts {
            starts.push(random_start(&mut rng, k));
        }
    }
    let mut results: Vec<Local> = starts
        .par_iter()
        .map(|s0| local_solve(&model, s0, opts.max_iter))
        .collect();
    results.sort_by(|a, b| {
        a.residual
            .total_cmp(&b.residual)
            .then_with(|| lexicographic(&a.s, &b.s))
    });
    let mut kept: Vec<&Local> = Vec::new();
    for r in &results {
        let duplicate = kept
            .iter()
            .any(|q| q.s.iter().zip(&r.s).all(|(a, b)| (a - b).abs() <= 1e-9));
        if !duplicate {
            kept.push(r);
        }
    }
    kept.into_iter()
        .map(|local| {
            let ev = model.evaluate(&local.s);
            let (point, heights) = model.polytope_point(&local.s, &ev.coeffs)?;
            Ok(FitResult {
                best: point,
                residual: ev.norm(),
                starts_tried: starts.len(),
                converged: local.converged,
                fitted: (&ev.residual + &model.target).iter().copied().collect(),
                heights,
            })
        })
        .collect()
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o.is_ne() {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// One line of the theorem report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub theorem: String,
    #[serde(rename = "A")]
    pub a: Vec<u32>,
    pub k: usize,
    /// Random members fitted, or multi-starts spent on a planted target.
    pub trials: usize,
    /// Largest best-fit residual over members; for planted targets, the best
    /// (smallest) residual found, which must stay above the tightness bound.
    pub max_residual: f64,
    pub pass: bool,
}

/// Random interior member of `M(A)`: one to three narrow spikes (width 1e-6)
/// plus a constant density of weight at least 0.1.
pub fn random_cone_member(exps: &ExponentSet, rng: &mut impl Rng) -> MomentVector {
    const SPIKE: f64 = 1e-6;
    let atoms = rng.gen_range(1..=3);
    let spikes: Vec<(f64, f64)> = (0..atoms)
        .map(|_| (rng.gen_range(0.0..1.0 - SPIKE), rng.gen_range(0.1..1.0)))
        .collect();
    let c = rng.gen_range(0.1..1.0);
    let values = exps
        .exponents()
        .iter()
        .map(|&a| {
            c / (a as f64 + 1.0)
                + spikes
                    .iter()
                    .map(|&(t, w)| w * piece_average(a, t, t + SPIKE))
                    .sum::<f64>()
        })
        .collect();
    MomentVector::new(exps.clone(), values).expect("lengths match")
}

/// Random monotone step function with one to six breakpoints.
pub fn random_monotone_step(direction: Monotone, rng: &mut impl Rng) -> StepFunction {
    let k = rng.gen_range(1..=6);
    let mut s: Vec<f64> = (0..k).map(|_| rng.gen_range(0.02..0.98)).collect();
    s.sort_by(f64::total_cmp);
    let mut y: Vec<f64> = (0..=k).map(|_| rng.gen_range(0.0..1.0)).collect();
    y.sort_by(f64::total_cmp);
    if direction == Monotone::Down {
        y.reverse();
    }
    StepFunction::from_raw(s, y).expect("valid monotone step")
}

/// Boundary point of index `|A| - 1`: an atom at 0 when that index is odd,
/// plus evenly spread interior atoms.
pub fn planted_boundary_target(exps: &ExponentSet) -> MomentVector {
    let index = exps.len() - 1;
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    let interior = index / 2;
    for j in 0..interior {
        pairs.push((
            (j + 1) as f64 / (interior + 1) as f64,
            0.8 / interior as f64,
        ));
    }
    if index % 2 == 1 {
        pairs.push((1.0, 0.2));
    }
    let mut values = vec![0.0; exps.len()];
    for (t, w) in pairs {
        let v = moment_curve(t, exps).expect("t in [0, 1]");
        for (acc, x) in values.iter_mut().zip(v.values()) {
            *acc += w * x;
        }
    }
    MomentVector::new(exps.clone(), values).expect("lengths match")
}

/// Monotone target with `jumps` interior jumps at generic positions.
pub fn planted_monotone_target(
    exps: &ExponentSet,
    direction: Monotone,
    jumps: usize,
) -> MomentVector {
    let s: Vec<f64> = (0..jumps)
        .map(|j| 0.3 + 0.4 * j as f64 / jumps.max(1) as f64)
        .collect();
    let mut y: Vec<f64> = (0..=jumps).map(|j| j as f64).collect();
    if direction == Monotone::Down {
        y.reverse();
    }
    let f = StepFunction::from_raw(s, y).expect("valid monotone step");
    crate::moments::moments_of_step(&f, exps)
}

/// Randomized checks of the breakpoint bounds at desk scale: exact fits at
/// `k = |A| - 1` (general) and `k = floor(|A| / 2)` (monotone), and planted
/// targets that stay out of reach one breakpoint below.
pub fn theorem_suite(exps: &ExponentSet, trials: usize, seed: u64) -> Result<Vec<TheoremReport>> {
    let q = exps.len();
    if q > MAX_SUITE_SIZE {
        return Err(Error::InvalidInput(format!(
            "theorem suite is limited to |A| <= {MAX_SUITE_SIZE}"
        )));
    }
    let a = exps.exponents().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let k = q - 1;
    let members: Vec<MomentVector> = (0..trials)
        .map(|_| random_cone_member(exps, &mut rng))
        .collect();
    let worst = members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            best_fit_step(m, &FitOptions::new(k).seed(seed.wrapping_add(i as u64)))
                .map(|f| f.residual)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    out.push(TheoremReport {
        theorem: "cone-sufficient".into(),
        a: a.clone(),
        k,
        trials,
        max_residual: worst,
        pass: worst <= FIT_TOL,
    });

    if q >= 2 {
        let k = q - 2;
        let target = planted_boundary_target(exps);
        let fit = best_fit_step(
            &target,
            &FitOptions::new(k).starts(TIGHTNESS_STARTS).seed(seed),
        )?;
        out.push(TheoremReport {
            theorem: "cone-tight".into(),
            a: a.clone(),
            k,
            trials: fit.starts_tried,
            max_residual: fit.residual,
            pass: fit.residual >= TIGHTNESS_TOL,
        });
    }

    for (name, lower, direction) in [
        ("monotone-sufficient-up", "monotone-tight-up", Monotone::Up),
        (
            "monotone-sufficient-down",
            "monotone-tight-down",
            Monotone::Down,
        ),
    ] {
        let k = q / 2;
        let members: Vec<MomentVector> = (0..trials)
            .map(|_| {
                crate::moments::moments_of_step(&random_monotone_step(direction, &mut rng), exps)
            })
            .collect();
        let worst = members
            .iter()
            .enumerate()
            .map(|(i, m)| {
                best_fit_step(
                    m,
                    &FitOptions::new(k)
                        .monotone(direction)
                        .seed(seed.wrapping_add(i as u64)),
                )
                .map(|f| f.residual)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        out.push(TheoremReport {
            theorem: name.into(),
            a: a.clone(),
            k,
            trials,
            max_residual: worst,
            pass: worst <= FIT_TOL,
        });
        if k >= 1 {
            let target = planted_monotone_target(exps, direction, k);
            let fit = best_fit_step(
                &target,
                &FitOptions::new(k - 1)
                    .monotone(direction)
                    .starts(TIGHTNESS_STARTS)
                    .seed(seed),
            )?;
            out.push(TheoremReport {
                theorem: lower.into(),
                a: a.clone(),
                k: k - 1,
                trials: fit.starts_tried,
                max_residual: fit.residual,
                pass: fit.residual >= TIGHTNESS_TOL,
            });
        }
    }
    Ok(out)
}

/// Distinct polytope points whose moments reproduce `m` to [`FIBER_TOL`],
/// from repeated randomized local solves. Empty when `m` is not fittable with
/// `k` breakpoints.
pub fn fiber_sample(
    m: &MomentVector,
    k: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<PolytopePoint>> {
    let model = Model {
        exps: m.exponent_set(),
        target: DVector::from_column_slice(m.values()),
        monotone: Monotone::None,
        sum_one: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attempts = (50 * count).max(100);
    let batch = 64;
    let mut found: Vec<PolytopePoint> = Vec::new();
    let mut tried = 0;
    while found.len() < count && tried < attempts {
        let starts: Vec<Vec<f64>> = (0..batch.min(attempts - tried))
            .map(|_| random_start(&mut rng, k))
            .collect();
        tried += starts.len();
        let locals: Vec<Local> = starts
            .par_iter()
            .map(|s0| local_solve(&model, s0, 200))
            .collect();
        for local in locals {
            if local.residual > FIBER_TOL || found.len() >= count {
                continue;
            }
            let ev = model.evaluate(&local.s);
            let (p, _) = model.polytope_point(&local.s, &ev.coeffs)?;
            let distinct = found.iter().all(|q| {
                let ds =
                    p.s.iter()
                        .zip(&q.s)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                let dw =
                    p.w.iter()
                        .zip(&q.w)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                ds.max(dw) > 1e-4
            });
            if distinct {
                found.push(p);
            }
        }
        if tried >= batch && found.is_empty() {
            // The first batch includes enough starts to reach any fittable
            // target; stop early for unreachable ones.
            break;
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{moments_of_polytope_point, moments_of_step};
    use approx::assert_abs_diff_eq;

    fn a0259() -> ExponentSet {
        ExponentSet::new(vec![0, 2, 5, 9]).unwrap()
    }

    fn mv(values: &[f64]) -> MomentVector {
        MomentVector::new(a0259(), values.to_vec()).unwrap()
    }

    #[test]
    fn grid_examples() {
        let v = moment_curve(0.5, &a0259()).unwrap();
        let r = grid_membership(&v, 2001, false).unwrap();
        assert!(r.residual <= 1e-12, "{}", r.residual);
        let (t, w) = r
            .support()
            .into_iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert_abs_diff_eq!(t, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-8);

        let leb = mv(&[1.0, 1.0 / 3.0, 1.0 / 6.0, 0.1]);
        assert!(grid_membership(&leb, 2001, false).unwrap().residual <= 1e-6);

        let bad = mv(&[1.0, 0.9, 0.1, 0.5]);
        for n in [101, 1001, 2001, 4001] {
            assert!(grid_membership(&bad, n, false).unwrap().residual >= 1e-2);
        }
        assert!(grid_membership(&bad, 1, false).is_err());
    }

    #[test]
    fn grid_residual_is_monotone_on_nested_grids() {
        let p = mv(&[0.4, 0.3, 0.2, 0.1]);
        let mut last = f64::INFINITY;
        for n in [3, 5, 9, 17, 33, 65] {
            let r = grid_membership(&p, n, true).unwrap().residual;
            assert!(r <= last + 1e-14);
            last = r;
        }
    }

    #[test]
    fn grid_sum_constraint_is_honoured() {
        let p = mv(&[0.25, 0.25, 0.25, 0.25]);
        let r = grid_membership(&p, 501, true).unwrap();
        let fitted: f64 = r
            .support()
            .iter()
            .map(|&(t, w)| w * moment_curve(t, &a0259()).unwrap().sum())
            .sum();
        assert_abs_diff_eq!(fitted, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn plant_and_recover() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let mut s = vec![rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
            s.sort_by(f64::total_cmp);
            let f = StepFunction::from_raw(s, vec![rng.gen(), rng.gen(), rng.gen()]).unwrap();
            let m = moments_of_step(&f, &a0259());
            let fit = best_fit_step(&m, &FitOptions::new(2)).unwrap();
            assert!(fit.residual <= 1e-8, "{}", fit.residual);
            let back = moments_of_polytope_point(&fit.best, &a0259());
            assert!(back.distance(m.values()) <= 1e-8);
        }
    }

    #[test]
    fn residual_does_not_increase_with_k() {
        let m = planted_boundary_target(&a0259());
        let mut last = f64::INFINITY;
        for k in 0..=3 {
            let r = best_fit_step(&m, &FitOptions::new(k)).unwrap().residual;
            assert!(r <= last + 1e-12, "k={k}: {r} > {last}");
            last = r;
        }
        assert!(last <= 1e-8);
    }

    #[test]
    fn monotone_fits_respect_ordering() {
        let m = mv(&[0.8, 0.3, 0.05, 0.01]);
        for dir in [Monotone::Up, Monotone::Down] {
            let fit = best_fit_step(&m, &FitOptions::new(2).monotone(dir)).unwrap();
            let y = fit.heights.unwrap();
            for w in y.windows(2) {
                match dir {
                    Monotone::Up => assert!(w[0] <= w[1]),
                    _ => assert!(w[0] >= w[1]),
                }
            }
            assert!(y.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn sum_one_fits_land_on_the_simplex() {
        let p = mv(&[0.7, 0.1, 0.1, 0.1]);
        let fit = best_fit_step(&p, &FitOptions::new(3).sum_one(true)).unwrap();
        assert_abs_diff_eq!(fit.fitted.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fits_are_reproducible() {
        let m = mv(&[0.9, 0.2, 0.1, 0.05]);
        let opts = FitOptions::new(2).seed(7);
        assert_eq!(
            best_fit_step(&m, &opts).unwrap(),
            best_fit_step(&m, &opts).unwrap()
        );
    }

    #[test]
    fn small_suite_passes() {
        let reports = theorem_suite(&ExponentSet::consecutive(1), 5, 1).unwrap();
        assert!(reports.iter().all(|r| r.pass), "{reports:?}");
        let json = serde_json::to_value(&reports[0]).unwrap();
        for key in ["theorem", "A", "k", "trials", "max_residual", "pass"] {
            assert!(json.get(key).is_some());
        }
        assert!(theorem_suite(&ExponentSet::consecutive(6), 1, 1).is_err());
    }

    #[test]
    fn fiber_of_constant_density() {
        let exps = ExponentSet::new(vec![0, 2, 5]).unwrap();
        let m = moments_of_step(&StepFunction::constant(1.0).unwrap(), &exps);
        let pts = fiber_sample(&m, 2, 5, 3).unwrap();
        assert_eq!(pts.len(), 5);
        for p in &pts {
            assert!(moments_of_polytope_point(p, &exps).distance(m.values()) <= FIBER_TOL);
        }
    }

    #[test]
    fn fiber_of_unreachable_target_is_empty() {
        let m = mv(&[1.0, 0.9, 0.1, 0.5]);
        assert!(fiber_sample(&m, 2, 5, 3).unwrap().is_empty());
    }
}
