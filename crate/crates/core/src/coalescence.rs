//! Population histories on the half-line, their transform to step densities on
//! `[0, 1]`, and coalescence vectors.
//!
//! For a history `eta` with intensity `R(t) = int_0^t 1/eta`, the time-changed
//! history `eta(R^{-1}(tau))` becomes, after `u = exp(-tau)`, a step function
//! on `[0, 1]` whose moments at exponents `C(i, 2) - 1` are the expected
//! first-coalescence times `c_2, ..., c_n`.

use serde::{Deserialize, Serialize};

use crate::hankel::MembershipResult;
use crate::moments::{canonicalize, moments_of_step, ExponentSet, MomentVector, StepFunction};
use crate::oracle::{fit_candidates, FitOptions};
use crate::sdp::{nearest_point, projected_membership};
use crate::{Error, Result};

/// Coordinate sums within this distance of 1 count as on the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Moment residual accepted for a witness history.
pub const WITNESS_TOL: f64 = 1e-8;

/// Piecewise-constant effective population size on `[0, inf)`: `sizes[0]` on
/// `[0, b_1)`, ..., `sizes[k]` on `[b_k, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HistoryRepr", into = "HistoryRepr")]
pub struct PopulationHistory {
    breakpoints: Vec<f64>,
    sizes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct HistoryRepr {
    breakpoints: Vec<f64>,
    sizes: Vec<f64>,
    #[serde(default = "halfline")]
    domain: String,
}

fn halfline() -> String {
    "halfline".into()
}

impl TryFrom<HistoryRepr> for PopulationHistory {
    type Error = Error;

    fn try_from(r: HistoryRepr) -> Result<Self> {
        if r.domain != "halfline" {
            return Err(Error::InvalidHistory(format!(
                "unsupported domain {:?}",
                r.domain
            )));
        }
        Self::new(r.breakpoints, r.sizes)
    }
}

impl From<PopulationHistory> for HistoryRepr {
    fn from(h: PopulationHistory) -> Self {
        Self {
            breakpoints: h.breakpoints,
            sizes: h.sizes,
            domain: halfline(),
        }
    }
}

impl PopulationHistory {
    pub fn new(breakpoints: Vec<f64>, sizes: Vec<f64>) -> Result<Self> {
        if sizes.len() != breakpoints.len() + 1 {
            return Err(Error::InvalidHistory(format!(
                "{} breakpoints need {} sizes, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                sizes.len()
            )));
        }
        if let Some(&b) = breakpoints.iter().find(|&&b| !(b > 0.0) || !b.is_finite()) {
            return Err(Error::InvalidHistory(format!(
                "breakpoint {b} is not a positive finite time"
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidHistory(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if let Some((index, &value)) = sizes
            .iter()
            .enumerate()
            .find(|(_, &p)| !(p > 0.0) || !p.is_finite())
        {
            return Err(Error::NotStrictlyPositive { index, value });
        }
        Ok(Self { breakpoints, sizes })
    }

    pub fn constant(size: f64) -> Result<Self> {
        Self::new(vec![], vec![size])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= t);
        self.sizes[i]
    }

    /// `R(b_j)` for every breakpoint.
    fn knot_intensities(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut prev = 0.0;
        self.breakpoints
            .iter()
            .zip(&self.sizes)
            .map(|(&b, &p)| {
                acc += (b - prev) / p;
                prev = b;
                acc
            })
            .collect()
    }
}

/// `R(t) = int_0^t 1/eta(x) dx`.
pub fn intensity(eta: &PopulationHistory, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("time {t} is negative")));
    }
    let mut acc = 0.0;
    let mut prev = 0.0;
    for (&b, &p) in eta.breakpoints.iter().zip(&eta.sizes) {
        if t <= b {
            return Ok(acc + (t - prev) / p);
        }
        acc += (b - prev) / p;
        prev = b;
    }
    Ok(acc + (t - prev) / eta.sizes[eta.sizes.len() - 1])
}

/// Inverse of [`intensity`].
pub fn intensity_inverse(eta: &PopulationHistory, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput(format!("intensity {tau} is negative")));
    }
    let knots = eta.knot_intensities();
    let i = knots.partition_point(|&r| r < tau);
    let (t0, r0) = if i == 0 {
        (0.0, 0.0)
    } else {
        (eta.breakpoints[i - 1], knots[i - 1])
    };
    Ok(t0 + (tau - r0) * eta.sizes[i])
}

/// `u -> eta(R^{-1}(-ln u))` on `[0, 1]`: breakpoints `exp(-R(b_k)) < ... <
/// exp(-R(b_1))` and the sizes in reverse order.
pub fn to_unit_step(eta: &PopulationHistory) -> StepFunction {
    let breakpoints: Vec<f64> = eta
        .knot_intensities()
        .iter()
        .rev()
        .map(|r| (-r).exp())
        .collect();
    let heights: Vec<f64> = eta.sizes.iter().rev().copied().collect();
    StepFunction::new(breakpoints.clone(), heights.clone())
        .or_else(|_| StepFunction::from_raw(breakpoints, heights))
        .expect("exp(-R) is non-decreasing in [0, 1]")
}

/// The history whose transform is `f`: with `q(tau) = f(exp(-tau))` and
/// `Q(t) = int_0^t q`, returns `eta(t) = q(Q^{-1}(t))`. Requires every height
/// of `f` to be strictly positive.
pub fn from_unit_step(f: &StepFunction) -> Result<PopulationHistory> {
    if let Some((index, &value)) = f.heights().iter().enumerate().find(|(_, &y)| !(y > 0.0)) {
        return Err(Error::NotStrictlyPositive { index, value });
    }
    let f = canonicalize(f);
    // Pieces of q in increasing tau: tau_j = -ln u_{k+1-j}, heights reversed.
    let taus: Vec<f64> = f.breakpoints().iter().rev().map(|u| -u.ln()).collect();
    let sizes: Vec<f64> = f.heights().iter().rev().copied().collect();
    let mut acc = 0.0;
    let mut prev = 0.0;
    let breakpoints = taus
        .iter()
        .zip(&sizes)
        .map(|(&tau, &q)| {
            acc += (tau - prev) * q;
            prev = tau;
            acc
        })
        .collect();
    PopulationHistory::new(breakpoints, sizes)
}

/// `Q(t) = int_0^t f(exp(-tau)) dtau`, the inverse of the intensity of
/// `from_unit_step(f)`.
pub fn unit_step_cumulative(f: &StepFunction, t: f64) -> f64 {
    let taus: Vec<f64> = f.breakpoints().iter().rev().map(|u| -u.ln()).collect();
    let sizes: Vec<f64> = f.heights().iter().rev().copied().collect();
    let mut acc = 0.0;
    let mut prev = 0.0;
    for (&tau, &q) in taus.iter().zip(&sizes) {
        if t <= tau {
            return acc + (t - prev) * q;
        }
        acc += (tau - prev) * q;
        prev = tau;
    }
    acc + (t - prev) * sizes[sizes.len() - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalescenceVector {
    pub n: usize,
    /// `c_2, ..., c_n`.
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl CoalescenceVector {
    pub fn to_moment_vector(&self) -> Result<MomentVector> {
        MomentVector::new(coalescence_exponents(self.n)?, self.values.clone())
    }
}

/// `{C(i, 2) - 1 : i = 2, ..., n}`.
pub fn coalescence_exponents(n: usize) -> Result<ExponentSet> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("sample size {n} is below 2")));
    }
    let exps = (2..=n).map(|i| (i * (i - 1) / 2 - 1) as u32).collect();
    ExponentSet::new(exps)
}

/// Expected first-coalescence times `c_i = int_0^1 f(u) u^{C(i,2)-1} du` with
/// `f = to_unit_step(eta)`.
pub fn coalescence_vector(eta: &PopulationHistory, n: usize) -> Result<CoalescenceVector> {
    let exps = coalescence_exponents(n)?;
    let m = moments_of_step(&to_unit_step(eta), &exps);
    Ok(CoalescenceVector {
        n,
        values: m.into_values(),
        normalized: false,
    })
}

pub fn normalize(c: &CoalescenceVector) -> Result<CoalescenceVector> {
    let total: f64 = c.values.iter().sum();
    if !(total > 0.0) || c.values.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput(
            "coalescence vector must be nonnegative with positive sum".into(),
        ));
    }
    Ok(CoalescenceVector {
        n: c.n,
        values: c.values.iter().map(|v| v / total).collect(),
        normalized: true,
    })
}

fn point_vector(point: &[f64], n: usize) -> Result<MomentVector> {
    let exps = coalescence_exponents(n)?;
    if point.len() != exps.len() {
        return Err(Error::DimensionMismatch {
            expected: exps.len(),
            got: point.len(),
        });
    }
    MomentVector::new(exps, point.to_vec())
}

/// Membership of a sum-one point in the coalescence manifold, i.e. in the
/// sum-one slice of `M(A)` for `A = {C(i,2) - 1}`; the decision holds for
/// every breakpoint budget `k >= n - 2`.
pub fn manifold_membership(point: &[f64], n: usize) -> Result<MembershipResult> {
    let m = point_vector(point, n)?;
    let sum = m.sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::NotOnSimplex(sum));
    }
    projected_membership(&m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub history: Option<PopulationHistory>,
    /// Moment residual of the fitted step function.
    pub residual: f64,
    /// Why no history was produced.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldNearest {
    pub point: Vec<f64>,
    pub distance: f64,
    pub witness: Witness,
    #[serde(skip)]
    pub solution: Option<crate::sdp::SdpSolution>,
}

fn max_log_jump(heights: &[f64]) -> f64 {
    heights
        .windows(2)
        .map(|w| (w[1] / w[0]).ln().abs())
        .fold(0.0, f64::max)
}

/// Closest point of the coalescence manifold to `p` (any real vector), plus a
/// history realizing it when one can be recovered with `n - 2` breakpoints.
/// Among fits within tolerance the one with the smallest largest log-jump in
/// population size is preferred.
pub fn manifold_nearest(p: &[f64], n: usize, seed: u64) -> Result<ManifoldNearest> {
    let target = point_vector(p, n)?;
    let near = nearest_point(&target, true)?;
    let x = near.x_star.clone();
    let opts = FitOptions::new(n - 2).seed(seed);
    let candidates = fit_candidates(&x, &opts)?;
    let best_residual = candidates[0].residual;
    let tol = WITNESS_TOL.max(2.0 * best_residual);
    let mut chosen: Option<(f64, PopulationHistory, f64)> = None;
    let mut reason = None;
    for fit in candidates.iter().filter(|f| f.residual <= tol) {
        let Some(f) = fit.step_function() else {
            reason.get_or_insert_with(|| "fit concentrates mass in an atom".to_string());
            continue;
        };
        let f = canonicalize(&f);
        match from_unit_step(&f) {
            Ok(h) => {
                let jump = max_log_jump(f.heights());
                if chosen.as_ref().map_or(true, |c| jump < c.0) {
                    chosen = Some((jump, h, fit.residual));
                }
            }
            Err(_) => {
                reason.get_or_insert_with(|| "fitted step function has a zero height".to_string());
            }
        }
    }
    let witness = match chosen {
        Some((_, history, residual)) => Witness {
            history: Some(history),
            residual,
            reason: None,
        },
        None => Witness {
            history: None,
            residual: best_residual,
            reason: Some(
                reason.unwrap_or_else(|| format!("no {}-breakpoint fit within {tol:e}", n - 2)),
            ),
        },
    };
    Ok(ManifoldNearest {
        point: x.into_values(),
        distance: near.distance,
        witness,
        solution: Some(near.solution),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hankel::Decision;
    use crate::moments::piece_average;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn etas() -> PopulationHistory {
        PopulationHistory::new(vec![2.0, 5.0], vec![2.0, 3.0, 1.0]).unwrap()
    }

    fn random_history(rng: &mut impl Rng, k: usize) -> PopulationHistory {
        let mut b: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..4.0)).collect();
        b.sort_by(f64::total_cmp);
        let p = (0..=k).map(|_| rng.gen_range(0.2..5.0)).collect();
        PopulationHistory::new(b, p).unwrap()
    }

    #[test]
    fn intensity_examples() {
        let c = PopulationHistory::constant(2.0).unwrap();
        assert_abs_diff_eq!(intensity(&c, 3.0).unwrap(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(intensity(&etas(), 2.0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(intensity(&etas(), 5.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_eq!(intensity(&etas(), 0.0).unwrap(), 0.0);
        assert!(intensity(&etas(), -1.0).is_err());
    }

    #[test]
    fn intensity_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let h = random_history(&mut rng, 3);
            for _ in 0..50 {
                let t = rng.gen_range(0.0..10.0);
                let back = intensity_inverse(&h, intensity(&h, t).unwrap()).unwrap();
                assert_abs_diff_eq!(back, t, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn worked_example_transform() {
        let f = to_unit_step(&etas());
        assert_abs_diff_eq!(f.breakpoints()[0], (-2.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(f.breakpoints()[1], (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(f.heights(), &[1.0, 3.0, 2.0]);
        assert_eq!(from_unit_step(&f).unwrap(), etas());
    }

    #[test]
    fn constant_transforms() {
        let f = to_unit_step(&PopulationHistory::constant(2.0).unwrap());
        assert_eq!(f, StepFunction::constant(2.0).unwrap());
        let h = from_unit_step(&StepFunction::constant(2.0).unwrap()).unwrap();
        assert_eq!(h, PopulationHistory::constant(2.0).unwrap());
    }

    #[test]
    fn inverse_of_two_piece_q() {
        // q = 1 on [0, 1), 2 afterwards.
        let f = StepFunction::new(vec![(-1.0f64).exp()], vec![2.0, 1.0]).unwrap();
        let h = from_unit_step(&f).unwrap();
        assert_abs_diff_eq!(h.breakpoints()[0], 1.0, epsilon = 1e-15);
        assert_eq!(h.sizes(), &[1.0, 2.0]);
        for i in 0..100 {
            let t = i as f64 * 0.07;
            let q = unit_step_cumulative(&f, t);
            assert_abs_diff_eq!(intensity(&h, q).unwrap(), t, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_heights_are_rejected() {
        let f = StepFunction::new(vec![0.5], vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            from_unit_step(&f),
            Err(Error::NotStrictlyPositive { index: 1, .. })
        ));
        assert!(PopulationHistory::new(vec![1.0], vec![1.0, 0.0]).is_err());
        assert!(PopulationHistory::new(vec![2.0, 1.0], vec![1.0; 3]).is_err());
    }

    #[test]
    fn breakpoint_count_and_monotone_link() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mut h = random_history(&mut rng, 4);
            assert_eq!(to_unit_step(&h).num_breakpoints(), 4);
            let mut sizes = h.sizes().to_vec();
            sizes.sort_by(|a, b| b.total_cmp(a));
            h = PopulationHistory::new(h.breakpoints().to_vec(), sizes).unwrap();
            let y = to_unit_step(&h).heights().to_vec();
            assert!(y.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn coalescence_examples() {
        let c = coalescence_vector(&PopulationHistory::constant(1.0).unwrap(), 5).unwrap();
        for (v, e) in c.values.iter().zip([1.0, 1.0 / 3.0, 1.0 / 6.0, 0.1]) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-15);
        }
        let c3 = coalescence_vector(&PopulationHistory::constant(3.0).unwrap(), 5).unwrap();
        for (a, b) in c3.values.iter().zip(&c.values) {
            assert_relative_eq!(*a, 3.0 * b, max_relative = 1e-15);
        }
        // Independent quadrature of int eta(R^{-1}(tau)) exp(-C(i,2) tau) dtau.
        let expected = [
            2.0972088746982169378,
            0.68160985467151040871,
            0.333744410625326617,
            0.200004539580745524,
        ];
        let c = coalescence_vector(&etas(), 5).unwrap();
        for (v, e) in c.values.iter().zip(expected) {
            assert_relative_eq!(*v, e, max_relative = 1e-13);
        }
        assert!(c.values.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn tau_domain_consistency() {
        // Piecewise-exact integration in tau against the unit-interval route.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let h = random_history(&mut rng, 3);
            let c = coalescence_vector(&h, 6).unwrap();
            let mut knots = vec![0.0];
            for &b in h.breakpoints() {
                knots.push(intensity(&h, b).unwrap());
            }
            for (idx, i) in (2..=6usize).enumerate() {
                let lam = (i * (i - 1) / 2) as f64;
                let mut total = 0.0;
                for (j, &p) in h.sizes().iter().enumerate() {
                    let lo = knots[j];
                    let tail = knots.get(j + 1).map_or(0.0, |&hi| (-lam * hi).exp());
                    total += p * ((-lam * lo).exp() - tail) / lam;
                }
                assert_relative_eq!(c.values[idx], total, max_relative = 1e-12);
            }
        }
        assert_abs_diff_eq!(piece_average(0, 0.0, 1.0), 1.0);
    }

    #[test]
    fn normalize_examples() {
        let c = coalescence_vector(&PopulationHistory::constant(1.0).unwrap(), 5).unwrap();
        let n = normalize(&c).unwrap();
        for (v, e) in n
            .values
            .iter()
            .zip([0.625, 0.625 / 3.0, 0.625 / 6.0, 0.0625])
        {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-15);
        }
        assert!(n.normalized);
        let again = normalize(&n).unwrap();
        for (a, b) in again.values.iter().zip(&n.values) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        let scaled = CoalescenceVector {
            values: c.values.iter().map(|v| 7.0 * v).collect(),
            ..c.clone()
        };
        for (a, b) in normalize(&scaled).unwrap().values.iter().zip(&n.values) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
        let zero = CoalescenceVector {
            n: 3,
            values: vec![0.0, 0.0],
            normalized: false,
        };
        assert!(normalize(&zero).is_err());
    }

    #[test]
    fn exponents() {
        assert_eq!(coalescence_exponents(5).unwrap().exponents(), &[0, 2, 5, 9]);
        assert_eq!(coalescence_exponents(2).unwrap().exponents(), &[0]);
        assert_eq!(
            coalescence_exponents(6).unwrap().exponents(),
            &[0, 2, 5, 9, 14]
        );
        assert!(coalescence_exponents(1).is_err());
    }

    #[test]
    fn json_schemas() {
        let j = serde_json::to_value(etas()).unwrap();
        assert_eq!(j["domain"], "halfline");
        let back: PopulationHistory = serde_json::from_value(j).unwrap();
        assert_eq!(back, etas());
        let bad = r#"{"breakpoints":[1.0],"sizes":[1.0,0.0],"domain":"halfline"}"#;
        assert!(serde_json::from_str::<PopulationHistory>(bad).is_err());
        let c = coalescence_vector(&etas(), 5).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<CoalescenceVector>(&s).unwrap(), c);
    }

    #[test]
    fn membership_examples() {
        let c = coalescence_vector(&PopulationHistory::constant(1.0).unwrap(), 5).unwrap();
        let p = normalize(&c).unwrap().values;
        assert_eq!(
            manifold_membership(&p, 5).unwrap().decision,
            Decision::Inside
        );
        let vertex = manifold_membership(&[1.0, 0.0, 0.0, 0.0], 5).unwrap();
        assert_eq!(vertex.decision, Decision::Boundary);
        assert!(matches!(
            manifold_membership(&[0.5, 0.2, 0.1, 0.1], 5),
            Err(Error::NotOnSimplex(_))
        ));
        assert!(manifold_membership(&[0.5, 0.5], 5).is_err());
    }

    #[test]
    fn random_histories_are_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let h = random_history(&mut rng, 3);
            let p = normalize(&coalescence_vector(&h, 5).unwrap())
                .unwrap()
                .values;
            let r = manifold_membership(&p, 5).unwrap();
            assert_ne!(r.decision, Decision::Outside);
        }
    }

    #[test]
    fn nearest_on_manifold_recovers_a_witness() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_history(&mut rng, 3);
        let p = normalize(&coalescence_vector(&h, 5).unwrap())
            .unwrap()
            .values;
        let r = manifold_nearest(&p, 5, 42).unwrap();
        assert!(r.distance <= 1e-6, "{}", r.distance);
        let w = r.witness.history.expect("witness");
        let c = coalescence_vector(&w, 5).unwrap().values;
        for (a, b) in c.iter().zip(&p) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-5);
        }
    }

    #[test]
    fn nearest_accepts_any_vector() {
        let r = manifold_nearest(&[-0.3, 0.8, 0.4, -0.1], 5, 42).unwrap();
        assert_abs_diff_eq!(r.point.iter().sum::<f64>(), 1.0, epsilon = 1e-8);
        assert!(r.distance > 0.1);
    }
}
