//! Exponent sets, step functions and their sparse moments.
//!
//! A nonnegative step function on `[0, 1]` with breakpoints
//! `0 < s_1 < ... < s_k < 1` and heights `y_1, ..., y_{k+1}` has moments
//! `m_a = sum_i y_i (s_i^{a+1} - s_{i-1}^{a+1}) / (a + 1)` with `s_0 = 0`,
//! `s_{k+1} = 1`. Everything here is evaluated in closed form.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Width below which a piece is treated as empty during canonicalization.
pub const ZERO_WIDTH: f64 = 1e-15;

/// A finite set of nonnegative integer exponents, stored strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct ExponentSet {
    exponents: Vec<u32>,
}

impl ExponentSet {
    pub fn new(exponents: Vec<u32>) -> Result<Self> {
        if exponents.is_empty() {
            return Err(Error::InvalidExponents("exponent set is empty".into()));
        }
        if let Some(w) = exponents.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidExponents(format!(
                "exponents must be strictly increasing ({} followed by {})",
                w[0], w[1]
            )));
        }
        Ok(Self { exponents })
    }

    /// `{0, 1, ..., degree}`.
    pub fn consecutive(degree: u32) -> Self {
        Self {
            exponents: (0..=degree).collect(),
        }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn min_exp(&self) -> u32 {
        self.exponents[0]
    }

    pub fn degree(&self) -> u32 {
        *self.exponents.last().expect("non-empty by construction")
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, a: u32) -> bool {
        self.exponents.binary_search(&a).is_ok()
    }

    /// Position of `a` in the sorted list, if present.
    pub fn index_of(&self, a: u32) -> Option<usize> {
        self.exponents.binary_search(&a).ok()
    }

    /// `B = { a - min(A) : a in A }`.
    pub fn base_shift(&self) -> ExponentSet {
        let lo = self.min_exp();
        Self {
            exponents: self.exponents.iter().map(|a| a - lo).collect(),
        }
    }

    pub fn is_consecutive_from_zero(&self) -> bool {
        self.exponents
            .iter()
            .enumerate()
            .all(|(i, &a)| a as usize == i)
    }
}

impl TryFrom<Vec<u32>> for ExponentSet {
    type Error = Error;

    fn try_from(value: Vec<u32>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ExponentSet> for Vec<u32> {
    fn from(value: ExponentSet) -> Self {
        value.exponents
    }
}

/// A nonnegative piecewise-constant density on `[0, 1]`.
///
/// The first piece is `[0, s_1]`, later pieces are `(s_{i-1}, s_i]`. The
/// boundary convention never affects moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepFunctionRepr")]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    heights: Vec<f64>,
}

#[derive(Deserialize)]
struct StepFunctionRepr {
    breakpoints: Vec<f64>,
    heights: Vec<f64>,
}

impl TryFrom<StepFunctionRepr> for StepFunction {
    type Error = Error;

    fn try_from(r: StepFunctionRepr) -> Result<Self> {
        Self::new(r.breakpoints, r.heights)
    }
}

impl StepFunction {
    /// Builds a step function, requiring strictly increasing breakpoints in
    /// the open interval and nonnegative finite heights.
    pub fn new(breakpoints: Vec<f64>, heights: Vec<f64>) -> Result<Self> {
        check_shape(&breakpoints, &heights)?;
        if let Some(&s) = breakpoints.iter().find(|&&s| !(s > 0.0 && s < 1.0)) {
            return Err(Error::InvalidStepFunction(format!(
                "breakpoint {s} is not in (0, 1)"
            )));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidStepFunction(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            breakpoints,
            heights,
        })
    }

    /// The constant density `c` on `[0, 1]`.
    pub fn constant(c: f64) -> Result<Self> {
        Self::new(vec![], vec![c])
    }

    /// Builds from possibly degenerate lists (repeated breakpoints, breakpoints
    /// at 0 or 1, equal neighbouring heights) and returns the canonical form.
    pub fn from_raw(breakpoints: Vec<f64>, heights: Vec<f64>) -> Result<Self> {
        canonicalize_parts(&breakpoints, &heights)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    /// Number of breakpoints `k`.
    pub fn num_breakpoints(&self) -> usize {
        self.breakpoints.len()
    }

    /// Piece boundaries `0 = s_0, s_1, ..., s_k, s_{k+1} = 1`.
    pub fn edges(&self) -> Vec<f64> {
        let mut e = Vec::with_capacity(self.breakpoints.len() + 2);
        e.push(0.0);
        e.extend_from_slice(&self.breakpoints);
        e.push(1.0);
        e
    }

    /// Density value at `x`, following the closed-left-piece convention.
    pub fn value_at(&self, x: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|&s| s < x);
        self.heights[idx]
    }

    pub fn total_mass(&self) -> f64 {
        let e = self.edges();
        self.heights
            .iter()
            .zip(e.windows(2))
            .map(|(y, w)| y * (w[1] - w[0]))
            .sum()
    }

    /// `(s, w)` coordinates with `w_i = y_i (s_i - s_{i-1})`.
    pub fn to_polytope_point(&self) -> PolytopePoint {
        let e = self.edges();
        let w = self
            .heights
            .iter()
            .zip(e.windows(2))
            .map(|(y, g)| y * (g[1] - g[0]))
            .collect();
        PolytopePoint {
            s: self.breakpoints.clone(),
            w,
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0) || !factor.is_finite() {
            return Err(Error::InvalidInput(format!("scale factor {factor}")));
        }
        Ok(Self {
            breakpoints: self.breakpoints.clone(),
            heights: self.heights.iter().map(|y| y * factor).collect(),
        })
    }

    /// Pointwise sum of two step functions (canonicalized).
    pub fn add(&self, other: &StepFunction) -> StepFunction {
        let mut cuts: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(other.breakpoints.iter())
            .copied()
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut edges = vec![0.0];
        edges.extend_from_slice(&cuts);
        edges.push(1.0);
        let heights: Vec<f64> = edges
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                self.value_at(mid) + other.value_at(mid)
            })
            .collect();
        canonicalize_parts(&cuts, &heights).expect("sum of valid step functions is valid")
    }
}

fn check_shape(breakpoints: &[f64], heights: &[f64]) -> Result<()> {
    if heights.len() != breakpoints.len() + 1 {
        return Err(Error::InvalidStepFunction(format!(
            "{} breakpoints need {} heights, got {}",
            breakpoints.len(),
            breakpoints.len() + 1,
            heights.len()
        )));
    }
    if let Some(&y) = heights.iter().find(|&&y| !(y >= 0.0) || !y.is_finite()) {
        return Err(Error::InvalidStepFunction(format!(
            "height {y} is not a finite nonnegative number"
        )));
    }
    Ok(())
}

fn canonicalize_parts(breakpoints: &[f64], heights: &[f64]) -> Result<StepFunction> {
    check_shape(breakpoints, heights)?;
    if let Some(&s) = breakpoints.iter().find(|&&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::InvalidStepFunction(format!(
            "breakpoint {s} is outside [0, 1]"
        )));
    }
    if breakpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidStepFunction(
            "breakpoints must be non-decreasing".into(),
        ));
    }
    let mut edges = Vec::with_capacity(breakpoints.len() + 2);
    edges.push(0.0);
    edges.extend_from_slice(breakpoints);
    edges.push(1.0);

    // Surviving pieces as (right edge, height).
    let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(heights.len());
    for (w, &y) in edges.windows(2).zip(heights) {
        if w[1] - w[0] <= ZERO_WIDTH {
            continue;
        }
        match pieces.last_mut() {
            Some(last) if last.1 == y => last.0 = w[1],
            _ => pieces.push((w[1], y)),
        }
    }
    if pieces.is_empty() {
        // Everything collapsed; only possible for degenerate all-zero-width input.
        return Ok(StepFunction {
            breakpoints: vec![],
            heights: vec![0.0],
        });
    }
    let n = pieces.len();
    let breakpoints = pieces[..n - 1].iter().map(|p| p.0).collect();
    let heights = pieces.iter().map(|p| p.1).collect();
    Ok(StepFunction {
        breakpoints,
        heights,
    })
}

/// Merges zero-width pieces and equal-height neighbours. The result has the
/// minimal number of breakpoints for the same function (a.e.).
pub fn canonicalize(f: &StepFunction) -> StepFunction {
    canonicalize_parts(&f.breakpoints, &f.heights).expect("valid step function")
}

/// A point of the parameter polytope: weakly ordered breakpoints `s` and
/// nonnegative piece masses `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolytopePoint {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
}

impl PolytopePoint {
    pub fn new(s: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if w.len() != s.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: s.len() + 1,
                got: w.len(),
            });
        }
        if s.iter().any(|&x| !(0.0..=1.0).contains(&x)) || s.windows(2).any(|p| p[0] > p[1]) {
            return Err(Error::InvalidInput(
                "polytope breakpoints must satisfy 0 <= s_1 <= ... <= s_k <= 1".into(),
            ));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput(
                "piece masses must be nonnegative".into(),
            ));
        }
        Ok(Self { s, w })
    }

    pub fn edges(&self) -> Vec<f64> {
        let mut e = Vec::with_capacity(self.s.len() + 2);
        e.push(0.0);
        e.extend_from_slice(&self.s);
        e.push(1.0);
        e
    }

    /// The step function with these masses, if every positive-mass piece has
    /// positive width. Zero-mass zero-width pieces are dropped.
    pub fn to_step_function(&self) -> Option<StepFunction> {
        let e = self.edges();
        let mut heights = Vec::with_capacity(self.w.len());
        for (g, &w) in e.windows(2).zip(&self.w) {
            let width = g[1] - g[0];
            if width <= ZERO_WIDTH {
                if w > 0.0 {
                    return None;
                }
                heights.push(0.0);
            } else {
                heights.push(w / width);
            }
        }
        canonicalize_parts(&self.s, &heights).ok()
    }
}

/// A finite nonnegative combination of point masses on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AtomicMeasureRepr")]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

#[derive(Deserialize)]
struct AtomicMeasureRepr {
    atoms: Vec<Atom>,
}

impl TryFrom<AtomicMeasureRepr> for AtomicMeasure {
    type Error = Error;

    fn try_from(r: AtomicMeasureRepr) -> Result<Self> {
        Self::new(r.atoms)
    }
}

impl AtomicMeasure {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        for a in &atoms {
            if !(0.0..=1.0).contains(&a.location) {
                return Err(Error::InvalidMeasure(format!(
                    "location {} outside [0, 1]",
                    a.location
                )));
            }
            if !(a.weight > 0.0) || !a.weight.is_finite() {
                return Err(Error::InvalidMeasure(format!(
                    "weight {} is not strictly positive",
                    a.weight
                )));
            }
        }
        if atoms.windows(2).any(|w| w[0].location >= w[1].location) {
            return Err(Error::InvalidMeasure(
                "locations must be strictly increasing".into(),
            ));
        }
        Ok(Self { atoms })
    }

    /// Convenience constructor from `(location, weight)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(location, weight)| Atom { location, weight })
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// Coordinates `(m_a)_{a in A}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MomentVectorRepr", into = "MomentVectorRepr")]
pub struct MomentVector {
    exponent_set: ExponentSet,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MomentVectorRepr {
    exponents: Vec<u32>,
    values: Vec<f64>,
}

impl TryFrom<MomentVectorRepr> for MomentVector {
    type Error = Error;

    fn try_from(r: MomentVectorRepr) -> Result<Self> {
        Self::new(ExponentSet::new(r.exponents)?, r.values)
    }
}

impl From<MomentVector> for MomentVectorRepr {
    fn from(m: MomentVector) -> Self {
        Self {
            exponents: m.exponent_set.exponents,
            values: m.values,
        }
    }
}

impl MomentVector {
    pub fn new(exponent_set: ExponentSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != exponent_set.len() {
            return Err(Error::DimensionMismatch {
                expected: exponent_set.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            exponent_set,
            values,
        })
    }

    pub fn exponent_set(&self) -> &ExponentSet {
        &self.exponent_set
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at exponent `a`, if `a` belongs to the set.
    pub fn get(&self, a: u32) -> Option<f64> {
        self.exponent_set.index_of(a).map(|i| self.values[i])
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            exponent_set: self.exponent_set.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// `sum_{j=0}^{a} lo^j hi^{a-j} / (a + 1)`: the average of `x^a` over
/// `[lo, hi]`, continuous up to `lo == hi` where it equals `hi^a`.
pub fn piece_average(a: u32, lo: f64, hi: f64) -> f64 {
    piece_average_with_grad(a, lo, hi).0
}

/// [`piece_average`] together with its partial derivatives in `lo` and `hi`.
pub fn piece_average_with_grad(a: u32, lo: f64, hi: f64) -> (f64, f64, f64) {
    // S_n = hi S_{n-1} + lo^n, dS_n/dhi = S_{n-1} + hi dS_{n-1}/dhi,
    // dS_n/dlo = hi dS_{n-1}/dlo + n lo^{n-1}.
    let mut s = 1.0;
    let mut d_hi = 0.0;
    let mut d_lo = 0.0;
    let mut lo_pow = 1.0; // lo^{n-1}
    for n in 1..=a {
        d_lo = hi * d_lo + n as f64 * lo_pow;
        d_hi = s + hi * d_hi;
        lo_pow *= lo;
        s = hi * s + lo_pow;
    }
    let scale = 1.0 / (a as f64 + 1.0);
    (s * scale, d_lo * scale, d_hi * scale)
}

/// Closed-form `A`-moments of a step function.
pub fn moments_of_step(f: &StepFunction, exps: &ExponentSet) -> MomentVector {
    let edges = f.edges();
    let values = exps
        .exponents()
        .iter()
        .map(|&a| {
            let p = (a + 1) as i32;
            let inv = 1.0 / (a as f64 + 1.0);
            f.heights
                .iter()
                .zip(edges.windows(2))
                .map(|(y, e)| y * (e[1].powi(p) - e[0].powi(p)) * inv)
                .sum()
        })
        .collect();
    MomentVector {
        exponent_set: exps.clone(),
        values,
    }
}

/// Moments of a polytope point via piece masses; degenerate pieces contribute
/// `w_i v_A(s_i)`.
pub fn moments_of_polytope_point(p: &PolytopePoint, exps: &ExponentSet) -> MomentVector {
    let edges = p.edges();
    let values = exps
        .exponents()
        .iter()
        .map(|&a| {
            p.w.iter()
                .zip(edges.windows(2))
                .map(|(w, e)| w * piece_average(a, e[0], e[1]))
                .sum()
        })
        .collect();
    MomentVector {
        exponent_set: exps.clone(),
        values,
    }
}

fn check_unit(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::OutsideUnitInterval(t))
    }
}

fn curve_values(exps: &ExponentSet, t: f64) -> Vec<f64> {
    exps.exponents().iter().map(|&a| t.powi(a as i32)).collect()
}

/// `v_A(t) = (t^a)_{a in A}` with `0^0 = 1`.
pub fn moment_curve(t: f64, exps: &ExponentSet) -> Result<MomentVector> {
    check_unit(t)?;
    Ok(MomentVector {
        exponent_set: exps.clone(),
        values: curve_values(exps, t),
    })
}

/// Moments of the increasing single-jump density `(1/(1-t)) 1_{(t,1]}`.
pub fn gamma_up(t: f64, exps: &ExponentSet) -> Result<MomentVector> {
    check_unit(t)?;
    let values = exps
        .exponents()
        .iter()
        .map(|&a| {
            // sum_{i<=a} t^i / (a + 1), by Horner.
            let mut acc = 0.0;
            for _ in 0..=a {
                acc = acc * t + 1.0;
            }
            acc / (a as f64 + 1.0)
        })
        .collect();
    Ok(MomentVector {
        exponent_set: exps.clone(),
        values,
    })
}

/// Moments of the decreasing single-jump density `t^{-(min A + 1)} 1_{[0,t]}`.
pub fn gamma_down(t: f64, exps: &ExponentSet) -> Result<MomentVector> {
    check_unit(t)?;
    let lo = exps.min_exp();
    let values = exps
        .exponents()
        .iter()
        .map(|&a| t.powi((a - lo) as i32) / (a as f64 + 1.0))
        .collect();
    Ok(MomentVector {
        exponent_set: exps.clone(),
        values,
    })
}

/// Re-indexes a moment vector over `A` by `B = A - min(A)`.
pub fn base_shift(m: &MomentVector) -> MomentVector {
    MomentVector {
        exponent_set: m.exponent_set.base_shift(),
        values: m.values.clone(),
    }
}

pub fn moments_of_atoms(mu: &AtomicMeasure, exps: &ExponentSet) -> MomentVector {
    let mut values = vec![0.0; exps.len()];
    for atom in mu.atoms() {
        for (v, c) in values.iter_mut().zip(curve_values(exps, atom.location)) {
            *v += atom.weight * c;
        }
    }
    MomentVector {
        exponent_set: exps.clone(),
        values,
    }
}
