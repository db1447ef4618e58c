//! Gradient-space algebra for two objectives.
//!
//! Every combiner takes an individual-objective gradient `g_ind` and a
//! collective-objective gradient `g_col` living in the same parameter space
//! and returns one ascent direction plus diagnostics describing which branch
//! produced it.

use std::fmt;
use std::ops::{Deref, Index};

use thiserror::Error;

/// Squared-norm threshold below which a vector is treated as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("empty parameter vector")]
    Empty,
    #[error("degenerate vector: squared norm {norm_sq:e} below {eps:e}")]
    Degenerate { norm_sq: f64, eps: f64 },
    #[error("beta must lie in [0, 1], got {0}")]
    InvalidBeta(f64),
    #[error("lambda magnitude must be positive, got {0}")]
    InvalidLambda(f64),
    #[error("hessian-vector product failed: {0}")]
    Hvp(String),
}

/// Flat, finite vector in parameter space.
#[derive(Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Validates that every entry is finite and the vector is nonempty.
    pub fn new(values: Vec<f64>) -> Result<Self, GradError> {
        if values.is_empty() {
            return Err(GradError::Empty);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GradError::NonFinite { index });
        }
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    /// Wraps values without the finiteness check. Callers in hot loops use
    /// this when the values come from an already-validated computation.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `a * self + b * other`, elementwise.
    pub fn lincomb(&self, a: f64, other: &Self, b: f64) -> Self {
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, scale: f64, other: &Self) -> Self {
        Self(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(x, y)| x + scale * y)
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.iter().map(|x| s * x).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = GradError;
    fn try_from(v: Vec<f64>) -> Result<Self, GradError> {
        Self::new(v)
    }
}

impl<const N: usize> TryFrom<[f64; N]> for ParamVector {
    type Error = GradError;
    fn try_from(v: [f64; N]) -> Result<Self, GradError> {
        Self::new(v.to_vec())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair(a: &ParamVector, b: &ParamVector) -> Result<(), GradError> {
    if a.dim() != b.dim() {
        return Err(GradError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    for v in [a, b] {
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(GradError::NonFinite { index });
        }
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<(), GradError> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(GradError::InvalidBeta(beta))
    }
}

/// Which rule produced a combined direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    /// `(1 - beta) g_ind + beta g_col` (also used by Weighted and AgA).
    NonConflictBlend,
    /// `g_ind` with its component along `g_col` removed.
    ProjectIndOntoColNormal,
    /// `g_col` with its component along `g_ind` removed.
    ProjectColOntoIndNormal,
    /// Both projections averaged (PCGrad on conflict).
    ProjectBoth,
    /// A divisor was degenerate; the other gradient was returned unmodified.
    PassThrough,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombineResult {
    pub direction: ParamVector,
    pub conflict: bool,
    pub branch: Branch,
    pub inner_product: f64,
    /// The scalar `<u, g> / |u|^2` actually applied; 0 when no projection ran.
    pub projection_coefficient: f64,
}

#[derive(Debug, Clone)]
pub struct CombineInput {
    pub g_ind: ParamVector,
    pub g_col: ParamVector,
    pub v_ind: f64,
    pub v_col: f64,
    pub beta: f64,
}

/// `true` iff `<g_ind, g_col> < 0`. A zero inner product is not a conflict.
pub fn detect_conflict(g_ind: &ParamVector, g_col: &ParamVector) -> Result<bool, GradError> {
    check_pair(g_ind, g_col)?;
    Ok(g_ind.dot(g_col) < 0.0)
}

/// Removes from `g` its component along `onto`.
pub fn project_onto_normal_plane(
    g: &ParamVector,
    onto: &ParamVector,
) -> Result<ParamVector, GradError> {
    project_onto_normal_plane_eps(g, onto, DEGENERATE_EPS)
}

pub fn project_onto_normal_plane_eps(
    g: &ParamVector,
    onto: &ParamVector,
    eps: f64,
) -> Result<ParamVector, GradError> {
    check_pair(g, onto)?;
    project_raw(g, onto, eps).map(|(p, _)| p)
}

/// Projection without input validation; returns the applied coefficient.
fn project_raw(
    g: &ParamVector,
    onto: &ParamVector,
    eps: f64,
) -> Result<(ParamVector, f64), GradError> {
    let norm_sq = onto.norm_sq();
    if norm_sq < eps {
        return Err(GradError::Degenerate { norm_sq, eps });
    }
    let coef = onto.dot(g) / norm_sq;
    let p = g.add_scaled(-coef, onto);
    // second pass removes the rounding residue along `onto`
    let fix = onto.dot(&p) / norm_sq;
    let p = p.add_scaled(-fix, onto);
    // a remainder this small is pure cancellation: g is collinear with onto
    if p.norm() <= COLLINEAR_REL * g.norm() {
        return Ok((g.scale(0.0), coef + fix));
    }
    Ok((p, coef + fix))
}

const COLLINEAR_REL: f64 = 1e-12;

/// Projection, or pass `g` through unmodified when `onto` is degenerate.
fn project_or_pass(
    g: &ParamVector,
    onto: &ParamVector,
    eps: f64,
    branch: Branch,
) -> (ParamVector, f64, Branch) {
    match project_raw(g, onto, eps) {
        Ok((p, coef)) => (p, coef, branch),
        Err(_) => (g.clone(), 0.0, Branch::PassThrough),
    }
}

/// The fair conflict-aware rule.
///
/// Aligned gradients are blended with weight `beta` on the collective side.
/// On conflict, the gradient of the objective with the lower value is
/// projected onto the normal plane of the other and used alone; a value tie
/// goes to the individual side.
pub fn combine_fcgrad(input: &CombineInput) -> Result<CombineResult, GradError> {
    combine_fcgrad_eps(input, DEGENERATE_EPS)
}

pub fn combine_fcgrad_eps(input: &CombineInput, eps: f64) -> Result<CombineResult, GradError> {
    let CombineInput {
        g_ind,
        g_col,
        v_ind,
        v_col,
        beta,
    } = input;
    check_pair(g_ind, g_col)?;
    check_beta(*beta)?;
    let inner = g_ind.dot(g_col);
    if inner >= 0.0 {
        return Ok(CombineResult {
            direction: g_ind.lincomb(1.0 - beta, g_col, *beta),
            conflict: false,
            branch: Branch::NonConflictBlend,
            inner_product: inner,
            projection_coefficient: 0.0,
        });
    }
    let (direction, coef, branch) = if v_col >= v_ind {
        project_or_pass(g_ind, g_col, eps, Branch::ProjectIndOntoColNormal)
    } else {
        project_or_pass(g_col, g_ind, eps, Branch::ProjectColOntoIndNormal)
    };
    Ok(CombineResult {
        direction,
        conflict: true,
        branch,
        inner_product: inner,
        projection_coefficient: coef,
    })
}

/// Fixed convex blend regardless of conflict.
pub fn combine_weighted(
    g_ind: &ParamVector,
    g_col: &ParamVector,
    beta: f64,
) -> Result<CombineResult, GradError> {
    check_pair(g_ind, g_col)?;
    check_beta(beta)?;
    let inner = g_ind.dot(g_col);
    Ok(CombineResult {
        direction: g_ind.lincomb(1.0 - beta, g_col, beta),
        conflict: inner < 0.0,
        branch: Branch::NonConflictBlend,
        inner_product: inner,
        projection_coefficient: 0.0,
    })
}

/// Projecting conflicting gradients (two-task PCGrad): on conflict each
/// gradient is projected onto the other's normal plane and the two results are
/// averaged; otherwise the raw gradients are averaged.
pub fn combine_pcgrad(g_ind: &ParamVector, g_col: &ParamVector) -> Result<CombineResult, GradError> {
    combine_pcgrad_eps(g_ind, g_col, DEGENERATE_EPS)
}

pub fn combine_pcgrad_eps(
    g_ind: &ParamVector,
    g_col: &ParamVector,
    eps: f64,
) -> Result<CombineResult, GradError> {
    check_pair(g_ind, g_col)?;
    let inner = g_ind.dot(g_col);
    if inner >= 0.0 {
        return Ok(CombineResult {
            direction: g_ind.lincomb(0.5, g_col, 0.5),
            conflict: false,
            branch: Branch::NonConflictBlend,
            inner_product: inner,
            projection_coefficient: 0.0,
        });
    }
    if g_col.norm_sq() < eps {
        return Ok(pass_through(g_ind, inner));
    }
    if g_ind.norm_sq() < eps {
        return Ok(pass_through(g_col, inner));
    }
    let (ind_tilde, coef) = project_raw(g_ind, g_col, eps)?;
    let (col_tilde, _) = project_raw(g_col, g_ind, eps)?;
    Ok(CombineResult {
        direction: ind_tilde.lincomb(0.5, &col_tilde, 0.5),
        conflict: true,
        branch: Branch::ProjectBoth,
        inner_product: inner,
        projection_coefficient: coef,
    })
}

fn pass_through(g: &ParamVector, inner: f64) -> CombineResult {
    CombineResult {
        direction: g.clone(),
        conflict: true,
        branch: Branch::PassThrough,
        inner_product: inner,
        projection_coefficient: 0.0,
    }
}

/// Linear map `v -> H_col^T v` at the current parameters.
pub trait HvpOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &ParamVector) -> Result<ParamVector, GradError>;
}

/// Hessian-vector product backed by a closure.
pub struct FnHvp<F> {
    dim: usize,
    f: F,
}

impl<F> FnHvp<F>
where
    F: Fn(&ParamVector) -> Result<ParamVector, GradError>,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> HvpOperator for FnHvp<F>
where
    F: Fn(&ParamVector) -> Result<ParamVector, GradError>,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, v: &ParamVector) -> Result<ParamVector, GradError> {
        (self.f)(v)
    }
}

/// The zero operator.
pub struct ZeroHvp(pub usize);

impl HvpOperator for ZeroHvp {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, v: &ParamVector) -> Result<ParamVector, GradError> {
        Ok(ParamVector::zeros(v.dim()))
    }
}

/// Adjusted-gradient alignment (AgA): `g_col + s * lambda * (g_ind + H^T g_col)`
/// with `s = sign[(g_col . h)((g_ind . h) + |h|^2)]` and `sign(0) = +1`.
pub fn combine_aga(
    g_ind: &ParamVector,
    g_col: &ParamVector,
    hvp: &dyn HvpOperator,
    lambda_mag: f64,
) -> Result<CombineResult, GradError> {
    check_pair(g_ind, g_col)?;
    if !(lambda_mag > 0.0 && lambda_mag.is_finite()) {
        return Err(GradError::InvalidLambda(lambda_mag));
    }
    if hvp.dim() != g_col.dim() {
        return Err(GradError::DimensionMismatch {
            left: hvp.dim(),
            right: g_col.dim(),
        });
    }
    let h = hvp.apply(g_col)?;
    check_pair(g_col, &h).map_err(|e| GradError::Hvp(e.to_string()))?;
    let sign_arg = g_col.dot(&h) * (g_ind.dot(&h) + h.norm_sq());
    let s = if sign_arg < 0.0 { -1.0 } else { 1.0 };
    let align = g_ind.lincomb(1.0, &h, 1.0);
    let inner = g_ind.dot(g_col);
    Ok(CombineResult {
        direction: g_col.add_scaled(s * lambda_mag, &align),
        conflict: inner < 0.0,
        branch: Branch::NonConflictBlend,
        inner_product: inner,
        projection_coefficient: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv<const N: usize>(v: [f64; N]) -> ParamVector {
        ParamVector::try_from(v).unwrap()
    }

    fn approx(a: &ParamVector, b: &[f64]) {
        assert_eq!(a.dim(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn conflict_examples() {
        assert!(detect_conflict(&pv([1.0, 0.0]), &pv([-1.0, 0.0])).unwrap());
        assert!(!detect_conflict(&pv([1.0, 0.0]), &pv([0.0, 1.0])).unwrap());
        // 1*3 + 2*(-1) = 1
        assert!(!detect_conflict(&pv([1.0, 2.0]), &pv([3.0, -1.0])).unwrap());
    }

    #[test]
    fn conflict_rejects_bad_input() {
        assert_eq!(
            detect_conflict(&pv([1.0, 0.0]), &pv([1.0])),
            Err(GradError::DimensionMismatch { left: 2, right: 1 })
        );
        assert!(ParamVector::new(vec![f64::NAN]).is_err());
        assert!(ParamVector::new(vec![]).is_err());
    }

    #[test]
    fn projection_examples() {
        approx(
            &project_onto_normal_plane(&pv([1.0, 0.0]), &pv([-1.0, 1.0])).unwrap(),
            &[0.5, 0.5],
        );
        approx(
            &project_onto_normal_plane(&pv([0.0, 1.0]), &pv([0.0, 1.0])).unwrap(),
            &[0.0, 0.0],
        );
        approx(
            &project_onto_normal_plane(&pv([3.0, 4.0]), &pv([1.0, 0.0])).unwrap(),
            &[0.0, 4.0],
        );
    }

    #[test]
    fn projection_degenerate() {
        let err = project_onto_normal_plane(&pv([1.0, 1.0]), &pv([1e-7, 0.0])).unwrap_err();
        assert!(matches!(err, GradError::Degenerate { .. }));
    }

    #[test]
    fn fcgrad_examples() {
        let r = combine_fcgrad(&CombineInput {
            g_ind: pv([1.0, 0.0]),
            g_col: pv([-1.0, 1.0]),
            v_ind: 0.0,
            v_col: 1.0,
            beta: 0.5,
        })
        .unwrap();
        approx(&r.direction, &[0.5, 0.5]);
        assert_eq!(r.branch, Branch::ProjectIndOntoColNormal);
        assert!(r.conflict);
        assert_eq!(r.projection_coefficient, -0.5);

        let r = combine_fcgrad(&CombineInput {
            g_ind: pv([1.0, 0.0]),
            g_col: pv([-1.0, 1.0]),
            v_ind: 2.0,
            v_col: 1.0,
            beta: 0.5,
        })
        .unwrap();
        approx(&r.direction, &[0.0, 1.0]);
        assert_eq!(r.branch, Branch::ProjectColOntoIndNormal);

        let r = combine_fcgrad(&CombineInput {
            g_ind: pv([1.0, 0.0]),
            g_col: pv([1.0, 0.0]),
            v_ind: -3.0,
            v_col: 8.0,
            beta: 0.7,
        })
        .unwrap();
        approx(&r.direction, &[1.0, 0.0]);
        assert_eq!(r.branch, Branch::NonConflictBlend);
        assert!(!r.conflict);
    }

    #[test]
    fn fcgrad_tie_goes_to_individual_projection() {
        let r = combine_fcgrad(&CombineInput {
            g_ind: pv([1.0, 0.0]),
            g_col: pv([-1.0, 1.0]),
            v_ind: 1.0,
            v_col: 1.0,
            beta: 0.5,
        })
        .unwrap();
        assert_eq!(r.branch, Branch::ProjectIndOntoColNormal);
    }

    #[test]
    fn fcgrad_degenerate_divisor_passes_through() {
        let r = combine_fcgrad(&CombineInput {
            g_ind: pv([1.0, 0.0]),
            g_col: pv([-1e-8, 0.0]),
            v_ind: 0.0,
            v_col: 1.0,
            beta: 0.5,
        })
        .unwrap();
        assert_eq!(r.branch, Branch::PassThrough);
        assert_eq!(r.direction, pv([1.0, 0.0]));
    }

    #[test]
    fn fcgrad_rejects_beta_out_of_range() {
        let err = combine_fcgrad(&CombineInput {
            g_ind: pv([1.0]),
            g_col: pv([1.0]),
            v_ind: 0.0,
            v_col: 0.0,
            beta: 1.5,
        })
        .unwrap_err();
        assert_eq!(err, GradError::InvalidBeta(1.5));
    }

    #[test]
    fn weighted_examples() {
        let a = pv([0.3, -1.7, 2.0]);
        let b = pv([-4.0, 0.1, 9.5]);
        assert_eq!(combine_weighted(&a, &b, 0.0).unwrap().direction, a);
        assert_eq!(combine_weighted(&a, &b, 1.0).unwrap().direction, b);
        approx(
            &combine_weighted(&pv([2.0, 0.0]), &pv([0.0, 2.0]), 0.5)
                .unwrap()
                .direction,
            &[1.0, 1.0],
        );
        assert!(combine_weighted(&pv([1.0]), &pv([-1.0]), 0.5).unwrap().conflict);
    }

    #[test]
    fn pcgrad_examples() {
        let r = combine_pcgrad(&pv([1.0, 0.0]), &pv([-1.0, 1.0])).unwrap();
        approx(&r.direction, &[0.25, 0.75]);
        assert_eq!(r.branch, Branch::ProjectBoth);
        approx(
            &combine_pcgrad(&pv([1.0, 1.0]), &pv([1.0, 1.0])).unwrap().direction,
            &[1.0, 1.0],
        );
        approx(
            &combine_pcgrad(&pv([1.0, 0.0]), &pv([0.0, 1.0])).unwrap().direction,
            &[0.5, 0.5],
        );
    }

    struct QuadHessian;
    impl HvpOperator for QuadHessian {
        fn dim(&self) -> usize {
            2
        }
        fn apply(&self, v: &ParamVector) -> Result<ParamVector, GradError> {
            Ok(v.scale(-2.0))
        }
    }

    #[test]
    fn aga_examples() {
        let r = combine_aga(&pv([1.0, 2.0]), &pv([3.0, -1.0]), &ZeroHvp(2), 1.0).unwrap();
        approx(&r.direction, &[4.0, 1.0]);

        // V_col = -|theta|^2 at (1, 0)
        let g_col = pv([-2.0, 0.0]);
        let r = combine_aga(&pv([0.0, 0.0]), &g_col, &QuadHessian, 1.0).unwrap();
        approx(&r.direction, &[-6.0, 0.0]);
        let r = combine_aga(&pv([1.0, 0.0]), &g_col, &QuadHessian, 1.0).unwrap();
        approx(&r.direction, &[-7.0, 0.0]);
    }

    #[test]
    fn aga_validates() {
        assert_eq!(
            combine_aga(&pv([1.0]), &pv([1.0]), &ZeroHvp(1), 0.0).unwrap_err(),
            GradError::InvalidLambda(0.0)
        );
        assert!(matches!(
            combine_aga(&pv([1.0]), &pv([1.0]), &ZeroHvp(3), 1.0).unwrap_err(),
            GradError::DimensionMismatch { .. }
        ));
        let failing = FnHvp::new(1, |_v: &ParamVector| Err(GradError::Hvp("boom".into())));
        assert_eq!(
            combine_aga(&pv([1.0]), &pv([1.0]), &failing, 1.0).unwrap_err(),
            GradError::Hvp("boom".into())
        );
    }
}
