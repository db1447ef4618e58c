//! Analytic two-objective problems and executable checks of the ascent
//! guarantees: step-size improvement, monotone non-decrease, the conflict-step
//! Lyapunov decrease of `delta^2 / 2`, and value-gap convergence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gradcore::{
    combine_aga, combine_fcgrad, combine_pcgrad, combine_weighted, CombineInput, CombineResult,
    FnHvp, GradError, ParamVector,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TestbedError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// A pair of smooth objectives with exact first and second order information.
pub trait SmoothBiObjective: Sync {
    fn dim(&self) -> usize;
    fn eval_ind(&self, theta: &ParamVector) -> f64;
    fn eval_col(&self, theta: &ParamVector) -> f64;
    fn grad_ind(&self, theta: &ParamVector) -> ParamVector;
    fn grad_col(&self, theta: &ParamVector) -> ParamVector;
    /// `H_col(theta)^T v`.
    fn hvp_col(&self, theta: &ParamVector, v: &ParamVector) -> ParamVector;
    /// A smoothness constant valid for both objectives.
    fn smoothness(&self) -> f64;
}

/// `V_ind = -c |theta - a|^2`, `V_col = -c |theta - b|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPair {
    pub center_ind: ParamVector,
    pub center_col: ParamVector,
    pub curvature: f64,
}

pub fn make_quadratic_pair(
    center_ind: ParamVector,
    center_col: ParamVector,
    curvature: f64,
) -> Result<QuadraticPair, TestbedError> {
    if center_ind.dim() != center_col.dim() {
        return Err(GradError::DimensionMismatch {
            left: center_ind.dim(),
            right: center_col.dim(),
        }
        .into());
    }
    if !(curvature > 0.0 && curvature.is_finite()) {
        return Err(TestbedError::Invalid(format!(
            "curvature must be positive, got {curvature}"
        )));
    }
    Ok(QuadraticPair {
        center_ind,
        center_col,
        curvature,
    })
}

impl QuadraticPair {
    fn value(&self, center: &ParamVector, theta: &ParamVector) -> f64 {
        let d: f64 = theta
            .iter()
            .zip(center.iter())
            .map(|(t, c)| (t - c) * (t - c))
            .sum();
        -self.curvature * d
    }

    fn grad(&self, center: &ParamVector, theta: &ParamVector) -> ParamVector {
        let k = 2.0 * self.curvature;
        ParamVector::from_vec_unchecked(
            center
                .iter()
                .zip(theta.iter())
                .map(|(c, t)| k * (c - t))
                .collect(),
        )
    }
}

impl SmoothBiObjective for QuadraticPair {
    fn dim(&self) -> usize {
        self.center_ind.dim()
    }
    fn eval_ind(&self, theta: &ParamVector) -> f64 {
        self.value(&self.center_ind, theta)
    }
    fn eval_col(&self, theta: &ParamVector) -> f64 {
        self.value(&self.center_col, theta)
    }
    fn grad_ind(&self, theta: &ParamVector) -> ParamVector {
        self.grad(&self.center_ind, theta)
    }
    fn grad_col(&self, theta: &ParamVector) -> ParamVector {
        self.grad(&self.center_col, theta)
    }
    fn hvp_col(&self, _theta: &ParamVector, v: &ParamVector) -> ParamVector {
        v.scale(-2.0 * self.curvature)
    }
    fn smoothness(&self) -> f64 {
        2.0 * self.curvature
    }
}

/// Which gradient combiner drives the ascent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CombinerKind {
    FcGrad,
    Weighted,
    PcGrad,
    AgA { lambda_mag: f64 },
}

/// One update `theta + eta * direction`.
pub fn ascent_step(
    obj: &dyn SmoothBiObjective,
    combiner: CombinerKind,
    theta: &ParamVector,
    eta: f64,
    beta: f64,
) -> Result<(ParamVector, CombineResult), TestbedError> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(TestbedError::Invalid(format!("step size {eta}")));
    }
    let result = combine_at(obj, combiner, theta, beta)?;
    Ok((theta.add_scaled(eta, &result.direction), result))
}

fn combine_at(
    obj: &dyn SmoothBiObjective,
    combiner: CombinerKind,
    theta: &ParamVector,
    beta: f64,
) -> Result<CombineResult, TestbedError> {
    let g_ind = obj.grad_ind(theta);
    let g_col = obj.grad_col(theta);
    let r = match combiner {
        CombinerKind::FcGrad => combine_fcgrad(&CombineInput {
            g_ind,
            g_col,
            v_ind: obj.eval_ind(theta),
            v_col: obj.eval_col(theta),
            beta,
        })?,
        CombinerKind::Weighted => combine_weighted(&g_ind, &g_col, beta)?,
        CombinerKind::PcGrad => combine_pcgrad(&g_ind, &g_col)?,
        CombinerKind::AgA { lambda_mag } => {
            let hvp = FnHvp::new(obj.dim(), |v: &ParamVector| Ok(obj.hvp_col(theta, v)));
            combine_aga(&g_ind, &g_col, &hvp, lambda_mag)?
        }
    };
    Ok(r)
}

/// Step-size schedule for [`run_schedule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Constant(f64),
    /// `eta_t = min(c, |delta_t| / L)`.
    GapScaled(f64),
    /// `eta_t = min(c / (t + 1), |delta_t| / L)`.
    Harmonic(f64),
}

impl StepRule {
    pub fn eta(&self, t: usize, delta: f64, smoothness: f64) -> f64 {
        let cap = delta.abs() / smoothness;
        match *self {
            StepRule::Constant(eta) => eta,
            StepRule::GapScaled(c) => c.min(cap),
            StepRule::Harmonic(c) => (c / (t as f64 + 1.0)).min(cap),
        }
    }
}

/// State at iteration `t` and the step taken from it. The terminal point
/// carries `eta = 0` and `direction_norm = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub theta: ParamVector,
    pub v_ind: f64,
    pub v_col: f64,
    pub delta: f64,
    pub conflict: bool,
    pub eta: f64,
    pub direction_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceStatus {
    Complete,
    Truncated { at: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentTrace {
    pub points: Vec<TracePoint>,
    pub status: TraceStatus,
    pub seed: u64,
}

impl AscentTrace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn conflict_steps(&self) -> usize {
        let n = self.points.len().saturating_sub(1);
        self.points[..n].iter().filter(|p| p.conflict).count()
    }
}

/// Runs `steps` ascent iterations from `theta0`. The run is deterministic;
/// `seed` is carried into the trace for reporting.
pub fn run_schedule(
    obj: &dyn SmoothBiObjective,
    combiner: CombinerKind,
    theta0: &ParamVector,
    steps: usize,
    rule: StepRule,
    beta: f64,
    seed: u64,
) -> Result<AscentTrace, TestbedError> {
    if steps == 0 {
        return Err(TestbedError::Invalid("steps must be at least 1".into()));
    }
    if theta0.dim() != obj.dim() {
        return Err(GradError::DimensionMismatch {
            left: theta0.dim(),
            right: obj.dim(),
        }
        .into());
    }
    let smoothness = obj.smoothness();
    let mut points = Vec::with_capacity(steps + 1);
    let mut theta = theta0.clone();
    let mut status = TraceStatus::Complete;
    for t in 0..=steps {
        let v_ind = obj.eval_ind(&theta);
        let v_col = obj.eval_col(&theta);
        if !(v_ind.is_finite() && v_col.is_finite()) {
            status = TraceStatus::Truncated {
                at: t,
                reason: format!("non-finite objective value ({v_ind}, {v_col})"),
            };
            break;
        }
        let delta = v_ind - v_col;
        if t == steps {
            points.push(TracePoint {
                theta,
                v_ind,
                v_col,
                delta,
                conflict: false,
                eta: 0.0,
                direction_norm: 0.0,
            });
            break;
        }
        let eta = rule.eta(t, delta, smoothness);
        let result = combine_at(obj, combiner, &theta, beta)?;
        let next = theta.add_scaled(eta, &result.direction);
        points.push(TracePoint {
            theta,
            v_ind,
            v_col,
            delta,
            conflict: result.conflict,
            eta,
            direction_norm: result.direction.norm(),
        });
        if !next.is_finite() {
            status = TraceStatus::Truncated {
                at: t + 1,
                reason: "non-finite iterate".into(),
            };
            break;
        }
        theta = next;
    }
    Ok(AscentTrace {
        points,
        status,
        seed,
    })
}

/// Outcome of one verification check.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub passed: bool,
    pub skipped: bool,
    pub first_violation: Option<usize>,
    /// Smallest slack observed; negative means a violation of that size.
    pub worst_margin: f64,
    pub checked: usize,
}

impl Verdict {
    fn from_margins(margins: impl Iterator<Item = (usize, f64)>) -> Self {
        let mut worst = f64::INFINITY;
        let mut first = None;
        let mut checked = 0;
        for (t, m) in margins {
            checked += 1;
            if m < worst {
                worst = m;
            }
            if m < 0.0 && first.is_none() {
                first = Some(t);
            }
        }
        Verdict {
            passed: first.is_none(),
            skipped: false,
            first_violation: first,
            worst_margin: worst,
            checked,
        }
    }

    fn skipped() -> Self {
        Verdict {
            passed: true,
            skipped: true,
            first_violation: None,
            worst_margin: f64::INFINITY,
            checked: 0,
        }
    }
}

/// Both values must never drop by more than `tol` between consecutive points.
/// The violation index is the step `t` whose update caused the drop.
pub fn verify_monotone(trace: &AscentTrace, tol: f64) -> Verdict {
    Verdict::from_margins(trace.points.windows(2).enumerate().map(|(t, w)| {
        let d_ind = w[1].v_ind - w[0].v_ind;
        let d_col = w[1].v_col - w[0].v_col;
        (t, d_ind.min(d_col) + tol)
    }))
}

/// `max |delta_t|` over the final `tail_fraction` of the trace must be below
/// `epsilon`.
pub fn verify_gap_convergence(trace: &AscentTrace, epsilon: f64, tail_fraction: f64) -> Verdict {
    if trace.points.is_empty() {
        return Verdict::skipped();
    }
    let n = trace.points.len();
    let tail = ((n as f64) * tail_fraction.clamp(0.0, 1.0)).ceil().max(1.0) as usize;
    let start = n - tail.min(n);
    Verdict::from_margins(
        trace.points[start..]
            .iter()
            .enumerate()
            .map(|(i, p)| (start + i, epsilon - p.delta.abs())),
    )
}

/// On every conflict step, `delta_{t+1}^2/2 - delta_t^2/2` must not exceed
/// `-(eta_t / 2) |delta_t| |g_t|^2 + tol`, with `g_t` the applied direction.
/// A conflict step whose step size exceeds `|delta_t| / L` is reported as a
/// violation as well, since the bound is only claimed under that cap.
pub fn verify_lyapunov_decrease(
    trace: &AscentTrace,
    obj: &dyn SmoothBiObjective,
    tol: f64,
) -> Verdict {
    let smoothness = obj.smoothness();
    Verdict::from_margins(
        trace
            .points
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].conflict)
            .map(|(t, w)| {
                let p = &w[0];
                let cap = p.delta.abs() / smoothness;
                if p.eta > cap * (1.0 + 1e-12) {
                    return (t, -(p.eta - cap));
                }
                let lyap_change = 0.5 * (w[1].delta * w[1].delta - p.delta * p.delta);
                let bound =
                    -0.5 * p.eta * p.delta.abs() * p.direction_norm * p.direction_norm + tol;
                (t, bound - lyap_change)
            }),
    )
}

/// Which of the two objectives plays the role of `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Ind,
    Col,
}

/// Samples step sizes uniformly inside `(0, 2<g1, g2> / (L |g2|^2))`, where
/// `g1` is the gradient of the chosen objective at `theta`, and requires a
/// strict improvement for each. Skipped when `<g1, g2> <= 0`.
pub fn verify_stepsize_lemma(
    obj: &dyn SmoothBiObjective,
    which: Which,
    theta: &ParamVector,
    g2: &ParamVector,
    trials: usize,
    seed: u64,
) -> Result<Verdict, TestbedError> {
    let (eval, g1): (Box<dyn Fn(&ParamVector) -> f64>, ParamVector) = match which {
        Which::Ind => (Box::new(|t| obj.eval_ind(t)), obj.grad_ind(theta)),
        Which::Col => (Box::new(|t| obj.eval_col(t)), obj.grad_col(theta)),
    };
    if g1.dim() != g2.dim() {
        return Err(GradError::DimensionMismatch {
            left: g1.dim(),
            right: g2.dim(),
        }
        .into());
    }
    let inner = g1.dot(g2);
    let g2_sq = g2.norm_sq();
    if inner <= 0.0 || g2_sq == 0.0 {
        return Ok(Verdict::skipped());
    }
    let bound = 2.0 * inner / (obj.smoothness() * g2_sq);
    let base = eval(theta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margins: Vec<(usize, f64)> = (0..trials)
        .map(|i| {
            // open interval: reject an exact zero draw
            let mut u: f64 = rng.gen();
            while u == 0.0 {
                u = rng.gen();
            }
            let eta = u * bound;
            let improved = eval(&theta.add_scaled(eta, g2)) - base;
            (i, if improved > 0.0 { improved } else { improved.min(-f64::MIN_POSITIVE) })
        })
        .collect();
    Ok(Verdict::from_margins(margins.into_iter()))
}

/// Largest relative error between central finite differences of the values
/// and the analytic gradients, over `points` seeded points in `[-2, 2]^d`.
pub fn gradient_consistency(obj: &dyn SmoothBiObjective, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let theta = random_point(&mut rng, obj.dim(), 2.0);
        for which in [Which::Ind, Which::Col] {
            let (g, f): (ParamVector, &dyn Fn(&ParamVector) -> f64) = match which {
                Which::Ind => (obj.grad_ind(&theta), &|t| obj.eval_ind(t)),
                Which::Col => (obj.grad_col(&theta), &|t| obj.eval_col(t)),
            };
            let fd: Vec<f64> = (0..obj.dim())
                .map(|i| {
                    let mut plus = theta.clone();
                    let mut minus = theta.clone();
                    plus.as_mut_slice()[i] += h;
                    minus.as_mut_slice()[i] -= h;
                    (f(&plus) - f(&minus)) / (2.0 * h)
                })
                .collect();
            worst = worst.max(relative_error(&g, &fd));
        }
    }
    worst
}

/// Largest relative error of `hvp_col` against central differences of
/// `grad_col` along random directions.
pub fn hessian_consistency(obj: &dyn SmoothBiObjective, points: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let theta = random_point(&mut rng, obj.dim(), 2.0);
        let v = random_point(&mut rng, obj.dim(), 1.0);
        let plus = obj.grad_col(&theta.add_scaled(eps, &v));
        let minus = obj.grad_col(&theta.add_scaled(-eps, &v));
        let fd: Vec<f64> = plus
            .iter()
            .zip(minus.iter())
            .map(|(p, m)| (p - m) / (2.0 * eps))
            .collect();
        worst = worst.max(relative_error(&obj.hvp_col(&theta, &v), &fd));
    }
    worst
}

fn relative_error(exact: &[f64], approx: &[f64]) -> f64 {
    let num: f64 = exact
        .iter()
        .zip(approx)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den: f64 = exact.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
    num / den
}

pub(crate) fn random_point(rng: &mut impl Rng, dim: usize, half_width: f64) -> ParamVector {
    ParamVector::from_vec_unchecked(
        (0..dim)
            .map(|_| rng.gen_range(-half_width..half_width))
            .collect(),
    )
}

/// One randomly drawn instance of the verification grid.
#[derive(Debug, Clone)]
pub struct GridInstance {
    pub index: usize,
    pub seed: u64,
    pub pair: QuadraticPair,
    pub theta0: ParamVector,
}

impl GridInstance {
    pub fn describe(&self) -> String {
        format!(
            "quadratic d={} c={} a={:?} b={:?} theta0={:?}",
            self.pair.dim(),
            self.pair.curvature,
            self.pair.center_ind.as_slice(),
            self.pair.center_col.as_slice(),
            self.theta0.as_slice()
        )
    }
}

/// The verification grid: `instances` random quadratic pairs with centers in
/// `[-2, 2]^d`, half in `d = 2` and half in `d = 10`, each run from one
/// starting point per seed. Centers depend only on the instance index, the
/// starting point on `(instance, seed)`.
pub fn quadratic_grid(instances: usize, seeds: &[u64], curvature: f64) -> Vec<GridInstance> {
    let mut out = Vec::with_capacity(instances * seeds.len());
    for index in 0..instances {
        let dim = if index < instances.div_ceil(2) { 2 } else { 10 };
        let mut rng = ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(0x9a1d_0b1e, index as u64));
        let a = random_point(&mut rng, dim, 2.0);
        let b = random_point(&mut rng, dim, 2.0);
        let pair = QuadraticPair {
            center_ind: a,
            center_col: b,
            curvature,
        };
        for &seed in seeds {
            let mut srng = ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(seed, index as u64));
            out.push(GridInstance {
                index,
                seed,
                pair: pair.clone(),
                theta0: random_point(&mut srng, dim, 2.0),
            });
        }
    }
    out
}
