//! Two-task multi-objective optimization.
//!
//! [`min_norm_solver`] finds the point of minimum norm in the convex hull of
//! two task gradients. [`mgda_step`] uses it to update the shared parameters
//! along a common descent direction after the task-specific heads took their
//! own gradient steps. [`weighted_sum_step`] is the fixed-weight baseline
//! `W1·L1 + W2·L2`.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::norm_sq;

/// Squared distance below which the two gradients are treated as equal.
pub const DEGENERATE_EPS: f64 = 1e-18;

#[derive(Debug, Error, PartialEq)]
pub enum MooError {
    #[error("gradient dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("invalid step configuration: {0}")]
    InvalidConfig(String),
    #[error("objective failed: {0}")]
    Objective(String),
}

/// Convex weights `(α¹, α²)` on the 1-simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentWeights {
    pub alpha: [f64; 2],
}

impl DescentWeights {
    pub fn combine(&self, g1: &[f64], g2: &[f64]) -> Vec<f64> {
        g1.iter()
            .zip(g2)
            .map(|(a, b)| self.alpha[0] * a + self.alpha[1] * b)
            .collect()
    }
}

/// Minimize `‖γ g1 + (1-γ) g2‖²` over `γ ∈ [0, 1]`.
///
/// The closed form is `γ = ((g2 - g1)·g2) / ‖g1 - g2‖²` clipped to the unit
/// interval. Equal gradients give `(0.5, 0.5)`. Both dot products are
/// accumulated without rounding loss, so `γ` is good to about one ulp even
/// when the gradients nearly cancel.
pub fn min_norm_solver(g1: &[f64], g2: &[f64]) -> Result<DescentWeights, MooError> {
    Ok(solve(g1, g2)?.weights())
}

/// [`min_norm_solver`] together with the combined direction. Near a
/// Pareto-stationary point `d` is many orders of magnitude smaller than the
/// gradients, so it is formed as `g2 + γ (g1 - g2)` in double-double rather
/// than through [`DescentWeights::combine`].
pub fn min_norm_direction(g1: &[f64], g2: &[f64]) -> Result<(DescentWeights, Vec<f64>), MooError> {
    let gamma = solve(g1, g2)?;
    let d = match gamma {
        Gamma::Degenerate | Gamma::Clipped(_) => gamma.weights().combine(g1, g2),
        Gamma::Interior(g) => g1
            .iter()
            .zip(g2)
            .map(|(&a, &b)| {
                let diff = two_sum(a, -b);
                let (p, pe) = two_prod(g.0, diff.0);
                let (s, se) = two_sum(b, p);
                s + (se + pe + g.0 * diff.1 + g.1 * diff.0)
            })
            .collect(),
    };
    Ok((gamma.weights(), d))
}

/// `γ` as a double-double when it lies strictly inside the unit interval.
enum Gamma {
    Degenerate,
    Clipped(f64),
    Interior((f64, f64)),
}

impl Gamma {
    fn weights(&self) -> DescentWeights {
        let g = match self {
            Gamma::Degenerate => 0.5,
            Gamma::Clipped(g) | Gamma::Interior((g, _)) => *g,
        };
        DescentWeights { alpha: [g, 1.0 - g] }
    }
}

fn solve(g1: &[f64], g2: &[f64]) -> Result<Gamma, MooError> {
    if g1.len() != g2.len() {
        return Err(MooError::DimensionMismatch(g1.len(), g2.len()));
    }
    if !g1.iter().all(|v| v.is_finite()) {
        return Err(MooError::NonFinite { what: "g1" });
    }
    if !g2.iter().all(|v| v.is_finite()) {
        return Err(MooError::NonFinite { what: "g2" });
    }
    let mut diff_sq = (0.0, 0.0);
    let mut num = (0.0, 0.0);
    for (&a, &b) in g1.iter().zip(g2) {
        let d = two_sum(b, -a);
        diff_sq = dd_add(diff_sq, dd_mul(d, d));
        num = dd_add(num, dd_mul(d, (b, 0.0)));
    }
    let den = diff_sq.0 + diff_sq.1;
    if den < DEGENERATE_EPS {
        return Ok(Gamma::Degenerate);
    }
    let q = num.0 / diff_sq.0;
    // One Newton correction: r = (num - q·diff_sq) / diff_sq.
    let (p, pe) = two_prod(q, diff_sq.0);
    let r = ((num.0 - p) - pe + num.1 - q * diff_sq.1) / diff_sq.0;
    let gamma = two_sum(q, r);
    Ok(if gamma.0 <= 0.0 {
        Gamma::Clipped(0.0)
    } else if gamma.0 >= 1.0 {
        Gamma::Clipped(1.0)
    } else {
        Gamma::Interior(gamma)
    })
}

/// `a + b` as an exact unevaluated pair.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let v = s - a;
    (s, (a - (s - v)) + (b - v))
}

/// `a · b` as an exact unevaluated pair.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn dd_mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (p, e) = two_prod(a.0, b.0);
    two_sum(p, e + a.0 * b.1 + a.1 * b.0)
}

fn dd_add(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (s, e) = two_sum(a.0, b.0);
    two_sum(s, e + a.1 + b.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStepConfig {
    /// Learning rate η.
    pub eta: f64,
    pub optimizer: OptimizerKind,
    pub adamw: AdamWConfig,
    /// Baseline loss weights.
    pub w1: f64,
    pub w2: f64,
}

impl Default for TrainStepConfig {
    fn default() -> Self {
        Self {
            eta: 2e-5,
            optimizer: OptimizerKind::AdamW,
            adamw: AdamWConfig::default(),
            w1: 0.5,
            w2: 0.5,
        }
    }
}

impl TrainStepConfig {
    pub fn sgd(eta: f64) -> Self {
        Self {
            eta,
            optimizer: OptimizerKind::Sgd,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MooError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(MooError::InvalidConfig(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) {
            return Err(MooError::InvalidConfig("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// First-order optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: TrainStepConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(cfg: TrainStepConfig, n_params: usize) -> Result<Self, MooError> {
        cfg.validate()?;
        let (m, v) = match cfg.optimizer {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::AdamW => (vec![0.0; n_params], vec![0.0; n_params]),
        };
        Ok(Self { cfg, m, v, t: 0 })
    }

    pub fn config(&self) -> &TrainStepConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Advance the step counter used for AdamW bias correction. Call once per
    /// training step, before [`Optimizer::apply`].
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Move `params[range]` against `direction`.
    pub fn apply(&mut self, params: &mut [f64], range: Range<usize>, direction: &[f64]) {
        debug_assert_eq!(range.len(), direction.len());
        let eta = self.cfg.eta;
        match self.cfg.optimizer {
            OptimizerKind::Sgd => {
                for (p, d) in params[range].iter_mut().zip(direction) {
                    *p -= eta * d;
                }
            }
            OptimizerKind::AdamW => {
                let AdamWConfig {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } = self.cfg.adamw;
                let t = self.t.max(1) as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                let start = range.start;
                for (i, d) in direction.iter().enumerate() {
                    let k = start + i;
                    let m = &mut self.m[k];
                    let v = &mut self.v[k];
                    *m = beta1 * *m + (1.0 - beta1) * d;
                    *v = beta2 * *v + (1.0 - beta2) * d * d;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    let p = &mut params[k];
                    *p -= eta * weight_decay * *p;
                    *p -= eta * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

/// Where the shared and task-specific parameters live in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MtlLayout {
    pub shared: Range<usize>,
    pub head1: Range<usize>,
    pub head2: Range<usize>,
}

/// Losses and gradients of both tasks at one parameter point.
///
/// `g1`/`g2` are gradients of the task losses w.r.t. the shared parameters,
/// `h1`/`h2` w.r.t. each task's own head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGradients {
    pub loss1: f64,
    pub loss2: f64,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

impl TaskGradients {
    fn check_finite(&self) -> Result<(), MooError> {
        let parts: [(&'static str, &[f64]); 4] =
            [("g1", &self.g1), ("g2", &self.g2), ("h1", &self.h1), ("h2", &self.h2)];
        if !(self.loss1.is_finite() && self.loss2.is_finite()) {
            return Err(MooError::NonFinite { what: "task losses" });
        }
        for (what, v) in parts {
            if !v.iter().all(|x| x.is_finite()) {
                return Err(MooError::NonFinite { what });
            }
        }
        Ok(())
    }
}

/// A two-task objective over a flat parameter vector (a mini-batch of the
/// multi-task classifier, or an analytic toy problem).
pub trait MultiTaskObjective {
    fn layout(&self) -> MtlLayout;
    fn task_gradients(&mut self, params: &[f64]) -> Result<TaskGradients, MooError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub losses: [f64; 2],
    /// Min-norm weights for MGDA steps; the fixed loss weights for the
    /// baseline.
    pub alpha: [f64; 2],
    pub direction_norm: f64,
}

fn check_dims(layout: &MtlLayout, grads: &TaskGradients) -> Result<(), MooError> {
    let pairs = [
        (layout.shared.len(), grads.g1.len()),
        (layout.shared.len(), grads.g2.len()),
        (layout.head1.len(), grads.h1.len()),
        (layout.head2.len(), grads.h2.len()),
    ];
    for (want, got) in pairs {
        if want != got {
            return Err(MooError::DimensionMismatch(want, got));
        }
    }
    Ok(())
}

/// One multiple-gradient-descent step.
///
/// All gradients are taken at the pre-step parameters. The heads are updated
/// first with their own task gradient, then the shared parameters move along
/// `α¹ g1 + α² g2` with `α` from [`min_norm_solver`]. Under AdamW the combined
/// direction is what feeds the shared moment estimates.
pub fn mgda_step<O: MultiTaskObjective + ?Sized>(
    params: &mut [f64],
    objective: &mut O,
    optimizer: &mut Optimizer,
) -> Result<StepReport, MooError> {
    let layout = objective.layout();
    let grads = objective.task_gradients(params)?;
    check_dims(&layout, &grads)?;
    grads.check_finite()?;

    optimizer.begin_step();
    optimizer.apply(params, layout.head1.clone(), &grads.h1);
    optimizer.apply(params, layout.head2.clone(), &grads.h2);

    let (weights, direction) = min_norm_direction(&grads.g1, &grads.g2)?;
    optimizer.apply(params, layout.shared.clone(), &direction);

    Ok(StepReport {
        step: optimizer.steps(),
        losses: [grads.loss1, grads.loss2],
        alpha: weights.alpha,
        direction_norm: norm_sq(&direction).sqrt(),
    })
}

/// One gradient step on `W1·L1 + W2·L2` for every parameter group at once.
pub fn weighted_sum_step<O: MultiTaskObjective + ?Sized>(
    params: &mut [f64],
    objective: &mut O,
    optimizer: &mut Optimizer,
) -> Result<StepReport, MooError> {
    let layout = objective.layout();
    let grads = objective.task_gradients(params)?;
    check_dims(&layout, &grads)?;
    grads.check_finite()?;
    let (w1, w2) = (optimizer.config().w1, optimizer.config().w2);
    let weights = DescentWeights { alpha: [w1, w2] };

    let shared = weights.combine(&grads.g1, &grads.g2);
    let head1: Vec<f64> = grads.h1.iter().map(|g| w1 * g).collect();
    let head2: Vec<f64> = grads.h2.iter().map(|g| w2 * g).collect();

    optimizer.begin_step();
    optimizer.apply(params, layout.head1.clone(), &head1);
    optimizer.apply(params, layout.head2.clone(), &head2);
    optimizer.apply(params, layout.shared.clone(), &shared);

    Ok(StepReport {
        step: optimizer.steps(),
        losses: [grads.loss1, grads.loss2],
        alpha: [w1, w2],
        direction_norm: norm_sq(&shared).sqrt(),
    })
}

/// Norm of the min-norm convex combination; zero exactly at Pareto-stationary
/// points.
pub fn pareto_stationarity(g1: &[f64], g2: &[f64]) -> Result<f64, MooError> {
    Ok(norm_sq(&min_norm_direction(g1, g2)?.1).sqrt())
}

/// Squared norm of `γ g1 + (1-γ) g2`, used by grid oracles.
pub fn combined_norm_sq(gamma: f64, g1: &[f64], g2: &[f64]) -> f64 {
    g1.iter()
        .zip(g2)
        .map(|(a, b)| {
            let c = gamma * a + (1.0 - gamma) * b;
            c * c
        })
        .sum()
}

/// Two convex quadratic bowls over a shared vector:
/// `L_t(x) = ½ Σ_i a_t[i] (x[i] - c_t[i])²`.
///
/// Gradient Lipschitz constant of task `t` is `max_i a_t[i]`, so any
/// `η ≤ 1 / max(a)` keeps both losses from increasing under MGDA.
#[derive(Debug, Clone)]
pub struct QuadraticPair {
    pub curvature: [Vec<f64>; 2],
    pub center: [Vec<f64>; 2],
}

impl QuadraticPair {
    pub fn dim(&self) -> usize {
        self.center[0].len()
    }

    pub fn loss(&self, task: usize, x: &[f64]) -> f64 {
        let (a, c) = (&self.curvature[task], &self.center[task]);
        0.5 * x
            .iter()
            .zip(a.iter().zip(c))
            .map(|(xi, (ai, ci))| ai * (xi - ci) * (xi - ci))
            .sum::<f64>()
    }

    pub fn grad(&self, task: usize, x: &[f64]) -> Vec<f64> {
        let (a, c) = (&self.curvature[task], &self.center[task]);
        x.iter()
            .zip(a.iter().zip(c))
            .map(|(xi, (ai, ci))| ai * (xi - ci))
            .collect()
    }

    /// Largest step size for which the common-descent guarantee holds.
    pub fn step_bound(&self) -> f64 {
        let l = self.curvature.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
        1.0 / l
    }
}

impl MultiTaskObjective for QuadraticPair {
    fn layout(&self) -> MtlLayout {
        let n = self.dim();
        MtlLayout {
            shared: 0..n,
            head1: n..n,
            head2: n..n,
        }
    }

    fn task_gradients(&mut self, params: &[f64]) -> Result<TaskGradients, MooError> {
        Ok(TaskGradients {
            loss1: self.loss(0, params),
            loss2: self.loss(1, params),
            g1: self.grad(0, params),
            g2: self.grad(1, params),
            h1: Vec::new(),
            h2: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_best(g1: &[f64], g2: &[f64]) -> (f64, f64) {
        (0..=1000)
            .map(|i| {
                let gamma = i as f64 / 1000.0;
                (gamma, combined_norm_sq(gamma, g1, g2).sqrt())
            })
            .fold(
                (0.0, f64::INFINITY),
                |best, cur| if cur.1 < best.1 { cur } else { best },
            )
    }

    #[test]
    fn equal_gradients_split_evenly() {
        let g = [0.3, -1.2, 4.0];
        assert_eq!(min_norm_solver(&g, &g).unwrap().alpha, [0.5, 0.5]);
    }

    #[test]
    fn orthogonal_equal_norm_split_evenly() {
        let w = min_norm_solver(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(w.alpha, [0.5, 0.5]);
    }

    #[test]
    fn collinear_picks_shorter_vector() {
        let (g1, g2) = ([1.0, 0.0], [10.0, 0.0]);
        let (gamma, _) = grid_best(&g1, &g2);
        assert_eq!(gamma, 1.0);
        assert_eq!(min_norm_solver(&g1, &g2).unwrap().alpha, [1.0, 0.0]);
    }

    #[test]
    fn zero_gradient_wins() {
        let w = min_norm_solver(&[0.0, 0.0, 0.0], &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(w.alpha, [1.0, 0.0]);
    }

    #[test]
    fn errors() {
        assert_eq!(
            min_norm_solver(&[1.0], &[1.0, 2.0]),
            Err(MooError::DimensionMismatch(1, 2))
        );
        assert_eq!(
            min_norm_solver(&[f64::NAN], &[1.0]),
            Err(MooError::NonFinite { what: "g1" })
        );
    }

    proptest! {
        #[test]
        fn solver_on_simplex_and_optimal(
            pair in (2usize..24).prop_flat_map(|n| (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
            ))
        ) {
            let (g1, g2) = pair;
            let w = min_norm_solver(&g1, &g2).unwrap();
            prop_assert!(w.alpha[0] >= 0.0 && w.alpha[1] >= 0.0);
            prop_assert!((w.alpha[0] + w.alpha[1] - 1.0).abs() < 1e-15);
            let best = grid_best(&g1, &g2).1;
            prop_assert!(combined_norm_sq(w.alpha[0], &g1, &g2).sqrt() <= best + 1e-9);
        }
    }

    /// Dot product rounded once: exact products, Neumaier summation.
    fn exact_dot(a: &[f64], b: &[f64]) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for (&x, &y) in a.iter().zip(b) {
            let p = x * y;
            for t in [p, x.mul_add(y, -p)] {
                let s = sum + t;
                comp += if sum.abs() >= t.abs() {
                    (sum - s) + t
                } else {
                    (t - s) + sum
                };
                sum = s;
            }
        }
        sum + comp
    }

    proptest! {
        #[test]
        fn tiny_direction_still_descends_for_both(
            parts in (2usize..64).prop_flat_map(|n| (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(-1e-6f64..1e-6, n),
                0.2f64..5.0,
            ))
        ) {
            // The hull of u + w and w - r u passes through w, far from both ends.
            let (u, w, r) = parts;
            let g1: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + b).collect();
            let g2: Vec<f64> = u.iter().zip(&w).map(|(a, b)| b - r * a).collect();
            let (_, d) = min_norm_direction(&g1, &g2).unwrap();
            let dd = exact_dot(&d, &d);
            prop_assume!(dd > 0.0);
            // Rounding d itself moves g.d by up to about 2 eps |g| |d|; the
            // plain weighted sum is off by eps |g|^2 instead.
            for g in [&g1, &g2] {
                let gd = exact_dot(g, &d);
                let slack = 4.0 * f64::EPSILON * exact_dot(g, g).sqrt() * dd.sqrt();
                prop_assert!(gd >= dd - slack, "g.d {gd:e} < |d|^2 {dd:e} - {slack:e}");
            }
        }
    }

    #[test]
    fn mgda_step_identical_tasks() {
        // Duplicated objective: both tasks are the same bowl.
        let a = vec![1.0, 2.0, 0.5];
        let c = vec![1.0, -1.0, 2.0];
        let mut q = QuadraticPair {
            curvature: [a.clone(), a],
            center: [c.clone(), c],
        };
        let mut x = vec![0.0; 3];
        let mut opt = Optimizer::new(TrainStepConfig::sgd(0.1), 3).unwrap();
        let before = q.loss(0, &x);
        let report = mgda_step(&mut x, &mut q, &mut opt).unwrap();
        assert_eq!(report.alpha, [0.5, 0.5]);
        assert!(q.loss(0, &x) < before);
        assert!(q.loss(1, &x) < before);
    }

    #[test]
    fn mgda_step_zero_gradient_leaves_shared_unchanged() {
        let mut q = QuadraticPair {
            curvature: [vec![1.0, 1.0], vec![2.0, 3.0]],
            center: [vec![0.5, 0.5], vec![-1.0, 4.0]],
        };
        // Task 1 is already at its optimum.
        let mut x = vec![0.5, 0.5];
        let mut opt = Optimizer::new(TrainStepConfig::sgd(0.1), 2).unwrap();
        let report = mgda_step(&mut x, &mut q, &mut opt).unwrap();
        assert_eq!(report.alpha, [1.0, 0.0]);
        assert_eq!(x, vec![0.5, 0.5]);
        assert_eq!(report.direction_norm, 0.0);
    }

    /// Objective with head parameters so head/shared ordering is observable.
    struct Linear {
        g1: Vec<f64>,
        g2: Vec<f64>,
    }

    impl MultiTaskObjective for Linear {
        fn layout(&self) -> MtlLayout {
            MtlLayout {
                shared: 0..2,
                head1: 2..3,
                head2: 3..4,
            }
        }
        fn task_gradients(&mut self, p: &[f64]) -> Result<TaskGradients, MooError> {
            Ok(TaskGradients {
                loss1: p[2],
                loss2: p[3],
                g1: self.g1.clone(),
                g2: self.g2.clone(),
                h1: vec![1.0],
                h2: vec![-2.0],
            })
        }
    }

    #[test]
    fn heads_take_plain_task_gradient() {
        let mut obj = Linear {
            g1: vec![1.0, 0.0],
            g2: vec![0.0, 3.0],
        };
        let mut p = vec![0.0; 4];
        let mut opt = Optimizer::new(TrainStepConfig::sgd(0.5), 4).unwrap();
        let r = mgda_step(&mut p, &mut obj, &mut opt).unwrap();
        assert_eq!(p[2], -0.5);
        assert_eq!(p[3], 1.0);
        // γ = ((g2-g1)·g2)/‖g1-g2‖² = 9/10
        assert!((r.alpha[0] - 0.9).abs() < 1e-15);
        assert!((p[0] + 0.5 * 0.9).abs() < 1e-15);
        assert!((p[1] + 0.5 * 0.1 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_sum_equal_weights_matches_mgda_when_gradients_coincide() {
        let g = vec![0.7, -0.2];
        let mut a = Linear {
            g1: g.clone(),
            g2: g.clone(),
        };
        let mut b = Linear { g1: g.clone(), g2: g };
        let mut pa = vec![0.1, 0.2, 0.0, 0.0];
        let mut pb = pa.clone();
        let mut oa = Optimizer::new(TrainStepConfig::sgd(0.3), 4).unwrap();
        let mut ob = oa.clone();
        mgda_step(&mut pa, &mut a, &mut oa).unwrap();
        weighted_sum_step(&mut pb, &mut b, &mut ob).unwrap();
        assert_eq!(pa[..2], pb[..2]);
    }

    #[test]
    fn weighted_sum_degenerate_weights_is_single_task() {
        let mut obj = Linear {
            g1: vec![1.0, 2.0],
            g2: vec![5.0, -5.0],
        };
        let mut cfg = TrainStepConfig::sgd(0.1);
        cfg.w1 = 1.0;
        cfg.w2 = 0.0;
        let mut p = vec![0.0; 4];
        let mut opt = Optimizer::new(cfg, 4).unwrap();
        weighted_sum_step(&mut p, &mut obj, &mut opt).unwrap();

        let mut single = vec![0.0; 4];
        let mut sopt = Optimizer::new(TrainStepConfig::sgd(0.1), 4).unwrap();
        sopt.begin_step();
        sopt.apply(&mut single, 0..2, &[1.0, 2.0]);
        sopt.apply(&mut single, 2..3, &[1.0]);
        sopt.apply(&mut single, 3..4, &[0.0]);
        assert_eq!(p, single);
    }

    #[test]
    fn weighted_sum_descends_on_quadratic() {
        let mut q = QuadraticPair {
            curvature: [vec![1.0, 4.0], vec![2.0, 1.0]],
            center: [vec![1.0, 1.0], vec![-1.0, 2.0]],
        };
        let mut x = vec![3.0, -3.0];
        let weighted = |q: &QuadraticPair, x: &[f64]| 0.5 * q.loss(0, x) + 0.5 * q.loss(1, x);
        let mut opt = Optimizer::new(TrainStepConfig::sgd(0.5 * q.step_bound()), 2).unwrap();
        for _ in 0..20 {
            let before = weighted(&q, &x);
            weighted_sum_step(&mut x, &mut q, &mut opt).unwrap();
            assert!(weighted(&q, &x) <= before);
        }
    }

    #[test]
    fn nonfinite_gradients_abort() {
        let mut obj = Linear {
            g1: vec![f64::INFINITY, 0.0],
            g2: vec![0.0, 0.0],
        };
        let mut p = vec![0.0; 4];
        let mut opt = Optimizer::new(TrainStepConfig::sgd(0.1), 4).unwrap();
        assert!(matches!(
            mgda_step(&mut p, &mut obj, &mut opt),
            Err(MooError::NonFinite { .. })
        ));
        assert_eq!(p, vec![0.0; 4]);
    }

    #[test]
    fn adamw_first_step_moves_by_eta() {
        let mut cfg = TrainStepConfig::default();
        cfg.eta = 0.01;
        cfg.adamw.weight_decay = 0.0;
        let mut opt = Optimizer::new(cfg, 2).unwrap();
        let mut p = vec![1.0, 1.0];
        opt.begin_step();
        opt.apply(&mut p, 0..2, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn invalid_eta_rejected() {
        assert!(Optimizer::new(TrainStepConfig::sgd(0.0), 1).is_err());
    }
}
