//! Optimizers shared by classifier training and every attack: Adam with bias
//! correction, L-BFGS via the two-loop recursion with a backtracking Armijo
//! line search, and box projection.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Armijo sufficient-decrease constant.
pub const ARMIJO_C1: f64 = 1e-4;
/// Backtracking halvings before the line search gives up.
pub const ARMIJO_MAX_HALVINGS: usize = 30;
/// Pairs with sᵀy at or below this are discarded, keeping the Hessian estimate positive definite.
pub const LBFGS_CURVATURE_EPS: f64 = 1e-10;

/// Adam first/second moment state. `adam_step` is a pure function of
/// (state, params, grad), so identical inputs give bit-identical trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Tensor,
    v: Tensor,
    step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero-moment state for a parameter vector of length `dim` with standard
    /// defaults beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            m: Tensor::zeros(dim),
            v: Tensor::zeros(dim),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Zero-moment state matching an arbitrary parameter tensor's shape.
    pub fn for_params(params: &Tensor, lr: f64) -> Self {
        let zeros = params.scale(0.0);
        Self {
            m: zeros.clone(),
            v: zeros,
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One Adam update with bias correction. Returns the advanced state and the
/// new parameter tensor (same shape as `params`).
pub fn adam_step(state: AdamState, params: &Tensor, grad: &Tensor) -> Result<(AdamState, Tensor)> {
    if params.shape() != grad.shape() {
        return Err(Error::ShapeMismatch {
            expected: params.shape().to_vec(),
            actual: grad.shape().to_vec(),
        });
    }
    if state.m.shape() != params.shape() {
        return Err(Error::ShapeMismatch {
            expected: state.m.shape().to_vec(),
            actual: params.shape().to_vec(),
        });
    }
    let t = state.step_count + 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let bias1 = 1.0 - b1.powi(t as i32);
    let bias2 = 1.0 - b2.powi(t as i32);

    let n = params.len();
    let mut m = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let g = grad.data()[i];
        let mi = b1 * state.m.data()[i] + (1.0 - b1) * g;
        let vi = b2 * state.v.data()[i] + (1.0 - b2) * g * g;
        let m_hat = mi / bias1;
        let v_hat = vi / bias2;
        out.push(params.data()[i] - state.lr * m_hat / (v_hat.sqrt() + state.eps));
        m.push(mi);
        v.push(vi);
    }
    let shape = params.shape().to_vec();
    let next = AdamState {
        m: Tensor::new(shape.clone(), m)?,
        v: Tensor::new(shape.clone(), v)?,
        step_count: t,
        ..state
    };
    Ok((next, Tensor::new(shape, out)?))
}

/// Ring buffer of curvature pairs for the L-BFGS two-loop recursion.
#[derive(Debug, Clone)]
pub struct LbfgsState {
    // (s, y, rho = 1 / sᵀy), most recent at the back
    history: VecDeque<(Tensor, Tensor, f64)>,
    m_hist: usize,
}

impl LbfgsState {
    pub fn new(m_hist: usize) -> Self {
        Self {
            history: VecDeque::with_capacity(m_hist),
            m_hist,
        }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Store a curvature pair. Pairs with sᵀy ≤ LBFGS_CURVATURE_EPS are
    /// skipped (returns false) so every stored pair keeps the implicit
    /// inverse-Hessian positive definite.
    pub fn push_pair(&mut self, s: Tensor, y: Tensor) -> Result<bool> {
        let sy = s.dot(&y)?;
        if sy <= LBFGS_CURVATURE_EPS {
            return Ok(false);
        }
        if self.history.len() == self.m_hist {
            self.history.pop_front();
        }
        self.history.push_back((s, y, 1.0 / sy));
        Ok(true)
    }
}

/// Two-loop recursion: returns a descent direction `d` with dᵀgrad < 0 for any
/// nonzero gradient. With empty history this is steepest descent −grad; a zero
/// gradient maps to the zero direction (caller treats that as converged).
pub fn lbfgs_direction(state: &LbfgsState, grad: &Tensor) -> Result<Tensor> {
    if grad.l2_norm()? == 0.0 {
        return Ok(Tensor::zeros(grad.len()));
    }
    let mut q = grad.clone();
    let mut alphas = Vec::with_capacity(state.history.len());
    for (s, y, rho) in state.history.iter().rev() {
        let alpha = rho * s.dot(&q)?;
        q = q.sub(&y.scale(alpha))?;
        alphas.push(alpha);
    }
    // H0 = gamma * I from the most recent pair
    let gamma = match state.history.back() {
        Some((s, y, _)) => s.dot(y)? / y.dot(y)?,
        None => 1.0,
    };
    let mut r = q.scale(gamma);
    for ((s, y, rho), alpha) in state.history.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * y.dot(&r)?;
        r = r.add(&s.scale(alpha - beta))?;
    }
    Ok(r.scale(-1.0))
}

/// Backtracking Armijo search along `d` from `p`: starts at α = 1, halves until
/// f(p + αd) ≤ f(p) + c₁·α·dᵀg, and fails after ARMIJO_MAX_HALVINGS halvings.
/// Requires dᵀg < 0.
pub fn armijo_line_search<F>(mut f: F, p: &Tensor, d: &Tensor, g: &Tensor) -> Result<f64>
where
    F: FnMut(&Tensor) -> f64,
{
    let slope = d.dot(g)?;
    if slope >= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "line search needs a descent direction, got dᵀg = {slope}"
        )));
    }
    let f0 = f(p);
    let mut alpha = 1.0;
    for _ in 0..=ARMIJO_MAX_HALVINGS {
        let candidate = p.add(&d.scale(alpha))?;
        if f(&candidate) <= f0 + ARMIJO_C1 * alpha * slope {
            return Ok(alpha);
        }
        alpha *= 0.5;
    }
    Err(Error::LineSearchFailed {
        halvings: ARMIJO_MAX_HALVINGS,
    })
}

/// Elementwise projection onto the box [lo, hi]. Idempotent.
pub fn project_box(t: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
    t.clamp(lo, hi)
}

/// How a projected L-BFGS run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStop {
    /// Projected gradient norm fell below the tolerance.
    Converged,
    /// Armijo search found no admissible step.
    LineSearchFailed,
    /// Iteration budget ran out.
    IterationLimit,
}

/// Result of `lbfgs_minimize`.
#[derive(Debug, Clone)]
pub struct LbfgsRun {
    pub position: Tensor,
    pub iterations: usize,
    pub stop: LbfgsStop,
}

/// Options for `lbfgs_minimize`.
#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub m_hist: usize,
    pub max_iterations: usize,
    pub grad_tol: f64,
    /// When set, iterates are projected onto [lo, hi] after each line-search
    /// step and convergence is measured on the projected gradient.
    pub bounds: Option<(f64, f64)>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            m_hist: 10,
            max_iterations: 100,
            grad_tol: 1e-6,
            bounds: None,
        }
    }
}

/// Projected L-BFGS loop: direction from the two-loop recursion, Armijo step,
/// then projection onto the box when bounds are set. `visit` sees every
/// accepted iterate, in order.
pub fn lbfgs_minimize<F, G, C>(
    mut objective: F,
    mut gradient: G,
    start: &Tensor,
    opts: &LbfgsOptions,
    mut visit: C,
) -> Result<LbfgsRun>
where
    F: FnMut(&Tensor) -> f64,
    G: FnMut(&Tensor) -> Tensor,
    C: FnMut(&Tensor),
{
    let project = |t: &Tensor| -> Result<Tensor> {
        match opts.bounds {
            Some((lo, hi)) => project_box(t, lo, hi),
            None => Ok(t.clone()),
        }
    };
    let mut x = project(start)?;
    let mut g = gradient(&x);
    let mut state = LbfgsState::new(opts.m_hist);
    let mut iterations = 0;

    loop {
        // For box problems the stationarity measure is ‖P(x − g) − x‖.
        let pg = project(&x.sub(&g)?)?.sub(&x)?;
        if pg.l2_norm()? < opts.grad_tol {
            return Ok(LbfgsRun {
                position: x,
                iterations,
                stop: LbfgsStop::Converged,
            });
        }
        if iterations >= opts.max_iterations {
            return Ok(LbfgsRun {
                position: x,
                iterations,
                stop: LbfgsStop::IterationLimit,
            });
        }
        let d = lbfgs_direction(&state, &g)?;
        let alpha = match armijo_line_search(&mut objective, &x, &d, &g) {
            Ok(alpha) => alpha,
            Err(Error::LineSearchFailed { .. }) => {
                return Ok(LbfgsRun {
                    position: x,
                    iterations,
                    stop: LbfgsStop::LineSearchFailed,
                });
            }
            Err(e) => return Err(e),
        };
        let x_next = project(&x.add(&d.scale(alpha))?)?;
        let g_next = gradient(&x_next);
        state.push_pair(x_next.sub(&x)?, g_next.sub(&g)?)?;
        x = x_next;
        g = g_next;
        iterations += 1;
        visit(&x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::cosine_similarity;
    use proptest::prelude::*;

    #[test]
    fn adam_first_step_is_signwise() {
        let grad = Tensor::from_vec(vec![3.0, -0.5, 1e-2]);
        let params = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let state = AdamState::new(3, 0.1);
        let (next, updated) = adam_step(state, &params, &grad).unwrap();
        assert_eq!(next.step_count(), 1);
        for i in 0..3 {
            let step = updated.data()[i] - params.data()[i];
            let expected = -0.1 * grad.data()[i].signum();
            assert!(
                (step - expected).abs() <= 1e-6 * expected.abs(),
                "step {step} vs {expected}"
            );
        }
    }

    #[test]
    fn adam_zero_grad_from_zero_state_is_identity() {
        let params = Tensor::from_vec(vec![1.0, -2.0]);
        let (_, updated) =
            adam_step(AdamState::new(2, 0.5), &params, &Tensor::zeros(2)).unwrap();
        assert_eq!(updated, params);
    }

    #[test]
    fn adam_shape_mismatch_is_error() {
        let params = Tensor::from_vec(vec![1.0, 2.0]);
        let grad = Tensor::from_vec(vec![1.0]);
        assert!(adam_step(AdamState::new(2, 0.1), &params, &grad).is_err());
    }

    // Oracle: the Adam recurrence written out in scalar form, kept independent
    // of the Tensor-based implementation.
    fn reference_adam_1d(grad_of: impl Fn(f64) -> f64, p0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, p0);
        for t in 1..=steps {
            let g = grad_of(p);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p
    }

    #[test]
    fn adam_minimizes_shifted_quadratic() {
        // f(p) = ½(p − 3)², ∇f = p − 3
        let grad_of = |p: f64| p - 3.0;
        let mut state = AdamState::new(1, 0.1);
        let mut params = Tensor::from_vec(vec![0.0]);
        for _ in 0..500 {
            let g = Tensor::from_vec(vec![grad_of(params.data()[0])]);
            let (s, p) = adam_step(state, &params, &g).unwrap();
            state = s;
            params = p;
        }
        let p = params.data()[0];
        assert!((p - 3.0).abs() < 0.01, "p = {p}");

        let reference = reference_adam_1d(grad_of, 0.0, 0.1, 500);
        assert!((p - reference).abs() < 1e-12, "p = {p}, ref = {reference}");
    }

    #[test]
    fn adam_trajectories_are_bit_identical() {
        let run = || {
            let mut state = AdamState::new(2, 0.05);
            let mut params = Tensor::from_vec(vec![0.3, -0.7]);
            let mut trace = Vec::new();
            for k in 0..50 {
                let g = Tensor::from_vec(vec![(k as f64).sin(), (k as f64).cos()]);
                let (s, p) = adam_step(state, &params, &g).unwrap();
                state = s;
                params = p;
                trace.extend_from_slice(params.data());
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn lbfgs_empty_history_is_steepest_descent() {
        let state = LbfgsState::new(10);
        let d = lbfgs_direction(&state, &Tensor::from_vec(vec![2.0, -4.0])).unwrap();
        assert_eq!(d.data(), &[-2.0, 4.0]);
    }

    #[test]
    fn lbfgs_zero_grad_gives_zero_direction() {
        let state = LbfgsState::new(10);
        let d = lbfgs_direction(&state, &Tensor::zeros(3)).unwrap();
        assert_eq!(d.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn lbfgs_rejects_flat_curvature_pairs() {
        let mut state = LbfgsState::new(10);
        let stored = state
            .push_pair(
                Tensor::from_vec(vec![1.0, 0.0]),
                Tensor::from_vec(vec![0.0, 1.0]),
            )
            .unwrap();
        assert!(!stored);
        assert_eq!(state.history_len(), 0);
    }

    // f(p) = ½ pᵀ diag(1, 10) p
    fn quad_f(p: &Tensor) -> f64 {
        0.5 * (p.data()[0].powi(2) + 10.0 * p.data()[1].powi(2))
    }

    fn quad_grad(p: &Tensor) -> Tensor {
        Tensor::from_vec(vec![p.data()[0], 10.0 * p.data()[1]])
    }

    #[test]
    fn lbfgs_minimizes_ill_conditioned_quadratic() {
        let start = Tensor::from_vec(vec![2.0, 1.0]);
        let opts = LbfgsOptions {
            max_iterations: 20,
            grad_tol: 1e-9,
            ..Default::default()
        };
        let run = lbfgs_minimize(quad_f, quad_grad, &start, &opts, |_| {}).unwrap();
        // Exact minimizer is the origin.
        assert!(run.position.l2_norm().unwrap() < 1e-6);
        assert_eq!(run.stop, LbfgsStop::Converged);
    }

    #[test]
    fn lbfgs_one_pair_beats_steepest_descent_in_angle() {
        let p0 = Tensor::from_vec(vec![2.0, 1.0]);
        let g0 = quad_grad(&p0);
        let p1 = p0.sub(&g0.scale(0.05)).unwrap();
        let g1 = quad_grad(&p1);

        let mut state = LbfgsState::new(10);
        assert!(state
            .push_pair(p1.sub(&p0).unwrap(), g1.sub(&g0).unwrap())
            .unwrap());
        let d = lbfgs_direction(&state, &g1).unwrap();

        // Analytic Newton direction −H⁻¹g with H = diag(1, 10).
        let newton = Tensor::from_vec(vec![-g1.data()[0], -g1.data()[1] / 10.0]);
        let cos_lbfgs = cosine_similarity(&d, &newton).unwrap();
        let cos_sd = cosine_similarity(&g1.scale(-1.0), &newton).unwrap();
        assert!(
            cos_lbfgs > cos_sd,
            "lbfgs {cos_lbfgs} should beat steepest descent {cos_sd}"
        );
    }

    #[test]
    fn armijo_accepts_full_step_on_quadratic() {
        // f(p) = ½p², exact decrease at α = 1 from p = 1 along d = −1
        let f = |p: &Tensor| 0.5 * p.data()[0].powi(2);
        let p = Tensor::from_vec(vec![1.0]);
        let d = Tensor::from_vec(vec![-1.0]);
        let g = Tensor::from_vec(vec![1.0]);
        assert_eq!(armijo_line_search(f, &p, &d, &g).unwrap(), 1.0);
    }

    #[test]
    fn armijo_backtracks_past_a_cliff() {
        // Along u(α) = −α: a cliff for u < −0.26, linear descent otherwise.
        let f = |p: &Tensor| {
            let u = p.data()[0];
            if u < -0.26 {
                100.0
            } else {
                u
            }
        };
        let p = Tensor::from_vec(vec![0.0]);
        let d = Tensor::from_vec(vec![-1.0]);
        let g = Tensor::from_vec(vec![1.0]);
        let alpha = armijo_line_search(f, &p, &d, &g).unwrap();
        assert!(alpha == 0.5 || alpha == 0.25, "alpha = {alpha}");
        // Armijo condition checked by hand: f(p + αd) ≤ f(p) + c₁·α·dᵀg
        assert!(f(&p.add(&d.scale(alpha)).unwrap()) <= -(ARMIJO_C1 * alpha));
    }

    #[test]
    fn armijo_rejects_ascent_directions() {
        let f = |p: &Tensor| p.data()[0];
        let p = Tensor::from_vec(vec![0.0]);
        let d = Tensor::from_vec(vec![1.0]);
        let g = Tensor::from_vec(vec![1.0]);
        assert!(matches!(
            armijo_line_search(f, &p, &d, &g),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn armijo_fails_on_flat_objective() {
        let f = |_: &Tensor| 1.0;
        let p = Tensor::from_vec(vec![0.0]);
        let d = Tensor::from_vec(vec![-1.0]);
        let g = Tensor::from_vec(vec![1.0]);
        assert!(matches!(
            armijo_line_search(f, &p, &d, &g),
            Err(Error::LineSearchFailed { .. })
        ));
    }

    #[test]
    fn project_box_examples() {
        let t = Tensor::from_vec(vec![-0.1, 0.5, 1.2]);
        assert_eq!(project_box(&t, 0.0, 1.0).unwrap().data(), &[0.0, 0.5, 1.0]);
        let inside = Tensor::from_vec(vec![0.2, 0.8]);
        assert_eq!(project_box(&inside, 0.0, 1.0).unwrap(), inside);
    }

    proptest! {
        #[test]
        fn adam_update_is_translation_equivariant(
            p in proptest::collection::vec(-10.0..10.0f64, 1..8),
            g in proptest::collection::vec(-10.0..10.0f64, 1..8),
            c in -5.0..5.0f64,
        ) {
            let n = p.len().min(g.len());
            let params = Tensor::from_vec(p[..n].to_vec());
            let shifted = Tensor::from_vec(p[..n].iter().map(|v| v + c).collect());
            let grad = Tensor::from_vec(g[..n].to_vec());

            let (_, a) = adam_step(AdamState::new(n, 0.1), &params, &grad).unwrap();
            let (_, b) = adam_step(AdamState::new(n, 0.1), &shifted, &grad).unwrap();
            for i in 0..n {
                let da = a.data()[i] - params.data()[i];
                let db = b.data()[i] - shifted.data()[i];
                prop_assert!((da - db).abs() <= 1e-12);
            }
        }

        #[test]
        fn lbfgs_direction_is_always_descent(
            pairs in proptest::collection::vec(
                (proptest::collection::vec(-3.0..3.0f64, 4), proptest::collection::vec(-3.0..3.0f64, 4)),
                0..6,
            ),
            g in proptest::collection::vec(-3.0..3.0f64, 4),
        ) {
            let grad = Tensor::from_vec(g);
            prop_assume!(grad.l2_norm().unwrap() > 1e-6);
            let mut state = LbfgsState::new(5);
            for (s, y) in pairs {
                // push_pair itself filters out curvature-invalid pairs
                let _ = state.push_pair(Tensor::from_vec(s), Tensor::from_vec(y)).unwrap();
            }
            let d = lbfgs_direction(&state, &grad).unwrap();
            prop_assert!(d.dot(&grad).unwrap() < 0.0);
        }

        #[test]
        fn project_box_is_idempotent(
            data in proptest::collection::vec(-10.0..10.0f64, 1..16),
            lo in -2.0..0.0f64,
            hi in 0.0..2.0f64,
        ) {
            let t = Tensor::from_vec(data);
            let once = project_box(&t, lo, hi).unwrap();
            let twice = project_box(&once, lo, hi).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
