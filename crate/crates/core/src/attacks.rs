//! Targeted L2 attacks, one example at a time: the gradient-guided search,
//! a change-of-variables CW attack, an L2 iterative FGSM, and a projected
//! L-BFGS attack, plus the bracketed search over the loss constant c shared
//! by the optimization-based attacks.
//!
//! All attacks minimize variants of ‖x′ − x‖₂² + c·f(x′, t) where f is the
//! hinge loss over the logits, claim success only when the model actually
//! classifies the adversary as the target, and clamp adversaries into the
//! pixel box.

use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::optim::{
    adam_step, lbfgs_minimize, AdamState, LbfgsOptions, LbfgsStop,
};
use crate::tensor::{l2_distance, Tensor};

/// Attack hyperparameters.
///
/// `max_iterations` is the Adam budget of one inner optimization under a
/// fixed constant c; `out_step` bounds the outer gradient-recomputation loop
/// of the gradient-guided attack; `c_steps` is the number of constants tried
/// by `run_c_search`. `epsilon` is the I-FGSM perturbation budget.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    /// Required confidence margin κ of the target class over the runner-up.
    pub kappa: f64,
    /// Constant c weighting the hinge term; first value tried by the c-search.
    pub c_init: f64,
    /// Number of c values tried by `run_c_search` (the "k" in CWk / Our-k).
    pub c_steps: usize,
    /// Initial per-pixel magnitude θ₀ of the gradient-guided attack.
    pub theta0: f64,
    /// Adam learning rate for the θ updates and the CW w updates.
    pub lr: f64,
    /// Adam steps per inner optimization.
    pub max_iterations: usize,
    /// Outer-iteration bound of the gradient-guided attack.
    pub out_step: usize,
    /// Abort the inner loop when the best loss stalls for this many steps.
    pub abort_early_window: usize,
    /// Relative improvement that counts as progress for abort-early.
    pub abort_early_min_improve: f64,
    pub box_lo: f64,
    pub box_hi: f64,
    /// I-FGSM total L2 budget (and sweep starting point).
    pub epsilon: f64,
    /// Record committed iterates for trajectory export.
    pub record_trajectory: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kappa: 0.0,
            c_init: 10.0,
            c_steps: 1,
            theta0: 0.01,
            lr: 0.01,
            max_iterations: 100,
            out_step: 20,
            abort_early_window: 10,
            abort_early_min_improve: 1e-4,
            box_lo: 0.0,
            box_hi: 1.0,
            epsilon: 0.5,
            record_trajectory: false,
        }
    }
}

impl AttackConfig {
    /// Defaults with the box taken from a dataset's feature bounds and the
    /// step sizes θ₀, lr and ε rescaled by the box span. The stock values are
    /// calibrated for unit pixel boxes; a wider feature range needs
    /// proportionally larger steps to converge in the same iteration budget.
    pub fn for_bounds(lo: f64, hi: f64) -> Self {
        let span = hi - lo;
        Self {
            box_lo: lo,
            box_hi: hi,
            theta0: 0.01 * span,
            lr: 0.01 * span,
            epsilon: 0.5 * span,
            ..Self::default()
        }
    }

    /// Keep the abort-early window at a tenth of the inner budget.
    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self.abort_early_window = (max_iterations / 10).max(1);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.box_lo >= self.box_hi {
            return Err(Error::InvalidArgument(format!(
                "box bounds inverted: [{}, {}]",
                self.box_lo, self.box_hi
            )));
        }
        if self.kappa < 0.0 {
            return Err(Error::InvalidArgument("kappa must be >= 0".into()));
        }
        if self.c_init <= 0.0 || self.theta0 <= 0.0 || self.lr <= 0.0 || self.epsilon <= 0.0 {
            return Err(Error::InvalidArgument(
                "c_init, theta0, lr and epsilon must be positive".into(),
            ));
        }
        if self.c_steps == 0
            || self.max_iterations == 0
            || self.out_step == 0
            || self.abort_early_window == 0
        {
            return Err(Error::InvalidArgument(
                "c_steps, max_iterations, out_step and abort_early_window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Why an unsuccessful attack stopped early.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackFailure {
    /// The hinge gradient vanished while the example was still unclassified
    /// as the target: there is no direction to follow.
    DegenerateGradient,
    /// The L-BFGS line search found no admissible step.
    LineSearchFailed,
}

/// Outcome of one attack on one example. `success`, `l2_distance` and box
/// containment are recomputed from `adversarial` at the end of every attack
/// rather than trusted from the search loop.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: Tensor,
    pub success: bool,
    pub l2_distance: f64,
    /// Adam steps (gradient steps for I-FGSM, outer iterations for L-BFGS),
    /// summed over all c runs when a search is involved.
    pub iterations: usize,
    /// Committed iterates x′₀, x′₁, …; present when requested. The first
    /// point is the legitimate example.
    pub trajectory: Option<Vec<Tensor>>,
    /// Gradient-guided only, recorded with the trajectory: for each outer
    /// iteration, the candidate evaluated right after the θ-reset (uniform
    /// θ₀), whose displacement from the iterate is exactly −θ₀·g/‖g‖₂.
    pub first_inner_candidates: Option<Vec<Tensor>>,
    pub c_used: f64,
    pub failure: Option<AttackFailure>,
}

/// Attacks that optimize the c-weighted objective and can sit under the
/// bracketed c-search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchAttack {
    GradGuided,
    Cw,
    Lbfgs,
}

// Tracks the lowest-distance candidate classified as the target. Candidates
// are stored already clamped so the returned adversary is always in-box.
struct BestSuccess<'a> {
    original: &'a Tensor,
    best: Option<(Tensor, f64)>,
}

impl<'a> BestSuccess<'a> {
    fn new(original: &'a Tensor) -> Self {
        Self {
            original,
            best: None,
        }
    }

    fn consider(&mut self, candidate: &Tensor, predicted: usize, target: usize) -> Result<()> {
        if predicted != target {
            return Ok(());
        }
        let dist = l2_distance(candidate, self.original)?;
        if self.best.as_ref().is_none_or(|(_, d)| dist < *d) {
            self.best = Some((candidate.clone(), dist));
        }
        Ok(())
    }

    fn take(self) -> Option<Tensor> {
        self.best.map(|(t, _)| t)
    }
}

// Abort-early monitor: every `window` observed steps, stop unless the best
// loss improved by at least `min_improve` relative to the previous check.
struct AbortEarly {
    window: usize,
    min_improve: f64,
    steps: usize,
    best_at_last_check: f64,
}

impl AbortEarly {
    fn new(window: usize, min_improve: f64, initial_best: f64) -> Self {
        Self {
            window,
            min_improve,
            steps: 0,
            best_at_last_check: initial_best,
        }
    }

    fn observe(&mut self, best_loss: f64) -> bool {
        self.steps += 1;
        if !self.steps.is_multiple_of(self.window) {
            return false;
        }
        let floor = self.best_at_last_check.abs().max(1e-12);
        let improved = self.best_at_last_check - best_loss > self.min_improve * floor;
        self.best_at_last_check = best_loss;
        !improved
    }
}

fn check_example(model: &MlpModel, x: &Tensor, t: usize, cfg: &AttackConfig) -> Result<()> {
    cfg.validate()?;
    // Validates the input dimension and the target class range.
    model.hinge_loss(x, t, cfg.kappa)?;
    if x.data().iter().any(|v| *v < cfg.box_lo || *v > cfg.box_hi) {
        return Err(Error::InvalidArgument(format!(
            "example lies outside the box [{}, {}]",
            cfg.box_lo, cfg.box_hi
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    model: &MlpModel,
    x: &Tensor,
    t: usize,
    adversarial: Tensor,
    iterations: usize,
    trajectory: Option<Vec<Tensor>>,
    first_inner_candidates: Option<Vec<Tensor>>,
    c_used: f64,
    failure: Option<AttackFailure>,
) -> Result<AttackResult> {
    let success = model.classify(&adversarial)? == t;
    let l2 = l2_distance(&adversarial, x)?;
    Ok(AttackResult {
        adversarial,
        success,
        l2_distance: l2,
        iterations,
        trajectory,
        first_inner_candidates,
        c_used,
        failure: if success { None } else { failure },
    })
}

/// Gradient-guided search: at each committed iterate the hinge gradient g is
/// recomputed and frozen, the perturbation is constrained to −θ⊙g/‖g‖₂, and
/// an inner Adam loop tunes the per-pixel magnitudes θ (reset to θ₀ each
/// outer iteration) against ‖x′ − x‖₂² + c·f(x′, t). The θ with the lowest
/// inner loss is committed; the lowest-distance successful candidate seen
/// anywhere is returned even if a later commit regresses.
pub fn grad_guided_attack(
    model: &MlpModel,
    x: &Tensor,
    t: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    check_example(model, x, t, cfg)?;
    grad_guided_single_c(model, x, t, cfg, cfg.c_init)
}

fn grad_guided_single_c(
    model: &MlpModel,
    x: &Tensor,
    t: usize,
    cfg: &AttackConfig,
    c: f64,
) -> Result<AttackResult> {
    let dim = x.len();
    let mut committed = x.clone();
    let mut trajectory = cfg.record_trajectory.then(|| vec![x.clone()]);
    let mut first_inner = cfg.record_trajectory.then(Vec::new);
    let mut best = BestSuccess::new(x);
    let mut iterations = 0usize;
    let mut failure = None;

    for _ in 0..cfg.out_step {
        let at_committed = model.hinge_eval(&committed, t, cfg.kappa)?;
        if at_committed.predicted == t {
            break;
        }
        let grad_norm = at_committed.grad.l2_norm()?;
        if grad_norm == 0.0 {
            failure = Some(AttackFailure::DegenerateGradient);
            break;
        }
        let unit = at_committed.grad.scale(1.0 / grad_norm);

        // Fresh magnitudes and optimizer state for this outer iteration.
        let mut theta = Tensor::filled(dim, cfg.theta0);
        let mut adam = AdamState::new(dim, cfg.lr);

        let evaluate = |theta: &Tensor,
                        best: &mut BestSuccess|
         -> Result<(f64, Tensor)> {
            let candidate = committed.sub(&theta.mul(&unit)?)?;
            let eval = model.hinge_eval(&candidate, t, cfg.kappa)?;
            let dist = l2_distance(&candidate, x)?;
            let loss = dist * dist + c * eval.value;
            let in_box = candidate
                .data()
                .iter()
                .all(|v| *v >= cfg.box_lo && *v <= cfg.box_hi);
            if in_box {
                best.consider(&candidate, eval.predicted, t)?;
            } else {
                let clamped = candidate.clamp(cfg.box_lo, cfg.box_hi)?;
                let clamped_eval = model.hinge_eval(&clamped, t, cfg.kappa)?;
                best.consider(&clamped, clamped_eval.predicted, t)?;
            }
            // dL/dθ = −u ⊙ (2(x′ − x) + c·∇f(x′))
            let d_loss_d_candidate = candidate.sub(x)?.scale(2.0).add(&eval.grad.scale(c))?;
            let d_theta = unit.mul(&d_loss_d_candidate)?.scale(-1.0);
            Ok((loss, d_theta))
        };

        let (initial_loss, mut d_theta) = evaluate(&theta, &mut best)?;
        if let Some(probes) = first_inner.as_mut() {
            probes.push(committed.sub(&theta.mul(&unit)?)?);
        }
        let mut best_loss = initial_loss;
        let mut best_theta = theta.clone();
        let mut abort = AbortEarly::new(
            cfg.abort_early_window,
            cfg.abort_early_min_improve,
            initial_loss,
        );
        for _ in 0..cfg.max_iterations {
            let (next_adam, next_theta) = adam_step(adam, &theta, &d_theta)?;
            adam = next_adam;
            theta = next_theta;
            iterations += 1;
            let (loss, grad) = evaluate(&theta, &mut best)?;
            d_theta = grad;
            if loss < best_loss {
                best_loss = loss;
                best_theta = theta.clone();
            }
            if abort.observe(best_loss) {
                break;
            }
        }

        committed = committed
            .sub(&best_theta.mul(&unit)?)?
            .clamp(cfg.box_lo, cfg.box_hi)?;
        if let Some(traj) = trajectory.as_mut() {
            traj.push(committed.clone());
        }
    }

    let adversarial = best.take().unwrap_or(committed);
    finish(
        model,
        x,
        t,
        adversarial,
        iterations,
        trajectory,
        first_inner,
        c,
        failure,
    )
}

/// CW-style L2 attack under a single constant c: Adam on the tanh
/// change-of-variables x′ = lo + (hi − lo)(tanh w + 1)/2, which keeps every
/// candidate strictly inside the box. Returns the lowest-distance successful
/// candidate, or the lowest-loss iterate as a best effort.
pub fn cw_l2_attack(
    model: &MlpModel,
    x: &Tensor,
    t: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    check_example(model, x, t, cfg)?;
    cw_single_c(model, x, t, cfg, cfg.c_init)
}

fn cw_single_c(
    model: &MlpModel,
    x: &Tensor,
    t: usize,
    cfg: &AttackConfig,
    c: f64,
) -> Result<AttackResult> {
    let half = (cfg.box_hi - cfg.box_lo) / 2.0;
    let mid = cfg.box_lo + half;
    let to_image = |w: &Tensor| -> Tensor {
        Tensor::from_vec(w.data().iter().map(|v| mid + half * v.tanh()).collect())
    };
    // atanh saturates at the box faces; clip so boundary pixels stay finite.
    let mut w = Tensor::from_vec(
        x.data()
            .iter()
            .map(|v| {
                let unit = ((v - mid) / half).clamp(-(1.0 - 1e-6), 1.0 - 1e-6);
                unit.atanh()
            })
            .collect(),
    );

    let mut best = BestSuccess::new(x);
    let mut trajectory = cfg.record_trajectory.then(|| vec![x.clone()]);
    let mut iterations = 0usize;

    let evaluate = |w: &Tensor, best: &mut BestSuccess| -> Result<(f64, Tensor, Tensor)> {
        let candidate = to_image(w);
        let eval = model.hinge_eval(&candidate, t, cfg.kappa)?;
        let dist = l2_distance(&candidate, x)?;
        let loss = dist * dist + c * eval.value;
        best.consider(&candidate, eval.predicted, t)?;
        // dL/dw = (2(x′ − x) + c·∇f(x′)) ⊙ dx′/dw, with dx′/dw = half·(1 − tanh²)
        let d_loss_d_candidate = candidate.sub(x)?.scale(2.0).add(&eval.grad.scale(c))?;
        let d_w = Tensor::from_vec(
            d_loss_d_candidate
                .data()
                .iter()
                .zip(w.data())
                .map(|(d, wv)| {
                    let th = wv.tanh();
                    d * half * (1.0 - th * th)
                })
                .collect(),
        );
        Ok((loss, d_w, candidate))
    };

    let (initial_loss, mut d_w, initial_candidate) = evaluate(&w, &mut best)?;
    let mut best_loss = initial_loss;
    let mut best_loss_candidate = initial_candidate;
    // cfg.lr is calibrated in image space; dx/dw ≈ half near the box center,
    // so the w-space rate is divided out to keep step sizes comparable with
    // the other attacks.
    let mut adam = AdamState::new(x.len(), cfg.lr / half);
    let mut abort = AbortEarly::new(
        cfg.abort_early_window,
        cfg.abort_early_min_improve,
        initial_loss,
    );
    for _ in 0..cfg.max_iterations {
        let (next_adam, next_w) = adam_step(adam, &w, &d_w)?;
        adam = next_adam;
        w = next_w;
        iterations += 1;
        let (loss, grad, candidate) = evaluate(&w, &mut best)?;
        d_w = grad;
        if let Some(traj) = trajectory.as_mut() {
            traj.push(candidate.clone());
        }
        if loss < best_loss {
            best_loss = loss;
            best_loss_candidate = candidate;
        }
        if abort.observe(best_loss) {
            break;
        }
    }

    let adversarial = best.take().unwrap_or(best_loss_candidate);
    finish(model, x, t, adversarial, iterations, trajectory, None, c, None)
}

/// Bracketed search over the constant c: the first run uses `cfg.c_init`;
/// after a success the bracket bisects toward smaller c, after a failure c
/// grows tenfold until an upper bracket exists. Returns the lowest-distance
/// success across all runs with iterations summed over every run.
pub fn run_c_search(
    model: &MlpModel,
    x: &Tensor,
    t: usize,
    cfg: &AttackConfig,
    attack: SearchAttack,
) -> Result<AttackResult> {
    check_example(model, x, t, cfg)?;
    let mut c_lo = 0.0f64;
    let mut c_hi: Option<f64> = None;
    let mut c = cfg.c_init;
    let mut best: Option<AttackResult> = None;
    let mut last: Option<AttackResult> = None;
    let mut total_iterations = 0usize;

    for _ in 0..cfg.c_steps {
        let result = match attack {
            SearchAttack::GradGuided => grad_guided_single_c(model, x, t, cfg, c)?,
            SearchAttack::Cw => cw_single_c(model, x, t, cfg, c)?,
            SearchAttack::Lbfgs => lbfgs_single_c(model, x, t, cfg, c)?,
        };
        total_iterations += result.iterations;
        if result.success {
            c_hi = Some(c);
            let better = best
                .as_ref()
                .is_none_or(|b| result.l2_distance < b.l2_distance);
            if better {
                best = Some(result.clone());
            }
            c = (c_lo + c) / 2.0;
        } else {
            c_lo = c;
            c = match c_hi {
                None => c * 10.0,
                Some(hi) => (c + hi) / 2.0,
            };
        }
        last = Some(result);
    }

    let mut out = best.or(last).expect("c_steps >= 1");
    out.iterations = total_iterations;
    Ok(out)
}

/// L2 iterative FGSM with the hinge loss: fixed-size normalized-gradient
/// steps of ε/10, clamped to the box, stopping once the hinge floors at −κ
/// (margin reached), the gradient vanishes, or the L2 budget ε is spent.
/// The final step may overshoot the budget by at most one step length.
pub fn ifgsm_l2_attack(
    model: &MlpModel,
    x: &Tensor,
    t: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    check_example(model, x, t, cfg)?;
    let alpha = cfg.epsilon / 10.0;
    let max_steps = 10 * cfg.max_iterations;
    let mut current = x.clone();
    let mut trajectory = cfg.record_trajectory.then(|| vec![x.clone()]);
    let mut iterations = 0usize;
    let mut failure = None;

    while iterations < max_steps {
        let eval = model.hinge_eval(&current, t, cfg.kappa)?;
        if eval.value <= -cfg.kappa {
            break; // margin reached
        }
        let grad_norm = eval.grad.l2_norm()?;
        if grad_norm == 0.0 {
            failure = Some(AttackFailure::DegenerateGradient);
            break;
        }
        current = current
            .sub(&eval.grad.scale(alpha / grad_norm))?
            .clamp(cfg.box_lo, cfg.box_hi)?;
        iterations += 1;
        if let Some(traj) = trajectory.as_mut() {
            traj.push(current.clone());
        }
        if l2_distance(&current, x)? >= cfg.epsilon * (1.0 - 1e-9) {
            break; // budget exhausted
        }
    }

    finish(
        model,
        x,
        t,
        current,
        iterations,
        trajectory,
        None,
        cfg.c_init,
        failure,
    )
}

/// Result of `ifgsm_eps_sweep`: the chosen budget, its per-example results,
/// and the (epsilon, success count) history of the sweep.
#[derive(Debug, Clone)]
pub struct EpsSweep {
    pub epsilon: f64,
    pub results: Vec<AttackResult>,
    pub stages: Vec<(f64, usize)>,
    pub all_success: bool,
}

/// Doubles the I-FGSM budget from `cfg.epsilon` until every example in the
/// slice is successfully attacked, capped at 2¹⁰ × the initial budget. When
/// the cap is hit, the stage with the best success count is reported.
pub fn ifgsm_eps_sweep(
    model: &MlpModel,
    examples: &[Tensor],
    targets: &[usize],
    cfg: &AttackConfig,
) -> Result<EpsSweep> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("epsilon sweep needs examples".into()));
    }
    if examples.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} examples but {} targets",
            examples.len(),
            targets.len()
        )));
    }
    cfg.validate()?;

    let cap = cfg.epsilon * 1024.0;
    let mut epsilon = cfg.epsilon;
    let mut stages = Vec::new();
    let mut best: Option<(f64, Vec<AttackResult>, usize)> = None;
    while epsilon <= cap {
        let stage_cfg = AttackConfig {
            epsilon,
            ..cfg.clone()
        };
        let mut results = Vec::with_capacity(examples.len());
        for (x, &t) in examples.iter().zip(targets) {
            results.push(ifgsm_l2_attack(model, x, t, &stage_cfg)?);
        }
        let successes = results.iter().filter(|r| r.success).count();
        stages.push((epsilon, successes));
        if successes == examples.len() {
            return Ok(EpsSweep {
                epsilon,
                results,
                stages,
                all_success: true,
            });
        }
        if best.as_ref().is_none_or(|(_, _, s)| successes > *s) {
            best = Some((epsilon, results, successes));
        }
        epsilon *= 2.0;
    }
    let (epsilon, results, _) = best.expect("at least one stage ran");
    Ok(EpsSweep {
        epsilon,
        results,
        stages,
        all_success: false,
    })
}

/// Projected L-BFGS on ‖x′ − x‖₂² + c·f(x′, t): two-loop directions, Armijo
/// steps, box projection after each step. Stops on a small projected
/// gradient, a failed line search, or `max_iterations` outer iterations.
pub fn lbfgs_attack(
    model: &MlpModel,
    x: &Tensor,
    t: usize,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    check_example(model, x, t, cfg)?;
    lbfgs_single_c(model, x, t, cfg, cfg.c_init)
}

fn lbfgs_single_c(
    model: &MlpModel,
    x: &Tensor,
    t: usize,
    cfg: &AttackConfig,
    c: f64,
) -> Result<AttackResult> {
    // Dimensions were validated by check_example; the closures cannot fail.
    let objective = |p: &Tensor| -> f64 {
        let dist = l2_distance(p, x).expect("validated dimensions");
        let hinge = model.hinge_loss(p, t, cfg.kappa).expect("validated dimensions");
        dist * dist + c * hinge
    };
    let gradient = |p: &Tensor| -> Tensor {
        let hinge_grad = model
            .hinge_input_grad(p, t, cfg.kappa)
            .expect("validated dimensions");
        p.sub(x)
            .and_then(|d| d.scale(2.0).add(&hinge_grad.scale(c)))
            .expect("validated dimensions")
    };

    let opts = LbfgsOptions {
        max_iterations: cfg.max_iterations,
        bounds: Some((cfg.box_lo, cfg.box_hi)),
        ..Default::default()
    };
    let mut iterates: Vec<Tensor> = Vec::new();
    let run = lbfgs_minimize(objective, gradient, x, &opts, |p| {
        iterates.push(p.clone());
    })?;

    let mut best = BestSuccess::new(x);
    for p in &iterates {
        best.consider(p, model.classify(p)?, t)?;
    }
    let trajectory = cfg.record_trajectory.then(|| {
        let mut traj = vec![x.clone()];
        traj.extend(iterates);
        traj
    });
    let failure = match run.stop {
        LbfgsStop::LineSearchFailed => Some(AttackFailure::LineSearchFailed),
        _ => None,
    };
    let adversarial = best.take().unwrap_or(run.position);
    finish(
        model,
        x,
        t,
        adversarial,
        run.iterations,
        trajectory,
        None,
        c,
        failure,
    )
}
