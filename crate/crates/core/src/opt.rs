//! Multi-start projected-gradient optimization over products of probability
//! simplices, with inequality constraints handled by penalty continuation and
//! a boundary polish pass.
//!
//! Determinism contract: for fixed `(seed, starts, tol, max_iter)` the result
//! is bit-identical run to run. Start `i` always begins from the same point
//! regardless of how many starts are requested, so enlarging `starts` can only
//! improve the best value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// One block of identical simplices: `groups` independent distributions,
/// each over `arity` outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimplexBlock {
    pub groups: usize,
    pub arity: usize,
}

/// The product-of-simplices parameter domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplexShape {
    pub blocks: Vec<SimplexBlock>,
}

impl SimplexShape {
    pub fn new(blocks: Vec<(usize, usize)>) -> Self {
        SimplexShape {
            blocks: blocks.into_iter().map(|(groups, arity)| SimplexBlock { groups, arity }).collect(),
        }
    }

    pub fn param_len(&self) -> usize {
        self.blocks.iter().map(|b| b.groups * b.arity).sum()
    }

    /// Scalar degrees of freedom (each simplex of arity k contributes k-1).
    pub fn dof(&self) -> usize {
        self.blocks.iter().map(|b| b.groups * (b.arity - 1)).sum()
    }

    pub fn uniform_point(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_len());
        for b in &self.blocks {
            v.extend(std::iter::repeat(1.0 / b.arity as f64).take(b.groups * b.arity));
        }
        v
    }

    /// Projects every group onto its simplex, in place.
    pub fn project(&self, v: &mut [f64]) {
        let mut off = 0;
        for b in &self.blocks {
            for _ in 0..b.groups {
                project_slice(&mut v[off..off + b.arity]);
                off += b.arity;
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        // Dirichlet(1) per group: normalized exponentials.
        let mut v = Vec::with_capacity(self.param_len());
        for b in &self.blocks {
            for _ in 0..b.groups {
                let mut sum = 0.0;
                let start = v.len();
                for _ in 0..b.arity {
                    let e = -(1.0 - rng.gen::<f64>()).ln();
                    v.push(e);
                    sum += e;
                }
                for x in &mut v[start..] {
                    *x /= sum;
                }
            }
        }
        v
    }

    fn feasible_simplex(&self, v: &[f64]) -> bool {
        if v.len() != self.param_len() {
            return false;
        }
        let mut off = 0;
        for b in &self.blocks {
            for _ in 0..b.groups {
                let s: f64 = v[off..off + b.arity].iter().sum();
                if (s - 1.0).abs() > 1e-9 || v[off..off + b.arity].iter().any(|&x| x < -1e-12) {
                    return false;
                }
                off += b.arity;
            }
        }
        true
    }
}

/// Euclidean projection of one vector onto the probability simplex
/// (sort-and-threshold). Idempotent on valid distributions.
pub fn project_to_simplex(v: &[f64]) -> Result<Vec<f64>, OptError> {
    if v.is_empty() {
        return Err(OptError::EmptyVector);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(OptError::NonFinite);
    }
    let mut out = v.to_vec();
    project_slice(&mut out);
    Ok(out)
}

fn project_slice(v: &mut [f64]) {
    let n = v.len();
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cssv = 0.0;
    let mut rho = 0usize;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cssv += ui;
        let t = (cssv - 1.0) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            rho = i + 1;
            theta = t;
        }
    }
    let _ = rho;
    for x in v.iter_mut().take(n) {
        *x = (*x - theta).max(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Objective and inequality constraints (`g(x) >= 0` means feasible) over a
/// [`SimplexShape`]. Callbacks must be pure and tolerate arguments slightly
/// off the simplex (finite-difference probes step outside before projection).
pub struct OptProblem<'a> {
    pub shape: SimplexShape,
    pub sense: Sense,
    pub objective: Box<dyn Fn(&[f64]) -> f64 + 'a>,
    pub constraints: Vec<Box<dyn Fn(&[f64]) -> f64 + 'a>>,
}

#[derive(Debug, Clone)]
pub struct OptOpts {
    pub starts: usize,
    pub seed: u64,
    /// Convergence tolerance on objective improvement.
    pub tol: f64,
    pub max_iter: usize,
    /// Slack at or below this magnitude marks a constraint as active.
    pub activity_tol: f64,
    /// Extra deterministic start points (e.g. sweep warm starts), visited
    /// right after the uniform start.
    pub warm_starts: Vec<Vec<f64>>,
}

impl Default for OptOpts {
    fn default() -> Self {
        OptOpts {
            starts: 64,
            seed: 7,
            tol: 1e-6,
            max_iter: 2000,
            activity_tol: 1e-4,
            warm_starts: Vec::new(),
        }
    }
}

impl OptOpts {
    pub fn with_starts(starts: usize) -> Self {
        OptOpts { starts, ..OptOpts::default() }
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    /// Best feasible objective value found.
    pub value: f64,
    pub argument: Vec<f64>,
    pub constraint_slacks: Vec<f64>,
    pub active_flags: Vec<bool>,
    pub starts_used: usize,
    pub iterations: usize,
    pub converged: bool,
    /// True when converged feasible starts disagree by more than 1e-3,
    /// a hint that the landscape is multi-modal.
    pub multimodal: bool,
    pub value_spread: f64,
}

#[derive(Debug, Error)]
pub enum OptError {
    #[error("no feasible start satisfied the constraints")]
    NoFeasibleStart,
    #[error("objective not finite at a feasible point")]
    NonFinite,
    #[error("empty vector")]
    EmptyVector,
    #[error("starts must be >= 1 and tol > 0")]
    BadOpts,
}

/// Feasibility tolerance: returned points satisfy every constraint
/// above `-FEAS_TOL`.
pub const FEAS_TOL: f64 = 1e-7;

const GRAD_STEP: f64 = 1e-5;

struct StartOutcome {
    value: f64,
    x: Vec<f64>,
    slacks: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Multi-start constrained optimization. See module docs for the
/// determinism and monotonicity guarantees.
pub fn optimize(problem: &OptProblem, opts: &OptOpts) -> Result<OptResult, OptError> {
    if opts.starts == 0 || !(opts.tol > 0.0) {
        return Err(OptError::BadOpts);
    }
    let shape = &problem.shape;
    let mut grid_candidate: Option<Vec<f64>> = None;
    let mut grid_computed = false;

    let mut best: Option<StartOutcome> = None;
    let mut finals: Vec<f64> = Vec::new();
    let mut total_iters = 0usize;

    for start_idx in 0..opts.starts {
        let init = match start_point(shape, opts, start_idx) {
            StartPoint::Uniform => shape.uniform_point(),
            StartPoint::Warm(w) => {
                let mut v = w.clone();
                if v.len() != shape.param_len() {
                    continue;
                }
                shape.project(&mut v);
                v
            }
            StartPoint::Grid => {
                if !grid_computed {
                    grid_candidate = grid_seed(problem);
                    grid_computed = true;
                }
                match &grid_candidate {
                    Some(g) => g.clone(),
                    None => shape.uniform_point(),
                }
            }
            StartPoint::Random(stream) => {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(stream);
                shape.sample(&mut rng)
            }
        };
        if let Some(out) = run_start(problem, init, opts) {
            total_iters += out.iterations;
            finals.push(out.value);
            let better = match &best {
                None => true,
                Some(b) => match problem.sense {
                    Sense::Maximize => out.value > b.value,
                    Sense::Minimize => out.value < b.value,
                },
            };
            if better {
                best = Some(out);
            }
        }
    }

    let best = best.ok_or(OptError::NoFeasibleStart)?;
    if !best.value.is_finite() {
        return Err(OptError::NonFinite);
    }
    let spread = if finals.is_empty() {
        0.0
    } else {
        let mx = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mn = finals.iter().cloned().fold(f64::INFINITY, f64::min);
        mx - mn
    };
    let active_flags: Vec<bool> =
        best.slacks.iter().map(|&s| s <= opts.activity_tol).collect();
    Ok(OptResult {
        value: best.value,
        argument: best.x,
        constraint_slacks: best.slacks,
        active_flags,
        starts_used: opts.starts,
        iterations: total_iters,
        converged: best.converged,
        multimodal: spread > 1e-3,
        value_spread: spread,
    })
}

enum StartPoint<'a> {
    Uniform,
    Warm(&'a Vec<f64>),
    Grid,
    Random(u64),
}

fn start_point<'a>(shape: &SimplexShape, opts: &'a OptOpts, idx: usize) -> StartPoint<'a> {
    let n_warm = opts.warm_starts.len();
    if idx == 0 {
        StartPoint::Uniform
    } else if idx <= n_warm {
        StartPoint::Warm(&opts.warm_starts[idx - 1])
    } else if idx == n_warm + 1 && shape.dof() <= 5 && shape.blocks.iter().all(|b| b.arity == 2) {
        StartPoint::Grid
    } else {
        StartPoint::Random(idx as u64)
    }
}

/// Deterministic coarse scan for small all-binary parameterizations:
/// a full 41-point product grid up to 3 degrees of freedom, cyclic 41-point
/// coordinate sweeps for 4 or 5.
fn grid_seed(problem: &OptProblem) -> Option<Vec<f64>> {
    let shape = &problem.shape;
    let dof = shape.dof();
    if dof > 5 || !shape.blocks.iter().all(|b| b.arity == 2) {
        return None;
    }
    let sign = match problem.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };
    let score = |x: &[f64]| -> f64 {
        let mut s = sign * (problem.objective)(x);
        for c in &problem.constraints {
            let g = c(x);
            if g < 0.0 {
                s -= 1e8 * g * g;
            }
        }
        if s.is_finite() {
            s
        } else {
            f64::NEG_INFINITY
        }
    };
    let to_params = |t: &[f64]| -> Vec<f64> {
        let mut v = Vec::with_capacity(shape.param_len());
        for &ti in t {
            v.push(ti);
            v.push(1.0 - ti);
        }
        v
    };
    let grid: Vec<f64> = (0..41).map(|i| i as f64 / 40.0).collect();

    if dof <= 3 {
        let mut best = (f64::NEG_INFINITY, vec![0.5; dof]);
        let mut t = vec![0.0; dof];
        let total = 41usize.pow(dof as u32);
        for flat in 0..total {
            let mut rem = flat;
            for d in 0..dof {
                t[d] = grid[rem % 41];
                rem /= 41;
            }
            let s = score(&to_params(&t));
            if s > best.0 {
                best = (s, t.clone());
            }
        }
        return Some(to_params(&best.1));
    }

    // Cyclic coordinate sweeps from a few deterministic anchors.
    let mut best = (f64::NEG_INFINITY, vec![0.5; dof]);
    for anchor in [0.5, 0.25, 0.75] {
        let mut t = vec![anchor; dof];
        let mut cur = score(&to_params(&t));
        for _pass in 0..6 {
            let mut improved = false;
            for d in 0..dof {
                let keep = t[d];
                let mut local_best = (cur, keep);
                for &g in &grid {
                    t[d] = g;
                    let s = score(&to_params(&t));
                    if s > local_best.0 {
                        local_best = (s, g);
                    }
                }
                t[d] = local_best.1;
                if local_best.0 > cur + 1e-12 {
                    cur = local_best.0;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        if cur > best.0 {
            best = (cur, t);
        }
    }
    Some(to_params(&best.1))
}

fn run_start(problem: &OptProblem, mut x: Vec<f64>, opts: &OptOpts) -> Option<StartOutcome> {
    let shape = &problem.shape;
    shape.project(&mut x);
    let n_cons = problem.constraints.len();
    let slacks_of = |x: &[f64]| -> Vec<f64> { problem.constraints.iter().map(|c| c(x)).collect() };
    let min_slack = |s: &[f64]| s.iter().cloned().fold(f64::INFINITY, f64::min);
    let sign = match problem.sense {
        Sense::Maximize => 1.0,
        Sense::Minimize => -1.0,
    };

    let mut iterations = 0usize;
    let mut converged = false;

    // Best feasible point seen anywhere along this start's trajectory.
    // Penalty phases may detour through infeasible territory and settle on a
    // worse basin; the incumbent guards against losing ground.
    let mut incumbent: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let mut consider = |x: &[f64], slacks: Vec<f64>, incumbent: &mut Option<(f64, Vec<f64>, Vec<f64>)>| {
        if slacks.iter().all(|&s| s >= -FEAS_TOL) {
            let v = (problem.objective)(x);
            if v.is_finite() {
                let better = match incumbent {
                    None => true,
                    Some((best, _, _)) => sign * v > sign * *best,
                };
                if better {
                    *incumbent = Some((v, x.to_vec(), slacks));
                }
            }
        }
    };

    if n_cons == 0 {
        let f = |x: &[f64]| sign * (problem.objective)(x);
        let (it, conv) = pgd(shape, &f, &mut x, opts.max_iter, opts.tol);
        iterations += it;
        converged = conv;
        consider(&x, Vec::new(), &mut incumbent);
    } else {
        // Repair: drive constraint violation to zero before optimizing.
        if min_slack(&slacks_of(&x)) < -FEAS_TOL {
            let viol = |x: &[f64]| -> f64 {
                let mut v = 0.0;
                for c in &problem.constraints {
                    let g = c(x);
                    if g < 0.0 {
                        v -= g * g;
                    }
                }
                v
            };
            let (it, _) = pgd(shape, &viol, &mut x, opts.max_iter / 2, 1e-14);
            iterations += it;
        }

        // Penalty continuation on the objective: rough passes escalate the
        // penalty weight until feasible, one full-budget pass at the settled
        // weight, and a further escalation if that pass drifted infeasible.
        let penalized = |mu: f64, x: &[f64]| -> f64 {
            let mut v = sign * (problem.objective)(x);
            for c in &problem.constraints {
                let g = c(x);
                if g < 0.0 {
                    v -= mu * g * g;
                }
            }
            v
        };
        consider(&x, slacks_of(&x), &mut incumbent);
        let mut mu = 1e3;
        for _ in 0..3 {
            let (it, _) = pgd(
                shape,
                &|x: &[f64]| penalized(mu, x),
                &mut x,
                (opts.max_iter / 4).max(8),
                opts.tol,
            );
            iterations += it;
            consider(&x, slacks_of(&x), &mut incumbent);
            if min_slack(&slacks_of(&x)) >= -FEAS_TOL {
                break;
            }
            mu *= 100.0;
        }
        loop {
            let (it, conv) = pgd(
                shape,
                &|x: &[f64]| penalized(mu, x),
                &mut x,
                opts.max_iter,
                opts.tol,
            );
            iterations += it;
            converged = conv;
            consider(&x, slacks_of(&x), &mut incumbent);
            if min_slack(&slacks_of(&x)) >= -FEAS_TOL || mu >= 1e9 {
                break;
            }
            mu *= 100.0;
        }

        // Boundary polish: when a constraint is (near-)active, the optimum of
        // the constrained problem can sit exactly on slack = 0; retarget the
        // near-active constraints as equalities from the incumbent and keep
        // the result only if it improves it.
        if let Some((_, xi, slacks)) = &incumbent {
            let active: Vec<usize> = (0..n_cons)
                .filter(|&j| slacks[j].abs() <= opts.activity_tol.max(1e-3))
                .collect();
            if !active.is_empty() {
                let mut xp = xi.clone();
                for kappa in [1e5, 1e7] {
                    let eq = |x: &[f64]| -> f64 {
                        let mut v = sign * (problem.objective)(x);
                        for &j in &active {
                            let g = (problem.constraints[j])(x);
                            v -= kappa * g * g;
                        }
                        v
                    };
                    let (it, _) = pgd(shape, &eq, &mut xp, opts.max_iter / 2, opts.tol);
                    iterations += it;
                }
                let sp = slacks_of(&xp);
                consider(&xp, sp, &mut incumbent);
            }
        }
    }

    let (value, x, slacks) = incumbent?;
    Some(StartOutcome { value, x, slacks, iterations, converged })
}

/// Projected gradient ascent on `f` (always maximized) with central-difference
/// gradients and backtracking line search. Returns (iterations, converged).
fn pgd(
    shape: &SimplexShape,
    f: &dyn Fn(&[f64]) -> f64,
    x: &mut Vec<f64>,
    max_iter: usize,
    tol: f64,
) -> (usize, bool) {
    let n = x.len();
    let mut fx = f(x);
    if !fx.is_finite() {
        return (0, false);
    }
    let mut grad = vec![0.0; n];
    let mut alpha: f64 = 0.25;
    let mut stall = 0u32;
    let mut iters = 0usize;
    // Windowed progress guard against slow zigzag tails.
    const WINDOW: usize = 25;
    let mut f_window = fx;

    while iters < max_iter {
        iters += 1;
        for i in 0..n {
            let xi = x[i];
            x[i] = xi + GRAD_STEP;
            let fp = f(x);
            x[i] = xi - GRAD_STEP;
            let fm = f(x);
            x[i] = xi;
            grad[i] = (fp - fm) / (2.0 * GRAD_STEP);
        }
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if !gnorm2.is_finite() {
            return (iters, false);
        }
        if gnorm2 < 1e-18 {
            return (iters, true);
        }

        let mut backtracked = false;
        let mut step_delta = 0.0;
        let mut improved = false;
        while alpha >= 1e-12 {
            let mut xn: Vec<f64> = x.iter().zip(&grad).map(|(&xi, &g)| xi + alpha * g).collect();
            shape.project(&mut xn);
            let step2: f64 = xn.iter().zip(x.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if step2 < 1e-28 {
                // Projection pins the iterate; the point is stationary.
                return (iters, true);
            }
            let fn_ = f(&xn);
            if fn_.is_finite() && fn_ - fx >= (1e-4 / alpha) * step2 {
                step_delta = fn_ - fx;
                *x = xn;
                fx = fn_;
                improved = true;
                break;
            }
            alpha *= 0.5;
            backtracked = true;
        }
        if !improved {
            // Stationary within line-search resolution.
            return (iters, true);
        }
        // Grow the step only when it was accepted without backtracking.
        if !backtracked {
            alpha = (alpha * 2.0).min(1.0);
        }
        if step_delta < tol {
            stall += 1;
            if stall >= 2 {
                return (iters, true);
            }
        } else {
            stall = 0;
        }
        if iters % WINDOW == 0 {
            if fx - f_window < WINDOW as f64 * tol {
                return (iters, true);
            }
            f_window = fx;
        }
    }
    (iters, false)
}

/// One grid point of a parameterized problem family, solved in order with
/// warm starts chained from the previous point's optimizer.
pub struct SweepOutcome<T> {
    pub param: T,
    pub result: Result<OptResult, OptError>,
}

/// Solves a family of problems over `points`, warm-starting each point from
/// the previous point's argument in addition to the usual start schedule.
/// Per-point failures are recorded, not propagated.
pub fn sweep<'a, T: Clone, F>(points: &[T], mut make: F, opts: &OptOpts) -> Vec<SweepOutcome<T>>
where
    F: FnMut(&T) -> OptProblem<'a>,
{
    let mut out = Vec::with_capacity(points.len());
    let mut prev_arg: Option<Vec<f64>> = None;
    for p in points {
        let problem = make(p);
        let mut local = opts.clone();
        if let Some(w) = &prev_arg {
            if w.len() == problem.shape.param_len() {
                local.warm_starts.push(w.clone());
            }
        }
        let result = optimize(&problem, &local);
        if let Ok(r) = &result {
            prev_arg = Some(r.argument.clone());
        }
        out.push(SweepOutcome { param: p.clone(), result });
    }
    out
}
