//! Closed-form and semi-exact evaluators for the two standard binary worked
//! examples: the symmetric binary source whose decoder-side observation is
//! bought by a unit-cost action, and the memory-cell rewrite channel. These
//! serve as independent oracles for the general solvers.

use crate::info::{binary_entropy, star, CondPmf, InfoError, Pmf};
use crate::opt::{optimize, OptError, OptOpts, OptProblem, Sense, SimplexShape};
use crate::source::{rd_ac, rd_steinberg, RdcOpts, SourceError, SourceSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClosedFormError {
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("argument {name}={value} outside [{lo}, {hi}]")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
}

fn check_range(name: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), ClosedFormError> {
    if !(lo..=hi).contains(&value) {
        return Err(ClosedFormError::OutOfRange { name, value, lo, hi });
    }
    Ok(())
}

fn h(p: f64) -> f64 {
    binary_entropy(p).expect("checked range")
}

/// CR rate-distortion function of the doubly symmetric binary pair:
/// `h(p0 * D) - h(D)`, clamped at zero.
pub fn r_cr_binary(p0: f64, d: f64) -> Result<f64, ClosedFormError> {
    check_range("p0", p0, 0.0, 0.5)?;
    check_range("D", d, 0.0, 0.5)?;
    Ok((h(star(p0, d)?) - h(d)).max(0.0))
}

#[derive(Debug, Clone, Copy)]
pub struct WzEnvelope {
    pub rate: f64,
    pub theta: f64,
    pub beta: f64,
}

/// The classic side-information rate-distortion function of the same pair:
/// the infimum of `theta (h(p0 * beta) - h(beta))` over time-sharing
/// parameters with `theta beta + (1 - theta) p0 = D`. Computed by a dense
/// scan over beta with the implied theta, then golden-section refinement.
pub fn r_wz_binary(p0: f64, d: f64) -> Result<WzEnvelope, ClosedFormError> {
    check_range("p0", p0, 0.0, 0.5)?;
    check_range("D", d, 0.0, 1.0)?;
    if d >= p0 {
        return Ok(WzEnvelope { rate: 0.0, theta: 0.0, beta: 0.0 });
    }
    let value = |beta: f64| -> f64 {
        let theta = (p0 - d) / (p0 - beta);
        theta * (h(star(p0, beta).expect("in range")) - h(beta))
    };
    let hi = d.min(p0);
    let n = 2000;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=n {
        let beta = hi * i as f64 / n as f64;
        let v = value(beta);
        if v < best.0 {
            best = (v, beta);
        }
    }
    // Golden-section polish around the grid minimum.
    let step = hi / n as f64;
    let (mut lo, mut up) = ((best.1 - step).max(0.0), (best.1 + step).min(hi));
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    for _ in 0..60 {
        let m1 = up - phi * (up - lo);
        let m2 = lo + phi * (up - lo);
        if value(m1) <= value(m2) {
            up = m2;
        } else {
            lo = m1;
        }
    }
    let beta = 0.5 * (lo + up);
    let rate = value(beta).min(best.0).max(0.0);
    let beta = if value(beta) <= best.0 { beta } else { best.1 };
    let theta = (p0 - d) / (p0 - beta);
    Ok(WzEnvelope { rate, theta, beta })
}

/// Parameters of the action-observed binary source example.
#[derive(Debug, Clone, Copy)]
pub struct BinaryExampleParams {
    /// Crossover of the decoder-side observation when the action buys it.
    pub p0: f64,
    /// Action budget spent, i.e. P(A=1) = C exactly along the curve.
    pub c: f64,
    /// Whether the encoder must mirror the decoder's reconstruction.
    pub cr: bool,
}

/// The source-coding instance behind the binary curves: uniform binary X,
/// decoder SI that is a BSC(p0) observation under action 1 (unit cost) and
/// an erasure under action 0 (free), Hamming distortion, no encoder SI.
pub fn binary_example_spec(p0: f64) -> SourceSpec {
    let mut si = vec![0.0; 2 * 2 * 1 * 3];
    for x in 0..2 {
        for a in 0..2 {
            for sd in 0..3 {
                let p = if a == 0 {
                    if sd == 2 {
                        1.0
                    } else {
                        0.0
                    }
                } else if sd == 2 {
                    0.0
                } else if sd == x {
                    1.0 - p0
                } else {
                    p0
                };
                si[(x * 2 + a) * 3 + sd] = p;
            }
        }
    }
    SourceSpec {
        x_size: 2,
        a_size: 2,
        se_size: 1,
        sd_size: 3,
        xhat_size: 2,
        source: Pmf::uniform(2),
        si_channel: CondPmf::new(vec![2, 2], vec![1, 3], si).expect("valid"),
        distortion: vec![0.0, 1.0, 1.0, 0.0],
        cost: vec![0.0, 1.0],
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BinaryCurvePoint {
    pub d: f64,
    pub c: f64,
    pub rate: f64,
}

/// Classical rate-distortion function of a Bernoulli(pi) source under
/// Hamming distortion.
fn binary_rd(pi: f64, d: f64) -> f64 {
    let lim = pi.min(1.0 - pi);
    if d >= lim {
        0.0
    } else {
        h(pi) - h(d)
    }
}

/// Conditional rate given the action branch split: `(1-c) R(D0) + c R_si(D1)`
/// minimized over the distortion split, with the selected branch rates.
fn curve_point(
    params: &BinaryExampleParams,
    d: f64,
    opts: &RdcOpts,
) -> Result<f64, ClosedFormError> {
    let (p0, c, cr) = (params.p0, params.c, params.cr);
    if c <= 0.0 {
        return Ok(binary_rd(0.5, d.min(0.5)));
    }
    if c >= 1.0 {
        return if cr { r_cr_binary(p0, d.min(0.5)) } else { Ok(r_wz_binary(p0, d)?.rate) };
    }
    let inner = |d1: f64| -> Result<f64, ClosedFormError> {
        if cr {
            r_cr_binary(p0, d1.min(0.5))
        } else {
            Ok(r_wz_binary(p0, d1)?.rate)
        }
    };
    // Symmetric action choice keeps both conditional sources uniform and the
    // action free of X, so I(X;A) = 0 and the closed forms apply exactly.
    let d0_max = (d / (1.0 - c)).min(0.5);
    let sym_rate = |d0: f64| -> Result<f64, ClosedFormError> {
        let d1 = ((d - (1.0 - c) * d0) / c).max(0.0);
        if d1 > 0.5 + 1e-12 {
            return Ok(f64::INFINITY);
        }
        Ok((1.0 - c) * binary_rd(0.5, d0) + c * inner(d1.min(0.5))?)
    };
    let n = 400;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..=n {
        let d0 = d0_max * i as f64 / n as f64;
        let v = sym_rate(d0)?;
        if v < best.0 {
            best = (v, d0);
        }
    }
    let step = d0_max / n as f64;
    let (mut lo, mut up) = ((best.1 - step).max(0.0), (best.1 + step).min(d0_max));
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    for _ in 0..40 {
        let m1 = up - phi * (up - lo);
        let m2 = lo + phi * (up - lo);
        if sym_rate(m1)? <= sym_rate(m2)? {
            up = m2;
        } else {
            lo = m1;
        }
    }
    let mut rate = sym_rate(0.5 * (lo + up))?.min(best.0);

    // Asymmetric probe: a skewed P(A=1|X) with the same action marginal
    // makes the conditional sources non-uniform; their branch rates then
    // come from the general solvers. A coarse probe around the symmetric
    // split guards against the symmetric family being suboptimal.
    let d0_star = 0.5 * (lo + up);
    for du in [-0.125f64, 0.125] {
        let lim = c.min(1.0 - c);
        let u = du.clamp(-lim, lim);
        if u == 0.0 {
            continue;
        }
        let (a0, a1) = ((c + u).clamp(0.0, 1.0), (c - u).clamp(0.0, 1.0));
        let i_xa = h(c) - 0.5 * h(a0) - 0.5 * h(a1);
        let pi0 = if c < 1.0 { (1.0 - a0) / (2.0 * (1.0 - c)) } else { 0.5 };
        let pi1 = a0 / (2.0 * c);
        for d0 in [0.5 * d0_star, d0_star, 0.5 * (d0_star + d0_max)] {
            let d1 = (d - (1.0 - c) * d0) / c;
            if !(0.0..=0.5).contains(&d1) {
                continue;
            }
            let branch1 = general_branch_rate(params.p0, pi1, d1, cr, opts)?;
            let v = i_xa + (1.0 - c) * binary_rd(pi0, d0) + c * branch1;
            if v < rate {
                rate = v;
            }
        }
    }
    Ok(rate.max(0.0))
}

/// Rate of the observed branch for a non-uniform conditional source, via the
/// general solvers on a one-action spec.
fn general_branch_rate(
    p0: f64,
    pi: f64,
    d1: f64,
    cr: bool,
    opts: &RdcOpts,
) -> Result<f64, ClosedFormError> {
    let mut si = vec![0.0; 2 * 2];
    for x in 0..2 {
        for sd in 0..2 {
            si[x * 2 + sd] = if sd == x { 1.0 - p0 } else { p0 };
        }
    }
    let spec = SourceSpec {
        x_size: 2,
        a_size: 1,
        se_size: 1,
        sd_size: 2,
        xhat_size: 2,
        source: Pmf::new(vec![1.0 - pi, pi]).expect("valid"),
        si_channel: CondPmf::new(vec![2, 1], vec![1, 2], si).expect("valid"),
        distortion: vec![0.0, 1.0, 1.0, 0.0],
        cost: vec![0.0],
    };
    let local = RdcOpts { opt: OptOpts { starts: 6, ..opts.opt.clone() }, u_size: Some(4) };
    let r = if cr {
        rd_steinberg(&spec, d1, &local)?
    } else {
        rd_ac(&spec, &crate::source::RdcQuery { d: d1, c: 0.0 }, &local)?
    };
    Ok(r.rate)
}

/// Rate-distortion curve of the binary example at fixed action budget,
/// minimizing over the per-branch distortion split (and probing skewed
/// action choices) at every grid point.
pub fn binary_rd_curve(
    params: &BinaryExampleParams,
    d_grid: &[f64],
    opts: &RdcOpts,
) -> Result<Vec<BinaryCurvePoint>, ClosedFormError> {
    check_range("p0", params.p0, 0.0, 0.5)?;
    check_range("C", params.c, 0.0, 1.0)?;
    let mut out = Vec::with_capacity(d_grid.len());
    for &d in d_grid {
        check_range("D", d, 0.0, 0.5)?;
        let rate = curve_point(params, d, opts)?;
        out.push(BinaryCurvePoint { d, c: params.c, rate });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rewrite channel
// ---------------------------------------------------------------------------

/// The five scalar design parameters of the rewrite example: the action bias
/// and the four no-rewrite probabilities, one per (state, action) pair.
#[derive(Debug, Clone, Copy)]
pub struct RewriteParams {
    pub delta: f64,
    pub pa: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
}

impl RewriteParams {
    fn check(&self) -> Result<(), ClosedFormError> {
        check_range("delta", self.delta, 0.0, 1.0)?;
        check_range("pa", self.pa, 0.0, 1.0)?;
        check_range("p", self.p, 0.0, 1.0)?;
        check_range("q", self.q, 0.0, 1.0)?;
        check_range("r", self.r, 0.0, 1.0)?;
        check_range("s", self.s, 0.0, 1.0)?;
        Ok(())
    }
}

/// Evaluates the rewrite example's explicit entropy expressions, returning
/// `(objective, slack)` where the objective is `H(Y) - H(Y|A,X) - I(X;Se|A)`
/// and the slack is the same with `H(Y|A)` in place of `H(Y)`.
pub fn rewrite_objective(params: &RewriteParams) -> Result<(f64, f64), ClosedFormError> {
    params.check()?;
    let RewriteParams { delta: dl, pa, p, q, r, s } = *params;

    let hy = h((1.0 - dl) * (1.0 - pa) * (1.0 - dl + dl * p)
        + dl * pa * (q + dl - dl * q)
        + dl * (1.0 - dl) * (1.0 - r + r * pa - s * pa));

    let hy_a = (1.0 - pa) * h((1.0 - dl) * (p + (1.0 - p) * (1.0 - dl) + (1.0 - r) * dl))
        + pa * h(dl * (q + (1.0 - q) * dl + (1.0 - s) * (1.0 - dl)));

    // -H(Y|A,X) - I(X;Se|A), grouped per action as
    // P(a) P(x=1|a) [H(Se|a, x=1) - h(delta)] - h(delta).
    let mut tail = -h(dl);
    let m0 = (1.0 - p) * (1.0 - dl) * (1.0 - pa) + (1.0 - r) * dl * (1.0 - pa);
    if m0 > 1e-15 {
        tail += m0 * (h((1.0 - p) * (1.0 - dl) * (1.0 - pa) / m0) - h(dl));
    }
    let m1 = (1.0 - q) * dl * pa + (1.0 - s) * (1.0 - dl) * pa;
    if m1 > 1e-15 {
        tail += m1 * (h((1.0 - q) * dl * pa / m1) - h(dl));
    }

    Ok((hy + tail, hy_a + tail))
}

#[derive(Debug, Clone, Copy)]
pub struct RewriteCapacity {
    pub value: f64,
    pub params: RewriteParams,
    pub slack: f64,
    pub converged: bool,
}

/// Optimizes the rewrite objective over its five scalars through the closed
/// forms (independent of the general channel machinery). `constrained`
/// enforces the two-stage coding condition `slack >= 0`.
pub fn rewrite_capacity(
    delta: f64,
    constrained: bool,
    opts: &OptOpts,
) -> Result<RewriteCapacity, ClosedFormError> {
    check_range("delta", delta, 0.0, 0.5)?;
    let from_x = |x: &[f64]| RewriteParams {
        delta,
        pa: x[0].clamp(0.0, 1.0),
        p: x[2].clamp(0.0, 1.0),
        q: x[4].clamp(0.0, 1.0),
        r: x[6].clamp(0.0, 1.0),
        s: x[8].clamp(0.0, 1.0),
    };
    let problem = OptProblem {
        shape: SimplexShape::new(vec![(1, 2); 5]),
        sense: Sense::Maximize,
        objective: Box::new(move |x: &[f64]| {
            rewrite_objective(&from_x(x)).map(|(o, _)| o).unwrap_or(f64::NEG_INFINITY)
        }),
        constraints: if constrained {
            vec![Box::new(move |x: &[f64]| {
                rewrite_objective(&from_x(x)).map(|(_, s)| s).unwrap_or(-1.0)
            })]
        } else {
            Vec::new()
        },
    };
    let res = optimize(&problem, opts)?;
    let params = from_x(&res.argument);
    let (value, slack) = rewrite_objective(&params)?;
    Ok(RewriteCapacity { value: value.max(0.0), params, slack, converged: res.converged })
}

/// Default start budget for [`rewrite_capacity`]: uniform + grid candidate +
/// sixteen random restarts.
pub fn rewrite_opts(seed: u64) -> OptOpts {
    OptOpts { starts: 18, seed, ..OptOpts::default() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{assemble_channel_joint, rewrite_channel_spec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn r_cr_binary_values() {
        assert!((r_cr_binary(0.25, 0.0).unwrap() - 0.8112781244591328).abs() < 1e-12);
        assert!(r_cr_binary(0.25, 0.5).unwrap().abs() < 1e-12);
        assert!((r_cr_binary(0.25, 0.1).unwrap() - 0.4122953056414115).abs() < 1e-12);
        assert!(r_cr_binary(0.25, 0.7).is_err());
        assert!(r_cr_binary(0.7, 0.1).is_err());
    }

    #[test]
    fn r_wz_binary_endpoints_and_envelope() {
        let e = r_wz_binary(0.25, 0.25).unwrap();
        assert!(e.rate.abs() < 1e-12 && e.theta.abs() < 1e-12);
        let e = r_wz_binary(0.25, 0.0).unwrap();
        assert!((e.rate - 0.8112781244591328).abs() < 1e-9);
        assert!((e.theta - 1.0).abs() < 1e-9 && e.beta.abs() < 1e-9);
        // Frozen from the dense-scan oracle itself.
        let e = r_wz_binary(0.25, 0.1).unwrap();
        assert!((e.rate - 0.411179).abs() < 1e-4, "rate={}", e.rate);
        // Time-sharing parameters satisfy the distortion identity.
        assert!((e.theta * e.beta + (1.0 - e.theta) * 0.25 - 0.1).abs() < 1e-9);
        assert!(0.0 <= e.theta && e.theta <= 1.0 && 0.0 <= e.beta && e.beta <= 0.25);
    }

    #[test]
    fn wz_never_exceeds_cr() {
        for i in 0..=100 {
            let d = 0.25 * i as f64 / 100.0;
            let wz = r_wz_binary(0.25, d).unwrap().rate;
            let cr = r_cr_binary(0.25, d).unwrap();
            assert!(wz <= cr + 1e-9, "wz={wz} cr={cr} at D={d}");
        }
    }

    #[test]
    fn curve_matches_closed_forms_at_extreme_costs() {
        let opts = RdcOpts::default();
        let grid: Vec<f64> = (0..=10).map(|i| 0.05 * i as f64).collect();
        let c0 = binary_rd_curve(&BinaryExampleParams { p0: 0.25, c: 0.0, cr: true }, &grid, &opts)
            .unwrap();
        for pt in &c0 {
            let want = (1.0 - h(pt.d.min(0.5))).max(0.0);
            assert!((pt.rate - want).abs() < 1e-9, "C=0 rate {} vs {}", pt.rate, want);
        }
        let c1 = binary_rd_curve(&BinaryExampleParams { p0: 0.25, c: 1.0, cr: true }, &grid, &opts)
            .unwrap();
        for pt in &c1 {
            let want = r_cr_binary(0.25, pt.d).unwrap();
            assert!((pt.rate - want).abs() < 1e-6, "C=1 rate {} vs {}", pt.rate, want);
        }
    }

    #[test]
    fn curve_cr_penalty_and_monotonicity() {
        let opts = RdcOpts::default();
        let grid: Vec<f64> = (0..=8).map(|i| 0.05 * i as f64).collect();
        let base = BinaryExampleParams { p0: 0.25, c: 0.5, cr: true };
        let cr = binary_rd_curve(&base, &grid, &opts).unwrap();
        let nocr =
            binary_rd_curve(&BinaryExampleParams { cr: false, ..base }, &grid, &opts).unwrap();
        for (a, b) in cr.iter().zip(&nocr) {
            assert!(a.rate >= b.rate - 1e-9, "cr {} < nocr {} at D={}", a.rate, b.rate, a.d);
        }
        for w in cr.windows(2) {
            assert!(w[1].rate <= w[0].rate + 1e-6, "curve not non-increasing in D");
        }
        // Without the mirror requirement more side information never hurts.
        let d_fixed = [0.1];
        let mut last = f64::INFINITY;
        for c in [0.0, 0.5, 1.0] {
            let pt = binary_rd_curve(
                &BinaryExampleParams { p0: 0.25, c, cr: false },
                &d_fixed,
                &opts,
            )
            .unwrap()[0];
            assert!(pt.rate <= last + 1e-6, "no-CR curve increased in C");
            last = pt.rate;
        }
    }

    #[test]
    fn rewrite_objective_special_cases() {
        // Noiseless first write: Y = A regardless of the rewrite decision.
        let (o, s) = rewrite_objective(&RewriteParams {
            delta: 0.0,
            pa: 0.5,
            p: 0.3,
            q: 0.9,
            r: 0.2,
            s: 0.7,
        })
        .unwrap();
        assert!((o - 1.0).abs() < 1e-12, "objective={o}");
        assert!(s >= -1e-12);
        // delta = 1/2 makes Se uniform regardless of A; with the rewrite
        // decision also ignoring A (p = q, r = s) the output carries no
        // action information and H(Y) = H(Y|A).
        let (o, s) = rewrite_objective(&RewriteParams {
            delta: 0.5,
            pa: 0.3,
            p: 0.6,
            q: 0.6,
            r: 0.8,
            s: 0.8,
        })
        .unwrap();
        assert!((o - s).abs() < 1e-12, "objective {o} != slack {s}");
    }

    #[test]
    fn rewrite_expressions_match_joint_evaluation() {
        use crate::info::Var;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let params = RewriteParams {
                delta: rng.gen::<f64>() * 0.5,
                pa: rng.gen(),
                p: rng.gen(),
                q: rng.gen(),
                r: rng.gen(),
                s: rng.gen(),
            };
            let (obj, slack) = rewrite_objective(&params).unwrap();
            let spec = rewrite_channel_spec(params.delta);
            let p_a = Pmf::new(vec![1.0 - params.pa, params.pa]).unwrap();
            // Conditioning groups are (a, se); x = 0 means no rewrite.
            let table = vec![
                params.p,
                1.0 - params.p,
                params.r,
                1.0 - params.r,
                params.q,
                1.0 - params.q,
                params.s,
                1.0 - params.s,
            ];
            let p_x = CondPmf::new(vec![2, 2], vec![2], table).unwrap();
            let j = assemble_channel_joint(&spec, &p_a, &p_x).unwrap();
            let obj2 = j
                .mutual_information(&[Var::A, Var::X], &[Var::Y, Var::Sd], &[])
                .unwrap()
                - j.mutual_information(&[Var::X], &[Var::Se], &[Var::A]).unwrap();
            let slack2 = crate::channel::condition_slack(&j).unwrap();
            assert!(
                (obj - obj2).abs() < 1e-9,
                "objective mismatch {obj} vs {obj2} at {params:?}"
            );
            assert!(
                (slack - slack2).abs() < 1e-9,
                "slack mismatch {slack} vs {slack2} at {params:?}"
            );
        }
    }

    #[test]
    fn rewrite_capacity_reproduces_reported_values() {
        let r = rewrite_capacity(0.1, true, &rewrite_opts(7)).unwrap();
        assert!((r.value - 0.5310).abs() < 3e-3, "constrained={}", r.value);
        assert!(r.slack.abs() <= 1e-3, "slack={}", r.slack);
        // The reported optimum has X independent of Se given A.
        assert!((r.params.p - r.params.r).abs() < 1e-2, "{:?}", r.params);
        assert!((r.params.q - r.params.s).abs() < 1e-2, "{:?}", r.params);
        let u = rewrite_capacity(0.1, false, &rewrite_opts(7)).unwrap();
        assert!((u.value - 0.6690).abs() < 3e-3, "unconstrained={}", u.value);
        assert!(u.slack < -1e-3);
    }

    #[test]
    fn rewrite_capacity_edge_and_ordering() {
        for constrained in [true, false] {
            let r = rewrite_capacity(0.0, constrained, &rewrite_opts(1)).unwrap();
            assert!((r.value - 1.0).abs() < 1e-6, "delta=0 value={}", r.value);
        }
        for delta in [0.05, 0.2, 0.35] {
            let c = rewrite_capacity(delta, true, &rewrite_opts(2)).unwrap();
            let u = rewrite_capacity(delta, false, &rewrite_opts(2)).unwrap();
            assert!(c.value <= u.value + 1e-9, "constrained exceeds unconstrained");
        }
    }
}
