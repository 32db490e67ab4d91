//! Channel-coding limits for state-dependent channels whose state is driven
//! by a message-bearing action sequence: capacity under the reversible-input
//! requirement with its two-stage coding condition, the message-only and
//! state-recovery variants, and the no-action stegotext special case.
//!
//! Each variant sits behind [`CapacitySolver`] and is registered by name, so
//! callers select one at runtime (`ri`, `unconstrained`, `message`, `state`,
//! `stegotext`).

use crate::info::{entropy_bits, CondPmf, InfoError, JointDist, MarginalSet, Pmf, Var};
use crate::opt::{optimize, OptError, OptOpts, OptProblem, Sense, SimplexShape};
use thiserror::Error;

/// Canonical variable order for channel-system joints.
pub const CHANNEL_VARS: [Var; 5] = [Var::A, Var::Se, Var::Sd, Var::X, Var::Y];

/// The state-dependent main channel; the action-dependent variant lets the
/// action enter the transition law directly.
#[derive(Debug, Clone)]
pub enum MainChannel {
    /// P_{Y|X,Se,Sd}, table `[x][se][sd][y]`.
    Standard(CondPmf),
    /// P_{Y|X,Se,Sd,A}, table `[x][se][sd][a][y]`.
    ActionDependent(CondPmf),
}

#[derive(Debug, Clone)]
pub struct ChannelSpec {
    pub a_size: usize,
    pub se_size: usize,
    pub sd_size: usize,
    pub x_size: usize,
    pub y_size: usize,
    /// P_{Se,Sd|A}, table `[a][se][sd]`.
    pub state_channel: CondPmf,
    pub main: MainChannel,
}

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error("spec dimensions are inconsistent: {0}")]
    Dimension(String),
    #[error("auxiliary alphabet size {requested} exceeds cap {cap}")]
    USizeCap { requested: usize, cap: usize },
    #[error("operation requires a degenerate spec: {0}")]
    NotDegenerate(&'static str),
    #[error("spec violates the required Markov structure ({0}, violation {1:.2e})")]
    MarkovPrecondition(&'static str, f64),
    #[error("unknown capacity mode {0:?}")]
    UnknownMode(String),
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.state_channel.cond_sizes() != [self.a_size]
            || self.state_channel.out_sizes() != [self.se_size, self.sd_size]
        {
            return Err(ChannelError::Dimension("state_channel shape".into()));
        }
        match &self.main {
            MainChannel::Standard(m) => {
                if m.cond_sizes() != [self.x_size, self.se_size, self.sd_size]
                    || m.out_sizes() != [self.y_size]
                {
                    return Err(ChannelError::Dimension("main_channel shape".into()));
                }
            }
            MainChannel::ActionDependent(m) => {
                if m.cond_sizes() != [self.x_size, self.se_size, self.sd_size, self.a_size]
                    || m.out_sizes() != [self.y_size]
                {
                    return Err(ChannelError::Dimension("main_channel shape".into()));
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn main_prob(&self, x: usize, se: usize, sd: usize, a: usize, y: usize) -> f64 {
        match &self.main {
            MainChannel::Standard(m) => {
                m.table()[((x * self.se_size + se) * self.sd_size + sd) * self.y_size + y]
            }
            MainChannel::ActionDependent(m) => {
                m.table()[(((x * self.se_size + se) * self.sd_size + sd) * self.a_size + a)
                    * self.y_size
                    + y]
            }
        }
    }

    /// Rewrites an action-dependent main channel as a standard one over the
    /// enlarged encoder state (Se, A); a no-op for standard specs. The
    /// capacity is unchanged under this transform.
    pub fn to_standard(&self) -> ChannelSpec {
        let m = match &self.main {
            MainChannel::Standard(_) => return self.clone(),
            MainChannel::ActionDependent(m) => m,
        };
        let (na, nse, nsd, nx, ny) = (self.a_size, self.se_size, self.sd_size, self.x_size, self.y_size);
        let nse2 = nse * na;
        // New encoder state se' = (se, a'), index se * na + a'.
        let mut state = vec![0.0; na * nse2 * nsd];
        for a in 0..na {
            for se in 0..nse {
                for sd in 0..nsd {
                    let p = self.state_channel.table()[(a * nse + se) * nsd + sd];
                    state[(a * nse2 + (se * na + a)) * nsd + sd] = p;
                }
            }
        }
        let mut main = vec![0.0; nx * nse2 * nsd * ny];
        for x in 0..nx {
            for se in 0..nse {
                for ap in 0..na {
                    for sd in 0..nsd {
                        for y in 0..ny {
                            main[((x * nse2 + (se * na + ap)) * nsd + sd) * ny + y] =
                                m.table()[(((x * nse + se) * nsd + sd) * na + ap) * ny + y];
                        }
                    }
                }
            }
        }
        ChannelSpec {
            a_size: na,
            se_size: nse2,
            sd_size: nsd,
            x_size: nx,
            y_size: ny,
            state_channel: CondPmf::new(vec![na], vec![nse2, nsd], state).expect("valid transform"),
            main: MainChannel::Standard(
                CondPmf::new(vec![nx, nse2, nsd], vec![ny], main).expect("valid transform"),
            ),
        }
    }
}

/// Builds the memory-cell rewrite channel: the first write sends action A
/// through BSC(delta) to the encoder state, then the second encoder either
/// leaves the cell (X = 0, Y = Se) or rewrites it (X = 1, Y a fresh
/// BSC(delta) copy of A). Decoder state is absent.
pub fn rewrite_channel_spec(delta: f64) -> ChannelSpec {
    let mut state = vec![0.0; 2 * 2];
    for a in 0..2 {
        for se in 0..2 {
            state[a * 2 + se] = if se == a { 1.0 - delta } else { delta };
        }
    }
    let mut main = vec![0.0; 2 * 2 * 1 * 2 * 2];
    for x in 0..2 {
        for se in 0..2 {
            for a in 0..2 {
                for y in 0..2 {
                    let p = if x == 0 {
                        if y == se {
                            1.0
                        } else {
                            0.0
                        }
                    } else if y == a {
                        1.0 - delta
                    } else {
                        delta
                    };
                    main[((x * 2 + se) * 2 + a) * 2 + y] = p;
                }
            }
        }
    }
    ChannelSpec {
        a_size: 2,
        se_size: 2,
        sd_size: 1,
        x_size: 2,
        y_size: 2,
        state_channel: CondPmf::new(vec![2], vec![2, 1], state).expect("valid"),
        main: MainChannel::ActionDependent(CondPmf::new(vec![2, 2, 1, 2], vec![2], main).expect("valid")),
    }
}

/// Assembles the five-variable channel joint
/// `P_A P_{Se,Sd|A} P_{X|A,Se} P_{Y|X,Se,Sd(,A)}` over (A, Se, Sd, X, Y).
pub fn assemble_channel_joint(
    spec: &ChannelSpec,
    p_a: &Pmf,
    p_x: &CondPmf,
) -> Result<JointDist, ChannelError> {
    spec.validate()?;
    if p_a.len() != spec.a_size {
        return Err(ChannelError::Dimension("P_A length".into()));
    }
    if p_x.cond_sizes() != [spec.a_size, spec.se_size] || p_x.out_sizes() != [spec.x_size] {
        return Err(ChannelError::Dimension("P_{X|A,Se} shape".into()));
    }
    let mut params = p_a.probs().to_vec();
    params.extend_from_slice(p_x.table());
    let mut probs = Vec::new();
    assemble_channel_into(spec, &params, &mut probs);
    Ok(JointDist::new(
        CHANNEL_VARS.to_vec(),
        vec![spec.a_size, spec.se_size, spec.sd_size, spec.x_size, spec.y_size],
        probs,
    )?)
}

/// Raw assembly from the stacked parameter vector `[P_A | P_{X|A,Se}]`,
/// clamping negative probe values to zero.
fn assemble_channel_into(spec: &ChannelSpec, params: &[f64], probs: &mut Vec<f64>) {
    let (na, nse, nsd, nx, ny) =
        (spec.a_size, spec.se_size, spec.sd_size, spec.x_size, spec.y_size);
    let (p_a, p_x) = params.split_at(na);
    probs.clear();
    probs.resize(na * nse * nsd * nx * ny, 0.0);
    let state = spec.state_channel.table();
    let mut idx = 0;
    for a in 0..na {
        let pa = p_a[a].max(0.0);
        for se in 0..nse {
            for sd in 0..nsd {
                let ps = state[(a * nse + se) * nsd + sd];
                let base0 = pa * ps;
                for x in 0..nx {
                    let px = p_x[(a * nse + se) * nx + x].max(0.0);
                    let base = base0 * px;
                    for y in 0..ny {
                        probs[idx] = base * spec.main_prob(x, se, sd, a, y);
                        idx += 1;
                    }
                }
            }
        }
    }
}

// Marginal layout over (A, Se, Sd, X, Y) — shared by every capacity
// objective; the message solver reuses it with U in X's slot.
const CM_A: usize = 0; //    [A]
const CM_ASE: usize = 1; //  [A,Se]
const CM_ASEX: usize = 2; // [A,Se,X]
const CM_YSD: usize = 3; //  [Sd,Y]
const CM_AYSD: usize = 4; // [A,Sd,Y]
const CM_AXYSD: usize = 5; // [A,Sd,X,Y]
const CM_SE: usize = 6; //   [Se]
const CM_X: usize = 7; //    [X]
const CM_Y: usize = 8; //    [Y]
const CM_XY: usize = 9; //   [X,Y]
const CM_SEX: usize = 10; // [Se,X]

fn channel_marginal_set(sizes: &[usize; 5]) -> MarginalSet {
    MarginalSet::new(
        sizes,
        &[
            &[0],
            &[0, 1],
            &[0, 1, 3],
            &[2, 4],
            &[0, 2, 4],
            &[0, 2, 3, 4],
            &[1],
            &[3],
            &[4],
            &[3, 4],
            &[1, 3],
        ],
    )
}

struct ChanState {
    params: Vec<f64>,
    probs: Vec<f64>,
    marginals: MarginalSet,
}

/// Fused evaluator for all single-letter capacity objectives over the
/// assembled (A, Se, Sd, X, Y) joint.
struct ChanEval<'a> {
    spec: &'a ChannelSpec,
    state: std::cell::RefCell<ChanState>,
}

impl<'a> ChanEval<'a> {
    fn new(spec: &'a ChannelSpec) -> Self {
        let sizes = [spec.a_size, spec.se_size, spec.sd_size, spec.x_size, spec.y_size];
        ChanEval {
            spec,
            state: std::cell::RefCell::new(ChanState {
                params: Vec::new(),
                probs: Vec::new(),
                marginals: channel_marginal_set(&sizes),
            }),
        }
    }

    fn ensure(&self, params: &[f64]) {
        let st = &mut *self.state.borrow_mut();
        if st.params.as_slice() == params && !st.probs.is_empty() {
            return;
        }
        assemble_channel_into(self.spec, params, &mut st.probs);
        st.marginals.accumulate(&st.probs);
        st.params.clear();
        st.params.extend_from_slice(params);
    }

    /// I(A,X; Y,Sd) - I(X; Se|A)
    fn objective_ri(&self, params: &[f64]) -> f64 {
        self.ensure(params);
        let st = self.state.borrow();
        let m = &st.marginals;
        m.entropy(CM_YSD) - m.entropy(CM_AXYSD) - m.entropy(CM_ASE) + m.entropy(CM_ASEX)
            + m.entropy(CM_A)
    }

    /// The two-stage coding condition slack I(X; Y,Sd|A) - I(X; Se|A).
    fn slack_ri(&self, params: &[f64]) -> f64 {
        self.ensure(params);
        let st = self.state.borrow();
        let m = &st.marginals;
        m.entropy(CM_AYSD) - m.entropy(CM_AXYSD) - m.entropy(CM_ASE) + m.entropy(CM_ASEX)
    }

    /// I(A,Se,X; Y,Sd) - H(Se|A)
    fn objective_se(&self, params: &[f64]) -> f64 {
        self.ensure(params);
        let st = self.state.borrow();
        let m = &st.marginals;
        m.entropy(CM_ASEX) + m.entropy(CM_YSD) - entropy_bits(&st.probs) - m.entropy(CM_ASE)
            + m.entropy(CM_A)
    }

    /// I(Se,X; Y,Sd|A) - H(Se|A)
    fn slack_se(&self, params: &[f64]) -> f64 {
        self.ensure(params);
        let st = self.state.borrow();
        let m = &st.marginals;
        m.entropy(CM_ASEX) + m.entropy(CM_AYSD) - entropy_bits(&st.probs) - m.entropy(CM_ASE)
    }

    /// I(X;Y) - I(X;Se), for the degenerate no-action stegotext case.
    fn objective_stego(&self, params: &[f64]) -> f64 {
        self.ensure(params);
        let st = self.state.borrow();
        let m = &st.marginals;
        m.entropy(CM_Y) - m.entropy(CM_XY) - m.entropy(CM_SE) + m.entropy(CM_SEX)
    }
}

pub const U_SIZE_CAP: usize = 16;

/// Enumerating every deterministic map `f: U x Se -> X` is exact but
/// exponential; beyond this many maps the map is relaxed to a stochastic
/// conditional, which upper-bounds the message-only capacity.
pub const F_MAP_ENUM_CAP: usize = 4096;

#[derive(Debug, Clone)]
pub struct CapOpts {
    pub opt: OptOpts,
    /// Auxiliary alphabet size for the message-only solver; defaults to the
    /// cardinality bound |A||Se||X|+1, capped at [`U_SIZE_CAP`].
    pub u_size: Option<usize>,
    /// When true (default), constrained solvers also solve the relaxed
    /// problem to classify whether the condition is active.
    pub classify_activity: bool,
}

impl Default for CapOpts {
    fn default() -> Self {
        CapOpts { opt: OptOpts::default(), u_size: None, classify_activity: true }
    }
}

impl CapOpts {
    pub fn with_starts(starts: usize) -> Self {
        CapOpts { opt: OptOpts::with_starts(starts), ..CapOpts::default() }
    }
}

/// Threshold on the unconstrained optimum's slack below which the two-stage
/// coding condition is classified as active.
pub const ACTIVITY_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct CapResult {
    /// Capacity in bits, clamped to `[0, log2(|Y| |Sd|)]`.
    pub capacity: f64,
    pub arg_p_a: Pmf,
    /// P_{X|A,Se}; for the message-only solver this is the induced input
    /// conditional.
    pub arg_p_x: CondPmf,
    /// P_{U|A,Se} when an auxiliary variable is involved.
    pub arg_p_u: Option<CondPmf>,
    /// Deterministic map `[u][se] -> x` when the message-only solver ran in
    /// enumerated mode.
    pub f_map: Option<Vec<usize>>,
    /// Two-stage condition slack at the returned argument.
    pub slack: f64,
    /// True when the relaxed optimum violates the condition, i.e. the
    /// condition actively restricts the capacity-achieving distributions.
    pub condition_active: bool,
    pub unconstrained_value: Option<f64>,
    /// State-recovery solver only: no input distribution satisfied the
    /// lossless-state condition, and the capacity is reported as zero.
    pub infeasible: bool,
    /// Message-only solver only: the deterministic map was relaxed to a
    /// stochastic conditional (upper bound).
    pub relaxed: bool,
    pub converged: bool,
    pub starts_used: usize,
    pub iterations: usize,
    pub multimodal: bool,
}

fn cap_bound(spec: &ChannelSpec) -> f64 {
    ((spec.y_size * spec.sd_size) as f64).log2()
}

fn split_params(spec: &ChannelSpec, params: &[f64]) -> (Pmf, CondPmf) {
    let (pa, px) = params.split_at(spec.a_size);
    (
        Pmf::new(pa.to_vec()).expect("projected argument"),
        CondPmf::new(vec![spec.a_size, spec.se_size], vec![spec.x_size], px.to_vec())
            .expect("projected argument"),
    )
}

fn ri_shape(spec: &ChannelSpec) -> SimplexShape {
    SimplexShape::new(vec![(1, spec.a_size), (spec.a_size * spec.se_size, spec.x_size)])
}

fn solve_ri_family(
    spec: &ChannelSpec,
    opts: &CapOpts,
    constrained: bool,
) -> Result<(crate::opt::OptResult, f64), ChannelError> {
    let eval = std::rc::Rc::new(ChanEval::new(spec));
    let (e1, e2) = (eval.clone(), eval.clone());
    let problem = OptProblem {
        shape: ri_shape(spec),
        sense: Sense::Maximize,
        objective: Box::new(move |p: &[f64]| e1.objective_ri(p)),
        constraints: if constrained {
            vec![Box::new(move |p: &[f64]| e2.slack_ri(p))]
        } else {
            Vec::new()
        },
    };
    let res = optimize(&problem, &opts.opt)?;
    let slack = eval.slack_ri(&res.argument);
    Ok((res, slack))
}

/// Capacity with the reversible-input requirement: maximizes
/// `I(A,X;Y,Sd) - I(X;Se|A)` over P_A, P_{X|A,Se} subject to the two-stage
/// coding condition `I(X;Y,Sd|A) - I(X;Se|A) >= 0`.
pub fn capacity_ri(spec: &ChannelSpec, opts: &CapOpts) -> Result<CapResult, ChannelError> {
    spec.validate()?;
    let (res, slack) = solve_ri_family(spec, opts, true)?;
    let mut condition_active = false;
    let mut unconstrained_value = None;
    if opts.classify_activity {
        let mut relaxed_opts = opts.clone();
        relaxed_opts.classify_activity = false;
        relaxed_opts.opt.warm_starts.push(res.argument.clone());
        let (ures, uslack) = solve_ri_family(spec, &relaxed_opts, false)?;
        condition_active = uslack < -ACTIVITY_THRESHOLD;
        unconstrained_value = Some(ures.value.clamp(0.0, cap_bound(spec)));
    }
    let (arg_p_a, arg_p_x) = split_params(spec, &res.argument);
    Ok(CapResult {
        capacity: res.value.clamp(0.0, cap_bound(spec)),
        arg_p_a,
        arg_p_x,
        arg_p_u: None,
        f_map: None,
        slack,
        condition_active,
        unconstrained_value,
        infeasible: false,
        relaxed: false,
        converged: res.converged,
        starts_used: res.starts_used,
        iterations: res.iterations,
        multimodal: res.multimodal,
    })
}

/// The same objective without the two-stage coding condition; its argmax
/// slack classifies whether the condition is active.
pub fn capacity_unconstrained(
    spec: &ChannelSpec,
    opts: &CapOpts,
) -> Result<CapResult, ChannelError> {
    spec.validate()?;
    let (res, slack) = solve_ri_family(spec, opts, false)?;
    let (arg_p_a, arg_p_x) = split_params(spec, &res.argument);
    Ok(CapResult {
        capacity: res.value.clamp(0.0, cap_bound(spec)),
        arg_p_a,
        arg_p_x,
        arg_p_u: None,
        f_map: None,
        slack,
        condition_active: slack < -ACTIVITY_THRESHOLD,
        unconstrained_value: Some(res.value.clamp(0.0, cap_bound(spec))),
        infeasible: false,
        relaxed: false,
        converged: res.converged,
        starts_used: res.starts_used,
        iterations: res.iterations,
        multimodal: res.multimodal,
    })
}

/// Capacity when the decoder must also reproduce the encoder state
/// losslessly: `max I(A,Se,X;Y,Sd) - H(Se|A)` subject to
/// `I(Se,X;Y,Sd|A) - H(Se|A) >= 0`. The feasible set can be empty, in which
/// case rate zero is reported with the `infeasible` flag.
pub fn capacity_state_recovery(
    spec: &ChannelSpec,
    opts: &CapOpts,
) -> Result<CapResult, ChannelError> {
    spec.validate()?;
    let eval = std::rc::Rc::new(ChanEval::new(spec));
    let (e1, e2) = (eval.clone(), eval.clone());
    let problem = OptProblem {
        shape: ri_shape(spec),
        sense: Sense::Maximize,
        objective: Box::new(move |p: &[f64]| e1.objective_se(p)),
        constraints: vec![Box::new(move |p: &[f64]| e2.slack_se(p))],
    };
    match optimize(&problem, &opts.opt) {
        Ok(res) => {
            let slack = eval.slack_se(&res.argument);
            let (arg_p_a, arg_p_x) = split_params(spec, &res.argument);
            Ok(CapResult {
                capacity: res.value.clamp(0.0, cap_bound(spec)),
                arg_p_a,
                arg_p_x,
                arg_p_u: None,
                f_map: None,
                slack,
                condition_active: res.active_flags.first().copied().unwrap_or(false),
                unconstrained_value: None,
                infeasible: false,
                relaxed: false,
                converged: res.converged,
                starts_used: res.starts_used,
                iterations: res.iterations,
                multimodal: res.multimodal,
            })
        }
        Err(OptError::NoFeasibleStart) => {
            // Rate zero is always operationally achievable.
            let uniform = ri_shape(spec).uniform_point();
            let slack = eval.slack_se(&uniform);
            let (arg_p_a, arg_p_x) = split_params(spec, &uniform);
            Ok(CapResult {
                capacity: 0.0,
                arg_p_a,
                arg_p_x,
                arg_p_u: None,
                f_map: None,
                slack,
                condition_active: false,
                unconstrained_value: None,
                infeasible: true,
                relaxed: false,
                converged: true,
                starts_used: opts.opt.starts,
                iterations: 0,
                multimodal: false,
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// The no-action, no-decoder-state special case (reversible stegotext):
/// `max I(X;Y) - I(X;Se)` over P_{X|Se}.
pub fn capacity_stegotext(
    spec: &ChannelSpec,
    opts: &CapOpts,
) -> Result<CapResult, ChannelError> {
    spec.validate()?;
    if spec.a_size != 1 {
        return Err(ChannelError::NotDegenerate("action alphabet must have size 1"));
    }
    if spec.sd_size != 1 {
        return Err(ChannelError::NotDegenerate("decoder state alphabet must have size 1"));
    }
    let eval = std::rc::Rc::new(ChanEval::new(spec));
    let e1 = eval.clone();
    let na = spec.a_size;
    let problem = OptProblem {
        // P_A is the trivial one-point distribution; optimize P_{X|Se} only.
        shape: SimplexShape::new(vec![(spec.se_size, spec.x_size)]),
        sense: Sense::Maximize,
        objective: Box::new(move |p: &[f64]| {
            let mut params = vec![1.0; na];
            params.extend_from_slice(p);
            e1.objective_stego(&params)
        }),
        constraints: Vec::new(),
    };
    let res = optimize(&problem, &opts.opt)?;
    let mut params = vec![1.0; na];
    params.extend_from_slice(&res.argument);
    let slack = eval.slack_ri(&params);
    let (arg_p_a, arg_p_x) = split_params(spec, &params);
    Ok(CapResult {
        capacity: res.value.clamp(0.0, cap_bound(spec)),
        arg_p_a,
        arg_p_x,
        arg_p_u: None,
        f_map: None,
        slack,
        condition_active: false,
        unconstrained_value: None,
        infeasible: false,
        relaxed: false,
        converged: res.converged,
        starts_used: res.starts_used,
        iterations: res.iterations,
        multimodal: res.multimodal,
    })
}

// ---------------------------------------------------------------------------
// Message-only capacity (no reversible-input requirement)
// ---------------------------------------------------------------------------

struct MsgEval<'a> {
    spec: &'a ChannelSpec,
    u_size: usize,
    /// Deterministic map `[u][se] -> x`, or None for the relaxed variant
    /// with a stochastic P_{X|U,Se} block appended to the parameters.
    f_map: Option<Vec<usize>>,
    state: std::cell::RefCell<ChanState>,
}

impl<'a> MsgEval<'a> {
    fn new(spec: &'a ChannelSpec, u_size: usize, f_map: Option<Vec<usize>>) -> Self {
        let sizes = [spec.a_size, spec.se_size, spec.sd_size, u_size, spec.y_size];
        MsgEval {
            spec,
            u_size,
            f_map,
            state: std::cell::RefCell::new(ChanState {
                params: Vec::new(),
                probs: Vec::new(),
                marginals: channel_marginal_set(&sizes),
            }),
        }
    }

    fn pu_len(&self) -> usize {
        self.spec.a_size * self.spec.se_size * self.u_size
    }

    /// Joint over (A, Se, Sd, U, Y) with X integrated out through the map or
    /// the stochastic conditional.
    fn assemble(&self, params: &[f64], probs: &mut Vec<f64>) {
        let spec = self.spec;
        let (na, nse, nsd, nu, nx, ny) =
            (spec.a_size, spec.se_size, spec.sd_size, self.u_size, spec.x_size, spec.y_size);
        let p_a = &params[..na];
        let p_u = &params[na..na + self.pu_len()];
        let p_xgu = &params[na + self.pu_len()..];
        probs.clear();
        probs.resize(na * nse * nsd * nu * ny, 0.0);
        let state = spec.state_channel.table();
        let mut idx = 0;
        for a in 0..na {
            let pa = p_a[a].max(0.0);
            for se in 0..nse {
                for sd in 0..nsd {
                    let ps = state[(a * nse + se) * nsd + sd];
                    let base0 = pa * ps;
                    for u in 0..nu {
                        let pu = p_u[(a * nse + se) * nu + u].max(0.0);
                        let base = base0 * pu;
                        match &self.f_map {
                            Some(f) => {
                                let x = f[u * nse + se];
                                for y in 0..ny {
                                    probs[idx] = base * spec.main_prob(x, se, sd, a, y);
                                    idx += 1;
                                }
                            }
                            None => {
                                for y in 0..ny {
                                    let mut py = 0.0;
                                    for x in 0..nx {
                                        py += p_xgu[(u * nse + se) * nx + x].max(0.0)
                                            * spec.main_prob(x, se, sd, a, y);
                                    }
                                    probs[idx] = base * py;
                                    idx += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn ensure(&self, params: &[f64]) {
        let st = &mut *self.state.borrow_mut();
        if st.params.as_slice() == params && !st.probs.is_empty() {
            return;
        }
        let mut probs = std::mem::take(&mut st.probs);
        self.assemble(params, &mut probs);
        st.marginals.accumulate(&probs);
        st.probs = probs;
        st.params.clear();
        st.params.extend_from_slice(params);
    }

    /// I(A,U; Y,Sd) - I(U; Se|A)
    fn objective(&self, params: &[f64]) -> f64 {
        self.ensure(params);
        let st = self.state.borrow();
        let m = &st.marginals;
        m.entropy(CM_YSD) - m.entropy(CM_AXYSD) - m.entropy(CM_ASE) + m.entropy(CM_ASEX)
            + m.entropy(CM_A)
    }
}

fn msg_shape(spec: &ChannelSpec, u_size: usize, relaxed: bool) -> SimplexShape {
    let mut blocks = vec![(1, spec.a_size), (spec.a_size * spec.se_size, u_size)];
    if relaxed {
        blocks.push((u_size * spec.se_size, spec.x_size));
    }
    SimplexShape::new(blocks)
}

/// Lifts a reversible-input solution into the message-only parameterization
/// (U := X), preserving the objective value exactly.
fn embed_ri_in_message(
    spec: &ChannelSpec,
    ri: &CapResult,
    u_size: usize,
    relaxed: bool,
) -> Option<Vec<f64>> {
    if u_size < spec.x_size {
        return None;
    }
    let mut v = ri.arg_p_a.probs().to_vec();
    let groups = spec.a_size * spec.se_size;
    let mut pu = vec![0.0; groups * u_size];
    for g in 0..groups {
        for x in 0..spec.x_size {
            pu[g * u_size + x] = ri.arg_p_x.table()[g * spec.x_size + x];
        }
    }
    v.extend_from_slice(&pu);
    if relaxed {
        let mut pxgu = vec![0.0; u_size * spec.se_size * spec.x_size];
        for u in 0..u_size {
            for se in 0..spec.se_size {
                let x = u.min(spec.x_size - 1);
                pxgu[(u * spec.se_size + se) * spec.x_size + x] = 1.0;
            }
        }
        v.extend_from_slice(&pxgu);
    }
    Some(v)
}

/// The projection map f(u, se) = min(u, |X|-1), which realizes U := X.
fn projection_map(spec: &ChannelSpec, u_size: usize) -> Vec<usize> {
    let mut f = vec![0usize; u_size * spec.se_size];
    for u in 0..u_size {
        for se in 0..spec.se_size {
            f[u * spec.se_size + se] = u.min(spec.x_size - 1);
        }
    }
    f
}

/// Capacity without the reversible-input requirement:
/// `max I(A,U;Y,Sd) - I(U;Se|A)` over P_A, P_{U|A,Se}, and a deterministic
/// map f: U x Se -> X. Maps are enumerated exactly when their count fits
/// [`F_MAP_ENUM_CAP`]; otherwise the map is relaxed to a stochastic
/// conditional and the result flagged `relaxed` (an upper bound).
pub fn capacity_message_only(
    spec: &ChannelSpec,
    opts: &CapOpts,
) -> Result<CapResult, ChannelError> {
    spec.validate()?;
    let bound = spec.a_size * spec.se_size * spec.x_size + 1;
    let u_size = opts.u_size.unwrap_or_else(|| bound.min(U_SIZE_CAP));
    if u_size > U_SIZE_CAP {
        return Err(ChannelError::USizeCap { requested: u_size, cap: U_SIZE_CAP });
    }
    // Internal reversible-input solution, used to seed U := X.
    let ri = capacity_ri(spec, &CapOpts { classify_activity: false, ..opts.clone() })?;

    let map_cells = u_size * spec.se_size;
    let n_maps = (spec.x_size as f64).powi(map_cells as i32);
    let enumerated = n_maps <= F_MAP_ENUM_CAP as f64;

    if !enumerated {
        let mut opt_opts = opts.opt.clone();
        if let Some(w) = embed_ri_in_message(spec, &ri, u_size, true) {
            opt_opts.warm_starts.push(w);
        }
        let eval = std::rc::Rc::new(MsgEval::new(spec, u_size, None));
        let e1 = eval.clone();
        let problem = OptProblem {
            shape: msg_shape(spec, u_size, true),
            sense: Sense::Maximize,
            objective: Box::new(move |p: &[f64]| e1.objective(p)),
            constraints: Vec::new(),
        };
        let res = optimize(&problem, &opt_opts)?;
        return Ok(message_result(spec, u_size, None, &res, &eval, true));
    }

    // Exact map enumeration: score every map with a small start budget,
    // then polish the best few (and always the projection map) fully.
    let n_maps = n_maps as usize;
    let quick = OptOpts { starts: (opts.opt.starts / 16).max(2), ..opts.opt.clone() };
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n_maps);
    for flat in 0..n_maps {
        let f = decode_map(flat, map_cells, spec.x_size);
        let eval = std::rc::Rc::new(MsgEval::new(spec, u_size, Some(f)));
        let e1 = eval.clone();
        let problem = OptProblem {
            shape: msg_shape(spec, u_size, false),
            sense: Sense::Maximize,
            objective: Box::new(move |p: &[f64]| e1.objective(p)),
            constraints: Vec::new(),
        };
        let value = optimize(&problem, &quick).map(|r| r.value).unwrap_or(f64::NEG_INFINITY);
        scored.push((value, flat));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut finalists: Vec<usize> = scored.iter().take(3).map(|&(_, f)| f).collect();
    let proj_flat = encode_map(&projection_map(spec, u_size), spec.x_size);
    if !finalists.contains(&proj_flat) {
        finalists.push(proj_flat);
    }

    let mut best: Option<(crate::opt::OptResult, Vec<usize>)> = None;
    for flat in finalists {
        let f = decode_map(flat, map_cells, spec.x_size);
        let mut opt_opts = opts.opt.clone();
        if flat == proj_flat {
            if let Some(w) = embed_ri_in_message(spec, &ri, u_size, false) {
                opt_opts.warm_starts.push(w);
            }
        }
        let eval = std::rc::Rc::new(MsgEval::new(spec, u_size, Some(f.clone())));
        let e1 = eval.clone();
        let problem = OptProblem {
            shape: msg_shape(spec, u_size, false),
            sense: Sense::Maximize,
            objective: Box::new(move |p: &[f64]| e1.objective(p)),
            constraints: Vec::new(),
        };
        if let Ok(res) = optimize(&problem, &opt_opts) {
            let better = best.as_ref().map_or(true, |(b, _)| res.value > b.value);
            if better {
                best = Some((res, f));
            }
        }
    }
    let (res, f) = best.ok_or(OptError::NoFeasibleStart)?;
    let eval = MsgEval::new(spec, u_size, Some(f.clone()));
    Ok(message_result(spec, u_size, Some(f), &res, &eval, false))
}

fn decode_map(mut flat: usize, cells: usize, x_size: usize) -> Vec<usize> {
    let mut f = vec![0usize; cells];
    for slot in f.iter_mut() {
        *slot = flat % x_size;
        flat /= x_size;
    }
    f
}

fn encode_map(f: &[usize], x_size: usize) -> usize {
    let mut flat = 0usize;
    for &x in f.iter().rev() {
        flat = flat * x_size + x;
    }
    flat
}

fn message_result(
    spec: &ChannelSpec,
    u_size: usize,
    f_map: Option<Vec<usize>>,
    res: &crate::opt::OptResult,
    eval: &MsgEval,
    relaxed: bool,
) -> CapResult {
    let na = spec.a_size;
    let p_a = Pmf::new(res.argument[..na].to_vec()).expect("projected argument");
    let pu_len = eval.pu_len();
    let p_u = CondPmf::new(
        vec![spec.a_size, spec.se_size],
        vec![u_size],
        res.argument[na..na + pu_len].to_vec(),
    )
    .expect("projected argument");
    // Induced input conditional P(x|a,se) = sum_u P(u|a,se) P(x|u,se).
    let mut px = vec![0.0; spec.a_size * spec.se_size * spec.x_size];
    for a in 0..spec.a_size {
        for se in 0..spec.se_size {
            for u in 0..u_size {
                let pu = p_u.prob(a * spec.se_size + se, u);
                match &f_map {
                    Some(f) => px[(a * spec.se_size + se) * spec.x_size + f[u * spec.se_size + se]] += pu,
                    None => {
                        let p_xgu = &res.argument[na + pu_len..];
                        for x in 0..spec.x_size {
                            px[(a * spec.se_size + se) * spec.x_size + x] +=
                                pu * p_xgu[(u * spec.se_size + se) * spec.x_size + x].max(0.0);
                        }
                    }
                }
            }
        }
    }
    // Mixing can leave tiny normalization drift; rescale each row.
    for g in 0..spec.a_size * spec.se_size {
        let row = &mut px[g * spec.x_size..(g + 1) * spec.x_size];
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / spec.x_size as f64);
        }
    }
    let arg_p_x =
        CondPmf::new(vec![spec.a_size, spec.se_size], vec![spec.x_size], px).expect("normalized");
    CapResult {
        capacity: res.value.clamp(0.0, cap_bound(spec)),
        arg_p_a: p_a,
        arg_p_x,
        arg_p_u: Some(p_u),
        f_map,
        slack: 0.0,
        condition_active: false,
        unconstrained_value: None,
        infeasible: false,
        relaxed,
        converged: res.converged,
        starts_used: res.starts_used,
        iterations: res.iterations,
        multimodal: res.multimodal,
    }
}

// ---------------------------------------------------------------------------
// Structural analysis operations
// ---------------------------------------------------------------------------

/// The two-stage coding condition slack `I(X;Y,Sd|A) - I(X;Se|A)` of an
/// arbitrary joint over (A, Se, Sd, X, Y).
pub fn condition_slack(joint: &JointDist) -> Result<f64, InfoError> {
    let i1 = joint.mutual_information(&[Var::X], &[Var::Y, Var::Sd], &[Var::A])?;
    let i2 = joint.mutual_information(&[Var::X], &[Var::Se], &[Var::A])?;
    Ok(i1 - i2)
}

/// Both sides of the state-recovery comparison
/// `I(Se,X;Y,Sd|A) - H(Se|A) <= I(X;Y,Sd|A) - I(X;Se|A)`;
/// the gap between them is `H(Se|X,Y,Sd,A) >= 0`, so the inequality holds
/// for every joint.
pub fn remark3_gap(joint: &JointDist) -> Result<(f64, f64), InfoError> {
    let lhs = joint.mutual_information(&[Var::Se, Var::X], &[Var::Y, Var::Sd], &[Var::A])?
        - joint.entropy(&[Var::Se], &[Var::A])?;
    let rhs = condition_slack(joint)?;
    Ok((lhs, rhs))
}

/// Outcome of [`degenerate_improve`].
#[derive(Debug, Clone)]
pub struct DegenerateImprovement {
    /// The state-averaged input conditional (independent of Se given A).
    pub p_x2: CondPmf,
    pub rate1: f64,
    pub rate2: f64,
    pub slack1: f64,
    pub slack2: f64,
}

fn max_factorization_violation(spec: &ChannelSpec) -> f64 {
    // Se - A - Sd within the state channel.
    let (na, nse, nsd) = (spec.a_size, spec.se_size, spec.sd_size);
    let t = spec.state_channel.table();
    let mut worst = 0.0f64;
    for a in 0..na {
        for se in 0..nse {
            let p_se: f64 = (0..nsd).map(|sd| t[(a * nse + se) * nsd + sd]).sum();
            for sd in 0..nsd {
                let p_sd: f64 = (0..nse).map(|s| t[(a * nse + s) * nsd + sd]).sum();
                worst = worst.max((t[(a * nse + se) * nsd + sd] - p_se * p_sd).abs());
            }
        }
    }
    worst
}

fn max_se_dependence(spec: &ChannelSpec) -> f64 {
    let mut worst = 0.0f64;
    for x in 0..spec.x_size {
        for sd in 0..spec.sd_size {
            for a in 0..spec.a_size {
                for y in 0..spec.y_size {
                    let p0 = spec.main_prob(x, 0, sd, a, y);
                    for se in 1..spec.se_size {
                        worst = worst.max((spec.main_prob(x, se, sd, a, y) - p0).abs());
                    }
                }
            }
        }
    }
    worst
}

/// When Se - A - Sd holds for the state channel and the main channel ignores
/// Se, averaging any input conditional over the state
/// (`P2(x|a,se) = sum_s P(s|a) P1(x|a,s)`) restores a nonnegative two-stage
/// slack without losing rate. Returns both rates and slacks for comparison.
pub fn degenerate_improve(
    spec: &ChannelSpec,
    p_a: &Pmf,
    p_x1: &CondPmf,
) -> Result<DegenerateImprovement, ChannelError> {
    spec.validate()?;
    let v = max_factorization_violation(spec);
    if v > 1e-9 {
        return Err(ChannelError::MarkovPrecondition("Se - A - Sd", v));
    }
    let v = max_se_dependence(spec);
    if v > 1e-9 {
        return Err(ChannelError::MarkovPrecondition("Y - (X, Sd, A) - Se", v));
    }
    if p_a.len() != spec.a_size
        || p_x1.cond_sizes() != [spec.a_size, spec.se_size]
        || p_x1.out_sizes() != [spec.x_size]
    {
        return Err(ChannelError::Dimension("P_A / P_{X|A,Se} shape".into()));
    }
    let (na, nse, nx) = (spec.a_size, spec.se_size, spec.x_size);
    // P(se|a) marginal of the state channel.
    let mut p_se = vec![0.0; na * nse];
    for a in 0..na {
        for se in 0..nse {
            p_se[a * nse + se] = (0..spec.sd_size)
                .map(|sd| spec.state_channel.table()[(a * nse + se) * spec.sd_size + sd])
                .sum();
        }
    }
    let mut px2 = vec![0.0; na * nse * nx];
    for a in 0..na {
        for x in 0..nx {
            let avg: f64 =
                (0..nse).map(|se| p_se[a * nse + se] * p_x1.prob(a * nse + se, x)).sum();
            for se in 0..nse {
                px2[(a * nse + se) * nx + x] = avg;
            }
        }
    }
    let p_x2 = CondPmf::new(vec![na, nse], vec![nx], px2).expect("averaged conditional");

    let eval = ChanEval::new(spec);
    let mut params1 = p_a.probs().to_vec();
    params1.extend_from_slice(p_x1.table());
    let mut params2 = p_a.probs().to_vec();
    params2.extend_from_slice(p_x2.table());
    Ok(DegenerateImprovement {
        rate1: eval.objective_ri(&params1),
        slack1: eval.slack_ri(&params1),
        rate2: eval.objective_ri(&params2),
        slack2: eval.slack_ri(&params2),
        p_x2,
    })
}

/// Outcome of [`rmod_mixture_check`]: the mixture's objective and slack must
/// dominate the convex combination of the parts'.
#[derive(Debug, Clone, Copy)]
pub struct MixtureCheck {
    pub obj_mix: f64,
    pub slack_mix: f64,
    pub obj_combo: f64,
    pub slack_combo: f64,
}

impl MixtureCheck {
    pub fn obj_violation(&self) -> f64 {
        (self.obj_combo - self.obj_mix).max(0.0)
    }

    pub fn slack_violation(&self) -> f64 {
        (self.slack_combo - self.slack_mix).max(0.0)
    }
}

/// Mixes two input designs with weight `alpha` (the mixture of the two
/// assembled joints is itself properly factorized) and evaluates the
/// rate/slack superadditivity used to show the modified rate region convex.
pub fn rmod_mixture_check(
    spec: &ChannelSpec,
    p1: (&Pmf, &CondPmf),
    p2: (&Pmf, &CondPmf),
    alpha: f64,
) -> Result<MixtureCheck, ChannelError> {
    spec.validate()?;
    let j1 = assemble_channel_joint(spec, p1.0, p1.1)?;
    let j2 = assemble_channel_joint(spec, p2.0, p2.1)?;
    let mixed: Vec<f64> = j1
        .probs()
        .iter()
        .zip(j2.probs())
        .map(|(&a, &b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    let jm = JointDist::new_unchecked(j1.vars().to_vec(), j1.sizes().to_vec(), mixed);
    let obj = |j: &JointDist| -> Result<f64, InfoError> {
        Ok(j.mutual_information(&[Var::A, Var::X], &[Var::Y, Var::Sd], &[])?
            - j.mutual_information(&[Var::X], &[Var::Se], &[Var::A])?)
    };
    let (o1, o2, om) = (obj(&j1)?, obj(&j2)?, obj(&jm)?);
    let (s1, s2, sm) =
        (condition_slack(&j1)?, condition_slack(&j2)?, condition_slack(&jm)?);
    Ok(MixtureCheck {
        obj_mix: om,
        slack_mix: sm,
        obj_combo: alpha * o1 + (1.0 - alpha) * o2,
        slack_combo: alpha * s1 + (1.0 - alpha) * s2,
    })
}

// ---------------------------------------------------------------------------
// Strategy registry
// ---------------------------------------------------------------------------

/// A named capacity variant, selectable at runtime (`--mode` on the CLI).
pub trait CapacitySolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, spec: &ChannelSpec, opts: &CapOpts) -> Result<CapResult, ChannelError>;
}

struct RiSolver;
struct UnconstrainedSolver;
struct MessageOnlySolver;
struct StateRecoverySolver;
struct StegotextSolver;

impl CapacitySolver for RiSolver {
    fn name(&self) -> &'static str {
        "ri"
    }
    fn solve(&self, spec: &ChannelSpec, opts: &CapOpts) -> Result<CapResult, ChannelError> {
        capacity_ri(spec, opts)
    }
}

impl CapacitySolver for UnconstrainedSolver {
    fn name(&self) -> &'static str {
        "unconstrained"
    }
    fn solve(&self, spec: &ChannelSpec, opts: &CapOpts) -> Result<CapResult, ChannelError> {
        capacity_unconstrained(spec, opts)
    }
}

impl CapacitySolver for MessageOnlySolver {
    fn name(&self) -> &'static str {
        "message"
    }
    fn solve(&self, spec: &ChannelSpec, opts: &CapOpts) -> Result<CapResult, ChannelError> {
        capacity_message_only(spec, opts)
    }
}

impl CapacitySolver for StateRecoverySolver {
    fn name(&self) -> &'static str {
        "state"
    }
    fn solve(&self, spec: &ChannelSpec, opts: &CapOpts) -> Result<CapResult, ChannelError> {
        capacity_state_recovery(spec, opts)
    }
}

impl CapacitySolver for StegotextSolver {
    fn name(&self) -> &'static str {
        "stegotext"
    }
    fn solve(&self, spec: &ChannelSpec, opts: &CapOpts) -> Result<CapResult, ChannelError> {
        capacity_stegotext(spec, opts)
    }
}

static CAPACITY_SOLVERS: [&dyn CapacitySolver; 5] = [
    &RiSolver,
    &UnconstrainedSolver,
    &MessageOnlySolver,
    &StateRecoverySolver,
    &StegotextSolver,
];

pub fn capacity_solvers() -> &'static [&'static dyn CapacitySolver] {
    &CAPACITY_SOLVERS
}

pub fn capacity_solver(name: &str) -> Option<&'static dyn CapacitySolver> {
    CAPACITY_SOLVERS.iter().copied().find(|s| s.name() == name)
}

/// Lifts an argument for an action-dependent spec into its
/// [`ChannelSpec::to_standard`] transform (useful as a warm start).
pub fn lift_argument_to_standard(
    spec: &ChannelSpec,
    p_a: &Pmf,
    p_x: &CondPmf,
) -> (Pmf, CondPmf) {
    let (na, nse, nx) = (spec.a_size, spec.se_size, spec.x_size);
    let nse2 = nse * na;
    let mut px2 = vec![0.0; na * nse2 * nx];
    for a in 0..na {
        for se in 0..nse {
            for ap in 0..na {
                for x in 0..nx {
                    // On-support cells (ap == a) copy the original; the rest
                    // never occur and keep the same row for definiteness.
                    px2[(a * nse2 + (se * na + ap)) * nx + x] = p_x.prob(a * nse + se, x);
                }
            }
        }
    }
    (
        p_a.clone(),
        CondPmf::new(vec![na, nse2], vec![nx], px2).expect("lifted argument"),
    )
}

/// Restricts a transformed-spec argument back to the action-dependent
/// parameterization by reading the on-support slices.
pub fn restrict_argument_from_standard(
    spec: &ChannelSpec,
    p_a: &Pmf,
    p_x_std: &CondPmf,
) -> (Pmf, CondPmf) {
    let (na, nse, nx) = (spec.a_size, spec.se_size, spec.x_size);
    let nse2 = nse * na;
    let mut px = vec![0.0; na * nse * nx];
    for a in 0..na {
        for se in 0..nse {
            for x in 0..nx {
                px[(a * nse + se) * nx + x] = p_x_std.prob(a * nse2 + (se * na + a), x);
            }
        }
    }
    (p_a.clone(), CondPmf::new(vec![na, nse], vec![nx], px).expect("restricted argument"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_channel_spec, random_cond, random_example2_spec, random_pmf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn h(p: f64) -> f64 {
        crate::info::binary_entropy(p).unwrap()
    }

    /// Trivial-state channel whose main channel is a BSC.
    fn bsc_spec(eps: f64) -> ChannelSpec {
        let mut main = vec![0.0; 2 * 2];
        for x in 0..2 {
            for y in 0..2 {
                main[x * 2 + y] = if y == x { 1.0 - eps } else { eps };
            }
        }
        ChannelSpec {
            a_size: 1,
            se_size: 1,
            sd_size: 1,
            x_size: 2,
            y_size: 2,
            state_channel: CondPmf::new(vec![1], vec![1, 1], vec![1.0]).unwrap(),
            main: MainChannel::Standard(CondPmf::new(vec![2, 1, 1], vec![2], main).unwrap()),
        }
    }

    #[test]
    fn rewrite_channel_reproduces_reported_values() {
        let spec = rewrite_channel_spec(0.1);
        let r = capacity_ri(&spec, &CapOpts::with_starts(24)).unwrap();
        assert!((r.capacity - 0.5310).abs() < 3e-3, "capacity={}", r.capacity);
        assert!(r.condition_active, "condition should be active");
        assert!(r.slack.abs() <= 1e-3, "slack={}", r.slack);
        let u = r.unconstrained_value.unwrap();
        assert!((u - 0.6690).abs() < 3e-3, "unconstrained={u}");
        let ru = capacity_unconstrained(&spec, &CapOpts::with_starts(24)).unwrap();
        assert!((ru.capacity - 0.6690).abs() < 3e-3);
        assert!(ru.slack < -1e-3);
        assert!(ru.condition_active);
    }

    #[test]
    fn rewrite_noiseless_hits_one_bit() {
        let spec = rewrite_channel_spec(0.0);
        let r = capacity_ri(&spec, &CapOpts::with_starts(12)).unwrap();
        assert!((r.capacity - 1.0).abs() < 1e-4, "capacity={}", r.capacity);
    }

    #[test]
    fn example2_structure_keeps_condition_inactive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let spec = random_example2_spec(&mut rng);
            let r = capacity_ri(&spec, &CapOpts::with_starts(12)).unwrap();
            assert!(r.slack >= -1e-6, "slack={}", r.slack);
            assert!(!r.condition_active);
            let u = capacity_unconstrained(&spec, &CapOpts::with_starts(12)).unwrap();
            assert!((u.capacity - r.capacity).abs() < 2e-3);
        }
    }

    #[test]
    fn message_only_reduces_to_plain_capacity_without_state() {
        let spec = bsc_spec(0.25);
        let r = capacity_message_only(&spec, &CapOpts::with_starts(12)).unwrap();
        assert!(!r.relaxed, "3-symbol U over unit Se should be enumerated");
        assert!((r.capacity - 0.18872187554086717).abs() < 1e-3, "capacity={}", r.capacity);
    }

    #[test]
    fn message_only_dominates_ri() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..4 {
            let spec = random_channel_spec(&mut rng, false);
            let opts = CapOpts { classify_activity: false, ..CapOpts::with_starts(10) };
            let ri = capacity_ri(&spec, &opts).unwrap();
            let m = capacity_message_only(&spec, &opts).unwrap();
            assert!(m.relaxed, "default U should exceed the enumeration cap");
            assert!(
                m.capacity >= ri.capacity - 1e-4,
                "message {} < ri {}",
                m.capacity,
                ri.capacity
            );
        }
    }

    #[test]
    fn state_recovery_bounded_by_ri_and_handles_infeasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..4 {
            let spec = random_channel_spec(&mut rng, false);
            let opts = CapOpts { classify_activity: false, ..CapOpts::with_starts(10) };
            let se = capacity_state_recovery(&spec, &opts).unwrap();
            let ri = capacity_ri(&spec, &opts).unwrap();
            assert!(
                se.infeasible || se.capacity <= ri.capacity + 1e-4,
                "state {} > ri {}",
                se.capacity,
                ri.capacity
            );
        }
        // Uniform Se independent of A, output independent of everything:
        // the lossless-state condition cannot be met.
        let spec = ChannelSpec {
            a_size: 2,
            se_size: 2,
            sd_size: 1,
            x_size: 2,
            y_size: 2,
            state_channel: CondPmf::new(vec![2], vec![2, 1], vec![0.5, 0.5, 0.5, 0.5]).unwrap(),
            main: MainChannel::Standard(
                CondPmf::new(vec![2, 2, 1], vec![2], vec![0.5; 8]).unwrap(),
            ),
        };
        let r = capacity_state_recovery(&spec, &CapOpts::with_starts(8)).unwrap();
        assert!(r.infeasible);
        assert_eq!(r.capacity, 0.0);
    }

    #[test]
    fn state_recovery_deterministic_state_has_vacuous_condition() {
        // Se = A deterministically: H(Se|A) = 0.
        let mut main = vec![0.0; 2 * 2 * 2];
        for x in 0..2 {
            for se in 0..2 {
                for y in 0..2 {
                    main[(x * 2 + se) * 2 + y] = if y == x { 0.9 } else { 0.1 };
                }
            }
        }
        let spec = ChannelSpec {
            a_size: 2,
            se_size: 2,
            sd_size: 1,
            x_size: 2,
            y_size: 2,
            state_channel: CondPmf::new(vec![2], vec![2, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            main: MainChannel::Standard(CondPmf::new(vec![2, 2, 1], vec![2], main).unwrap()),
        };
        let r = capacity_state_recovery(&spec, &CapOpts::with_starts(12)).unwrap();
        assert!(!r.infeasible);
        assert!(r.slack >= -1e-7);
        // With Se pinned to A the objective reduces to I(A,X;Y)
        // for a BSC(0.1), maximized at 1 - h(0.1).
        assert!((r.capacity - (1.0 - h(0.1))).abs() < 2e-3, "capacity={}", r.capacity);
    }

    #[test]
    fn stegotext_special_cases() {
        // Constant Se: plain BSC capacity.
        let r = capacity_stegotext(&bsc_spec(0.25), &CapOpts::with_starts(8)).unwrap();
        assert!((r.capacity - 0.18872187554086717).abs() < 1e-4);

        // Noiseless channel, uniform binary Se ignored by the channel:
        // independence of X and Se is optimal and gives one bit.
        let mut main = vec![0.0; 2 * 2 * 2];
        for x in 0..2 {
            for se in 0..2 {
                for y in 0..2 {
                    main[(x * 2 + se) * 2 + y] = if y == x { 1.0 } else { 0.0 };
                }
            }
        }
        let spec = ChannelSpec {
            a_size: 1,
            se_size: 2,
            sd_size: 1,
            x_size: 2,
            y_size: 2,
            state_channel: CondPmf::new(vec![1], vec![2, 1], vec![0.5, 0.5]).unwrap(),
            main: MainChannel::Standard(CondPmf::new(vec![2, 2, 1], vec![2], main).unwrap()),
        };
        let r = capacity_stegotext(&spec, &CapOpts::with_starts(8)).unwrap();
        assert!((r.capacity - 1.0).abs() < 1e-4, "capacity={}", r.capacity);

        // BSC(0.1) ignoring Se.
        let mut main = vec![0.0; 2 * 2 * 2];
        for x in 0..2 {
            for se in 0..2 {
                for y in 0..2 {
                    main[(x * 2 + se) * 2 + y] = if y == x { 0.9 } else { 0.1 };
                }
            }
        }
        let spec = ChannelSpec {
            a_size: 1,
            se_size: 2,
            sd_size: 1,
            x_size: 2,
            y_size: 2,
            state_channel: CondPmf::new(vec![1], vec![2, 1], vec![0.5, 0.5]).unwrap(),
            main: MainChannel::Standard(CondPmf::new(vec![2, 2, 1], vec![2], main).unwrap()),
        };
        let r = capacity_stegotext(&spec, &CapOpts::with_starts(8)).unwrap();
        assert!((r.capacity - (1.0 - h(0.1))).abs() < 1e-3, "capacity={}", r.capacity);
        // Degenerate-alphabet preconditions.
        assert!(capacity_stegotext(&rewrite_channel_spec(0.1), &CapOpts::default()).is_err());
    }

    #[test]
    fn condition_slack_signs() {
        // X independent of Se given A: slack equals I(X;Y,Sd|A) >= 0.
        let spec = rewrite_channel_spec(0.1);
        let p_a = Pmf::uniform(2);
        let p_x = CondPmf::uniform(vec![2, 2], vec![2]);
        let j = assemble_channel_joint(&spec, &p_a, &p_x).unwrap();
        assert!(condition_slack(&j).unwrap() >= -1e-12);

        // X = Se while (Y, Sd) carry nothing: slack = -H(Se|A).
        let mut px = vec![0.0; 2 * 2 * 2];
        for a in 0..2 {
            for se in 0..2 {
                px[(a * 2 + se) * 2 + se] = 1.0;
            }
        }
        let spec = ChannelSpec {
            a_size: 2,
            se_size: 2,
            sd_size: 1,
            x_size: 2,
            y_size: 2,
            state_channel: CondPmf::new(vec![2], vec![2, 1], vec![0.5, 0.5, 0.5, 0.5]).unwrap(),
            main: MainChannel::Standard(
                CondPmf::new(vec![2, 2, 1], vec![2], vec![0.5; 8]).unwrap(),
            ),
        };
        let j = assemble_channel_joint(
            &spec,
            &Pmf::uniform(2),
            &CondPmf::new(vec![2, 2], vec![2], px).unwrap(),
        )
        .unwrap();
        let s = condition_slack(&j).unwrap();
        assert!((s + 1.0).abs() < 1e-9, "slack={s} (expected -H(Se|A) = -1)");
    }

    #[test]
    fn remark3_inequality_on_random_joints() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for i in 0..200 {
            let spec = random_channel_spec(&mut rng, i % 3 == 0);
            let p_a = random_pmf(&mut rng, spec.a_size);
            let p_x = random_cond(&mut rng, &[spec.a_size, spec.se_size], &[spec.x_size]);
            let j = assemble_channel_joint(&spec, &p_a, &p_x).unwrap();
            let (lhs, rhs) = remark3_gap(&j).unwrap();
            assert!(lhs <= rhs + 1e-9, "lhs={lhs} rhs={rhs}");
        }
        // Deterministic Se given A and X independent of Se: equality.
        let mut main = vec![0.0; 2 * 2 * 2];
        for x in 0..2 {
            for se in 0..2 {
                for y in 0..2 {
                    main[(x * 2 + se) * 2 + y] = if y == x { 0.8 } else { 0.2 };
                }
            }
        }
        let spec = ChannelSpec {
            a_size: 2,
            se_size: 2,
            sd_size: 1,
            x_size: 2,
            y_size: 2,
            state_channel: CondPmf::new(vec![2], vec![2, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            main: MainChannel::Standard(CondPmf::new(vec![2, 2, 1], vec![2], main).unwrap()),
        };
        let j = assemble_channel_joint(
            &spec,
            &Pmf::uniform(2),
            &CondPmf::uniform(vec![2, 2], vec![2]),
        )
        .unwrap();
        let (lhs, rhs) = remark3_gap(&j).unwrap();
        assert!((lhs - rhs).abs() < 1e-9, "lhs={lhs} rhs={rhs}");
    }

    #[test]
    fn degenerate_improvement_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let spec = random_example2_spec(&mut rng);
            let p_a = random_pmf(&mut rng, 2);
            let p_x1 = random_cond(&mut rng, &[2, 2], &[2]);
            let out = degenerate_improve(&spec, &p_a, &p_x1).unwrap();
            assert!(out.slack2 >= -1e-9, "slack2={}", out.slack2);
            assert!(
                out.rate2 >= out.rate1 - 1e-9,
                "rate2={} < rate1={}",
                out.rate2,
                out.rate1
            );
        }
        // Already state-independent input: the transform is the identity.
        let spec = random_example2_spec(&mut rng);
        let p_x1 = CondPmf::new(vec![2, 2], vec![2], vec![0.3, 0.7, 0.3, 0.7, 0.6, 0.4, 0.6, 0.4])
            .unwrap();
        let out = degenerate_improve(&spec, &Pmf::uniform(2), &p_x1).unwrap();
        for (a, b) in out.p_x2.table().iter().zip(p_x1.table()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Non-conforming spec is rejected.
        let bad = rewrite_channel_spec(0.1);
        assert!(matches!(
            degenerate_improve(&bad, &Pmf::uniform(2), &CondPmf::uniform(vec![2, 2], vec![2])),
            Err(ChannelError::MarkovPrecondition(..))
        ));
    }

    #[test]
    fn mixture_check_endpoints_and_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let spec = random_channel_spec(&mut rng, false);
        let p1 = (random_pmf(&mut rng, 2), random_cond(&mut rng, &[2, 2], &[2]));
        let p2 = (random_pmf(&mut rng, 2), random_cond(&mut rng, &[2, 2], &[2]));
        let c0 = rmod_mixture_check(&spec, (&p1.0, &p1.1), (&p2.0, &p2.1), 0.0).unwrap();
        assert!((c0.obj_mix - c0.obj_combo).abs() < 1e-12);
        assert!((c0.slack_mix - c0.slack_combo).abs() < 1e-12);
        let c1 = rmod_mixture_check(&spec, (&p1.0, &p1.1), (&p2.0, &p2.1), 1.0).unwrap();
        assert!((c1.obj_mix - c1.obj_combo).abs() < 1e-12);
        for _ in 0..50 {
            let spec = random_channel_spec(&mut rng, false);
            let q1 = (random_pmf(&mut rng, 2), random_cond(&mut rng, &[2, 2], &[2]));
            let q2 = (random_pmf(&mut rng, 2), random_cond(&mut rng, &[2, 2], &[2]));
            let alpha = rand::Rng::gen::<f64>(&mut rng);
            let c = rmod_mixture_check(&spec, (&q1.0, &q1.1), (&q2.0, &q2.1), alpha).unwrap();
            assert!(c.obj_violation() <= 1e-9, "obj violation {}", c.obj_violation());
            assert!(c.slack_violation() <= 1e-9, "slack violation {}", c.slack_violation());
        }
    }

    #[test]
    fn action_dependent_reduction_matches_transform() {
        let spec = rewrite_channel_spec(0.1);
        let opts = CapOpts { classify_activity: false, ..CapOpts::with_starts(16) };
        let g = capacity_ri(&spec, &opts).unwrap();
        let std_spec = spec.to_standard();
        let mut t_opts = opts.clone();
        let (wa, wx) = lift_argument_to_standard(&spec, &g.arg_p_a, &g.arg_p_x);
        let mut warm = wa.probs().to_vec();
        warm.extend_from_slice(wx.table());
        t_opts.opt.warm_starts.push(warm);
        let t = capacity_ri(&std_spec, &t_opts).unwrap();
        assert!((g.capacity - t.capacity).abs() < 2e-3, "g={} t={}", g.capacity, t.capacity);
        // Round-trip of the argument mapping.
        let (ra, rx) = restrict_argument_from_standard(&spec, &t.arg_p_a, &t.arg_p_x);
        assert_eq!(ra.len(), 2);
        assert_eq!(rx.table().len(), 8);
    }

    #[test]
    fn capacities_stay_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for i in 0..6 {
            let spec = random_channel_spec(&mut rng, i % 2 == 0);
            let opts = CapOpts { classify_activity: false, ..CapOpts::with_starts(8) };
            let r = capacity_ri(&spec, &opts).unwrap();
            let bound = ((spec.y_size * spec.sd_size) as f64).log2();
            assert!(r.capacity >= 0.0 && r.capacity <= bound + 1e-9);
            assert!(r.slack >= -crate::opt::FEAS_TOL);
        }
    }

    #[test]
    fn registry_dispatch() {
        assert_eq!(capacity_solvers().len(), 5);
        for name in ["ri", "unconstrained", "message", "state", "stegotext"] {
            assert!(capacity_solver(name).is_some(), "missing {name}");
        }
        assert!(capacity_solver("bogus").is_none());
        let spec = bsc_spec(0.25);
        let r = capacity_solver("ri")
            .unwrap()
            .solve(&spec, &CapOpts::with_starts(6))
            .unwrap();
        assert!((r.capacity - 0.18872187554086717).abs() < 1e-3);
    }
}
