//! Source-coding limits: rate-distortion-cost functions for a memoryless
//! source compressed with two-sided action-dependent side information, with
//! or without the common-reconstruction (CR) requirement, plus the
//! (R1, R2) rate region and the no-action special case.

use crate::info::{CondPmf, InfoError, JointDist, MarginalSet, Pmf, Var, PROB_FLOOR};
use crate::opt::{optimize, OptError, OptOpts, OptProblem, OptResult, Sense, SimplexShape};
use thiserror::Error;

/// Canonical variable order for source-system joints.
pub const SOURCE_VARS: [Var; 5] = [Var::X, Var::A, Var::Se, Var::Sd, Var::Xhat];

/// A source-coding instance: source law, SI channel, distortion and cost
/// measures, alphabet sizes.
#[derive(Debug, Clone)]
pub struct SourceSpec {
    pub x_size: usize,
    pub a_size: usize,
    pub se_size: usize,
    pub sd_size: usize,
    pub xhat_size: usize,
    /// P_X over the source alphabet.
    pub source: Pmf,
    /// P_{Se,Sd|X,A}, table indexed `[x][a][se][sd]`.
    pub si_channel: CondPmf,
    /// d[x][xhat] >= 0, flattened row-major.
    pub distortion: Vec<f64>,
    /// Per-action cost, length `a_size`.
    pub cost: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error(transparent)]
    Opt(#[from] OptError),
    #[error("distortion and cost budgets must be nonnegative")]
    BadQuery,
    #[error("cost budget {budget} below minimum achievable cost {min_cost}")]
    InfeasibleCost { min_cost: f64, budget: f64 },
    #[error("distortion budget {budget} below minimum achievable distortion {min_distortion}")]
    InfeasibleDistortion { min_distortion: f64, budget: f64 },
    #[error("auxiliary alphabet size {requested} exceeds cap {cap}")]
    USizeCap { requested: usize, cap: usize },
    #[error("operation requires a degenerate spec: {0}")]
    NotDegenerate(&'static str),
    #[error("spec dimensions are inconsistent: {0}")]
    Dimension(String),
    #[error("distortion and cost entries must be finite and nonnegative")]
    BadMeasure,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<(), SourceError> {
        if self.source.len() != self.x_size {
            return Err(SourceError::Dimension(format!(
                "source pmf has {} entries, expected {}",
                self.source.len(),
                self.x_size
            )));
        }
        if self.si_channel.cond_sizes() != [self.x_size, self.a_size]
            || self.si_channel.out_sizes() != [self.se_size, self.sd_size]
        {
            return Err(SourceError::Dimension("si_channel shape".into()));
        }
        if self.distortion.len() != self.x_size * self.xhat_size
            || self.cost.len() != self.a_size
        {
            return Err(SourceError::Dimension("distortion/cost shape".into()));
        }
        if self
            .distortion
            .iter()
            .chain(self.cost.iter())
            .any(|&v| !v.is_finite() || v < 0.0)
        {
            return Err(SourceError::BadMeasure);
        }
        Ok(())
    }

    #[inline]
    pub fn d(&self, x: usize, xh: usize) -> f64 {
        self.distortion[x * self.xhat_size + xh]
    }

    /// Least distortion any code can achieve: the encoder-side pointwise
    /// optimum `sum_x P(x) min_xh d(x, xh)`, attainable at any cost.
    pub fn min_distortion(&self) -> f64 {
        (0..self.x_size)
            .map(|x| {
                let best =
                    (0..self.xhat_size).map(|xh| self.d(x, xh)).fold(f64::INFINITY, f64::min);
                self.source.probs()[x] * best
            })
            .sum()
    }

    pub fn min_cost(&self) -> f64 {
        self.cost.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn cheapest_action(&self) -> usize {
        let mut best = 0;
        for a in 1..self.a_size {
            if self.cost[a] < self.cost[best] {
                best = a;
            }
        }
        best
    }
}

/// A (distortion, cost) budget pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdcQuery {
    pub d: f64,
    pub c: f64,
}

/// The reconstruction side of an optimizing solution.
#[derive(Debug, Clone)]
pub enum ReconstructionArg {
    /// CR form: P_{Xhat|X,Se,A}, table `[x][se][a][xhat]`.
    Direct { pxhat: CondPmf },
    /// Auxiliary form: P_{U|X,Se,A} (table `[x][se][a][u]`) plus the exact
    /// decoder map `[u][sd] -> xhat`.
    Auxiliary { pu: CondPmf, decoder: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct RdcResult {
    /// Rate in bits, clamped at zero.
    pub rate: f64,
    /// P_{A|X}, table `[x][a]`.
    pub arg_pa_given_x: CondPmf,
    pub arg_reconstruction: ReconstructionArg,
    pub achieved_distortion: f64,
    pub achieved_cost: f64,
    pub converged: bool,
    pub starts_used: usize,
    pub iterations: usize,
    pub multimodal: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct RegionResult {
    /// Minimum action-link rate R1.
    pub r1_min: f64,
    /// Minimum total rate R1 + R2.
    pub sum_min: f64,
}

#[derive(Debug, Clone)]
pub struct RdcOpts {
    pub opt: OptOpts,
    /// Auxiliary alphabet size for the no-CR solver; defaults to the
    /// cardinality bound |A||X|+3, capped at [`U_SIZE_CAP`].
    pub u_size: Option<usize>,
}

pub const U_SIZE_CAP: usize = 16;

impl Default for RdcOpts {
    fn default() -> Self {
        RdcOpts { opt: OptOpts::default(), u_size: None }
    }
}

impl RdcOpts {
    pub fn with_starts(starts: usize) -> Self {
        RdcOpts { opt: OptOpts::with_starts(starts), ..Default::default() }
    }
}

// ---------------------------------------------------------------------------
// Joint assembly
// ---------------------------------------------------------------------------

/// Assembles the five-variable source joint
/// `P_X P_{A|X} P_{Se,Sd|X,A} P_{Xhat|X,Se,A}` over (X, A, Se, Sd, Xhat).
pub fn assemble_source_joint(
    spec: &SourceSpec,
    pa_given_x: &CondPmf,
    pxhat: &CondPmf,
) -> Result<JointDist, SourceError> {
    spec.validate()?;
    if pa_given_x.cond_sizes() != [spec.x_size] || pa_given_x.out_sizes() != [spec.a_size] {
        return Err(SourceError::Dimension("P_{A|X} shape".into()));
    }
    if pxhat.cond_sizes() != [spec.x_size, spec.se_size, spec.a_size]
        || pxhat.out_sizes() != [spec.xhat_size]
    {
        return Err(SourceError::Dimension("P_{Xhat|X,Se,A} shape".into()));
    }
    let probs =
        assemble_raw(spec, pa_given_x.table(), pxhat.table(), spec.xhat_size);
    Ok(JointDist::new(
        SOURCE_VARS.to_vec(),
        vec![spec.x_size, spec.a_size, spec.se_size, spec.sd_size, spec.xhat_size],
        probs,
    )?)
}

/// Raw assembly over (X, A, Se, Sd, last) where `last` is Xhat or U with
/// arity `last_size` and conditional table `[x][se][a][last]`. Negative
/// parameter values (finite-difference probes) are clamped to zero.
fn assemble_into(
    spec: &SourceSpec,
    pa_given_x: &[f64],
    p_last: &[f64],
    last_size: usize,
    probs: &mut Vec<f64>,
) {
    let (nx, na, nse, nsd) = (spec.x_size, spec.a_size, spec.se_size, spec.sd_size);
    probs.clear();
    probs.resize(nx * na * nse * nsd * last_size, 0.0);
    let si = spec.si_channel.table();
    let mut idx = 0;
    for x in 0..nx {
        let px = spec.source.probs()[x];
        for a in 0..na {
            let pa = pa_given_x[x * na + a].max(0.0);
            let pxa = px * pa;
            for se in 0..nse {
                for sd in 0..nsd {
                    let ps = si[((x * na + a) * nse + se) * nsd + sd];
                    let base = pxa * ps;
                    let row = ((x * nse + se) * na + a) * last_size;
                    for l in 0..last_size {
                        probs[idx] = base * p_last[row + l].max(0.0);
                        idx += 1;
                    }
                }
            }
        }
    }
}

fn assemble_raw(
    spec: &SourceSpec,
    pa_given_x: &[f64],
    p_last: &[f64],
    last_size: usize,
) -> Vec<f64> {
    let mut probs = Vec::new();
    assemble_into(spec, pa_given_x, p_last, last_size, &mut probs);
    probs
}

fn joint_from_raw(spec: &SourceSpec, probs: Vec<f64>, last: Var, last_size: usize) -> JointDist {
    JointDist::new_unchecked(
        vec![Var::X, Var::A, Var::Se, Var::Sd, last],
        vec![spec.x_size, spec.a_size, spec.se_size, spec.sd_size, last_size],
        probs,
    )
}

/// Which algebraic form of the CR objective to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CrForm {
    /// I(X;A) + I(Xhat; X,Se | A) - I(Xhat; Sd | A)
    Marginal,
    /// I(X;A) + I(Xhat; X,Se | A,Sd)
    Conditional,
}

/// Shared evaluation state: the assembled tensor and its marginal set for
/// the most recently seen parameter vector. The objective and constraint
/// callbacks probe the same point, so one assembly serves all of them.
struct EvalState {
    params: Vec<f64>,
    probs: Vec<f64>,
    marginals: MarginalSet,
}

// Marginal layouts over (X, A, Se, Sd, last):
// both rate forms and the distortion terms read from these buffers.
const M_X: usize = 0;
const M_A: usize = 1;
const M_XA: usize = 2;
const M_XASE: usize = 3;
const M_XASE_L: usize = 4;
const M_ASD: usize = 5;
const M_ASD_L: usize = 6;
const M_DIST: usize = 7;

fn marginal_keeps(dist_keep: &'static [usize]) -> Vec<&'static [usize]> {
    vec![
        &[0],
        &[1],
        &[0, 1],
        &[0, 1, 2],
        &[0, 1, 2, 4],
        &[1, 3],
        &[1, 3, 4],
        dist_keep,
    ]
}

struct CrEval<'a> {
    spec: &'a SourceSpec,
    form: CrForm,
    state: std::cell::RefCell<EvalState>,
}

impl<'a> CrEval<'a> {
    fn new(spec: &'a SourceSpec, form: CrForm) -> Self {
        let sizes =
            [spec.x_size, spec.a_size, spec.se_size, spec.sd_size, spec.xhat_size];
        let mut keeps = marginal_keeps(&[0, 4]);
        if form == CrForm::Conditional {
            keeps.push(&[1, 3, 4]); // reused slot meanings below
            keeps.push(&[0, 1, 2, 3]);
        }
        let state = EvalState {
            params: Vec::new(),
            probs: Vec::new(),
            marginals: MarginalSet::new(&sizes, &keeps),
        };
        CrEval { spec, form, state: std::cell::RefCell::new(state) }
    }

    fn split<'p>(&self, params: &'p [f64]) -> (&'p [f64], &'p [f64]) {
        params.split_at(self.spec.x_size * self.spec.a_size)
    }

    fn joint(&self, params: &[f64]) -> JointDist {
        let (pa, pxh) = self.split(params);
        joint_from_raw(
            self.spec,
            assemble_raw(self.spec, pa, pxh, self.spec.xhat_size),
            Var::Xhat,
            self.spec.xhat_size,
        )
    }

    fn ensure(&self, params: &[f64]) {
        let st = &mut *self.state.borrow_mut();
        if st.params.as_slice() == params && !st.probs.is_empty() {
            return;
        }
        let (pa, pxh) = params.split_at(self.spec.x_size * self.spec.a_size);
        assemble_into(self.spec, pa, pxh, self.spec.xhat_size, &mut st.probs);
        st.marginals.accumulate(&st.probs);
        st.params.clear();
        st.params.extend_from_slice(params);
    }

    fn rate(&self, params: &[f64]) -> f64 {
        self.ensure(params);
        let st = self.state.borrow();
        let m = &st.marginals;
        let i_xa = m.entropy(M_X) + m.entropy(M_A) - m.entropy(M_XA);
        match self.form {
            CrForm::Marginal => {
                // + I(Xh; X,Se | A) - I(Xh; Sd | A); the shared H(Xh,A)
                // terms cancel.
                i_xa + m.entropy(M_XASE) - m.entropy(M_XASE_L) - m.entropy(M_ASD)
                    + m.entropy(M_ASD_L)
            }
            CrForm::Conditional => {
                // + I(Xh; X,Se | A,Sd)
                i_xa + m.entropy(8) + m.entropy(9)
                    - crate::info::entropy_bits(&st.probs)
                    - m.entropy(M_ASD)
            }
        }
    }

    fn distortion(&self, params: &[f64]) -> f64 {
        self.ensure(params);
        let st = self.state.borrow();
        let buf = st.marginals.buffer(M_DIST);
        let mut acc = 0.0;
        for x in 0..self.spec.x_size {
            for xh in 0..self.spec.xhat_size {
                let p = buf[x * self.spec.xhat_size + xh];
                if p > PROB_FLOOR {
                    acc += p * self.spec.d(x, xh);
                }
            }
        }
        acc
    }

    fn cost(&self, params: &[f64]) -> f64 {
        let (pa, _) = self.split(params);
        expected_cost(self.spec, pa)
    }

    fn action_rate(&self, params: &[f64]) -> f64 {
        self.ensure(params);
        let st = self.state.borrow();
        let m = &st.marginals;
        m.entropy(M_X) + m.entropy(M_A) - m.entropy(M_XA)
    }
}

fn rate_of_joint(j: &JointDist, form: CrForm) -> f64 {
    let i_xa = j.mutual_information(&[Var::X], &[Var::A], &[]).expect("vars");
    match form {
        CrForm::Marginal => {
            let i2 = j
                .mutual_information(&[Var::Xhat], &[Var::X, Var::Se], &[Var::A])
                .expect("vars");
            let i3 = j.mutual_information(&[Var::Xhat], &[Var::Sd], &[Var::A]).expect("vars");
            i_xa + i2 - i3
        }
        CrForm::Conditional => {
            let i2 = j
                .mutual_information(&[Var::Xhat], &[Var::X, Var::Se], &[Var::A, Var::Sd])
                .expect("vars");
            i_xa + i2
        }
    }
}

fn expected_distortion_direct(spec: &SourceSpec, j: &JointDist) -> f64 {
    let m = j.marginal(&[Var::X, Var::Xhat]).expect("vars");
    let probs = m.probs();
    let mut acc = 0.0;
    for x in 0..spec.x_size {
        for xh in 0..spec.xhat_size {
            let p = probs[x * spec.xhat_size + xh];
            if p > PROB_FLOOR {
                acc += p * spec.d(x, xh);
            }
        }
    }
    acc
}

fn expected_cost(spec: &SourceSpec, pa_given_x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for x in 0..spec.x_size {
        let px = spec.source.probs()[x];
        for a in 0..spec.a_size {
            acc += px * pa_given_x[x * spec.a_size + a].max(0.0) * spec.cost[a];
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// No-CR evaluation with auxiliary U and exact inner decoder
// ---------------------------------------------------------------------------

struct AuxEval<'a> {
    spec: &'a SourceSpec,
    u_size: usize,
    state: std::cell::RefCell<EvalState>,
}

impl<'a> AuxEval<'a> {
    fn new(spec: &'a SourceSpec, u_size: usize) -> Self {
        let sizes = [spec.x_size, spec.a_size, spec.se_size, spec.sd_size, u_size];
        let state = EvalState {
            params: Vec::new(),
            probs: Vec::new(),
            marginals: MarginalSet::new(&sizes, &marginal_keeps(&[0, 3, 4])),
        };
        AuxEval { spec, u_size, state: std::cell::RefCell::new(state) }
    }

    fn split<'p>(&self, params: &'p [f64]) -> (&'p [f64], &'p [f64]) {
        params.split_at(self.spec.x_size * self.spec.a_size)
    }

    fn ensure(&self, params: &[f64]) {
        let st = &mut *self.state.borrow_mut();
        if st.params.as_slice() == params && !st.probs.is_empty() {
            return;
        }
        let (pa, pu) = params.split_at(self.spec.x_size * self.spec.a_size);
        assemble_into(self.spec, pa, pu, self.u_size, &mut st.probs);
        st.marginals.accumulate(&st.probs);
        st.params.clear();
        st.params.extend_from_slice(params);
    }

    fn rate(&self, params: &[f64]) -> f64 {
        self.ensure(params);
        let st = self.state.borrow();
        let m = &st.marginals;
        m.entropy(M_X) + m.entropy(M_A) - m.entropy(M_XA) + m.entropy(M_XASE)
            - m.entropy(M_XASE_L)
            - m.entropy(M_ASD)
            + m.entropy(M_ASD_L)
    }

    /// Expected distortion under the per-cell optimal decoder
    /// `g(u, sd) = argmin_xh  sum_x P(x, sd, u) d(x, xh)`.
    fn distortion_and_decoder(&self, params: &[f64]) -> (f64, Vec<usize>) {
        self.ensure(params);
        let spec = self.spec;
        let st = self.state.borrow();
        let probs = st.marginals.buffer(M_DIST);
        let (nsd, nu) = (spec.sd_size, self.u_size);
        let mut total = 0.0;
        let mut decoder = vec![0usize; nu * nsd];
        for u in 0..nu {
            for sd in 0..nsd {
                let mut best = f64::INFINITY;
                let mut best_xh = 0;
                for xh in 0..spec.xhat_size {
                    let mut e = 0.0;
                    for x in 0..spec.x_size {
                        e += probs[(x * nsd + sd) * nu + u] * spec.d(x, xh);
                    }
                    if e < best {
                        best = e;
                        best_xh = xh;
                    }
                }
                total += best;
                decoder[u * nsd + sd] = best_xh;
            }
        }
        (total, decoder)
    }

    fn cost(&self, params: &[f64]) -> f64 {
        let (pa, _) = self.split(params);
        expected_cost(self.spec, pa)
    }
}

// ---------------------------------------------------------------------------
// Solvers
// ---------------------------------------------------------------------------

fn check_query(spec: &SourceSpec, q: &RdcQuery) -> Result<(), SourceError> {
    if !(q.d >= 0.0) || !(q.c >= 0.0) {
        return Err(SourceError::BadQuery);
    }
    let min_cost = spec.min_cost();
    if q.c < min_cost - 1e-9 {
        return Err(SourceError::InfeasibleCost { min_cost, budget: q.c });
    }
    let min_d = spec.min_distortion();
    if q.d < min_d - 1e-9 {
        return Err(SourceError::InfeasibleDistortion { min_distortion: min_d, budget: q.d });
    }
    Ok(())
}

/// Guaranteed-feasible corner: cheapest action, pointwise distortion-optimal
/// reconstruction row for every conditioning cell.
fn feasible_corner(spec: &SourceSpec, last_size: usize, copy_style: bool) -> Vec<f64> {
    let mut v = vec![0.0; spec.x_size * spec.a_size + spec.x_size * spec.se_size * spec.a_size * last_size];
    let a_star = spec.cheapest_action();
    for x in 0..spec.x_size {
        v[x * spec.a_size + a_star] = 1.0;
    }
    let off = spec.x_size * spec.a_size;
    for x in 0..spec.x_size {
        let target = if copy_style {
            let mut best = 0;
            for xh in 1..spec.xhat_size.min(last_size) {
                if spec.d(x, xh) < spec.d(x, best) {
                    best = xh;
                }
            }
            best
        } else {
            0
        };
        for se in 0..spec.se_size {
            for a in 0..spec.a_size {
                let row = off + ((x * spec.se_size + se) * spec.a_size + a) * last_size;
                v[row + target] = 1.0;
            }
        }
    }
    v
}

/// Time-sharing template for the auxiliary solver: weight `theta` on a
/// copy-of-x symbol, the rest on a dedicated idle symbol. `action` pins
/// P_{A|X} on one action, or None for uniform actions.
fn time_share_template(
    spec: &SourceSpec,
    u_size: usize,
    theta: f64,
    action: Option<usize>,
) -> Option<Vec<f64>> {
    if u_size < spec.x_size + 1 {
        return None;
    }
    let na = spec.a_size;
    let mut v = vec![0.0; spec.x_size * na + spec.x_size * spec.se_size * na * u_size];
    for x in 0..spec.x_size {
        match action {
            Some(a) => v[x * na + a] = 1.0,
            None => {
                for a in 0..na {
                    v[x * na + a] = 1.0 / na as f64;
                }
            }
        }
    }
    let off = spec.x_size * na;
    for x in 0..spec.x_size {
        for se in 0..spec.se_size {
            for a in 0..na {
                let row = off + ((x * spec.se_size + se) * na + a) * u_size;
                v[row + x] = theta;
                v[row + u_size - 1] = 1.0 - theta;
            }
        }
    }
    Some(v)
}

/// Lifts a CR solution into the auxiliary parameterization (U := Xhat with
/// the identity decoder), preserving its rate and budgets exactly.
pub fn embed_cr_solution(
    spec: &SourceSpec,
    cr: &RdcResult,
    u_size: usize,
) -> Option<Vec<f64>> {
    if u_size < spec.xhat_size {
        return None;
    }
    let pxhat = match &cr.arg_reconstruction {
        ReconstructionArg::Direct { pxhat } => pxhat,
        ReconstructionArg::Auxiliary { .. } => return None,
    };
    let mut v = cr.arg_pa_given_x.table().to_vec();
    let groups = spec.x_size * spec.se_size * spec.a_size;
    let mut pu = vec![0.0; groups * u_size];
    for g in 0..groups {
        for xh in 0..spec.xhat_size {
            pu[g * u_size + xh] = pxhat.table()[g * spec.xhat_size + xh];
        }
    }
    v.extend_from_slice(&pu);
    Some(v)
}

fn solve_cr<'a>(
    spec: &'a SourceSpec,
    q: &RdcQuery,
    opts: &RdcOpts,
    form: CrForm,
) -> Result<(OptResult, CrEval<'a>), SourceError> {
    spec.validate()?;
    check_query(spec, q)?;
    let shape = SimplexShape::new(vec![
        (spec.x_size, spec.a_size),
        (spec.x_size * spec.se_size * spec.a_size, spec.xhat_size),
    ]);
    let mut opt_opts = opts.opt.clone();
    opt_opts.warm_starts.push(feasible_corner(spec, spec.xhat_size, true));
    let eval = std::rc::Rc::new(CrEval::new(spec, form));
    let (e1, e2, e3) = (eval.clone(), eval.clone(), eval);
    let (qd, qc) = (q.d, q.c);
    let problem = OptProblem {
        shape,
        sense: Sense::Minimize,
        objective: Box::new(move |p: &[f64]| e1.rate(p)),
        constraints: vec![
            Box::new(move |p: &[f64]| qd - e2.distortion(p)),
            Box::new(move |p: &[f64]| qc - e3.cost(p)),
        ],
    };
    let res = optimize(&problem, &opt_opts)?;
    Ok((res, CrEval::new(spec, form)))
}

fn cr_result(spec: &SourceSpec, res: OptResult, eval: &CrEval) -> RdcResult {
    let (pa, pxh) = eval.split(&res.argument);
    let j = eval.joint(&res.argument);
    RdcResult {
        rate: eval.rate(&res.argument).max(0.0),
        arg_pa_given_x: CondPmf::new(vec![spec.x_size], vec![spec.a_size], pa.to_vec())
            .expect("projected argument"),
        arg_reconstruction: ReconstructionArg::Direct {
            pxhat: CondPmf::new(
                vec![spec.x_size, spec.se_size, spec.a_size],
                vec![spec.xhat_size],
                pxh.to_vec(),
            )
            .expect("projected argument"),
        },
        achieved_distortion: expected_distortion_direct(spec, &j),
        achieved_cost: expected_cost(spec, pa),
        converged: res.converged,
        starts_used: res.starts_used,
        iterations: res.iterations,
        multimodal: res.multimodal,
    }
}

/// Rate-distortion-cost function with the CR constraint,
/// `min I(X;A) + I(Xhat;X,Se|A) - I(Xhat;Sd|A)`.
pub fn rd_ac_cr(
    spec: &SourceSpec,
    q: &RdcQuery,
    opts: &RdcOpts,
) -> Result<RdcResult, SourceError> {
    let (res, eval) = solve_cr(spec, q, opts, CrForm::Marginal)?;
    Ok(cr_result(spec, res, &eval))
}

/// The algebraically equivalent conditional form,
/// `min I(X;A) + I(Xhat;X,Se|A,Sd)`; a cross-check of [`rd_ac_cr`].
pub fn rd_ac_cr_alt(
    spec: &SourceSpec,
    q: &RdcQuery,
    opts: &RdcOpts,
) -> Result<RdcResult, SourceError> {
    let (res, eval) = solve_cr(spec, q, opts, CrForm::Conditional)?;
    Ok(cr_result(spec, res, &eval))
}

/// Rate-distortion-cost function without the CR constraint, over an auxiliary
/// variable U and an exact per-cell decoder map.
pub fn rd_ac(spec: &SourceSpec, q: &RdcQuery, opts: &RdcOpts) -> Result<RdcResult, SourceError> {
    spec.validate()?;
    check_query(spec, q)?;
    let bound = spec.a_size * spec.x_size + 3;
    let u_size = opts.u_size.unwrap_or_else(|| bound.min(U_SIZE_CAP));
    if u_size > U_SIZE_CAP {
        return Err(SourceError::USizeCap { requested: u_size, cap: U_SIZE_CAP });
    }
    if u_size == 0 {
        return Err(SourceError::Dimension("u_size must be >= 1".into()));
    }
    let shape = SimplexShape::new(vec![
        (spec.x_size, spec.a_size),
        (spec.x_size * spec.se_size * spec.a_size, u_size),
    ]);
    let mut opt_opts = opts.opt.clone();
    opt_opts.warm_starts.push(feasible_corner(spec, u_size, u_size >= spec.x_size));
    // Dropping the CR constraint can only lower the rate, so a CR solution
    // lifted into the auxiliary space is always a valid start. Solving the
    // CR problem at the caller's own budget keeps the no-CR value at or
    // below what the caller would see from rd_ac_cr with the same opts.
    let inner = RdcOpts { opt: opts.opt.clone(), u_size: None };
    if let Ok(cr) = rd_ac_cr(spec, q, &inner) {
        if let Some(w) = embed_cr_solution(spec, &cr, u_size) {
            opt_opts.warm_starts.push(w);
        }
    }
    for theta in [0.75, 0.5, 0.25] {
        if let Some(t) = time_share_template(spec, u_size, theta, None) {
            opt_opts.warm_starts.push(t);
        }
        for a in 0..spec.a_size {
            if let Some(t) = time_share_template(spec, u_size, theta, Some(a)) {
                opt_opts.warm_starts.push(t);
            }
        }
    }
    let eval = std::rc::Rc::new(AuxEval::new(spec, u_size));
    let (e1, e2, e3) = (eval.clone(), eval.clone(), eval);
    let (qd, qc) = (q.d, q.c);
    let problem = OptProblem {
        shape,
        sense: Sense::Minimize,
        objective: Box::new(move |p: &[f64]| e1.rate(p)),
        constraints: vec![
            Box::new(move |p: &[f64]| qd - e2.distortion_and_decoder(p).0),
            Box::new(move |p: &[f64]| qc - e3.cost(p)),
        ],
    };
    let res = optimize(&problem, &opt_opts)?;
    let eval = AuxEval::new(spec, u_size);
    let (pa, pu) = eval.split(&res.argument);
    let (achieved_d, decoder) = eval.distortion_and_decoder(&res.argument);
    Ok(RdcResult {
        rate: eval.rate(&res.argument).max(0.0),
        arg_pa_given_x: CondPmf::new(vec![spec.x_size], vec![spec.a_size], pa.to_vec())
            .expect("projected argument"),
        arg_reconstruction: ReconstructionArg::Auxiliary {
            pu: CondPmf::new(
                vec![spec.x_size, spec.se_size, spec.a_size],
                vec![u_size],
                pu.to_vec(),
            )
            .expect("projected argument"),
            decoder,
        },
        achieved_distortion: achieved_d,
        achieved_cost: expected_cost(spec, pa),
        converged: res.converged,
        starts_used: res.starts_used,
        iterations: res.iterations,
        multimodal: res.multimodal,
    })
}

/// The (R1, R1+R2) corner rates of the rate-distortion-cost region.
pub fn rd_region(
    spec: &SourceSpec,
    q: &RdcQuery,
    opts: &RdcOpts,
) -> Result<RegionResult, SourceError> {
    // Total rate first; its argument then warm-starts the R1 problem so the
    // reported corner satisfies r1_min <= sum_min up to solver tolerance.
    let (sum_res, eval) = solve_cr(spec, q, opts, CrForm::Conditional)?;
    let sum_min = eval.rate(&sum_res.argument).max(0.0);

    let shape = SimplexShape::new(vec![
        (spec.x_size, spec.a_size),
        (spec.x_size * spec.se_size * spec.a_size, spec.xhat_size),
    ]);
    let mut opt_opts = opts.opt.clone();
    opt_opts.warm_starts.push(feasible_corner(spec, spec.xhat_size, true));
    opt_opts.warm_starts.push(sum_res.argument.clone());
    let eval = std::rc::Rc::new(CrEval::new(spec, CrForm::Marginal));
    let (e1, e2, e3) = (eval.clone(), eval.clone(), eval);
    let (qd, qc) = (q.d, q.c);
    let problem = OptProblem {
        shape,
        sense: Sense::Minimize,
        objective: Box::new(move |p: &[f64]| e1.action_rate(p)),
        constraints: vec![
            Box::new(move |p: &[f64]| qd - e2.distortion(p)),
            Box::new(move |p: &[f64]| qc - e3.cost(p)),
        ],
    };
    let r1 = optimize(&problem, &opt_opts)?;
    Ok(RegionResult { r1_min: r1.value.max(0.0), sum_min })
}

/// No-action, encoder-SI-free special case: `min I(Xhat;X|Sd)` subject to the
/// distortion budget. Requires degenerate action and encoder-SI alphabets;
/// the general machinery then collapses to the classical CR function.
pub fn rd_steinberg(
    spec: &SourceSpec,
    d: f64,
    opts: &RdcOpts,
) -> Result<RdcResult, SourceError> {
    if spec.a_size != 1 {
        return Err(SourceError::NotDegenerate("action alphabet must have size 1"));
    }
    if spec.se_size != 1 {
        return Err(SourceError::NotDegenerate("encoder SI alphabet must have size 1"));
    }
    let q = RdcQuery { d, c: spec.cost[0] };
    rd_ac_cr(spec, &q, opts)
}

// ---------------------------------------------------------------------------
// Strategy registry
// ---------------------------------------------------------------------------

/// A named rate-distortion-cost solver variant, selectable at runtime.
pub trait RdcSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(
        &self,
        spec: &SourceSpec,
        q: &RdcQuery,
        opts: &RdcOpts,
    ) -> Result<RdcResult, SourceError>;
}

struct AcCrSolver;
struct AcCrAltSolver;
struct AcSolver;
struct SteinbergSolver;

impl RdcSolver for AcCrSolver {
    fn name(&self) -> &'static str {
        "ac-cr"
    }
    fn solve(
        &self,
        spec: &SourceSpec,
        q: &RdcQuery,
        opts: &RdcOpts,
    ) -> Result<RdcResult, SourceError> {
        rd_ac_cr(spec, q, opts)
    }
}

impl RdcSolver for AcCrAltSolver {
    fn name(&self) -> &'static str {
        "ac-cr-alt"
    }
    fn solve(
        &self,
        spec: &SourceSpec,
        q: &RdcQuery,
        opts: &RdcOpts,
    ) -> Result<RdcResult, SourceError> {
        rd_ac_cr_alt(spec, q, opts)
    }
}

impl RdcSolver for AcSolver {
    fn name(&self) -> &'static str {
        "ac"
    }
    fn solve(
        &self,
        spec: &SourceSpec,
        q: &RdcQuery,
        opts: &RdcOpts,
    ) -> Result<RdcResult, SourceError> {
        rd_ac(spec, q, opts)
    }
}

impl RdcSolver for SteinbergSolver {
    fn name(&self) -> &'static str {
        "steinberg"
    }
    fn solve(
        &self,
        spec: &SourceSpec,
        q: &RdcQuery,
        opts: &RdcOpts,
    ) -> Result<RdcResult, SourceError> {
        rd_steinberg(spec, q.d, opts)
    }
}

static RDC_SOLVERS: [&dyn RdcSolver; 4] =
    [&AcCrSolver, &AcCrAltSolver, &AcSolver, &SteinbergSolver];

pub fn rdc_solvers() -> &'static [&'static dyn RdcSolver] {
    &RDC_SOLVERS
}

pub fn rdc_solver(name: &str) -> Option<&'static dyn RdcSolver> {
    RDC_SOLVERS.iter().copied().find(|s| s.name() == name)
}

/// Re-evaluates a result's rate from its returned arguments; used by the
/// self-consistency checks.
pub fn reevaluate_rate(spec: &SourceSpec, result: &RdcResult) -> Result<f64, SourceError> {
    match &result.arg_reconstruction {
        ReconstructionArg::Direct { pxhat } => {
            let j = assemble_source_joint(spec, &result.arg_pa_given_x, pxhat)?;
            Ok(rate_of_joint(&j, CrForm::Marginal))
        }
        ReconstructionArg::Auxiliary { pu, .. } => {
            let u_size = pu.out_sizes()[0];
            let mut params = result.arg_pa_given_x.table().to_vec();
            params.extend_from_slice(pu.table());
            let eval = AuxEval::new(spec, u_size);
            Ok(eval.rate(&params))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Binary symmetric source with an action that switches decoder SI
    /// between a BSC(p0) observation (A=1, unit cost) and an erasure (A=0,
    /// free). Encoder SI absent. Hamming distortion.
    pub(crate) fn wz_action_spec(p0: f64) -> SourceSpec {
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
            si_channel: CondPmf::new(vec![2, 2], vec![1, 3], si).unwrap(),
            distortion: vec![0.0, 1.0, 1.0, 0.0],
            cost: vec![0.0, 1.0],
        }
    }

    fn lossless_spec() -> SourceSpec {
        SourceSpec {
            x_size: 2,
            a_size: 1,
            se_size: 1,
            sd_size: 1,
            xhat_size: 2,
            source: Pmf::uniform(2),
            si_channel: CondPmf::new(vec![2, 1], vec![1, 1], vec![1.0, 1.0]).unwrap(),
            distortion: vec![0.0, 1.0, 1.0, 0.0],
            cost: vec![0.0],
        }
    }

    /// BSC(p0) decoder SI, no action, no encoder SI.
    fn steinberg_spec(p0: f64) -> SourceSpec {
        let mut si = vec![0.0; 2 * 2];
        for x in 0..2 {
            for sd in 0..2 {
                si[x * 2 + sd] = if sd == x { 1.0 - p0 } else { p0 };
            }
        }
        SourceSpec {
            x_size: 2,
            a_size: 1,
            se_size: 1,
            sd_size: 2,
            xhat_size: 2,
            source: Pmf::uniform(2),
            si_channel: CondPmf::new(vec![2, 1], vec![1, 2], si).unwrap(),
            distortion: vec![0.0, 1.0, 1.0, 0.0],
            cost: vec![0.0],
        }
    }

    fn h(p: f64) -> f64 {
        crate::info::binary_entropy(p).unwrap()
    }

    #[test]
    fn lossless_degenerate_rate_is_entropy() {
        let spec = lossless_spec();
        let r = rd_ac_cr(&spec, &RdcQuery { d: 0.0, c: 0.0 }, &RdcOpts::with_starts(8)).unwrap();
        assert!((r.rate - 1.0).abs() < 1e-4, "rate={}", r.rate);
        assert!(r.achieved_distortion <= 1e-6);
    }

    #[test]
    fn cr_matches_steinberg_closed_form_at_full_cost() {
        let spec = wz_action_spec(0.25);
        let r = rd_ac_cr(&spec, &RdcQuery { d: 0.1, c: 1.0 }, &RdcOpts::with_starts(24)).unwrap();
        let target = h(0.3) - h(0.1); // 0.4122953056414115
        assert!((r.rate - target).abs() < 2e-3, "rate={} target={target}", r.rate);
        assert!(r.achieved_distortion <= 0.1 + 1e-6);
        assert!(r.achieved_cost <= 1.0 + 1e-6);
    }

    #[test]
    fn cr_matches_no_si_rate_at_zero_cost() {
        let spec = wz_action_spec(0.25);
        let r = rd_ac_cr(&spec, &RdcQuery { d: 0.1, c: 0.0 }, &RdcOpts::with_starts(24)).unwrap();
        let target = 1.0 - h(0.1); // 0.5310044064107188
        assert!((r.rate - target).abs() < 2e-3, "rate={} target={target}", r.rate);
    }

    #[test]
    fn alt_form_agrees_and_hits_frozen_value() {
        let spec = wz_action_spec(0.25);
        let q = RdcQuery { d: 0.25, c: 1.0 };
        let a = rd_ac_cr(&spec, &q, &RdcOpts::with_starts(24)).unwrap();
        let b = rd_ac_cr_alt(&spec, &q, &RdcOpts::with_starts(24)).unwrap();
        assert!((a.rate - b.rate).abs() < 2e-4, "eq1={} eq2={}", a.rate, b.rate);
        // h(0.375) - h(0.25), frozen from the closed-form oracle.
        let target = 0.14315587846583222;
        assert!((b.rate - target).abs() < 2e-3, "rate={}", b.rate);
    }

    #[test]
    fn perfect_decoder_si_needs_no_rate() {
        // Sd = X deterministically; at D = 0 the reconstruction Xhat = Sd
        // is already known to the decoder and the encoder can mirror it.
        let spec = steinberg_spec(0.0);
        let r = rd_steinberg(&spec, 0.0, &RdcOpts::with_starts(8)).unwrap();
        assert!(r.rate < 2e-4, "rate={}", r.rate);
    }

    #[test]
    fn rd_ac_never_exceeds_cr_and_vanishes_at_p0() {
        let spec = wz_action_spec(0.25);
        let opts = RdcOpts::with_starts(24);
        for (d, c) in [(0.1, 1.0), (0.25, 1.0), (0.15, 0.5)] {
            let q = RdcQuery { d, c };
            let cr = rd_ac_cr(&spec, &q, &opts).unwrap();
            let ac = rd_ac(&spec, &q, &opts).unwrap();
            assert!(
                ac.rate <= cr.rate + 1e-4,
                "no-CR rate {} exceeds CR rate {} at ({d},{c})",
                ac.rate,
                cr.rate
            );
        }
        let ac = rd_ac(&spec, &RdcQuery { d: 0.25, c: 1.0 }, &opts).unwrap();
        assert!(ac.rate < 1e-3, "rate at D=p0 should vanish, got {}", ac.rate);
    }

    #[test]
    fn rd_ac_no_si_reduces_to_classical() {
        let spec = lossless_spec();
        let r = rd_ac(&spec, &RdcQuery { d: 0.1, c: 0.0 }, &RdcOpts::with_starts(24)).unwrap();
        let target = 1.0 - h(0.1);
        assert!((r.rate - target).abs() < 2e-3, "rate={} target={target}", r.rate);
    }

    #[test]
    fn region_sum_matches_alt_form() {
        let spec = wz_action_spec(0.25);
        let q = RdcQuery { d: 0.15, c: 0.5 };
        let opts = RdcOpts::with_starts(16);
        let region = rd_region(&spec, &q, &opts).unwrap();
        let alt = rd_ac_cr_alt(&spec, &q, &opts).unwrap();
        assert!((region.sum_min - alt.rate).abs() < 2e-4);
        assert!(region.r1_min <= region.sum_min + 1e-9);
        assert!(region.r1_min >= 0.0);
        assert!(region.r1_min <= 1.0 + 1e-9);
    }

    #[test]
    fn region_free_action_needs_no_r1() {
        let mut spec = wz_action_spec(0.25);
        spec.cost = vec![0.0, 0.0];
        let region =
            rd_region(&spec, &RdcQuery { d: 0.3, c: 0.0 }, &RdcOpts::with_starts(8)).unwrap();
        assert!(region.r1_min < 1e-4, "r1_min={}", region.r1_min);
    }

    #[test]
    fn steinberg_matches_closed_form() {
        let spec = steinberg_spec(0.25);
        let r = rd_steinberg(&spec, 0.1, &RdcOpts::with_starts(24)).unwrap();
        let target = h(0.3) - h(0.1);
        assert!((r.rate - target).abs() < 2e-3, "rate={} target={target}", r.rate);
        let r = rd_steinberg(&spec, 0.5, &RdcOpts::with_starts(8)).unwrap();
        assert!(r.rate < 1e-4);
    }

    #[test]
    fn infeasible_budgets_error() {
        let spec = wz_action_spec(0.25);
        assert!(matches!(
            rd_ac_cr(&spec, &RdcQuery { d: -0.1, c: 1.0 }, &RdcOpts::default()),
            Err(SourceError::BadQuery)
        ));
        let mut costly = spec.clone();
        costly.cost = vec![0.5, 1.0];
        assert!(matches!(
            rd_ac_cr(&costly, &RdcQuery { d: 0.1, c: 0.1 }, &RdcOpts::default()),
            Err(SourceError::InfeasibleCost { .. })
        ));
        let mut gapped = spec;
        gapped.distortion = vec![0.3, 1.0, 1.0, 0.3];
        assert!(matches!(
            rd_ac_cr(&gapped, &RdcQuery { d: 0.1, c: 1.0 }, &RdcOpts::default()),
            Err(SourceError::InfeasibleDistortion { .. })
        ));
    }

    #[test]
    fn u_size_cap_enforced() {
        let spec = wz_action_spec(0.25);
        let opts = RdcOpts { u_size: Some(17), ..RdcOpts::default() };
        assert!(matches!(
            rd_ac(&spec, &RdcQuery { d: 0.1, c: 1.0 }, &opts),
            Err(SourceError::USizeCap { .. })
        ));
    }

    #[test]
    fn self_consistency_of_reported_rate() {
        let spec = wz_action_spec(0.25);
        let q = RdcQuery { d: 0.12, c: 0.7 };
        let r = rd_ac_cr(&spec, &q, &RdcOpts::with_starts(12)).unwrap();
        let re = reevaluate_rate(&spec, &r).unwrap();
        assert!((r.rate - re.max(0.0)).abs() < 1e-9);
        let r = rd_ac(&spec, &q, &RdcOpts::with_starts(12)).unwrap();
        let re = reevaluate_rate(&spec, &r).unwrap();
        assert!((r.rate - re.max(0.0)).abs() < 1e-9);
    }

    #[test]
    fn registry_dispatch() {
        assert_eq!(rdc_solvers().len(), 4);
        let spec = wz_action_spec(0.25);
        let s = rdc_solver("ac-cr").unwrap();
        let r = s
            .solve(&spec, &RdcQuery { d: 0.2, c: 1.0 }, &RdcOpts::with_starts(6))
            .unwrap();
        assert!(r.rate >= 0.0);
        assert!(rdc_solver("nope").is_none());
    }

    #[test]
    fn assembled_joint_preserves_source_marginal_and_markov() {
        let spec = wz_action_spec(0.25);
        let pa = CondPmf::new(vec![2], vec![2], vec![0.3, 0.7, 0.6, 0.4]).unwrap();
        let pxh = CondPmf::uniform(vec![2, 1, 2], vec![2]);
        let j = assemble_source_joint(&spec, &pa, &pxh).unwrap();
        let mx = j.marginal(&[Var::X]).unwrap();
        for (got, want) in mx.probs().iter().zip(spec.source.probs()) {
            assert!((got - want).abs() < 1e-12);
        }
        // Factorization-implied chain: Xhat - (X, Se, A) - Sd.
        let v = j
            .verify_markov(&[Var::Xhat], &[Var::X, Var::Se, Var::A], &[Var::Sd])
            .unwrap();
        assert!(v < 1e-9, "markov violation {v}");
    }
}
