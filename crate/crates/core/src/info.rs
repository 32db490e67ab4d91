//! Exact probability calculus on finite alphabets: joint distributions as
//! dense tensors, entropies, mutual informations, and Markov-chain checks.
//!
//! All information quantities are in bits (base-2 logs) with the convention
//! `0 log 0 = 0`; cells below [`PROB_FLOOR`] contribute nothing.

use thiserror::Error;

/// Probabilities below this floor are treated as exact zeros when computing
/// information quantities, so subnormal products cannot produce NaNs.
pub const PROB_FLOOR: f64 = 1e-15;

/// Tolerance at which a distribution is accepted as normalized.
pub const NORM_TOL: f64 = 1e-9;

/// Worst normalization error that is still repaired by renormalizing
/// (with a warning); anything beyond is rejected.
pub const RENORM_TOL: f64 = 1e-6;

/// Dense tensors are capped at this many cells.
pub const MAX_CELLS: usize = 10_000_000;

/// Variable labels used across source and channel systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    X,
    A,
    Se,
    Sd,
    Xhat,
    U,
    Y,
}

impl Var {
    pub fn label(self) -> &'static str {
        match self {
            Var::X => "X",
            Var::A => "A",
            Var::Se => "Se",
            Var::Sd => "Sd",
            Var::Xhat => "Xhat",
            Var::U => "U",
            Var::Y => "Y",
        }
    }
}

impl std::fmt::Display for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
pub enum InfoError {
    #[error("unknown variable {0} for this joint")]
    UnknownVariable(Var),
    #[error("variable sets must be pairwise disjoint (offender: {0})")]
    OverlappingSets(Var),
    #[error("duplicate variable {0} in joint")]
    DuplicateVariable(Var),
    #[error("probability {value} out of range [0,1]")]
    BadProbability { value: f64 },
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("distribution sums to {sum}, beyond repairable tolerance {tol}")]
    NotNormalized { sum: f64, tol: f64 },
    #[error("dimension mismatch: expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("product alphabet of {0} cells exceeds the dense-tensor guard")]
    TooLarge(usize),
    #[error("alphabet sizes must be >= 1")]
    EmptyAlphabet,
}

fn check_entries(probs: &[f64]) -> Result<(), InfoError> {
    for (i, &p) in probs.iter().enumerate() {
        if !p.is_finite() || p < 0.0 {
            return Err(InfoError::NegativeEntry { index: i, value: p });
        }
    }
    Ok(())
}

/// Normalizes `probs` in place. Exact within [`NORM_TOL`] is accepted as-is,
/// within [`RENORM_TOL`] is rescaled with a warning, worse is an error.
fn normalize_slice(probs: &mut [f64], what: &str) -> Result<(), InfoError> {
    let sum: f64 = probs.iter().sum();
    let err = (sum - 1.0).abs();
    if err <= NORM_TOL {
        return Ok(());
    }
    if err <= RENORM_TOL {
        log::warn!("{what} off by {err:.3e}; renormalizing");
        for p in probs.iter_mut() {
            *p /= sum;
        }
        return Ok(());
    }
    Err(InfoError::NotNormalized { sum, tol: RENORM_TOL })
}

/// A probability mass function over one finite alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(mut probs: Vec<f64>) -> Result<Self, InfoError> {
        if probs.is_empty() {
            return Err(InfoError::EmptyAlphabet);
        }
        check_entries(&probs)?;
        normalize_slice(&mut probs, "pmf")?;
        Ok(Pmf { probs })
    }

    pub fn uniform(size: usize) -> Self {
        Pmf { probs: vec![1.0 / size as f64; size] }
    }

    /// Point mass on `index`.
    pub fn delta(size: usize, index: usize) -> Self {
        let mut probs = vec![0.0; size];
        probs[index] = 1.0;
        Pmf { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// A conditional distribution stored as a dense table indexed
/// `[conditioning variables...][output variables...]`, row-major. Every
/// conditioning slice is a normalized distribution over the outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct CondPmf {
    cond_sizes: Vec<usize>,
    out_sizes: Vec<usize>,
    table: Vec<f64>,
}

impl CondPmf {
    pub fn new(
        cond_sizes: Vec<usize>,
        out_sizes: Vec<usize>,
        mut table: Vec<f64>,
    ) -> Result<Self, InfoError> {
        if cond_sizes.iter().any(|&s| s == 0) || out_sizes.iter().any(|&s| s == 0) {
            return Err(InfoError::EmptyAlphabet);
        }
        let groups: usize = cond_sizes.iter().product();
        let arity: usize = out_sizes.iter().product();
        if groups.saturating_mul(arity) > MAX_CELLS {
            return Err(InfoError::TooLarge(groups.saturating_mul(arity)));
        }
        if table.len() != groups * arity {
            return Err(InfoError::DimensionMismatch { expected: groups * arity, got: table.len() });
        }
        check_entries(&table)?;
        for g in 0..groups {
            normalize_slice(&mut table[g * arity..(g + 1) * arity], "conditional slice")?;
        }
        Ok(CondPmf { cond_sizes, out_sizes, table })
    }

    /// Uniform output distribution for every conditioning index.
    pub fn uniform(cond_sizes: Vec<usize>, out_sizes: Vec<usize>) -> Self {
        let groups: usize = cond_sizes.iter().product();
        let arity: usize = out_sizes.iter().product();
        CondPmf { cond_sizes, out_sizes, table: vec![1.0 / arity as f64; groups * arity] }
    }

    pub fn cond_sizes(&self) -> &[usize] {
        &self.cond_sizes
    }

    pub fn out_sizes(&self) -> &[usize] {
        &self.out_sizes
    }

    pub fn groups(&self) -> usize {
        self.cond_sizes.iter().product()
    }

    pub fn arity(&self) -> usize {
        self.out_sizes.iter().product()
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Probability of flat output index `out` given flat conditioning index `cond`.
    #[inline]
    pub fn prob(&self, cond: usize, out: usize) -> f64 {
        self.table[cond * self.arity() + out]
    }

    /// The slice of output probabilities for one conditioning index.
    #[inline]
    pub fn slice(&self, cond: usize) -> &[f64] {
        let arity = self.arity();
        &self.table[cond * arity..(cond + 1) * arity]
    }
}

/// A normalized joint distribution over an ordered tuple of labeled finite
/// variables, stored as a flat row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDist {
    vars: Vec<Var>,
    sizes: Vec<usize>,
    probs: Vec<f64>,
}

impl JointDist {
    pub fn new(vars: Vec<Var>, sizes: Vec<usize>, mut probs: Vec<f64>) -> Result<Self, InfoError> {
        if sizes.iter().any(|&s| s == 0) || sizes.is_empty() {
            return Err(InfoError::EmptyAlphabet);
        }
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].contains(v) {
                return Err(InfoError::DuplicateVariable(*v));
            }
        }
        let cells: usize = sizes.iter().product();
        if cells > MAX_CELLS {
            return Err(InfoError::TooLarge(cells));
        }
        if probs.len() != cells || vars.len() != sizes.len() {
            return Err(InfoError::DimensionMismatch { expected: cells, got: probs.len() });
        }
        check_entries(&probs)?;
        normalize_slice(&mut probs, "joint")?;
        Ok(JointDist { vars, sizes, probs })
    }

    /// Builds without validation. Callers must guarantee normalized,
    /// nonnegative entries and consistent dimensions.
    pub fn new_unchecked(vars: Vec<Var>, sizes: Vec<usize>, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), sizes.iter().product::<usize>());
        JointDist { vars, sizes, probs }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn size_of(&self, var: Var) -> Result<usize, InfoError> {
        Ok(self.sizes[self.position(var)?])
    }

    fn position(&self, var: Var) -> Result<usize, InfoError> {
        self.vars
            .iter()
            .position(|&v| v == var)
            .ok_or(InfoError::UnknownVariable(var))
    }

    fn positions(&self, vars: &[Var]) -> Result<Vec<usize>, InfoError> {
        vars.iter().map(|&v| self.position(v)).collect()
    }

    fn check_disjoint(sets: &[&[Var]]) -> Result<(), InfoError> {
        for (i, a) in sets.iter().enumerate() {
            for (k, v) in a.iter().enumerate() {
                if a[..k].contains(v) {
                    return Err(InfoError::OverlappingSets(*v));
                }
                for b in &sets[i + 1..] {
                    if b.contains(v) {
                        return Err(InfoError::OverlappingSets(*v));
                    }
                }
            }
        }
        Ok(())
    }

    /// Marginal over `keep` (in the joint's own variable order).
    pub fn marginal(&self, keep: &[Var]) -> Result<JointDist, InfoError> {
        let keep_pos = {
            let mut p = self.positions(keep)?;
            p.sort_unstable();
            p.dedup();
            p
        };
        let out_vars: Vec<Var> = keep_pos.iter().map(|&i| self.vars[i]).collect();
        let out_sizes: Vec<usize> = keep_pos.iter().map(|&i| self.sizes[i]).collect();
        let probs = self.marginal_probs(&keep_pos);
        Ok(JointDist { vars: out_vars, sizes: out_sizes, probs })
    }

    /// Flat marginal tensor over the (sorted) positions in `keep_pos`.
    /// Walks the full tensor once with an odometer, maintaining the output
    /// index incrementally.
    fn marginal_probs(&self, keep_pos: &[usize]) -> Vec<f64> {
        let out_len: usize = keep_pos.iter().map(|&i| self.sizes[i]).product();
        let mut out = vec![0.0; out_len.max(1)];
        if keep_pos.is_empty() {
            out[0] = self.probs.iter().sum();
            return out;
        }
        let n = self.sizes.len();
        // Output stride contributed by each full-tensor axis (0 if dropped).
        let mut axis_step = vec![0usize; n];
        let mut stride = 1;
        for &pos in keep_pos.iter().rev() {
            axis_step[pos] = stride;
            stride *= self.sizes[pos];
        }
        let mut digits = vec![0usize; n];
        let mut out_idx = 0usize;
        for &p in &self.probs {
            out[out_idx] += p;
            for d in (0..n).rev() {
                digits[d] += 1;
                if digits[d] < self.sizes[d] {
                    out_idx += axis_step[d];
                    break;
                }
                digits[d] = 0;
                out_idx -= axis_step[d] * (self.sizes[d] - 1);
            }
        }
        out
    }

    fn entropy_over_positions(&self, pos: &[usize]) -> f64 {
        let mut sorted = pos.to_vec();
        sorted.sort_unstable();
        entropy_bits(&self.marginal_probs(&sorted))
    }

    /// Conditional entropy H(over | given) in bits.
    pub fn entropy(&self, over: &[Var], given: &[Var]) -> Result<f64, InfoError> {
        Self::check_disjoint(&[over, given])?;
        if over.is_empty() {
            // H of nothing is zero by convention.
            self.positions(given)?;
            return Ok(0.0);
        }
        let over_pos = self.positions(over)?;
        let given_pos = self.positions(given)?;
        let mut joint_pos = over_pos;
        joint_pos.extend_from_slice(&given_pos);
        let h_joint = self.entropy_over_positions(&joint_pos);
        let h_given =
            if given_pos.is_empty() { 0.0 } else { self.entropy_over_positions(&given_pos) };
        Ok(h_joint - h_given)
    }

    /// Conditional mutual information I(a ; b | given) in bits. Tiny negative
    /// values from floating-point cancellation are reported as zero.
    pub fn mutual_information(
        &self,
        a: &[Var],
        b: &[Var],
        given: &[Var],
    ) -> Result<f64, InfoError> {
        Self::check_disjoint(&[a, b, given])?;
        let h_a_given = self.entropy(a, given)?;
        let mut bg = b.to_vec();
        bg.extend_from_slice(given);
        let h_a_bg = self.entropy(a, &bg)?;
        let v = h_a_given - h_a_bg;
        if v < 0.0 && v > -NORM_TOL {
            return Ok(0.0);
        }
        Ok(v)
    }

    /// Maximum absolute violation of the Markov chain left - mid - right:
    /// `max |P(l,m,r) - P(l,m) P(r|m)|`. An empty `mid` degenerates to an
    /// independence test between `left` and `right`.
    pub fn verify_markov(
        &self,
        left: &[Var],
        mid: &[Var],
        right: &[Var],
    ) -> Result<f64, InfoError> {
        Self::check_disjoint(&[left, mid, right])?;
        let l_pos = self.positions(left)?;
        let m_pos = self.positions(mid)?;
        let r_pos = self.positions(right)?;

        let card = |pos: &[usize]| -> usize { pos.iter().map(|&i| self.sizes[i]).product() };
        let (nl, nm, nr) = (card(&l_pos), card(&m_pos), card(&r_pos));

        // Joint over (L, M, R) laid out with l slowest, r fastest.
        let mut union: Vec<usize> = Vec::new();
        union.extend_from_slice(&l_pos);
        union.extend_from_slice(&m_pos);
        union.extend_from_slice(&r_pos);
        let mut sorted = union.clone();
        sorted.sort_unstable();
        let marg = self.marginal_probs(&sorted);

        // Map from sorted-order flat index to (l, m, r) flat index.
        let sizes_sorted: Vec<usize> = sorted.iter().map(|&i| self.sizes[i]).collect();
        let role_of: Vec<(usize, usize)> = sorted
            .iter()
            .map(|&p| {
                if let Some(k) = l_pos.iter().position(|&q| q == p) {
                    (0, k)
                } else if let Some(k) = m_pos.iter().position(|&q| q == p) {
                    (1, k)
                } else {
                    (2, r_pos.iter().position(|&q| q == p).unwrap())
                }
            })
            .collect();
        let stride_in = |pos: &[usize], k: usize| -> usize {
            pos[k + 1..].iter().map(|&i| self.sizes[i]).product()
        };

        let mut p_lmr = vec![0.0; nl * nm * nr];
        let mut strides_sorted = vec![1usize; sorted.len()];
        for i in (0..sorted.len().saturating_sub(1)).rev() {
            strides_sorted[i] = strides_sorted[i + 1] * sizes_sorted[i + 1];
        }
        for (flat, &p) in marg.iter().enumerate() {
            let (mut li, mut mi, mut ri) = (0usize, 0usize, 0usize);
            for (axis, &(role, k)) in role_of.iter().enumerate() {
                let digit = (flat / strides_sorted[axis]) % sizes_sorted[axis];
                match role {
                    0 => li += digit * stride_in(&l_pos, k),
                    1 => mi += digit * stride_in(&m_pos, k),
                    _ => ri += digit * stride_in(&r_pos, k),
                }
            }
            p_lmr[(li * nm + mi) * nr + ri] += p;
        }

        let mut p_lm = vec![0.0; nl * nm];
        let mut p_mr = vec![0.0; nm * nr];
        for li in 0..nl {
            for mi in 0..nm {
                for ri in 0..nr {
                    let p = p_lmr[(li * nm + mi) * nr + ri];
                    p_lm[li * nm + mi] += p;
                    p_mr[mi * nr + ri] += p;
                }
            }
        }
        let p_m: Vec<f64> =
            (0..nm).map(|mi| p_mr[mi * nr..(mi + 1) * nr].iter().sum()).collect();

        let mut worst = 0.0f64;
        for li in 0..nl {
            for mi in 0..nm {
                for ri in 0..nr {
                    let lhs = p_lmr[(li * nm + mi) * nr + ri];
                    let rhs = if p_m[mi] > PROB_FLOOR {
                        p_lm[li * nm + mi] * p_mr[mi * nr + ri] / p_m[mi]
                    } else {
                        0.0
                    };
                    worst = worst.max((lhs - rhs).abs());
                }
            }
        }
        Ok(worst)
    }

    /// Expectation of a per-cell function of the full multi-index.
    pub fn expectation<F: FnMut(&[usize]) -> f64>(&self, mut f: F) -> f64 {
        let n = self.sizes.len();
        let mut idx = vec![0usize; n];
        let mut acc = 0.0;
        for &p in &self.probs {
            if p > PROB_FLOOR {
                acc += p * f(&idx);
            }
            for d in (0..n).rev() {
                idx[d] += 1;
                if idx[d] < self.sizes[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        acc
    }
}

/// Accumulates several marginals of one dense tensor in a single odometer
/// pass. The workhorse behind the solvers' objective evaluations, where the
/// same joint feeds many entropy terms per call.
#[derive(Debug, Clone)]
pub struct MarginalSet {
    sizes: Vec<usize>,
    /// Per marginal, per axis: output stride (0 for dropped axes).
    axis_steps: Vec<Vec<usize>>,
    buffers: Vec<Vec<f64>>,
}

impl MarginalSet {
    /// `keeps` lists, for each requested marginal, the kept axis positions
    /// (ascending) within a tensor of the given `sizes`.
    pub fn new(sizes: &[usize], keeps: &[&[usize]]) -> Self {
        let mut axis_steps = Vec::with_capacity(keeps.len());
        let mut buffers = Vec::with_capacity(keeps.len());
        for keep in keeps {
            let mut steps = vec![0usize; sizes.len()];
            let mut stride = 1;
            for &pos in keep.iter().rev() {
                steps[pos] = stride;
                stride *= sizes[pos];
            }
            axis_steps.push(steps);
            buffers.push(vec![0.0; stride]);
        }
        MarginalSet { sizes: sizes.to_vec(), axis_steps, buffers }
    }

    /// Recomputes every marginal from `probs` (length must match the sizes).
    pub fn accumulate(&mut self, probs: &[f64]) {
        debug_assert_eq!(probs.len(), self.sizes.iter().product::<usize>());
        for b in &mut self.buffers {
            b.iter_mut().for_each(|x| *x = 0.0);
        }
        let n = self.sizes.len();
        let k = self.buffers.len();
        let mut digits = vec![0usize; n];
        let mut out_idx = vec![0usize; k];
        for &p in probs {
            for m in 0..k {
                self.buffers[m][out_idx[m]] += p;
            }
            for d in (0..n).rev() {
                digits[d] += 1;
                if digits[d] < self.sizes[d] {
                    for m in 0..k {
                        out_idx[m] += self.axis_steps[m][d];
                    }
                    break;
                }
                digits[d] = 0;
                for m in 0..k {
                    out_idx[m] -= self.axis_steps[m][d] * (self.sizes[d] - 1);
                }
            }
        }
    }

    pub fn entropy(&self, marginal: usize) -> f64 {
        entropy_bits(&self.buffers[marginal])
    }

    pub fn buffer(&self, marginal: usize) -> &[f64] {
        &self.buffers[marginal]
    }
}

/// Shannon entropy of a flat (sub-)distribution in bits.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > PROB_FLOOR {
            h -= p * p.log2();
        }
    }
    h
}

/// The binary entropy function h(p) in bits, with h(0) = h(1) = 0.
pub fn binary_entropy(p: f64) -> Result<f64, InfoError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(InfoError::BadProbability { value: p });
    }
    Ok(entropy_bits(&[p, 1.0 - p]))
}

/// The convolution `p ⋆ d = p(1-d) + (1-p)d`, symmetric in its arguments.
pub fn star(p: f64, d: f64) -> Result<f64, InfoError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(InfoError::BadProbability { value: p });
    }
    if !(0.0..=1.0).contains(&d) {
        return Err(InfoError::BadProbability { value: d });
    }
    Ok(p * (1.0 - d) + (1.0 - p) * d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bsc_joint(crossover: f64) -> JointDist {
        // X uniform binary, Y = X through BSC(crossover).
        let mut probs = vec![0.0; 4];
        for x in 0..2 {
            for y in 0..2 {
                let py = if y == x { 1.0 - crossover } else { crossover };
                probs[x * 2 + y] = 0.5 * py;
            }
        }
        JointDist::new(vec![Var::X, Var::Y], vec![2, 2], probs).unwrap()
    }

    #[test]
    fn entropy_uniform_binary() {
        let j = JointDist::new(vec![Var::X], vec![2], vec![0.5, 0.5]).unwrap();
        assert!((j.entropy(&[Var::X], &[]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_point_mass() {
        let j = JointDist::new(vec![Var::X], vec![2], vec![1.0, 0.0]).unwrap();
        assert_eq!(j.entropy(&[Var::X], &[]).unwrap(), 0.0);
    }

    #[test]
    fn entropy_functional_dependence() {
        let j = bsc_joint(0.0);
        assert!(j.entropy(&[Var::X], &[Var::Y]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn entropy_empty_over_is_zero() {
        let j = bsc_joint(0.1);
        assert_eq!(j.entropy(&[], &[Var::Y]).unwrap(), 0.0);
    }

    #[test]
    fn entropy_unknown_variable_errors() {
        let j = bsc_joint(0.1);
        assert!(matches!(
            j.entropy(&[Var::U], &[]),
            Err(InfoError::UnknownVariable(Var::U))
        ));
    }

    #[test]
    fn mi_independent_uniform() {
        let j = JointDist::new(
            vec![Var::X, Var::Y],
            vec![2, 2],
            vec![0.25, 0.25, 0.25, 0.25],
        )
        .unwrap();
        assert_eq!(j.mutual_information(&[Var::X], &[Var::Y], &[]).unwrap(), 0.0);
    }

    #[test]
    fn mi_copy_channel() {
        let j = bsc_joint(0.0);
        assert!((j.mutual_information(&[Var::X], &[Var::Y], &[]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mi_bsc_quarter() {
        // 1 - h(1/4) where h(1/4) = 2 - (3/4) log2(3).
        let target = 1.0 - (2.0 - 0.75 * 3.0f64.log2());
        assert!((target - 0.18872187554086717).abs() < 1e-12);
        let j = bsc_joint(0.25);
        let mi = j.mutual_information(&[Var::X], &[Var::Y], &[]).unwrap();
        assert!((mi - 0.18872187554086717).abs() < 1e-10, "mi={mi}");
    }

    #[test]
    fn mi_rejects_overlap() {
        let j = bsc_joint(0.25);
        assert!(matches!(
            j.mutual_information(&[Var::X], &[Var::X], &[]),
            Err(InfoError::OverlappingSets(Var::X))
        ));
    }

    #[test]
    fn binary_entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert!((binary_entropy(0.25).unwrap() - 0.8112781244591328).abs() < 1e-12);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
    }

    #[test]
    fn star_values() {
        assert_eq!(star(0.25, 0.0).unwrap(), 0.25);
        for d in [0.0, 0.3, 0.9] {
            assert!((star(0.5, d).unwrap() - 0.5).abs() < 1e-15);
        }
        assert!((star(0.25, 0.1).unwrap() - 0.3).abs() < 1e-15);
        // Endpoint identities.
        for d in [0.0, 0.2, 0.7, 1.0] {
            assert_eq!(star(0.0, d).unwrap(), d);
            assert_eq!(star(1.0, d).unwrap(), 1.0 - d);
        }
        assert!(star(1.2, 0.1).is_err());
    }

    #[test]
    fn markov_independent_triple() {
        let mut probs = vec![0.0; 8];
        for x in 0..2 {
            for y in 0..2 {
                for u in 0..2 {
                    probs[(x * 2 + y) * 2 + u] = 0.125;
                }
            }
        }
        let j = JointDist::new(vec![Var::X, Var::Y, Var::U], vec![2, 2, 2], probs).unwrap();
        assert!(j.verify_markov(&[Var::X], &[Var::Y], &[Var::U]).unwrap() < 1e-12);
    }

    #[test]
    fn markov_empty_mid_detects_dependence() {
        // Y = X uniform binary; testing X - (empty) - Y must report the
        // independence violation |P(0,0) - P(0)P(0)| = 0.25.
        let j = bsc_joint(0.0);
        let v = j.verify_markov(&[Var::X], &[], &[Var::Y]).unwrap();
        assert!((v - 0.25).abs() < 1e-12, "violation={v}");
    }

    #[test]
    fn chain_rule_random_splits() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let sizes = vec![2, rng.gen_range(2..4usize), 2];
            let cells: usize = sizes.iter().product();
            let mut probs: Vec<f64> = (0..cells).map(|_| rng.gen::<f64>() + 1e-4).collect();
            let s: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= s);
            let j =
                JointDist::new(vec![Var::X, Var::Y, Var::U], sizes, probs).unwrap();
            // H(X,Y|U) = H(X|U) + H(Y|X,U)
            let lhs = j.entropy(&[Var::X, Var::Y], &[Var::U]).unwrap();
            let rhs = j.entropy(&[Var::X], &[Var::U]).unwrap()
                + j.entropy(&[Var::Y], &[Var::X, Var::U]).unwrap();
            assert!((lhs - rhs).abs() < 1e-9, "chain rule violated: {lhs} vs {rhs}");
            let mi = j.mutual_information(&[Var::X], &[Var::Y], &[Var::U]).unwrap();
            assert!(mi >= 0.0);
        }
    }

    #[test]
    fn joint_entropy_bounded_by_log_sizes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let sizes = vec![3, 2, 2];
            let cells: usize = sizes.iter().product();
            let mut probs: Vec<f64> = (0..cells).map(|_| rng.gen::<f64>()).collect();
            let s: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= s);
            let j = JointDist::new(vec![Var::X, Var::A, Var::Y], sizes.clone(), probs).unwrap();
            let h = j.entropy(&[Var::X, Var::A, Var::Y], &[]).unwrap();
            let cap: f64 = sizes.iter().map(|&s| (s as f64).log2()).sum();
            assert!(h <= cap + 1e-9);
        }
    }

    #[test]
    fn renormalization_policy() {
        // Off by 1e-7: accepted with renormalization.
        let p = Pmf::new(vec![0.5, 0.4999999]).unwrap();
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Off by 1e-3: rejected.
        assert!(Pmf::new(vec![0.5, 0.499]).is_err());
        // Negative entries: rejected.
        assert!(Pmf::new(vec![1.1, -0.1]).is_err());
    }

    #[test]
    fn marginal_set_matches_generic_marginals() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let sizes = vec![2usize, 3, 2, 2];
        let cells: usize = sizes.iter().product();
        let mut probs: Vec<f64> = (0..cells).map(|_| rng.gen::<f64>()).collect();
        let s: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= s);
        let vars = vec![Var::X, Var::A, Var::Sd, Var::Y];
        let j = JointDist::new(vars.clone(), sizes.clone(), probs.clone()).unwrap();
        let keeps: Vec<Vec<usize>> = vec![vec![0], vec![1, 3], vec![0, 2, 3], vec![0, 1, 2, 3]];
        let mut ms = MarginalSet::new(&sizes, &keeps.iter().map(|k| k.as_slice()).collect::<Vec<_>>());
        ms.accumulate(&probs);
        for (k, keep) in keeps.iter().enumerate() {
            let kept_vars: Vec<Var> = keep.iter().map(|&i| vars[i]).collect();
            let want = j.marginal(&kept_vars).unwrap();
            for (a, b) in ms.buffer(k).iter().zip(want.probs()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((ms.entropy(k) - entropy_bits(want.probs())).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_guard() {
        let sizes = vec![1000, 1000, 11];
        let res = JointDist::new(vec![Var::X, Var::Y, Var::U], sizes, vec![0.0; 11_000_000]);
        assert!(matches!(res, Err(InfoError::TooLarge(_))));
    }
}
