//! Monte Carlo simulation of the random-codebook binning schemes that
//! achieve the source and channel limits, at desk-scale block lengths.
//!
//! Codebook sizes follow the achievability constructions: rates are the
//! mutual informations measured on the supplied optimizing distributions,
//! padded by a caller-chosen margin in place of the vanishing typicality
//! slack. Encoding and decoding use the strict relative-deviation typicality
//! test and the same smallest-index / unique-in-bin rules as the schemes
//! they simulate.

use crate::channel::{assemble_channel_joint, ChannelError, ChannelSpec};
use crate::info::{CondPmf, InfoError, JointDist, Pmf, Var};
use crate::source::{assemble_source_joint, SourceError, SourceSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Total codeword symbols allowed across a codebook; keeps desk-scale runs
/// comfortably in memory.
pub const MEMORY_GUARD_SYMBOLS: usize = 1 << 24;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("codebook of {0} symbols exceeds the memory guard")]
    MemoryGuard(usize),
    #[error("empty sequence")]
    EmptySequence,
    #[error("sequence symbol {symbol} outside alphabet of size {size}")]
    SymbolRange { symbol: usize, size: usize },
    #[error("parameters out of range: {0}")]
    BadParams(&'static str),
}

/// Relative-deviation typicality: every symbol's empirical frequency must
/// sit within `eps * P(a)` of its probability; symbols of probability zero
/// must not occur.
pub fn is_typical(seq: &[usize], pmf: &[f64], eps: f64) -> Result<bool, SimError> {
    if seq.is_empty() {
        return Err(SimError::EmptySequence);
    }
    let mut counts = vec![0usize; pmf.len()];
    for &s in seq {
        if s >= pmf.len() {
            return Err(SimError::SymbolRange { symbol: s, size: pmf.len() });
        }
        counts[s] += 1;
    }
    let n = seq.len() as f64;
    Ok(counts
        .iter()
        .zip(pmf)
        .all(|(&c, &p)| (c as f64 / n - p).abs() <= eps * p))
}

/// Width of the sampling-fluctuation allowance in the codec count bands, in
/// standard deviations of the per-symbol count. The strict relative band
/// `eps p` alone admits no sequences at desk-scale n whenever a cell has
/// probability below 1/(eps n); adding the fluctuation term keeps the true
/// configuration acceptable at small n while the relative term takes over
/// as n grows, recovering the strict test asymptotically.
pub const BAND_Z: f64 = 2.0;

/// Count band for one symbol at block length `n`: the relative-deviation
/// interval `n p (1 ± eps)`, widened by `z` count standard deviations and
/// rounded outward to the integer lattice. Zero-probability symbols must
/// not occur at all.
#[inline]
fn count_band(n: usize, p: f64, eps: f64, z: f64) -> (usize, usize) {
    if p <= 0.0 {
        return (0, 0);
    }
    let nf = n as f64;
    let slack = eps * p * nf + z * (nf * p * (1.0 - p)).sqrt();
    let lo = (nf * p - slack).floor().max(0.0) as usize;
    let hi = (nf * p + slack).ceil() as usize;
    (lo, hi)
}

/// Joint typicality of parallel sequences against a flat joint pmf over the
/// product alphabet (row-major in the order the sequences are given), with
/// the integer-lattice band of [`count_band`].
fn joint_typical(seqs: &[&[usize]], sizes: &[usize], joint: &[f64], eps: f64, z: f64) -> bool {
    let n = seqs[0].len();
    let mut counts = vec![0usize; joint.len()];
    for i in 0..n {
        let mut idx = 0;
        for (k, seq) in seqs.iter().enumerate() {
            idx = idx * sizes[k] + seq[i];
        }
        counts[idx] += 1;
    }
    counts.iter().zip(joint).all(|(&c, &p)| {
        let (lo, hi) = count_band(n, p, eps, z);
        lo <= c && c <= hi
    })
}

fn draw(rng: &mut ChaCha8Rng, pmf: &[f64]) -> usize {
    let mut u = rng.gen::<f64>();
    for (i, &p) in pmf.iter().enumerate() {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    pmf.len() - 1
}

fn draw_seq(rng: &mut ChaCha8Rng, pmf: &[f64], n: usize) -> Vec<usize> {
    (0..n).map(|_| draw(rng, pmf)).collect()
}

/// ceil(2^{n rate}), at least 1.
fn codebook_size(n: usize, rate: f64) -> usize {
    if rate <= 0.0 {
        return 1;
    }
    let bits = n as f64 * rate;
    if bits > 30.0 {
        return 1 << 30;
    }
    (2f64).powf(bits).ceil() as usize
}

/// Aggregate statistics of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub scheme: String,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub eps: f64,
    /// Rates actually used for codebook sizing, bits per symbol.
    pub rates: Vec<(String, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empirical_distortion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empirical_cost: Option<f64>,
    /// Frequency of the encoder's reconstruction estimate differing from the
    /// decoder's output.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_cr: Option<f64>,
    /// Message decoding error frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_me: Option<f64>,
    /// Channel-input decoding error frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_xe: Option<f64>,
    pub encoder_failure_rate: f64,
}

/// Per-trial outcomes, for optional trace output.
#[derive(Debug, Clone, Serialize)]
pub struct TrialTrace {
    pub trial: usize,
    pub encoder_failure: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distortion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cr_mismatch: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message_error: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_error: Option<bool>,
}

// ---------------------------------------------------------------------------
// Source scheme
// ---------------------------------------------------------------------------

/// The optimizing distributions driving the source scheme.
#[derive(Debug, Clone)]
pub struct SourceDists {
    /// P_{A|X}, table `[x][a]`.
    pub pa_given_x: CondPmf,
    /// P_{Xhat|X,Se,A}, table `[x][se][a][xhat]`.
    pub pxhat: CondPmf,
}

#[derive(Debug, Clone, Copy)]
pub struct SourceSchemeParams {
    pub n: usize,
    /// Rate padding in place of the vanishing typicality slack; may be
    /// negative to deliberately undersize the codebooks.
    pub rate_margin: f64,
    pub eps: f64,
    /// Sampling-fluctuation width of the codec count bands; see [`BAND_Z`].
    pub band_z: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Random codebooks for the source scheme: action words indexed by the first
/// message, and per-action reconstruction words arranged in equal bins
/// (bin index transmitted, in-bin index recovered from side information).
pub struct SourceCodebook {
    pub n: usize,
    pub action_words: Vec<Vec<usize>>,
    /// `xhat_words[w1][w2 * v_size + v]`.
    pub xhat_words: Vec<Vec<Vec<usize>>>,
    pub w1_size: usize,
    pub w2_size: usize,
    pub v_size: usize,
    pub rates: SourceRates,
}

#[derive(Debug, Clone, Copy)]
pub struct SourceRates {
    pub r1: f64,
    pub r_codebook: f64,
    pub r_bins: f64,
    pub r_inbin: f64,
}

struct SourceLaws {
    p_a: Vec<f64>,
    /// P_{Xhat|A}, `[a][xhat]`.
    p_xhat_a: Vec<f64>,
    /// Joint (X, A) for first-stage typicality.
    j_xa: Vec<f64>,
    /// Joint (X, Xhat, Se, A) for second-stage typicality.
    j_xxh_se_a: Vec<f64>,
    /// Joint (Sd, Xhat, A) for decoding.
    j_sd_xh_a: Vec<f64>,
}

fn source_laws(spec: &SourceSpec, joint: &JointDist) -> Result<SourceLaws, SimError> {
    let m = |vars: &[Var]| -> Result<Vec<f64>, SimError> {
        Ok(joint.marginal(vars)?.probs().to_vec())
    };
    let p_a = m(&[Var::A])?;
    let j_xh_a = m(&[Var::A, Var::Xhat])?; // order (A, Xhat) per canonical order
    let mut p_xhat_a = vec![0.0; spec.a_size * spec.xhat_size];
    for a in 0..spec.a_size {
        let pa: f64 = (0..spec.xhat_size).map(|xh| j_xh_a[a * spec.xhat_size + xh]).sum();
        for xh in 0..spec.xhat_size {
            p_xhat_a[a * spec.xhat_size + xh] = if pa > 0.0 {
                j_xh_a[a * spec.xhat_size + xh] / pa
            } else {
                1.0 / spec.xhat_size as f64
            };
        }
    }
    Ok(SourceLaws {
        p_a,
        p_xhat_a,
        j_xa: m(&[Var::X, Var::A])?,
        j_xxh_se_a: m(&[Var::X, Var::A, Var::Se, Var::Xhat])?,
        j_sd_xh_a: m(&[Var::A, Var::Sd, Var::Xhat])?,
    })
}

/// Generates the source-scheme codebooks from the measured rates.
pub fn gen_source_codebook(
    spec: &SourceSpec,
    params: &SourceSchemeParams,
    joint: &JointDist,
) -> Result<SourceCodebook, SimError> {
    let n = params.n;
    if n == 0 {
        return Err(SimError::BadParams("block length must be >= 1"));
    }
    let i_xa = joint.mutual_information(&[Var::X], &[Var::A], &[])?;
    let i_cb = joint.mutual_information(&[Var::Xhat], &[Var::X, Var::Se], &[Var::A])?;
    let i_bin = joint.mutual_information(&[Var::Xhat], &[Var::Sd], &[Var::A])?;
    let rates = SourceRates {
        r1: i_xa + params.rate_margin,
        r_codebook: i_cb + params.rate_margin,
        r_bins: i_cb - i_bin + 2.0 * params.rate_margin,
        r_inbin: i_bin - params.rate_margin,
    };
    let w1_size = codebook_size(n, rates.r1);
    let cb_size = codebook_size(n, rates.r_codebook);
    let v_size = codebook_size(n, rates.r_inbin);
    // Equal-sized bins: pad the codebook up to a whole number of bins.
    let w2_size = cb_size.div_ceil(v_size);
    let total = w1_size
        .saturating_add(w1_size.saturating_mul(w2_size).saturating_mul(v_size))
        .saturating_mul(n);
    if total > MEMORY_GUARD_SYMBOLS {
        return Err(SimError::MemoryGuard(total));
    }
    let laws = source_laws(spec, joint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(0);
    let action_words: Vec<Vec<usize>> =
        (0..w1_size).map(|_| draw_seq(&mut rng, &laws.p_a, n)).collect();
    let xhat_words: Vec<Vec<Vec<usize>>> = action_words
        .iter()
        .map(|aw| {
            (0..w2_size * v_size)
                .map(|_| {
                    (0..n)
                        .map(|i| {
                            let row = &laws.p_xhat_a
                                [aw[i] * spec.xhat_size..(aw[i] + 1) * spec.xhat_size];
                            draw(&mut rng, row)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(SourceCodebook { n, action_words, xhat_words, w1_size, w2_size, v_size, rates })
}

/// Runs the source scheme against a fixed codebook. Exposed so tests can
/// permute codebooks and observe that the smallest-index rules bite.
pub fn run_source_trials(
    spec: &SourceSpec,
    codebook: &SourceCodebook,
    params: &SourceSchemeParams,
    joint: &JointDist,
    mut trace: Option<&mut Vec<TrialTrace>>,
) -> Result<SimReport, SimError> {
    let n = params.n;
    let laws = source_laws(spec, joint)?;
    let eps = params.eps;
    let si = spec.si_channel.table();

    let mut dist_sum = 0.0;
    let mut cost_sum = 0.0;
    let mut cr_mismatches = 0usize;
    let mut enc_failures = 0usize;

    for trial in 0..params.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(1 + trial as u64);
        let x: Vec<usize> = draw_seq(&mut rng, spec.source.probs(), n);

        // Stage 1: smallest action index jointly typical with the source.
        let mut w1 = 0usize;
        let mut enc_fail = false;
        match codebook
            .action_words
            .iter()
            .position(|aw| joint_typical(&[&x, aw], &[spec.x_size, spec.a_size], &laws.j_xa, eps, params.band_z))
        {
            Some(i) => w1 = i,
            None => enc_fail = true,
        }
        let a = &codebook.action_words[w1];

        // Side information from the memoryless channel.
        let mut se = vec![0usize; n];
        let mut sd = vec![0usize; n];
        for i in 0..n {
            let row = &si[((x[i] * spec.a_size + a[i]) * spec.se_size * spec.sd_size)
                ..((x[i] * spec.a_size + a[i]) + 1) * spec.se_size * spec.sd_size];
            let flat = draw(&mut rng, row);
            se[i] = flat / spec.sd_size;
            sd[i] = flat % spec.sd_size;
        }

        // Stage 2: smallest (bin, in-bin) reconstruction word typical with
        // the source, encoder SI, and the chosen action word.
        let words = &codebook.xhat_words[w1];
        let mut chosen = 0usize;
        match words.iter().position(|xh| {
            joint_typical(
                &[&x, a, &se, xh],
                &[spec.x_size, spec.a_size, spec.se_size, spec.xhat_size],
                &laws.j_xxh_se_a,
                eps,
                params.band_z,
            )
        }) {
            Some(i) => chosen = i,
            None => enc_fail = true,
        }
        let (w2, _v) = (chosen / codebook.v_size, chosen % codebook.v_size);
        let psi = &words[chosen];

        // Decoder: the unique in-bin word typical with (Sd, A); index 0 on
        // failure or ambiguity.
        let bin = &words[w2 * codebook.v_size..(w2 + 1) * codebook.v_size];
        let mut found: Option<usize> = None;
        let mut unique = true;
        for (v, xh) in bin.iter().enumerate() {
            if joint_typical(
                &[a, &sd, xh],
                &[spec.a_size, spec.sd_size, spec.xhat_size],
                &laws.j_sd_xh_a,
                eps,
                params.band_z,
            ) {
                if found.is_some() {
                    unique = false;
                    break;
                }
                found = Some(v);
            }
        }
        let v_hat = match (found, unique) {
            (Some(v), true) => v,
            _ => 0,
        };
        let decoded = &bin[v_hat];

        let d_trial: f64 =
            (0..n).map(|i| spec.d(x[i], decoded[i])).sum::<f64>() / n as f64;
        let c_trial: f64 = (0..n).map(|i| spec.cost[a[i]]).sum::<f64>() / n as f64;
        let mismatch = decoded != psi;
        dist_sum += d_trial;
        cost_sum += c_trial;
        cr_mismatches += mismatch as usize;
        enc_failures += enc_fail as usize;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TrialTrace {
                trial,
                encoder_failure: enc_fail,
                distortion: Some(d_trial),
                cr_mismatch: Some(mismatch),
                message_error: None,
                input_error: None,
            });
        }
    }

    let t = params.trials as f64;
    Ok(SimReport {
        scheme: "source".into(),
        n,
        trials: params.trials,
        seed: params.seed,
        eps,
        rates: vec![
            ("r1".into(), codebook.rates.r1),
            ("r_codebook".into(), codebook.rates.r_codebook),
            ("r_bins".into(), codebook.rates.r_bins),
            ("r_inbin".into(), codebook.rates.r_inbin),
        ],
        empirical_distortion: Some(dist_sum / t),
        empirical_cost: Some(cost_sum / t),
        p_cr: Some(cr_mismatches as f64 / t),
        p_me: None,
        p_xe: None,
        encoder_failure_rate: enc_failures as f64 / t,
    })
}

/// Simulates the two-stage source scheme end to end.
pub fn simulate_source_scheme(
    spec: &SourceSpec,
    dists: &SourceDists,
    params: &SourceSchemeParams,
) -> Result<SimReport, SimError> {
    if params.trials == 0 {
        return Err(SimError::BadParams("trials must be >= 1"));
    }
    if !(params.eps > 0.0 && params.eps < 1.0) {
        return Err(SimError::BadParams("eps must lie in (0, 1)"));
    }
    let joint = assemble_source_joint(spec, &dists.pa_given_x, &dists.pxhat)?;
    let codebook = gen_source_codebook(spec, params, &joint)?;
    run_source_trials(spec, &codebook, params, &joint, None)
}

// ---------------------------------------------------------------------------
// Channel scheme
// ---------------------------------------------------------------------------

/// The optimizing distributions driving the channel scheme.
#[derive(Debug, Clone)]
pub struct ChannelDists {
    pub p_a: Pmf,
    /// P_{X|A,Se}, table `[a][se][x]`.
    pub p_x: CondPmf,
}

#[derive(Debug, Clone, Copy)]
pub struct ChannelSchemeParams {
    pub n: usize,
    /// Total message rate in bits per channel use.
    pub rate: f64,
    /// Padding playing the role of the vanishing slack in the split and the
    /// bin size.
    pub margin: f64,
    pub eps: f64,
    /// Sampling-fluctuation width of the codec count bands; see [`BAND_Z`].
    pub band_z: f64,
    pub trials: usize,
    pub seed: u64,
}

pub struct ChannelCodebook {
    pub n: usize,
    pub action_words: Vec<Vec<usize>>,
    /// `x_words[m1][m2 * j_size + j]`.
    pub x_words: Vec<Vec<Vec<usize>>>,
    pub m1_size: usize,
    pub m2_size: usize,
    pub j_size: usize,
    pub rates: ChannelRates,
}

#[derive(Debug, Clone, Copy)]
pub struct ChannelRates {
    pub r1: f64,
    pub r2: f64,
    pub r_bin_pad: f64,
}

struct ChannelLaws {
    p_a: Vec<f64>,
    /// P_{X|A}, `[a][x]`.
    p_x_a: Vec<f64>,
    /// Joint (Se, A, X) for encoding.
    j_se_a_x: Vec<f64>,
    /// Joint (Y, Sd, A) for stage-1 decoding.
    j_y_sd_a: Vec<f64>,
    /// Joint (Y, Sd, A, X) for stage-2 decoding.
    j_y_sd_a_x: Vec<f64>,
}

fn channel_laws(spec: &ChannelSpec, joint: &JointDist) -> Result<ChannelLaws, SimError> {
    let m = |vars: &[Var]| -> Result<Vec<f64>, SimError> {
        Ok(joint.marginal(vars)?.probs().to_vec())
    };
    let p_a = m(&[Var::A])?;
    let j_ax = m(&[Var::A, Var::X])?;
    let mut p_x_a = vec![0.0; spec.a_size * spec.x_size];
    for a in 0..spec.a_size {
        let pa: f64 = (0..spec.x_size).map(|x| j_ax[a * spec.x_size + x]).sum();
        for x in 0..spec.x_size {
            p_x_a[a * spec.x_size + x] =
                if pa > 0.0 { j_ax[a * spec.x_size + x] / pa } else { 1.0 / spec.x_size as f64 };
        }
    }
    Ok(ChannelLaws {
        p_a,
        p_x_a,
        j_se_a_x: m(&[Var::A, Var::Se, Var::X])?,
        j_y_sd_a: m(&[Var::A, Var::Sd, Var::Y])?,
        j_y_sd_a_x: m(&[Var::A, Var::Sd, Var::X, Var::Y])?,
    })
}

pub fn gen_channel_codebook(
    spec: &ChannelSpec,
    params: &ChannelSchemeParams,
    joint: &JointDist,
) -> Result<ChannelCodebook, SimError> {
    let n = params.n;
    if n == 0 {
        return Err(SimError::BadParams("block length must be >= 1"));
    }
    let i_a = joint.mutual_information(&[Var::A], &[Var::Y, Var::Sd], &[])?;
    let i_xse = joint.mutual_information(&[Var::X], &[Var::Se], &[Var::A])?;
    // Rate split per the two-stage construction: as much of the message as
    // the action codeword can carry, the rest through the bin index.
    let r1 = params.rate.min((i_a - params.margin).max(0.0));
    let r2 = params.rate - r1;
    let r_bin_pad = i_xse + params.margin;
    let m1_size = codebook_size(n, r1);
    let m2_size = codebook_size(n, r2);
    let j_size = codebook_size(n, r_bin_pad);
    let total = m1_size
        .saturating_add(m1_size.saturating_mul(m2_size).saturating_mul(j_size))
        .saturating_mul(n);
    if total > MEMORY_GUARD_SYMBOLS {
        return Err(SimError::MemoryGuard(total));
    }
    let laws = channel_laws(spec, joint)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(0);
    let action_words: Vec<Vec<usize>> =
        (0..m1_size).map(|_| draw_seq(&mut rng, &laws.p_a, n)).collect();
    let x_words: Vec<Vec<Vec<usize>>> = action_words
        .iter()
        .map(|aw| {
            (0..m2_size * j_size)
                .map(|_| {
                    (0..n)
                        .map(|i| {
                            let row =
                                &laws.p_x_a[aw[i] * spec.x_size..(aw[i] + 1) * spec.x_size];
                            draw(&mut rng, row)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(ChannelCodebook {
        n,
        action_words,
        x_words,
        m1_size,
        m2_size,
        j_size,
        rates: ChannelRates { r1, r2, r_bin_pad },
    })
}

pub fn run_channel_trials(
    spec: &ChannelSpec,
    codebook: &ChannelCodebook,
    params: &ChannelSchemeParams,
    joint: &JointDist,
    mut trace: Option<&mut Vec<TrialTrace>>,
) -> Result<SimReport, SimError> {
    let n = params.n;
    let laws = channel_laws(spec, joint)?;
    let eps = params.eps;
    let state = spec.state_channel.table();

    let mut m_errors = 0usize;
    let mut x_errors = 0usize;
    let mut enc_failures = 0usize;

    for trial in 0..params.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        rng.set_stream(1 + trial as u64);
        let m1 = rng.gen_range(0..codebook.m1_size);
        let m2 = rng.gen_range(0..codebook.m2_size);
        let a = &codebook.action_words[m1];

        let mut se = vec![0usize; n];
        let mut sd = vec![0usize; n];
        for i in 0..n {
            let row = &state[(a[i] * spec.se_size * spec.sd_size)
                ..(a[i] + 1) * spec.se_size * spec.sd_size];
            let flat = draw(&mut rng, row);
            se[i] = flat / spec.sd_size;
            sd[i] = flat % spec.sd_size;
        }

        // Encoder: smallest in-bin index typical with the action and state.
        let words = &codebook.x_words[m1];
        let bin = &words[m2 * codebook.j_size..(m2 + 1) * codebook.j_size];
        let mut j = 0usize;
        let mut enc_fail = false;
        match bin.iter().position(|xw| {
            joint_typical(
                &[a, &se, xw],
                &[spec.a_size, spec.se_size, spec.x_size],
                &laws.j_se_a_x,
                eps,
                params.band_z,
            )
        }) {
            Some(i) => j = i,
            None => enc_fail = true,
        }
        let x = &bin[j];

        // Channel output.
        let mut y = vec![0usize; n];
        for i in 0..n {
            let row: Vec<f64> = (0..spec.y_size)
                .map(|yy| main_prob(spec, x[i], se[i], sd[i], a[i], yy))
                .collect();
            y[i] = draw(&mut rng, &row);
        }

        // Stage 1: smallest action index typical with (Y, Sd).
        let m1_hat = codebook
            .action_words
            .iter()
            .position(|aw| {
                joint_typical(
                    &[aw, &sd, &y],
                    &[spec.a_size, spec.sd_size, spec.y_size],
                    &laws.j_y_sd_a,
                    eps,
                    params.band_z,
                )
            })
            .unwrap_or(0);

        // Stage 2: smallest (m2, j) typical with (Y, Sd, A).
        let a_hat = &codebook.action_words[m1_hat];
        let words_hat = &codebook.x_words[m1_hat];
        let chosen = words_hat
            .iter()
            .position(|xw| {
                joint_typical(
                    &[a_hat, &sd, xw, &y],
                    &[spec.a_size, spec.sd_size, spec.x_size, spec.y_size],
                    &laws.j_y_sd_a_x,
                    eps,
                    params.band_z,
                )
            })
            .unwrap_or(0);
        let m2_hat = chosen / codebook.j_size;
        let x_hat = &words_hat[chosen];

        let m_err = (m1_hat, m2_hat) != (m1, m2);
        let x_err = x_hat != x;
        m_errors += m_err as usize;
        x_errors += x_err as usize;
        enc_failures += enc_fail as usize;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TrialTrace {
                trial,
                encoder_failure: enc_fail,
                distortion: None,
                cr_mismatch: None,
                message_error: Some(m_err),
                input_error: Some(x_err),
            });
        }
    }

    let t = params.trials as f64;
    Ok(SimReport {
        scheme: "channel".into(),
        n,
        trials: params.trials,
        seed: params.seed,
        eps,
        rates: vec![
            ("r1".into(), codebook.rates.r1),
            ("r2".into(), codebook.rates.r2),
            ("r_bin_pad".into(), codebook.rates.r_bin_pad),
        ],
        empirical_distortion: None,
        empirical_cost: None,
        p_cr: None,
        p_me: Some(m_errors as f64 / t),
        p_xe: Some(x_errors as f64 / t),
        encoder_failure_rate: enc_failures as f64 / t,
    })
}

fn main_prob(spec: &ChannelSpec, x: usize, se: usize, sd: usize, a: usize, y: usize) -> f64 {
    match &spec.main {
        crate::channel::MainChannel::Standard(m) => {
            m.table()[((x * spec.se_size + se) * spec.sd_size + sd) * spec.y_size + y]
        }
        crate::channel::MainChannel::ActionDependent(m) => {
            m.table()
                [(((x * spec.se_size + se) * spec.sd_size + sd) * spec.a_size + a) * spec.y_size + y]
        }
    }
}

/// Simulates the two-stage channel scheme end to end.
pub fn simulate_channel_scheme(
    spec: &ChannelSpec,
    dists: &ChannelDists,
    params: &ChannelSchemeParams,
) -> Result<SimReport, SimError> {
    if params.trials == 0 {
        return Err(SimError::BadParams("trials must be >= 1"));
    }
    if !(params.eps > 0.0 && params.eps < 1.0) {
        return Err(SimError::BadParams("eps must lie in (0, 1)"));
    }
    if !(params.rate > 0.0) {
        return Err(SimError::BadParams("rate must be positive"));
    }
    let joint = assemble_channel_joint(spec, &dists.p_a, &dists.p_x)?;
    let codebook = gen_channel_codebook(spec, params, &joint)?;
    run_channel_trials(spec, &codebook, params, &joint, None)
}
