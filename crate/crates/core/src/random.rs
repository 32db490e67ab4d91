//! Seeded random instances for property tests and the `check` suites.

use crate::channel::{ChannelSpec, MainChannel};
use crate::info::{CondPmf, Pmf};
use crate::source::SourceSpec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_pmf(rng: &mut ChaCha8Rng, n: usize) -> Pmf {
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-6).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    Pmf::new(v).expect("normalized")
}

pub fn random_cond(rng: &mut ChaCha8Rng, cond_sizes: &[usize], out_sizes: &[usize]) -> CondPmf {
    let groups: usize = cond_sizes.iter().product();
    let arity: usize = out_sizes.iter().product();
    let mut table = vec![0.0; groups * arity];
    for g in 0..groups {
        let mut s = 0.0;
        for o in 0..arity {
            let v = rng.gen::<f64>() + 1e-6;
            table[g * arity + o] = v;
            s += v;
        }
        for o in 0..arity {
            table[g * arity + o] /= s;
        }
    }
    CondPmf::new(cond_sizes.to_vec(), out_sizes.to_vec(), table).expect("normalized")
}

/// Fully random binary-ish channel spec (all alphabets of size 2 by default).
pub fn random_channel_spec(rng: &mut ChaCha8Rng, action_dependent: bool) -> ChannelSpec {
    let (a, se, sd, x, y) = (2, 2, 2, 2, 2);
    let state_channel = random_cond(rng, &[a], &[se, sd]);
    let main = if action_dependent {
        MainChannel::ActionDependent(random_cond(rng, &[x, se, sd, a], &[y]))
    } else {
        MainChannel::Standard(random_cond(rng, &[x, se, sd], &[y]))
    };
    ChannelSpec { a_size: a, se_size: se, sd_size: sd, x_size: x, y_size: y, state_channel, main }
}

/// Random channel spec satisfying the degenerate-improvement structure:
/// Se and Sd independent given A, and the main channel ignoring Se.
pub fn random_example2_spec(rng: &mut ChaCha8Rng) -> ChannelSpec {
    let (a, se, sd, x, y) = (2, 2, 2, 2, 2);
    let p_se = random_cond(rng, &[a], &[se]);
    let p_sd = random_cond(rng, &[a], &[sd]);
    let mut state = vec![0.0; a * se * sd];
    for ai in 0..a {
        for s1 in 0..se {
            for s2 in 0..sd {
                state[(ai * se + s1) * sd + s2] = p_se.prob(ai, s1) * p_sd.prob(ai, s2);
            }
        }
    }
    let p_y = random_cond(rng, &[x, sd], &[y]);
    let mut main = vec![0.0; x * se * sd * y];
    for xi in 0..x {
        for s1 in 0..se {
            for s2 in 0..sd {
                for yi in 0..y {
                    main[((xi * se + s1) * sd + s2) * y + yi] = p_y.prob(xi * sd + s2, yi);
                }
            }
        }
    }
    ChannelSpec {
        a_size: a,
        se_size: se,
        sd_size: sd,
        x_size: x,
        y_size: y,
        state_channel: CondPmf::new(vec![a], vec![se, sd], state).expect("normalized"),
        main: MainChannel::Standard(CondPmf::new(vec![x, se, sd], vec![y], main).expect("normalized")),
    }
}

/// Random binary source spec: binary everything except a ternary decoder-SI
/// alphabet now and then, random distortion in [0,1] with a zero diagonal,
/// and random costs in [0,1].
pub fn random_source_spec(rng: &mut ChaCha8Rng) -> SourceSpec {
    let (x, a, se, sd, xh) = (2, 2, 2, 2, 2);
    let mut distortion = vec![0.0; x * xh];
    for xi in 0..x {
        for xhi in 0..xh {
            distortion[xi * xh + xhi] = if xi == xhi { 0.0 } else { 0.5 + rng.gen::<f64>() * 0.5 };
        }
    }
    let cost = (0..a).map(|_| rng.gen::<f64>()).collect();
    SourceSpec {
        x_size: x,
        a_size: a,
        se_size: se,
        sd_size: sd,
        xhat_size: xh,
        source: random_pmf(rng, x),
        si_channel: random_cond(rng, &[x, a], &[se, sd]),
        distortion,
        cost,
    }
}
