//! Shared helpers for integration tests: random inputs and brute-force
//! oracles that do not reuse the library's dynamic programming.

#![allow(dead_code)]

use kwspot::ctc::{collapse_path, log_add, Alphabet, LabelSequence};
use kwspot::Frames;
use rand::Rng;

/// Posterior frames over `dim` labels whose mass sits on `support` only.
pub fn sparse_posteriors<R: Rng>(
    rng: &mut R,
    frames: usize,
    support: &[usize],
    dim: usize,
) -> Frames {
    let mut out = Frames::zeros(dim, frames);
    for t in 0..frames {
        let row = out.frame_mut(t);
        let mut total = 0.0;
        for &k in support {
            row[k] = rng.random_range(0.05..1.0);
            total += row[k];
        }
        for &k in support {
            row[k] /= total;
        }
    }
    out
}

/// Log-probability of every alignment class of a keyword network.
///
/// `sum[s][t]` / `max[s][t]` combine all framewise paths over frames
/// `s..=t` that start with the entry boundary for exactly one frame and
/// collapse to the node labels (total mass / best path).
pub struct AlignmentOracle {
    pub sum: Vec<Vec<f64>>,
    pub max: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    post: &Frames,
    support: &[usize],
    target: &[usize],
    blank: usize,
    s: usize,
    t: usize,
    path: &mut Vec<usize>,
    logp: f64,
    out: &mut AlignmentOracle,
) {
    // the collapsed prefix must stay a prefix of the target
    let collapsed = collapse_path(path, blank);
    if collapsed.len() > target.len() || collapsed.indices() != &target[..collapsed.len()] {
        return;
    }
    if collapsed.indices() == target {
        let end = t - 1;
        out.sum[s][end] = log_add(out.sum[s][end], logp);
        out.max[s][end] = out.max[s][end].max(logp);
    }
    if t == post.len() {
        return;
    }
    for &label in support {
        // the entry boundary lasts exactly one frame
        if path.len() == 1 && label == target[0] {
            continue;
        }
        let p = post.frame(t)[label];
        if p == 0.0 {
            continue;
        }
        path.push(label);
        dfs(
            post,
            support,
            target,
            blank,
            s,
            t + 1,
            path,
            logp + p.ln(),
            out,
        );
        path.pop();
    }
}

pub fn alignment_oracle(
    post: &Frames,
    support: &[usize],
    nodes: &[usize],
    blank: usize,
) -> AlignmentOracle {
    let n = post.len();
    let mut out = AlignmentOracle {
        sum: vec![vec![f64::NEG_INFINITY; n]; n],
        max: vec![vec![f64::NEG_INFINITY; n]; n],
    };
    for s in 0..n {
        let p = post.frame(s)[nodes[0]];
        if p == 0.0 {
            continue;
        }
        let mut path = vec![nodes[0]];
        dfs(
            post,
            support,
            nodes,
            blank,
            s,
            s + 1,
            &mut path,
            p.ln(),
            &mut out,
        );
    }
    out
}

/// Keyword-only scores per frame implied by the oracle: every start frame
/// is entered with probability one.
pub fn keyword_only_oracle(oracle: &AlignmentOracle) -> (Vec<f64>, Vec<f64>) {
    let n = oracle.sum.len();
    let mut sum = vec![f64::NEG_INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    for t in 0..n {
        for s in 0..=t {
            sum[t] = log_add(sum[t], oracle.sum[s][t]);
            max[t] = max[t].max(oracle.max[s][t]);
        }
    }
    (sum, max)
}

/// Random keyword of 1..=`max_len` letters; repeats are allowed.
pub fn random_keyword<R: Rng>(rng: &mut R, letters: &[char], max_len: usize) -> String {
    let len = rng.random_range(1..=max_len);
    (0..len)
        .map(|_| letters[rng.random_range(0..letters.len())])
        .collect()
}

/// Support set for a keyword: its letters, the boundary, the blank and one
/// distractor letter.
pub fn keyword_support(alphabet: &Alphabet, keyword: &str, distractor: char) -> Vec<usize> {
    let mut support: Vec<usize> = keyword
        .chars()
        .map(|c| alphabet.index_of(c).unwrap())
        .collect();
    support.push(alphabet.boundary());
    support.push(alphabet.blank());
    support.push(alphabet.index_of(distractor).unwrap());
    support.sort_unstable();
    support.dedup();
    support
}

/// Relative difference with an absolute floor on the scale.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn labels(indices: &[usize]) -> LabelSequence {
    LabelSequence::new(indices.to_vec(), usize::MAX).unwrap()
}
