//! Memory attack on a protocol that uses a fresh device pair for every
//! round: a device from the key pair of one run is reused in the next run
//! and simply repeats its old output.
//!
//! Each run uses `M N^2` pairs with inputs `0..N` at angles `k pi / 2N`.
//! Pairs whose inputs are adjacent modulo `N` are "close"; one close pair is
//! chosen for the key and the others are tested against the correlation
//! their angle difference predicts.

use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::qsim::{sample_pair, Basis, CorrelationModel};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BhkParams {
    pub m: usize,
    pub n: usize,
    /// Cheat in the second run (false runs two honest runs).
    pub cheat: bool,
    /// Only close pairs are published in the second run.
    pub publish_close_only: bool,
    pub visibility: f64,
}

impl BhkParams {
    pub fn pairs(&self) -> usize {
        self.m * self.n * self.n
    }
}

/// Per-trial outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BhkTrial {
    /// The cheating pair was published, so Eve learns the first key bit.
    pub leaked: bool,
    /// The cheating pair's published outputs did not expose it.
    pub undetected: bool,
    /// Every published close pair matched its expected correlation.
    pub all_tests_passed: bool,
    pub close_pairs: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BhkStats {
    pub trials: usize,
    pub leak_rate: f64,
    pub undetected_rate: f64,
    pub all_tests_pass_rate: f64,
    pub mean_violations: f64,
}

pub fn angle(k: usize, n: usize) -> Basis {
    Basis::new(k as f64 * PI / (2 * n) as f64)
}

/// Inputs adjacent modulo `n`, including equal.
pub fn is_close(a: usize, b: usize, n: usize) -> bool {
    let d = (a + n - b) % n;
    d == 0 || d == 1 || d == n - 1
}

/// Close pairs whose angle difference gives `cos 2 delta > 0` should be
/// anticorrelated; the wrap-around pairs `(0, n - 1)` should be correlated.
pub fn expects_anticorrelation(a: usize, b: usize, n: usize) -> bool {
    let delta = angle(a, n).angle() - angle(b, n).angle();
    (2.0 * delta).cos() > 0.0
}

fn consistent(a_bit: bool, b_bit: bool, a: usize, b: usize, n: usize) -> bool {
    (a_bit != b_bit) == expects_anticorrelation(a, b, n)
}

struct Run {
    inputs: Vec<(usize, usize)>,
    outputs: Vec<(bool, bool)>,
    close: Vec<usize>,
}

fn run<R: Rng + ?Sized>(p: &BhkParams, model: CorrelationModel, rng: &mut R) -> Run {
    let n = p.n;
    let mut inputs = Vec::with_capacity(p.pairs());
    let mut outputs = Vec::with_capacity(p.pairs());
    for _ in 0..p.pairs() {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        let o = sample_pair(model, angle(a, n), angle(b, n), rng);
        inputs.push((a, b));
        outputs.push((o.a.bit(), o.b.bit()));
    }
    let close = (0..p.pairs())
        .filter(|&i| is_close(inputs[i].0, inputs[i].1, n))
        .collect();
    Run {
        inputs,
        outputs,
        close,
    }
}

pub fn run_bhk_trial<R: Rng + ?Sized>(p: &BhkParams, rng: &mut R) -> BhkTrial {
    let model = CorrelationModel::new(p.visibility).expect("visibility validated");
    let n = p.n;
    let first = run(p, model, rng);
    let Some(&k1) = first.close.choose(rng) else {
        return BhkTrial {
            leaked: false,
            undetected: true,
            all_tests_passed: true,
            close_pairs: 0,
            violations: 0,
        };
    };
    let mut second = run(p, model, rng);
    if p.cheat {
        // Alice's device from the old key pair repeats its old output.
        second.outputs[k1].0 = first.outputs[k1].0;
    }
    let k2 = second.close.choose(rng).copied();
    let published = |i: usize| {
        Some(i) != k2 && (!p.publish_close_only || is_close(second.inputs[i].0, second.inputs[i].1, n))
    };
    let check = |i: usize| {
        let (a, b) = second.inputs[i];
        let (x, y) = second.outputs[i];
        consistent(x, y, a, b, n)
    };
    let violations = second
        .close
        .iter()
        .filter(|&&i| published(i) && !check(i))
        .count();
    let k1_close = is_close(second.inputs[k1].0, second.inputs[k1].1, n);
    let leaked = p.cheat && published(k1);
    let undetected = !(published(k1) && k1_close && !check(k1));
    BhkTrial {
        leaked,
        undetected,
        all_tests_passed: violations == 0,
        close_pairs: second.close.len(),
        violations,
    }
}

/// Independent trials, trial `i` seeded with `derive_seed(seed, i)`.
pub fn run_bhk(p: &BhkParams, trials: usize, seed: u64) -> (BhkStats, Vec<BhkTrial>) {
    let results: Vec<BhkTrial> = (0..trials as u64)
        .into_par_iter()
        .map(|i| run_bhk_trial(p, &mut rng_from_seed(derive_seed(seed, i))))
        .collect();
    let rate = |f: fn(&BhkTrial) -> bool| results.iter().filter(|t| f(t)).count() as f64 / trials.max(1) as f64;
    let stats = BhkStats {
        trials,
        leak_rate: rate(|t| t.leaked),
        undetected_rate: rate(|t| t.undetected),
        all_tests_pass_rate: rate(|t| t.all_tests_passed),
        mean_violations: results.iter().map(|t| t.violations as f64).sum::<f64>() / trials.max(1) as f64,
    };
    (stats, results)
}

/// `1 - 3 / (2N)`: the cheating pair lands on close inputs with probability
/// `3 / N` and then fails its check half the time.
pub fn expected_undetected(n: usize) -> f64 {
    1.0 - 3.0 / (2.0 * n as f64)
}

/// `(M N^2 - 1) / (M N^2)`.
pub fn expected_leak(m: usize, n: usize) -> f64 {
    let p = (m * n * n) as f64;
    (p - 1.0) / p
}
