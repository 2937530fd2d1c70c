//! Privacy amplification: Toeplitz hashing, entropy accounting and exact
//! leftover-hash checks on small systems.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PampError {
    #[error("seed has {got} bits, expected n + t - 1 = {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("output length {t} exceeds input length {n}")]
    OutputTooLong { n: usize, t: usize },
    #[error("input length {n} exceeds the exhaustive limit {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error("invalid entropy budget: {0}")]
    InvalidBudget(String),
}

/// First column (top to bottom) followed by the rest of the first row (left
/// to right) of a `t x n` Toeplitz matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashSeed {
    bits: Vec<bool>,
}

impl HashSeed {
    pub fn new(bits: Vec<bool>) -> Self {
        HashSeed { bits }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        HashSeed {
            bits: (0..len).map(|_| rng.random()).collect(),
        }
    }

    /// Seed whose bits are the low `len` bits of `value`, index 0 first.
    pub fn from_index(value: u64, len: usize) -> Self {
        HashSeed {
            bits: (0..len).map(|i| (value >> i) & 1 == 1).collect(),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Entry `T[i][j]`.
    fn entry(&self, t: usize, i: usize, j: usize) -> bool {
        if i >= j {
            self.bits[i - j]
        } else {
            self.bits[t + (j - i) - 1]
        }
    }
}

/// `T x` over GF(2) for the Toeplitz matrix `T` described by `seed`.
pub fn toeplitz_hash(x: &[bool], seed: &HashSeed, t: usize) -> Result<Vec<bool>, PampError> {
    let n = x.len();
    if t > n {
        return Err(PampError::OutputTooLong { n, t });
    }
    let expected = (n + t).saturating_sub(1);
    if seed.len() != expected {
        return Err(PampError::DimensionMismatch {
            expected,
            got: seed.len(),
        });
    }
    let ones: Vec<usize> = (0..n).filter(|&j| x[j]).collect();
    Ok((0..t)
        .map(|i| {
            ones.iter()
                .fold(false, |acc, &j| acc ^ seed.entry(t, i, j))
        })
        .collect())
}

/// Ratio applied to the smooth min-entropy before subtracting leakage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MFactor {
    pub num: u32,
    pub den: u32,
}

impl MFactor {
    pub const ONE: MFactor = MFactor { num: 1, den: 1 };

    /// `(m - 1) / m`.
    pub fn multi_device(m: u32) -> Self {
        MFactor { num: m - 1, den: m }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinEntropyBudget {
    pub hmin_eps: f64,
    pub epsilon: f64,
    pub leakage_bits: u64,
    pub security_margin: u64,
    pub m_factor: MFactor,
}

impl MinEntropyBudget {
    pub fn new(
        hmin_eps: f64,
        epsilon: f64,
        leakage_bits: u64,
        security_margin: u64,
        m_factor: MFactor,
    ) -> Result<Self, PampError> {
        if !hmin_eps.is_finite() || hmin_eps < 0.0 {
            return Err(PampError::InvalidBudget(format!("hmin {hmin_eps}")));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(PampError::InvalidBudget(format!("epsilon {epsilon}")));
        }
        if m_factor.den == 0 || m_factor.num > m_factor.den {
            return Err(PampError::InvalidBudget(format!(
                "m factor {}/{}",
                m_factor.num, m_factor.den
            )));
        }
        Ok(MinEntropyBudget {
            hmin_eps,
            epsilon,
            leakage_bits,
            security_margin,
            m_factor,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputLength {
    pub t: usize,
    /// Guaranteed trace distance from a uniform key independent of Eve.
    pub distance_bound: f64,
}

/// `t = max(0, floor(m * (hmin - leakage) - l))`.
pub fn choose_output_length(budget: &MinEntropyBudget) -> OutputLength {
    let usable = budget.hmin_eps - budget.leakage_bits as f64;
    let scaled = usable * budget.m_factor.num as f64 / budget.m_factor.den as f64;
    let t = (scaled - budget.security_margin as f64).floor().max(0.0) as usize;
    OutputLength {
        t,
        distance_bound: leftover_bound(t as f64 + budget.security_margin as f64, t, budget.epsilon),
    }
}

/// `epsilon + 2^{-(hmin - t)/2} / 2`.
pub fn leftover_bound(hmin: f64, t: usize, epsilon: f64) -> f64 {
    epsilon + 0.5 * 2f64.powf(-(hmin - t as f64) / 2.0)
}

/// Largest input length accepted by [`distance_oracle`].
pub const ORACLE_MAX_N: usize = 12;
/// Largest input length accepted by exhaustive [`collision_check`].
pub const COLLISION_MAX_N: usize = 10;

/// Joint law of an `n`-bit string `X` and a side-information symbol `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    n: usize,
    e_card: usize,
    /// Row-major in `x`: `probs[x * e_card + e]`.
    probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(n: usize, e_card: usize, probs: Vec<f64>) -> Result<Self, PampError> {
        if n > ORACLE_MAX_N {
            return Err(PampError::TooLarge {
                n,
                limit: ORACLE_MAX_N,
            });
        }
        if probs.len() != (1 << n) * e_card {
            return Err(PampError::DimensionMismatch {
                expected: (1 << n) * e_card,
                got: probs.len(),
            });
        }
        Ok(JointDistribution { n, e_card, probs })
    }

    /// Uniform `X` with `E = f(X)`.
    pub fn uniform_with(
        n: usize,
        e_card: usize,
        f: impl Fn(u32) -> usize,
    ) -> Result<Self, PampError> {
        if n > ORACLE_MAX_N {
            return Err(PampError::TooLarge {
                n,
                limit: ORACLE_MAX_N,
            });
        }
        let size = 1usize << n;
        let mut probs = vec![0.0; size * e_card];
        for x in 0..size {
            let e = f(x as u32);
            assert!(e < e_card, "side information symbol out of range");
            probs[x * e_card + e] = 1.0 / size as f64;
        }
        JointDistribution::new(n, e_card, probs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn prob(&self, x: usize, e: usize) -> f64 {
        self.probs[x * self.e_card + e]
    }
}

/// Side-information families used by the exhaustive checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SideInfo {
    Constant,
    /// The first `j` bits of `X` (bit 0 is the first).
    Prefix(usize),
    Parity,
}

impl SideInfo {
    pub fn distribution(self, n: usize) -> Result<JointDistribution, PampError> {
        match self {
            SideInfo::Constant => JointDistribution::uniform_with(n, 1, |_| 0),
            SideInfo::Prefix(j) => {
                let j = j.min(n);
                JointDistribution::uniform_with(n, 1 << j, move |x| (x & ((1 << j) - 1)) as usize)
            }
            SideInfo::Parity => {
                JointDistribution::uniform_with(n, 2, |x| (x.count_ones() & 1) as usize)
            }
        }
    }
}

/// `-log2 sum_e max_x P(x, e)`.
pub fn min_entropy(joint: &JointDistribution) -> f64 {
    let guess: f64 = (0..joint.e_card)
        .map(|e| {
            (0..1usize << joint.n)
                .map(|x| joint.prob(x, e))
                .fold(0.0, f64::max)
        })
        .sum();
    -guess.log2()
}

/// Row masks of the `t x n` Toeplitz matrix for a seed index; bit `j` of
/// `rows[i]` is `T[i][j]`, with input bit `j` stored at integer bit `j`.
fn toeplitz_rows(seed_index: u64, n: usize, t: usize) -> Vec<u32> {
    let seed = HashSeed::from_index(seed_index, n + t - 1);
    (0..t)
        .map(|i| {
            (0..n).fold(0u32, |acc, j| acc | ((seed.entry(t, i, j) as u32) << j))
        })
        .collect()
}

fn hash_index(rows: &[u32], x: u32) -> usize {
    rows.iter()
        .enumerate()
        .fold(0usize, |acc, (i, &r)| acc | ((((r & x).count_ones() & 1) as usize) << i))
}

/// Exact trace distance, averaged over every Toeplitz seed, between
/// `(h_S(X), E)` and `(U_t, E)`.
pub fn distance_oracle(joint: &JointDistribution, t: usize) -> Result<f64, PampError> {
    let n = joint.n;
    if t > n {
        return Err(PampError::OutputTooLong { n, t });
    }
    if t == 0 {
        return Ok(0.0);
    }
    let e_card = joint.e_card;
    let p_e: Vec<f64> = (0..e_card)
        .map(|e| (0..1usize << n).map(|x| joint.prob(x, e)).sum())
        .collect();
    let uniform = 1.0 / (1u64 << t) as f64;
    let seeds = 1u64 << (n + t - 1);
    let per_seed: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let rows = toeplitz_rows(s, n, t);
            let mut joint_out = vec![0.0; (1 << t) * e_card];
            for x in 0..1usize << n {
                let h = hash_index(&rows, x as u32);
                for e in 0..e_card {
                    joint_out[h * e_card + e] += joint.prob(x, e);
                }
            }
            let mut d = 0.0;
            for h in 0..1usize << t {
                for e in 0..e_card {
                    d += (joint_out[h * e_card + e] - uniform * p_e[e]).abs();
                }
            }
            0.5 * d
        })
        .collect();
    // Sequential sum keeps the result independent of thread scheduling.
    Ok(per_seed.iter().sum::<f64>() / seeds as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollisionMode {
    /// Every distinct pair against every seed.
    Exhaustive,
    /// Random pairs against random seeds.
    Sampled { pairs: u64, seeds: u64, rng_seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub n: usize,
    pub t: usize,
    /// Largest observed `Pr_S[h_S(x) = h_S(y)]` over the checked pairs.
    pub max_collision_probability: f64,
    /// `2^{-t}`.
    pub bound: f64,
    pub pairs_checked: u64,
    pub seeds_checked: u64,
}

impl CollisionReport {
    pub fn within_bound(&self) -> bool {
        self.max_collision_probability <= self.bound + 1e-12
    }
}

/// Empirical check of two-universality: `Pr_S[h_S(x) = h_S(y)] <= 2^{-t}`.
pub fn collision_check(n: usize, t: usize, mode: CollisionMode) -> Result<CollisionReport, PampError> {
    if t > n || t == 0 {
        return Err(PampError::OutputTooLong { n, t });
    }
    let bound = 1.0 / (1u64 << t) as f64;
    match mode {
        CollisionMode::Exhaustive => {
            if n > COLLISION_MAX_N {
                return Err(PampError::TooLarge {
                    n,
                    limit: COLLISION_MAX_N,
                });
            }
            let size = 1usize << n;
            let pairs = size * (size - 1) / 2;
            let seeds = 1u64 << (n + t - 1);
            let counts = (0..seeds)
                .into_par_iter()
                .fold(
                    || vec![0u32; pairs],
                    |mut acc, s| {
                        let rows = toeplitz_rows(s, n, t);
                        let h: Vec<usize> = (0..size).map(|x| hash_index(&rows, x as u32)).collect();
                        let mut k = 0;
                        for x in 0..size {
                            for y in x + 1..size {
                                acc[k] += (h[x] == h[y]) as u32;
                                k += 1;
                            }
                        }
                        acc
                    },
                )
                .reduce(
                    || vec![0u32; pairs],
                    |mut a, b| {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                        a
                    },
                );
            let max = counts.iter().copied().max().unwrap_or(0);
            Ok(CollisionReport {
                n,
                t,
                max_collision_probability: max as f64 / seeds as f64,
                bound,
                pairs_checked: pairs as u64,
                seeds_checked: seeds,
            })
        }
        CollisionMode::Sampled {
            pairs,
            seeds,
            rng_seed,
        } => {
            let mut rng = crate::seed::rng_from_seed(rng_seed);
            let mut max: f64 = 0.0;
            for _ in 0..pairs {
                let x: Vec<bool> = (0..n).map(|_| rng.random()).collect();
                let mut y: Vec<bool> = (0..n).map(|_| rng.random()).collect();
                if x == y {
                    y[0] = !y[0];
                }
                let mut hits = 0u64;
                for _ in 0..seeds {
                    let s = HashSeed::random(n + t - 1, &mut rng);
                    hits += (toeplitz_hash(&x, &s, t)? == toeplitz_hash(&y, &s, t)?) as u64;
                }
                max = max.max(hits as f64 / seeds as f64);
            }
            Ok(CollisionReport {
                n,
                t,
                max_collision_probability: max,
                bound,
                pairs_checked: pairs,
                seeds_checked: seeds,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::{parse, render};
    use proptest::prelude::*;

    /// Explicit matrix built from the column/row description.
    fn matrix_oracle(seed: &[bool], n: usize, t: usize) -> Vec<Vec<bool>> {
        let col: Vec<bool> = seed[..t].to_vec();
        let row: Vec<bool> = std::iter::once(seed[0]).chain(seed[t..].iter().copied()).collect();
        (0..t)
            .map(|i| {
                (0..n)
                    .map(|j| if i >= j { col[i - j] } else { row[j - i] })
                    .collect()
            })
            .collect()
    }

    fn mat_vec(m: &[Vec<bool>], x: &[bool]) -> Vec<bool> {
        m.iter()
            .map(|r| r.iter().zip(x).fold(false, |acc, (&a, &b)| acc ^ (a & b)))
            .collect()
    }

    #[test]
    fn worked_example() {
        // Five seed bits give T = [[1,1,0,1],[0,1,1,0]]; T * 1001 = 00.
        let seed = HashSeed::new(parse("10101").unwrap());
        let m = matrix_oracle(seed.bits(), 4, 2);
        assert_eq!(
            m,
            vec![
                vec![true, true, false, true],
                vec![false, true, true, false]
            ]
        );
        let x = parse("1001").unwrap();
        let h = toeplitz_hash(&x, &seed, 2).unwrap();
        assert_eq!(render(&h), "00");
        assert_eq!(render(&toeplitz_hash(&parse("1100").unwrap(), &seed, 2).unwrap()), "01");
    }

    #[test]
    fn six_bit_seed_rejected_for_four_by_two() {
        let seed = HashSeed::new(parse("101010").unwrap());
        assert_eq!(
            toeplitz_hash(&parse("1001").unwrap(), &seed, 2),
            Err(PampError::DimensionMismatch {
                expected: 5,
                got: 6
            })
        );
    }

    #[test]
    fn output_longer_than_input_rejected() {
        let seed = HashSeed::new(vec![true; 6]);
        assert!(matches!(
            toeplitz_hash(&[true; 3], &seed, 4),
            Err(PampError::OutputTooLong { .. })
        ));
    }

    #[test]
    fn output_length_examples() {
        let b = MinEntropyBudget::new(100.0, 1e-10, 20, 40, MFactor::ONE).unwrap();
        assert_eq!(choose_output_length(&b).t, 40);
        let b = MinEntropyBudget::new(100.0, 1e-10, 0, 0, MFactor::multi_device(2)).unwrap();
        assert_eq!(choose_output_length(&b).t, 50);
        let b = MinEntropyBudget::new(10.0, 1e-10, 20, 40, MFactor::ONE).unwrap();
        assert_eq!(choose_output_length(&b).t, 0);
    }

    #[test]
    fn invalid_budget_rejected() {
        assert!(MinEntropyBudget::new(-1.0, 0.0, 0, 0, MFactor::ONE).is_err());
        assert!(MinEntropyBudget::new(1.0, 1.0, 0, 0, MFactor::ONE).is_err());
        assert!(MinEntropyBudget::new(1.0, 0.0, 0, 0, MFactor { num: 3, den: 2 }).is_err());
    }

    #[test]
    fn min_entropy_of_families() {
        assert!((min_entropy(&SideInfo::Constant.distribution(6).unwrap()) - 6.0).abs() < 1e-12);
        assert!((min_entropy(&SideInfo::Prefix(2).distribution(6).unwrap()) - 4.0).abs() < 1e-12);
        assert!((min_entropy(&SideInfo::Parity.distribution(6).unwrap()) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn full_knowledge_gives_maximal_distance() {
        // E = X leaves no entropy: hashing to one bit is then 1/2 away from uniform.
        let d = distance_oracle(&SideInfo::Prefix(4).distribution(4).unwrap(), 1).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_size_limit() {
        assert!(matches!(
            SideInfo::Constant.distribution(13),
            Err(PampError::TooLarge { .. })
        ));
        assert!(matches!(
            collision_check(11, 2, CollisionMode::Exhaustive),
            Err(PampError::TooLarge { .. })
        ));
    }

    #[test]
    fn exhaustive_collision_small() {
        for n in 1..=5 {
            for t in 1..=n {
                let r = collision_check(n, t, CollisionMode::Exhaustive).unwrap();
                assert!(r.within_bound(), "{r:?}");
            }
        }
    }

    #[test]
    fn collision_agrees_with_linear_route() {
        // For linear h, Pr[h(x) = h(y)] = Pr[h(x ^ y) = 0]: count seeds per difference.
        let (n, t) = (5, 3);
        let seeds = 1u64 << (n + t - 1);
        let mut worst = 0u64;
        for d in 1u32..(1 << n) {
            let zeros = (0..seeds)
                .filter(|&s| hash_index(&toeplitz_rows(s, n, t), d) == 0)
                .count() as u64;
            worst = worst.max(zeros);
        }
        let r = collision_check(n, t, CollisionMode::Exhaustive).unwrap();
        assert!((r.max_collision_probability - worst as f64 / seeds as f64).abs() < 1e-15);
    }

    #[test]
    fn sampled_collision_mode_runs() {
        let r = collision_check(
            32,
            8,
            CollisionMode::Sampled {
                pairs: 4,
                seeds: 512,
                rng_seed: 1,
            },
        )
        .unwrap();
        assert_eq!(r.pairs_checked, 4);
        assert!(r.max_collision_probability < 0.05);
    }

    proptest! {
        #[test]
        fn hash_matches_matrix_oracle(
            n in 1usize..24,
            t_frac in 0.0f64..=1.0,
            raw in proptest::collection::vec(any::<bool>(), 64),
            xs in proptest::collection::vec(any::<bool>(), 24),
        ) {
            let t = ((n as f64 * t_frac).round() as usize).clamp(1, n);
            let seed = HashSeed::new(raw[..n + t - 1].to_vec());
            let x = &xs[..n];
            let got = toeplitz_hash(x, &seed, t).unwrap();
            let want = mat_vec(&matrix_oracle(seed.bits(), n, t), x);
            prop_assert_eq!(got, want);
        }

        #[test]
        fn hash_is_linear(
            raw in proptest::collection::vec(any::<bool>(), 40),
            x in proptest::collection::vec(any::<bool>(), 20),
            y in proptest::collection::vec(any::<bool>(), 20),
        ) {
            let t = 8;
            let seed = HashSeed::new(raw[..20 + t - 1].to_vec());
            let hx = toeplitz_hash(&x, &seed, t).unwrap();
            let hy = toeplitz_hash(&y, &seed, t).unwrap();
            let hxy = toeplitz_hash(&crate::bits::xor(&x, &y), &seed, t).unwrap();
            prop_assert_eq!(hxy, crate::bits::xor(&hx, &hy));
        }

        #[test]
        fn output_length_monotone_in_leakage(
            h in 0.0f64..5000.0,
            leak in 0u64..5000,
            extra in 0u64..100,
            margin in 0u64..100,
            m in 1u32..6,
        ) {
            let mf = if m == 1 { MFactor::ONE } else { MFactor::multi_device(m) };
            let a = MinEntropyBudget::new(h, 1e-10, leak, margin, mf).unwrap();
            let b = MinEntropyBudget::new(h, 1e-10, leak + extra, margin, mf).unwrap();
            prop_assert!(choose_output_length(&b).t <= choose_output_length(&a).t);
            let t = choose_output_length(&a).t as f64;
            if t > 0.0 {
                prop_assert!(t <= mf.value() * (h - leak as f64) - margin as f64 + 1e-9);
            }
        }
    }
}
