//! Singlet-state measurement statistics.
//!
//! Both devices measure one half of a (possibly depolarised) singlet in a
//! linear-polarisation basis at angle `theta`. Outcomes are signs; bit `0`
//! maps to `+1` and bit `1` to `-1`. With visibility `v` the joint law is
//!
//! `P(a, b) = (1 - v * a * b * cos 2(thetaA - thetaB)) / 4`,
//!
//! so `E(a * b) = -v cos 2(thetaA - thetaB)`.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QsimError {
    #[error("visibility {0} outside [0, 1]")]
    InvalidVisibility(f64),
    #[error("no samples for setting pair ({alice}, {bob})")]
    MissingSettingPair { alice: usize, bob: usize },
}

/// Measurement basis, an angle normalised into `[0, pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    angle: f64,
}

impl Basis {
    pub fn new(angle: f64) -> Self {
        let a = angle.rem_euclid(PI);
        // rem_euclid can round up to exactly PI for tiny negative inputs.
        Basis {
            angle: if a >= PI { 0.0 } else { a },
        }
    }

    pub const fn angle(self) -> f64 {
        self.angle
    }
}

/// Alice's test basis.
pub const U1: Basis = Basis { angle: 0.0 };
/// Alice's key basis, also a test basis.
pub const U0: Basis = Basis { angle: FRAC_PI_4 };
pub const V0: Basis = Basis { angle: FRAC_PI_8 };
pub const V1: Basis = Basis {
    angle: 3.0 * FRAC_PI_8,
};
/// Bob's key basis, aligned with [`U0`].
pub const V2: Basis = Basis { angle: FRAC_PI_4 };

/// Measurement outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    pub fn bit(self) -> bool {
        self == Sign::Minus
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomePair {
    pub a: Sign,
    pub b: Sign,
}

/// Depolarised singlet with visibility `v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationModel {
    visibility: f64,
}

impl CorrelationModel {
    pub fn new(visibility: f64) -> Result<Self, QsimError> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(QsimError::InvalidVisibility(visibility));
        }
        Ok(CorrelationModel { visibility })
    }

    pub fn ideal() -> Self {
        CorrelationModel { visibility: 1.0 }
    }

    pub fn visibility(self) -> f64 {
        self.visibility
    }
}

pub fn outcome_probability(
    model: CorrelationModel,
    alice: Basis,
    bob: Basis,
    a: Sign,
    b: Sign,
) -> f64 {
    let c = (2.0 * (alice.angle - bob.angle)).cos();
    (1.0 - model.visibility * a.value() * b.value() * c) / 4.0
}

/// `E(a * b)` for the given bases.
pub fn correlator(model: CorrelationModel, alice: Basis, bob: Basis) -> f64 {
    -model.visibility * (2.0 * (alice.angle - bob.angle)).cos()
}

/// Draw one joint outcome.
///
/// Alice's marginal is uniform; Bob's sign is then the opposite of hers with
/// probability `(1 + v cos 2(thetaA - thetaB)) / 2`, which reproduces the
/// joint law exactly. Consumes two uniform draws.
pub fn sample_pair<R: Rng + ?Sized>(
    model: CorrelationModel,
    alice: Basis,
    bob: Basis,
    rng: &mut R,
) -> OutcomePair {
    let a = if rng.random::<bool>() {
        Sign::Minus
    } else {
        Sign::Plus
    };
    let p_anti = (1.0 - correlator(model, alice, bob)) / 2.0;
    let b = if rng.random::<f64>() < p_anti {
        a.flip()
    } else {
        a
    };
    OutcomePair { a, b }
}

/// Outcome tallies for the four test setting pairs `(x, y)`, `x, y` in `{0, 1}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationCounts {
    /// `[x][y][0]` counts equal signs, `[x][y][1]` opposite signs.
    cells: [[[u64; 2]; 2]; 2],
}

impl CorrelationCounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record an outcome. Panics if `x` or `y` is not a test setting.
    pub fn record(&mut self, x: usize, y: usize, pair: OutcomePair) {
        assert!(x < 2 && y < 2, "({x}, {y}) is not a test setting pair");
        let opposite = (pair.a != pair.b) as usize;
        self.cells[x][y][opposite] += 1;
    }

    pub fn total(&self, x: usize, y: usize) -> u64 {
        self.cells[x][y][0] + self.cells[x][y][1]
    }

    /// Empirical `E(a * b)` for `(x, y)`, `None` if no samples.
    pub fn correlator(&self, x: usize, y: usize) -> Option<f64> {
        let [same, opposite] = self.cells[x][y];
        let n = same + opposite;
        (n > 0).then(|| (same as f64 - opposite as f64) / n as f64)
    }

    pub fn merge(&mut self, other: &CorrelationCounts) {
        for x in 0..2 {
            for y in 0..2 {
                for k in 0..2 {
                    self.cells[x][y][k] += other.cells[x][y][k];
                }
            }
        }
    }
}

/// `|E00 - E01 + E10 + E11|`.
pub fn chsh_value(counts: &CorrelationCounts) -> Result<f64, QsimError> {
    let mut e = [[0.0; 2]; 2];
    for (x, row) in e.iter_mut().enumerate() {
        for (y, cell) in row.iter_mut().enumerate() {
            *cell = counts
                .correlator(x, y)
                .ok_or(QsimError::MissingSettingPair { alice: x, bob: y })?;
        }
    }
    Ok((e[0][0] - e[0][1] + e[1][0] + e[1][1]).abs())
}

/// Statistic the protocol tests against its threshold.
pub trait TestFunction {
    fn name(&self) -> &'static str;
    fn evaluate(&self, counts: &CorrelationCounts) -> Result<f64, QsimError>;
    /// Value attained by ideal devices.
    fn ideal_value(&self) -> f64;
    /// Largest value attainable by any local deterministic strategy.
    fn local_bound(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chsh;

impl TestFunction for Chsh {
    fn name(&self) -> &'static str {
        "chsh"
    }

    fn evaluate(&self, counts: &CorrelationCounts) -> Result<f64, QsimError> {
        chsh_value(counts)
    }

    fn ideal_value(&self) -> f64 {
        2.0 * std::f64::consts::SQRT_2
    }

    fn local_bound(&self) -> f64 {
        2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;

    /// Born-rule oracle: explicit two-qubit state vector and projectors.
    mod born {
        use super::super::Sign;

        /// Eigenvector of the polarisation observable at `theta`.
        fn ket(theta: f64, s: Sign) -> [f64; 2] {
            match s {
                Sign::Plus => [theta.cos(), theta.sin()],
                Sign::Minus => [-theta.sin(), theta.cos()],
            }
        }

        fn kron(u: [f64; 2], w: [f64; 2]) -> [f64; 4] {
            [u[0] * w[0], u[0] * w[1], u[1] * w[0], u[1] * w[1]]
        }

        /// `v |psi-><psi-| + (1 - v) I/4`.
        pub fn probability(v: f64, ta: f64, tb: f64, a: Sign, b: Sign) -> f64 {
            let r = std::f64::consts::FRAC_1_SQRT_2;
            let singlet = [0.0, r, -r, 0.0];
            let phi = kron(ket(ta, a), ket(tb, b));
            let amp: f64 = phi.iter().zip(singlet.iter()).map(|(p, s)| p * s).sum();
            v * amp * amp + (1.0 - v) / 4.0
        }
    }

    const SIGNS: [Sign; 2] = [Sign::Plus, Sign::Minus];

    #[test]
    fn matches_born_oracle_on_protocol_bases() {
        let bases = [U0, U1, V0, V1, V2];
        for v in [0.0, 0.5, 0.85, 1.0] {
            let m = CorrelationModel::new(v).unwrap();
            for &ba in &bases {
                for &bb in &bases {
                    for a in SIGNS {
                        for b in SIGNS {
                            let got = outcome_probability(m, ba, bb, a, b);
                            let want = born::probability(v, ba.angle(), bb.angle(), a, b);
                            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn singlet_same_basis_anticorrelated() {
        let m = CorrelationModel::ideal();
        assert!((outcome_probability(m, U1, U1, Sign::Plus, Sign::Minus) - 0.5).abs() < 1e-12);
        assert!(outcome_probability(m, U1, U1, Sign::Plus, Sign::Plus).abs() < 1e-12);
        assert!((correlator(m, U0, V2) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_visibility_rejected() {
        assert_eq!(
            CorrelationModel::new(1.2),
            Err(QsimError::InvalidVisibility(1.2))
        );
        assert!(CorrelationModel::new(-0.1).is_err());
    }

    #[test]
    fn chsh_needs_every_pair() {
        let mut c = CorrelationCounts::new();
        let p = OutcomePair {
            a: Sign::Plus,
            b: Sign::Minus,
        };
        c.record(0, 0, p);
        c.record(0, 1, p);
        c.record(1, 0, p);
        assert_eq!(
            chsh_value(&c),
            Err(QsimError::MissingSettingPair { alice: 1, bob: 1 })
        );
        c.record(1, 1, p);
        // All pairs opposite: |-1 + 1 - 1 - 1| = 2.
        assert!((chsh_value(&c).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_chsh_of_protocol_bases() {
        let m = CorrelationModel::ideal();
        let alice = [U1, U0];
        let bob = [V0, V1];
        let e = |x: usize, y: usize| correlator(m, alice[x], bob[y]);
        let s = (e(0, 0) - e(0, 1) + e(1, 0) + e(1, 1)).abs();
        assert!((s - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn sampled_frequencies_match_law() {
        let m = CorrelationModel::new(0.9).unwrap();
        let mut rng = rng_from_seed(3);
        let n = 200_000;
        let mut counts = [[0u32; 2]; 2];
        for _ in 0..n {
            let p = sample_pair(m, U1, V0, &mut rng);
            counts[p.a.bit() as usize][p.b.bit() as usize] += 1;
        }
        for a in SIGNS {
            for b in SIGNS {
                let f = counts[a.bit() as usize][b.bit() as usize] as f64 / n as f64;
                let p = outcome_probability(m, U1, V0, a, b);
                let sd = (p * (1.0 - p) / n as f64).sqrt();
                assert!((f - p).abs() < 5.0 * sd, "{f} vs {p}");
            }
        }
    }

    proptest! {
        #[test]
        fn probabilities_form_a_distribution(
            v in 0.0f64..=1.0,
            ta in -10.0f64..10.0,
            tb in -10.0f64..10.0,
        ) {
            let m = CorrelationModel::new(v).unwrap();
            let (ba, bb) = (Basis::new(ta), Basis::new(tb));
            let mut total = 0.0;
            for a in SIGNS {
                for b in SIGNS {
                    let p = outcome_probability(m, ba, bb, a, b);
                    prop_assert!(p >= -1e-15);
                    total += p;
                }
            }
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn correlator_bounded_by_visibility(v in 0.0f64..=1.0, ta in 0.0f64..4.0, tb in 0.0f64..4.0) {
            let m = CorrelationModel::new(v).unwrap();
            prop_assert!(correlator(m, Basis::new(ta), Basis::new(tb)).abs() <= v + 1e-15);
        }

        #[test]
        fn marginals_uniform(v in 0.0f64..=1.0, ta in 0.0f64..4.0, tb in 0.0f64..4.0) {
            let m = CorrelationModel::new(v).unwrap();
            let (ba, bb) = (Basis::new(ta), Basis::new(tb));
            for a in SIGNS {
                let pa: f64 = SIGNS.iter().map(|&b| outcome_probability(m, ba, bb, a, b)).sum();
                prop_assert!((pa - 0.5).abs() < 1e-12);
            }
        }

        #[test]
        fn basis_normalised(t in -100.0f64..100.0) {
            let b = Basis::new(t);
            prop_assert!((0.0..std::f64::consts::PI).contains(&b.angle()));
        }
    }
}
