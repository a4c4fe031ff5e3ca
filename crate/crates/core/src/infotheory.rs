//! Entropies, mutual informations and one-way keyrates, all in bits.
//!
//! The joint distribution between Alice's bit and Eve's guess in one basis is
//! described by two numbers: Eve's error rate `q_ae` and an offset `delta`
//! measuring the asymmetry between her two kinds of error. With Alice's bit
//! uniform, the four cells are
//!
//! ```text
//! p(0,0) = (1 - q_ae - delta) / 2     p(0,1) = (q_ae + delta) / 2
//! p(1,0) = (q_ae - delta) / 2         p(1,1) = (1 - q_ae + delta) / 2
//! ```

use crate::error::{check_probability, Error, Result};

/// QBER at which the ideal individual-attack keyrate reaches zero,
/// `1/2 - sqrt(2)/4`.
pub const IDEAL_THRESHOLD_QBER: f64 = 0.5 - std::f64::consts::SQRT_2 / 4.0;

/// Reference QBER below which ideal BB84 is secure against general attacks.
pub const SHOR_PRESKILL_QBER: f64 = 0.11;

const DIST_SLACK: f64 = 1e-9;

/// Binary entropy `h(p)` in bits.
pub fn binary_entropy(p: f64) -> Result<f64> {
    let p = check_probability("p", p)?;
    Ok(entropy_of(p))
}

/// `h(p)` for a `p` already known to lie in `[0, 1]`.
pub(crate) fn entropy_of(p: f64) -> f64 {
    xlog2x(p) + xlog2x(1.0 - p)
}

/// `-x log2 x`, with the `x = 0` case defined as zero.
fn xlog2x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -x * x.log2()
    }
}

/// Alice–Eve joint distribution in one basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointDistAE {
    q_ae: f64,
    delta: f64,
}

impl JointDistAE {
    pub fn new(q_ae: f64, delta: f64) -> Result<Self> {
        let q_ae = check_probability("q_ae", q_ae)?;
        let bound = q_ae.min(1.0 - q_ae);
        if !delta.is_finite() || delta.abs() > bound + DIST_SLACK {
            return Err(Error::Domain {
                what: "delta",
                value: delta,
                lo: -bound,
                hi: bound,
            });
        }
        Ok(Self {
            q_ae,
            delta: delta.clamp(-bound, bound),
        })
    }

    /// The symmetric case `delta = 0`.
    pub fn symmetric(q_ae: f64) -> Result<Self> {
        Self::new(q_ae, 0.0)
    }

    pub fn q_ae(&self) -> f64 {
        self.q_ae
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Cells ordered `[p(0,0), p(0,1), p(1,0), p(1,1)]`, indexed by
    /// (Alice's bit, Eve's guess).
    pub fn cells(&self) -> [f64; 4] {
        let (q, d) = (self.q_ae, self.delta);
        [
            0.5 * (1.0 - q - d),
            0.5 * (q + d),
            0.5 * (q - d),
            0.5 * (1.0 - q + d),
        ]
    }
}

/// Mutual information `I(A:E)` of a single basis, in bits.
///
/// Computed as `H(A) + H(E) - H(A,E)` where Alice's marginal is uniform and
/// Eve's marginal is `(1/2 - delta, 1/2 + delta)`.
pub fn mutual_info_ae(dist: &JointDistAE) -> f64 {
    let joint: f64 = dist.cells().iter().map(|&p| xlog2x(p)).sum();
    let eve = entropy_of((0.5 - dist.delta).clamp(0.0, 1.0));
    (1.0 + eve - joint).max(0.0)
}

/// Outcome of the one-way (Csiszár–Körner) keyrate for the two-basis protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyrateResult {
    pub q: f64,
    pub i_ab: f64,
    pub i_ae: f64,
    /// `i_ab - i_ae`; negative when the channel is insecure.
    pub r: f64,
}

/// `h(q_ae) - h(q)`, the keyrate under a symmetric attack.
pub fn keyrate_symmetric(q: f64, q_ae: f64) -> Result<f64> {
    Ok(binary_entropy(q_ae)? - binary_entropy(q)?)
}

/// Keyrate from the per-basis joint distributions.
///
/// Both bases together carry `I(A:B) = 2 - h(q)` (one bit of basis
/// information plus `1 - h(q)`), and Eve's information is
/// `1 + (I0 + I1) / 2`.
pub fn keyrate_general(q: f64, basis0: &JointDistAE, basis1: &JointDistAE) -> Result<KeyrateResult> {
    let i_ab = 2.0 - binary_entropy(q)?;
    let i_ae = 1.0 + 0.5 * (mutual_info_ae(basis0) + mutual_info_ae(basis1));
    Ok(KeyrateResult {
        q,
        i_ab,
        i_ae,
        r: i_ab - i_ae,
    })
}

/// Best individual-attack keyrate for perfectly aligned BB84,
/// `h(1/2 - sqrt(q(1-q))) - h(q)`.
pub fn ideal_keyrate(q: f64) -> Result<f64> {
    let q = check_probability("q", q)?;
    let q_ae = 0.5 - (q * (1.0 - q)).sqrt();
    Ok(entropy_of(q_ae) - entropy_of(q))
}

/// Eve's optimal error for the aligned protocol, `1/2 - sqrt(q(1-q))`.
pub fn ideal_eve_error(q: f64) -> f64 {
    0.5 - (q * (1.0 - q)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Direct `sum p log(p / (pA pE))` over the four cells.
    fn mutual_info_by_cells(dist: &JointDistAE) -> f64 {
        let c = dist.cells();
        let pa = [c[0] + c[1], c[2] + c[3]];
        let pe = [c[0] + c[2], c[1] + c[3]];
        let mut total = 0.0;
        for m in 0..2 {
            for e in 0..2 {
                let p = c[2 * m + e];
                if p > 0.0 {
                    total += p * (p / (pa[m] * pe[e])).log2();
                }
            }
        }
        total
    }

    #[test]
    fn entropy_reference_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // 40-digit evaluation at 0.1464466: 0.60087601277...
        assert_abs_diff_eq!(binary_entropy(0.1464466).unwrap(), 0.600876012770548, epsilon = 1e-12);
        assert_abs_diff_eq!(binary_entropy(0.1464466).unwrap(), 0.6008, epsilon = 1e-3);
    }

    #[test]
    fn entropy_rejects_out_of_domain() {
        assert!(binary_entropy(-1e-6).is_err());
        assert!(binary_entropy(1.0 + 1e-6).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
        assert_eq!(binary_entropy(-1e-13).unwrap(), 0.0);
    }

    #[test]
    fn mutual_information_extremes() {
        let independent = JointDistAE::new(0.5, 0.0).unwrap();
        assert_abs_diff_eq!(mutual_info_ae(&independent), 0.0, epsilon = 1e-15);
        let perfect = JointDistAE::new(0.0, 0.0).unwrap();
        assert_abs_diff_eq!(mutual_info_ae(&perfect), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mutual_information_matches_cell_sum() {
        let dist = JointDistAE::new(0.25, 0.1).unwrap();
        // Cell-sum oracle, also cross-checked at 40 digits: 0.19899641440872...
        let oracle = mutual_info_by_cells(&dist);
        assert_abs_diff_eq!(oracle, 0.198996414408723, epsilon = 1e-12);
        assert_abs_diff_eq!(mutual_info_ae(&dist), oracle, epsilon = 1e-12);
    }

    #[test]
    fn joint_distribution_validation() {
        assert!(JointDistAE::new(0.2, 0.25).is_err());
        assert!(JointDistAE::new(0.9, 0.2).is_err());
        assert!(JointDistAE::new(1.2, 0.0).is_err());
        let d = JointDistAE::new(0.3, -0.3).unwrap();
        assert_eq!(d.cells()[1], 0.0);
    }

    #[test]
    fn keyrate_reference_values() {
        assert_eq!(keyrate_symmetric(0.0, 0.5).unwrap(), 1.0);
        assert_abs_diff_eq!(
            keyrate_symmetric(IDEAL_THRESHOLD_QBER, IDEAL_THRESHOLD_QBER).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        // Closed form at q = 0.05 evaluated at 40 digits: 0.57183891818...
        let r = keyrate_symmetric(0.05, 0.2820550).unwrap();
        assert_abs_diff_eq!(r, 0.571838847, epsilon = 1e-8);
        assert_abs_diff_eq!(r, 0.5727, epsilon = 1e-3);
    }

    #[test]
    fn keyrate_general_cases() {
        let ignorant = JointDistAE::symmetric(0.5).unwrap();
        let k = keyrate_general(0.0, &ignorant, &ignorant).unwrap();
        assert_abs_diff_eq!(k.r, 1.0, epsilon = 1e-15);

        let d = JointDistAE::symmetric(ideal_eve_error(0.05)).unwrap();
        let k = keyrate_general(0.05, &d, &d).unwrap();
        assert_abs_diff_eq!(k.r, 0.571838918185560, epsilon = 1e-12);

        let d0 = JointDistAE::symmetric(0.3).unwrap();
        let d1 = JointDistAE::symmetric(0.25).unwrap();
        let k = keyrate_general(0.1, &d0, &d1).unwrap();
        let h = |p: f64| binary_entropy(p).unwrap();
        let expected = 2.0 - h(0.1) - (1.0 + (1.0 - h(0.3) + 1.0 - h(0.25)) / 2.0);
        assert_abs_diff_eq!(k.r, expected, epsilon = 1e-14);
        assert_eq!(k.r, k.i_ab - k.i_ae);
    }

    #[test]
    fn ideal_keyrate_values() {
        assert_eq!(ideal_keyrate(0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(ideal_keyrate(IDEAL_THRESHOLD_QBER).unwrap(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ideal_keyrate(0.05).unwrap(), 0.571838918185560, epsilon = 1e-12);
        assert_abs_diff_eq!(ideal_keyrate(0.1).unwrap(), 0.252932501298081, epsilon = 1e-12);
    }

    #[test]
    fn ideal_keyrate_changes_sign_at_threshold() {
        let below = IDEAL_THRESHOLD_QBER - 1e-6;
        let above = IDEAL_THRESHOLD_QBER + 1e-6;
        assert!(ideal_keyrate(below).unwrap() > 0.0);
        assert!(ideal_keyrate(above).unwrap() < 0.0);
    }

    #[test]
    fn mutual_information_decreasing_in_error() {
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let q = 0.5 * i as f64 / 100.0;
            let cur = mutual_info_ae(&JointDistAE::symmetric(q).unwrap());
            assert!(cur < prev);
            prev = cur;
        }
    }

    proptest! {
        #[test]
        fn entropy_is_symmetric(p in 0.0f64..=1.0) {
            let a = binary_entropy(p).unwrap();
            let b = binary_entropy(1.0 - p).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn mutual_information_relabeling(q in 0.0f64..=1.0, t in -1.0f64..=1.0) {
            let delta = t * q.min(1.0 - q);
            let plus = JointDistAE::new(q, delta).unwrap();
            let minus = JointDistAE::new(q, -delta).unwrap();
            prop_assert!((mutual_info_ae(&plus) - mutual_info_ae(&minus)).abs() <= 1e-12);
            prop_assert!((mutual_info_ae(&plus) - mutual_info_by_cells(&plus)).abs() <= 1e-12);
            let sum: f64 = plus.cells().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-15);
            prop_assert!(plus.cells().iter().all(|&c| (0.0..=0.5).contains(&c)));
        }

        #[test]
        fn general_reduces_to_symmetric(q in 0.0f64..=0.5, q_ae in 0.0f64..=0.5) {
            let d = JointDistAE::symmetric(q_ae).unwrap();
            let general = keyrate_general(q, &d, &d).unwrap().r;
            let symmetric = keyrate_symmetric(q, q_ae).unwrap();
            prop_assert!((general - symmetric).abs() <= 1e-12);
        }
    }
}
