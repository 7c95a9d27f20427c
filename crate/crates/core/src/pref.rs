//! Vector types shared across the crate: preferences on the simplex, reward
//! and return vectors, and the linear scalarization `u_w(r) = wᵀr`.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Sum tolerance accepted by [`PreferenceVector::new`] before renormalizing.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

/// A point on the probability simplex. Always at least two objectives,
/// nonnegative, and summing to one within `1e-9`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PreferenceVector(Vec<f64>);

impl PreferenceVector {
    /// Validates `weights` and renormalizes them if their sum is within
    /// [`RENORMALIZE_TOLERANCE`] of one.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidPreference(format!(
                "need at least 2 objectives, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidPreference("non-finite weight".into()));
        }
        if let Some(w) = weights.iter().find(|w| **w < 0.0) {
            return Err(Error::InvalidPreference(format!("negative weight {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidPreference("weights sum to zero".into()));
        }
        if (sum - 1.0).abs() >= RENORMALIZE_TOLERANCE {
            return Err(Error::InvalidPreference(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        Ok(Self(weights.into_iter().map(|w| w / sum).collect()))
    }

    /// Builds a preference from any nonnegative vector with positive sum by
    /// dividing by the sum.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::InvalidPreference(
                "cannot normalize: non-positive or non-finite sum".into(),
            ));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    /// The uniform preference over `m` objectives.
    pub fn uniform(m: usize) -> Result<Self> {
        Self::new(vec![1.0 / m as f64; m])
    }

    /// Two-objective preference `(w, 1 - w)`.
    pub fn pair(w: f64) -> Result<Self> {
        Self::new(vec![w, 1.0 - w])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for PreferenceVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<PreferenceVector> for Vec<f64> {
    fn from(p: PreferenceVector) -> Self {
        p.0
    }
}

/// Free-function form of [`PreferenceVector::new`].
pub fn validate_preference(v: &[f64]) -> Result<PreferenceVector> {
    PreferenceVector::new(v.to_vec())
}

macro_rules! finite_vector {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Result<Self> {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite($what));
                }
                Ok(Self(values))
            }

            pub fn zeros(m: usize) -> Self {
                Self(vec![0.0; m])
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn norm(&self) -> f64 {
                self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
        }

        impl TryFrom<Vec<f64>> for $name {
            type Error = Error;

            fn try_from(v: Vec<f64>) -> Result<Self> {
                Self::new(v)
            }
        }

        impl From<$name> for Vec<f64> {
            fn from(v: $name) -> Self {
                v.0
            }
        }

        impl Add for &$name {
            type Output = $name;

            fn add(self, rhs: Self) -> $name {
                assert_eq!(self.dim(), rhs.dim(), "vector dimensions differ");
                $name(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
            }
        }
    };
}

finite_vector!(
    /// Per-step vector reward.
    RewardVector,
    "reward vector"
);
finite_vector!(
    /// Discounted cumulative vector reward.
    ReturnVector,
    "return vector"
);

impl ReturnVector {
    /// Adds `discount * r` in place.
    pub fn add_discounted(&mut self, r: &RewardVector, discount: f64) -> Result<()> {
        check_dim(self.dim(), r.dim())?;
        for (g, v) in self.0.iter_mut().zip(r.values()) {
            *g += discount * v;
        }
        Ok(())
    }
}

/// Linear utility `wᵀv` for any slice of objective values.
pub fn utility(w: &PreferenceVector, values: &[f64]) -> Result<f64> {
    check_dim(w.dim(), values.len())?;
    Ok(w.0.iter().zip(values).map(|(a, b)| a * b).sum())
}

/// `u_w(r) = wᵀr`.
pub fn scalarize(w: &PreferenceVector, r: &RewardVector) -> Result<f64> {
    utility(w, r.values())
}

/// `ln(1 + eˣ)` with linear and exponential tails outside `[-30, 30]`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(softplus(x))`, finite for every finite `x`.
fn ln_softplus(x: f64) -> f64 {
    if x < -30.0 {
        x
    } else {
        softplus(x).ln()
    }
}

/// Maps a return onto the simplex proportionally to `softplus(G)`.
///
/// Ratios are formed in the log domain so that returns far below zero, where
/// every softplus underflows, still project to the right weights.
pub fn project_softplus_simplex(g: &ReturnVector) -> PreferenceVector {
    let logs: Vec<f64> = g.values().iter().map(|&x| ln_softplus(x)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let sum: f64 = scaled.iter().sum();
    PreferenceVector(scaled.into_iter().map(|v| v / sum).collect())
}

/// `Σ_t γᵗ r_t` with `t` starting at zero.
pub fn accumulate_return(rewards: &[RewardVector], gamma: f64) -> Result<ReturnVector> {
    let first = rewards.first().ok_or(Error::Empty("reward list"))?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount {gamma} outside [0, 1]")));
    }
    let mut g = ReturnVector::zeros(first.dim());
    let mut discount = 1.0;
    for r in rewards {
        g.add_discounted(r, discount)?;
        discount *= gamma;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn w(v: &[f64]) -> PreferenceVector {
        PreferenceVector::new(v.to_vec()).unwrap()
    }

    fn r(v: &[f64]) -> RewardVector {
        RewardVector::new(v.to_vec()).unwrap()
    }

    fn g(v: &[f64]) -> ReturnVector {
        ReturnVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn scalarize_examples() {
        assert_eq!(scalarize(&w(&[0.5, 0.5]), &r(&[2.0, 4.0])).unwrap(), 3.0);
        assert_eq!(scalarize(&w(&[1.0, 0.0]), &r(&[7.25, -3.0])).unwrap(), 7.25);
        assert_abs_diff_eq!(
            scalarize(&w(&[0.8716, 0.1284]), &r(&[2.0, -1.0])).unwrap(),
            1.6148,
            epsilon = 1e-12
        );
    }

    #[test]
    fn scalarize_dimension_mismatch() {
        assert!(matches!(
            scalarize(&w(&[0.5, 0.5]), &r(&[1.0, 2.0, 3.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn softplus_projection_examples() {
        assert_eq!(project_softplus_simplex(&g(&[0.0, 0.0])).weights(), &[0.5, 0.5]);
        for c in [-50.0, -3.0, 0.7, 12.0, 80.0] {
            let p = project_softplus_simplex(&g(&[c, c]));
            assert_abs_diff_eq!(p.weights()[0], 0.5, epsilon = 1e-15);
        }
        // ln(1+e²) = 2.126928, ln(1+e⁻¹) = 0.313262
        let p = project_softplus_simplex(&g(&[2.0, -1.0]));
        assert_abs_diff_eq!(p.weights()[0], 0.87162, epsilon = 1e-5);
        assert_abs_diff_eq!(p.weights()[1], 0.12838, epsilon = 1e-5);
    }

    #[test]
    fn projection_of_very_negative_returns() {
        // softplus(-1000) and softplus(-1001) both underflow; ratio is e.
        let p = project_softplus_simplex(&g(&[-1000.0, -1001.0]));
        assert_abs_diff_eq!(p.weights()[0], 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-12);
        let q = project_softplus_simplex(&g(&[-1e6, 1e6]));
        assert!((q.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn softplus_tails_continuous() {
        assert_abs_diff_eq!(softplus(30.0), 30.0f64.exp().ln_1p(), epsilon = 1e-12);
        assert_abs_diff_eq!(softplus(-30.0), (-30.0f64).exp().ln_1p(), epsilon = 1e-25);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn projection_of_wide_normal_returns_stays_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 10.0).unwrap();
        for _ in 0..10_000 {
            let v: Vec<f64> = (0..2).map(|_| normal.sample(&mut rng)).collect();
            let p = project_softplus_simplex(&g(&v));
            assert!((p.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            assert!(p.weights().iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn accumulate_return_examples() {
        assert_eq!(
            accumulate_return(&[r(&[1.0, 0.0])], 0.37).unwrap().values(),
            &[1.0, 0.0]
        );
        let got = accumulate_return(&[r(&[1.0, 0.0]), r(&[0.0, 2.0])], 0.9).unwrap();
        assert_abs_diff_eq!(got.values()[0], 1.0);
        assert_abs_diff_eq!(got.values()[1], 1.8, epsilon = 1e-15);
        let ones = vec![r(&[1.0, 1.0]); 3];
        assert_eq!(accumulate_return(&ones, 1.0).unwrap().values(), &[3.0, 3.0]);
        assert!(matches!(accumulate_return(&[], 0.9), Err(Error::Empty(_))));
    }

    #[test]
    fn validate_preference_examples() {
        assert_eq!(validate_preference(&[0.5, 0.5]).unwrap().weights(), &[0.5, 0.5]);
        let p = validate_preference(&[0.5000001, 0.5]).unwrap();
        assert_abs_diff_eq!(p.weights()[0], 0.5, epsilon = 1e-7);
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(validate_preference(&[-0.1, 1.1]).is_err());
        assert!(validate_preference(&[0.0, 0.0]).is_err());
        assert!(validate_preference(&[f64::NAN, 1.0]).is_err());
        assert!(validate_preference(&[1.0]).is_err());
        assert!(validate_preference(&[0.6, 0.6]).is_err());
    }

    #[test]
    fn serde_rejects_off_simplex() {
        let ok: PreferenceVector = serde_json::from_str("[0.25,0.75]").unwrap();
        assert_eq!(ok.weights(), &[0.25, 0.75]);
        assert!(serde_json::from_str::<PreferenceVector>("[0.5,0.6]").is_err());
    }

    proptest! {
        #[test]
        fn scalarize_is_additive(
            a in 0.0f64..=1.0,
            r1 in prop::collection::vec(-1e3f64..1e3, 2),
            r2 in prop::collection::vec(-1e3f64..1e3, 2),
        ) {
            let p = PreferenceVector::pair(a).unwrap();
            let (x, y) = (r(&r1), r(&r2));
            let lhs = scalarize(&p, &(&x + &y)).unwrap();
            let rhs = scalarize(&p, &x).unwrap() + scalarize(&p, &y).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn projection_preserves_ordering(v in prop::collection::vec(-40.0f64..40.0, 2..5)) {
            let p = project_softplus_simplex(&g(&v));
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] > v[j] {
                        prop_assert!(p.weights()[i] > p.weights()[j]);
                    }
                }
            }
        }

        #[test]
        fn undiscounted_return_is_left_to_right_sum(
            steps in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 1..20)
        ) {
            let rewards: Vec<RewardVector> = steps.iter().map(|s| r(s)).collect();
            let got = accumulate_return(&rewards, 1.0).unwrap();
            let mut want = [0.0f64; 2];
            for s in &steps {
                want[0] += s[0];
                want[1] += s[1];
            }
            prop_assert_eq!(got.values(), &want[..]);
        }
    }

    #[test]
    fn discounted_return_matches_hand_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rewards: Vec<RewardVector> = (0..25)
            .map(|_| r(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
            .collect();
        let got = accumulate_return(&rewards, 0.97).unwrap();
        let mut want = [0.0; 2];
        for (t, rw) in rewards.iter().enumerate() {
            for k in 0..2 {
                want[k] += 0.97f64.powi(t as i32) * rw.values()[k];
            }
        }
        assert_abs_diff_eq!(got.values()[0], want[0], epsilon = 1e-12);
        assert_abs_diff_eq!(got.values()[1], want[1], epsilon = 1e-12);
    }
}
