//! Welch's unequal-variance t-test with a two-sided p-value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

impl WelchResult {
    /// `***` below 0.001, `**` below 0.01, `*` below 0.05, otherwise empty.
    pub fn marker(&self) -> &'static str {
        significance_marker(self.p)
    }
}

pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sample Welch test of `mean(a) = mean(b)`.
pub fn welch(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Stats(format!(
            "each sample needs at least two values (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(WelchResult { t: 0.0, df: na + nb - 2.0, p: 1.0 });
        }
        return Err(Error::Stats("both samples have zero variance but different means".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(WelchResult { t, df, p: two_sided_p(t, df)? })
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn two_sided_p(t: f64, df: f64) -> Result<f64> {
    if !(df > 0.0) || t.is_nan() {
        return Err(Error::Stats(format!("invalid t statistic {t} with df {df}")));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    let x = df / (df + t * t);
    Ok(reg_inc_beta(0.5 * df, 0.5, x).clamp(0.0, 1.0))
}

/// Lanczos approximation of `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Tail mass of the t density by quadrature. With `x = √ν·tan θ` the
    /// density becomes `cos^{ν−1} θ` on `[0, π/2)`; both the tail and the
    /// normalizer are integrated numerically, so no Γ values are involved.
    fn quadrature_p(t: f64, df: f64) -> f64 {
        let f = |th: f64| th.cos().powf(df - 1.0);
        let simpson = |lo: f64, hi: f64| {
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let mut s = f(lo) + f(hi);
            for i in 1..n {
                s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let half_pi = std::f64::consts::FRAC_PI_2;
        let theta0 = (t.abs() / df.sqrt()).atan();
        simpson(theta0, half_pi) / simpson(0.0, half_pi)
    }

    #[test]
    fn known_example() {
        let r = welch(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(r.t, -1.224_744_871, epsilon = 1e-6);
        assert_abs_diff_eq!(r.df, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p, 0.287_864_68, epsilon = 1e-6);
        assert_eq!(r.marker(), "");
    }

    #[test]
    fn identical_samples() {
        let a = [0.3, 1.7, 2.2, 5.0];
        let r = welch(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        let r = welch(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        assert!(welch(&[1.0], &[1.0, 2.0]).is_err());
        assert!(welch(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(welch(&[1.0, f64::NAN], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn markers() {
        assert_eq!(significance_marker(0.0005), "***");
        assert_eq!(significance_marker(0.005), "**");
        assert_eq!(significance_marker(0.03), "*");
        assert_eq!(significance_marker(0.05), "");
    }

    #[test]
    fn ln_gamma_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(5.0), 24f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-12);
    }

    #[test]
    fn p_matches_density_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let na = rng.random_range(2..12);
            let nb = rng.random_range(2..12);
            let shift = rng.random_range(-2.0..2.0);
            let scale = rng.random_range(0.2..3.0);
            let a: Vec<f64> = (0..na).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..nb).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect();
            let r = welch(&a, &b).unwrap();
            let oracle = quadrature_p(r.t, r.df);
            assert!((r.p - oracle).abs() < 1e-6, "p {} vs {} (t {}, df {})", r.p, oracle, r.t, r.df);
        }
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0..100.0f64, 2..15)
    }

    proptest! {
        #[test]
        fn antisymmetric(a in sample(), b in sample()) {
            if let (Ok(ab), Ok(ba)) = (welch(&a, &b), welch(&b, &a)) {
                prop_assert_eq!(ab.t, -ba.t);
                prop_assert_eq!(ab.p, ba.p);
                prop_assert!((0.0..=1.0).contains(&ab.p));
            }
        }

        #[test]
        fn invariant_to_affine_rescaling(a in sample(), b in sample(), c in 0.1..10.0f64, d in -50.0..50.0f64) {
            let r = welch(&a, &b);
            let sa: Vec<f64> = a.iter().map(|x| c * x + d).collect();
            let sb: Vec<f64> = b.iter().map(|x| c * x + d).collect();
            if let (Ok(r), Ok(s)) = (r, welch(&sa, &sb)) {
                prop_assert!((r.t - s.t).abs() < 1e-6 * (1.0 + r.t.abs()));
                prop_assert!((r.p - s.p).abs() < 1e-6);
            }
        }
    }
}
