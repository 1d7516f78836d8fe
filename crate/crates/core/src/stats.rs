//! Descriptive statistics, rank correlation, least squares and the Welch
//! t-test with a Student-t tail computed from the regularized incomplete
//! beta function.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{abs, exp, ln, sqrt};
use crate::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance (divides by n).
pub fn population_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Sample variance (divides by n - 1).
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Pearson correlation; `None` when either input is constant or n < 2.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties share their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

/// Ordinary least squares slope of `y` on `x`; `None` when `x` is constant.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in x.iter().zip(y) {
        num += (a - mx) * (b - my);
        den += (a - mx) * (a - mx);
    }
    (den > 0.0).then(|| num / den)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma_r(x).0
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if abs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if abs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if abs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if abs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if abs(del - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = exp(ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * ln(x) + b * ln(1.0 - x));
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t with `df`
/// degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Student-t CDF.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_sided(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

/// Welch's unequal-variance t-test, two-sided, with Welch-Satterthwaite
/// degrees of freedom. `t > 0` when `a` has the larger mean.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(alloc::format!(
            "welch test needs n >= 2 per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a) / na, sample_variance(b) / nb);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            TTest {
                t: 0.0,
                p: 1.0,
                df: na + nb - 2.0,
            }
        } else {
            TTest {
                t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
                p: 0.0,
                df: na + nb - 2.0,
            }
        });
    }
    let t = (ma - mb) / sqrt(se2);
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TTest {
        t,
        p: student_t_two_sided(t, df),
        df,
    })
}

/// Solve a small dense system with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(abs(*v)))
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| abs(a[i][col]).total_cmp(&abs(a[j][col])))
            .expect("non-empty");
        if abs(a[piv][col]) <= 1e-12 * scale {
            return Err(Error::SingularFit(alloc::format!("pivot {col} vanishes")));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

/// Least-squares polynomial of `degree` (coefficients low to high). The
/// abscissa is centred and scaled internally for conditioning.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<Vec<f64>> {
    let n = degree + 1;
    if x.len() != y.len() || x.len() < n {
        return Err(Error::SingularFit(alloc::format!(
            "need at least {n} points for degree {degree}"
        )));
    }
    let c = mean(x);
    let s = sqrt(population_variance(x));
    if !(s > 0.0) {
        return Err(Error::SingularFit("abscissa is constant".into()));
    }
    let u: Vec<f64> = x.iter().map(|v| (v - c) / s).collect();
    let mut ata = vec![vec![0.0; n]; n];
    let mut aty = vec![0.0; n];
    for (ui, yi) in u.iter().zip(y) {
        let mut pw = vec![1.0; n];
        for k in 1..n {
            pw[k] = pw[k - 1] * ui;
        }
        for r in 0..n {
            aty[r] += pw[r] * yi;
            for k in 0..n {
                ata[r][k] += pw[r] * pw[k];
            }
        }
    }
    let beta_u = solve_linear(ata, aty)?;
    // Expand sum_k b_k ((x - c) / s)^k into powers of x.
    let mut coef = vec![0.0; n];
    for (k, bk) in beta_u.iter().enumerate() {
        // (x - c)^k = sum_j C(k, j) x^j (-c)^(k - j)
        let mut binom = 1.0;
        for j in 0..=k {
            if j > 0 {
                binom = binom * (k - j + 1) as f64 / j as f64;
            }
            coef[j] += bk * binom * libm::pow(-c, (k - j) as f64) / libm::pow(s, k as f64);
        }
    }
    Ok(coef)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-sided tails `(df, t, p)` from an independent Student-t
    /// implementation.
    const T_TAILS: &[(f64, f64, f64)] = &[
        (1.0, 0.3, 0.8144528418445154),
        (1.0, 1.0, 0.49999999999999956),
        (1.0, 12.0, 0.05292935211917974),
        (2.5, 2.2, 0.13291398541966903),
        (2.5, 5.0, 0.023451189970861843),
        (7.0, 1.0, 0.3506166628202075),
        (7.0, 12.0, 6.358310378185094e-06),
        (30.0, 2.2, 0.03564843999683578),
        (30.0, 5.0, 2.3296685467007786e-05),
        (250.0, 0.3, 0.7644264490160495),
        (250.0, 5.0, 1.0798110762243659e-06),
        (250.0, 12.0, 1.673529622698349e-26),
    ];

    #[test]
    fn t_tail_matches_reference() {
        for &(df, t, expect) in T_TAILS {
            let got = student_t_two_sided(t, df);
            assert!(
                (got - expect).abs() <= 1e-10 * expect.max(1e-3),
                "df={df} t={t}: {got} vs {expect}"
            );
            assert!((student_t_cdf(-t, df) - expect / 2.0).abs() < 1e-10);
        }
        assert_eq!(student_t_two_sided(0.0, 4.0), 1.0);
    }

    #[test]
    fn welch_cases() {
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 1.0).abs() < 1e-12);

        let a = [0.1, 0.2, 0.15, 0.12];
        let b = [0.9, 1.0, 0.95, 0.97];
        let r = welch_t_test(&a, &b).unwrap();
        // Reference values from an independent Welch implementation:
        // t = -26.866539, df = 5.993003, p = 1.78078e-7.
        assert!((r.t + 26.866_539).abs() < 1e-5, "{r:?}");
        assert!((r.df - 5.993_003).abs() < 1e-5, "{r:?}");
        assert!((r.p - 1.780_779e-7).abs() < 1e-11, "{r:?}");
        assert!(r.p < 0.001);

        let r = welch_t_test(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 90.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[0.0, 2.0]).is_none());
    }

    #[test]
    fn polyfit_exact() {
        let x: Vec<f64> = (0..12).map(|i| 60.0 + 2.5 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let c = polyfit(&x, &y, 2).unwrap();
        assert!((c[2] - 1.0).abs() < 1e-9, "{c:?}");
        assert!(c[1].abs() < 1e-6 && c[0].abs() < 1e-4, "{c:?}");
        assert!(polyfit(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], 2).is_err());
    }

    proptest::proptest! {
        #[test]
        fn welch_swap_antisymmetric(
            a in proptest::collection::vec(-10.0f64..10.0, 2..20),
            b in proptest::collection::vec(-10.0f64..10.0, 2..20),
        ) {
            let x = welch_t_test(&a, &b).unwrap();
            let y = welch_t_test(&b, &a).unwrap();
            proptest::prop_assert_eq!(x.t, -y.t);
            proptest::prop_assert!((x.p - y.p).abs() < 1e-12);
        }
    }
}
