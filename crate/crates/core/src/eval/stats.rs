//! Summary statistics and the one-sided paired t-test.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `100 * (z - baseline) / baseline`.
pub fn gap_percent(z: f64, baseline: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::invalid(format!("gap baseline must be positive, got {baseline}")));
    }
    Ok(100.0 * (z - baseline) / baseline)
}

/// Percentile `q` in `[0, 1]` of sorted values, interpolating linearly
/// between order statistics at position `q * (n - 1)`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub p10: f64,
    pub p90: f64,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty list"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Aggregate {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        p10: percentile_sorted(&sorted, 0.1),
        p90: percentile_sorted(&sorted, 0.9),
    })
}

/// Instances where the method is strictly cheaper than the baseline.
pub fn wins(method: &[f64], baseline: &[f64]) -> Result<usize> {
    if method.len() != baseline.len() {
        return Err(Error::invalid(format!(
            "win count needs aligned lists, got {} and {}",
            method.len(),
            baseline.len()
        )));
    }
    Ok(method.iter().zip(baseline).filter(|(m, b)| m < b).count())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub dof: usize,
    /// One-sided p-value for "x is less than y".
    pub p: f64,
    /// Natural log of the p-value, valid even when `p` underflows.
    pub ln_p: f64,
    /// `p` was below the smallest positive normal `f64` and has been
    /// reported as that value.
    pub underflow: bool,
}

/// Paired one-sided t-test of `x < y` on the differences `x - y`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!("paired test needs equal lengths, got {} and {}", x.len(), y.len())));
    }
    let m = x.len();
    if m < 2 {
        return Err(Error::invalid("paired test needs at least two pairs"));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / m as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::invalid("paired differences have zero variance"));
    }
    let t = mean / (var.sqrt() / (m as f64).sqrt());
    let dof = m - 1;
    let ln_p = ln_student_t_cdf(t, dof as f64);
    let min = f64::MIN_POSITIVE;
    let underflow = ln_p < min.ln();
    Ok(TTest {
        t,
        dof,
        p: if underflow { min } else { ln_p.exp() },
        ln_p,
        underflow,
    })
}

/// Lower-tail probability `P(T <= t)` of Student's t.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    ln_student_t_cdf(t, dof).exp()
}

/// `ln P(T <= t)`, computed without underflow in the far lower tail.
pub fn ln_student_t_cdf(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    // P(|T| > |t|) = I_x(dof/2, 1/2)
    let ln_tail = ln_reg_inc_beta(x, dof / 2.0, 0.5) - std::f64::consts::LN_2;
    if t <= 0.0 {
        ln_tail
    } else {
        (-ln_tail.exp()).ln_1p()
    }
}

/// Log-gamma by the Lanczos approximation (g = 7, 9 terms).
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
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `ln I_x(a, b)`, the log of the regularized incomplete beta function.
pub fn ln_reg_inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x >= 1.0 {
        return 0.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front + beta_cf(x, a, b).ln() - a.ln()
    } else {
        let other = (ln_front + beta_cf(1.0 - x, b, a).ln() - b.ln()).exp();
        (-other).ln_1p()
    }
}

/// Continued fraction for the incomplete beta, modified Lentz method.
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
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
    use super::*;

    #[test]
    fn gap_fixtures() {
        assert_eq!(gap_percent(110.0, 100.0).unwrap(), 10.0);
        assert_eq!(gap_percent(3.0, 3.0).unwrap(), 0.0);
        assert!(gap_percent(1.0, 0.0).is_err());
    }

    #[test]
    fn percentiles_of_one_to_ten() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        let a = aggregate(&v).unwrap();
        assert!((a.p10 - 1.9).abs() < 1e-12 && (a.p90 - 9.1).abs() < 1e-12);
        assert_eq!(a.mean, 5.5);
        let s = aggregate(&[4.0]).unwrap();
        assert_eq!((s.mean, s.p10, s.p90), (4.0, 4.0, 4.0));
    }

    #[test]
    fn win_counts() {
        assert_eq!(wins(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0);
        assert_eq!(wins(&[0.5, 1.0, 2.0], &[1.0, 1.0, 2.0]).unwrap(), 1);
        assert!(wins(&[1.0], &[]).is_err());
    }

    #[test]
    fn gamma_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn t_cdf_closed_forms() {
        // dof 1 is Cauchy, dof 2 has an algebraic CDF
        for t in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let cauchy = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!((student_t_cdf(t, 1.0) - cauchy).abs() < 1e-13, "{t}");
            let two = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert!((student_t_cdf(t, 2.0) - two).abs() < 1e-13, "{t}");
        }
    }

    #[test]
    fn zero_variance_is_rejected() {
        assert!(paired_t_test(&[1.0, 2.0], &[2.0, 3.0]).is_err());
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn extreme_t_reports_underflow() {
        let x: Vec<f64> = (0..1000).map(|i| 10.0 + (i % 7) as f64 * 1e-3).collect();
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + 1.0 + (i % 3) as f64 * 1e-3).collect();
        let r = paired_t_test(&x, &y).unwrap();
        assert!(r.t < -1000.0);
        assert!(r.underflow && r.p == f64::MIN_POSITIVE && r.ln_p < -700.0);
    }
}
